"""Shared tolerances, presets and registries."""

from __future__ import annotations

import logging
from typing import Any
from typing import ClassVar
from typing import Sequence

from .exceptions import ConfigError
from .flops import FlopsConvention
from .flops import FlopsGrid
from .flops import FlopsReport
from .flops import count_flops
from .flops import sweep_ratios
from .limits import to_seed
from .model import PRESETS
from .model import ModelConfig
from .numerics import UNIFORM_CLAMP
from .numerics import Rng
from .pruning import Strategy
from .pruning import ha_retained
from .pruning import plain_train_retained
from .pruning import prune_infer
from .pruning import prune_train_dyvm
from .utils import LRUCache

logger = logging.getLogger(__name__)


def register_standard_strategies(env: Environment) -> None:
    """Register the built-in pruning strategies with _env_.

    Every registered strategy maps an `(L, D)` input and an `(L,)` mask to
    outputs at the retained positions.
    """
    env.strategies["plain_train"] = plain_train_retained
    env.strategies["plain_infer"] = prune_infer
    env.strategies["ha"] = ha_retained
    env.strategies["dyvm"] = prune_train_dyvm


class Environment:
    """Numerical tolerances, model presets and pruning strategies."""

    # Maximum train/infer deviation for strategies that are exactly consistent.
    consistency_tolerance: ClassVar[float] = 1e-10

    # Maximum deviation for results that must agree up to rounding, like
    # brute-force loss oracles.
    exact_tolerance: ClassVar[float] = 1e-12

    # Maximum relative error between analytic and finite-difference gradients.
    gradcheck_tolerance: ClassVar[float] = 1e-5

    # Finite-difference step size.
    gradcheck_eps: ClassVar[float] = 1e-5

    # Plain masking must deviate by more than this on some non-consecutive mask.
    plain_gap_threshold: ClassVar[float] = 1e-6

    # |ΔA| below which discretization falls back to ΔB.
    small_delta: ClassVar[float] = 1e-8

    uniform_clamp: ClassVar[float] = UNIFORM_CLAMP

    flops_convention: ClassVar[FlopsConvention] = FlopsConvention()

    # Maximum number of FLOPs reports kept by `count_flops`.
    flops_cache_size: ClassVar[int] = 256

    def __init__(self, *, presets: dict[str, ModelConfig] | None = None) -> None:
        self.presets: dict[str, ModelConfig] = dict(
            PRESETS if presets is None else presets
        )
        self.strategies: dict[str, Strategy] = {}
        register_standard_strategies(self)
        self.flops_cache: LRUCache[Any, FlopsReport] = LRUCache(self.flops_cache_size)

    def preset(self, name: str) -> ModelConfig:
        """Return the model configuration called _name_.

        Raises:
            ConfigError: If there is no such preset.
        """
        try:
            return self.presets[name]
        except KeyError as err:
            raise ConfigError(
                f"unknown preset {name!r}, "
                f"expected one of {', '.join(sorted(self.presets))}"
            ) from err

    def strategy(self, name: str) -> Strategy:
        """Return the registered pruning strategy called _name_."""
        try:
            return self.strategies[name]
        except KeyError as err:
            raise ConfigError(f"unknown strategy {name!r}") from err

    def count_flops(
        self,
        cfg: ModelConfig,
        token_ratio: float | None = None,
        block_ratio: float | None = None,
        *,
        include_overhead: bool = True,
        selector: bool | None = None,
    ) -> FlopsReport:
        """Return a cached `count_flops` report using this environment's convention."""
        key = (
            cfg,
            token_ratio,
            block_ratio,
            self.flops_convention,
            include_overhead,
            selector,
        )
        return self.flops_cache.get_or_compute(
            key,
            lambda: count_flops(
                cfg,
                token_ratio,
                block_ratio,
                convention=self.flops_convention,
                include_overhead=include_overhead,
                selector=selector,
            ),
        )

    def sweep_ratios(
        self,
        cfg: ModelConfig,
        token_ratios: Sequence[float],
        block_ratios: Sequence[float],
        *,
        include_overhead: bool = True,
    ) -> FlopsGrid:
        """Return a `sweep_ratios` grid whose reports come from `count_flops`."""
        return sweep_ratios(
            cfg,
            token_ratios,
            block_ratios,
            include_overhead=include_overhead,
            count=self.count_flops,
        )

    def rng(self, seed: object) -> Rng:
        """Return a new generator for _seed_, an unsigned 64-bit integer."""
        return Rng(to_seed(seed))
