"""Analytic operation counts for a configured model.

Counts are multiply-accumulates (MACs) per image, converted to FLOPs by a
`FlopsConvention`. Token pruning shortens the sequence seen by every layer
from each pruning stage onward. Block selection scales the cost of the
gated convolution and scan by the expected fraction of active blocks.

The terms mirror the instrumented forward pass tag for tag, so an
`OpCounter` from a single-image infer pass can be compared directly with
`count_flops`.
"""

from __future__ import annotations

import csv
import functools
import io
import itertools
import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Callable
from typing import Iterable
from typing import Literal
from typing import Sequence

import numpy as np

from .exceptions import ConfigError
from .exceptions import ShapeError
from .model import ModelConfig
from .model import predictor_in_dim
from .numerics import Tensor
from .pruning import TokenMask

logger = logging.getLogger(__name__)

EvolutionStrategy = Literal["plain_infer", "ha", "dyvm"]
EVOLUTION_STRATEGIES: tuple[str, ...] = ("plain_infer", "ha", "dyvm")

GIGA = 1e9

# Reductions below this are reported as a configuration error. A small
# negative reduction is possible when predictor overhead outweighs savings.
MIN_REDUCTION = -0.05


@dataclass(frozen=True, kw_only=True)
class FlopsConvention:
    """How multiply-accumulates and elementwise operations become FLOPs.

    The default counts one FLOP per MAC and ignores elementwise work, which
    is the convention published Vision Mamba FLOPs figures follow.
    """

    flops_per_mac: float = 1.0
    flops_per_elementwise: float = 0.0

    @staticmethod
    def strict() -> FlopsConvention:
        """Two FLOPs per MAC and one per elementwise operation."""
        return FlopsConvention(flops_per_mac=2.0, flops_per_elementwise=1.0)

    def flops(self, macs: float, elementwise: float) -> float:
        """Return the FLOPs for _macs_ and _elementwise_ operations."""
        return self.flops_per_mac * macs + self.flops_per_elementwise * elementwise


@dataclass(frozen=True, kw_only=True)
class LayerFlops:
    """Expected MACs of one layer.

    Attributes:
        layer: The layer index.
        seq_len: Tokens seen by the layer, class token included.
        forward_block: Causal convolution and selective scan of the forward
            block, scaled by the expected fraction of active blocks.
        backward_block: The same for the backward block.
        projection: Input, selection and output projections.
        predictor: The pruning predictor run before this layer, if any.
        selector: The block selector.
        elementwise: Estimated elementwise operations.
    """

    layer: int
    seq_len: int
    forward_block: float
    backward_block: float
    projection: float
    predictor: float
    selector: float
    elementwise: float

    @property
    def total(self) -> float:
        """The layer's MACs."""
        return (
            self.forward_block
            + self.backward_block
            + self.projection
            + self.predictor
            + self.selector
        )

    def to_json(self) -> dict[str, Any]:
        """Return a JSON compatible dict."""
        return {
            "layer": self.layer,
            "seq_len": self.seq_len,
            "forward_block": self.forward_block,
            "backward_block": self.backward_block,
            "projection": self.projection,
            "predictor": self.predictor,
            "selector": self.selector,
        }


@dataclass(frozen=True, kw_only=True)
class FlopsReport:
    """Per-layer and total operation counts for one (token, block) ratio pair."""

    model: str
    token_ratio: float
    block_ratio: float
    per_layer: tuple[LayerFlops, ...]
    embed_macs: float
    head_macs: float
    convention: FlopsConvention
    baseline_flops: float
    elementwise: float = 0.0

    @property
    def total_macs(self) -> float:
        """The sum of every layer, the patch embedding and the head."""
        layers = sum(layer.total for layer in self.per_layer)
        return layers + self.embed_macs + self.head_macs

    @property
    def total_flops(self) -> float:
        """Total FLOPs in G units."""
        return self.convention.flops(self.total_macs, self.elementwise) / GIGA

    @property
    def reduction_vs_baseline(self) -> float:
        """The fraction of baseline FLOPs saved. Zero for the baseline itself."""
        if self.baseline_flops <= 0:
            return 0.0
        return 1.0 - self.total_flops / self.baseline_flops

    def to_json(self) -> dict[str, Any]:
        """Return a JSON compatible report."""
        return {
            "model": self.model,
            "token_ratio": self.token_ratio,
            "block_ratio": self.block_ratio,
            "gflops": self.total_flops,
            "baseline_gflops": self.baseline_flops,
            "reduction": self.reduction_vs_baseline,
            "total_macs": self.total_macs,
            "embed_macs": self.embed_macs,
            "head_macs": self.head_macs,
            "per_layer": [layer.to_json() for layer in self.per_layer],
        }


def _with_ratios(
    cfg: ModelConfig, token_ratio: float | None, block_ratio: float | None
) -> ModelConfig:
    changes: dict[str, float] = {}
    if token_ratio is not None:
        changes["token_ratio"] = token_ratio
    if block_ratio is not None:
        changes["block_ratio"] = block_ratio
    try:
        return cfg.replace(**changes) if changes else cfg
    except ConfigError as err:
        raise ConfigError(str(err), operation="count_flops") from err


def layer_seq_lens(cfg: ModelConfig) -> list[int]:
    """Return the sequence length, class token included, seen by every layer."""
    lengths = []
    n = cfg.seq_len
    stages = (
        dict(zip(cfg.prune_layers, cfg.stage_token_counts))
        if cfg.prunes_tokens
        else {}
    )
    for index in range(cfg.n_layers):
        if index in stages:
            n = stages[index] + 1
        lengths.append(n)
    return lengths


def predictor_macs(cfg: ModelConfig, n_tokens: int) -> int:
    """Return the MACs of one predictor run over _n_tokens_ tokens."""
    widths = [predictor_in_dim(cfg), *cfg.resolved_predictor_hidden, 2]
    return n_tokens * sum(a * b for a, b in itertools.pairwise(widths))


def _counts_selector(cfg: ModelConfig, selector: bool | None) -> bool:
    return cfg.selects_blocks if selector is None else selector


def _count(
    cfg: ModelConfig,
    *,
    convention: FlopsConvention,
    include_overhead: bool,
    selector: bool | None,
    baseline_flops: float,
) -> FlopsReport:
    D = cfg.embed_dim
    E = cfg.inner_dim
    N = cfg.n_state
    R = cfg.resolved_dt_rank
    K = cfg.conv_width
    block = cfg.block_ratio if cfg.selects_blocks else 1.0
    count_selector = include_overhead and _counts_selector(cfg, selector)

    lengths = layer_seq_lens(cfg)
    stage_layers = set(cfg.prune_layers) if cfg.prunes_tokens else set()
    per_layer = []
    elementwise = 0.0
    previous = cfg.seq_len

    for index, n in enumerate(lengths):
        projection = n * D * 2 * E + n * E * D + 2 * (n * E * (R + 2 * N) + n * R * E)
        per_block = n * E * K + 2 * n * E * N
        predictor = (
            predictor_macs(cfg, previous)
            if include_overhead and index in stage_layers
            else 0
        )
        layer_elementwise = 2 * n * D + 2 * block * (4 * n * E + 3 * n * E * N)
        elementwise += layer_elementwise
        per_layer.append(
            LayerFlops(
                layer=index,
                seq_len=n,
                forward_block=block * per_block,
                backward_block=block * per_block,
                projection=float(projection),
                predictor=float(predictor),
                selector=float(2 * D) if count_selector else 0.0,
                elementwise=float(layer_elementwise),
            )
        )
        previous = n

    patch_dim = cfg.in_channels * cfg.patch_size**2
    return FlopsReport(
        model=cfg.name,
        token_ratio=cfg.token_ratio,
        block_ratio=cfg.block_ratio,
        per_layer=tuple(per_layer),
        embed_macs=float(cfg.n_patches * patch_dim * D),
        head_macs=float(D * cfg.n_classes),
        convention=convention,
        baseline_flops=baseline_flops,
        elementwise=elementwise,
    )


def count_flops(
    cfg: ModelConfig,
    token_ratio: float | None = None,
    block_ratio: float | None = None,
    *,
    convention: FlopsConvention | None = None,
    include_overhead: bool = True,
    selector: bool | None = None,
) -> FlopsReport:
    """Return the expected per-image operation counts of _cfg_.

    Args:
        cfg: The model configuration.
        token_ratio: Overrides `cfg.token_ratio`. A ratio of 1.0 disables
            token pruning and its predictors.
        block_ratio: Overrides `cfg.block_ratio`. A ratio of 1.0 disables
            block selection and its selectors.
        convention: MAC and elementwise weights. Defaults to one FLOP per MAC.
        include_overhead: Count pruning predictors and block selectors.
        selector: Force the selector cost on or off. By default it is counted
            only when blocks are selected.

    Raises:
        ConfigError: If a ratio is out of range or leaves a stage empty.
    """
    convention = convention or FlopsConvention()
    resolved = _with_ratios(cfg, token_ratio, block_ratio)
    baseline = _count(
        resolved.replace(token_ratio=1.0, block_ratio=1.0),
        convention=convention,
        include_overhead=include_overhead,
        selector=False,
        baseline_flops=0.0,
    )
    report = _count(
        resolved,
        convention=convention,
        include_overhead=include_overhead,
        selector=selector,
        baseline_flops=baseline.total_flops,
    )

    if report.reduction_vs_baseline < MIN_REDUCTION:
        raise ConfigError(
            f"overhead exceeds savings by {-report.reduction_vs_baseline:.1%}",
            operation="count_flops",
        )

    logger.debug(
        "%s at (%s, %s): %.5f GFLOPs",
        cfg.name,
        resolved.token_ratio,
        resolved.block_ratio,
        report.total_flops,
    )
    return report


@dataclass(frozen=True, kw_only=True)
class FlopsGrid:
    """FLOPs over the Cartesian product of token and block ratios."""

    model: str
    token_ratios: tuple[float, ...]
    block_ratios: tuple[float, ...]
    reports: dict[tuple[float, float], FlopsReport] = field(default_factory=dict)

    def __getitem__(self, key: tuple[float, float]) -> FlopsReport:
        return self.reports[key]

    def __len__(self) -> int:
        return len(self.reports)

    def rows(self) -> Iterable[FlopsReport]:
        """Yield reports in token-major order."""
        for token_ratio in self.token_ratios:
            for block_ratio in self.block_ratios:
                yield self.reports[(token_ratio, block_ratio)]

    def non_monotone(self, tolerance: float = 1e-12) -> list[tuple[float, float]]:
        """Return cells whose FLOPs exceed a neighbour with a larger ratio.

        Neighbours are taken along sorted token ratios and sorted block
        ratios separately.
        """
        out = []
        tokens = sorted(self.token_ratios)
        blocks = sorted(self.block_ratios)
        for t, b in itertools.product(tokens, blocks):
            here = self.reports[(t, b)].total_flops
            ti, bi = tokens.index(t), blocks.index(b)
            larger = []
            if ti + 1 < len(tokens):
                larger.append(self.reports[(tokens[ti + 1], b)].total_flops)
            if bi + 1 < len(blocks):
                larger.append(self.reports[(t, blocks[bi + 1])].total_flops)
            if any(here > other + tolerance for other in larger):
                out.append((t, b))
        return out

    def to_csv(self) -> str:
        """Return the grid as CSV with one row per ratio pair."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["model", "token_ratio", "block_ratio", "gflops", "reduction_pct"]
        )
        for report in self.rows():
            writer.writerow(
                [
                    report.model,
                    f"{report.token_ratio:.4g}",
                    f"{report.block_ratio:.4g}",
                    f"{report.total_flops:.5f}",
                    f"{100 * report.reduction_vs_baseline:.2f}",
                ]
            )
        return buf.getvalue()

    def to_json(self) -> dict[str, Any]:
        """Return every report as JSON, token-major."""
        return {
            "model": self.model,
            "token_ratios": list(self.token_ratios),
            "block_ratios": list(self.block_ratios),
            "reports": [report.to_json() for report in self.rows()],
        }


def sweep_ratios(
    cfg: ModelConfig,
    token_ratios: Sequence[float],
    block_ratios: Sequence[float],
    *,
    convention: FlopsConvention | None = None,
    include_overhead: bool = True,
    count: Callable[..., FlopsReport] | None = None,
) -> FlopsGrid:
    """Evaluate `count_flops` for every (token ratio, block ratio) pair.

    Args:
        cfg: The model configuration.
        token_ratios: Token keep ratios, one grid row each.
        block_ratios: Block ratios, one grid column each.
        convention: How MACs convert to FLOPs. Ignored when _count_ is given.
        include_overhead: Whether to count predictors and selectors.
        count: Counts one pair, `count_flops` with _convention_ by default.
            `Environment.count_flops` plugs its cache in here.
    """
    if count is None:
        count = functools.partial(count_flops, convention=convention)

    grid = FlopsGrid(
        model=cfg.name,
        token_ratios=tuple(token_ratios),
        block_ratios=tuple(block_ratios),
    )
    for token_ratio, block_ratio in itertools.product(token_ratios, block_ratios):
        grid.reports[(token_ratio, block_ratio)] = count(
            cfg, token_ratio, block_ratio, include_overhead=include_overhead
        )
    return grid


def count_evolution_ops(strategy: str, mask: TokenMask | Tensor, row: int = 0) -> int:
    """Return the number of `Ā` applications per channel an inference pass makes.

    Plain inference and rearranged training scan the K retained tokens
    back to back, `K - 1` steps. HiddenAlign also steps through every pruned
    position between the first and last retained ones, `d_{K-1} - d_0`
    steps.

    Args:
        strategy: One of `plain_infer`, `ha` or `dyvm`.
        mask: A `TokenMask` or a 1-D retention row.
        row: The mask row to count when _mask_ is a `TokenMask`.

    Raises:
        ConfigError: For an unknown strategy.
        ShapeError: If _mask_ isn't a row.
    """
    flags = mask.m[row] if isinstance(mask, TokenMask) else np.asarray(mask)
    if flags.ndim != 1:
        raise ShapeError(f"expected a mask row, found {flags.shape}")

    retained = np.flatnonzero(flags)
    if retained.size == 0:
        return 0

    if strategy in ("plain_infer", "dyvm"):
        return int(retained.size - 1)
    if strategy == "ha":
        return int(retained[-1] - retained[0])

    raise ConfigError(
        f"unknown strategy {strategy!r}, "
        f"expected one of {', '.join(EVOLUTION_STRATEGIES)}",
        operation="count_evolution_ops",
    )
