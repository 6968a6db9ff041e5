"""Environment presets, strategy registry and FLOPs cache."""

from __future__ import annotations

from typing import ClassVar

import numpy as np
import pytest
from dyvm.environment import Environment
from dyvm.exceptions import ConfigError
from dyvm.flops import FlopsConvention
from dyvm.flops import count_flops
from dyvm.model import PRESETS
from dyvm.model import ModelConfig
from dyvm.pruning import LabSsm
from dyvm.ssm import SsmParams
from dyvm.ssm import discretize


def test_unknown_preset() -> None:
    with pytest.raises(ConfigError, match="unknown preset 'vim-xl'"):
        Environment().preset("vim-xl")


def test_custom_presets() -> None:
    tiny = ModelConfig(name="tiny", embed_dim=8)
    env = Environment(presets={"tiny": tiny})
    assert env.preset("tiny") is tiny
    with pytest.raises(ConfigError, match="expected one of tiny"):
        env.preset("desk")


def test_standard_strategies_are_registered() -> None:
    env = Environment()
    assert set(env.strategies) == {"plain_train", "plain_infer", "ha", "dyvm"}
    with pytest.raises(ConfigError, match="unknown strategy"):
        env.strategy("magic")


def test_registered_strategies_share_a_signature() -> None:
    env = Environment()
    params = SsmParams.diagonal(
        A=np.full((1, 1), -1.0),
        B=np.ones((1, 1)),
        C=np.ones((1, 1)),
        delta=np.array([np.log(2.0)]),
    )
    ssm = LabSsm(d=discretize(params), c=params.C)
    x = np.arange(1.0, 6.0).reshape(5, 1)
    mask = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    for name in env.strategies:
        assert env.strategy(name)(x, mask, ssm).shape == (3, 1)


def test_count_flops_is_cached() -> None:
    env = Environment()
    cfg = PRESETS["vim-s"]
    first = env.count_flops(cfg, 0.7, 0.8)
    second = env.count_flops(cfg, 0.7, 0.8)
    assert first is second
    assert env.flops_cache.hits == 1
    assert first.total_flops == pytest.approx(3.31736, abs=2e-5)


def test_sweep_ratios_goes_through_the_cache() -> None:
    env = Environment()
    cfg = PRESETS["vim-s"]
    grid = env.sweep_ratios(cfg, [0.7, 0.8], [0.8, 1.0])
    assert len(env.flops_cache) == 4
    assert env.flops_cache.misses == 4

    again = env.sweep_ratios(cfg, [0.7], [0.8, 1.0])
    assert env.flops_cache.hits == 2
    assert again.reports[(0.7, 0.8)] is grid.reports[(0.7, 0.8)]
    assert env.count_flops(cfg, 0.8, 1.0) is grid.reports[(0.8, 1.0)]


def test_sweep_ratios_uses_the_environment_convention() -> None:
    class StrictEnvironment(Environment):
        flops_convention: ClassVar[FlopsConvention] = FlopsConvention.strict()

    cfg = PRESETS["vim-t"]
    grid = StrictEnvironment().sweep_ratios(cfg, [0.9], [1.0])
    want = count_flops(cfg, 0.9, 1.0, convention=FlopsConvention.strict())
    assert grid.reports[(0.9, 1.0)].total_flops == want.total_flops


def test_environment_subclass_overrides_convention() -> None:
    class StrictEnvironment(Environment):
        flops_convention: ClassVar[FlopsConvention] = FlopsConvention.strict()

    loose = Environment().count_flops(PRESETS["vim-t"])
    strict = StrictEnvironment().count_flops(PRESETS["vim-t"])
    assert strict.total_macs == loose.total_macs
    assert strict.total_flops > 2 * loose.total_flops


def test_rng_is_reproducible() -> None:
    env = Environment()
    a = env.rng(7).normal((3,))
    b = env.rng("7").normal((3,))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ConfigError):
        env.rng(-1)
