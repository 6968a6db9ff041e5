"""End-to-end lab runs: consistency, gradient checks and forward replay."""

from __future__ import annotations

import dataclasses
import json
from typing import ClassVar

import numpy as np
import pytest
from dyvm.environment import Environment
from dyvm.exceptions import InvariantViolation
from dyvm.lab import run_consistency
from dyvm.lab import run_forward
from dyvm.lab import run_gradcheck
from dyvm.lab.consistency import random_lab_ssm
from dyvm.lab.consistency import random_mask
from dyvm.model import ModelConfig
from dyvm.numerics import Rng
from dyvm.numerics import Tensor
from dyvm.pruning import is_consecutive
from dyvm.pruning import plain_train_retained
from dyvm.pruning import prune_infer
from dyvm.ssm import DiscreteSsm
from dyvm.ssm import ScanGradients
from dyvm.ssm import scan_backward

SMALL = ModelConfig(
    name="small",
    image_size=8,
    patch_size=2,
    embed_dim=8,
    n_layers=3,
    n_state=4,
    expand=2,
    conv_width=3,
    n_classes=5,
    prune_layers=(1, 2),
    token_ratio=0.7,
    block_ratio=0.8,
    selector_bias=0.5,
    init_std=0.3,
)


@pytest.fixture(scope="module")
def env() -> Environment:
    return Environment()


def test_consistency_random_masks(env: Environment) -> None:
    report = run_consistency(env, 0, trials=32, length=10)
    assert report.passed, report.failures()
    assert report.max_dyvm_dev < 1e-10
    assert report.max_ha_dev < 1e-10
    assert report.max_plain_dev > 1e-6
    assert report.exhaustive_masks == 2**10 - 1
    assert all(k >= 0 for k in report.extra_ops_histogram())
    report.raise_for_failures()


def test_consistency_consecutive_masks(env: Environment) -> None:
    report = run_consistency(
        env, 1, trials=16, length=8, mask_mode="consecutive", exhaustive=False
    )
    assert report.passed, report.failures()
    assert all(t.consecutive for t in report.trials)
    assert report.extra_ops_histogram() == {0: 16}
    assert report.exhaustive_masks == 0


def test_consistency_report_is_reproducible(env: Environment) -> None:
    a = run_consistency(env, 5, trials=4, length=6, exhaustive=False)
    b = run_consistency(env, 5, trials=4, length=6, exhaustive=False)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())


def test_consistency_flags_unreachable_plain_gap(env: Environment) -> None:
    report = run_consistency(env, 2, trials=8, length=8, exhaustive=False)
    report.plain_gap = float("inf")
    assert not report.passed
    with pytest.raises(InvariantViolation, match="on gapped mask"):
        report.raise_for_failures()


@pytest.mark.parametrize("length", range(1, 11))
def test_consistency_over_every_mask(env: Environment, length: int) -> None:
    report = run_consistency(
        env, length, trials=0, length=length, mask_mode="consecutive"
    )
    assert report.exhaustive_masks == 2**length - 1
    assert report.exhaustive_dyvm_dev < env.consistency_tolerance
    assert report.exhaustive_ha_dev < env.consistency_tolerance
    assert report.exhaustive_contiguous_dev < env.exact_tolerance
    assert report.exhaustive_plain_misses == []
    assert report.passed, report.failures()


def test_exhaustive_pass_catches_inconsistent_training() -> None:
    env = Environment()
    env.strategies["dyvm"] = plain_train_retained
    report = run_consistency(env, 0, trials=4, length=6, mask_mode="consecutive")
    assert report.max_dyvm_dev < env.consistency_tolerance
    assert report.exhaustive_dyvm_dev > env.plain_gap_threshold
    with pytest.raises(InvariantViolation, match="over all 63 masks"):
        report.raise_for_failures()


def test_exhaustive_pass_catches_plain_masking_without_a_gap() -> None:
    env = Environment()
    env.strategies["plain_train"] = prune_infer
    report = run_consistency(env, 0, trials=4, length=5, mask_mode="consecutive")
    assert len(report.exhaustive_plain_misses) == 2**5 - 1 - 15
    assert not report.passed
    assert any("exhaustive gapped mask" in p for p in report.failures())


def test_small_delta_comes_from_the_environment(env: Environment) -> None:
    class CoarseEnvironment(Environment):
        small_delta: ClassVar[float] = 10.0

    coarse = run_consistency(CoarseEnvironment(), 3, trials=16, exhaustive=False)
    fine = run_consistency(env, 3, trials=16, exhaustive=False)
    assert coarse.max_dyvm_dev < env.consistency_tolerance
    assert [t.retained for t in coarse.trials] == [t.retained for t in fine.trials]
    assert [t.plain_dev for t in coarse.trials] != [t.plain_dev for t in fine.trials]

    ssm = random_lab_ssm(Rng(0), 2, 3, small_delta=CoarseEnvironment.small_delta)
    plain = random_lab_ssm(Rng(0), 2, 3)
    np.testing.assert_array_equal(ssm.d.a_bar, plain.d.a_bar)
    assert not np.allclose(ssm.d.b_bar, plain.d.b_bar)


def test_exact_tolerance_comes_from_the_environment() -> None:
    class ExactEnvironment(Environment):
        exact_tolerance: ClassVar[float] = 0.0

    report = run_consistency(
        ExactEnvironment(), 1, trials=4, length=6, mask_mode="consecutive"
    )
    assert report.exact == 0.0
    with pytest.raises(InvariantViolation, match="on consecutive masks"):
        report.raise_for_failures()

def test_random_mask_modes(env: Environment) -> None:
    rng = env.rng(11)
    for _ in range(50):
        mask = random_mask(rng, 9, "consecutive")
        assert mask.any()
        assert is_consecutive(np.flatnonzero(mask))
        assert random_mask(rng, 9, "random").any()


@pytest.mark.slow
def test_gradcheck_passes(env: Environment) -> None:
    report = run_gradcheck(env, [0, 1, 2])
    assert report.passed, report.failures()
    names = {row.name for row in report.rows}
    assert "scan_dense.da_bar" in names
    assert "loss_token.stage2" in names
    assert report.to_csv_rows()[0] == ["name", "seed", "rel_error", "passed"]


@pytest.mark.parametrize("seed", range(50))
def test_loss_gradients_match_finite_differences(env: Environment, seed: int) -> None:
    report = run_gradcheck(env, [seed], scans=False)
    assert report.passed, report.failures()
    names = {row.name for row in report.rows}
    assert names == {
        "loss_cls",
        "loss_token.stage1",
        "loss_token.stage2",
        "loss_block",
        "loss_dis_out.student",
        "loss_dis_out.teacher",
        "loss_dis_token",
    }

def test_gradcheck_catches_a_wrong_adjoint(env: Environment) -> None:
    def doubled(d: DiscreteSsm, c: Tensor, x: Tensor, dy: Tensor) -> ScanGradients:
        grads = scan_backward(d, c, x, dy)
        return dataclasses.replace(grads, dx=grads.dx * 2.0)

    report = run_gradcheck(env, [3], adjoint=doubled)
    assert not report.passed
    failed = {row.name for row in report.rows if not row.passed}
    assert "scan_diagonal.dx" in failed
    assert "scan_diagonal.dc" not in failed
    with pytest.raises(InvariantViolation, match="gradcheck: scan_"):
        report.raise_for_failures()


def test_forward_replay_agrees(env: Environment) -> None:
    report = run_forward(env, SMALL, 0, batch=2)
    assert report.passed, report.failures()
    assert report.deviation < env.consistency_tolerance
    assert report.train_logits.shape == (2, 5)
    data = report.to_json()
    assert data["expected_stage_token_counts"] == [11, 7]
    assert data["config"]["name"] == "small"


def test_forward_replay_with_random_baselines(env: Environment) -> None:
    cfg = SMALL.replace(token_pruning="random", block_selection="random")
    report = run_forward(env, cfg, 2, batch=2)
    assert report.passed, report.failures()
    assert report.deviation < env.consistency_tolerance
    assert report.to_json()["config"]["token_pruning"] == "random"


def test_forward_without_pruning(env: Environment) -> None:
    cfg = SMALL.replace(token_ratio=1.0, block_ratio=1.0)
    report = run_forward(env, cfg, 4, batch=1)
    assert report.passed, report.failures()
    assert report.to_json()["expected_stage_token_counts"] == []
