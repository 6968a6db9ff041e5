"""Finite-difference checks of every analytic gradient."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Callable

import numpy as np

from .. import losses
from ..environment import Environment
from ..exceptions import InvariantViolation
from ..numerics import Rng
from ..numerics import Tensor
from ..numerics import finite_diff_grad
from ..numerics import relative_error
from ..pruning import TokenMask
from ..ssm import DiscreteSsm
from ..ssm import ScanGradients
from ..ssm import SsmParams
from ..ssm import discretize
from ..ssm import scan_backward
from ..ssm import scan_recurrent

logger = logging.getLogger(__name__)

Adjoint = Callable[[DiscreteSsm, Tensor, Tensor, Tensor], ScanGradients]


@dataclass(frozen=True, kw_only=True)
class GradRow:
    """One analytic gradient compared with central differences."""

    name: str
    seed: int
    rel_error: float
    passed: bool

    def to_json(self) -> dict[str, Any]:
        """Return this row as a dict."""
        return dataclasses.asdict(self)


@dataclass(kw_only=True)
class GradcheckReport:
    """Every gradient check of a run."""

    tolerance: float
    rows: list[GradRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """True if every check passed."""
        return all(row.passed for row in self.rows)

    def failures(self) -> list[str]:
        """Return a description of every failed check."""
        return [
            f"{row.name} (seed {row.seed}): relative error {row.rel_error:.3e}"
            for row in self.rows
            if not row.passed
        ]

    def raise_for_failures(self) -> None:
        """Raise an `InvariantViolation` describing every failed check."""
        problems = self.failures()
        if problems:
            raise InvariantViolation("; ".join(problems), operation="gradcheck")

    def to_json(self) -> dict[str, Any]:
        """Return a JSON compatible report."""
        return {
            "tolerance": self.tolerance,
            "passed": self.passed,
            "rows": [row.to_json() for row in self.rows],
        }

    def to_csv_rows(self) -> list[list[str]]:
        """Return a header row followed by one row per check."""
        return [["name", "seed", "rel_error", "passed"]] + [
            [row.name, str(row.seed), f"{row.rel_error:.3e}", str(row.passed).lower()]
            for row in self.rows
        ]


class _Checker:
    def __init__(self, env: Environment, report: GradcheckReport, seed: int):
        self.env = env
        self.report = report
        self.seed = seed

    def check(
        self, name: str, analytic: Tensor, f: Callable[[Tensor], float], x: Tensor
    ) -> None:
        numeric = finite_diff_grad(f, x, eps=self.env.gradcheck_eps)
        err = relative_error(np.asarray(analytic), numeric)
        passed = err < self.env.gradcheck_tolerance
        if not passed:
            logger.warning("%s failed gradient check: %.3e", name, err)
        self.report.rows.append(
            GradRow(name=name, seed=self.seed, rel_error=err, passed=passed)
        )


def _scan_cases(
    rng: Rng, length: int, channels: int, n_state: int, *, small_delta: float
) -> dict[str, tuple[DiscreteSsm, Tensor]]:
    D, N, L = channels, n_state, length
    diagonal = SsmParams.diagonal(
        A=-rng.uniform((D, N)) - 0.1,
        B=rng.normal((D, N)),
        C=rng.normal((D, N)),
        delta=rng.uniform((D,)) * 0.5 + 0.1,
    )
    selective = SsmParams.diagonal(
        A=-rng.uniform((D, N)) - 0.1,
        B=rng.normal((L, D, N)),
        C=rng.normal((L, D, N)),
        delta=rng.uniform((L, D)) * 0.5 + 0.1,
    )
    m = rng.normal((N, N))
    dense = SsmParams.full(
        A=-(m @ m.T) / N - np.eye(N),
        B=rng.normal((D, N)),
        C=rng.normal((D, N)),
        delta=rng.uniform((D,)) * 0.5 + 0.1,
    )
    return {
        "scan_diagonal": (discretize(diagonal, small_delta=small_delta), diagonal.C),
        "scan_selective": (
            discretize(selective, small_delta=small_delta),
            selective.C,
        ),
        "scan_dense": (discretize(dense, method="augmented"), dense.C),
    }


def _check_scan(
    checker: _Checker,
    name: str,
    d: DiscreteSsm,
    c_proj: Tensor,
    x: Tensor,
    w: Tensor,
    adjoint: Adjoint,
) -> None:
    grads = adjoint(d, c_proj, x, w)

    def loss(d_: DiscreteSsm, c_: Tensor, x_: Tensor) -> float:
        return float(np.sum(w * scan_recurrent(d_, c_, x_)))

    checker.check(f"{name}.dx", grads.dx, lambda v: loss(d, c_proj, v), x)
    checker.check(
        f"{name}.da_bar",
        grads.da_bar,
        lambda v: loss(dataclasses.replace(d, a_bar=v), c_proj, x),
        d.a_bar,
    )
    checker.check(
        f"{name}.db_bar",
        grads.db_bar,
        lambda v: loss(dataclasses.replace(d, b_bar=v), c_proj, x),
        d.b_bar,
    )
    checker.check(f"{name}.dc", grads.dc, lambda v: loss(d, v, x), c_proj)


def _check_scans(
    checker: _Checker,
    rng: Rng,
    adjoint: Adjoint,
    length: int,
    channels: int,
    n_state: int,
) -> None:
    small_delta = checker.env.small_delta
    cases = _scan_cases(rng, length, channels, n_state, small_delta=small_delta)
    for name, (d, c_proj) in cases.items():
        x = rng.normal((length, channels))
        w = rng.normal((length, channels))
        _check_scan(checker, name, d, c_proj, x, w, adjoint)

    cases = _scan_cases(rng, length, channels, n_state, small_delta=small_delta)
    d, c_proj = cases["scan_diagonal"]
    _check_scan(
        checker,
        "scan_zero_input",
        d,
        c_proj,
        np.zeros((length, channels)),
        rng.normal((length, channels)),
        adjoint,
    )


def _check_losses(checker: _Checker, rng: Rng) -> None:
    logits = rng.normal((3, 5))
    labels = rng.integers(0, 5, (3,))
    checker.check(
        "loss_cls",
        losses.loss_cls_grad(logits, labels),
        lambda v: losses.loss_cls(v, labels),
        logits,
    )

    targets = losses.TargetRatios(rho=0.7, n_stages=2, rho_p=0.8)
    soft = [rng.uniform((2, 7)) for _ in range(targets.n_stages)]
    for stage, grad in enumerate(losses.loss_token_grad(soft, targets)):

        def token_loss(v: Tensor, stage: int = stage) -> float:
            masks = list(soft)
            masks[stage] = v
            return losses.loss_token(masks, targets)

        checker.check(f"loss_token.stage{stage + 1}", grad, token_loss, soft[stage])

    scores = rng.uniform((3, 2, 2))
    checker.check(
        "loss_block",
        losses.loss_block_grad(scores, targets.rho_p),
        lambda v: losses.loss_block(v, targets.rho_p),
        scores,
    )

    student = rng.normal((3, 4))
    teacher = rng.normal((3, 4))
    d_student, d_teacher = losses.loss_dis_out_grad(student, teacher)
    checker.check(
        "loss_dis_out.student",
        d_student,
        lambda v: losses.loss_dis_out(v, teacher),
        student,
    )
    checker.check(
        "loss_dis_out.teacher",
        d_teacher,
        lambda v: losses.loss_dis_out(student, v),
        teacher,
    )

    tokens = rng.normal((2, 5, 3))
    teacher_tokens = rng.normal((2, 5, 3))
    mask = TokenMask.from_rows([[1, 0, 1, 1, 0], [0, 1, 1, 0, 1]], class_idx=2)
    checker.check(
        "loss_dis_token",
        losses.loss_dis_token_grad(tokens, teacher_tokens, mask),
        lambda v: losses.loss_dis_token(v, teacher_tokens, mask),
        tokens,
    )


def run_gradcheck(
    env: Environment,
    seeds: list[int],
    *,
    adjoint: Adjoint = scan_backward,
    length: int = 6,
    channels: int = 3,
    n_state: int = 4,
    scans: bool = True,
) -> GradcheckReport:
    """Check scan and loss gradients for every seed in _seeds_.

    Args:
        env: Supplies the step size and tolerance.
        seeds: One full round of checks runs per seed.
        adjoint: The scan gradient under test.
        length: Scan length.
        channels: Scan channels.
        n_state: States per channel.
        scans: Whether to check the scan adjoint as well as the losses.
    """
    report = GradcheckReport(tolerance=env.gradcheck_tolerance)

    for seed in seeds:
        rng = env.rng(seed)
        checker = _Checker(env, report, seed)
        if scans:
            _check_scans(checker, rng, adjoint, length, channels, n_state)

        _check_losses(checker, rng)

    logger.info(
        "%d gradient checks, %d failed",
        len(report.rows),
        sum(1 for row in report.rows if not row.passed),
    )
    return report
