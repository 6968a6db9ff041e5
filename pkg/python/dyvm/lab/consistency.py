"""Train/infer consistency of the pruning strategies on random SSMs.

For every trial a time-invariant diagonal SSM, an input sequence and a
mask are drawn. Each strategy's training outputs at the retained tokens are
compared with what inference produces for the same mask:

- DyVM training against plain inference, expected to agree exactly.
- Plain masked training against plain inference, expected to disagree
  whenever the retained tokens are not consecutive.
- HiddenAlign inference against plain masked training, expected to agree
  exactly at the cost of extra evolution steps.
"""

from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Literal

import numpy as np

from ..environment import Environment
from ..exceptions import InvariantViolation
from ..flops import count_evolution_ops
from ..numerics import Rng
from ..numerics import Tensor
from ..pruning import LabSsm
from ..pruning import is_consecutive
from ..ssm import SMALL_DELTA_A
from ..ssm import SsmParams
from ..ssm import discretize

logger = logging.getLogger(__name__)

MaskMode = Literal["random", "consecutive"]

# Masks are enumerated exhaustively up to this sequence length.
MAX_EXHAUSTIVE_LENGTH = 10


@dataclass(frozen=True, kw_only=True)
class TrialResult:
    """Deviations and evolution counts for one mask."""

    trial: int
    retained: tuple[int, ...]
    consecutive: bool
    dyvm_dev: float
    plain_dev: float
    ha_dev: float
    ha_ops: int
    dyvm_ops: int

    def to_json(self) -> dict[str, Any]:
        """Return a JSON compatible view of this trial."""
        return {
            "trial": self.trial,
            "retained": list(self.retained),
            "consecutive": self.consecutive,
            "dyvm_dev": self.dyvm_dev,
            "plain_dev": self.plain_dev,
            "ha_dev": self.ha_dev,
            "ha_ops": self.ha_ops,
            "dyvm_ops": self.dyvm_ops,
        }


@dataclass(kw_only=True)
class ConsistencyReport:
    """Every trial of a consistency run and its verdict."""

    seed: int
    mask_mode: MaskMode
    length: int
    trials: list[TrialResult] = field(default_factory=list)
    exhaustive_masks: int = 0
    exhaustive_ops_ok: bool = True
    exhaustive_dyvm_dev: float = 0.0
    exhaustive_ha_dev: float = 0.0
    exhaustive_contiguous_dev: float = 0.0
    exhaustive_plain_misses: list[tuple[int, ...]] = field(default_factory=list)
    tolerance: float = Environment.consistency_tolerance
    exact: float = Environment.exact_tolerance
    plain_gap: float = Environment.plain_gap_threshold

    @property
    def max_dyvm_dev(self) -> float:
        """Largest DyVM train/infer deviation over all trials."""
        return max((t.dyvm_dev for t in self.trials), default=0.0)

    @property
    def max_ha_dev(self) -> float:
        """Largest HiddenAlign deviation over all trials."""
        return max((t.ha_dev for t in self.trials), default=0.0)

    @property
    def max_plain_dev(self) -> float:
        """Largest plain masking deviation over all trials."""
        return max((t.plain_dev for t in self.trials), default=0.0)

    def extra_ops_histogram(self) -> dict[int, int]:
        """Count trials by HiddenAlign's extra evolution steps over DyVM."""
        counts = Counter(t.ha_ops - t.dyvm_ops for t in self.trials)
        return dict(sorted(counts.items()))

    def failures(self) -> list[str]:
        """Return a description of every violated expectation."""
        problems = []
        if self.max_dyvm_dev >= self.tolerance:
            problems.append(
                f"DyVM deviation {self.max_dyvm_dev:.3e} >= {self.tolerance:g}"
            )
        if self.max_ha_dev >= self.tolerance:
            problems.append(
                f"HiddenAlign deviation {self.max_ha_dev:.3e} >= {self.tolerance:g}"
            )
        if not self.exhaustive_ops_ok:
            problems.append("HiddenAlign used fewer evolution steps than DyVM")
        if self.exhaustive_dyvm_dev >= self.tolerance:
            problems.append(
                f"DyVM deviation {self.exhaustive_dyvm_dev:.3e} "
                f"over all {self.exhaustive_masks} masks"
            )
        if self.exhaustive_ha_dev >= self.tolerance:
            problems.append(
                f"HiddenAlign deviation {self.exhaustive_ha_dev:.3e} "
                f"over all {self.exhaustive_masks} masks"
            )
        if self.exhaustive_contiguous_dev >= self.exact:
            problems.append(
                f"plain deviation {self.exhaustive_contiguous_dev:.3e} "
                "on an exhaustive consecutive mask"
            )
        problems.extend(
            f"plain deviation <= {self.plain_gap:g} on exhaustive gapped mask "
            f"{list(retained)}"
            for retained in self.exhaustive_plain_misses
        )

        if self.mask_mode == "consecutive":
            if self.max_plain_dev >= self.exact:
                problems.append(
                    f"plain deviation {self.max_plain_dev:.3e} on consecutive masks"
                )
        else:
            gapped = [t for t in self.trials if not t.consecutive]
            if not gapped:
                problems.append("no trial drew a non-consecutive mask")
            problems.extend(
                f"plain deviation {t.plain_dev:.3e} <= {self.plain_gap:g} "
                f"on gapped mask {list(t.retained)}"
                for t in gapped
                if t.plain_dev <= self.plain_gap
            )
        return problems

    @property
    def passed(self) -> bool:
        """True if no expectation was violated."""
        return not self.failures()

    def raise_for_failures(self) -> None:
        """Raise an `InvariantViolation` describing every failure, if any."""
        problems = self.failures()
        if problems:
            raise InvariantViolation("; ".join(problems), operation="consistency")

    def to_json(self) -> dict[str, Any]:
        """Return a JSON compatible report."""
        return {
            "seed": self.seed,
            "mask_mode": self.mask_mode,
            "length": self.length,
            "passed": self.passed,
            "failures": self.failures(),
            "max_deviation": {
                "dyvm": self.max_dyvm_dev,
                "plain": self.max_plain_dev,
                "ha": self.max_ha_dev,
            },
            "ha_extra_ops_histogram": {
                str(k): v for k, v in self.extra_ops_histogram().items()
            },
            "exhaustive_masks": self.exhaustive_masks,
            "exhaustive_max_deviation": {
                "dyvm": self.exhaustive_dyvm_dev,
                "ha": self.exhaustive_ha_dev,
                "plain_consecutive": self.exhaustive_contiguous_dev,
            },
            "trials": [t.to_json() for t in self.trials],
        }


def random_lab_ssm(
    rng: Rng, channels: int, n_state: int, *, small_delta: float = SMALL_DELTA_A
) -> LabSsm:
    """Return a random stable, time-invariant diagonal SSM.

    _small_delta_ is the discretization threshold for the first-order B̄.
    """
    params = SsmParams.diagonal(
        A=-rng.uniform((channels, n_state)) * 2.0 - 0.1,
        B=rng.normal((channels, n_state)),
        C=rng.normal((channels, n_state)),
        delta=rng.uniform((channels,)) * 0.5 + 0.05,
    )
    return LabSsm(d=discretize(params, small_delta=small_delta), c=params.C)


def random_mask(rng: Rng, length: int, mode: MaskMode) -> Tensor:
    """Return a mask row with at least one retained token."""
    if mode == "consecutive":
        start, stop = sorted(int(i) for i in rng.integers(0, length + 1, (2,)))
        if start == stop:
            stop = min(start + 1, length)
            start = stop - 1
        mask = np.zeros(length)
        mask[start:stop] = 1.0
        return mask

    mask = (rng.uniform((length,)) < 0.5).astype(np.float64)  # noqa: PLR2004
    if not mask.any():
        mask[int(rng.integers(0, length, (1,))[0])] = 1.0
    return mask


def _max_abs(a: Tensor, b: Tensor) -> float:
    return float(np.max(np.abs(a - b), initial=0.0))


def run_trial(
    env: Environment, x: Tensor, mask: Tensor, ssm: LabSsm, trial: int
) -> TrialResult:
    """Compare every strategy on one input and mask."""
    plain_train = env.strategy("plain_train")(x, mask, ssm)
    plain_infer = env.strategy("plain_infer")(x, mask, ssm)
    dyvm = env.strategy("dyvm")(x, mask, ssm)
    ha = env.strategy("ha")(x, mask, ssm)
    retained = np.flatnonzero(mask)

    return TrialResult(
        trial=trial,
        retained=tuple(int(i) for i in retained),
        consecutive=is_consecutive(retained),
        dyvm_dev=_max_abs(dyvm, plain_infer),
        plain_dev=_max_abs(plain_train, plain_infer),
        ha_dev=_max_abs(ha, plain_train),
        ha_ops=count_evolution_ops("ha", mask),
        dyvm_ops=count_evolution_ops("dyvm", mask),
    )


def run_consistency(
    env: Environment,
    seed: int,
    *,
    trials: int = 64,
    length: int = 12,
    channels: int = 4,
    n_state: int = 8,
    mask_mode: MaskMode = "random",
    exhaustive: bool = True,
) -> ConsistencyReport:
    """Run _trials_ random trials and, optionally, every mask of a short sequence.

    The exhaustive pass covers all non-empty masks of length
    `min(length, MAX_EXHAUSTIVE_LENGTH)`, each with a freshly drawn SSM and
    input. For every mask it records the DyVM and HiddenAlign deviations,
    whether plain masking deviates on a non-consecutive mask and whether
    HiddenAlign needs at least as many evolution steps as DyVM.
    """
    rng = env.rng(seed)
    report = ConsistencyReport(
        seed=seed,
        mask_mode=mask_mode,
        length=length,
        tolerance=env.consistency_tolerance,
        exact=env.exact_tolerance,
        plain_gap=env.plain_gap_threshold,
    )

    for trial in range(trials):
        ssm = random_lab_ssm(rng, channels, n_state, small_delta=env.small_delta)
        x = rng.normal((length, channels))
        mask = random_mask(rng, length, mask_mode)
        report.trials.append(run_trial(env, x, mask, ssm, trial))

    if exhaustive:
        short = min(length, MAX_EXHAUSTIVE_LENGTH)
        _run_exhaustive(env, rng, report, short, channels, n_state)

    logger.info(
        "consistency over %d trials: dyvm %.3e, plain %.3e, ha %.3e",
        len(report.trials),
        report.max_dyvm_dev,
        report.max_plain_dev,
        report.max_ha_dev,
    )
    return report


def _run_exhaustive(
    env: Environment,
    rng: Rng,
    report: ConsistencyReport,
    length: int,
    channels: int,
    n_state: int,
) -> None:
    for bits in itertools.product((0.0, 1.0), repeat=length):
        mask = np.asarray(bits)
        if not mask.any():
            continue

        ssm = random_lab_ssm(rng, channels, n_state, small_delta=env.small_delta)
        x = rng.normal((length, channels))
        result = run_trial(env, x, mask, ssm, report.exhaustive_masks)
        report.exhaustive_masks += 1

        report.exhaustive_dyvm_dev = max(report.exhaustive_dyvm_dev, result.dyvm_dev)
        report.exhaustive_ha_dev = max(report.exhaustive_ha_dev, result.ha_dev)
        if result.ha_ops < result.dyvm_ops:
            report.exhaustive_ops_ok = False
        if result.consecutive:
            report.exhaustive_contiguous_dev = max(
                report.exhaustive_contiguous_dev, result.plain_dev
            )
        elif result.plain_dev <= report.plain_gap:
            report.exhaustive_plain_misses.append(result.retained)

    logger.debug(
        "exhaustive pass over %d masks: dyvm %.3e, ha %.3e",
        report.exhaustive_masks,
        report.exhaustive_dyvm_dev,
        report.exhaustive_ha_dev,
    )
