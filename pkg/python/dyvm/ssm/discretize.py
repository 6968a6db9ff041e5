"""Zero-order hold discretization."""

from __future__ import annotations

import logging
from typing import Literal

import numpy as np
from scipy.linalg import expm

from ..exceptions import SingularEvolutionError
from ..numerics import Tensor
from ..numerics import check_finite
from .params import DiscreteSsm
from .params import SsmParams

logger = logging.getLogger(__name__)

SMALL_DELTA_A = 1e-8
"""Below this magnitude B̄ falls back to its first-order limit ΔB."""

# Dense ΔA with a condition number above this is treated as singular.
_MAX_CONDITION = 1e12

DenseMethod = Literal["inverse", "augmented"]


def discretize(
    p: SsmParams,
    *,
    method: DenseMethod = "inverse",
    small_delta: float = SMALL_DELTA_A,
) -> DiscreteSsm:
    """Return the ZOH discretization of _p_.

    `Ā = exp(ΔA)` and `B̄ = (ΔA)^{-1}(exp(ΔA) - I)ΔB`. For a diagonal A the
    closed form is applied per channel and state. Where `|Δa| < small_delta`,
    B̄ falls back to `ΔB`.

    Args:
        p: Continuous parameters.
        method: How to compute B̄ for a dense A. `"inverse"` evaluates the
            closed form and raises for singular ΔA. `"augmented"` reads B̄ off
            the exponential of the block matrix `[[ΔA, ΔB], [0, 0]]`, which is
            defined for singular A too. Ignored for a diagonal A.
        small_delta: Threshold for the first-order fallback.

    Raises:
        DiscretizationError: If Δ is not positive.
        SingularEvolutionError: If ΔA is singular and not small.
    """
    if p.dense:
        return _discretize_dense(p, method=method, small_delta=small_delta)
    return _discretize_diagonal(p, small_delta=small_delta)


def _discretize_diagonal(p: SsmParams, *, small_delta: float) -> DiscreteSsm:
    delta = p.delta[..., None]
    delta_a = delta * p.A
    a_bar = np.exp(delta_a)

    small = np.abs(delta_a) < small_delta
    safe = np.where(small, 1.0, delta_a)
    factor = np.where(small, 1.0, np.expm1(safe) / safe)
    b_bar = factor * (delta * p.B)

    return DiscreteSsm(
        a_bar=check_finite(a_bar, "Ā"),
        b_bar=check_finite(b_bar, "B̄"),
        selective=p.selective,
    )


def _discretize_dense(
    p: SsmParams, *, method: DenseMethod, small_delta: float
) -> DiscreteSsm:
    N = p.n_state
    deltas = p.delta if p.selective else p.delta[None, :]
    inputs = p.B if p.selective else p.B[None, ...]

    a_bar = np.empty((*deltas.shape, N, N))
    b_bar = np.empty((*deltas.shape, N))

    for t in range(deltas.shape[0]):
        for d in range(deltas.shape[1]):
            step = float(deltas[t, d])
            delta_a = step * p.A
            delta_b = step * inputs[t, d]

            if method == "augmented":
                block = np.zeros((N + 1, N + 1))
                block[:N, :N] = delta_a
                block[:N, N] = delta_b
                exp_block = expm(block)
                a_bar[t, d] = exp_block[:N, :N]
                b_bar[t, d] = exp_block[:N, N]
                continue

            a_bar[t, d] = expm(delta_a)

            if np.max(np.abs(delta_a)) < small_delta:
                b_bar[t, d] = delta_b
                continue

            if np.linalg.cond(delta_a) > _MAX_CONDITION:
                raise SingularEvolutionError(
                    f"ΔA is singular at timestep {t}, channel {d}",
                    operation="discretize",
                )

            b_bar[t, d] = np.linalg.solve(delta_a, (a_bar[t, d] - np.eye(N)) @ delta_b)

    if not p.selective:
        a_bar = a_bar[0]
        b_bar = b_bar[0]

    logger.debug("discretized dense A with N=%d using %s", N, method)

    return DiscreteSsm(
        a_bar=check_finite(a_bar, "Ā"),
        b_bar=check_finite(b_bar, "B̄"),
        dense=True,
        selective=p.selective,
    )
