"""Reverse-mode gradients of the recurrent scan."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ShapeError
from ..numerics import Tensor
from .params import DiscreteSsm
from .params import output_projection_at
from .scan import check_scan_inputs
from .scan import scan_states


@dataclass(frozen=True, kw_only=True)
class ScanGradients:
    """Gradients of a scalar loss with respect to the scan's inputs.

    Each gradient has the shape of the thing it differentiates: `dx` matches
    `x`, `da_bar` and `db_bar` match the `DiscreteSsm` fields, `dc` matches
    the output projection.
    """

    dx: Tensor
    da_bar: Tensor
    db_bar: Tensor
    dc: Tensor


def scan_backward(
    d: DiscreteSsm, c_proj: Tensor, x: Tensor, dy: Tensor
) -> ScanGradients:
    """Propagate the output cotangent _dy_ back through `scan_recurrent`.

    The adjoint state runs right to left,
    `λ_t = C_tᵀ dy_t + Ā_{t+1}ᵀ λ_{t+1}`, and every parameter gradient is
    accumulated from it: `dx_t = B̄_tᵀ λ_t`, `dB̄_t = λ_t x_t`,
    `dĀ_t = λ_t h_{t-1}ᵀ` and `dC_t = dy_t h_t`. Gradients of time-invariant
    parameters are summed over time.

    Raises:
        ShapeError: If _dy_ doesn't have the shape of the forward output.
    """
    check_scan_inputs(d, c_proj, x)

    if dy.shape != x.shape:
        raise ShapeError(
            f"cotangent has shape {dy.shape}, output has {x.shape}",
            operation="scan_backward",
        )

    L, D = x.shape
    N = d.n_state
    states = scan_states(d, x)

    dx = np.zeros_like(x)
    da_steps = np.zeros((L, D, N, N) if d.dense else (L, D, N))
    db_steps = np.zeros((L, D, N))
    dc_steps = dy[:, :, None] * states

    lam = np.zeros((D, N))

    for t in range(L - 1, -1, -1):
        injected = output_projection_at(c_proj, t) * dy[t][:, None]
        lam = injected + _carry(d, t + 1, lam, L)
        _, b_bar = d.at(t)

        dx[t] = np.sum(b_bar * lam, axis=-1)
        db_steps[t] = lam * x[t][:, None]

        previous = states[t - 1] if t > 0 else np.zeros((D, N))
        if d.dense:
            da_steps[t] = np.einsum("di,dj->dij", lam, previous)
        else:
            da_steps[t] = lam * previous

    return ScanGradients(
        dx=dx,
        da_bar=da_steps if d.selective else da_steps.sum(axis=0),
        db_bar=db_steps if d.selective else db_steps.sum(axis=0),
        dc=dc_steps if c_proj.ndim == 3 else dc_steps.sum(axis=0),  # noqa: PLR2004
    )


def _carry(d: DiscreteSsm, t: int, lam: Tensor, length: int) -> Tensor:
    """Return `Ā_tᵀ λ`, or zero past the end of the sequence."""
    if t >= length:
        return np.zeros_like(lam)

    a_bar, _ = d.at(t)
    if d.dense:
        return np.einsum("dji,dj->di", a_bar, lam)
    return a_bar * lam
