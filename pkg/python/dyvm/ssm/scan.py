"""Recurrent and global-convolution forms of the discrete scan."""

from __future__ import annotations

import numpy as np

from ..exceptions import ShapeError
from ..exceptions import TimeVaryingKernelError
from ..limits import MAX_SEQUENCE_LENGTH
from ..numerics import OpCounter
from ..numerics import Tensor
from .params import DiscreteSsm
from .params import Kernel
from .params import output_projection_at


def check_scan_inputs(d: DiscreteSsm, c_proj: Tensor, x: Tensor) -> None:
    """Raise a `ShapeError` if _x_ and _c_proj_ don't fit discretized params _d_."""
    if x.ndim != 2:  # noqa: PLR2004
        raise ShapeError(f"expected an (L, D) input, found {x.shape}", operation="scan")

    L, D = x.shape

    if L > MAX_SEQUENCE_LENGTH:
        raise ShapeError(
            f"sequence length {L} exceeds the limit of {MAX_SEQUENCE_LENGTH}",
            operation="scan",
        )

    if D != d.channels:
        raise ShapeError(
            f"input has {D} channels, parameters have {d.channels}",
            operation="scan",
        )

    if d.selective and d.length != L:
        raise ShapeError(
            f"selective parameters cover {d.length} steps, input has {L}",
            operation="scan",
        )

    expected = (D, d.n_state)
    if c_proj.shape not in (expected, (L, *expected)):
        raise ShapeError(
            f"C must be {expected} or {(L, *expected)}, found {c_proj.shape}",
            operation="scan",
        )


def evolve(d: DiscreteSsm, a_bar: Tensor, h: Tensor) -> Tensor:
    """Apply one evolution transformation `h <- Ā h` to per-channel state _h_."""
    if d.dense:
        return np.einsum("dij,dj->di", a_bar, h)
    return a_bar * h


def scan_states(
    d: DiscreteSsm,
    x: Tensor,
    *,
    counter: OpCounter | None = None,
) -> Tensor:
    """Return hidden states `h_t` of shape `(L, D, N)`, starting from `h_0 = 0`."""
    L, D = x.shape
    N = d.n_state
    states = np.empty((L, D, N))
    h = np.zeros((D, N))

    for t in range(L):
        a_bar, b_bar = d.at(t)
        h = evolve(d, a_bar, h) + b_bar * x[t][:, None]
        states[t] = h

    if counter is not None:
        per_step = D * N * N if d.dense else D * N
        counter.add_macs(L * per_step, "scan")
        counter.add_elementwise(L * D * N)

    return states


def scan_recurrent(
    d: DiscreteSsm,
    c_proj: Tensor,
    x: Tensor,
    *,
    counter: OpCounter | None = None,
) -> Tensor:
    """Run `h_t = Ā h_{t-1} + B̄ x_t`, `y_t = C h_t` left to right.

    Args:
        d: Discretized parameters, time-invariant or selective.
        c_proj: Output projection, `(D, N)` or `(L, D, N)`.
        x: Input sequence, `(L, D)`.
        counter: Optional operation counter.

    Returns:
        The output sequence, `(L, D)`.
    """
    check_scan_inputs(d, c_proj, x)
    states = scan_states(d, x, counter=counter)

    if c_proj.ndim == 3:  # noqa: PLR2004
        y = np.einsum("ldn,ldn->ld", states, c_proj)
    else:
        y = np.einsum("ldn,dn->ld", states, c_proj)

    if counter is not None:
        counter.add_macs(states.size, "scan")

    return y


def build_kernel(d: DiscreteSsm, c_proj: Tensor, L: int) -> Kernel:
    """Return the `L` taps `C Ā^t B̄` of a time-invariant SSM.

    Raises:
        TimeVaryingKernelError: If _d_ or _c_proj_ vary over time.
    """
    if d.selective or c_proj.ndim != 2:  # noqa: PLR2004
        raise TimeVaryingKernelError(
            "the convolution kernel is only defined for time-invariant parameters",
            operation="build_kernel",
        )

    if c_proj.shape != d.b_bar.shape:
        raise ShapeError(
            f"C must be {d.b_bar.shape}, found {c_proj.shape}",
            operation="build_kernel",
        )

    taps = np.empty((L, d.channels))
    v = d.b_bar.copy()

    for t in range(L):
        taps[t] = np.sum(output_projection_at(c_proj, t) * v, axis=-1)
        v = evolve(d, d.a_bar, v)

    return Kernel(k_bar=taps)


def scan_convolutional(
    k: Kernel,
    x: Tensor,
    *,
    counter: OpCounter | None = None,
) -> Tensor:
    """Return the causal convolution `y_t = Σ_{s<=t} K̄_s x_{t-s}` per channel."""
    if x.ndim != 2:  # noqa: PLR2004
        raise ShapeError(
            f"expected an (L, D) input, found {x.shape}", operation="scan_convolutional"
        )

    L, D = x.shape

    if k.length != L:
        raise ShapeError(
            f"kernel has {k.length} taps, sequence has {L} steps",
            operation="scan_convolutional",
        )

    if k.k_bar.shape[1] != D:
        raise ShapeError(
            f"kernel has {k.k_bar.shape[1]} channels, input has {D}",
            operation="scan_convolutional",
        )

    y = np.empty((L, D))
    for channel in range(D):
        y[:, channel] = np.convolve(x[:, channel], k.k_bar[:, channel])[:L]

    if counter is not None:
        counter.add_macs(D * L * (L + 1) // 2, "convolution")

    return y
