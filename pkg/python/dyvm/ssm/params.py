"""Continuous and discrete state space parameter containers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import DiscretizationError
from ..exceptions import ShapeError
from ..limits import MAX_DENSE_STATE
from ..numerics import Tensor
from ..numerics import as_tensor


@dataclass(frozen=True, kw_only=True)
class SsmParams:
    """Continuous state space parameters (A, B, C, Δ).

    Shapes, with D channels and N states per channel:

    - Diagonal A: `(D, N)`, one diagonal evolution per channel.
    - Dense A: `(N, N)`, shared by all channels. Dense A is limited to
      `MAX_DENSE_STATE` states.
    - B and C: `(D, N)`, or `(L, D, N)` when selective.
    - delta: `(D,)`, or `(L, D)` when selective.

    Parameters are selective (input dependent) when `delta` has a leading
    time axis, in which case B and C must have one too.
    """

    A: Tensor
    B: Tensor
    C: Tensor
    delta: Tensor
    dense: bool = False

    def __post_init__(self) -> None:
        for name in ("A", "B", "C", "delta"):
            object.__setattr__(self, name, as_tensor(getattr(self, name)))
        self.validate()

    @staticmethod
    def diagonal(A: object, B: object, C: object, delta: object) -> SsmParams:
        """Return parameters with a per-channel diagonal evolution."""
        return SsmParams(
            A=as_tensor(A), B=as_tensor(B), C=as_tensor(C), delta=as_tensor(delta)
        )

    @staticmethod
    def full(A: object, B: object, C: object, delta: object) -> SsmParams:
        """Return parameters with a dense evolution matrix shared by channels."""
        return SsmParams(
            A=as_tensor(A),
            B=as_tensor(B),
            C=as_tensor(C),
            delta=as_tensor(delta),
            dense=True,
        )

    @property
    def selective(self) -> bool:
        """True if B, C and Δ vary over time."""
        return self.delta.ndim == 2  # noqa: PLR2004

    @property
    def channels(self) -> int:
        """The number of channels D."""
        return int(self.delta.shape[-1])

    @property
    def n_state(self) -> int:
        """The number of states per channel."""
        return int(self.A.shape[-1])

    @property
    def length(self) -> int | None:
        """The sequence length of selective parameters, or None."""
        return int(self.delta.shape[0]) if self.selective else None

    def validate(self) -> None:
        """Raise an exception if parameter shapes or values are inconsistent."""
        D = self.channels
        N = self.n_state

        if self.dense:
            if self.A.shape != (N, N):
                raise ShapeError(f"dense A must be square, found {self.A.shape}")
            if N > MAX_DENSE_STATE:
                raise ShapeError(
                    f"dense A supports at most {MAX_DENSE_STATE} states, found {N}"
                )
        elif self.A.shape != (D, N):
            raise ShapeError(f"diagonal A must be ({D}, {N}), found {self.A.shape}")

        expected = (self.delta.shape[0], D, N) if self.selective else (D, N)
        for name, arr in (("B", self.B), ("C", self.C)):
            if arr.shape != expected:
                raise ShapeError(f"{name} must be {expected}, found {arr.shape}")

        if self.delta.ndim not in (1, 2):
            raise ShapeError(f"delta must be 1-D or 2-D, found {self.delta.ndim}-D")

        if not np.all(self.delta > 0):
            raise DiscretizationError(
                "delta must be positive elementwise", operation="discretize"
            )


@dataclass(frozen=True, kw_only=True)
class DiscreteSsm:
    """ZOH discretized evolution Ā and input projection B̄.

    Diagonal: `a_bar` and `b_bar` are `(D, N)`, with a leading time axis when
    selective. Dense: `a_bar` is `(D, N, N)` (one exponential per channel
    timescale) and `b_bar` is `(D, N)`, again with an optional time axis.
    """

    a_bar: Tensor
    b_bar: Tensor
    dense: bool = False
    selective: bool = False

    @property
    def channels(self) -> int:
        """The number of channels D."""
        return int(self.b_bar.shape[-2])

    @property
    def n_state(self) -> int:
        """The number of states per channel."""
        return int(self.b_bar.shape[-1])

    @property
    def length(self) -> int | None:
        """The number of timesteps selective parameters were built for."""
        return int(self.b_bar.shape[0]) if self.selective else None

    def at(self, t: int) -> tuple[Tensor, Tensor]:
        """Return (Ā, B̄) for timestep _t_."""
        if self.selective:
            return self.a_bar[t], self.b_bar[t]
        return self.a_bar, self.b_bar


@dataclass(frozen=True, kw_only=True)
class Kernel:
    """Global convolution taps `(CB̄, CĀB̄, ..., CĀ^{L-1}B̄)`, one per channel."""

    k_bar: Tensor

    @property
    def length(self) -> int:
        """The number of taps."""
        return int(self.k_bar.shape[0])


def output_projection_at(c_proj: Tensor, t: int) -> Tensor:
    """Return C for timestep _t_, whether or not C varies over time."""
    if c_proj.ndim == 3:  # noqa: PLR2004
        return c_proj[t]
    return c_proj
