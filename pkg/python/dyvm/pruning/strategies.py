"""Pruning strategies over a single time-invariant SSM.

These are the three ways to train with a token mask and run inference
without the pruned tokens:

- Plain masking zeroes pruned embeddings in training. Inference drops them,
  so retained tokens see fewer evolution steps than they were trained with.
- HiddenAlign keeps the pruned tokens' evolution steps at inference, which
  matches plain training but pays for the extra Ā applications.
- DyVM rearranges retained tokens into a contiguous block before the scan in
  training, which matches plain inference exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..exceptions import MaskError
from ..exceptions import ShapeError
from ..exceptions import TimeVaryingKernelError
from ..numerics import OpCounter
from ..numerics import Tensor
from ..ssm import DiscreteSsm
from ..ssm import evolve
from ..ssm import scan_recurrent
from .rearrange import rearrange


@dataclass(frozen=True, kw_only=True)
class LabSsm:
    """A time-invariant discretized SSM and its output projection."""

    d: DiscreteSsm
    c: Tensor

    def __post_init__(self) -> None:
        if self.d.selective or self.c.ndim != 2:  # noqa: PLR2004
            raise TimeVaryingKernelError(
                "pruning strategies are defined for time-invariant parameters"
            )

    def scan(self, x: Tensor, *, counter: OpCounter | None = None) -> Tensor:
        """Scan _x_, `(L, D)`, from a zero state."""
        return scan_recurrent(self.d, self.c, x, counter=counter)


class Strategy(Protocol):
    """A pruning strategy's inference or training pass."""

    def __call__(self, x: Tensor, mask: Tensor, ssm: LabSsm) -> Tensor: ...


def _check(x: Tensor, mask: Tensor) -> Tensor:
    if x.ndim != 2 or mask.shape != (x.shape[0],):  # noqa: PLR2004
        raise ShapeError(
            f"expected an (L, D) input and an (L,) mask, "
            f"found {x.shape} and {mask.shape}",
        )

    keep = np.asarray(mask != 0)
    if not keep.any():
        raise MaskError("at least one token must be retained")
    return keep


def prune_train_plain(x: Tensor, mask: Tensor, ssm: LabSsm) -> Tensor:
    """Zero pruned embeddings, then scan the full sequence.

    Returns:
        Outputs at every position, `(L, D)`.
    """
    keep = _check(x, mask)
    return ssm.scan(x * keep[:, None])


def prune_infer(
    x: Tensor,
    mask: Tensor,
    ssm: LabSsm,
    class_pos: int | None = None,
) -> Tensor:
    """Drop pruned tokens and scan the K retained ones.

    Args:
        x: Input sequence, `(L, D)`.
        mask: Retention flags, `(L,)`.
        ssm: Time-invariant parameters.
        class_pos: The class token's position, if there is one. It is moved
            to the middle of the retained tokens.

    Returns:
        Outputs of the retained tokens in scan order, `(K, D)`.
    """
    keep = _check(x, mask)
    retained, _ = rearrange(x, keep, class_pos)
    return ssm.scan(retained[: int(keep.sum())])


def prune_infer_ha(x: Tensor, mask: Tensor, ssm: LabSsm) -> tuple[Tensor, int]:
    """Run retained tokens, keeping every pruned token's evolution step.

    Between the first and last retained tokens, a pruned position applies
    `h <- Ā h` with no input injection and no output.

    Returns:
        Outputs of the retained tokens in ascending order, `(K, D)`, and
        the number of evolution transformations applied per channel.
    """
    keep = _check(x, mask)
    retained = np.flatnonzero(keep)
    first, last = int(retained[0]), int(retained[-1])

    D = x.shape[1]
    h = np.zeros((D, ssm.d.n_state))
    outputs = []
    evolutions = 0

    for t in range(first, last + 1):
        if t > first:
            h = evolve(ssm.d, ssm.d.a_bar, h)
            evolutions += 1
        if keep[t]:
            h = h + ssm.d.b_bar * x[t][:, None]
            outputs.append(np.sum(ssm.c * h, axis=-1))

    return np.stack(outputs), evolutions


def prune_train_dyvm(
    x: Tensor,
    mask: Tensor,
    ssm: LabSsm,
    class_pos: int | None = None,
) -> Tensor:
    """Rearrange retained tokens to the front, scan, and read the retained block.

    Pruned embeddings are zeroed as in masked training, but they sit after
    the retained block and so can't reach it.

    Returns:
        Outputs at the retained block's positions, `(K, D)`.
    """
    keep = _check(x, mask)
    rearranged, perm = rearrange(x, keep, class_pos)
    y = ssm.scan(rearranged * keep[perm][:, None])
    return y[: int(keep.sum())]


def at_retained(y: Tensor, mask: Tensor) -> Tensor:
    """Return rows of a full length output _y_ at retained positions."""
    return y[np.flatnonzero(mask)]


def plain_train_retained(x: Tensor, mask: Tensor, ssm: LabSsm) -> Tensor:
    """Return plain masked training outputs at retained positions."""
    return at_retained(prune_train_plain(x, mask, ssm), mask)


def ha_retained(x: Tensor, mask: Tensor, ssm: LabSsm) -> Tensor:
    """Return HiddenAlign inference outputs without the evolution count."""
    outputs, _ = prune_infer_ha(x, mask, ssm)
    return outputs
