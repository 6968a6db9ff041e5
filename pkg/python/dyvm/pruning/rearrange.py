"""Sequence rearrangement for pruned training."""

from __future__ import annotations

import numpy as np

from ..exceptions import MaskError
from ..exceptions import ShapeError
from ..numerics import Tensor
from .mask import IndexArray


def middle(n_tokens: int) -> int:
    """Return the class token index within a block of _n_tokens_ other tokens."""
    return n_tokens // 2


def rearrange_permutation(
    keep: Tensor,
    class_pos: int | None = None,
    *,
    class_at: int | None = None,
) -> IndexArray:
    """Return the order `[retained..., pruned...]` for mask row _keep_.

    Retained and pruned tokens each keep their relative order. The class
    token at _class_pos_, if any, is moved to index _class_at_ of the
    retained block, `floor(K / 2)` for K other retained tokens by default.

    Raises:
        MaskError: If the class token is marked as pruned.
    """
    if keep.ndim != 1:
        raise ShapeError(f"expected a mask row, found {keep.shape}")

    keep_flags = keep != 0
    retained = np.flatnonzero(keep_flags)
    pruned = np.flatnonzero(~keep_flags)

    if class_pos is not None:
        if not keep_flags[class_pos]:
            raise MaskError(
                "the class token can't be pruned", operation="rearrange"
            )
        retained = retained[retained != class_pos]
        at = middle(retained.size) if class_at is None else class_at
        retained = np.insert(retained, at, class_pos)

    return np.concatenate([retained, pruned]).astype(np.int64)


def rearrange(
    x: Tensor,
    keep: Tensor,
    class_pos: int | None = None,
) -> tuple[Tensor, IndexArray]:
    """Gather retained tokens of _x_, `(L, D)`, into a contiguous leading block.

    Returns:
        The rearranged sequence and the permutation `perm` such that
        `x_rearranged = x[perm]`. `x_rearranged[invert_permutation(perm)]`
        restores `x`.
    """
    if x.shape[0] != keep.shape[0]:
        raise ShapeError(
            f"mask has {keep.shape[0]} entries, sequence has {x.shape[0]}",
            operation="rearrange",
        )

    perm = rearrange_permutation(keep, class_pos)
    return x[perm], perm


def invert_permutation(perm: IndexArray) -> IndexArray:
    """Return the inverse of permutation _perm_."""
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size, dtype=perm.dtype)
    return inverse
