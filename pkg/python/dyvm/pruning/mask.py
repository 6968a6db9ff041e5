"""Token retention masks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt
from more_itertools import consecutive_groups

from ..exceptions import MaskError
from ..exceptions import ShapeError
from ..numerics import Tensor

IndexArray = npt.NDArray[np.int64]


@dataclass(frozen=True, kw_only=True)
class TokenMask:
    """The retention mask `M^s` after pruning stage _stage_.

    Attributes:
        m: Binary retention matrix, `(B, L)`. 1 means retained.
        stage: The pruning stage that produced this mask. 0 is the initial,
            all retained mask.
        class_idx: The class token's column in every row, `(B,)`.
        soft: Soft retain scores behind a sampled mask, if any. This is the
            straight-through gradient path.
    """

    m: Tensor
    class_idx: IndexArray
    stage: int = 0
    soft: Tensor | None = None

    def __post_init__(self) -> None:
        if self.m.ndim != 2:  # noqa: PLR2004
            raise ShapeError(f"expected a (B, L) mask, found {self.m.shape}")

        if self.class_idx.shape != (self.m.shape[0],):
            raise ShapeError(
                f"expected {self.m.shape[0]} class positions, "
                f"found {self.class_idx.shape}"
            )

        if not np.all((self.m == 0) | (self.m == 1)):
            raise MaskError("mask entries must be 0 or 1")

        rows = np.arange(self.m.shape[0])
        if not np.all(self.m[rows, self.class_idx] == 1):
            raise MaskError("the class token must always be retained")

    @staticmethod
    def full(batch: int, length: int, class_idx: int | IndexArray) -> TokenMask:
        """Return an all retained mask."""
        return TokenMask(
            m=np.ones((batch, length)),
            class_idx=np.broadcast_to(
                np.asarray(class_idx, dtype=np.int64), (batch,)
            ).copy(),
        )

    @staticmethod
    def from_rows(
        rows: Any, class_idx: int | IndexArray, stage: int = 0
    ) -> TokenMask:
        """Return a mask built from a (nested) sequence of 0/1 or booleans."""
        m = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        return TokenMask(
            m=m,
            stage=stage,
            class_idx=np.broadcast_to(
                np.asarray(class_idx, dtype=np.int64), (m.shape[0],)
            ).copy(),
        )

    @property
    def batch(self) -> int:
        """The number of rows."""
        return int(self.m.shape[0])

    @property
    def length(self) -> int:
        """The number of columns, L."""
        return int(self.m.shape[1])

    def retained_idx(self, row: int) -> IndexArray:
        """Return the retained columns `d_i` of _row_ in ascending order."""
        return np.flatnonzero(self.m[row]).astype(np.int64)

    def pruned_idx(self, row: int) -> IndexArray:
        """Return the pruned columns `p_i` of _row_ in ascending order."""
        return np.flatnonzero(self.m[row] == 0).astype(np.int64)

    def retained_counts(self, *, include_class: bool = False) -> list[int]:
        """Return the number of retained tokens in every row."""
        counts = self.m.sum(axis=1).astype(int)
        if not include_class:
            counts = counts - 1
        return [int(c) for c in counts]

    def keep_ratio(self) -> Tensor:
        """Return `(1 / L) Σ_i M_{b,i}` for every row."""
        return np.asarray(self.m.mean(axis=1))

    def is_subset_of(self, other: TokenMask) -> bool:
        """Return True if this mask retains nothing _other_ prunes."""
        return bool(np.all(self.m <= other.m))

    def is_consecutive(self, row: int) -> bool:
        """Return True if the retained indices of _row_ form one contiguous run."""
        return is_consecutive(self.retained_idx(row))

    def to_json(self) -> dict[str, Any]:
        """Return a JSON compatible description of this mask."""
        return {
            "stage": self.stage,
            "retained": [self.retained_idx(row).tolist() for row in range(self.batch)],
            "retained_counts": self.retained_counts(),
        }


def is_consecutive(indices: IndexArray) -> bool:
    """Return True if sorted _indices_ are a single run of consecutive integers."""
    return len(list(consecutive_groups(indices.tolist()))) <= 1
