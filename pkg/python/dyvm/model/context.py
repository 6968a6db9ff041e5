"""What a forward pass decided and observed."""

from __future__ import annotations

from dataclasses import dataclass
from dataclasses import field
from typing import Any

import numpy as np

from ..block_select import BlockPolicy
from ..numerics import OpCounter
from ..numerics import Tensor
from ..pruning import IndexArray
from ..pruning import PrunePrediction
from ..pruning import TokenMask


@dataclass(kw_only=True)
class ForwardDiagnostics:
    """Masks, gates and sequence bookkeeping recorded by `model_forward`.

    Token masks are stored in original token coordinates, so masks from a
    train-mode pass can be replayed by an infer-mode pass. Per-sample
    sequences can differ in length after replaying, so `tokens`, `keep` and
    `order` are lists with one entry per sample.

    Attributes:
        mode: `"train"` or `"infer"`.
        masks: One mask per pruning stage, `(B, L)` in original coordinates.
        predictions: Predictor outputs per stage, in the order the sequence
            had when the stage ran. Empty when masks were replayed.
        policy: Block gates for every layer, or None without block selection.
        seq_lengths: Retained tokens, class token included, seen by every
            layer for every sample.
        tokens: Last layer outputs before the final norm, `(L_b, D)` each.
        keep: Retention flags of `tokens`, `(L_b,)` each.
        order: Original token index of every entry of `tokens`.
        class_positions: Index of the class token within `tokens`.
        counter: The operation counter threaded through the pass, if any.
    """

    mode: str
    masks: list[TokenMask] = field(default_factory=list)
    predictions: list[PrunePrediction] = field(default_factory=list)
    policy: BlockPolicy | None = None
    seq_lengths: list[list[int]] = field(default_factory=list)
    tokens: list[Tensor] = field(default_factory=list)
    keep: list[Tensor] = field(default_factory=list)
    order: list[IndexArray] = field(default_factory=list)
    class_positions: list[int] = field(default_factory=list)
    counter: OpCounter | None = None

    @property
    def batch(self) -> int:
        """The number of samples."""
        return len(self.tokens)

    def stage_token_counts(self) -> list[list[int]]:
        """Retained non-class tokens per stage, per sample."""
        return [mask.retained_counts() for mask in self.masks]

    def align(self, teacher_tokens: Tensor, row: int) -> Tensor:
        """Return _teacher_tokens_, `(L, D)` in original order, in this pass's order."""
        return teacher_tokens[self.order[row]]

    def to_json(self) -> dict[str, Any]:
        """Return a JSON compatible report."""
        report: dict[str, Any] = {
            "mode": self.mode,
            "stage_token_counts": self.stage_token_counts(),
            "masks": [mask.to_json() for mask in self.masks],
            "seq_lengths": self.seq_lengths,
            "class_positions": list(self.class_positions),
            "policy": None if self.policy is None else self.policy.to_json(),
        }

        if self.counter is not None:
            report["ops"] = {
                "macs": self.counter.macs,
                "by_tag": dict(sorted(self.counter.by_tag.items())),
                "routed": [list(entry) for entry in self.counter.routed],
            }

        return report


def merge_diagnostics(parts: list[ForwardDiagnostics]) -> ForwardDiagnostics:
    """Combine single-sample diagnostics into one batch, in order."""
    first = parts[0]
    merged = ForwardDiagnostics(mode=first.mode, counter=first.counter)

    for stage in range(len(first.masks)):
        stacked = [part.masks[stage] for part in parts]
        merged.masks.append(
            TokenMask(
                m=np.concatenate([mask.m for mask in stacked]),
                class_idx=np.concatenate([mask.class_idx for mask in stacked]),
                stage=stacked[0].stage,
            )
        )

    if first.policy is not None:
        merged.policy = BlockPolicy(
            q=np.concatenate([p.policy.q for p in parts if p.policy], axis=1),
            scores=np.concatenate([p.policy.scores for p in parts if p.policy], axis=1),
        )

    merged.seq_lengths = [
        [length for part in parts for length in part.seq_lengths[layer]]
        for layer in range(len(first.seq_lengths))
    ]

    for part in parts:
        merged.tokens.extend(part.tokens)
        merged.keep.extend(part.keep)
        merged.order.extend(part.order)
        merged.class_positions.extend(part.class_positions)

    return merged
