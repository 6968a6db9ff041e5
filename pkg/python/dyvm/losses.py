"""Training objectives and their analytic gradients.

The joint objective is a weighted sum of five parts: classification,
token keep ratio, block keep ratio, output distillation and token
distillation. Every part has a `*_grad` companion returning the gradient
with respect to its continuous inputs. Hard masks and gates are
differentiated straight-through, so gradients are taken with respect to the
soft scores they were sampled from.
"""

from __future__ import annotations

from dataclasses import dataclass
from dataclasses import fields
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .block_select import BACKWARD
from .block_select import FORWARD
from .block_select import BlockPolicy
from .exceptions import ConfigError
from .exceptions import LabelError
from .exceptions import MaskError
from .exceptions import ShapeError
from .exceptions import StageMismatchError
from .numerics import Tensor
from .numerics import log_softmax
from .numerics import softmax
from .pruning import TokenMask

Labels = npt.NDArray[np.int64]


@dataclass(frozen=True, kw_only=True)
class LossWeights:
    """Coefficients of the joint objective."""

    cls: float = 1.0
    token: float = 10.0
    block: float = 10.0
    dis_out: float = 0.5
    dis_token: float = 0.5

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"loss weight {f.name} must be non-negative")


@dataclass(frozen=True, kw_only=True)
class TargetRatios:
    """Keep ratio targets.

    Attributes:
        rho: The per-stage token keep ratio ρ. Stage s targets `ρ^s`.
        n_stages: The number of pruning stages, S.
        rho_p: The target fraction of active blocks.
    """

    rho: float
    n_stages: int
    rho_p: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.rho <= 1:
            raise ConfigError(f"token ratio must be in (0, 1], found {self.rho}")
        if not 0 <= self.rho_p <= 1:
            raise ConfigError(f"block ratio must be in [0, 1], found {self.rho_p}")
        if self.n_stages < 1:
            raise ConfigError("at least one pruning stage is required")

    @property
    def stage_targets(self) -> Tensor:
        """`[ρ, ρ², ..., ρ^S]`."""
        return np.asarray(self.rho ** np.arange(1, self.n_stages + 1), dtype=np.float64)


@dataclass(frozen=True, kw_only=True)
class LossParts:
    """Unweighted values of the five objectives."""

    cls: float = 0.0
    token: float = 0.0
    block: float = 0.0
    dis_out: float = 0.0
    dis_token: float = 0.0


def _check_labels(logits: Tensor, labels: Labels) -> Labels:
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):  # noqa: PLR2004
        raise ShapeError(
            f"expected (B, C) logits and (B,) labels, "
            f"found {logits.shape} and {labels.shape}"
        )
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise LabelError(
            f"labels must be in [0, {logits.shape[1]})", operation="loss_cls"
        )
    return labels


def loss_cls(logits: Tensor, labels: Labels) -> float:
    """Return the mean cross-entropy of _logits_, `(B, C)`, against _labels_.

    Raises:
        LabelError: If a label is outside `[0, C)`.
    """
    labels = _check_labels(logits, labels)
    logp = log_softmax(logits)
    return float(-np.mean(logp[np.arange(labels.size), labels]))


def loss_cls_grad(logits: Tensor, labels: Labels) -> Tensor:
    """Return d loss_cls / d logits."""
    labels = _check_labels(logits, labels)
    grad = softmax(logits)
    grad[np.arange(labels.size), labels] -= 1.0
    return grad / labels.size


def _mask_values(
    masks: Sequence[TokenMask | Tensor], targets: TargetRatios
) -> list[Tensor]:
    if len(masks) != targets.n_stages:
        raise StageMismatchError(
            f"expected {targets.n_stages} stage masks, found {len(masks)}",
            operation="loss_token",
        )
    values = [
        np.asarray(m.m if isinstance(m, TokenMask) else m, dtype=np.float64)
        for m in masks
    ]
    batch = values[0].shape[0]
    if any(v.ndim != 2 or v.shape[0] != batch for v in values):  # noqa: PLR2004
        raise ShapeError("stage masks must all be (B, L) with the same batch size")
    return values


def loss_token(masks: Sequence[TokenMask | Tensor], targets: TargetRatios) -> float:
    """Return `(1 / BS) Σ_b Σ_s (ρ^s - mean_i M^s_{b,i})²`.

    Args:
        masks: One mask per stage, as `TokenMask`s or `(B, L)` arrays. Arrays
            may hold soft scores.
        targets: The keep ratio targets.

    Raises:
        StageMismatchError: If the number of masks isn't `targets.n_stages`.
    """
    values = _mask_values(masks, targets)
    batch = values[0].shape[0]
    total = 0.0
    for target, m in zip(targets.stage_targets, values):
        total += float(np.sum((target - m.mean(axis=1)) ** 2))
    return total / (batch * targets.n_stages)


def loss_token_grad(
    masks: Sequence[TokenMask | Tensor], targets: TargetRatios
) -> list[Tensor]:
    """Return d loss_token / d M^s for every stage."""
    values = _mask_values(masks, targets)
    batch = values[0].shape[0]
    scale = 2.0 / (batch * targets.n_stages)
    grads = []
    for target, m in zip(targets.stage_targets, values):
        length = m.shape[1]
        diff = m.mean(axis=1, keepdims=True) - target
        grads.append(np.broadcast_to(scale * diff / length, m.shape).copy())
    return grads


def _gates(policy: BlockPolicy | Tensor) -> Tensor:
    q = (
        policy.q
        if isinstance(policy, BlockPolicy)
        else np.asarray(policy, dtype=np.float64)
    )
    if q.ndim != 3 or q.shape[-1] != 2:  # noqa: PLR2004
        raise ShapeError(f"expected (n_layers, B, 2) gates, found {q.shape}")
    return q


def loss_block(policy: BlockPolicy | Tensor, rho_p: float) -> float:
    """Return `(ρ^p - mean over layers and samples of (Q_0 + Q_1) / 2)²`.

    A `BlockPolicy` contributes its hard gates. Straight-through training
    applies `loss_block_grad` to the policy's soft scores instead.
    """
    q = _gates(policy)
    ratio = float(np.mean((q[..., FORWARD] + q[..., BACKWARD]) / 2))
    return (rho_p - ratio) ** 2


def loss_block_grad(policy: BlockPolicy | Tensor, rho_p: float) -> Tensor:
    """Return d loss_block / d Q, `(n_layers, B, 2)`."""
    q = _gates(policy)
    ratio = float(np.mean((q[..., FORWARD] + q[..., BACKWARD]) / 2))
    n_layers, batch, _ = q.shape
    return np.full(q.shape, -2.0 * (rho_p - ratio) / (n_layers * batch * 2))


def _check_pair(student: Tensor, teacher: Tensor) -> None:
    if student.shape != teacher.shape or student.ndim != 2:  # noqa: PLR2004
        raise ShapeError(
            f"expected matching (B, C) logits, "
            f"found {student.shape} and {teacher.shape}"
        )


def loss_dis_out(student_logits: Tensor, teacher_logits: Tensor) -> float:
    """Return the batch mean of `KL(softmax(student) || softmax(teacher))`."""
    _check_pair(student_logits, teacher_logits)
    logp = log_softmax(student_logits)
    logq = log_softmax(teacher_logits)
    kl = np.sum(np.exp(logp) * (logp - logq), axis=1)
    return float(np.mean(kl))


def loss_dis_out_grad(
    student_logits: Tensor, teacher_logits: Tensor
) -> tuple[Tensor, Tensor]:
    """Return d loss_dis_out / d student_logits and d teacher_logits."""
    _check_pair(student_logits, teacher_logits)
    batch = student_logits.shape[0]
    logp = log_softmax(student_logits)
    logq = log_softmax(teacher_logits)
    p = np.exp(logp)
    q = np.exp(logq)
    kl = np.sum(p * (logp - logq), axis=1, keepdims=True)
    d_student = p * (logp - logq - kl) / batch
    d_teacher = (q - p) / batch
    return d_student, d_teacher


def _token_weights(
    student: Tensor, teacher: Tensor, mask: TokenMask | Tensor
) -> Tensor:
    if student.shape != teacher.shape or student.ndim != 3:  # noqa: PLR2004
        raise ShapeError(
            f"expected matching (B, L, D) tokens, "
            f"found {student.shape} and {teacher.shape}"
        )
    m = np.asarray(mask.m if isinstance(mask, TokenMask) else mask, dtype=np.float64)
    if m.shape != student.shape[:2]:
        raise ShapeError(f"expected a {student.shape[:2]} mask, found {m.shape}")
    if m.sum() <= 0:
        raise MaskError("no retained tokens to distill", operation="loss_dis_token")
    return m


def loss_dis_token(
    student_tokens: Tensor, teacher_tokens: Tensor, final_mask: TokenMask | Tensor
) -> float:
    """Return `Σ_{b,i} M_{b,i} ||t̂_{b,i} - t*_{b,i}||² / Σ M`.

    Both token tensors are `(B, L, D)` in the same token order; align the
    teacher's tokens to the student's with `ForwardDiagnostics.align`.

    Raises:
        MaskError: If _final_mask_ retains nothing.
    """
    m = _token_weights(student_tokens, teacher_tokens, final_mask)
    sq = np.sum((student_tokens - teacher_tokens) ** 2, axis=-1)
    return float(np.sum(m * sq) / m.sum())


def loss_dis_token_grad(
    student_tokens: Tensor, teacher_tokens: Tensor, final_mask: TokenMask | Tensor
) -> Tensor:
    """Return d loss_dis_token / d student_tokens."""
    m = _token_weights(student_tokens, teacher_tokens, final_mask)
    return 2.0 * m[..., None] * (student_tokens - teacher_tokens) / m.sum()


def loss_joint(parts: LossParts, weights: LossWeights | None = None) -> float:
    """Return `Σ_k λ_k L_k`."""
    weights = weights or LossWeights()
    return float(
        sum(
            getattr(weights, f.name) * getattr(parts, f.name)
            for f in fields(LossParts)
        )
    )
