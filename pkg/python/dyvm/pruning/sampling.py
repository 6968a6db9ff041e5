"""Turning predictions into retention masks."""

from __future__ import annotations

import logging
from typing import Literal

import numpy as np

from ..exceptions import MaskError
from ..exceptions import ShapeError
from ..numerics import UNIFORM_CLAMP
from ..numerics import Rng
from ..numerics import gumbel_sample
from ..numerics import softmax
from .mask import IndexArray
from .mask import TokenMask
from .predictor import PRUNE
from .predictor import RETAIN
from .predictor import PrunePrediction

logger = logging.getLogger(__name__)

SampleMode = Literal["train", "infer", "random", "static"]


def sample_mask(
    pred: PrunePrediction,
    prev: TokenMask,
    rng: Rng | None,
    mode: SampleMode,
    *,
    keep_count: int | None = None,
    tau: float = 1.0,
    clamp: float = UNIFORM_CLAMP,
) -> TokenMask:
    """Return the next stage's mask `M^s = M̂ ⊙ M^{s-1}`.

    Args:
        pred: Retain/prune probabilities in the same order as _prev_.
        prev: The previous stage's mask.
        rng: Source of randomness for `"train"` and `"random"` modes.
        mode: `"train"` draws a hard straight-through Gumbel-softmax sample
            per token. `"infer"` keeps the _keep_count_ tokens with the
            highest retain probability. `"random"` keeps _keep_count_
            uniformly random tokens and `"static"` keeps the _keep_count_
            tokens nearest the class token, both ignoring _pred_.
        keep_count: Non-class tokens to retain, required by every mode except
            `"train"`.
        tau: Gumbel-softmax temperature of the soft scores.
        clamp: Uniform clamp for the Gumbel transform.

    Raises:
        MaskError: If fewer than one token would be retained, or more tokens
            are requested than the previous mask retains.
    """
    if pred.probs.shape[:2] != prev.m.shape:
        raise ShapeError(
            f"prediction shape {pred.probs.shape} doesn't match mask {prev.m.shape}",
            operation="sample_mask",
        )

    rows = np.arange(prev.batch)

    if mode == "train":
        if rng is None:
            raise ValueError("train mode sampling needs an Rng")
        noise = gumbel_sample(rng, pred.logits.shape, clamp)
        perturbed = pred.logits + noise
        hard = (perturbed[..., RETAIN] > perturbed[..., PRUNE]).astype(np.float64)
        soft = softmax(perturbed / tau)[..., RETAIN]
        m = hard * prev.m
        m[rows, prev.class_idx] = 1.0
        return TokenMask(m=m, class_idx=prev.class_idx, stage=prev.stage + 1, soft=soft)

    if keep_count is None or keep_count < 1:
        raise MaskError(
            f"at least one token must be retained, found {keep_count}",
            operation="sample_mask",
        )

    m = np.zeros_like(prev.m)
    for row in rows:
        chosen = _choose(pred, prev, row, mode, keep_count, rng)
        m[row, chosen] = 1.0
        m[row, prev.class_idx[row]] = 1.0

    return TokenMask(
        m=m,
        class_idx=prev.class_idx,
        stage=prev.stage + 1,
        soft=pred.retain * prev.m,
    )


def _choose(
    pred: PrunePrediction,
    prev: TokenMask,
    row: int,
    mode: SampleMode,
    keep_count: int,
    rng: Rng | None,
) -> IndexArray:
    class_pos = int(prev.class_idx[row])
    candidates = prev.retained_idx(row)
    candidates = candidates[candidates != class_pos]

    if keep_count > candidates.size:
        raise MaskError(
            f"can't retain {keep_count} tokens, only {candidates.size} remain",
            operation="sample_mask",
        )

    if mode == "infer":
        # Stable, so ties go to the earlier token.
        order = np.argsort(-pred.retain[row, candidates], kind="stable")
    elif mode == "random":
        if rng is None:
            raise ValueError("random mode sampling needs an Rng")
        order = rng.permutation(candidates.size)
    elif mode == "static":
        order = np.argsort(np.abs(candidates - class_pos), kind="stable")
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")

    return np.sort(candidates[order[:keep_count]])
