"""The learnable token pruning predictor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..exceptions import ShapeError
from ..numerics import OpCounter
from ..numerics import Rng
from ..numerics import Tensor
from ..numerics import gelu
from ..numerics import linear
from ..numerics import log_softmax

RETAIN = 0
PRUNE = 1


@dataclass(frozen=True, kw_only=True)
class PredictorWeights:
    """A stack of linear layers ending in two logits per token.

    The first layer's output is split in half. The first half is a per-token
    local feature, the second half is averaged over the tokens still
    retained and broadcast back as a global feature.
    """

    weights: tuple[Tensor, ...]
    biases: tuple[Tensor, ...]

    def __post_init__(self) -> None:
        n_layers = len(self.weights)
        if n_layers < 2 or n_layers != len(self.biases):  # noqa: PLR2004
            raise ShapeError("a predictor needs at least two layers")
        if self.weights[-1].shape[1] != 2:  # noqa: PLR2004
            raise ShapeError("a predictor must end in two logits")

    @staticmethod
    def init(
        rng: Rng, in_dim: int, hidden: Sequence[int], *, std: float
    ) -> PredictorWeights:
        """Return randomly initialized predictor weights."""
        widths = [in_dim, *hidden, 2]
        return PredictorWeights(
            weights=tuple(
                rng.normal((a, b), std=std) for a, b in zip(widths, widths[1:])
            ),
            biases=tuple(np.zeros(b) for b in widths[1:]),
        )

    @staticmethod
    def zeros(in_dim: int, hidden: Sequence[int]) -> PredictorWeights:
        """Return all-zero predictor weights."""
        widths = [in_dim, *hidden, 2]
        return PredictorWeights(
            weights=tuple(np.zeros((a, b)) for a, b in zip(widths, widths[1:])),
            biases=tuple(np.zeros(b) for b in widths[1:]),
        )

    @property
    def in_dim(self) -> int:
        """The width of predictor input features."""
        return int(self.weights[0].shape[0])


@dataclass(frozen=True, kw_only=True)
class PrunePrediction:
    """Per-token retain and prune probabilities.

    Attributes:
        logits: Log probabilities, `(B, L, 2)`. Previously pruned tokens have
            a retain logit of `-inf`.
        probs: `softmax(logits)`, `(B, L, 2)`. Column 0 is the retain
            probability.
    """

    logits: Tensor
    probs: Tensor

    @staticmethod
    def from_probs(probs: Tensor) -> PrunePrediction:
        """Return a prediction with the given retain/prune probabilities."""
        with np.errstate(divide="ignore"):
            return PrunePrediction(logits=np.log(probs), probs=probs)

    @property
    def retain(self) -> Tensor:
        """Retain probabilities, `(B, L)`."""
        return self.probs[..., RETAIN]


def _layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    centered = x - x.mean(axis=-1, keepdims=True)
    variance = np.mean(centered * centered, axis=-1, keepdims=True)
    return centered / np.sqrt(variance + eps)


def predict(
    weights: PredictorWeights,
    h: Tensor,
    prev_mask: Tensor,
    *,
    counter: OpCounter | None = None,
) -> PrunePrediction:
    """Return retain/prune probabilities for every token of _h_.

    Args:
        weights: The stage's predictor.
        h: Predictor input features, `(B, L, F)`. Token embeddings by
            default, or Δ, B̄ or C features.
        prev_mask: The previous stage's mask in the same order as _h_,
            `(B, L)`. Tokens already pruned get a retain probability of
            exactly 0 and are left out of the global feature.
        counter: Optional operation counter.
    """
    if h.ndim != 3 or h.shape[-1] != weights.in_dim:  # noqa: PLR2004
        raise ShapeError(
            f"expected (B, L, {weights.in_dim}) features, found {h.shape}",
            operation="predict",
        )

    if prev_mask.shape != h.shape[:2]:
        raise ShapeError(
            f"mask shape {prev_mask.shape} doesn't match features {h.shape}",
            operation="predict",
        )

    x = gelu(
        linear(
            _layer_norm(h),
            weights.weights[0],
            weights.biases[0],
            counter=counter,
            tag="predictor",
        )
    )

    half = x.shape[-1] // 2
    live = prev_mask[..., None]
    global_mean = np.sum(x[..., half:] * live, axis=1, keepdims=True) / np.maximum(
        np.sum(live, axis=1, keepdims=True), 1.0
    )
    x = np.concatenate(
        [
            x[..., :half],
            np.broadcast_to(global_mean, (*x.shape[:2], x.shape[-1] - half)),
        ],
        axis=-1,
    )

    for weight, bias in zip(weights.weights[1:-1], weights.biases[1:-1]):
        x = gelu(linear(x, weight, bias, counter=counter, tag="predictor"))

    logits = log_softmax(
        linear(
            x, weights.weights[-1], weights.biases[-1], counter=counter, tag="predictor"
        )
    )

    pruned = prev_mask == 0
    logits[pruned, RETAIN] = -np.inf
    logits[pruned, PRUNE] = 0.0
    probs = np.exp(logits)

    return PrunePrediction(logits=logits, probs=probs)
