"""Per-sample selection of forward and backward SSM blocks.

Every layer owns a linear selector that scores its two blocks from the class
token. Training draws hard gates with a Gumbel-sigmoid, realized as a two
class Gumbel-softmax over {on, off}. Inference thresholds the sigmoid score
and sends only gated-on rows through each block. The random baseline ignores
the selector and turns each block on at a fixed rate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any
from typing import Callable
from typing import Literal
from typing import Sequence

import numpy as np

from .exceptions import ShapeError
from .numerics import UNIFORM_CLAMP
from .numerics import OpCounter
from .numerics import Rng
from .numerics import Tensor
from .numerics import gumbel_sample
from .numerics import linear
from .numerics import sigmoid

logger = logging.getLogger(__name__)

FORWARD = 0
BACKWARD = 1

SelectMode = Literal["train", "infer", "random"]


@dataclass(frozen=True, kw_only=True)
class SelectorWeights:
    """A linear map from a class token to one logit per block."""

    weight: Tensor
    bias: Tensor

    @staticmethod
    def init(rng: Rng, embed_dim: int, *, std: float, bias: float) -> SelectorWeights:
        """Return selector weights whose bias keeps both blocks on."""
        return SelectorWeights(
            weight=rng.normal((embed_dim, 2), std=std),
            bias=np.full(2, bias),
        )


@dataclass(frozen=True, kw_only=True)
class PolicyRow:
    """Block gates for one layer.

    Attributes:
        q: Binary gates, `(B, 2)`. Column 0 is the forward block.
        scores: Soft scores in [0, 1], the straight-through gradient path.
        logits: Selector outputs before noise and thresholding.
    """

    q: Tensor
    scores: Tensor
    logits: Tensor

    @staticmethod
    def all_on(batch: int) -> PolicyRow:
        """Return a row with every block enabled."""
        ones = np.ones((batch, 2))
        return PolicyRow(q=ones, scores=ones.copy(), logits=np.full((batch, 2), np.inf))


@dataclass(frozen=True, kw_only=True)
class BlockPolicy:
    """Block gates for every layer, `(n_layers, B, 2)`."""

    q: Tensor
    scores: Tensor

    def __post_init__(self) -> None:
        if self.q.ndim != 3 or self.q.shape[-1] != 2:  # noqa: PLR2004
            raise ShapeError(f"expected (n_layers, B, 2) gates, found {self.q.shape}")

    @staticmethod
    def stack(rows: Sequence[PolicyRow]) -> BlockPolicy:
        """Combine per-layer rows into one policy."""
        return BlockPolicy(
            q=np.stack([row.q for row in rows]),
            scores=np.stack([row.scores for row in rows]),
        )

    @property
    def n_layers(self) -> int:
        """The number of layers covered."""
        return int(self.q.shape[0])

    @property
    def active_ratio(self) -> float:
        """Mean over layers and samples of `(Q_0 + Q_1) / 2`."""
        return float(np.mean((self.q[..., FORWARD] + self.q[..., BACKWARD]) / 2))

    def sample(self, index: int) -> BlockPolicy:
        """Return the policy of a single batch row."""
        return BlockPolicy(
            q=self.q[:, index : index + 1], scores=self.scores[:, index : index + 1]
        )

    def to_json(self) -> dict[str, Any]:
        """Return a JSON compatible summary, one gate grid per layer."""
        return {
            "active_ratio": self.active_ratio,
            "gates": self.q.astype(int).tolist(),
        }


def gumbel_sigmoid(
    logits: Tensor,
    rng: Rng,
    *,
    tau: float = 1.0,
    clamp: float = UNIFORM_CLAMP,
) -> tuple[Tensor, Tensor]:
    """Return hard and soft Gumbel-sigmoid samples of _logits_.

    A gate is on when `logit + g_on - g_off > 0` for independent standard
    Gumbel draws, which is a two class Gumbel-softmax with logits
    `(logit, 0)`.
    """
    noise = gumbel_sample(rng, (2, *logits.shape), clamp)
    perturbed = logits + noise[0] - noise[1]
    hard = (perturbed > 0).astype(np.float64)
    soft = sigmoid(perturbed / tau)
    return hard, soft


def select_blocks(
    weights: SelectorWeights,
    class_tokens: Tensor,
    rng: Rng | None,
    mode: SelectMode,
    *,
    tau: float = 1.0,
    threshold: float = 0.5,
    ratio: float = 1.0,
    clamp: float = UNIFORM_CLAMP,
    counter: OpCounter | None = None,
) -> PolicyRow:
    """Return block gates for a batch of class tokens, `(B, D)`.

    Args:
        weights: This layer's selector.
        class_tokens: The class token of every sample at this layer.
        rng: Source of Gumbel noise in train mode and of the gates in random
            mode.
        mode: `"train"` draws hard Gumbel-sigmoid samples, `"infer"` gates on
            `sigmoid(logit) >= threshold` deterministically. `"random"`
            ignores the selector and turns each block on independently with
            probability _ratio_.
        tau: Gumbel temperature.
        threshold: Inference gate threshold.
        ratio: Probability that a block is on in random mode.
        clamp: Uniform clamp for the Gumbel transform.
        counter: Optional operation counter.
    """
    width = weights.weight.shape[0]
    if class_tokens.ndim != 2 or class_tokens.shape[1] != width:  # noqa: PLR2004
        raise ShapeError(
            f"expected (B, {weights.weight.shape[0]}) class tokens, "
            f"found {class_tokens.shape}",
            operation="select_blocks",
        )

    logits = linear(
        class_tokens, weights.weight, weights.bias, counter=counter, tag="selector"
    )

    if mode == "train":
        if rng is None:
            raise ValueError("train mode block selection needs an Rng")
        hard, soft = gumbel_sigmoid(logits, rng, tau=tau, clamp=clamp)
        return PolicyRow(q=hard, scores=soft, logits=logits)

    if mode == "random":
        if rng is None:
            raise ValueError("random block selection needs an Rng")
        hard = (rng.uniform(logits.shape) < ratio).astype(np.float64)
        return PolicyRow(q=hard, scores=np.full_like(logits, ratio), logits=logits)

    soft = sigmoid(logits)
    return PolicyRow(
        q=(soft >= threshold).astype(np.float64), scores=soft, logits=logits
    )


def route_infer(
    gate: Tensor,
    batch: Tensor,
    block: Callable[[Tensor], Tensor],
    *,
    out_dim: int | None = None,
    counter: OpCounter | None = None,
    name: str = "block",
) -> Tensor:
    """Run _block_ on gated-on rows of _batch_ only and scatter the results back.

    Gated-off rows get a zero block output. Row order is preserved.

    Args:
        gate: Binary gates, `(B,)`.
        batch: Block input, `(B, L, F)`.
        block: Maps a `(B', L, F)` sub-batch to `(B', L, out_dim)`.
        out_dim: The width of the block output. Defaults to `F`.
        counter: Records the realized sub-batch size when given.
        name: Names the block in the counter's routing log.
    """
    if gate.shape != batch.shape[:1]:
        raise ShapeError(
            f"expected {batch.shape[0]} gates, found {gate.shape}",
            operation="route_infer",
        )

    rows = np.flatnonzero(gate > 0)
    width = batch.shape[-1] if out_dim is None else out_dim
    out = np.zeros((*batch.shape[:-1], width))

    if counter is not None:
        counter.record_route(name, int(rows.size), int(batch.shape[0]))

    if rows.size:
        out[rows] = block(batch[rows])

    logger.debug("%s ran on %d of %d rows", name, rows.size, batch.shape[0])
    return out
