"""Run a model in both modes and check that they agree."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..environment import Environment
from ..exceptions import InvariantViolation
from ..model import ForwardDiagnostics
from ..model import ModelConfig
from ..model import ModelWeights
from ..model import init_weights
from ..model import model_forward
from ..numerics import OpCounter
from ..numerics import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True, kw_only=True)
class ForwardReport:
    """Diagnostics of a train pass, its infer replay and a top-K infer pass.

    Attributes:
        cfg: The model configuration.
        seed: Seeds weights, images and Gumbel noise.
        train: Diagnostics of the train-mode pass.
        replay: Diagnostics of the infer pass replaying the train masks.
        infer: Diagnostics of an independent top-K infer pass.
        deviation: Max absolute logit difference between train and replay.
        tolerance: The largest deviation accepted.
        train_logits: Train-mode logits.
        infer_logits: Top-K infer logits.
    """

    cfg: ModelConfig
    seed: int
    train: ForwardDiagnostics
    replay: ForwardDiagnostics
    infer: ForwardDiagnostics
    deviation: float
    tolerance: float
    train_logits: Tensor
    infer_logits: Tensor

    def failures(self) -> list[str]:
        """Return a description of every violated expectation."""
        problems = []
        if not self.deviation < self.tolerance:
            problems.append(
                f"train/infer logit deviation {self.deviation:.3e} "
                f">= {self.tolerance:g}"
            )

        expected = list(self.cfg.stage_token_counts) if self.cfg.prunes_tokens else []
        for row, counts in enumerate(zip(*self.infer.stage_token_counts())):
            if list(counts) != expected:
                problems.append(
                    f"sample {row} kept {list(counts)} tokens per stage, "
                    f"expected {expected}"
                )
        return problems

    @property
    def passed(self) -> bool:
        """True if no expectation was violated."""
        return not self.failures()

    def raise_for_failures(self) -> None:
        """Raise an `InvariantViolation` describing every failure, if any."""
        problems = self.failures()
        if problems:
            raise InvariantViolation("; ".join(problems), operation="forward")

    def to_json(self) -> dict[str, Any]:
        """Return a JSON compatible report."""
        return {
            "config": self.cfg.to_dict(),
            "seed": self.seed,
            "passed": self.passed,
            "failures": self.failures(),
            "deviation": self.deviation,
            "expected_stage_token_counts": list(self.cfg.stage_token_counts)
            if self.cfg.prunes_tokens
            else [],
            "train": self.train.to_json(),
            "infer": self.infer.to_json(),
            "train_logits": self.train_logits.tolist(),
            "infer_logits": self.infer_logits.tolist(),
        }


def random_images(env: Environment, cfg: ModelConfig, seed: int, batch: int) -> Tensor:
    """Return a seeded batch of Gaussian images, `(B, H, W, C)`."""
    rng = env.rng(seed).spawn(1)
    return rng.normal((batch, cfg.image_size, cfg.image_size, cfg.in_channels))


def run_forward(
    env: Environment,
    cfg: ModelConfig,
    seed: int,
    *,
    batch: int = 2,
    weights: ModelWeights | None = None,
    images: Tensor | None = None,
) -> ForwardReport:
    """Run _cfg_ in train mode, replay its decisions in infer mode, then run top-K.

    Weights are initialized from _seed_ unless given.
    """
    rng = env.rng(seed)
    if weights is None:
        weights = init_weights(cfg, rng.spawn(0))
    images = random_images(env, cfg, seed, batch) if images is None else images

    train_logits, train = model_forward(
        cfg,
        weights,
        images,
        "train",
        rng.spawn(2),
        counter=OpCounter(),
        clamp=env.uniform_clamp,
    )
    replay_logits, replay = model_forward(cfg, weights, images, "infer", replay=train)
    infer_logits, infer = model_forward(
        cfg, weights, images, "infer", rng.spawn(3), counter=OpCounter()
    )

    deviation = float(np.max(np.abs(train_logits - replay_logits), initial=0.0))
    logger.info("train/infer logit deviation %.3e", deviation)

    return ForwardReport(
        cfg=cfg,
        seed=seed,
        train=train,
        replay=replay,
        infer=infer,
        deviation=deviation,
        tolerance=env.consistency_tolerance,
        train_logits=train_logits,
        infer_logits=infer_logits,
    )
