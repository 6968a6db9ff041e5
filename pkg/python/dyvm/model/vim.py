"""The full model: patch embedding, pruned and gated layers, and the head."""

from __future__ import annotations

import logging
from typing import Literal

import numpy as np

from ..block_select import BlockPolicy
from ..block_select import PolicyRow
from ..block_select import SelectMode
from ..block_select import select_blocks
from ..exceptions import ShapeError
from ..numerics import UNIFORM_CLAMP
from ..numerics import OpCounter
from ..numerics import Rng
from ..numerics import Tensor
from ..numerics import as_tensor
from ..numerics import linear
from ..numerics import rms_norm
from ..pruning import IndexArray
from ..pruning import SampleMode
from ..pruning import TokenMask
from ..pruning import predict
from ..pruning import rearrange_permutation
from ..pruning import sample_mask
from ..ssm import SsmParams
from ..ssm import discretize
from .config import ModelConfig
from .context import ForwardDiagnostics
from .context import merge_diagnostics
from .layer import VimLayer
from .layer import branch_inputs
from .layer import layer_forward
from .layer import select_parameters
from .weights import ModelWeights

logger = logging.getLogger(__name__)

Mode = Literal["train", "infer"]


def patchify(
    image: Tensor,
    cfg: ModelConfig,
    weights: ModelWeights,
    *,
    counter: OpCounter | None = None,
) -> Tensor:
    """Embed non-overlapping patches of _image_ and add position embeddings.

    Args:
        image: `(H, W, C)` or a batch `(B, H, W, C)`.
        cfg: The model configuration.
        weights: Supplies the patch projection and position embeddings.
        counter: Optional operation counter.

    Returns:
        `(P, D)` tokens, or `(B, P, D)` for a batch.
    """
    images = as_tensor(image)
    single = images.ndim == 3  # noqa: PLR2004
    if single:
        images = images[None]

    expected = (cfg.image_size, cfg.image_size, cfg.in_channels)
    if images.ndim != 4 or images.shape[1:] != expected:  # noqa: PLR2004
        raise ShapeError(
            f"expected {expected} images, found {images.shape[1:]}",
            operation="patchify",
        )

    B = images.shape[0]
    p = cfg.patch_size
    grid = cfg.image_size // p
    patches = (
        images.reshape(B, grid, p, grid, p, cfg.in_channels)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(B, grid * grid, p * p * cfg.in_channels)
    )

    tokens = (
        linear(
            patches,
            weights.patch_weight,
            weights.patch_bias,
            counter=counter,
            tag="patch_embed",
        )
        + weights.pos_embed
    )
    return tokens[0] if single else tokens


def insert_class_token(tokens: Tensor, c: Tensor, index: int | None = None) -> Tensor:
    """Insert class token _c_ into _tokens_, `(P, D)` or `(B, P, D)`.

    The class token goes to _index_, `floor(P / 2)` by default.
    """
    n_tokens = tokens.shape[-2]
    at = n_tokens // 2 if index is None else index
    row = np.broadcast_to(
        np.reshape(c, (1, -1)), (*tokens.shape[:-2], 1, tokens.shape[-1])
    )
    return np.concatenate([tokens[..., :at, :], row, tokens[..., at:, :]], axis=-2)


def remove_class_token(sequence: Tensor, index: int) -> tuple[Tensor, Tensor]:
    """Split _sequence_ into its tokens and the class token at _index_."""
    return np.delete(sequence, index, axis=-2), sequence[..., index, :]


def embed(
    images: Tensor,
    cfg: ModelConfig,
    weights: ModelWeights,
    *,
    counter: OpCounter | None = None,
) -> Tensor:
    """Return the `(B, L, D)` input sequence of a batch of images."""
    tokens = patchify(images, cfg, weights, counter=counter)
    if tokens.ndim == 2:  # noqa: PLR2004
        tokens = tokens[None]
    index = cfg.class_index(cfg.n_patches)
    return insert_class_token(tokens, weights.class_token, index)


def classify(
    h: Tensor,
    class_positions: IndexArray,
    weights: ModelWeights,
    *,
    counter: OpCounter | None = None,
) -> Tensor:
    """Return logits from the class tokens of _h_, `(B, L, D)`."""
    class_tokens = h[np.arange(h.shape[0]), class_positions]
    return linear(
        rms_norm(class_tokens, weights.final_norm),
        weights.head_weight,
        weights.head_bias,
        counter=counter,
        tag="head",
    )


def baseline_forward(
    cfg: ModelConfig,
    weights: ModelWeights,
    images: Tensor,
) -> tuple[Tensor, Tensor]:
    """Run the plain stacked model with no pruning and no block selection.

    Returns:
        Logits, `(B, n_classes)`, and last layer tokens, `(B, L, D)`.
    """
    h = embed(images, cfg, weights)
    for layer in weights.layers:
        h = layer_forward(layer, h)
    index = cfg.class_index(cfg.n_patches)
    class_positions = np.full(h.shape[0], index, dtype=np.int64)
    return classify(h, class_positions, weights), h


def predictor_features(cfg: ModelConfig, layer: VimLayer, h: Tensor) -> Tensor:
    """Return the predictor input selected by `cfg.predictor_input`.

    Δ, B̄ and C come from the forward direction of _layer_, the layer the
    pruning stage precedes. B̄ is averaged over channels.
    """
    if cfg.predictor_input == "tokens":
        return h

    x, _ = branch_inputs(layer, h)
    selection = select_parameters(layer.forward, x)

    if cfg.predictor_input == "delta":
        return selection.delta
    if cfg.predictor_input == "c":
        return selection.c

    a = -np.exp(layer.forward.a_log)
    shape = (h.shape[1], *a.shape)
    b_bar = np.empty((*h.shape[:2], a.shape[1]))
    for row in range(h.shape[0]):
        params = SsmParams.diagonal(
            a,
            np.broadcast_to(selection.b[row][:, None, :], shape),
            np.broadcast_to(selection.c[row][:, None, :], shape),
            selection.delta[row],
        )
        b_bar[row] = discretize(params).b_bar.mean(axis=1)
    return b_bar


def _reorder(
    cfg: ModelConfig,
    h: Tensor,
    keep: Tensor,
    order: IndexArray,
    class_positions: IndexArray,
    *,
    drop: bool,
) -> tuple[Tensor, Tensor, IndexArray, IndexArray]:
    """Rearrange every row to `[retained, pruned]`, optionally dropping pruned rows."""
    new_h, new_keep, new_order, new_class = [], [], [], []

    for row in range(h.shape[0]):
        retained = int(keep[row].sum()) - 1
        class_at = cfg.class_index(retained)
        perm = rearrange_permutation(
            keep[row], int(class_positions[row]), class_at=class_at
        )
        if drop:
            perm = perm[: retained + 1]
        new_h.append(h[row, perm])
        new_keep.append(keep[row, perm])
        new_order.append(order[row, perm])
        new_class.append(class_at)

    return (
        np.stack(new_h),
        np.stack(new_keep),
        np.stack(new_order),
        np.asarray(new_class, dtype=np.int64),
    )


def _token_mode(cfg: ModelConfig, mode: Mode) -> SampleMode:
    if cfg.token_pruning == "random":
        return "random"
    if cfg.token_pruning == "static":
        return "static"
    return mode


def _block_mode(cfg: ModelConfig, mode: Mode) -> SelectMode:
    return "random" if cfg.block_selection == "random" else mode


def model_forward(
    cfg: ModelConfig,
    weights: ModelWeights,
    images: Tensor,
    mode: Mode,
    rng: Rng | None = None,
    *,
    replay: ForwardDiagnostics | None = None,
    counter: OpCounter | None = None,
    clamp: float = UNIFORM_CLAMP,
) -> tuple[Tensor, ForwardDiagnostics]:
    """Run the full pipeline on a batch of images.

    Patch embedding, then every layer with token pruning before each of
    `cfg.prune_layers` and block selection at every layer, then the final
    norm and the classification head on the class token.

    In train mode, masks and gates are sampled with Gumbel noise from _rng_,
    pruned tokens stay in the sequence behind the retained block and every
    block runs on the full batch. In infer mode, the top-K tokens by retain
    probability are kept, pruned tokens are dropped and blocks only run on
    gated-on samples.

    Args:
        cfg: The model configuration.
        weights: Model parameters.
        images: `(B, H, W, C)` or a single `(H, W, C)` image.
        mode: `"train"` or `"infer"`.
        rng: Gumbel noise source, required in train mode and by the random
            token pruning and block selection baselines.
        replay: Diagnostics of an earlier pass whose masks and gates an
            infer-mode pass reuses instead of predicting its own.
        counter: Optional operation counter.
        clamp: Uniform clamp for Gumbel sampling.

    Returns:
        Logits, `(B, n_classes)`, and diagnostics.
    """
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an Rng")

    h0 = embed(images, cfg, weights, counter=counter)

    if replay is None:
        if rng is None and cfg.needs_rng:
            raise ValueError("random token pruning or block selection needs an Rng")
        return _forward(cfg, weights, h0, mode, rng, counter=counter, clamp=clamp)

    if mode != "infer":
        raise ValueError("only infer mode can replay recorded masks")

    logits = []
    parts = []
    for row in range(h0.shape[0]):
        row_logits, diag = _forward(
            cfg,
            weights,
            h0[row : row + 1],
            mode,
            None,
            counter=counter,
            clamp=clamp,
            forced_masks=[mask.m[row : row + 1] for mask in replay.masks],
            forced_policy=None if replay.policy is None else replay.policy.sample(row),
        )
        logits.append(row_logits)
        parts.append(diag)

    return np.concatenate(logits), merge_diagnostics(parts)


def _forward(  # noqa: PLR0915
    cfg: ModelConfig,
    weights: ModelWeights,
    h: Tensor,
    mode: Mode,
    rng: Rng | None,
    *,
    counter: OpCounter | None,
    clamp: float,
    forced_masks: list[Tensor] | None = None,
    forced_policy: BlockPolicy | None = None,
) -> tuple[Tensor, ForwardDiagnostics]:
    B, L, _ = h.shape
    original_class = cfg.class_index(cfg.n_patches)
    rows = np.arange(B)

    order = np.tile(np.arange(L, dtype=np.int64), (B, 1))
    keep = np.ones((B, L))
    class_positions = np.full(B, original_class, dtype=np.int64)
    stages = (
        {layer: s for s, layer in enumerate(cfg.prune_layers)}
        if cfg.prunes_tokens
        else {}
    )

    diag = ForwardDiagnostics(mode=mode, counter=counter)
    policy_rows: list[PolicyRow] = []

    for index, layer in enumerate(weights.layers):
        stage = stages.get(index)

        if stage is not None:
            current = TokenMask(m=keep, class_idx=class_positions, stage=stage)

            if forced_masks is not None:
                forced = forced_masks[stage][rows[:, None], order]
                new_mask = TokenMask(
                    m=forced * keep, class_idx=class_positions, stage=stage + 1
                )
            else:
                pred = predict(
                    weights.predictors[stage],
                    predictor_features(cfg, layer, h),
                    keep,
                    counter=counter,
                )
                diag.predictions.append(pred)
                new_mask = sample_mask(
                    pred,
                    current,
                    rng,
                    _token_mode(cfg, mode),
                    keep_count=cfg.stage_token_counts[stage],
                    tau=cfg.gumbel_tau,
                    clamp=clamp,
                )

            original = np.zeros((B, L))
            original[rows[:, None], order] = new_mask.m
            diag.masks.append(
                TokenMask(
                    m=original,
                    class_idx=np.full(B, original_class, dtype=np.int64),
                    stage=stage + 1,
                    soft=new_mask.soft,
                )
            )

            h, keep, order, class_positions = _reorder(
                cfg, h, new_mask.m, order, class_positions, drop=mode == "infer"
            )
            logger.debug(
                "stage %d before layer %d kept %s tokens",
                stage + 1,
                index,
                diag.masks[-1].retained_counts(),
            )

        gates = None
        if forced_policy is not None:
            gates = forced_policy.q[index]
            policy_rows.append(
                PolicyRow(
                    q=gates,
                    scores=forced_policy.scores[index],
                    logits=forced_policy.scores[index],
                )
            )
        elif cfg.selects_blocks:
            row = select_blocks(
                layer.selector,
                h[rows, class_positions],
                rng,
                _block_mode(cfg, mode),
                tau=cfg.gumbel_tau,
                threshold=cfg.gate_threshold,
                ratio=cfg.block_ratio,
                clamp=clamp,
                counter=counter,
            )
            policy_rows.append(row)
            gates = row.q

        h = layer_forward(
            layer,
            h,
            gates,
            keep=keep if mode == "train" else None,
            mode=mode,
            counter=counter,
            name=f"layers.{index}",
        )
        diag.seq_lengths.append([int(n) for n in keep.sum(axis=1)])

    if policy_rows:
        diag.policy = BlockPolicy.stack(policy_rows)

    diag.tokens = list(h)
    diag.keep = list(keep)
    diag.order = list(order)
    diag.class_positions = [int(c) for c in class_positions]

    return classify(h, class_positions, weights, counter=counter), diag


def teacher_forward(
    cfg: ModelConfig,
    weights: ModelWeights,
    images: Tensor,
) -> tuple[Tensor, Tensor]:
    """Run the same weights with pruning and block selection disabled.

    Returns:
        Teacher logits, `(B, n_classes)`, and last layer tokens before the
        final norm, `(B, L, D)`, in original token order.
    """
    teacher_cfg = cfg.replace(token_ratio=1.0, block_ratio=1.0)
    logits, diag = model_forward(teacher_cfg, weights, images, "infer")
    return logits, np.stack(diag.tokens)
