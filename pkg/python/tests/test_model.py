"""Patch embedding, the bidirectional layer and the full pruned model."""

from __future__ import annotations

import dataclasses
import json
import operator
from dataclasses import dataclass
from pathlib import Path
from typing import Any
from typing import Callable

import numpy as np
import pytest
from dyvm.exceptions import ShapeError
from dyvm.exceptions import WeightsArchiveError
from dyvm.model import PRESETS
from dyvm.model import ModelConfig
from dyvm.model import ModelWeights
from dyvm.model import baseline_forward
from dyvm.model import causal_conv1d
from dyvm.model import init_weights
from dyvm.model import insert_class_token
from dyvm.model import layer_forward
from dyvm.model import load_weights
from dyvm.model import model_forward
from dyvm.model import patchify
from dyvm.model import remove_class_token
from dyvm.model import save_weights
from dyvm.model import teacher_forward
from dyvm.model.weights import named_tensors
from dyvm.numerics import OpCounter
from dyvm.numerics import Rng
from dyvm.numerics import Tensor

SMALL = ModelConfig(
    name="small",
    image_size=8,
    patch_size=2,
    embed_dim=8,
    n_layers=3,
    n_state=4,
    expand=2,
    conv_width=3,
    n_classes=5,
    prune_layers=(1, 2),
    token_ratio=0.7,
    block_ratio=0.8,
    selector_bias=0.5,
    init_std=0.3,
)


def images_for(cfg: ModelConfig, batch: int, seed: int = 0) -> Tensor:
    return Rng(seed).normal((batch, cfg.image_size, cfg.image_size, cfg.in_channels))


@pytest.fixture(name="small_weights", scope="module")
def fixture_small_weights() -> ModelWeights:
    return init_weights(SMALL, Rng(42))


def test_patchify_counts_tokens() -> None:
    cfg = ModelConfig(image_size=4, patch_size=2, embed_dim=6, prune_layers=())
    weights = init_weights(cfg, Rng(0))
    tokens = patchify(np.ones((4, 4, 3)), cfg, weights)
    assert tokens.shape == (4, 6)


def test_vim_sequence_length() -> None:
    cfg = PRESETS["vim-t"]
    assert cfg.n_patches == 196
    assert cfg.seq_len == 197
    assert cfg.class_index(cfg.n_patches) == 98


def test_zero_image_embeds_to_position_embeddings() -> None:
    cfg = ModelConfig(image_size=4, patch_size=2, embed_dim=6, prune_layers=())
    weights = init_weights(cfg, Rng(1))
    tokens = patchify(np.zeros((2, 4, 4, 3)), cfg, weights)
    np.testing.assert_array_equal(tokens[0], weights.pos_embed)
    np.testing.assert_array_equal(tokens[1], weights.pos_embed)


def test_patchify_flattens_patches_row_major() -> None:
    cfg = ModelConfig(
        image_size=4, patch_size=2, in_channels=1, embed_dim=4, prune_layers=()
    )
    weights = dataclasses.replace(
        init_weights(cfg, Rng(0)),
        patch_weight=np.eye(4),
        pos_embed=np.zeros((4, 4)),
    )
    image = np.arange(16, dtype=float).reshape(4, 4, 1)
    tokens = patchify(image, cfg, weights)
    np.testing.assert_array_equal(tokens[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(tokens[1], [2, 3, 6, 7])
    np.testing.assert_array_equal(tokens[3], [10, 11, 14, 15])


def test_patchify_rejects_mismatched_images(small_weights: ModelWeights) -> None:
    with pytest.raises(ShapeError):
        patchify(np.zeros((6, 6, 3)), SMALL, small_weights)


def test_insert_class_token_in_the_middle() -> None:
    tokens = np.zeros((196, 3))
    c = np.ones(3)
    sequence = insert_class_token(tokens, c)
    assert sequence.shape == (197, 3)
    assert np.flatnonzero(sequence[:, 0]).tolist() == [98]

    two = insert_class_token(np.zeros((2, 3)), c)
    assert np.flatnonzero(two[:, 0]).tolist() == [1]


def test_remove_then_insert_class_token_is_identity() -> None:
    sequence = Rng(3).normal((2, 9, 4))
    tokens, c = remove_class_token(sequence, 4)
    np.testing.assert_array_equal(insert_class_token(tokens, c[0], 4)[0], sequence[0])
    assert tokens.shape == (2, 8, 4)


def test_causal_conv1d() -> None:
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
    weight = np.array([[10.0, 1.0]])
    got = causal_conv1d(x, weight, np.array([0.5]))
    np.testing.assert_array_equal(got[0, :, 0], [1.5, 12.5, 23.5])


def test_layer_with_both_gates_off_is_the_residual(small_weights: ModelWeights) -> None:
    layer = small_weights.layers[0]
    h = Rng(4).normal((3, 17, 8))
    gates = np.zeros((3, 2))
    np.testing.assert_array_equal(layer_forward(layer, h, gates, mode="train"), h)
    np.testing.assert_array_equal(layer_forward(layer, h, gates, mode="infer"), h)


def test_layer_with_both_gates_on_is_ungated(small_weights: ModelWeights) -> None:
    layer = small_weights.layers[1]
    h = Rng(5).normal((2, 17, 8))
    np.testing.assert_array_equal(
        layer_forward(layer, h, np.ones((2, 2))), layer_forward(layer, h)
    )
    np.testing.assert_array_equal(
        layer_forward(layer, h, np.ones((2, 2)), mode="infer"), layer_forward(layer, h)
    )


def test_forward_only_and_backward_only_differ(small_weights: ModelWeights) -> None:
    layer = small_weights.layers[0]
    h = Rng(6).normal((1, 17, 8))
    forward_only = layer_forward(layer, h, np.array([[1.0, 0.0]]))
    backward_only = layer_forward(layer, h, np.array([[0.0, 1.0]]))
    assert np.max(np.abs(forward_only - backward_only)) > 1e-6


def test_tied_directions_commute_with_reversal(small_weights: ModelWeights) -> None:
    layer = small_weights.layers[0]
    tied = dataclasses.replace(layer, backward=layer.forward)
    h = Rng(7).normal((2, 17, 8))
    np.testing.assert_allclose(
        layer_forward(tied, h[:, ::-1]), layer_forward(tied, h)[:, ::-1], atol=1e-12
    )


def test_layer_rejects_bad_gates(small_weights: ModelWeights) -> None:
    with pytest.raises(ShapeError):
        layer_forward(small_weights.layers[0], np.ones((2, 5, 8)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        layer_forward(small_weights.layers[0], np.ones((2, 5, 7)))


def test_no_pruning_matches_the_baseline(small_weights: ModelWeights) -> None:
    cfg = SMALL.replace(token_ratio=1.0, block_ratio=1.0)
    images = images_for(cfg, 2)
    want, _ = baseline_forward(cfg, small_weights, images)

    infer, diag = model_forward(cfg, small_weights, images, "infer")
    train, _ = model_forward(cfg, small_weights, images, "train", Rng(0))
    np.testing.assert_array_equal(infer, want)
    np.testing.assert_array_equal(train, want)
    assert diag.masks == []
    assert diag.policy is None

    teacher, tokens = teacher_forward(SMALL, small_weights, images)
    np.testing.assert_array_equal(teacher, want)
    assert tokens.shape == (2, SMALL.seq_len, SMALL.embed_dim)


def random_config(seed: int) -> ModelConfig:
    """Return a small architecture with every pruning knob switched off."""
    rng = Rng(seed)

    def draw(low: int, high: int) -> int:
        return int(rng.integers(low, high + 1, (1,))[0])

    patch = draw(1, 2)
    n_layers = draw(1, 4)
    prune_layers = sorted({draw(0, n_layers - 1) for _ in range(2)})
    return ModelConfig(
        name=f"random-{seed}",
        image_size=patch * draw(2, 4),
        patch_size=patch,
        in_channels=draw(1, 3),
        embed_dim=draw(2, 8),
        n_layers=n_layers,
        n_state=draw(1, 6),
        expand=draw(1, 2),
        conv_width=draw(1, 4),
        n_classes=draw(2, 6),
        class_position=("middle", "head")[draw(0, 1)],
        prune_layers=tuple(prune_layers),
        token_ratio=1.0,
        block_ratio=1.0,
        selector_bias=float(rng.normal((1,))[0]),
        init_std=0.3,
    )


@pytest.mark.parametrize("seed", range(10))
def test_no_pruning_matches_the_baseline_for_random_configs(seed: int) -> None:
    cfg = random_config(seed)
    weights = init_weights(cfg, Rng(seed + 100))
    images = images_for(cfg, 2, seed=seed)
    want, _ = baseline_forward(cfg, weights, images)

    infer, diag = model_forward(cfg, weights, images, "infer")
    train, _ = model_forward(cfg, weights, images, "train", Rng(seed))
    np.testing.assert_array_equal(infer, want)
    np.testing.assert_array_equal(train, want)
    assert diag.masks == []
    assert diag.policy is None


def test_infer_replaying_train_masks_matches_train(small_weights: ModelWeights) -> None:
    images = images_for(SMALL, 3, seed=1)
    train, recorded = model_forward(SMALL, small_weights, images, "train", Rng(9))
    infer, replayed = model_forward(
        SMALL, small_weights, images, "infer", replay=recorded
    )
    np.testing.assert_allclose(infer, train, rtol=0, atol=1e-10)
    assert replayed.stage_token_counts() == recorded.stage_token_counts()
    assert recorded.policy is not None
    assert replayed.policy is not None
    np.testing.assert_array_equal(replayed.policy.q, recorded.policy.q)


@pytest.mark.slow
def test_desk_preset_train_and_replay_agree() -> None:
    cfg = PRESETS["desk"]
    weights = init_weights(cfg, Rng(3))
    images = images_for(cfg, 2, seed=3)
    train, recorded = model_forward(cfg, weights, images, "train", Rng(4))
    infer, _ = model_forward(cfg, weights, images, "infer", replay=recorded)
    np.testing.assert_allclose(infer, train, rtol=0, atol=1e-10)


def test_infer_follows_the_stage_schedule(small_weights: ModelWeights) -> None:
    assert SMALL.stage_token_counts == (11, 7)
    _, diag = model_forward(SMALL, small_weights, images_for(SMALL, 2), "infer")
    assert diag.stage_token_counts() == [[11, 11], [7, 7]]
    assert diag.seq_lengths == [[17, 17], [12, 12], [8, 8]]


def test_vim_stage_schedule() -> None:
    assert PRESETS["vim-s"].stage_token_counts == (137, 96, 67)


def test_class_token_sits_in_the_middle_of_the_retained_block(
    small_weights: ModelWeights,
) -> None:
    images = images_for(SMALL, 2, seed=2)
    original = SMALL.class_index(SMALL.n_patches)

    _, infer = model_forward(SMALL, small_weights, images, "infer")
    _, train = model_forward(SMALL, small_weights, images, "train", Rng(5))

    for diag in (infer, train):
        for row in range(2):
            retained = int(diag.keep[row].sum()) - 1
            position = diag.class_positions[row]
            assert position == retained // 2
            assert diag.order[row][position] == original
            block = diag.order[row][: retained + 1].tolist()
            kept = [i for i in block if i != original]
            assert kept == sorted(kept)


def test_masks_are_monotone_and_keep_the_class_token(
    small_weights: ModelWeights,
) -> None:
    _, diag = model_forward(SMALL, small_weights, images_for(SMALL, 4), "train", Rng(8))
    original = SMALL.class_index(SMALL.n_patches)
    for before, after in zip(diag.masks, diag.masks[1:]):
        assert after.is_subset_of(before)
    for mask in diag.masks:
        assert np.all(mask.m[:, original] == 1)


@pytest.mark.parametrize("source", ["delta", "b_bar", "c"])
def test_alternative_predictor_inputs(source: str) -> None:
    cfg = SMALL.replace(predictor_input=source)
    weights = init_weights(cfg, Rng(11))
    logits, diag = model_forward(cfg, weights, images_for(cfg, 2), "infer")
    assert logits.shape == (2, cfg.n_classes)
    assert diag.stage_token_counts() == [[11, 11], [7, 7]]


def test_static_token_pruning_keeps_the_nearest_tokens(
    small_weights: ModelWeights,
) -> None:
    cfg = SMALL.replace(token_pruning="static", block_ratio=1.0)
    _, first = model_forward(cfg, small_weights, images_for(cfg, 2), "infer")
    _, second = model_forward(cfg, small_weights, images_for(cfg, 2, seed=5), "infer")

    assert first.stage_token_counts() == [[11, 11], [7, 7]]
    for row in range(2):
        np.testing.assert_array_equal(
            np.flatnonzero(first.masks[0].m[row]), np.arange(2, 14)
        )
    for a, b in zip(first.masks, second.masks):
        np.testing.assert_array_equal(a.m, b.m)


def test_random_token_pruning_ignores_the_predictor(
    small_weights: ModelWeights,
) -> None:
    cfg = SMALL.replace(token_pruning="random", block_ratio=1.0)
    images = images_for(cfg, 3)
    _, a = model_forward(cfg, small_weights, images, "infer", Rng(1))
    other = images_for(cfg, 3, seed=9)
    _, b = model_forward(cfg, small_weights, other, "infer", Rng(1))

    assert a.stage_token_counts() == [[11, 11, 11], [7, 7, 7]]
    for mask_a, mask_b in zip(a.masks, b.masks):
        np.testing.assert_array_equal(mask_a.m, mask_b.m)

    _, learned = model_forward(SMALL, small_weights, images, "infer")
    assert any(
        not np.array_equal(r.m, s.m) for r, s in zip(a.masks, learned.masks)
    )


def test_random_baselines_need_an_rng(small_weights: ModelWeights) -> None:
    images = images_for(SMALL, 1)
    for cfg in (
        SMALL.replace(token_pruning="random"),
        SMALL.replace(block_selection="random"),
    ):
        with pytest.raises(ValueError, match="Rng"):
            model_forward(cfg, small_weights, images, "infer")


def test_random_block_selection_gates_at_the_block_ratio() -> None:
    cfg = SMALL.replace(
        token_ratio=1.0, block_ratio=0.5, block_selection="random", selector_bias=50.0
    )
    weights = init_weights(cfg, Rng(12))
    images = images_for(cfg, 64, seed=4)

    learned_cfg = cfg.replace(block_selection="learned")
    _, learned = model_forward(learned_cfg, weights, images, "infer")
    _, diag = model_forward(cfg, weights, images, "infer", Rng(13))

    assert learned.policy is not None
    assert learned.policy.active_ratio == 1.0
    assert diag.policy is not None
    assert abs(diag.policy.active_ratio - 0.5) < 0.1


def test_random_baselines_replay_in_infer_mode(small_weights: ModelWeights) -> None:
    cfg = SMALL.replace(token_pruning="random", block_selection="random")
    images = images_for(cfg, 2, seed=6)
    train, recorded = model_forward(cfg, small_weights, images, "train", Rng(14))
    infer, _ = model_forward(cfg, small_weights, images, "infer", replay=recorded)
    np.testing.assert_allclose(infer, train, rtol=0, atol=1e-10)


def test_model_forward_needs_an_rng_to_train(small_weights: ModelWeights) -> None:
    with pytest.raises(ValueError, match="Rng"):
        model_forward(SMALL, small_weights, images_for(SMALL, 1), "train")


def test_only_infer_mode_replays(small_weights: ModelWeights) -> None:
    images = images_for(SMALL, 1)
    _, diag = model_forward(SMALL, small_weights, images, "infer")
    with pytest.raises(ValueError, match="replay"):
        model_forward(SMALL, small_weights, images, "train", Rng(0), replay=diag)


def test_forward_diagnostics_to_json(small_weights: ModelWeights) -> None:
    counter = OpCounter()
    _, diag = model_forward(
        SMALL, small_weights, images_for(SMALL, 2), "infer", counter=counter
    )
    report = diag.to_json()
    assert report["mode"] == "infer"
    assert report["stage_token_counts"] == [[11, 11], [7, 7]]
    assert len(report["policy"]["gates"]) == SMALL.n_layers
    assert report["ops"]["macs"] == counter.macs
    json.dumps(report)


def test_weight_archive_round_trip(small_weights: ModelWeights, tmp_path: Path) -> None:
    manifest = save_weights(SMALL, small_weights, tmp_path / "small")
    assert manifest == tmp_path / "small.json"
    assert (tmp_path / "small.bin").exists()

    cfg, weights = load_weights(tmp_path / "small.bin")
    assert cfg == SMALL
    for (name, want), (other, got) in zip(
        named_tensors(small_weights), named_tensors(weights)
    ):
        assert name == other
        np.testing.assert_array_equal(got, want)


def test_weight_archive_rejects_unknown_schema(
    small_weights: ModelWeights, tmp_path: Path
) -> None:
    manifest = save_weights(SMALL, small_weights, tmp_path / "w")
    data = json.loads(manifest.read_text())
    data["schema_version"] = 99
    manifest.write_text(json.dumps(data))
    with pytest.raises(WeightsArchiveError, match="schema"):
        load_weights(manifest)


def test_weight_archive_rejects_truncated_data(
    small_weights: ModelWeights, tmp_path: Path
) -> None:
    save_weights(SMALL, small_weights, tmp_path / "w")
    data = tmp_path / "w.bin"
    data.write_bytes(data.read_bytes()[:-8])
    with pytest.raises(WeightsArchiveError, match="truncated"):
        load_weights(tmp_path / "w")


def test_weight_archive_rejects_missing_tensors(
    small_weights: ModelWeights, tmp_path: Path
) -> None:
    manifest = save_weights(SMALL, small_weights, tmp_path / "w")
    data = json.loads(manifest.read_text())
    data["tensors"] = data["tensors"][1:]
    manifest.write_text(json.dumps(data))
    with pytest.raises(WeightsArchiveError, match="missing"):
        load_weights(manifest)


def test_weight_archive_rejects_invalid_json(tmp_path: Path) -> None:
    (tmp_path / "w.json").write_text("{not json")
    (tmp_path / "w.bin").write_bytes(b"")
    with pytest.raises(WeightsArchiveError, match="invalid"):
        load_weights(tmp_path / "w")


@dataclass
class Case:
    """Table driven test case helper."""

    name: str
    corrupt: Callable[[dict[str, Any]], Any]
    match: str


def drop_entry_field(key: str) -> Callable[[dict[str, Any]], Any]:
    def corrupt(data: dict[str, Any]) -> Any:
        del data["tensors"][0][key]
        return data

    return corrupt


def set_entry_field(key: str, value: Any) -> Callable[[dict[str, Any]], Any]:
    def corrupt(data: dict[str, Any]) -> Any:
        data["tensors"][0][key] = value
        return data

    return corrupt


def set_field(key: str, value: Any) -> Callable[[dict[str, Any]], Any]:
    def corrupt(data: dict[str, Any]) -> Any:
        data[key] = value
        return data

    return corrupt


MALFORMED_MANIFEST_CASES: list[Case] = [
    Case(
        name="missing offset",
        corrupt=drop_entry_field("offset"),
        match="missing field offset",
    ),
    Case(
        name="missing shape",
        corrupt=drop_entry_field("shape"),
        match="missing field shape",
    ),
    Case(
        name="missing name",
        corrupt=drop_entry_field("name"),
        match="missing field name",
    ),
    Case(
        name="negative offset",
        corrupt=set_entry_field("offset", -8),
        match="invalid offset -8",
    ),
    Case(
        name="fractional offset",
        corrupt=set_entry_field("offset", 1.5),
        match="invalid offset",
    ),
    Case(
        name="boolean offset",
        corrupt=set_entry_field("offset", True),
        match="invalid offset",
    ),
    Case(
        name="shape not a list",
        corrupt=set_entry_field("shape", 4),
        match="invalid shape",
    ),
    Case(
        name="negative dimension",
        corrupt=set_entry_field("shape", [4, -1]),
        match="invalid shape",
    ),
    Case(
        name="name not a string",
        corrupt=set_entry_field("name", 7),
        match="not a string",
    ),
    Case(
        name="entry not an object",
        corrupt=lambda data: {**data, "tensors": [3, *data["tensors"][1:]]},
        match="tensor entry is not an object",
    ),
    Case(
        name="tensors not a list",
        corrupt=set_field("tensors", {"patch_weight": 0}),
        match="tensors is not a list",
    ),
    Case(
        name="config not an object",
        corrupt=set_field("config", [1, 2]),
        match="config is not an object",
    ),
    Case(
        name="manifest not an object",
        corrupt=lambda _data: [1, 2],
        match="manifest is not a JSON object",
    ),
]


@pytest.mark.parametrize(
    "case", MALFORMED_MANIFEST_CASES, ids=operator.attrgetter("name")
)
def test_weight_archive_rejects_malformed_manifest(
    case: Case, small_weights: ModelWeights, tmp_path: Path
) -> None:
    manifest = save_weights(SMALL, small_weights, tmp_path / "w")
    manifest.write_text(json.dumps(case.corrupt(json.loads(manifest.read_text()))))
    with pytest.raises(WeightsArchiveError, match=case.match):
        load_weights(manifest)


def test_init_weights_is_reproducible() -> None:
    a = init_weights(SMALL, Rng(1))
    b = init_weights(SMALL, Rng(1))
    for (_, x), (_, y) in zip(named_tensors(a), named_tensors(b)):
        np.testing.assert_array_equal(x, y)
    assert len(a.predictors) == len(SMALL.prune_layers)
