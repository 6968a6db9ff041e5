"""Model parameters, seeded initialization and the weight archive format.

An archive is two files sharing a stem: `<stem>.bin` holds every tensor as
little-endian float64, back to back, and `<stem>.json` is a manifest mapping
each tensor name to its shape and byte offset.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any
from typing import Iterator

import numpy as np

from ..exceptions import WeightsArchiveError
from ..numerics import Rng
from ..numerics import Tensor
from ..pruning import PredictorWeights
from .config import ModelConfig
from .config import config_from_mapping
from .layer import VimLayer

logger = logging.getLogger(__name__)

ARCHIVE_SCHEMA_VERSION = 1
_ARCHIVE_DTYPE = np.dtype("<f8")


@dataclass(frozen=True, kw_only=True)
class ModelWeights:
    """Every parameter of a Vision Mamba model with pruning predictors."""

    patch_weight: Tensor
    patch_bias: Tensor
    pos_embed: Tensor
    class_token: Tensor
    layers: tuple[VimLayer, ...]
    predictors: tuple[PredictorWeights, ...]
    final_norm: Tensor
    head_weight: Tensor
    head_bias: Tensor


def predictor_in_dim(cfg: ModelConfig) -> int:
    """Return the width of predictor input features for _cfg_."""
    if cfg.predictor_input == "tokens":
        return cfg.embed_dim
    if cfg.predictor_input == "delta":
        return cfg.inner_dim
    return cfg.n_state


def init_weights(cfg: ModelConfig, rng: Rng) -> ModelWeights:
    """Return seeded initial weights for _cfg_.

    Projections are Gaussian with standard deviation `cfg.init_std`, Δ
    biases are the inverse softplus of uniform timescales in [1e-3, 0.1] and
    selector biases start at `cfg.selector_bias` so every block starts on.
    """
    D = cfg.embed_dim
    patch_dim = cfg.in_channels * cfg.patch_size**2
    std = cfg.init_std

    weights = ModelWeights(
        patch_weight=rng.normal((patch_dim, D), std=std),
        patch_bias=np.zeros(D),
        pos_embed=rng.normal((cfg.n_patches, D), std=std),
        class_token=rng.normal((D,), std=std),
        layers=tuple(VimLayer.init(rng, cfg) for _ in range(cfg.n_layers)),
        predictors=tuple(
            PredictorWeights.init(
                rng,
                predictor_in_dim(cfg),
                cfg.resolved_predictor_hidden,
                std=std,
            )
            for _ in cfg.prune_layers
        ),
        final_norm=np.ones(D),
        head_weight=rng.normal((D, cfg.n_classes), std=std),
        head_bias=np.zeros(cfg.n_classes),
    )

    logger.debug("initialized %s weights from seed %d", cfg.name, rng.seed)
    return weights


def named_tensors(obj: Any, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield `(name, tensor)` for every tensor reachable from _obj_, in order."""
    if isinstance(obj, np.ndarray):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_tensors(getattr(obj, f.name), _join(prefix, f.name))
    elif isinstance(obj, (tuple, list)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, _join(prefix, str(i)))
    else:
        raise WeightsArchiveError(f"can't serialize {type(obj).__name__} at {prefix!r}")


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def _rebuild(template: Any, tensors: dict[str, Tensor], prefix: str = "") -> Any:
    if isinstance(template, np.ndarray):
        try:
            value = tensors.pop(prefix)
        except KeyError as err:
            raise WeightsArchiveError(f"archive is missing {prefix!r}") from err
        if value.shape != template.shape:
            raise WeightsArchiveError(
                f"{prefix}: expected shape {template.shape}, found {value.shape}"
            )
        return value

    if dataclasses.is_dataclass(template):
        return dataclasses.replace(
            template,  # type: ignore[type-var]
            **{
                f.name: _rebuild(
                    getattr(template, f.name), tensors, _join(prefix, f.name)
                )
                for f in dataclasses.fields(template)
            },
        )

    return tuple(
        _rebuild(item, tensors, _join(prefix, str(i)))
        for i, item in enumerate(template)
    )


def _archive_paths(path: str | Path) -> tuple[Path, Path]:
    stem = Path(path)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_weights(cfg: ModelConfig, weights: ModelWeights, path: str | Path) -> Path:
    """Write _weights_ and _cfg_ to an archive and return the manifest path."""
    manifest_path, data_path = _archive_paths(path)
    entries = []
    offset = 0

    with data_path.open("wb") as fd:
        for name, tensor in named_tensors(weights):
            data = np.ascontiguousarray(tensor, dtype=_ARCHIVE_DTYPE)
            fd.write(data.tobytes())
            entries.append({"name": name, "shape": list(data.shape), "offset": offset})
            offset += data.nbytes

    manifest = {
        "schema_version": ARCHIVE_SCHEMA_VERSION,
        "dtype": "float64",
        "byte_order": "little",
        "total_bytes": offset,
        "config": cfg.to_dict(),
        "tensors": entries,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    logger.info("wrote %d tensors to %s", len(entries), data_path)
    return manifest_path


def _entry_layout(entry: object, where: Path) -> tuple[str, tuple[int, ...], int]:
    """Return the name, shape and byte offset of a manifest tensor entry."""
    if not isinstance(entry, dict):
        raise WeightsArchiveError(f"{where}: tensor entry is not an object")

    missing = [key for key in ("name", "shape", "offset") if key not in entry]
    if missing:
        raise WeightsArchiveError(
            f"{where}: tensor entry missing field {', '.join(missing)}"
        )

    name, shape, offset = entry["name"], entry["shape"], entry["offset"]
    if not isinstance(name, str):
        raise WeightsArchiveError(f"{where}: tensor name {name!r} is not a string")
    if not isinstance(shape, list) or not all(_is_count(n) for n in shape):
        raise WeightsArchiveError(f"{where}: invalid shape {shape!r} for {name!r}")
    if not _is_count(offset):
        raise WeightsArchiveError(f"{where}: invalid offset {offset!r} for {name!r}")

    return name, tuple(shape), offset


def _is_count(value: object) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


def load_weights(path: str | Path) -> tuple[ModelConfig, ModelWeights]:
    """Read an archive written by `save_weights`.

    Raises:
        WeightsArchiveError: If the manifest is malformed, the data file is
            truncated, or tensors are missing, extra or misshapen.
    """
    manifest_path, data_path = _archive_paths(path)

    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise WeightsArchiveError(f"{manifest_path}: invalid manifest: {err}") from err

    if not isinstance(manifest, dict):
        raise WeightsArchiveError(f"{manifest_path}: manifest is not a JSON object")

    if manifest.get("schema_version") != ARCHIVE_SCHEMA_VERSION:
        raise WeightsArchiveError(
            f"{manifest_path}: unsupported schema version "
            f"{manifest.get('schema_version')!r}"
        )

    try:
        fields = manifest["config"]
        entries = manifest["tensors"]
    except KeyError as err:
        raise WeightsArchiveError(f"{manifest_path}: missing field {err}") from err

    if not isinstance(fields, dict):
        raise WeightsArchiveError(f"{manifest_path}: config is not an object")
    cfg = config_from_mapping(fields)

    if not isinstance(entries, list):
        raise WeightsArchiveError(f"{manifest_path}: tensors is not a list")

    raw = data_path.read_bytes()
    tensors: dict[str, Tensor] = {}

    for entry in entries:
        name, shape, start = _entry_layout(entry, manifest_path)
        count = int(np.prod(shape, dtype=np.int64))
        stop = start + count * _ARCHIVE_DTYPE.itemsize

        if stop > len(raw):
            raise WeightsArchiveError(f"{data_path}: truncated at {name!r}")

        tensors[name] = (
            np.frombuffer(raw[start:stop], dtype=_ARCHIVE_DTYPE)
            .astype(np.float64)
            .reshape(shape)
        )

    template = init_weights(cfg, Rng(0))
    weights = _rebuild(template, tensors)

    if tensors:
        raise WeightsArchiveError(
            f"{manifest_path}: unexpected tensors {', '.join(sorted(tensors))}"
        )

    return cfg, weights
