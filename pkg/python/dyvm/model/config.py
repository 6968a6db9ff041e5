"""Model configuration, presets and JSON loading."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any
from typing import Callable
from typing import Mapping

from ..arguments import choice_arg
from ..arguments import int_arg
from ..arguments import int_list_arg
from ..arguments import num_arg
from ..arguments import ratio_arg
from ..exceptions import ConfigError
from ..utils import ReadOnlyChainMap

logger = logging.getLogger(__name__)

PREDICTOR_INPUTS = ("tokens", "delta", "b_bar", "c")
CLASS_POSITIONS = ("middle", "head")
TOKEN_PRUNING = ("learned", "random", "static")
BLOCK_SELECTION = ("learned", "random")

# Guards the floor in the stage schedule against ratios like 0.7**2 landing a
# hair under an integer.
_SCHEDULE_EPSILON = 1e-9


@dataclass(frozen=True, kw_only=True)
class ModelConfig:
    """Architecture and pruning hyper-parameters of a Vision Mamba model.

    Field names are also the keys of the JSON configuration document.
    """

    name: str = "custom"
    image_size: int = 32
    patch_size: int = 4
    in_channels: int = 3
    embed_dim: int = 64
    n_layers: int = 6
    n_state: int = 16
    expand: int = 2
    conv_width: int = 4
    dt_rank: int | None = None
    n_classes: int = 10
    class_position: str = "middle"
    prune_layers: tuple[int, ...] = (2, 4)
    token_ratio: float = 1.0
    block_ratio: float = 1.0
    predictor_hidden: tuple[int, ...] | None = None
    predictor_input: str = "tokens"
    gumbel_tau: float = 1.0
    gate_threshold: float = 0.5
    selector_bias: float = 10.0
    init_std: float = 0.02
    token_pruning: str = "learned"
    block_selection: str = "learned"

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:  # noqa: C901, PLR0912
        """Raise a `ConfigError` if this configuration is inconsistent."""
        for name in (
            "image_size",
            "patch_size",
            "in_channels",
            "embed_dim",
            "n_layers",
            "n_state",
            "expand",
            "conv_width",
            "n_classes",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image size {self.image_size} is not divisible by "
                f"patch size {self.patch_size}"
            )

        if self.dt_rank is not None and self.dt_rank < 1:
            raise ConfigError("dt_rank must be positive")

        if any(b <= a for a, b in zip(self.prune_layers, self.prune_layers[1:])):
            raise ConfigError(
                f"prune layers must be strictly increasing, found {self.prune_layers}"
            )

        if any(layer < 0 or layer >= self.n_layers for layer in self.prune_layers):
            raise ConfigError(
                f"prune layers must be in [0, {self.n_layers}), "
                f"found {self.prune_layers}"
            )

        if not 0 < self.token_ratio <= 1:
            raise ConfigError(
                f"token ratio must be in (0, 1], found {self.token_ratio}"
            )

        if not 0 <= self.block_ratio <= 1:
            raise ConfigError(
                f"block ratio must be in [0, 1], found {self.block_ratio}"
            )

        if self.predictor_input not in PREDICTOR_INPUTS:
            raise ConfigError(f"unknown predictor input {self.predictor_input!r}")

        if self.class_position not in CLASS_POSITIONS:
            raise ConfigError(f"unknown class position rule {self.class_position!r}")

        if self.token_pruning not in TOKEN_PRUNING:
            raise ConfigError(f"unknown token pruning strategy {self.token_pruning!r}")

        if self.block_selection not in BLOCK_SELECTION:
            raise ConfigError(
                f"unknown block selection strategy {self.block_selection!r}"
            )

        if self.gumbel_tau <= 0:
            raise ConfigError("gumbel_tau must be positive")

        if self.prunes_tokens and min(self.stage_token_counts) < 1:
            raise ConfigError(
                f"token ratio {self.token_ratio} leaves no tokens after "
                f"{len(self.prune_layers)} stages"
            )

    @property
    def n_patches(self) -> int:
        """The number of image patches, P."""
        return (self.image_size // self.patch_size) ** 2

    @property
    def seq_len(self) -> int:
        """The full sequence length, patches plus the class token."""
        return self.n_patches + 1

    @property
    def inner_dim(self) -> int:
        """The width of each direction's SSM branch, `expand * D`."""
        return self.expand * self.embed_dim

    @property
    def resolved_dt_rank(self) -> int:
        """The rank of the Δ projection, `ceil(D / 16)` unless set."""
        if self.dt_rank is not None:
            return self.dt_rank
        return math.ceil(self.embed_dim / 16)

    @property
    def resolved_predictor_hidden(self) -> tuple[int, ...]:
        """Hidden layer widths of the pruning predictor."""
        if self.predictor_hidden is not None:
            return self.predictor_hidden
        return (max(self.embed_dim // 2, 2),)

    @property
    def prunes_tokens(self) -> bool:
        """True if token pruning is enabled."""
        return self.token_ratio < 1 and bool(self.prune_layers)

    @property
    def selects_blocks(self) -> bool:
        """True if dynamic block selection is enabled."""
        return self.block_ratio < 1

    @property
    def needs_rng(self) -> bool:
        """True if inference draws random masks or gates."""
        random_tokens = self.prunes_tokens and self.token_pruning == "random"
        random_blocks = self.selects_blocks and self.block_selection == "random"
        return random_tokens or random_blocks

    @property
    def stage_ratios(self) -> tuple[float, ...]:
        """Target keep ratios `ρ^s` for stages `s = 1..S`."""
        return tuple(self.token_ratio ** (s + 1) for s in range(len(self.prune_layers)))

    @property
    def stage_token_counts(self) -> tuple[int, ...]:
        """Retained non-class tokens after each stage, `floor(ρ^s * P)`."""
        return tuple(stage_keep_count(r, self.n_patches) for r in self.stage_ratios)

    def class_index(self, n_tokens: int) -> int:
        """Return the class token index within a block of _n_tokens_ other tokens."""
        if self.class_position == "head":
            return 0
        return n_tokens // 2

    def stage_at(self, layer: int) -> int:
        """Return the number of pruning stages applied before _layer_ runs."""
        if not self.prunes_tokens:
            return 0
        return sum(1 for p in self.prune_layers if p <= layer)

    def replace(self, **changes: Any) -> ModelConfig:
        """Return a copy of this configuration with _changes_ applied."""
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        """Return this configuration as a JSON compatible dict."""
        data = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        data["prune_layers"] = list(self.prune_layers)
        if self.predictor_hidden is not None:
            data["predictor_hidden"] = list(self.predictor_hidden)
        return data


def stage_keep_count(ratio: float, n_tokens: int) -> int:
    """Return `floor(ratio * n_tokens)`."""
    return math.floor(ratio * n_tokens + _SCHEDULE_EPSILON)


def _optional(coerce: Callable[[Any], Any]) -> Callable[[Any], Any]:
    return lambda val: None if val is None else coerce(val)


_COERCE: dict[str, Callable[[Any], Any]] = {
    "name": str,
    "image_size": lambda v: int_arg(v, name="image_size", minimum=1),
    "patch_size": lambda v: int_arg(v, name="patch_size", minimum=1),
    "in_channels": lambda v: int_arg(v, name="in_channels", minimum=1),
    "embed_dim": lambda v: int_arg(v, name="embed_dim", minimum=1),
    "n_layers": lambda v: int_arg(v, name="n_layers", minimum=1),
    "n_state": lambda v: int_arg(v, name="n_state", minimum=1),
    "expand": lambda v: int_arg(v, name="expand", minimum=1),
    "conv_width": lambda v: int_arg(v, name="conv_width", minimum=1),
    "dt_rank": _optional(lambda v: int_arg(v, name="dt_rank", minimum=1)),
    "n_classes": lambda v: int_arg(v, name="n_classes", minimum=1),
    "class_position": lambda v: choice_arg(
        v, name="class_position", choices=CLASS_POSITIONS
    ),
    "prune_layers": lambda v: int_list_arg(v, name="prune_layers"),
    "token_ratio": lambda v: ratio_arg(v, name="token_ratio"),
    "block_ratio": lambda v: ratio_arg(v, name="block_ratio", allow_zero=True),
    "predictor_hidden": _optional(lambda v: int_list_arg(v, name="predictor_hidden")),
    "predictor_input": lambda v: choice_arg(
        v, name="predictor_input", choices=PREDICTOR_INPUTS
    ),
    "gumbel_tau": lambda v: num_arg(v, name="gumbel_tau"),
    "gate_threshold": lambda v: ratio_arg(v, name="gate_threshold"),
    "selector_bias": lambda v: num_arg(v, name="selector_bias"),
    "init_std": lambda v: num_arg(v, name="init_std"),
    "token_pruning": lambda v: choice_arg(
        v, name="token_pruning", choices=TOKEN_PRUNING
    ),
    "block_selection": lambda v: choice_arg(
        v, name="block_selection", choices=BLOCK_SELECTION
    ),
}


def config_from_mapping(data: Mapping[str, Any]) -> ModelConfig:
    """Return a `ModelConfig` built from _data_.

    Raises:
        ConfigError: If _data_ contains unknown fields or invalid values.
    """
    unknown = sorted(set(data) - set(_COERCE))
    if unknown:
        raise ConfigError(f"unknown configuration fields: {', '.join(unknown)}")

    return ModelConfig(**{key: _COERCE[key](val) for key, val in data.items()})


def load_config(path: str | Path) -> dict[str, Any]:
    """Read a JSON configuration document and return its raw fields.

    Raises:
        ConfigError: If the file is not a JSON object.
    """
    try:
        with Path(path).open(encoding="utf-8") as fd:
            data = json.load(fd)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON: {err}") from err

    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")

    return data


def resolve_config(
    preset: ModelConfig,
    *,
    file_fields: Mapping[str, Any] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> ModelConfig:
    """Layer command line _overrides_ over _file_fields_ over _preset_."""
    layers = ReadOnlyChainMap(preset.to_dict())
    if file_fields:
        layers.push(file_fields)
    if overrides:
        layers.push({k: v for k, v in overrides.items() if v is not None})

    resolved = layers.flatten()
    logger.debug(
        "resolved configuration %s from %d layers", resolved.get("name"), layers.size()
    )
    return config_from_mapping(resolved)


def _vim_preset(
    name: str, embed_dim: int, token_ratio: float, block_ratio: float
) -> ModelConfig:
    return ModelConfig(
        name=name,
        image_size=224,
        patch_size=16,
        embed_dim=embed_dim,
        n_layers=24,
        n_state=16,
        expand=2,
        conv_width=4,
        n_classes=1000,
        prune_layers=(6, 12, 18),
        token_ratio=token_ratio,
        block_ratio=block_ratio,
        predictor_hidden=(embed_dim, embed_dim // 2, embed_dim // 4),
    )


PRESETS: dict[str, ModelConfig] = {
    "vim-t": _vim_preset("vim-t", 192, 0.9, 0.8),
    "vim-s": _vim_preset("vim-s", 384, 0.7, 0.8),
    "vim-b": _vim_preset("vim-b", 768, 0.7, 0.7),
    "desk": ModelConfig(
        name="desk",
        image_size=32,
        patch_size=4,
        embed_dim=64,
        n_layers=6,
        n_state=16,
        expand=2,
        conv_width=4,
        n_classes=10,
        prune_layers=(2, 4),
        token_ratio=0.7,
        block_ratio=0.8,
    ),
}
"""Named configurations. The Vim presets carry their published DyVM ratios."""
