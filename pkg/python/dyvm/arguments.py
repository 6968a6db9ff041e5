"""Coercion helpers for configuration values read from JSON or the command line."""

from __future__ import annotations

from typing import Any
from typing import Sequence

from .exceptions import ConfigError


def int_arg(val: Any, *, name: str, minimum: int | None = None) -> int:
    """Return _val_ as an int, raising a `ConfigError` if it can't be cast."""
    if isinstance(val, bool):
        raise ConfigError(f"{name}: expected an int, found bool")

    if isinstance(val, float):
        if not val.is_integer():
            raise ConfigError(f"{name}: expected an int, found {val!r}")
        val = int(val)

    try:
        rv = int(val)
    except (TypeError, ValueError) as err:
        raise ConfigError(
            f"{name}: expected an int, found {type(val).__name__}"
        ) from err

    if minimum is not None and rv < minimum:
        raise ConfigError(f"{name}: must be at least {minimum}, found {rv}")

    return rv


def num_arg(val: Any, *, name: str) -> float:
    """Return _val_ as a float, raising a `ConfigError` if it can't be cast."""
    if isinstance(val, bool):
        raise ConfigError(f"{name}: expected a number, found bool")

    try:
        return float(val)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{name}: could not cast {val!r} to a number") from err


def ratio_arg(val: Any, *, name: str, allow_zero: bool = False) -> float:
    """Return _val_ as a ratio in `(0, 1]`, or `[0, 1]` if _allow_zero_ is true."""
    ratio = num_arg(val, name=name)
    low_ok = ratio >= 0 if allow_zero else ratio > 0

    if not (low_ok and ratio <= 1):
        interval = "[0, 1]" if allow_zero else "(0, 1]"
        raise ConfigError(f"{name}: ratio must be in {interval}, found {ratio}")

    return ratio


def _split(val: Any) -> Sequence[Any]:
    if isinstance(val, str):
        return [item for item in val.replace(",", " ").split() if item]
    if isinstance(val, (list, tuple)):
        return val
    raise ConfigError(f"expected a list, found {type(val).__name__}")


def int_list_arg(val: Any, *, name: str) -> tuple[int, ...]:
    """Return _val_, a list or comma separated string, as a tuple of ints."""
    return tuple(int_arg(item, name=name) for item in _split(val))


def ratio_list_arg(
    val: Any, *, name: str, allow_zero: bool = False
) -> tuple[float, ...]:
    """Return _val_, a list or comma separated string, as a tuple of ratios."""
    ratios = tuple(
        ratio_arg(item, name=name, allow_zero=allow_zero) for item in _split(val)
    )
    if not ratios:
        raise ConfigError(f"{name}: expected at least one ratio")
    return ratios


def choice_arg(val: Any, *, name: str, choices: Sequence[str]) -> str:
    """Return _val_ if it is one of _choices_."""
    if not isinstance(val, str) or val not in choices:
        raise ConfigError(
            f"{name}: expected one of {', '.join(choices)}, found {val!r}"
        )
    return val
