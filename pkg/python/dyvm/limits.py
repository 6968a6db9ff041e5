"""System wide limits."""

import os
from typing import Any

from .exceptions import ConfigError

_DEFAULT_MAX_DENSE_STATE = 8
_DEFAULT_MAX_SEQUENCE_LENGTH = 4096
_MAX_SEED = 2**64 - 1


def _init_limit(var: str, default: int, minimum: int) -> int:
    env = os.environ.get(var)

    if env is None:
        return default

    if not env.isdigit():
        raise TypeError(f"{var}: invalid limit; must be an integer >= {minimum}")

    limit = int(env)

    if limit >= minimum:
        return limit

    raise ValueError(f"{var}: invalid limit; must be >= {minimum}")


# Largest state size accepted for a dense evolution matrix. Dense A is a lab
# feature; the diagonal form is what the model uses.
MAX_DENSE_STATE = _init_limit("DYVM_MAX_DENSE_STATE", _DEFAULT_MAX_DENSE_STATE, 1)

# Longest sequence a single scan will accept.
MAX_SEQUENCE_LENGTH = _init_limit(
    "DYVM_MAX_SEQUENCE_LENGTH", _DEFAULT_MAX_SEQUENCE_LENGTH, 1
)


def to_seed(val: Any) -> int:
    """Return _val_ as an unsigned 64-bit seed."""
    try:
        seed = int(val)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"expected an integer seed, found {val!r}") from err

    if seed < 0 or seed > _MAX_SEED:
        raise ConfigError(f"seed out of range: {seed} is not an unsigned 64-bit value")

    return seed
