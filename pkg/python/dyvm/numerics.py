"""Dense tensor arithmetic, seeded randomness and finite differences.

Every other module builds on the helpers defined here. A `Tensor` is a plain
row-major NumPy array, double precision unless a caller opts in to single
precision.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from dataclasses import field
from typing import Callable
from typing import Sequence
from typing import TypeAlias

import numpy as np
import numpy.typing as npt
from scipy.special import erf

from .exceptions import NonFiniteError
from .exceptions import ShapeError

logger = logging.getLogger(__name__)

Tensor: TypeAlias = npt.NDArray[np.float64]
"""A dense, row-major, real valued array."""

Shape: TypeAlias = Sequence[int]

DEFAULT_DTYPE = np.float64

# Uniform draws are clamped to [UNIFORM_CLAMP, 1 - UNIFORM_CLAMP] before the
# Gumbel transform so that -log(-log(u)) stays finite.
UNIFORM_CLAMP = 1e-12


class Rng:
    """A seeded, single-owner random number generator.

    Two instances created with the same seed produce bit-identical draw
    sequences on every platform NumPy supports. An `Rng` must not be shared
    between concurrent callers.

    Args:
        seed: An unsigned 64-bit integer.
    """

    __slots__ = ("seed", "_generator", "draws")

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self._generator = np.random.Generator(np.random.PCG64(seed))
        self.draws = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, draws={self.draws})"

    def uniform(self, shape: Shape) -> Tensor:
        """Return uniform samples from [0, 1)."""
        out = self._generator.random(tuple(shape), dtype=np.float64)
        self.draws += out.size
        return out

    def normal(self, shape: Shape, *, std: float = 1.0, mean: float = 0.0) -> Tensor:
        """Return Gaussian samples."""
        out = self._generator.normal(loc=mean, scale=std, size=tuple(shape))
        self.draws += out.size
        return out.astype(np.float64, copy=False)

    def integers(self, low: int, high: int, shape: Shape) -> npt.NDArray[np.int64]:
        """Return integers drawn uniformly from [low, high)."""
        out = self._generator.integers(low, high, size=tuple(shape), dtype=np.int64)
        self.draws += out.size
        return out

    def permutation(self, n: int) -> npt.NDArray[np.int64]:
        """Return a random permutation of `range(n)`."""
        self.draws += n
        return self._generator.permutation(n).astype(np.int64)

    def spawn(self, key: int) -> Rng:
        """Return an independent generator derived from this one's seed and _key_."""
        return Rng(hash_seed(self.seed, key))


def hash_seed(seed: int, key: int) -> int:
    """Derive a child seed from _seed_ and _key_ deterministically."""
    sequence = np.random.SeedSequence([seed, key])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


@dataclass
class OpCounter:
    """Multiply-accumulate and elementwise operation tallies.

    An `OpCounter` is threaded through the instrumented forward pass. Counts
    are broken down by tag so they can be compared with the analytic FLOPs
    model term by term.
    """

    macs: int = 0
    elementwise: int = 0
    by_tag: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    routed: list[tuple[str, int, int]] = field(default_factory=list)

    def add_macs(self, count: int, tag: str = "other") -> None:
        """Record _count_ multiply-accumulates under _tag_."""
        self.macs += int(count)
        self.by_tag[tag] += int(count)

    def add_elementwise(self, count: int) -> None:
        """Record _count_ elementwise operations."""
        self.elementwise += int(count)

    def record_route(self, name: str, active: int, total: int) -> None:
        """Record that block _name_ ran on _active_ of _total_ batch rows."""
        self.routed.append((name, active, total))


def as_tensor(value: object, dtype: npt.DTypeLike = DEFAULT_DTYPE) -> Tensor:
    """Return _value_ as a contiguous tensor."""
    return np.ascontiguousarray(value, dtype=dtype)


def check_finite(x: Tensor, what: str = "tensor") -> Tensor:
    """Raise a `NonFiniteError` if _x_ contains NaN or infinity."""
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains non-finite values")
    return x


def matmul(a: Tensor, b: Tensor, *, counter: OpCounter | None = None) -> Tensor:
    """Return the matrix product of 2-D tensors _a_ and _b_."""
    if a.ndim != 2 or b.ndim != 2:  # noqa: PLR2004
        raise ShapeError(
            f"matmul expects 2-D operands, found {a.ndim}-D and {b.ndim}-D",
            operation="matmul",
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"inner dimensions differ: {a.shape} and {b.shape}",
            operation="matmul",
        )
    if counter is not None:
        counter.add_macs(a.shape[0] * a.shape[1] * b.shape[1], "matmul")
    return a @ b


def linear(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    *,
    counter: OpCounter | None = None,
    tag: str = "linear",
) -> Tensor:
    """Apply `x @ weight + bias` over the last axis of _x_."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"can't project {x.shape} with a {weight.shape} weight",
            operation="linear",
        )
    out = x @ weight
    if counter is not None:
        rows = math.prod(x.shape[:-1])
        counter.add_macs(rows * weight.shape[0] * weight.shape[1], tag)
    if bias is not None:
        out = out + bias
        if counter is not None:
            counter.add_elementwise(out.size)
    return out


def finite_diff_grad(
    f: Callable[[Tensor], float],
    x: Tensor,
    eps: float = 1e-5,
) -> Tensor:
    """Return the central-difference gradient of scalar function _f_ at _x_.

    Args:
        f: A scalar function of a tensor. It must not keep a reference to its
            argument.
        x: The point at which to differentiate.
        eps: The step size. Must be positive.

    Raises:
        NonFiniteError: If `f` evaluates to NaN or infinity near `x`.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, found {eps}")

    point = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(point)
    flat = point.reshape(-1)

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f(point.copy()))
        flat[i] = orig - eps
        f_minus = float(f(point.copy()))
        flat[i] = orig

        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NonFiniteError(
                f"non-finite evaluation at flat index {i}",
                operation="finite_diff_grad",
            )

        grad.flat[i] = (f_plus - f_minus) / (2.0 * eps)

    return grad


def gumbel_sample(rng: Rng, shape: Shape, clamp: float = UNIFORM_CLAMP) -> Tensor:
    """Return i.i.d. standard Gumbel samples `-log(-log(u))`."""
    u = np.clip(rng.uniform(shape), clamp, 1.0 - clamp)
    return -np.log(-np.log(u))


def relative_error(analytic: Tensor, numeric: Tensor, floor: float = 1e-8) -> float:
    """Return `max|a - n| / max(max|a|, max|n|, floor)`."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), floor)
    scale = max(scale, float(np.max(np.abs(numeric), initial=0.0)))
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Return the softmax of _x_ along _axis_."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Return the log-softmax of _x_ along _axis_ using log-sum-exp."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def sigmoid(x: Tensor) -> Tensor:
    """Return the logistic function of _x_."""
    out: Tensor = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: Tensor) -> Tensor:
    """Return `x * sigmoid(x)`."""
    return x * sigmoid(x)


def softplus(x: Tensor) -> Tensor:
    """Return `log(1 + exp(x))` without overflow."""
    return np.logaddexp(0.0, x)


def softplus_inverse(y: Tensor) -> Tensor:
    """Return `x` such that `softplus(x) == y`, for positive _y_."""
    return y + np.log(-np.expm1(-y))


def gelu(x: Tensor) -> Tensor:
    """Return the exact (erf based) GELU of _x_."""
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def rms_norm(x: Tensor, weight: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis of _x_ by its root mean square, then scale."""
    scale = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x * scale * weight
