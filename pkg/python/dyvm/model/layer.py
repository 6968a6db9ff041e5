"""A bidirectional Vision Mamba layer.

Each layer normalizes its input, projects it to an SSM branch `x` and a gate
branch `z`, and runs two blocks over `x`: a forward block over the sequence
and a backward block over its reverse. A block is a 1-D causal convolution
followed by a selective scan, gated by `SiLU(z)`. Block outputs are masked by
the layer's gates after the block, summed, projected back to the embedding
width and added to the residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from ..block_select import BACKWARD
from ..block_select import FORWARD
from ..block_select import SelectorWeights
from ..block_select import route_infer
from ..exceptions import ShapeError
from ..numerics import OpCounter
from ..numerics import Rng
from ..numerics import Tensor
from ..numerics import linear
from ..numerics import rms_norm
from ..numerics import silu
from ..numerics import softplus
from ..numerics import softplus_inverse
from ..ssm import SsmParams
from ..ssm import discretize
from ..ssm import scan_recurrent
from .config import ModelConfig

Mode = Literal["train", "infer"]

_DT_MIN = 1e-3
_DT_MAX = 0.1


@dataclass(frozen=True, kw_only=True)
class DirectionWeights:
    """Parameters of one scan direction.

    Attributes:
        conv_weight: Causal convolution taps, `(E, K)`. Tap `K - 1` multiplies
            the current timestep.
        conv_bias: `(E,)`.
        x_proj: Projects the branch to `(dt_low, B, C)`, `(E, R + 2N)`.
        dt_proj: Expands `dt_low` to one timescale per channel, `(R, E)`.
        dt_bias: `(E,)`.
        a_log: `A = -exp(a_log)`, `(E, N)`.
        d_skip: Skip connection around the scan, `(E,)`.
    """

    conv_weight: Tensor
    conv_bias: Tensor
    x_proj: Tensor
    dt_proj: Tensor
    dt_bias: Tensor
    a_log: Tensor
    d_skip: Tensor

    @staticmethod
    def init(rng: Rng, cfg: ModelConfig) -> DirectionWeights:
        """Return Mamba style initial parameters for one direction."""
        E = cfg.inner_dim
        N = cfg.n_state
        R = cfg.resolved_dt_rank
        std = cfg.init_std
        dt = _DT_MIN + (_DT_MAX - _DT_MIN) * rng.uniform((E,))

        return DirectionWeights(
            conv_weight=rng.normal((E, cfg.conv_width), std=std),
            conv_bias=np.zeros(E),
            x_proj=rng.normal((E, R + 2 * N), std=std),
            dt_proj=rng.normal((R, E), std=std),
            dt_bias=softplus_inverse(dt),
            a_log=np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (E, 1))),
            d_skip=np.ones(E),
        )

    @property
    def n_state(self) -> int:
        """The number of states per channel."""
        return int(self.a_log.shape[1])

    @property
    def dt_rank(self) -> int:
        """The rank of the Δ projection."""
        return int(self.dt_proj.shape[0])


@dataclass(frozen=True, kw_only=True)
class VimLayer:
    """Parameters of one bidirectional layer."""

    norm: Tensor
    in_proj: Tensor
    out_proj: Tensor
    forward: DirectionWeights
    backward: DirectionWeights
    selector: SelectorWeights

    @staticmethod
    def init(rng: Rng, cfg: ModelConfig) -> VimLayer:
        """Return freshly initialized layer parameters."""
        D = cfg.embed_dim
        E = cfg.inner_dim
        return VimLayer(
            norm=np.ones(D),
            in_proj=rng.normal((D, 2 * E), std=cfg.init_std),
            out_proj=rng.normal((E, D), std=cfg.init_std),
            forward=DirectionWeights.init(rng, cfg),
            backward=DirectionWeights.init(rng, cfg),
            selector=SelectorWeights.init(
                rng, D, std=cfg.init_std, bias=cfg.selector_bias
            ),
        )

    @property
    def inner_dim(self) -> int:
        """The width of the SSM branch."""
        return int(self.out_proj.shape[0])


@dataclass(frozen=True, kw_only=True)
class Selection:
    """Input dependent SSM parameters of one direction, batch first.

    Attributes:
        delta: Timescales, `(B, L, E)`.
        b: Input projections, `(B, L, N)`, shared by every channel.
        c: Output projections, `(B, L, N)`, shared by every channel.
    """

    delta: Tensor
    b: Tensor
    c: Tensor


def causal_conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    *,
    counter: OpCounter | None = None,
) -> Tensor:
    """Return the depthwise causal convolution of _x_, `(B, L, E)`.

    `y_t = bias + Σ_k weight[:, k] * x_{t - K + 1 + k}`, with zeros before the
    start of the sequence.
    """
    B, L, E = x.shape
    K = weight.shape[1]
    padded = np.pad(x, ((0, 0), (K - 1, 0), (0, 0)))
    out = np.broadcast_to(bias, x.shape).copy()

    for k in range(K):
        out += padded[:, k : k + L, :] * weight[:, k]

    if counter is not None:
        counter.add_macs(B * L * E * K, "conv")

    return out


def select_parameters(
    direction: DirectionWeights,
    x: Tensor,
    *,
    counter: OpCounter | None = None,
) -> Selection:
    """Compute Δ, B and C from the direction ordered branch _x_, `(B, L, E)`."""
    R = direction.dt_rank
    N = direction.n_state
    dbc = linear(x, direction.x_proj, counter=counter, tag="x_proj")
    dt_low = dbc[..., :R]
    delta = softplus(
        linear(dt_low, direction.dt_proj, counter=counter, tag="dt_proj")
        + direction.dt_bias
    )
    return Selection(delta=delta, b=dbc[..., R : R + N], c=dbc[..., R + N :])


def selective_scan(
    direction: DirectionWeights,
    u: Tensor,
    selection: Selection,
    *,
    counter: OpCounter | None = None,
) -> Tensor:
    """Scan every row of _u_, `(B, L, E)`, with its own selective parameters."""
    B, L, E = u.shape
    a = -np.exp(direction.a_log)
    out = np.empty_like(u)

    for row in range(B):
        b = np.broadcast_to(selection.b[row][:, None, :], (L, E, a.shape[1]))
        c = np.broadcast_to(selection.c[row][:, None, :], (L, E, a.shape[1]))
        params = SsmParams.diagonal(a, b, c, selection.delta[row])
        out[row] = scan_recurrent(discretize(params), params.C, u[row], counter=counter)

    return out


def pack_block_inputs(
    x: Tensor, z: Tensor, selection: Selection, keep: Tensor
) -> Tensor:
    """Concatenate a block's per-row inputs along the last axis."""
    return np.concatenate(
        [x, z, selection.delta, selection.b, selection.c, keep[..., None]], axis=-1
    )


def run_block(
    direction: DirectionWeights,
    packed: Tensor,
    *,
    counter: OpCounter | None = None,
) -> Tensor:
    """Run one gated block on packed inputs and return `(B, L, E)`.

    Pruned positions (keep = 0) contribute nothing to the convolution or the
    scan, so retained positions see exactly what they would if the pruned
    positions were absent.
    """
    E = direction.conv_bias.shape[0]
    N = direction.n_state
    x = packed[..., :E]
    z = packed[..., E : 2 * E]
    selection = Selection(
        delta=packed[..., 2 * E : 3 * E],
        b=packed[..., 3 * E : 3 * E + N],
        c=packed[..., 3 * E + N : 3 * E + 2 * N],
    )
    keep = packed[..., -1:]

    u = silu(
        causal_conv1d(
            x * keep, direction.conv_weight, direction.conv_bias, counter=counter
        )
    )
    u = u * keep
    y = selective_scan(direction, u, selection, counter=counter) + direction.d_skip * u
    return y * silu(z)


def branch_inputs(
    layer: VimLayer,
    h: Tensor,
    *,
    counter: OpCounter | None = None,
) -> tuple[Tensor, Tensor]:
    """Return the SSM branch `x` and gate branch `z` of _h_, `(B, L, D)`."""
    xz = linear(rms_norm(h, layer.norm), layer.in_proj, counter=counter, tag="in_proj")
    E = layer.inner_dim
    return xz[..., :E], xz[..., E:]


def layer_forward(
    layer: VimLayer,
    h: Tensor,
    gates: Tensor | None = None,
    *,
    keep: Tensor | None = None,
    mode: Mode = "train",
    counter: OpCounter | None = None,
    name: str = "layer",
) -> Tensor:
    """Apply one bidirectional layer to _h_, `(B, L, D)`.

    Args:
        layer: The layer's parameters.
        h: The (possibly rearranged) sequence.
        gates: Binary block gates, `(B, 2)`. `None` runs both blocks for every
            sample.
        keep: Retention mask in the sequence's current order, `(B, L)`. Used
            in train mode, where pruned tokens stay in the sequence.
        mode: In `"train"` mode every block runs on the full batch and its
            output is multiplied by the gate. In `"infer"` mode each block
            only runs on gated-on rows.
        counter: Optional operation counter.
        name: Names this layer in the counter's routing log.

    Returns:
        `h + out_proj(O_f + O_b)`.
    """
    if h.ndim != 3 or h.shape[-1] != layer.norm.shape[0]:  # noqa: PLR2004
        raise ShapeError(
            f"expected (B, L, {layer.norm.shape[0]}) input, found {h.shape}",
            operation="layer_forward",
        )

    batch = h.shape[0]
    if gates is not None and gates.shape != (batch, 2):
        raise ShapeError(
            f"expected ({batch}, 2) gates, found {gates.shape}",
            operation="layer_forward",
        )

    keep = np.ones(h.shape[:2]) if keep is None else keep
    x, z = branch_inputs(layer, h, counter=counter)

    outputs = []
    for index, direction in ((FORWARD, layer.forward), (BACKWARD, layer.backward)):
        reverse = index == BACKWARD
        x_dir = x[:, ::-1] if reverse else x
        z_dir = z[:, ::-1] if reverse else z
        keep_dir = keep[:, ::-1] if reverse else keep

        selection = select_parameters(direction, x_dir, counter=counter)
        packed = pack_block_inputs(x_dir, z_dir, selection, keep_dir)

        if mode == "infer" and gates is not None:
            out = route_infer(
                gates[:, index],
                packed,
                lambda rows, d=direction: run_block(d, rows, counter=counter),
                out_dim=layer.inner_dim,
                counter=counter,
                name=f"{name}.{'backward' if reverse else 'forward'}",
            )
        else:
            out = run_block(direction, packed, counter=counter)
            if gates is not None:
                out = out * gates[:, index, None, None]

        outputs.append(out[:, ::-1] if reverse else out)

    mixed = linear(
        outputs[FORWARD] + outputs[BACKWARD],
        layer.out_proj,
        counter=counter,
        tag="out_proj",
    )
    return h + mixed
