"""Sequence blocks: Mamba (selective SSM), bidirectional wrapper, feature interaction, attention.

All blocks map [N, J, d] to [N, J, d], where J is the feature count treated as
a pseudo-sequence.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics as nx
from .config import ModelConfig
from .numerics import DimensionError, ParamSet, Tensor

logger = logging.getLogger(__name__)

DT_MIN = 1e-3
DT_MAX = 1e-1


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class MambaBlockParams:
    """Trainable tensors of one Mamba block."""
    norm_weight: Tensor  # [d]
    in_main: Tensor  # [d, E*d]
    in_gate: Tensor  # [d, E*d]
    conv_weight: Tensor  # [E*d, K]
    conv_bias: Tensor  # [E*d]
    b_proj: Tensor  # [E*d, state]
    c_proj: Tensor  # [E*d, state]
    dt_down: Tensor  # [E*d, r]
    dt_up: Tensor  # [r, E*d]
    dt_bias: Tensor  # [E*d]
    a_log: Tensor  # [E*d, state]
    alpha: Tensor  # [E*d]
    out_proj: Tensor  # [E*d, d]
    out_bias: Tensor  # [d]
    norm_eps: float = 1e-5

    @property
    def A(self) -> Tensor:
        return nx.neg_exp(self.a_log)


def init_mamba_block(params: ParamSet, prefix: str, config: ModelConfig, rng: np.random.Generator) -> MambaBlockParams:
    d, inner, state, rank, k = config.d, config.inner_dim, config.state_dim, config.delta_rank, config.kernel

    dt = np.exp(rng.uniform(math.log(DT_MIN), math.log(DT_MAX), size=inner))
    # inverse softplus
    dt_bias = dt + np.log(-np.expm1(-dt))
    a_log = np.log(np.tile(np.arange(1, state + 1, dtype=np.float64), (inner, 1)))

    def add(name, value):
        return params.add(f"{prefix}.{name}", value)

    return MambaBlockParams(
        norm_weight=add("norm_weight", np.ones(d)),
        in_main=add("in_main", uniform_init(rng, (d, inner), d)),
        in_gate=add("in_gate", uniform_init(rng, (d, inner), d)),
        conv_weight=add("conv_weight", uniform_init(rng, (inner, k), k)),
        conv_bias=add("conv_bias", uniform_init(rng, inner, k)),
        b_proj=add("b_proj", uniform_init(rng, (inner, state), inner)),
        c_proj=add("c_proj", uniform_init(rng, (inner, state), inner)),
        dt_down=add("dt_down", uniform_init(rng, (inner, rank), inner)),
        dt_up=add("dt_up", uniform_init(rng, (rank, inner), rank)),
        dt_bias=add("dt_bias", dt_bias),
        a_log=add("a_log", a_log),
        alpha=add("alpha", np.ones(inner)),
        out_proj=add("out_proj", uniform_init(rng, (inner, d), inner)),
        out_bias=add("out_bias", np.zeros(d)),
        norm_eps=config.norm_eps,
    )


def scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, alpha: Tensor) -> Tensor:
    """Fused selective-scan recurrence with a hand-written backward.

    h_0 = 0, h_j = exp(delta_j * A) * h_{j-1} + (delta_j * B_j) * u_j,
    y_j = sum over state of h_j * C_j, plus alpha * u_j.

    Shapes: u, delta [N, J, E]; A [E, S]; B, C [N, J, S]; alpha [E].
    """
    n, length, inner = u.shape
    state = A.shape[1]
    if delta.shape != u.shape or A.shape != (inner, state) or alpha.shape != (inner,):
        raise DimensionError(
            f"scan shapes disagree: u {u.shape}, delta {delta.shape}, A {A.shape}, alpha {alpha.shape}"
        )
    if B.shape != (n, length, state) or C.shape != (n, length, state):
        raise DimensionError(f"scan B {B.shape} / C {C.shape} do not match [{n}, {length}, {state}]")

    uu, dd, aa, bb, cc = u.data, delta.data, A.data, B.data, C.data
    hs = np.empty((n, length, inner, state))
    h = np.zeros((n, inner, state))
    y = np.empty_like(uu)
    for j in range(length):
        h = np.exp(dd[:, j, :, None] * aa) * h + (dd[:, j, :, None] * bb[:, j, None, :]) * uu[:, j, :, None]
        hs[:, j] = h
        y[:, j] = np.einsum("nes,ns->ne", h, cc[:, j])
    y += alpha.data * uu

    def rule(g):
        gu = g * alpha.data
        galpha = np.sum(g * uu, axis=(0, 1))
        gdelta = np.zeros_like(dd)
        gA = np.zeros_like(aa)
        gB = np.zeros_like(bb)
        gC = np.zeros_like(cc)
        gh = np.zeros((n, inner, state))
        for j in reversed(range(length)):
            h_prev = hs[:, j - 1] if j > 0 else np.zeros((n, inner, state))
            gC[:, j] = np.einsum("ne,nes->ns", g[:, j], hs[:, j])
            gh = gh + g[:, j, :, None] * cc[:, j, None, :]
            decay = np.exp(dd[:, j, :, None] * aa)
            carry = gh * h_prev * decay
            gh_b = np.einsum("nes,ns->ne", gh, bb[:, j])
            gdelta[:, j] = np.einsum("nes,es->ne", carry, aa) + gh_b * uu[:, j]
            gA += np.einsum("nes,ne->es", carry, dd[:, j])
            gB[:, j] = np.einsum("nes,ne->ns", gh, dd[:, j] * uu[:, j])
            gu[:, j] += gh_b * dd[:, j]
            gh = gh * decay
        return gu, gdelta, gA, gB, gC, galpha

    return nx.record(y, (u, delta, A, B, C, alpha), rule)


def selective_scan(u: Tensor, params: MambaBlockParams) -> Tensor:
    """Input-dependent delta, B and C from u, then the fused scan."""
    if u.ndim != 3 or u.shape[-1] != params.alpha.shape[0]:
        raise DimensionError(f"selective_scan input {u.shape} does not match inner width {params.alpha.shape}")
    delta = nx.softplus(u @ params.dt_down @ params.dt_up + params.dt_bias)
    return scan(u, delta, params.A, u @ params.b_proj, u @ params.c_proj, params.alpha)


def mamba_block_forward(
    x: Tensor, params: MambaBlockParams, dropout: float = 0.0, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Pre-norm Mamba block with residual: x + W_final(scan(silu(conv(in_main r))) * silu(in_gate r))."""
    if x.ndim != 3 or x.shape[-1] != params.norm_weight.shape[0]:
        raise DimensionError(f"Mamba block input {x.shape} does not match d={params.norm_weight.shape[0]}")
    r = nx.rmsnorm(x, params.norm_weight, params.norm_eps)
    main = nx.silu(nx.depthwise_causal_conv(r @ params.in_main, params.conv_weight, params.conv_bias))
    gate = nx.silu(r @ params.in_gate)
    gated = selective_scan(main, params) * gate
    out = gated @ params.out_proj + params.out_bias
    return x + nx.dropout(out, dropout, rng)


def bidirectional_forward(
    x: Tensor,
    params_fwd: MambaBlockParams,
    params_bwd: MambaBlockParams,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Sum of a forward pass and a pass over the feature-reversed sequence (reversed back)."""
    forward = mamba_block_forward(x, params_fwd, dropout, rng)
    backward = nx.flip(mamba_block_forward(nx.flip(x, 1), params_bwd, dropout, rng), 1)
    return forward + backward


def interaction_apply(z: Tensor, W: Tensor) -> Tensor:
    """Mix the feature axis: out[n, :, c] = W^T z[n, :, c]."""
    if W.ndim != 2 or W.shape[0] != W.shape[1] or z.ndim != 3 or W.shape[0] != z.shape[1]:
        raise DimensionError(f"Interaction matrix {W.shape} does not match features of {z.shape}")
    return nx.swapaxes(W, 0, 1) @ z


@dataclass
class AttentionBlockParams:
    """Post-norm transformer encoder block with a ReGLU feed-forward."""
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_weight: Tensor
    ln1_bias: Tensor
    ff_in: Tensor  # [d, 2*ff]
    ff_in_bias: Tensor
    ff_out: Tensor  # [ff, d]
    ff_out_bias: Tensor
    ln2_weight: Tensor
    ln2_bias: Tensor
    heads: int = 8
    attention_dropout: float = 0.2
    ff_dropout: float = 0.1
    eps: float = 1e-5


def init_attention_block(
    params: ParamSet, prefix: str, config: ModelConfig, rng: np.random.Generator
) -> AttentionBlockParams:
    d, ff = config.d, config.ff_dim

    def add(name, value):
        return params.add(f"{prefix}.{name}", value)

    return AttentionBlockParams(
        wq=add("wq", uniform_init(rng, (d, d), d)),
        bq=add("bq", np.zeros(d)),
        wk=add("wk", uniform_init(rng, (d, d), d)),
        bk=add("bk", np.zeros(d)),
        wv=add("wv", uniform_init(rng, (d, d), d)),
        bv=add("bv", np.zeros(d)),
        wo=add("wo", uniform_init(rng, (d, d), d)),
        bo=add("bo", np.zeros(d)),
        ln1_weight=add("ln1_weight", np.ones(d)),
        ln1_bias=add("ln1_bias", np.zeros(d)),
        ff_in=add("ff_in", uniform_init(rng, (d, 2 * ff), d)),
        ff_in_bias=add("ff_in_bias", np.zeros(2 * ff)),
        ff_out=add("ff_out", uniform_init(rng, (ff, d), ff)),
        ff_out_bias=add("ff_out_bias", np.zeros(d)),
        ln2_weight=add("ln2_weight", np.ones(d)),
        ln2_bias=add("ln2_bias", np.zeros(d)),
        heads=config.attention_heads,
        attention_dropout=config.attention_dropout,
        ff_dropout=config.ff_dropout,
        eps=config.norm_eps,
    )


def attention_weights(x: Tensor, params: AttentionBlockParams) -> Tensor:
    """Per-head softmax weights over the feature axis, [N, heads, J, J]."""
    q, k = _heads(x @ params.wq + params.bq, params.heads), _heads(x @ params.wk + params.bk, params.heads)
    scale = 1.0 / math.sqrt(x.shape[-1] // params.heads)
    return nx.softmax(q @ nx.swapaxes(k, -1, -2) * scale, axis=-1)


def _heads(x: Tensor, heads: int) -> Tensor:
    n, length, d = x.shape
    return nx.transpose(nx.reshape(x, (n, length, heads, d // heads)), (0, 2, 1, 3))


def attention_block_forward(
    x: Tensor, params: AttentionBlockParams, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """No positional embeddings; dropout only when `rng` is given (training)."""
    n, length, d = x.shape
    if d % params.heads:
        raise DimensionError(f"d={d} is not divisible by {params.heads} heads")
    weights = nx.dropout(attention_weights(x, params), params.attention_dropout, rng)
    values = _heads(x @ params.wv + params.bv, params.heads)
    context = nx.reshape(nx.transpose(weights @ values, (0, 2, 1, 3)), (n, length, d))
    x = nx.layernorm(x + (context @ params.wo + params.bo), params.ln1_weight, params.ln1_bias, params.eps)

    hidden = x @ params.ff_in + params.ff_in_bias
    width = hidden.shape[-1] // 2
    reglu = nx.relu(hidden[..., :width]) * hidden[..., width:]
    ff = nx.dropout(reglu, params.ff_dropout, rng) @ params.ff_out + params.ff_out_bias
    return nx.layernorm(x + ff, params.ln2_weight, params.ln2_bias, params.eps)


class Block(ABC):
    """A [N, J, d] -> [N, J, d] layer of the stack."""

    kind: str = ""

    @abstractmethod
    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        pass


class MambaBlock(Block):
    kind = "mamba"

    def __init__(self, params: ParamSet, prefix: str, config: ModelConfig, rng: np.random.Generator):
        self.params = init_mamba_block(params, prefix, config, rng)
        self.dropout = config.dropout

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return mamba_block_forward(x, self.params, self.dropout, rng)


class BidirectionalMambaBlock(Block):
    kind = "bidirectional"

    def __init__(self, params: ParamSet, prefix: str, config: ModelConfig, rng: np.random.Generator):
        self.forward_params = init_mamba_block(params, f"{prefix}.fwd", config, rng)
        self.backward_params = init_mamba_block(params, f"{prefix}.bwd", config, rng)
        self.dropout = config.dropout

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return bidirectional_forward(x, self.forward_params, self.backward_params, self.dropout, rng)


class AttentionBlock(Block):
    kind = "attention"

    def __init__(self, params: ParamSet, prefix: str, config: ModelConfig, rng: np.random.Generator):
        self.params = init_attention_block(params, prefix, config, rng)

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return attention_block_forward(x, self.params, rng)


def build_block(kind: str, params: ParamSet, prefix: str, config: ModelConfig, rng: np.random.Generator) -> Block:
    if kind == "attention":
        return AttentionBlock(params, prefix, config, rng)
    if kind != "mamba":
        raise ValueError(f"Unknown block kind: {kind}. Available: ['mamba', 'attention']")
    if config.bidirectional:
        return BidirectionalMambaBlock(params, prefix, config, rng)
    return MambaBlock(params, prefix, config, rng)
