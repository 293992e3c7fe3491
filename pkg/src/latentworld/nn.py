"""Transformer building blocks on top of the autodiff engine.

Includes the 3-axis rotary position encoding: the per-head feature pairs are
partitioned into three near-equal segments (time, row, col), each rotated by
its axis coordinate on the standard geometric frequency ladder. Remainder
pairs go to the leading (temporal) segment, keeping segment sizes within one
pair of each other.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

ROPE_BASE = 10000.0


class Module:
    """Minimal parameter container; attribute order fixes parameter order."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(f"{prefix}{name}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ConfigError(f"state dict mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, p in params.items():
            if state[k].shape != p.data.shape:
                raise ConfigError(f"parameter {k}: shape {state[k].shape} vs expected {p.data.shape}")
            p.data[...] = state[k].astype(p.data.dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = ad.param(rng.normal(0.0, 0.02, size=(d_in, d_out)), dtype=dtype)
        self.bias = ad.param(np.zeros(d_out), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gain = ad.param(np.ones(dim), dtype=dtype)
        self.bias = ad.param(np.zeros(dim), dtype=dtype)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.gelu(self.fc1(x)))


def rope_segment_sizes(head_dim: int) -> list[int]:
    """Split head_dim/2 rotation pairs across (time, row, col)."""
    if head_dim % 2:
        raise ConfigError(f"rotary head dim must be even, got {head_dim}")
    pairs = head_dim // 2
    if pairs < 3:
        raise ConfigError(f"rotary head dim {head_dim} leaves {pairs} pairs; need one per axis")
    base, rem = divmod(pairs, 3)
    return [base + (1 if i < rem else 0) for i in range(3)]


def rope_tables(positions: np.ndarray, head_dim: int, dtype=np.float32):
    """cos/sin tables of shape (n_tokens, head_dim) for integer (t, r, c) positions."""
    positions = np.asarray(positions, dtype=np.float64)
    sizes = rope_segment_sizes(head_dim)
    angle_cols = []
    for axis, n_pairs in enumerate(sizes):
        freqs = ROPE_BASE ** (-np.arange(n_pairs, dtype=np.float64) / n_pairs)
        angle_cols.append(positions[:, axis : axis + 1] * freqs[None, :])
    angles = np.concatenate(angle_cols, axis=1)  # (n, pairs)
    cos = np.repeat(np.cos(angles), 2, axis=1).astype(dtype)
    sin = np.repeat(np.sin(angles), 2, axis=1).astype(dtype)
    return cos, sin


def apply_rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate feature pairs of x (..., n, head_dim) by the tabulated angles."""
    cos_t = Tensor(cos.astype(x.data.dtype, copy=False))
    sin_t = Tensor(sin.astype(x.data.dtype, copy=False))
    return ad.add(ad.mul(x, cos_t), ad.mul(ad.rotate_pairs(x), sin_t))


class MultiHeadAttention(Module):
    """Self- or cross-attention with optional rotary tables and additive mask."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng, dtype)
        self.wk = Linear(dim, dim, rng, dtype)
        self.wv = Linear(dim, dim, rng, dtype)
        self.wo = Linear(dim, dim, rng, dtype)

    def _split(self, x: Tensor, n: int) -> Tensor:
        b = x.data.shape[0]
        x = ad.reshape(x, (b, n, self.heads, self.head_dim))
        return ad.transpose(x, (0, 2, 1, 3))

    def __call__(self, x_q: Tensor, x_kv: Tensor | None = None, rope_q=None, rope_k=None, mask=None) -> Tensor:
        x_kv = x_q if x_kv is None else x_kv
        b, nq = x_q.data.shape[0], x_q.data.shape[1]
        nk = x_kv.data.shape[1]
        q = self._split(self.wq(x_q), nq)
        k = self._split(self.wk(x_kv), nk)
        v = self._split(self.wv(x_kv), nk)
        if rope_q is not None:
            q = apply_rope(q, *rope_q)
        if rope_k is not None:
            k = apply_rope(k, *rope_k)
        mask_t = None if mask is None else Tensor(np.asarray(mask, dtype=x_q.data.dtype))
        out = ad.attention(q, k, v, mask_t)
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (b, nq, self.heads * self.head_dim))
        return self.wo(out)


class TransformerBlock(Module):
    """Pre-norm block: x += attn(LN(x)); x += mlp(LN(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng: np.random.Generator, dtype=np.float32):
        self.ln1 = LayerNorm(dim, dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.ln2 = LayerNorm(dim, dtype)
        self.mlp = MLP(dim, int(dim * mlp_ratio), rng, dtype)

    def __call__(self, x: Tensor, rope=None, mask=None) -> Tensor:
        x = ad.add(x, self.attn(self.ln1(x), rope_q=rope, rope_k=rope, mask=mask))
        return ad.add(x, self.mlp(self.ln2(x)))


class BlockStack(Module):
    def __init__(self, dim: int, depth: int, heads: int, mlp_ratio: float, rng, dtype=np.float32):
        self.blocks = [TransformerBlock(dim, heads, mlp_ratio, rng, dtype) for _ in range(depth)]
        self.norm = LayerNorm(dim, dtype)

    def __call__(self, x: Tensor, rope=None, mask=None) -> Tensor:
        for block in self.blocks:
            x = block(x, rope=rope, mask=mask)
        return self.norm(x)
