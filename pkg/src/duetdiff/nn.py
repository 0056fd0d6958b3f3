"""Trainable layers assembled from tensor primitives.

Weights initialize to truncated normal (std 0.02, resampled outside two
standard deviations); biases and gains follow the usual zero/one
conventions. Every layer exposes ``params(prefix)`` for the optimizer and
checkpoint registries.
"""

from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import (
    Tensor,
    add,
    attention,
    conv2d,
    layer_norm,
    matmul,
    mul,
    reshape,
    silu,
    slice_axis,
    transpose,
)


def trunc_normal(rng: Rng, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) with values beyond 2 std redrawn."""
    out = rng.gaussian(shape, dtype=np.float64)
    for _ in range(16):
        bad = np.abs(out) > 2.0
        n_bad = int(bad.sum())
        if not n_bad:
            break
        out[bad] = rng.gaussian((n_bad,), dtype=np.float64)
    return (np.clip(out, -2.0, 2.0) * std).astype(dtype)


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Linear:
    def __init__(self, rng: Rng, d_in: int, d_out: int, dtype=np.float32, zero_init: bool = False):
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=dtype)
        else:
            w = trunc_normal(rng, (d_in, d_out), dtype=dtype)
        self.w = _param(w)
        self.b = _param(np.zeros(d_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class Conv2dLayer:
    def __init__(self, rng: Rng, c_in: int, c_out: int, kernel: int,
                 stride: int = 1, padding: int = 0, dtype=np.float32, zero_init: bool = False):
        if zero_init:
            w = np.zeros((c_out, c_in, kernel, kernel), dtype=dtype)
        else:
            w = trunc_normal(rng, (c_out, c_in, kernel, kernel), dtype=dtype)
        self.w = _param(w)
        self.b = _param(np.zeros((c_out, 1, 1), dtype=dtype))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return add(conv2d(x, self.w, stride=self.stride, padding=self.padding), self.b)

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNormAffine:
    """Trailing-axis normalization with learnable gain and bias."""

    def __init__(self, dim: int, dtype=np.float32):
        self.gain = _param(np.ones(dim, dtype=dtype))
        self.bias = _param(np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return add(mul(layer_norm(x), self.gain), self.bias)

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class ChannelNorm:
    """LayerNormAffine over the channel axis of NCHW feature maps."""

    def __init__(self, channels: int, dtype=np.float32):
        self.norm = LayerNormAffine(channels, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise ValueError("ChannelNorm expects (N, C, H, W)")
        moved = transpose(x, (0, 2, 3, 1))
        return transpose(self.norm(moved), (0, 3, 1, 2))

    def params(self, prefix: str) -> dict:
        return self.norm.params(prefix)


class SelfAttention:
    def __init__(self, rng: Rng, dim: int, n_heads: int, dtype=np.float32):
        self.n_heads = n_heads
        self.dim = dim
        self.qkv = Linear(rng.split("qkv"), dim, 3 * dim, dtype=dtype)
        self.out = Linear(rng.split("out"), dim, dim, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        qkv = self.qkv(x)
        q = slice_axis(qkv, -1, 0, self.dim)
        k = slice_axis(qkv, -1, self.dim, 2 * self.dim)
        v = slice_axis(qkv, -1, 2 * self.dim, 3 * self.dim)
        return self.out(attention(q, k, v, self.n_heads))

    def params(self, prefix: str) -> dict:
        return {**self.qkv.params(f"{prefix}.qkv"), **self.out.params(f"{prefix}.out")}


class CrossAttention:
    """Queries from the stream, keys/values from a context sequence."""

    def __init__(self, rng: Rng, dim: int, context_dim: int, n_heads: int, dtype=np.float32):
        self.n_heads = n_heads
        self.q = Linear(rng.split("q"), dim, dim, dtype=dtype)
        self.k = Linear(rng.split("k"), context_dim, dim, dtype=dtype)
        self.v = Linear(rng.split("v"), context_dim, dim, dtype=dtype)
        self.out = Linear(rng.split("out"), dim, dim, dtype=dtype)

    def __call__(self, x: Tensor, context: Tensor) -> Tensor:
        q = self.q(x)
        k = self.k(context)
        v = self.v(context)
        return self.out(attention(q, k, v, self.n_heads))

    def params(self, prefix: str) -> dict:
        out = {}
        for name, layer in (("q", self.q), ("k", self.k), ("v", self.v), ("out", self.out)):
            out.update(layer.params(f"{prefix}.{name}"))
        return out


class Mlp:
    def __init__(self, rng: Rng, dim: int, hidden: int, dtype=np.float32):
        self.fc1 = Linear(rng.split("fc1"), dim, hidden, dtype=dtype)
        self.fc2 = Linear(rng.split("fc2"), hidden, dim, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(silu(self.fc1(x)))

    def params(self, prefix: str) -> dict:
        return {**self.fc1.params(f"{prefix}.fc1"), **self.fc2.params(f"{prefix}.fc2")}


class TransformerBlock:
    """Pre-norm block: self-attention then MLP, both residual."""

    def __init__(self, rng: Rng, dim: int, n_heads: int, hidden: int, dtype=np.float32):
        self.norm1 = LayerNormAffine(dim, dtype=dtype)
        self.attn = SelfAttention(rng.split("attn"), dim, n_heads, dtype=dtype)
        self.norm2 = LayerNormAffine(dim, dtype=dtype)
        self.mlp = Mlp(rng.split("mlp"), dim, hidden, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = add(x, self.attn(self.norm1(x)))
        return add(x, self.mlp(self.norm2(x)))

    def params(self, prefix: str) -> dict:
        out = {}
        out.update(self.norm1.params(f"{prefix}.norm1"))
        out.update(self.attn.params(f"{prefix}.attn"))
        out.update(self.norm2.params(f"{prefix}.norm2"))
        out.update(self.mlp.params(f"{prefix}.mlp"))
        return out


def timestep_embedding(t, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal features [sin(t*w_j), cos(t*w_j)], w_j = 10000^(-2j/dim).

    t may be a scalar or a 1-D array; output gains a leading batch axis for
    arrays.
    """
    if dim % 2:
        raise ValueError(f"timestep embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.power(10000.0, -2.0 * np.arange(half, dtype=np.float64) / dim)
    t_arr = np.asarray(t, dtype=np.float64)
    angles = t_arr[..., None] * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
    return emb.astype(dtype)


def collect_params(layers: dict) -> dict:
    """Merge {prefix: layer} into one flat name -> Tensor dict."""
    out = {}
    for prefix, layer in layers.items():
        out.update(layer.params(prefix))
    return out
