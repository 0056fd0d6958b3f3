"""Noise-prediction network: a small conv U-Net with timestep embeddings
and cross-attention from spatial tokens to the joint condition embedding.

The condition enters only through cross-attention (never by concatenation
with the noisy input); timestep features are added inside every residual
block. The final convolution starts at zero so the initial prediction is 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    ChannelNorm,
    Conv2dLayer,
    CrossAttention,
    LayerNormAffine,
    Linear,
    Mlp,
    SelfAttention,
    collect_params,
    timestep_embedding,
)
from .rng import Rng
from .tensor import Tensor, add, concat, reshape, silu, transpose, upsample2x


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int = 3
    base_channels: int = 16
    channel_mult: tuple[int, ...] = (1, 2)
    res_blocks: int = 2
    attn_resolutions: tuple[int, ...] = (8,)
    temb_dim: int = 64
    cond_dim: int = 64
    n_heads: int = 4

    def channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_mult)


class ResBlock:
    """norm-silu-conv twice, timestep features added between, residual skip."""

    def __init__(self, rng: Rng, c_in: int, c_out: int, temb_dim: int, dtype=np.float32):
        self.norm1 = ChannelNorm(c_in, dtype=dtype)
        self.conv1 = Conv2dLayer(rng.split("conv1"), c_in, c_out, 3, padding=1, dtype=dtype)
        self.time_proj = Linear(rng.split("time"), temb_dim, c_out, dtype=dtype)
        self.norm2 = ChannelNorm(c_out, dtype=dtype)
        self.conv2 = Conv2dLayer(rng.split("conv2"), c_out, c_out, 3, padding=1, dtype=dtype)
        self.skip = None if c_in == c_out else Conv2dLayer(rng.split("skip"), c_in, c_out, 1, dtype=dtype)

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(silu(self.norm1(x)))
        t = self.time_proj(silu(temb))
        h = add(h, reshape(t, t.shape + (1, 1)))
        h = self.conv2(silu(self.norm2(h)))
        return add(h, x if self.skip is None else self.skip(x))

    def params(self, prefix: str) -> dict:
        layers = {f"{prefix}.norm1": self.norm1, f"{prefix}.conv1": self.conv1,
                  f"{prefix}.time": self.time_proj, f"{prefix}.norm2": self.norm2,
                  f"{prefix}.conv2": self.conv2}
        if self.skip is not None:
            layers[f"{prefix}.skip"] = self.skip
        return collect_params(layers)


class SpatialAttnBlock:
    """Self-attention, condition cross-attention, and MLP over HW tokens."""

    def __init__(self, rng: Rng, channels: int, cond_dim: int, n_heads: int, dtype=np.float32):
        self.channels = channels
        self.norm1 = LayerNormAffine(channels, dtype=dtype)
        self.self_attn = SelfAttention(rng.split("self"), channels, n_heads, dtype=dtype)
        self.norm2 = LayerNormAffine(channels, dtype=dtype)
        self.cross_attn = CrossAttention(rng.split("cross"), channels, cond_dim, n_heads, dtype=dtype)
        self.norm3 = LayerNormAffine(channels, dtype=dtype)
        self.mlp = Mlp(rng.split("mlp"), channels, 4 * channels, dtype=dtype)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        n, c, h, w = x.shape
        tokens = reshape(transpose(x, (0, 2, 3, 1)), (n, h * w, c))
        tokens = add(tokens, self.self_attn(self.norm1(tokens)))
        tokens = add(tokens, self.cross_attn(self.norm2(tokens), cond))
        tokens = add(tokens, self.mlp(self.norm3(tokens)))
        return transpose(reshape(tokens, (n, h, w, c)), (0, 3, 1, 2))

    def params(self, prefix: str) -> dict:
        return collect_params({
            f"{prefix}.norm1": self.norm1, f"{prefix}.self": self.self_attn,
            f"{prefix}.norm2": self.norm2, f"{prefix}.cross": self.cross_attn,
            f"{prefix}.norm3": self.norm3, f"{prefix}.mlp": self.mlp,
        })


class Denoiser:
    """U-shaped eps-prediction network; output shape equals input shape."""

    def __init__(self, rng: Rng, config: DenoiserConfig, canvas: int, dtype=np.float32):
        self.config = config
        self.canvas = canvas
        self.dtype = dtype
        chans = config.channels()
        levels = len(chans)
        factor = 2 ** (levels - 1)
        if canvas % factor:
            raise ValueError(f"canvas {canvas} not divisible by downsampling factor {factor}")

        self.time_fc1 = Linear(rng.split("time_fc1"), config.temb_dim, config.temb_dim, dtype=dtype)
        self.time_fc2 = Linear(rng.split("time_fc2"), config.temb_dim, config.temb_dim, dtype=dtype)
        self.in_conv = Conv2dLayer(rng.split("in_conv"), config.in_channels, chans[0], 3,
                                   padding=1, dtype=dtype)

        def attn_here(res):
            return res in config.attn_resolutions

        self.down = []
        res = canvas
        for lvl, c in enumerate(chans):
            r = rng.split(f"down{lvl}")
            blocks = []
            for b in range(config.res_blocks):
                entry = {"res": ResBlock(r.split(f"res{b}"), c, c,
                                         config.temb_dim, dtype=dtype)}
                if attn_here(res):
                    entry["attn"] = SpatialAttnBlock(r.split(f"attn{b}"), c, config.cond_dim,
                                                     config.n_heads, dtype=dtype)
                blocks.append(entry)
            down_conv = None
            if lvl + 1 < levels:
                down_conv = Conv2dLayer(r.split("down"), c, chans[lvl + 1], 4, stride=2,
                                        padding=1, dtype=dtype)
                res //= 2
            self.down.append({"blocks": blocks, "down": down_conv})

        r = rng.split("middle")
        c_mid = chans[-1]
        self.mid_res1 = ResBlock(r.split("res1"), c_mid, c_mid, config.temb_dim, dtype=dtype)
        self.mid_attn = SpatialAttnBlock(r.split("attn"), c_mid, config.cond_dim,
                                         config.n_heads, dtype=dtype)
        self.mid_res2 = ResBlock(r.split("res2"), c_mid, c_mid, config.temb_dim, dtype=dtype)

        self.up = []
        for lvl in reversed(range(levels)):
            r = rng.split(f"up{lvl}")
            c = chans[lvl]
            blocks = []
            for b in range(config.res_blocks):
                entry = {"res": ResBlock(r.split(f"res{b}"), 2 * c if b == 0 else c, c,
                                         config.temb_dim, dtype=dtype)}
                if attn_here(res):
                    entry["attn"] = SpatialAttnBlock(r.split(f"attn{b}"), c, config.cond_dim,
                                                     config.n_heads, dtype=dtype)
                blocks.append(entry)
            up_conv = None
            if lvl:
                up_conv = Conv2dLayer(r.split("up"), c, chans[lvl - 1], 3, padding=1, dtype=dtype)
                res *= 2
            self.up.append({"blocks": blocks, "up": up_conv})

        self.out_norm = ChannelNorm(chans[0], dtype=dtype)
        self.out_conv = Conv2dLayer(rng.split("out_conv"), chans[0], config.in_channels, 3,
                                    padding=1, dtype=dtype, zero_init=True)

    def time_features(self, t) -> Tensor:
        emb = Tensor(timestep_embedding(t, self.config.temb_dim, dtype=self.dtype))
        return self.time_fc2(silu(self.time_fc1(emb)))

    def __call__(self, x: Tensor, t, cond: Tensor) -> Tensor:
        """x is (N, C, H, W); t is an int or per-sample array; cond is (N, L, d)."""
        if x.ndim != 4:
            raise ValueError("denoiser expects (N, C, H, W)")
        t_arr = np.full(x.shape[0], t, dtype=np.int64) if np.isscalar(t) else np.asarray(t)
        if t_arr.shape != (x.shape[0],):
            raise ValueError(f"t batch {t_arr.shape} != input batch {x.shape[0]}")
        temb = self.time_features(t_arr)

        h = self.in_conv(x)
        skips = []
        for lvl, stage in enumerate(self.down):
            for entry in stage["blocks"]:
                h = entry["res"](h, temb)
                if "attn" in entry:
                    h = entry["attn"](h, cond)
            skips.append(h)
            if stage["down"] is not None:
                h = stage["down"](h)

        h = self.mid_res1(h, temb)
        h = self.mid_attn(h, cond)
        h = self.mid_res2(h, temb)

        for stage in self.up:
            h = concat([h, skips.pop()], axis=1)
            for b, entry in enumerate(stage["blocks"]):
                h = entry["res"](h, temb)
                if "attn" in entry:
                    h = entry["attn"](h, cond)
            if stage["up"] is not None:
                h = stage["up"](upsample2x(h))

        return self.out_conv(silu(self.out_norm(h)))

    def params(self, prefix: str = "denoiser") -> dict:
        out = {}
        out.update(self.time_fc1.params(f"{prefix}.time_fc1"))
        out.update(self.time_fc2.params(f"{prefix}.time_fc2"))
        out.update(self.in_conv.params(f"{prefix}.in_conv"))
        for lvl, stage in enumerate(self.down):
            for b, entry in enumerate(stage["blocks"]):
                out.update(entry["res"].params(f"{prefix}.down{lvl}.res{b}"))
                if "attn" in entry:
                    out.update(entry["attn"].params(f"{prefix}.down{lvl}.attn{b}"))
            if stage["down"] is not None:
                out.update(stage["down"].params(f"{prefix}.down{lvl}.down"))
        out.update(self.mid_res1.params(f"{prefix}.mid.res1"))
        out.update(self.mid_attn.params(f"{prefix}.mid.attn"))
        out.update(self.mid_res2.params(f"{prefix}.mid.res2"))
        for i, stage in enumerate(self.up):
            lvl = len(self.up) - 1 - i
            for b, entry in enumerate(stage["blocks"]):
                out.update(entry["res"].params(f"{prefix}.up{lvl}.res{b}"))
                if "attn" in entry:
                    out.update(entry["attn"].params(f"{prefix}.up{lvl}.attn{b}"))
            if stage["up"] is not None:
                out.update(stage["up"].params(f"{prefix}.up{lvl}.up"))
        out.update(self.out_norm.params(f"{prefix}.out_norm"))
        out.update(self.out_conv.params(f"{prefix}.out_conv"))
        return out
