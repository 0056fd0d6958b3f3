"""The full generative bundle: schedule + conditioner + denoiser.

Everything trainable is reachable through one named parameter registry, so
the optimizer and the checkpoint format share a single source of truth.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .conditioning import DEFAULT_TOKENS, Conditioner, PromptVocab
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import NoiseSchedule, linear_schedule
from .rng import Rng
from .tensor import Tensor, reshape


@dataclass(frozen=True)
class ModelConfig:
    canvas: int = 16
    image_channels: int = 3
    cond_channels: int = 1
    d_embed: int = 64
    text_len: int = 8
    fusion_layers: int = 2
    fusion_heads: int = 4
    fusion_hidden: int = 256
    encoder_channels: tuple[int, ...] = (16, 32)
    encoder_out_channels: int = 32
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    total_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        den = data.get("denoiser", {})
        if isinstance(den, dict):
            den = dict(den)
            for key in ("channel_mult", "attn_resolutions"):
                if key in den:
                    den[key] = tuple(den[key])
            data["denoiser"] = DenoiserConfig(**den)
        if "encoder_channels" in data:
            data["encoder_channels"] = tuple(data["encoder_channels"])
        return cls(**data)


# full-size preset mirroring the published fusion-module dimensions; far too
# large to train here, but constructible for architecture experiments
LARGE_FUSION_PRESET = {
    "d_embed": 768,
    "fusion_layers": 6,
    "fusion_heads": 8,
    "fusion_hidden": 3072,
}


class DiffusionModel:
    """Conditioned denoiser with its schedule, vocab, and parameter registry."""

    def __init__(self, config: ModelConfig, rng: Rng | None = None, dtype=np.float32,
                 vocab: PromptVocab | None = None):
        self.config = config
        self.dtype = dtype
        self.vocab = vocab or PromptVocab(DEFAULT_TOKENS, text_len=config.text_len)
        if self.vocab.text_len != config.text_len:
            raise ValueError("vocab text_len disagrees with config")
        self.schedule: NoiseSchedule = linear_schedule(
            config.total_steps, config.beta_start, config.beta_end
        )
        rng = rng or Rng(0)
        self.conditioner = Conditioner(
            rng.split("conditioner"),
            self.vocab,
            canvas=config.canvas,
            cond_channels=config.cond_channels,
            d_embed=config.d_embed,
            encoder_channels=config.encoder_channels,
            encoder_out_channels=config.encoder_out_channels,
            n_layers=config.fusion_layers,
            n_heads=config.fusion_heads,
            d_hidden=config.fusion_hidden,
            dtype=dtype,
        )
        if config.denoiser.cond_dim != config.d_embed:
            raise ValueError("denoiser cond_dim must equal d_embed")
        if config.denoiser.in_channels != config.image_channels:
            raise ValueError("denoiser in_channels must equal image_channels")
        self.denoiser = Denoiser(rng.split("denoiser"), config.denoiser, config.canvas, dtype=dtype)

    # -- registries ---------------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        out = self.conditioner.params("cond")
        out.update(self.denoiser.params("denoiser"))
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        return self.conditioner.buffers("cond")

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        """Copy named arrays into parameters and frozen buffers."""
        params = self.params()
        for name, param in params.items():
            if name not in tensors:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            arr = tensors[name]
            if tuple(arr.shape) != tuple(param.shape):
                raise ValueError(f"shape mismatch for '{name}': {arr.shape} vs {param.shape}")
            param.data[...] = arr.astype(param.data.dtype)
        table = self.conditioner.prompt_encoder.table
        frozen = tensors.get("cond.prompt_table")
        if frozen is None:
            raise KeyError("checkpoint missing buffer 'cond.prompt_table'")
        table[...] = frozen.astype(table.dtype)

    # -- prediction ---------------------------------------------------------

    def predict_eps(self, x_t: Tensor, t, cond: Tensor) -> Tensor:
        """eps prediction for (N, C, H, W) input at step(s) t under condition cond."""
        expected = (self.config.image_channels, self.config.canvas, self.config.canvas)
        if x_t.shape[-3:] != expected:
            raise ValueError(f"input shape {x_t.shape} does not end in {expected}")
        seq = self.vocab.text_len + self.conditioner.image_tokens
        if cond.shape[-2:] != (seq, self.config.d_embed):
            raise ValueError(
                f"condition shape {cond.shape} != (.., {seq}, {self.config.d_embed})"
            )
        t_arr = np.asarray(t)
        if np.any(t_arr < 1) or np.any(t_arr > self.schedule.total_steps):
            raise ValueError(f"t={t} outside schedule range [1, {self.schedule.total_steps}]")
        squeeze = x_t.ndim == 3
        if squeeze:
            x_t = reshape(x_t, (1,) + x_t.shape)
            cond = reshape(cond, (1,) + cond.shape) if cond.ndim == 2 else cond
        out = self.denoiser(x_t, t, cond)
        if squeeze:
            out = reshape(out, out.shape[1:])
        return out
