"""Joint text+image conditioning: encoders, fusion, nulls, and dropout.

A frozen embedding table stands in for a pretrained text encoder; a small
trainable conv stack summarizes the condition image into spatial tokens; a
fusion transformer maps the concatenated token sequence into one joint
embedding. Nulling either side (padded prompt, learnable empty-image
block) gives the unconditional variants used for guidance and for
train-time condition dropout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import (
    ChannelNorm,
    Conv2dLayer,
    LayerNormAffine,
    Linear,
    TransformerBlock,
    collect_params,
    trunc_normal,
)
from .rng import Rng
from .tensor import Tensor, add, concat, mul, reshape, silu, transpose


PAD_TOKEN = "<pad>"
DEFAULT_TOKENS = (PAD_TOKEN, "red", "green", "blue", "yellow", "circle", "square", "triangle")


@dataclass(frozen=True)
class PromptVocab:
    """Token list with reserved PAD at id 0 and a fixed encoded length."""

    tokens: tuple[str, ...] = DEFAULT_TOKENS
    text_len: int = 8
    _ids: dict = field(init=False, repr=False)

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != PAD_TOKEN:
            raise ValueError(f"vocab must start with the PAD token {PAD_TOKEN!r}")
        object.__setattr__(self, "_ids", {tok: i for i, tok in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, prompt: list[str]) -> np.ndarray:
        """Right-pad a token list to exactly ``text_len`` ids.

        The empty prompt encodes to all-PAD ids (the text null).
        """
        if len(prompt) > self.text_len:
            raise ValueError(f"prompt longer than text_len={self.text_len}: {prompt}")
        ids = np.zeros(self.text_len, dtype=np.int64)
        for i, tok in enumerate(prompt):
            if tok not in self._ids:
                raise KeyError(f"unknown token {tok!r}")
            ids[i] = self._ids[tok]
        return ids


def frozen_orthogonal_table(rng: Rng, vocab_size: int, d_embed: int, dtype=np.float32) -> np.ndarray:
    """Random table with orthonormal rows (modified Gram-Schmidt at 64-bit)."""
    if vocab_size > d_embed:
        raise ValueError("orthonormal rows need vocab_size <= d_embed")
    raw = rng.gaussian((vocab_size, d_embed), dtype=np.float64)
    for i in range(vocab_size):
        for j in range(i):
            raw[i] -= np.dot(raw[i], raw[j]) * raw[j]
        raw[i] /= np.linalg.norm(raw[i])
    return raw.astype(dtype)


class PromptEncoder:
    """Frozen lookup table; gradients never reach it."""

    def __init__(self, rng: Rng, vocab: PromptVocab, d_embed: int, dtype=np.float32):
        self.vocab = vocab
        self.table = frozen_orthogonal_table(rng, len(vocab), d_embed, dtype=dtype)

    def __call__(self, prompts: list[list[str]]) -> Tensor:
        """(B, text_len, d) constant embedding for a batch of token lists."""
        ids = np.stack([self.vocab.encode(p) for p in prompts])
        return Tensor(self.table[ids])

    def encode_one(self, prompt: list[str]) -> Tensor:
        return Tensor(self.table[self.vocab.encode(prompt)])


class ImageEncoder:
    """Conv stack: stride-2 residual blocks, an output conv, a linear head.

    The final grid flattens to image tokens, so token count is fully
    determined by the input size and the number of blocks.
    """

    def __init__(self, rng: Rng, in_channels: int = 1, channels: tuple[int, ...] = (16, 32),
                 out_channels: int = 32, d_embed: int = 64, dtype=np.float32):
        self.channels = tuple(channels)
        self.blocks = []
        c_prev = in_channels
        for i, c in enumerate(self.channels):
            r = rng.split(f"block{i}")
            self.blocks.append({
                "conv1": Conv2dLayer(r.split("conv1"), c_prev, c, 4, stride=2, padding=1, dtype=dtype),
                "conv2": Conv2dLayer(r.split("conv2"), c, c, 3, stride=1, padding=1, dtype=dtype),
                "skip": Conv2dLayer(r.split("skip"), c_prev, c, 2, stride=2, padding=0, dtype=dtype),
            })
            c_prev = c
        self.out_layer = Conv2dLayer(rng.split("out_layer"), c_prev, out_channels, 3,
                                     stride=1, padding=1, dtype=dtype)
        self.proj = Linear(rng.split("proj"), out_channels, d_embed, dtype=dtype)
        self.out_channels = out_channels
        self.d_embed = d_embed

    def token_count(self, height: int, width: int) -> int:
        factor = 2 ** len(self.blocks)
        if height % factor or width % factor:
            raise ValueError(
                f"input {height}x{width} not divisible by downsampling factor {factor}"
            )
        return (height // factor) * (width // factor)

    def __call__(self, x: Tensor) -> Tensor:
        """(B, C, H, W) -> (B, tokens, d) spatially ordered row-major."""
        if x.ndim != 4:
            raise ValueError("image encoder expects (N, C, H, W)")
        n, _, h, w = x.shape
        tokens = self.token_count(h, w)
        for blk in self.blocks:
            hidden = blk["conv2"](silu(blk["conv1"](x)))
            x = silu(add(hidden, blk["skip"](x)))
        x = self.out_layer(x)
        x = transpose(x, (0, 2, 3, 1))
        x = reshape(x, (n, tokens, self.out_channels))
        return self.proj(x)

    def params(self, prefix: str) -> dict:
        out = {}
        for i, blk in enumerate(self.blocks):
            for name, layer in blk.items():
                out.update(layer.params(f"{prefix}.block{i}.{name}"))
        out.update(self.out_layer.params(f"{prefix}.out_layer"))
        out.update(self.proj.params(f"{prefix}.proj"))
        return out


class FusionTransformer:
    """Pre-norm transformer over the concatenated text+image tokens."""

    def __init__(self, rng: Rng, seq_len: int, d_embed: int, n_layers: int,
                 n_heads: int, d_hidden: int, dtype=np.float32):
        self.seq_len = seq_len
        self.pos = Tensor(trunc_normal(rng.split("pos"), (seq_len, d_embed), dtype=dtype),
                          requires_grad=True)
        self.layers = [
            TransformerBlock(rng.split(f"layer{i}"), d_embed, n_heads, d_hidden, dtype=dtype)
            for i in range(n_layers)
        ]
        self.final_norm = LayerNormAffine(d_embed, dtype=dtype)

    def __call__(self, tokens: Tensor) -> Tensor:
        if tokens.shape[-2] != self.seq_len:
            raise ValueError(
                f"sequence length {tokens.shape[-2]} != positional embedding length {self.seq_len}"
            )
        x = add(tokens, self.pos)
        for layer in self.layers:
            x = layer(x)
        return self.final_norm(x)

    def params(self, prefix: str) -> dict:
        out = {f"{prefix}.pos": self.pos}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.layer{i}"))
        out.update(self.final_norm.params(f"{prefix}.final_norm"))
        return out


class Conditioner:
    """Bundles the encoders, fusion transformer, and null embeddings."""

    def __init__(self, rng: Rng, vocab: PromptVocab, canvas: int, cond_channels: int = 1,
                 d_embed: int = 64, encoder_channels: tuple[int, ...] = (16, 32),
                 encoder_out_channels: int = 32, n_layers: int = 2, n_heads: int = 4,
                 d_hidden: int = 256, dtype=np.float32):
        self.vocab = vocab
        self.dtype = dtype
        self.prompt_encoder = PromptEncoder(rng.split("prompt"), vocab, d_embed, dtype=dtype)
        self.image_encoder = ImageEncoder(rng.split("image"), cond_channels, encoder_channels,
                                          encoder_out_channels, d_embed, dtype=dtype)
        self.image_tokens = self.image_encoder.token_count(canvas, canvas)
        self.fusion = FusionTransformer(rng.split("fusion"), vocab.text_len + self.image_tokens,
                                        d_embed, n_layers, n_heads, d_hidden, dtype=dtype)
        self.null_image = Tensor(
            trunc_normal(rng.split("null_image"), (self.image_tokens, d_embed), dtype=dtype),
            requires_grad=True,
        )

    # -- encoders ---------------------------------------------------------

    def encode_prompt(self, prompts: list[list[str]]) -> Tensor:
        return self.prompt_encoder(prompts)

    def null_text(self, batch: int) -> Tensor:
        return self.prompt_encoder([[]] * batch)

    def encode_image(self, images: Tensor) -> Tensor:
        return self.image_encoder(images)

    def null_image_batch(self, batch: int) -> Tensor:
        block = reshape(self.null_image, (1,) + self.null_image.shape)
        ones = Tensor(np.ones((batch, 1, 1), dtype=self.dtype))
        return mul(block, ones)

    # -- fusion -----------------------------------------------------------

    def fuse(self, text_emb: Tensor, image_emb: Tensor) -> Tensor:
        """(B, text_len, d) + (B, image_tokens, d) -> (B, text_len+image_tokens, d)."""
        if text_emb.shape[-1] != image_emb.shape[-1]:
            raise ValueError("text and image embedding widths differ")
        return self.fusion(concat([text_emb, image_emb], axis=-2))

    def fuse_joint(self, prompts: list[list[str]], images: Tensor) -> Tensor:
        return self.fuse(self.encode_prompt(prompts), self.encode_image(images))

    def fuse_text_only(self, prompts: list[list[str]]) -> Tensor:
        return self.fuse(self.encode_prompt(prompts), self.null_image_batch(len(prompts)))

    def fuse_image_only(self, images: Tensor) -> Tensor:
        return self.fuse(self.null_text(images.shape[0]), self.encode_image(images))

    def fuse_null(self, batch: int) -> Tensor:
        """Fully unconditional embedding: padded prompt + empty-image block."""
        return self.fuse(self.null_text(batch), self.null_image_batch(batch))

    # -- train-time dropout -------------------------------------------------

    def apply_condition_dropout(self, text_emb: Tensor, image_emb: Tensor, rng: Rng,
                                drop_text: float, drop_image: float):
        """Independently null each condition per sample.

        Per sample two uniforms are drawn in order (text, image); a draw
        below the rate swaps in the corresponding null embedding. Returns
        (text_emb', image_emb', (text_dropped, image_dropped)) with boolean
        flag arrays.
        """
        if not (0.0 <= drop_text <= 1.0 and 0.0 <= drop_image <= 1.0):
            raise ValueError("dropout rates must lie in [0, 1]")
        batch = text_emb.shape[0]
        u = rng.uniform(2 * batch)
        text_dropped = u[0::2] < drop_text
        image_dropped = u[1::2] < drop_image

        keep_t = (~text_dropped).astype(self.dtype)[:, None, None]
        null_t = self.null_text(batch)
        text_out = Tensor(text_emb.data * keep_t + null_t.data * (1.0 - keep_t))

        keep_i = Tensor((~image_dropped).astype(self.dtype)[:, None, None])
        inv_i = Tensor(image_dropped.astype(self.dtype)[:, None, None])
        image_out = add(mul(image_emb, keep_i), mul(self.null_image_batch(batch), inv_i))
        return text_out, image_out, (text_dropped, image_dropped)

    # -- registries ---------------------------------------------------------

    def params(self, prefix: str = "cond") -> dict:
        out = {}
        out.update(self.image_encoder.params(f"{prefix}.image_encoder"))
        out.update(self.fusion.params(f"{prefix}.fusion"))
        out[f"{prefix}.null_image"] = self.null_image
        return out

    def buffers(self, prefix: str = "cond") -> dict:
        return {f"{prefix}.prompt_table": self.prompt_encoder.table}
