"""Encoder families: a plain ViT stack and a hierarchical shifted-window stack.

Both consume patch-embedded tokens and use pre-norm blocks (LN -> attention
-> residual, LN -> MLP -> residual).  The windowed path adds cyclic shifts
on odd blocks and 2x2 patch merging between stages.  No relative position
bias; only the ViT path carries learned absolute position embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .rng import SplitMix64
from .tensor import Tensor

MASK_FILL = -1e9  # additive attention penalty for forbidden pairs (finite on purpose)


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class PatchEmbedConfig:
    image_size: int
    patch_size: int
    in_channels: int = 1
    embed_dim: int = 32

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ContractError(
                f"image size {self.image_size} not divisible by patch "
                f"size {self.patch_size}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_tokens(self) -> int:
        return self.grid * self.grid


@dataclass(frozen=True)
class ViTConfig:
    depth: int
    heads: int
    embed_dim: int
    mlp_ratio: float
    patch: PatchEmbedConfig

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ContractError(
                f"embed dim {self.embed_dim} not divisible by {self.heads} heads")
        if self.embed_dim != self.patch.embed_dim:
            raise ContractError("vit embed_dim must match patch embed_dim")

    @property
    def encoder_stride(self) -> int:
        return self.patch.patch_size

    @property
    def out_dim(self) -> int:
        return self.embed_dim


@dataclass(frozen=True)
class SwinConfig:
    stage_depths: list[int]
    heads_per_stage: list[int]
    window_size: int
    embed_dim: int
    patch: PatchEmbedConfig
    encoder_stride: int
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if len(self.stage_depths) != len(self.heads_per_stage):
            raise ContractError("stage_depths and heads_per_stage lengths differ")
        if not self.stage_depths:
            raise ContractError("need at least one stage")
        if self.embed_dim != self.patch.embed_dim:
            raise ContractError("swin embed_dim must match patch embed_dim")
        stride = self.patch.patch_size * (1 << (len(self.stage_depths) - 1))
        if stride != self.encoder_stride:
            raise ContractError(
                f"encoder stride {self.encoder_stride} != patch_size * "
                f"2^(stages-1) = {stride}")
        grid = self.patch.grid
        for s, (dim, heads) in enumerate(zip(self.stage_dims, self.heads_per_stage)):
            if grid % self.window_size:
                raise ContractError(
                    f"stage {s}: token grid {grid} not divisible by "
                    f"window {self.window_size}")
            if dim % heads:
                raise ContractError(
                    f"stage {s}: dim {dim} not divisible by {heads} heads")
            grid //= 2

    @property
    def stage_dims(self) -> list[int]:
        return [self.embed_dim << s for s in range(len(self.stage_depths))]

    @property
    def out_dim(self) -> int:
        return self.stage_dims[-1]


# ---------------------------------------------------------------------------
# parameter helpers


def init_param(params: dict, name: str, shape, rng: SplitMix64,
               kind: str = "trunc") -> Tensor:
    """Create, register, and return one named parameter tensor."""
    if name in params:
        raise ContractError(f"duplicate parameter name {name!r}")
    if kind == "trunc":
        data = rng.truncated_normal(shape, std=0.02, clip=2.0)
    elif kind == "zeros":
        data = np.zeros(shape, dtype=np.float64)
    elif kind == "ones":
        data = np.ones(shape, dtype=np.float64)
    else:
        raise ContractError(f"unknown init kind {kind!r}")
    t = Tensor(data, requires_grad=True)
    params[name] = t
    return t


class LayerNormParams:
    def __init__(self, params, prefix, dim, rng):
        self.gamma = init_param(params, prefix + ".gamma", (dim,), rng, "ones")
        self.beta = init_param(params, prefix + ".beta", (dim,), rng, "zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class Mlp:
    def __init__(self, params, prefix, dim, hidden, rng):
        self.w1 = init_param(params, prefix + ".w1", (dim, hidden), rng)
        self.b1 = init_param(params, prefix + ".b1", (hidden,), rng, "zeros")
        self.w2 = init_param(params, prefix + ".w2", (hidden, dim), rng)
        self.b2 = init_param(params, prefix + ".b2", (dim,), rng, "zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return T.dense(T.gelu(T.dense(x, self.w1, self.b1)), self.w2, self.b2)


# ---------------------------------------------------------------------------
# patch embedding


class PatchEmbed:
    """Linear projection of non-overlapping patches to token vectors."""

    def __init__(self, params, prefix, cfg: PatchEmbedConfig, rng,
                 with_pos: bool = False):
        self.cfg = cfg
        d_in = cfg.in_channels * cfg.patch_size * cfg.patch_size
        self.w = init_param(params, prefix + ".w", (d_in, cfg.embed_dim), rng)
        self.b = init_param(params, prefix + ".b", (cfg.embed_dim,), rng, "zeros")
        self.pos = (init_param(params, prefix + ".pos",
                               (cfg.n_tokens, cfg.embed_dim), rng)
                    if with_pos else None)

    def __call__(self, img: Tensor) -> Tensor:
        """[C, H, W] image -> [N, D] tokens in row-major patch order."""
        c, h, w = img.shape
        cfg = self.cfg
        if h != cfg.image_size or w != cfg.image_size or c != cfg.in_channels:
            raise ContractError(
                f"patch embed expects [{cfg.in_channels},{cfg.image_size},"
                f"{cfg.image_size}], got {img.shape}")
        p, g = cfg.patch_size, cfg.grid
        x = img.reshape(c, g, p, g, p)
        x = x.transpose((1, 3, 0, 2, 4))          # [gh, gw, C, p, p]
        x = x.reshape(g * g, c * p * p)
        tokens = T.dense(x, self.w, self.b)
        if self.pos is not None:
            tokens = tokens + self.pos
        return tokens


# ---------------------------------------------------------------------------
# attention


class MultiHeadAttention:
    """Standard multi-head self-attention over [B, T, D] token batches."""

    def __init__(self, params, prefix, dim, heads, rng):
        self.dim, self.heads = dim, heads
        self.head_dim = dim // heads
        self.wq = init_param(params, prefix + ".wq", (dim, dim), rng)
        self.bq = init_param(params, prefix + ".bq", (dim,), rng, "zeros")
        self.wk = init_param(params, prefix + ".wk", (dim, dim), rng)
        self.bk = init_param(params, prefix + ".bk", (dim,), rng, "zeros")
        self.wv = init_param(params, prefix + ".wv", (dim, dim), rng)
        self.bv = init_param(params, prefix + ".bv", (dim,), rng, "zeros")
        self.wo = init_param(params, prefix + ".wo", (dim, dim), rng)
        self.bo = init_param(params, prefix + ".bo", (dim,), rng, "zeros")

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """mask, if given, is an additive [B, T, T] array (0 or MASK_FILL)."""
        b, t, d = x.shape
        h, dh = self.heads, self.head_dim

        def split(v: Tensor) -> Tensor:
            return v.reshape(b, t, h, dh).transpose((0, 2, 1, 3))  # [B,h,T,dh]

        q = split(T.dense(x, self.wq, self.bq))
        k = split(T.dense(x, self.wk, self.bk))
        v = split(T.dense(x, self.wv, self.bv))
        scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
        if mask is not None:
            scores = scores + Tensor(mask[:, None, :, :])
        attn = T.softmax(scores, axis=-1)
        out = (attn @ v).transpose((0, 2, 1, 3)).reshape(b, t, d)
        return T.dense(out, self.wo, self.bo)


# ---------------------------------------------------------------------------
# plain ViT


class ViTBlock:
    def __init__(self, params, prefix, cfg: ViTConfig, rng):
        self.ln1 = LayerNormParams(params, prefix + ".ln1", cfg.embed_dim, rng)
        self.attn = MultiHeadAttention(params, prefix + ".attn", cfg.embed_dim,
                                       cfg.heads, rng)
        self.ln2 = LayerNormParams(params, prefix + ".ln2", cfg.embed_dim, rng)
        self.mlp = Mlp(params, prefix + ".mlp", cfg.embed_dim,
                       int(cfg.embed_dim * cfg.mlp_ratio), rng)

    def __call__(self, x: Tensor) -> Tensor:
        n, d = x.shape
        x = x + self.attn(self.ln1(x).reshape(1, n, d)).reshape(n, d)
        return x + self.mlp(self.ln2(x))


class ViTEncoder:
    """Global-attention stack; tokens in, tokens out, shape preserved."""

    def __init__(self, params, prefix, cfg: ViTConfig, rng):
        self.cfg = cfg
        self.blocks = [ViTBlock(params, f"{prefix}.block{i}", cfg, rng)
                       for i in range(cfg.depth)]

    def __call__(self, tokens: Tensor) -> Tensor:
        if tokens.shape != (self.cfg.patch.n_tokens, self.cfg.embed_dim):
            raise ContractError(
                f"vit expects tokens {(self.cfg.patch.n_tokens, self.cfg.embed_dim)},"
                f" got {tokens.shape}")
        for blk in self.blocks:
            tokens = blk(tokens)
        return tokens

    def out_grid(self) -> int:
        return self.cfg.patch.grid


# ---------------------------------------------------------------------------
# window machinery


def window_partition(x: Tensor, window: int) -> Tensor:
    """[H, W, D] -> [nW, window*window, D], windows in lexicographic order."""
    h, w, d = x.shape
    if h % window or w % window:
        raise ContractError(f"grid {h}x{w} not divisible by window {window}")
    nh, nw = h // window, w // window
    x = x.reshape(nh, window, nw, window, d)
    x = x.transpose((0, 2, 1, 3, 4))
    return x.reshape(nh * nw, window * window, d)


def window_reverse(x: Tensor, window: int, h: int, w: int) -> Tensor:
    """Inverse of window_partition; bit-exact (pure index permutation)."""
    nh, nw = h // window, w // window
    x = x.reshape(nh, nw, window, window, x.shape[2])
    x = x.transpose((0, 2, 1, 3, 4))
    return x.reshape(h, w, x.shape[4])


def attention_region_mask(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """Additive [nW, T, T] mask for shifted windows.

    After the cyclic shift, windows touching the bottom/right edge mix tokens
    from opposite sides of the original image.  Positions are labeled by the
    contiguous region they came from (three slabs per axis in post-shift
    coordinates); pairs with different labels get MASK_FILL so attention only
    ties together tokens that were spatial neighbours before the shift.
    """
    n_win = (h // window) * (w // window)
    t = window * window
    if shift == 0:
        return np.zeros((n_win, t, t), dtype=np.float64)
    labels = np.zeros((h, w), dtype=np.int64)
    cnt = 0
    spans = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    for hs in spans:
        for ws in spans:
            labels[hs, ws] = cnt
            cnt += 1
    lab = labels.reshape(h // window, window, w // window, window)
    lab = lab.transpose(0, 2, 1, 3).reshape(n_win, t)
    diff = lab[:, :, None] != lab[:, None, :]
    return np.where(diff, MASK_FILL, 0.0)


def shifted_window_attention(x: Tensor, attn: MultiHeadAttention, window: int,
                             shift: int) -> Tensor:
    """Cyclic shift, windowed attention with region mask, inverse shift."""
    h, w, d = x.shape
    if not 0 <= shift < window:
        raise ContractError(f"shift {shift} must satisfy 0 <= shift < window {window}")
    if shift:
        x = T.roll(x, (-shift, -shift), (0, 1))
    mask = attention_region_mask(h, w, window, shift)
    wins = window_partition(x, window)
    wins = attn(wins, mask)
    x = window_reverse(wins, window, h, w)
    if shift:
        x = T.roll(x, (shift, shift), (0, 1))
    return x


class PatchMerging:
    """Concatenate 2x2 token neighborhoods (4D features) and project to 2D."""

    def __init__(self, params, prefix, dim, rng):
        self.dim = dim
        self.w = init_param(params, prefix + ".w", (4 * dim, 2 * dim), rng)
        self.b = init_param(params, prefix + ".b", (2 * dim,), rng, "zeros")

    def __call__(self, x: Tensor) -> Tensor:
        h, w, d = x.shape
        if h % 2 or w % 2:
            raise ContractError(f"patch merging needs even dims, got {h}x{w}")
        # group order: (r0c0, r0c1, r1c0, r1c1) per 2x2 neighborhood
        x = x.reshape(h // 2, 2, w // 2, 2, d)
        x = x.transpose((0, 2, 1, 3, 4))
        x = x.reshape(h // 2, w // 2, 4 * d)
        return T.dense(x, self.w, self.b)


class SwinBlock:
    def __init__(self, params, prefix, dim, heads, window, shift, mlp_ratio, rng):
        self.window, self.shift = window, shift
        self.ln1 = LayerNormParams(params, prefix + ".ln1", dim, rng)
        self.attn = MultiHeadAttention(params, prefix + ".attn", dim, heads, rng)
        self.ln2 = LayerNormParams(params, prefix + ".ln2", dim, rng)
        self.mlp = Mlp(params, prefix + ".mlp", dim, int(dim * mlp_ratio), rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + shifted_window_attention(self.ln1(x), self.attn, self.window,
                                         self.shift)
        return x + self.mlp(self.ln2(x))


class SwinEncoder:
    """Stages of windowed blocks (shift window/2 on odd blocks) + merging."""

    def __init__(self, params, prefix, cfg: SwinConfig, rng):
        self.cfg = cfg
        self.stages = []
        self.merges = []
        dims = cfg.stage_dims
        for s, depth in enumerate(cfg.stage_depths):
            blocks = []
            for i in range(depth):
                shift = 0 if i % 2 == 0 else cfg.window_size // 2
                blocks.append(SwinBlock(params, f"{prefix}.stage{s}.block{i}",
                                        dims[s], cfg.heads_per_stage[s],
                                        cfg.window_size, shift, cfg.mlp_ratio,
                                        rng))
            self.stages.append(blocks)
            if s + 1 < len(cfg.stage_depths):
                self.merges.append(PatchMerging(params, f"{prefix}.merge{s}",
                                                dims[s], rng))

    def __call__(self, tokens: Tensor) -> Tensor:
        """[N, D] tokens (row-major grid order) -> [H', W', D'] feature grid."""
        g = self.cfg.patch.grid
        if tokens.shape != (g * g, self.cfg.embed_dim):
            raise ContractError(
                f"swin expects tokens {(g * g, self.cfg.embed_dim)}, got "
                f"{tokens.shape}")
        x = tokens.reshape(g, g, self.cfg.embed_dim)
        for s, blocks in enumerate(self.stages):
            for blk in blocks:
                x = blk(x)
            if s < len(self.merges):
                x = self.merges[s](x)
        return x

    def out_grid(self) -> int:
        return self.cfg.patch.grid >> (len(self.cfg.stage_depths) - 1)
