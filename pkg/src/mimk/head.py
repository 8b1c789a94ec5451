"""Reconstruction heads and the masked L1 training loss.

The default head is a single linear map per feature-grid position producing
f*f pixel values, rearranged to full resolution by pixel shuffle.  A small
convolutional head (two 3x3 layers with a gelu between) is available as an
alternative.  Pixel-shuffle layout: output channel fy*f + fx lands at pixel
(y*f + fy, x*f + fx) for feature position (y, x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import init_param
from .errors import ContractError
from .masking import PatchMask, mask_to_pixels
from .rng import SplitMix64
from .tensor import Tensor


@dataclass(frozen=True)
class HeadConfig:
    in_dim: int
    upsample_factor: int
    out_channels: int = 1

    def __post_init__(self):
        if self.upsample_factor < 1:
            raise ContractError(
                f"upsample factor must be >= 1, got {self.upsample_factor}")
        if self.out_channels != 1:
            raise ContractError("only single-channel output is supported")


def pixel_shuffle(x: Tensor, f: int) -> Tensor:
    """[H', W', f*f] -> [H'*f, W'*f]; pure index permutation, hence invertible."""
    h, w, c = x.shape
    if c != f * f:
        raise ContractError(f"pixel shuffle expects {f * f} channels, got {c}")
    x = x.reshape(h, w, f, f)
    x = x.transpose((0, 2, 1, 3))  # [H', f, W', f]
    return x.reshape(h * f, w * f)


def pixel_unshuffle(img: np.ndarray, f: int) -> np.ndarray:
    """Inverse rearrangement of pixel_shuffle for plain arrays (test helper)."""
    hf, wf = img.shape
    h, w = hf // f, wf // f
    return img.reshape(h, f, w, f).transpose(0, 2, 1, 3).reshape(h, w, f * f)


class LinearHead:
    """Per-position linear projection to f*f pixels + pixel shuffle."""

    def __init__(self, params, prefix, cfg: HeadConfig, rng: SplitMix64):
        self.cfg = cfg
        f = cfg.upsample_factor
        self.w = init_param(params, prefix + ".w", (cfg.in_dim, f * f), rng)
        self.b = init_param(params, prefix + ".b", (f * f,), rng, "zeros")

    def __call__(self, feats: Tensor) -> Tensor:
        h, w, d = feats.shape
        if d != self.cfg.in_dim:
            raise ContractError(
                f"head expects feature dim {self.cfg.in_dim}, got {d}")
        x = T.dense(feats, self.w, self.b)
        out = pixel_shuffle(x, self.cfg.upsample_factor)
        return out.reshape(1, *out.shape)


class ConvHead:
    """Two 3x3 convolutions with a gelu, then pixel shuffle."""

    def __init__(self, params, prefix, cfg: HeadConfig, rng: SplitMix64):
        self.cfg = cfg
        d, f = cfg.in_dim, cfg.upsample_factor
        self.w1 = init_param(params, prefix + ".w1", (d, d, 3, 3), rng)
        self.b1 = init_param(params, prefix + ".b1", (d,), rng, "zeros")
        self.w2 = init_param(params, prefix + ".w2", (f * f, d, 3, 3), rng)
        self.b2 = init_param(params, prefix + ".b2", (f * f,), rng, "zeros")

    def __call__(self, feats: Tensor) -> Tensor:
        h, w, d = feats.shape
        if d != self.cfg.in_dim:
            raise ContractError(
                f"head expects feature dim {self.cfg.in_dim}, got {d}")
        x = feats.transpose((2, 0, 1))  # [D, H', W']
        x = T.conv2d(T.pad2d(x, 1), self.w1) + self.b1.reshape(d, 1, 1)
        x = T.gelu(x)
        x = T.conv2d(T.pad2d(x, 1), self.w2)
        f = self.cfg.upsample_factor
        x = x + self.b2.reshape(f * f, 1, 1)
        out = pixel_shuffle(x.transpose((1, 2, 0)), f)
        return out.reshape(1, *out.shape)


def make_head(kind: str, params, prefix, cfg: HeadConfig, rng: SplitMix64):
    if kind == "linear":
        return LinearHead(params, prefix, cfg, rng)
    if kind == "conv":
        return ConvHead(params, prefix, cfg, rng)
    raise ContractError(f"unknown head kind {kind!r} (expected linear or conv)")


def masked_l1_loss(pred: Tensor, target: np.ndarray, mask: PatchMask,
                   mode: str = "masked_only") -> Tensor:
    """Mean absolute error, either over masked-patch pixels only or all pixels."""
    if mode not in ("masked_only", "full"):
        raise ContractError(f"unknown loss mode {mode!r}")
    target = np.asarray(target, dtype=np.float64)
    if pred.shape[-2:] != target.shape:
        raise ContractError(
            f"pred {pred.shape} and target {target.shape} do not match")
    h, w = target.shape
    if h % mask.grid_h or w % mask.grid_w:
        raise ContractError(
            f"mask grid {mask.grid_h}x{mask.grid_w} does not tile image {h}x{w}")
    patch = h // mask.grid_h
    if w // mask.grid_w != patch:
        raise ContractError("mask patches must be square")
    if mode == "masked_only":
        if mask.n_masked == 0:
            raise ContractError("masked_only loss needs at least one masked patch")
        weights = mask_to_pixels(mask, patch)
    else:
        weights = np.ones((h, w), dtype=np.float64)
    flat = pred.reshape(h, w)
    diff = T.tabs(flat - Tensor(target))
    return T.tsum(diff * Tensor(weights)) / float(weights.sum())
