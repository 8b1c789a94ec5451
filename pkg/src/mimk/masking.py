"""Input corruption: random patch masks and Cartesian line masks.

Patch masks operate on the patch grid of the encoder (SimMIM-style); line
masks zero full image rows the way an accelerated Cartesian acquisition
skips phase-encode lines, always keeping a fully sampled center band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .rng import SplitMix64


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


# ---------------------------------------------------------------------------
# patch masks


@dataclass(frozen=True)
class PatchMask:
    """Boolean grid over patches; True marks a masked (corrupted) patch."""

    grid: np.ndarray  # (gh, gw) bool
    ratio: float
    seed: int

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=bool)
        if g.ndim != 2:
            raise ContractError(f"patch mask grid must be 2-d, got shape {g.shape}")
        object.__setattr__(self, "grid", g)

    @property
    def grid_h(self) -> int:
        return self.grid.shape[0]

    @property
    def grid_w(self) -> int:
        return self.grid.shape[1]

    @property
    def n_masked(self) -> int:
        return int(self.grid.sum())

    def flat(self) -> np.ndarray:
        """Mask as a flat float vector in patch raster order (1 = masked)."""
        return self.grid.reshape(-1).astype(np.float64)

    def spec_string(self) -> str:
        return f"patch ratio={self.ratio:g} seed={self.seed} grid={self.grid_h}x{self.grid_w}"


def random_patch_mask(grid_h: int, grid_w: int, ratio: float, seed: int) -> PatchMask:
    """Mask exactly round(ratio * n_patches) patches, chosen by seeded shuffle.

    The count uses half-up rounding so e.g. a 0.5 ratio on an odd patch count
    is reproducible across platforms; selection is a Fisher-Yates permutation
    of patch indices, so any two ratios with the same seed are nested.
    """
    if grid_h < 1 or grid_w < 1:
        raise ContractError(f"patch grid must be positive, got {grid_h}x{grid_w}")
    if not 0.0 <= ratio <= 1.0:
        raise ContractError(f"mask ratio must lie in [0, 1], got {ratio}")
    n = grid_h * grid_w
    count = _round_half_up(ratio * n)
    order = SplitMix64(seed).permutation(n)
    grid = np.zeros(n, dtype=bool)
    grid[order[:count]] = True
    return PatchMask(grid.reshape(grid_h, grid_w), ratio, seed)


def mask_to_pixels(mask: PatchMask, patch: int) -> np.ndarray:
    """Expand the patch grid to a per-pixel float map (1 inside masked patches)."""
    if patch < 1:
        raise ContractError(f"patch size must be >= 1, got {patch}")
    return np.kron(mask.grid.astype(np.float64), np.ones((patch, patch)))


def apply_patch_blackout(img: np.ndarray, mask: PatchMask, patch: int) -> np.ndarray:
    """Zero the pixels of masked patches (visualization / pixel-space baseline)."""
    img = np.asarray(img, dtype=np.float64)
    gh, gw = mask.grid_h, mask.grid_w
    if img.shape != (gh * patch, gw * patch):
        raise ContractError(
            f"image shape {img.shape} does not tile into {gh}x{gw} patches of {patch}")
    return img * (1.0 - mask_to_pixels(mask, patch))


# ---------------------------------------------------------------------------
# Cartesian line masks


@dataclass(frozen=True)
class LineMask:
    """Row-undersampling pattern: fully sampled center plus every k-th row."""

    h: int
    acceleration: int
    center_fraction: float

    def __post_init__(self):
        if self.h < 1:
            raise ContractError(f"line mask height must be >= 1, got {self.h}")
        if self.acceleration < 1:
            raise ContractError(
                f"acceleration must be >= 1, got {self.acceleration}")
        if not 0.0 <= self.center_fraction <= 1.0:
            raise ContractError(
                f"center fraction must lie in [0, 1], got {self.center_fraction}")

    def kept_rows(self) -> np.ndarray:
        """Sorted indices of sampled rows (center band union strided rows)."""
        keep = np.zeros(self.h, dtype=bool)
        n_center = int(np.floor(self.h * self.center_fraction))
        start = (self.h - n_center) // 2
        keep[start:start + n_center] = True
        keep[::self.acceleration] = True
        return np.flatnonzero(keep)

    def row_weights(self) -> np.ndarray:
        """Float vector over rows, 1 where sampled, 0 where skipped."""
        w = np.zeros(self.h, dtype=np.float64)
        w[self.kept_rows()] = 1.0
        return w

    def spec_string(self) -> str:
        return (f"line h={self.h} acc={self.acceleration} "
                f"cf={self.center_fraction:g}")


def apply_line_mask(img: np.ndarray, mask: LineMask) -> np.ndarray:
    """Zero skipped rows of a (centered k-space magnitude) image."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] != mask.h:
        raise ContractError(
            f"line mask height {mask.h} does not match image rows {img.shape[0]}")
    return img * mask.row_weights()[:, None]


def line_mask_patch_grid(mask: LineMask, patch: int, grid_w: int) -> np.ndarray:
    """Project a row mask onto the patch grid: a patch row is masked when any
    of its image rows is skipped (those patches contain corrupted pixels)."""
    if mask.h % patch:
        raise ContractError(
            f"line mask height {mask.h} is not a multiple of patch {patch}")
    skipped = mask.row_weights() == 0.0
    rows = skipped.reshape(mask.h // patch, patch).any(axis=1)
    return np.repeat(rows[:, None], grid_w, axis=1)


# ---------------------------------------------------------------------------
# mask spec strings (config / CLI surface)


def parse_mask_spec(text: str):
    """Parse ``patch ratio=.. seed=.. grid=HxW`` / ``line h=.. acc=.. cf=..``."""
    parts = text.split()
    if not parts:
        raise ContractError("empty mask spec")
    kind, kvs = parts[0], {}
    for p in parts[1:]:
        if "=" not in p:
            raise ContractError(f"bad mask spec token {p!r} in {text!r}")
        k, v = p.split("=", 1)
        kvs[k] = v
    try:
        if kind == "patch":
            gh, gw = kvs["grid"].split("x")
            return random_patch_mask(int(gh), int(gw), float(kvs["ratio"]),
                                     int(kvs["seed"]))
        if kind == "line":
            return LineMask(int(kvs["h"]), int(kvs["acc"]), float(kvs["cf"]))
    except (KeyError, ValueError) as exc:
        raise ContractError(f"bad mask spec {text!r}: {exc}") from exc
    raise ContractError(f"unknown mask kind {kind!r}")
