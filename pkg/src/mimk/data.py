"""Dataset plumbing: grayscale PNG I/O, cropping, splits, and augmentation.

Two sources feed the trainer: the built-in phantom generator (items are
``phantom://SIZE/SEED`` pseudo-paths) and a flat directory of grayscale PNGs.
Both yield fully sampled k-space magnitude targets in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ContractError, DataError
from .kspace import generate_phantom, kspace_magnitude_image, random_phantom_spec
from .rng import SplitMix64, derive_seed


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


# ---------------------------------------------------------------------------
# PNG I/O


def load_grayscale(path) -> np.ndarray:
    """Read an 8-bit PNG as floats in [0, 1].

    Grayscale files map value/255; RGB and RGBA files use the red channel
    (gray images are often saved with duplicated channels) and ignore alpha.
    """
    try:
        with Image.open(path) as im:
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode in ("RGB", "RGBA"):
        return arr[..., 0].astype(np.float64) / 255.0
    raise DataError(f"unsupported image mode {mode!r} in {path} "
                    "(expected 8-bit grayscale, RGB, or RGBA)")


def save_grayscale_png(path, img: np.ndarray) -> None:
    """Write floats in [0, 1] as an 8-bit grayscale PNG (values clipped)."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.rint(arr * 255.0).astype(np.uint8), mode="L").save(path)


def save_panel_png(path, images: list[np.ndarray], sep: int = 4) -> None:
    """Save images side by side, separated by white columns (comparison panels)."""
    if not images:
        raise ContractError("panel needs at least one image")
    h = images[0].shape[0]
    for im in images:
        if im.shape[0] != h:
            raise ContractError("panel images must share height")
    cols = []
    for i, im in enumerate(images):
        if i:
            cols.append(np.ones((h, sep), dtype=np.float64))
        cols.append(np.clip(np.asarray(im, dtype=np.float64), 0.0, 1.0))
    save_grayscale_png(path, np.concatenate(cols, axis=1))


# ---------------------------------------------------------------------------
# geometry


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    """Crop the centered size x size window; offsets floor((dim - size) / 2)."""
    img = np.asarray(img)
    h, w = img.shape
    if h < size or w < size:
        raise ContractError(f"cannot center-crop {h}x{w} image to {size}")
    r0 = (h - size) // 2
    c0 = (w - size) // 2
    return img[r0:r0 + size, c0:c0 + size].copy()


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers (the usual align_corners=False)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return top + (bot - top) * fy


# ---------------------------------------------------------------------------
# splits and manifests


def split_dataset(n_items: int, seed: int) -> list[str]:
    """Tag each index train/val: seeded shuffle, first round(0.8 n) train."""
    if n_items < 2:
        raise ContractError(f"need at least 2 items to split, got {n_items}")
    order = SplitMix64(seed).permutation(n_items)
    n_train = _round_half_up(0.8 * n_items)
    tags = ["val"] * n_items
    for i in order[:n_train]:
        tags[i] = "train"
    return tags


@dataclass
class DatasetManifest:
    """Immutable item list with split tags; serialized one path<TAB>split per line."""

    items: list[tuple[str, str]] = field(default_factory=list)
    seed: int = 0
    source: str = "phantom"

    def __post_init__(self):
        for _, tag in self.items:
            if tag not in ("train", "val"):
                raise ContractError(f"unknown split tag {tag!r}")

    def split(self, tag: str) -> list[str]:
        return [p for p, t in self.items if t == tag]

    def save_text(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# seed={self.seed} source={self.source}\n")
            for p, tag in self.items:
                fh.write(f"{p}\t{tag}\n")

    @classmethod
    def load_text(cls, path) -> "DatasetManifest":
        seed, source, items = 0, "phantom", []
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    for tok in line[1:].split():
                        if tok.startswith("seed="):
                            seed = int(tok[5:])
                        elif tok.startswith("source="):
                            source = tok[7:]
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataError(f"bad manifest line {line!r} in {path}")
                items.append((parts[0], parts[1]))
        return cls(items=items, seed=seed, source=source)


def phantom_manifest(n_items: int, size: int, seed: int) -> DatasetManifest:
    """Manifest of n synthetic phantoms, split 80/20 with the same seed."""
    tags = split_dataset(n_items, seed)
    items = [(f"phantom://{size}/{derive_seed(seed, i)}", tags[i])
             for i in range(n_items)]
    return DatasetManifest(items=items, seed=seed, source="phantom")


def png_dir_manifest(paths: list[str], seed: int) -> DatasetManifest:
    """Manifest over a flat directory listing, sorted then split for stability."""
    paths = sorted(str(p) for p in paths)
    tags = split_dataset(len(paths), seed)
    return DatasetManifest(items=list(zip(paths, tags)), seed=seed,
                           source="png_dir")


def load_target(entry: str, crop_size: int | None = None, n_coils: int = 4,
                coil_seed: int = 0) -> np.ndarray:
    """Materialize one manifest entry as a k-space magnitude target image."""
    if entry.startswith("phantom://"):
        body = entry[len("phantom://"):]
        try:
            size_s, seed_s = body.split("/")
            size, pseed = int(size_s), int(seed_s)
        except ValueError as exc:
            raise DataError(f"bad phantom entry {entry!r}") from exc
        img = generate_phantom(random_phantom_spec(size, pseed))
        return kspace_magnitude_image(img, n_coils=n_coils,
                                      seed=derive_seed(coil_seed, pseed))
    img = load_grayscale(entry)
    if crop_size is not None:
        img = center_crop(img, crop_size)
    return img


# ---------------------------------------------------------------------------
# augmentation


_POLICIES = ("none", "flip_crop", "normalize")


def augment(img: np.ndarray, policy: str, seed: int) -> np.ndarray:
    """Apply one augmentation policy; `none` is bit-identical passthrough."""
    if policy not in _POLICIES:
        raise ContractError(
            f"unknown augmentation policy {policy!r}, expected one of {_POLICIES}")
    img = np.asarray(img, dtype=np.float64)
    if policy == "none":
        return img
    if policy == "flip_crop":
        rng = SplitMix64(seed)
        out = img[:, ::-1].copy() if rng.next_float() < 0.5 else img.copy()
        h, w = out.shape
        ch = max(1, _round_half_up(0.875 * h))
        cw = max(1, _round_half_up(0.875 * w))
        r0 = rng.next_below(h - ch + 1)
        c0 = rng.next_below(w - cw + 1)
        return bilinear_resize(out[r0:r0 + ch, c0:c0 + cw], h, w)
    # normalize: per-image standardization, remapped back to [0,1] for storage
    std = float(img.std())
    if std == 0.0:
        return np.zeros_like(img)
    z = (img - img.mean()) / std
    lo, hi = float(z.min()), float(z.max())
    if hi == lo:  # constant up to rounding; avoid 0/0
        return np.zeros_like(img)
    return (z - lo) / (hi - lo)
