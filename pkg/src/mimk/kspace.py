"""Synthetic MR data: phantoms, coil sensitivities, FFTs, and k-space images.

The Fourier transforms are unitary radix-2 FFTs (1/sqrt(N) per direction), so
round trips are exact inverses and Parseval holds without bookkeeping.  Grids
must have power-of-two sides; images with other sizes are centered in a
zero-filled power-of-two canvas before transforming.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .backend import kernels
from .errors import ContractError, DataError
from .rng import SplitMix64

# ---------------------------------------------------------------------------
# complex grids


class ComplexGrid:
    """2-D complex array (k-space or complex image), row-major float64 parts."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data)
        if arr.ndim != 2:
            raise ContractError(f"ComplexGrid needs a 2-d array, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr, dtype=np.complex128)

    @classmethod
    def zeros(cls, h: int, w: int) -> "ComplexGrid":
        return cls(np.zeros((h, w), dtype=np.complex128))

    @classmethod
    def from_real(cls, img: np.ndarray) -> "ComplexGrid":
        return cls(np.asarray(img, dtype=np.float64).astype(np.complex128))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def re(self) -> np.ndarray:
        return self.data.real

    @property
    def im(self) -> np.ndarray:
        return self.data.imag

    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)

    def energy(self) -> float:
        return float((self.data.real ** 2 + self.data.imag ** 2).sum())

    def copy(self) -> "ComplexGrid":
        return ComplexGrid(self.data.copy())

    def save_text(self, path) -> None:
        """Textual fixture format: header ``H W``, then H*W lines ``re im``."""
        with open(path, "w") as fh:
            fh.write(f"{self.height} {self.width}\n")
            for v in self.data.reshape(-1):
                fh.write(f"{float(v.real)!r} {float(v.imag)!r}\n")

    @classmethod
    def load_text(cls, path) -> "ComplexGrid":
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise DataError(f"bad ComplexGrid header in {path}")
            h, w = int(header[0]), int(header[1])
            vals = np.empty(h * w, dtype=np.complex128)
            for i in range(h * w):
                line = fh.readline().split()
                if len(line) != 2:
                    raise DataError(f"truncated ComplexGrid payload in {path}")
                vals[i] = complex(float(line[0]), float(line[1]))
        return cls(vals.reshape(h, w))


# ---------------------------------------------------------------------------
# unitary 2-D FFT (radix-2, power-of-two sides)


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _fft_plan(n: int, inverse: bool):
    """Bit-reversal permutation and concatenated per-stage twiddle factors."""
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev = (rev << 1) | ((idx >> b) & 1)
    sign = 2j if inverse else -2j
    tw = [np.exp(sign * np.pi * np.arange(m) / (2 * m)) for m in
          (1 << s for s in range(max(bits, 0)))]
    twiddles = np.concatenate(tw) if tw else np.zeros(0, dtype=np.complex128)
    return rev, np.ascontiguousarray(twiddles, dtype=np.complex128)


def _fft2_raw(z: np.ndarray, inverse: bool) -> np.ndarray:
    h, w = z.shape
    out = np.ascontiguousarray(z, dtype=np.complex128).copy()
    rev, tw = _fft_plan(w, inverse)
    kernels.fft_rows(out, rev, tw)
    out = np.ascontiguousarray(out.T)
    rev, tw = _fft_plan(h, inverse)
    kernels.fft_rows(out, rev, tw)
    return np.ascontiguousarray(out.T)


def _check_pow2(grid: ComplexGrid, op: str) -> None:
    if not (_is_pow2(grid.height) and _is_pow2(grid.width)):
        raise ContractError(
            f"{op} requires power-of-two dimensions, got {grid.height}x{grid.width}")


def fft2(img: ComplexGrid) -> ComplexGrid:
    """Unitary 2-D DFT; Parseval holds exactly up to rounding."""
    _check_pow2(img, "fft2")
    scale = 1.0 / np.sqrt(img.height * img.width)
    return ComplexGrid(_fft2_raw(img.data, inverse=False) * scale)


def ifft2(k: ComplexGrid) -> ComplexGrid:
    """Inverse of fft2 (also unitary)."""
    _check_pow2(k, "ifft2")
    scale = 1.0 / np.sqrt(k.height * k.width)
    return ComplexGrid(_fft2_raw(k.data, inverse=True) * scale)


def fftshift(arr: np.ndarray) -> np.ndarray:
    """Move the zero-frequency bin to the grid center (pure permutation)."""
    return np.roll(np.roll(arr, arr.shape[0] // 2, axis=0), arr.shape[1] // 2, axis=1)


def next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def pad_center_pow2(img: np.ndarray) -> np.ndarray:
    """Center a real image in a zero-filled power-of-two square canvas."""
    h, w = img.shape
    side = next_pow2(max(h, w))
    if (h, w) == (side, side):
        return img
    out = np.zeros((side, side), dtype=np.float64)
    r0, c0 = (side - h) // 2, (side - w) // 2
    out[r0:r0 + h, c0:c0 + w] = img
    return out


# ---------------------------------------------------------------------------
# phantoms


@dataclass(frozen=True)
class Ellipse:
    """Additive ellipse in normalized [-1, 1] image coordinates."""

    cx: float
    cy: float
    a: float
    b: float
    theta: float
    intensity: float


@dataclass(frozen=True)
class PhantomSpec:
    size: int
    ellipses: tuple[Ellipse, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.size < 16:
            raise ContractError(f"phantom size must be >= 16, got {self.size}")


def _pixel_grid(size: int):
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    return np.meshgrid(c, c)  # x varies along columns, y along rows


def generate_phantom(spec: PhantomSpec) -> np.ndarray:
    """Render additive ellipses; deterministic, clamped to [0, 1]."""
    xs, ys = _pixel_grid(spec.size)
    img = np.zeros((spec.size, spec.size), dtype=np.float64)
    for e in spec.ellipses:
        ct, st = np.cos(e.theta), np.sin(e.theta)
        u = (xs - e.cx) * ct + (ys - e.cy) * st
        v = -(xs - e.cx) * st + (ys - e.cy) * ct
        inside = (u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0
        img[inside] += e.intensity
    return np.clip(img, 0.0, 1.0)


def random_phantom_spec(size: int, seed: int) -> PhantomSpec:
    """Shepp-Logan-flavoured random phantom: an outer skull plus inner blobs."""
    rng = SplitMix64(seed)
    ells = [Ellipse(0.0, 0.0,
                    0.78 + 0.12 * rng.next_float(),
                    0.78 + 0.12 * rng.next_float(),
                    0.0, 0.30 + 0.15 * rng.next_float())]
    for _ in range(3 + rng.next_below(5)):
        ells.append(Ellipse(
            cx=(rng.next_float() - 0.5) * 0.9,
            cy=(rng.next_float() - 0.5) * 0.9,
            a=0.08 + 0.32 * rng.next_float(),
            b=0.08 + 0.32 * rng.next_float(),
            theta=rng.next_float() * np.pi,
            intensity=(rng.next_float() - 0.35) * 0.6,
        ))
    return PhantomSpec(size=size, ellipses=tuple(ells), seed=seed)


# ---------------------------------------------------------------------------
# coils and combination


@dataclass
class CoilSet:
    coils: list[ComplexGrid] = field(default_factory=list)

    def __post_init__(self):
        if len(self.coils) < 1:
            raise ContractError("CoilSet needs at least one coil")
        h, w = self.coils[0].height, self.coils[0].width
        for c in self.coils[1:]:
            if (c.height, c.width) != (h, w):
                raise ContractError("coil grids must share dimensions")

    def __len__(self):
        return len(self.coils)


def simulate_coils(img: np.ndarray, n_coils: int, seed: int) -> CoilSet:
    """Multiply the image by smooth complex sensitivities, one per coil.

    Coil bumps sit at equally spaced positions on the border circle with
    unit peak magnitude; a single coil degenerates to uniform sensitivity 1.
    """
    if n_coils < 1:
        raise ContractError(f"n_coils must be >= 1, got {n_coils}")
    img = np.asarray(img, dtype=np.float64)
    if n_coils == 1:
        return CoilSet([ComplexGrid.from_real(img)])
    xs, ys = _rect_grid(img.shape)
    rng = SplitMix64(seed)
    theta0 = rng.next_float() * 2.0 * np.pi
    coils = []
    for c in range(n_coils):
        ang = theta0 + 2.0 * np.pi * c / n_coils
        cx, cy = np.cos(ang), np.sin(ang)
        sigma = 0.9 + 0.25 * rng.next_float()
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        mag = np.exp(-d2 / (2.0 * sigma * sigma))
        mag /= mag.max()
        phase = (2.0 * np.pi * rng.next_float()
                 + (rng.next_float() - 0.5) * 0.6 * xs
                 + (rng.next_float() - 0.5) * 0.6 * ys)
        coils.append(ComplexGrid(img * mag * np.exp(1j * phase)))
    return CoilSet(coils)


def _rect_grid(shape):
    h, w = shape
    x = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    y = (np.arange(h) + 0.5) / h * 2.0 - 1.0
    return np.meshgrid(x, y)


def rss_combine(coils: CoilSet) -> np.ndarray:
    """Root-sum-squares combination: sqrt of summed squared magnitudes."""
    acc = np.zeros((coils.coils[0].height, coils.coils[0].width), dtype=np.float64)
    for c in coils.coils:
        acc += c.data.real ** 2 + c.data.imag ** 2
    return np.sqrt(acc)


# ---------------------------------------------------------------------------
# k-space renderings


def _log_normalize(mag: np.ndarray) -> np.ndarray:
    v = np.log1p(mag)
    m = v.max()
    if m == 0.0:
        return np.zeros_like(v)
    return v / m


def to_log_magnitude(k: ComplexGrid) -> np.ndarray:
    """Log-compressed magnitude rendering in [0, 1]; all-zero maps to all-zero."""
    return _log_normalize(k.magnitude())


def kspace_magnitude_image(img: np.ndarray, n_coils: int = 4, seed: int = 0,
                           centered: bool = True) -> np.ndarray:
    """Full pipeline: image -> coils -> per-coil k-space -> RSS -> log render.

    The result is the fully sampled k-space magnitude image the models train
    on, DC-centered so Cartesian center bands correspond to low frequencies.
    """
    padded = pad_center_pow2(np.asarray(img, dtype=np.float64))
    coils = simulate_coils(padded, n_coils, seed)
    kmag = rss_combine(CoilSet([fft2(c) for c in coils.coils]))
    if centered:
        kmag = fftshift(kmag)
    return _log_normalize(kmag)


def coil_kspaces(img: np.ndarray, n_coils: int, seed: int) -> list[ComplexGrid]:
    """Per-coil centered k-space grids (used by the Cartesian line-mask path)."""
    padded = pad_center_pow2(np.asarray(img, dtype=np.float64))
    coils = simulate_coils(padded, n_coils, seed)
    return [ComplexGrid(fftshift(fft2(c).data)) for c in coils.coils]


def render_kspaces(kspaces: list[ComplexGrid]) -> np.ndarray:
    """RSS + log rendering of already-centered per-coil k-space grids."""
    return _log_normalize(rss_combine(CoilSet(list(kspaces))))
