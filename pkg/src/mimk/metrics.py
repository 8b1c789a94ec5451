"""Image quality metrics and the training metrics table.

SSIM follows the standard uniform-window form on the valid (fully inside)
windows with population statistics.  The numerator and denominator are
written so that identical inputs give exactly 1.0 in floating point:
``2*a*b`` and ``a*a + b*b`` agree bitwise when ``a == b`` because doubling
is an exact power-of-two scaling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError


@dataclass(frozen=True)
class SsimParams:
    window: int = 7
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0


def _window_means(img: np.ndarray, w: int) -> np.ndarray:
    return sliding_window_view(img, (w, w)).mean(axis=(-2, -1))


def ssim(x: np.ndarray, y: np.ndarray, params: SsimParams = SsimParams()) -> float:
    """Mean structural similarity over all valid windows."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractError(f"ssim inputs differ in shape: {x.shape} vs {y.shape}")
    if x.ndim != 2:
        raise ContractError(f"ssim expects 2-d images, got shape {x.shape}")
    w = params.window
    if min(x.shape) < w:
        raise ContractError(
            f"image {x.shape} smaller than ssim window {w}x{w}")
    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2
    mx = _window_means(x, w)
    my = _window_means(y, w)
    sxx = _window_means(x * x, w) - mx * mx
    syy = _window_means(y * y, w) - my * my
    sxy = _window_means(x * y, w) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def rmse(x: np.ndarray, y: np.ndarray) -> float:
    """Root mean squared error between two equally shaped arrays."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractError(f"rmse inputs differ in shape: {x.shape} vs {y.shape}")
    return float(np.sqrt(np.mean((x - y) ** 2)))


def grad_norm(params: dict) -> float:
    """Global L2 norm over the gradients of a named parameter dict."""
    total = 0.0
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
        total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# metrics table


METRICS_HEADER = ("epoch", "train_loss", "val_loss", "train_ssim", "val_ssim",
                  "grad_norm", "lr")


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    val_loss: float
    train_ssim: float
    val_ssim: float
    grad_norm: float
    lr: float

    def to_csv_fields(self) -> list[str]:
        out = [str(self.epoch)]
        for f in fields(self)[1:]:
            out.append("%.6g" % getattr(self, f.name))
        return out


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    """Write the metrics table; formatting is fixed so reruns are byte-equal."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for r in rows:
            fh.write(",".join(r.to_csv_fields()) + "\n")


def read_metrics_csv(path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_HEADER:
            raise ContractError(f"unexpected metrics header in {path}: {header}")
        for rec in reader:
            rows.append(MetricsRow(int(rec[0]), *(float(v) for v in rec[1:])))
    return rows
