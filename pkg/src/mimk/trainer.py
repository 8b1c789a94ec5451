"""Training loop: AdamW, warmup+cosine schedule, metrics, checkpoints.

One run is bitwise deterministic for a fixed seed: sample order, masks, and
initialization all derive from counter-based streams, evaluation runs with
gradients disabled, and the metrics CSV is formatted with fixed precision.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetManifest, augment, load_target, save_panel_png
from .errors import CheckpointError, ContractError, TrainingError
from .head import masked_l1_loss
from .masking import (LineMask, PatchMask, apply_line_mask,
                      apply_patch_blackout, line_mask_patch_grid,
                      mask_to_pixels, parse_mask_spec, random_patch_mask)
from .metrics import MetricsRow, grad_norm, ssim, write_metrics_csv
from .model import ModelConfig, SimMIM
from .rng import SplitMix64, derive_seed
from .tensor import Tape, Tensor, no_grad


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.05):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                raise TrainingError(
                    f"parameter {name!r} has no gradient at step {self.t}")
            if not np.all(np.isfinite(g)):
                raise TrainingError(
                    f"non-finite gradient in {name!r} at step {self.t}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / (1.0 - b1 ** self.t)
            vhat = v / (1.0 - b2 ** self.t)
            # decay is decoupled: applied to the raw parameter, not the moments
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class TrainRunConfig:
    epochs: int = 30
    batch_size: int = 1
    base_lr: float = 1e-3
    min_lr: float = 1e-5
    warmup_epochs: int = 2
    weight_decay: float = 0.05
    seed: int = 0
    mask_spec: str = "patch ratio=0.5 seed=0 grid=16x16"
    augmentation: str = "none"
    n_coils: int = 4
    crop_size: int = 0            # 0 = no crop (png_dir source only)
    sample_every: int = 10
    checkpoint_every: int = 10
    keep_checkpoints: int = 3

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch size must be >= 1, got {self.batch_size}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ContractError(
                f"warmup epochs {self.warmup_epochs} must be < epochs {self.epochs}")
        if self.checkpoint_every < 1 or self.keep_checkpoints < 1:
            raise ContractError("checkpoint cadence values must be >= 1")
        if self.sample_every < 0:
            raise ContractError("sample_every must be >= 0")


def lr_at(epoch_fraction: float, cfg: TrainRunConfig) -> float:
    """Linear warmup from 0 to base_lr, then cosine decay to min_lr."""
    f = float(epoch_fraction)
    wf = cfg.warmup_epochs / cfg.epochs
    if wf > 0.0 and f <= wf:
        return cfg.base_lr * (f / wf)
    t = (f - wf) / (1.0 - wf)
    return float(cfg.min_lr
                 + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + np.cos(np.pi * t)))


def _epoch_fraction(epoch: int, epochs: int) -> float:
    return epoch / max(1, epochs - 1)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: dict, path) -> None:
    """Text header (`name dtype dims...` lines, blank line) + raw f32 payload."""
    with open(path, "wb") as fh:
        for name, p in params.items():
            arr = np.asarray(p.data if isinstance(p, Tensor) else p)
            dims = " ".join(str(d) for d in arr.shape)
            line = f"{name} float32 {dims}".rstrip() + "\n"
            fh.write(line.encode("ascii"))
        fh.write(b"\n")
        for p in params.values():
            arr = np.asarray(p.data if isinstance(p, Tensor) else p)
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict:
    """Parse a checkpoint back into name -> float64 array (exact f32 values)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise CheckpointError(f"checkpoint {path} has no header terminator")
    try:
        header = blob[:sep].decode("ascii")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} header is not ASCII") from exc
    specs = []
    for line in header.splitlines():
        parts = line.split()
        if len(parts) < 2 or parts[1] != "float32":
            raise CheckpointError(f"bad checkpoint header line {line!r} in {path}")
        try:
            shape = tuple(int(d) for d in parts[2:])
        except ValueError as exc:
            raise CheckpointError(f"bad dims in header line {line!r}") from exc
        specs.append((parts[0], shape))
    payload = blob[sep + 2:]
    out = {}
    offset = 0
    for name, shape in specs:
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(
                f"checkpoint {path} payload truncated at {name!r}")
        out[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(
            f"checkpoint {path} has {len(payload) - offset} trailing bytes")
    return out


def load_into_model(model: SimMIM, state: dict) -> None:
    if set(state) != set(model.params):
        missing = set(model.params) - set(state)
        extra = set(state) - set(model.params)
        raise CheckpointError(
            f"checkpoint/model mismatch (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})")
    for name, arr in state.items():
        p = model.params[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {arr.shape} vs "
                f"model {p.data.shape}")
        p.data = arr.copy()


# ---------------------------------------------------------------------------
# stagnation heuristic


def detect_stagnation(rows: list[MetricsRow], window: int) -> bool:
    """Flag runs whose val loss has flat-lined while train loss keeps falling."""
    if window < 2:
        raise ContractError(f"stagnation window must be >= 2, got {window}")
    if len(rows) < window:
        raise ContractError(
            f"need at least {window} metric rows, got {len(rows)}")
    tail = rows[-window:]
    def rel_drop(first: float, last: float) -> float:
        if first == 0.0:
            return 0.0
        return (first - last) / abs(first)
    val = rel_drop(tail[0].val_loss, tail[-1].val_loss)
    train = rel_drop(tail[0].train_loss, tail[-1].train_loss)
    return abs(val) < 0.01 and train > 0.05


# ---------------------------------------------------------------------------
# masks per item


def _train_mask(base, seed: int, epoch: int, idx: int, grid: int):
    """Fresh random patch mask per (epoch, item); line masks are fixed."""
    if isinstance(base, LineMask):
        return base
    return random_patch_mask(grid, grid, base.ratio,
                             derive_seed(seed, 7, epoch, idx))


def _eval_mask(base, seed: int, idx: int, grid: int):
    """Evaluation masks depend only on the item, so epochs are comparable."""
    if isinstance(base, LineMask):
        return base
    return random_patch_mask(grid, grid, base.ratio, derive_seed(seed, 11, idx))


def _model_inputs(target: np.ndarray, mask, model: SimMIM):
    """Return (input image, patch mask) for one example.

    Patch masks corrupt at the token level inside the model, so the input
    image is the target itself.  Line masks corrupt the image (zeroed rows)
    and mark every patch touching a zeroed row as masked for the loss.
    """
    if isinstance(mask, LineMask):
        img = apply_line_mask(target, mask)
        grid = line_mask_patch_grid(mask, model.cfg.patch_size, model.grid)
        pmask = PatchMask(grid, ratio=float(grid.mean()), seed=0)
        return img, pmask, False
    return target, mask, True


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    rows: list[MetricsRow] = field(default_factory=list)
    step_grad_norms: list[float] = field(default_factory=list)
    best_val_ssim: float = -1.0
    checkpoints: list[str] = field(default_factory=list)
    model: SimMIM | None = None


def _forward_example(model: SimMIM, target: np.ndarray, mask, loss_mode: str):
    img, pmask, token_mask = _model_inputs(target, mask, model)
    pred = model.forward(img, pmask if token_mask else None)
    loss = masked_l1_loss(pred, target, pmask, loss_mode)
    return loss, pred


def reconstruct(model: SimMIM, target: np.ndarray, mask):
    """Composite reconstruction: predicted pixels inside masked patches,
    the (visible) input pixels everywhere else.  Only hidden content is
    model output; this is the image the loss actually supervises."""
    img, pmask, token_mask = _model_inputs(target, mask, model)
    with no_grad():
        pred = model.forward(img, pmask if token_mask else None)
    w = mask_to_pixels(pmask, model.cfg.patch_size)
    recon = img * (1.0 - w) + np.clip(pred.data, 0.0, 1.0) * w
    return recon, img, pmask


def _eval_item(model: SimMIM, target: np.ndarray, mask, loss_mode: str):
    img, pmask, token_mask = _model_inputs(target, mask, model)
    with no_grad():
        pred = model.forward(img, pmask if token_mask else None)
        loss = masked_l1_loss(pred, target, pmask, loss_mode)
    w = mask_to_pixels(pmask, model.cfg.patch_size)
    recon = img * (1.0 - w) + np.clip(pred.data, 0.0, 1.0) * w
    return float(loss.data), ssim(recon, target)


def eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("MIMK_THREADS", "1")))
    except ValueError:
        return 1


def evaluate_split(model: SimMIM, targets: list[np.ndarray], masks: list,
                   loss_mode: str) -> tuple[float, float]:
    """Mean (loss, ssim) over items; parallel over items, order-stable."""
    if not targets:
        return 0.0, 0.0
    workers = min(eval_threads(), len(targets))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda tm: _eval_item(model, tm[0], tm[1], loss_mode),
                zip(targets, masks)))
    else:
        results = [_eval_item(model, t, m, loss_mode)
                   for t, m in zip(targets, masks)]
    losses = [r[0] for r in results]
    ssims = [r[1] for r in results]
    return float(np.mean(losses)), float(np.mean(ssims))


def train(run: TrainRunConfig, manifest: DatasetManifest,
          model_cfg: ModelConfig, out_dir=None) -> TrainResult:
    """Run the full loop; returns metrics and writes run artifacts if out_dir."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    model = SimMIM(model_cfg)
    opt = AdamW(model.params, lr=run.base_lr, weight_decay=run.weight_decay)
    base_mask = parse_mask_spec(run.mask_spec)
    crop = run.crop_size if run.crop_size else None

    train_items = manifest.split("train")
    val_items = manifest.split("val")
    load = lambda e: load_target(e, crop_size=crop, n_coils=run.n_coils,
                                 coil_seed=run.seed)
    train_targets = [load(e) for e in train_items]
    val_targets = [load(e) for e in val_items]
    n_train = len(train_targets)
    if n_train == 0:
        raise ContractError("manifest has no train items")

    eval_train_masks = [_eval_mask(base_mask, run.seed, i, model.grid)
                        for i in range(n_train)]
    eval_val_masks = [_eval_mask(base_mask, run.seed, 10_000 + i, model.grid)
                      for i in range(len(val_targets))]

    result = TrainResult()
    periodic: list[Path] = []
    for epoch in range(run.epochs):
        lr = lr_at(_epoch_fraction(epoch, run.epochs), run)
        opt.lr = lr
        order = list(range(n_train))
        SplitMix64(run.seed ^ epoch).shuffle(order)
        epoch_norms = []
        for start in range(0, n_train, run.batch_size):
            batch = order[start:start + run.batch_size]
            model.zero_grads()
            with Tape() as tape:
                total = None
                for idx in batch:
                    target = augment(train_targets[idx], run.augmentation,
                                     derive_seed(run.seed, 101, epoch, idx))
                    mask = _train_mask(base_mask, run.seed, epoch, idx,
                                       model.grid)
                    loss, _ = _forward_example(model, target, mask,
                                               model_cfg.loss_mode)
                    total = loss if total is None else total + loss
                total = total * (1.0 / len(batch))
                if not np.isfinite(total.data):
                    raise TrainingError(
                        f"non-finite loss at step {opt.t + 1} (epoch {epoch})")
                tape.backward(total)
            # line-mask runs corrupt pixels rather than tokens, so the mask
            # token sits outside the graph; every other absent grad is a bug
            if model.mask_token.grad is None:
                model.mask_token.grad = np.zeros_like(model.mask_token.data)
            epoch_norms.append(grad_norm(model.params))
            opt.step()
        result.step_grad_norms.extend(epoch_norms)

        train_loss, train_ssim = evaluate_split(
            model, train_targets, eval_train_masks, model_cfg.loss_mode)
        val_loss, val_ssim = evaluate_split(
            model, val_targets, eval_val_masks, model_cfg.loss_mode)
        result.rows.append(MetricsRow(epoch, train_loss, val_loss, train_ssim,
                                      val_ssim, float(np.mean(epoch_norms)), lr))

        if out is not None:
            write_metrics_csv(out / "metrics.csv", result.rows)
            if (epoch + 1) % run.checkpoint_every == 0 or epoch == run.epochs - 1:
                path = out / "checkpoints" / f"epoch_{epoch + 1:05d}.ckpt"
                save_checkpoint(model.params, path)
                periodic.append(path)
                while len(periodic) > run.keep_checkpoints:
                    old = periodic.pop(0)
                    old.unlink(missing_ok=True)
                result.checkpoints = [str(p) for p in periodic]
            if val_ssim > result.best_val_ssim:
                save_checkpoint(model.params, out / "checkpoints" / "best.ckpt")
            if run.sample_every and (epoch + 1) % run.sample_every == 0:
                _write_sample(model, val_targets or train_targets,
                              eval_val_masks or eval_train_masks,
                              out / f"sample_epoch_{epoch + 1:05d}.png")
        result.best_val_ssim = max(result.best_val_ssim, val_ssim)

    result.model = model
    return result


def _write_sample(model: SimMIM, targets, masks, path) -> None:
    """Side-by-side panel: masked input | reconstruction | target."""
    target, mask = targets[0], masks[0]
    recon, img, pmask = reconstruct(model, target, mask)
    shown_input = (img if isinstance(mask, LineMask)
                   else apply_patch_blackout(img, pmask, model.cfg.patch_size))
    save_panel_png(path, [shown_input, recon, target])
