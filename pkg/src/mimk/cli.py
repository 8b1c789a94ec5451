"""Command-line interface: phantom generation, training, eval, ablation, plots.

Exit codes: 0 success, 1 runtime failure (e.g. training diverged), 2 usage
or configuration error.  Every command is deterministic given its inputs;
`MIMK_THREADS` only parallelizes independent per-item evaluation.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunSetup, format_config, load_config
from .data import (DatasetManifest, load_target, phantom_manifest,
                   png_dir_manifest, save_grayscale_png)
from .errors import (CheckpointError, ConfigError, ContractError, DataError,
                     MimkError, TrainingError)
from .kspace import generate_phantom, kspace_magnitude_image, random_phantom_spec
from .masking import parse_mask_spec
from .metrics import read_metrics_csv, rmse, ssim
from .model import SimMIM
from .plotting import emit_plot
from .rng import derive_seed
from .trainer import (TrainResult, _eval_mask, eval_threads, load_checkpoint,
                      load_into_model, reconstruct, train)


def _build_manifest(setup: RunSetup) -> DatasetManifest:
    if setup.source == "phantom":
        return phantom_manifest(setup.n_items, setup.model.image_size,
                                setup.run.seed)
    if setup.source == "png_dir":
        if not setup.data_dir:
            raise ConfigError("source = png_dir requires data_dir")
        paths = sorted(str(p) for p in Path(setup.data_dir).glob("*.png"))
        if len(paths) < 2:
            raise ConfigError(
                f"data_dir {setup.data_dir!r} holds {len(paths)} PNGs; need >= 2")
        return png_dir_manifest(paths, setup.run.seed)
    raise ConfigError(f"unknown data source {setup.source!r}")


def _run_training(setup: RunSetup, out: Path) -> TrainResult:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(setup))
    manifest = _build_manifest(setup)
    manifest.save_text(out / "manifest.txt")
    result = train(setup.run, manifest, setup.model, out_dir=out)
    if len(result.rows) >= 2:
        emit_plot(result.rows, ["train_loss", "val_loss"], out / "loss.svg",
                  title="L1 loss")
        emit_plot(result.rows, ["train_ssim", "val_ssim"], out / "ssim.svg",
                  title="SSIM")
    return result


# ---------------------------------------------------------------------------
# commands


def cmd_phantom(args) -> int:
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    if args.size < 16:
        raise ConfigError(f"--size must be >= 16, got {args.size}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = phantom_manifest(max(args.n, 2), args.size, args.seed) \
        if args.n >= 2 else None
    lines = []
    for i in range(args.n):
        item_seed = derive_seed(args.seed, i)
        img = generate_phantom(random_phantom_spec(args.size, item_seed))
        kmag = kspace_magnitude_image(img, n_coils=args.coils,
                                      seed=derive_seed(args.seed, item_seed))
        save_grayscale_png(out / f"phantom_{i:04d}.png", img)
        save_grayscale_png(out / f"kspace_{i:04d}.png", kmag)
        tag = manifest.items[i][1] if manifest else "train"
        lines.append((f"phantom://{args.size}/{item_seed}", tag))
    DatasetManifest(items=lines, seed=args.seed).save_text(out / "manifest.txt")
    print(f"wrote {args.n} phantom/k-space pairs to {out}")
    return 0


def cmd_train(args) -> int:
    setup = load_config(args.config)
    setup = _apply_overrides(setup, args)
    result = _run_training(setup, Path(setup.out))
    last = result.rows[-1]
    print(f"trained {setup.run.epochs} epochs; final val SSIM "
          f"{last.val_ssim:.4f}, val loss {last.val_loss:.4g}")
    print(f"artifacts in {setup.out}")
    return 0


def cmd_eval(args) -> int:
    setup = load_config(args.config)
    setup = _apply_overrides(setup, args)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else None
    if not args.identity:
        if ckpt_path is None:
            raise ConfigError("--checkpoint is required unless --identity is set")
        if not ckpt_path.is_file():
            raise ConfigError(f"checkpoint not found: {ckpt_path}")
    model = SimMIM(setup.model)
    if ckpt_path is not None and not args.identity:
        load_into_model(model, load_checkpoint(ckpt_path))

    manifest = _build_manifest(setup)
    items = manifest.split("val") or manifest.split("train")
    crop = setup.run.crop_size or None
    targets = [load_target(e, crop_size=crop, n_coils=setup.run.n_coils,
                           coil_seed=setup.run.seed) for e in items]
    base_mask = parse_mask_spec(setup.run.mask_spec)
    masks = [_eval_mask(base_mask, setup.run.seed, 10_000 + i, model.grid)
             for i in range(len(targets))]

    def eval_one(i: int):
        target, mask = targets[i], masks[i]
        if args.identity:
            recon = target
        else:
            recon, _, _ = reconstruct(model, target, mask)
        return (ssim(recon, target), rmse(recon, target),
                float(np.mean(np.abs(recon - target))))

    workers = min(eval_threads(), max(1, len(targets)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stats = list(pool.map(eval_one, range(len(targets))))
    else:
        stats = [eval_one(i) for i in range(len(targets))]

    header = f"{'item':<40} {'ssim':>10} {'rmse':>10} {'l1':>10}"
    print(header)
    out_lines = ["item,ssim,rmse,l1"]
    for entry, (s, r, l) in zip(items, stats):
        print(f"{entry:<40} {s:>10.6f} {r:>10.6f} {l:>10.6f}")
        out_lines.append("%s,%.6g,%.6g,%.6g" % (entry, s, r, l))
    arr = np.array(stats)
    for name, col in zip(("ssim", "rmse", "l1"), arr.T):
        print(f"{name} mean {col.mean():.6f} std {col.std():.6f}")
        out_lines.append("%s_mean,%.6g,,\n%s_std,%.6g,," %
                         (name, col.mean(), name, col.std()))
    out_dir = Path(setup.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.csv").write_text("\n".join(out_lines) + "\n")
    return 0


def cmd_ablate_aug(args) -> int:
    setup = load_config(args.config)
    setup = _apply_overrides(setup, args)
    base_out = Path(setup.out)
    rows_by_policy = {}
    for policy in ("none", "flip_crop"):
        sub = replace(setup, run=replace(setup.run, augmentation=policy),
                      out=str(base_out / f"ablate_{policy}"))
        result = _run_training(sub, Path(sub.out))
        rows_by_policy[policy] = result.rows
    epochs = len(rows_by_policy["none"])
    lines = ["epoch,ssim_none,ssim_aug"]
    merged = []
    for e in range(epochs):
        a = rows_by_policy["none"][e].val_ssim
        b = rows_by_policy["flip_crop"][e].val_ssim
        lines.append("%d,%.6g,%.6g" % (e, a, b))
        merged.append(argparse.Namespace(epoch=e, ssim_none=a, ssim_aug=b))
    base_out.mkdir(parents=True, exist_ok=True)
    (base_out / "ablation.csv").write_text("\n".join(lines) + "\n")
    if len(merged) >= 2:
        emit_plot(merged, ["ssim_none", "ssim_aug"], base_out / "ablation.svg",
                  title="augmentation ablation (val SSIM)")
    print(f"ablation artifacts in {base_out}")
    return 0


def cmd_plot(args) -> int:
    rows = read_metrics_csv(args.csv)
    columns = [c.strip() for c in args.columns.split(",") if c.strip()]
    emit_plot(rows, columns, args.out)
    print(f"wrote {args.out}")
    return 0


def _apply_overrides(setup: RunSetup, args) -> RunSetup:
    if getattr(args, "seed", None) is not None:
        setup = replace(setup, run=replace(setup.run, seed=args.seed),
                        model=replace(setup.model, init_seed=args.seed))
    if getattr(args, "out", None):
        setup = replace(setup, out=args.out)
    return setup


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mimk",
        description="Masked-image modeling on synthetic MRI k-space data.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate phantom images + k-space PNGs")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the val split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--identity", action="store_true",
                   help="score targets against themselves (pipeline debug)")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-aug",
                       help="train with and without augmentation, compare")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate_aug)

    p = sub.add_parser("plot", help="render an SVG line plot from metrics.csv")
    p.add_argument("--csv", required=True)
    p.add_argument("--columns", default="train_loss,val_loss")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, MimkError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
