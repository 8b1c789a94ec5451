"""Run configuration: flat ``key = value`` files with ``#`` comments.

Unknown keys are rejected by name so typos fail fast, and every run
directory receives the fully resolved configuration back in the same
format, making runs self-describing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigError, ContractError
from .model import ModelConfig, preset
from .trainer import TrainRunConfig


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse key = value lines; later duplicates override earlier ones."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key in {raw!r}")
        out[key] = value.strip()
    return out


def _parse_bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_ints(v: str) -> tuple[int, ...]:
    return tuple(int(p) for p in v.replace(",", " ").split())


_MODEL_KEYS = {
    "encoder": str,
    "image_size": int,
    "patch_size": int,
    "embed_dim": int,
    "depths": _parse_ints,
    "heads": _parse_ints,
    "window_size": int,
    "mlp_ratio": float,
    "encoder_stride": int,
    "head": str,
    "loss_mode": str,
}

_TRAIN_KEYS = {
    "epochs": int,
    "batch_size": int,
    "base_lr": float,
    "min_lr": float,
    "warmup_epochs": int,
    "weight_decay": float,
    "seed": int,
    "mask": str,
    "augmentation": str,
    "n_coils": int,
    "crop_size": int,
    "sample_every": int,
    "checkpoint_every": int,
    "keep_checkpoints": int,
}

_RUN_KEYS = {
    "preset": str,
    "source": str,       # phantom | png_dir
    "n_items": int,
    "data_dir": str,
    "out": str,
}

KNOWN_KEYS = {**_MODEL_KEYS, **_TRAIN_KEYS, **_RUN_KEYS}


@dataclass
class RunSetup:
    """Fully resolved run description: model, trainer, and data source."""

    model: ModelConfig
    run: TrainRunConfig
    preset_name: str = "desk_swin"
    source: str = "phantom"
    n_items: int = 16
    data_dir: str = ""
    out: str = "runs/run"


def resolve_config(kvs: dict[str, str]) -> RunSetup:
    """Typed resolution with defaults from the named preset."""
    for key in kvs:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    typed: dict[str, object] = {}
    for key, raw in kvs.items():
        try:
            typed[key] = KNOWN_KEYS[key](raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc

    preset_name = str(typed.get("preset", "desk_swin"))
    try:
        model_cfg = preset(preset_name)
        model_over = {k: v for k, v in typed.items() if k in _MODEL_KEYS}
        if model_over:
            model_cfg = replace(model_cfg, **model_over)
        run_over = {("mask_spec" if k == "mask" else k): v
                    for k, v in typed.items() if k in _TRAIN_KEYS}
        run_cfg = TrainRunConfig(**{
            "mask_spec": _default_mask(model_cfg), **run_over})
        # model init follows the run seed so reruns are reproducible end to end
        model_cfg = replace(model_cfg, init_seed=run_cfg.seed)
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    return RunSetup(
        model=model_cfg,
        run=run_cfg,
        preset_name=preset_name,
        source=str(typed.get("source", "phantom")),
        n_items=int(typed.get("n_items", 16)),
        data_dir=str(typed.get("data_dir", "")),
        out=str(typed.get("out", "runs/run")),
    )


def _default_mask(model_cfg: ModelConfig) -> str:
    g = model_cfg.image_size // model_cfg.patch_size
    return f"patch ratio=0.5 seed=0 grid={g}x{g}"


def format_config(setup: RunSetup) -> str:
    """Serialize the resolved setup back to the flat key = value format."""
    m, r = setup.model, setup.run
    lines = [
        "# resolved run configuration",
        f"preset = {setup.preset_name}",
        f"encoder = {m.encoder}",
        f"image_size = {m.image_size}",
        f"patch_size = {m.patch_size}",
        f"embed_dim = {m.embed_dim}",
        f"depths = {','.join(str(d) for d in m.depths)}",
        f"heads = {','.join(str(h) for h in m.heads)}",
        f"window_size = {m.window_size}",
        f"mlp_ratio = {m.mlp_ratio:g}",
        f"encoder_stride = {m.resolved_stride()}",
        f"head = {m.head}",
        f"loss_mode = {m.loss_mode}",
        f"epochs = {r.epochs}",
        f"batch_size = {r.batch_size}",
        f"base_lr = {r.base_lr:g}",
        f"min_lr = {r.min_lr:g}",
        f"warmup_epochs = {r.warmup_epochs}",
        f"weight_decay = {r.weight_decay:g}",
        f"seed = {r.seed}",
        f"mask = {r.mask_spec}",
        f"augmentation = {r.augmentation}",
        f"n_coils = {r.n_coils}",
        f"crop_size = {r.crop_size}",
        f"sample_every = {r.sample_every}",
        f"checkpoint_every = {r.checkpoint_every}",
        f"keep_checkpoints = {r.keep_checkpoints}",
        f"source = {setup.source}",
        f"n_items = {setup.n_items}",
        f"data_dir = {setup.data_dir}",
        f"out = {setup.out}",
    ]
    return "\n".join(lines) + "\n"


def load_config(path) -> RunSetup:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return resolve_config(parse_kv_text(text))
