"""Run configuration: every pipeline knob, file parsing, and validation.

Config files are ``key = value`` text (``#`` comments); integer lists are
comma-separated. CLI flags override file values; the resolved config is
logged verbatim into the output directory before any work starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .guidance import MASK_POLICIES, SAL_AGGREGATIONS, TGT_AGGREGATIONS
from .losses import ASSIGNMENTS

DESCRIPTOR_MODES = ("max", "ave", "concat")
EXTRACTOR_KINDS = ("stub", "file")


@dataclass
class TrainConfig:
    # data: either manifest paths or the synthetic generator
    data_path: str | None = None
    data_test_path: str | None = None
    synth_shapes: int = 512
    synth_test_shapes: int = 128
    synth_jitter: float = 0.01
    synth_rotate: bool = True
    data_seed: int = 0

    # geometry / architecture
    n_points: int = 2048
    tokens: int = 512
    neighbors: int = 16
    channels: int = 384
    heads: int = 6
    encoder_blocks: list[int] = field(default_factory=lambda: [5, 5, 5])
    decoder_blocks: list[int] = field(default_factory=lambda: [1, 1])
    stage_tokens: list[int] = field(default_factory=lambda: [512, 256, 128])
    hierarchical: bool = True
    mlp_ratio: float = 4.0

    # projection + 2D extraction
    views: int = 3
    resolution: int = 224
    feature_grid: int = 14
    extractor: str = "stub"
    extractor_seed: int = 0
    extractor_dir: str | None = None

    # image-to-point guidance
    mask_ratio: float = 0.8
    mask_policy: str = "important"
    sal_agg: str = "ave"
    tgt_agg: str = "concat"
    assignment: str = "M3D+V2D"

    # optimization
    lr: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 5e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_epochs: int = 10
    epochs: int = 300
    batch_size: int = 64
    grad_clip: float = 0.0
    weight_3d: float = 1.0
    weight_2d: float = 1.0

    # probing
    descriptor: str = "concat"
    svm_reg: float = 1e-3
    svm_epochs: int = 60

    # run control
    seed: int = 0
    out_dir: str = "runs/out"
    checkpoint_every: int = 0

    def validate(self) -> "TrainConfig":
        err = _validation_error(self)
        if err:
            raise ConfigError(err)
        return self

    @property
    def m_vis(self) -> int:
        return int(math.floor((1.0 - self.mask_ratio) * self.tokens))


def _validation_error(cfg: TrainConfig) -> str | None:
    if cfg.n_points < 8:
        return f"n_points must be ≥ 8, got {cfg.n_points}"
    if not 1 <= cfg.tokens <= cfg.n_points:
        return f"tokens must satisfy 1 ≤ tokens ≤ n_points, got {cfg.tokens}/{cfg.n_points}"
    if not 1 <= cfg.neighbors <= cfg.n_points:
        return f"neighbors must satisfy 1 ≤ k ≤ n_points, got {cfg.neighbors}"
    if cfg.channels < 2 or cfg.channels % 2:
        return f"channels must be even and ≥ 2, got {cfg.channels}"
    if cfg.heads < 1 or cfg.channels % cfg.heads:
        return f"heads must divide channels, got {cfg.heads} for C={cfg.channels}"
    if not cfg.encoder_blocks or any(b < 0 for b in cfg.encoder_blocks):
        return f"encoder_blocks must be nonempty and nonnegative, got {cfg.encoder_blocks}"
    if not cfg.decoder_blocks or any(b < 0 for b in cfg.decoder_blocks):
        return f"decoder_blocks must be nonempty and nonnegative, got {cfg.decoder_blocks}"
    if len(cfg.stage_tokens) != len(cfg.encoder_blocks):
        return "stage_tokens must have one entry per encoder stage"
    if cfg.stage_tokens[0] != cfg.tokens:
        return f"stage_tokens[0] must equal tokens, got {cfg.stage_tokens[0]} vs {cfg.tokens}"
    if cfg.hierarchical and any(a <= b for a, b in zip(cfg.stage_tokens, cfg.stage_tokens[1:])):
        return f"stage_tokens must be strictly decreasing, got {cfg.stage_tokens}"
    if cfg.views not in (1, 2, 3):
        return f"views must be 1, 2 or 3, got {cfg.views}"
    if cfg.resolution < cfg.feature_grid or cfg.resolution % cfg.feature_grid:
        return f"resolution {cfg.resolution} must be a multiple of feature_grid {cfg.feature_grid}"
    if cfg.extractor not in EXTRACTOR_KINDS:
        return f"extractor must be one of {EXTRACTOR_KINDS}, got {cfg.extractor!r}"
    if cfg.extractor == "file" and not cfg.extractor_dir:
        return "extractor=file requires extractor_dir"
    if not 0.0 <= cfg.mask_ratio < 1.0:
        return f"mask_ratio must lie in [0,1), got {cfg.mask_ratio}"
    if cfg.m_vis < 1:
        return f"mask_ratio {cfg.mask_ratio} leaves no visible tokens for M={cfg.tokens}"
    if cfg.mask_policy not in MASK_POLICIES:
        return f"mask_policy must be one of {MASK_POLICIES}, got {cfg.mask_policy!r}"
    if cfg.sal_agg not in SAL_AGGREGATIONS:
        return f"sal_agg must be one of {SAL_AGGREGATIONS}, got {cfg.sal_agg!r}"
    if cfg.tgt_agg not in TGT_AGGREGATIONS:
        return f"tgt_agg must be one of {TGT_AGGREGATIONS}, got {cfg.tgt_agg!r}"
    if cfg.assignment not in ASSIGNMENTS:
        return f"assignment must be one of {ASSIGNMENTS}, got {cfg.assignment!r}"
    if cfg.lr <= 0 or cfg.lr_min < 0:
        return f"learning rates must be positive, got lr={cfg.lr}, lr_min={cfg.lr_min}"
    if not 0 <= cfg.warmup_epochs < cfg.epochs:
        return f"need 0 ≤ warmup_epochs < epochs, got {cfg.warmup_epochs}/{cfg.epochs}"
    if cfg.batch_size < 1:
        return f"batch_size must be ≥ 1, got {cfg.batch_size}"
    if cfg.descriptor not in DESCRIPTOR_MODES:
        return f"descriptor must be one of {DESCRIPTOR_MODES}, got {cfg.descriptor!r}"
    if cfg.svm_reg <= 0:
        return f"svm_reg must be positive, got {cfg.svm_reg}"
    if cfg.data_path is None and cfg.synth_shapes < 1:
        return "either data_path or a positive synth_shapes is required"
    return None


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_value(name: str, raw: str):
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    raw = raw.strip()
    ftype = _FIELD_TYPES[name]
    if ftype == "list[int]":
        try:
            return [int(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"{name}: expected comma-separated integers, got {raw!r}") from None
    if ftype == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if ftype == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got {raw!r}") from None
    if ftype == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {raw!r}") from None
    # str | None
    return None if raw.lower() in ("", "none") else raw


def load_config(path) -> TrainConfig:
    """Parse a key=value config file into a validated TrainConfig."""
    path = Path(path)
    overrides = {}
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        overrides[key.strip()] = _parse_value(key.strip(), raw)
    return replace(TrainConfig(), **overrides).validate()


def apply_overrides(cfg: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    """Apply raw string overrides (e.g. CLI flags) on top of a config."""
    parsed = {k: _parse_value(k, v) for k, v in overrides.items()}
    return replace(cfg, **parsed).validate()


def dump_config(cfg: TrainConfig, path) -> None:
    """Write the resolved configuration in the same key=value format."""
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif v is None:
            v = "none"
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")
