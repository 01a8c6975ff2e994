"""Frozen-feature probing and the ablation / data-fraction harnesses.

A checkpointed encoder is evaluated by extracting unmasked global
descriptors (masking forced off), fitting a linear SVM on the training
split, and reporting test accuracy. The grid harness re-pretrains per
configuration and seed, reusing the frozen 2D stage across grid points that
share projection settings.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .errors import ConfigError, InputError
from .model import embed_tokens, encode_pooled, init_params
from .pointcloud import PointCloud
from .svm import LinearSVM, accuracy, per_class_accuracy, train_linear_svm
from .training import SampleStatic, derive_seed, prepare_dataset, pretrain


@dataclass
class FeatureBank:
    features: np.ndarray
    labels: np.ndarray
    descriptor_mode: str


@dataclass
class ProbeResult:
    accuracy: float
    per_class: dict[int, float]
    config_id: str
    seed: int


def load_model_params(state: dict[str, np.ndarray], cfg: TrainConfig) -> dict[str, Tensor]:
    """Wrap a checkpoint into parameters, checking shapes against the config."""
    params = init_params(cfg, seed=0)
    if set(state) != set(params):
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        raise ConfigError(f"checkpoint/config mismatch: missing={missing[:4]}, extra={extra[:4]}")
    for name, arr in state.items():
        if params[name].data.shape != arr.shape:
            raise ConfigError(
                f"checkpoint/config mismatch for {name}: {arr.shape} vs {params[name].data.shape}")
        params[name].data = arr.astype(np.float64)
        params[name].requires_grad = False
    return params


def extract_global(params: dict[str, Tensor], cfg: TrainConfig, static: SampleStatic,
                   mode: str | None = None) -> np.ndarray:
    """Global descriptor from the full (unmasked) token set.

    Pools the final encoder stage per ``mode``: channel-wise max, average,
    or their concatenation (width 2C).
    """
    mode = mode or cfg.descriptor
    with ad.no_grad():
        tokens = embed_tokens(params, static.groups)
        pooled = encode_pooled(params, cfg, tokens, static.centers).data
    if mode == "max":
        return pooled.max(axis=0)
    if mode == "ave":
        return pooled.mean(axis=0)
    if mode == "concat":
        return np.concatenate([pooled.max(axis=0), pooled.mean(axis=0)])
    raise InputError(f"descriptor mode must be max, ave or concat, got {mode!r}")


def build_feature_bank(params, cfg: TrainConfig, statics: list[SampleStatic],
                       mode: str | None = None) -> FeatureBank:
    mode = mode or cfg.descriptor
    feats = np.stack([extract_global(params, cfg, s, mode) for s in statics])
    labels = np.array([s.label for s in statics])
    return FeatureBank(features=feats, labels=labels, descriptor_mode=mode)


def probe(params, cfg: TrainConfig, train_statics: list[SampleStatic],
          test_statics: list[SampleStatic], seed: int = 0,
          config_id: str = "default") -> ProbeResult:
    """Linear SVM on frozen descriptors; accuracy on the held-out split."""
    train_bank = build_feature_bank(params, cfg, train_statics)
    test_bank = build_feature_bank(params, cfg, test_statics)
    model: LinearSVM = train_linear_svm(train_bank.features, train_bank.labels,
                                        reg=cfg.svm_reg, epochs=cfg.svm_epochs, seed=seed)
    return ProbeResult(
        accuracy=accuracy(model, test_bank.features, test_bank.labels),
        per_class=per_class_accuracy(model, test_bank.features, test_bank.labels),
        config_id=config_id,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# ablation grid
# ---------------------------------------------------------------------------

GRID_AXES = ("mask_policy", "mask_ratio", "views", "sal_agg", "tgt_agg", "assignment")


@dataclass
class GridRow:
    config_id: str
    policy: str
    ratio: float
    views: int
    sal_agg: str
    tgt_agg: str
    assignment: str
    seed: int
    accuracy: float
    first_loss: float
    final_loss: float


def grid_points(base: TrainConfig, axes: dict[str, list]) -> list[tuple[str, TrainConfig]]:
    """Cartesian product over the requested axes, each point validated."""
    for key in axes:
        if key not in GRID_AXES:
            raise ConfigError(f"grid axis {key!r} not recognized; expected one of {GRID_AXES}")
    points = [("", base)]
    for key, values in axes.items():
        if not values:
            raise ConfigError(f"grid axis {key!r} has no values")
        points = [
            (f"{cid}|{key}={v}" if cid else f"{key}={v}", replace(cfg, **{key: v}))
            for cid, cfg in points for v in values
        ]
    return [(cid or "base", cfg.validate()) for cid, cfg in points]


def _static_key(cfg: TrainConfig) -> tuple:
    """Grid points sharing these knobs can share the frozen 2D stage."""
    needs_feats = cfg.assignment != "M3D"
    return (cfg.views, cfg.resolution, cfg.feature_grid, cfg.extractor,
            cfg.extractor_seed, cfg.extractor_dir, cfg.sal_agg, cfg.tokens,
            cfg.neighbors, needs_feats)


def run_ablation_grid(train_set: list[PointCloud], test_set: list[PointCloud],
                      base: TrainConfig, axes: dict[str, list],
                      seeds: list[int]) -> list[GridRow]:
    """Pretrain + probe every (grid point, seed) pair."""
    points = grid_points(base, axes)
    if not points or not seeds:
        raise ConfigError("ablation grid needs at least one point and one seed")
    rows: list[GridRow] = []
    static_cache: dict[tuple, tuple[list[SampleStatic], list[SampleStatic]]] = {}
    for config_id, cfg in points:
        for seed in seeds:
            key = (_static_key(cfg), seed)
            if key not in static_cache:
                static_cache[key] = (prepare_dataset(train_set, cfg, seed),
                                     prepare_dataset(test_set, cfg, seed))
            statics_train, statics_test = static_cache[key]
            params, history = pretrain(train_set, cfg, seed=seed, statics=statics_train)
            result = probe(params, cfg, statics_train, statics_test,
                           seed=seed, config_id=config_id)
            rows.append(GridRow(
                config_id=config_id, policy=cfg.mask_policy, ratio=cfg.mask_ratio,
                views=cfg.views, sal_agg=cfg.sal_agg, tgt_agg=cfg.tgt_agg,
                assignment=cfg.assignment, seed=seed, accuracy=result.accuracy,
                first_loss=history[0].loss_total, final_loss=history[-1].loss_total))
    return rows


def write_grid_csv(rows: list[GridRow], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["config_id", "policy", "ratio", "views", "sal_agg",
                         "tgt_agg", "assignment", "seed", "accuracy"])
        for r in rows:
            writer.writerow([r.config_id, r.policy, f"{r.ratio:g}", r.views, r.sal_agg,
                             r.tgt_agg, r.assignment, r.seed, f"{r.accuracy:.9g}"])


def summarize_grid(rows: list[GridRow]) -> list[dict]:
    """Mean ± std accuracy per config, in first-seen config order."""
    order: list[str] = []
    groups: dict[str, list[float]] = {}
    for r in rows:
        if r.config_id not in groups:
            order.append(r.config_id)
            groups[r.config_id] = []
        groups[r.config_id].append(r.accuracy)
    out = []
    for cid in order:
        accs = np.array(groups[cid])
        out.append({"config_id": cid, "mean": float(accs.mean()),
                    "std": float(accs.std()), "n": accs.size})
    return out


def write_summary_csv(summary: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["config_id", "mean_accuracy", "std_accuracy", "runs"])
        for s in summary:
            writer.writerow([s["config_id"], f"{s['mean']:.9g}", f"{s['std']:.9g}", s["n"]])


# ---------------------------------------------------------------------------
# data-fraction sweep
# ---------------------------------------------------------------------------

def subsample_indices(n: int, fraction: float, seed: int) -> np.ndarray:
    """Seeded order-preserving subset of floor(fraction·n) sample indices."""
    if not 0.0 < fraction <= 1.0:
        raise InputError(f"fraction must lie in (0,1], got {fraction}")
    take = int(np.floor(fraction * n))
    perm = np.random.default_rng(derive_seed(seed, 4)).permutation(n)
    return np.sort(perm[:take])


def data_fraction_sweep(train_set: list[PointCloud], test_set: list[PointCloud],
                        base: TrainConfig, fractions: list[float],
                        seeds: list[int]) -> list[dict]:
    """Pretrain on shrinking subsets, probe on the full split each time."""
    if not fractions:
        raise ConfigError("sweep needs at least one fraction")
    rows = []
    for seed in seeds:
        statics_train = prepare_dataset(train_set, base, seed)
        statics_test = prepare_dataset(test_set, base, seed)
        for fraction in fractions:
            idx = subsample_indices(len(train_set), fraction, seed)
            subset = [train_set[i] for i in idx]
            sub_statics = [statics_train[i] for i in idx]
            params, history = pretrain(subset, base, seed=seed, statics=sub_statics)
            result = probe(params, base, statics_train, statics_test, seed=seed,
                           config_id=f"fraction={fraction:g}")
            rows.append({"fraction": fraction, "seed": seed, "n_pretrain": len(subset),
                         "accuracy": result.accuracy, "final_loss": history[-1].loss_total})
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["fraction", "seed", "n_pretrain", "accuracy"])
        for r in rows:
            writer.writerow([f"{r['fraction']:g}", r["seed"], r["n_pretrain"],
                             f"{r['accuracy']:.9g}"])
