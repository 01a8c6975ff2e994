"""Pre-training loop: batching, gradient reduction, metrics, checkpoints.

The frozen 2D stage (projection, feature extraction, saliency, token
back-projection) is computed once per sample and cached; epochs then pay
only for the 3D network. Gradients are reduced over a batch in ascending
sample order, so single-thread and sharded runs produce identical updates.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .errors import InputError, NumericsError
from .features2d import Extractor, view_representations
from .guidance import SaliencyCloud, aggregate_token_values, build_saliency_cloud, sample_mask
from .losses import assignment_terms
from .model import init_params, mae_forward
from .optim import AdamW, Schedule, lr_at
from .pointcloud import PointCloud, furthest_point_sample, group_coordinates, knn_group, normalize
from .projection import render_views

# deterministic stream tags for derived seeds
_SEED_FPS = 1
_SEED_MASK = 2
_SEED_SHUFFLE = 3


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


def worker_count() -> int:
    """Worker cap from I2P_THREADS; 1 means reference single-thread mode."""
    raw = os.environ.get("I2P_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"I2P_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass
class SampleStatic:
    """Frozen per-sample pipeline state reused every epoch."""

    centers: np.ndarray        # M×3 token centers
    groups: np.ndarray         # M×k×3 re-centered neighbor coordinates
    feats2d: np.ndarray | None  # V×M×C back-projected 2D features
    sal_scores: np.ndarray     # M softmax-normalized saliency
    label: int | None = None


def prepare_sample(cloud: PointCloud, cfg: TrainConfig, fps_seed: int,
                   extractor: Extractor, need_feats: bool = True) -> SampleStatic:
    """Normalize, tokenize, render views, and back-project 2D values."""
    cloud = normalize(cloud)
    centers = furthest_point_sample(cloud, cfg.tokens, seed=fps_seed)
    centers = knn_group(cloud, centers, cfg.neighbors)
    groups = group_coordinates(cloud, centers)
    depths = render_views(cloud, cfg.views, cfg.resolution)
    feats, sals = [], []
    for d in depths:
        f, s = view_representations(extractor, d, sample_id=cloud.source_id or None)
        feats.append(f)
        sals.append(s)
    sal = build_saliency_cloud(sals, centers.centers, cfg.sal_agg)
    feats2d = None
    if need_feats:
        feats2d = aggregate_token_values(feats, centers.centers)
    return SampleStatic(centers=centers.centers, groups=groups, feats2d=feats2d,
                        sal_scores=sal.scores, label=cloud.label)


def make_extractor(cfg: TrainConfig) -> Extractor:
    return Extractor(kind=cfg.extractor, channels=cfg.channels, out_grid=cfg.feature_grid,
                     stub_seed=cfg.extractor_seed, file_dir=cfg.extractor_dir)


def prepare_dataset(dataset: list[PointCloud], cfg: TrainConfig, seed: int) -> list[SampleStatic]:
    """Per-sample static state; FPS seeds derive from (seed, sample index)."""
    ex = make_extractor(cfg)
    _, rows_2d = assignment_terms(cfg.assignment)
    need = rows_2d is not None
    return [prepare_sample(c, cfg, derive_seed(seed, _SEED_FPS, i), ex, need_feats=need)
            for i, c in enumerate(dataset)]


def _sample_pass(params, cfg, static: SampleStatic, mask_seed: int):
    """Forward + backward for one sample; returns (loss values, grad sink)."""
    sal = SaliencyCloud(scores=static.sal_scores, source_views=cfg.views)
    partition = sample_mask(sal, cfg.mask_ratio, cfg.mask_policy, mask_seed)
    losses = mae_forward(params, cfg, static.centers, static.groups,
                         static.feats2d, partition)
    total = losses["loss_total"]
    if not np.isfinite(total.data).all():
        bad = ad.first_nonfinite(total)
        raise NumericsError(
            f"non-finite loss; first bad tensor is op {bad.op!r} (node {bad.node_id})"
            if bad is not None else "non-finite loss")
    sink: dict[int, np.ndarray] = {}
    ad.backward(total, param_sink=sink)
    vals = {k: (float(v.data) if v is not None else 0.0) for k, v in losses.items()}
    return vals, sink


@dataclass
class EpochRow:
    epoch: int
    lr: float
    loss_3d: float
    loss_2d: float
    loss_total: float


def write_metrics(rows: list[EpochRow], path) -> None:
    """Metrics CSV: one row per epoch, 9 significant digits."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "lr", "loss_3d", "loss_2d", "loss_total"])
        for r in rows:
            writer.writerow([r.epoch, f"{r.lr:.9g}", f"{r.loss_3d:.9g}",
                             f"{r.loss_2d:.9g}", f"{r.loss_total:.9g}"])


def pretrain(dataset: list[PointCloud], cfg: TrainConfig, seed: int | None = None,
             statics: list[SampleStatic] | None = None,
             out_dir: str | None = None) -> tuple[dict[str, Tensor], list[EpochRow]]:
    """Run the full pre-training loop; returns parameters and epoch metrics.

    Deterministic given (cfg, seed): identical runs produce bit-identical
    parameters regardless of the worker count.
    """
    if not dataset:
        raise InputError("pretrain: dataset is empty")
    seed = cfg.seed if seed is None else seed
    if statics is None:
        statics = prepare_dataset(dataset, cfg, seed)
    params = init_params(cfg, seed)
    opt = AdamW(params, weight_decay=cfg.weight_decay, betas=(cfg.beta1, cfg.beta2),
                eps=cfg.adam_eps)
    sched = Schedule(cfg.warmup_epochs, cfg.epochs, cfg.lr, cfg.lr_min)
    id_to_name = {p.node_id: name for name, p in params.items()}
    n = len(statics)
    workers = worker_count()
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    history: list[EpochRow] = []
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    try:
        for epoch in range(cfg.epochs):
            lr = lr_at(sched, epoch + 1)
            order = np.random.default_rng(derive_seed(seed, _SEED_SHUFFLE, epoch)).permutation(n)
            sums = np.zeros(3)
            for start in range(0, n, cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                jobs = [(int(i), derive_seed(seed, _SEED_MASK, epoch, int(i))) for i in batch]
                if pool is not None:
                    results = list(pool.map(
                        lambda j: _sample_pass(params, cfg, statics[j[0]], j[1]), jobs))
                else:
                    results = [_sample_pass(params, cfg, statics[i], s) for i, s in jobs]
                # ordered reduction: batch order is deterministic, so summing
                # in job order is reproducible across worker counts
                grads: dict[str, np.ndarray] = {}
                for _, sink in results:
                    for nid, g in sink.items():
                        name = id_to_name[nid]
                        acc = grads.get(name)
                        grads[name] = g if acc is None else acc + g
                scale = 1.0 / len(jobs)
                for name, p in params.items():
                    g = grads.get(name)
                    grads[name] = g * scale if g is not None else np.zeros_like(p.data)
                if cfg.grad_clip > 0:
                    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                    if norm > cfg.grad_clip:
                        s = cfg.grad_clip / norm
                        for g in grads.values():
                            g *= s
                opt.step(grads, lr)
                for vals, _ in results:
                    sums += (vals["loss_3d"], vals["loss_2d"], vals["loss_total"])
            history.append(EpochRow(epoch + 1, lr, sums[0] / n, sums[1] / n, sums[2] / n))
            if out and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                _save(params, out / f"checkpoint_epoch{epoch + 1:04d}.i2pt")
    finally:
        if pool is not None:
            pool.shutdown()
    if out:
        _save(params, out / "checkpoint.i2pt")
        write_metrics(history, out / "metrics.csv")
    return params, history


def _save(params: dict[str, Tensor], path) -> None:
    save_checkpoint({name: p.data for name, p in params.items()}, path)


def load_train_set(cfg: TrainConfig) -> list[PointCloud]:
    from .pointcloud import load_manifest_clouds, make_synthetic_dataset

    if cfg.data_path:
        return load_manifest_clouds(cfg.data_path)
    return make_synthetic_dataset(cfg.synth_shapes, cfg.n_points, cfg.data_seed,
                                  jitter=cfg.synth_jitter, rotate=cfg.synth_rotate)


def load_test_set(cfg: TrainConfig) -> list[PointCloud]:
    from .pointcloud import load_manifest_clouds, make_synthetic_dataset

    if cfg.data_test_path:
        return load_manifest_clouds(cfg.data_test_path)
    if cfg.data_path:
        raise InputError("manifest datasets need data_test_path for probing")
    test_seed = derive_seed(cfg.data_seed, 5)
    return make_synthetic_dataset(cfg.synth_test_shapes, cfg.n_points, test_seed,
                                  jitter=cfg.synth_jitter, rotate=cfg.synth_rotate)
