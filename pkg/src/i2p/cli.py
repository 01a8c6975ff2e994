"""Command-line entry point.

Subcommands: ``render``, ``pretrain``, ``probe``, ``ablate``, ``sweep-data``.
Every TrainConfig field is exposed as a ``--flag``; flags override the
``--config`` file and the resolved configuration is logged into the output
directory before any work starts. Exit codes: 0 success, 2 config/input
error, 3 numeric abort. ``I2P_THREADS`` caps worker threads (default 1,
the reference deterministic mode).
"""

from __future__ import annotations

import argparse
import shutil
import sys
from dataclasses import fields
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import TrainConfig, apply_overrides, dump_config, load_config
from .errors import ConfigError, I2PError, InputError, NumericsError
from .guidance import SaliencyCloud, sample_mask
from .pointcloud import SHAPE_CLASSES, generate_shape, normalize
from .probe import (data_fraction_sweep, load_model_params, probe, run_ablation_grid,
                    summarize_grid, write_grid_csv, write_summary_csv, write_sweep_csv)
from .projection import render_token_mask, render_views, write_ppm
from .training import (load_test_set, load_train_set, make_extractor, prepare_dataset,
                       prepare_sample, pretrain)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides (take precedence over --config)")
    group.add_argument("--config", metavar="FILE", help="key=value config file")
    for f in fields(TrainConfig):
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}",
                           metavar="V", help=f"override {f.name}")


def _resolve_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    for f in fields(TrainConfig):
        v = getattr(args, f"cfg_{f.name}", None)
        if v is not None:
            overrides[f.name] = v
    return apply_overrides(cfg, overrides) if overrides else cfg.validate()


def _prepare_out(cfg: TrainConfig, args) -> Path:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.config:
        shutil.copy(args.config, out / "config.given.cfg")
    dump_config(cfg, out / "config.resolved.cfg")
    return out


def _parse_list(raw: str, conv, flag: str):
    try:
        return [conv(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag}: cannot parse {raw!r}") from None


def cmd_render(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(cfg, args)
    if args.sample_class not in SHAPE_CLASSES:
        raise InputError(f"--sample-class must be one of {SHAPE_CLASSES}")
    cloud = generate_shape(args.sample_class, cfg.n_points, args.sample_seed,
                           jitter=cfg.synth_jitter)
    cloud = normalize(cloud)
    ex = make_extractor(cfg)
    static = prepare_sample(cloud, cfg, fps_seed=cfg.seed, extractor=ex, need_feats=False)
    depths = render_views(cloud, cfg.views, cfg.resolution)
    from .features2d import view_representations
    sals = [view_representations(ex, d, cloud.source_id)[1] for d in depths]
    for d in depths:
        write_ppm(d, out / f"depth_{d.axis}.ppm")
    for s in sals:
        write_ppm(s.values[:, :, 0], out / f"saliency_{s.axis}.ppm")
    sal = SaliencyCloud(scores=static.sal_scores, source_views=cfg.views)
    partition = sample_mask(sal, cfg.mask_ratio, cfg.mask_policy, cfg.seed)
    token_img = render_token_mask(static.centers, partition.visible_idx, cfg.resolution)
    write_ppm(token_img, out / "tokens.ppm")
    from .reporting import save_view_montage
    save_view_montage(depths, sals, token_img, out / "views.png")
    print(f"rendered {len(depths)} view(s) of a {args.sample_class} into {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(cfg, args)
    train_set = load_train_set(cfg)
    params, history = pretrain(train_set, cfg, out_dir=str(out))
    from .reporting import save_loss_curves
    save_loss_curves(history, out / "loss_curves.png")
    last = history[-1]
    print(f"pretrained {cfg.epochs} epochs on {len(train_set)} samples")
    print(f"final losses: 3d={last.loss_3d:.6g} 2d={last.loss_2d:.6g} total={last.loss_total:.6g}")
    print(f"checkpoint: {out / 'checkpoint.i2pt'}")
    return EXIT_OK


def _config_for_checkpoint(args) -> TrainConfig:
    if args.config:
        return _resolve_config(args)
    sidecar = Path(args.checkpoint).parent / "config.resolved.cfg"
    if not sidecar.exists():
        raise ConfigError(f"no --config given and no sidecar at {sidecar}")
    cfg = load_config(sidecar)
    overrides = {}
    for f in fields(TrainConfig):
        v = getattr(args, f"cfg_{f.name}", None)
        if v is not None:
            overrides[f.name] = v
    return apply_overrides(cfg, overrides) if overrides else cfg


def cmd_probe(args) -> int:
    cfg = _config_for_checkpoint(args)
    out = _prepare_out(cfg, args)
    state = load_checkpoint(args.checkpoint)
    params = load_model_params(state, cfg)
    train_set = load_train_set(cfg)
    test_set = load_test_set(cfg)
    labels = {c.label for c in train_set}
    if len(labels) < 2:
        raise InputError(f"probing needs ≥ 2 classes, got {len(labels)}")
    statics_train = prepare_dataset(train_set, cfg, cfg.seed)
    statics_test = prepare_dataset(test_set, cfg, cfg.seed)
    result = probe(params, cfg, statics_train, statics_test, seed=cfg.seed)
    print(f"probe accuracy: {result.accuracy:.4f} "
          f"({len(test_set)} test samples, descriptor={cfg.descriptor})")
    import csv as _csv
    with open(out / "per_class.csv", "w", newline="") as f:
        writer = _csv.writer(f)
        writer.writerow(["class", "accuracy"])
        for c, a in result.per_class.items():
            name = SHAPE_CLASSES[c] if 0 <= c < len(SHAPE_CLASSES) else str(c)
            writer.writerow([name, f"{a:.9g}"])
    from .reporting import save_per_class_bars
    save_per_class_bars(result.per_class, dict(enumerate(SHAPE_CLASSES)),
                        out / "per_class_accuracy.png")
    return EXIT_OK


_GRID_FLAGS = (
    ("grid_policy", "mask_policy", str),
    ("grid_ratio", "mask_ratio", float),
    ("grid_views", "views", int),
    ("grid_sal_agg", "sal_agg", str),
    ("grid_tgt_agg", "tgt_agg", str),
    ("grid_assignment", "assignment", str),
)


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(cfg, args)
    axes = {}
    for flag, key, conv in _GRID_FLAGS:
        raw = getattr(args, flag)
        if raw:
            axes[key] = _parse_list(raw, conv, f"--{flag.replace('_', '-')}")
    if not axes:
        raise ConfigError("empty grid: pass at least one --grid-* flag")
    seeds = _parse_list(args.seeds, int, "--seeds")
    train_set = load_train_set(cfg)
    test_set = load_test_set(cfg)
    rows = run_ablation_grid(train_set, test_set, cfg, axes, seeds)
    write_grid_csv(rows, out / "results.csv")
    summary = summarize_grid(rows)
    write_summary_csv(summary, out / "summary.csv")
    from .reporting import save_ablation_bars
    save_ablation_bars(summary, out / "ablation_accuracy.png")
    for s in summary:
        print(f"{s['config_id']}: {s['mean']:.4f} ± {s['std']:.4f} over {s['n']} seed(s)")
    return EXIT_OK


def cmd_sweep_data(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(cfg, args)
    fractions = _parse_list(args.fractions, float, "--fractions")
    seeds = _parse_list(args.seeds, int, "--seeds")
    train_set = load_train_set(cfg)
    test_set = load_test_set(cfg)
    rows = data_fraction_sweep(train_set, test_set, cfg, fractions, seeds)
    write_sweep_csv(rows, out / "sweep.csv")
    from .reporting import save_fraction_trend
    save_fraction_trend(rows, out / "data_fraction.png")
    for r in rows:
        print(f"fraction {r['fraction']:g} seed {r['seed']}: accuracy {r['accuracy']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="i2p",
        description="Image-to-point masked autoencoding: pre-train, probe, ablate, render.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_render = sub.add_parser("render", help="write per-view depth/saliency PPMs and a montage")
    p_render.add_argument("--sample-class", default="cube", help=f"one of {SHAPE_CLASSES}")
    p_render.add_argument("--sample-seed", type=int, default=0)
    p_render.add_argument("--out", help="output directory (default: config out_dir)")
    _add_config_flags(p_render)
    p_render.set_defaults(func=cmd_render)

    p_pre = sub.add_parser("pretrain", help="run masked-autoencoding pre-training")
    p_pre.add_argument("--out", help="output directory (default: config out_dir)")
    _add_config_flags(p_pre)
    p_pre.set_defaults(func=cmd_pretrain)

    p_probe = sub.add_parser("probe", help="linear SVM on frozen encoder descriptors")
    p_probe.add_argument("--checkpoint", required=True)
    p_probe.add_argument("--out", help="output directory (default: config out_dir)")
    _add_config_flags(p_probe)
    p_probe.set_defaults(func=cmd_probe)

    p_abl = sub.add_parser("ablate", help="pretrain+probe over a config grid")
    for flag, key, _ in _GRID_FLAGS:
        p_abl.add_argument(f"--{flag.replace('_', '-')}", metavar="V,V,...",
                           help=f"grid values for {key}")
    p_abl.add_argument("--seeds", default="0", metavar="S,S,...")
    p_abl.add_argument("--out", help="output directory (default: config out_dir)")
    _add_config_flags(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_sweep = sub.add_parser("sweep-data", help="pretrain on data fractions and probe each")
    p_sweep.add_argument("--fractions", default="0.2,0.4,0.6,0.8,1.0", metavar="F,F,...")
    p_sweep.add_argument("--seeds", default="0", metavar="S,S,...")
    p_sweep.add_argument("--out", help="output directory (default: config out_dir)")
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericsError as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InputError, I2PError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
