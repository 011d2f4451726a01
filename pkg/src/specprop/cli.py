"""Command-line entry point binding the library into reproducible runs.

Exit codes: 0 success, 1 runtime failure, 2 usage error. All commands are
headless; a fixed --seed makes every run bit-reproducible apart from
wall-clock fields. Relative --data paths resolve against SPECPROP_DATA_DIR,
relative output paths against SPECPROP_OUT_DIR.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import engine, graphnet, spectral, synthetic
from . import autodiff as ad
from .data import NoiseSpec, load_ucr
from .errors import SpecPropError

BUILTIN_DATASETS = ("synthetic", "separable")
_BUILTIN_GENERATOR_SEED = 2024


def _out_path(path):
    p = Path(path)
    base = os.environ.get("SPECPROP_OUT_DIR")
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _data_path(spec):
    p = Path(spec)
    if p.exists():
        return p
    base = os.environ.get("SPECPROP_DATA_DIR")
    if base and (Path(base) / spec).exists():
        return Path(base) / spec
    return None


def resolve_dataset_pair(spec, parser):
    """Train/test datasets for a --data argument (builtin name or path)."""
    if spec in BUILTIN_DATASETS:
        return synthetic.synthetic_pair(spec, seed=_BUILTIN_GENERATOR_SEED)
    path = _data_path(spec)
    if path is None:
        parser.error(f"--data: no such dataset or file: {spec}")
    if path.is_dir():
        name = path.name
        train_file = next((path / f"{name}_TRAIN{ext}" for ext in (".tsv", ".txt", ".csv")
                           if (path / f"{name}_TRAIN{ext}").exists()), None)
        test_file = next((path / f"{name}_TEST{ext}" for ext in (".tsv", ".txt", ".csv")
                          if (path / f"{name}_TEST{ext}").exists()), None)
        if train_file is None or test_file is None:
            parser.error(f"--data: {path} lacks {name}_TRAIN/_TEST files")
        return load_ucr(train_file), load_ucr(test_file)
    stem = path.name
    if "TRAIN" in stem.upper():
        sibling = path.with_name(stem.replace("TRAIN", "TEST")
                                 .replace("train", "test"))
        if sibling.exists():
            return load_ucr(path), load_ucr(sibling)
    ds = load_ucr(path)
    return ds, ds


def parse_noise(args, parser):
    if args.noise_band is None and args.noise_snr is None:
        return None
    band = args.noise_band or "high"
    if ":" in band:
        try:
            lo, hi = (float(tok) for tok in band.split(":"))
        except ValueError:
            parser.error(f"--noise-band: cannot parse {band!r}")
        band = (lo, hi)
    snr = args.noise_snr if args.noise_snr is not None else 10.0
    try:
        return NoiseSpec(band=band, snr_db=snr)
    except SpecPropError as exc:
        parser.error(f"--noise-band/--noise-snr: {exc}")


def build_config(args, parser) -> engine.RunConfig:
    values = {}
    if args.config:
        path = _data_path(args.config) or Path(args.config)
        try:
            values = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"--config: {exc}")
        if "noise" in values and values["noise"] is not None:
            values["noise"] = NoiseSpec(**values["noise"])
    names = {f.name for f in fields(engine.RunConfig)}
    unknown = set(values) - names
    if unknown:
        parser.error(f"--config: unknown keys {sorted(unknown)}")
    overrides = {
        "way": args.way, "shot": args.shot, "queries": args.queries,
        "bands": args.bands, "layers": args.layers, "strategy": args.strategy,
        "lr": args.lr, "epochs": args.epochs,
        "episodes_per_epoch": args.episodes_per_epoch,
        "eval_episodes": args.eval_episodes, "seed": args.seed,
        "workers": args.workers, "dtype": args.dtype,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    noise = parse_noise(args, parser)
    if noise is not None:
        values["noise"] = noise
    try:
        return engine.RunConfig(**values)
    except (TypeError, ValueError) as exc:
        parser.error(f"invalid configuration: {exc}")


def write_records(path, records):
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_csv(path, rows, header):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _emit(args, records):
    for rec in records:
        print("  " + " ".join(f"{k}={v}" for k, v in sorted(rec.items())))
    if args.out:
        write_records(_out_path(args.out), records)


def _dataset_label(args):
    return args.data


# ---------------------------------------------------------------------------
# commands

def cmd_train(args, parser):
    train_ds, test_ds = resolve_dataset_pair(args.data, parser)
    config = build_config(args, parser)
    store, train_metrics = engine.train(train_ds, config)
    if args.checkpoint:
        store.save(_out_path(args.checkpoint))
    metrics = engine.evaluate(test_ds, store, config)
    rec = engine.metrics_record(_dataset_label(args), config, metrics)
    _emit(args, [rec])
    if args.loss_out:
        write_csv(_out_path(args.loss_out),
                  [(i, f"{v:.9g}") for i, v in enumerate(train_metrics.loss_curve)],
                  ["step", "loss"])
    return 0


def cmd_eval(args, parser):
    if not args.checkpoint:
        parser.error("eval requires --checkpoint")
    _, test_ds = resolve_dataset_pair(args.data, parser)
    config = build_config(args, parser)
    store = graphnet.init_model(config.model_config(), seed=0,
                                dtype=config.np_dtype)
    store.load(Path(args.checkpoint))
    metrics = engine.evaluate(test_ds, store, config)
    if args.dump_edges:
        _dump_edges(test_ds, store, config, Path(args.dump_edges))
    _emit(args, [engine.metrics_record(_dataset_label(args), config, metrics)])
    return 0


def _dump_edges(test_ds, store, config, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    episodes, _ = engine._eval_episodes(test_ds, config)
    cfg = config.model_config()
    ep = graphnet.prepare_episode(episodes[0], cfg)
    with ad.no_grad():
        out = graphnet.episode_forward(store, cfg, ep, training=False)
    for layer, E in enumerate(out.edges):
        np.savetxt(out_dir / f"edges_layer{layer}.csv", E.data, delimiter=",")


def cmd_baseline(args, parser):
    _, test_ds = resolve_dataset_pair(args.data, parser)
    config = build_config(args, parser)
    from .baselines import DtwConfig
    dtw_cfg = DtwConfig(window=args.dtw_window) if args.dtw_window is not None else None
    metrics = engine.baseline_evaluate(test_ds, config, distance=args.distance,
                                       dtw_config=dtw_cfg, noise=config.noise)
    rec = engine.metrics_record(_dataset_label(args), config, metrics)
    rec["variant"] = f"1nn_{args.distance}"
    _emit(args, [rec])
    return 0


def cmd_ablate(args, parser):
    train_ds, test_ds = resolve_dataset_pair(args.data, parser)
    config = build_config(args, parser)
    results = engine.ablate(train_ds, test_ds, config)
    records = []
    for variant, metrics in results.items():
        rec = engine.metrics_record(_dataset_label(args), config, metrics)
        rec["variant"] = variant
        records.append(rec)
    _emit(args, records)
    return 0


def cmd_cross_domain(args, parser):
    if not args.target_data:
        parser.error("cross-domain requires --target-data")
    source_train, _ = resolve_dataset_pair(args.data, parser)
    _, target_test = resolve_dataset_pair(args.target_data, parser)
    config = build_config(args, parser)
    metrics = engine.cross_domain(source_train, target_test, config)
    rec = engine.metrics_record(f"{args.data}->{args.target_data}", config, metrics)
    _emit(args, [rec])
    return 0


def cmd_cross_way(args, parser):
    if args.train_way is None or args.eval_way is None:
        parser.error("cross-way requires --train-way and --eval-way")
    train_ds, test_ds = resolve_dataset_pair(args.data, parser)
    config = build_config(args, parser)
    metrics = engine.cross_way(train_ds, test_ds, args.train_way, args.eval_way,
                               config)
    rec = engine.metrics_record(_dataset_label(args),
                                replace(config, way=args.eval_way), metrics)
    rec["train_way"] = args.train_way
    _emit(args, [rec])
    return 0


def _sweep_csv_path(args):
    if args.csv:
        return _out_path(args.csv)
    if args.out:
        return _out_path(str(args.out) + ".csv")
    return None


def cmd_split_sweep(args, parser):
    train_ds, test_ds = resolve_dataset_pair(args.data, parser)
    config = build_config(args, parser)
    values = _parse_int_list(args.bands_list or "2,4,8,15", parser, "--bands-list")
    results = engine.split_sweep(train_ds, test_ds, config, values)
    records = []
    rows = []
    for s, metrics in results:
        rec = engine.metrics_record(_dataset_label(args),
                                    replace(config, bands=s), metrics)
        records.append(rec)
        rows.append((s, f"{metrics.mean_acc:.4f}", f"{metrics.ci95:.4f}",
                     f"{metrics.wall_clock_s:.3f}"))
    _emit(args, records)
    csv_path = _sweep_csv_path(args)
    if csv_path:
        write_csv(csv_path, rows, ["bands", "mean_acc", "ci95", "wall_clock_s"])
    return 0


def cmd_k_sweep(args, parser):
    train_ds, test_ds = resolve_dataset_pair(args.data, parser)
    config = build_config(args, parser)
    values = _parse_int_list(args.shots or "1,2,3", parser, "--shots")
    results = engine.k_sweep(train_ds, test_ds, config, values)
    records = []
    rows = []
    for k, metrics in results:
        rec = engine.metrics_record(_dataset_label(args),
                                    replace(config, shot=k), metrics)
        records.append(rec)
        rows.append((k, f"{metrics.mean_acc:.4f}", f"{metrics.ci95:.4f}",
                     f"{metrics.wall_clock_s:.3f}"))
    _emit(args, records)
    csv_path = _sweep_csv_path(args)
    if csv_path:
        write_csv(csv_path, rows, ["shot", "mean_acc", "ci95", "wall_clock_s"])
    return 0


def cmd_noise_eval(args, parser):
    train_ds, test_ds = resolve_dataset_pair(args.data, parser)
    config = build_config(args, parser)
    noise = config.noise or NoiseSpec("high", 10.0)
    results = engine.noise_eval(train_ds, test_ds, replace(config, noise=None),
                                noise)
    records = []
    for variant in ("model_clean", "model_noisy", "dtw_clean", "dtw_noisy"):
        rec = engine.metrics_record(_dataset_label(args), config, results[variant])
        rec["variant"] = variant
        records.append(rec)
    _emit(args, records)
    print(f"  model_drop={results['model_drop']:.3f} dtw_drop={results['dtw_drop']:.3f}")
    return 0


def cmd_inspect_spectrum(args, parser):
    train_ds, _ = resolve_dataset_pair(args.data, parser)
    config = build_config(args, parser)
    index = args.index or 0
    if not 0 <= index < len(train_ds):
        parser.error(f"--index: out of range 0..{len(train_ds) - 1}")
    series = train_ds.series[index]
    expansion = spectral.expand(series.values, config.bands, config.strategy)
    rows = [(j, *expansion.partition.edges(j)) for j in range(config.bands)]
    for j, lo, hi in rows:
        print(f"  band {j}: [{lo:.6f}, {hi:.6f})")
    if args.out:
        write_csv(_out_path(args.out), rows, ["band", "f_lo", "f_hi"])
    if args.series_out:
        write_csv(_out_path(args.series_out),
                  [s.tolist() for s in expansion.streams()],
                  [f"t{i}" for i in range(len(series.values))])
    return 0


def cmd_grad_check(args, parser):
    del parser
    checks = _gradient_battery(seed=args.seed if args.seed is not None else 0)
    failed = False
    for name, err, bound in checks:
        status = "ok" if err < bound else "FAIL"
        failed = failed or err >= bound
        print(f"  {name:24s} max_rel_err={err:.3e} bound={bound:g} {status}")
    return 1 if failed else 0


def _gradient_battery(seed=0):
    rng = np.random.default_rng(seed)
    results = []

    def rand(*shape):
        return ad.Tensor(rng.standard_normal(shape), requires_grad=True)

    cases = {
        "mul": (lambda xs: ad.tsum(ad.mul(xs[0], xs[1])), [rand(3, 4), rand(3, 4)]),
        "matmul": (lambda xs: ad.tsum(ad.square(ad.matmul(xs[0], xs[1]))),
                   [rand(3, 4), rand(4, 2)]),
        "conv1d": (lambda xs: ad.tsum(ad.square(ad.conv1d(xs[0], xs[1], xs[2]))),
                   [rand(2, 3, 10), rand(4, 3, 5), rand(4)]),
        "softmax": (lambda xs: ad.tsum(ad.square(ad.softmax(xs[0], axis=1))),
                    [rand(4, 5)]),
        "sigmoid": (lambda xs: ad.tsum(ad.sigmoid(xs[0])), [rand(8)]),
    }
    rm = rng.standard_normal(3)
    rv = rng.uniform(0.5, 2.0, 3)
    cases["batchnorm"] = (
        lambda xs: ad.tsum(ad.square(ad.batchnorm(
            xs[0], xs[1], xs[2], rm.copy(), rv.copy(), training=True))),
        [rand(4, 3, 6), rand(3), rand(3)])
    for name, (fn, inputs) in cases.items():
        results.append((name, ad.grad_check(fn, inputs), 1e-4))

    cfg = graphnet.ModelConfig(num_bands=2, layers=2, relation_hidden=8,
                               combiner_hidden=4, embed_dim=16,
                               encoder_channels=(4, 8), kernel=3)
    ds = synthetic.make_separable_dataset(n_classes=2, per_class=4, length=16,
                                          seed=seed)
    from .data import sample_episode
    ep = graphnet.prepare_episode(
        sample_episode(ds, 2, 1, 1, np.random.default_rng(seed)), cfg)
    store = graphnet.init_model(cfg, seed=seed, dtype=np.float64)

    def end_to_end(_):
        return graphnet.episode_forward(store, cfg, ep, training=True).loss

    err = ad.grad_check(end_to_end, list(store.params.values()), h=1e-5,
                        max_coords=2, rng=np.random.default_rng(seed + 1))
    results.append(("end_to_end", err, 1e-3))
    return results


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="specprop",
        description="Few-shot time-series classification via spectral band "
                    "expansion and graph label propagation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, data_required=True):
        p.add_argument("--data", required=data_required,
                       help="builtin name (synthetic, separable), UCR file, or dataset dir")
        p.add_argument("--config", help="JSON file mirroring RunConfig fields")
        p.add_argument("--seed", type=int)
        p.add_argument("--way", type=int)
        p.add_argument("--shot", type=int)
        p.add_argument("--queries", type=int)
        p.add_argument("--bands", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--strategy", choices=spectral.STRATEGIES)
        p.add_argument("--lr", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--episodes-per-epoch", type=int)
        p.add_argument("--eval-episodes", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--dtype", choices=("float32", "float64"))
        p.add_argument("--noise-band", help="low|mid|high or f_lo:f_hi fractions of Nyquist")
        p.add_argument("--noise-snr", type=float, help="target SNR in dB")
        p.add_argument("--out", help="append metrics records (JSON lines)")

    p = sub.add_parser("train", help="episodic training then evaluation")
    add_common(p)
    p.add_argument("--checkpoint", help="write trained parameters here")
    p.add_argument("--loss-out", help="write the per-step loss curve CSV here")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    add_common(p)
    p.add_argument("--checkpoint", help="parameters to evaluate")
    p.add_argument("--dump-edges", help="directory for per-layer edge CSV dumps")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("baseline", help="episodic 1-NN baseline evaluation")
    add_common(p)
    p.add_argument("--distance", choices=("euclid", "dtw"), default="euclid")
    p.add_argument("--dtw-window", type=int)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("ablate", help="baseline / relations / propagation / full")
    add_common(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("cross-domain", help="train on --data, evaluate on --target-data")
    add_common(p)
    p.add_argument("--target-data")
    p.set_defaults(fn=cmd_cross_domain)

    p = sub.add_parser("cross-way", help="evaluate with a different way than trained")
    add_common(p)
    p.add_argument("--train-way", type=int)
    p.add_argument("--eval-way", type=int)
    p.set_defaults(fn=cmd_cross_way)

    p = sub.add_parser("split-sweep", help="retrain per band count")
    add_common(p)
    p.add_argument("--bands-list", help="comma-separated band counts")
    p.add_argument("--csv", help="CSV table path (default: <out>.csv)")
    p.set_defaults(fn=cmd_split_sweep)

    p = sub.add_parser("k-sweep", help="retrain per support count")
    add_common(p)
    p.add_argument("--shots", help="comma-separated shot counts")
    p.add_argument("--csv", help="CSV table path (default: <out>.csv)")
    p.set_defaults(fn=cmd_k_sweep)

    p = sub.add_parser("noise-eval", help="clean vs noisy accuracy, model and DTW")
    add_common(p)
    p.set_defaults(fn=cmd_noise_eval)

    p = sub.add_parser("inspect-spectrum", help="dump band partition and series")
    add_common(p)
    p.add_argument("--index", type=int, help="series row to inspect (default 0)")
    p.add_argument("--series-out", help="CSV path for the band series themselves")
    p.set_defaults(fn=cmd_inspect_spectrum)

    p = sub.add_parser("grad-check", help="finite-difference gradient battery")
    add_common(p, data_required=False)
    p.set_defaults(fn=cmd_grad_check)

    return parser


def _parse_int_list(text, parser, flag):
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        parser.error(f"{flag}: expected comma-separated integers, got {text!r}")
    if not values:
        parser.error(f"{flag}: empty list")
    return values


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args, parser)
    except SystemExit as exc:  # parser.error inside a command
        return int(exc.code or 0)
    except SpecPropError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
