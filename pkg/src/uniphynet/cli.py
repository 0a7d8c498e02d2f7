"""Command-line entry point: ``uniphynet <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ABLATIONS, PROTOCOLS, apply_ablation, build_config, load_raw
from .dataset import (
    WINDOW_SECONDS,
    ConfigError,
    DataError,
    generate_synthetic,
    load_cache,
    load_dataset,
    make_folds,
    save_cache,
    write_dataset,
)
from .dsp import preprocess_dataset
from .evaluation import CvReport, fold_seeds, run_cross_validation, run_fold
from .gradsuite import passed, run_suite
from .kernels import BACKEND
from .nn.tensor import get_dtype

log = logging.getLogger("uniphynet")

CURVE_COLUMNS = ("train_loss", "val_loss", "val_acc", "lr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", help="experiment TOML file")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--labels", choices=("binary", "ternary"))
    p.add_argument("--modalities", help="comma-separated list, e.g. EEG,ECG")
    p.add_argument("--seed", type=int, help="master seed for folds, splits and initialization")
    p.add_argument("--jobs", type=int, help="parallel fold workers")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="uniphynet", description="UniPhyNet training and evaluation toolkit")
    parser.add_argument("--version", action="version", version=f"uniphynet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [("synth", "write the synthetic dataset in the CSV layout"),
                       ("preprocess", "filter and normalize windows into an .npz cache"),
                       ("train", "train on a single 90/10 split and score the held-out tenth"),
                       ("cv", "run 10-fold or leave-one-subject-out cross-validation")]:
        _common(sub.add_parser(name, help=text))
    ab = sub.add_parser("ablate", help="train with an ablation preset applied")
    ab.add_argument("preset", help=f"one of {', '.join(ABLATIONS)}")
    _common(ab)
    gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--seeds", type=int, default=5)
    gc.add_argument("--no-network", action="store_true", help="skip the full tiny network")
    gc.add_argument("--out")
    gc.add_argument("-v", "--verbose", action="store_true")
    rp = sub.add_parser("report", help="re-render a CvReport JSON into CSV tables and curves")
    rp.add_argument("report", help="path to cv_report.json")
    rp.add_argument("--out")
    rp.add_argument("-v", "--verbose", action="store_true")
    return parser


# helpers ---------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out, command, argv, config=None, seeds=None, artifacts=()):
    """Config echo, seeds and artifact hashes for reproducing a run."""
    out = Path(out)
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "precision": str(get_dtype().__name__),
        "kernels": BACKEND,
        "config": config,
        "seeds": seeds or {},
        "artifacts": {str(Path(a).relative_to(out)): _sha256(a) for a in sorted(map(Path, artifacts))},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _overrides(args):
    return {"eval.protocol": args.protocol, "dataset.labels": args.labels, "dataset.modalities": args.modalities,
            "eval.seed": args.seed, "eval.jobs": args.jobs, "eval.out": args.out}


def _load(args, preset=None):
    raw = load_raw(args.config) if args.config else {}
    if preset is not None:
        raw = apply_ablation(raw, preset)
    return build_config(raw, _overrides(args))


def load_experiment_data(cfg):
    """Raw windows for the configured source, restricted to the configured modalities and labels."""
    d = cfg.dataset
    if d.synthetic:
        return generate_synthetic(d.synth_spec(), d.seed)
    src = Path(d.source)
    if src.suffix == ".npz":
        ds = load_cache(src)
        return ds.select_modalities(d.modalities).with_scheme(d.labels)
    return load_dataset(src, d.modalities, d.labels)


def prepared_data(cfg):
    ds = load_experiment_data(cfg)
    if not ds.preprocessed:
        ds = preprocess_dataset(ds, cfg.presets)
    if abs(ds.seconds - cfg.window_s) > 1e-9:
        raise ConfigError(f"dataset windows last {ds.seconds} s but the model expects {cfg.window_s} s")
    return ds


def _plan(cfg, ds):
    if cfg.protocol == "loso":
        return make_folds(ds, "loso", cfg.seed)
    return make_folds(ds, "kfold", cfg.seed, k=10)


def write_curves(path, curves):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("epoch",) + CURVE_COLUMNS)
        for epoch, row in enumerate(zip(*(curves[c] for c in CURVE_COLUMNS))):
            w.writerow([epoch, *map(repr, row)])


def render_report(report, out):
    """Summary CSV, per-fold CSV and one curve CSV per fold."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "cv_summary.csv", out / "cv_folds.csv"]
    report.to_csv(paths[0])
    report.folds_to_csv(paths[1])
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    for f in report.folds:
        if f.ok:
            p = curves / f"fold_{f.fold:02d}.csv"
            write_curves(p, f.curves)
            paths.append(p)
    return paths


# commands --------------------------------------------------------------------

def cmd_synth(args, argv):
    cfg = _load(args)
    if not cfg.dataset.synthetic:
        raise ConfigError("synth needs [dataset] source = \"synthetic\"")
    if cfg.dataset.seconds != WINDOW_SECONDS:
        raise ConfigError(f"the CSV layout stores {WINDOW_SECONDS} s windows; set [dataset] seconds = 10")
    out = Path(cfg.out)
    ds = generate_synthetic(cfg.dataset.synth_spec(), cfg.dataset.seed)
    files = write_dataset(ds, out / "data")
    write_manifest(out, "synth", argv, cfg.to_dict(), {"dataset": cfg.dataset.seed}, files)
    print(f"wrote {len(ds)} windows for {len(set(ds.subjects.tolist()))} subjects to {out / 'data'}")
    return 0


def cmd_preprocess(args, argv):
    cfg = _load(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = prepared_data(cfg)
    path = save_cache(ds, out / "preprocessed.npz")
    write_manifest(out, "preprocess", argv, cfg.to_dict(), {"dataset": cfg.dataset.seed}, [path])
    print(f"preprocessed {len(ds)} windows ({', '.join(m.value for m in ds.modalities)}) -> {path}")
    return 0


def _train_single(cfg, argv, command, out):
    out.mkdir(parents=True, exist_ok=True)
    ds = prepared_data(cfg)
    plan = make_folds(ds, "kfold", cfg.seed, k=10)
    result, model, trainlog = run_fold(ds, plan, 0, cfg.net, cfg.train, cfg.augment, return_model=True)
    model_path = model.save(out / "model.upn")
    log_path = out / "trainlog.csv"
    trainlog.to_csv(log_path)
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps({"accuracy": result.accuracy, "macro_f1": result.macro_f1,
                                        "confusion": result.confusion, "best_epoch": result.best_epoch,
                                        "n_train": result.n_train, "n_val": result.n_val,
                                        "n_test": result.n_test}, indent=2, sort_keys=True))
    artifacts = [model_path, model_path.with_name(model_path.name + ".json"), log_path, metrics_path]
    write_manifest(out, command, argv, cfg.to_dict(), {"master": cfg.seed, **fold_seeds(cfg.seed, 0)}, artifacts)
    print(f"{command}: held-out accuracy {result.accuracy:.4f}, macro-F1 {result.macro_f1:.4f} "
          f"(best epoch {result.best_epoch}) -> {out}")
    return 0


def cmd_train(args, argv):
    cfg = _load(args)
    return _train_single(cfg, argv, "train", Path(cfg.out))


def cmd_ablate(args, argv):
    cfg = _load(args, args.preset)
    slug = args.preset.replace(":", "-").replace(",", "_")
    return _train_single(cfg, argv, f"ablate {args.preset}", Path(cfg.out) / slug)


def cmd_cv(args, argv):
    cfg = _load(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = prepared_data(cfg)
    plan = _plan(cfg, ds)
    echo = cfg.to_dict()
    del echo["eval"]["out"]  # the output location is not part of the experiment
    report = run_cross_validation(ds, plan, cfg.net, cfg.train, cfg.augment, jobs=cfg.jobs,
                                  config_echo={"experiment": echo})
    path = out / "cv_report.json"
    report.to_json(path)
    artifacts = [path, *render_report(report, out)]
    seeds = {"master": cfg.seed, "dataset": cfg.dataset.seed}
    write_manifest(out, "cv", argv, cfg.to_dict(), seeds, artifacts)
    s = report.summary()
    print(f"{cfg.protocol}: {len(report.folds)} folds, accuracy {s['accuracy_mean']:.4f} +/- "
          f"{s['accuracy_std']:.4f}, macro-F1 {s['macro_f1_mean']:.4f} +/- {s['macro_f1_std']:.4f}")
    if report.failed:
        print(f"failed folds: {report.failed_folds}", file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args, argv):
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")

    def show(name, err, tol, seconds):
        flag = "ok" if err < tol else "FAIL"
        print(f"{name:22s} max rel err {err:.3e}  (tol {tol:.0e})  {flag}", flush=True)

    results = run_suite(range(args.seeds), network=not args.no_network, progress=show)
    ok = passed(results)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "gradcheck.json"
        path.write_text(json.dumps({k: {"max_rel_err": e, "tolerance": t} for k, (e, t, _) in results.items()},
                                   indent=2, sort_keys=True))
        write_manifest(out, "gradcheck", argv, None, {"seeds": list(range(args.seeds))}, [path])
    print("all gradients match" if ok else "gradient check FAILED")
    return 0 if ok else 1


def cmd_report(args, argv):
    src = Path(args.report)
    if not src.exists():
        raise ConfigError(f"{src} not found")
    try:
        report = CvReport.from_json(src)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{src} is not a CvReport: {exc}") from None
    out = Path(args.out) if args.out else src.parent
    paths = render_report(report, out)
    write_manifest(out, "report", argv, report.config, {"master": report.seed}, paths)
    print(f"rendered {len(paths)} files to {out}")
    return 0


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "cv": cmd_cv,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "report": cmd_report}


def run_command(argv):
    """Run one command; returns 0 on success, 1 on configuration or data errors, 2 on usage errors."""
    argv = list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
