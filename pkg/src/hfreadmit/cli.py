"""Command-line entry point: synth, train, importance, hyperopt, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .claims import build_labeled, read_claims_csv, write_claims_csv, write_exclusions
from .numerics import NumericalError

DATA_ENV = "HFREADMIT_DATA_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("hfreadmit")


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list
    config_path: str | None
    seed: int | None
    inputs: list
    outputs: list
    version: str = __version__
    wall_time: float = 0.0
    resolved_config: dict = field(default_factory=dict)

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True), encoding="utf-8")
        return path


def _data_path(arg) -> Path:
    if arg:
        return Path(arg)
    base = os.environ.get(DATA_ENV)
    if not base:
        raise UsageError(f"no --data given and ${DATA_ENV} is unset")
    return Path(base) / "claims.csv"


def _load_json(path):
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {p} not found")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {p} is not valid JSON: {exc}") from exc


def _parse_sets(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _load_timelines(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"claims file {path} not found")
    return build_labeled(read_claims_csv(path))


# -- commands -------------------------------------------------------------------

def cmd_synth(args) -> RunManifest:
    from .synthgen import CohortConfig, ConfigError, generate, summarize
    raw = _load_json(args.config)
    raw.update(_parse_sets(args.set))
    if args.patients is not None:
        raw["n_patients"] = args.patients
    if args.seed is not None:
        raw["seed"] = args.seed
    known = {f.name for f in fields(CohortConfig)}
    bad = sorted(set(raw) - known)
    if bad:
        raise UsageError(f"unknown cohort fields: {bad}")
    cfg = CohortConfig(**raw)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    claims = generate(cfg, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_claims_csv(out / "claims.csv", claims)
    summary = summarize(claims)
    (out / "summary.json").write_text(summary.to_json(), encoding="utf-8")
    print(summary.table())
    return RunManifest("synth", sys.argv[1:], args.config, cfg.seed, [],
                       [str(out / "claims.csv"), str(out / "summary.json")], resolved_config=asdict(cfg))


def _model_config(name, d_hint, raw):
    from .models import config_from_dict, default_config
    if not raw:
        return None
    base = asdict(default_config(name, d_hint))
    base.update(raw)
    return config_from_dict(name, base)


def cmd_train(args) -> RunManifest:
    from .models import MODEL_NAMES
    from .trainer import TrainConfig, cross_validate
    names = list(MODEL_NAMES) if args.model == "all" else [args.model]
    for n in names:
        if n not in MODEL_NAMES:
            raise UsageError(f"unknown model {n!r}; valid names: {', '.join(MODEL_NAMES)}")
    data = _data_path(args.data)
    timelines = _load_timelines(data)
    raw = _load_json(args.config)
    raw.update(_parse_sets(args.set))
    tcfg = TrainConfig(max_epochs=args.epochs, patience=args.patience)
    out = Path(args.out)
    rows, outputs, resolved = [], [], {}
    for name in names:
        cfg = None
        if raw:
            # dimensions that depend on d are resolved against the full-data spec
            from .featurizer import fit_spec
            cfg = _model_config(name, fit_spec(timelines, args.count_threshold).d, raw)
        run_dir = out / name if len(names) > 1 else out
        report = cross_validate(name, timelines, k=args.folds, seed=args.seed, config=cfg, tcfg=tcfg,
                                count_threshold=args.count_threshold, workers=args.workers,
                                checkpoint_dir=run_dir / "checkpoints")
        report.save(run_dir)
        outputs.append(str(run_dir / "report.json"))
        resolved[name] = None if cfg is None else asdict(cfg)
        rows.append(_table2_row(report))
        print(f"{name:24s} AUC {report.pooled_auc:.4f} ({report.pooled_ci[0]:.4f}-{report.pooled_ci[1]:.4f})")
    if len(names) > 1:
        _write_rows(out / "table2.csv", rows)
        outputs.append(str(out / "table2.csv"))
    return RunManifest("train", sys.argv[1:], args.config, args.seed, [str(data)], outputs,
                       resolved_config={"train": asdict(tcfg), "models": resolved})


def _table2_row(report):
    return {"model": report.model, "pooled_auc": report.pooled_auc, "ci_low": report.pooled_ci[0],
            "ci_high": report.pooled_ci[1], "mean_fold_auc": report.mean_fold_auc,
            "fold_aucs": " ".join(f"{a:.4f}" for a in report.fold_aucs)}


def _write_rows(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _fold_dirs(run: Path):
    ck = run / "checkpoints"
    dirs = sorted(ck.glob("fold*"), key=lambda p: int(p.name[4:])) if ck.exists() else []
    if not dirs:
        raise FileNotFoundError(f"no fold checkpoints under {ck}")
    return dirs


def cmd_importance(args) -> RunManifest:
    from .data import encode_dataset
    from .featurizer import FeatureSpec
    from .importance import (absent_values, lasso_importance, model_predictor, perturb_importance,
                             read_coefficients_csv)
    from .models import load_checkpoint
    from .trainer import EvalReport
    run = Path(args.run)
    report_path = run / "report.json"
    if not report_path.exists():
        raise FileNotFoundError(f"no report at {report_path}")
    report = EvalReport.load(report_path)
    dirs = _fold_dirs(run)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    inputs = [str(report_path)]
    if args.metric == "lasso":
        names, weights = [], []
        for d in dirs:
            if not (d / "coefficients.csv").exists():
                raise FileNotFoundError(f"{d} has no coefficients.csv (train lr-l1 first)")
            n, w = read_coefficients_csv(d / "coefficients.csv")
            names.append(n)
            weights.append(w)
        table = lasso_importance(weights, names)
    else:
        data = _data_path(args.data)
        inputs.append(str(data))
        by_id = {tl.patient_id: tl for tl in _load_timelines(data)}
        fns, sets, absents, names = [], [], [], []
        for i, d in enumerate(dirs):
            if not (d / "model.json").exists():
                raise FileNotFoundError(f"missing checkpoint in {d}")
            model = load_checkpoint(d)
            spec = FeatureSpec.from_json((d / "feature_spec.json").read_text(encoding="utf-8"))
            test = [by_id[p] for p, f in zip(report.patient_ids, report.folds) if f == i]
            fns.append(model_predictor(model))
            sets.append(encode_dataset(spec, test))
            absents.append(absent_values(spec, args.absent))
            names.append(spec.feature_names())
        table = perturb_importance(fns, sets, names, args.metric, absents)
    table.to_csv(out)
    for r in table.rows[:args.top]:
        if r.rank is not None:
            print(f"{r.rank:4d} {r.feature:60s} {r.mean:+.5f}")
    return RunManifest("importance", sys.argv[1:], None, None, inputs, [str(out)],
                       resolved_config={"metric": args.metric, "absent": args.absent})


def cmd_hyperopt(args) -> RunManifest:
    from .hyperopt import run_search
    from .models import MODEL_NAMES
    from .trainer import TrainConfig
    if args.model not in MODEL_NAMES:
        raise UsageError(f"unknown model {args.model!r}; valid names: {', '.join(MODEL_NAMES)}")
    data = _data_path(args.data)
    timelines = _load_timelines(data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "trials.jsonl"
    tcfg = TrainConfig(max_epochs=args.epochs, patience=args.patience)
    ranked = run_search(args.model, timelines, n_trials=args.trials, seed=args.seed, tcfg=tcfg,
                        workers=args.workers, subset_frac=args.subset, count_threshold=args.count_threshold,
                        scale=args.scale, log_path=log_path)
    best = ranked[0]
    (out / "best_config.json").write_text(json.dumps(best.config, indent=1, sort_keys=True), encoding="utf-8")
    for t in ranked[:5]:
        print(f"trial {t.index:3d} val AUC {t.val_auc if t.val_auc is None else round(t.val_auc, 4)}")
    return RunManifest("hyperopt", sys.argv[1:], None, args.seed, [str(data)],
                       [str(log_path), str(out / "best_config.json")],
                       resolved_config={"train": asdict(tcfg), "trials": args.trials, "scale": args.scale})


def cmd_report(args) -> RunManifest:
    from .trainer import EvalReport, LENGTH_BUCKETS, write_by_length_csv
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for r in args.runs:
        p = Path(r)
        p = p / "report.json" if p.is_dir() else p
        if not p.exists():
            raise FileNotFoundError(f"no report at {p}")
        reports.append(EvalReport.load(p))
    outputs = []
    if reports:
        _write_rows(out / "table2.csv", [_table2_row(r) for r in reports])
        outputs.append(str(out / "table2.csv"))
    if args.by_length:
        write_by_length_csv(out / "auc_by_length.csv", {r.model: r.by_length for r in reports})
        outputs.append(str(out / "auc_by_length.csv"))
        for r in reports:
            print(r.model, " ".join(f"{b}:{'-' if r.by_length[b] is None else f'{r.by_length[b]:.3f}'}"
                                    for b in LENGTH_BUCKETS))
    if args.data:
        from .synthgen import summarize
        claims = read_claims_csv(_data_path(args.data))
        s = summarize(claims)
        (out / "table1.json").write_text(s.to_json(), encoding="utf-8")
        outputs.append(str(out / "table1.json"))
        print(s.table())
    return RunManifest("report", sys.argv[1:], None, None, [str(r) for r in args.runs], outputs)


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .models import MODEL_NAMES
    p = argparse.ArgumentParser(prog="hfreadmit", description="HF readmission timeline models")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic claims cohort")
    s.add_argument("--patients", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="JSON file with cohort settings")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one cohort field")
    s.add_argument("--out", default="synth_out")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="cross-validate one catalog model (or 'all')")
    t.add_argument("--model", required=True, help="one of: " + ", ".join(MODEL_NAMES) + ", all")
    t.add_argument("--data", help=f"claims CSV (default ${DATA_ENV}/claims.csv)")
    t.add_argument("--folds", type=int, default=5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--count-threshold", type=int, default=5)
    t.add_argument("--config", help="JSON file with model config overrides")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--out", default="runs/model")
    t.set_defaults(func=cmd_train)

    im = sub.add_parser("importance", help="feature importance from a trained run")
    im.add_argument("--run", required=True, help="directory written by 'train'")
    im.add_argument("--metric", default="diff_prob",
                    choices=["lasso", "diff_prob", "diff_prob_weighted", "ratio_diff_prob_weighted"])
    im.add_argument("--absent", default="mean", choices=["mean", "zero"])
    im.add_argument("--data", help=f"claims CSV (default ${DATA_ENV}/claims.csv)")
    im.add_argument("--top", type=int, default=20)
    im.add_argument("--out", default="importance.csv")
    im.set_defaults(func=cmd_importance)

    h = sub.add_parser("hyperopt", help="uniform random configuration search")
    h.add_argument("--model", required=True)
    h.add_argument("--data")
    h.add_argument("--trials", type=int, default=50)
    h.add_argument("--workers", type=int, default=1)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--epochs", type=int, default=30)
    h.add_argument("--patience", type=int, default=5)
    h.add_argument("--subset", type=float, default=0.3)
    h.add_argument("--count-threshold", type=int, default=5)
    h.add_argument("--scale", choices=["paper", "desk"], default="desk")
    h.add_argument("--out", default="runs/hyperopt")
    h.set_defaults(func=cmd_hyperopt)

    r = sub.add_parser("report", help="summary tables from saved runs")
    r.add_argument("--runs", nargs="*", default=[])
    r.add_argument("--by-length", action="store_true")
    r.add_argument("--data", help="claims CSV for the cohort summary table")
    r.add_argument("--out", default="runs/report")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .trainer import TrainingDiverged
    t0 = time.perf_counter()
    try:
        manifest = args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericalError, TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest.wall_time = time.perf_counter() - t0
    out = Path(args.out)
    manifest.write(out.parent if out.suffix else out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
