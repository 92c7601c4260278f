"""Command-line front end: ``gpsids <command> ...``.

Every command that writes files first writes ``manifest.json`` into its run
directory.  The directory name carries a hash of every input that can change
the outputs, so rerunning with the same inputs reuses the same directory and
rewrites identical bytes.  The run root comes from ``--out``, else from the
``GPSIDS_OUTPUT_ROOT`` environment variable, else ``./runs``.

Exit codes: 0 ok, 1 usage, 2 data or config error, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfg
from . import dataset as ds
from . import detection as det
from . import experiments as ex
from .simulation import DivergedSimulation, run

OUTPUT_ROOT_ENV = "GPSIDS_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ACCEPTANCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- manifest --------------------------------------------------------------

def file_digest(path) -> str:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    return hashlib.sha256(path.read_bytes()).hexdigest()


def content_hash(command: str, params: dict, inputs: dict) -> str:
    blob = json.dumps({"command": command, "params": params, "inputs": inputs},
                      sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def start_run(args, command: str, params: dict, inputs: dict | None = None) -> Path:
    """Resolve the run directory and write the manifest before any output."""
    inputs = {str(k): file_digest(v) for k, v in (inputs or {}).items() if v is not None}
    digest = content_hash(command, params, inputs)
    if args.out:
        out = Path(args.out)
    else:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        out = root / f"{command}-{digest[:12]}"
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_path": str(getattr(args, "config", None) or ""),
        "parameters": params,
        "seed": params.get("seed"),
        "output_dir": str(out),
        "tool_version": __version__,
        "inputs": inputs,
        "content_hash": digest,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return out


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def write_table(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def print_table(header, rows, out=None):
    out = out or sys.stdout
    cells = [[str(h) for h in header]] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    for j, row in enumerate(cells):
        print("  ".join(c.rjust(w) for c, w in zip(row, widths)), file=out)
        if j == 0:
            print("  ".join("-" * w for w in widths), file=out)


@contextmanager
def _mapper(workers: int):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield lambda f, xs: pool.map(f, xs, chunksize=1)
    else:
        yield map


def _load_rows(path) -> list:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p}: no such file")
    return ds.read_csv(p)


def _load_detector(path) -> det.Detector:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p}: no such file")
    try:
        return det.Detector.from_json(p.read_text())
    except (ValueError, KeyError) as exc:
        raise DataError(f"{p}: {exc}") from None


# --- commands --------------------------------------------------------------

def cmd_defaults(args) -> int:
    sys.stdout.write(cfg.dump(cfg.default_config()))
    return EXIT_OK


def _trace_rows(log):
    by_t = {round(c[0], 6): c for c in log.commands}
    for tr in log.truth:
        c = by_t.get(round(tr[0], 6), (tr[0], float("nan"), float("nan")))
        yield [repr(float(v)) for v in tr] + [repr(float(c[1])), repr(float(c[2]))]


def cmd_simulate(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.duration is not None:
        overrides.append(f"duration={args.duration}")
    scenario, data = cfg.load_scenario(args.config, overrides)
    params = {"scenario": cfg.to_plain(data), "overrides": overrides, "seed": scenario.seed,
              "plots": not args.no_plots}
    out = start_run(args, "simulate", params, {"config": args.config})
    log = run(scenario)
    ds.write_csv(log.rows, out / "log.csv")
    write_table(out / "trace.csv", ["t", "x", "y", "psi", "vx", "vy", "r", "delta", "ax"], _trace_rows(log))
    summary = {"completed": log.completed, "mean_abs_e": log.mean_abs_e, "rows": len(log.rows),
               "attack_window": log.attack_window, "first_alarm": log.first_alarm(),
               "ekf_alarms": len(log.alarm_times)}
    if scenario.spoof is not None:
        summary["attack"] = ex.attack_trajectory_check(log)
    write_json(out / "summary.json", summary)
    if not args.no_plots:
        from .plotting import plot_run
        plot_run(log, out)
    print(f"completed={log.completed} mean|e|={log.mean_abs_e:.3f} m rows={len(log.rows)} -> {out}")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    params = {"profile": args.profile, "count": args.count, "seed": args.seed}
    out = start_run(args, "gen-dataset", params)
    with _mapper(args.workers) as mapper:
        rows = ds.generate(args.profile, args.count, args.seed, mapper=mapper)
    path = ds.write_csv(rows, out / "dataset.csv")
    bal = ds.balance(rows)
    write_json(out / "balance.json", bal)
    print(f"{bal['rows']} rows: {bal['normal']} normal, {bal['attack']} attack "
          f"({100 * bal['attack_fraction']:.1f}% attack) -> {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    params = {"model": args.model, "seed": args.seed, "threshold": args.threshold}
    out = start_run(args, "train", params, {"data": args.data})
    rows = _load_rows(args.data)
    try:
        d = det.train(rows, det.ModelSpec(args.model), seed=args.seed, threshold=args.threshold)
    except (det.DegenerateTraining, det.TooFewSamples) as exc:
        raise DataError(f"{args.data}: {exc}") from None
    (out / "model.json").write_text(d.to_json())
    print(f"trained {args.model} on {len(rows)} rows -> {out / 'model.json'}")
    return EXIT_OK


METRIC_HEADER = ["fold", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1", "fp_rate", "fn_rate"]


def _metric_row(name, m: det.Metrics):
    d = m.as_dict()
    return [name] + [d[k] for k in METRIC_HEADER[1:]]


def cmd_eval(args) -> int:
    if bool(args.model) == bool(args.kind):
        raise UsageError("give either --model FILE (held-out evaluation) or --kind KIND (k-fold)")
    params = {"model": args.model and str(args.model), "kind": args.kind, "folds": args.folds,
              "seed": args.seed, "threshold": args.threshold}
    out = start_run(args, "eval", params, {"data": args.data, "model": args.model})
    rows = _load_rows(args.data)
    if args.model:
        d = _load_detector(args.model)
        T = d.threshold if args.threshold is None else args.threshold
        table = [_metric_row("all", det.evaluate(d, rows, T))]
    else:
        T = 0.5 if args.threshold is None else args.threshold
        cv = det.cross_validate(rows, det.ModelSpec(args.kind), k=args.folds, seed=args.seed, T=T)
        table = [_metric_row(str(i), m) for i, m in enumerate(cv.metrics)]
        mean = [float(np.mean([r[j] for r in table])) for j in range(1, len(METRIC_HEADER))]
        table.append(["mean"] + mean)
        write_table(out / "scores.csv", ["score", "label"],
                    ([repr(float(s)), int(y)] for s, y in zip(cv.scores, cv.labels)))
    write_table(out / "report.csv", METRIC_HEADER, table)
    print_table(METRIC_HEADER, table)
    return EXIT_OK


def _parse_margins(text: str):
    try:
        pairs = [tuple(float(v) for v in item.split(":")) for item in text.split(",") if item]
    except ValueError:
        raise UsageError(f"cannot parse margins {text!r}; use lo:hi,lo:hi") from None
    if not pairs or any(len(p) != 2 or p[0] > p[1] for p in pairs):
        raise UsageError(f"margins must be lo:hi pairs with lo <= hi, got {text!r}")
    return tuple(pairs)


def _read_scores(path):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p}: no such file")
    with p.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"score", "label"} <= set(reader.fieldnames):
            raise DataError(f"{p}: expected columns score,label")
        pairs = [(float(r["score"]), int(r["label"])) for r in reader]
    s = np.array([a for a, _ in pairs])
    y = np.array([b for _, b in pairs], dtype=int)
    return s, y


def cmd_sweep(args) -> int:
    if bool(args.scores) == bool(args.model):
        raise UsageError("give either --scores FILE or --model FILE with --data FILE")
    if args.model and not args.data:
        raise UsageError("--model needs --data")
    margins = _parse_margins(args.margins)
    params = {"margins": margins}
    out = start_run(args, "sweep", params, {"scores": args.scores, "model": args.model, "data": args.data})
    if args.scores:
        s, y = _read_scores(args.scores)
    else:
        d = _load_detector(args.model)
        X, y = ds.feature_matrix(_load_rows(args.data))
        s = d.scores(X)
    try:
        table = det.threshold_sweep(s[y == 0], s[y == 1], margins)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    best = det.best_margin(table)
    header = ["lo", "hi", "normals_misclassified", "attacks_misclassified", "fp_rate", "fn_rate"]
    rows = [[getattr(r, h) for h in header] for r in table]
    write_table(out / "sweep.csv", header, rows)
    print_table(header, rows)
    print(f"optimal margin [{best.lo}, {best.hi}]: fp_rate={best.fp_rate:.4f} fn_rate={best.fn_rate:.4f}")
    return EXIT_OK


def cmd_latency(args) -> int:
    scripted = args.ml_alarm is not None or args.baseline_alarm is not None
    if scripted == bool(args.model):
        raise UsageError("give either scripted alarms (--attack-start/--ml-alarm/--baseline-alarm) or --model")
    if scripted:
        if None in (args.attack_start, args.ml_alarm, args.baseline_alarm):
            raise UsageError("scripted mode needs --attack-start, --ml-alarm and --baseline-alarm")
        params = {"attack_start": args.attack_start, "ml_alarm": args.ml_alarm,
                  "baseline_alarm": args.baseline_alarm}
        out = start_run(args, "latency", params)
        try:
            ml = det.detection_latency([args.ml_alarm], args.attack_start)
            base = det.detection_latency([args.baseline_alarm], args.attack_start)
        except det.NoAlarm as exc:
            raise DataError(f"no alarm after onset: {exc}") from None
        imp = det.latency_improvement(ml, base)
        write_table(out / "latency.csv", ["ml_latency", "baseline_latency", "improvement"],
                    [[repr(ml), repr(base), repr(imp)]])
        print(f"ML latency {ml:g} s, baseline latency {base:g} s, improvement {100 * imp:.2f}%")
        return EXIT_OK
    params = {"runs": args.runs, "seed": args.seed}
    out = start_run(args, "latency", params, {"model": args.model})
    d = _load_detector(args.model)
    runs = ex.latency_runs(d, args.runs, args.seed)
    header = ["seed", "capture_delay", "ml_latency", "baseline_latency", "improvement"]
    table = [[r.seed, r.capture_delay, "no alarm" if r.ml is None else r.ml,
              "no alarm" if r.baseline is None else r.baseline,
              "" if r.improvement is None else r.improvement] for r in runs]
    write_table(out / "latency.csv", header, table)
    print_table(header, table)
    imps = [r.improvement for r in runs if r.improvement is not None]
    first = sum(r.ml_first for r in runs) / max(len(runs), 1)
    print(f"ML alarm first in {100 * first:.0f}% of runs; median improvement "
          + (f"{100 * float(np.median(imps)):.2f}%" if imps else "n/a"))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    numbers = sorted(ex.EXPERIMENTS) if args.experiment == "all" else [int(args.experiment)]
    params = {"experiments": numbers, "seed": args.seed}
    out = start_run(args, "reproduce", params)
    reports = []
    with _mapper(args.workers) as mapper:
        for n in numbers:
            kw = {} if args.seed is None else {"seed": args.seed}
            if n >= 3:
                kw["mapper"] = mapper
            rep = ex.reproduce(n, **kw)
            print(rep.text())
            reports.append(rep)
    write_json(out / "report.json", [r.as_dict() for r in reports])
    (out / "report.txt").write_text("\n\n".join(r.text() for r in reports) + "\n")
    ok = all(r.passed for r in reports)
    print("all acceptance checks passed" if ok else "acceptance checks FAILED")
    return EXIT_OK if ok else EXIT_ACCEPTANCE


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gpsids", description="GPS-guided vehicle simulator and spoofing detector suite.")
    p.add_argument("--version", action="version", version=f"gpsids {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_out(sp):
        sp.add_argument("--out", type=Path, help=f"run directory (default: ${OUTPUT_ROOT_ENV}/<command>-<hash>)")
        return sp

    sp = sub.add_parser("defaults", help="print every configurable default as YAML")
    sp.set_defaults(func=cmd_defaults)

    sp = with_out(sub.add_parser("simulate", help="run one scenario and write logs and plots"))
    sp.add_argument("--config", type=Path, help="YAML scenario file")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--duration", type=float, help="seconds")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = with_out(sub.add_parser("gen-dataset", help="generate a labelled dataset CSV"))
    sp.add_argument("--profile", choices=ds.PROFILES, default="field")
    sp.add_argument("--count", type=int, default=10, help="number of scenarios (vehicles for urban)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_gen_dataset)

    sp = with_out(sub.add_parser("train", help="train a detector on a dataset CSV"))
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--model", choices=det.MODEL_KINDS, default="mlp")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.set_defaults(func=cmd_train)

    sp = with_out(sub.add_parser("eval", help="evaluate a trained detector or cross-validate a model kind"))
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--model", type=Path, help="trained model JSON (train on A, test on B)")
    sp.add_argument("--kind", choices=det.MODEL_KINDS, help="cross-validate this model kind on --data")
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threshold", type=float)
    sp.set_defaults(func=cmd_eval)

    sp = with_out(sub.add_parser("sweep", help="misclassification counts over detection margins"))
    sp.add_argument("--scores", type=Path, help="CSV with score,label columns")
    sp.add_argument("--model", type=Path)
    sp.add_argument("--data", type=Path)
    sp.add_argument("--margins", default=",".join(f"{a}:{b}" for a, b in det.DEFAULT_MARGINS))
    sp.set_defaults(func=cmd_sweep)

    sp = with_out(sub.add_parser("latency", help="detection latency, scripted or over attack runs"))
    sp.add_argument("--attack-start", type=float)
    sp.add_argument("--ml-alarm", type=float)
    sp.add_argument("--baseline-alarm", type=float)
    sp.add_argument("--model", type=Path)
    sp.add_argument("--runs", type=int, default=20)
    sp.add_argument("--seed", type=int, default=99)
    sp.set_defaults(func=cmd_latency)

    sp = with_out(sub.add_parser("reproduce", help="run a numbered experiment analog and check it"))
    sp.add_argument("--experiment", choices=[str(n) for n in ex.EXPERIMENTS] + ["all"], required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gpsids {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except cfg.ConfigError as exc:
        print(f"gpsids {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ds.SchemaMismatch as exc:
        print(f"gpsids {args.command}: schema error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergedSimulation as exc:
        print(f"gpsids {args.command}: simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, FileNotFoundError) as exc:
        print(f"gpsids {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
