"""Command line front end: gen, ingest, label, pipeline, gridsearch, report.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime or data error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field

from . import __version__
from .config import RunConfig
from .errors import ConfigError, HoseqError
from .feature_pipeline import (
    FeatureMode,
    TraceFeatures,
    apply_minmax,
    build_windows,
    chronological_split,
    class_weights,
    fit_minmax,
)
from .handover_engine import HandoverLog, baseline_log
from .ho_control import ReplayResult, detect_windows, replay_with_avoidance
from .metrics_report import (
    MetricsSummary,
    classification_metrics,
    emit_report,
    read_summary_csv,
    reduction_metrics,
    timing_capture,
)
from .radio_sim import Preset, generate_scenario, sample_trace
from .seq_models import ModelKind, PredictorParams, TrainHistory, grid_search, train
from .trace_model import (
    ColumnMapping,
    DriveTrace,
    ValidationReport,
    count_missing,
    format_trace,
    interpolate_missing,
    parse_trace,
    repair_ranges,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
SEED_ENV = "HOSEQ_SEED"
METADATA_FILE = "run_metadata.json"  # the only file with wall-clock content

PRESET_ALIASES = {
    "grid": Preset.GRID,
    "corridor": Preset.CORRIDOR_OSCILLATION,
    "corridor_oscillation": Preset.CORRIDOR_OSCILLATION,
    "street_canyon": Preset.STREET_CANYON,
    "canyon": Preset.STREET_CANYON,
}


class StageError(HoseqError):
    """Runtime failure tagged with the module stage it came from."""


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except (ConfigError, StageError):
        raise
    except (HoseqError, ValueError, OSError) as exc:
        raise StageError(f"{name}: {type(exc).__name__}: {exc}") from exc


def parse_preset(text: str) -> Preset:
    key = text.strip().lower()
    if key in PRESET_ALIASES:
        return PRESET_ALIASES[key]
    try:
        return Preset(text.strip().upper())
    except ValueError:
        raise ConfigError(f"unknown preset {text!r}") from None


# ----------------------------------------------------------------- data I/O

def load_trace(path: str, clamp: bool = False, schema: ColumnMapping | None = None
               ) -> tuple[DriveTrace, ValidationReport]:
    """Read, range-check (clamp or drop rows) and gap-fill a trace file."""
    with stage("trace_model"):
        with open(path, encoding="utf-8") as f:
            trace = parse_trace(f.read(), schema)
        trace, report = repair_ranges(trace, clamp)
        if count_missing(trace):
            trace = interpolate_missing(trace)
    return trace, report


def _write(path: str, text: str | bytes) -> None:
    mode = "wb" if isinstance(text, bytes) else "w"
    kw = {} if isinstance(text, bytes) else {"encoding": "utf-8", "newline": ""}
    with open(path, mode, **kw) as f:
        f.write(text)


@contextlib.contextmanager
def staged_output(out_dir: str):
    """Yield a scratch directory whose files move into ``out_dir`` only on success."""
    parent = os.path.dirname(os.path.abspath(out_dir)) or "."
    os.makedirs(parent, exist_ok=True)
    scratch = tempfile.mkdtemp(prefix=".hoseq-stage-", dir=parent)
    try:
        yield scratch
        os.makedirs(out_dir, exist_ok=True)
        for name in sorted(os.listdir(scratch)):
            os.replace(os.path.join(scratch, name), os.path.join(out_dir, name))
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


# ----------------------------------------------------------------- pipeline

@dataclass
class RunOutcome:
    kind: ModelKind
    mode: FeatureMode
    params: PredictorParams
    history: TrainHistory
    replay: ReplayResult
    summary: MetricsSummary
    infer_per_event_s: float | None


@dataclass
class PipelineResult:
    baseline: HandoverLog
    runs: list[RunOutcome] = field(default_factory=list)

    @property
    def summaries(self) -> list[MetricsSummary]:
        return [r.summary for r in self.runs]

    def run(self, kind, mode) -> RunOutcome:
        kind, mode = ModelKind(kind), FeatureMode(mode)
        return next(r for r in self.runs if r.kind is kind and r.mode is mode)


def run_pipeline(cfg: RunConfig, trace: DriveTrace, *, oracle_weights: bool = False) -> PipelineResult:
    """Label, build features, train, replay with avoidance and score every kind x mode."""
    cfg.validate()
    a3, th, tc = cfg.a3, cfg.thresholds, cfg.train_config()
    use_head = cfg.get("ctrl.use_head")
    with stage("handover_engine"):
        base = baseline_log(trace, a3)
    result = PipelineResult(base)
    tf = TraceFeatures(trace)
    for mode in cfg.modes:
        with stage("feature_pipeline"):
            windows, _ = build_windows(trace, base, cfg.feature_spec(mode), tf)
            tr_w, va_w, te_w = chronological_split(windows, cfg.ratios)
            spec = fit_minmax(tr_w)
            weights = class_weights([w.target_pp for w in tr_w])
            tr_s, va_s = apply_minmax(spec, tr_w), apply_minmax(spec, va_w)
        for kind in cfg.kinds:
            with stage("seq_models"):
                params, hist = train(kind, tr_s, va_s, tc, weights=weights)
            with stage("ho_control"):
                t0 = time.perf_counter()
                det, _ = detect_windows(params, spec, te_w, th, weights=weights, use_head=use_head,
                                        oracle_weights=oracle_weights)
                infer_s = time.perf_counter() - t0
                replay = replay_with_avoidance(trace, a3, params, spec, th, weights=weights,
                                               use_head=use_head, oracle_weights=oracle_weights,
                                               features=tf)
            with stage("metrics_report"):
                if te_w:
                    acc, prec, rec, f1 = classification_metrics([w.target_pp for w in te_w], det.is_pp)
                else:
                    acc = prec = rec = f1 = float("nan")
                pp, ho, gain = reduction_metrics(base, replay.log)
                timing = timing_capture(hist, infer_s, len(te_w))
                summary = MetricsSummary(
                    kind.value, mode.value, acc, prec, rec, f1, pp, ho, gain,
                    timing.train_s, timing.infer_s, timing.param_count,
                    n_pp=det.n_pp, n_cor=det.n_cor,
                )
            result.runs.append(RunOutcome(kind, mode, params, hist, replay, summary,
                                          timing.infer_per_event_s))
    return result


def write_pipeline(result: PipelineResult, cfg: RunConfig, out_dir: str, *, timings: bool = False,
                   extra_meta: dict | None = None) -> None:
    _write(os.path.join(out_dir, "baseline_log.csv"), result.baseline.to_csv())
    _write(os.path.join(out_dir, "config.cfg"), cfg.to_text())
    meta = {"hoseq_version": __version__, "started_unix_s": time.time(), "runs": []}
    meta.update(extra_meta or {})
    for r in result.runs:
        tag = f"{r.kind.value.lower()}_{r.mode.value.lower()}"
        _write(os.path.join(out_dir, f"decisions_{tag}.csv"), r.replay.decisions_csv())
        _write(os.path.join(out_dir, f"replay_log_{tag}.csv"), r.replay.log.to_csv())
        _write(os.path.join(out_dir, f"history_{tag}.csv"), r.history.to_csv())
        _write(os.path.join(out_dir, f"model_{tag}.bin"), r.params.to_bytes())
        meta["runs"].append({
            "kind": r.kind.value, "mode": r.mode.value,
            "wall_train_s": r.history.wall_train_s,
            "wall_infer_test_s": r.summary.wall_infer_s,
            "wall_infer_per_event_s": r.infer_per_event_s,
            "wall_replay_infer_s": r.replay.infer_s,
            "stopped_epoch": r.history.stopped_epoch,
            "best_epoch": r.history.best_epoch,
        })
    emit_report(result.summaries, out_dir, timings=timings)
    _write(os.path.join(out_dir, METADATA_FILE), json.dumps(meta, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def resolve_config(args) -> RunConfig:
    """File values, then HOSEQ_SEED if the file sets no seed, then command-line flags."""
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    file_has_seed = getattr(args, "config", None) and _file_sets(args.config, "seed")
    if not file_has_seed and os.environ.get(SEED_ENV):
        cfg.set("seed", os.environ[SEED_ENV], where=SEED_ENV)
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", args.seed, where="--seed")
    if getattr(args, "models", None):
        cfg.set("model.kind", args.models, where="--models")
    if getattr(args, "modes", None):
        cfg.set("feat.mode", args.modes, where="--modes")
    return cfg.validate()


def _file_sets(path: str, key: str) -> bool:
    with open(path, encoding="utf-8") as f:
        return any(line.split("#", 1)[0].split("=", 1)[0].strip() == key for line in f)


def cmd_gen(args) -> int:
    if len(args.rest) == 2:
        seed_text, out = args.rest
    elif len(args.rest) == 1:
        seed_text, out = None, args.rest[0]
    else:
        raise ConfigError("usage: gen PRESET [SEED] OUT.csv")
    preset = parse_preset(args.preset)
    if seed_text is not None:
        args.seed = seed_text
    cfg = resolve_config(args)
    with stage("radio_sim"):
        trace = sample_trace(generate_scenario(preset, cfg.seed), cfg.seed)
    with stage("trace_model"):
        text = format_trace(trace)
    _write(out, text)
    return EXIT_OK


def cmd_ingest(args) -> int:
    schema = None
    if args.schema:
        with open(args.schema, encoding="utf-8") as f:
            schema = ColumnMapping.from_text(f.read())
    trace, report = load_trace(args.trace, args.clamp, schema)
    _write(args.out, format_trace(trace))
    if args.violations:
        _write(args.violations, report.to_csv())
    if report.violations:
        action = "clamped" if args.clamp else "dropped rows for"
        print(f"{action} {len(report.violations)} out-of-range values", file=sys.stderr)
    return EXIT_OK


def cmd_label(args) -> int:
    cfg = resolve_config(args)
    trace, _ = load_trace(args.trace, args.clamp)
    with stage("handover_engine"):
        log = baseline_log(trace, cfg.a3)
    _write(args.out, log.to_csv())
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = resolve_config(args)
    trace, report = load_trace(args.trace, args.clamp)
    result = run_pipeline(cfg, trace, oracle_weights=args.oracle_weights)
    with staged_output(args.out_dir) as scratch:
        write_pipeline(result, cfg, scratch, timings=args.timings, extra_meta={
            "trace": os.path.abspath(args.trace), "range_violations": len(report.violations),
            "oracle_weights": bool(args.oracle_weights),
        })
    return EXIT_OK


def _grid_mode(cfg: RunConfig) -> FeatureMode:
    return cfg.modes[0] if len(cfg.modes) == 1 else FeatureMode.ALL


def run_gridsearch(cfg: RunConfig, trace: DriveTrace, jobs: int = 1):
    mode = _grid_mode(cfg)
    with stage("handover_engine"):
        base = baseline_log(trace, cfg.a3)
    tf = TraceFeatures(trace)
    spec = cfg.feature_spec(mode)

    def data(seq_len: int):
        windows, _ = build_windows(trace, base, type(spec)(mode, seq_len), tf)
        tr_w, va_w, _ = chronological_split(windows, cfg.ratios)
        fitted = fit_minmax(tr_w)
        return apply_minmax(fitted, tr_w), apply_minmax(fitted, va_w)

    space = {
        "seq_len": cfg.get("grid.seq_len"),
        "hidden_dim": cfg.get("grid.hidden_dim"),
        "learning_rate": cfg.get("grid.lr"),
    }
    with stage("seq_models"):
        return grid_search(cfg.kinds, space, data, cfg.train_config(), jobs=jobs), mode


def best_config(cfg: RunConfig, result, mode: FeatureMode) -> RunConfig:
    best = RunConfig(dict(cfg.raw))
    p = result.best.point
    best.set("model.kind", p.kind.value)
    best.set("feat.mode", mode.value)
    best.set("feat.seq_len", p.seq_len)
    best.set("model.hidden_dim", p.hidden_dim)
    best.set("train.lr", repr(p.learning_rate))
    return best


def cmd_gridsearch(args) -> int:
    cfg = resolve_config(args)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    trace, _ = load_trace(args.trace, args.clamp)
    result, mode = run_gridsearch(cfg, trace, args.jobs)
    if result.best is None:
        raise StageError("seq_models: every grid cell failed")
    with staged_output(args.out_dir) as scratch:
        _write(os.path.join(scratch, "sweep.csv"), result.to_csv())
        _write(os.path.join(scratch, "best.cfg"), best_config(cfg, result, mode).to_text())
    return EXIT_OK


def _summary_from_row(row: dict[str, str]) -> MetricsSummary:
    def num(key):
        return None if row[key] == "na" else float(row[key])

    nan = float("nan")
    f1 = num("pp_f1")
    return MetricsSummary(
        row["kind"], row["mode"], nan, nan, nan, nan if f1 is None else f1,
        num("pp_reduction"), float(row["ho_reduction"]), num("tos_gain"),
        num("train_s"), num("infer_s"), int(row["params"]),
    )


def cmd_report(args) -> int:
    summaries = []
    with stage("metrics_report"):
        for d in args.runs:
            path = d if d.endswith(".csv") else os.path.join(d, "summary.csv")
            with open(path, encoding="utf-8") as f:
                summaries += [_summary_from_row(r) for r in read_summary_csv(f.read())]
        if not summaries:
            raise ValueError("no summary rows found")
    timings = any(s.wall_train_s is not None for s in summaries)
    with staged_output(args.out) as scratch:
        emit_report(summaries, scratch, timings=timings)
    return EXIT_OK


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", help=f"overrides the config seed (fallback: ${SEED_ENV})")
    common.add_argument("--clamp", action="store_true",
                        help="clamp out-of-range radio values instead of dropping their rows")

    p = argparse.ArgumentParser(prog="hoseq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hoseq {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic drive trace")
    g.add_argument("preset", help="grid, corridor or street_canyon")
    g.add_argument("rest", nargs="+", metavar="[SEED] OUT", help="optional seed, then output CSV")
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("ingest", parents=[common], help="validate and normalise a trace CSV")
    i.add_argument("trace")
    i.add_argument("out")
    i.add_argument("--schema", help="column mapping file (canonical = source)")
    i.add_argument("--violations", help="write the range-violation report here")
    i.set_defaults(func=cmd_ingest)

    lab = sub.add_parser("label", parents=[common], help="baseline A3 handover log with ToS and ping-pong")
    lab.add_argument("trace")
    lab.add_argument("out")
    lab.set_defaults(func=cmd_label)

    pl = sub.add_parser("pipeline", parents=[common], help="label, train, replay and report")
    pl.add_argument("trace")
    pl.add_argument("out_dir")
    pl.add_argument("--models", help="comma list of GRU, LSTM, TRANSFORMER")
    pl.add_argument("--modes", help="comma list of rsrp, all (or BOTH)")
    pl.add_argument("--oracle-weights", action="store_true",
                    help="gate detection on the true label's class weight (non-causal)")
    pl.add_argument("--timings", action="store_true",
                    help="write wall-clock columns into summary.csv (breaks byte determinism)")
    pl.set_defaults(func=cmd_pipeline)

    gs = sub.add_parser("gridsearch", parents=[common], help="sweep seq_len x hidden_dim x lr")
    gs.add_argument("trace")
    gs.add_argument("out_dir")
    gs.add_argument("--models", help="comma list of GRU, LSTM, TRANSFORMER")
    gs.add_argument("--modes", help="feature mode for the sweep")
    gs.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    gs.set_defaults(func=cmd_gridsearch)

    rp = sub.add_parser("report", help="merge summary.csv files and redraw the report")
    rp.add_argument("runs", nargs="+", help="run directories or summary.csv files")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"hoseq: config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"hoseq: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (HoseqError, ValueError, OSError) as exc:
        print(f"hoseq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
