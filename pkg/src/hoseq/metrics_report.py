"""Detection metrics, handover reduction metrics, timing capture and report files."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import LengthMismatch, NoBaselineHandovers, NoBaselinePingPongs
from .handover_engine import HandoverLog

SUMMARY_COLUMNS = ("kind", "mode", "pp_reduction", "pp_f1", "ho_reduction", "tos_gain",
                   "train_s", "infer_s", "params")
NA = "na"


# ------------------------------------------------------------ classification

def classification_metrics(truth: Sequence[bool], pred: Sequence[bool]) -> tuple[float, float, float, float]:
    """Accuracy, precision, recall and F1 in percent.  A zero denominator gives 0."""
    truth = np.asarray(truth, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    if truth.shape != pred.shape:
        raise LengthMismatch(f"truth has {truth.size} labels, pred has {pred.size}")
    if truth.size == 0:
        raise LengthMismatch("need at least one label")
    tp = int(np.sum(truth & pred))
    fp = int(np.sum(~truth & pred))
    fn = int(np.sum(truth & ~pred))
    acc = float(np.mean(truth == pred))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return 100 * acc, 100 * p, 100 * r, 100 * f1


# ----------------------------------------------------------------- reduction

def _mean_tos(log: HandoverLog) -> float | None:
    stays = [e.tos_s for e in log.executed if e.tos_s is not None]
    return sum(stays) / len(stays) if stays else None


def pp_reduction(baseline: HandoverLog, replayed: HandoverLog) -> float:
    pp_b = baseline.n_ping_pong
    if pp_b == 0:
        raise NoBaselinePingPongs("baseline has no ping-pong handovers")
    return 100.0 * (pp_b - replayed.n_ping_pong) / pp_b


def reduction_metrics(baseline: HandoverLog, replayed: HandoverLog) -> tuple[float | None, float, float | None]:
    """(pp_reduction, ho_reduction, tos_gain) in percent.

    Ping-pong counts come from each log's own executed chain.  Handover
    reduction is the drop in executed handovers, so a neighbor that is
    suppressed several times before it finally executes counts once.
    pp_reduction is None when the baseline has no ping-pong; tos_gain is None
    when either log has no complete stay.
    """
    n_b = len(baseline.executed)
    if n_b == 0:
        raise NoBaselineHandovers("baseline has no executed handovers")
    try:
        pp = pp_reduction(baseline, replayed)
    except NoBaselinePingPongs:
        pp = None
    ho = 100.0 * (n_b - len(replayed.executed)) / n_b
    tos_b, tos_r = _mean_tos(baseline), _mean_tos(replayed)
    gain = None if tos_b is None or tos_r is None else 100.0 * (tos_r - tos_b) / tos_b
    return pp, ho, gain


# -------------------------------------------------------------------- timing

@dataclass(frozen=True)
class Timing:
    train_s: float
    infer_s: float
    infer_per_event_s: float | None
    param_count: int


def timing_capture(history, infer_s: float, n_events: int) -> Timing:
    """Bundle wall-clock figures; per-event inference is None without events."""
    per = infer_s / n_events if n_events > 0 else None
    return Timing(history.wall_train_s, infer_s, per, history.param_count)


# ------------------------------------------------------------------- summary

@dataclass(frozen=True)
class MetricsSummary:
    kind: str
    mode: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    pp_reduction_pct: float | None
    ho_reduction_pct: float
    tos_gain_pct: float | None
    wall_train_s: float | None = None
    wall_infer_s: float | None = None
    param_count: int = 0
    n_pp: int = 0  # detections, false positives included
    n_cor: int = 0  # correct detections

    def __post_init__(self):
        for name in ("pp_reduction_pct", "ho_reduction_pct", "tos_gain_pct"):
            v = getattr(self, name)
            if name != "tos_gain_pct" and v is not None and v > 100.0 + 1e-9:
                raise ValueError(f"{name} exceeds 100")


def _fmt(v, digits: int = 2) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return NA
    return f"{v:.{digits}f}"


def summary_csv(summaries: Sequence[MetricsSummary], timings: bool = False) -> str:
    """Table with the fixed column set.  Wall-clock columns read ``na`` unless ``timings``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summaries:
        w.writerow([
            s.kind, s.mode, _fmt(s.pp_reduction_pct), _fmt(s.f1), _fmt(s.ho_reduction_pct),
            _fmt(s.tos_gain_pct),
            _fmt(s.wall_train_s, 3) if timings else NA,
            _fmt(s.wall_infer_s, 4) if timings else NA,
            s.param_count,
        ])
    return buf.getvalue()


def summary_text(summaries: Sequence[MetricsSummary]) -> str:
    head = ("kind", "mode", "acc%", "prec%", "rec%", "F1%", "PP red%", "HO red%", "ToS gain%",
            "n_pp", "n_cor", "params")
    rows = [head]
    for s in summaries:
        rows.append((
            s.kind, s.mode, _fmt(s.accuracy), _fmt(s.precision), _fmt(s.recall), _fmt(s.f1),
            _fmt(s.pp_reduction_pct), _fmt(s.ho_reduction_pct), _fmt(s.tos_gain_pct),
            str(s.n_pp), str(s.n_cor), str(s.param_count),
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    lines = ["  ".join(c.rjust(wd) for c, wd in zip(r, widths)) for r in rows]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    return "\n".join(lines) + "\n"


CHART_METRICS = (
    ("pp_reduction", "Ping-pong reduction (%)", "pp_reduction_pct"),
    ("pp_f1", "Ping-pong F1 (%)", "f1"),
    ("ho_reduction", "Handover reduction (%)", "ho_reduction_pct"),
    ("tos_gain", "ToS gain (%)", "tos_gain_pct"),
)


def _bar_chart(path: str, title: str, labels: list[str], values: list[float]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with plt.rc_context({"svg.hashsalt": "hoseq", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(labels)), 3.2))
        xs = np.arange(len(labels))
        ax.bar(xs, [0.0 if math.isnan(v) else v for v in values], color="#4c72b0")
        ax.set_xticks(xs)
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        ax.set_title(title, fontsize=10)
        ax.axhline(0.0, color="black", linewidth=0.6)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def emit_report(summaries: Sequence[MetricsSummary], out_dir: str, *, timings: bool = False,
                charts: bool = True) -> list[str]:
    """Write summary.csv, summary.txt and one SVG bar chart per metric; returns the paths."""
    if not summaries:
        raise ValueError("need at least one summary")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, text in (("summary.csv", summary_csv(summaries, timings)),
                       ("summary.txt", summary_text(summaries))):
        p = os.path.join(out_dir, name)
        with open(p, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        paths.append(p)
    if charts:
        labels = [f"{s.kind}/{s.mode}" for s in summaries]
        for stem, title, attr in CHART_METRICS:
            vals = [math.nan if getattr(s, attr) is None else float(getattr(s, attr)) for s in summaries]
            p = os.path.join(out_dir, f"chart_{stem}.svg")
            _bar_chart(p, title, labels, vals)
            paths.append(p)
    return paths


def read_summary_csv(text: str) -> list[dict[str, str]]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and tuple(rows[0].keys()) != SUMMARY_COLUMNS:
        raise ValueError("unexpected summary.csv header")
    return rows
