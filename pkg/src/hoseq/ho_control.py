"""Ping-pong detection, handover avoidance and counterfactual replay of a trace."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import MissingPrediction, TooFewBearings
from .feature_pipeline import (
    ClassWeights,
    FeatureMode,
    FeatureSpec,
    SequenceWindow,
    TraceFeatures,
    scale,
)
from .handover_engine import (
    A3Machine,
    A3Params,
    HandoverEvent,
    HandoverLog,
    compute_tos,
    label_ping_pong,
    would_ping_pong,
)
from .seq_models import PredictorParams, predict
from .trace_model import DriveTrace

MAWAY_DEG = 45.0


class Decision(str, Enum):
    EXECUTE = "EXECUTE"
    SUPPRESS = "SUPPRESS"


@dataclass(frozen=True)
class ControlThresholds:
    tos_th_s: float = 5.0
    rsrp_slope_th_db_s: float = 5.0
    snr_slope_th_db_s: float = 3.0
    osc_th_s: float = 2.0
    theta_rsrp_dbm: float = -110.0
    theta_tos_s: float = 5.0
    maway_deg: float = MAWAY_DEG

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
        for name in ("tos_th_s", "theta_tos_s", "osc_th_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.maway_deg != MAWAY_DEG:
            raise ValueError("maway_deg is fixed at 45 degrees")


# ------------------------------------------------------------------ detection

@dataclass(frozen=True)
class Detection:
    short: bool
    osc: bool
    rule: bool  # unweighted Boolean formula
    is_pp: bool  # after the class-weight gate


def weighted_posterior(pp_prob: float, weights: ClassWeights) -> float:
    """Class-weight adjusted ping-pong posterior p*w1 / (p*w1 + (1-p)*w0)."""
    a = pp_prob * weights[1]
    b = (1.0 - pp_prob) * weights[0]
    return a / (a + b) if a + b > 0 else 0.0


def detect_one(
    y_p: float | None,
    rsrp_slope: float,
    snr_slope: float,
    th: ControlThresholds,
    *,
    pp_prob: float | None = None,
    weights: ClassWeights | None = None,
    truth: bool | None = None,
    oracle_weights: bool = False,
) -> Detection:
    """short = y_p < ToS_th; osc = |rsrp slope| > th or |snr slope| > th;
    is_pp = short and (osc or y_p < osc_th), then gated by class weights.

    With ``pp_prob`` the rule must agree with a weighted posterior >= 0.5.
    ``oracle_weights`` instead gates on the ground-truth class weight (non-causal;
    only for reproducing label-aware counting).
    """
    if y_p is None or (isinstance(y_p, float) and math.isnan(y_p)):
        raise MissingPrediction("event has no ToS prediction")
    short = y_p < th.tos_th_s
    osc = abs(rsrp_slope) > th.rsrp_slope_th_db_s or abs(snr_slope) > th.snr_slope_th_db_s
    rule = short and (osc or y_p < th.osc_th_s)
    is_pp = rule
    w = weights or ClassWeights.uniform()
    if rule and oracle_weights:
        if truth is None:
            raise ValueError("oracle weighting needs the ground-truth flag")
        is_pp = w[truth] / (w[0] + w[1]) >= 0.5
    elif rule and pp_prob is not None:
        is_pp = weighted_posterior(pp_prob, w) >= 0.5
    return Detection(short, osc, rule, is_pp)


@dataclass(frozen=True)
class DetectionResult:
    is_pp: tuple[bool, ...]
    n_pp: int
    n_cor: int


def detect(
    y_p: Sequence[float | None],
    rsrp_slopes: Sequence[float],
    snr_slopes: Sequence[float],
    truth: Sequence[bool],
    th: ControlThresholds,
    *,
    weights: ClassWeights | None = None,
    pp_probs: Sequence[float] | None = None,
    oracle_weights: bool = False,
) -> DetectionResult:
    """Run detection over a set of handovers; n_pp counts detections, n_cor true positives."""
    flags = []
    n_cor = 0
    for k in range(len(y_p)):
        d = detect_one(
            y_p[k], rsrp_slopes[k], snr_slopes[k], th,
            pp_prob=None if pp_probs is None else pp_probs[k],
            weights=weights, truth=bool(truth[k]), oracle_weights=oracle_weights,
        )
        flags.append(d.is_pp)
        n_cor += d.is_pp and bool(truth[k])
    return DetectionResult(tuple(flags), sum(flags), n_cor)


# ------------------------------------------------------------------ avoidance

def circular_diff(a_deg: float, b_deg: float) -> float:
    d = abs(a_deg - b_deg) % 360.0
    return min(d, 360.0 - d)


@dataclass(frozen=True)
class Avoidance:
    decision: Decision
    maway: bool
    safe: bool
    unnec: bool
    is_pp: bool

    @property
    def via(self) -> str:
        if self.decision is Decision.EXECUTE:
            return ""
        return "+".join(p for p, on in (("is_pp", self.is_pp), ("unnec", self.unnec)) if on)


def avoid(
    y_p: float,
    bearings: Sequence[float] | None,
    serving_rsrp_dbm: float,
    is_pp: bool,
    th: ControlThresholds,
) -> Avoidance:
    """maway = turn between the last two bearings > 45 deg; safe = serving RSRP > floor;
    unnec = (y_p < theta_tos or maway) and safe; suppress iff is_pp or unnec.

    ``bearings=None`` means the heading is unavailable (maway false).
    """
    if bearings is None:
        maway = False
    else:
        if len(bearings) < 2:
            raise TooFewBearings("need at least two bearing samples")
        maway = circular_diff(bearings[-1], bearings[-2]) > th.maway_deg
    safe = serving_rsrp_dbm > th.theta_rsrp_dbm
    unnec = (y_p < th.theta_tos_s or maway) and safe
    decision = Decision.SUPPRESS if (is_pp or unnec) else Decision.EXECUTE
    return Avoidance(decision, maway, safe, unnec, is_pp)


@dataclass(frozen=True)
class AvoidanceResult:
    decisions: tuple[Decision, ...]
    n_avd: int
    n_maway: int


def summarize_avoidance(items: Sequence[Avoidance]) -> AvoidanceResult:
    decisions = tuple(a.decision for a in items)
    return AvoidanceResult(
        decisions,
        sum(d is Decision.SUPPRESS for d in decisions),
        sum(a.maway for a in items),
    )


# --------------------------------------------------------------------- replay

@dataclass(frozen=True)
class DecisionRecord:
    i: int
    trigger_ts_ms: int
    source: int
    target: int
    y_p: float
    pp_prob: float
    short: bool
    osc: bool
    maway: bool
    safe: bool
    is_pp: bool
    truth_pp: bool
    decision: Decision
    via: str = ""
    note: str = ""


DECISION_COLUMNS = ("i", "trigger_ts_ms", "source", "target", "y_p", "short", "osc", "maway",
                    "safe", "is_pp", "decision")


@dataclass
class ReplayResult:
    log: HandoverLog
    avoidance: AvoidanceResult
    detection: DetectionResult
    records: list[DecisionRecord] = field(default_factory=list)
    infer_s: float = 0.0

    def decisions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DECISION_COLUMNS)
        for r in self.records:
            w.writerow([
                r.i, r.trigger_ts_ms, r.source, r.target,
                "" if math.isnan(r.y_p) else repr(r.y_p),
                int(r.short), int(r.osc), int(r.maway), int(r.safe), int(r.is_pp), r.decision.value,
            ])
        return buf.getvalue()


def mode_signals(mode: FeatureMode, snr_slope: float, bearings):
    """RSRP-only operation sees neither SNR nor heading."""
    if mode is FeatureMode.RSRP_ONLY:
        return 0.0, None
    return snr_slope, bearings


def replay_with_avoidance(
    trace: DriveTrace,
    a3: A3Params,
    model: PredictorParams | None,
    spec: FeatureSpec,
    th: ControlThresholds,
    *,
    weights: ClassWeights | None = None,
    use_head: bool = True,
    oracle_weights: bool = False,
    force: Decision | None = None,
    features: TraceFeatures | None = None,
) -> ReplayResult:
    """Re-run A3 on ``trace`` with detection and avoidance at every TTT expiry.

    A suppressed handover keeps the serving cell and clears that neighbor's
    timer.  Triggers without enough history for a window execute (fail-open).
    ``force`` overrides every decision; the detection fields are still filled
    when a model is given.  Ground truth for each trigger is the counterfactual
    A3 outcome had it executed.
    """
    tf = features or TraceFeatures(trace)
    m = A3Machine(trace, a3)
    ids = m.ids
    n = len(trace)
    serving = np.empty(n, dtype=np.int64)
    stay = np.empty(n, dtype=np.int64)
    since = int(trace.ts_ms[0])
    initial = ids[m.serving]
    events: list[HandoverEvent] = []
    records: list[DecisionRecord] = []
    avoidances: list[Avoidance] = []
    det_flags: list[bool] = []
    n_cor = 0
    infer_s = 0.0

    for t in range(n):
        serving[t] = m.serving
        stay[t] = since
        col = m.step(t)
        if col is None:
            continue
        src = m.serving
        window = tf.window(t, spec, serving, stay) if model is not None else None
        note = ""
        if window is None:
            note = "no_window"
            decision = force or Decision.EXECUTE
            rec = DecisionRecord(len(events), m.ts[t], ids[src], ids[col], math.nan, math.nan,
                                 False, False, False, False, False, False, decision, note=note)
        else:
            t0 = time.perf_counter()
            tos, prob = predict(model, scale(spec, window.features)[None])
            infer_s += time.perf_counter() - t0
            y_p, pp_prob = float(tos[0]), float(prob[0])
            truth = would_ping_pong(trace, a3, t, src, col)
            snr_slope, bearings = mode_signals(spec.mode, window.snr_slope_db_s, window.bearings_deg)
            det = detect_one(
                y_p, window.rsrp_slope_db_s, snr_slope, th,
                pp_prob=pp_prob if use_head else None, weights=weights,
                truth=truth, oracle_weights=oracle_weights,
            )
            av = avoid(y_p, bearings, window.serving_rsrp_dbm, det.is_pp, th)
            decision = force or av.decision
            if force is not None:
                av = Avoidance(decision, av.maway, av.safe, av.unnec, av.is_pp)
            avoidances.append(av)
            det_flags.append(det.is_pp)
            n_cor += det.is_pp and truth
            rec = DecisionRecord(len(events), m.ts[t], ids[src], ids[col], y_p, pp_prob, det.short,
                                 det.osc, av.maway, av.safe, det.is_pp, truth, decision, via=av.via)
        executed = decision is Decision.EXECUTE
        events.append(HandoverEvent(
            index=len(events), trigger_ts_ms=m.ts[t], source_cell_id=ids[src],
            target_cell_id=ids[col], sample_index=t, executed=executed, note=note,
        ))
        records.append(rec)
        if executed:
            m.execute(col)
            since = m.ts[t]
        else:
            m.suppress(col)

    log = HandoverLog(initial, tuple(events), trace.duration_s)
    log = label_ping_pong(compute_tos(log), a3.t_pp_s)
    detection = DetectionResult(tuple(det_flags), sum(det_flags), n_cor)
    return ReplayResult(log, summarize_avoidance(avoidances), detection, records, infer_s)


def detect_windows(
    model: PredictorParams,
    spec: FeatureSpec,
    windows: Sequence[SequenceWindow],
    th: ControlThresholds,
    *,
    weights: ClassWeights | None = None,
    use_head: bool = True,
    oracle_weights: bool = False,
) -> tuple[DetectionResult, np.ndarray]:
    """Detection over labelled (unscaled) windows; returns the result and the ToS predictions."""
    if not windows:
        return DetectionResult((), 0, 0), np.zeros(0)
    X = np.stack([scale(spec, w.features) for w in windows])
    tos, prob = predict(model, X)
    snr = [mode_signals(spec.mode, w.snr_slope_db_s, None)[0] for w in windows]
    res = detect(
        tos.tolist(), [w.rsrp_slope_db_s for w in windows], snr, [w.target_pp for w in windows], th,
        weights=weights, pp_probs=prob.tolist() if use_head else None, oracle_weights=oracle_weights,
    )
    return res, tos
