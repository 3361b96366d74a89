"""Trace builders and independent reference implementations used as test oracles.

The oracles deliberately avoid the package's own code paths: the A3 reference
looks back over the sample history instead of keeping timers, the ping-pong
reference is an O(n^2) pairwise scan and the confusion matrix is counted with
plain loops.
"""

from __future__ import annotations

import math

import numpy as np

from hoseq.handover_engine import HandoverEvent, HandoverLog
from hoseq.trace_model import (
    CellMeasurement,
    DriveTrace,
    MeasurementRecord,
    Mobility,
    Operator,
    Session,
)


def make_trace(rsrp, cell_ids=None, period_ms=1000, snr=None, bearings=None, speed=1.0,
               sessions=None, mobility=Mobility.WALK, t0_ms=0) -> DriveTrace:
    """Build a trace from a T x C RSRP matrix; nan means the cell is unreported.

    The strongest reported cell goes in the serving slot, at most four
    neighbors follow in descending RSRP.
    """
    rsrp = np.asarray(rsrp, dtype=float)
    n, c = rsrp.shape
    ids = list(cell_ids) if cell_ids is not None else list(range(1, c + 1))
    snr = np.zeros_like(rsrp) if snr is None else np.asarray(snr, dtype=float)
    records = []
    for t in range(n):
        present = [j for j in range(c) if not math.isnan(rsrp[t, j])]
        present.sort(key=lambda j: (-rsrp[t, j], ids[j]))
        cells = [CellMeasurement(ids[j], float(rsrp[t, j]), -10.0, float(snr[t, j])) for j in present[:5]]
        if not cells:
            raise ValueError(f"row {t} reports no cell")
        records.append(MeasurementRecord(
            ts_ms=t0_ms + t * period_ms,
            operator=Operator.A,
            lat_deg=3.0 + 1e-5 * t,
            lon_deg=101.0,
            speed_mps=float(speed),
            bearing_deg=float(bearings[t]) if bearings is not None else 0.0,
            session=sessions[t] if sessions is not None else Session.FTP,
            mobility=mobility,
            serving=cells[0],
            neighbors=tuple(cells[1:]),
        ))
    return DriveTrace(tuple(records), period_ms)


def random_rsrp(rng: np.random.Generator, n: int, c: int, p_missing: float = 0.1) -> np.ndarray:
    """Random-walk RSRP streams with occasional unreported samples (never a fully empty row)."""
    base = rng.uniform(-110, -70, size=c)
    steps = rng.normal(0.0, rng.uniform(0.5, 4.0), size=(n, c))
    x = np.clip(base + np.cumsum(steps, axis=0), -140, -44)
    mask = rng.random((n, c)) < p_missing
    mask[mask.all(axis=1), 0] = False
    x[mask] = np.nan
    return x


# ------------------------------------------------------------------- oracles

def a3_reference(ts_ms, rsrp, cell_ids, period_ms, hyst_db, ttt_ms):
    """Look-back Event-A3: list of (sample, source_id, target_id).

    At sample t a neighbor fires when its condition has held on every sample
    since some k (after the last handover) with ts[t] - ts[k] + period >= TTT.
    """
    n, c = rsrp.shape

    def cond(t, serving, j):
        s = rsrp[t, serving]
        s = -140.0 if math.isnan(s) else s
        v = rsrp[t, j]
        return (not math.isnan(v)) and v > s + hyst_db

    first = rsrp[0]
    serving = None
    for j in range(c):
        if not math.isnan(first[j]) and (serving is None or first[j] > first[serving]):
            serving = j
    last_ho = -1
    out = []
    for t in range(n):
        fired = []
        for j in range(c):
            if j == serving or not cond(t, serving, j):
                continue
            k = t
            while k - 1 > last_ho and cond(k - 1, serving, j):
                k -= 1
            if ts_ms[t] - ts_ms[k] + period_ms >= ttt_ms:
                fired.append(j)
        if fired:
            win = max(fired, key=lambda j: (rsrp[t, j], -cell_ids[j]))
            out.append((t, cell_ids[serving], cell_ids[win]))
            serving = win
            last_ho = t
    return out


def pingpong_reference(events, t_pp_s):
    """(tos, flag) per event by pairwise scan; suppressed events get (None, False)."""
    out = []
    for i, a in enumerate(events):
        if not a.executed:
            out.append((None, False))
            continue
        nxt = None
        for j in range(len(events)):
            if j > i and events[j].executed:
                nxt = events[j]
                break
        if nxt is None:
            out.append((None, False))
            continue
        tos = (nxt.trigger_ts_ms - a.trigger_ts_ms) / 1000.0
        out.append((tos, nxt.target_cell_id == a.source_cell_id and tos < t_pp_s))
    return out


def confusion_reference(truth, pred):
    tp = fp = fn = tn = 0
    for t, p in zip(truth, pred):
        if t and p:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    n = tp + fp + fn + tn
    acc = (tp + tn) / n
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return 100 * acc, 100 * prec, 100 * rec, 100 * f1


def random_log(rng: np.random.Generator, n_events: int, n_cells: int = 4, p_suppressed: float = 0.2):
    """A chained log with random gaps; some events are marked suppressed."""
    cur = int(rng.integers(n_cells))
    initial = cur
    t = 0
    events = []
    for i in range(n_events):
        t += int(rng.integers(200, 12_000))
        tgt = int(rng.integers(n_cells - 1))
        tgt = tgt + 1 if tgt >= cur else tgt
        executed = bool(rng.random() >= p_suppressed)
        events.append(HandoverEvent(i, t, cur, tgt, i, executed=executed))
        if executed:
            cur = tgt
    return HandoverLog(initial, tuple(events), (t + 1000) / 1000.0)


def log_from(pairs, initial, duration_s=1000.0, executed=None):
    """Log from (trigger_s, source, target) triples."""
    events = tuple(
        HandoverEvent(i, int(round(ts * 1000)), a, b, i,
                      executed=True if executed is None else executed[i])
        for i, (ts, a, b) in enumerate(pairs)
    )
    return HandoverLog(initial, events, duration_s)


def learnable_task(n: int, seed: int, seq_len: int = 10, n_features: int = 3):
    """(train, val) batches where log ToS is affine in the last RSRP slope plus noise.

    Feature 0 is a scaled RSRP ramp whose last-step slope drives the target;
    the remaining features are noise.  Ping-pong is flagged when ToS < 5 s.
    """
    from hoseq.seq_models import Batch

    rng = np.random.default_rng(seed)
    s = rng.uniform(-1.0, 1.0, size=n)
    start = rng.uniform(0.3, 0.7, size=n)
    steps = np.arange(seq_len) - (seq_len - 1)
    X = rng.uniform(0.0, 1.0, size=(n, seq_len, n_features))
    X[:, :, 0] = start[:, None] + 0.03 * s[:, None] * steps[None, :]
    tos = np.exp(1.5 + 1.2 * s + rng.normal(0.0, 0.1, n))
    b = Batch(X, tos, tos < 5.0)
    cut = int(0.8 * n)
    return b.take(np.arange(cut)), b.take(np.arange(cut, n))


def random_replay_setup(seed: int, n: int = 300, kind: str = "GRU", mode=None, seq_len: int = 5):
    """A random trace plus an untrained model and a fitted feature spec for replay."""
    from hoseq.feature_pipeline import FeatureMode, FeatureSpec, build_windows, fit_minmax
    from hoseq.handover_engine import A3Params, baseline_log
    from hoseq.seq_models import init_params

    rng = np.random.default_rng(seed)
    mode = mode or FeatureMode.ALL
    c = int(rng.integers(2, 5))
    tr = make_trace(random_rsrp(rng, n, c, 0.05), bearings=rng.uniform(0, 360, n),
                    snr=rng.normal(5, 6, (n, c)), period_ms=int(rng.choice([200, 500, 1000])))
    a3 = A3Params(float(rng.uniform(0, 3)), int(rng.choice([0, 320, 640])))
    spec = FeatureSpec(mode, seq_len)
    ws, _ = build_windows(tr, baseline_log(tr, a3), spec)
    if ws:
        spec = fit_minmax(ws)
    else:
        f = spec.n_features
        spec = FeatureSpec(mode, seq_len, (0.0,) * f, (1.0,) * f)
    model = init_params(kind, spec.n_features, 4, seq_len, rng)
    return tr, a3, spec, model


# -------------------------------------------------------------- acceptance

ACCEPTANCE_LINES: list[tuple[int, str]] = []


class criterion:
    """Context manager that times one acceptance criterion and records a pass/fail line."""

    def __init__(self, number: int, title: str, limit_s: float | None = None):
        self.number, self.title, self.limit_s = number, title, limit_s
        self.detail = ""

    def __enter__(self):
        import time

        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        import time

        elapsed = time.perf_counter() - self._t0
        ok = exc_type is None
        if ok and self.limit_s is not None and elapsed >= self.limit_s:
            ok = False
            self.detail += f" runtime {elapsed:.1f}s exceeds {self.limit_s:.0f}s"
        if exc is not None:
            self.detail += f" [{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}]"
        line = (f"ACCEPTANCE {self.number:>2} {'PASS' if ok else 'FAIL'} {self.title} "
                f"({elapsed:.1f}s){' -' if self.detail else ''}{self.detail}")
        print(line)
        ACCEPTANCE_LINES.append((self.number, line))
        if exc_type is None and not ok:
            raise AssertionError(line)
        return False
