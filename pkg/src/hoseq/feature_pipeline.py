"""Sequence windows ending at each handover trigger, min-max scaling, class weights, splits."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import EmptyTrainSet, SingleClass, TooFewWindows, TooShort
from .handover_engine import UNREPORTED_SERVING_RSRP_DBM, HandoverLog
from .trace_model import SNR_RANGE_DB, DriveTrace, encode_categoricals

UNREPORTED_SNR_DB = SNR_RANGE_DB[0]


class FeatureMode(str, Enum):
    RSRP_ONLY = "RSRP_ONLY"
    ALL = "ALL"


ALL_FEATURES = (
    "serving_rsrp", "best_nbr_rsrp", "serving_snr", "rsrp_slope", "snr_slope",
    "session_elapsed_s", "bearing_sin", "bearing_cos", "speed_mps", "dwell_s",
    "session_ftp", "session_video", "session_http",
    "mobility_walk", "mobility_shuttle", "mobility_brt",
)
MODE_FEATURES = {
    FeatureMode.ALL: ALL_FEATURES,
    FeatureMode.RSRP_ONLY: ("serving_rsrp", "best_nbr_rsrp"),
}
_MODE_COLUMNS = {m: [ALL_FEATURES.index(n) for n in names] for m, names in MODE_FEATURES.items()}

DEFAULT_SEQ_LEN = 10


def slope(series: Sequence[float], dt_s: float) -> np.ndarray:
    """First difference divided by ``dt_s``; one element shorter than ``series``."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise TooShort("slope needs at least 2 samples")
    if not dt_s > 0:
        raise ValueError("dt_s must be positive")
    return np.diff(x) / dt_s


@dataclass(frozen=True, eq=False)
class SequenceWindow:
    """``features`` is L x F, time-ordered, the last row being the trigger sample.

    The raw (unscaled) Alg. inputs travel alongside: last-step RSRP/SNR
    slopes in dB/s, serving RSRP at the trigger and the bearing history.
    """

    features: np.ndarray
    ts_ms: np.ndarray
    target_tos_s: float
    target_pp: bool
    event_index: int
    mode: FeatureMode
    serving_rsrp_dbm: float
    rsrp_slope_db_s: float
    snr_slope_db_s: float
    bearings_deg: np.ndarray
    normalized: bool = False

    @property
    def seq_len(self) -> int:
        return self.features.shape[0]

    @property
    def censored(self) -> bool:
        return math.isnan(self.target_tos_s)


@dataclass(frozen=True)
class FeatureSpec:
    mode: FeatureMode = FeatureMode.ALL
    seq_len: int = DEFAULT_SEQ_LEN
    mins: tuple[float, ...] | None = None
    maxs: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", FeatureMode(self.mode))
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        if (self.mins is None) != (self.maxs is None):
            raise ValueError("mins and maxs must be fitted together")
        if self.mins is not None:
            if len(self.mins) != self.n_features or len(self.maxs) != self.n_features:
                raise ValueError("min/max length does not match the feature mode")
            if any(lo > hi for lo, hi in zip(self.mins, self.maxs)):
                raise ValueError("min exceeds max")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return MODE_FEATURES[self.mode]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def fitted(self) -> bool:
        return self.mins is not None


@dataclass(frozen=True)
class ClassWeights:
    w: dict[int, float]

    def __getitem__(self, c) -> float:
        return self.w[int(c)]

    @classmethod
    def uniform(cls) -> "ClassWeights":
        return cls({0: 1.0, 1: 1.0})


class TraceFeatures:
    """Per-sample feature material for one trace.

    Serving-independent columns are precomputed; serving-dependent ones are
    assembled per window from a serving timeline, so the same code serves the
    baseline log and an online replay.
    """

    def __init__(self, trace: DriveTrace):
        self.trace = trace
        self.ts = trace.ts_ms
        self.dt_s = trace.sample_period_ms / 1000.0
        self.rsrp = np.asarray(trace.rsrp_matrix)
        self.snr = np.asarray(trace.snr_matrix)
        self.bearing = trace.bearing_deg
        rad = np.radians(self.bearing)
        n = len(trace)
        start = np.zeros(n, dtype=np.int64)
        for k in range(1, n):
            start[k] = start[k - 1] if trace[k].session == trace[k - 1].session else self.ts[k]
        start[0] = self.ts[0]
        self.static = np.column_stack([
            (self.ts - start) / 1000.0,
            np.sin(rad),
            np.cos(rad),
            trace.speed_mps,
            encode_categoricals(trace),
        ])

    def serving_rsrp(self, t: int, col: int) -> float:
        v = self.rsrp[t, col]
        return UNREPORTED_SERVING_RSRP_DBM if np.isnan(v) else float(v)

    def serving_snr(self, t: int, col: int) -> float:
        v = self.snr[t, col]
        return UNREPORTED_SNR_DB if np.isnan(v) else float(v)

    def best_neighbor_rsrp(self, t: int, col: int) -> float:
        row = self.rsrp[t].copy()
        row[col] = np.nan
        if np.all(np.isnan(row)):
            return UNREPORTED_SERVING_RSRP_DBM
        return float(np.nanmax(row))

    def rows(self, t: int, seq_len: int, serving: Sequence[int], stay_start_ms: Sequence[int]) -> np.ndarray:
        """All-feature rows for samples ``t-seq_len+1 .. t``.

        ``serving[s]`` is the serving column at sample s and ``stay_start_ms[s]``
        the time the UE arrived on it; both must be defined up to ``t``.
        Slopes are taken on the row's own serving cell, so they need ``t >= seq_len``.
        """
        lo = t - seq_len + 1
        out = np.empty((seq_len, len(ALL_FEATURES)))
        for i, s in enumerate(range(lo, t + 1)):
            c = serving[s]
            r_now, r_prev = self.serving_rsrp(s, c), self.serving_rsrp(s - 1, c)
            q_now, q_prev = self.serving_snr(s, c), self.serving_snr(s - 1, c)
            out[i, :5] = (
                r_now,
                self.best_neighbor_rsrp(s, c),
                q_now,
                (r_now - r_prev) / self.dt_s,
                (q_now - q_prev) / self.dt_s,
            )
            out[i, 5:9] = self.static[s, :4]
            out[i, 9] = (self.ts[s] - stay_start_ms[s]) / 1000.0
            out[i, 10:] = self.static[s, 4:]
        return out

    def window(self, t: int, spec: FeatureSpec, serving, stay_start_ms, *, target_tos_s=math.nan,
               target_pp=False, event_index=-1) -> SequenceWindow | None:
        """Causal window ending at trigger sample ``t``, or None with too little history."""
        if t < spec.seq_len:
            return None
        full = self.rows(t, spec.seq_len, serving, stay_start_ms)
        lo = t - spec.seq_len + 1
        return SequenceWindow(
            features=full[:, _MODE_COLUMNS[spec.mode]],
            ts_ms=self.ts[lo : t + 1].copy(),
            target_tos_s=float(target_tos_s),
            target_pp=bool(target_pp),
            event_index=event_index,
            mode=spec.mode,
            serving_rsrp_dbm=float(full[-1, 0]),
            rsrp_slope_db_s=float(full[-1, 3]),
            snr_slope_db_s=float(full[-1, 4]),
            bearings_deg=self.bearing[lo : t + 1].copy(),
        )


def serving_timeline(trace: DriveTrace, log: HandoverLog) -> tuple[np.ndarray, np.ndarray]:
    """Serving column and stay-start time per sample implied by the executed events.

    At a trigger sample the UE is still on the source cell.
    """
    idx = trace.cell_index
    n = len(trace)
    serving = np.empty(n, dtype=np.int64)
    stay = np.empty(n, dtype=np.int64)
    switch = {e.sample_index: e for e in log.events if e.executed}
    cur, since = idx[log.initial_cell_id], int(trace.ts_ms[0])
    for s in range(n):
        serving[s] = cur
        stay[s] = since
        e = switch.get(s)
        if e is not None:
            cur, since = idx[e.target_cell_id], int(trace.ts_ms[s])
    return serving, stay


def build_windows(
    trace: DriveTrace, log: HandoverLog, spec: FeatureSpec, features: TraceFeatures | None = None
) -> tuple[list[SequenceWindow], int]:
    """One window per handover event with enough history; returns (windows, skipped)."""
    tf = features or TraceFeatures(trace)
    serving, stay = serving_timeline(trace, log)
    windows, skipped = [], 0
    for e in log.events:
        w = tf.window(
            e.sample_index, spec, serving, stay,
            target_tos_s=math.nan if e.tos_s is None else e.tos_s,
            target_pp=e.pp_flag, event_index=e.index,
        )
        if w is None:
            skipped += 1
        else:
            windows.append(w)
    return windows, skipped


def fit_minmax(train_windows: Sequence[SequenceWindow]) -> FeatureSpec:
    if not train_windows:
        raise EmptyTrainSet("cannot fit min-max on an empty training split")
    stack = np.concatenate([w.features for w in train_windows], axis=0)
    w0 = train_windows[0]
    return FeatureSpec(
        mode=w0.mode,
        seq_len=w0.seq_len,
        mins=tuple(float(v) for v in stack.min(axis=0)),
        maxs=tuple(float(v) for v in stack.max(axis=0)),
    )


def scale(spec: FeatureSpec, x: np.ndarray) -> np.ndarray:
    """Min-max scale an (..., F) array; out-of-range values clamp, constant features map to 0."""
    lo = np.asarray(spec.mins)
    hi = np.asarray(spec.maxs)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def apply_minmax(spec: FeatureSpec, windows: Sequence[SequenceWindow]) -> list[SequenceWindow]:
    if not spec.fitted:
        raise ValueError("feature spec is not fitted")
    return [dataclasses.replace(w, features=scale(spec, w.features), normalized=True) for w in windows]


def class_weights(labels: Sequence[bool]) -> ClassWeights:
    """Inverse-frequency weights ``N / (2 N_c)``."""
    y = np.asarray(labels, dtype=bool)
    n = len(y)
    n1 = int(y.sum())
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        raise SingleClass("class weights need both classes present")
    return ClassWeights({0: n / (2.0 * n0), 1: n / (2.0 * n1)})


def chronological_split(windows: Sequence, ratios=(0.70, 0.15, 0.15)):
    """Contiguous train/val/test partitions: floor(train), floor(val), remainder to test."""
    n = len(windows)
    if n < 10:
        raise TooFewWindows(f"need at least 10 windows, got {n}")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    n_train = int(math.floor(n * ratios[0] + 1e-9))
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    return list(windows[:n_train]), list(windows[n_train : n_train + n_val]), list(windows[n_train + n_val :])


def windows_to_csv(windows: Sequence[SequenceWindow]) -> str:
    names = MODE_FEATURES[windows[0].mode] if windows else ()
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["window", "event", "row", "ts_ms", *names, "target_tos_s", "target_pp"])
    for k, w in enumerate(windows):
        for i in range(w.seq_len):
            wr.writerow([
                k, w.event_index, i, int(w.ts_ms[i]), *(repr(float(v)) for v in w.features[i]),
                "" if w.censored else repr(w.target_tos_s), int(w.target_pp),
            ])
    return buf.getvalue()


def stack(windows: Sequence[SequenceWindow]) -> np.ndarray:
    return np.stack([w.features for w in windows]) if windows else np.zeros((0, 0, 0))
