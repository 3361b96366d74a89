"""Event-A3 handover state machine, Time-of-Stay and ping-pong labelling."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass

from .errors import EmptyTrace
from .trace_model import RSRP_RANGE_DBM, DriveTrace

# Serving RSRP assumed when the serving cell is absent from a record.
UNREPORTED_SERVING_RSRP_DBM = RSRP_RANGE_DBM[0]


@dataclass(frozen=True)
class A3Params:
    hysteresis_db: float = 3.0
    ttt_ms: int = 320
    t_pp_s: float = 5.0

    def __post_init__(self):
        if not (self.hysteresis_db >= 0 and math.isfinite(self.hysteresis_db)):
            raise ValueError("hysteresis_db must be finite and >= 0")
        if self.ttt_ms < 0:
            raise ValueError("ttt_ms must be >= 0")
        if not self.t_pp_s > 0:
            raise ValueError("t_pp_s must be > 0")


@dataclass(frozen=True)
class HandoverEvent:
    index: int
    trigger_ts_ms: int
    source_cell_id: int
    target_cell_id: int
    sample_index: int
    tos_s: float | None = None
    pp_flag: bool = False
    executed: bool = True
    note: str = ""

    def __post_init__(self):
        if self.source_cell_id == self.target_cell_id:
            raise ValueError("handover source and target must differ")
        if self.tos_s is not None and not self.tos_s > 0:
            raise ValueError("tos_s must be positive when present")


@dataclass(frozen=True)
class HandoverLog:
    initial_cell_id: int
    events: tuple[HandoverEvent, ...]
    trace_duration_s: float

    @property
    def executed(self) -> tuple[HandoverEvent, ...]:
        return tuple(e for e in self.events if e.executed)

    @property
    def n_ping_pong(self) -> int:
        return sum(1 for e in self.events if e.executed and e.pp_flag)

    def check_chain(self) -> None:
        """Raise if consecutive executed events do not chain source to target."""
        cur = self.initial_cell_id
        for e in self.executed:
            if e.source_cell_id != cur:
                raise AssertionError(f"event {e.index} leaves {e.source_cell_id}, serving was {cur}")
            cur = e.target_cell_id

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "trigger_ts_ms", "source", "target", "tos_s", "pp", "executed"])
        for e in self.events:
            w.writerow([
                e.index, e.trigger_ts_ms, e.source_cell_id, e.target_cell_id,
                "" if e.tos_s is None else repr(e.tos_s), int(e.pp_flag), int(e.executed),
            ])
        return buf.getvalue()


class A3Machine:
    """Sample-driven Event-A3 evaluator with independent per-neighbor TTT timers.

    A neighbor's condition ``rsrp_n > rsrp_serving + hysteresis`` has held for
    ``ts_now - ts_first + sample_period_ms`` milliseconds; each sample stands
    for one sample period.  The timer fires when that span reaches ``ttt_ms``.
    Any sample where the condition fails, or the neighbor is unreported,
    clears its timer.
    """

    def __init__(self, trace: DriveTrace, params: A3Params, serving_col: int | None = None):
        self.params = params
        self.ids = trace.cell_ids
        self.ts = trace.ts_ms.tolist()
        self.rows = trace.rsrp_matrix.tolist()
        self.period = trace.sample_period_ms
        if serving_col is None:
            serving_col = strongest_column(self.rows[0])
        self.serving = serving_col
        self.timers: dict[int, int] = {}

    def step(self, t: int) -> int | None:
        """Advance timers to sample ``t``; return the column whose TTT expired, if any."""
        row = self.rows[t]
        s = row[self.serving]
        if s != s:  # nan
            s = UNREPORTED_SERVING_RSRP_DBM
        thresh = s + self.params.hysteresis_db
        now = self.ts[t]
        best = None
        for j, v in enumerate(row):
            if j == self.serving:
                continue
            if v == v and v > thresh:
                start = self.timers.setdefault(j, now)
                if now - start + self.period >= self.params.ttt_ms:
                    if best is None or v > row[best]:  # columns ascend by cell id
                        best = j
            else:
                self.timers.pop(j, None)
        return best

    def execute(self, col: int) -> None:
        self.serving = col
        self.timers.clear()

    def suppress(self, col: int) -> None:
        self.timers.pop(col, None)


def strongest_column(row) -> int:
    best = None
    for j, v in enumerate(row):
        if v == v and (best is None or v > row[best]):
            best = j
    if best is None:
        raise EmptyTrace("first record reports no RSRP")
    return best


def run_a3(trace: DriveTrace, params: A3Params) -> HandoverLog:
    """Run the baseline A3 policy; events carry neither ToS nor ping-pong labels yet."""
    if trace is None or len(trace) == 0:
        raise EmptyTrace("empty trace")
    m = A3Machine(trace, params)
    initial = m.ids[m.serving]
    events = []
    for t in range(len(trace)):
        col = m.step(t)
        if col is not None:
            events.append(HandoverEvent(
                index=len(events), trigger_ts_ms=m.ts[t], source_cell_id=m.ids[m.serving],
                target_cell_id=m.ids[col], sample_index=t,
            ))
            m.execute(col)
    return HandoverLog(initial, tuple(events), trace.duration_s)


def compute_tos(log: HandoverLog) -> HandoverLog:
    """Fill ``tos_s`` for executed events; the final stay is censored (``None``)."""
    executed = [k for k, e in enumerate(log.events) if e.executed]
    tos: dict[int, float | None] = {}
    for a, b in zip(executed, executed[1:]):
        tos[a] = (log.events[b].trigger_ts_ms - log.events[a].trigger_ts_ms) / 1000.0
    events = tuple(dataclasses.replace(e, tos_s=tos.get(k)) for k, e in enumerate(log.events))
    return dataclasses.replace(log, events=events)


def label_ping_pong(log: HandoverLog, t_pp_s: float) -> HandoverLog:
    """Flag executed A->B when the next executed handover returns to A within ``t_pp_s``."""
    executed = [k for k, e in enumerate(log.events) if e.executed]
    flags = {}
    for a, b in zip(executed, executed[1:]):
        ea, eb = log.events[a], log.events[b]
        flags[a] = (
            eb.target_cell_id == ea.source_cell_id
            and ea.tos_s is not None
            and ea.tos_s < t_pp_s
        )
    events = tuple(dataclasses.replace(e, pp_flag=flags.get(k, False)) for k, e in enumerate(log.events))
    return dataclasses.replace(log, events=events)


def baseline_log(trace: DriveTrace, params: A3Params) -> HandoverLog:
    return label_ping_pong(compute_tos(run_a3(trace, params)), params.t_pp_s)


def would_ping_pong(trace: DriveTrace, params: A3Params, t: int, source_col: int, target_col: int) -> bool:
    """Counterfactual label: had the handover at sample ``t`` executed, would plain
    A3 have returned to the source within ``t_pp_s``?"""
    m = A3Machine(trace, params, serving_col=target_col)
    limit = m.ts[t] + params.t_pp_s * 1000.0
    for k in range(t + 1, len(trace)):
        if m.ts[k] >= limit:
            return False
        col = m.step(k)
        if col is not None:
            return col == source_col
    return False
