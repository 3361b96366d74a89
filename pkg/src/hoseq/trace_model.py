"""Drive-test trace types, CSV ingestion, range validation and missing-value repair.

A trace is an ordered, immutable sequence of :class:`MeasurementRecord`.  Missing
numeric measurements are represented as ``nan`` until :func:`interpolate_missing`
has been applied.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import AllMissingChannel, EmptyTrace, MalformedHeader, MalformedRow

logger = logging.getLogger(__name__)

MISSING = math.nan
MAX_NEIGHBORS = 4

RSRP_RANGE_DBM = (-140.0, -44.0)
RSRQ_RANGE_DB = (-19.5, -3.0)
SNR_RANGE_DB = (-20.0, 30.0)

METRIC_RANGES = {"rsrp": RSRP_RANGE_DBM, "rsrq": RSRQ_RANGE_DB, "snr": SNR_RANGE_DB}
_METRIC_ATTR = {"rsrp": "rsrp_dbm", "rsrq": "rsrq_db", "snr": "snr_db"}


class Operator(str, Enum):
    A = "A"
    B = "B"
    C = "C"


class Session(str, Enum):
    FTP = "FTP"
    VIDEO = "VIDEO"
    HTTP = "HTTP"


class Mobility(str, Enum):
    WALK = "WALK"
    SHUTTLE = "SHUTTLE"
    BRT = "BRT"


SESSIONS = tuple(Session)
MOBILITIES = tuple(Mobility)


@dataclass(frozen=True)
class CellMeasurement:
    cell_id: int
    rsrp_dbm: float = MISSING
    rsrq_db: float = MISSING
    snr_db: float = MISSING

    def metric(self, name: str) -> float:
        return getattr(self, _METRIC_ATTR[name])


@dataclass(frozen=True)
class MeasurementRecord:
    ts_ms: int
    operator: Operator
    lat_deg: float
    lon_deg: float
    speed_mps: float
    bearing_deg: float
    session: Session
    mobility: Mobility
    serving: CellMeasurement
    neighbors: tuple[CellMeasurement, ...] = ()

    def cells(self) -> tuple[CellMeasurement, ...]:
        return (self.serving,) + self.neighbors


@dataclass(frozen=True)
class DriveTrace:
    """Ordered records sharing one operator, with strictly increasing timestamps."""

    records: tuple[MeasurementRecord, ...]
    sample_period_ms: int

    def __post_init__(self):
        if not self.records:
            raise EmptyTrace("trace has no records")
        if self.sample_period_ms <= 0:
            raise ValueError("sample_period_ms must be positive")
        object.__setattr__(self, "records", tuple(self.records))
        op = self.records[0].operator
        for k in range(1, len(self.records)):
            if self.records[k].ts_ms <= self.records[k - 1].ts_ms:
                raise ValueError(f"timestamps not strictly increasing at record {k}")
            if self.records[k].operator != op:
                raise ValueError(f"operator changes at record {k}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[MeasurementRecord]:
        return iter(self.records)

    def __getitem__(self, k):
        return self.records[k]

    @property
    def operator(self) -> Operator:
        return self.records[0].operator

    @property
    def duration_s(self) -> float:
        return (self.records[-1].ts_ms - self.records[0].ts_ms) / 1000.0

    # Dense views used by the engine and feature code.  Columns follow
    # ``cell_ids``; a cell not reported in a record is nan.
    @cached_property
    def ts_ms(self) -> np.ndarray:
        return np.array([r.ts_ms for r in self.records], dtype=np.int64)

    @cached_property
    def cell_ids(self) -> tuple[int, ...]:
        return tuple(sorted({c.cell_id for r in self.records for c in r.cells()}))

    @cached_property
    def cell_index(self) -> dict[int, int]:
        return {cid: j for j, cid in enumerate(self.cell_ids)}

    def _metric_matrix(self, name: str) -> np.ndarray:
        out = np.full((len(self.records), len(self.cell_ids)), np.nan)
        col = self.cell_index
        attr = _METRIC_ATTR[name]
        for t, r in enumerate(self.records):
            for c in r.cells():
                out[t, col[c.cell_id]] = getattr(c, attr)
        out.setflags(write=False)
        return out

    @cached_property
    def rsrp_matrix(self) -> np.ndarray:
        return self._metric_matrix("rsrp")

    @cached_property
    def snr_matrix(self) -> np.ndarray:
        return self._metric_matrix("snr")

    @cached_property
    def bearing_deg(self) -> np.ndarray:
        return np.array([r.bearing_deg for r in self.records], dtype=float)

    @cached_property
    def speed_mps(self) -> np.ndarray:
        return np.array([r.speed_mps for r in self.records], dtype=float)


# --------------------------------------------------------------------------- CSV

BASE_COLUMNS = (
    "ts_ms", "operator", "lat_deg", "lon_deg", "speed_mps", "bearing_deg",
    "session", "mobility", "serving_id", "serving_rsrp", "serving_rsrq", "serving_snr",
)


def neighbor_columns(k: int) -> tuple[str, str, str, str]:
    return (f"n{k}_id", f"n{k}_rsrp", f"n{k}_rsrq", f"n{k}_snr")


CANONICAL_COLUMNS = BASE_COLUMNS + tuple(
    c for k in range(1, MAX_NEIGHBORS + 1) for c in neighbor_columns(k)
)

_NEIGHBOR_RE = re.compile(r"^n(\d+)_(id|rsrp|rsrq|snr)$")


@dataclass(frozen=True)
class ColumnMapping:
    """Maps canonical column names onto the headers of an external CSV.

    Canonical names that are not mapped are looked up under their own name.
    """

    columns: Mapping[str, str] = field(default_factory=dict)

    def source(self, canonical: str) -> str:
        return self.columns.get(canonical, canonical)

    @classmethod
    def from_text(cls, text: str) -> "ColumnMapping":
        """Parse ``canonical = source`` lines; ``#`` starts a comment."""
        cols = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"mapping line {lineno}: expected 'canonical = source'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in CANONICAL_COLUMNS:
                raise ValueError(f"mapping line {lineno}: unknown canonical column {key!r}")
            cols[key] = val
        return cls(cols)


def _parse_float(text: str, row: int, name: str) -> float:
    text = text.strip()
    if text == "":
        return MISSING
    try:
        v = float(text)
    except ValueError:
        raise MalformedRow(row, f"{name}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise MalformedRow(row, f"{name}: non-finite value {text!r}")
    return v


def _parse_int(text: str, row: int, name: str) -> int | None:
    text = text.strip()
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        raise MalformedRow(row, f"{name}: not an integer: {text!r}") from None


def _parse_enum(enum_cls, text: str, row: int, name: str):
    try:
        return enum_cls(text.strip().upper())
    except ValueError:
        raise MalformedRow(row, f"{name}: unknown value {text!r}") from None


def parse_trace(
    csv_text: str, schema: ColumnMapping | None = None, sample_period_ms: int | None = None
) -> DriveTrace:
    """Parse a drive-test CSV into a :class:`DriveTrace`.

    Empty numeric fields become ``nan``.  ``sample_period_ms`` defaults to the
    median spacing of the timestamps (1000 ms for single-row traces).
    Row indices in errors are 0-based data-row positions.
    """
    schema = schema or ColumnMapping()
    if csv_text.startswith("\ufeff"):
        csv_text = csv_text[1:]
    reader = csv.reader(io.StringIO(csv_text, newline=""))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MalformedHeader("empty file") from None
    pos = {h: j for j, h in enumerate(header)}

    missing = [c for c in BASE_COLUMNS if schema.source(c) not in pos]
    if missing:
        raise MalformedHeader(f"missing required columns: {', '.join(missing)}")
    col = {c: pos[schema.source(c)] for c in BASE_COLUMNS}

    slots = []
    for k in range(1, MAX_NEIGHBORS + 1):
        names = neighbor_columns(k)
        if schema.source(names[0]) in pos:
            slots.append(tuple(pos.get(schema.source(n)) for n in names))
    mapped_sources = {schema.source(c) for c in CANONICAL_COLUMNS}
    extras = [h for h in header if h not in mapped_sources and _NEIGHBOR_RE.match(h)]
    if extras:
        logger.warning("ignoring neighbor columns beyond %d: %s", MAX_NEIGHBORS, ", ".join(extras))

    records = []
    for row, fields in enumerate(reader):
        if not fields or all(f.strip() == "" for f in fields):
            continue
        if len(fields) < len(header):
            fields = fields + [""] * (len(header) - len(fields))
        records.append(_parse_record(fields, col, slots, len(records)))
        if len(records) > 1:
            if records[-1].ts_ms <= records[-2].ts_ms:
                raise MalformedRow(len(records) - 1, "ts_ms not strictly increasing")
            if records[-1].operator != records[0].operator:
                raise MalformedRow(len(records) - 1, "operator differs from first record")
    if not records:
        raise EmptyTrace("no data rows")

    if sample_period_ms is None:
        if len(records) > 1:
            diffs = np.diff([r.ts_ms for r in records])
            sample_period_ms = max(1, int(round(float(np.median(diffs)))))
        else:
            sample_period_ms = 1000
    return DriveTrace(tuple(records), sample_period_ms)


def _parse_record(fields, col, slots, row) -> MeasurementRecord:
    get = lambda name: fields[col[name]]  # noqa: E731
    ts = _parse_int(get("ts_ms"), row, "ts_ms")
    if ts is None:
        raise MalformedRow(row, "ts_ms is required")
    speed = _parse_float(get("speed_mps"), row, "speed_mps")
    if speed < 0:
        raise MalformedRow(row, f"speed_mps must be >= 0, got {speed}")
    bearing = _parse_float(get("bearing_deg"), row, "bearing_deg")
    if not (bearing >= 0 and bearing < 360) and not math.isnan(bearing):
        raise MalformedRow(row, f"bearing_deg must be in [0, 360), got {bearing}")
    serving_id = _parse_int(get("serving_id"), row, "serving_id")
    if serving_id is None or serving_id < 0:
        raise MalformedRow(row, "serving_id is required and must be >= 0")
    serving = CellMeasurement(
        serving_id,
        _parse_float(get("serving_rsrp"), row, "serving_rsrp"),
        _parse_float(get("serving_rsrq"), row, "serving_rsrq"),
        _parse_float(get("serving_snr"), row, "serving_snr"),
    )
    neighbors = []
    for k, slot in enumerate(slots, 1):
        vals = [fields[j] if j is not None else "" for j in slot]
        cid = _parse_int(vals[0], row, f"n{k}_id")
        metrics = [_parse_float(v, row, n) for v, n in zip(vals[1:], neighbor_columns(k)[1:])]
        if cid is None:
            if any(not math.isnan(m) for m in metrics):
                raise MalformedRow(row, f"n{k}: measurements without a cell id")
            continue
        if cid < 0:
            raise MalformedRow(row, f"n{k}_id must be >= 0")
        neighbors.append(CellMeasurement(cid, *metrics))
    ids = [serving_id] + [n.cell_id for n in neighbors]
    if len(set(ids)) != len(ids):
        raise MalformedRow(row, "duplicate cell id within record")
    return MeasurementRecord(
        ts_ms=ts,
        operator=_parse_enum(Operator, get("operator"), row, "operator"),
        lat_deg=_parse_float(get("lat_deg"), row, "lat_deg"),
        lon_deg=_parse_float(get("lon_deg"), row, "lon_deg"),
        speed_mps=speed,
        bearing_deg=bearing,
        session=_parse_enum(Session, get("session"), row, "session"),
        mobility=_parse_enum(Mobility, get("mobility"), row, "mobility"),
        serving=serving,
        neighbors=tuple(neighbors),
    )


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def format_trace(trace: DriveTrace) -> str:
    """Serialize to the canonical CSV (LF line endings, all four neighbor slots)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CANONICAL_COLUMNS)
    for r in trace:
        row = [
            str(r.ts_ms), r.operator.value, _fmt(r.lat_deg), _fmt(r.lon_deg),
            _fmt(r.speed_mps), _fmt(r.bearing_deg), r.session.value, r.mobility.value,
        ]
        for c in r.cells():
            row += [str(c.cell_id), _fmt(c.rsrp_dbm), _fmt(c.rsrq_db), _fmt(c.snr_db)]
        row += [""] * (len(CANONICAL_COLUMNS) - len(row))
        w.writerow(row)
    return buf.getvalue()


# -------------------------------------------------------------------- validation

@dataclass(frozen=True)
class Violation:
    row: int
    field: str
    value: float
    lo: float
    hi: float


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    def __len__(self) -> int:
        return len(self.violations)

    @property
    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for v in self.violations:
            out[v.field] = out.get(v.field, 0) + 1
        return out

    @property
    def rows(self) -> set[int]:
        return {v.row for v in self.violations}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "field", "value", "lo", "hi"])
        for v in self.violations:
            w.writerow([v.row, v.field, repr(v.value), repr(v.lo), repr(v.hi)])
        return buf.getvalue()


def _slot_name(slot: int, metric: str) -> str:
    return f"serving_{metric}" if slot == 0 else f"n{slot}_{metric}"


def validate_ranges(trace: DriveTrace) -> ValidationReport:
    """Report every radio value outside its 3GPP reporting range (missing values are skipped)."""
    found = []
    for row, r in enumerate(trace):
        for slot, c in enumerate(r.cells()):
            for metric, (lo, hi) in METRIC_RANGES.items():
                v = c.metric(metric)
                if not math.isnan(v) and not (lo <= v <= hi):
                    found.append(Violation(row, _slot_name(slot, metric), v, lo, hi))
    return ValidationReport(tuple(found))


def repair_ranges(trace: DriveTrace, clamp: bool) -> tuple[DriveTrace, ValidationReport]:
    """Clamp out-of-range values, or drop the offending rows when ``clamp`` is false."""
    report = validate_ranges(trace)
    if not report.violations:
        return trace, report
    if not clamp:
        bad = report.rows
        kept = tuple(r for k, r in enumerate(trace) if k not in bad)
        if not kept:
            raise EmptyTrace("every row had a range violation")
        return DriveTrace(kept, trace.sample_period_ms), report

    def clip(c: CellMeasurement) -> CellMeasurement:
        vals = {}
        for metric, (lo, hi) in METRIC_RANGES.items():
            v = c.metric(metric)
            vals[_METRIC_ATTR[metric]] = v if math.isnan(v) else min(max(v, lo), hi)
        return dataclasses.replace(c, **vals)

    records = tuple(
        dataclasses.replace(r, serving=clip(r.serving), neighbors=tuple(clip(n) for n in r.neighbors))
        for r in trace
    )
    return DriveTrace(records, trace.sample_period_ms), report


# ---------------------------------------------------------------- missing values

def _fill(xs: np.ndarray, vals: np.ndarray, name: str) -> np.ndarray:
    obs = ~np.isnan(vals)
    if not obs.any():
        raise AllMissingChannel(f"channel {name} has no observed value")
    if obs.all():
        return vals
    out = vals.copy()
    # np.interp holds the end values constant outside the observed span.
    out[~obs] = np.interp(xs[~obs], xs[obs], vals[obs])
    return out


def _fill_bearing(xs: np.ndarray, vals: np.ndarray) -> np.ndarray:
    obs = ~np.isnan(vals)
    if not obs.any():
        raise AllMissingChannel("channel bearing_deg has no observed value")
    if obs.all():
        return vals
    out = vals.copy()
    unwrapped = np.unwrap(vals[obs], period=360.0)
    filled = np.interp(xs[~obs], xs[obs], unwrapped) % 360.0
    out[~obs] = np.where(filled >= 360.0, 0.0, filled)
    return out


def interpolate_missing(trace: DriveTrace) -> DriveTrace:
    """Fill missing numerics by linear interpolation against ``ts_ms``.

    Position, speed and bearing are filled per column (bearing on the unwrapped
    circle).  Radio metrics are filled per (cell, metric) over the rows in which
    that cell is reported.  Leading and trailing gaps take the nearest observed
    value.  Observed values are never altered.
    """
    ts = trace.ts_ms.astype(float)
    scalars = {}
    for name in ("lat_deg", "lon_deg", "speed_mps"):
        scalars[name] = _fill(ts, np.array([getattr(r, name) for r in trace]), name)
    scalars["bearing_deg"] = _fill_bearing(ts, trace.bearing_deg.copy())

    # (cell_id -> list of (row, slot)) in row order
    where: dict[int, list[tuple[int, int]]] = {}
    for row, r in enumerate(trace):
        for slot, c in enumerate(r.cells()):
            where.setdefault(c.cell_id, []).append((row, slot))

    filled: dict[tuple[int, int], dict[str, float]] = {}
    for cid, places in where.items():
        rows = np.array([p[0] for p in places])
        for metric in METRIC_RANGES:
            vals = np.array([trace[row].cells()[slot].metric(metric) for row, slot in places])
            if not np.isnan(vals).any():
                continue
            new = _fill(ts[rows], vals, f"cell {cid} {metric}")
            for (row, slot), v in zip(places, new):
                filled.setdefault((row, slot), {})[_METRIC_ATTR[metric]] = float(v)

    records = []
    for row, r in enumerate(trace):
        cells = list(r.cells())
        for slot in range(len(cells)):
            upd = filled.get((row, slot))
            if upd:
                cells[slot] = dataclasses.replace(cells[slot], **upd)
        records.append(
            dataclasses.replace(
                r,
                lat_deg=float(scalars["lat_deg"][row]),
                lon_deg=float(scalars["lon_deg"][row]),
                speed_mps=float(scalars["speed_mps"][row]),
                bearing_deg=float(scalars["bearing_deg"][row]),
                serving=cells[0],
                neighbors=tuple(cells[1:]),
            )
        )
    return DriveTrace(tuple(records), trace.sample_period_ms)


def count_missing(trace: DriveTrace) -> int:
    n = 0
    for r in trace:
        n += sum(math.isnan(v) for v in (r.lat_deg, r.lon_deg, r.speed_mps, r.bearing_deg))
        for c in r.cells():
            n += sum(math.isnan(c.metric(m)) for m in METRIC_RANGES)
    return n


# ------------------------------------------------------------------ categoricals

def one_hot(record: MeasurementRecord) -> np.ndarray:
    """Six-dim vector: session one-hot (FTP, VIDEO, HTTP) then mobility one-hot (WALK, SHUTTLE, BRT)."""
    v = np.zeros(len(SESSIONS) + len(MOBILITIES))
    v[SESSIONS.index(record.session)] = 1.0
    v[len(SESSIONS) + MOBILITIES.index(record.mobility)] = 1.0
    return v


def encode_categoricals(trace: DriveTrace | Iterable[MeasurementRecord]) -> np.ndarray:
    return np.array([one_hot(r) for r in trace]).reshape(-1, len(SESSIONS) + len(MOBILITIES))
