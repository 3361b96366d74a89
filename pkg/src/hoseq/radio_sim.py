"""Seeded synthetic drive-test generator.

Received power follows the log-distance law with spatially correlated
log-normal shadowing (exponential autocorrelation along the travelled path).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .trace_model import (
    CellMeasurement,
    DriveTrace,
    MeasurementRecord,
    Mobility,
    Operator,
    RSRP_RANGE_DBM,
    RSRQ_RANGE_DB,
    SESSIONS,
    SNR_RANGE_DB,
)

MAX_REPORTED_CELLS = 5  # serving + 4 neighbors
CORRIDOR_CYCLES = 80
RSRQ_FULL_LOAD_OFFSET_DB = -10.0 * math.log10(12.0)  # one RE out of 12 subcarriers per RB

# Sunway City, used only to place synthetic traces on the map.
ORIGIN_LAT_DEG = 3.0673
ORIGIN_LON_DEG = 101.6038
M_PER_DEG_LAT = 111_320.0


class Preset(str, Enum):
    GRID = "GRID"
    CORRIDOR_OSCILLATION = "CORRIDOR_OSCILLATION"
    STREET_CANYON = "STREET_CANYON"


@dataclass(frozen=True)
class Cell:
    cell_id: int
    x_m: float
    y_m: float
    tx_power_dbm: float = 30.0


@dataclass(frozen=True)
class Waypoint:
    x_m: float
    y_m: float
    dwell_s: float = 0.0


@dataclass(frozen=True)
class PathLoss:
    pl0_db: float = 30.0
    d0_m: float = 1.0
    exponent: float = 3.0

    def loss_db(self, d_m):
        return self.pl0_db + 10.0 * self.exponent * np.log10(np.maximum(d_m, 1.0) / self.d0_m)


@dataclass(frozen=True)
class Scenario:
    cells: tuple[Cell, ...]
    trajectory: tuple[Waypoint, ...]
    ue_speed_mps: float = 1.5
    sample_period_ms: int = 1000
    shadowing_sigma_db: float = 4.0
    shadowing_corr_m: float = 20.0
    pathloss: PathLoss = field(default_factory=PathLoss)
    noise_floor_dbm: float = -120.0
    operator: Operator = Operator.A
    mobility: Mobility = Mobility.WALK
    session_period_s: float = 120.0

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        object.__setattr__(self, "trajectory", tuple(self.trajectory))
        if len(self.cells) < 2:
            raise ValueError("scenario needs at least 2 cells")
        if len({c.cell_id for c in self.cells}) != len(self.cells):
            raise ValueError("duplicate cell ids")
        if len(self.trajectory) < 2:
            raise ValueError("trajectory needs at least 2 waypoints")
        if self.sample_period_ms <= 0:
            raise ValueError("sample_period_ms must be positive")
        if self.ue_speed_mps <= 0:
            raise ValueError("ue_speed_mps must be positive")
        if self.shadowing_sigma_db < 0 or self.shadowing_corr_m < 0:
            raise ValueError("shadowing parameters must be >= 0")
        if not 1.5 <= self.pathloss.exponent <= 6.0:
            raise ValueError("path-loss exponent must be in [1.5, 6]")

    def digest(self) -> int:
        """Stable 32-bit digest used to derive the RNG stream."""
        return int.from_bytes(hashlib.sha256(repr(self).encode()).digest()[:4], "little")


def midline_crossings(scenario: Scenario) -> int:
    """Count trajectory crossings of the perpendicular bisector of the first two cells."""
    a, b = scenario.cells[0], scenario.cells[1]
    mx, my = (a.x_m + b.x_m) / 2, (a.y_m + b.y_m) / 2
    ux, uy = b.x_m - a.x_m, b.y_m - a.y_m
    side = [np.sign((w.x_m - mx) * ux + (w.y_m - my) * uy) for w in scenario.trajectory]
    side = [s for s in side if s != 0]
    return sum(1 for s0, s1 in zip(side, side[1:]) if s0 != s1)


# -------------------------------------------------------------------- presets

def _grid(rng: np.random.Generator) -> Scenario:
    spacing = 300.0
    cells = tuple(
        Cell(10 + 3 * i + j, j * spacing, i * spacing) for i in range(3) for j in range(3)
    )
    pts = rng.uniform(0.0, 2 * spacing, size=(12, 2))
    dwell = rng.choice([0.0, 0.0, 5.0, 10.0], size=12)
    traj = tuple(Waypoint(float(x), float(y), float(d)) for (x, y), d in zip(pts, dwell))
    return Scenario(
        cells, traj, ue_speed_mps=8.0, sample_period_ms=1000,
        mobility=Mobility.SHUTTLE, session_period_s=180.0,
    )


def _corridor(rng: np.random.Generator) -> Scenario:
    # Two small cells 100 m apart.  Each cycle the shuttle weaves north across
    # their bisector (x = 0), turns and drives straight into one cell, dwells,
    # and heads back south-west or south-east to the edge without crossing.
    # Weaving gives A3 ping-pong; the transits give handovers worth keeping.
    half = 50.0
    # low-power small cells: 0 dBm reference signal per resource element
    cells = (Cell(1, -half, 0.0, 0.0), Cell(2, half, 0.0, 0.0))
    side = 1.0
    traj = [Waypoint(-8.0, -30.0)]
    for _ in range(CORRIDOR_CYCLES):
        y = traj[-1].y_m
        for _ in range(int(rng.integers(3, 6))):
            y += rng.uniform(8.0, 14.0)
            traj.append(Waypoint(side * rng.uniform(9.0, 14.0), y))
            side = -side
        depth = rng.uniform(25.0, 40.0)
        traj.append(Waypoint(side * depth, y, float(rng.uniform(5.0, 15.0))))
        traj.append(Waypoint(side * rng.uniform(6.0, 10.0), rng.uniform(-35.0, -25.0)))
        side = -side
    return Scenario(
        cells, tuple(traj), ue_speed_mps=8.0, sample_period_ms=200,
        shadowing_sigma_db=2.0, shadowing_corr_m=10.0,
        mobility=Mobility.SHUTTLE, session_period_s=90.0,
    )


def _street_canyon(rng: np.random.Generator) -> Scenario:
    cells = tuple(Cell(100 + k, 150.0 * k, 30.0 if k % 2 else -30.0) for k in range(6))
    xs = np.sort(rng.uniform(0.0, 750.0, size=6))
    traj = [Waypoint(0.0, 0.0)]
    traj += [Waypoint(float(x), float(rng.uniform(-5, 5)), float(rng.choice([0.0, 20.0]))) for x in xs]
    traj.append(Waypoint(780.0, 0.0))
    return Scenario(
        cells, tuple(traj), ue_speed_mps=12.0, sample_period_ms=500,
        shadowing_sigma_db=8.0, shadowing_corr_m=10.0,
        mobility=Mobility.BRT, session_period_s=60.0,
    )


_PRESETS = {
    Preset.GRID: _grid,
    Preset.CORRIDOR_OSCILLATION: _corridor,
    Preset.STREET_CANYON: _street_canyon,
}


def generate_scenario(preset: Preset | str, seed: int) -> Scenario:
    preset = Preset(preset.upper() if isinstance(preset, str) else preset)
    rng = np.random.default_rng([seed, list(Preset).index(preset)])
    return _PRESETS[preset](rng)


# ------------------------------------------------------------------- sampling

def _positions(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """UE positions (N x 2) and path length travelled (N,) at each sample instant."""
    # Piecewise schedule: (t0, t1, p0, p1, s0) with s the path length at t0.
    segs = []
    t, s = 0.0, 0.0
    wps = scenario.trajectory
    for k, w in enumerate(wps):
        p = np.array([w.x_m, w.y_m])
        if w.dwell_s > 0:
            segs.append((t, t + w.dwell_s, p, p, s))
            t += w.dwell_s
        if k + 1 < len(wps):
            q = np.array([wps[k + 1].x_m, wps[k + 1].y_m])
            length = float(np.hypot(*(q - p)))
            if length > 0:
                dt = length / scenario.ue_speed_mps
                segs.append((t, t + dt, p, q, s))
                t += dt
                s += length
    total = t
    period = scenario.sample_period_ms / 1000.0
    n = int(math.floor(total / period + 1e-9)) + 1
    times = np.arange(n) * period
    pos = np.empty((n, 2))
    dist = np.empty(n)
    j = 0
    for i, ti in enumerate(times):
        while j + 1 < len(segs) and ti >= segs[j][1]:
            j += 1
        t0, t1, p0, p1, s0 = segs[j]
        frac = 0.0 if t1 <= t0 else min(max((ti - t0) / (t1 - t0), 0.0), 1.0)
        pos[i] = p0 + frac * (p1 - p0)
        dist[i] = s0 + frac * float(np.hypot(*(p1 - p0)))
    return pos, dist


def _shadowing(dist: np.ndarray, n_cells: int, sigma: float, corr_m: float,
               rng: np.random.Generator) -> np.ndarray:
    """Gudmundson AR(1) shadowing: rho = exp(-delta_s / corr_m) between samples."""
    z = rng.standard_normal((len(dist), n_cells))
    out = np.empty_like(z)
    out[0] = sigma * z[0]
    for i in range(1, len(dist)):
        ds = dist[i] - dist[i - 1]
        rho = math.exp(-ds / corr_m) if corr_m > 0 else (1.0 if ds == 0 else 0.0)
        out[i] = rho * out[i - 1] + math.sqrt(max(0.0, 1.0 - rho * rho)) * sigma * z[i]
    return out


def _bearings(pos: np.ndarray) -> np.ndarray:
    n = len(pos)
    out = np.zeros(n)
    d = np.diff(pos, axis=0)
    prev = None
    for i in range(1, n):
        dx, dy = d[i - 1]
        if dx == 0 and dy == 0:
            out[i] = prev if prev is not None else 0.0
        else:
            b = math.degrees(math.atan2(dx, dy)) % 360.0
            out[i] = 0.0 if b >= 360.0 else b
            prev = out[i]
    if n > 1:
        # first sample heads toward the first movement
        moving = np.nonzero(np.any(d != 0, axis=1))[0]
        out[0] = out[moving[0] + 1] if len(moving) else 0.0
    return out


def sample_trace(scenario: Scenario, seed: int, clamp: bool = True) -> DriveTrace:
    """Integrate the UE along the trajectory and sample per-cell radio metrics.

    Distances below 1 m are floored to 1 m.  Cells are ranked on the physical
    RSRP; with ``clamp`` the reported values then saturate at the 3GPP
    reporting ranges, as a UE measurement report would.
    """
    rng = np.random.default_rng([seed, scenario.digest()])
    pos, dist = _positions(scenario)
    cxy = np.array([[c.x_m, c.y_m] for c in scenario.cells])
    tx = np.array([c.tx_power_dbm for c in scenario.cells])
    d = np.hypot(pos[:, None, 0] - cxy[None, :, 0], pos[:, None, 1] - cxy[None, :, 1])
    shadow = _shadowing(dist, len(scenario.cells), scenario.shadowing_sigma_db,
                        scenario.shadowing_corr_m, rng)
    rsrp = tx[None, :] - scenario.pathloss.loss_db(d) - shadow

    lin = 10.0 ** (rsrp / 10.0)
    noise = 10.0 ** (scenario.noise_floor_dbm / 10.0)
    total = lin.sum(axis=1, keepdims=True)
    snr = rsrp - 10.0 * np.log10(total - lin + noise)
    rsrq = RSRQ_FULL_LOAD_OFFSET_DB + rsrp - 10.0 * np.log10(total + noise)
    order_key = rsrp
    if clamp:
        rsrp = np.clip(rsrp, *RSRP_RANGE_DBM)
        rsrq = np.clip(rsrq, *RSRQ_RANGE_DB)
        snr = np.clip(snr, *SNR_RANGE_DB)

    bearing = _bearings(pos)
    period_s = scenario.sample_period_ms / 1000.0
    step = np.hypot(*np.diff(pos, axis=0).T) / period_s if len(pos) > 1 else np.zeros(0)
    speed = np.concatenate([step[:1], step]) if len(step) else np.zeros(1)

    lat = ORIGIN_LAT_DEG + pos[:, 1] / M_PER_DEG_LAT
    lon = ORIGIN_LON_DEG + pos[:, 0] / (M_PER_DEG_LAT * math.cos(math.radians(ORIGIN_LAT_DEG)))
    ids = np.array([c.cell_id for c in scenario.cells])

    records = []
    for i in range(len(pos)):
        order = sorted(range(len(ids)), key=lambda j: (-order_key[i, j], ids[j]))[:MAX_REPORTED_CELLS]
        cells = [
            CellMeasurement(int(ids[j]), float(rsrp[i, j]), float(rsrq[i, j]), float(snr[i, j]))
            for j in order
        ]
        t_s = i * period_s
        session = SESSIONS[int(t_s // scenario.session_period_s) % len(SESSIONS)]
        records.append(
            MeasurementRecord(
                ts_ms=i * scenario.sample_period_ms,
                operator=scenario.operator,
                lat_deg=float(lat[i]),
                lon_deg=float(lon[i]),
                speed_mps=float(speed[i]),
                bearing_deg=float(bearing[i]),
                session=session,
                mobility=scenario.mobility,
                serving=cells[0],
                neighbors=tuple(cells[1:]),
            )
        )
    return DriveTrace(tuple(records), scenario.sample_period_ms)
