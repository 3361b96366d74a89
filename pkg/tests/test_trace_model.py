import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hoseq.errors import AllMissingChannel, EmptyTrace, MalformedHeader, MalformedRow
from hoseq.trace_model import (
    CANONICAL_COLUMNS,
    METRIC_RANGES,
    ColumnMapping,
    Mobility,
    Session,
    count_missing,
    encode_categoricals,
    format_trace,
    interpolate_missing,
    one_hot,
    parse_trace,
    repair_ranges,
    validate_ranges,
)

from helpers import make_trace, random_rsrp

HEADER = ",".join(CANONICAL_COLUMNS)


def row(ts, rsrp=-90.0, bearing=10.0, session="FTP", mobility="WALK", n1=None, rsrq=-10.0, snr=5.0):
    base = [str(ts), "A", "3.0", "101.0", "1.5", "" if bearing is None else str(bearing), session, mobility,
            "1", "" if rsrp is None else str(rsrp), str(rsrq), str(snr)]
    nb = ["2", str(n1), "-11", "2"] if n1 is not None else ["", "", "", ""]
    return ",".join(base + nb + [""] * 12)


def test_single_row_parses():
    tr = parse_trace(HEADER + "\n" + row(0) + "\n")
    assert len(tr) == 1
    assert tr[0].serving.rsrp_dbm == -90.0


def test_bearing_out_of_domain_is_malformed():
    with pytest.raises(MalformedRow):
        parse_trace(HEADER + "\n" + row(0, bearing=370) + "\n")


def test_header_only_is_empty():
    with pytest.raises(EmptyTrace):
        parse_trace(HEADER + "\n")


def test_missing_column_in_header():
    with pytest.raises(MalformedHeader):
        parse_trace("ts_ms,operator\n0,A\n")


def test_crlf_and_column_mapping():
    mapping = ColumnMapping.from_text("ts_ms = time  # ms\nserving_rsrp = RSRP\n")
    head = HEADER.replace("ts_ms", "time").replace("serving_rsrp", "RSRP")
    tr = parse_trace(head + "\r\n" + row(0) + "\r\n" + row(1000) + "\r\n", schema=mapping)
    assert len(tr) == 2 and tr.sample_period_ms == 1000


def test_validation_examples():
    ok = parse_trace(HEADER + "\n" + row(0) + "\n")
    assert len(validate_ranges(ok)) == 0
    bad = parse_trace(HEADER + "\n" + row(0) + "\n" + row(1000, rsrp=-150) + "\n")
    rep = validate_ranges(bad)
    assert len(rep) == 1
    assert (rep.violations[0].row, rep.violations[0].field) == (1, "serving_rsrp")
    edge = parse_trace(HEADER + "\n" + row(0, rsrq=-19.5) + "\n")
    assert len(validate_ranges(edge)) == 0


def test_repair_drops_or_clamps():
    bad = parse_trace(HEADER + "\n" + row(0) + "\n" + row(1000, rsrp=-150) + "\n")
    dropped, rep = repair_ranges(bad, clamp=False)
    assert len(dropped) == 1 and len(rep) == 1
    clamped, _ = repair_ranges(bad, clamp=True)
    assert clamped[1].serving.rsrp_dbm == -140.0
    assert len(validate_ranges(clamped)) == 0


def test_interpolation_examples():
    tr = parse_trace(HEADER + "\n" + "\n".join([row(0, -100), row(1000, None), row(2000, -90)]) + "\n")
    assert math.isnan(tr[1].serving.rsrp_dbm)
    filled = interpolate_missing(tr)
    assert filled[1].serving.rsrp_dbm == pytest.approx(-95.0, abs=1e-12)

    lead = parse_trace(HEADER + "\n" + "\n".join([row(0, None), row(1000, -90)]) + "\n")
    assert interpolate_missing(lead)[0].serving.rsrp_dbm == -90.0

    allgone = parse_trace(HEADER + "\n" + "\n".join([row(0, None), row(1000, None)]) + "\n")
    with pytest.raises(AllMissingChannel):
        interpolate_missing(allgone)


def test_bearing_interpolates_across_north():
    tr = parse_trace(HEADER + "\n" + "\n".join([row(0, bearing=350), row(1000, bearing=None),
                                               row(2000, bearing=10)]) + "\n")
    assert interpolate_missing(tr)[1].bearing_deg == pytest.approx(0.0, abs=1e-9)


def test_one_hot_examples():
    tr = make_trace([[-90.0]], sessions=[Session.FTP])
    assert one_hot(tr[0]).tolist() == [1, 0, 0, 1, 0, 0]
    tr = make_trace([[-90.0]], sessions=[Session.VIDEO], mobility=Mobility.BRT)
    assert one_hot(tr[0]).tolist() == [0, 1, 0, 0, 0, 1]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 40), st.integers(1, 6))
def test_one_hot_blocks_sum_to_one(seed, n, c):
    rng = np.random.default_rng(seed)
    sessions = [list(Session)[k] for k in rng.integers(0, 3, n)]
    enc = encode_categoricals(make_trace(random_rsrp(rng, n, c), sessions=sessions))
    assert np.all(enc[:, :3].sum(axis=1) == 1) and np.all(enc[:, 3:].sum(axis=1) == 1)


def _random_trace(seed, n, c, p_missing=0.0):
    rng = np.random.default_rng(seed)
    rsrp = random_rsrp(rng, n, c, p_missing)
    snr = rng.uniform(-25, 35, size=(n, c))
    return make_trace(rsrp, snr=snr, bearings=rng.uniform(0, 360, n), speed=3.25)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 30), st.integers(1, 6))
def test_parse_format_round_trip(seed, n, c):
    tr = _random_trace(seed, n, c)
    back = parse_trace(format_trace(tr), sample_period_ms=tr.sample_period_ms)
    assert len(back) == len(tr)
    for a, b in zip(tr, back):
        assert a.ts_ms == b.ts_ms and a.session == b.session and a.mobility == b.mobility
        assert [x.cell_id for x in a.cells()] == [x.cell_id for x in b.cells()]
        for x, y in zip(a.cells(), b.cells()):
            for m in METRIC_RANGES:
                assert abs(x.metric(m) - y.metric(m)) <= 1e-9
        assert abs(a.bearing_deg - b.bearing_deg) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 30), st.integers(1, 5))
def test_interpolation_idempotent_and_preserving(seed, n, c):
    tr = _random_trace(seed, n, c, p_missing=0.3)
    try:
        once = interpolate_missing(tr)
    except AllMissingChannel:
        return
    assert count_missing(once) == 0
    assert format_trace(interpolate_missing(once)) == format_trace(once)
    for a, b in zip(tr, once):
        for x, y in zip(a.cells(), b.cells()):
            for m in METRIC_RANGES:
                if not math.isnan(x.metric(m)):
                    assert x.metric(m) == y.metric(m)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 30), st.integers(1, 6))
def test_violation_count_matches_scan(seed, n, c):
    tr = _random_trace(seed, n, c)
    expected = 0
    for r in tr:
        for cell in r.cells():
            for m, (lo, hi) in METRIC_RANGES.items():
                v = cell.metric(m)
                expected += (v < lo) or (v > hi)
    assert len(validate_ranges(tr)) == expected
