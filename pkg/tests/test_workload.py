import io
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aerosim.workload import (PROFILES, IoRequest, TraceParseError, accelerate, fold, parse_alibaba,
                              parse_msrc, parse_normalized, synth, synth_profile, to_alibaba, to_msrc,
                              to_normalized)

MSRC = """128166372003061629,hm,0,Write,3154280448,4096,1929
128166372003071629,hm,0,Read,8192,8192,100
128166372003081629,hm,1,Read,0,512,100
"""


def test_msrc_example():
    reqs = parse_msrc(io.StringIO(MSRC))
    assert reqs[0] == IoRequest(0, "write", 3154280448, 4096)
    # 10000 ticks of 100 ns = 1 ms, accelerated 10x
    assert reqs[1].arrival == 100_000 and reqs[2].arrival == 200_000
    assert parse_msrc(io.StringIO(MSRC), accel=1)[1].arrival == 1_000_000
    assert [r.offset for r in parse_msrc(io.StringIO(MSRC), disk=1)] == [0]


def test_alibaba_example():
    reqs = parse_alibaba(io.StringIO("3,R,4096,8192,1000\n3,W,0,4096,1500\n"))
    assert reqs == [IoRequest(0, "read", 4096, 8192), IoRequest(500_000, "write", 0, 4096)]


@pytest.mark.parametrize("line,msg", [
    ("1,h,0,Read,0,4096", "expected 7 fields"),
    ("1,h,0,Trim,0,4096,0", "unknown request type"),
    ("1,h,0,Read,-4,4096,0", "offset is negative"),
    ("1,h,0,Read,0,0,0", "size must be positive"),
    ("x,h,0,Read,0,4096,0", "timestamp is not an integer"),
])
def test_msrc_errors_name_the_line(line, msg):
    with pytest.raises(TraceParseError, match=f":2: {msg}"):
        parse_msrc(io.StringIO("1,h,0,Read,0,4096,0\n" + line + "\n"))


def test_alibaba_errors():
    with pytest.raises(TraceParseError, match="unknown opcode"):
        parse_alibaba(io.StringIO("0,X,0,4096,5\n"))
    with pytest.raises(TraceParseError, match="expected 5 fields"):
        parse_alibaba(io.StringIO("0,R,0,4096\n"))


def test_out_of_order_is_sorted_with_warning(caplog):
    text = "200,h,0,Read,0,4096,0\n100,h,0,Write,4096,4096,0\n"
    with caplog.at_level(logging.WARNING):
        reqs = parse_msrc(io.StringIO(text), accel=1)
    assert [r.kind for r in reqs] == ["write", "read"] and reqs[1].arrival == 10_000
    assert "out of order" in caplog.text


def test_blank_lines_skipped():
    assert len(parse_msrc(io.StringIO("\n" + MSRC + "\n\n"))) == 3


requests = st.lists(st.builds(IoRequest, st.integers(0, 10**12).map(lambda t: t * 1000),
                              st.sampled_from(["read", "write"]), st.integers(0, 2**40),
                              st.integers(1, 2**20)), max_size=30)


@given(requests)
def test_normalized_round_trip(reqs):
    assert parse_normalized(io.StringIO(to_normalized(reqs))) == reqs


@given(requests)
def test_trace_writers_round_trip(reqs):
    reqs = sorted(reqs, key=lambda r: r.arrival)
    t0 = reqs[0].arrival if reqs else 0
    rebased = [IoRequest(r.arrival - t0, r.kind, r.offset, r.size) for r in reqs]
    assert parse_msrc(io.StringIO(to_msrc(reqs)), accel=1) == rebased
    assert parse_alibaba(io.StringIO(to_alibaba(reqs))) == rebased


def test_accelerate_divides_gaps():
    reqs = [IoRequest(t, "read", 0, 4096) for t in (1000, 3000, 11000)]
    assert [r.arrival for r in accelerate(reqs, 10)] == [0, 200, 1000]
    with pytest.raises(ValueError):
        accelerate(reqs, 0)


@given(st.integers(0, 2**40), st.integers(1, 2**16))
def test_fold_stays_inside(off, size):
    cap = 1 << 20
    (r,) = fold([IoRequest(0, "read", off, size)], cap)
    assert 0 <= r.offset and r.offset + r.size <= cap


def test_fold_rejects_oversize():
    with pytest.raises(ValueError):
        fold([IoRequest(0, "read", 0, 4097)], 4096)


def test_request_validation():
    with pytest.raises(ValueError):
        IoRequest(0, "trim", 0, 1)
    with pytest.raises(ValueError):
        IoRequest(0, "read", 0, 0)


@pytest.mark.parametrize("name", sorted(PROFILES))
def test_synth_matches_profile(name):
    rr, size, gap = PROFILES[name]
    reqs = synth_profile(name, count=20000, seed=1)
    arr = np.array([r.arrival for r in reqs])
    assert np.all(np.diff(arr) >= 0) and arr[0] == 0
    assert np.mean([r.kind == "read" for r in reqs]) == pytest.approx(rr, abs=0.015)
    assert np.mean([r.size for r in reqs]) == pytest.approx(size, rel=0.05)
    assert np.mean(np.diff(arr)) / 1e9 == pytest.approx(gap, rel=0.05)
    assert all(r.offset % 4096 == 0 and r.size % 4096 == 0 for r in reqs)


def test_synth_duration_and_seed():
    a = synth(0.5, 8192, 1e-3, duration=1.0, seed=3)
    assert a == synth(0.5, 8192, 1e-3, duration=1.0, seed=3)
    assert a != synth(0.5, 8192, 1e-3, duration=1.0, seed=4)
    assert a[-1].arrival < 1e9 and 850 < len(a) < 1150
    with pytest.raises(ValueError):
        synth(0.5, 8192, 1e-3)
    with pytest.raises(ValueError):
        synth(1.5, 8192, 1e-3, count=3)


def test_bundled_sample_parses():
    from importlib.resources import files
    path = files("aerosim") / "data" / "msrc_hm_0_sample.csv"
    reqs = parse_msrc(str(path))
    assert len(reqs) == 2000
    assert np.mean([r.kind == "read" for r in reqs]) == pytest.approx(0.36, abs=0.04)


def test_one_second_gap_accelerated_tenfold():
    text = "128166372000000000,hm,0,Read,0,4096,0\n128166372010000000,hm,0,Read,0,4096,0\n"
    assert [r.arrival for r in parse_msrc(io.StringIO(text), accel=10)] == [0, 100_000_000]


def test_zero_read_ratio_is_all_writes():
    assert {r.kind for r in synth(0.0, 4096, 1e-4, count=500, seed=0)} == {"write"}
