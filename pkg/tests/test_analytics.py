import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import percentile as naive_percentile

from aerosim.analytics import (Anchors, CalibrationError, LatencyStats, LifetimeCurve, StatisticsError,
                               calibrate, characterize, config_hash, crossing, derive_allowance, emit_report,
                               ept_for_requirement, lifetime_experiment, percentile)
from aerosim.chip import ExtrapolationError, load_default_params
from aerosim.erase import EraseTimingTable


# -- percentiles ---------------------------------------------------------------------------

def test_percentile_examples():
    st_ = LatencyStats(range(1, 101))
    assert percentile(st_, 0.99) == 99 and percentile(st_, 0.5) == 50
    big = LatencyStats(np.arange(10_000))
    assert big.percentile(0.9999) == 9998
    assert LatencyStats([7]).percentile(0.999999) == 7


@given(st.lists(st.integers(0, 10**9), min_size=1, max_size=300),
       st.sampled_from([0.5, 0.9, 0.99, 0.999, 0.9999, 0.999999]))
def test_percentile_matches_sorted_index(samples, p):
    assert percentile(LatencyStats(samples), p) == naive_percentile(samples, p)


def test_percentile_errors():
    with pytest.raises(StatisticsError):
        percentile(LatencyStats([]), 0.99)
    with pytest.raises(StatisticsError):
        LatencyStats([1]).percentile(1.0)
    with pytest.raises(StatisticsError):
        LatencyStats([]).mean()


# -- lifetime --------------------------------------------------------------------------------

def test_crossing():
    assert crossing([0, 100, 200], [10, 20, 40], 30) == 150
    assert crossing([0, 100], [10, 20], 30) is None
    assert crossing([0, 100], [35, 40], 30) == 0


def test_censored_curve():
    c = LifetimeCurve("aero", [0, 1000], [16, 40], [0, 1], 63, 1000, 10)
    assert c.lifetime is None and c.lifetime_or_bound() == 1000
    assert c.to_dict()["censored"]
    assert c.at_requirement(30).lifetime == pytest.approx(1000 * 14 / 24)


def test_lifetime_experiment_small():
    a = lifetime_experiment("baseline", block_sample=12, pec_step=500, max_pec=3000)
    b = lifetime_experiment("baseline", block_sample=12, pec_step=500, max_pec=3000)
    assert a.pecs == list(range(0, 3001, 500))
    assert a.mean_mrber == b.mean_mrber
    assert a.mean_mrber[0] == pytest.approx(16, abs=0.05)
    assert a.mean_mrber == sorted(a.mean_mrber)


def test_lifetime_experiment_validation():
    with pytest.raises(ValueError):
        lifetime_experiment("baseline", pec_step=250, stride=30)
    with pytest.raises(ExtrapolationError):
        lifetime_experiment("baseline", max_pec=9000)


# -- calibration --------------------------------------------------------------------------

def test_calibration_reproduces_stored_constants():
    stored = load_default_params().calibration
    res = calibrate()
    assert res.calibration.base_scale == pytest.approx(stored.base_scale, rel=1e-6)
    assert res.calibration.penalty_per_delta == pytest.approx(stored.penalty_per_delta, rel=1e-6)
    assert all(v < 0.5 for v in res.residuals.values())


def test_anchor_checks():
    with pytest.raises(CalibrationError):
        Anchors(aggressive_fresh_rber=10).check()
    with pytest.raises(CalibrationError):
        Anchors(baseline_lifetime=9000).check()
    with pytest.raises(CalibrationError):
        calibrate(Anchors(iispe_ratio=1.2))


@pytest.mark.parametrize("req,expected", [(63, [2, 2, 2, 1, 0]), (40, [1, 1, 1, 1, 0])])
def test_allowance(req, expected):
    assert derive_allowance(requirement=req) == expected


def test_requirement_63_gives_reference_table():
    assert ept_for_requirement(63).equals(EraseTimingTable.reference())
    lower = ept_for_requirement(40)
    assert np.all(lower.aggressive >= EraseTimingTable.reference().aggressive)


def test_characterize_recovers_failbit_model():
    res = characterize(t_se_sweep=(1_000_000,))
    assert res["delta"] == pytest.approx(5000, rel=0.03)
    assert res["gamma"] == pytest.approx(500, rel=0.15)
    assert 0.75 < res["shallow_sweep"]["1000000"]["fraction"] <= 1
    assert res["ept_matches_reference"]


# -- reports --------------------------------------------------------------------------------

def _results():
    curve = LifetimeCurve("baseline", [0, 500], [16.0, 20.5], [0.0, 1.0], 63, 500, 4)
    lat = [{"scheme": s, "pec": 2500, "samples": list(range(k, 10_000 + k))}
           for s, k in (("baseline", 100), ("aero", 0))]
    return {"lifetime": [curve], "latency": lat, "config": {"seed": 3, "b": [1, 2]}, "seed": 3}


def test_emit_report_files(tmp_path):
    paths = emit_report(_results(), tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["comparison.csv", "latency_p99.csv", "latency_p99_99.csv", "latency_p99_9999.csv",
                     "lifetime.csv", "summary.json"]
    rows = list(csv.DictReader(open(tmp_path / "comparison.csv")))
    aero = next(r for r in rows if r["scheme"] == "aero")
    assert float(aero["p99_99_norm"]) == pytest.approx(9998 / 10098, abs=1e-6)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config_hash"] == config_hash({"b": [1, 2], "seed": 3})
    assert summary["lifetime"][0]["censored"]


def test_emit_report_is_byte_stable(tmp_path):
    emit_report(_results(), tmp_path / "a")
    emit_report(_results(), tmp_path / "b")
    for name in ("lifetime.csv", "comparison.csv", "summary.json", "latency_p99.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert not list(tmp_path.glob("a/*.tmp*"))


def test_emit_report_empty(tmp_path):
    emit_report({}, tmp_path)
    rows = list(csv.reader(open(tmp_path / "lifetime.csv")))
    assert len(rows) == 1
    assert json.loads((tmp_path / "summary.json").read_text())["lifetime"] == []
