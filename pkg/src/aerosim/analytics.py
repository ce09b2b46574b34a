"""Lifetime experiments, latency percentiles, calibration and report files."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .chip import (MAX_MODELED_PEC, Calibration, ChipModel, ChipParams, ExtrapolationError, FailBitParams,
                   Geometry, RberModel, load_default_params)
from .erase import EraseScheme, EraseTimingTable, erase_m_ispe


class StatisticsError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


# -- latency percentiles --------------------------------------------------------

class LatencyStats:
    """Exact percentiles over the full sorted sample set."""

    def __init__(self, samples):
        self.samples = np.sort(np.asarray(samples, dtype=np.int64))

    def __len__(self):
        return int(self.samples.size)

    def percentile(self, p: float) -> int:
        return percentile(self, p)

    def mean(self) -> float:
        if not self.samples.size:
            raise StatisticsError("no samples")
        return float(self.samples.mean())


def percentile(stats: LatencyStats, p: float) -> int:
    """Sample at index ceil(p*N) - 1 of the sorted set."""
    n = len(stats)
    if n == 0:
        raise StatisticsError("percentile of an empty sample set")
    if not 0 < p < 1:
        raise StatisticsError(f"p must lie in (0, 1), got {p}")
    # p*N in float can land a hair above an integer; round first
    idx = math.ceil(round(p * n, 9)) - 1
    return int(stats.samples[max(idx, 0)])


# -- lifetime ------------------------------------------------------------------------

def crossing(pecs, values, requirement: float) -> float | None:
    """First PEC where ``values`` exceeds ``requirement``, linearly interpolated."""
    pecs = np.asarray(pecs, dtype=float)
    values = np.asarray(values, dtype=float)
    over = np.nonzero(values > requirement)[0]
    if over.size == 0:
        return None
    k = int(over[0])
    if k == 0:
        return float(pecs[0])
    v0, v1 = values[k - 1], values[k]
    return float(pecs[k - 1] + (requirement - v0) / (v1 - v0) * (pecs[k] - pecs[k - 1]))


@dataclass
class LifetimeCurve:
    scheme: str
    pecs: list[int]
    mean_mrber: list[float]
    std_mrber: list[float]
    requirement: float
    max_pec: int
    blocks: int
    retired: int = 0
    # per-checkpoint arrays kept for allowance derivation (stress, loops, deficit)
    stress: np.ndarray | None = field(default=None, repr=False)
    loops: np.ndarray | None = field(default=None, repr=False)

    @property
    def lifetime(self) -> float | None:
        """Crossing PEC, or None when the curve stays below the requirement (censored)."""
        return crossing(self.pecs, self.mean_mrber, self.requirement)

    def lifetime_or_bound(self) -> float:
        lt = self.lifetime
        return float(self.max_pec) if lt is None else lt

    def at_requirement(self, requirement: float) -> "LifetimeCurve":
        return replace(self, requirement=requirement)

    def to_dict(self) -> dict:
        lt = self.lifetime
        return {"scheme": self.scheme, "lifetime": lt, "censored": lt is None, "max_pec": self.max_pec,
                "requirement": self.requirement, "blocks": self.blocks, "retired": self.retired,
                "pecs": list(self.pecs), "mean_mrber": list(self.mean_mrber), "std_mrber": list(self.std_mrber)}


def _lifetime_chip(params: ChipParams, blocks: int, seed: int) -> ChipModel:
    geo = Geometry(planes=2, blocks_per_plane=max(1, -(-blocks // 2)), pages_per_block=64)
    return ChipModel(replace(params, geometry=geo), seed)


def lifetime_experiment(scheme: str, block_sample: int = 120, pec_step: int = 250,
                        max_pec: int = MAX_MODELED_PEC, seed: int = 0, params: ChipParams | None = None,
                        stride: int = 10, mispredict: float = 0.0, ept: EraseTimingTable | None = None,
                        requirement: float | None = None) -> LifetimeCurve:
    """Cycle a block sample with ``scheme`` and average M_RBER at each checkpoint.

    One real program/erase cycle stands for ``stride`` cycles (its stress is
    charged ``stride`` times); ``pec_step`` must be a multiple of ``stride``.
    """
    if min(block_sample, pec_step, max_pec, stride) <= 0:
        raise ValueError("block_sample, pec_step, max_pec and stride must be positive")
    if pec_step % stride:
        raise ValueError("pec_step must be a multiple of stride")
    if max_pec > MAX_MODELED_PEC:
        raise ExtrapolationError(f"max_pec {max_pec} beyond the modeled {MAX_MODELED_PEC}")
    params = params or load_default_params()
    chip = _lifetime_chip(params, block_sample, seed)
    sch = EraseScheme(scheme, chip, ept=ept, mispredict=mispredict, seed=seed)
    blocks = chip.blocks[:block_sample]
    nck = max_pec // pec_step + 1
    S = np.full((nck, block_sample), np.nan)
    N = np.zeros((nck, block_sample), dtype=np.int64)
    M = np.full((nck, block_sample), np.nan)
    for b in blocks:
        chip.program_block(b)

    def checkpoint(k):
        for i, b in enumerate(blocks):
            if not b.bad:
                S[k, i] = b.stress
                N[k, i] = b.last_loops
                M[k, i] = chip.rber_of(b)

    checkpoint(0)
    pec, last = 0, 0
    try:
        while pec < max_pec:
            k = min(stride, max_pec - pec)
            for b in blocks:
                if b.bad:
                    continue
                s0, e0 = b.stress, b.erase_stress
                out = sch.erase(b)
                if not out.completed:
                    continue
                chip.program_block(b)
                if k > 1:
                    b.stress += (k - 1) * (b.stress - s0)
                    b.erase_stress += (k - 1) * (b.erase_stress - e0)
                    b.pec += k - 1
            pec += k
            if pec % pec_step == 0:
                last = pec // pec_step
                checkpoint(last)
    except ExtrapolationError:
        pass
    rows = slice(0, last + 1)
    with np.errstate(all="ignore"):
        mean = np.nanmean(M[rows], axis=1)
        std = np.nanstd(M[rows], axis=1)
    alive = ~np.isnan(mean)
    pecs = [int(p) for p in (np.arange(last + 1) * pec_step)[alive]]
    req = params.calibration.rber_requirement if requirement is None else requirement
    return LifetimeCurve(scheme, pecs, [float(x) for x in mean[alive]], [float(x) for x in std[alive]],
                         req, max_pec, block_sample, sum(b.bad for b in blocks), S[rows], N[rows])


# -- calibration -------------------------------------------------------------------------

@dataclass(frozen=True)
class Anchors:
    fresh_rber: float = 16.0                # complete erase on a fresh block
    aggressive_fresh_rber: float = 46.0     # aggressive reduced erase on a fresh block
    baseline_lifetime: float = 5300.0       # PEC where baseline reaches lifetime_requirement
    lifetime_requirement: float = 63.0
    requirement: float = 63.0               # RBER requirement the constants are issued for
    iispe_ratio: float = 0.75               # i-ISPE lifetime relative to baseline
    fresh_deficit: int = 2                  # quanta an aggressive fresh erase leaves behind

    def check(self) -> None:
        if not self.fresh_rber < self.aggressive_fresh_rber < self.lifetime_requirement:
            raise CalibrationError("anchors must satisfy fresh < aggressive fresh < lifetime requirement")
        if self.requirement <= self.fresh_rber:
            raise CalibrationError("requirement must exceed the fresh-block RBER")
        if not 0 < self.baseline_lifetime < MAX_MODELED_PEC:
            raise CalibrationError("baseline lifetime outside the modeled PEC range")
        if not 0 < self.iispe_ratio < 1 or self.fresh_deficit < 1:
            raise CalibrationError("iispe_ratio must lie in (0, 1) and fresh_deficit >= 1")


@dataclass
class CalibrationResult:
    calibration: Calibration
    residuals: dict

    def to_dict(self) -> dict:
        return {"calibration": asdict(self.calibration), "residuals": self.residuals}


def _baseline_stress(params: ChipParams, blocks: int, pec_step: int, seed: int):
    """Stress of each sampled block after baseline cycling to each checkpoint, plus its loop count."""
    chip = _lifetime_chip(params, blocks, seed)
    pecs = np.arange(0, MAX_MODELED_PEC + 1, pec_step)
    S = np.zeros((pecs.size, blocks))
    N = np.zeros((pecs.size, blocks), dtype=np.int64)
    q = chip.timing.quanta_per_level
    for i, b in enumerate(chip.blocks[:blocks]):
        ref = chip.wear_reference(b)
        n = chip.profile.required_curve(b.hardness, np.maximum(pecs - 1, 0))
        S[:, i] = ref[pecs] + params.calibration.program_stress * (pecs + 1)
        N[:, i] = np.where(pecs > 0, -(-n // q), 0)
    return pecs, S, N


def calibrate(anchors: Anchors | None = None, params: ChipParams | None = None, blocks: int = 120,
              pec_step: int = 250, seed: int = 0, fit_beta: bool = False, stride: int = 10) -> CalibrationResult:
    """Fit base_offset, base_scale, penalty_per_delta (and optionally beta) to the anchors."""
    a = anchors or Anchors()
    a.check()
    params = params or load_default_params()
    cal = params.calibration
    fb = params.failbits
    c = cal.base_exponent
    pecs, S, _ = _baseline_stress(params, blocks, pec_step, seed)

    def mean_curve(scale):
        return a.fresh_rber + scale * (S ** c).mean(axis=1)

    def miss(log_scale):
        lt = crossing(pecs, mean_curve(math.exp(log_scale)), a.lifetime_requirement)
        return (MAX_MODELED_PEC * 2 if lt is None else lt) - a.baseline_lifetime

    scale = math.exp(brentq(miss, -200.0, 50.0, xtol=1e-12))
    residual_deficit = (a.fresh_deficit - 1) * fb.delta + fb.gamma
    # the fresh-block base term is part of the aggressive anchor too
    fresh_base = a.fresh_rber + scale * float((S[0] ** c).mean())
    ppd = (a.aggressive_fresh_rber - fresh_base) * fb.delta / residual_deficit
    if ppd <= 0:
        raise CalibrationError("aggressive-erase anchor sits below the fresh baseline RBER")
    new = replace(cal, base_offset=a.fresh_rber, base_scale=scale, penalty_per_delta=ppd,
                  rber_requirement=a.requirement)
    rber = RberModel(new, fb)
    at_lifetime = float(np.interp(a.baseline_lifetime, pecs, mean_curve(scale)))
    residuals = {
        "fresh": abs(rber(0.0) - a.fresh_rber),
        "aggressive_fresh": abs(fresh_base + rber.penalty(a.fresh_deficit) - a.aggressive_fresh_rber),
        "baseline_lifetime": abs(at_lifetime - a.lifetime_requirement),
    }
    if fit_beta:
        p2 = replace(params, calibration=new)
        base_lt = lifetime_experiment("baseline", blocks, pec_step, seed=seed, params=p2,
                                      stride=stride).lifetime_or_bound()
        target = a.iispe_ratio * base_lt

        def gap(beta):
            p3 = replace(params, calibration=replace(new, beta=beta))
            return lifetime_experiment("i-ispe", blocks, pec_step, seed=seed, params=p3,
                                       stride=stride).lifetime_or_bound() - target

        new = replace(new, beta=brentq(gap, 1.0, 10.0, xtol=0.05))
        residuals["iispe_pec"] = abs(gap(new.beta))
    bad = {k: v for k, v in residuals.items() if k != "iispe_pec" and v >= 0.5}
    if bad:
        raise CalibrationError(f"calibration residuals too large: {bad}")
    return CalibrationResult(new, {k: float(v) for k, v in residuals.items()})


def derive_allowance(params: ChipParams | None = None, requirement: float | None = None, blocks: int = 120,
                     pec_step: int = 250, seed: int = 0, quantile: float = 0.5) -> list[int]:
    """Residual quanta each loop row may leave unerased and still meet ``requirement``.

    For row N the reference RBER is the ``quantile`` of complete-erase M_RBER
    over baseline blocks that needed N loops, up to the baseline lifetime.
    The allowance is the largest deficit d in {0, 1, 2} whose penalty keeps
    that reference within the requirement.
    """
    params = params or load_default_params()
    cal, fb = params.calibration, params.failbits
    req = cal.rber_requirement if requirement is None else requirement
    rber = RberModel(cal, fb)
    pecs, S, N = _baseline_stress(params, blocks, pec_step, seed)
    M = cal.base_offset + cal.base_scale * S ** cal.base_exponent
    lt = crossing(pecs, M.mean(axis=1), req)
    limit = MAX_MODELED_PEC if lt is None else lt
    rows = params.timing.max_loops
    out = []
    for row in range(1, rows + 1):
        sel = (N == row) & (pecs[:, None] <= limit)
        if not sel.any():
            out.append(0)
            continue
        ref = float(np.quantile(M[sel], quantile))
        out.append(max((d for d in range(3) if ref + rber.penalty(d) <= req), default=0))
    return out


def ept_for_requirement(requirement: float, params: ChipParams | None = None, **kw) -> EraseTimingTable:
    params = params or load_default_params()
    allowance = derive_allowance(params, requirement, **kw)
    return EraseTimingTable.derive(params.timing, params.failbits, allowance)


# -- characterization ----------------------------------------------------------------------

def characterize(params: ChipParams | None = None, blocks: int = 1000, pecs=(0, 500, 1000, 2000, 3000),
                 t_se_sweep=(500_000, 1_000_000, 1_500_000, 2_000_000), low_pec: int = 500,
                 seed: int = 0) -> dict:
    """m-ISPE measurements over a block population and the EPT they imply."""
    params = params or load_default_params()
    t, fb = params.timing, params.failbits
    geo = Geometry(planes=1, blocks_per_plane=blocks, pages_per_block=16)
    rs, fs = [], []
    occupancy = {}
    for pec in pecs:
        chip = ChipModel(replace(params, geometry=geo), seed)
        first = np.zeros(9, dtype=np.int64)
        for b in chip.blocks:
            chip.age(b, pec)
            chip.program_block(b)
            res = erase_m_ispe(chip, b)
            n = res["n"]
            if n is None:
                continue
            fcs = [lp.fail_count for lp in res["outcome"].loops]
            for i, f in enumerate(fcs, 1):
                rs.append(n - i)
                fs.append(f)
            if len(fcs) >= t.quanta_per_level:
                f7 = fcs[t.quanta_per_level - 1]
                first[8 if f7 <= fb.f_pass else fb.bucket_of(f7)] += 1
        occupancy[str(pec)] = [int(x) for x in first]
    rs, fs = np.array(rs), np.array(fs)
    # counts saturate once a full level of quanta remains; fit the linear part only
    lin = (rs >= 2) & (rs < t.quanta_per_level)
    slope, intercept = np.polyfit(rs[lin], fs[lin], 1)
    delta = float(slope)
    # bin midpoints follow (r - 1.5) * delta + gamma / 2
    gamma = float(2 * (intercept + 1.5 * delta))

    sweep = {}
    for tse in t_se_sweep:
        tt = replace(t, t_se=int(tse))
        p2 = replace(params, timing=tt, geometry=geo)
        chip = ChipModel(p2, seed)
        ept = EraseTimingTable.derive(tt, fb, list(EraseTimingTable.reference(fb).allowance))
        sch = EraseScheme("aero-cons", chip, ept=ept, seed=seed)
        below = total = 0
        ratios = []
        for b in chip.blocks:
            chip.age(b, low_pec)
            chip.program_block(b)
            o = sch.erase(b)
            if len(o.loops) and max(lp.level for lp in o.loops) == 1 and o.completed:
                total += 1
                below += o.pulse_time < tt.t_ep
                ratios.append(1 - o.total_latency / (tt.t_ep + tt.t_vr))
        sweep[str(int(tse))] = {"single_loop": total, "below_default": below,
                                "fraction": below / total if total else float("nan"),
                                "mean_reduction": float(np.mean(ratios)) if ratios else float("nan")}

    measured = FailBitParams(gamma=int(round(gamma)), delta=int(round(delta)), f_pass=fb.f_pass,
                             f_high=7 * int(round(delta)), noise_fraction=fb.noise_fraction)
    allowance = derive_allowance(params, seed=seed)
    ept = EraseTimingTable.derive(t, measured, allowance)
    return {"gamma": gamma, "delta": delta, "bucket_occupancy": occupancy, "shallow_sweep": sweep,
            "allowance": allowance, "ept": ept, "ept_matches_reference": ept.equals(EraseTimingTable.reference(fb))}


# -- reports -------------------------------------------------------------------------------------

def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(round(x, 6))
    return str(x)


PERCENTILES = (0.99, 0.9999, 0.999999)


def emit_report(results: dict, outdir, baseline: str = "baseline") -> list[Path]:
    """Write lifetime.csv, latency_pXX.csv, comparison.csv and summary.json.

    ``results`` may hold ``lifetime`` (list of LifetimeCurve), ``latency``
    (list of dicts with scheme, pec, samples) and ``config``/``seed``.
    """
    out = Path(outdir)
    written = []
    curves = results.get("lifetime", [])
    rows = [(c.scheme, p, _fmt(m)) for c in curves for p, m in zip(c.pecs, c.mean_mrber)]
    _atomic_write(out / "lifetime.csv", _csv(rows, ["scheme", "pec", "mean_mrber"]))
    written.append(out / "lifetime.csv")

    runs = results.get("latency", [])
    table = []
    for r in runs:
        st = LatencyStats(r["samples"])
        entry = {"scheme": r["scheme"], "pec": r["pec"], "label": r.get("label", ""), "n": len(st),
                 "mean": st.mean() if len(st) else None}
        for p in PERCENTILES:
            entry[p] = percentile(st, p) if len(st) else None
        table.append(entry)
    for p in PERCENTILES:
        name = f"latency_p{_pname(p)}.csv"
        rows = [(e["scheme"], e["pec"], e["label"], e["n"], _fmt(e[p])) for e in table]
        _atomic_write(out / name, _csv(rows, ["scheme", "pec", "label", "samples", "latency_ns"]))
        written.append(out / name)

    comp = []
    base = {(e["pec"], e["label"]): e for e in table if e["scheme"] == baseline}
    for e in table:
        b = base.get((e["pec"], e["label"]))
        if b is None or not e["n"] or not b["n"]:
            continue
        comp.append((e["scheme"], e["pec"], e["label"], _fmt(e["mean"] / b["mean"]),
                     *(_fmt(e[p] / b[p]) for p in PERCENTILES)))
    _atomic_write(out / "comparison.csv", _csv(
        comp, ["scheme", "pec", "label", "mean_norm", *(f"p{_pname(p)}_norm" for p in PERCENTILES)]))
    written.append(out / "comparison.csv")

    config = results.get("config", {})
    summary = {
        "config": config,
        "config_hash": config_hash(config),
        "seed": results.get("seed"),
        "lifetime": [c.to_dict() for c in curves],
        "latency": [{"scheme": e["scheme"], "pec": e["pec"], "label": e["label"], "samples": e["n"],
                     "mean_ns": e["mean"], **{f"p{_pname(p)}_ns": e[p] for p in PERCENTILES}}
                    for e in table],
    }
    summary.update(results.get("extra", {}))
    _atomic_write(out / "summary.json", json.dumps(summary, sort_keys=True, indent=2, default=_json_default) + "\n")
    written.append(out / "summary.json")
    return written


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _pname(p: float) -> str:
    return f"{p * 100:g}".replace(".", "_")
