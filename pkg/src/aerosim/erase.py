"""Erase schemes: baseline ISPE, m-ISPE, i-ISPE, DPES and AERO (two modes).

A scheme is a generator that yields :class:`Pulse` commands and receives the
fail-bit count of the verify-read that follows each pulse.  :class:`EraseJob`
drives one generator against a chip; the simulator drives the same job in
quantum-sized slices so that erase suspension cannot change the physics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chip import MS, BlockState, ChipModel, FailBitParams, TimingParams

SCHEMES = ("baseline", "m-ispe", "i-ispe", "dpes", "aero-cons", "aero")

CONSERVATIVE = "conservative"
AGGRESSIVE = "aggressive"


class EraseLogicError(RuntimeError):
    pass


# Final m_tEP model, ms. Rows are the loop about to run, columns the fail-bit
# bucket of the previous verify-read (<=gamma, <=delta, <=2delta, ... <=7delta).
REFERENCE_CONSERVATIVE = [
    [0.5, 1, 1.5, 2, 2.5, 2.5, 2.5, 2.5],
    [0.5, 1, 1.5, 2, 2.5, 3, 3.5, 3.5],
    [0.5, 1, 1.5, 2, 2.5, 3, 3.5, 3.5],
    [0.5, 1, 1.5, 2, 2.5, 3, 3.5, 3.5],
    [0.5, 1, 1.5, 2, 2.5, 3, 3.5, 3.5],
]
REFERENCE_AGGRESSIVE = [
    [0, 0, 0.5, 1, 1.5, 2, 2.5, 2.5],
    [0, 0, 0.5, 1, 1.5, 2, 2.5, 3],
    [0, 0, 0.5, 1, 1.5, 2, 2.5, 3],
    [0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5],
    [0.5, 1, 1.5, 2, 2.5, 3, 3.5, 3.5],
]
# Residual quanta an aggressive erase may leave behind, per loop row.
REFERENCE_ALLOWANCE = [2, 2, 2, 1, 0]


def _ns(ms: float) -> int:
    return int(round(ms * MS))


@dataclass
class EraseTimingTable:
    conservative: np.ndarray  # (rows, 8) int ns
    aggressive: np.ndarray
    allowance: list[int]
    boundaries: list[int]
    f_pass: int

    @classmethod
    def reference(cls, failbits: FailBitParams | None = None) -> "EraseTimingTable":
        """The shipped table, issued for an RBER requirement of 63."""
        fb = failbits or FailBitParams()
        cons = np.array([[_ns(v) for v in row] for row in REFERENCE_CONSERVATIVE], dtype=np.int64)
        aggr = np.array([[_ns(v) for v in row] for row in REFERENCE_AGGRESSIVE], dtype=np.int64)
        return cls(cons, aggr, list(REFERENCE_ALLOWANCE), fb.boundaries(), fb.f_pass)

    @classmethod
    def derive(cls, timing: TimingParams, failbits: FailBitParams, allowance: list[int],
               needed: np.ndarray | None = None) -> "EraseTimingTable":
        """Build both columns from per-cell pulse needs and residual allowances.

        ``needed[row, b]`` is the remainder (in quanta) that completes a block
        observed in bucket ``b``; when absent the linear fail-bit model gives
        ``b + 1``.  Conservative cells cap at the loop's pulse budget; the
        aggressive cell shortens the pulse while the residual stays within the
        row's allowance.
        """
        rows, q = timing.max_loops, timing.quanta_per_level
        if needed is None:
            needed = np.tile(np.arange(1, 9), (rows, 1))
        cons = np.zeros((rows, 8), dtype=np.int64)
        aggr = np.zeros((rows, 8), dtype=np.int64)
        for i in range(rows):
            cap = (timing.t_ep - timing.t_se) // timing.quantum if i == 0 else q
            for b in range(8):
                r = int(needed[i, b])
                cq = min(r, cap)
                k = max(0, min(cq, allowance[i] - (r - cq)))
                cons[i, b] = cq * timing.quantum
                aggr[i, b] = (cq - k) * timing.quantum
        return cls(cons, aggr, list(allowance), failbits.boundaries(), failbits.f_pass)

    def bucket(self, fail_count: int) -> int:
        for b, edge in enumerate(self.boundaries):
            if fail_count <= edge:
                return b
        return len(self.boundaries)

    def lookup(self, loop_row: int, fail_count: int, mode: str = CONSERVATIVE) -> int:
        if not 1 <= loop_row <= self.conservative.shape[0]:
            raise ValueError(f"loop row {loop_row} outside EPT")
        if fail_count <= self.f_pass:
            raise EraseLogicError("EPT lookup with a passing fail count; the erase is already complete")
        b = self.bucket(fail_count)
        if b >= 8:
            raise EraseLogicError("fail count above F_HIGH has no EPT entry")
        table = self.aggressive if mode == AGGRESSIVE else self.conservative
        return int(table[loop_row - 1, b])

    def to_text(self) -> str:
        lines = ["# row | bucket | conservative_ms | aggressive_ms",
                 "allowance " + " ".join(str(a) for a in self.allowance),
                 "boundaries " + " ".join(str(x) for x in self.boundaries),
                 f"f_pass {self.f_pass}"]
        for i in range(self.conservative.shape[0]):
            for b in range(8):
                lines.append(f"{i + 1} {b} {self.conservative[i, b] / MS:g} {self.aggressive[i, b] / MS:g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EraseTimingTable":
        allowance, boundaries, f_pass, cells = None, None, None, []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            head, *rest = line.split()
            if head == "allowance":
                allowance = [int(x) for x in rest]
            elif head == "boundaries":
                boundaries = [int(x) for x in rest]
            elif head == "f_pass":
                f_pass = int(rest[0])
            else:
                cells.append((int(head), int(rest[0]), float(rest[1]), float(rest[2])))
        rows = max(c[0] for c in cells)
        cons = np.zeros((rows, 8), dtype=np.int64)
        aggr = np.zeros((rows, 8), dtype=np.int64)
        for r, b, c, a in cells:
            cons[r - 1, b] = _ns(c)
            aggr[r - 1, b] = _ns(a)
        return cls(cons, aggr, allowance, boundaries, f_pass)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "EraseTimingTable":
        return cls.from_text(Path(path).read_text())

    def equals(self, other: "EraseTimingTable") -> bool:
        return (np.array_equal(self.conservative, other.conservative)
                and np.array_equal(self.aggressive, other.aggressive))


class SefBitmap:
    """Shallow-erasure flags: bit 0 = perform shallow erasure, 1 = skip it."""

    def __init__(self, num_blocks: int):
        self.num_blocks = num_blocks
        self.bits = np.zeros(math.ceil(num_blocks / 8), dtype=np.uint8)

    @property
    def nbytes(self) -> int:
        return self.bits.nbytes

    def shallow(self, block_id: int) -> bool:
        return not (self.bits[block_id >> 3] >> (block_id & 7)) & 1

    def disable(self, block_id: int) -> None:
        self.bits[block_id >> 3] |= np.uint8(1 << (block_id & 7))

    def population(self) -> int:
        """Number of blocks still doing shallow erasure."""
        return self.num_blocks - int(np.unpackbits(self.bits)[: self.num_blocks].sum())


@dataclass
class Pulse:
    duration: int
    level: int
    voltage_scale: float = 1.0


@dataclass
class LoopRecord:
    level: int
    pulse_duration: int
    fail_count: int


@dataclass
class EraseOutcome:
    scheme: str
    block_id: int
    pec: int
    loops: list = field(default_factory=list)
    total_latency: int = 0
    completed: bool = False
    deficit_quanta: int = 0
    mispredictions: int = 0
    predictions: int = 0
    stress_added: float = 0.0
    shallow: bool = False

    @property
    def n_ispe(self) -> int:
        return max((lp.level for lp in self.loops), default=0)

    @property
    def pulse_time(self) -> int:
        return sum(lp.pulse_duration for lp in self.loops)

    def signature(self) -> list[tuple[int, int, int]]:
        return [(lp.pulse_duration, lp.level, lp.fail_count) for lp in self.loops]


@dataclass
class StepResult:
    completed: bool
    mispredictions: int = 0
    shallow: bool = False
    predictions: int = 0
    extra: dict = field(default_factory=dict)


# -- scheme generators -------------------------------------------------------

def baseline_steps(chip: ChipModel, block: BlockState, voltage_scale: float = 1.0):
    t, fb = chip.timing, chip.failbits
    for level in range(1, t.max_loops + 1):
        f = yield Pulse(t.t_ep, level, voltage_scale)
        if f <= fb.f_pass:
            return StepResult(True)
    return StepResult(False)


def m_ispe_steps(chip: ChipModel, block: BlockState, trace: list | None = None):
    t, fb = chip.timing, chip.failbits
    for k in range(1, t.max_quanta + 1):
        level = (k - 1) // t.quanta_per_level + 1
        f = yield Pulse(t.quantum, level)
        if trace is not None:
            trace.append(f)
        if f <= fb.f_pass:
            return StepResult(True, extra={"n": k})
    return StepResult(False, extra={"n": None})


def m_ispe_estimates(n: int, quanta_per_level: int = 7) -> tuple[int, float]:
    """(N_ISPE, m_tEP in ms) implied by an m-ISPE loop count ``n``."""
    return math.ceil(n / quanta_per_level), 0.5 * (1 + ((n - 1) % quanta_per_level))


def erase_m_ispe(chip: ChipModel, block: BlockState) -> dict:
    """Characterization erase in 0.5 ms loops; returns the loop count and estimates."""
    scheme = EraseScheme("m-ispe", chip)
    outcome = scheme.erase(block)
    n = len(outcome.loops) if outcome.completed else None
    est_n, est_mtep = m_ispe_estimates(n, chip.timing.quanta_per_level) if n else (None, None)
    return {"n": n, "est_N": est_n, "est_mtep": est_mtep, "outcome": outcome}


def iispe_steps(chip: ChipModel, block: BlockState, history: dict):
    t, fb = chip.timing, chip.failbits
    start = history.get(block.block_id, 1)
    for level in range(start, t.max_loops + 1):
        f = yield Pulse(t.t_ep, level)
        if f <= fb.f_pass:
            history[block.block_id] = level
            return StepResult(True)
        if start > 1:
            block.skip_damaged = True
    return StepResult(False)


class _AeroState:
    def __init__(self):
        self.mispredictions = 0
        self.predictions = 0
        self.elapsed = 0
        self.level = 1


def _threshold(fb: FailBitParams, residual: int) -> int:
    return fb.f_pass if residual <= 0 else (fb.gamma if residual == 1 else (residual - 1) * fb.delta)


def handle_misprediction(chip: ChipModel, block: BlockState, st: _AeroState, fail_count: int,
                         threshold: int):
    """Extra 0.5 ms pulses after a prediction that left the block short.

    Stays on the current ladder level while the erase has used less than the
    default tBERS for its loop count, otherwise climbs one level.
    """
    t = chip.timing
    if fail_count <= threshold:
        raise EraseLogicError("misprediction handling requested for a block that already passed")
    f = fail_count
    while f > threshold:
        if st.elapsed >= (t.t_ep + t.t_vr) * st.level:
            if st.level >= t.max_loops:
                return f, False
            st.level += 1
        f = yield Pulse(t.quantum, st.level)
        st.elapsed += t.quantum + t.t_vr
        st.mispredictions += 1
    return f, True


def aero_steps(chip: ChipModel, block: BlockState, sef: SefBitmap, ept: EraseTimingTable,
               mode: str = AGGRESSIVE, mispredict: float = 0.0, rng: np.random.Generator | None = None):
    t, fb = chip.timing, chip.failbits
    q = t.quantum
    st = _AeroState()
    shallow = sef.shallow(block.block_id)

    def done(ok=True):
        return StepResult(ok, st.mispredictions, shallow, st.predictions)

    def predicted_pulse(row: int, duration: int, f_prev: int):
        """Issue an EPT-sized pulse; returns (fail_count, accepted, alive)."""
        b = ept.bucket(f_prev)
        r_pred = b + 1
        dq = duration // q
        residual = max(0, r_pred - dq)
        if b >= t.quanta_per_level - 1:
            # top populated bucket only bounds the remainder from below
            final = False
        elif mode == AGGRESSIVE:
            final = residual <= ept.allowance[row - 1]
        else:
            final = residual == 0
        if final:
            st.predictions += 1
            if mispredict > 0 and rng is not None and rng.random() < mispredict:
                block.extra_quanta += 1
        f = yield Pulse(duration, st.level)
        st.elapsed += duration + t.t_vr
        if not final:
            return f, f <= fb.f_pass, True
        thr = _threshold(fb, residual if mode == AGGRESSIVE else 0)
        if f <= thr:
            return f, True, True
        f, alive = yield from handle_misprediction(chip, block, st, f, thr)
        return f, alive, alive

    if shallow:
        f = yield Pulse(t.t_se, 1)
        st.elapsed += t.t_se + t.t_vr
        if f <= fb.f_pass:
            return done()
        dur = ept.lookup(1, f, mode)
        if t.t_se + dur >= t.t_ep:
            sef.disable(block.block_id)
        if dur == 0:
            return done()
        f, accepted, alive = yield from predicted_pulse(1, dur, f)
    else:
        f = yield Pulse(t.t_ep, 1)
        st.elapsed += t.t_ep + t.t_vr
        accepted, alive = f <= fb.f_pass, True
    while True:
        if accepted:
            return done()
        if not alive or st.level >= t.max_loops:
            return done(False)
        row = st.level + 1
        st.level = row
        if f > fb.f_high:
            f = yield Pulse(t.t_ep, row)
            st.elapsed += t.t_ep + t.t_vr
            accepted = f <= fb.f_pass
            continue
        dur = ept.lookup(row, f, mode)
        if dur == 0:
            return done()
        f, accepted, alive = yield from predicted_pulse(row, dur, f)


# -- driver ------------------------------------------------------------------

class EraseJob:
    """One in-flight erase; pulses may be applied in quantum slices."""

    def __init__(self, chip: ChipModel, block: BlockState, scheme: "EraseScheme"):
        self.chip = chip
        self.block = block
        self.scheme = scheme
        self.outcome = EraseOutcome(scheme.name, block.block_id, block.pec)
        self._stress0 = block.stress
        chip.begin_erase(block)
        self._gen = scheme.steps(chip, block)
        self.cmd: Pulse | None = None
        self.applied = 0  # quanta of the current pulse already applied
        self.done = False
        self._advance(None)

    def _advance(self, f):
        try:
            self.cmd = next(self._gen) if f is None else self._gen.send(f)
            self.applied = 0
        except StopIteration as stop:
            self._finish(stop.value)

    def _finish(self, res: StepResult):
        self.cmd = None
        self.done = True
        o = self.outcome
        o.completed = res.completed
        o.mispredictions = res.mispredictions
        o.predictions = res.predictions
        o.shallow = res.shallow
        o.deficit_quanta = self.chip.remaining(self.block) if res.completed else 0
        o.stress_added = self.block.stress - self._stress0
        o.total_latency = sum(lp.pulse_duration + self.chip.timing.t_vr for lp in o.loops)
        self.chip.finish_erase(self.block, res.completed, o.deficit_quanta, o.n_ispe)
        self.scheme.after_erase(self.block, o)

    @property
    def pulse_quanta(self) -> int:
        return self.cmd.duration // self.chip.timing.quantum

    def apply(self, k: int) -> None:
        """Apply ``k`` more quanta of the current pulse."""
        k = min(k, self.pulse_quanta - self.applied)
        if k <= 0:
            return
        dur = k * self.chip.timing.quantum
        self.chip.set_feature(self.block.block_id, dur)
        self.chip.erase_pulse(self.block, None, self.cmd.level, self.cmd.voltage_scale)
        self.applied += k

    def verify(self) -> int:
        """Finish the current pulse's verify-read and fetch the next command."""
        if self.applied != self.pulse_quanta:
            raise EraseLogicError("verify before the pulse finished")
        self.chip.verify_read(self.block)
        f = self.chip.get_feature(self.block.block_id)
        self.outcome.loops.append(LoopRecord(self.cmd.level, self.cmd.duration, f))
        self._advance(f)
        return f

    def run(self) -> EraseOutcome:
        while not self.done:
            self.apply(self.pulse_quanta)
            self.verify()
        return self.outcome


class EraseScheme:
    """Named erase scheme with its FTL-side state (SEF, EPT, i-ISPE history)."""

    def __init__(self, name: str, chip: ChipModel, ept: EraseTimingTable | None = None,
                 mispredict: float = 0.0, seed: int = 0):
        if name not in SCHEMES:
            raise ValueError(f"unknown erase scheme {name!r}; choose from {', '.join(SCHEMES)}")
        self.name = name
        self.chip = chip
        self.ept = ept or EraseTimingTable.reference(chip.failbits)
        self.sef = SefBitmap(chip.geometry.num_blocks)
        self.history: dict[int, int] = {}
        self.mispredict = mispredict
        self.rng = np.random.default_rng([seed, 0xAE20])
        self.m_ispe_n: dict[int, int] = {}

    @property
    def mode(self) -> str:
        return AGGRESSIVE if self.name == "aero" else CONSERVATIVE

    def steps(self, chip: ChipModel, block: BlockState):
        if self.name == "baseline":
            return baseline_steps(chip, block)
        if self.name == "m-ispe":
            return m_ispe_steps(chip, block)
        if self.name == "i-ispe":
            return iispe_steps(chip, block, self.history)
        if self.name == "dpes":
            return baseline_steps(chip, block, self.dpes_voltage_scale(block.pec))
        return aero_steps(chip, block, self.sef, self.ept, self.mode, self.mispredict, self.rng)

    def dpes_voltage_scale(self, pec: int) -> float:
        cal = self.chip.cal
        return cal.dpes_voltage_scale if pec <= cal.dpes_max_pec else 1.0

    def t_prog(self, pec: int) -> int:
        t, cal = self.chip.timing, self.chip.cal
        if self.name != "dpes" or pec > cal.dpes_max_pec:
            return t.t_prog
        return t.t_prog_dpes_early if pec < cal.dpes_tprog_step_pec else t.t_prog_dpes_late

    def after_erase(self, block: BlockState, outcome: EraseOutcome) -> None:
        pass

    def erase(self, block: BlockState) -> EraseOutcome:
        return EraseJob(self.chip, block, self).run()


def multi_plane_erase(chip: ChipModel, blocks: list[BlockState], scheme: EraseScheme):
    """Erase blocks on distinct planes of one chip together.

    Each block follows its own loop sequence; a finished block is inhibited.
    The operation lasts as long as the slowest block.
    """
    geo = chip.geometry
    planes = [geo.plane_of(b.block_id) for b in blocks]
    if len(set(planes)) != len(planes):
        raise ValueError("multi-plane erase needs blocks on distinct planes")
    if len({geo.chip_of(b.block_id) for b in blocks}) > 1:
        raise ValueError("multi-plane erase blocks must share one chip")
    outcomes = [scheme.erase(b) for b in blocks]
    return outcomes, max(o.total_latency for o in outcomes)
