"""Behavioral model of a 3D TLC NAND chip: erase physics, wear and RBER.

Every block carries a latent hardness percentile ``u``. The number of 0.5 ms
erase-pulse quanta it needs at a given P/E count comes from a quantile family
(piecewise linear in ``u``, linear in PEC between anchor rows).  Pulses advance
a per-erase quantum ledger along the ISPE voltage ladder; seven quanta belong
to each ladder level.  Verify-reads report fail-bit counts drawn inside the
bucket that corresponds to the quanta still missing.

All durations are integer nanoseconds.
"""
from __future__ import annotations

import bisect
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MS = 1_000_000
US = 1_000

MAX_MODELED_PEC = 8000


class ConfigError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class ExtrapolationError(ValueError):
    pass


class ChipStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class Geometry:
    channels: int = 1
    chips: int = 1
    planes: int = 4
    blocks_per_plane: int = 64
    pages_per_block: int = 256
    page_size: int = 16 * 1024

    def __post_init__(self):
        for name, value in asdict(self).items():
            if int(value) <= 0:
                raise ConfigError(f"geometry field {name} must be positive, got {value}")

    @property
    def planes_total(self) -> int:
        return self.channels * self.chips * self.planes

    @property
    def num_blocks(self) -> int:
        return self.planes_total * self.blocks_per_plane

    @property
    def physical_bytes(self) -> int:
        return self.num_blocks * self.pages_per_block * self.page_size

    def plane_of(self, block_id: int) -> int:
        """Global plane index of a block (channel-major, then chip, then plane)."""
        return block_id // self.blocks_per_plane

    def chip_of(self, block_id: int) -> int:
        return self.plane_of(block_id) // self.planes

    def channel_of(self, block_id: int) -> int:
        return self.chip_of(block_id) // self.chips


# Full-size reference drive; too large for desk runs but buildable.
FULL_SIZE_GEOMETRY = Geometry(channels=8, chips=2, planes=4, blocks_per_plane=497,
                              pages_per_block=2112, page_size=16 * 1024)


@dataclass(frozen=True)
class TimingParams:
    t_ep: int = 3500 * US
    t_vr: int = 100 * US
    t_se: int = 1000 * US
    quantum: int = 500 * US
    t_r: int = 40 * US
    t_prog: int = 350 * US
    t_prog_dpes_early: int = 385 * US
    t_prog_dpes_late: int = 455 * US
    max_loops: int = 5
    quanta_per_level: int = 7

    def __post_init__(self):
        if self.t_ep != self.quanta_per_level * self.quantum:
            raise ConfigError("t_ep must equal quanta_per_level * quantum")
        if self.t_se <= 0 or self.t_se % self.quantum or self.t_se > self.t_ep:
            raise ConfigError("t_se must be a positive quantum multiple <= t_ep")
        if self.max_loops < 1:
            raise ConfigError("max_loops must be >= 1")

    @property
    def max_quanta(self) -> int:
        return self.max_loops * self.quanta_per_level

    def quanta(self, duration: int) -> int:
        if duration <= 0 or duration % self.quantum:
            raise AlignmentError(f"{duration} ns is not a positive multiple of {self.quantum} ns")
        return duration // self.quantum


@dataclass(frozen=True)
class FailBitParams:
    gamma: int = 500
    delta: int = 5000
    f_pass: int = 50
    f_high: int = 35000
    noise_fraction: float = 0.3

    def __post_init__(self):
        if not (0 <= self.f_pass < self.gamma < self.delta):
            raise ConfigError("need 0 <= f_pass < gamma < delta")
        if self.f_high != 7 * self.delta:
            raise ConfigError("f_high must be 7 * delta")
        if not (0.0 <= self.noise_fraction < 1.0):
            raise ConfigError("noise_fraction must lie in [0, 1)")

    def bucket_bounds(self, remaining: int) -> tuple[int, int]:
        """Half-open integer range (lo, hi] of fail bits for ``remaining`` quanta.

        ``remaining == 0`` maps to [0, f_pass] and is reported as lo = -1.
        """
        if remaining <= 0:
            return -1, self.f_pass
        if remaining == 1:
            return self.f_pass, self.gamma
        return (remaining - 2) * self.delta + self.gamma, (remaining - 1) * self.delta

    def boundaries(self) -> list[int]:
        """Upper edges of the eight EPT fail-bit columns."""
        return [self.gamma] + [k * self.delta for k in range(1, 8)]

    def bucket_of(self, fail_count: int) -> int:
        for b, edge in enumerate(self.boundaries()):
            if fail_count <= edge:
                return b
        return 8  # above F_HIGH


@dataclass
class Calibration:
    """Stress and RBER constants; produced by ``analytics.calibrate``."""
    kappa: float = 1.0
    alpha: float = 2.0
    # one full-block program costs a quarter of a fresh erase loop (erase is ~80% of wear)
    program_stress: float = 1.75
    base_exponent: float = 2.0
    base_offset: float = 16.0
    base_scale: float = 0.0
    # bit errors per delta fail bits left behind by an incomplete erase
    penalty_per_delta: float = 30.0 / 1.1
    # stress multiplier once a block has been erased from a skipped ladder level
    beta: float = 4.0
    # 0: erase difficulty follows the P/E count; 1: it follows accumulated erase stress
    wear_coupling: float = 0.8
    dpes_voltage_scale: float = 0.91
    dpes_max_pec: int = 3000
    dpes_tprog_step_pec: int = 1500
    rber_requirement: float = 63.0
    ecc_capability: float = 72.0


# Quantile anchors: PEC -> [(u, q)]; required quanta = ceil(q(u, pec)).
DEFAULT_ANCHORS: dict[int, list[tuple[float, float]]] = {
    0: [(0.0, 3.5), (0.02, 4.0), (0.7, 5.0), (0.84, 6.0), (1.0, 7.0)],
    500: [(0.0, 3.5), (0.02, 4.0), (0.6, 5.0), (0.84, 6.0), (1.0, 7.0)],
    1000: [(0.0, 4.0), (0.3, 5.0), (0.55, 6.0), (0.765, 7.0), (1.0, 11.0)],
    2000: [(0.0, 7.01), (0.4, 9.0), (0.8, 12.0), (0.97, 14.0), (1.0, 20.0)],
    3000: [(0.0, 11.0), (0.55, 14.0), (0.95, 21.0), (1.0, 24.0)],
    4000: [(0.0, 14.0), (0.5, 19.0), (0.9, 26.0), (1.0, 30.0)],
    6000: [(0.0, 18.0), (0.5, 24.0), (0.9, 30.0), (1.0, 33.0)],
    8000: [(0.0, 21.0), (0.5, 27.0), (0.9, 33.0), (1.0, 35.0)],
}


class QuantileFamily:
    """PEC -> required-quanta quantile curves."""

    def __init__(self, anchors: dict[int, list[tuple[float, float]]], max_quanta: int = 35):
        if not anchors:
            raise ConfigError("empty quantile anchor set")
        self.anchors = {int(p): [(float(u), float(q)) for u, q in pts] for p, pts in anchors.items()}
        self.pecs = sorted(self.anchors)
        self.max_quanta = max_quanta
        for p in self.pecs:
            us = [u for u, _ in self.anchors[p]]
            qs = [q for _, q in self.anchors[p]]
            if us[0] != 0.0 or us[-1] != 1.0 or any(b <= a for a, b in zip(us, us[1:])):
                raise ConfigError(f"anchor row {p}: u must increase strictly from 0 to 1")
            if any(b < a for a, b in zip(qs, qs[1:])):
                raise ConfigError(f"anchor row {p}: quantiles must be nondecreasing")
            if qs[-1] > max_quanta:
                raise ConfigError(f"anchor row {p} exceeds {max_quanta} quanta")
        self._cols = {p: ([u for u, _ in pts], [q for _, q in pts]) for p, pts in self.anchors.items()}

    def _row(self, pec: int, u: float) -> float:
        us, qs = self._cols[pec]
        j = min(bisect.bisect_right(us, u), len(us) - 1)
        u0, u1, q0, q1 = us[j - 1], us[j], qs[j - 1], qs[j]
        return q0 + (q1 - q0) * (u - u0) / (u1 - u0)

    def q(self, u: float, pec: float) -> float:
        if pec < self.pecs[0] or pec > self.pecs[-1]:
            raise ExtrapolationError(f"PEC {pec} outside modeled range [{self.pecs[0]}, {self.pecs[-1]}]")
        i = bisect.bisect_right(self.pecs, pec) - 1
        lo = self.pecs[i]
        if lo == pec or i + 1 >= len(self.pecs):
            return self._row(lo, u)
        hi = self.pecs[i + 1]
        w = (pec - lo) / (hi - lo)
        return (1 - w) * self._row(lo, u) + w * self._row(hi, u)

    def required(self, u: float, pec: float) -> int:
        return max(1, min(self.max_quanta, math.ceil(self.q(u, pec) - 1e-9)))

    def required_curve(self, u: float, pecs: np.ndarray) -> np.ndarray:
        """Vectorized ``required`` over many PEC values for one block."""
        rows = [self._row(p, u) for p in self.pecs]
        q = np.interp(pecs, self.pecs, rows)
        return np.clip(np.ceil(q - 1e-9), 1, self.max_quanta).astype(np.int64)


@dataclass
class BlockState:
    block_id: int
    hardness: float
    pages: int
    pec: int = 0
    consumed: int = 0
    level: int = 1
    stress: float = 0.0
    # erase-pulse share of ``stress``; sets how worn the block behaves
    erase_stress: float = 0.0
    need: int = 0
    erased: bool = True
    bad: bool = False
    write_cursor: int = 0
    valid: np.ndarray = field(default=None, repr=False)
    # ISPE-skip damage flag (i-ISPE); once set, pulses carry the beta multiplier
    skip_damaged: bool = False
    extra_quanta: int = 0
    last_fail: int | None = None
    last_deficit: int = 0
    last_row: int = 1
    last_loops: int = 0
    programmed: bool = False
    # fixes the required quanta regardless of wear (constructed blocks)
    pinned_need: int | None = None

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.zeros(self.pages, dtype=bool)


@dataclass
class ChipParams:
    geometry: Geometry = field(default_factory=Geometry)
    timing: TimingParams = field(default_factory=TimingParams)
    failbits: FailBitParams = field(default_factory=FailBitParams)
    anchors: dict = field(default_factory=lambda: {p: list(v) for p, v in DEFAULT_ANCHORS.items()})
    calibration: Calibration = field(default_factory=Calibration)

    def to_dict(self) -> dict:
        return {
            "geometry": asdict(self.geometry),
            "timing": asdict(self.timing),
            "failbits": asdict(self.failbits),
            "anchors": {str(p): [[u, q] for u, q in pts] for p, pts in sorted(self.anchors.items())},
            "calibration": asdict(self.calibration),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChipParams":
        return cls(
            geometry=Geometry(**d["geometry"]),
            timing=TimingParams(**d["timing"]),
            failbits=FailBitParams(**d["failbits"]),
            anchors={int(p): [(u, q) for u, q in pts] for p, pts in d["anchors"].items()},
            calibration=Calibration(**d["calibration"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ChipParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_params_path() -> Path:
    return Path(__file__).with_name("data") / "chip_3d_tlc.json"


def load_default_params() -> ChipParams:
    """Shipped 3D TLC parameter set with the fitted calibration constants."""
    path = default_params_path()
    if path.exists():
        return ChipParams.load(path)
    return ChipParams()


class RberModel:
    """Worst-page bit errors per 1 KiB after one-year retention."""

    def __init__(self, cal: Calibration, failbits: FailBitParams | None = None):
        self.cal = cal
        self.failbits = failbits or FailBitParams()

    def base(self, stress: float) -> float:
        return self.cal.base_offset + self.cal.base_scale * max(stress, 0.0) ** self.cal.base_exponent

    def penalty(self, deficit: int, row: int = 1) -> float:
        """Extra errors from ``deficit`` unerased quanta.

        Scales with the fail bits such a block still shows (the upper edge of
        its bucket), so each restored quantum removes about delta fail bits'
        worth.  The loop row does not change the penalty in this model.
        """
        if deficit <= 0:
            return 0.0
        fb = self.failbits
        residual = (deficit - 1) * fb.delta + fb.gamma
        return self.cal.penalty_per_delta * residual / fb.delta

    def __call__(self, stress: float, deficit: int = 0, row: int = 1) -> float:
        return self.base(stress) + self.penalty(deficit, row)


class ChipModel:
    """All blocks of one simulated SSD plus their erase physics.

    ``seed`` fixes block hardness and every per-block fail-bit stream.
    """

    def __init__(self, params: ChipParams, seed: int = 0):
        self.params = params
        self.geometry = params.geometry
        self.timing = params.timing
        self.failbits = params.failbits
        self.cal = params.calibration
        self.seed = int(seed)
        self.profile = QuantileFamily(params.anchors, self.timing.max_quanta)
        self.rber = RberModel(self.cal, self.failbits)
        rng = np.random.default_rng([self.seed, 0x5EED])
        u = rng.random(self.geometry.num_blocks)
        self.blocks = [BlockState(i, float(u[i]), self.geometry.pages_per_block)
                       for i in range(self.geometry.num_blocks)]
        self._rngs: dict[tuple[int, int], np.random.Generator] = {}
        self._wear_ref: dict[int, np.ndarray] = {}
        self._next_tep: dict[int, int] = {}

    # -- randomness -------------------------------------------------------
    def rng_for(self, block_id: int, stream: int = 0) -> np.random.Generator:
        key = (block_id, stream)
        g = self._rngs.get(key)
        if g is None:
            g = np.random.default_rng([self.seed, block_id, stream])
            self._rngs[key] = g
        return g

    # -- physics ----------------------------------------------------------
    def wear_reference(self, block: BlockState) -> np.ndarray:
        """Erase stress a block accumulates under baseline ISPE, indexed by PEC."""
        ref = self._wear_ref.get(block.block_id)
        if ref is None:
            pecs = np.arange(MAX_MODELED_PEC + 1)
            n = self.profile.required_curve(block.hardness, pecs)
            loops = -(-n // self.timing.quanta_per_level)
            w = np.array([self.voltage_weight(j) for j in range(1, self.timing.max_loops + 1)])
            per_cycle = self.timing.quanta_per_level * np.cumsum(w)[loops - 1]
            ref = np.concatenate([[0.0], np.cumsum(per_cycle[:-1])])
            self._wear_ref[block.block_id] = ref
        return ref

    def equivalent_pec(self, block: BlockState) -> float:
        """PEC at which baseline cycling would have produced this block's erase stress."""
        ref = self.wear_reference(block)
        if block.erase_stress > ref[-1]:
            raise ExtrapolationError(f"block {block.block_id} worn beyond the modeled range")
        return float(np.interp(block.erase_stress, ref, np.arange(ref.size)))

    def required_quanta(self, block: BlockState) -> int:
        if block.pinned_need is not None:
            return block.pinned_need
        if block.pec > MAX_MODELED_PEC:
            raise ExtrapolationError(f"block {block.block_id} at PEC {block.pec} beyond {MAX_MODELED_PEC}")
        lam = self.cal.wear_coupling
        pec = block.pec if lam == 0 else (1 - lam) * block.pec + lam * self.equivalent_pec(block)
        return self.profile.required(block.hardness, min(pec, MAX_MODELED_PEC))

    def age(self, block: BlockState, pec: int) -> None:
        """Put a block in the state baseline cycling leaves it in after ``pec`` cycles."""
        if not 0 <= pec <= MAX_MODELED_PEC:
            raise ExtrapolationError(f"PEC {pec} outside [0, {MAX_MODELED_PEC}]")
        block.pec = pec
        block.erase_stress = float(self.wear_reference(block)[pec])
        block.stress = block.erase_stress + self.cal.program_stress * pec

    def voltage_weight(self, level: int, voltage_scale: float = 1.0) -> float:
        return ((1.0 + self.cal.kappa * (level - 1)) * voltage_scale) ** self.cal.alpha

    def begin_erase(self, block: BlockState) -> int:
        """Reset the per-erase ledger; returns the quanta this erase needs."""
        if block.bad:
            raise ChipStateError(f"block {block.block_id} is retired")
        block.consumed = 0
        block.level = 1
        block.extra_quanta = 0
        block.erased = False
        block.last_fail = None
        block.need = self.required_quanta(block)
        return block.need

    def target_quanta(self, block: BlockState) -> int:
        return block.need + block.extra_quanta

    def erase_pulse(self, block: BlockState, duration: int | None, level: int,
                    voltage_scale: float = 1.0) -> int:
        """Apply one erase pulse; returns the quanta credited to the ledger.

        A pulse at ``level`` first brings the ledger up to the start of that
        level's window, then credits quanta up to the window end.  Duration
        beyond what the block still needs only adds stress.
        """
        t = self.timing
        if duration is None:
            duration = self._next_tep.pop(block.block_id, t.t_ep)
        k = t.quanta(duration)
        if not 1 <= level <= t.max_loops:
            raise ValueError(f"ladder level {level} outside [1, {t.max_loops}]")
        n = self.target_quanta(block)
        q = t.quanta_per_level
        start = max(block.consumed, q * (level - 1))
        end = min(n, q * level, start + k)
        credited = max(0, end - block.consumed) if end > block.consumed else 0
        block.consumed += credited
        block.level = level
        w = self.voltage_weight(level, voltage_scale)
        if block.skip_damaged:
            w *= self.cal.beta
        block.stress += k * w
        block.erase_stress += k * w
        return credited

    def remaining(self, block: BlockState) -> int:
        return max(0, self.target_quanta(block) - block.consumed)

    def verify_read(self, block: BlockState) -> int:
        r = min(self.timing.quanta_per_level, self.remaining(block))
        lo, hi = self.failbits.bucket_bounds(r)
        nf = self.failbits.noise_fraction
        width = hi - lo
        a = lo + 0.5 * nf * width
        b = hi - 0.5 * nf * width
        x = self.rng_for(block.block_id).uniform(a, b)
        f = int(round(x))
        f = min(max(f, lo + 1), hi)
        block.last_fail = f
        return f

    def finish_erase(self, block: BlockState, completed: bool, deficit: int = 0, loops: int = 0) -> None:
        block.last_loops = loops
        if not completed:
            block.bad = True
            return
        block.erased = True
        block.programmed = False
        block.last_deficit = deficit
        block.last_row = max(loops, 1)
        block.pec += 1
        block.write_cursor = 0
        block.valid[:] = False

    def program_page(self, block: BlockState) -> int:
        if block.write_cursor >= block.pages:
            raise ChipStateError(f"block {block.block_id} is full")
        page = block.write_cursor
        block.write_cursor += 1
        block.stress += self.cal.program_stress / block.pages
        block.programmed = True
        return page

    def program_block(self, block: BlockState) -> None:
        """Program every remaining page with a fixed pattern (wear only)."""
        left = block.pages - block.write_cursor
        block.stress += self.cal.program_stress * left / block.pages
        block.write_cursor = block.pages
        block.programmed = True

    def rber_of(self, block: BlockState) -> float:
        if not block.programmed:
            raise ChipStateError("RBER is defined only for a block programmed after its last erase")
        return self.rber(block.stress, block.last_deficit, block.last_row)

    # -- GET/SET FEATURE --------------------------------------------------
    def set_feature(self, block_id: int, next_tep: int) -> None:
        t = self.timing
        if next_tep <= 0 or next_tep % t.quantum or next_tep > t.t_ep:
            raise AlignmentError(f"tEP {next_tep} ns must be a quantum multiple in (0, {t.t_ep}]")
        self._next_tep[block_id] = next_tep

    def get_feature(self, block_id: int) -> int:
        f = self.blocks[block_id].last_fail
        if f is None:
            raise ChipStateError("no verify-read result for this block yet")
        return f


def build_chip(geometry: Geometry | None = None, timing: TimingParams | None = None,
               failbits: FailBitParams | None = None, seed: int = 0,
               params: ChipParams | None = None) -> ChipModel:
    base = params or load_default_params()
    p = ChipParams(
        geometry=geometry or base.geometry,
        timing=timing or base.timing,
        failbits=failbits or base.failbits,
        anchors=base.anchors,
        calibration=base.calibration,
    )
    return ChipModel(p, seed)
