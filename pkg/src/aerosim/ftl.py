"""Page-level FTL: mapping, greedy GC, round-robin allocation and erase dispatch.

Flash physics (program stress, erase pulses) is applied when the FTL issues a
command; the returned :class:`FlashCommand` list is what the simulator times.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .chip import MAX_MODELED_PEC, ChipModel, ConfigError
from .erase import EraseOutcome, EraseScheme

READ, PROGRAM, ERASE = "read", "program", "erase"


class CapacityExhausted(RuntimeError):
    pass


class RequestError(ValueError):
    pass


@dataclass(frozen=True)
class GcConfig:
    policy: str = "greedy"
    gc_trigger_free_ratio: float = 0.05
    overprovisioning: float = 0.20

    def __post_init__(self):
        if self.policy != "greedy":
            raise ConfigError(f"unsupported GC policy {self.policy!r}")
        if not 0 < self.overprovisioning < 1:
            raise ConfigError("overprovisioning must lie in (0, 1)")
        if not 0 < self.gc_trigger_free_ratio < self.overprovisioning:
            raise ConfigError("gc_trigger_free_ratio must lie in (0, overprovisioning)")


@dataclass
class FlashCommand:
    kind: str
    block: int
    page: int
    plane: int
    channel: int
    internal: bool = False
    t_prog: int = 0
    outcome: EraseOutcome | None = field(default=None, repr=False)


class Ftl:
    def __init__(self, chip: ChipModel, scheme: EraseScheme, gc: GcConfig | None = None):
        self.chip = chip
        self.scheme = scheme
        self.gc = gc or GcConfig()
        geo = chip.geometry
        self.geo = geo
        self.pages_per_block = geo.pages_per_block
        self.num_blocks = geo.num_blocks
        total_pages = self.num_blocks * self.pages_per_block
        self.num_lpns = int(total_pages * (1 - self.gc.overprovisioning))
        self.l2p = np.full(self.num_lpns, -1, dtype=np.int64)
        self.p2l = np.full(total_pages, -1, dtype=np.int64)
        self.valid_count = np.zeros(self.num_blocks, dtype=np.int64)
        self.free = [deque(range(p * geo.blocks_per_plane, (p + 1) * geo.blocks_per_plane))
                     for p in range(geo.planes_total)]
        self.active: list[int | None] = [None] * geo.planes_total
        self.full: set[int] = set()
        self.bad: set[int] = set()
        self._next_plane = 0
        self.trigger_blocks = max(1, int(np.ceil(self.gc.gc_trigger_free_ratio * self.num_blocks)))
        self.host_pages = 0
        self.migrated_pages = 0
        self.gc_count = 0
        self.erase_count = 0
        self.erase_outcomes: list[EraseOutcome] = []
        self._in_gc = False

    # -- helpers ------------------------------------------------------------
    @property
    def free_blocks(self) -> int:
        return sum(len(q) for q in self.free)

    def _cmd(self, kind: str, block: int, page: int, internal: bool, **kw) -> FlashCommand:
        plane = self.geo.plane_of(block)
        return FlashCommand(kind, block, page, plane, self.geo.channel_of(block), internal, **kw)

    def _allocate(self) -> int:
        """Next physical page, striping writes over planes round-robin."""
        planes = self.geo.planes_total
        for _ in range(planes):
            p = self._next_plane
            self._next_plane = (p + 1) % planes
            blk = self.active[p]
            if blk is None or self.chip.blocks[blk].write_cursor >= self.pages_per_block:
                if blk is not None:
                    self.full.add(blk)
                    self.active[p] = None
                if not self.free[p]:
                    continue
                blk = self.free[p].popleft()
                self.active[p] = blk
            page = self.chip.program_page(self.chip.blocks[blk])
            return blk * self.pages_per_block + page
        raise CapacityExhausted(
            f"no free block on any plane (free={self.free_blocks}, full={len(self.full)}, bad={len(self.bad)})")

    def _invalidate(self, ppn: int) -> None:
        blk = ppn // self.pages_per_block
        self.p2l[ppn] = -1
        self.chip.blocks[blk].valid[ppn % self.pages_per_block] = False
        self.valid_count[blk] -= 1

    def _place(self, lpn: int, internal: bool) -> FlashCommand:
        old = self.l2p[lpn]
        if old >= 0:
            self._invalidate(int(old))
        ppn = self._allocate()
        blk, page = divmod(ppn, self.pages_per_block)
        self.l2p[lpn] = ppn
        self.p2l[ppn] = lpn
        self.chip.blocks[blk].valid[page] = True
        self.valid_count[blk] += 1
        return self._cmd(PROGRAM, blk, page, internal, t_prog=self.scheme.t_prog(self.chip.blocks[blk].pec))

    def check_lpn(self, lpn: int) -> None:
        if not 0 <= lpn < self.num_lpns:
            raise RequestError(f"lpn {lpn} outside logical capacity {self.num_lpns}")

    # -- host interface -------------------------------------------------------
    def host_write(self, lpn: int, size: int | None = None) -> list[FlashCommand]:
        """Out-of-place write of one logical page; may trigger GC."""
        self.check_lpn(lpn)
        cmds = [self._place(lpn, internal=False)]
        self.host_pages += 1
        if not self._in_gc and self.free_blocks < self.trigger_blocks:
            cmds.extend(self.collect())
        return cmds

    def host_read(self, lpn: int) -> FlashCommand | None:
        """Read command for a mapped page; ``None`` means zero-fill, no flash access."""
        self.check_lpn(lpn)
        ppn = self.l2p[lpn]
        if ppn < 0:
            return None
        blk, page = divmod(int(ppn), self.pages_per_block)
        return self._cmd(READ, blk, page, internal=False)

    # -- garbage collection -----------------------------------------------------
    def pick_gc_victim(self) -> int:
        if not self.full:
            raise CapacityExhausted("no full block available for garbage collection")
        return min(self.full, key=lambda b: (int(self.valid_count[b]), b))

    def collect(self) -> list[FlashCommand]:
        """Greedy GC until the free pool is back above the trigger."""
        cmds: list[FlashCommand] = []
        self._in_gc = True
        try:
            while self.free_blocks < self.trigger_blocks:
                if not self.full:
                    raise CapacityExhausted("free pool below trigger and nothing to collect")
                victim = self.pick_gc_victim()
                if self.valid_count[victim] >= self.pages_per_block and self.free_blocks == 0:
                    raise CapacityExhausted("every full block is completely valid")
                cmds.extend(self._reclaim(victim))
                self.gc_count += 1
        finally:
            self._in_gc = False
        return cmds

    def _reclaim(self, victim: int) -> list[FlashCommand]:
        cmds: list[FlashCommand] = []
        self.full.discard(victim)
        base = victim * self.pages_per_block
        for page in np.flatnonzero(self.chip.blocks[victim].valid[: self.pages_per_block]):
            lpn = int(self.p2l[base + page])
            cmds.append(self._cmd(READ, victim, int(page), internal=True))
            cmds.append(self._place(lpn, internal=True))
            self.migrated_pages += 1
        cmds.append(self.erase_block(victim))
        return cmds

    def erase_block(self, blk: int) -> FlashCommand:
        block = self.chip.blocks[blk]
        outcome = self.scheme.erase(block)
        self.erase_count += 1
        self.erase_outcomes.append(outcome)
        if outcome.completed:
            self.free[self.geo.plane_of(blk)].append(blk)
        else:
            self.bad.add(blk)
        return self._cmd(ERASE, blk, 0, internal=True, outcome=outcome)

    # -- preconditioning --------------------------------------------------------
    def precondition(self, utilization: float, target_pec: int, stride: int = 1) -> None:
        """Age every block to ``target_pec`` cycles, then fill the drive.

        Each cycle programs the whole block and erases it with the active
        scheme.  ``stride > 1`` runs one real cycle per ``stride`` and charges
        its stress ``stride`` times, a faster approximation.
        """
        if not 0 <= utilization <= 1 - self.gc.overprovisioning:
            raise ConfigError(f"utilization {utilization} exceeds 1 - overprovisioning")
        if target_pec < 0 or stride < 1:
            raise ConfigError("target_pec must be >= 0 and stride >= 1")
        if self.host_pages or self.erase_count or self.live_lpns():
            raise ConfigError("precondition needs a fresh FTL")
        advance_blocks(self.chip, self.scheme, self.chip.blocks, target_pec, stride)
        for b in self.chip.blocks:
            if b.bad:
                self.bad.add(b.block_id)
                self.free[self.geo.plane_of(b.block_id)].remove(b.block_id)
        n = int(utilization * self.num_lpns)
        self._in_gc = True
        try:
            for lpn in range(n):
                self._place(lpn, internal=True)
        finally:
            self._in_gc = False

    # -- statistics ---------------------------------------------------------------
    def live_lpns(self) -> int:
        return int((self.l2p >= 0).sum())

    def stats(self) -> dict:
        pecs = np.array([b.pec for b in self.chip.blocks])
        hist = np.bincount(pecs - pecs.min()) if pecs.size else np.array([])
        return {
            "host_pages": int(self.host_pages),
            "migrated_pages": int(self.migrated_pages),
            "write_amplification": float((self.host_pages + self.migrated_pages) / self.host_pages)
            if self.host_pages else 0.0,
            "gc_count": int(self.gc_count),
            "erase_count": int(self.erase_count),
            "bad_blocks": sorted(int(b) for b in self.bad),
            "pec_min": int(pecs.min()) if pecs.size else 0,
            "pec_histogram": {str(int(pecs.min()) + i): int(c) for i, c in enumerate(hist) if c},
            "sef_population": int(self.scheme.sef.population()),
            "sef_bytes": int(self.scheme.sef.nbytes),
            "free_blocks": int(self.free_blocks),
        }

    def stats_json(self) -> str:
        return json.dumps(self.stats(), sort_keys=True, indent=2)


def _crosses_level(chip: ChipModel, block, k: int) -> bool:
    """Whether the block's ISPE loop count may change within the next ``k`` cycles."""
    if block.pinned_need is not None:
        return False
    lam = chip.cal.wear_coupling
    pe = (1 - lam) * block.pec + lam * chip.equivalent_pec(block)
    q = chip.timing.quanta_per_level
    now = chip.profile.required(block.hardness, min(pe, MAX_MODELED_PEC))
    end = chip.profile.required(block.hardness, min(pe + k, MAX_MODELED_PEC))
    return -(-now // q) != -(-end // q)


def advance_blocks(chip: ChipModel, scheme: EraseScheme, blocks, cycles: int, stride: int = 1) -> None:
    """Run ``cycles`` program/erase cycles on each block with ``scheme``.

    With ``stride > 1`` one real cycle stands for ``stride``: its stress is
    charged ``stride`` times and corrected by the trapezoid rule once the next
    real cycle shows how the per-cycle stress moved.  Where the block's loop
    count is about to change every cycle is run for real.
    """
    for b in blocks:
        left = cycles
        pending = None  # (k, stress per cycle, erase stress per cycle) of the last stride
        while left > 0 and not b.bad:
            k = min(stride, left)
            if k > 1 and _crosses_level(chip, b, k):
                k = 1
            s0, e0 = b.stress, b.erase_stress
            chip.program_block(b)
            outcome = scheme.erase(b)
            ds, de = b.stress - s0, b.erase_stress - e0
            if pending is not None:
                kp, ps, pe = pending
                b.stress += (kp - 1) / 2 * (ds - ps)
                b.erase_stress += (kp - 1) / 2 * (de - pe)
                pending = None
            if k > 1 and outcome.completed:
                b.stress += (k - 1) * ds
                b.erase_stress += (k - 1) * de
                b.pec += k - 1
                pending = (k, ds, de)
            left -= k
