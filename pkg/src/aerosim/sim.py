"""Discrete-event SSD datapath: planes, channels, user-read priority, erase suspension.

The clock is integer nanoseconds.  Events are ordered by (timestamp, sequence).
"""
from __future__ import annotations

import csv
import heapq
import io
import json
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .chip import US, ChipModel
from .erase import EraseOutcome, EraseScheme
from .ftl import ERASE, PROGRAM, READ, FlashCommand, Ftl, GcConfig
from .workload import IoRequest

PCIE4_X4_BYTES_PER_S = 7_877_000_000


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    suspension: bool = True
    suspend_overhead: int = 100 * US
    link_bytes_per_s: int = PCIE4_X4_BYTES_PER_S
    max_outstanding: int | None = None

    def __post_init__(self):
        if self.suspend_overhead < 0 or self.link_bytes_per_s <= 0:
            raise ValueError("suspend_overhead must be >= 0 and link bandwidth positive")
        if self.max_outstanding is not None and self.max_outstanding < 1:
            raise ValueError("max_outstanding must be >= 1")

    def transfer_ns(self, nbytes: int) -> int:
        return -(-nbytes * 1_000_000_000 // self.link_bytes_per_s)


@dataclass
class _Op:
    cmd: FlashCommand
    req: int | None
    nbytes: int


@dataclass
class _EraseCtx:
    op: _Op
    boundaries: list[int]  # cumulative suspendable points, ns of erase time
    total: int
    progress: int = 0      # erase time completed before the current segment
    seg_start: int = 0
    token: int = 0
    suspends: int = 0
    suspending: bool = False


@dataclass
class _Plane:
    user: deque = field(default_factory=deque)
    internal: deque = field(default_factory=deque)
    busy: bool = False
    erase: _EraseCtx | None = None      # active or suspended erase
    erase_running: bool = False


def erase_timeline(outcome: EraseOutcome, quantum: int, t_vr: int) -> list[int]:
    """Cumulative times at which an erase may pause: every quantum and every verify end."""
    pts, t = [], 0
    for lp in outcome.loops:
        for _ in range(lp.pulse_duration // quantum):
            t += quantum
            pts.append(t)
        t += t_vr
        pts.append(t)
    return pts


@dataclass
class SimulationReport:
    config: dict
    requests: list  # (id, arrival_ns, kind, latency_ns)
    erase: dict
    ftl: dict
    end_time: int

    def read_latencies(self) -> np.ndarray:
        return np.array([r[3] for r in self.requests if r[2] == "read"], dtype=np.int64)

    def write_latencies(self) -> np.ndarray:
        return np.array([r[3] for r in self.requests if r[2] == "write"], dtype=np.int64)

    def summary(self) -> dict:
        rl, wl = self.read_latencies(), self.write_latencies()
        return {
            "requests": len(self.requests),
            "reads": int(rl.size),
            "writes": int(wl.size),
            "mean_read_ns": float(rl.mean()) if rl.size else 0.0,
            "mean_write_ns": float(wl.mean()) if wl.size else 0.0,
            "end_time_ns": int(self.end_time),
            "iops": float(len(self.requests) / (self.end_time / 1e9)) if self.end_time else 0.0,
        }

    def to_dict(self) -> dict:
        return {"config": self.config, "summary": self.summary(), "erase": self.erase, "ftl": self.ftl}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def latency_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["request_id", "arrival_ns", "type", "latency_ns"])
        w.writerows(self.requests)
        return buf.getvalue()


class Simulator:
    ARRIVAL, SENSED, DONE, SUSPEND, ERASE_DONE, FREE = range(6)

    def __init__(self, ftl: Ftl, config: SimConfig | None = None, meta: dict | None = None):
        self.ftl = ftl
        self.chip: ChipModel = ftl.chip
        self.cfg = config or SimConfig()
        self.meta = meta or {}
        self.now = 0
        self._seq = 0
        self._heap: list = []
        self.planes = [_Plane() for _ in range(self.chip.geometry.planes_total)]
        self.channel_free = [0] * self.chip.geometry.channels
        self.pending: dict[int, int] = {}
        self.arrival: dict[int, tuple[int, str]] = {}
        self.records: list[tuple[int, int, str, int]] = []
        self.suspensions = 0
        self.erase_busy_ns = 0
        self._erase_first = len(ftl.erase_outcomes)
        self._source = None
        self._held = None

    # -- event plumbing -------------------------------------------------------
    def _push(self, t: int, kind: int, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, payload))

    def submit(self, rid: int, req: IoRequest) -> None:
        if req.arrival < self.now:
            raise SimulationError(f"request {rid} arrives in the past ({req.arrival} < {self.now})")
        self._push(req.arrival, self.ARRIVAL, (rid, req))

    # -- request translation -----------------------------------------------------
    def _arrive(self, rid: int, req: IoRequest) -> None:
        ps = self.chip.geometry.page_size
        self.arrival[rid] = (req.arrival, req.kind)
        first, last = req.offset // ps, (req.offset + req.size - 1) // ps
        ops: list[_Op] = []
        for k, page in enumerate(range(first, last + 1)):
            lo = max(req.offset, page * ps)
            hi = min(req.offset + req.size, (page + 1) * ps)
            lpn = page % self.ftl.num_lpns
            if req.kind == "read":
                cmd = self.ftl.host_read(lpn)
                if cmd is not None:
                    ops.append(_Op(cmd, rid, hi - lo))
                else:
                    ops.append(_Op(None, rid, hi - lo))
            else:
                cmds = self.ftl.host_write(lpn)
                ops.append(_Op(cmds[0], rid, hi - lo))
                ops.extend(_Op(c, None, ps) for c in cmds[1:])
        self.pending[rid] = sum(1 for op in ops if op.req == rid)
        for op in ops:
            if op.cmd is None:
                self._push(self.now + self.cfg.transfer_ns(op.nbytes), self.DONE, op)
                continue
            plane = self.planes[op.cmd.plane]
            (plane.internal if op.cmd.internal else plane.user).append(op)
            if op.cmd.kind == READ and not op.cmd.internal:
                self._maybe_suspend(op.cmd.plane)
            self._dispatch(op.cmd.plane)

    # -- plane scheduling -----------------------------------------------------------
    def _maybe_suspend(self, p: int) -> None:
        pl = self.planes[p]
        ctx = pl.erase
        if not self.cfg.suspension or ctx is None or not pl.erase_running or ctx.suspending:
            return
        elapsed = ctx.progress + (self.now - ctx.seg_start)
        b = next(x for x in ctx.boundaries if x >= elapsed)
        if b >= ctx.total:
            return
        ctx.suspending = True
        ctx.token += 1
        self._push(self.now + (b - elapsed), self.SUSPEND, (p, ctx.token, b))

    def _next_user_read(self, pl: _Plane):
        for i, op in enumerate(pl.user):
            if op.cmd.kind == READ:
                del pl.user[i]
                return op
        return None

    def _dispatch(self, p: int) -> None:
        pl = self.planes[p]
        if pl.busy:
            return
        if pl.erase is not None and not pl.erase_running:
            op = self._next_user_read(pl)
            if op is None:
                self._resume(p)
                return
            self._start(p, op)
            return
        if pl.user:
            self._start(p, pl.user.popleft())
        elif pl.internal:
            self._start(p, pl.internal.popleft())

    def _start(self, p: int, op: _Op) -> None:
        pl = self.planes[p]
        pl.busy = True
        cmd, t = op.cmd, self.chip.timing
        if cmd.kind == READ:
            self._push(self.now + t.t_r, self.SENSED, (p, op))
        elif cmd.kind == PROGRAM:
            ch = cmd.channel
            start = max(self.now, self.channel_free[ch])
            self.channel_free[ch] = start + self.cfg.transfer_ns(op.nbytes)
            self._push(self.channel_free[ch] + cmd.t_prog, self.DONE, (p, op))
        else:
            o = cmd.outcome
            pts = erase_timeline(o, t.quantum, t.t_vr)
            ctx = _EraseCtx(op, pts, pts[-1] if pts else 0, 0, self.now)
            pl.erase = ctx
            pl.erase_running = True
            self.erase_busy_ns += ctx.total
            ctx.token += 1
            self._push(self.now + ctx.total, self.ERASE_DONE, (p, ctx.token))
            if self.cfg.suspension and any(o2.cmd.kind == READ for o2 in pl.user):
                self._maybe_suspend(p)

    def _resume(self, p: int) -> None:
        pl = self.planes[p]
        ctx = pl.erase
        pl.busy = True
        pl.erase_running = True
        ctx.seg_start = self.now
        ctx.suspending = False
        ctx.token += 1
        self._push(self.now + ctx.total - ctx.progress, self.ERASE_DONE, (p, ctx.token))

    def _finish_op(self, op: _Op) -> None:
        if op.req is None:
            return
        self.pending[op.req] -= 1
        if self.pending[op.req] == 0:
            arr, kind = self.arrival.pop(op.req)
            del self.pending[op.req]
            self.records.append((op.req, arr, kind, self.now - arr))
            self._release()

    # -- main loop ----------------------------------------------------------------
    def _handle(self, kind: int, payload) -> None:
        if kind == self.ARRIVAL:
            rid, req = payload
            self._arrive(rid, req)
            self._feed()
        elif kind == self.SENSED:
            p, op = payload
            ch = op.cmd.channel
            start = max(self.now, self.channel_free[ch])
            self.channel_free[ch] = start + self.cfg.transfer_ns(op.nbytes)
            self._push(self.channel_free[ch], self.DONE, (None, op))
            self.planes[p].busy = False
            self._dispatch(p)
        elif kind == self.DONE:
            if isinstance(payload, _Op):
                self._finish_op(payload)
                return
            p, op = payload
            self._finish_op(op)
            if p is not None:
                self.planes[p].busy = False
                self._dispatch(p)
        elif kind == self.SUSPEND:
            p, token, b = payload
            pl = self.planes[p]
            ctx = pl.erase
            if ctx is None or ctx.token != token:
                return
            ctx.progress = b
            ctx.suspends += 1
            self.suspensions += 1
            pl.erase_running = False
            ctx.token += 1
            self._push(self.now + self.cfg.suspend_overhead, self.FREE, p)
        elif kind == self.FREE:
            p = payload
            self.planes[p].busy = False
            self._dispatch(p)
        elif kind == self.ERASE_DONE:
            p, token = payload
            pl = self.planes[p]
            ctx = pl.erase
            if ctx is None or ctx.token != token:
                return
            pl.erase = None
            pl.erase_running = False
            pl.busy = False
            self._finish_op(ctx.op)
            self._dispatch(p)

    def _feed(self) -> None:
        """Stream the next request in; with a cap, hold it until a slot frees."""
        if self._source is None or self._held is not None:
            return
        try:
            rid, req = next(self._source)
        except StopIteration:
            self._source = None
            return
        cap = self.cfg.max_outstanding
        if cap is not None and len(self.pending) >= cap:
            self._held = (rid, req)
            return
        self.submit(rid, req)

    def _release(self) -> None:
        if self._held is None:
            return
        rid, req = self._held
        self._held = None
        self._seq += 1
        heapq.heappush(self._heap, (max(self.now, req.arrival), self._seq, self.ARRIVAL, (rid, req)))

    def run(self, requests, until: int | None = None) -> SimulationReport:
        self._source = iter(enumerate(requests))
        self._feed()
        while self._heap:
            t, _, kind, payload = self._heap[0]
            if until is not None and t > until:
                break
            heapq.heappop(self._heap)
            if t < self.now:
                raise SimulationError("event timestamps went backwards")
            self.now = t
            self._handle(kind, payload)
        if until is None and (self.pending or self._source is not None or self._held is not None):
            raise SimulationError(f"queue drained with {len(self.pending)} requests outstanding: "
                                  f"{sorted(self.pending)[:10]}")
        return self.report()

    def report(self) -> SimulationReport:
        outs = self.ftl.erase_outcomes[self._erase_first:]
        lat = [o.total_latency for o in outs]
        erase = {
            "scheme": self.ftl.scheme.name,
            "count": len(outs),
            "mean_tbers_ns": float(np.mean(lat)) if lat else 0.0,
            "max_tbers_ns": int(max(lat)) if lat else 0,
            "mispredictions": int(sum(o.mispredictions for o in outs)),
            "deficit_erases": int(sum(1 for o in outs if o.deficit_quanta)),
            "suspensions": int(self.suspensions),
        }
        recs = sorted(self.records)
        return SimulationReport(dict(self.meta), recs, erase, self.ftl.stats(), self.now)


def build_ssd(chip: ChipModel, scheme_name: str, gc: GcConfig | None = None, mispredict: float = 0.0,
              seed: int = 0, ept=None) -> Ftl:
    scheme = EraseScheme(scheme_name, chip, ept=ept, mispredict=mispredict, seed=seed)
    return Ftl(chip, scheme, gc)
