"""Trace parsers, a synthetic generator, and the normalized request CSV."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

KB = 1024
PAGE_ALIGN = 4 * KB
MSRC_ACCELERATION = 10
FILETIME_TICK_NS = 100


class TraceParseError(ValueError):
    def __init__(self, source: str, line: int, msg: str):
        super().__init__(f"{source}:{line}: {msg}")
        self.line = line


@dataclass(frozen=True, order=True)
class IoRequest:
    arrival: int
    kind: str
    offset: int
    size: int

    def __post_init__(self):
        if self.kind not in ("read", "write"):
            raise ValueError(f"kind must be read or write, got {self.kind!r}")
        if self.size <= 0 or self.offset < 0 or self.arrival < 0:
            raise ValueError(f"bad request {self}")


# Published characteristics of the evaluated workloads: read ratio, mean size, mean inter-arrival.
PROFILES = {
    "ali.A": (0.23, 39 * KB, 4.9e-3),
    "ali.B": (0.61, 21 * KB, 31.1e-3),
    "ali.C": (0.40, 22 * KB, 6.9e-3),
    "ali.D": (0.73, 29 * KB, 27.7e-3),
    "ali.E": (0.95, 36 * KB, 5.1e-3),
    "hm_0": (0.36, 8 * KB, 151.5e-3),
    "prn_1": (0.75, 22 * KB, 178.3e-3),
    "proj_3": (0.95, 9 * KB, 14.0e-3),
    "prxy_1": (0.65, 13 * KB, 3.6e-3),
    "usr_0": (0.40, 23 * KB, 54.5e-3),
}


def _rebase(reqs: list[tuple[int, str, int, int]], source: str, accel: float) -> list[IoRequest]:
    """Stable-sort by time, rebase to zero and divide every gap by ``accel``."""
    if accel <= 0:
        raise ValueError("acceleration factor must be positive")
    if any(reqs[i][0] > reqs[i + 1][0] for i in range(len(reqs) - 1)):
        log.warning("%s: timestamps out of order, reordering", source)
        reqs = sorted(reqs, key=lambda r: r[0])
    if not reqs:
        return []
    t0 = reqs[0][0]
    return [IoRequest(int(round((t - t0) / accel)), k, off, size) for t, k, off, size in reqs]


def _rows(src):
    if isinstance(src, (str, Path)):
        name = str(src)
        with open(src, newline="") as fh:
            text = fh.read()
    else:
        name = getattr(src, "name", "<stream>")
        text = src.read()
    return name, csv.reader(io.StringIO(text))


def _int(field: str, name: str, lineno: int, what: str) -> int:
    try:
        v = int(field.strip())
    except ValueError:
        raise TraceParseError(name, lineno, f"{what} is not an integer: {field!r}") from None
    if v < 0:
        raise TraceParseError(name, lineno, f"{what} is negative")
    return v


def parse_msrc(src, accel: float = MSRC_ACCELERATION, disk: int | None = None) -> list[IoRequest]:
    """MSR Cambridge CSV: filetime, host, disk, Read|Write, offset, size, response."""
    name, rows = _rows(src)
    out = []
    for lineno, row in enumerate(rows, 1):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 7:
            raise TraceParseError(name, lineno, f"expected 7 fields, got {len(row)}")
        ts = _int(row[0], name, lineno, "timestamp")
        dnum = _int(row[2], name, lineno, "disk number")
        token = row[3].strip()
        if token not in ("Read", "Write"):
            raise TraceParseError(name, lineno, f"unknown request type {token!r}")
        off = _int(row[4], name, lineno, "offset")
        size = _int(row[5], name, lineno, "size")
        if size == 0:
            raise TraceParseError(name, lineno, "size must be positive")
        if disk is not None and dnum != disk:
            continue
        out.append((ts * FILETIME_TICK_NS, token.lower(), off, size))
    return _rebase(out, name, accel)


def parse_alibaba(src, accel: float = 1.0) -> list[IoRequest]:
    """Alibaba block trace CSV: device, R|W, offset, length, timestamp in microseconds."""
    name, rows = _rows(src)
    out = []
    for lineno, row in enumerate(rows, 1):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 5:
            raise TraceParseError(name, lineno, f"expected 5 fields, got {len(row)}")
        op = row[1].strip()
        if op not in ("R", "W"):
            raise TraceParseError(name, lineno, f"unknown opcode {op!r}")
        off = _int(row[2], name, lineno, "offset")
        size = _int(row[3], name, lineno, "length")
        if size == 0:
            raise TraceParseError(name, lineno, "length must be positive")
        ts = _int(row[4], name, lineno, "timestamp")
        out.append((ts * 1000, "read" if op == "R" else "write", off, size))
    return _rebase(out, name, accel)


def parse_normalized(src) -> list[IoRequest]:
    """Internal format with header ``arrival_ns,kind,offset,size``."""
    name, rows = _rows(src)
    out = []
    for lineno, row in enumerate(rows, 1):
        if lineno == 1 and row and row[0] == "arrival_ns":
            continue
        if not row:
            continue
        if len(row) != 4:
            raise TraceParseError(name, lineno, f"expected 4 fields, got {len(row)}")
        if row[1] not in ("read", "write"):
            raise TraceParseError(name, lineno, f"unknown kind {row[1]!r}")
        a, o, s = (_int(row[i], name, lineno, f) for i, f in ((0, "arrival"), (2, "offset"), (3, "size")))
        if s == 0:
            raise TraceParseError(name, lineno, "size must be positive")
        out.append(IoRequest(a, row[1], o, s))
    return out


def to_normalized(reqs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arrival_ns", "kind", "offset", "size"])
    for r in reqs:
        w.writerow([r.arrival, r.kind, r.offset, r.size])
    return buf.getvalue()


def to_msrc(reqs, host: str = "host", disk: int = 0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in reqs:
        if r.arrival % FILETIME_TICK_NS:
            raise ValueError("MSRC timestamps have 100 ns resolution")
        w.writerow([r.arrival // FILETIME_TICK_NS, host, disk, r.kind.capitalize(), r.offset, r.size, 0])
    return buf.getvalue()


def to_alibaba(reqs, device: int = 0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in reqs:
        if r.arrival % 1000:
            raise ValueError("Alibaba timestamps have 1 us resolution")
        w.writerow([device, "R" if r.kind == "read" else "W", r.offset, r.size, r.arrival // 1000])
    return buf.getvalue()


def accelerate(reqs, factor: float) -> list[IoRequest]:
    return _rebase([(r.arrival, r.kind, r.offset, r.size) for r in reqs], "<stream>", factor)


def fold(reqs, capacity: int) -> list[IoRequest]:
    """Wrap offsets into ``[0, capacity)``; requests crossing the end are shifted back."""
    out = []
    for r in reqs:
        if r.size > capacity:
            raise ValueError(f"request of {r.size} B exceeds capacity {capacity}")
        off = r.offset % capacity
        if off + r.size > capacity:
            off = capacity - r.size
        out.append(IoRequest(r.arrival, r.kind, off, r.size))
    return out


def synth(read_ratio: float, avg_size: int, avg_interarrival: float, duration: float | None = None,
          seed: int = 0, count: int | None = None, capacity: int = 1 << 30) -> list[IoRequest]:
    """Poisson arrivals, 4 KiB-aligned geometric sizes, uniform offsets.

    ``avg_interarrival`` and ``duration`` are seconds.  Give either ``duration``
    or ``count``.
    """
    if not 0 <= read_ratio <= 1:
        raise ValueError("read_ratio must lie in [0, 1]")
    if avg_size < PAGE_ALIGN or avg_interarrival <= 0:
        raise ValueError("avg_size must be >= 4096 and avg_interarrival positive")
    if (duration is None) == (count is None):
        raise ValueError("give exactly one of duration or count")
    rng = np.random.default_rng([seed, 0x5A17])
    n = count if count is not None else int(math.ceil(duration / avg_interarrival * 1.2)) + 16
    gaps = rng.exponential(avg_interarrival * 1e9, n)
    t = np.cumsum(gaps) - gaps[0]
    if duration is not None:
        t = t[t < duration * 1e9]
        n = t.size
    # pages ~ geometric on {1, 2, ...} with mean avg_size / 4 KiB
    pages = rng.geometric(min(1.0, PAGE_ALIGN / avg_size), n)
    sizes = pages * PAGE_ALIGN
    slots = capacity // PAGE_ALIGN
    offs = rng.integers(0, np.maximum(slots - pages + 1, 1)) * PAGE_ALIGN
    reads = rng.random(n) < read_ratio
    arrivals = np.round(t).astype(np.int64)
    return [IoRequest(int(a), "read" if r else "write", int(o), int(s))
            for a, r, o, s in zip(arrivals, reads, offs, sizes)]


def synth_profile(name: str, **kw) -> list[IoRequest]:
    rr, size, gap = PROFILES[name]
    return synth(rr, size, gap, **kw)
