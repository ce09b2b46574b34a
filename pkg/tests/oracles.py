"""Independent reference implementations used by the tests.

Each oracle is written from the model's stated rules, not from the package
code, so agreement is evidence rather than tautology.
"""
import math

MS = 1_000_000
QUANTUM = MS // 2
T_EP, T_VR, T_SE = 7 * QUANTUM, MS // 10, 2 * QUANTUM

# Erase timing table in ms: (conservative, aggressive) rows for loops 1..5.
REFERENCE_EPT_MS = [
    ([0.5, 1, 1.5, 2, 2.5, 2.5, 2.5, 2.5], [0, 0, 0.5, 1, 1.5, 2, 2.5, 2.5]),
    ([0.5, 1, 1.5, 2, 2.5, 3, 3.5, 3.5], [0, 0, 0.5, 1, 1.5, 2, 2.5, 3]),
    ([0.5, 1, 1.5, 2, 2.5, 3, 3.5, 3.5], [0, 0, 0.5, 1, 1.5, 2, 2.5, 3]),
    ([0.5, 1, 1.5, 2, 2.5, 3, 3.5, 3.5], [0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5]),
    ([0.5, 1, 1.5, 2, 2.5, 3, 3.5, 3.5], [0.5, 1, 1.5, 2, 2.5, 3, 3.5, 3.5]),
]


def bucket_range(r, gamma=500, delta=5000, f_pass=50):
    """Allowed fail counts (inclusive lo, inclusive hi) with ``r`` quanta left."""
    r = min(r, 7)
    if r == 0:
        return 0, f_pass
    if r == 1:
        return f_pass + 1, gamma
    return (r - 2) * delta + gamma + 1, (r - 1) * delta


def m_ispe_estimate(n):
    return math.ceil(n / 7), 0.5 * (1 + ((n - 1) % 7))


def baseline_tbers(n):
    return (T_EP + T_VR) * math.ceil(n / 7)


def aero_tbers(n_loops, final_pulse, shallow):
    """(tEP + tVR) * N - dtEP, plus the shallow probe's extra verify-read."""
    return (T_EP + T_VR) * n_loops - (T_EP - final_pulse) + (T_VR if shallow else 0)


def aero_tbers_levels(level_pulses, shallow):
    """Erase latency with the pulse shortening summed over every level, not just the last."""
    return (T_EP + T_VR) * len(level_pulses) - sum(T_EP - p for p in level_pulses) + (T_VR if shallow else 0)


def ledger(n, pulses):
    """Quantum-by-quantum replay: pulses are (quanta, level); returns consumed quanta.

    A higher voltage finishes outright any block whose need lies below its window.
    """
    consumed = 0
    for k, level in pulses:
        for _ in range(k):
            pos = max(consumed, 7 * (level - 1))
            if pos < min(n, 7 * level):
                consumed = pos + 1
            elif consumed < n <= pos:
                consumed = n
    return consumed


def percentile(samples, p):
    s = sorted(samples)
    idx = 0
    while idx + 1 < p * len(s) - 1e-9:
        idx += 1
    return s[idx]
