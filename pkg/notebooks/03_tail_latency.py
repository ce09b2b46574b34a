# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Read tail latency on a miniature SSD
#
# A synthetic trace shaped like the ali.E volume is replayed on a drive
# preconditioned to a given wear level. Long erases block reads on the same
# plane; shorter erases shrink the far tail while leaving the mean alone.
# At the default 200k requests each run takes 10 to 40 seconds; fewer
# requests leave too few erases in the tail to say much.

# %%
from aerosim.analytics import LatencyStats
from aerosim.cli import DEFAULTS, simulate

REQUESTS = DEFAULTS["run"]["requests"]


def tail(scheme, pec, **kw):
    cfg = dict(DEFAULTS["run"], requests=REQUESTS, **kw)
    st = LatencyStats(simulate(cfg, scheme, pec).read_latencies())
    return st.percentile(0.9999) / 1e3, st.mean() / 1e3


# %%
for pec in (500, 2500):
    ref = None
    for scheme in ("baseline", "aero-cons", "aero"):
        p, m = tail(scheme, pec)
        ref = ref or (p, m)
        print(f"{pec:>5} PEC {scheme:<9} p99.99 {p:7.0f} us ({p / ref[0]:.2f})  mean {m:6.2f} us ({m / ref[1]:.3f})")

# %% [markdown]
# Without erase suspension a read can wait out an entire erase, so the
# benefit of shorter erases is larger.

# %%
for scheme in ("baseline", "aero"):
    p, m = tail(scheme, 500, suspension="off")
    print(f"suspension off {scheme:<9} p99.99 {p:7.0f} us  mean {m:6.2f} us")
