# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Lifetime under each erase scheme
#
# A sample of blocks is cycled to wear-out. At each checkpoint the mean
# worst-page raw bit-error count (per KiB, one-year retention) is recorded;
# lifetime is where it crosses the ECC requirement. Smaller samples and a
# coarser step than the defaults keep this notebook under a minute.

# %%
from aerosim.analytics import ept_for_requirement, lifetime_experiment

SAMPLE, STEP = 40, 500
curves = {s: lifetime_experiment(s, block_sample=SAMPLE, pec_step=STEP)
          for s in ("baseline", "i-ispe", "dpes", "aero-cons", "aero")}

# %%
base = curves["baseline"].lifetime_or_bound()
for name, c in curves.items():
    tag = "" if c.lifetime is not None else " (no crossing: lower bound)"
    print(f"{name:<9} {c.lifetime_or_bound():6.0f} PEC  {c.lifetime_or_bound() / base - 1:+6.1%}{tag}")

# %%
print("PEC   " + "".join(f"{n:>10}" for n in curves))
for i, pec in enumerate(curves["baseline"].pecs):
    row = [c.mean_mrber[i] if i < len(c.mean_mrber) else float("nan") for c in curves.values()]
    print(f"{pec:<6}" + "".join(f"{v:10.1f}" for v in row))

# %% [markdown]
# With a weaker ECC target the aggressive table is rederived: fewer residual
# quanta may be left behind, and the gap over the conservative mode shrinks.

# %%
ept40 = ept_for_requirement(40)
print("allowance per loop:", ept40.allowance)
for s in ("aero-cons", "aero"):
    c = lifetime_experiment(s, block_sample=SAMPLE, pec_step=STEP, ept=ept40, requirement=40)
    print(s, round(c.lifetime_or_bound()))
