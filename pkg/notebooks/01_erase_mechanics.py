# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Erase mechanics on a single block
#
# A block that needs `n` half-millisecond quanta of erase pulse is erased with
# each scheme. The conventional ladder always spends a full 3.5 ms pulse per
# loop; the fail-bit-driven schemes size the last pulse from the previous
# verify-read count.

# %%
from dataclasses import replace

from aerosim.chip import ChipModel, Geometry, load_default_params
from aerosim.erase import EraseScheme, EraseTimingTable

params = load_default_params()
tiny = replace(params, geometry=Geometry(planes=1, blocks_per_plane=2, pages_per_block=16))


def erase_once(scheme, n):
    chip = ChipModel(tiny, seed=0)
    block = chip.blocks[0]
    block.pinned_need = n
    chip.program_block(block)
    return EraseScheme(scheme, chip).erase(block)


# %%
for n in (5, 9, 17):
    print(f"n = {n} quanta")
    for scheme in ("baseline", "aero-cons", "aero"):
        out = erase_once(scheme, n)
        loops = ", ".join(f"L{lp.level}:{lp.pulse_duration / 1e6:g}ms/{lp.fail_count}" for lp in out.loops)
        print(f"  {scheme:<9} {out.total_latency / 1e6:4.1f} ms  deficit={out.deficit_quanta}  [{loops}]")

# %% [markdown]
# The lookup table maps the fail-bit count seen after a loop to the pulse the
# next loop needs. Rows are loop numbers, columns fail-bit ranges.

# %%
print(EraseTimingTable.reference().to_text())

# %% [markdown]
# Fail-bit counts fall in narrow bands set by how many quanta are still
# missing, which is what makes the prediction possible.

# %%
chip = ChipModel(tiny, seed=1)
b = chip.blocks[0]
fb = chip.failbits
for r in range(8):
    chip.begin_erase(b)
    b.need, b.consumed = r, 0
    draws = [chip.verify_read(b) for _ in range(2000)]
    print(f"{r} quanta missing: fail bits {min(draws):>6} .. {max(draws):>6}  (band {fb.bucket_bounds(r)})")
