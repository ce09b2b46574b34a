import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("repo", max_examples=60, deadline=None)
settings.load_profile("repo")

from aerosim.chip import ChipModel, ChipParams, Geometry, load_default_params  # noqa: E402


@pytest.fixture
def params():
    return load_default_params()


def make_chip(blocks=8, planes=1, seed=0, pages=16, **kw):
    from dataclasses import replace
    p = load_default_params()
    geo = Geometry(planes=planes, blocks_per_plane=blocks, pages_per_block=pages)
    return ChipModel(replace(p, geometry=geo, **kw), seed)


@pytest.fixture
def chip():
    return make_chip()


def pinned(chip, n, block_id=0):
    b = chip.blocks[block_id]
    b.pinned_need = n
    chip.program_block(b)
    return b


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            name = rep.nodeid.rsplit("::", 1)[-1]
            if rep.nodeid.startswith("tests/test_acceptance.py") and name.startswith("test_ac"):
                num = int(name[7:].split("_", 1)[0])
                if rep.when == "call" or status != "passed":
                    outcomes[num] = "PASS" if status == "passed" else "FAIL"
    if not outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(mod.TITLES):
        verdict = outcomes.get(num, "NOT RUN")
        detail = mod.DETAILS.get(f"AC{num}", "")
        terminalreporter.write_line(f"AC{num:<2} {verdict:<7} {mod.TITLES[num]}" + (f": {detail}" if detail else ""))
