import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from aerosim.cli import DEFAULTS, main
from aerosim.erase import EraseTimingTable

SMALL = ["--channels", "1", "--chips", "1", "--planes", "4", "--blocks-per-plane", "16",
         "--pages-per-block", "16"]
SMALL_RUN = SMALL + ["--requests", "2000", "--synth", "ali.A"]


def run_cli(args, tmp_path, capsys):
    code = main(list(args) + ["--out", str(tmp_path)])
    out, err = capsys.readouterr()
    return code, (Path(out.strip()) if code == 0 else None), err


def test_help_shows_defaults(capsys):
    assert main(["run", "--help"]) == 0
    text = capsys.readouterr().out
    assert "(default: aero)" in text and "(default: ali.E)" in text and "(default: 200000)" in text


def test_run_outputs(tmp_path, capsys):
    code, out, _ = run_cli(["run", *SMALL_RUN, "--scheme", "baseline", "--pec", "100"], tmp_path, capsys)
    assert code == 0 and out.name.startswith("run-")
    names = sorted(p.name for p in out.iterdir())
    assert "report.json" in names and "summary.json" in names and "requests_baseline_100.csv" in names
    rep = json.loads((out / "report.json").read_text())
    assert rep["summary"]["requests"] == 2000 and rep["config"]["scheme"] == "baseline"
    with open(out / "requests_baseline_100.csv") as fh:
        assert next(csv.reader(fh)) == ["request_id", "arrival_ns", "type", "latency_ns"]


def test_run_is_reproducible(tmp_path, capsys):
    _, a, _ = run_cli(["run", *SMALL_RUN], tmp_path / "a", capsys)
    _, b, _ = run_cli(["run", *SMALL_RUN], tmp_path / "b", capsys)
    assert a.name == b.name
    for name in ("report.json", "summary.json", "requests_aero_0.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_flags_override_config_file(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"seed": 5, "requests": 1500, "scheme": "aero-cons"}))
    code, out, _ = run_cli(["run", *SMALL, "--synth", "ali.A", "--config", str(conf), "--seed", "6"],
                           tmp_path, capsys)
    cfg = json.loads((out / "summary.json").read_text())["config"]
    assert code == 0 and (cfg["seed"], cfg["requests"], cfg["scheme"]) == (6, 1500, "aero-cons")


def test_summary_config_replays(tmp_path, capsys):
    _, first, _ = run_cli(["run", *SMALL_RUN], tmp_path / "a", capsys)
    code, again, _ = run_cli(["run", "--config", str(first / "summary.json")], tmp_path / "b", capsys)
    assert code == 0 and again.name == first.name
    assert (again / "report.json").read_bytes() == (first / "report.json").read_bytes()


@pytest.mark.parametrize("args", [
    ["run", "--scheme", "bogus"],
    ["compare", "--schemes", "none"],
    ["compare", "--pecs", "5,x"],
    ["compare", "--pecs", ""],
    ["run", "--synth", "nope", *SMALL],
    ["run", "--trace", "tsv:foo", *SMALL],
    ["lifetime", "--frobnicate"],
])
def test_usage_errors_exit_2(args, tmp_path, capsys):
    code, _, err = run_cli(args, tmp_path, capsys)
    assert code == 2 and err
    assert not list(tmp_path.iterdir())


def test_unknown_config_key(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text('{"sede": 1}')
    code, _, err = run_cli(["run", "--config", str(conf)], tmp_path, capsys)
    assert code == 2 and "sede" in err


def test_runtime_error_exit_1_leaves_nothing(tmp_path, capsys):
    code, _, err = run_cli(["run", *SMALL, "--trace", "msrc:/no/such/file.csv"], tmp_path / "o", capsys)
    assert code == 1 and "FileNotFoundError" in err
    assert list((tmp_path / "o").iterdir()) == []


def test_output_dir_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("AEROSIM_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["lifetime", "--schemes", "baseline", "--blocks", "4", "--pec-step", "1000",
                 "--max-pec", "1000"]) == 0
    out = Path(capsys.readouterr().out.strip())
    assert out.parent == tmp_path / "env"


def test_msrc_trace_run(tmp_path, capsys):
    from importlib.resources import files
    trace = files("aerosim") / "data" / "msrc_hm_0_sample.csv"
    code, out, _ = run_cli(["run", *SMALL, "--trace", f"msrc:{trace}"], tmp_path, capsys)
    assert code == 0
    assert json.loads((out / "report.json").read_text())["summary"]["requests"] == 2000


def test_compare_grid(tmp_path, capsys):
    code, out, _ = run_cli(["compare", *SMALL_RUN, "--schemes", "baseline,aero", "--pecs", "0,1000"],
                           tmp_path, capsys)
    assert code == 0
    rows = list(csv.DictReader(open(out / "comparison.csv")))
    assert {(r["scheme"], r["pec"]) for r in rows} == {(s, p) for s in ("baseline", "aero") for p in ("0", "1000")}
    assert all(float(r["mean_norm"]) == 1.0 for r in rows if r["scheme"] == "baseline")


def test_lifetime_command(tmp_path, capsys):
    code, out, _ = run_cli(["lifetime", "--schemes", "baseline,aero", "--blocks", "6", "--pec-step", "500",
                            "--max-pec", "1500", "--rber-requirement", "40"], tmp_path, capsys)
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["allowance"] == [1, 1, 1, 1, 0]
    assert {c["scheme"] for c in summary["lifetime"]} == {"baseline", "aero"}
    rows = list(csv.DictReader(open(out / "lifetime.csv")))
    assert len(rows) == 2 * 4


def test_characterize_command(tmp_path, capsys):
    code, out, _ = run_cli(["characterize", "--blocks", "60", "--pecs", "0,2000"], tmp_path, capsys)
    assert code == 0
    ept = EraseTimingTable.load(out / "ept.txt")
    assert ept.conservative.shape == (5, 8)
    data = json.loads((out / "characterization.json").read_text())
    assert set(data["shallow_sweep"]) == {"500000", "1000000", "1500000", "2000000"}


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "aerosim", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("aerosim")


def test_defaults_cover_every_command():
    assert set(DEFAULTS) == {"run", "compare", "lifetime", "characterize"}
