"""Command-line entry point: ``run``, ``lifetime``, ``characterize`` and ``compare``.

Every invocation writes into ``<out>/<command>-<config hash>/``.  The output
root defaults to ``$AEROSIM_OUTPUT_DIR`` or ``./aerosim-out``.  A JSON config
file supplies values; explicit flags override it.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analytics import config_hash, characterize, emit_report, ept_for_requirement, lifetime_experiment
from .chip import ChipParams, Geometry, build_chip, load_default_params
from .erase import SCHEMES
from .ftl import GcConfig
from .sim import SimConfig, Simulator, build_ssd
from .workload import (MSRC_ACCELERATION, PROFILES, accelerate, fold, parse_alibaba, parse_msrc,
                       parse_normalized, synth_profile)

log = logging.getLogger("aerosim")
ENV_OUTPUT = "AEROSIM_OUTPUT_DIR"
SIM_SCHEMES = [s for s in SCHEMES if s != "m-ispe"]

# Desk-scale drive: the evaluated SSD's channel/chip/plane layout with few, small blocks.
DESK_GEOMETRY = Geometry(channels=8, chips=2, planes=4, blocks_per_plane=16, pages_per_block=16,
                         page_size=16 * 1024)

COMMON = {
    "chip_params": None,
    "seed": 0,
    "channels": DESK_GEOMETRY.channels,
    "chips": DESK_GEOMETRY.chips,
    "planes": DESK_GEOMETRY.planes,
    "blocks_per_plane": DESK_GEOMETRY.blocks_per_plane,
    "pages_per_block": DESK_GEOMETRY.pages_per_block,
    "page_size": DESK_GEOMETRY.page_size,
}
SIM = {
    "pec": 0,
    "trace": None,
    "synth": "ali.E",
    "requests": 200_000,
    "accel": None,
    "disk": None,
    "suspension": "on",
    "suspend_overhead_us": 100,
    "mispredict": 0.0,
    "utilization": 0.7,
    "precondition_stride": 50,
    "max_outstanding": None,
}
DEFAULTS = {
    "run": {**COMMON, **SIM, "scheme": "aero"},
    "compare": {**COMMON, **SIM, "schemes": "baseline,aero", "pecs": "500,2500,4500"},
    "lifetime": {**COMMON, "schemes": "baseline,aero-cons,aero", "blocks": 120, "pec_step": 250,
                 "max_pec": 8000, "stride": 10, "rber_requirement": None, "mispredict": 0.0},
    "characterize": {**COMMON, "blocks": 1000, "pecs": "0,500,1000,2000,3000", "low_pec": 500},
}


class UsageError(ValueError):
    pass


# -- configuration ------------------------------------------------------------------

def _csv_list(text: str, cast=str) -> list:
    items = [x.strip() for x in str(text).split(",") if x.strip()]
    return [cast(x) for x in items]


def _schemes(text: str, allowed) -> list[str]:
    names = _csv_list(text)
    if not names or names == ["none"]:
        raise UsageError("at least one scheme is required")
    bad = [n for n in names if n not in allowed]
    if bad:
        raise UsageError(f"unknown scheme(s) {', '.join(bad)}; choose from {', '.join(allowed)}")
    return names


def _pecs(text: str) -> list[int]:
    try:
        pecs = _csv_list(text, int)
    except ValueError:
        raise UsageError(f"PEC list must be integers: {text!r}") from None
    if not pecs:
        raise UsageError("PEC grid is empty")
    if any(p < 0 for p in pecs):
        raise UsageError("PEC values must be >= 0")
    return pecs


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config file {args.config}: {e}") from None
        loaded = loaded.get("config", loaded)
        unknown = set(loaded) - set(cfg) - {"command"}
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update({k: v for k, v in loaded.items() if k != "command"})
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    cfg["command"] = command
    return cfg


def chip_params(cfg: dict) -> ChipParams:
    base = ChipParams.load(cfg["chip_params"]) if cfg.get("chip_params") else load_default_params()
    geo = Geometry(channels=cfg["channels"], chips=cfg["chips"], planes=cfg["planes"],
                   blocks_per_plane=cfg["blocks_per_plane"], pages_per_block=cfg["pages_per_block"],
                   page_size=cfg["page_size"])
    return replace(base, geometry=geo)


def load_trace(cfg: dict, capacity: int):
    spec = cfg.get("trace")
    if spec:
        fmt, _, path = spec.partition(":")
        if not path:
            raise UsageError(f"trace must be FORMAT:PATH, got {spec!r}")
        if fmt == "msrc":
            accel = MSRC_ACCELERATION if cfg.get("accel") is None else cfg["accel"]
            reqs = parse_msrc(path, accel=accel, disk=cfg.get("disk"))
        elif fmt == "alibaba":
            reqs = parse_alibaba(path, accel=1.0 if cfg.get("accel") is None else cfg["accel"])
        elif fmt == "csv":
            reqs = parse_normalized(path)
        else:
            raise UsageError(f"unknown trace format {fmt!r}; use msrc, alibaba or csv")
        return fold(reqs, capacity)
    name = cfg.get("synth")
    if name not in PROFILES:
        raise UsageError(f"unknown synthetic profile {name!r}; choose from {', '.join(PROFILES)}")
    reqs = synth_profile(name, count=cfg["requests"], seed=cfg["seed"], capacity=capacity)
    if cfg.get("accel") not in (None, 1, 1.0):
        reqs = accelerate(reqs, cfg["accel"])
    return reqs


# -- experiments -------------------------------------------------------------------

def simulate(cfg: dict, scheme: str, pec: int):
    """Build, precondition and run one drive; returns the SimulationReport."""
    params = chip_params(cfg)
    chip = build_chip(params=params, seed=cfg["seed"])
    ftl = build_ssd(chip, scheme, GcConfig(), mispredict=cfg["mispredict"], seed=cfg["seed"])
    ftl.precondition(cfg["utilization"], pec, stride=cfg["precondition_stride"])
    reqs = load_trace(cfg, ftl.num_lpns * params.geometry.page_size)
    sim_cfg = SimConfig(suspension=cfg["suspension"] == "on", suspend_overhead=int(cfg["suspend_overhead_us"]) * 1000,
                        max_outstanding=cfg.get("max_outstanding"))
    return Simulator(ftl, sim_cfg, meta={**cfg, "scheme": scheme, "pec": pec}).run(reqs)


def _write_run(outdir: Path, cfg: dict, reports: list) -> None:
    latency = [{"scheme": r.config["scheme"], "pec": r.config["pec"], "samples": r.read_latencies()}
               for r in reports]
    sims = [r.to_dict() for r in reports]
    emit_report({"latency": latency, "config": cfg, "seed": cfg["seed"], "extra": {"simulations": sims}}, outdir)
    for r in reports:
        (outdir / f"requests_{r.config['scheme']}_{r.config['pec']}.csv").write_text(r.latency_csv())


def cmd_run(cfg: dict, outdir: Path) -> dict:
    if cfg["scheme"] not in SIM_SCHEMES:
        raise UsageError(f"unknown scheme {cfg['scheme']!r}; choose from {', '.join(SIM_SCHEMES)}")
    rep = simulate(cfg, cfg["scheme"], int(cfg["pec"]))
    _write_run(outdir, cfg, [rep])
    (outdir / "report.json").write_text(rep.to_json())
    return {"reads": len(rep.read_latencies())}


def cmd_compare(cfg: dict, outdir: Path) -> dict:
    schemes = _schemes(cfg["schemes"], SIM_SCHEMES)
    pecs = _pecs(cfg["pecs"])
    reports = [simulate(cfg, s, p) for p in pecs for s in schemes]
    _write_run(outdir, cfg, reports)
    return {"runs": len(reports)}


def cmd_lifetime(cfg: dict, outdir: Path) -> dict:
    schemes = _schemes(cfg["schemes"], SIM_SCHEMES)
    params = chip_params(cfg)
    req = cfg.get("rber_requirement")
    ept = None
    if req is not None:
        params = replace(params, calibration=replace(params.calibration, rber_requirement=float(req)))
        ept = ept_for_requirement(float(req), params, seed=cfg["seed"])
    curves = [lifetime_experiment(s, cfg["blocks"], cfg["pec_step"], cfg["max_pec"], cfg["seed"], params,
                                  cfg["stride"], cfg["mispredict"], ept if s == "aero" else None)
              for s in schemes]
    base = next((c.lifetime_or_bound() for c in curves if c.scheme == "baseline"), None)
    gains = {c.scheme: (c.lifetime_or_bound() / base - 1) for c in curves} if base else {}
    extra = {"lifetime_gain_vs_baseline": gains}
    if ept is not None:
        extra["allowance"] = ept.allowance
    emit_report({"lifetime": curves, "config": cfg, "seed": cfg["seed"], "extra": extra}, outdir)
    return {c.scheme: c.lifetime for c in curves}


def cmd_characterize(cfg: dict, outdir: Path) -> dict:
    params = chip_params(cfg)
    res = characterize(params, blocks=cfg["blocks"], pecs=_pecs(cfg["pecs"]), low_pec=cfg["low_pec"],
                       seed=cfg["seed"])
    ept = res.pop("ept")
    ept.save(outdir / "ept.txt")
    out = {"config": cfg, "config_hash": config_hash(cfg), "seed": cfg["seed"], **res}
    (outdir / "characterization.json").write_text(json.dumps(out, sort_keys=True, indent=2) + "\n")
    return res


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "lifetime": cmd_lifetime, "characterize": cmd_characterize}


# -- argument parsing ------------------------------------------------------------------

def _add(p, flag, dest, cmd, help, **kw):
    default = DEFAULTS[cmd][dest]
    p.add_argument(flag, dest=dest, default=None, help=f"{help} (default: {default})", **kw)


def _common(p, cmd):
    p.add_argument("--config", help="JSON config file; explicit flags override it")
    p.add_argument("--out", help=f"output root (default: ${ENV_OUTPUT} or ./aerosim-out)")
    _add(p, "--chip-params", "chip_params", cmd, "chip parameter file; shipped 3D TLC set when unset")
    _add(p, "--seed", "seed", cmd, "random seed", type=int)
    for name in ("channels", "chips", "planes", "blocks_per_plane", "pages_per_block", "page_size"):
        _add(p, "--" + name.replace("_", "-"), name, cmd, f"geometry: {name.replace('_', ' ')}", type=int)


def _sim(p, cmd):
    _add(p, "--pec", "pec", cmd, "precondition every block to this P/E count", type=int)
    _add(p, "--trace", "trace", cmd, "trace file as msrc:PATH, alibaba:PATH or csv:PATH")
    _add(p, "--synth", "synth", cmd, f"synthetic profile when no trace is given ({', '.join(PROFILES)})")
    _add(p, "--requests", "requests", cmd, "synthetic request count", type=int)
    _add(p, "--accel", "accel", cmd, "divide inter-arrival gaps by this factor (MSRC traces: 10)", type=float)
    _add(p, "--disk", "disk", cmd, "keep only this MSRC disk number", type=int)
    _add(p, "--suspension", "suspension", cmd, "erase suspension for user reads", choices=["on", "off"])
    _add(p, "--suspend-overhead-us", "suspend_overhead_us", cmd, "suspend plus resume cost in us", type=int)
    _add(p, "--mispredict", "mispredict", cmd, "injected AERO misprediction rate", type=float)
    _add(p, "--utilization", "utilization", cmd, "fraction of logical space filled before replay", type=float)
    _add(p, "--precondition-stride", "precondition_stride", cmd,
         "P/E cycles charged per simulated preconditioning cycle", type=int)
    _add(p, "--max-outstanding", "max_outstanding", cmd, "cap on in-flight host requests", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aerosim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="replay one trace on one scheme")
    _common(p, "run")
    _sim(p, "run")
    _add(p, "--scheme", "scheme", "run", "erase scheme", choices=SIM_SCHEMES)

    p = sub.add_parser("compare", help="scheme x PEC grid of runs with normalized latency tables")
    _common(p, "compare")
    _sim(p, "compare")
    _add(p, "--schemes", "schemes", "compare", "comma-separated schemes")
    _add(p, "--pecs", "pecs", "compare", "comma-separated PEC levels")

    p = sub.add_parser("lifetime", help="M_RBER versus PEC per scheme and the lifetime crossing")
    _common(p, "lifetime")
    _add(p, "--schemes", "schemes", "lifetime", "comma-separated schemes")
    _add(p, "--blocks", "blocks", "lifetime", "sampled blocks", type=int)
    _add(p, "--pec-step", "pec_step", "lifetime", "checkpoint spacing in P/E cycles", type=int)
    _add(p, "--max-pec", "max_pec", "lifetime", "last checkpoint", type=int)
    _add(p, "--stride", "stride", "lifetime", "P/E cycles charged per simulated cycle", type=int)
    _add(p, "--rber-requirement", "rber_requirement", "lifetime",
         "RBER requirement; the aggressive EPT is rederived for it", type=float)
    _add(p, "--mispredict", "mispredict", "lifetime", "injected AERO misprediction rate", type=float)

    p = sub.add_parser("characterize", help="m-ISPE characterization and EPT regeneration")
    _common(p, "characterize")
    _add(p, "--blocks", "blocks", "characterize", "sampled blocks", type=int)
    _add(p, "--pecs", "pecs", "characterize", "comma-separated PEC levels")
    _add(p, "--low-pec", "low_pec", "characterize", "PEC for the shallow-erasure sweep", type=int)
    return ap


def output_dir(args, cfg: dict) -> Path:
    root = Path(args.out or os.environ.get(ENV_OUTPUT) or "aerosim-out")
    return root / f"{cfg['command']}-{config_hash(cfg)}"


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args.command, args)
        if args.command in ("lifetime", "compare", "run") and "schemes" in cfg:
            _schemes(cfg["schemes"], SIM_SCHEMES)
        if args.command == "compare":
            _pecs(cfg["pecs"])
    except UsageError as e:
        print(f"aerosim {args.command}: error: {e}", file=sys.stderr)
        return 2
    final = output_dir(args, cfg)
    final.parent.mkdir(parents=True, exist_ok=True)
    work = Path(tempfile.mkdtemp(dir=final.parent, prefix=f".{final.name}."))
    try:
        COMMANDS[args.command](cfg, work)
        if final.exists():
            shutil.rmtree(final)
        os.replace(work, final)
    except UsageError as e:
        shutil.rmtree(work, ignore_errors=True)
        print(f"aerosim {args.command}: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every module error maps to exit 1
        shutil.rmtree(work, ignore_errors=True)
        print(f"aerosim {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(final)
    return 0


if __name__ == "__main__":
    sys.exit(main())
