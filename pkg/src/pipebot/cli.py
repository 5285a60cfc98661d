"""``pipebot`` command line: gen, run, export, report.

Exit codes: 0 success, 2 usage error, 3 mission abort, 4 I/O or format error.
The default output directory comes from ``$PIPEBOT_OUT`` (else ``./pipebot-out``).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
from pathlib import Path

from . import io as pio
from .errors import FormatError, MissionAbort, NotFoundError, ParseError, UsageError
from .mission import MissionConfig, MissionLog, load_map, mission_report, report_tables, run_pass1, run_pass2
from .perception import reconstruct_cloud
from .templates import TEMPLATES, get_template
from .world import ScenarioConfig, build_scenario

EXIT_OK, EXIT_USAGE, EXIT_ABORT, EXIT_IO = 0, 2, 3, 4

EXPORTS = {"ec_trace": ("traces", ".csv"), "cloud": ("clouds", ".ply"), "grid": ("grids", ".csv")}


def _default_out() -> Path:
    return Path(os.environ.get("PIPEBOT_OUT", "pipebot-out"))


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _load_config(ref: str) -> ScenarioConfig:
    p = Path(ref)
    if p.is_file():
        return ScenarioConfig.load(p)
    if ref in TEMPLATES:
        return get_template(ref)
    raise FileNotFoundError(f"no scenario file or template named {ref!r}")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_gen(args) -> int:
    cfg = get_template(args.template) if args.template in TEMPLATES else None
    if cfg is None:
        if not Path(args.template).is_file():
            raise UsageError(f"unknown template {args.template!r}; choose from {', '.join(sorted(TEMPLATES))}")
        cfg = ScenarioConfig.load(args.template)
        build_scenario(cfg)
    if args.out:
        _write(Path(args.out), cfg.dumps())
    else:
        sys.stdout.write(cfg.dumps())
    return EXIT_OK


def cmd_run(args) -> int:
    if args.pass_ == 2 and not args.map:
        raise UsageError("pass 2 needs --map from a pass 1 run")
    cfg_file = _load_config(args.scenario)
    scenario = build_scenario(cfg_file)
    if args.reline:
        scenario = scenario.with_liner()
    overrides = {**cfg_file.sensors, **cfg_file.machining, **_parse_sets(args.set)}
    overrides.pop("seed", None)
    mcfg = MissionConfig(seed=args.seed).with_overrides(overrides)
    out = Path(args.out) if args.out else _default_out()
    if args.pass_ == 1:
        result = run_pass1(scenario, mcfg)
    else:
        result = run_pass2(scenario, load_map(args.map), mcfg)

    out.mkdir(parents=True, exist_ok=True)
    _write(out / "scenario.json", ScenarioConfig.from_scenario(scenario).dumps())
    _write(out / "scenario_after.json", ScenarioConfig.from_scenario(result.scenario).dumps())
    _write(out / "config.json", json.dumps(dataclasses.asdict(mcfg), indent=2, sort_keys=True) + "\n")
    _write(out / "map.json", result.branch_map.dumps())
    _write(out / "log.jsonl", result.log.to_jsonl())
    _write(out / "report.txt", mission_report(result.log, result.branch_map))
    for name, text in report_tables(result.log).items():
        _write(out / name, text)
    for bid, scan in sorted(result.artifacts.get("scans", {}).items()):
        _write(out / "scans" / f"{bid}.csv", pio.profile_scan_csv(scan))
        _write(out / "clouds" / f"{bid}.ply", pio.ply_text(reconstruct_cloud(scan)))
    for bid, trace in sorted(result.artifacts.get("ec_traces", {}).items()):
        _write(out / "traces" / f"{bid}.csv", pio.ec_trace_csv(trace, mcfg.ma_window))
    for bid, grid in sorted(result.artifacts.get("grids", {}).items()):
        _write(out / "grids" / f"{bid}.csv", pio.grid_csv(grid))
    n = len(result.branch_map.entries)
    print(f"pass {args.pass_}: {n} branch{'es' if n != 1 else ''} mapped, artifacts in {out}")
    return EXIT_OK


def cmd_export(args) -> int:
    sub, ext = EXPORTS[args.kind]
    folder = Path(args.run_dir) / sub
    files = sorted(folder.glob(f"*{ext}")) if folder.is_dir() else []
    if args.id:
        files = [f for f in files if f.stem == args.id]
    if not files:
        raise NotFoundError(f"no {args.kind} artifact in {args.run_dir}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(files[0], args.out)
    else:
        sys.stdout.write(files[0].read_text())
    return EXIT_OK


def cmd_report(args) -> int:
    log = MissionLog()
    bmap = None
    for d in args.run_dirs:
        d = Path(d)
        log = log + MissionLog.from_jsonl((d / "log.jsonl").read_text())
        if (d / "map.json").is_file():
            bmap = load_map(d / "map.json")
    text = mission_report(log, bmap)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pipebot", description="In-pipe branch rehabilitation simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a scenario file from a template or validate a config")
    g.add_argument("template", help=f"template ({', '.join(sorted(TEMPLATES))}) or scenario JSON path")
    g.add_argument("-o", "--out", help="output path (default: stdout)")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run one mission pass")
    r.add_argument("--pass", dest="pass_", type=int, choices=(1, 2), required=True)
    r.add_argument("--scenario", required=True, help="scenario JSON path or template name")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--out", help="run directory (default: $PIPEBOT_OUT or ./pipebot-out)")
    r.add_argument("--map", help="branch map from pass 1 (required for pass 2)")
    r.add_argument("--reline", action="store_true", help="insert the default liner before running")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a mission parameter")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("export", help="copy a run artifact")
    e.add_argument("kind", choices=sorted(EXPORTS))
    e.add_argument("run_dir")
    e.add_argument("out", nargs="?", help="output path (default: stdout)")
    e.add_argument("--id", help="branch id (default: first)")
    e.set_defaults(func=cmd_export)

    rep = sub.add_parser("report", help="print the mission report of one or more run directories")
    rep.add_argument("run_dirs", nargs="+")
    rep.add_argument("-o", "--out")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pipebot: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissionAbort as exc:
        print(f"pipebot: mission aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (OSError, NotFoundError, ParseError, FormatError) as exc:
        print(f"pipebot: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
