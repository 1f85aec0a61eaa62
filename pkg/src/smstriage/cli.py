"""Command line: serve, replay, simulate, riskmap, facilities import."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .events import parse_ts
from .risk import build_grid, export_geojson, forecast
from .service import Config, ConfigError, Core, SnapshotVersionMismatch, load_config
from .wire import BindFailure, replay_file, replay_output_path, serve

log = logging.getLogger("smstriage")


def _config(args) -> Config:
    return load_config(args.config) if args.config else Config()


def _log_path(args, cfg: Config) -> Path:
    if getattr(args, "log", None):
        return Path(args.log)
    p = Path(cfg.data.event_log)
    return p if p.is_absolute() else cfg.base_dir / p


def cmd_serve(args) -> int:
    cfg = _config(args)
    listen = args.listen or cfg.gateway.listen
    host, _, port = listen.rpartition(":")
    path = _log_path(args, cfg)
    core = Core.restore(cfg, path) if path.exists() and path.stat().st_size else Core(cfg, path)
    try:
        serve(host or "127.0.0.1", int(port), core)
    finally:
        core.close()
    return 0


def cmd_replay(args) -> int:
    cfg = _config(args)
    src = Path(args.input)
    if not src.exists():
        raise FileNotFoundError(src)
    out = Path(args.output) if args.output else replay_output_path(src)
    events = Path(args.log) if args.log else src.with_name(src.stem + ".events.jsonl")
    core = Core(cfg, events, truncate=True)
    try:
        summary = replay_file(src, core, out)
    finally:
        core.close()
    print(json.dumps({**asdict(summary), "output": str(out), "event_log": str(events)}))
    return 0


def cmd_simulate(args) -> int:
    from .simulator import generate, load_spec, run

    spec = load_spec(args.spec)
    files = generate(spec, args.out_dir)
    if args.generate_only:
        print(json.dumps({"replay": str(files.replay), "truth": str(files.truth)}))
        return 0
    metrics = run(files.replay, files.truth, files.out_dir)
    print(json.dumps(asdict(metrics), sort_keys=True))
    return 0 if metrics.capacity_violations == 0 else 1


def cmd_riskmap(args) -> int:
    cfg = _config(args)
    path = _log_path(args, cfg)
    if not path.exists():
        raise FileNotFoundError(path)
    core = Core.restore(cfg, path, append=False)
    at = parse_ts(args.at) if args.at else core.clock
    records = [r for r in core.risk.records if r.at <= at]
    params = cfg.risk_params()
    grid = build_grid(records, cfg.risk.grid(), at, params)
    grid = forecast(grid, core.risk.orbits.values(), args.horizon, params)
    Path(args.out).write_text(export_geojson(grid, args.threshold) + "\n", encoding="utf-8")
    print(json.dumps({"out": str(args.out), "records": len(records), "max_risk": float(grid.values.max())}))
    return 0


def cmd_facilities_import(args) -> int:
    cfg = _config(args)
    path = _log_path(args, cfg)
    if path.exists() and path.stat().st_size:
        core = Core.restore(cfg, path)
    else:
        cfg.data.facilities = "none"
        core = Core(cfg, path)
    try:
        count = core.registry.import_seed(args.csv, core.clock)
        core.log.flush()
    finally:
        core.close()
    print(f"imported {count} facilities ({core.registry.skipped} rows skipped)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smstriage", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, log=True):
        sp.add_argument("--config", help="INI config file (defaults apply when omitted)")
        if log:
            sp.add_argument("--log", help="event log path (overrides data.event_log)")

    sp = sub.add_parser("serve", help="run the TCP line-protocol gateway")
    common(sp)
    sp.add_argument("--listen", help="host:port (overrides gateway.listen)")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("replay", help="process a file of IN| frames")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", help="OUT| lines (default <stem>.out<suffix> beside the input)")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("simulate", help="generate and run a synthetic scenario")
    sp.add_argument("--spec", required=True, help="INI file with a [scenario] section")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--generate-only", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("riskmap", help="export the risk grid as GeoJSON")
    common(sp)
    sp.add_argument("--at", help="ISO8601 UTC time (default: last event)")
    sp.add_argument("--horizon", type=float, default=0.0, help="forecast horizon in days")
    sp.add_argument("--threshold", type=float, default=0.01)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_riskmap)

    sp = sub.add_parser("facilities", help="facility registry maintenance")
    fsub = sp.add_subparsers(dest="action", required=True)
    ip = fsub.add_parser("import", help="import a seed CSV into the event log")
    common(ip)
    ip.add_argument("csv")
    ip.set_defaults(func=cmd_facilities_import)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ConfigError, SnapshotVersionMismatch, ValueError, BindFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
