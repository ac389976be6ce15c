"""Command line interface: simulate, calibrate, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .control import NoValidFrames, calibrate_aiming
from .fieldsim import ConfigError
from .runio import execute_run, load_manifest, load_run_log
from .scenario import BUNDLED, load_scenario
from .vision import FrameAnalysis

EXIT_CONFIG_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heliotrack",
        description="Camera-plane heliostat tracking simulator and service",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "simulate",
        help="run a scenario and write logs, frames, and a manifest",
    )
    sim.add_argument(
        "--scenario",
        required=True,
        help=f"scenario file path or bundled name ({', '.join(BUNDLED)})",
    )
    sim.add_argument("--out", default="runs/latest", help="run output directory")
    sim.add_argument("--seed", type=int, default=None, help="override scenario seed")
    sim.add_argument(
        "--calibration",
        default=None,
        help="calibration JSON from `heliotrack calibrate` to apply",
    )

    cal = sub.add_parser(
        "calibrate",
        help="derive the constant aiming offset from a sun-pointing run",
    )
    cal.add_argument("run_dir", help="run directory produced by simulate")
    cal.add_argument(
        "--out",
        default=None,
        help="where to write calibration JSON (default: <run_dir>/calibration.json)",
    )

    srv = sub.add_parser("serve", help="run the live simulator service")
    srv.add_argument("--scenario", default="cloud_transit")
    srv.add_argument(
        "--bind",
        default=None,
        help="host:port (default $HELIOTRACK_BIND or 127.0.0.1:8008)",
    )
    srv.add_argument("--accel", type=float, default=10.0, help="time acceleration")
    srv.add_argument(
        "--heliostats", type=int, default=3, help="number of tracked heliostats"
    )
    return parser


def cmd_simulate(args) -> int:
    try:
        cfg, raw = load_scenario(args.scenario, seed_override=args.seed)
        if args.calibration:
            calib_path = Path(args.calibration)
            if not calib_path.exists():
                print(f"error: calibration file not found: {calib_path}", file=sys.stderr)
                return EXIT_CONFIG_ERROR
            calib = json.loads(calib_path.read_text())
            from dataclasses import replace

            cfg = replace(
                cfg, calibration_px=(float(calib["du_px"]), float(calib["dv_px"]))
            )
        manifest = execute_run(cfg, raw, args.out)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    s = manifest["summary"]
    print(f"run {manifest['run_id']}  scenario={manifest['scenario_name']} "
          f"seed={manifest['seed']} ticks={manifest['ticks']}")
    print(f"  out dir:            {args.out}")
    ss = s["steady_state_max_diff_mrad"]
    print(f"  steady-state max |vision-scada| mrad: az={_num(ss[0])} el={_num(ss[1])}")
    print(f"  max |vision-scada| mrad:              {_num(s['max_abs_diff_mrad'])}")
    spikes = s["spike_times_s"]
    if spikes:
        shown = ", ".join(f"{t:g}" for t in spikes[:8])
        more = f" (+{len(spikes) - 8} more)" if len(spikes) > 8 else ""
        print(f"  spikes (>8 mrad): {len(spikes)} ticks at t = {shown}{more} s; "
              f"confined to transitions: {s['spikes_confined_to_transitions']}")
    else:
        print("  spikes: none")
    if s["converged_tick"] is not None:
        print(f"  converged (<=1 px) at tick {s['converged_tick']}")
    return 0


def _num(x) -> str:
    return "n/a" if x is None else f"{x:.3f}"


def cmd_calibrate(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        load_manifest(run_dir)
        log = load_run_log(run_dir, "vision")
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    frames = [
        FrameAnalysis(boresight=r.boresight_px, sun_center=r.sun_px)
        for r in log.records
        if r.boresight_px is not None
    ]
    try:
        offset = calibrate_aiming(frames)
    except NoValidFrames as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else run_dir / "calibration.json"
    out.write_text(
        json.dumps(
            {
                "du_px": round(offset.du, 6),
                "dv_px": round(offset.dv, 6),
                "sigma_u_px": round(offset.sigma_u, 6),
                "sigma_v_px": round(offset.sigma_v, 6),
                "sample_count": offset.sample_count,
            },
            indent=2,
        )
        + "\n"
    )
    print(f"aiming offset: du={offset.du:+.3f} px (sigma {offset.sigma_u:.3f}), "
          f"dv={offset.dv:+.3f} px (sigma {offset.sigma_v:.3f}), "
          f"n={offset.sample_count}")
    print(f"wrote {out}")
    return 0


def cmd_serve(args) -> int:
    import os

    from .service import serve

    host, port = "127.0.0.1", 8008
    bind = args.bind or os.environ.get("HELIOTRACK_BIND")
    if bind:
        host, _, port_s = bind.rpartition(":")
        host = host or "127.0.0.1"
        port = int(port_s)
    try:
        serve(
            scenario=args.scenario,
            host=host,
            port=port,
            accel=args.accel,
            n_heliostats=args.heliostats,
        )
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args)
    if args.command == "calibrate":
        return cmd_calibrate(args)
    return cmd_serve(args)


if __name__ == "__main__":
    sys.exit(main())
