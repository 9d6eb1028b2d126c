"""``gcpbench`` command line.

Exit codes: 0 success, 1 rejected submission or failed evaluation, 2 usage or
configuration error. Every output artifact embeds the fully resolved run
configuration, and identical inputs produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import io as gio
from .config import RunConfig
from .errors import ConfigError, GcpBenchError
from .evaluation import (
    evaluate_multi_session,
    evaluate_sequence,
    multiplier_for_site,
    rayleigh_fit,
)
from .gcp_detector import detect_gcp
from .lidar_sim import simulate_scan
from .validation import detect_discontinuities, diff_submissions, validate_submission


class UsageError(Exception):
    pass


def _dump(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(payload, out: Optional[str]) -> None:
    text = _dump(payload)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _floats(text: str, n: int, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what} must be {n} comma-separated numbers") from None
    if len(vals) != n:
        raise UsageError(f"{what} must be {n} comma-separated numbers")
    return vals


def _paths(text: str) -> list[str]:
    return [p for p in text.split(",") if p]


def _load_config(args) -> RunConfig:
    return RunConfig.load(getattr(args, "config", None))


def _calibration(args, cfg: RunConfig):
    if getattr(args, "calib", None):
        # a team-supplied extrinsic calibration replaces the default one
        calib_data = json.loads(Path(args.calib).read_text())
        cfg = cfg.with_overrides({"calibration": calib_data})
    return cfg, cfg.calibration()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    if args.revolutions is not None:
        cfg = cfg.with_overrides({"revolutions": args.revolutions})
    scans = simulate_scan(cfg.scanner(), cfg.ground(), cfg.fiducial(), cfg.revolutions, seed=args.seed)
    comments = [
        "config: " + json.dumps(cfg.to_dict(), sort_keys=True),
        f"seed: {args.seed}",
    ]
    gio.write_scans(args.out, scans, comments)
    return 0


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    if args.roi is not None:
        cfg = cfg.with_overrides({"detector": {"roi_center": _floats(args.roi, 2, "--roi")}})
    if cfg.data["detector"]["roi_center"] is None:
        raise UsageError("detect needs an ROI hint: pass --roi x,y or set detector.roi_center")
    scans = gio.read_scans(args.scans, cfg.scanner().ring_count)
    det = detect_gcp(scans, cfg.detector())
    payload = {
        "config": cfg.to_dict(),
        "detection": det.to_dict(),
        "center_world": [float(v) for v in cfg.scanner().mount_pose.apply(det.center)],
    }
    _emit(payload, args.out)
    if args.accumulator:
        acc = det.accumulator
        lines = ["# u,v,weight"]
        for idx in zip(*np.nonzero(acc.weights)):
            u, v = acc.cell_center(*idx)
            lines.append(f"{gio.fmt(u)},{gio.fmt(v)},{gio.fmt(acc.weights[idx])}")
        Path(args.accumulator).write_text("\n".join(lines) + "\n")
    return 0


def cmd_evaluate(args) -> int:
    cfg, calib = _calibration(args, _load_config(args))
    traj = gio.read_trajectory(args.traj, args.stamp_unit)
    obs = gio.read_observations(args.obs, args.stamp_unit)
    gcps = gio.read_gcps(args.gcps)
    report = evaluate_sequence(
        traj, obs, calib, gcps, cfg.brackets(), multiplier_for_site(args.site), cfg.max_gap
    )
    _emit({"config": cfg.to_dict(), "site": args.site, "report": report.to_dict()}, args.out)
    return 0


def cmd_evaluate_multi(args) -> int:
    cfg, calib = _calibration(args, _load_config(args))
    traj_paths, obs_paths = _paths(args.trajs), _paths(args.obs)
    if len(traj_paths) != len(obs_paths):
        raise UsageError("--trajs and --obs need the same number of comma-separated files")
    trajs = [gio.read_trajectory(p, args.stamp_unit) for p in traj_paths]
    obs = [gio.read_observations(p, args.stamp_unit) for p in obs_paths]
    gcps = gio.read_gcps(args.gcps)
    report = evaluate_multi_session(
        trajs, obs, calib, gcps, cfg.brackets(), multiplier_for_site(args.site), cfg.max_gap, cfg.multi_alignment
    )
    _emit({"config": cfg.to_dict(), "site": args.site, "report": report.to_dict()}, args.out)
    return 0


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    span = tuple(_floats(args.span, 2, "--span")) if args.span else None
    if span is not None and span[1] <= span[0]:
        raise UsageError("--span needs t0 < t1")
    report = validate_submission(
        Path(args.traj).read_text(), span, args.min_rate, cfg.validation(), args.stamp_unit
    )
    _emit({"config": cfg.to_dict(), "validation": report.to_dict()}, args.out)
    return 0 if report.accepted else 1


def cmd_diff(args) -> int:
    cfg = _load_config(args)
    vcfg = cfg.validation()
    prev = gio.read_trajectory(args.prev, args.stamp_unit)
    curr = gio.read_trajectory(args.curr, args.stamp_unit)
    # GCP timestamps come from the observation list (the survey has no times)
    gcp_times = [(o.gcp_name, o.timestamp) for o in gio.read_observations(args.gcps, args.stamp_unit)]
    diff = diff_submissions(prev, curr, gcp_times, vcfg.diff_window, vcfg.diff_mad_k, vcfg.diff_min_excess)
    flags = detect_discontinuities(curr, gcp_times, vcfg.discontinuity_window, vcfg.velocity_threshold)
    payload = {
        "config": cfg.to_dict(),
        "diff": diff.to_dict(),
        "discontinuities": [f.to_dict() for f in flags],
    }
    _emit(payload, args.out)
    return 0


def cmd_report(args) -> int:
    data = json.loads(Path(args.input).read_text())
    if "report" not in data:
        raise UsageError(f"{args.input} is not an evaluation report")
    rows = data["report"]["gcps"]
    out = Path(args.plots)
    out.mkdir(parents=True, exist_ok=True)
    header = "# config: " + json.dumps(data.get("config", {}), sort_keys=True)

    lines = [header, "name,timestamp,covered,error_m,score"]
    for r in rows:
        err = "" if r["error"] is None else gio.fmt(r["error"])
        lines.append(f"{r['name']},{gio.fmt(r['timestamp'])},{int(r['covered'])},{err},{r['score']}")
    (out / "gcp_errors.csv").write_text("\n".join(lines) + "\n")

    errors = np.array([r["error"] for r in rows if r["covered"]], dtype=float)
    lines = [header, "bin_lo_m,bin_hi_m,count"]
    if len(errors):
        counts, edges = np.histogram(errors, bins=args.bins, range=(0.0, float(errors.max()) or 1.0))
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            lines.append(f"{gio.fmt(lo)},{gio.fmt(hi)},{int(c)}")
    (out / "error_histogram.csv").write_text("\n".join(lines) + "\n")

    lines = [header]
    if len(errors) >= 2:
        fit = rayleigh_fit(errors)
        lines.append(f"# sigma_m={gio.fmt(fit.sigma)} r95_m={gio.fmt(fit.quantile(0.95))} "
                     f"r997_m={gio.fmt(fit.quantile(0.997))} n={fit.n}")
        lines.append("x_m,pdf")
        top = max(float(errors.max()), fit.quantile(0.997)) or 1.0
        for x in np.linspace(0.0, top, args.samples):
            lines.append(f"{gio.fmt(x)},{gio.fmt(fit.pdf(x))}")
    else:
        lines.append("# fewer than 2 covered GCPs, no Rayleigh fit")
        lines.append("x_m,pdf")
    (out / "rayleigh_fit.csv").write_text("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcpbench", description="Sparse ground-control-point benchmark tools.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, stamps=False):
        sp.add_argument("--config", help="JSON run config (default: $GCPBENCH_CONFIG, else built-in defaults)")
        if stamps:
            sp.add_argument("--stamp-unit", choices=sorted(gio.STAMP_SCALE), default="s",
                            help="unit of timestamps in input files (converted to seconds)")
        return sp

    sp = common(sub.add_parser("simulate", help="simulate scans of a target on the floor"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--revolutions", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = common(sub.add_parser("detect", help="locate the target in a scans CSV"))
    sp.add_argument("--scans", required=True)
    sp.add_argument("--roi", help="ROI hint x,y in the scanner frame (meters)")
    sp.add_argument("--out")
    sp.add_argument("--accumulator", help="also dump non-zero Hough cells to this CSV")
    sp.set_defaults(func=cmd_detect)

    sp = common(sub.add_parser("evaluate", help="score one trajectory against surveyed GCPs"), stamps=True)
    sp.add_argument("--traj", required=True)
    sp.add_argument("--obs", required=True)
    sp.add_argument("--gcps", required=True)
    sp.add_argument("--calib", help="team-supplied extrinsics JSON, replaces the default calibration")
    sp.add_argument("--site", type=int, choices=(1, 2, 3), required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = common(sub.add_parser("evaluate-multi", help="score several sessions as one trajectory"), stamps=True)
    sp.add_argument("--trajs", required=True, help="comma-separated trajectory files")
    sp.add_argument("--obs", required=True, help="comma-separated observation files, one per trajectory")
    sp.add_argument("--gcps", required=True)
    sp.add_argument("--calib")
    sp.add_argument("--site", type=int, choices=(1, 2, 3), required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate_multi)

    sp = common(sub.add_parser("validate", help="check a submission file"), stamps=True)
    sp.add_argument("--traj", required=True)
    sp.add_argument("--span", help="expected time span t0,t1 in seconds")
    sp.add_argument("--min-rate", type=float, help="minimum mean pose rate in Hz")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_validate)

    sp = common(sub.add_parser("diff", help="compare two submissions of one sequence"), stamps=True)
    sp.add_argument("--prev", required=True)
    sp.add_argument("--curr", required=True)
    sp.add_argument("--gcps", required=True, help="observation CSV giving GCP names and timestamps")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_diff)

    sp = sub.add_parser("report", help="write CSV plot series for an evaluation report")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--plots", required=True, help="output directory")
    sp.add_argument("--bins", type=int, default=20)
    sp.add_argument("--samples", type=int, default=200)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"gcpbench {args.command}: {exc}", file=sys.stderr)
        return 2
    except (GcpBenchError, ValueError, KeyError) as exc:
        print(f"gcpbench {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
