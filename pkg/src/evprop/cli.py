"""Command-line entry point: ``evprop {simulate,estimate,metrics,selftest}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig
from .core import OutOfBoundsError, UnsortedStreamError, empty_events
from .io import (
    EventFileError,
    ObserverTrajectory,
    SchemaError,
    read_estimates,
    read_events,
    read_ground_truth,
    write_estimates,
    write_events,
    write_ground_truth,
    write_observer,
)
from .metrics import (
    AlignmentError,
    MetricsReport,
    align_series,
    compute_rpm_metrics,
    compute_state_metrics,
    gt_attitude,
)
from .pipeline import run_estimation
from .sim import PROFILES, iter_sequence_events, observer_pose, scripted_flight


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_config(path, detector=None, seed=None) -> PipelineConfig:
    cfg = PipelineConfig.load(path) if path else PipelineConfig()
    return cfg.with_overrides(detector=detector, seed=seed)


def cmd_simulate(cfg: PipelineConfig, profile: str, duration_us: int, out_dir,
                 event_format: str = "bin") -> dict:
    """Write events, ground truth, observer poses and a manifest into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    setup = cfg.sim_setup()
    seed = cfg.pipeline.seed
    flight = scripted_flight(profile, duration_us, setup, seed)
    ev_path = out / f"events.{event_format}"
    write_events(ev_path, empty_events())
    n_events = 0
    for part in iter_sequence_events(flight, setup, seed, cfg.pipeline.chunk_us):
        write_events(ev_path, part, append=True)
        n_events += len(part)
    write_ground_truth(out / "ground_truth.csv", flight)
    times = [s.t for s in flight]
    write_observer(out / "observer.csv", times, [observer_pose(t, setup) for t in times])
    (out / "config.txt").write_text(cfg.to_text())
    manifest = {
        "profile": profile,
        "duration_us": int(duration_us),
        "seed": seed,
        "n_events": n_events,
        "n_gt_rows": len(flight),
        "config_sha256": cfg.hash(),
        "files": {
            p.name: _sha256(p)
            for p in (ev_path, out / "ground_truth.csv", out / "observer.csv")
        },
        "version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def cmd_estimate(cfg: PipelineConfig, events_path, observer_path, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events = read_events(events_path)
    observer = ObserverTrajectory.read(observer_path)
    records, stats = run_estimation(events, observer, cfg)
    write_estimates(out / "estimates.csv", records)
    summary = {"detector": cfg.pipeline.detector, "config_sha256": cfg.hash(), **stats.summary()}
    with open(out / "run_log.txt", "a") as fh:
        fh.write(" ".join(f"{k}={v}" for k, v in summary.items()) + "\n")
    return summary


def build_report(cfg: PipelineConfig, estimates: dict, gt: dict) -> MetricsReport:
    omega_cols = [f"omega{i}" for i in range(1, 5)]
    t0 = int(gt["t_us"][0])
    est_w = np.column_stack([estimates[c] for c in omega_cols])
    gt_w = np.column_stack([gt[c] for c in omega_cols])
    pairs = align_series(estimates["t_us"], est_w, gt["t_us"], gt_w, cfg.metrics.tolerance_us)
    rpm = compute_rpm_metrics(pairs, cfg.metrics.warmup_us, t0)
    state = None
    state_cols = ("px", "py", "pz", "vx", "vy", "vz", "roll", "pitch")
    if all(c in estimates for c in state_cols):
        est_s = np.column_stack([estimates[c] for c in state_cols])
        att = gt_attitude(np.column_stack([gt["qw"], gt["qx"], gt["qy"], gt["qz"]]))
        gt_s = np.column_stack([gt[c] for c in state_cols[:6]] + [att])
        sp = align_series(estimates["t_us"], est_s, gt["t_us"], gt_s, cfg.metrics.tolerance_us)
        state = compute_state_metrics(sp, cfg.metrics.warmup_us, t0)
    return MetricsReport(rpm, state, len(pairs), pairs.n_unpaired)


def cmd_metrics(cfg: PipelineConfig, estimates_path, gt_path, out_dir) -> tuple[MetricsReport, list[str]]:
    estimates = read_estimates(estimates_path)
    gt = read_ground_truth(gt_path)
    report = build_report(cfg, estimates, gt)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.txt").write_text(report.to_text())
    (out / "metrics_windowed.csv").write_text(report.to_csv())
    return report, report.violations(cfg.metrics.thresholds())


def cmd_selftest() -> list[tuple[str, bool]]:
    """Quick end-to-end smoke check on a short synthetic hover."""
    cfg = PipelineConfig()
    results = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        man = cmd_simulate(cfg, "hover", 1_000_000, tmp / "sim")
        results.append(("simulate writes events", man["n_events"] > 0))
        cmd_estimate(cfg, tmp / "sim" / "events.bin", tmp / "sim" / "observer.csv", tmp / "est")
        report, bad = cmd_metrics(cfg, tmp / "est" / "estimates.csv",
                                  tmp / "sim" / "ground_truth.csv", tmp / "met")
        results.append(("rotor speed within mape_max", not bad))
    return results


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evprop", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--detector", choices=("cc", "cluster"))
    common.add_argument("--seed", type=int)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic sequence")
    p.add_argument("--profile", choices=PROFILES, default="hover")
    p.add_argument("--duration", type=float, default=10.0, help="seconds")
    p.add_argument("--format", choices=("bin", "csv"), default="bin")

    p = sub.add_parser("estimate", parents=[common], help="run the estimator on an event file")
    p.add_argument("--events", required=True)
    p.add_argument("--observer", required=True)

    p = sub.add_parser("metrics", parents=[common], help="score estimates against ground truth")
    p.add_argument("--estimates", required=True)
    p.add_argument("--gt", required=True)

    sub.add_parser("selftest", parents=[common], help="short end-to-end smoke test")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config, args.detector, args.seed)
        if args.command == "simulate":
            man = cmd_simulate(cfg, args.profile, int(round(args.duration * 1e6)), args.out,
                               args.format)
            print(f"wrote {man['n_events']} events, {man['n_gt_rows']} ground-truth rows to {args.out}")
            return 0
        if args.command == "estimate":
            summary = cmd_estimate(cfg, args.events, args.observer, args.out)
            print(" ".join(f"{k}={v}" for k, v in summary.items()))
            return 0
        if args.command == "metrics":
            report, bad = cmd_metrics(cfg, args.estimates, args.gt, args.out)
            sys.stdout.write(report.to_text())
            for line in bad:
                print(f"THRESHOLD VIOLATED: {line}", file=sys.stderr)
            return 1 if bad else 0
        results = cmd_selftest()
        for name, ok in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}")
        return 0 if all(ok for _, ok in results) else 1
    except (ConfigError, EventFileError, SchemaError, AlignmentError, UnsortedStreamError,
            OutOfBoundsError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
