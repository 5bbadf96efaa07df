"""``mapper`` command line: run mapping, analyze traces, simulate and tune the accelerator."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline_model as pm
from .config import RunConfig, load_config
from .dataset import load_dataset
from .depth_search import UpdateTrace, update_map
from .errors import MappingError
from .imageio import write_pfm, write_pgm
from .keyframe import Keyframe, save_keyframe

log = logging.getLogger("semidense")


def _load_traces(traces_dir) -> tuple[list[str], list[UpdateTrace]]:
    paths = sorted(Path(traces_dir).glob("*.csv"))
    if not paths:
        raise MappingError(f"no trace CSVs in {traces_dir}")
    return [p.stem for p in paths], [UpdateTrace.from_csv(p) for p in paths]


def cmd_run(dataset_dir, trajectory, calib, config: RunConfig, out_dir) -> Keyframe:
    seq = load_dataset(dataset_dir, trajectory, calib)
    out = Path(out_dir)
    traces_dir = out / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    K = seq.calibration
    interval = max(1, config.run.keyframe_interval)

    keyframe = Keyframe.create(seq.image(0), seq.poses[0])
    for i in range(1, len(seq)):
        image = seq.image(i)
        if i % interval == 0:
            log.info("frame %d becomes the keyframe", i)
            keyframe = Keyframe.create(image, seq.poses[i])
            continue
        rel = seq.poses[i] @ keyframe.pose.inverse()
        keyframe, trace = update_map(keyframe, image, rel, K, config.search, config.filter)
        trace.to_csv(traces_dir / f"trace_{i:05d}.csv")
        log.info("frame %d: %d scans, %d valid", i, int(trace.scan_mask().sum()), int(keyframe.valid_mask.sum()))

    save_keyframe(out / "keyframe.kfd", keyframe)
    valid = keyframe.valid_mask
    write_pfm(out / "idepth.pfm", np.where(valid, keyframe.hypotheses["idepth"], 0.0))
    write_pgm(out / "valid.pgm", (valid * 255).astype(np.uint8))
    return keyframe


def cmd_analyze(traces_dir, out_dir) -> pm.WorkloadStats:
    _, traces = _load_traces(traces_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = pm.workload_stats(traces)
    write_pgm(out / "heatmap.pgm", pm.heatmap_to_pgm16(stats.scan_frequency))
    with open(out / "row_profile.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["row", "frequency"])
        for y, v in enumerate(stats.row_profile):
            wr.writerow([y, repr(float(v))])
    with open(out / "step_histogram.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["steps", "count"])
        for steps, count in pm.step_histogram(traces).items():
            wr.writerow([steps, count])
    pm.write_workload_stats(out / "workload_stats.csv", stats)
    return stats


def cmd_simulate(traces_dir, config: RunConfig, out_dir) -> dict[str, float]:
    names, traces = _load_traces(traces_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports, times = [], []
    for trace in traces:
        sim, ft = pm.simulate_time(pm.workload_from_trace(trace), config.pipeline)
        reports.append(sim)
        times.append(ft)
    pm.write_sim_reports(out / "sim_reports.csv", reports, times, names)
    summary = pm.latency_summary([t.total_ms for t in times])
    with open(out / "latency_summary.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["statistic", "ms"])
        for k, v in summary.items():
            wr.writerow([k, repr(v)])
    return summary


def cmd_tune(target_fps, traces_dir, clock_mhz, config: RunConfig) -> pm.TuneResult:
    _, traces = _load_traces(traces_dir)
    workloads = [pm.workload_from_trace(t) for t in traces]
    return pm.tune_rates(target_fps, workloads, clock_mhz, base=config.pipeline)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mapper", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="map a dataset and write the final keyframe")
    run.add_argument("--dataset", required=True, help="directory of timestamp-named PGM/PNG images")
    run.add_argument("--trajectory", required=True, help="TUM trajectory file")
    run.add_argument("--calib", required=True, help="calibration file: fx fy cx cy width height")
    run.add_argument("--config")
    run.add_argument("--out", required=True)

    an = sub.add_parser("analyze", help="scan-frequency heatmap and workload statistics")
    an.add_argument("--traces", required=True)
    an.add_argument("--out", required=True)

    sim = sub.add_parser("simulate", help="simulate per-frame accelerator latency")
    sim.add_argument("--traces", required=True)
    sim.add_argument("--config")
    sim.add_argument("--clock-mhz", type=float)
    sim.add_argument("--out", required=True)

    tune = sub.add_parser("tune", help="choose pipeline rates for a target frame rate")
    tune.add_argument("--target-fps", type=float, required=True)
    tune.add_argument("--traces", required=True)
    tune.add_argument("--clock-mhz", type=float, default=100.0)
    tune.add_argument("--config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = load_config(getattr(args, "config", None))
        if args.command == "run":
            kf = cmd_run(args.dataset, args.trajectory, args.calib, config, args.out)
            print(f"valid points: {int(kf.valid_mask.sum())} / {kf.valid_mask.size}")
        elif args.command == "analyze":
            stats = cmd_analyze(args.traces, args.out)
            print(f"frames: {stats.n_frames}  mean scan frequency: {stats.mean_scan_fraction:.4f}  "
                  f"mean steps: {stats.mean_steps:.2f}")
        elif args.command == "simulate":
            if args.clock_mhz:
                config.pipeline.clock_mhz = args.clock_mhz
            summary = cmd_simulate(args.traces, config, args.out)
            print("  ".join(f"{k}={v:.3f}" for k, v in summary.items()))
        elif args.command == "tune":
            res = cmd_tune(args.target_fps, args.traces, args.clock_mhz, config)
            c = res.config
            print(f"slow_rate={c.slow_rate} fast_parallelism={c.fast_parallelism} clock_mhz={c.clock_mhz:g}")
            print(f"p99 frame time {res.achieved_ms:.3f} ms (budget {res.budget_ms:.3f} ms)")
    except (MappingError, OSError) as exc:
        print(f"mapper: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
