"""Cycle-level performance model of the multi-rate mapping accelerator.

The dataflow is abstracted into three stages connected by bounded FIFOs:

* front: keypoint unpacking, gradient check and epipolar setup, one point
  every ``slow_rate`` cycles;
* fast: the scan pipeline, ``skip_cost`` cycles to forward a skipped point,
  ``init_cost + steps * scan_cost`` cycles for a scanned one;
* back: depth integration, filters and packing, again ``slow_rate``.

A stage that finishes a point holds it until the downstream FIFO has room
(blocking after service).  Hand-offs within a cycle are free, so the event
times obey a simple max-plus recurrence which :func:`simulate_frame` evaluates
point by point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, IncompleteTrace, Infeasible
from .keyframe import HYPOTHESIS_DTYPE, Verdict


@dataclass
class PipelineConfig:
    slow_rate: int = 5
    scan_cost: int = 1
    skip_cost: int = 1
    init_cost: int = 4
    fifo_depth: int = 1024
    clock_mhz: float = 100.0
    mem_bandwidth: float = 8.0
    fast_parallelism: int = 1
    overlap_memory: bool = True

    def __post_init__(self):
        for name in ("slow_rate", "scan_cost", "skip_cost", "fast_parallelism", "fifo_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.init_cost < 0:
            raise ValueError("init_cost must be >= 0")
        if not self.clock_mhz > 0:
            raise ValueError("clock must be positive")
        if not self.mem_bandwidth > 0:
            raise ValueError("memory bandwidth must be positive")


@dataclass
class FrameWorkload:
    """Per-point work in stream order: 0 means skip, n >= 1 means an n-step scan."""

    steps: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64).reshape(-1)
        if self.steps.size != self.width * self.height:
            raise DimensionMismatch(
                f"{self.steps.size} records for a {self.width}x{self.height} frame"
            )
        if (self.steps < 0).any():
            raise ValueError("step counts must be non-negative")

    @property
    def n_points(self) -> int:
        return self.steps.size

    @property
    def records(self) -> list[tuple[str, int]]:
        return [("scan", int(s)) if s > 0 else ("skip", 0) for s in self.steps]

    @property
    def scan_fraction(self) -> float:
        return float((self.steps > 0).mean()) if self.steps.size else 0.0

    def row(self, y: int) -> np.ndarray:
        return self.steps[y * self.width : (y + 1) * self.width]


@dataclass
class SimReport:
    total_cycles: int
    front_busy: int
    fast_busy: int
    back_busy: int
    max_fifo_in: int
    max_fifo_out: int
    stall_cycles: int
    lower_bound: int
    n_points: int

    @property
    def max_fifo_occupancy(self) -> int:
        return max(self.max_fifo_in, self.max_fifo_out)


@dataclass(frozen=True)
class FrameTime:
    compute_ms: float
    memory_ms: float
    total_ms: float


@dataclass
class WorkloadStats:
    scan_frequency: np.ndarray
    row_profile: np.ndarray
    mean_scan_fraction: float
    mean_steps: float
    step_percentiles: dict = field(default_factory=dict)
    n_frames: int = 0


# --- workloads ------------------------------------------------------------


def workload_from_trace(trace) -> FrameWorkload:
    h, w = trace.verdict.shape
    if (trace.verdict == Verdict.UNSET).any():
        raise IncompleteTrace("trace has pixels without a verdict")
    scan = trace.verdict == Verdict.SCAN
    if (trace.steps[scan] < 1).any():
        raise IncompleteTrace("scanned pixel with no recorded steps")
    return FrameWorkload(np.where(scan, trace.steps, 0), w, h)


def synthetic_workload(
    width: int,
    height: int,
    scan_fraction: float,
    steps,
    pattern: str = "uniform",
    seed: int | None = 0,
) -> FrameWorkload:
    """Build a controlled workload.

    ``uniform`` spreads ``round(scan_fraction*width)`` scans evenly over each
    row, ``bursty`` packs them at the start of each row and ``random`` draws
    every point independently.  ``steps`` is a fixed count or a callable
    ``rng, n -> array``.
    """
    rng = np.random.default_rng(seed)
    mask = np.zeros((height, width), dtype=bool)
    if pattern == "random":
        mask = rng.random((height, width)) < scan_fraction
    else:
        k = int(round(scan_fraction * width))
        if pattern == "uniform":
            cols = np.floor(np.arange(k) * width / max(k, 1)).astype(int) if k else np.array([], int)
        elif pattern == "bursty":
            cols = np.arange(k)
        else:
            raise ValueError(f"unknown pattern {pattern!r}")
        mask[:, cols] = True
    n = int(mask.sum())
    counts = steps(rng, n) if callable(steps) else np.full(n, int(steps))
    out = np.zeros((height, width), dtype=np.int64)
    out[mask] = np.maximum(1, counts)
    return FrameWorkload(out.reshape(-1), width, height)


# --- analytic model --------------------------------------------------------


def analytic_row_cycles(row, config: PipelineConfig | None = None) -> int:
    """First-order fast-stage cost of one row: scans cost their steps, skips one cycle."""
    c = config or PipelineConfig()
    steps = np.asarray(row, dtype=np.int64)
    return int(np.where(steps > 0, steps * c.scan_cost, c.skip_cost).sum())


def fast_stage_costs(steps: np.ndarray, config: PipelineConfig) -> np.ndarray:
    steps = np.asarray(steps, dtype=np.int64)
    scan = config.init_cost + -(-steps // config.fast_parallelism) * config.scan_cost
    return np.where(steps > 0, scan, config.skip_cost)


def frame_lower_bound(workload: FrameWorkload, config: PipelineConfig) -> int:
    n = workload.n_points
    return int(max(n * config.slow_rate, fast_stage_costs(workload.steps, config).sum()))


# --- simulation -----------------------------------------------------------


def simulate_frame(workload: FrameWorkload, config: PipelineConfig | None = None) -> SimReport:
    c = config or PipelineConfig()
    s_slow = c.slow_rate
    fast = fast_stage_costs(workload.steps, c).tolist()
    depth = c.fifo_depth
    n = len(fast)

    a_dep = [0] * n
    b_start = [0] * n
    b_dep = [0] * n
    c_start = [0] * n
    a_free = b_free = c_free = 0
    stall = 0
    for i in range(n):
        a_done = a_free + s_slow
        dep = a_done
        if i >= depth and b_start[i - depth] > dep:
            dep = b_start[i - depth]
        stall += dep - a_done
        a_dep[i] = dep
        a_free = dep

        bs = dep if dep > b_free else b_free
        b_start[i] = bs
        b_done = bs + fast[i]
        bd = b_done
        if i >= depth and c_start[i - depth] > bd:
            bd = c_start[i - depth]
        stall += bd - b_done
        b_dep[i] = bd
        b_free = bd

        cs = bd if bd > c_free else c_free
        c_start[i] = cs
        c_free = cs + s_slow

    total = c_free if n else 0
    return SimReport(
        total_cycles=int(total),
        front_busy=n * s_slow,
        fast_busy=int(sum(fast)),
        back_busy=n * s_slow,
        max_fifo_in=_max_occupancy(a_dep, b_start),
        max_fifo_out=_max_occupancy(b_dep, c_start),
        stall_cycles=int(stall),
        lower_bound=int(max(n * s_slow, sum(fast))),
        n_points=n,
    )


def _max_occupancy(enter, leave) -> int:
    """Peak of (#entered - #left) sampled after all events at each entry time."""
    if not enter:
        return 0
    enter = np.asarray(enter)
    leave = np.asarray(leave)
    occ = np.searchsorted(enter, enter, side="right") - np.searchsorted(leave, enter, side="right")
    return int(occ.max())


def frame_time_ms(
    sim: SimReport,
    config: PipelineConfig | None = None,
    frame_bytes: int = 0,
    map_bytes: int = 0,
) -> FrameTime:
    """Convert cycles and DMA traffic to milliseconds.

    Memory traffic is one frame read plus one map read and one map write.
    With ``overlap_memory`` the two run concurrently and the total is their
    maximum, otherwise their sum.
    """
    c = config or PipelineConfig()
    cycles_per_ms = c.clock_mhz * 1e3
    compute = sim.total_cycles / cycles_per_ms
    memory = (frame_bytes + 2 * map_bytes) / (c.mem_bandwidth * cycles_per_ms)
    total = max(compute, memory) if c.overlap_memory else compute + memory
    return FrameTime(compute, memory, total)


def frame_bytes_for(width: int, height: int) -> tuple[int, int]:
    """(image bytes, depth-map bytes) for a frame of the given size."""
    n = width * height
    return n, n * HYPOTHESIS_DTYPE.itemsize


def simulate_time(workload: FrameWorkload, config: PipelineConfig) -> tuple[SimReport, FrameTime]:
    sim = simulate_frame(workload, config)
    fb, mb = frame_bytes_for(workload.width, workload.height)
    return sim, frame_time_ms(sim, config, fb, mb)


# --- statistics -----------------------------------------------------------


def scan_frequency_heatmap(traces: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of traces in which each pixel was scanned, plus its row means."""
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    shape = traces[0].verdict.shape
    counts = np.zeros(shape, dtype=np.int64)
    for t in traces:
        if t.verdict.shape != shape:
            raise DimensionMismatch(f"trace shape {t.verdict.shape} != {shape}")
        counts += t.verdict == Verdict.SCAN
    freq = counts / len(traces)
    return freq, freq.mean(axis=1)


def workload_stats(traces: Sequence) -> WorkloadStats:
    traces = list(traces)
    freq, rows = scan_frequency_heatmap(traces)
    steps = np.concatenate([t.steps[t.verdict == Verdict.SCAN] for t in traces])
    pct = {q: float(np.percentile(steps, q)) for q in (50, 90, 99)} if steps.size else {}
    return WorkloadStats(
        scan_frequency=freq,
        row_profile=rows,
        mean_scan_fraction=float(freq.mean()),
        mean_steps=float(steps.mean()) if steps.size else 0.0,
        step_percentiles=pct,
        n_frames=len(traces),
    )


def step_histogram(traces: Iterable) -> dict[int, int]:
    hist: dict[int, int] = {}
    for t in traces:
        vals, counts = np.unique(t.steps[t.verdict == Verdict.SCAN], return_counts=True)
        for v, k in zip(vals.tolist(), counts.tolist()):
            hist[v] = hist.get(v, 0) + k
    return dict(sorted(hist.items()))


def heatmap_to_pgm16(freq: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(freq, 0.0, 1.0) * 65535).astype(np.uint16)


def write_sim_reports(path, reports: Sequence[SimReport], times: Sequence[FrameTime], names=None) -> None:
    names = names or [str(i) for i in range(len(reports))]
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        keys = list(asdict(reports[0]).keys()) if reports else list(SimReport.__dataclass_fields__)
        wr.writerow(["frame", *keys, "compute_ms", "memory_ms", "total_ms"])
        for name, r, t in zip(names, reports, times):
            d = asdict(r)
            wr.writerow([name, *(d[k] for k in keys), repr(t.compute_ms), repr(t.memory_ms), repr(t.total_ms)])


def read_sim_reports(path) -> list[tuple[str, SimReport, FrameTime]]:
    out = []
    fields = list(SimReport.__dataclass_fields__)
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rep = SimReport(**{k: int(row[k]) for k in fields})
            t = FrameTime(float(row["compute_ms"]), float(row["memory_ms"]), float(row["total_ms"]))
            out.append((row["frame"], rep, t))
    return out


def write_workload_stats(path, stats: WorkloadStats) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["key", "value"])
        wr.writerow(["n_frames", stats.n_frames])
        wr.writerow(["mean_scan_fraction", repr(stats.mean_scan_fraction)])
        wr.writerow(["mean_steps", repr(stats.mean_steps)])
        for q, v in stats.step_percentiles.items():
            wr.writerow([f"p{q}_steps", repr(v)])


def latency_summary(times_ms: Sequence[float]) -> dict[str, float]:
    a = np.asarray(times_ms, dtype=np.float64)
    if a.size == 0:
        raise ValueError("no frame times")
    return {
        "frames": float(a.size),
        "mean": float(a.mean()),
        "median": float(np.median(a)),
        "p98": float(np.percentile(a, 98)),
        "max": float(a.max()),
    }


# --- tuning ---------------------------------------------------------------


@dataclass
class TuneResult:
    config: PipelineConfig
    achieved_ms: float
    budget_ms: float
    evaluated: list = field(default_factory=list)

    @property
    def achieved_fps(self) -> float:
        return 1000.0 / self.achieved_ms


def resource_proxy(slow_rate: int, parallelism: int, parallelism_weight: float = 0.25) -> float:
    return 1.0 / slow_rate + parallelism_weight * parallelism


def evaluate_config(workloads: Sequence[FrameWorkload], config: PipelineConfig, percentile: float = 99) -> float:
    """Percentile frame time (ms) of ``config`` over the given frames."""
    totals = [simulate_time(w, config)[1].total_ms for w in workloads]
    return float(np.percentile(totals, percentile))


def _bound_percentile(workloads, config, percentile) -> float:
    vals = []
    for w in workloads:
        fb, mb = frame_bytes_for(w.width, w.height)
        sim_lb = SimReport(frame_lower_bound(w, config), 0, 0, 0, 0, 0, 0, 0, w.n_points)
        vals.append(frame_time_ms(sim_lb, config, fb, mb).total_ms)
    return float(np.percentile(vals, percentile))


def tune_rates(
    target_fps: float,
    workloads: Sequence[FrameWorkload],
    clock_mhz: float,
    base: PipelineConfig | None = None,
    slow_rates: Iterable[int] = range(2, 11),
    parallelisms: Iterable[int] = (1, 2),
    parallelism_weight: float = 0.25,
    percentile: float = 99,
) -> TuneResult:
    """Cheapest (slow_rate, fast parallelism) whose percentile frame time fits the budget.

    Candidates are tried in order of increasing resource proxy; the first
    feasible one wins.  Candidates whose analytic lower bound already misses
    the budget are rejected without simulation.
    """
    if not target_fps > 0:
        raise ValueError("target_fps must be positive")
    workloads = list(workloads)
    if not workloads:
        raise ValueError("need at least one workload")
    budget = 1000.0 / target_fps
    base = replace(base or PipelineConfig(), clock_mhz=clock_mhz)
    grid = sorted(
        ((s, p) for s in slow_rates for p in parallelisms),
        key=lambda sp: (resource_proxy(sp[0], sp[1], parallelism_weight), -sp[0], sp[1]),
    )
    evaluated = []
    for s, p in grid:
        cfg = replace(base, slow_rate=s, fast_parallelism=p)
        if _bound_percentile(workloads, cfg, percentile) > budget:
            evaluated.append((s, p, math.nan, False))
            continue
        achieved = evaluate_config(workloads, cfg, percentile)
        feasible = achieved <= budget
        evaluated.append((s, p, achieved, feasible))
        if feasible:
            return TuneResult(cfg, achieved, budget, evaluated)
    raise Infeasible(f"no configuration reaches {target_fps} fps at {clock_mhz} MHz")
