"""Single-run simulation, Monte-Carlo batches and result aggregation."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .backend import get_replay
from .core_types import ITH, wrap_angles
from .scenarios import ScenarioConfig, Truth, generate_truth
from .sensing import EventLog, RngStream, disturb_truth, generate_events, initial_estimates

ALGORITHMS = ("ekf", "dcl", "ccl")
_ALGO_CODE = {"ekf": 0, "dcl": 1, "ccl": 2}

# A run is flagged divergent when any NEES sample exceeds this (error ~100 sigma).
DIVERGENCE_NEES = 1e4
HIST_BINS = 40


def parse_algos(algos) -> tuple[str, ...]:
    if isinstance(algos, str):
        algos = [a.strip() for a in algos.split(",") if a.strip()]
    algos = tuple(algos)
    bad = [a for a in algos if a not in ALGORITHMS]
    if bad or not algos:
        raise ValueError(f"algorithms must be a non-empty subset of {ALGORITHMS}, got {algos}")
    return tuple(a for a in ALGORITHMS if a in algos)


@dataclass(frozen=True)
class Simulation:
    """Everything produced by one seeded run, before reduction to RMS."""

    cfg: ScenarioConfig
    seed: int
    truth: Truth           # nominal trajectory plus this seed's disturbance
    events: EventLog
    x0: np.ndarray
    outputs: dict


def simulate(cfg: ScenarioConfig, seed: int, algos=ALGORITHMS, backend: str | None = None,
             truth: Truth | None = None) -> Simulation:
    root = RngStream(seed)
    truth = disturb_truth(truth if truth is not None else generate_truth(cfg), cfg, root)
    events = generate_events(truth, cfg, root)
    x0 = initial_estimates(truth, cfg, root)
    cov0 = np.repeat(cfg.initial_cov[None], truth.n_vehicles, axis=0)
    lms = np.array([[lm.x, lm.y] for lm in truth.landmarks], dtype=float).reshape(-1, 2)
    noise = cfg.noise
    replay = get_replay(backend)
    outputs = {}
    for a in parse_algos(algos):
        outputs[a] = replay(
            _ALGO_CODE[a], x0, cov0, events.tick, events.kind, events.source, events.target,
            events.value, truth.n_ticks, truth.states, lms, cfg.dt, noise.process_r,
            noise.imu_accel_sigma ** 2, noise.imu_gyro_sigma ** 2, noise.gps_sigma ** 2,
            noise.odom_sigma ** 2, noise.uwb_sigma ** 2, cfg.ekf_uses_landmarks,
            noise.second_order,
        )
    return Simulation(cfg, seed, truth, events, x0, outputs)


@dataclass(frozen=True)
class RunResult:
    run_id: int
    seed: int
    scenario: str
    rms_pos: dict            # algo -> (N,) metres
    rms_heading: dict        # algo -> (N,) radians
    nees_mean: dict          # algo -> (N,) time-averaged NEES
    nees_profile: dict       # algo -> vehicle-averaged NEES at each whole second
    failed: dict             # algo -> "" | "numerical" | "psd" | "diverged"
    skipped: dict            # algo -> degenerate range updates skipped

    @property
    def algorithms(self) -> tuple[str, ...]:
        return tuple(self.rms_pos)

    def mean_rms_pos(self, algo: str) -> float:
        """Vehicle-mean RMS position error, the quantity used in summaries."""
        return math.fsum(self.rms_pos[algo]) / len(self.rms_pos[algo])

    @property
    def any_failed(self) -> bool:
        return any(self.failed.values())


def reduce_simulation(sim: Simulation, run_id: int = 0) -> RunResult:
    truth = sim.truth.states
    per_second = max(1, int(round(1.0 / sim.cfg.dt)))
    rms_pos, rms_head, nees_mean, nees_prof, failed, skipped = {}, {}, {}, {}, {}, {}
    for a, out in sim.outputs.items():
        err = out.est - truth
        head = wrap_angles(err[..., ITH])
        rms_pos[a] = np.sqrt(np.mean(err[..., 0] ** 2 + err[..., 1] ** 2, axis=0))
        rms_head[a] = np.sqrt(np.mean(head ** 2, axis=0))
        nees_mean[a] = np.mean(out.nees, axis=0)
        nees_prof[a] = np.mean(out.nees[::per_second], axis=1)
        skipped[a] = int(out.skipped)
        if out.status != 0 or not np.all(np.isfinite(out.est)):
            flag = "numerical"
        elif out.psd_failures:
            flag = "psd"
        elif not np.all(np.isfinite(out.nees)) or np.max(out.nees) > DIVERGENCE_NEES:
            flag = "diverged"
        else:
            flag = ""
        failed[a] = flag
        if flag:
            rms_pos[a] = np.full_like(rms_pos[a], np.nan)
            rms_head[a] = np.full_like(rms_head[a], np.nan)
    return RunResult(run_id, sim.seed, sim.cfg.name, rms_pos, rms_head, nees_mean,
                     nees_prof, failed, skipped)


def run_single(cfg: ScenarioConfig, seed: int, algos=ALGORITHMS, run_id: int | None = None,
               backend: str | None = None, truth: Truth | None = None) -> RunResult:
    sim = simulate(cfg, seed, algos, backend, truth)
    return reduce_simulation(sim, seed if run_id is None else run_id)


@dataclass(frozen=True)
class AlgoSummary:
    mean: float
    median: float
    std: float
    n_ok: int
    n_failed: int
    bin_edges: np.ndarray
    counts: np.ndarray
    mean_nees: float
    nees_profile: np.ndarray


@dataclass(frozen=True)
class McSummary:
    scenario: str
    gps: bool
    n_runs: int
    algos: dict              # algo -> AlgoSummary

    def mean(self, algo: str) -> float:
        return self.algos[algo].mean

    @property
    def n_failed(self) -> int:
        return sum(s.n_failed for s in self.algos.values())


def _fmean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else math.nan


def summarize(results: Sequence[RunResult], cfg: ScenarioConfig, bins: int = HIST_BINS) -> McSummary:
    """Reduce run results; the output does not depend on the order of ``results``."""
    if not results:
        raise ValueError("no run results to summarize")
    results = sorted(results, key=lambda r: (r.seed, r.run_id))
    algos = results[0].algorithms
    per_algo = {a: np.array([r.mean_rms_pos(a) for r in results if not r.failed[a]])
                for a in algos}
    ok_all = [v for v in per_algo.values() if v.size]
    hi = max((float(v.max()) for v in ok_all), default=1.0)
    edges = np.linspace(0.0, hi if hi > 0 else 1.0, bins + 1)
    out = {}
    for a in algos:
        v = per_algo[a]
        mean = _fmean(v)
        std = math.sqrt(_fmean((x - mean) ** 2 for x in v)) if v.size else math.nan
        counts, _ = np.histogram(v, bins=edges)
        ok_runs = [r for r in results if not r.failed[a]]
        nees = _fmean(math.fsum(r.nees_mean[a]) / len(r.nees_mean[a]) for r in ok_runs)
        if ok_runs:
            prof = np.array([_fmean(col) for col in zip(*(r.nees_profile[a] for r in ok_runs))])
        else:
            prof = np.empty(0)
        out[a] = AlgoSummary(mean, float(np.median(v)) if v.size else math.nan, std, int(v.size),
                             len(results) - int(v.size), edges, counts, nees, prof)
    return McSummary(cfg.name, cfg.gps_enabled, len(results), out)


def _run_chunk(args):
    cfg, seeds, algos, backend = args
    truth = generate_truth(cfg)
    return [run_single(cfg, s, algos, run_id=i, backend=backend, truth=truth) for i, s in seeds]


def run_monte_carlo(cfg: ScenarioConfig, n_runs: int, base_seed: int = 0, parallelism: int = 1,
                    algos=ALGORITHMS, backend: str | None = None, progress=None):
    """Run seeds ``base_seed .. base_seed+n_runs-1``; returns ``(McSummary, results)``.

    Results are identical for any ``parallelism``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    algos = parse_algos(algos)
    jobs = [(i, base_seed + i) for i in range(n_runs)]
    if parallelism <= 1:
        truth = generate_truth(cfg)
        results = []
        for i, s in jobs:
            results.append(run_single(cfg, s, algos, run_id=i, backend=backend, truth=truth))
            if progress:
                progress(1)
    else:
        chunk = max(1, min(200, n_runs // (4 * parallelism) or 1))
        batches = [(cfg, jobs[k:k + chunk], algos, backend) for k in range(0, n_runs, chunk)]
        results = []
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for part in pool.map(_run_chunk, batches):
                results.extend(part)
                if progress:
                    progress(len(part))
    results.sort(key=lambda r: r.run_id)
    return summarize(results, cfg), results


@dataclass(frozen=True)
class TableRow:
    scenario: str
    gps: bool
    means: dict   # algo -> mean rms_pos (metres)


def summarize_table(summaries: Iterable[McSummary]) -> list[TableRow]:
    summaries = list(summaries)
    if not summaries:
        raise ValueError("summarize_table needs at least one scenario summary")
    return [TableRow(s.scenario, s.gps, {a: s.mean(a) for a in s.algos}) for s in summaries]


def format_table(rows: Sequence[TableRow]) -> str:
    algos = [a for a in ALGORITHMS if a in rows[0].means]
    head = f"{'Simulation':<12}{'GPS':<5}" + "".join(f"{a.upper():>8}" for a in algos)
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.scenario.capitalize():<12}{'Yes' if r.gps else 'No':<5}"
                     + "".join(f"{r.means[a]:>8.2f}" for a in algos))
    return "\n".join(lines)


# --- CSV output ------------------------------------------------------------------

def _f(x) -> str:
    return repr(float(x))


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_results_csv(path, results: Sequence[RunResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["run_id", "seed", "scenario", "algorithm", "vehicle_id",
                    "rms_pos_m", "rms_heading_rad", "failed"])
        for r in sorted(results, key=lambda r: r.run_id):
            for a in r.algorithms:
                for v in range(len(r.rms_pos[a])):
                    w.writerow([r.run_id, r.seed, r.scenario, a, v, _f(r.rms_pos[a][v]),
                                _f(r.rms_heading[a][v]), r.failed[a] or 0])


def write_summary_csv(path, rows: Sequence[TableRow]) -> None:
    algos = [a for a in ALGORITHMS if a in rows[0].means]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["scenario", "gps"] + algos + [f"{a}_full" for a in algos])
        for r in rows:
            w.writerow([r.scenario, "yes" if r.gps else "no"]
                       + [f"{r.means[a]:.2f}" for a in algos]
                       + [_f(r.means[a]) for a in algos])


def write_stats_csv(path, summary: McSummary) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["scenario", "algorithm", "n_runs", "n_failed", "mean_rms_pos_m",
                    "median_rms_pos_m", "std_rms_pos_m", "mean_nees"])
        for a, s in summary.algos.items():
            w.writerow([summary.scenario, a, summary.n_runs, s.n_failed, _f(s.mean),
                        _f(s.median), _f(s.std), _f(s.mean_nees)])


def write_histogram_csv(path, summary: McSummary) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["algorithm", "bin_lo", "bin_hi", "count"])
        for a, s in summary.algos.items():
            for lo, hi, c in zip(s.bin_edges[:-1], s.bin_edges[1:], s.counts):
                w.writerow([a, _f(lo), _f(hi), int(c)])


def write_trace_csv(path, sim: Simulation) -> None:
    """Per-tick trace: truth pose and each algorithm's estimate and covariance trace."""
    algos = list(sim.outputs)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        head = ["t", "vehicle", "true_x", "true_y", "true_theta"]
        for a in algos:
            head += [f"{a}_x", f"{a}_y", f"{a}_theta", f"{a}_cov_trace"]
        w.writerow(head)
        tr = sim.truth
        for k in range(tr.n_ticks + 1):
            for v in range(tr.n_vehicles):
                row = [_f(tr.t[k]), v, *(_f(c) for c in tr.states[k, v, :3])]
                for a in algos:
                    o = sim.outputs[a]
                    row += [*(_f(c) for c in o.est[k, v, :3]), _f(o.trace[k, v])]
                w.writerow(row)
