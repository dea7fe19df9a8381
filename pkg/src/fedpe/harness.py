"""Experiment orchestration and CSV persistence."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import collaborative_run, local_ucb_run
from .env import BanditInstance, load_instance
from .errors import ConfigError
from .protocol import ENHANCED, FED_PE, SHARED_FED_PE, AlgorithmConfig, run_policy
from .schedule import parse_schedule
from .trace import NAIVE, REDUCED, Trace

log = logging.getLogger(__name__)

LOCAL_UCB = "local-ucb"
COLLABORATIVE = "collaborative"
# command-line name -> protocol variant (None for the baselines)
ALGORITHMS = {
    "fed-pe": FED_PE,
    "enhanced": ENHANCED,
    "shared": SHARED_FED_PE,
    LOCAL_UCB: None,
    COLLABORATIVE: None,
}
FULL_TRACE_LIMIT = 2 ** 15
CHECKPOINTS = 1024

TRACE_HEADER = ["algo", "seed", "round", "cum_regret"]
PHASE_HEADER = ["algo", "seed", "phase", "f_p", "up_scalars", "down_scalars", "sparsity", "sweeps",
                "up_ints", "down_ints"]
SUMMARY_HEADER = ["algo", "final_regret_mean", "final_regret_std", "total_comm_mean",
                  "sparsity_mean", "sweeps_mean"]


@dataclass(frozen=True)
class ExperimentSpec:
    instance: BanditInstance | str | os.PathLike
    algorithms: tuple[str, ...]
    T: int
    seeds: tuple[int, ...]
    out_dir: str | os.PathLike
    delta: float = 0.1
    schedule: str = "exp:1,2"
    comm_mode: str = NAIVE
    jobs: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithm(s) {unknown}; choose from {sorted(ALGORITHMS)}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError("algorithms must not repeat")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must not repeat")
        if self.comm_mode not in (NAIVE, REDUCED):
            raise ConfigError(f"unknown comm mode {self.comm_mode!r}")
        if self.T < 1:
            raise ConfigError("T must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")


@dataclass
class ExperimentResult:
    traces: dict[tuple[str, int], Trace] = field(default_factory=dict)
    failures: list[tuple[str, int, str]] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)


def algorithm_config(instance: BanditInstance, algo: str, T: int, delta: float, schedule: str,
                     comm_mode: str = NAIVE) -> AlgorithmConfig:
    variant = ALGORITHMS[algo] or FED_PE
    wants_shared = variant == SHARED_FED_PE
    if wants_shared != (instance.mode == "shared"):
        raise ConfigError(f"algorithm {algo} cannot run on a {instance.mode} instance")
    return AlgorithmConfig(variant, T, delta, parse_schedule(schedule, T, instance.K),
                           comm_mode=comm_mode)


def run_cell(instance: BanditInstance, algo: str, T: int, delta: float, schedule: str,
             seed: int, comm_mode: str = NAIVE) -> Trace:
    """Run one (algorithm, seed) pair."""
    if algo == LOCAL_UCB:
        return local_ucb_run(instance, T, seed, algo=algo)
    config = algorithm_config(instance, algo, T, delta, schedule, comm_mode)
    if algo == COLLABORATIVE:
        return collaborative_run(instance, config, seed, algo=algo)
    return run_policy(instance, config, seed, algo=algo)


def _cell(args):
    instance, algo, T, delta, schedule, seed, comm_mode = args
    try:
        return run_cell(instance, algo, T, delta, schedule, seed, comm_mode), None
    except Exception as exc:  # a failing cell is recorded, the experiment goes on
        return None, f"{type(exc).__name__}: {exc}"


def checkpoint_rounds(T: int, phase_starts=()) -> np.ndarray:
    """1-based rounds written to a trace file."""
    if T <= FULL_TRACE_LIMIT:
        return np.arange(1, T + 1)
    pts = np.rint(np.linspace(1, T, CHECKPOINTS)).astype(int)
    bounds = [s for s in phase_starts if 1 <= s <= T]
    return np.unique(np.concatenate([pts, np.asarray(bounds, dtype=int), [T]]))


def fmt(x) -> str:
    """Shortest round-tripping text for a real; integers stay integral."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def trace_rows(trace: Trace):
    rounds = checkpoint_rounds(trace.T, trace.phase_starts)
    return [[trace.algo, trace.seed, int(r), fmt(trace.cum_regret[r - 1])] for r in rounds]


def phase_rows(trace: Trace):
    return [[trace.algo, trace.seed, r.phase, r.f_p, r.up_scalars, r.down_scalars, fmt(r.sparsity),
             r.sweeps, r.up_ints, r.down_ints] for r in trace.phases]


def summarize(traces: list[Trace]) -> list:
    finals = np.array([t.final_regret for t in traces])
    comm = np.array([t.total_comm for t in traces], dtype=float)
    phases = [r for t in traces for r in t.phases]
    std = float(np.std(finals, ddof=1)) if len(finals) > 1 else 0.0
    sparsity = float(np.mean([r.sparsity for r in phases])) if phases else math.nan
    sweeps = float(np.mean([r.sweeps for r in phases])) if phases else math.nan
    return [traces[0].algo, fmt(finals.mean()), fmt(std), fmt(comm.mean()), fmt(sparsity),
            fmt(sweeps)]


def run_experiment(exp: ExperimentSpec) -> ExperimentResult:
    """Run every (algorithm, seed) cell and write trace, phase and summary CSVs.

    Output depends only on `exp`: cells own seed-derived streams and
    results are written in algorithm-then-seed order whatever the job count.
    """
    instance = exp.instance
    if not isinstance(instance, BanditInstance):
        instance = load_instance(instance)
    for algo in exp.algorithms:
        if algo != LOCAL_UCB:
            # surface configuration problems before any cell runs
            algorithm_config(instance, algo, exp.T, exp.delta, exp.schedule, exp.comm_mode)
    out = Path(exp.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cells = [(a, s) for a in exp.algorithms for s in exp.seeds]
    args = [(instance, a, exp.T, exp.delta, exp.schedule, s, exp.comm_mode) for a, s in cells]
    if exp.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=exp.jobs) as pool:
            outcomes = list(pool.map(_cell, args))
    else:
        outcomes = [_cell(a) for a in args]

    result = ExperimentResult()
    phase_table, summary = [], []
    for (algo, seed), (trace, err) in zip(cells, outcomes):
        if err is not None:
            log.error("cell %s seed %s failed: %s", algo, seed, err)
            result.failures.append((algo, seed, err))
            continue
        result.traces[(algo, seed)] = trace
        path = out / f"trace_{algo}_s{seed}.csv"
        _write_csv(path, TRACE_HEADER, trace_rows(trace))
        result.files.append(path)
        phase_table.extend(phase_rows(trace))
    for algo in exp.algorithms:
        done = [result.traces[(algo, s)] for s in exp.seeds if (algo, s) in result.traces]
        if done:
            summary.append(summarize(done))

    if phase_table:
        path = out / "phases.csv"
        _write_csv(path, PHASE_HEADER, phase_table)
        result.files.append(path)
    path = out / "summary.csv"
    _write_csv(path, SUMMARY_HEADER, summary)
    result.files.append(path)
    if result.failures:
        path = out / "failures.csv"
        _write_csv(path, ["algo", "seed", "error"], result.failures)
        result.files.append(path)
    return result
