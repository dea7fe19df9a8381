"""Command-line entry point: ``synth``, ``run`` and ``design``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from .design import DesignProblem, SolverConfig, solve_design
from .env import GenerationError, InstanceError, save_instance, synth_instance
from .errors import ConfigError
from .harness import ALGORITHMS, ExperimentSpec, run_experiment
from .linalg import InvalidInputError

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedpe", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic instance file")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--gap-min", type=float, default=0.2)
    p.add_argument("--gap-max", type=float, default=0.4)
    p.add_argument("--ell", type=float, default=0.5)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--mode", choices=["disjoint", "shared"], default="disjoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run algorithms on an instance and write CSVs")
    p.add_argument("--instance", required=True)
    p.add_argument("--algo", required=True,
                   help=f"comma-separated list from {', '.join(ALGORITHMS)}")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--schedule", default="exp:1,2", help="uniform, greedy or exp:c,n")
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--comm-mode", choices=["naive", "reduced"], default="naive")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("design", help="solve a standalone multi-client design problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--max-sweeps", type=int, default=500)
    return parser


def _cmd_synth(args) -> int:
    inst = synth_instance(args.M, args.K, args.d, args.gap_min, args.gap_max, args.ell, args.L,
                          np.random.default_rng(args.seed), noise_std=args.noise_std,
                          mode=args.mode)
    save_instance(inst, args.out)
    return EXIT_OK


def _cmd_run(args) -> int:
    exp = ExperimentSpec(instance=args.instance, algorithms=tuple(args.algo.split(",")),
                         T=args.T, seeds=tuple(args.seeds), out_dir=args.out, delta=args.delta,
                         schedule=args.schedule, comm_mode=args.comm_mode, jobs=args.jobs)
    result = run_experiment(exp)
    for algo, seed, err in result.failures:
        print(f"cell {algo} seed {seed} failed: {err}", file=sys.stderr)
    return EXIT_FAILED if result.failures else EXIT_OK


def load_design_problem(path) -> DesignProblem:
    """Read ``{"mode", "num_arms"?, "clients": [{"arms": [...], "directions": [[...], ...]}]}``."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        sets, dirs = [], {}
        for i, c in enumerate(doc["clients"]):
            if len(c["arms"]) != len(c["directions"]):
                raise InvalidInputError(f"clients[{i}]: arms and directions differ in length")
            sets.append(c["arms"])
            for a, v in zip(c["arms"], c["directions"]):
                dirs[(i, int(a))] = v
        return DesignProblem.build(sets, dirs, doc.get("mode", "disjoint"), doc.get("num_arms"))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"malformed design problem {path}: {exc!r}") from None


def _cmd_design(args) -> int:
    problem = load_design_problem(args.problem)
    sol = solve_design(problem, SolverConfig(epsilon=args.epsilon, max_sweeps=args.max_sweeps))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["client", "arm", "pi"])
    for c, a, v in zip(problem.clients, problem.arms, sol.pi):
        w.writerow([int(c), int(a), repr(float(v))])
    sys.stdout.write("\n")
    w.writerow(["group", "rank"])
    for g in np.unique(problem.groups):
        w.writerow([int(g), int(sol.per_arm_rank[g])])
    sys.stdout.write("\n")
    w.writerow(["metric", "value"])
    w.writerows([["G", repr(sol.objective_G)], ["F", repr(sol.objective_F)],
                 ["rank_total", sol.rank_total], ["sweeps", sol.sweeps],
                 ["certified", str(sol.certified).lower()]])
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"synth": _cmd_synth, "run": _cmd_run, "design": _cmd_design}[args.command]
    try:
        return handler(args)
    except (ConfigError, InstanceError, GenerationError, InvalidInputError, OSError) as exc:
        print(f"fedpe {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
