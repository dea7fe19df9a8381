"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from fedpe.baselines import collaborative_run, local_ucb_run
from fedpe.cli import main
from fedpe.design import SolverConfig, eval_F, eval_G, gradient_F, solve_design
from fedpe.env import BanditInstance, save_instance, synth_instance
from fedpe.linalg import log_pdet, pinv, pinv_rank1_update
from fedpe.protocol import AlgorithmConfig, run_policy
from fedpe.schedule import phase_lengths

from conftest import random_design_problem, random_feasible_weights, random_psd

T_MAIN = 2 ** 14
SEEDS = range(10)
DELTA = 0.1


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")


@pytest.fixture(scope="module")
def env():
    # M=20, K=10, d=3, gaps in [0.2, 0.4], ell=0.5, L=1
    return synth_instance(20, 10, 3, 0.2, 0.4, 0.5, 1.0, rng=np.random.default_rng(0))


def make_config(env, variant, kind="exponential", T=T_MAIN):
    return AlgorithmConfig(variant, T, DELTA, phase_lengths(kind, T, env.K))


@pytest.fixture(scope="module")
def main_runs(env):
    start = time.perf_counter()
    fed = make_config(env, "fed_pe")
    enh = make_config(env, "enhanced_fed_pe")
    runs = {
        "collaborative": [collaborative_run(env, fed, s) for s in SEEDS],
        "enhanced": [run_policy(env, enh, s) for s in SEEDS],
        "fed-pe": [run_policy(env, fed, s) for s in SEEDS],
        "local-ucb": [local_ucb_run(env, T_MAIN, s) for s in SEEDS],
    }
    return runs, time.perf_counter() - start


def test_criterion_01_linear_algebra(capsys):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_mp = worst_upd = worst_det = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 9))
        r = int(rng.integers(1, d + 1))
        A = random_psd(rng, d, r)
        P = pinv(A)
        worst_mp = max(worst_mp, np.abs(A @ P @ A - A).max(), np.abs(P @ A @ P - P).max(),
                       np.abs((A @ P).T - A @ P).max(), np.abs((P @ A).T - P @ A).max())
        # an update inside the range keeps the rank, so the precondition holds
        u = A @ rng.standard_normal(d)
        u /= np.linalg.norm(u)
        lam = float(rng.uniform(0.1, 2.0))
        new, factor = pinv_rank1_update(P, u, lam)
        B = A + lam * np.outer(u, u)
        ref = pinv(B)
        worst_upd = max(worst_upd, np.abs(new - ref).max() / max(1.0, np.abs(ref).max()))
        worst_det = max(worst_det, abs(factor - math.exp(log_pdet(B) - log_pdet(A))) / factor)
    elapsed = time.perf_counter() - start
    ok = max(worst_mp, worst_upd, worst_det) <= 1e-8 and elapsed < 5
    report(capsys, 1, ok, f"MP identities {worst_mp:.1e}, update {worst_upd:.1e}, "
                          f"pdet factor {worst_det:.1e} (tol 1e-8), {elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_02_design_certificate(capsys):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst_gap, worst_dual = -np.inf, np.inf
    for _ in range(50):
        M, K, d = int(rng.integers(1, 51)), int(rng.integers(1, 11)), int(rng.integers(1, 6))
        p = random_design_problem(rng, M, K, d, rank=int(rng.integers(1, d + 1)))
        target = p.group_ranks().sum()
        sol = solve_design(p, SolverConfig(epsilon=0.1))
        worst_gap = max(worst_gap, eval_G(p, sol.pi) - target)
        for _ in range(100):
            worst_dual = min(worst_dual, eval_G(p, random_feasible_weights(rng, p)) - target)
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 0.1 and worst_dual >= -1e-9 and elapsed < 60
    report(capsys, 2, ok, f"max G - sum d_a = {worst_gap:.4f} (<= 0.1), min over feasible points "
                          f"{worst_dual:.3e} (>= -1e-9), {elapsed:.1f}s (< 60s)")
    assert ok


def richardson_derivative(p, pi, k, rel_step=1e-3):
    """Central difference along coordinate k with one Richardson step.

    Gram matrices near singularity make log-det round-off large, so tiny
    steps are unreliable; a moderate relative step plus extrapolation is
    accurate to O(h^4).
    """
    def central(h):
        up, dn = pi.copy(), pi.copy()
        up[k] += h
        dn[k] -= h
        return (eval_F(p, up) - eval_F(p, dn)) / (2 * h)

    h = rel_step * pi[k]
    return (4 * central(h / 2) - central(h)) / 3


def test_criterion_03_gradient(capsys):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        p = random_design_problem(rng, int(rng.integers(2, 9)), int(rng.integers(2, 6)),
                                  int(rng.integers(2, 5)))
        for _ in range(20):
            pi = random_feasible_weights(rng, p)
            g = gradient_F(p, pi)
            fd = np.array([richardson_derivative(p, pi, k) for k in range(p.size)])
            worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
    ok = worst <= 1e-5
    report(capsys, 3, ok, f"max relative gradient error {worst:.2e} (<= 1e-5) over 200 points")
    assert ok


def test_criterion_04_block_structure(capsys):
    rng = np.random.default_rng(4)
    worst_cross = worst_within = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 8))
        m = int(rng.integers(1, d))
        n = int(rng.integers(1, d - m + 1))
        basis = rng.standard_normal((d, m + n))
        X = basis[:, :m] @ rng.standard_normal((m, int(rng.integers(m, m + 4))))
        Y = basis[:, m:] @ rng.standard_normal((n, int(rng.integers(n, n + 4))))
        P = pinv(X @ X.T + Y @ Y.T)
        PX = pinv(X @ X.T)
        u = X @ rng.standard_normal(X.shape[1])
        v = X @ rng.standard_normal(X.shape[1])
        w = Y @ rng.standard_normal(Y.shape[1])
        u, v, w = (z / np.linalg.norm(z) for z in (u, v, w))
        worst_cross = max(worst_cross, abs(u @ P @ w))
        worst_within = max(worst_within, abs(u @ P @ v - u @ PX @ v) / max(1.0, abs(u @ PX @ v)))
    ok = worst_cross <= 1e-8 and worst_within <= 1e-8
    report(capsys, 4, ok, f"cross-span {worst_cross:.1e}, within-span mismatch {worst_within:.1e} "
                          "(tol 1e-8, unit vectors)")
    assert ok


def test_criterion_05_regret_ordering(capsys, main_runs):
    runs, elapsed = main_runs
    order = ["collaborative", "enhanced", "fed-pe", "local-ucb"]
    finals = {a: np.array([t.final_regret for t in runs[a]]) for a in order}
    n = len(SEEDS)
    lines, ok = [], elapsed < 15 * 60
    for lo, hi in zip(order, order[1:]):
        se = math.sqrt(finals[lo].var(ddof=1) / n + finals[hi].var(ddof=1) / n)
        margin = finals[hi].mean() - finals[lo].mean() - se
        ok &= margin >= 0
        lines.append(f"{lo} {finals[lo].mean():.0f} <= {hi} {finals[hi].mean():.0f} "
                     f"(margin after SE {margin:+.0f})")
    report(capsys, 5, ok, "; ".join(lines) + f"; {elapsed:.0f}s (< 900s)")
    assert ok


def test_criterion_06_regret_vs_clients(capsys):
    base = synth_instance(160, 10, 4, rng=np.random.default_rng(6))
    T = 2 ** 13
    means = []
    for M in (10, 40, 160):
        env = BanditInstance(base.features[:M], base.theta, base.mode, base.noise_std, base.ell,
                             base.L, base.s)
        cfg = make_config(env, "enhanced_fed_pe", T=T)
        means.append(np.mean([run_policy(env, cfg, s).final_regret / M for s in SEEDS]))
    ok = means[0] > means[1] > means[2]
    report(capsys, 6, ok, "per-client regret at M=10, 40, 160: "
                          + ", ".join(f"{m:.0f}" for m in means) + " (strictly decreasing)")
    assert ok


def test_criterion_07_schedules(capsys, env, main_runs):
    exp13 = phase_lengths("exponential", 2 ** 13, env.K)
    exp14 = phase_lengths("exponential", 2 ** 14, env.K)
    counted = make_config(env, "fed_pe", T=2 ** 13)
    trace = run_policy(env, counted, 0)
    count_ok = len(trace.phases) == exp13.H and exp14.H - exp13.H == 1
    greedy = phase_lengths("greedy", T_MAIN, env.K)
    greedy_bound = math.ceil(math.log2(math.log2(T_MAIN)))
    greedy_ok = greedy.H <= greedy_bound

    runs, _ = main_runs
    exp_mean = np.mean([t.final_regret for t in runs["enhanced"]])
    means = {"exponential": exp_mean}
    for kind in ("uniform", "greedy"):
        cfg = make_config(env, "enhanced_fed_pe", kind=kind)
        means[kind] = np.mean([run_policy(env, cfg, s).final_regret for s in SEEDS])
    trade_ok = means["uniform"] <= means["exponential"] <= means["greedy"]
    ok = count_ok and greedy_ok and trade_ok
    report(capsys, 7, ok, f"exponential phases {exp13.H} -> {exp14.H} (recorded {len(trace.phases)}); "
                          f"greedy {greedy.H} <= {greedy_bound}; regret uniform {means['uniform']:.0f}"
                          f" <= exponential {means['exponential']:.0f} <= greedy {means['greedy']:.0f}")
    assert ok


def test_criterion_08_optimal_arm_retention(capsys, env):
    cfg = make_config(env, "fed_pe")
    lost = [run_policy(env, cfg, s).optimal_arm_lost for s in range(200)]
    frac = float(np.mean(lost))
    ok = frac <= 0.15
    report(capsys, 8, ok, f"optimal arm eliminated in {sum(lost)}/200 runs = {frac:.3f} (<= 0.15)")
    assert ok


def test_criterion_09_sparsity(capsys, main_runs):
    runs, _ = main_runs
    levels = [t.phases[-1].sparsity for t in runs["enhanced"]]
    good = sum(s <= 3.0 for s in levels)
    ok = good >= 9
    report(capsys, 9, ok, f"final-phase sparsity <= 3 in {good}/10 seeds (need 9); levels "
                          + ", ".join(f"{s:.2f}" for s in levels))
    assert ok


def test_criterion_10_determinism(capsys, tmp_path):
    inst = tmp_path / "inst.json"
    save_instance(synth_instance(8, 5, 3, rng=np.random.default_rng(10)), inst)
    outputs = {}
    for tag, jobs in (("a", 1), ("b", 1), ("c", 4), ("d", 4)):
        out = tmp_path / tag
        code = main(["run", "--instance", str(inst), "--algo", "fed-pe,enhanced,local-ucb,collaborative",
                     "--T", "3000", "--seeds", "0,1,2", "--jobs", str(jobs), "--out", str(out)])
        assert code == 0
        outputs[tag] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    ok = outputs["a"] == outputs["b"] and outputs["c"] == outputs["d"] and outputs["a"] == outputs["c"]
    report(capsys, 10, ok, f"{len(outputs['a'])} CSV files byte-identical across repeats, "
                           "serial and --jobs 4")
    assert ok
