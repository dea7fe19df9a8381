"""Comparison policies: independent UCB1 per client and full-information collaboration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import DISJOINT, DesignProblem, allocate_pulls, solve_design
from .env import BanditInstance, sample_rewards
from .errors import ConfigError, ProtocolError
from .linalg import pinv_stack
from .protocol import AlgorithmConfig, GlobalModel, client_streams, interval_eliminate
from .schedule import compute_alpha
from .trace import NAIVE, PhaseRecord, Trace, compute_regret, phase_comm, sparsity_level


@dataclass
class UcbState:
    counts: np.ndarray
    sums: np.ndarray
    exploration: float = 2.0

    def index(self, t: int) -> np.ndarray:
        return self.sums / self.counts + np.sqrt(self.exploration * np.log(t) / self.counts)


def local_ucb_run(env: BanditInstance, T: int, seed: int, algo: str = "local-ucb") -> Trace:
    """Every client runs UCB1 on its own arms; nothing is communicated."""
    M, K = env.M, env.K
    if T < 1:
        raise ConfigError("T must be positive")
    rngs = client_streams(seed, M)
    noise = env.noise_std * np.stack([r.standard_normal(T) for r in rngs])
    state = UcbState(np.zeros((M, K)), np.zeros((M, K)))
    pull_log = np.empty((M, T), dtype=np.int16)
    rows = np.arange(M)
    for t in range(T):
        if t < K:
            arms = np.full(M, t)
        else:
            arms = np.argmax(state.index(t), axis=1)
        pull_log[:, t] = arms
        state.counts[rows, arms] += 1
        state.sums[rows, arms] += env.means[rows, arms] + noise[:, t]
    return Trace(algo=algo, seed=seed, cum_regret=compute_regret(env, pull_log),
                 pull_log=pull_log)


def _pooled_model(gram: np.ndarray, moment: np.ndarray) -> GlobalModel:
    V, _ = pinv_stack(gram)
    return GlobalModel(V, np.einsum("kij,kj->ki", V, moment), DISJOINT)


def collaborative_run(env: BanditInstance, config: AlgorithmConfig, seed: int,
                      algo: str = "collaborative") -> Trace:
    """Phase skeleton and design of the federated protocol with raw data at the server.

    The server knows every feature and receives every reward, and
    estimates each arm by least squares on all observations so far. The
    confidence width is ``alpha * ||x||_{V}`` with ``V`` the inverse pooled
    Gram matrix.
    """
    if env.mode != DISJOINT:
        raise ConfigError("collaborative baseline needs a disjoint instance")
    M, K, d, T = env.M, env.K, env.d, config.T
    schedule = config.schedule
    alpha = compute_alpha(M, K, schedule.H, d, config.delta)
    rngs = client_streams(seed, M)
    optimal = env.optimal_sets()
    X = env.features
    directions = X / np.linalg.norm(X, axis=2, keepdims=True)

    gram = np.zeros((K, d, d))
    moment = np.zeros((K, d))
    pull_log = np.empty((M, T), dtype=np.int16)
    pull_log[:, :min(K, T)] = np.arange(min(K, T))
    for i in range(M):
        noise = rngs[i].standard_normal(K)
        for a in range(K):
            y = env.means[i, a] + env.noise_std * noise[a]
            gram[a] += np.outer(X[i, a], X[i, a])
            moment[a] += y * X[i, a]
    model = _pooled_model(gram, moment)

    active = [tuple(range(K))] * M
    best = [0] * M
    records, history, starts = [], [], []
    lost = False
    broadcast_arms = K
    t = K
    for p, f_p in enumerate(schedule.lengths, start=1):
        if t >= T:
            break
        starts.append(t)
        broadcast_entries = sum(len(A) for A in active)
        for i in range(M):
            arms = np.asarray(active[i])
            r, norm_v = model.predict(X[i, arms], arms)
            keep, b = interval_eliminate(r, alpha * norm_v)
            active[i], best[i] = tuple(int(a) for a in arms[keep]), int(arms[b])
            lost = lost or not optimal[i] <= set(active[i])
        history.append(list(active))

        problem = DesignProblem.build(active, directions, DISJOINT, num_arms=K)
        sol = solve_design(problem, config.solver)
        counts = allocate_pulls(sol.pi, f_p)
        length = f_p + K
        end = min(t + length, T)
        truncated = t + length > T
        pulls = 0
        for i, idx in enumerate(problem.client_entries):
            arms, cnt = problem.arms[idx], counts[idx]
            seq = np.repeat(arms, cnt)
            if len(seq) > length:
                raise ProtocolError(f"client {i} allocated {len(seq)} pulls in a phase of {length}")
            row = np.full(length, best[i], dtype=np.int16)
            row[:len(seq)] = seq
            pull_log[i, t:end] = row[:end - t]
            if truncated:
                continue
            for a, n in zip(arms, cnt):
                if n == 0:
                    continue
                y = sample_rewards(env, i, int(a), int(n), rngs[i])
                gram[a] += n * np.outer(X[i, a], X[i, a])
                moment[a] += y.sum() * X[i, a]
                pulls += int(n)

        comm = phase_comm(d, M, 0, int(problem.size), broadcast_arms, broadcast_entries,
                          NAIVE, False)
        # one reward and one arm id per exploration pull
        comm["up_scalars"] = pulls
        comm["up_ints"] += pulls
        if p == 1:
            comm["up_scalars"] += M * K * d + M * K
        records.append(PhaseRecord(p, f_p, sweeps=sol.sweeps, sparsity=sparsity_level(sol.pi, M),
                                   certified=sol.certified, truncated=truncated, **comm))
        if truncated:
            t = T
            break
        model = _pooled_model(gram, moment)
        broadcast_arms = len(set().union(*active))
        t += length

    if t < T:
        for i in range(M):
            pull_log[i, t:] = best[i]
    return Trace(algo=algo, seed=seed, cum_regret=compute_regret(env, pull_log), phases=records,
                 pull_log=pull_log, optimal_arm_lost=lost, active_history=history,
                 phase_starts=starts)
