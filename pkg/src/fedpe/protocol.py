"""Federated phased elimination: client and server steps and the phase loop.

Each phase the server broadcasts per-arm global estimates and potential
matrices, clients eliminate arms whose upper confidence bound falls below
the best lower bound, the server solves a multi-client design over the
surviving arms, clients pull accordingly and upload one local estimate
per explored arm, and the server aggregates. Clients pad every phase to
``f^p + K`` rounds with their estimated best arm so all stay in step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .design import DISJOINT, SHARED, DesignProblem, SolverConfig, allocate_pulls, solve_design
from .env import BanditInstance, sample_rewards
from .errors import ConfigError, ProtocolError
from .linalg import pinv_stack
from .schedule import PhaseSchedule, compute_alpha
from .trace import NAIVE, REDUCED, PhaseRecord, Trace, compute_regret, phase_comm, sparsity_level

FED_PE = "fed_pe"
ENHANCED = "enhanced_fed_pe"
SHARED_FED_PE = "shared_fed_pe"
VARIANTS = (FED_PE, ENHANCED, SHARED_FED_PE)


@dataclass(frozen=True)
class AlgorithmConfig:
    variant: str
    T: int
    delta: float
    schedule: PhaseSchedule
    ell: float | None = None
    comm_mode: str = NAIVE
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.comm_mode not in (NAIVE, REDUCED):
            raise ConfigError(f"unknown comm mode {self.comm_mode!r}")
        if self.ell is not None and not self.ell > 0:
            raise ConfigError("ell must be positive")
        if self.schedule.T != self.T:
            raise ConfigError(f"schedule horizon {self.schedule.T} differs from T={self.T}")
        K = self.schedule.K
        if self.T < 2 * K + self.schedule.lengths[0]:
            raise ConfigError(f"T={self.T} does not fit initialization and one full phase")

    @property
    def mode(self) -> str:
        return SHARED if self.variant == SHARED_FED_PE else DISJOINT


@dataclass
class GlobalModel:
    """Potential matrices and estimates, one per arm or a single pooled pair."""

    V: np.ndarray
    theta: np.ndarray
    mode: str = DISJOINT

    def group(self, arms):
        return np.asarray(arms) if self.mode == DISJOINT else np.zeros(len(arms), dtype=int)

    def predict(self, X: np.ndarray, arms) -> tuple[np.ndarray, np.ndarray]:
        """Estimated rewards and ``||x||_V`` for rows of `X` paired with `arms`."""
        g = self.group(arms)
        r = np.einsum("nd,nd->n", X, self.theta[g])
        q = np.einsum("nd,nde,ne->n", X, self.V[g], X)
        return r, np.sqrt(np.maximum(q, 0.0))


@dataclass
class ClientState:
    client_id: int
    features: np.ndarray
    active: tuple[int, ...]
    best_arm: int = 0
    # running sums for the refined interval: sum r f, sum sigma^2 f^2, sum f
    sum_rf: np.ndarray | None = None
    sum_s2f2: np.ndarray | None = None
    sum_f: np.ndarray | None = None

    def __post_init__(self):
        K = self.features.shape[0]
        if self.sum_rf is None:
            self.sum_rf = np.zeros(K)
            self.sum_s2f2 = np.zeros(K)
            self.sum_f = np.zeros(K)


@dataclass
class ServerState:
    phase: int
    directions: np.ndarray
    model: GlobalModel
    broadcast_arms: tuple[int, ...]


def local_estimate(rewards, x) -> np.ndarray:
    """Mean reward times ``x / ||x||^2``: least squares along the feature."""
    x = np.asarray(x, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    return (rewards.sum() / rewards.size) * x / float(x @ x)


def unit_direction(theta_hat, x) -> np.ndarray:
    """Normalised local estimate; falls back to the feature direction when it is zero."""
    n = np.linalg.norm(theta_hat)
    if n > 0:
        return np.asarray(theta_hat) / n
    x = np.asarray(x, dtype=float)
    e = x / np.linalg.norm(x)
    lead = np.flatnonzero(e)[0]
    return e if e[lead] > 0 else -e


def explore_and_estimate(env: BanditInstance, i: int, a: int, pulls: int,
                         rng: np.random.Generator):
    """Pull arm `a` `pulls` times at client `i`; None when nothing is pulled."""
    if pulls <= 0:
        return None
    return local_estimate(sample_rewards(env, i, a, pulls, rng), env.features[i, a])


def aggregate(uploads, directions: np.ndarray, num_arms: int, mode: str = DISJOINT,
              required=None) -> GlobalModel:
    """Combine uploads ``(i, a, theta_hat, f)`` into a global model.

    Per arm: ``V = (sum f e e^T)^+`` over uploading clients, with ``e`` the
    stored unit direction, and ``theta = V sum f theta_hat``. Shared mode
    pools every arm into one matrix. Arms in `required` must have at
    least one upload.
    """
    d = directions.shape[-1]
    G = num_arms if mode == DISJOINT else 1
    W = np.zeros((G, d, d))
    b = np.zeros((G, d))
    seen = set()
    for i, a, th, f in uploads:
        if f <= 0:
            raise ProtocolError(f"upload from client {i} for arm {a} has no pulls")
        e = directions[i, a]
        g = a if mode == DISJOINT else 0
        W[g] += f * np.outer(e, e)
        b[g] += f * np.asarray(th)
        seen.add(a)
    if required is not None:
        missing = sorted(set(required) - seen)
        if missing:
            raise ProtocolError(f"no uploads for active arms {missing}")
    V, _ = pinv_stack(W)
    theta = np.einsum("gij,gj->gi", V, b)
    return GlobalModel(V, theta, mode)


def interval_eliminate(r, u):
    """Keep arms whose upper bound reaches the lower bound of the estimated best.

    Returns ``(keep mask, index of estimated best)``; ties go to the lowest index.
    """
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    best = int(np.argmax(r))
    return r + u >= r[best] - u[best], best


def refined_interval(sum_rf, sum_s2f2, sum_f, M: int, K: int, d: int, delta: float):
    """History-weighted reward estimate and its width."""
    r_bar = sum_rf / sum_f
    s_bar2 = d * K / M + sum_s2f2
    a_bar = np.sqrt(np.log(M ** 3 * K * s_bar2 / (d * delta ** 2)))
    return r_bar, a_bar * np.sqrt(s_bar2) / sum_f


@dataclass(frozen=True)
class EnhancedParams:
    M: int
    K: int
    d: int
    delta: float
    f_prev: int


def eliminate_arms(client: ClientState, model: GlobalModel, alpha: float, ell: float,
                   enhanced: EnhancedParams | None = None) -> tuple[tuple[int, ...], int]:
    """New active set and estimated best arm for one client.

    With `enhanced` set, the client first folds this phase's estimate into
    its running history (weight ``f_prev``) and tests the refined interval.
    """
    arms = np.asarray(client.active)
    r, norm_v = model.predict(client.features[arms], arms)
    if enhanced is None:
        keep, best = interval_eliminate(r, alpha * norm_v / ell)
    else:
        f = enhanced.f_prev
        client.sum_rf[arms] += r * f
        client.sum_s2f2[arms] += (norm_v / ell) ** 2 * f * f
        client.sum_f[arms] += f
        r_bar, u_bar = refined_interval(client.sum_rf[arms], client.sum_s2f2[arms],
                                        client.sum_f[arms], enhanced.M, enhanced.K,
                                        enhanced.d, enhanced.delta)
        keep, best = interval_eliminate(r_bar, u_bar)
    return tuple(int(a) for a in arms[keep]), int(arms[best])


def initialize(env: BanditInstance, rngs, mode: str = DISJOINT):
    """Every client pulls every arm once; the server stores directions and builds the first model.

    Initial aggregation weights each estimate by one pull, the same rule
    as every later phase.
    """
    M, K, d = env.M, env.K, env.d
    directions = np.empty((M, K, d))
    uploads = []
    for i in range(M):
        noise = rngs[i].standard_normal(K)
        for a in range(K):
            y = env.means[i, a] + env.noise_std * noise[a]
            th = local_estimate([y], env.features[i, a])
            directions[i, a] = unit_direction(th, env.features[i, a])
            uploads.append((i, a, th, 1))
    model = aggregate(uploads, directions, K, mode)
    server = ServerState(phase=1, directions=directions, model=model,
                         broadcast_arms=tuple(range(K)))
    clients = [ClientState(i, env.features[i], tuple(range(K))) for i in range(M)]
    return server, clients


def client_streams(seed: int, M: int) -> list[np.random.Generator]:
    """Independent per-client generators derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(M)]


def run_policy(env: BanditInstance, config: AlgorithmConfig, seed: int,
               algo: str | None = None) -> Trace:
    """Run one variant for T rounds and return its trace."""
    M, K, d, T = env.M, env.K, env.d, config.T
    schedule = config.schedule
    if schedule.K != K:
        raise ConfigError(f"schedule built for K={schedule.K}, instance has K={K}")
    if (env.mode == SHARED) != (config.mode == SHARED):
        raise ConfigError(f"variant {config.variant} needs a {config.mode} instance, got {env.mode}")
    ell = env.ell if config.ell is None else config.ell
    alpha = compute_alpha(M, K, schedule.H, d, config.delta, shared=config.mode == SHARED)
    rngs = client_streams(seed, M)
    optimal = env.optimal_sets()

    pull_log = np.empty((M, T), dtype=np.int16)
    pull_log[:, :min(K, T)] = np.arange(min(K, T))
    server, clients = initialize(env, rngs, config.mode)
    records: list[PhaseRecord] = []
    history: list[list[tuple[int, ...]]] = []
    starts: list[int] = []
    lost = False
    t = K
    prev_f = 1
    for p, f_p in enumerate(schedule.lengths, start=1):
        if t >= T:
            break
        starts.append(t)
        broadcast_entries = sum(len(c.active) for c in clients)
        enh = EnhancedParams(M, K, d, config.delta, prev_f) if config.variant == ENHANCED else None
        for c in clients:
            c.active, c.best_arm = eliminate_arms(c, server.model, alpha, ell, enh)
            lost = lost or not optimal[c.client_id] <= set(c.active)
        history.append([c.active for c in clients])

        problem = DesignProblem.build([c.active for c in clients], server.directions,
                                      config.mode, num_arms=K)
        sol = solve_design(problem, config.solver)
        counts = allocate_pulls(sol.pi, f_p)

        length = f_p + K
        end = min(t + length, T)
        truncated = t + length > T
        uploads = []
        for c, idx in zip(clients, problem.client_entries):
            i = c.client_id
            arms, cnt = problem.arms[idx], counts[idx]
            seq = np.repeat(arms, cnt)
            if len(seq) > length:
                raise ProtocolError(f"client {i} allocated {len(seq)} pulls in a phase of {length}")
            row = np.full(length, c.best_arm, dtype=np.int16)
            row[:len(seq)] = seq
            pull_log[i, t:end] = row[:end - t]
            if truncated:
                continue
            for a, n in zip(arms, cnt):
                th = explore_and_estimate(env, i, int(a), int(n), rngs[i])
                if th is not None:
                    uploads.append((i, int(a), th, int(n)))

        union = sorted(set().union(*(c.active for c in clients)))
        comm = phase_comm(d, M, len(uploads), int(problem.size), len(server.broadcast_arms),
                          broadcast_entries, config.comm_mode, config.mode == SHARED)
        if p == 1:
            # initial uploads ride on the first phase record
            comm["up_scalars"] += M * K * (d if config.comm_mode == NAIVE else 1)
        records.append(PhaseRecord(p, f_p, sweeps=sol.sweeps,
                                   sparsity=sparsity_level(sol.pi, M),
                                   certified=sol.certified, truncated=truncated, **comm))
        if truncated:
            t = T
            break
        server.model = aggregate(uploads, server.directions, K, config.mode, required=union)
        server.broadcast_arms = tuple(union)
        server.phase = p + 1
        t += length
        prev_f = f_p

    if t < T:
        for c in clients:
            pull_log[c.client_id, t:] = c.best_arm
    return Trace(algo=algo or config.variant, seed=seed,
                 cum_regret=compute_regret(env, pull_log), phases=records,
                 pull_log=pull_log, optimal_arm_lost=lost, active_history=history,
                 phase_starts=starts)
