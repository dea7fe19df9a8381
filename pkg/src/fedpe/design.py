"""Multi-client G-optimal design.

Each client ``i`` holds a distribution over its active arms; the design
matrix of arm ``a`` (disjoint mode) pools the weighted outer products of
the unit directions of every client that still has ``a`` active. In
shared mode all arms pool into one matrix.

The G objective sums, over clients, the worst quadratic form
``e^T (U)^+ e`` across that client's arms. It is minimised by maximising
the log pseudo-determinant objective F, and a point is certified optimal
when ``G <= sum of ranks + epsilon``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from .linalg import InvalidInputError, pinv_stack, rank_of_set

DISJOINT = "disjoint"
SHARED = "shared"

# weights at or below this count as zero when allocating pulls and counting support
ZERO_WEIGHT = 1e-9
# kept above ZERO_WEIGHT so a floored entry still receives a pull
_SOLE_FLOOR = 1e-8


class RankViolationError(ValueError):
    """Weights dropped the rank of a design matrix below that of its directions."""


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 0.1
    max_sweeps: int = 500
    bisection_tol: float = 1e-12
    rank_tol: float | None = None
    refresh_every: int = 25

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if not self.bisection_tol > 0:
            raise ValueError("bisection_tol must be positive")
        if self.rank_tol is not None and self.rank_tol < 0:
            raise ValueError("rank_tol must be nonnegative")


@dataclass(frozen=True, eq=False)
class DesignProblem:
    """Flat representation: one entry per (client, active arm), client-major.

    Use :meth:`build` rather than the constructor.
    """

    clients: np.ndarray
    arms: np.ndarray
    directions: np.ndarray
    num_clients: int
    num_arms: int
    mode: str = DISJOINT

    @classmethod
    def build(cls, active_sets: Sequence[Sequence[int]], directions, mode: str = DISJOINT,
              num_arms: int | None = None) -> "DesignProblem":
        """Create a problem from per-client active sets.

        `directions` is either an array indexed ``[i, a]`` (shape
        ``(M, K, d)``) or a mapping ``(i, a) -> vector``. Directions are
        normalised; zero directions are rejected.
        """
        if mode not in (DISJOINT, SHARED):
            raise InvalidInputError(f"unknown design mode {mode!r}")
        clients, arms = [], []
        for i, A in enumerate(active_sets):
            A = sorted(set(int(a) for a in A))
            if not A:
                raise InvalidInputError(f"client {i} has an empty active set")
            clients.extend([i] * len(A))
            arms.extend(A)
        clients, arms = np.asarray(clients), np.asarray(arms)
        if isinstance(directions, Mapping):
            dirs = np.array([directions[(int(i), int(a))] for i, a in zip(clients, arms)], dtype=float)
        else:
            dirs = np.asarray(directions, dtype=float)[clients, arms]
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(norms == 0.0):
            k = int(np.flatnonzero(norms == 0.0)[0])
            raise InvalidInputError(f"direction ({clients[k]}, {arms[k]}) is zero")
        K = int(arms.max()) + 1 if num_arms is None else int(num_arms)
        return cls(clients, arms, dirs / norms[:, None], len(active_sets), K, mode)

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    @property
    def size(self) -> int:
        return len(self.clients)

    @cached_property
    def client_starts(self) -> np.ndarray:
        return np.searchsorted(self.clients, np.arange(self.num_clients))

    @cached_property
    def client_entries(self) -> list[np.ndarray]:
        bounds = list(self.client_starts) + [self.size]
        return [np.arange(bounds[i], bounds[i + 1]) for i in range(self.num_clients)]

    @cached_property
    def groups(self) -> np.ndarray:
        """Design-matrix index of each entry: the arm, or 0 in shared mode."""
        return self.arms.copy() if self.mode == DISJOINT else np.zeros_like(self.arms)

    @property
    def num_groups(self) -> int:
        return self.num_arms if self.mode == DISJOINT else 1

    @cached_property
    def _rank_cache(self) -> dict:
        return {}

    def group_ranks(self, tol: float | None = None) -> np.ndarray:
        """Rank of the unweighted directions of each design matrix (``d_a`` or ``D``)."""
        if tol not in self._rank_cache:
            ranks = np.zeros(self.num_groups, dtype=int)
            for g in np.unique(self.groups):
                ranks[g] = rank_of_set(self.directions[self.groups == g], tol)
            self._rank_cache[tol] = ranks
        return self._rank_cache[tol].copy()

    def uniform_weights(self) -> np.ndarray:
        counts = np.bincount(self.clients, minlength=self.num_clients)
        return 1.0 / counts[self.clients]

    def weights_by_client(self, pi) -> list[dict[int, float]]:
        out: list[dict[int, float]] = [{} for _ in range(self.num_clients)]
        for c, a, w in zip(self.clients, self.arms, pi):
            out[int(c)][int(a)] = float(w)
        return out

    def check_weights(self, pi) -> np.ndarray:
        pi = np.asarray(pi, dtype=float)
        if pi.shape != (self.size,):
            raise InvalidInputError(f"weights have shape {pi.shape}, expected ({self.size},)")
        return pi


@dataclass
class DesignSolution:
    pi: np.ndarray
    per_arm_rank: np.ndarray
    objective_G: float
    objective_F: float
    sweeps: int
    certified: bool

    @property
    def rank_total(self) -> int:
        return int(self.per_arm_rank.sum())


def gram_matrices(problem: DesignProblem, pi) -> np.ndarray:
    """Weighted design matrices, shape ``(num_groups, d, d)``."""
    E = problem.directions
    U = np.zeros((problem.num_groups, problem.dim, problem.dim))
    np.add.at(U, problem.groups, pi[:, None, None] * E[:, :, None] * E[:, None, :])
    return U


def _quad_forms(problem: DesignProblem, V: np.ndarray) -> np.ndarray:
    E = problem.directions
    VE = np.einsum("nij,nj->ni", V[problem.groups], E)
    return np.einsum("ni,ni->n", E, VE)


def _worst_per_client(problem: DesignProblem, q: np.ndarray) -> np.ndarray:
    return np.maximum.reduceat(q, problem.client_starts)


def _evaluate(problem: DesignProblem, pi, rank_tol):
    """Pseudo-inverse stack and F, raising when a design matrix lost rank."""
    U = gram_matrices(problem, pi)
    w, Q = np.linalg.eigh(U)
    if rank_tol is None:
        cut = problem.dim * np.finfo(float).eps * np.abs(w).max(axis=-1, keepdims=True)
    else:
        cut = np.full((len(w), 1), rank_tol)
    keep = w > cut
    ranks = keep.sum(axis=-1)
    need = problem.group_ranks(rank_tol)
    used = np.unique(problem.groups)
    bad = [g for g in used if ranks[g] < need[g]]
    if not bad and np.any(pi <= 0):
        # a zero weight can hide behind round-off in the eigenvalues
        support = pi > 0
        bad = [g for g in used if rank_of_set(
            problem.directions[(problem.groups == g) & support], rank_tol) < need[g]]
    if bad:
        g = bad[0]
        raise RankViolationError(f"design matrix {g} lost rank: {need[g]} required")
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    V = np.einsum("gik,gk,gjk->gij", Q, inv_w, Q)
    F = float(np.sum(np.log(np.where(keep, w, 1.0))[used]))
    return V, F


def eval_G(problem: DesignProblem, pi, rank_tol: float | None = None) -> float:
    """Sum over clients of the largest quadratic form among its active arms."""
    V, _ = _evaluate(problem, problem.check_weights(pi), rank_tol)
    return float(_worst_per_client(problem, _quad_forms(problem, V)).sum())


def eval_F(problem: DesignProblem, pi, rank_tol: float | None = None) -> float:
    """Sum of log pseudo-determinants of the design matrices in use."""
    return _evaluate(problem, problem.check_weights(pi), rank_tol)[1]


def gradient_F(problem: DesignProblem, pi, rank_tol: float | None = None) -> np.ndarray:
    """Coordinate gradient of F: ``e^T U^+ e`` for every entry."""
    V, _ = _evaluate(problem, problem.check_weights(pi), rank_tol)
    return _quad_forms(problem, V)


def solve_block_subproblem(gains, current, tol: float = 1e-12) -> np.ndarray:
    """Maximise ``sum log(1 + w_a g_a)`` over shifts with ``sum w = 0``.

    Box constraints ``-current_a <= w_a <= 1 - current_a``. Stationarity
    gives ``w_a = clip(t - 1/g_a)`` for a multiplier ``t``; the constraint
    sum is piecewise linear and nondecreasing in ``t``, so the root is
    located among the sorted breakpoints and interpolated exactly.
    """
    g = np.maximum(np.asarray(gains, dtype=float), 1e-300)
    p = np.asarray(current, dtype=float)
    if len(g) < 2:
        return np.zeros_like(p)
    lo_b, hi_b = -p, 1.0 - p
    inv_g = 1.0 / g
    bp = np.sort(np.concatenate([inv_g + lo_b, inv_g + hi_b]))
    S = np.minimum(np.maximum(bp[:, None] - inv_g, lo_b), hi_b).sum(axis=1)
    k = int(np.searchsorted(S, 0.0))
    if k == 0:
        t = bp[0]
    elif k >= len(bp):
        t = bp[-1]
    elif S[k] > S[k - 1]:
        t = bp[k - 1] - S[k - 1] * (bp[k] - bp[k - 1]) / (S[k] - S[k - 1])
    else:
        t = bp[k]
    w = np.minimum(np.maximum(t - inv_g, lo_b), hi_b)

    resid = w.sum()
    if abs(resid) > tol:
        # spread round-off over coordinates strictly inside the box
        free = (w > lo_b) & (w < hi_b)
        if free.any():
            w[free] -= resid / free.sum()
            w = np.minimum(np.maximum(w, lo_b), hi_b)
    return w


def allocate_pulls(pi, f_p: int, threshold: float = ZERO_WEIGHT) -> np.ndarray:
    """``ceil(pi * f_p)`` per entry; weights at or below `threshold` get no pulls."""
    pi = np.asarray(pi, dtype=float)
    # absorbs representation error such as 0.3 * 10 = 3.0000000000000004
    counts = np.ceil(pi * f_p - 1e-9).astype(int)
    counts[pi <= threshold] = 0
    return np.maximum(counts, 0)


def solve_design(problem: DesignProblem, config: SolverConfig | None = None,
                 callback: Callable[[np.ndarray, np.ndarray], None] | None = None) -> DesignSolution:
    """Solve the multi-client design, disjoint mode by block coordinate ascent.

    Starts from uniform weights per client. Stops once G is within
    ``config.epsilon`` of the rank total, or after ``max_sweeps`` sweeps
    with the best iterate (``certified=False``). `callback` receives the
    weights and the maintained pseudo-inverse stack after every update.
    """
    config = config or SolverConfig()
    if problem.mode == DISJOINT:
        return _bca(problem, config, callback)
    return _projected_ascent(problem, config, callback)


def _bca(problem, config, callback):
    E = problem.directions
    groups = problem.groups
    pi = problem.uniform_weights()
    ranks = problem.group_ranks(config.rank_tol)
    target = float(ranks.sum()) + config.epsilon

    V, _ = pinv_stack(gram_matrices(problem, pi), config.rank_tol)
    G = float(_worst_per_client(problem, _quad_forms(problem, V)).sum())
    best_G, best_pi = G, pi.copy()
    sweeps = 0
    blocks = [idx for idx in problem.client_entries if len(idx) > 1]
    while G > target and sweeps < config.max_sweeps and blocks:
        for idx in blocks:
            e = E[idx]
            Va = V[groups[idx]]
            Ve = np.einsum("nij,nj->ni", Va, e)
            g = np.einsum("ni,ni->n", e, Ve)
            p = pi[idx]
            w = solve_block_subproblem(g, p, config.bisection_tol)
            sole = p * g >= 1.0 - 1e-9
            if sole.any():
                w = _apply_floor(w, p, sole)
            denom = 1.0 + w * g
            V[groups[idx]] = Va - (w / denom)[:, None, None] * Ve[:, :, None] * Ve[:, None, :]
            pi[idx] = p + w
            if callback is not None:
                callback(pi, V)
        sweeps += 1
        if sweeps % config.refresh_every == 0:
            V, _ = pinv_stack(gram_matrices(problem, pi), config.rank_tol)
        G = float(_worst_per_client(problem, _quad_forms(problem, V)).sum())
        if G < best_G:
            best_G, best_pi = G, pi.copy()
    if G > best_G:
        pi, G = best_pi, best_G
    return _finish(problem, pi, ranks, sweeps, target, config)


def _apply_floor(w, p, sole):
    new = p + w
    lift = sole & (new < _SOLE_FLOOR)
    if not lift.any():
        return w
    deficit = float((_SOLE_FLOOR - new[lift]).sum())
    new[lift] = _SOLE_FLOOR
    new[int(np.argmax(new))] -= deficit
    return new - p


def _finish(problem, pi, ranks, sweeps, target, config):
    V, F = _evaluate(problem, pi, config.rank_tol)
    G = float(_worst_per_client(problem, _quad_forms(problem, V)).sum())
    return DesignSolution(pi=pi, per_arm_rank=ranks, objective_G=G, objective_F=F,
                          sweeps=sweeps, certified=G <= target)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def _shared_state(problem, pi, need, rank_tol):
    U = gram_matrices(problem, pi)[0]
    w, Q = np.linalg.eigh(U)
    cut = problem.dim * np.finfo(float).eps * np.abs(w).max() if rank_tol is None else rank_tol
    keep = w > cut
    if keep.sum() < need:
        return -math.inf, None, None
    Qk = Q[:, keep]
    V = ((Qk / w[keep]) @ Qk.T)[None]
    q = _quad_forms(problem, V)
    return float(np.sum(np.log(w[keep]))), q, V


def _projected_ascent(problem, config, callback):
    pi = problem.uniform_weights()
    ranks = problem.group_ranks(config.rank_tol)
    need = int(ranks[0])
    target = need + config.epsilon
    entries = problem.client_entries
    F, q, V = _shared_state(problem, pi, need, config.rank_tol)
    G = float(_worst_per_client(problem, q).sum())
    step = 1.0 / float(q.max())
    sweeps = 0
    while G > target and sweeps < config.max_sweeps:
        accepted = False
        for _ in range(60):
            cand = pi + step * q
            for idx in entries:
                cand[idx] = project_simplex(cand[idx])
            Fc, qc, Vc = _shared_state(problem, cand, need, config.rank_tol)
            if Fc >= F + 1e-4 * float(q @ (cand - pi)) and Fc > -math.inf:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        pi, F, q, V = cand, Fc, qc, Vc
        step *= 2.0
        sweeps += 1
        if callback is not None:
            callback(pi, V)
        G = float(_worst_per_client(problem, q).sum())
    return _finish(problem, pi, ranks, sweeps, target, config)
