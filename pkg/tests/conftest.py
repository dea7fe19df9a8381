import itertools

import numpy as np
import pytest


def random_psd(rng, dim, rank):
    """Random PSD matrix of exact rank `rank`: Haar-like eigenvectors, eigenvalues in [0.1, 10]."""
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    w = rng.uniform(0.1, 10.0, rank)
    return (Q[:, :rank] * w) @ Q[:, :rank].T


def brute_collinear(vectors, x, y, tol=1e-9):
    """Exhaustive check of the collinear relation over every subset S."""
    V = np.asarray(vectors, dtype=float)
    n = len(V)

    def in_span(v, idx):
        if not idx:
            return np.linalg.norm(v) <= tol
        B = V[list(idx)].T
        c, *_ = np.linalg.lstsq(B, v, rcond=None)
        return np.linalg.norm(B @ c - v) <= tol * max(1.0, np.linalg.norm(v))

    for r in range(n + 1):
        for S in itertools.combinations(range(n), r):
            if not in_span(V[x], S) and in_span(V[x], S + (y,)):
                return True
    return False


def brute_classes(vectors):
    n = len(vectors)
    seen, classes = set(), []
    for i in range(n):
        if i in seen:
            continue
        cls = [j for j in range(n) if brute_collinear(vectors, i, j)]
        seen.update(cls)
        classes.append(sorted(cls))
    return sorted(classes, key=lambda c: c[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_design_problem(rng, M, K, d, mode="disjoint", rank=None):
    """Random active sets with directions drawn from a subspace of dimension `rank`."""
    from fedpe.design import DesignProblem

    rank = d if rank is None else rank
    basis = rng.standard_normal((rank, d))
    dirs = rng.standard_normal((M, K, rank)) @ basis
    sets = [sorted(rng.choice(K, size=int(rng.integers(1, K + 1)), replace=False)) for _ in range(M)]
    return DesignProblem.build(sets, dirs, mode, num_arms=K)


def random_feasible_weights(rng, problem):
    """Dirichlet draw per client; strictly positive, hence rank preserving."""
    pi = np.empty(problem.size)
    for idx in problem.client_entries:
        pi[idx] = rng.dirichlet(np.ones(len(idx)))
    return pi
