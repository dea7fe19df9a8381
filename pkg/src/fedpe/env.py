"""Linear bandit environments: generation, file format and reward sampling."""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError, InstanceError

DISJOINT = "disjoint"
SHARED = "shared"
_NORM_SLACK = 1e-9
_REQUIRED = ("d", "K", "M", "mode", "noise_std", "theta", "features", "ell", "L", "s")


@dataclass(frozen=True, eq=False)
class BanditInstance:
    """M clients, K arms, features ``x[i, a]`` and parameters ``theta[a]``.

    In shared mode `theta` holds a single row used by every arm.
    """

    features: np.ndarray
    theta: np.ndarray
    mode: str = DISJOINT
    noise_std: float = 1.0
    ell: float = 0.5
    L: float = 1.0
    s: float = 1.0
    means: np.ndarray = field(init=False, repr=False)
    optimal_arms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        th = np.atleast_2d(np.array(self.theta, dtype=float))
        X.flags.writeable = False
        th.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "theta", th)
        self.validate()
        means = np.einsum("mkd,kd->mk", X, self.arm_parameters)
        means.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "optimal_arms", np.argmax(means, axis=1))

    @property
    def M(self) -> int:
        return self.features.shape[0]

    @property
    def K(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[2]

    @property
    def arm_parameters(self) -> np.ndarray:
        """Parameters broadcast to one row per arm."""
        if self.mode == SHARED:
            return np.broadcast_to(self.theta[0], (self.K, self.d))
        return self.theta

    @property
    def best_means(self) -> np.ndarray:
        return self.means.max(axis=1)

    def optimal_sets(self, tol: float = 1e-12) -> list[set[int]]:
        """Every arm attaining the best mean, per client."""
        best = self.best_means
        return [set(np.flatnonzero(self.means[i] >= best[i] - tol).tolist()) for i in range(self.M)]

    def validate(self):
        X, th = self.features, self.theta
        if self.mode not in (DISJOINT, SHARED):
            raise InstanceError(f"mode: expected 'disjoint' or 'shared', got {self.mode!r}")
        if X.ndim != 3 or min(X.shape) < 1:
            raise InstanceError(f"features: expected shape (M, K, d), got {X.shape}")
        rows = 1 if self.mode == SHARED else X.shape[1]
        if th.shape != (rows, X.shape[2]):
            raise InstanceError(f"theta: expected shape ({rows}, {X.shape[2]}), got {th.shape}")
        if not np.all(np.isfinite(X)):
            raise InstanceError("features: non-finite entry")
        if not np.all(np.isfinite(th)):
            raise InstanceError("theta: non-finite entry")
        if not (math.isfinite(self.noise_std) and self.noise_std >= 0):
            raise InstanceError(f"noise_std: must be a nonnegative real, got {self.noise_std}")
        if not 0 < self.ell <= self.L:
            raise InstanceError(f"ell: need 0 < ell <= L, got ell={self.ell}, L={self.L}")
        norms = np.linalg.norm(X, axis=2)
        bad = (norms < self.ell * (1 - _NORM_SLACK)) | (norms > self.L * (1 + _NORM_SLACK))
        if bad.any():
            i, a = map(int, np.argwhere(bad)[0])
            raise InstanceError(f"features: row for client {i}, arm {a} has norm {norms[i, a]:.6g} "
                                f"outside the norm bound [ell, L] = [{self.ell}, {self.L}]")
        tn = np.linalg.norm(th, axis=1)
        if np.any(tn > self.s * (1 + _NORM_SLACK)):
            a = int(np.argmax(tn > self.s * (1 + _NORM_SLACK)))
            raise InstanceError(f"theta: row {a} has norm {tn[a]:.6g} above s = {self.s}")
        if self.noise_std > 1:
            warnings.warn(f"noise_std={self.noise_std} exceeds 1; the 1-subgaussian "
                          "noise assumption does not hold", stacklevel=3)

    def to_dict(self) -> dict:
        return {
            "d": self.d, "K": self.K, "M": self.M, "mode": self.mode,
            "noise_std": self.noise_std,
            "theta": self.theta.tolist(),
            "features": self.features.reshape(-1, self.d).tolist(),
            "ell": self.ell, "L": self.L, "s": self.s,
        }

    def __eq__(self, other):
        if not isinstance(other, BanditInstance):
            return NotImplemented
        return (self.mode == other.mode and self.noise_std == other.noise_std
                and (self.ell, self.L, self.s) == (other.ell, other.L, other.s)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.theta, other.theta))

    __hash__ = None


def sample_reward(instance: BanditInstance, i: int, a: int, rng: np.random.Generator) -> float:
    """Expected reward plus Gaussian noise drawn from `rng`."""
    return float(instance.means[i, a] + instance.noise_std * rng.standard_normal())


def sample_rewards(instance: BanditInstance, i: int, a: int, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    return instance.means[i, a] + instance.noise_std * rng.standard_normal(n)


def _arm_parameters(K: int, d: int, rng) -> np.ndarray:
    if d <= K:
        return np.eye(d)[np.arange(K) % d]
    th = rng.standard_normal((K, d))
    return th / np.linalg.norm(th, axis=1, keepdims=True)


def _feature_with_reward(theta, r, norm, rng):
    """A vector of the given norm whose inner product with unit `theta` is `r`."""
    x = r * theta
    rest = norm ** 2 - r ** 2
    if rest > 0:
        u = rng.standard_normal(theta.shape[0])
        u -= (u @ theta) * theta
        nu = np.linalg.norm(u)
        if nu < 1e-12:
            return None
        x = x + math.sqrt(rest) * u / nu
    return x


def _client_features(thetas, gap_min, gap_max, ell, L, rng):
    K, d = thetas.shape
    best = int(rng.integers(K))
    r_best = rng.uniform(min(gap_max, L), L)
    rewards = r_best - rng.uniform(gap_min, gap_max, K)
    rewards[best] = r_best
    if d == 1 and np.any(np.abs(rewards) < ell):
        return None
    X = np.empty((K, d))
    for a in range(K):
        lo = max(ell, abs(rewards[a]))
        if lo > L:
            return None
        x = _feature_with_reward(thetas[a], rewards[a], rng.uniform(lo, L) if d > 1 else lo, rng)
        if x is None:
            return None
        X[a] = x
    return X


def synth_instance(M: int, K: int, d: int, gap_min: float = 0.2, gap_max: float = 0.4,
                   ell: float = 0.5, L: float = 1.0, rng: np.random.Generator | None = None,
                   noise_std: float = 1.0, mode: str = DISJOINT,
                   max_retries: int = 1000) -> BanditInstance:
    """Random instance whose per-client suboptimality gaps lie in ``[gap_min, gap_max]``.

    Arm parameters are canonical basis vectors (cycled) when ``d <= K`` and
    random unit vectors otherwise; shared mode uses one parameter for all
    arms. Each client's rewards are drawn first, then features with those
    rewards and norms in ``[ell, L]`` are constructed.
    """
    if not 0 < gap_min <= gap_max:
        raise GenerationError(f"need 0 < gap_min <= gap_max, got {gap_min}, {gap_max}")
    if not 0 < ell <= L:
        raise GenerationError(f"need 0 < ell <= L, got ell={ell}, L={L}")
    if min(M, K, d) < 1:
        raise GenerationError("M, K and d must be positive")
    rng = np.random.default_rng() if rng is None else rng
    if mode == SHARED:
        th = rng.standard_normal(d)
        theta = (th / np.linalg.norm(th))[None]
        per_arm = np.repeat(theta, K, axis=0)
    else:
        theta = _arm_parameters(K, d, rng)
        per_arm = theta
    X = np.empty((M, K, d))
    for i in range(M):
        for _ in range(max_retries):
            xi = _client_features(per_arm, gap_min, gap_max, ell, L, rng)
            if xi is not None:
                X[i] = xi
                break
        else:
            raise GenerationError(
                f"client {i}: no features with gaps in [{gap_min}, {gap_max}] and norms in "
                f"[{ell}, {L}] after {max_retries} attempts (d={d}, K={K})")
    s = float(np.linalg.norm(theta, axis=1).max())
    return BanditInstance(X, theta, mode, noise_std, ell, L, s)


def save_instance(instance: BanditInstance, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(instance.to_dict(), fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def _int_field(doc, name):
    v = doc[name]
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise InstanceError(f"{name}: expected a positive integer, got {v!r}")
    return v


def _real_field(doc, name):
    v = doc[name]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InstanceError(f"{name}: expected a real number, got {v!r}")
    return float(v)


def _matrix_field(doc, name, rows, cols):
    try:
        A = np.array(doc[name], dtype=float)
    except (TypeError, ValueError):
        raise InstanceError(f"{name}: expected a list of numeric rows") from None
    if A.shape != (rows, cols):
        raise InstanceError(f"{name}: expected {rows} rows of {cols} reals, got shape {A.shape}")
    return A


def instance_from_dict(doc: dict) -> BanditInstance:
    if not isinstance(doc, dict):
        raise InstanceError("instance file must hold a JSON object")
    for name in _REQUIRED:
        if name not in doc:
            raise InstanceError(f"{name}: missing field")
    d, K, M = (_int_field(doc, k) for k in ("d", "K", "M"))
    mode = doc["mode"]
    if mode not in (DISJOINT, SHARED):
        raise InstanceError(f"mode: expected 'disjoint' or 'shared', got {mode!r}")
    noise_std = _real_field(doc, "noise_std")
    theta = _matrix_field(doc, "theta", 1 if mode == SHARED else K, d)
    features = _matrix_field(doc, "features", M * K, d).reshape(M, K, d)
    ell, L, s = (_real_field(doc, k) for k in ("ell", "L", "s"))
    return BanditInstance(features, theta, mode, noise_std, ell, L, s)


def load_instance(path) -> BanditInstance:
    """Read and validate an instance file; errors name the first bad field."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"could not parse {path}: {exc}") from None
    return instance_from_dict(doc)
