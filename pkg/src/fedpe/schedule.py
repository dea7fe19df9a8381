"""Phase-length schedules and the confidence-width constant."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError

UNIFORM = "uniform"
EXPONENTIAL = "exponential"
GREEDY = "greedy"


@dataclass(frozen=True)
class PhaseSchedule:
    """Exploration lengths ``f^1..f^H``; phase ``p`` lasts ``f^p + K`` rounds."""

    kind: str
    lengths: tuple[int, ...]
    T: int
    K: int
    c: float = 1.0
    n: float = 2.0

    @property
    def H(self) -> int:
        return len(self.lengths)

    def phase_bounds(self) -> list[tuple[int, int]]:
        """``[start, end)`` rounds of each phase, clipped to the horizon."""
        out, t = [], self.K
        for f in self.lengths:
            out.append((min(t, self.T), min(t + f + self.K, self.T)))
            t += f + self.K
        return out


def _check(T: int, K: int):
    if K < 1:
        raise ConfigError("K must be positive")
    if T < 2 * K:
        raise ConfigError(f"horizon T={T} is shorter than 2K={2 * K}")


def _uniform(T: int, K: int) -> list[int]:
    lengths = [max(K - 1, 1)]
    used = K + lengths[0] + K
    while used < T:
        lengths.append(K)
        used += 2 * K
    return lengths


def _exponential(T: int, K: int, c: float, n: float) -> list[int]:
    if c <= 0 or n <= 1:
        raise ConfigError("exponential schedule needs c > 0 and n > 1")
    lengths, used = [], K
    while used < T:
        p = len(lengths) + 1
        f = max(1, int(round(c * n ** p)))
        lengths.append(f)
        used += f + K
    return lengths


def _greedy(T: int, K: int) -> list[int]:
    if K > math.sqrt(T):
        raise ConfigError(f"greedy schedule needs K <= sqrt(T), got K={K}, T={T}")
    s_tilde = [1.0]
    while s_tilde[-1] + (len(s_tilde) - 1) * K < T:
        prev = s_tilde[-1]
        s_tilde.append(prev - K + 2.0 * math.sqrt(T * prev))
    H = len(s_tilde) - 1
    S = [1] + [math.ceil(s) for s in s_tilde[1:H]] + [T - H * K]
    # the last target can fall below the rounded previous value; keep every phase nonempty
    return [max(1, S[p] - S[p - 1]) for p in range(1, H + 1)]


def phase_lengths(kind: str, T: int, K: int, c: float = 1.0, n: float = 2.0) -> PhaseSchedule:
    """Build a schedule.

    ``uniform``: ``f^1 = K-1`` then ``f^p = K``.
    ``exponential``: ``f^p = round(c * n**p)``, just enough phases to reach T.
    ``greedy``: lengths from the recursion on cumulative exploration
    ``S_p = S_{p-1} - K + 2 sqrt(T S_{p-1})``.
    Every kind uses the fewest phases whose rounds, initialization
    included, reach T; the final phase may overrun and is truncated.
    """
    _check(T, K)
    if kind == UNIFORM:
        lengths = _uniform(T, K)
    elif kind == EXPONENTIAL:
        lengths = _exponential(T, K, c, n)
    elif kind == GREEDY:
        lengths = _greedy(T, K)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return PhaseSchedule(kind, tuple(lengths), T, K, c, n)


def parse_schedule(text: str, T: int, K: int) -> PhaseSchedule:
    """Parse ``uniform``, ``greedy`` or ``exp:c,n``."""
    if text in (UNIFORM, GREEDY):
        return phase_lengths(text, T, K)
    if text.startswith("exp:"):
        try:
            c, n = (float(v) for v in text[4:].split(","))
        except ValueError:
            raise ConfigError(f"malformed exponential schedule {text!r}; expected exp:c,n") from None
        return phase_lengths(EXPONENTIAL, T, K, c, n)
    raise ConfigError(f"unknown schedule {text!r}")


def _solve_k(ratio: float) -> float:
    """Smallest ``k >= 1`` with ``k - log k - 1 >= ratio``, by fixed-point iteration."""
    k = 1.0
    for _ in range(1_000_000):
        nxt = max(1.0, ratio + 1.0 + math.log(k))
        if abs(nxt - k) <= 1e-10 * nxt:
            return nxt
        k = nxt
    return k


def compute_alpha(M: int, K: int, H: int, d: int, delta: float, shared: bool = False) -> float:
    """Confidence-width multiplier.

    Minimum of a dimension-dependent bound ``sqrt(2 log(KH/delta) + d log(ke))``
    and a union bound over all (client, arm, phase) triples
    ``sqrt(2 log(2MKH/delta))``. With a single shared parameter the first
    bound needs no union over arms, so K drops out of it.
    """
    if min(M, K, H, d) < 1:
        raise ConfigError("M, K, H and d must be positive")
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    arms = 1 if shared else K
    c = 2.0 * math.log(arms * H / delta)
    k = _solve_k(c / d)
    dim_branch = math.sqrt(c + d * math.log(k * math.e))
    union_branch = math.sqrt(2.0 * math.log(2.0 * M * K * H / delta))
    return min(dim_branch, union_branch)
