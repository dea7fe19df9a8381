"""Run traces, regret and communication accounting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import ZERO_WEIGHT
from .errors import InvalidLogError

NAIVE = "naive"
REDUCED = "reduced"


@dataclass
class PhaseRecord:
    """Per-phase counters.

    Scalars are reals (estimates, matrices, rewards); ints are arm
    identifiers in active-set messages and allocation entries.
    """

    phase: int
    f_p: int
    up_scalars: int
    down_scalars: int
    sparsity: float
    sweeps: int
    up_ints: int = 0
    down_ints: int = 0
    certified: bool = True
    truncated: bool = False

    @property
    def total(self) -> int:
        return self.up_scalars + self.down_scalars + self.up_ints + self.down_ints


@dataclass
class Trace:
    algo: str
    seed: int
    cum_regret: np.ndarray
    phases: list[PhaseRecord] = field(default_factory=list)
    pull_log: np.ndarray | None = None
    optimal_arm_lost: bool = False
    active_history: list[list[tuple[int, ...]]] = field(default_factory=list)
    phase_starts: list[int] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.cum_regret)

    @property
    def final_regret(self) -> float:
        return float(self.cum_regret[-1]) if self.T else 0.0

    @property
    def total_comm(self) -> int:
        return comm_cost(self.phases)


def compute_regret(instance, pull_log) -> np.ndarray:
    """Cumulative pseudo-regret summed over clients, one entry per round.

    `pull_log` has shape ``(M, T)`` and holds the arm pulled by each
    client in each round.
    """
    log = np.asarray(pull_log)
    if log.ndim != 2 or log.shape[0] != instance.M:
        raise InvalidLogError(f"pull log must have shape (M={instance.M}, T), got {log.shape}")
    if log.size and (log.min() < 0 or log.max() >= instance.K):
        raise InvalidLogError(f"pull log references arms outside [0, {instance.K})")
    rows = np.arange(instance.M)[:, None]
    gaps = instance.best_means[:, None] - instance.means[rows, log]
    return np.cumsum(gaps.sum(axis=0))


def phase_comm(d: int, M: int, uploads: int, active_entries: int, broadcast_arms: int,
               broadcast_entries: int, comm_mode: str = NAIVE, shared: bool = False) -> dict[str, int]:
    """Itemised communication of one protocol phase.

    uploads: local estimates sent to the server.
    active_entries: sum of active-set sizes; sent up as arm ids and
    answered by one allocation entry each.
    broadcast_arms: arms whose global model is broadcast to every client.
    broadcast_entries: (client, arm) pairs that actually use a broadcast.
    """
    if comm_mode == NAIVE:
        up = d * uploads
        down = M * (d + d * d) * (1 if shared else broadcast_arms)
    elif comm_mode == REDUCED:
        # one projected scalar up; estimate and width per (client, arm) down
        up = uploads
        down = 2 * broadcast_entries
    else:
        raise ValueError(f"unknown comm mode {comm_mode!r}")
    return {"up_scalars": up, "down_scalars": down,
            "up_ints": active_entries, "down_ints": active_entries}


def comm_cost(records) -> int:
    """Total scalars and integers exchanged over all phases."""
    return int(sum(r.total for r in records))


def sparsity_level(pi, num_clients: int, threshold: float = ZERO_WEIGHT) -> float:
    """Number of weights above `threshold` divided by the number of clients."""
    return float(np.count_nonzero(np.asarray(pi) > threshold)) / num_clients
