"""Client-selection policies and validation-loss reputation scoring.

The scoring side turns server-side validation losses into per-client quality
scores, keeps a sliding window of them per client, and ranks clients by
reputation = windowed mean quality * ln(1 + participation count). Selection
policies only read that state; the federation loop writes it once per round.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

POLICIES = ("fedavg-random", "power-of-choice", "oort-simplified", "vars-fl")

DEFAULT_QUALITY_FLOOR = 0.01
DEFAULT_STABILITY = 1e-8


# --------------------------------------------------------------------------
# scoring

@dataclass(frozen=True)
class QualityRecord:
    client_id: int
    delta: float
    quality: float
    round: int | None = None


def compute_deltas(base_loss: float, client_losses: Mapping[int, float]) -> dict[int, float]:
    """Validation-loss improvement per client, floored at zero."""
    if not math.isfinite(base_loss):
        raise ValueError(f"base loss is not finite: {base_loss}")
    out = {}
    for cid, loss in client_losses.items():
        if not math.isfinite(loss):
            raise ValueError(f"client {cid} validation loss is not finite: {loss}")
        out[cid] = max(0.0, base_loss - loss)
    return out


def normalize_quality(deltas: Mapping[int, float], eps: float = DEFAULT_QUALITY_FLOOR,
                      zeta: float = DEFAULT_STABILITY, round: int | None = None) -> list[QualityRecord]:
    """Scale each delta by the round's best one and floor the result at ``eps``."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"quality floor must lie in (0, 1], got {eps}")
    if zeta <= 0.0:
        raise ValueError(f"stability constant must be positive, got {zeta}")
    if not deltas:
        return []
    d_max = max(deltas.values())
    return [QualityRecord(cid, d, min(1.0, max(eps, d / (d_max + zeta))), round)
            for cid, d in deltas.items()]


@dataclass(frozen=True)
class Reputation:
    client_id: int
    mean_quality: float
    score: float


class ClientLedger:
    """Per-client quality window and participation count."""

    def __init__(self, client_ids: Iterable[int], window: int = 5):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.history: dict[int, deque[float]] = {int(c): deque(maxlen=window) for c in client_ids}
        self.participation: dict[int, int] = {c: 0 for c in self.history}

    @property
    def client_ids(self) -> list[int]:
        return sorted(self.history)

    def update(self, records: Iterable[QualityRecord]) -> None:
        records = list(records)
        unknown = [r.client_id for r in records if r.client_id not in self.history]
        if unknown:
            raise KeyError(f"unknown client ids in scoring records: {unknown}")
        for r in records:
            self.history[r.client_id].append(r.quality)  # deque drops the oldest past the window
            self.participation[r.client_id] += 1

    def reputation(self, client_id: int) -> Reputation:
        h = self.history[client_id]
        if not h:
            return Reputation(client_id, 0.0, 0.0)
        q_bar = sum(h) / len(h)
        return Reputation(client_id, q_bar, q_bar * math.log1p(self.participation[client_id]))

    def scores(self, client_ids: Sequence[int] | None = None) -> np.ndarray:
        ids = self.client_ids if client_ids is None else client_ids
        return np.array([self.reputation(c).score for c in ids])

    def memory_scalars(self) -> int:
        return len(self.history) * self.window


def update_ledger(ledger: ClientLedger, records: Iterable[QualityRecord]) -> ClientLedger:
    ledger.update(records)
    return ledger


def reputation(ledger: ClientLedger, client_id: int) -> Reputation:
    return ledger.reputation(client_id)


# --------------------------------------------------------------------------
# selection primitives

def _check_m(m: int, n: int) -> None:
    if not 1 <= m <= n:
        raise ValueError(f"cannot select m={m} clients out of {n}")


def top_k(ids: Sequence[int], scores: Sequence[float], k: int) -> list[int]:
    """Highest scores first; equal scores go to the lower client id."""
    ids = np.asarray(ids)
    order = np.lexsort((ids, -np.asarray(scores, dtype=np.float64)))
    return [int(i) for i in ids[order[:k]]]


def select_uniform(clients: Sequence[int], m: int, rng: np.random.Generator) -> list[int]:
    _check_m(m, len(clients))
    return sorted(int(c) for c in rng.choice(np.asarray(clients), size=m, replace=False))


def vars_split(ledger: ClientLedger, clients: Sequence[int], m: int, rho: float, cold_start: int,
               t: int, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """Return (reputation picks, random picks); during cold start all picks are random."""
    _check_m(m, len(clients))
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"exploration rate must lie in [0, 1], got {rho}")
    if t <= cold_start:
        return [], select_uniform(clients, m, rng)
    m_rep = math.floor((1.0 - rho) * m)
    exploit = top_k(clients, ledger.scores(clients), m_rep)
    taken = set(exploit)
    rest = [c for c in clients if c not in taken]
    explore = select_uniform(rest, m - m_rep, rng) if m > m_rep else []
    return exploit, explore


def select_vars(ledger: ClientLedger, clients: Sequence[int], m: int, rho: float, cold_start: int,
                t: int, rng: np.random.Generator) -> list[int]:
    exploit, explore = vars_split(ledger, clients, m, rho, cold_start, t, rng)
    return sorted(exploit + explore)


def poc_candidates(clients: Sequence[int], m: int, candidate_factor: int,
                   rng: np.random.Generator) -> list[int]:
    _check_m(m, len(clients))
    if candidate_factor < 1:
        raise ValueError("candidate_factor must be >= 1")
    d = min(len(clients), candidate_factor * m)
    return select_uniform(clients, d, rng)


def select_poc(clients: Sequence[int], local_losses: Mapping[int, float] | Callable[[list[int]], Mapping[int, float]],
               m: int, candidate_factor: int, rng: np.random.Generator) -> list[int]:
    """Power-of-Choice: sample ``candidate_factor * m`` clients, keep the m with highest loss.

    ``local_losses`` is either a mapping covering at least the candidates or a
    callable evaluating the current global model on a list of client ids.
    """
    cand = poc_candidates(clients, m, candidate_factor, rng)
    losses = local_losses(cand) if callable(local_losses) else local_losses
    return sorted(top_k(cand, [losses[c] for c in cand], m))


class OortStats:
    """What the simplified Oort utility remembers about each client."""

    def __init__(self, client_ids: Iterable[int]):
        self.n: dict[int, int] = {}
        self.loss_rms: dict[int, float] = {}
        self.last_round: dict[int, int] = {}
        self.ids = sorted(int(c) for c in client_ids)

    def observe(self, client_id: int, n_samples: int, sample_losses: np.ndarray, round_index: int) -> None:
        sl = np.asarray(sample_losses, dtype=np.float64)
        self.n[client_id] = int(n_samples)
        self.loss_rms[client_id] = float(np.sqrt(np.mean(sl * sl))) if sl.size else 0.0
        self.last_round[client_id] = round_index

    def utility(self, client_id: int, t: int, exploration_weight: float) -> float:
        if client_id not in self.last_round:
            return math.inf
        stat = self.n[client_id] * self.loss_rms[client_id]
        bonus = math.sqrt(math.log(max(t, 1)) / max(1, self.last_round[client_id]))
        return stat + exploration_weight * bonus


def select_oort_simplified(clients: Sequence[int], stats: OortStats, m: int, exploration_weight: float,
                           t: int, rng: np.random.Generator, epsilon: float = 0.1) -> list[int]:
    """Statistical-utility ranking with an epsilon-greedy share of random slots.

    Never-selected clients have infinite utility and are ordered randomly
    among themselves; the rest rank by utility with ties to the lower id.
    """
    _check_m(m, len(clients))
    util = np.array([stats.utility(c, t, exploration_weight) for c in clients])
    ids = np.asarray(clients)
    fresh = rng.permutation(ids[np.isinf(util)])
    seen = np.isfinite(util)
    ranked = list(fresh) + top_k(ids[seen], util[seen], int(seen.sum()))
    m_rand = math.floor(epsilon * m)
    exploit = [int(c) for c in ranked[:m - m_rand]]
    taken = set(exploit)
    rest = [c for c in clients if c not in taken]
    explore = select_uniform(rest, m_rand, rng) if m_rand else []
    return sorted(exploit + explore)


# --------------------------------------------------------------------------
# policy objects used by the federation loop

@dataclass
class SelectorConfig:
    policy: str = "vars-fl"
    clients_per_round: float = 0.1  # < 1: fraction of N, otherwise a count
    rho: float = 0.3
    cold_start: int = 15
    window: int = 5
    quality_floor: float = DEFAULT_QUALITY_FLOOR
    stability: float = DEFAULT_STABILITY
    poc_candidate_factor: int = 2
    oort_exploration_weight: float = 1.0
    oort_epsilon: float = 0.1

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; valid policies: {', '.join(POLICIES)}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.cold_start < 0:
            raise ValueError("cold_start must be >= 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.clients_per_round <= 0:
            raise ValueError("clients_per_round must be positive")

    def resolve_m(self, num_clients: int) -> int:
        c = self.clients_per_round
        m = max(1, round(c * num_clients)) if c < 1 else int(c)
        _check_m(m, num_clients)
        return m


@dataclass
class SelectionContext:
    """Read-only view of server state handed to a policy each round."""
    clients: list[int]
    m: int
    ledger: ClientLedger
    local_losses: Callable[[list[int]], Mapping[int, float]] | None = None


class Policy:
    name = ""

    def select(self, t: int, ctx: SelectionContext, rng: np.random.Generator) -> list[int]:
        raise NotImplementedError

    def observe(self, client_id: int, n_samples: int, sample_losses: np.ndarray | None, t: int) -> None:
        """Hook for policies that learn from local training statistics."""


class UniformPolicy(Policy):
    name = "fedavg-random"

    def select(self, t, ctx, rng):
        return select_uniform(ctx.clients, ctx.m, rng)


class VarsPolicy(Policy):
    name = "vars-fl"

    def __init__(self, rho: float, cold_start: int):
        self.rho = rho
        self.cold_start = cold_start

    def select(self, t, ctx, rng):
        return select_vars(ctx.ledger, ctx.clients, ctx.m, self.rho, self.cold_start, t, rng)


class PowerOfChoicePolicy(Policy):
    name = "power-of-choice"

    def __init__(self, candidate_factor: int = 2):
        self.candidate_factor = candidate_factor

    def select(self, t, ctx, rng):
        if ctx.local_losses is None:
            raise ValueError("power-of-choice needs a local loss oracle")
        return select_poc(ctx.clients, ctx.local_losses, ctx.m, self.candidate_factor, rng)


class OortPolicy(Policy):
    name = "oort-simplified"

    def __init__(self, client_ids: Iterable[int], exploration_weight: float = 1.0, epsilon: float = 0.1):
        self.stats = OortStats(client_ids)
        self.exploration_weight = exploration_weight
        self.epsilon = epsilon

    def select(self, t, ctx, rng):
        return select_oort_simplified(ctx.clients, self.stats, ctx.m, self.exploration_weight, t, rng,
                                      epsilon=self.epsilon)

    def observe(self, client_id, n_samples, sample_losses, t):
        if sample_losses is not None:
            self.stats.observe(client_id, n_samples, sample_losses, t)


def make_policy(cfg: SelectorConfig, client_ids: Sequence[int]) -> Policy:
    if cfg.policy == "fedavg-random":
        return UniformPolicy()
    if cfg.policy == "vars-fl":
        return VarsPolicy(cfg.rho, cfg.cold_start)
    if cfg.policy == "power-of-choice":
        return PowerOfChoicePolicy(cfg.poc_candidate_factor)
    return OortPolicy(client_ids, cfg.oort_exploration_weight, cfg.oort_epsilon)
