"""Round loop: select, broadcast, train locally, score on the server, aggregate.

Randomness is split into independent streams keyed by purpose so that the
dataset, the initial model and each client's local training depend only on
the experiment seed (plus client id and round), never on which policy picked
whom. Swapping policies therefore perturbs selection-dependent values only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import data as D
from .config import ExperimentConfig
from .errors import DivergenceError
from .metrics import MetricsRecord, confusion, rounds_to_threshold, summarize
from .nn import ModelParams, evaluate, init_params, train_epochs
from .selection import (ClientLedger, Policy, SelectionContext, SelectorConfig, compute_deltas,
                        make_policy, normalize_quality)

log = logging.getLogger(__name__)

BYTES_PER_PARAM = 4  # uplink accounting assumes float32 on the wire

_DATA, _INIT, _SELECT, _CLIENT, _SUBSAMPLE, _VALSET, _PARTITION, _CAP = range(8)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *(int(k) for k in key)])


def stream_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([int(seed), *(int(k) for k in key)]).generate_state(1)[0])


# --------------------------------------------------------------------------
# client and server primitives

@dataclass
class LocalUpdate:
    client_id: int
    params: ModelParams
    n: int
    sample_losses: np.ndarray | None  # last local epoch, per training row


def local_train(global_params: ModelParams, shard: D.ClientShard, epochs: int, lr: float, batch_size: int,
                seed: int, round_index: int) -> LocalUpdate:
    """Train a copy of the global model on one shard with a fresh Adam state."""
    if shard.n == 0:
        raise ValueError(f"client {shard.client_id} has no data")
    params = global_params.copy()
    rng = stream(seed, _CLIENT, shard.client_id, round_index)
    try:
        _, last = train_epochs(params, shard.dataset.features, shard.dataset.labels, epochs, lr,
                               batch_size, rng)
    except DivergenceError as exc:
        raise DivergenceError(str(exc), client_id=shard.client_id, round_index=round_index) from None
    return LocalUpdate(shard.client_id, params, shard.n, last)


def fedavg_weights(sizes: Sequence[int]) -> np.ndarray:
    n = np.asarray(sizes, dtype=np.float64)
    if n.size == 0 or np.any(n <= 0):
        raise ValueError("aggregation needs at least one update with positive sample count")
    return n / n.sum()


def aggregate_fedavg(updates: Sequence[tuple[int, ModelParams, int]]) -> ModelParams:
    """Sample-count weighted mean of ``(client_id, params, n)`` updates.

    Terms are summed in ascending client id so the result does not depend on
    the order updates arrived in. Accumulating offsets from the first model
    makes identical inputs a bit-exact fixed point.
    """
    if not updates:
        raise ValueError("no updates to aggregate")
    ordered = sorted(updates, key=lambda u: u[0])
    spec = ordered[0][1].spec
    for cid, p, _ in ordered:
        if p.spec.layer_dims != spec.layer_dims:
            raise ValueError(f"client {cid} returned a model with dims {p.spec.layer_dims}, expected {spec.layer_dims}")
    w = fedavg_weights([n for _, _, n in ordered])
    anchor = ordered[0][1].flat
    acc = anchor.copy()
    for weight, (_, p, _) in zip(w[1:], ordered[1:]):
        acc += weight * (p.flat - anchor)
    return ModelParams(spec, acc)


def evaluate_metrics(params: ModelParams, ds: D.LabeledDataset) -> MetricsRecord:
    loss, preds = evaluate(params, ds.features, ds.labels)
    return summarize(confusion(preds, ds.labels, ds.num_classes), loss)


# --------------------------------------------------------------------------
# state and round

@dataclass
class ClientEntry:
    client_id: int
    n: int
    val_loss: float
    delta: float
    quality: float
    reputation: float
    participation: int


@dataclass
class RoundReport:
    round: int
    policy: str
    seed: int
    selected: list[int]
    base_val_loss: float
    clients: list[ClientEntry]
    val_loss: float  # after aggregation
    uplink_bytes: int
    uplink_bytes_total: int
    test: MetricsRecord | None = None
    score_subsample: float = 1.0

    def to_dict(self) -> dict:
        out = {
            "round": self.round,
            "policy": self.policy,
            "seed": self.seed,
            "selected_ids": list(self.selected),
            "base_val_loss": self.base_val_loss,
            "val_loss": self.val_loss,
            "uplink_bytes": self.uplink_bytes,
            "uplink_bytes_total": self.uplink_bytes_total,
            "clients": [
                {"client_id": c.client_id, "n": c.n, "val_loss": c.val_loss, "delta": c.delta,
                 "quality": c.quality, "reputation": c.reputation, "participation": c.participation}
                for c in self.clients
            ],
            "test": None if self.test is None else self.test.to_dict(),
        }
        if self.score_subsample != 1.0:
            out["score_subsample"] = self.score_subsample
        return out


@dataclass
class FederationState:
    params: ModelParams
    shards: list[D.ClientShard]
    val: D.LabeledDataset  # full server validation set
    score_val: D.LabeledDataset  # the part used for client scoring
    test: D.LabeledDataset
    selector: SelectorConfig
    policy: Policy
    ledger: ClientLedger
    rounds: int
    local_epochs: int
    lr: float
    batch_size: int
    seed: int
    eval_every: int = 1
    score_subsample: float = 1.0
    t: int = 0
    uplink_bytes_total: int = 0
    select_rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.select_rng is None:
            self.select_rng = stream(self.seed, _SELECT)

    @property
    def client_ids(self) -> list[int]:
        return [s.client_id for s in self.shards]

    @property
    def m(self) -> int:
        return self.selector.resolve_m(len(self.shards))

    def local_losses(self, ids: list[int]) -> dict[int, float]:
        """Current global model's loss on each listed client's own data."""
        out = {}
        for cid in ids:
            ds = self.shards[cid].dataset
            out[cid] = evaluate(self.params, ds.features, ds.labels)[0]
        return out


def run_round(state: FederationState) -> RoundReport:
    """Advance ``state`` by one round in place and return its report."""
    t = state.t + 1
    ctx = SelectionContext(state.client_ids, state.m, state.ledger, state.local_losses)
    selected = state.policy.select(t, ctx, state.select_rng)

    updates = [local_train(state.params, state.shards[cid], state.local_epochs, state.lr, state.batch_size,
                           state.seed, t) for cid in selected]

    sv = state.score_val
    base = evaluate(state.params, sv.features, sv.labels)[0]
    client_losses = {u.client_id: evaluate(u.params, sv.features, sv.labels)[0] for u in updates}
    deltas = compute_deltas(base, client_losses)
    records = normalize_quality(deltas, state.selector.quality_floor, state.selector.stability, round=t)
    state.ledger.update(records)
    for u in updates:
        state.policy.observe(u.client_id, u.n, u.sample_losses, t)

    new_params = aggregate_fedavg([(u.client_id, u.params, u.n) for u in updates])
    if not np.all(np.isfinite(new_params.flat)):
        raise DivergenceError("aggregated model is not finite", round_index=t)
    state.params = new_params
    state.t = t
    uplink = len(updates) * new_params.flat.size * BYTES_PER_PARAM
    state.uplink_bytes_total += uplink

    val_loss = evaluate(state.params, state.val.features, state.val.labels)[0]
    test = None
    if t % state.eval_every == 0 or t == state.rounds:
        test = evaluate_metrics(state.params, state.test)

    q = {r.client_id: r for r in records}
    entries = []
    for u in sorted(updates, key=lambda u: u.client_id):
        rep = state.ledger.reputation(u.client_id)
        entries.append(ClientEntry(u.client_id, u.n, client_losses[u.client_id], q[u.client_id].delta,
                                   q[u.client_id].quality, rep.score, state.ledger.participation[u.client_id]))
    return RoundReport(t, state.policy.name, state.seed, sorted(selected), base, entries, val_loss, uplink,
                       state.uplink_bytes_total, test, state.score_subsample)


# --------------------------------------------------------------------------
# experiment level

@dataclass
class PreparedData:
    train: D.LabeledDataset
    val: D.LabeledDataset
    score_val: D.LabeledDataset
    test: D.LabeledDataset
    shards: list[D.ClientShard]


def load_dataset(cfg: ExperimentConfig) -> D.LabeledDataset:
    d = cfg.dataset
    if d.source == "synthetic":
        ds = D.generate_synthetic(d.num_classes, d.feature_dim, d.samples_per_class, d.cluster_spread,
                                  stream_seed(d.seed, _DATA), center_scale=d.center_scale)
    else:
        ds = D.load_csv(d.csv_path, d.label_column, d.drop_columns, d.class_names or None)
    if d.cap_fraction:
        ds = D.cap_majority_class(ds, d.majority_class, d.cap_fraction, seed=stream_seed(d.seed, _CAP))
    return ds


def prepare_data(cfg: ExperimentConfig, seed: int, dataset: D.LabeledDataset | None = None) -> PreparedData:
    """Split, standardize, partition and build the scoring set for one seed."""
    ds = load_dataset(cfg) if dataset is None else dataset
    bundle = D.split(ds, cfg.dataset.split, stratified=cfg.dataset.stratified, seed=stream_seed(seed, _DATA))
    train, (val, test), _ = D.fit_apply_standardizer(bundle.train, [bundle.validation, bundle.test])
    p = cfg.partition
    spec = D.PartitionSpec(p.num_clients, p.scheme, p.min_classes, p.max_classes, p.min_samples, p.max_samples,
                           p.alpha, seed=stream_seed(seed, _PARTITION))
    shards = D.partition_noniid(train, spec)
    v = cfg.validation
    val = D.build_validation_set(val, v.mode, v.per_class, seed=stream_seed(seed, _VALSET))
    score_val = val
    frac = cfg.training.score_subsample
    if frac < 1.0:
        k = max(1, round(frac * len(val)))
        rows = np.sort(stream(seed, _SUBSAMPLE).choice(len(val), size=k, replace=False))
        score_val = val.subset(rows)
    return PreparedData(train, val, score_val, test, shards)


def build_state(cfg: ExperimentConfig, policy: str, seed: int, prepared: PreparedData) -> FederationState:
    spec = cfg.architecture(prepared.train.num_features, prepared.train.num_classes)
    params = init_params(spec, stream_seed(seed, _INIT))
    sel = cfg.selector_config(policy)
    ids = [s.client_id for s in prepared.shards]
    t = cfg.training
    return FederationState(
        params=params, shards=prepared.shards, val=prepared.val, score_val=prepared.score_val,
        test=prepared.test, selector=sel, policy=make_policy(sel, ids), ledger=ClientLedger(ids, sel.window),
        rounds=t.rounds, local_epochs=t.local_epochs, lr=t.learning_rate, batch_size=t.batch_size, seed=seed,
        eval_every=t.eval_every, score_subsample=t.score_subsample,
    )


@dataclass
class RunResult:
    policy: str
    seed: int
    reports: list[RoundReport]
    initial: MetricsRecord
    final: MetricsRecord
    thresholds: dict[float, int | str]
    uplink_bytes_total: int

    def accuracy_series(self) -> list[float | None]:
        return [r.test.accuracy if r.test is not None else None for r in self.reports]


def run_single(cfg: ExperimentConfig, policy: str, seed: int, prepared: PreparedData | None = None,
               on_round: Callable[[RoundReport], None] | None = None) -> RunResult:
    """One (policy, seed) run of ``cfg.training.rounds`` rounds."""
    prepared = prepare_data(cfg, seed) if prepared is None else prepared
    state = build_state(cfg, policy, seed, prepared)
    initial = evaluate_metrics(state.params, state.test)
    reports = []
    for _ in range(cfg.training.rounds):
        report = run_round(state)
        reports.append(report)
        if on_round is not None:
            on_round(report)
        if report.test is not None:
            log.debug("%s seed=%d round=%d acc=%.4f", policy, seed, report.round, report.test.accuracy)
    final = next((r.test for r in reversed(reports) if r.test is not None), initial)
    acc = [r.test.accuracy if r.test is not None else None for r in reports]
    thresholds = {th: rounds_to_threshold(acc, th) for th in cfg.experiment.thresholds}
    return RunResult(policy, seed, reports, initial, final, thresholds, state.uplink_bytes_total)


SUMMARY_METRICS = ("accuracy", "f1_macro", "f1_weighted", "precision_macro", "precision_weighted", "loss")


def summarize_runs(results: Sequence[RunResult], ddof: int = 1) -> list[dict]:
    """Mean and std over seeds of final test metrics and rounds-to-threshold, per policy.

    Rounds-to-threshold averages only the seeds that reached the threshold;
    ``n`` records how many did.
    """
    rows = []
    for policy in dict.fromkeys(r.policy for r in results):
        runs = [r for r in results if r.policy == policy]
        for metric in SUMMARY_METRICS:
            vals = np.array([getattr(r.final, metric) for r in runs])
            rows.append(_stat_row(policy, metric, vals, ddof))
        for th in runs[0].thresholds:
            hit = np.array([r.thresholds[th] for r in runs if r.thresholds[th] != "never"], dtype=np.float64)
            rows.append(_stat_row(policy, f"rounds_to_{th:g}", hit, ddof))
    return rows


def _stat_row(policy: str, metric: str, vals: np.ndarray, ddof: int) -> dict:
    n = int(vals.size)
    mean = float(vals.mean()) if n else float("nan")
    std = float(vals.std(ddof=ddof)) if n > ddof else 0.0 if n else float("nan")
    return {"policy": policy, "metric": metric, "mean": mean, "std": std, "n": n}


def run_experiment(cfg: ExperimentConfig, policies: Sequence[str] | None = None,
                   seeds: Sequence[int] | None = None,
                   on_round: Callable[[RoundReport], None] | None = None) -> tuple[list[RunResult], list[dict]]:
    """Every (policy, seed) combination; data are prepared once per seed and shared across policies."""
    policies = list(cfg.selector.policies if policies is None else policies)
    seeds = list(cfg.experiment.seeds if seeds is None else seeds)
    dataset = load_dataset(cfg)
    results = []
    for seed in seeds:
        prepared = prepare_data(cfg, seed, dataset)
        for policy in policies:
            results.append(run_single(cfg, policy, seed, prepared, on_round))
    return results, summarize_runs(results)
