"""Acceptance criteria, one test per criterion.

Each test appends a PASS/FAIL line to the log printed in the terminal summary.
Criteria 9 and 10 train 15 desk-scale federations and take a few minutes.
"""

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

from varsfl.cli import main
from varsfl.config import load_config, serialize_config
from varsfl.federation import aggregate_fedavg, prepare_data, run_single
from varsfl.nn import ArchitectureSpec, ModelParams, init_params, loss_and_grads
from varsfl.reporting import complexity_report, read_jsonl
from varsfl.selection import (POLICIES, ClientLedger, OortStats, SelectionContext, SelectorConfig, compute_deltas,
                              make_policy, normalize_quality, vars_split)

from .conftest import micro_config
from .test_nn import reference_loss

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.txt"


@contextmanager
def criterion(log, number, title, budget_s, spent_s=0.0):
    """Record a PASS/FAIL line; ``spent_s`` counts fixture time toward the budget."""
    detail = {}
    start = time.perf_counter() - spent_s
    try:
        yield detail
    except BaseException:
        log.append(f"FAIL  [{number:>2}] {title}  {detail.get('msg', '')}".rstrip())
        raise
    elapsed = time.perf_counter() - start
    status = "PASS" if elapsed < budget_s else "FAIL"
    log.append(f"{status}  [{number:>2}] {title}  ({elapsed:.1f}s) {detail.get('msg', '')}".rstrip())
    assert elapsed < budget_s, f"took {elapsed:.1f}s, budget {budget_s}s"


# --------------------------------------------------------------------------

def test_c01_architecture(acceptance_log):
    with criterion(acceptance_log, 1, "architecture parameter counts", 1.0) as d:
        spec = ArchitectureSpec((43, 128, 64, 32, 15))
        d["msg"] = f"total {spec.param_count}, layers {spec.layer_param_counts()}"
        assert spec.param_count == 16_463
        assert spec.layer_param_counts() == [5_632, 8_256, 2_080, 495]
        assert init_params(spec, 0).flat.size == 16_463


def test_c02_complexity(acceptance_log):
    with criterion(acceptance_log, 2, "complexity report", 1.0) as d:
        rep = complexity_report(ArchitectureSpec((43, 128, 64, 32, 15)), 10, 110_407, 100, 5)
        d["msg"] = f"C_fwd {rep.macs_per_sample}, server {rep.server_macs_per_round:.4e}"
        assert rep.macs_per_sample == 16_224
        assert rep.server_macs_per_round == 10 * 110_407 * 16_224 == 17_912_431_680
        assert f"{rep.server_macs_per_round:.4e}" == "1.7912e+10"
        assert rep.uplink_bytes_per_client == 16_463 * 4


def _random_small_spec(rng):
    while True:
        depth = rng.integers(1, 4)
        dims = tuple(int(v) for v in rng.integers(1, 7, size=depth + 1))
        dims = (dims[0], *dims[1:-1], max(2, dims[-1]))
        spec = ArchitectureSpec(dims, 0.0, frozenset())
        if spec.param_count <= 100:
            return spec


def test_c03_gradients(acceptance_log):
    with criterion(acceptance_log, 3, "backprop vs central finite differences", 10.0) as d:
        rng = np.random.default_rng(2024)
        worst = 0.0
        h = 1e-5
        for _ in range(20):
            spec = _random_small_spec(rng)
            p = ModelParams(spec, rng.normal(scale=0.5, size=spec.param_count))
            x = rng.normal(size=(int(rng.integers(2, 9)), spec.layer_dims[0]))
            y = rng.integers(0, spec.num_classes, size=len(x))
            _, grads = loss_and_grads(p, x, y, train=False)
            fd = np.empty(spec.param_count)
            for i in range(spec.param_count):
                up, dn = p.flat.copy(), p.flat.copy()
                up[i] += h
                dn[i] -= h
                fd[i] = (reference_loss(up, spec.layer_dims, x, y) - reference_loss(dn, spec.layer_dims, x, y)) / (2 * h)
            err = np.linalg.norm(grads.flat - fd) / max(1e-12, np.linalg.norm(grads.flat) + np.linalg.norm(fd))
            worst = max(worst, err)
        d["msg"] = f"max relative error {worst:.2e}"
        assert worst < 1e-4


def test_c04_scoring_oracle(acceptance_log):
    with criterion(acceptance_log, 4, "scoring vs brute force", 5.0) as d:
        rng = np.random.default_rng(4)
        worst = 0.0
        for trial in range(1000):
            base = float(rng.uniform(0.05, 3.0))
            k = int(rng.integers(1, 16))
            spread = 0.0 if trial % 50 == 0 else 0.5
            losses = {int(c): float(base + rng.uniform(-spread, 0.3)) for c in rng.choice(100, k, replace=False)}
            eps = float(rng.uniform(1e-4, 0.5))
            zeta = float(10 ** rng.uniform(-12, -2))
            records = normalize_quality(compute_deltas(base, losses), eps, zeta)
            ref_delta = {c: (base - v if base > v else 0.0) for c, v in losses.items()}
            d_max = max(ref_delta.values())
            for r in records:
                ref_q = ref_delta[r.client_id] / (d_max + zeta)
                ref_q = 1.0 if ref_q > 1.0 else (eps if ref_q < eps else ref_q)
                worst = max(worst, abs(r.delta - ref_delta[r.client_id]), abs(r.quality - ref_q))
                assert r.delta >= 0.0 and eps <= r.quality <= 1.0
            if d_max == 0.0:
                assert all(r.quality == eps for r in records)
        for n in (1, 5):
            assert {r.quality for r in normalize_quality({c: 0.0 for c in range(n)}, 0.01)} == {0.01}
        d["msg"] = f"max abs diff {worst:.1e}"
        assert worst <= 1e-12


def test_c05_ledger(acceptance_log):
    with criterion(acceptance_log, 5, "ledger window, eviction, counts, reputation", 5.0) as d:
        rng = np.random.default_rng(5)
        lengths = []
        for window in (1, 3, 5):
            n = 12
            led = ClientLedger(range(n), window)
            ref_hist = {c: [] for c in range(n)}
            ref_p = dict.fromkeys(range(n), 0)
            ops = 0
            while ops < 10_000:
                size = min(int(rng.integers(1, 4)), 10_000 - ops)
                batch = rng.choice(n, size=size, replace=False)
                qs = rng.uniform(0.01, 1.0, size=len(batch))
                recs = normalize_quality({int(c): float(q) for c, q in zip(batch, qs)}, 0.01, 1e-8)
                led.update(recs)
                for r in recs:
                    ref_hist[r.client_id] = (ref_hist[r.client_id] + [r.quality])[-window:]
                    ref_p[r.client_id] += 1
                ops += len(batch)
                for c in range(n):
                    assert len(led.history[c]) <= window
                    assert list(led.history[c]) == ref_hist[c]
                    assert led.participation[c] == ref_p[c]
                    h = ref_hist[c]
                    ref_r = (sum(h) / len(h)) * math.log(1 + ref_p[c]) if h else 0.0
                    assert abs(led.reputation(c).score - ref_r) <= 1e-12
            lengths.append(ops)
        d["msg"] = f"{len(lengths)} sequences of {lengths[0]} scoring events"
        assert lengths == [10_000] * 3


def _policy_trials(policy, n, m, trials, rng, t_fn):
    sel = SelectorConfig(policy=policy, clients_per_round=float(m), cold_start=15)
    ids = list(range(n))
    pol = make_policy(sel, ids)
    led = ClientLedger(ids, sel.window)
    losses = rng.uniform(0, 3, size=n)
    ctx = SelectionContext(ids, m, led, local_losses=lambda cs: {c: float(losses[c]) for c in cs})
    counts = np.zeros(n)
    for trial in range(trials):
        t = t_fn(trial)
        chosen = pol.select(t, ctx, rng)
        assert len(chosen) == m and len(set(chosen)) == m and set(chosen) <= set(ids)
        counts[chosen] += 1
        if trial % 97 == 0:
            led.update(normalize_quality({c: float(rng.uniform(0, 1)) for c in chosen}))
            for c in chosen:
                pol.observe(c, int(rng.integers(50, 5000)), rng.uniform(0, 2, size=8), t)
    return counts


def test_c06_selection(acceptance_log):
    with criterion(acceptance_log, 6, "selection contracts", 30.0) as d:
        rng = np.random.default_rng(6)
        n, m, trials = 50, 10, 10_000
        pvals = {}
        for policy in POLICIES:
            if policy == "vars-fl":
                cold = _policy_trials(policy, n, m, trials, rng, lambda i: 1 + i % 15)
                pvals["vars-fl cold start"] = chisquare(cold).pvalue
                _policy_trials(policy, n, m, trials, rng, lambda i: 16 + i)
            else:
                counts = _policy_trials(policy, n, m, trials, rng, lambda i: 1 + i)
                if policy == "fedavg-random":
                    pvals[policy] = chisquare(counts).pvalue
        led = ClientLedger(range(n), 5)
        led.update(normalize_quality({c: float(rng.uniform(0, 1)) for c in range(n)}))
        for mm in range(1, 21):
            for rho in (0.0, 0.1, 0.3, 0.5, 0.75, 1.0):
                exploit, explore = vars_split(led, list(range(n)), mm, rho, 15, 16, rng)
                assert len(exploit) == math.floor((1 - rho) * mm)
                assert len(explore) == mm - math.floor((1 - rho) * mm)
        d["msg"] = ", ".join(f"{k} p={v:.3f}" for k, v in pvals.items())
        assert all(p > 0.01 for p in pvals.values())


def test_c07_aggregation(acceptance_log):
    with criterion(acceptance_log, 7, "aggregation vs brute-force weighted mean", 5.0) as d:
        rng = np.random.default_rng(7)
        spec = ArchitectureSpec((3, 4, 2), 0.0, frozenset())
        worst = 0.0
        for _ in range(1000):
            k = int(rng.integers(1, 11))
            ns = [int(v) for v in rng.integers(1, 6000, size=k)]
            thetas = [rng.normal(size=spec.param_count) for _ in range(k)]
            ups = [(i, ModelParams(spec, th), n_i) for i, (th, n_i) in enumerate(zip(thetas, ns))]
            out = aggregate_fedavg(ups).flat
            total = sum(ns)
            ref = np.array([math.fsum(n_i * th[j] for th, n_i in zip(thetas, ns)) / total
                            for j in range(spec.param_count)])
            worst = max(worst, float(np.max(np.abs(out - ref))))
            stack = np.vstack(thetas)
            assert np.all(out >= stack.min(axis=0)) and np.all(out <= stack.max(axis=0))
            same = aggregate_fedavg([(i, ModelParams(spec, thetas[0].copy()), n_i) for i, n_i in enumerate(ns)])
            assert np.array_equal(same.flat, thetas[0])
        d["msg"] = f"max abs diff {worst:.1e}"
        assert worst <= 1e-12


@pytest.fixture(scope="module")
def micro_runs(tmp_path_factory):
    cfg = micro_config(partition__num_clients=10, training__rounds=5, selector__cold_start=2)
    root = tmp_path_factory.mktemp("determinism")
    path = root / "cfg.txt"
    path.write_text(serialize_config(cfg))
    start = time.perf_counter()
    for name in ("a", "b"):
        assert main(["run", str(path), "--output-dir", str(root / name)]) == 0
    return cfg, root, time.perf_counter() - start


def test_c08_determinism(acceptance_log, micro_runs):
    cfg, root, elapsed = micro_runs
    with criterion(acceptance_log, 8, "byte-identical rounds.jsonl", 30.0, elapsed) as d:
        for policy in cfg.selector.policies:
            a = (root / "a" / policy / "7" / "rounds.jsonl").read_bytes()
            b = (root / "b" / policy / "7" / "rounds.jsonl").read_bytes()
            assert a == b and a.count(b"\n") == 5
        d["msg"] = f"{len(cfg.selector.policies)} policies, N=10, T=5, two runs in {elapsed:.1f}s"


def test_c11_uplink(acceptance_log, micro_runs):
    cfg, root, _ = micro_runs
    with criterion(acceptance_log, 11, "vars-fl uplink equals fedavg-random uplink", 1.0) as d:
        vars_rows = read_jsonl(root / "a" / "vars-fl" / "7" / "rounds.jsonl")
        rand_rows = read_jsonl(root / "a" / "fedavg-random" / "7" / "rounds.jsonl")
        for rv, rr in zip(vars_rows, rand_rows, strict=True):
            assert rv["uplink_bytes"] == rr["uplink_bytes"]
            assert rv["uplink_bytes_total"] == rr["uplink_bytes_total"]
        d["msg"] = f"{vars_rows[0]['uplink_bytes']} bytes/round over {len(vars_rows)} rounds"


# --------------------------------------------------------------------------
# desk-scale runs shared by criteria 9 and 10

def _desk_seed(job):
    cfg, policies, seed = job
    prepared = prepare_data(cfg, seed)
    return [run_single(cfg, p, seed, prepared=prepared) for p in policies]


@pytest.fixture(scope="module")
def desk():
    cfg = load_config(DESK_CONFIG)
    uniform = cfg.replace(validation__mode="uniform", validation__per_class=50).validate()
    jobs = [(cfg, POLICIES, s) for s in cfg.experiment.seeds]
    jobs += [(uniform, ("vars-fl",), s) for s in cfg.experiment.seeds]
    start = time.perf_counter()
    workers = min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_desk_seed, jobs))
    else:
        batches = [_desk_seed(j) for j in jobs]
    elapsed = time.perf_counter() - start
    k = len(cfg.experiment.seeds)
    stratified = [r for b in batches[:k] for r in b]
    uniform_runs = [r for b in batches[k:] for r in b]
    return cfg, stratified, uniform_runs, elapsed


@pytest.mark.slow
def test_c09_desk_convergence(acceptance_log, desk):
    cfg, runs, _, elapsed = desk
    with criterion(acceptance_log, 9, "desk convergence, rounds to 70% accuracy", 20 * 60, elapsed) as d:
        th = 0.7
        reached, means = {}, {}
        for policy in POLICIES:
            hits = [r.thresholds[th] for r in runs if r.policy == policy]
            ok = [h for h in hits if h != "never"]
            reached[policy] = len(ok)
            means[policy] = float(np.mean(ok)) if ok else math.inf
        d["msg"] = "; ".join(f"{p} {means[p]:.1f} ({reached[p]}/3)" for p in POLICIES)
        assert means["vars-fl"] <= means["fedavg-random"]
        assert all(reached["vars-fl"] >= reached[p] for p in POLICIES)


@pytest.mark.slow
def test_c10_validation_composition(acceptance_log, desk):
    _, runs, uniform_runs, elapsed = desk
    with criterion(acceptance_log, 10, "stratified vs uniform scoring set", 15 * 60, elapsed) as d:
        strat = np.mean([r.final.accuracy for r in runs if r.policy == "vars-fl"])
        unif = np.mean([r.final.accuracy for r in uniform_runs])
        diff_pp = 100 * abs(strat - unif)
        d["msg"] = f"stratified {strat:.4f}, uniform {unif:.4f}, |diff| {diff_pp:.2f} pp"
        assert diff_pp < 2.0
