"""
Four selection policies on one federation
=========================================

Runs the desk configuration for 30 rounds with one seed and prints each
policy's test-accuracy curve. Every policy sees the same data split,
partition and initial model. Takes roughly a minute.
"""

from pathlib import Path

from varsfl.config import load_config
from varsfl.federation import prepare_data, run_single
from varsfl.selection import POLICIES

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "desk.txt")
cfg = cfg.replace(training__rounds=30, experiment__thresholds=(0.6, 0.7)).validate()
seed = 7
prepared = prepare_data(cfg, seed)
print(f"{len(prepared.shards)} clients, {len(prepared.train.labels)} training samples, "
      f"{len(prepared.score_val.labels)} scoring samples")

results = {p: run_single(cfg, p, seed, prepared=prepared) for p in POLICIES}

print("\nround " + " ".join(f"{p:>16}" for p in POLICIES))
for t in range(0, cfg.training.rounds, 3):
    print(f"{t + 1:5d} " + " ".join(f"{results[p].reports[t].test.accuracy:16.3f}" for p in POLICIES))

print("\nrounds to threshold")
for p, r in results.items():
    print(f"   {p:16s} {r.thresholds}   final accuracy {r.final.accuracy:.3f}, macro F1 {r.final.f1_macro:.3f}")

# Which clients did the reputation policy lean on after the cold start?
vars_run = results["vars-fl"]
late = [c for rep in vars_run.reports[cfg.selector.cold_start:] for c in rep.selected]
top = sorted(set(late), key=late.count, reverse=True)[:5]
print("\nvars-fl most picked after cold start:",
      ", ".join(f"client {c} ({late.count(c)}x, {prepared.shards[c].n} samples)" for c in top))
