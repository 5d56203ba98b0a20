"""
From validation loss to client reputation
=========================================

Scores a few hand-made rounds, shows how the sliding window and the
participation bonus shape reputation, and splits a round's selection budget
between exploitation and exploration.
"""

import numpy as np

from varsfl.selection import ClientLedger, compute_deltas, normalize_quality, vars_split

ledger = ClientLedger(range(6), window=3)

# Each round: the global model's validation loss, then each returned model's.
rounds = [
    (1.20, {0: 1.05, 1: 1.18, 2: 1.25}),
    (1.02, {0: 0.90, 3: 0.99, 4: 1.02}),
    (0.95, {0: 0.80, 1: 0.94, 5: 0.60}),
    (0.85, {0: 0.78, 2: 0.84, 3: 0.86}),
]
for t, (base, losses) in enumerate(rounds, start=1):
    deltas = compute_deltas(base, losses)
    records = normalize_quality(deltas, eps=0.01, zeta=1e-8, round=t)
    ledger.update(records)
    print(f"round {t}: base loss {base:.2f}")
    for r in records:
        print(f"   client {r.client_id}: delta {r.delta:.3f}  quality {r.quality:.3f}")

print("\nreputation = mean(window) * ln(1 + participations)")
for c in ledger.client_ids:
    rep = ledger.reputation(c)
    print(f"   client {c}: window {[round(q, 3) for q in ledger.history[c]]}, "
          f"p={ledger.participation[c]}, R={rep.score:.4f}")

# After the cold start, 70% of the slots go to the best reputations and the
# rest are drawn uniformly from everyone else.
rng = np.random.default_rng(0)
exploit, explore = vars_split(ledger, ledger.client_ids, m=4, rho=0.3, cold_start=2, t=5, rng=rng)
print(f"\nround 5 selection: exploit {exploit}, explore {explore}")
exploit, explore = vars_split(ledger, ledger.client_ids, m=4, rho=0.3, cold_start=2, t=2, rng=rng)
print(f"round 2 (cold start): exploit {exploit}, explore {explore}")
