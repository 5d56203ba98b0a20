"""
What selection costs
====================

Integer accounting for the full-size setting: parameters, forward MACs, the
server's extra scoring work per round, client uplink and ledger memory.
"""

from varsfl.nn import ArchitectureSpec
from varsfl.reporting import complexity_report

report = complexity_report(ArchitectureSpec(), clients_per_round=10, val_size=110_407, num_clients=100, window=5)
print(report.table())

# Scoring m returned models costs one validation pass each; uplink is the
# model alone, identical for every policy.
for m in (5, 10, 20):
    r = complexity_report(ArchitectureSpec(), m, 110_407, 100, 5)
    print(f"m={m:2d}: server MACs {r.server_macs_per_round:.3e}, uplink {r.uplink_bytes_per_round:,} bytes/round")
