"""
Preparing federated data
========================

Generates an imbalanced synthetic dataset, caps the majority class, splits and
standardizes it, then partitions the training split across 100 clients.
"""

import numpy as np

from varsfl import data as D

# One dominant class, the rest much smaller.
counts = [20000] + [1500] * 14
ds = D.generate_synthetic(15, 43, counts, cluster_spread=2.0, seed=0)
print("raw class counts   ", ds.class_counts().tolist())

# Down-sample the dominant class to at most 18% of the capped dataset.
capped = D.cap_majority_class(ds, "class_00", 0.18, seed=0)
c = capped.class_counts()
print("capped class counts", c.tolist(), f"(class_00 share {c[0] / c.sum():.4f})")

# Stratified 70/15/15 split; standardization statistics come from train only.
bundle = D.split(capped, (0.7, 0.15, 0.15), stratified=True, seed=0)
print("split sizes        ", bundle.sizes())
train, (val, test), scaler = D.fit_apply_standardizer(bundle.train, [bundle.validation, bundle.test])
print(f"train feature means within {np.abs(train.features.mean(axis=0)).max():.1e} of zero")

# Class-inventory partition: each client holds a few classes, sizes vary widely.
spec = D.PartitionSpec(num_clients=100, scheme="class-inventory", min_classes=1, max_classes=8,
                       min_samples=50, seed=0)
shards = D.partition_noniid(train, spec)
stats = D.partition_stats(shards)
print("\nclass-inventory:", {k: round(v, 2) for k, v in stats.items()})

presence = D.presence_matrix(shards, train.num_classes)
print("clients holding each class:", presence.sum(axis=0).tolist())
for s in shards[:5]:
    print(f"  client {s.client_id}: {s.n:5d} samples, classes {s.classes.tolist()}")

# The Dirichlet scheme gives a different flavour of label skew.
dspec = D.PartitionSpec(num_clients=100, scheme="dirichlet", min_classes=1, alpha=0.3, min_samples=20, seed=0)
dstats = D.partition_stats(D.partition_noniid(train, dspec))
print("\ndirichlet(0.3):", {k: round(v, 2) for k, v in dstats.items()})

# Two scoring sets for the server: the stratified validation split and a
# class-balanced draw of 50 samples per class.
uniform = D.build_validation_set(val, "uniform", per_class=50, seed=0)
print("\nstratified scoring set", val.class_counts().tolist())
print("uniform scoring set   ", uniform.class_counts().tolist())
