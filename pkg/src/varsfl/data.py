"""Datasets, preprocessing, non-IID client partitioning and validation sets."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    provenance: str = "synthetic"
    # row positions in the dataset this one was carved from; lets splits and
    # shards be checked for disjointness after shuffling
    origin: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.intp)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"{y.size} labels for {x.shape[0]} rows")
        if y.size and (y.min() < 0 or y.max() >= len(self.class_names)):
            raise ValueError("label values must index class_names")
        origin = np.arange(y.size) if self.origin is None else np.asarray(self.origin, dtype=np.intp)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))
        object.__setattr__(self, "origin", origin)

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.intp)
        return LabeledDataset(self.features[rows], self.labels[rows], self.class_names,
                              self.provenance, self.origin[rows])

    def with_features(self, features: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(features, self.labels, self.class_names, self.provenance, self.origin)

    @classmethod
    def concat(cls, parts: Sequence["LabeledDataset"]) -> "LabeledDataset":
        first = parts[0]
        return cls(np.concatenate([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]),
                   first.class_names, first.provenance,
                   np.concatenate([p.origin for p in parts]))


# --------------------------------------------------------------------------
# acquisition

def generate_synthetic(num_classes: int, feature_dim: int, samples_per_class: Sequence[int],
                       cluster_spread: float, seed: int, center_scale: float = 1.0) -> LabeledDataset:
    """Gaussian blobs, one per class.

    Class means are drawn from N(0, center_scale^2) per coordinate and samples
    scatter around them with standard deviation ``cluster_spread``; the ratio
    of the two sets how much the classes overlap.
    """
    counts = [int(c) for c in samples_per_class]
    if len(counts) != num_classes:
        raise ValueError(f"samples_per_class has {len(counts)} entries for {num_classes} classes")
    if num_classes < 1 or feature_dim < 1 or any(c < 1 for c in counts):
        raise ValueError("class count, feature_dim and every per-class count must be positive")
    if cluster_spread < 0:
        raise ValueError("cluster_spread must be nonnegative")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(num_classes, feature_dim))
    labels = np.repeat(np.arange(num_classes), counts)
    features = centers[labels] + cluster_spread * rng.standard_normal((labels.size, feature_dim))
    order = rng.permutation(labels.size)
    names = tuple(f"class_{c:02d}" for c in range(num_classes))
    return LabeledDataset(features[order], labels[order], names, "synthetic")


def load_csv(path: str | Path, label_column: str, drop_columns: Sequence[str] = (),
             class_names: Sequence[str] | None = None) -> LabeledDataset:
    """Read a comma-separated, headered, UTF-8 file with '.' decimals.

    Every column other than the label and ``drop_columns`` must be numeric;
    the first offending cell is reported by column name and 1-based data row.
    Labels map to ``class_names`` order when given, else sorted order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if label_column not in header:
            raise ValueError(f"{path}: label column {label_column!r} not found in header")
        missing = [c for c in drop_columns if c not in header]
        if missing:
            raise ValueError(f"{path}: drop_columns not in header: {missing}")
        label_at = header.index(label_column)
        keep = [j for j, h in enumerate(header) if h != label_column and h not in set(drop_columns)]
        rows: list[list[float]] = []
        raw_labels: list[str] = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {row_no} has {len(row)} fields, header has {len(header)}")
            values = []
            for j in keep:
                try:
                    values.append(float(row[j]))
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric value {row[j]!r} in column {header[j]!r} at row {row_no}"
                    ) from None
            rows.append(values)
            raw_labels.append(row[label_at].strip())
    if not rows:
        raise ValueError(f"{path}: no data rows")
    features = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        bad_row, bad_col = np.argwhere(~np.isfinite(features))[0]
        raise ValueError(f"{path}: non-finite value in column {header[keep[bad_col]]!r} at row {bad_row + 1}")
    names = list(class_names) if class_names is not None else sorted(set(raw_labels))
    index = {name: i for i, name in enumerate(names)}
    unknown = sorted(set(raw_labels) - index.keys())
    if unknown:
        raise ValueError(f"{path}: labels not in class_names: {unknown[:5]}")
    labels = np.array([index[v] for v in raw_labels], dtype=np.intp)
    return LabeledDataset(features, labels, tuple(names), "csv")


# --------------------------------------------------------------------------
# preprocessing

def _class_index(ds: LabeledDataset, class_label: int | str) -> int | None:
    if isinstance(class_label, (int, np.integer)):
        return int(class_label) if 0 <= class_label < ds.num_classes else None
    try:
        return ds.class_names.index(str(class_label))
    except ValueError:
        return None


def majority_cap_size(n_other: int, cap_fraction: float) -> int:
    """Largest majority count keeping its share at or below ``cap_fraction``."""
    cap = Fraction(str(cap_fraction))
    return math.floor(cap / (1 - cap) * n_other)


def cap_majority_class(ds: LabeledDataset, class_label: int | str, cap_fraction: float,
                       seed: int = 0) -> LabeledDataset:
    """Down-sample one class so it makes up at most ``cap_fraction`` of the result."""
    if not 0.0 < cap_fraction < 1.0:
        raise ValueError(f"cap_fraction must lie in (0, 1), got {cap_fraction}")
    c = _class_index(ds, class_label)
    if c is None or not np.any(ds.labels == c):
        warnings.warn(f"class {class_label!r} absent; majority cap not applied", stacklevel=2)
        return ds
    major = np.flatnonzero(ds.labels == c)
    n_other = len(ds) - major.size
    kept = majority_cap_size(n_other, cap_fraction)
    if major.size <= kept:
        return ds
    rng = np.random.default_rng(seed)
    keep_major = rng.choice(major, size=kept, replace=False)
    rows = np.sort(np.concatenate([np.flatnonzero(ds.labels != c), keep_major]))
    return ds.subset(rows)


@dataclass
class Standardizer:
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    def fit(self, features: np.ndarray) -> "Standardizer":
        x = np.asarray(features, dtype=np.float64)
        if x.shape[0] == 0:
            raise ValueError("cannot fit a standardizer on zero rows")
        self.mean = x.mean(axis=0)
        std = x.std(axis=0)
        # constant columns map to 0 instead of dividing by zero
        self.scale = np.where(std > 0, std, 1.0)
        return self

    def transform(self, features: np.ndarray) -> np.ndarray:
        if self.mean is None:
            raise RuntimeError("Standardizer.transform called before fit")
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.scale

    def apply(self, ds: LabeledDataset) -> LabeledDataset:
        return ds.with_features(self.transform(ds.features))


def fit_apply_standardizer(train: LabeledDataset, others: Sequence[LabeledDataset] = ()):
    """Fit on ``train`` only and transform it together with ``others``.

    Returns ``(train_std, [others_std...], standardizer)``.
    """
    st = Standardizer().fit(train.features)
    return st.apply(train), [st.apply(o) for o in others], st


def largest_remainder(total: int, fractions: Sequence[float]) -> list[int]:
    """Integer shares of ``total`` that differ from the exact ones by < 1."""
    exact = [total * f for f in fractions]
    counts = [math.floor(e) for e in exact]
    short = total - sum(counts)
    by_remainder = sorted(range(len(exact)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in by_remainder[:short]:
        counts[i] += 1
    return counts


@dataclass
class SplitBundle:
    train: LabeledDataset
    validation: LabeledDataset
    test: LabeledDataset
    fractions: tuple[float, float, float]

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def split(ds: LabeledDataset, fractions=(0.70, 0.15, 0.15), stratified: bool = True,
          seed: int = 0) -> SplitBundle:
    """Seeded train/validation/test split with largest-remainder sizes.

    Stratified mode applies the rounding per class, so each split's class
    count is within one sample of its exact proportional share.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    if stratified:
        needed = sum(f > 0 for f in fractions)
        counts = ds.class_counts()
        for c in range(ds.num_classes):
            if 0 < counts[c] < needed:
                raise ValueError(
                    f"class {ds.class_names[c]!r} has {counts[c]} samples; stratified split needs >= {needed}"
                )
        for c in range(ds.num_classes):
            rows = rng.permutation(np.flatnonzero(ds.labels == c))
            sizes = largest_remainder(rows.size, fractions)
            bounds = np.cumsum([0] + sizes)
            for s in range(3):
                parts[s].append(rows[bounds[s]:bounds[s + 1]])
    else:
        rows = rng.permutation(len(ds))
        bounds = np.cumsum([0] + largest_remainder(rows.size, fractions))
        for s in range(3):
            parts[s].append(rows[bounds[s]:bounds[s + 1]])
    subsets = [ds.subset(np.sort(np.concatenate(p))) for p in parts]
    return SplitBundle(*subsets, fractions=fractions)


# --------------------------------------------------------------------------
# partitioning

SCHEMES = ("class-inventory", "dirichlet")


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    scheme: str = "class-inventory"
    min_classes: int = 1
    max_classes: int | None = None  # None: all classes
    min_samples: int = 1
    max_samples: int | None = None  # None: unbounded
    alpha: float = 0.5
    seed: int = 0

    def validate(self, num_classes: int) -> None:
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown partition scheme {self.scheme!r}; choose from {SCHEMES}")
        hi = num_classes if self.max_classes is None else self.max_classes
        if not 1 <= self.min_classes <= hi <= num_classes:
            raise ValueError(
                f"need 1 <= min_classes <= max_classes <= {num_classes}, got {self.min_classes}..{hi}"
            )
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        if self.max_samples is not None and self.max_samples < self.min_samples:
            raise ValueError("max_samples must be >= min_samples")
        if self.scheme == "dirichlet" and self.alpha <= 0:
            raise ValueError("dirichlet alpha must be positive")


@dataclass
class ClientShard:
    client_id: int
    indices: np.ndarray  # rows of the training set
    dataset: LabeledDataset = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.dataset)

    @property
    def classes(self) -> np.ndarray:
        return np.flatnonzero(self.dataset.class_counts())


def _box_scaled_sizes(raw: np.ndarray, total: int, lo: int, hi: float) -> np.ndarray:
    """Integer sizes proportional to ``raw``, clipped to [lo, hi], summing to ``total``."""
    def clipped(s):
        return np.clip(raw * s, lo, hi)

    a, b = 0.0, 1.0
    while clipped(b).sum() < total:
        b *= 2.0
    for _ in range(200):
        mid = 0.5 * (a + b)
        if clipped(mid).sum() < total:
            a = mid
        else:
            b = mid
    exact = clipped(b)
    sizes = np.floor(exact).astype(np.int64)
    short = total - int(sizes.sum())
    order = np.lexsort((np.arange(raw.size), -(exact - sizes)))
    for i in order:
        if short <= 0:
            break
        if sizes[i] < hi:
            sizes[i] += 1
            short -= 1
    return sizes


def _weighted_pick(rng: np.random.Generator, candidates: np.ndarray, mass: np.ndarray, k: int) -> np.ndarray:
    k = min(k, candidates.size)
    if k == 0:
        return candidates[:0]
    return rng.choice(candidates, size=k, replace=False, p=mass / mass.sum())


def _class_inventory(labels: np.ndarray, num_classes: int, spec: PartitionSpec,
                     rng: np.random.Generator) -> list[list[int]]:
    n = labels.size
    N = spec.num_clients
    max_c = num_classes if spec.max_classes is None else spec.max_classes
    hi = np.inf if spec.max_samples is None else spec.max_samples
    lo = spec.min_samples
    raw = rng.uniform(lo, hi if np.isfinite(hi) else 2.0 * n / N, size=N)
    targets = _box_scaled_sizes(raw, n, lo, hi)

    pools = [list(rng.permutation(np.flatnonzero(labels == c))) for c in range(num_classes)]
    assigned: list[list[int]] = [[] for _ in range(N)]
    inventory: list[set[int]] = [set() for _ in range(N)]

    def take(client: int, c: int, count: int):
        got = pools[c][:count]
        del pools[c][:count]
        assigned[client].extend(got)
        if got:
            inventory[client].add(c)

    for i in range(N):
        k = int(rng.integers(spec.min_classes, max_c + 1))
        remaining = np.array([len(p) for p in pools], dtype=np.float64)
        avail = np.flatnonzero(remaining > 0)
        chosen = list(_weighted_pick(rng, avail, remaining[avail], k))
        need = int(targets[i])
        while need > 0 and chosen:
            mass = np.array([len(pools[c]) for c in chosen], dtype=np.float64)
            if mass.sum() <= need:
                for c in chosen:
                    take(i, c, len(pools[c]))
                need -= int(mass.sum())
                # top up with further classes while the inventory allows it
                remaining = np.array([len(p) for p in pools], dtype=np.float64)
                avail = np.array([c for c in np.flatnonzero(remaining > 0) if c not in inventory[i]], dtype=np.intp)
                room = max_c - len(inventory[i])
                chosen = list(_weighted_pick(rng, avail, remaining[avail], min(room, 1))) if room > 0 else []
                continue
            for c, cnt in zip(chosen, largest_remainder(need, list(mass / mass.sum()))):
                take(i, c, cnt)
            need = 0

    # leftovers from unevenly exhausted pools: smallest shards first, preferring
    # shards that already hold the class, then ones with inventory room
    sizes = np.array([len(a) for a in assigned], dtype=np.int64)
    for c in range(num_classes):
        while pools[c]:
            has_room = sizes < hi
            tiers = [
                has_room & np.array([c in inv for inv in inventory]),
                has_room & np.array([len(inv) < max_c for inv in inventory]),
                has_room,
            ]
            for mask in tiers:
                if mask.any():
                    cand = np.flatnonzero(mask)
                    break
            else:  # pragma: no cover - excluded by the feasibility check
                raise ValueError("no shard has room for leftover samples")
            j = cand[np.lexsort((cand, sizes[cand]))[0]]
            gap = int(targets[j] - sizes[j])
            count = max(1, gap) if np.isinf(hi) else min(max(1, gap), int(hi - sizes[j]))
            before = len(assigned[j])
            take(j, c, count)
            sizes[j] += len(assigned[j]) - before
    return assigned


def _dirichlet(labels: np.ndarray, num_classes: int, spec: PartitionSpec,
               rng: np.random.Generator, max_tries: int = 1000) -> list[list[int]]:
    N = spec.num_clients
    for _ in range(max_tries):
        assigned: list[list[int]] = [[] for _ in range(N)]
        for c in range(num_classes):
            rows = rng.permutation(np.flatnonzero(labels == c))
            props = rng.dirichlet(np.full(N, spec.alpha))
            cuts = (np.cumsum(props) * rows.size).astype(np.int64)[:-1]
            for i, chunk in enumerate(np.split(rows, cuts)):
                assigned[i].extend(chunk.tolist())
        sizes = [len(a) for a in assigned]
        if min(sizes) >= spec.min_samples and (spec.max_samples is None or max(sizes) <= spec.max_samples):
            return assigned
    raise ValueError(
        f"dirichlet(alpha={spec.alpha}) did not meet the size bounds in {max_tries} draws; "
        "raise alpha or relax min_samples/max_samples"
    )


def partition_noniid(train: LabeledDataset, spec: PartitionSpec) -> list[ClientShard]:
    """Split the training set across ``spec.num_clients`` clients.

    Every training row lands in exactly one shard. ``class-inventory`` gives
    each client a random number of classes and a random size inside the
    configured bounds; ``dirichlet`` draws per-class client proportions from a
    symmetric Dirichlet(alpha).
    """
    spec.validate(train.num_classes)
    n, N = len(train), spec.num_clients
    if N * spec.min_samples > n:
        raise ValueError(f"infeasible partition: num_clients*min_samples = {N * spec.min_samples} > {n} samples")
    if spec.max_samples is not None and N * spec.max_samples < n:
        raise ValueError(f"infeasible partition: num_clients*max_samples = {N * spec.max_samples} < {n} samples")
    rng = np.random.default_rng(spec.seed)
    if N == 1:
        groups = [list(range(n))]
    elif spec.scheme == "class-inventory":
        groups = _class_inventory(train.labels, train.num_classes, spec, rng)
    else:
        groups = _dirichlet(train.labels, train.num_classes, spec, rng)
    shards = []
    for i, rows in enumerate(groups):
        rows = np.sort(np.asarray(rows, dtype=np.intp))
        shards.append(ClientShard(i, rows, train.subset(rows)))
    return shards


def presence_matrix(shards: Sequence[ClientShard], num_classes: int) -> np.ndarray:
    out = np.zeros((len(shards), num_classes), dtype=np.int64)
    for s in shards:
        out[s.client_id, s.classes] = 1
    return out


def partition_stats(shards: Sequence[ClientShard]) -> dict[str, float]:
    sizes = np.array([s.n for s in shards])
    ncls = np.array([s.classes.size for s in shards])
    return {
        "num_clients": len(shards),
        "samples_min": int(sizes.min()), "samples_max": int(sizes.max()),
        "samples_mean": float(sizes.mean()), "samples_median": float(np.median(sizes)),
        "classes_min": int(ncls.min()), "classes_max": int(ncls.max()),
        "classes_mean": float(ncls.mean()), "classes_median": float(np.median(ncls)),
    }


def write_partition_csv(path: str | Path, shards: Sequence[ClientShard], class_names: Sequence[str]) -> None:
    """client_id, n_samples, n_classes, then one 0/1 presence column per class."""
    pres = presence_matrix(shards, len(class_names))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client_id", "n_samples", "n_classes", *class_names])
        for s in shards:
            w.writerow([s.client_id, s.n, int(pres[s.client_id].sum()), *pres[s.client_id].tolist()])


# --------------------------------------------------------------------------
# server-side validation set

def build_validation_set(val: LabeledDataset, mode: str = "stratified", per_class: int | None = None,
                         seed: int = 0) -> LabeledDataset:
    """Return ``val`` as-is (stratified) or exactly ``per_class`` rows of each class (uniform)."""
    if mode == "stratified":
        return val
    if mode != "uniform":
        raise ValueError(f"validation mode must be 'stratified' or 'uniform', got {mode!r}")
    if per_class is None or per_class < 1:
        raise ValueError("uniform validation needs per_class >= 1")
    counts = val.class_counts()
    for c, n_c in enumerate(counts):
        if n_c < per_class:
            raise ValueError(
                f"class {val.class_names[c]!r} has only {n_c} validation samples, fewer than per_class={per_class}"
            )
    rng = np.random.default_rng(seed)
    rows = [rng.choice(np.flatnonzero(val.labels == c), size=per_class, replace=False)
            for c in range(val.num_classes)]
    return val.subset(rng.permutation(np.concatenate(rows)))
