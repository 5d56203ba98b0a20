"""Artifact writers: round JSONL, summary CSV, complexity report, run deltas.

Floats are written with 17 significant digits so every value round-trips
bit-exactly and byte-level comparisons of two runs are meaningful.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

from .nn import ArchitectureSpec

FLOAT_FORMAT = ".17g"


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, FLOAT_FORMAT)


def dumps(obj) -> str:
    """Compact JSON with 17-significant-digit floats."""
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    if hasattr(obj, "item"):  # numpy scalar
        return dumps(obj.item())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class JsonlWriter:
    """Appends one object per line and flushes after each, so a crash loses at most one round."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh: IO[str] = self.path.open("w", encoding="utf-8", newline="\n")

    def write(self, obj) -> None:
        self._fh.write(dumps(obj.to_dict() if hasattr(obj, "to_dict") else obj))
        self._fh.write("\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_summary_csv(path: str | Path, rows: Iterable[dict]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "metric", "mean", "std", "n"])
        for r in rows:
            w.writerow([r["policy"], r["metric"], _fmt_float(r["mean"]), _fmt_float(r["std"]), r["n"]])


@dataclass(frozen=True)
class ComplexityReport:
    param_count: int
    layer_param_counts: tuple[int, ...]
    macs_per_sample: int
    clients_per_round: int
    val_size: int
    server_macs_per_round: int
    uplink_bytes_per_client: int
    uplink_bytes_per_round: int
    ledger_scalars: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_param_counts"] = list(self.layer_param_counts)
        return d

    def table(self) -> str:
        rows = [
            ("trainable parameters", f"{self.param_count:,}"),
            ("per-layer parameters", " / ".join(f"{c:,}" for c in self.layer_param_counts)),
            ("forward MACs per sample", f"{self.macs_per_sample:,}"),
            ("clients per round", f"{self.clients_per_round:,}"),
            ("scoring set size", f"{self.val_size:,}"),
            ("extra server MACs per round", f"{self.server_macs_per_round:,} ({self.server_macs_per_round:.3e})"),
            ("uplink bytes per client per round", f"{self.uplink_bytes_per_client:,}"
                                                   f" ({self.uplink_bytes_per_client / 1024:.1f} KiB)"),
            ("uplink bytes per round", f"{self.uplink_bytes_per_round:,}"),
            ("ledger memory (scalars)", f"{self.ledger_scalars:,}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def complexity_report(spec: ArchitectureSpec, clients_per_round: int, val_size: int, num_clients: int,
                      window: int, bytes_per_param: int = 4) -> ComplexityReport:
    """Integer cost accounting; the selection machinery adds no client upload."""
    c_fwd = spec.macs_per_sample
    per_client = spec.param_count * bytes_per_param
    return ComplexityReport(
        param_count=spec.param_count,
        layer_param_counts=tuple(spec.layer_param_counts()),
        macs_per_sample=c_fwd,
        clients_per_round=clients_per_round,
        val_size=val_size,
        server_macs_per_round=clients_per_round * val_size * c_fwd,
        uplink_bytes_per_client=per_client,
        uplink_bytes_per_round=clients_per_round * per_client,
        ledger_scalars=num_clients * window,
    )


DELTA_METRICS = ("accuracy", "f1_macro", "f1_weighted", "loss")


def round_deltas(rounds_a: Sequence[dict], rounds_b: Sequence[dict],
                 metrics: Sequence[str] = DELTA_METRICS) -> list[dict]:
    """Per-round test-metric differences a - b over rounds both runs evaluated."""
    by_round = {r["round"]: r for r in rounds_b if r.get("test")}
    out = []
    for ra in rounds_a:
        rb = by_round.get(ra["round"])
        if not ra.get("test") or rb is None:
            continue
        row = {"round": ra["round"]}
        for m in metrics:
            a, b = ra["test"][m], rb["test"][m]
            row[f"{m}_a"], row[f"{m}_b"], row[f"{m}_delta"] = a, b, a - b
        out.append(row)
    return out


def write_rows_csv(path_or_fh, rows: Sequence[dict]) -> None:
    def emit(fh):
        if not rows:
            return
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt_float(v) if isinstance(v, float) else v for v in r.values()])

    if hasattr(path_or_fh, "write"):
        emit(path_or_fh)
    else:
        with Path(path_or_fh).open("w", newline="", encoding="utf-8") as fh:
            emit(fh)
