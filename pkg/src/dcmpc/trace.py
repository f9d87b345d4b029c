"""Workload traces: CSV ingestion, per-minute aggregation, synthetic generation.

The on-disk format is a UTF-8 comma-separated file with a header row. Two
schemas are supported:

* rate (default): columns ``minute,cluster,rate`` with one row per
  (minute, cluster) carrying the already-aggregated mean arrival rate;
* events: columns ``timestamp,cluster,count`` with one row per event batch,
  timestamps in seconds; per-minute rates are total count / 60 s.

Missing minutes become zero-rate with a warning (set ``fill_gaps=False`` to
make them an error instead).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UsageError


@dataclass(frozen=True)
class WorkloadTrace:
    """Per-cluster request rates, one sample per minute, shape (J, T)."""

    loads: np.ndarray
    start: int = 0
    source: str = ""

    def __post_init__(self):
        loads = np.atleast_2d(np.asarray(self.loads, dtype=float))
        object.__setattr__(self, "loads", loads)
        if loads.size == 0:
            raise DomainError("a trace needs at least one sample")
        if np.any(loads < 0) or not np.all(np.isfinite(loads)):
            raise DomainError("loads must be finite and nonnegative")

    @property
    def n_clusters(self) -> int:
        return self.loads.shape[0]

    @property
    def length(self) -> int:
        return self.loads.shape[1]

    @property
    def end(self) -> int:
        """First time index past the trace."""
        return self.start + self.length

    def window(self, t: int, steps: int) -> np.ndarray:
        """Loads for absolute times t .. t+steps-1, shape (J, steps)."""
        i = t - self.start
        if i < 0 or i + steps > self.length:
            raise UsageError(
                f"window [{t}, {t + steps - 1}] outside trace [{self.start}, {self.end - 1}]"
            )
        return self.loads[:, i : i + steps]

    def at(self, t: int) -> np.ndarray:
        return self.window(t, 1)[:, 0]


@dataclass(frozen=True)
class TraceSchema:
    """Column layout of a trace CSV; `kind` is \"rate\" or \"events\"."""

    kind: str = "rate"
    time_col: str = "minute"
    cluster_col: str = "cluster"
    value_col: str = "rate"
    clusters: tuple[int, ...] | None = None  # declared universe; None = infer

    def __post_init__(self):
        if self.kind not in ("rate", "events"):
            raise UsageError(f"unknown schema kind {self.kind!r}")


EVENT_SCHEMA = TraceSchema(kind="events", time_col="timestamp", value_col="count")


def load_csv(path, schema: TraceSchema | None = None, fill_gaps: bool = True) -> WorkloadTrace:
    """Read a trace CSV into per-minute mean rates per cluster."""
    schema = schema if schema is not None else TraceSchema()
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        try:
            ti = header.index(schema.time_col)
            ci = header.index(schema.cluster_col)
            vi = header.index(schema.value_col)
        except ValueError:
            raise UsageError(
                f"{path}: header {header} is missing one of "
                f"({schema.time_col}, {schema.cluster_col}, {schema.value_col})"
            ) from None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise UsageError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                tval = float(row[ti])
                cid = int(row[ci])
                val = float(row[vi])
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from None
            if val < 0:
                raise UsageError(f"{path}:{lineno}: negative value {val}")
            if schema.kind == "rate" and tval != int(tval):
                raise UsageError(f"{path}:{lineno}: minute index {tval} is not an integer")
            if schema.clusters is not None and cid not in schema.clusters:
                raise UsageError(f"{path}:{lineno}: unknown cluster id {cid}")
            rows.append((lineno, tval, cid, val))
    if not rows:
        raise UsageError(f"{path}: no data rows")

    cluster_ids = (
        list(schema.clusters) if schema.clusters is not None
        else sorted({cid for _, _, cid, _ in rows})
    )
    cmap = {cid: i for i, cid in enumerate(cluster_ids)}

    if schema.kind == "rate":
        minutes = sorted({int(t) for _, t, _, _ in rows})
        start, stop = minutes[0], minutes[-1]
        loads = np.full((len(cluster_ids), stop - start + 1), np.nan)
        for lineno, t, cid, val in rows:
            col = int(t) - start
            if not np.isnan(loads[cmap[cid], col]):
                raise UsageError(f"{path}:{lineno}: duplicate entry for minute {int(t)}, cluster {cid}")
            loads[cmap[cid], col] = val
    else:
        minutes = sorted({int(t // 60) for _, t, _, _ in rows})
        start, stop = minutes[0], minutes[-1]
        loads = np.full((len(cluster_ids), stop - start + 1), np.nan)
        counts = np.zeros_like(loads)
        for _, t, cid, val in rows:
            counts[cmap[cid], int(t // 60) - start] += val
        observed = np.zeros(loads.shape[1], dtype=bool)
        for _, t, _, _ in rows:
            observed[int(t // 60) - start] = True
        loads[:, observed] = counts[:, observed] / 60.0

    missing = int(np.isnan(loads).sum())
    if missing:
        if not fill_gaps:
            raise UsageError(f"{path}: {missing} missing (minute, cluster) samples")
        warnings.warn(f"{path}: filled {missing} missing (minute, cluster) samples with zero rate")
        loads = np.nan_to_num(loads, nan=0.0)
    return WorkloadTrace(loads=loads, start=start, source=str(path))


def save_csv(trace: WorkloadTrace, path) -> None:
    """Deterministic writer of the rate schema (rows sorted by minute, cluster)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["minute", "cluster", "rate"])
        for i in range(trace.length):
            for j in range(trace.n_clusters):
                writer.writerow([trace.start + i, j, repr(float(trace.loads[j, i]))])


@dataclass(frozen=True)
class SyntheticSpec:
    """Seeded sinusoid-plus-uniform-noise generator; loads stay positive.

    Per-cluster arrays broadcast from scalars. The invariant
    base > amplitude + noise >= 0 keeps every sample strictly positive.
    """

    n_clusters: int
    length: int
    base: np.ndarray
    amplitude: np.ndarray
    period: np.ndarray
    noise: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1 or self.length < 1:
            raise DomainError("need at least one cluster and one sample")
        for name in ("base", "amplitude", "period", "noise"):
            arr = np.broadcast_to(
                np.asarray(getattr(self, name), dtype=float), (self.n_clusters,)
            ).copy()
            object.__setattr__(self, name, arr)
        if np.any(self.amplitude < 0) or np.any(self.noise < 0):
            raise DomainError("amplitude and noise must be nonnegative")
        if np.any(self.period <= 0):
            raise DomainError("periods must be positive")
        if np.any(self.base <= self.amplitude + self.noise):
            raise DomainError("need base > amplitude + noise to keep loads positive")


def synth(spec: SyntheticSpec) -> WorkloadTrace:
    """Generate  base + amplitude*sin(2*pi*t/period) + U(-noise, noise), clipped at 0."""
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length)
    loads = np.empty((spec.n_clusters, spec.length))
    for j in range(spec.n_clusters):
        wave = spec.base[j] + spec.amplitude[j] * np.sin(2.0 * np.pi * t / spec.period[j])
        noise = rng.uniform(-spec.noise[j], spec.noise[j], spec.length) if spec.noise[j] > 0 else 0.0
        loads[j] = np.clip(wave + noise, 0.0, None)
    return WorkloadTrace(loads=loads, start=0, source=f"synth(seed={spec.seed})")


def split(trace: WorkloadTrace, t0: int) -> tuple[WorkloadTrace, WorkloadTrace]:
    """Disjoint (history, evaluation) parts: first t0 samples, then the rest.

    Time indices are preserved, so the evaluation segment starts at
    trace.start + t0.
    """
    if not 0 < t0 < trace.length:
        raise UsageError(f"split point {t0} outside (0, {trace.length})")
    hist = WorkloadTrace(trace.loads[:, :t0].copy(), trace.start, trace.source)
    rest = WorkloadTrace(trace.loads[:, t0:].copy(), trace.start + t0, trace.source)
    return hist, rest
