"""Outcome counters, latency CDFs, chain growth and report export."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

OUTCOMES = ("committed", "rw_conflict", "sr_collision", "bad_signature")


@dataclass
class OutcomeCounters:
    """Per-second buckets, indexed from the start of the transfer phase."""

    submitted: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    committed: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    rw_conflict: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    sr_collision: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    bad_signature: dict[int, int] = field(default_factory=lambda: defaultdict(int))

    def add(self, outcome: str, bucket: int, n: int = 1) -> None:
        getattr(self, outcome)[bucket] += n

    def total(self, outcome: str) -> int:
        return sum(getattr(self, outcome).values())

    def buckets(self) -> range:
        keys = [k for name in ("submitted",) + OUTCOMES for k in getattr(self, name)]
        return range(0, max(keys) + 1) if keys else range(0)

    def row(self, bucket: int) -> dict[str, int]:
        return {name: getattr(self, name).get(bucket, 0) for name in ("submitted",) + OUTCOMES}


@dataclass(frozen=True)
class LatencySample:
    tx_id: str
    submit_time: float
    commit_time: float

    @property
    def latency(self) -> float:
        return self.commit_time - self.submit_time


@dataclass(frozen=True)
class ChainGrowthSample:
    time_ms: float
    cumulative_bytes: int
    cumulative_blocks: int


# --------------------------------------------------------------------------
# CDF


@dataclass(frozen=True)
class LatencyCdf:
    points: tuple[tuple[float, float], ...]
    samples: tuple[float, ...]

    @property
    def is_empty(self) -> bool:
        return not self.samples

    def percentile(self, p: float) -> float:
        """Linear interpolation between closest ranks (``(n - 1) * p`` position)."""
        if self.is_empty:
            raise ValueError("percentile of an empty CDF")
        if not 0.0 <= p <= 100.0:
            raise ValueError("percentile must lie in [0, 100]")
        xs = self.samples
        pos = (len(xs) - 1) * p / 100.0
        lo = math.floor(pos)
        hi = min(lo + 1, len(xs) - 1)
        return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


EMPTY_CDF = LatencyCdf((), ())


def compute_cdf(samples: Sequence[float]) -> LatencyCdf:
    """Empirical CDF: one (value, P[X <= value]) point per distinct value."""
    if len(samples) == 0:
        return EMPTY_CDF
    xs = tuple(sorted(float(s) for s in samples))
    n = len(xs)
    points = []
    for i, x in enumerate(xs, 1):
        if i < n and xs[i] == x:
            continue
        points.append((x, i / n))
    return LatencyCdf(tuple(points), xs)


# --------------------------------------------------------------------------
# Throughput and growth


def throughput_series(counters: OutcomeCounters, duration_s: float) -> tuple[list[int], float]:
    """Committed SRs per transfer-phase second and the run average (SRs/s)."""
    if duration_s <= 0:
        raise ValueError("transfer phase duration must be positive")
    n = max(len(counters.buckets()), math.ceil(duration_s))
    series = [counters.committed.get(b, 0) for b in range(n)]
    return series, counters.total("committed") / duration_s


def least_squares_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    if sxx == 0:
        raise ValueError("slope undefined: all samples share one time")
    return sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / sxx


def growth_rate(
    samples: Sequence[ChainGrowthSample],
    transfer_start_ms: float,
    transfer_end_ms: float | None = None,
) -> tuple[float, float]:
    """Least-squares bytes/s over the transfer phase, plus its start marker (ms)."""
    window = [s for s in samples if s.time_ms >= transfer_start_ms
              and (transfer_end_ms is None or s.time_ms <= transfer_end_ms)]
    if len(window) < 2:
        raise ValueError("need at least two growth samples in the transfer phase")
    slope_per_ms = least_squares_slope([s.time_ms for s in window], [s.cumulative_bytes for s in window])
    return slope_per_ms * 1000.0, transfer_start_ms


def first_exceed_time(counters: OutcomeCounters, outcome: str, threshold: float) -> float | None:
    """End of the first second (s from transfer start) where the cumulative
    ``outcome`` / submitted ratio exceeds ``threshold``."""
    subs = outs = 0
    for b in counters.buckets():
        subs += counters.submitted.get(b, 0)
        outs += getattr(counters, outcome).get(b, 0)
        if subs and outs / subs > threshold:
            return float(b + 1)
    return None


# --------------------------------------------------------------------------
# Report


@dataclass
class MetricsReport:
    config: dict[str, Any]
    seed: int
    transfer_start_ms: float
    transfer_duration_s: float
    totals: dict[str, int]
    counters: OutcomeCounters
    latencies: list[LatencySample]
    growth: list[ChainGrowthSample]
    collision_reasons: dict[str, int]
    channels: dict[str, dict[str, Any]]
    ordered_total: int
    idle_slots: int = 0

    @property
    def cdf(self) -> LatencyCdf:
        return compute_cdf([s.latency for s in self.latencies])

    def fraction(self, outcome: str) -> float:
        sub = self.totals["submitted"]
        return self.totals[outcome] / sub if sub else 0.0

    def throughput(self) -> tuple[list[int], float]:
        return throughput_series(self.counters, self.transfer_duration_s)

    def ordered_throughput(self) -> float:
        return self.ordered_total / self.transfer_duration_s

    def growth_rate(self) -> float:
        end = self.transfer_start_ms + self.transfer_duration_s * 1000.0
        return growth_rate(self.growth, self.transfer_start_ms, end)[0]

    def mean_block_bytes(self, transfer_only: bool = True) -> float:
        sizes = []
        prev = None
        for s in self.growth:
            if prev is not None and s.cumulative_blocks > prev.cumulative_blocks \
                    and (not transfer_only or s.time_ms >= self.transfer_start_ms):
                sizes.append((s.cumulative_bytes - prev.cumulative_bytes)
                             / (s.cumulative_blocks - prev.cumulative_blocks))
            prev = s
        return sum(sizes) / len(sizes) if sizes else 0.0

    def summary(self) -> dict[str, Any]:
        series, avg = self.throughput()
        cdf = self.cdf
        latency = {}
        if not cdf.is_empty:
            latency = {f"p{p}": cdf.percentile(p) for p in (0, 50, 90, 99, 100)}
            latency["mean"] = sum(cdf.samples) / len(cdf.samples)
        try:
            growth = self.growth_rate()
        except ValueError:
            growth = None
        return {
            "schema": "slicechain.report/1",
            "seed": self.seed,
            "config": self.config,
            "transfer_start_ms": self.transfer_start_ms,
            "transfer_duration_s": self.transfer_duration_s,
            "totals": dict(self.totals),
            "fractions": {k: self.fraction(k) for k in OUTCOMES},
            "collision_reasons": dict(sorted(self.collision_reasons.items())),
            "throughput": {
                "committed_per_s": avg,
                "ordered_per_s": self.ordered_throughput(),
                "series": series,
            },
            "latency_ms": latency,
            "growth": {
                "bytes_per_s": growth,
                "mean_block_bytes": self.mean_block_bytes(),
                "final_bytes": self.growth[-1].cumulative_bytes if self.growth else 0,
                "final_blocks": self.growth[-1].cumulative_blocks if self.growth else 0,
            },
            "idle_slots": self.idle_slots,
            "channels": self.channels,
        }


def export_report(report: MetricsReport, out_dir: str | Path, formats: Sequence[str] = ("csv", "json")) -> list[Path]:
    """Write throughput.csv, latency_cdf.csv, growth.csv and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    formats = {f.lower() for f in formats}
    if "csv" in formats:
        path = out / "throughput.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "committed", "rw_conflict", "sr_collision"])
            for b in range(max(len(report.counters.buckets()), math.ceil(report.transfer_duration_s))):
                row = report.counters.row(b)
                w.writerow([b, row["committed"], row["rw_conflict"], row["sr_collision"]])
        written.append(path)
        path = out / "latency_cdf.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["latency_ms", "cum_prob"])
            for x, p in report.cdf.points:
                w.writerow([repr(x), repr(p)])
        written.append(path)
        path = out / "growth.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_ms", "bytes", "blocks"])
            for s in report.growth:
                w.writerow([repr(s.time_ms), s.cumulative_bytes, s.cumulative_blocks])
        written.append(path)
    if "json" in formats:
        path = out / "summary.json"
        path.write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written
