"""Reconstruction metrics, table-style aggregation, latency timing and power arithmetic."""

from __future__ import annotations

import csv
import json
import math
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal
from threadpoolctl import threadpool_limits

from .eeg_pipeline import SEGMENT_LEN, TARGET_FS, SegmentPair, denormalize

PSD_BINS = SEGMENT_LEN // 2 + 1


class MetricError(ValueError):
    """A metric is undefined for its inputs (empty, zero power, zero variance)."""


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise MetricError("rms of an empty sequence")
    return float(np.sqrt(np.mean(x * x)))


def psd(x, fs: float = TARGET_FS) -> np.ndarray:
    """One-sided Hann-windowed periodogram of an 800-sample segment (401 bins)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (SEGMENT_LEN,):
        raise MetricError(f"psd expects {SEGMENT_LEN} samples, got shape {x.shape}")
    _, p = signal.periodogram(x, fs=fs, window="hann", detrend=False, scaling="density")
    return p


def rrmse_time(y, x_true) -> float:
    y, x_true = np.asarray(y, np.float64), np.asarray(x_true, np.float64)
    if y.shape != x_true.shape:
        raise MetricError(f"length mismatch: {y.shape} vs {x_true.shape}")
    ref = rms(x_true)
    if ref == 0:
        raise MetricError("ground truth has zero power; relative error undefined")
    return rms(y - x_true) / ref


def rrmse_freq(y, x_true, fs: float = TARGET_FS) -> float:
    return rrmse_time(psd(y, fs), psd(x_true, fs))


def cc(y, x_true) -> float:
    """Pearson correlation with population (divisor N) moments."""
    y, x_true = np.asarray(y, np.float64), np.asarray(x_true, np.float64)
    if y.shape != x_true.shape:
        raise MetricError(f"length mismatch: {y.shape} vs {x_true.shape}")
    dy, dx = y - y.mean(), x_true - x_true.mean()
    vy, vx = np.mean(dy * dy), np.mean(dx * dx)
    if vy == 0 or vx == 0:
        raise MetricError("correlation undefined for a zero-variance signal")
    return float(np.clip(np.mean(dy * dx) / math.sqrt(vy * vx), -1.0, 1.0))


def format_pm(mean: float, std: float) -> str:
    return f"{mean:.2f} ± {std:.2f}"


METRIC_NAMES = ("rrmse_time", "rrmse_freq", "cc")


@dataclass
class MetricsReport:
    model: str
    task: str
    mode: str = "normalized"
    rrmse_time: list[float] = field(default_factory=list)
    rrmse_freq: list[float] = field(default_factory=list)
    cc: list[float] = field(default_factory=list)
    n_skipped: int = 0

    @property
    def n_segments(self) -> int:
        return len(self.cc)

    def mean(self, metric: str) -> float:
        return float(np.mean(getattr(self, metric)))

    def std(self, metric: str) -> float:
        return float(np.std(getattr(self, metric)))

    def row(self, metric: str) -> str:
        """Aggregate cell in the ``0.23 ± 0.07`` style."""
        return format_pm(self.mean(metric), self.std(metric))

    def summary(self) -> dict:
        out = {"model": self.model, "task": self.task, "mode": self.mode,
               "n_segments": self.n_segments, "n_skipped": self.n_skipped}
        for m in METRIC_NAMES:
            out[m] = {"mean": self.mean(m), "std": self.std(m), "formatted": self.row(m)}
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, ensure_ascii=False)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["segment", *METRIC_NAMES])
            for i, vals in enumerate(zip(self.rrmse_time, self.rrmse_freq, self.cc)):
                w.writerow([i, *(repr(v) for v in vals)])

    def table(self) -> str:
        lines = [f"{'Metric':<12}{self.model}", f"{'-' * 12}{'-' * max(len(self.model), 13)}"]
        labels = {"rrmse_time": "RRMSE-Time", "rrmse_freq": "RRMSE-Freq", "cc": "CC"}
        lines += [f"{labels[m]:<12}{self.row(m)}" for m in METRIC_NAMES]
        return "\n".join(lines)


def score_outputs(outputs, dataset: Sequence[SegmentPair], denormalized: bool = False,
                  model: str = "", task: str = "") -> MetricsReport:
    """Metrics of precomputed ``outputs`` (one per segment) against each clean segment."""
    report = MetricsReport(model, task, "denormalized" if denormalized else "normalized")
    for out, pair in zip(outputs, dataset):
        if pair.degenerate:
            report.n_skipped += 1
            continue
        y, ref = np.asarray(out, np.float64).reshape(-1), pair.clean.astype(np.float64)
        if denormalized:
            y = denormalize(y, pair.norm_min, pair.norm_max)
            ref = denormalize(ref, pair.norm_min, pair.norm_max)
        try:
            vals = (rrmse_time(y, ref), rrmse_freq(y, ref), cc(y, ref))
        except MetricError:
            report.n_skipped += 1
            continue
        report.rrmse_time.append(vals[0])
        report.rrmse_freq.append(vals[1])
        report.cc.append(vals[2])
    return report


def predict(model, dataset: Sequence[SegmentPair], batch_size: int = 64) -> np.ndarray:
    """Model outputs for every contaminated segment, as ``[N, 800]``."""
    ishape = model.spec.input_shape
    x = np.stack([p.contaminated for p in dataset]).reshape((len(dataset),) + ishape)
    outs = [model.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(outs).reshape(len(dataset), -1)


def evaluate(model, dataset: Sequence[SegmentPair], denormalized: bool = False,
             task: str = "", batch_size: int = 64) -> MetricsReport:
    """Forward each contaminated segment and score it against its clean segment.

    Degenerate segments (and any with undefined metrics) are skipped and counted.
    """
    usable = [p for p in dataset if not p.degenerate]
    outputs = predict(model, usable, batch_size) if usable else []
    report = score_outputs(outputs, usable, denormalized, model.spec.name, task)
    report.n_skipped += len(dataset) - len(usable)
    return report


# --- latency ---------------------------------------------------------------------

_timer_lock = threading.Lock()


@dataclass
class BenchReport:
    model: str
    dimensionality: str
    n_warmup: int
    n_iters: int
    samples_ms: list[float]
    mean_ms: float
    median_ms: float
    std_ms: float
    p95_ms: float
    power_mah_per_h: float | None = None

    @classmethod
    def from_samples(cls, model: str, dimensionality: str, n_warmup: int, samples_ms) -> "BenchReport":
        s = np.asarray(samples_ms, dtype=np.float64)
        if s.size < 1:
            raise ValueError("need at least one timing sample")
        return cls(model, dimensionality, n_warmup, int(s.size), s.tolist(), float(s.mean()),
                   float(np.median(s)), float(s.std()), float(np.percentile(s, 95)))

    def row(self) -> dict:
        d = asdict(self)
        d.pop("samples_ms")
        return d


def time_inference(model, x, n_warmup: int = 20, n_iters: int = 200, label: str | None = None) -> BenchReport:
    """Wall-clock latency of ``model.forward(x)`` alone, single-threaded.

    Only one benchmark may run at a time in a process.
    """
    if n_iters < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters}")
    if not _timer_lock.acquire(blocking=False):
        raise RuntimeError("another benchmark is already running in this process")
    try:
        x = np.asarray(x, dtype=model.dtype)
        samples = []
        with threadpool_limits(limits=1):
            for _ in range(n_warmup):
                model.forward(x)
            for _ in range(n_iters):
                t0 = time.perf_counter_ns()
                model.forward(x)
                samples.append((time.perf_counter_ns() - t0) / 1e6)
    finally:
        _timer_lock.release()
    dim = "2D" if model.spec.dimensionality == "two_d" else "1D"
    return BenchReport.from_samples(label or model.spec.name, dim, n_warmup, samples)


def comparison_rows(reports: Sequence[BenchReport]) -> list[dict]:
    """Model x dimensionality rows, plus a 2D/1D mean-latency ratio where both exist."""
    rows = [r.row() for r in reports]
    by_key = {(r.model, r.dimensionality): r for r in reports}
    for row in rows:
        one = by_key.get((row["model"], "1D"))
        two = by_key.get((row["model"], "2D"))
        row["latency_ratio_2d_over_1d"] = two.mean_ms / one.mean_ms if one and two else None
    return rows


def write_bench_csv(rows: Sequence[dict], path) -> None:
    keys = ["model", "dimensionality", "n_warmup", "n_iters", "mean_ms", "median_ms", "std_ms",
            "p95_ms", "power_mah_per_h", "latency_ratio_2d_over_1d"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


# --- power -------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLog:
    """Cumulative charge readings: timestamps in hours, charge in mAh."""

    timestamps_h: np.ndarray
    charge_mah: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps_h, dtype=np.float64)
        q = np.asarray(self.charge_mah, dtype=np.float64)
        if t.ndim != 1 or t.shape != q.shape or t.size < 1:
            raise ValueError("power log needs equal-length, non-empty timestamp and charge columns")
        if np.any(np.diff(t) <= 0):
            raise ValueError("power log timestamps must be strictly increasing")
        if np.any(np.diff(q) < 0):
            raise ValueError("power log charge must be non-decreasing")
        object.__setattr__(self, "timestamps_h", t)
        object.__setattr__(self, "charge_mah", q)

    @classmethod
    def from_csv(cls, path) -> "PowerLog":
        ts, qs = [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                parts = text.split(",")
                try:
                    t, q = float(parts[0]), float(parts[1])
                except (ValueError, IndexError):
                    if lineno == 1:
                        continue  # header row
                    raise ValueError(f"{path}:{lineno}: expected 'timestamp_hours,charge_mAh'") from None
                ts.append(t)
                qs.append(q)
        return cls(np.array(ts), np.array(qs))


def power_from_log(log: PowerLog, start_ts: float, end_ts: float) -> float:
    """Average draw in mAh/h: charge used between the two timestamps over the elapsed hours."""
    t = end_ts - start_ts
    if not t > 0:
        raise ValueError(f"end timestamp must follow start (t = {t} h)")
    lo, hi = log.timestamps_h[0], log.timestamps_h[-1]
    if start_ts < lo or end_ts > hi:
        raise ValueError(f"window [{start_ts}, {end_ts}] h lies outside the log range [{lo}, {hi}] h")
    q_start, q_end = np.interp([start_ts, end_ts], log.timestamps_h, log.charge_mah)
    return float((q_end - q_start) / t)
