"""Request traces, synthetic workload generation, and windowed demand.

A trace is a list of (arrival_time, input_len, output_len) records. For
planning, a trace is cut into fixed-length windows; each window yields a
prefill demand point (request rate, tail input length) and a decode
demand point (aggregate token-generation rate at sequence length 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import OpscalerError

TRACE_HEADER = ["timestamp_s", "input_tokens", "output_tokens"]


class ParseError(OpscalerError):
    """Malformed trace row; message carries line number and reason."""


class EmptyTrace(OpscalerError):
    """Trace file contains no usable records."""


@dataclass(frozen=True)
class RequestRecord:
    arrival_time: float
    input_len: int
    output_len: int


@dataclass(frozen=True)
class WorkloadPoint:
    """One planning input: request rate, representative sequence length,
    phase, and the source window."""

    qps: float
    seq_len: int
    phase: str
    window: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.qps < 0:
            raise ValueError("qps must be >= 0")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if self.phase not in ("prefill", "decode"):
            raise ValueError(f"unknown phase {self.phase!r}")


def load_trace(path: str | Path, fmt: str = "csv") -> list[RequestRecord]:
    """Read a trace file and return records sorted by arrival time.

    The sort is stable, so records sharing a timestamp keep file order.
    """
    if fmt != "csv":
        raise ParseError(f"unsupported trace format {fmt!r}")
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyTrace(f"{path}: file is empty")
        if [h.strip() for h in header] != TRACE_HEADER:
            raise ParseError(
                f"{path}:1: expected header {','.join(TRACE_HEADER)}, "
                f"got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                t = float(row[0])
                inp = int(row[1])
                out = int(row[2])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if t < 0:
                raise ParseError(f"{path}:{lineno}: negative timestamp {t}")
            if inp < 1:
                raise ParseError(f"{path}:{lineno}: input_tokens must be >= 1, got {inp}")
            if out < 0:
                raise ParseError(f"{path}:{lineno}: output_tokens must be >= 0, got {out}")
            records.append(RequestRecord(t, inp, out))
    if not records:
        raise EmptyTrace(f"{path}: no data rows")
    records.sort(key=lambda r: r.arrival_time)
    return records


def save_trace(records: list[RequestRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for r in records:
            writer.writerow([repr(r.arrival_time), r.input_len, r.output_len])


def _quantile(values: list[int], q: float) -> int:
    # empirical quantile, "higher" convention: smallest value covering q
    ordered = sorted(values)
    idx = max(0, math.ceil(q * len(ordered)) - 1)
    return ordered[idx]


def windowize(
    records: list[RequestRecord],
    window_len: float = 60.0,
    quantile: float = 0.95,
) -> list[tuple[WorkloadPoint, WorkloadPoint]]:
    """Cut a trace into windows of (prefill, decode) demand points.

    Prefill: qps = arrivals per second, seq_len = the chosen quantile of
    input lengths (provisioning targets tail lengths). Decode: qps = token
    generation rate (sum of output lengths over the window), seq_len = 1.
    Empty windows yield qps = 0 points.
    """
    if window_len <= 0:
        raise ValueError("window_len must be positive")
    if not (0.0 < quantile <= 1.0):
        raise ValueError("quantile must be in (0, 1]")
    if not records:
        return []
    horizon = max(r.arrival_time for r in records)
    n_windows = max(1, math.ceil(horizon / window_len + 1e-12))
    buckets: list[list[RequestRecord]] = [[] for _ in range(n_windows)]
    for r in records:
        idx = min(int(r.arrival_time / window_len), n_windows - 1)
        buckets[idx].append(r)
    out = []
    for i, bucket in enumerate(buckets):
        window = (i * window_len, (i + 1) * window_len)
        if bucket:
            prefill = WorkloadPoint(
                qps=len(bucket) / window_len,
                seq_len=max(1, _quantile([r.input_len for r in bucket], quantile)),
                phase="prefill",
                window=window,
            )
            decode = WorkloadPoint(
                qps=sum(r.output_len for r in bucket) / window_len,
                seq_len=1,
                phase="decode",
                window=window,
            )
        else:
            prefill = WorkloadPoint(qps=0.0, seq_len=1, phase="prefill", window=window)
            decode = WorkloadPoint(qps=0.0, seq_len=1, phase="decode", window=window)
        out.append((prefill, decode))
    return out


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for synthetic trace generation.

    rate is the mean request arrival rate; input lengths are lognormal
    (median input_len_median, spread input_len_sigma) and output lengths
    lognormal around output_len_median. diurnal modulates the rate as
    1 + amplitude*sin(2*pi*t/period); burst multiplies the rate by
    burst_factor during the first burst_duty fraction of each period.
    """

    kind: str = "constant"  # constant | diurnal | burst
    rate: float = 10.0
    duration: float = 600.0
    input_len_median: float = 1024.0
    input_len_sigma: float = 0.5
    output_len_median: float = 256.0
    output_len_sigma: float = 0.3
    amplitude: float = 0.5
    period: float = 600.0
    burst_factor: float = 3.0
    burst_duty: float = 0.2

    def __post_init__(self):
        if self.kind not in ("constant", "diurnal", "burst"):
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if self.rate <= 0 or self.duration <= 0:
            raise ValueError("rate and duration must be positive")
        if self.kind == "diurnal" and not (0.0 <= self.amplitude < 1.0):
            raise ValueError("diurnal amplitude must be in [0, 1)")
        if self.kind == "burst" and self.burst_factor < 1.0:
            raise ValueError("burst_factor must be >= 1")


def synth_workload(spec: SynthSpec, seed: int) -> list[RequestRecord]:
    """Generate a synthetic trace, deterministic given the seed.

    Time-varying rates use Poisson thinning against the peak rate, so all
    three kinds share one sampling scheme.
    """
    rng = np.random.default_rng(seed)

    if spec.kind == "constant":
        rate_fn = lambda t: spec.rate
        rate_max = spec.rate
    elif spec.kind == "diurnal":
        rate_fn = lambda t: spec.rate * (
            1.0 + spec.amplitude * math.sin(2.0 * math.pi * t / spec.period)
        )
        rate_max = spec.rate * (1.0 + spec.amplitude)
    else:  # burst
        rate_fn = lambda t: (
            spec.rate * spec.burst_factor
            if (t % spec.period) < spec.burst_duty * spec.period
            else spec.rate
        )
        rate_max = spec.rate * spec.burst_factor

    records = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate_max)
        if t >= spec.duration:
            break
        if rng.uniform() * rate_max > rate_fn(t):
            continue
        input_len = max(1, int(rng.lognormal(math.log(spec.input_len_median),
                                             spec.input_len_sigma)))
        output_len = max(0, int(rng.lognormal(math.log(spec.output_len_median),
                                              spec.output_len_sigma)))
        records.append(RequestRecord(t, input_len, output_len))
    return records
