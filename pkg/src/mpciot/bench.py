"""End-to-end latency benchmarks against a running deployment.

Latencies come from the orchestrator's own metadata timestamps: ad hoc
analyses are measured from request submission to result storage, stream
micro-batches from the first ingest of the batch to result storage.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .client import ObeliskClient
from .device import DeviceState, random_sample
from .user import adhoc_request, stream_request


@dataclass
class AdhocPoint:
    batch_size: int
    latencies: list[float]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.latencies) if self.latencies else float("nan")


@dataclass
class StreamStep:
    rate: float
    latencies: list[float]

    @property
    def min(self) -> float:
        return min(self.latencies)

    @property
    def max(self) -> float:
        return max(self.latencies)


@dataclass
class StreamReport:
    batch_size: int
    steps: list[StreamStep] = field(default_factory=list)
    plateau: float | None = None  # mean of min latencies before the knee
    knee_rate: float | None = None  # first rate whose min latency leaves the plateau
    max_rate: float | None = None  # last sustainable rate

    @property
    def max_latency(self) -> float | None:
        lat = [x for s in self.steps for x in s.latencies]
        return max(lat) if lat else None

    @property
    def min_latency(self) -> float | None:
        lat = [x for s in self.steps for x in s.latencies]
        return min(lat) if lat else None

    def as_dict(self) -> dict:
        return {
            "batch_size": self.batch_size, "plateau": self.plateau, "knee_rate": self.knee_rate,
            "max_rate": self.max_rate, "min_latency": self.min_latency, "max_latency": self.max_latency,
            "steps": [{"rate": s.rate, "min": s.min, "max": s.max, "n": len(s.latencies)} for s in self.steps],
        }


def _ingest(client: ObeliskClient, dev: DeviceState, count: int, rng) -> list[int]:
    ids = []
    for _ in range(count):
        ts = dev.stamp(int(time.time() * 1000))
        client.ingest(ts, dev.encrypt(random_sample(rng)))
        ids.append(ts)
    return ids


def bench_adhoc(client: ObeliskClient, user_id: str, pks: list[bytes], batch_sizes=(1, 16, 64, 256),
                repetitions: int = 10, rng=None, timeout: float = 600.0) -> list[AdhocPoint]:
    """Sequential ad hoc analyses; one fresh device key per batch size."""
    rng = rng or np.random.default_rng()
    report = []
    for size in batch_sizes:
        dev = DeviceState.new(user_id)
        point = AdhocPoint(size, [])
        for _ in range(repetitions):
            ids = _ingest(client, dev, size, rng)
            aid = client.create_analysis(adhoc_request(dev.key, user_id, pks, ids))
            info = client.wait(aid, timeout=timeout, poll=0.02)
            if info.state != "done":
                raise RuntimeError(f"analysis {aid} failed: {info.reason}")
            point.latencies.append(info.stored_at - info.submitted_at)
        report.append(point)
    return report


def find_knee(mins: list[float], tolerance: float = 0.5, floor: float = 0.25) -> int | None:
    """Index of the first step whose min latency leaves the running plateau.

    A step departs when it exceeds the plateau mean by ``tolerance`` times
    that mean (or by ``floor`` seconds, whichever is larger).
    """
    for k in range(1, len(mins)):
        plateau = statistics.fmean(mins[:k])
        if mins[k] > plateau + max(tolerance * plateau, floor):
            return k
    return None


def bench_stream(client: ObeliskClient, user_id: str, pks: list[bytes], batch_size: int = 16,
                 rates=(2, 4, 8, 16, 32, 64, 128), batches_per_step: int = 2, rng=None,
                 settle: float = 600.0) -> StreamReport:
    """Ramp the ingest rate inside one stream, then locate where the min latency departs its plateau.

    Steps run back to back, so a backlog built at one rate carries into the
    next and shows up in that step's minimum.
    """
    rng = rng or np.random.default_rng()
    report = StreamReport(batch_size)
    dev = DeviceState.new(user_id)
    now = int(time.time() * 1000)
    sid = client.create_analysis(stream_request(dev.key, user_id, pks, now, now + 6 * 3600 * 1000, batch_size))
    bounds = []
    for rate in rates:
        start = time.time()
        for k in range(batches_per_step * batch_size):
            delay = start + k / rate - time.time()
            if delay > 0:
                time.sleep(delay)
            _ingest(client, dev, 1, rng)
        bounds.append((rate, start, time.time()))
    # later runs by the same user must not feed this stream
    client.close_stream(sid)
    done = _collect(client, sid, bounds, len(rates) * batches_per_step * batch_size, settle)
    report.steps = [StreamStep(rate, lat) for (rate, _, _), lat in zip(bounds, done) if lat]
    mins = [s.min for s in report.steps]
    knee = find_knee(mins)
    if knee is not None:
        report.knee_rate = report.steps[knee].rate
        report.max_rate = report.steps[knee - 1].rate
        report.plateau = statistics.fmean(mins[:knee])
    elif mins:
        report.plateau = statistics.fmean(mins)
        report.max_rate = report.steps[-1].rate
    return report


def _collect(client: ObeliskClient, stream_id: str, bounds, expected: int, settle: float) -> list[list[float]]:
    """Latencies of finished micro-batches, grouped by the ramp step of their first record."""
    deadline = time.monotonic() + settle
    while True:
        info = client.analysis(stream_id)
        children = [client.analysis(c) for c in info.children]
        pending = [c for c in children if c.state not in ("done", "failed")]
        covered = sum(len(c.data_ids or ()) for c in children)
        if (covered >= expected and not pending) or time.monotonic() >= deadline:
            break
        time.sleep(0.1)
    groups: list[list[float]] = [[] for _ in bounds]
    for c in children:
        if c.state != "done":
            continue
        for k, (_, start, end) in enumerate(bounds):
            if start <= c.first_ingest_at <= end + 1e-3:
                groups[k].append(c.stored_at - c.first_ingest_at)
                break
    return groups


def summarize(points: list[AdhocPoint]) -> list[dict]:
    return [{"batch_size": p.batch_size, "mean": p.mean, **asdict(p)} for p in points]
