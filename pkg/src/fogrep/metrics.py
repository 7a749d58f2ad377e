"""Availability, excess-data and memory metrics over a replica ledger.

Everything is computed by interval intersection, never by time stepping:
availability is the fraction of application-active time during which the
current closest node held the replica, excess data is all remaining presence
time divided by active time (preloads before arrival, late deletions, wrong
nodes, and retention during pauses all land here). Data in transit counts as
present nowhere.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .errors import UndefinedMetricError
from .simengine import ReplicaLedger
from .traces import ClientTimeline


def _clip(a, b, window):
    if window is None:
        return a, b
    lo, hi = window
    return max(a, lo), min(b, hi)


def _overlap(intervals, a, b) -> float:
    """Total length of ``intervals`` inside [a, b)."""
    total = 0.0
    for x, y in intervals:
        lo = x if x > a else a
        hi = y if y < b else b
        if hi > lo:
            total += hi - lo
    return total


def active_time(timeline: ClientTimeline, window=None) -> float:
    total = 0.0
    for visits in timeline.sessions:
        a, b = _clip(visits[0].arrival, visits[-1].departure, window)
        if b > a:
            total += b - a
    return total


def covered_time(ledger: ReplicaLedger, timeline: ClientTimeline, window=None) -> float:
    """Active time during which the current closest node held the replica."""
    total = 0.0
    for visits in timeline.sessions:
        for v in visits:
            a, b = _clip(v.arrival, v.departure, window)
            if b > a:
                total += _overlap(ledger.intervals(timeline.client_id, v.node), a, b)
    return total


def presence_time(ledger: ReplicaLedger, client, window=None) -> float:
    total = 0.0
    for node in ledger.nodes(client):
        for a, b in ledger.intervals(client, node):
            a, b = _clip(a, b, window)
            if b > a:
                total += b - a
    return total


def availability(ledger: ReplicaLedger, timeline: ClientTimeline, window=None) -> float:
    active = active_time(timeline, window)
    if active <= 0:
        raise UndefinedMetricError(f"client {timeline.client_id}: no active time")
    return covered_time(ledger, timeline, window) / active


def excess_data(ledger: ReplicaLedger, timeline: ClientTimeline, window=None) -> float:
    """Presence time not justified by the active client at that node, over
    active time. Ranges from 0 (the optimum) to unbounded."""
    active = active_time(timeline, window)
    if active <= 0:
        raise UndefinedMetricError(f"client {timeline.client_id}: no active time")
    covered = covered_time(ledger, timeline, window)
    presence = presence_time(ledger, timeline.client_id, window)
    return (presence - covered) / active


def availability_series(ledger: ReplicaLedger, timeline: ClientTimeline, bucket) -> list[tuple[float, float]]:
    """Cumulative availability recomputed at each bucket boundary, starting at
    the first bucket with any activity."""
    if bucket <= 0:
        raise UndefinedMetricError("bucket must be > 0")
    t0 = timeline.first_t
    end = timeline.last_t
    points = []
    t = t0 + bucket
    while True:
        active = active_time(timeline, (t0, t))
        if active > 0:
            points.append((t, covered_time(ledger, timeline, (t0, t)) / active))
        if t >= end:
            break
        t += bucket
    return points


@dataclass
class ClientMetrics:
    client_id: str
    active_s: float
    covered_s: float
    availability: float
    excess_s: float
    excess_ratio: float
    memory_bytes: int


@dataclass
class MetricsReport:
    availability: float
    excess_ratio: float
    memory_avg: float
    memory_max: int
    per_client: list[ClientMetrics] = field(default_factory=list)
    series: dict[str, list[tuple[float, float]]] = field(default_factory=dict)


def compute_report(ledger: ReplicaLedger, timelines, memory_by_client=None,
                   window=None, series_clients=(), series_bucket=86400.0) -> MetricsReport:
    """Aggregate metrics: the availability and excess numerators/denominators
    sum over clients (global active-time denominator); per-client rows keep
    the breakdown."""
    memory_by_client = memory_by_client or {}
    per_client = []
    tot_active = tot_covered = tot_presence = 0.0
    for tl in sorted(timelines, key=lambda t: t.client_id):
        active = active_time(tl, window)
        covered = covered_time(ledger, tl, window)
        presence = presence_time(ledger, tl.client_id, window)
        mem = memory_by_client.get(tl.client_id, 0)
        per_client.append(ClientMetrics(
            client_id=tl.client_id,
            active_s=active,
            covered_s=covered,
            availability=covered / active if active > 0 else float("nan"),
            excess_s=presence - covered,
            excess_ratio=(presence - covered) / active if active > 0 else float("nan"),
            memory_bytes=mem,
        ))
        tot_active += active
        tot_covered += covered
        tot_presence += presence
    if tot_active <= 0:
        raise UndefinedMetricError("no active time across clients")
    mems = [m.memory_bytes for m in per_client]
    report = MetricsReport(
        availability=tot_covered / tot_active,
        excess_ratio=(tot_presence - tot_covered) / tot_active,
        memory_avg=sum(mems) / len(mems) if mems else 0.0,
        memory_max=max(mems) if mems else 0,
        per_client=per_client,
    )
    by_id = {tl.client_id: tl for tl in timelines}
    for cid in series_clients:
        if cid in by_id:
            report.series[cid] = availability_series(ledger, by_id[cid], series_bucket)
    return report


REPORT_HEADER = ["client_id", "active_s", "availability", "excess_ratio", "memory_bytes"]


def write_report_csv(report: MetricsReport, fileobj):
    """Per-client rows plus an aggregate row."""
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for m in report.per_client:
        writer.writerow([m.client_id, repr(m.active_s), repr(m.availability),
                         repr(m.excess_ratio), m.memory_bytes])
    writer.writerow(["ALL", repr(sum(m.active_s for m in report.per_client)),
                     repr(report.availability), repr(report.excess_ratio),
                     repr(report.memory_avg)])
