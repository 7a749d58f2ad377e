"""GPS trace ingestion: GeoLife PLT parsing, session/pause segmentation,
mapping onto node-visit sequences, a deterministic synthetic generator, and
the cached node-visit CSV format.

Conventions: one trajectory file is one application session (file boundaries
are the only on/off signal in the dataset), additionally split at intra-file
gaps larger than ``gap_threshold`` (default 300 s). Timestamps are epoch
seconds from a naive UTC parse of the file's date/time strings; time-of-day
bucketing applies a timezone offset downstream.
"""
from __future__ import annotations

import calendar
import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyTraceError, TraceFormatError, TraceOverlapError
from .topology import Topology, nearest_nodes

DEFAULT_GAP_THRESHOLD = 300.0  # seconds

PLT_HEADER_LINES = 6

_WEEKDAY_NAMES = {"mon": 0, "tue": 1, "wed": 2, "thu": 3, "fri": 4, "sat": 5, "sun": 6}


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    t: float  # epoch seconds

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise TraceFormatError(f"coordinates out of range: {self.lat}, {self.lon}")


@dataclass
class Session:
    """One contiguous period of application activity, as raw GPS points."""
    client_id: str
    points: list[GeoPoint]

    @property
    def start(self) -> float:
        return self.points[0].t

    @property
    def end(self) -> float:
        return self.points[-1].t


@dataclass(frozen=True)
class Pause:
    client_id: str
    node: int  # node where the shutdown occurred
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class NodeVisit:
    node: int
    arrival: float
    departure: float


@dataclass
class ClientTimeline:
    """Alternating sessions (as node-visit sequences) and pauses tiling the
    client's observed lifetime."""
    client_id: str
    sessions: list[list[NodeVisit]]
    pauses: list[Pause] = field(default_factory=list)

    @property
    def first_t(self) -> float:
        return self.sessions[0][0].arrival

    @property
    def last_t(self) -> float:
        return self.sessions[-1][-1].departure

    def active_seconds(self) -> float:
        return sum(s[-1].departure - s[0].arrival for s in self.sessions)

    def validate(self):
        if not self.sessions:
            raise ConfigError(f"client {self.client_id}: empty timeline")
        if len(self.pauses) != len(self.sessions) - 1:
            raise ConfigError(f"client {self.client_id}: sessions and pauses do not alternate")
        for visits in self.sessions:
            for a, b in zip(visits, visits[1:]):
                if a.node == b.node:
                    raise ConfigError(f"client {self.client_id}: consecutive visits share a node")
                if a.departure != b.arrival:
                    raise ConfigError(f"client {self.client_id}: non-contiguous visits")
        for i, pause in enumerate(self.pauses):
            before, after = self.sessions[i], self.sessions[i + 1]
            ok = (pause.start == before[-1].departure and pause.end == after[0].arrival
                  and pause.end > pause.start and pause.node == before[-1].node)
            if not ok:
                raise ConfigError(f"client {self.client_id}: pause {i} does not tile its gap")


def _parse_plt_timestamp(date_s: str, time_s: str, midnight_cache: dict) -> float:
    midnight = midnight_cache.get(date_s)
    if midnight is None:
        y, mo, d = date_s.split("-")
        midnight = calendar.timegm((int(y), int(mo), int(d), 0, 0, 0))
        midnight_cache[date_s] = midnight
    h, mi, s = time_s.split(":")
    return float(midnight + int(h) * 3600 + int(mi) * 60 + int(s))


def parse_plt(data: bytes | str) -> list[GeoPoint]:
    """Parse a GeoLife .plt file: 6 header lines, then CSV rows
    ``lat,lon,0,altitude,days,date,time``. Points are returned in file order;
    out-of-order timestamps are retained for the sessionizer to sort."""
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    lines = data.splitlines()
    points = []
    midnight_cache: dict[str, int] = {}
    for lineno, line in enumerate(lines[PLT_HEADER_LINES:], start=PLT_HEADER_LINES + 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 7:
            raise TraceFormatError(f"expected 7 fields, got {len(parts)}", line=lineno)
        try:
            lat = float(parts[0])
            lon = float(parts[1])
            t = _parse_plt_timestamp(parts[5], parts[6], midnight_cache)
        except (ValueError, IndexError) as exc:
            raise TraceFormatError(str(exc), line=lineno) from exc
        points.append(GeoPoint(lat, lon, t))
    if not points:
        raise EmptyTraceError("no data rows after header")
    return points


def format_plt(points) -> str:
    """Inverse of parse_plt for the fields it reads (altitude/days written as
    placeholders); used for round-trip checks and fixtures."""
    header = "\n".join(["Geolife trajectory", "WGS 84", "Altitude is in Feet",
                        "Reserved 3", "0,2,255,My Track,0,0,2,8421376", "0"])
    out = [header]
    for p in points:
        days = p.t / 86400.0 + 25569.0  # days since 1899-12-30
        tm = time.gmtime(p.t)
        out.append("%r,%r,0,0,%r,%04d-%02d-%02d,%02d:%02d:%02d" % (
            p.lat, p.lon, days, tm.tm_year, tm.tm_mon, tm.tm_mday,
            tm.tm_hour, tm.tm_min, tm.tm_sec))
    return "\n".join(out) + "\n"


def sessionize(point_groups, gap_threshold=DEFAULT_GAP_THRESHOLD, client_id="") -> list[Session]:
    """Segment per-file point groups into sessions.

    Every file boundary starts a new session; intra-file gaps larger than
    gap_threshold split further. Files are ordered by first timestamp; a file
    starting before the previous one ends is an overlap error. A file starting
    exactly when the previous ends merges into the same session (a pause must
    have positive duration).
    """
    if gap_threshold <= 0:
        raise ConfigError("gap_threshold must be > 0")
    groups = [sorted(g, key=lambda p: p.t) for g in point_groups if g]
    groups.sort(key=lambda g: g[0].t)
    overlaps = []
    for i in range(len(groups) - 1):
        if groups[i + 1][0].t < groups[i][-1].t:
            overlaps.append((i, i + 1))
    if overlaps:
        raise TraceOverlapError(
            f"client {client_id or '?'}: {len(overlaps)} overlapping trajectory file pair(s): {overlaps}",
            pairs=overlaps)

    sessions: list[Session] = []
    for gi, group in enumerate(groups):
        if gi > 0 and sessions and group[0].t == sessions[-1].end:
            current = sessions[-1].points
        else:
            current = []
            sessions.append(Session(client_id, current))
        prev_t = current[-1].t if current else None
        for p in group:
            if prev_t is not None and p.t - prev_t > gap_threshold:
                current = [p]
                sessions.append(Session(client_id, current))
            else:
                current.append(p)
            prev_t = p.t
    return sessions


def map_to_node_visits(session: Session, topo: Topology) -> list[NodeVisit]:
    """Assign each point its nearest node and collapse consecutive equal
    assignments; a visit's departure is the next visit's arrival, the last
    departure is the session end."""
    pts = session.points
    assigned = nearest_nodes([p.lat for p in pts], [p.lon for p in pts], topo)
    visits: list[NodeVisit] = []
    start_t = pts[0].t
    cur = int(assigned[0])
    for p, node in zip(pts[1:], assigned[1:]):
        node = int(node)
        if node != cur:
            visits.append(NodeVisit(cur, start_t, p.t))
            cur = node
            start_t = p.t
    visits.append(NodeVisit(cur, start_t, session.end))
    return visits


def _pauses_between(client_id, visit_sessions) -> list[Pause]:
    pauses = []
    for before, after in zip(visit_sessions, visit_sessions[1:]):
        pauses.append(Pause(client_id, before[-1].node, before[-1].departure, after[0].arrival))
    return pauses


def build_timeline(client_id, point_groups, topo: Topology,
                   gap_threshold=DEFAULT_GAP_THRESHOLD) -> ClientTimeline:
    """Full pipeline for one client: sessionize per-file point groups and map
    every session onto node visits for the given topology."""
    sessions = sessionize(point_groups, gap_threshold, client_id=client_id)
    if not sessions:
        raise EmptyTraceError(f"client {client_id}: no sessions")
    visit_sessions = [map_to_node_visits(s, topo) for s in sessions]
    timeline = ClientTimeline(client_id, visit_sessions, _pauses_between(client_id, visit_sessions))
    timeline.validate()
    return timeline


def load_geolife_client(trajectory_dir, topo, gap_threshold=DEFAULT_GAP_THRESHOLD,
                        client_id=None) -> ClientTimeline:
    """Ingest one GeoLife user directory (``Data/<user>/Trajectory``)."""
    from pathlib import Path
    trajectory_dir = Path(trajectory_dir)
    files = sorted(trajectory_dir.glob("*.plt"))
    if not files:
        raise EmptyTraceError(f"no .plt files under {trajectory_dir}")
    groups = [parse_plt(f.read_bytes()) for f in files]
    cid = client_id if client_id is not None else trajectory_dir.parent.name
    return build_timeline(cid, groups, topo, gap_threshold)


def load_geolife_dir(root, topo, gap_threshold=DEFAULT_GAP_THRESHOLD,
                     clients=None) -> list[ClientTimeline]:
    """Ingest a GeoLife dataset root (layout ``Data/<user>/Trajectory/*.plt``)."""
    from pathlib import Path
    root = Path(root)
    data = root / "Data" if (root / "Data").is_dir() else root
    user_dirs = sorted(d for d in data.iterdir() if (d / "Trajectory").is_dir())
    if clients is not None:
        wanted = set(clients)
        user_dirs = [d for d in user_dirs if d.name in wanted]
    if not user_dirs:
        raise EmptyTraceError(
            f"no GeoLife user directories under {data}; expected Data/<user>/Trajectory/*.plt "
            "(the GeoLife GPS Trajectories 1.3 dataset must be downloaded separately)")
    return [load_geolife_client(d / "Trajectory", topo, gap_threshold) for d in user_dirs]


# ---------------------------------------------------------------------------
# Synthetic timelines

@dataclass
class SchedulePattern:
    """A weekly repeating trip: on each listed weekday, start at a wall-clock
    time and visit the node path with the given per-node stays."""
    days: list[int]              # 0 = Monday
    start_clock: float           # seconds past local midnight
    path: list[tuple[int, float]]  # (node id, stay seconds)
    min_pause: float = 0.0       # validation only: required gap after this trip


@dataclass
class SyntheticSpec:
    client_id: str
    weeks: int
    patterns: list[SchedulePattern]
    anchor: float = 0.0          # epoch seconds of a Monday 00:00
    jitter: float = 0.0          # max absolute start-time jitter, seconds


def parse_clock(text: str) -> float:
    h, m = text.split(":")
    return int(h) * 3600 + int(m) * 60


def parse_day(text) -> int:
    if isinstance(text, int):
        if not 0 <= text <= 6:
            raise ConfigError(f"weekday index out of range: {text}")
        return text
    key = str(text).strip().lower()[:3]
    if key not in _WEEKDAY_NAMES:
        raise ConfigError(f"unknown weekday {text!r}")
    return _WEEKDAY_NAMES[key]


def synth_generate(spec: SyntheticSpec, noise_seed=None) -> ClientTimeline:
    """Expand a weekly schedule into a fully deterministic timeline; with
    noise_seed set, uniform jitter (at most spec.jitter) is applied to start
    times only."""
    import random
    rng = random.Random(noise_seed) if noise_seed is not None else None
    entries = []
    for pat in spec.patterns:
        if not pat.path:
            raise ConfigError("schedule pattern has an empty node path")
        for w in range(spec.weeks):
            for day in pat.days:
                start = spec.anchor + (w * 7 + day) * 86400.0 + pat.start_clock
                entries.append((start, pat))
    entries.sort(key=lambda e: e[0])
    sessions: list[list[NodeVisit]] = []
    for idx, (start, pat) in enumerate(entries):
        if rng is not None and spec.jitter > 0:
            start += rng.uniform(-spec.jitter, spec.jitter)
        visits = []
        t = start
        for node, stay in pat.path:
            if stay < 0:
                raise ConfigError("negative stay duration in schedule")
            visits.append(NodeVisit(int(node), t, t + stay))
            t += stay
        if sessions and visits[0].arrival <= sessions[-1][-1].departure:
            raise ConfigError(
                f"synthetic schedule: session {idx} starting at {visits[0].arrival} overlaps the previous one")
        sessions.append(visits)
    if not sessions:
        return ClientTimeline(spec.client_id, [], [])
    timeline = ClientTimeline(spec.client_id, sessions, _pauses_between(spec.client_id, sessions))
    timeline.validate()
    return timeline


def synth_from_dict(doc: dict) -> list[ClientTimeline]:
    """Build timelines from a parsed synthetic spec document (see configs/)."""
    clients = doc.get("clients")
    if clients is None:
        clients = [doc]
    timelines = []
    for entry in clients:
        patterns = []
        for pat in entry.get("patterns", []):
            patterns.append(SchedulePattern(
                days=[parse_day(d) for d in pat["days"]],
                start_clock=parse_clock(str(pat["start"])),
                path=[(int(n), float(s)) for n, s in pat["path"]],
                min_pause=float(pat.get("min_pause", 0.0)),
            ))
        anchor = entry.get("anchor", doc.get("anchor", 0.0))
        spec = SyntheticSpec(
            client_id=str(entry.get("client", entry.get("client_id", "synth"))),
            weeks=int(entry.get("weeks", doc.get("weeks", 1))),
            patterns=patterns,
            anchor=float(anchor),
            jitter=float(entry.get("jitter", doc.get("jitter", 0.0))),
        )
        seed = entry.get("seed", doc.get("seed"))
        timelines.append(synth_generate(spec, noise_seed=seed))
    return timelines


# ---------------------------------------------------------------------------
# Cached node-visit CSV

VISITS_HEADER = ["client_id", "session_id", "node_id", "arrival_epoch_s", "departure_epoch_s"]


def write_visits_csv(timelines, fileobj):
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(VISITS_HEADER)
    for tl in sorted(timelines, key=lambda t: t.client_id):
        for sid, visits in enumerate(tl.sessions):
            for v in visits:
                writer.writerow([tl.client_id, sid, v.node, repr(v.arrival), repr(v.departure)])


def read_visits_csv(fileobj) -> list[ClientTimeline]:
    reader = csv.reader(fileobj)
    header = next(reader, None)
    if header != VISITS_HEADER:
        raise TraceFormatError(f"unexpected visits header {header!r}", line=1)
    by_client: dict[str, dict[int, list[NodeVisit]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            cid, sid, node, arr, dep = row[0], int(row[1]), int(row[2]), float(row[3]), float(row[4])
        except (ValueError, IndexError) as exc:
            raise TraceFormatError(str(exc), line=lineno) from exc
        by_client.setdefault(cid, {}).setdefault(sid, []).append(NodeVisit(node, arr, dep))
    timelines = []
    for cid in sorted(by_client):
        sessions = [by_client[cid][sid] for sid in sorted(by_client[cid])]
        tl = ClientTimeline(cid, sessions, _pauses_between(cid, sessions))
        tl.validate()
        timelines.append(tl)
    if not timelines:
        raise EmptyTraceError("visits file contains no rows")
    return timelines
