"""Fog topologies: node grids over a bounding box, optional router/cloud
graphs, nearest-node queries, and transfer-time models.

Distances are equirectangular at city scale: longitude differences are scaled
by the cosine of the mid-bounding-box latitude. The scale is a constant per
topology so the scalar and vectorized nearest-node paths produce identical
results, including tie-breaks.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TopologyError

# Default study area when only grid dimensions are given.
BEIJING_BBOX = (39.6, 40.3, 116.0, 116.8)  # lat_min, lat_max, lon_min, lon_max

EDGE = "edge"
CLOUD = "cloud"

DEFAULT_EDGE_RATE = 40e6  # bits/s
DEFAULT_UPLINK_RATE = 800e6  # bits/s


@dataclass(frozen=True)
class FogNode:
    id: int
    lat: float
    lon: float
    kind: str = EDGE


@dataclass(frozen=True)
class Link:
    a: int
    b: int
    rate: float  # bits per second


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    bbox: tuple[float, float, float, float]


class Topology:
    """Immutable after construction; all queries are read-only."""

    def __init__(self, nodes, routers=(), links=(), grid=None):
        self.nodes: list[FogNode] = list(nodes)
        self.routers: list[int] = list(routers)
        self.links: list[Link] = list(links)
        self.grid: GridSpec | None = grid
        self._validate()
        self._edge_nodes = [n for n in self.nodes if n.kind == EDGE]
        self._lats = np.array([n.lat for n in self._edge_nodes])
        self._lons = np.array([n.lon for n in self._edge_nodes])
        if grid is not None:
            mid_lat = 0.5 * (grid.bbox[0] + grid.bbox[1])
        else:
            mid_lat = float(np.mean(self._lats)) if len(self._lats) else 0.0
        self._lon_scale = math.cos(math.radians(mid_lat))
        self._adj: dict[int, list[int]] = {}
        self._rates: dict[tuple[int, int], float] = {}
        for link in self.links:
            self._adj.setdefault(link.a, []).append(link.b)
            self._adj.setdefault(link.b, []).append(link.a)
            self._rates[(link.a, link.b)] = link.rate
            self._rates[(link.b, link.a)] = link.rate
        for nbrs in self._adj.values():
            nbrs.sort()

    def _validate(self):
        ids = [n.id for n in self.nodes]
        if ids != list(range(len(ids))):
            raise TopologyError("node ids must be unique and dense from 0")
        clouds = [n for n in self.nodes if n.kind == CLOUD]
        if len(clouds) > 1:
            raise TopologyError("at most one cloud node is allowed")
        endpoint_ids = set(ids) | set(self.routers)
        if len(endpoint_ids) != len(ids) + len(self.routers):
            raise TopologyError("router ids collide with node ids")
        for link in self.links:
            if link.rate <= 0:
                raise TopologyError(f"link {link.a}-{link.b} has non-positive rate")
            if link.a not in endpoint_ids or link.b not in endpoint_ids:
                raise TopologyError(f"link {link.a}-{link.b} references unknown endpoint")
        if self.links:
            # with links present the graph must be connected
            adj: dict[int, list[int]] = {}
            for link in self.links:
                adj.setdefault(link.a, []).append(link.b)
                adj.setdefault(link.b, []).append(link.a)
            start = next(iter(endpoint_ids))
            seen = {start}
            queue = deque([start])
            while queue:
                cur = queue.popleft()
                for nb in adj.get(cur, ()):
                    if nb not in seen:
                        seen.add(nb)
                        queue.append(nb)
            if seen != endpoint_ids:
                raise TopologyError("link graph is not connected")

    @property
    def edge_nodes(self) -> list[FogNode]:
        return self._edge_nodes

    @property
    def cloud_id(self) -> int | None:
        for n in self.nodes:
            if n.kind == CLOUD:
                return n.id
        return None

    def node_count(self) -> int:
        return len(self._edge_nodes)

    def distance_sq(self, lat, lon, node_id) -> float:
        n = self.nodes[node_id]
        dlat = lat - n.lat
        dlon = (lon - n.lon) * self._lon_scale
        return dlat * dlat + dlon * dlon


def build_grid(rows, cols, bbox=BEIJING_BBOX) -> Topology:
    """rows x cols edge nodes at cell centers of the bounding box, row-major ids."""
    if rows < 1 or cols < 1:
        raise ConfigError("grid dimensions must be >= 1")
    lat_min, lat_max, lon_min, lon_max = bbox
    if not (lat_max > lat_min and lon_max > lon_min):
        raise ConfigError(f"degenerate bounding box {bbox}")
    dlat = (lat_max - lat_min) / rows
    dlon = (lon_max - lon_min) / cols
    nodes = []
    for i in range(rows):
        for j in range(cols):
            nodes.append(FogNode(
                id=i * cols + j,
                lat=lat_min + (i + 0.5) * dlat,
                lon=lon_min + (j + 0.5) * dlon,
            ))
    return Topology(nodes, grid=GridSpec(rows, cols, tuple(bbox)))


def build_complex_network(rows, cols, bbox=BEIJING_BBOX,
                          edge_rate=DEFAULT_EDGE_RATE,
                          uplink_rate=DEFAULT_UPLINK_RATE,
                          neighborhood=4) -> Topology:
    """Grid of edge nodes, one router per node, a router mesh between grid
    neighbors, and one cloud node uplinked from every router.

    Edge node ids are 0..rows*cols-1 (row-major), the cloud node follows at
    rows*cols, and routers occupy rows*cols+1 .. 2*rows*cols.
    """
    if neighborhood not in (4, 8):
        raise ConfigError("router mesh neighborhood must be 4 or 8")
    base = build_grid(rows, cols, bbox)
    n = rows * cols
    cloud_id = n
    lat_min, lat_max, lon_min, lon_max = bbox
    nodes = list(base.nodes)
    nodes.append(FogNode(cloud_id, 0.5 * (lat_min + lat_max), 0.5 * (lon_min + lon_max), CLOUD))
    router_of = lambda node_id: n + 1 + node_id
    routers = [router_of(i) for i in range(n)]
    links = []
    for i in range(n):
        links.append(Link(i, router_of(i), edge_rate))
    offsets = [(0, 1), (1, 0)]
    if neighborhood == 8:
        offsets += [(1, 1), (1, -1)]
    for r in range(rows):
        for c in range(cols):
            for dr, dc in offsets:
                r2, c2 = r + dr, c + dc
                if 0 <= r2 < rows and 0 <= c2 < cols:
                    links.append(Link(router_of(r * cols + c), router_of(r2 * cols + c2), edge_rate))
    for i in range(n):
        links.append(Link(router_of(i), cloud_id, uplink_rate))
    return Topology(nodes, routers=routers, links=links, grid=GridSpec(rows, cols, tuple(bbox)))


def nearest_node(lat, lon, topo: Topology) -> int:
    """Edge node minimizing equirectangular distance; ties go to the smaller id.

    The cloud node is never returned. Points outside the grid clamp to the
    nearest node by distance, no rejection.
    """
    if not topo.edge_nodes:
        raise TopologyError("topology has no edge nodes")
    dlat = topo._lats - lat
    dlon = (topo._lons - lon) * topo._lon_scale
    d2 = dlat * dlat + dlon * dlon
    return topo.edge_nodes[int(np.argmin(d2))].id


def nearest_nodes(lats, lons, topo: Topology, chunk=None) -> np.ndarray:
    """Vectorized nearest_node over point arrays; identical tie-breaks."""
    if not topo.edge_nodes:
        raise TopologyError("topology has no edge nodes")
    lats = np.asarray(lats, dtype=float)
    lons = np.asarray(lons, dtype=float)
    out = np.empty(len(lats), dtype=np.int64)
    ids = np.array([n.id for n in topo.edge_nodes])
    if chunk is None:
        # bound the points x nodes distance matrix to ~20M doubles
        chunk = max(1024, 20_000_000 // max(1, len(ids)))
    for start in range(0, len(lats), chunk):
        end = min(start + chunk, len(lats))
        dlat = topo._lats[None, :] - lats[start:end, None]
        dlon = (topo._lons[None, :] - lons[start:end, None]) * topo._lon_scale
        d2 = dlat * dlat + dlon * dlon
        out[start:end] = ids[np.argmin(d2, axis=1)]
    return out


@dataclass(frozen=True)
class FixedDelay:
    """Every transfer takes the same time regardless of endpoints."""
    delay: float  # seconds

    def __post_init__(self):
        if self.delay <= 0:
            raise ConfigError("fixed transfer delay must be > 0")


@dataclass(frozen=True)
class FlowGraph:
    """Flow-level transfer model: a fixed-size payload moves along the
    minimum-hop path at the bottleneck link rate, without contention."""
    topology: Topology
    data_size: float  # bits

    def __post_init__(self):
        if self.data_size <= 0:
            raise ConfigError("transfer data size must be > 0")
        if not self.topology.links:
            raise ConfigError("flow model requires a topology with links")


NetworkModel = FixedDelay | FlowGraph


def min_hop_path(topo: Topology, src, dst) -> list[int]:
    """Minimum-hop path src->dst; equal-hop ties resolve to the
    lexicographically smallest id sequence."""
    if src == dst:
        return [src]
    dist = {dst: 0}
    queue = deque([dst])
    while queue:
        cur = queue.popleft()
        for nb in topo._adj.get(cur, ()):
            if nb not in dist:
                dist[nb] = dist[cur] + 1
                queue.append(nb)
    if src not in dist:
        raise TopologyError(f"no path between {src} and {dst}")
    path = [src]
    cur = src
    while cur != dst:
        cur = min(nb for nb in topo._adj[cur] if dist.get(nb, -1) == dist[cur] - 1)
        path.append(cur)
    return path


def transfer_time(src, dst, model: NetworkModel) -> float:
    """Seconds to move one client data set from src to dst."""
    if src == dst:
        raise ConfigError("transfer requires distinct endpoints")
    if isinstance(model, FixedDelay):
        return model.delay
    path = min_hop_path(model.topology, src, dst)
    bottleneck = min(model.topology._rates[(a, b)] for a, b in zip(path, path[1:]))
    return model.data_size / bottleneck


def transfer_source(model: NetworkModel, topo: Topology) -> int | None:
    """Where transfers originate: the cloud for flow models (it stores all
    data at all times), irrelevant for fixed delays."""
    if isinstance(model, FlowGraph):
        cloud = model.topology.cloud_id
        if cloud is None:
            raise TopologyError("flow model topology has no cloud node")
        return cloud
    return None


def dump_topology(topo: Topology) -> str:
    """Plain text node table + link table, reproducible byte-for-byte."""
    lines = []
    if topo.grid is not None:
        g = topo.grid
        lines.append("grid %d %d %r %r %r %r" % (g.rows, g.cols, *g.bbox))
    for n in topo.nodes:
        lines.append("node %d %s %r %r" % (n.id, n.kind, n.lat, n.lon))
    for r in topo.routers:
        lines.append("router %d" % r)
    for link in topo.links:
        lines.append("link %d %d %r" % (link.a, link.b, link.rate))
    return "\n".join(lines) + "\n"


def load_topology(text: str) -> Topology:
    nodes, routers, links = [], [], []
    grid = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "grid":
                grid = GridSpec(int(parts[1]), int(parts[2]), tuple(float(x) for x in parts[3:7]))
            elif parts[0] == "node":
                nodes.append(FogNode(int(parts[1]), float(parts[3]), float(parts[4]), parts[2]))
            elif parts[0] == "router":
                routers.append(int(parts[1]))
            elif parts[0] == "link":
                links.append(Link(int(parts[1]), int(parts[2]), float(parts[3])))
            else:
                raise ValueError(f"unknown record {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"topology file line {lineno}: {exc}") from exc
    return Topology(nodes, routers=routers, links=links, grid=grid)
