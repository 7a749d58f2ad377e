"""Config-driven experiment execution: parse a declarative YAML experiment
file, run every (policy, topology) sweep point deterministically, and emit
results.csv, per-client availability series, a machine-readable summary, and
an optional Pareto scatter SVG.

The config file is the single source of truth; only the output directory and
the seed can be overridden from the command line, so experiments stay
archivable.
"""
from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .errors import ConfigError, DataError
from .metrics import MetricsReport, compute_report, write_report_csv
from .policies import PolicyConfig
from .simengine import run as run_simulation
from .simengine import snapshot_memory, write_event_log_csv
from .topology import (BEIJING_BBOX, DEFAULT_EDGE_RATE, DEFAULT_UPLINK_RATE,
                       FixedDelay, FlowGraph, Topology, build_complex_network,
                       build_grid)
from .traces import (DEFAULT_GAP_THRESHOLD, load_geolife_dir, read_visits_csv,
                     synth_from_dict, write_visits_csv)

GEOLIFE_TZ_OFFSET = 8 * 3600.0

RESULTS_HEADER = ["experiment", "topology", "policy", "clients",
                  "availability", "excess_ratio", "memory_avg_bytes", "memory_max_bytes"]


def load_yaml_with_lines(text: str, source="<config>"):
    """Parse YAML and build a key-path -> line-number map for error anchors."""
    try:
        doc = yaml.safe_load(text)
        tree = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source} line {mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: invalid YAML: {exc}") from exc
    lines: dict[str, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key_node, val_node in node.value:
                p = f"{path}.{key_node.value}" if path else str(key_node.value)
                lines[p] = key_node.start_mark.line + 1
                walk(val_node, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                p = f"{path}[{i}]"
                lines[p] = item.start_mark.line + 1
                walk(item, p)

    if tree is not None:
        walk(tree, "")
    return doc, lines


@dataclass
class TopologySpec:
    name: str
    kind: str = "grid"  # grid | complex
    rows: int = 10
    cols: int = 10
    bbox: tuple = BEIJING_BBOX
    transfer_delay: float = 300.0
    data_size_gb: float = 1.0
    edge_rate: float = DEFAULT_EDGE_RATE
    uplink_rate: float = DEFAULT_UPLINK_RATE
    neighborhood: int = 4

    def build(self) -> tuple[Topology, object]:
        if self.kind == "grid":
            topo = build_grid(self.rows, self.cols, self.bbox)
            return topo, FixedDelay(self.transfer_delay)
        if self.kind == "complex":
            topo = build_complex_network(self.rows, self.cols, self.bbox,
                                         edge_rate=self.edge_rate,
                                         uplink_rate=self.uplink_rate,
                                         neighborhood=self.neighborhood)
            return topo, FlowGraph(topo, self.data_size_gb * 8e9)
        raise ConfigError(f"topology.kind: unknown kind {self.kind!r}")

    @staticmethod
    def from_dict(doc: dict, default_name) -> "TopologySpec":
        doc = dict(doc)
        spec = TopologySpec(
            name=str(doc.pop("name", default_name)),
            kind=str(doc.pop("kind", "grid")),
            rows=int(doc.pop("rows", 10)),
            cols=int(doc.pop("cols", 10)),
            bbox=tuple(float(x) for x in doc.pop("bbox", BEIJING_BBOX)),
            transfer_delay=float(doc.pop("transfer_delay", 300.0)),
            data_size_gb=float(doc.pop("data_size_gb", 1.0)),
            edge_rate=float(doc.pop("edge_rate", DEFAULT_EDGE_RATE)),
            uplink_rate=float(doc.pop("uplink_rate", DEFAULT_UPLINK_RATE)),
            neighborhood=int(doc.pop("neighborhood", 4)),
        )
        if doc:
            raise ConfigError(f"topology: unknown keys {sorted(doc)}")
        if len(spec.bbox) != 4:
            raise ConfigError("topology.bbox: expected [lat_min, lat_max, lon_min, lon_max]")
        return spec


@dataclass
class ExperimentConfig:
    experiment: str
    trace: dict
    topologies: list[TopologySpec]
    policies: list[PolicyConfig]
    output: Path
    seed: int | None = None
    jobs: int = 1
    series_clients: list[str] = field(default_factory=list)
    series_bucket: float = 86400.0
    window: tuple[float, float] | None = None
    plot: str | None = None
    dump_events: bool = False
    config_dir: Path = Path(".")


def _anchored(exc: ConfigError, path_prefix, lines) -> ConfigError:
    msg = str(exc)
    field_token = msg.split(":", 1)[0].strip()
    line = lines.get(f"{path_prefix}.{field_token}") or lines.get(path_prefix)
    suffix = f" (line {line})" if line else ""
    return ConfigError(f"{path_prefix}.{msg}{suffix}")


def parse_experiment_config(text: str, source="<config>", config_dir=Path(".")) -> ExperimentConfig:
    doc, lines = load_yaml_with_lines(text, source)
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: config must be a mapping")
    doc = dict(doc)
    name = str(doc.pop("experiment", "experiment"))
    trace = doc.pop("trace", None)
    if not isinstance(trace, dict):
        raise ConfigError(f"trace: section is required (line {lines.get('trace', '?')})")
    topo_docs = doc.pop("topologies", None)
    if topo_docs is None:
        single = doc.pop("topology", None)
        topo_docs = [single] if single is not None else [{}]
    if not topo_docs:
        raise ConfigError("topologies: sweep list must be non-empty")
    topologies = []
    for i, td in enumerate(topo_docs):
        try:
            topologies.append(TopologySpec.from_dict(td or {}, default_name=f"topo{i}"))
        except ConfigError as exc:
            raise _anchored(exc, f"topologies[{i}]", lines) from exc
    pol_docs = doc.pop("policies", None)
    if not pol_docs:
        raise ConfigError(f"policies: sweep list must be non-empty (line {lines.get('policies', '?')})")
    tz_default = float(trace.get("tz_offset",
                                 GEOLIFE_TZ_OFFSET if trace.get("source") == "geolife" else 0.0))
    policies = []
    for i, pd in enumerate(pol_docs):
        try:
            cfg = PolicyConfig.from_dict(pd or {}, name=(pd or {}).get("name", f"policy{i}"))
        except ConfigError as exc:
            raise _anchored(exc, f"policies[{i}]", lines) from exc
        if cfg.tz_offset == 0.0 and tz_default != 0.0:
            cfg = replace(cfg, tz_offset=tz_default)
        policies.append(cfg)
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise ConfigError("policies: names must be unique")
    metrics_doc = dict(doc.pop("metrics", {}) or {})
    window = metrics_doc.pop("window", None)
    cfg = ExperimentConfig(
        experiment=name,
        trace=dict(trace),
        topologies=topologies,
        policies=policies,
        output=Path(doc.pop("output", "out")),
        seed=doc.pop("seed", None),
        jobs=int(doc.pop("jobs", 1)),
        series_clients=[str(c) for c in metrics_doc.pop("series_clients", [])],
        series_bucket=float(metrics_doc.pop("series_bucket", 86400.0)),
        window=tuple(float(x) for x in window) if window else None,
        plot=doc.pop("plot", None),
        dump_events=bool(doc.pop("dump_events", False)),
        config_dir=config_dir,
    )
    if metrics_doc:
        raise ConfigError(f"metrics: unknown keys {sorted(metrics_doc)}")
    if doc:
        raise ConfigError(f"unknown top-level keys {sorted(doc)}")
    return cfg


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_experiment_config(path.read_text(), source=str(path), config_dir=path.parent)


def _resolve(path, config_dir: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else config_dir / p


def load_traces(cfg: ExperimentConfig, topo: Topology, topo_name: str):
    trace = cfg.trace
    source = trace.get("source")
    if source == "synthetic":
        spec = trace.get("spec")
        if isinstance(spec, (str, Path)):
            spec_path = _resolve(spec, cfg.config_dir)
            if not spec_path.exists():
                raise DataError(f"synthetic spec not found: {spec_path}")
            spec = yaml.safe_load(spec_path.read_text())
        if not isinstance(spec, dict):
            raise ConfigError("trace.spec: inline mapping or path to a spec file required")
        spec = dict(spec)
        if cfg.seed is not None and "seed" not in spec:
            spec["seed"] = cfg.seed
        timelines = synth_from_dict(spec)
    elif source == "geolife":
        root = _resolve(trace.get("path", ""), cfg.config_dir)
        if not root.exists():
            raise DataError(
                f"GeoLife directory not found: {root}. Download the 'GeoLife GPS Trajectories 1.3' "
                "dataset and point trace.path at the folder containing Data/<user>/Trajectory/*.plt")
        cache = cfg.output / f"visits_{topo_name}.csv"
        if cache.exists():
            with open(cache) as fh:
                return read_visits_csv(fh)
        timelines = load_geolife_dir(root, topo,
                                     gap_threshold=float(trace.get("gap_threshold", DEFAULT_GAP_THRESHOLD)),
                                     clients=trace.get("clients"))
        cfg.output.mkdir(parents=True, exist_ok=True)
        with open(cache, "w") as fh:
            write_visits_csv(timelines, fh)
    elif source == "visits":
        path = _resolve(trace.get("path", ""), cfg.config_dir)
        if not path.exists():
            raise DataError(f"visits file not found: {path}")
        with open(path) as fh:
            timelines = read_visits_csv(fh)
    else:
        raise ConfigError(f"trace.source: unknown source {source!r}; expected synthetic | geolife | visits")
    for tl in timelines:
        for visits in tl.sessions:
            for v in visits:
                if v.node >= len(topo.edge_nodes):
                    raise ConfigError(
                        f"trace references node {v.node}, topology {topo_name} has {len(topo.edge_nodes)} edge nodes")
    return timelines


def _run_point(topo_spec: TopologySpec, policy: PolicyConfig, timelines,
               window, series_clients, series_bucket, dump_events):
    topo, network = topo_spec.build()
    result = run_simulation(timelines, topo, network, policy, record_log=dump_events)
    memory, _, _ = snapshot_memory(result.policies)
    report = compute_report(result.ledger, timelines, memory_by_client=memory,
                            window=window, series_clients=series_clients,
                            series_bucket=series_bucket)
    return report, (result.event_log if dump_events else None)


def _point_args(cfg, topo_spec, timelines, policy):
    return (topo_spec, policy, timelines, cfg.window, cfg.series_clients,
            cfg.series_bucket, cfg.dump_events)


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Execute the sweep and write all artifacts; returns the result rows."""
    cfg.output.mkdir(parents=True, exist_ok=True)
    points = []
    for topo_spec in cfg.topologies:
        topo, _ = topo_spec.build()
        timelines = load_traces(cfg, topo, topo_spec.name)
        for policy in cfg.policies:
            points.append((topo_spec, policy, timelines))
    if cfg.jobs > 1 and len(points) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(_run_point, *_point_args(cfg, ts, tls, pol))
                       for ts, pol, tls in points]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_run_point(*_point_args(cfg, ts, tls, pol)) for ts, pol, tls in points]

    rows = []
    for (topo_spec, policy, timelines), (report, event_log) in zip(points, outcomes):
        rows.append({
            "experiment": cfg.experiment,
            "topology": topo_spec.name,
            "policy": policy.name,
            "clients": len(report.per_client),
            "availability": report.availability,
            "excess_ratio": report.excess_ratio,
            "memory_avg_bytes": report.memory_avg,
            "memory_max_bytes": report.memory_max,
        })
        point_dir = cfg.output / f"{policy.name}__{topo_spec.name}"
        point_dir.mkdir(parents=True, exist_ok=True)
        with open(point_dir / "report.csv", "w") as fh:
            write_report_csv(report, fh)
        for cid, series in report.series.items():
            with open(point_dir / f"series_{cid}.csv", "w") as fh:
                fh.write("time,availability\n")
                for t, a in series:
                    fh.write(f"{t!r},{a!r}\n")
        if event_log is not None:
            with open(point_dir / "events.csv", "w") as fh:
                write_event_log_csv(event_log, fh)
    write_results_csv(rows, cfg.output / "results.csv")
    summary = {cfg.experiment: {"rows": rows, "seed": cfg.seed}}
    (cfg.output / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if cfg.plot:
        (cfg.output / cfg.plot).write_text(pareto_svg(rows))
    return rows


def write_results_csv(rows, path):
    import csv
    with open(path, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for row in rows:
            writer.writerow([row["experiment"], row["topology"], row["policy"], row["clients"],
                             repr(row["availability"]), repr(row["excess_ratio"]),
                             repr(row["memory_avg_bytes"]), row["memory_max_bytes"]])


def read_results_csv(path) -> list[dict]:
    import csv
    with open(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULTS_HEADER:
            raise DataError(f"{path}: unexpected results header {reader.fieldnames}")
        return [dict(row) for row in reader]


def merge_results(paths) -> list[dict]:
    """Concatenate results files into one comparison table, sorted by
    (experiment, topology, policy)."""
    rows = []
    for p in paths:
        rows.extend(read_results_csv(p))
    rows.sort(key=lambda r: (r["experiment"], r["topology"], r["policy"]))
    return rows


def pareto_svg(rows, width=640, height=480) -> str:
    """Scatter of availability vs excess data with the Pareto front (maximal
    availability, minimal excess) drawn as a line."""
    pts = [(float(r["availability"]) * 100.0, float(r["excess_ratio"]) * 100.0,
            f"{r['policy']}/{r['topology']}") for r in rows]
    if not pts:
        return "<svg xmlns='http://www.w3.org/2000/svg'/>"
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    xspan = (x1 - x0) or 1.0
    yspan = (y1 - y0) or 1.0
    margin = 60

    def sx(x):
        return margin + (x - x0) / xspan * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y0) / yspan * (height - 2 * margin)

    front = []
    best_excess = float("inf")
    for x, y, label in sorted(pts, key=lambda p: (-p[0], p[1])):
        if y < best_excess:
            front.append((x, y))
            best_excess = y
    parts = [f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}'>",
             f"<rect width='{width}' height='{height}' fill='white'/>",
             f"<text x='{width / 2}' y='{height - 15}' text-anchor='middle' font-size='13'>availability [%]</text>",
             f"<text x='18' y='{height / 2}' text-anchor='middle' font-size='13' "
             f"transform='rotate(-90 18 {height / 2})'>excess data [%]</text>"]
    if len(front) > 1:
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in front)
        parts.append(f"<polyline points='{path}' fill='none' stroke='#888' stroke-width='1'/>")
    for x, y, label in pts:
        parts.append(f"<circle cx='{sx(x):.1f}' cy='{sy(y):.1f}' r='4' fill='#1f77b4'/>")
        parts.append(f"<text x='{sx(x) + 6:.1f}' y='{sy(y) - 6:.1f}' font-size='11'>{label}</text>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
