"""Replica-placement decision logic reacting to simulation events.

One policy instance serves one client. The reactive baseline keeps a replica
at the current node only; predictive configurations add next-node preloading
(fixed/variable-order or fusion predictor, optional end-of-trip handling,
top-N selection, preload-buffer timing) and startup retention (short-pause or
pause-length model). All combinations compose through the same class, so the
combined policy is literally the predictive policy during sessions and the
retention policy at session ends.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .markov import (EOT, FommModel, MommModel, VommModel, dynamic_topn)
from .startup import (DEFAULT_MIN_SAMPLES, DEFAULT_PLMM_THRESHOLD,
                      DEFAULT_RETENTION_FACTOR, FIXED, RETENTION_MODES,
                      PauseStats, PlmmModel, RetentionDecision, plmm_retention,
                      record_pause, short_pause_retention)
from .traces import NodeVisit

PREDICTORS = ("baseline", "momm", "vomm", "fomm")
STARTUP_MODES = ("none", "short_pause", "plmm")

IMMEDIATE_BUFFER = 86400.0  # larger than any stay: replicate right away


@dataclass(frozen=True)
class Replicate:
    node: int
    at: float  # transfer start time


@dataclass(frozen=True)
class Delete:
    node: int
    at: float


@dataclass(frozen=True)
class Retain:
    node: int
    until: float


PlacementAction = Replicate | Delete | Retain


@dataclass(frozen=True)
class PolicyConfig:
    name: str = "baseline"
    predictor: str = "baseline"
    k: int = 2
    day_splits: tuple[int, ...] = (1,)
    time_splits: tuple[int, ...] = (1,)
    eot: bool = False
    topn_mode: str = "fixed"          # fixed | dynamic
    topn_n: int = 1
    topn_threshold: float = 0.9
    topn_include_eot: bool = True
    preload_buffer: float = IMMEDIATE_BUFFER  # seconds of lead time
    startup_mode: str = "none"        # none | short_pause | plmm
    short_pause_mode: str = FIXED
    short_pause_duration: float = 600.0
    short_pause_max: float | None = None
    plmm_threshold: float = DEFAULT_PLMM_THRESHOLD
    retention_factor: float = DEFAULT_RETENTION_FACTOR
    min_samples: int = DEFAULT_MIN_SAMPLES
    tz_offset: float = 0.0

    def validate(self):
        if self.predictor not in PREDICTORS:
            raise ConfigError(f"predictor: unknown predictor {self.predictor!r}; expected one of {PREDICTORS}")
        if self.predictor != "baseline" and self.k < 1:
            raise ConfigError("predictor.k: must be >= 1")
        if self.topn_mode not in ("fixed", "dynamic"):
            raise ConfigError(f"topn.type: unknown mode {self.topn_mode!r}")
        if self.topn_mode == "dynamic" and not 0.0 < self.topn_threshold <= 1.0:
            raise ConfigError(f"topn.threshold: must be in (0, 1], got {self.topn_threshold}")
        if self.topn_mode == "fixed" and self.topn_n < 1:
            raise ConfigError("topn.n: must be >= 1")
        if self.startup_mode not in STARTUP_MODES:
            raise ConfigError(f"startup.type: unknown mode {self.startup_mode!r}; expected one of {STARTUP_MODES}")
        if self.startup_mode == "short_pause" and self.short_pause_mode not in RETENTION_MODES:
            raise ConfigError(f"startup.mode: unknown short-pause mode {self.short_pause_mode!r}")
        if self.preload_buffer < 0:
            raise ConfigError("preload_buffer: must be >= 0")
        return self

    @staticmethod
    def from_dict(doc: dict, name=None) -> "PolicyConfig":
        doc = dict(doc)
        kwargs = {}
        doc_name = doc.pop("name", None)
        if name is not None:
            kwargs["name"] = str(name)
        elif doc_name is not None:
            kwargs["name"] = str(doc_name)
        pred = doc.pop("predictor", "baseline")
        if isinstance(pred, str):
            kwargs["predictor"] = pred
        else:
            pred = dict(pred)
            kwargs["predictor"] = pred.pop("type", "baseline")
            if "k" in pred:
                kwargs["k"] = int(pred.pop("k"))
            if "day_splits" in pred:
                kwargs["day_splits"] = tuple(int(x) for x in pred.pop("day_splits"))
            if "time_splits" in pred:
                kwargs["time_splits"] = tuple(int(x) for x in pred.pop("time_splits"))
            if pred:
                raise ConfigError(f"predictor: unknown keys {sorted(pred)}")
        if "k" in doc:
            kwargs["k"] = int(doc.pop("k"))
        if "eot" in doc:
            kwargs["eot"] = bool(doc.pop("eot"))
        topn = doc.pop("topn", None)
        if topn is not None:
            topn = dict(topn)
            kwargs["topn_mode"] = topn.pop("type", "fixed")
            if "n" in topn:
                kwargs["topn_n"] = int(topn.pop("n"))
            if "threshold" in topn:
                kwargs["topn_threshold"] = float(topn.pop("threshold"))
            if "include_eot" in topn:
                kwargs["topn_include_eot"] = bool(topn.pop("include_eot"))
            if topn:
                raise ConfigError(f"topn: unknown keys {sorted(topn)}")
        if "preload_buffer" in doc:
            kwargs["preload_buffer"] = float(doc.pop("preload_buffer"))
        startup = doc.pop("startup", None)
        if startup is not None:
            if isinstance(startup, str):
                kwargs["startup_mode"] = startup
            else:
                startup = dict(startup)
                kwargs["startup_mode"] = startup.pop("type", "none")
                if "mode" in startup:
                    kwargs["short_pause_mode"] = str(startup.pop("mode"))
                if "duration" in startup:
                    kwargs["short_pause_duration"] = float(startup.pop("duration"))
                if "max" in startup:
                    kwargs["short_pause_max"] = float(startup.pop("max"))
                if "threshold" in startup:
                    kwargs["plmm_threshold"] = float(startup.pop("threshold"))
                if "factor" in startup:
                    kwargs["retention_factor"] = float(startup.pop("factor"))
                if "min_samples" in startup:
                    kwargs["min_samples"] = int(startup.pop("min_samples"))
                if startup:
                    raise ConfigError(f"startup: unknown keys {sorted(startup)}")
        if "tz_offset" in doc:
            kwargs["tz_offset"] = float(doc.pop("tz_offset"))
        if doc:
            raise ConfigError(f"policy: unknown keys {sorted(doc)}")
        return PolicyConfig(**kwargs).validate()


def build_predictor(config: PolicyConfig):
    if config.predictor == "baseline":
        return None
    if config.predictor == "momm":
        return MommModel(config.k, eot=config.eot, tz_offset=config.tz_offset)
    if config.predictor == "vomm":
        return VommModel(config.k, eot=config.eot, tz_offset=config.tz_offset)
    if config.predictor == "fomm":
        return FommModel(config.k, config.day_splits, config.time_splits,
                         eot=config.eot, tz_offset=config.tz_offset)
    raise ConfigError(f"unknown predictor {config.predictor!r}")


class ReplicaView:
    """Read-only view of one client's replica state, provided by the engine.

    present(node): replica fully available there (including retained ones).
    tracked(): nodes with any standing (present, retained, or a transfer
    pending or in flight).
    """

    def present(self, node) -> bool:
        raise NotImplementedError

    def tracked(self):
        raise NotImplementedError


class ReplicaPolicy:
    """Per-client decision state; driven by the simulation event loop."""

    def __init__(self, config: PolicyConfig, transfer_estimate=None):
        self.config = config
        # estimated seconds to move the data set to a node; the simulator
        # wires in the true transfer time, other estimators can be plugged in
        self.transfer_estimate = transfer_estimate or (lambda node: 0.0)
        self.predictor = build_predictor(config)
        needs_stats = (config.startup_mode == "short_pause"
                       and config.short_pause_mode != FIXED)
        self.pause_stats = PauseStats() if needs_stats else None
        self.plmm = PlmmModel() if config.startup_mode == "plmm" else None
        self.trip_start: float | None = None
        self.trip_nodes: list[int] = []
        self._trip_visits: list[list] = []  # [node, arrival, departure]
        self.last_shutdown: tuple[int, float] | None = None

    # -- event handlers ------------------------------------------------------

    def on_session_start(self, node, t, view: ReplicaView) -> list[PlacementAction]:
        self._observe_pause(node, t)
        self.trip_start = t
        self.trip_nodes = [node]
        self._trip_visits = [[node, t, None]]
        return self._arrival_actions(node, t, view)

    def on_arrival(self, node, t, view: ReplicaView) -> list[PlacementAction]:
        self._trip_visits[-1][2] = t
        self._trip_visits.append([node, t, None])
        self.trip_nodes.append(node)
        return self._arrival_actions(node, t, view)

    def on_session_end(self, node, t, view: ReplicaView) -> list[PlacementAction]:
        self._trip_visits[-1][2] = t
        actions: list[PlacementAction] = []
        for other in sorted(view.tracked()):
            if other != node:
                actions.append(Delete(other, t))
        decision = self._retention_decision(node, t)
        if decision.keep and decision.until > t:
            actions.append(Retain(node, decision.until))
        elif node in view.tracked():
            actions.append(Delete(node, t))
        self._train(t)
        self.last_shutdown = (node, t)
        self.trip_start = None
        self.trip_nodes = []
        self._trip_visits = []
        return actions

    # -- internals -----------------------------------------------------------

    def _observe_pause(self, startup_node, t):
        if self.last_shutdown is None:
            return
        if self.pause_stats is None and self.plmm is None:
            return
        shutdown_node, end_t = self.last_shutdown
        duration = t - end_t
        if duration > 0:
            record_pause(self.pause_stats, self.plmm, shutdown_node, startup_node, duration)

    def _arrival_actions(self, node, t, view: ReplicaView) -> list[PlacementAction]:
        selected: list[int] = []
        stays: dict[int, float | None] = {}
        preds = None
        if self.predictor is not None:
            preds = self.predictor.predict(self.trip_nodes, self.trip_start)
        if preds:
            cfg = self.config
            if cfg.topn_mode == "dynamic":
                targets = dynamic_topn(preds, threshold=cfg.topn_threshold,
                                       include_eot=cfg.topn_include_eot)
            else:
                targets = dynamic_topn(preds, fixed_n=cfg.topn_n)
            if not (cfg.eot and targets and targets[0] == EOT):
                # a predicted trip end schedules nothing at all
                selected = [x for x in targets if x != EOT]
                stays = {p.target: p.expected_stay for p in preds}
        actions: list[PlacementAction] = []
        justified = {node} | set(selected)
        for other in sorted(view.tracked()):
            if other not in justified:
                actions.append(Delete(other, t))
        if not view.present(node):
            actions.append(Replicate(node, t))
        for target in selected:
            if target == node or view.present(target):
                continue
            stay = stays.get(target)
            if stay is None:
                at = t
            else:
                at = max(t, t + stay - self.transfer_estimate(target) - self.config.preload_buffer)
            actions.append(Replicate(target, at))
        return actions

    def _retention_decision(self, node, t) -> RetentionDecision:
        cfg = self.config
        if cfg.startup_mode == "short_pause":
            return short_pause_retention(
                cfg.short_pause_mode, t, shutdown_node=node, stats=self.pause_stats,
                fixed_duration=cfg.short_pause_duration, max_duration=cfg.short_pause_max,
                min_samples=cfg.min_samples)
        if cfg.startup_mode == "plmm":
            return plmm_retention(self.plmm, node, t,
                                  threshold=cfg.plmm_threshold, factor=cfg.retention_factor)
        return RetentionDecision(False)

    def _train(self, end_t):
        if self.predictor is None:
            return
        visits = [NodeVisit(n, a, d if d is not None else end_t)
                  for n, a, d in self._trip_visits]
        self.predictor.train_session(visits, self.trip_start)

    def memory_bytes(self) -> int:
        total = 0
        if self.predictor is not None:
            total += self.predictor.memory_bytes()
        if self.pause_stats is not None:
            total += self.pause_stats.memory_bytes()
        if self.plmm is not None:
            total += self.plmm.memory_bytes()
        return total


def make_policy(config: PolicyConfig, transfer_estimate=None) -> ReplicaPolicy:
    return ReplicaPolicy(config, transfer_estimate)
