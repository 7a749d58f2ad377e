"""Discrete-event engine: replays client timelines against a topology,
executes policy actions, models transfers, and records the replica ledger.

Events are processed in non-decreasing time; ties break by kind (transfer
starts, then transfer completions, arrivals, session starts, session ends,
retention expiries), then client id, then insertion order. A preloaded
transfer completing exactly at the arrival it targets therefore counts as
available. Scheduled events are invalidated by a per-(client, node)
generation counter instead of being removed from the heap.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .errors import ConfigError, EngineInvariantError
from .policies import (Delete, PolicyConfig, Replicate, ReplicaPolicy,
                       ReplicaView, Retain, make_policy)
from .topology import (FixedDelay, FlowGraph, Topology, transfer_source,
                       transfer_time)

# event kinds, in tie-break order
TRANSFER_START = 0
TRANSFER_COMPLETE = 1
ARRIVAL = 2
SESSION_START = 3
SESSION_END = 4
RETENTION_EXPIRE = 5

KIND_NAMES = {
    TRANSFER_START: "TransferStart",
    TRANSFER_COMPLETE: "TransferComplete",
    ARRIVAL: "Arrival",
    SESSION_START: "SessionStart",
    SESSION_END: "SessionEnd",
    RETENTION_EXPIRE: "RetentionExpire",
}

# replica states per (client, node)
_ABSENT = 0
_PENDING = 1
_IN_FLIGHT = 2
_PRESENT = 3
_RETAINED = 4


class ReplicaLedger:
    """Per (client, node): sorted disjoint presence intervals [from, to)."""

    def __init__(self):
        self._intervals: dict[tuple[str, int], list[tuple[float, float]]] = {}

    def add(self, client, node, start, end):
        if end <= start:
            return
        self._intervals.setdefault((client, node), []).append((start, end))

    def intervals(self, client, node) -> list[tuple[float, float]]:
        return self._intervals.get((client, node), [])

    def nodes(self, client) -> list[int]:
        return sorted(n for c, n in self._intervals if c == client)

    def clients(self) -> list[str]:
        return sorted({c for c, _ in self._intervals})

    def total_presence(self, client) -> float:
        return sum(b - a for (c, _), ivs in self._intervals.items() if c == client
                   for a, b in ivs)

    def items(self):
        return self._intervals.items()

    def validate(self):
        for (c, n), ivs in self._intervals.items():
            for (a1, b1), (a2, b2) in zip(ivs, ivs[1:]):
                if a2 < b1:
                    raise EngineInvariantError(f"overlapping intervals for ({c}, {n})")
            for a, b in ivs:
                if b <= a:
                    raise EngineInvariantError(f"empty interval for ({c}, {n})")

    def __eq__(self, other):
        return isinstance(other, ReplicaLedger) and self._intervals == other._intervals


@dataclass
class EventRecord:
    t: float
    client: str
    kind: str
    node: int


@dataclass
class RunResult:
    ledger: ReplicaLedger
    event_log: list[EventRecord]
    policies: dict[str, ReplicaPolicy]


class _NodeState:
    __slots__ = ("status", "gen", "open_since", "retained_until", "pending_start")

    def __init__(self):
        self.status = _ABSENT
        self.gen = 0
        self.open_since = 0.0
        self.retained_until = None
        self.pending_start = 0.0


class _View(ReplicaView):
    def __init__(self, client_states):
        self._client_states = client_states

    def present(self, node) -> bool:
        st = self._client_states.get(node)
        return st is not None and st.status in (_PRESENT, _RETAINED)

    def tracked(self):
        return [n for n, st in self._client_states.items() if st.status != _ABSENT]


class SimulationEngine:
    def __init__(self, timelines, topology: Topology, network, policy_config: PolicyConfig,
                 horizon=None, record_log=True, policy_factory=None):
        if not isinstance(network, (FixedDelay, FlowGraph)):
            raise ConfigError(f"unknown network model {network!r}")
        self.topology = topology
        self.network = network
        self.timelines = sorted(timelines, key=lambda tl: tl.client_id)
        self._edge_ids = {n.id for n in topology.edge_nodes}
        self._source = transfer_source(network, topology)
        self._ttime_cache: dict[int, float] = {}
        self.record_log = record_log
        self._horizons: dict[str, float] = {}
        for tl in self.timelines:
            if not tl.sessions:
                raise ConfigError(f"client {tl.client_id}: empty timeline")
            h = tl.last_t
            if horizon is not None:
                if h > horizon:
                    raise ConfigError(f"client {tl.client_id}: timeline exceeds horizon {horizon}")
            self._horizons[tl.client_id] = h
            for visits in tl.sessions:
                for v in visits:
                    if v.node not in self._edge_ids:
                        raise ConfigError(f"client {tl.client_id}: unknown node id {v.node}")
        factory = policy_factory or (lambda cfg: make_policy(cfg, self._ttime))
        self.policies: dict[str, ReplicaPolicy] = {
            tl.client_id: factory(policy_config) for tl in self.timelines}
        self._states: dict[str, dict[int, _NodeState]] = {
            tl.client_id: {} for tl in self.timelines}
        self._heap: list = []
        self._seq = 0
        self.ledger = ReplicaLedger()
        self.event_log: list[EventRecord] = []

    def _ttime(self, dst) -> float:
        cached = self._ttime_cache.get(dst)
        if cached is None:
            if isinstance(self.network, FixedDelay):
                cached = self.network.delay
            else:
                cached = transfer_time(self._source, dst, self.network)
            self._ttime_cache[dst] = cached
        return cached

    def _push(self, t, kind, client, node, gen):
        self._seq += 1
        heapq.heappush(self._heap, (t, kind, client, self._seq, node, gen))

    def _state(self, client, node) -> _NodeState:
        per_client = self._states[client]
        st = per_client.get(node)
        if st is None:
            st = per_client[node] = _NodeState()
        return st

    def run(self) -> RunResult:
        for tl in self.timelines:
            for visits in tl.sessions:
                self._push(visits[0].arrival, SESSION_START, tl.client_id, visits[0].node, 0)
                for v in visits[1:]:
                    self._push(v.arrival, ARRIVAL, tl.client_id, v.node, 0)
                self._push(visits[-1].departure, SESSION_END, tl.client_id, visits[-1].node, 0)
        last_t = float("-inf")
        while self._heap:
            t, kind, client, _seq, node, gen = heapq.heappop(self._heap)
            if t < last_t:
                raise EngineInvariantError(f"event time regression: {t} after {last_t}")
            last_t = t
            if t > self._horizons[client]:
                continue
            if not self._dispatch(t, kind, client, node, gen):
                continue
            if self.record_log:
                self.event_log.append(EventRecord(t, client, KIND_NAMES[kind], node))
        self._finalize()
        return RunResult(self.ledger, self.event_log, self.policies)

    def _dispatch(self, t, kind, client, node, gen) -> bool:
        """Returns False for stale (cancelled) events."""
        if kind == TRANSFER_START:
            st = self._state(client, node)
            if st.gen != gen or st.status != _PENDING:
                return False
            st.status = _IN_FLIGHT
            st.gen += 1
            self._push(t + self._ttime(node), TRANSFER_COMPLETE, client, node, st.gen)
            return True
        if kind == TRANSFER_COMPLETE:
            st = self._state(client, node)
            if st.gen != gen or st.status != _IN_FLIGHT:
                return False
            st.gen += 1
            if st.retained_until is not None:
                # retention was granted while the transfer was in flight
                until = st.retained_until
                if until <= t:
                    st.status = _ABSENT
                    st.retained_until = None
                else:
                    st.status = _RETAINED
                    st.open_since = t
                    self._push(until, RETENTION_EXPIRE, client, node, st.gen)
            else:
                st.status = _PRESENT
                st.open_since = t
            return True
        if kind == RETENTION_EXPIRE:
            st = self._state(client, node)
            if st.gen != gen or st.status != _RETAINED:
                return False
            self.ledger.add(client, node, st.open_since, t)
            st.status = _ABSENT
            st.retained_until = None
            st.gen += 1
            return True
        # timeline events
        policy = self.policies[client]
        view = _View(self._states[client])
        st = self._state(client, node)
        if st.status == _RETAINED:
            # the client is back at a retained node: presence continues
            st.status = _PRESENT
            st.retained_until = None
            st.gen += 1
        elif st.status == _IN_FLIGHT and st.retained_until is not None:
            st.retained_until = None
        if kind == SESSION_START:
            actions = policy.on_session_start(node, t, view)
        elif kind == ARRIVAL:
            actions = policy.on_arrival(node, t, view)
        elif kind == SESSION_END:
            actions = policy.on_session_end(node, t, view)
        else:
            raise EngineInvariantError(f"unknown event kind {kind}")
        for action in actions:
            self._apply(t, client, action)
        return True

    def _apply(self, now, client, action):
        if isinstance(action, Replicate):
            node, at = action.node, action.at
        elif isinstance(action, (Delete, Retain)):
            node = action.node
        if node not in self._edge_ids:
            raise ConfigError(f"action references unknown node id {node}")
        st = self._state(client, node)
        if isinstance(action, Replicate):
            if at < now:
                raise EngineInvariantError(f"replicate scheduled in the past: {at} < {now}")
            if st.status in (_PRESENT, _RETAINED, _IN_FLIGHT):
                return
            if st.status == _PENDING and at == st.pending_start:
                return
            st.status = _PENDING
            st.pending_start = at
            st.retained_until = None
            st.gen += 1
            self._push(at, TRANSFER_START, client, node, st.gen)
        elif isinstance(action, Delete):
            if st.status in (_PRESENT, _RETAINED):
                self.ledger.add(client, node, st.open_since, now)
            st.status = _ABSENT
            st.retained_until = None
            st.gen += 1
        elif isinstance(action, Retain):
            if action.until <= now:
                if st.status in (_PRESENT, _RETAINED):
                    self.ledger.add(client, node, st.open_since, now)
                st.status = _ABSENT
                st.retained_until = None
                st.gen += 1
            elif st.status == _PRESENT or st.status == _RETAINED:
                st.status = _RETAINED
                st.retained_until = action.until
                st.gen += 1
                self._push(action.until, RETENTION_EXPIRE, client, node, st.gen)
            elif st.status == _IN_FLIGHT:
                # let the paid-for transfer finish into the retained state
                st.retained_until = action.until
            elif st.status == _PENDING:
                st.status = _ABSENT
                st.gen += 1
        else:
            raise EngineInvariantError(f"unknown action {action!r}")

    def _finalize(self):
        for client in sorted(self._states):
            for node, st in sorted(self._states[client].items()):
                if st.status in (_PRESENT, _RETAINED):
                    self.ledger.add(client, node, st.open_since, self._horizons[client])
                st.status = _ABSENT
        self.ledger.validate()


def run(timelines, topology, network, policy_config, horizon=None, record_log=True) -> RunResult:
    """Simulate the timelines under one policy configuration."""
    engine = SimulationEngine(timelines, topology, network, policy_config,
                              horizon=horizon, record_log=record_log)
    return engine.run()


def snapshot_memory(policies: dict[str, ReplicaPolicy]):
    """Per-client model bytes at the end of a run, with average and maximum."""
    per_client = {cid: policy.memory_bytes() for cid, policy in sorted(policies.items())}
    if not per_client:
        return per_client, 0.0, 0
    values = list(per_client.values())
    return per_client, sum(values) / len(values), max(values)


def write_event_log_csv(event_log, fileobj):
    """Debugging/oracle-comparison dump of the processed events."""
    fileobj.write("t,client,kind,node\n")
    for e in event_log:
        fileobj.write(f"{e.t!r},{e.client},{e.kind},{e.node}\n")
