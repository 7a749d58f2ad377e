"""Online-trainable Markov predictors over node-visit sequences.

Three query strategies share one table structure:

* fixed-order model: predicts only from exactly the last ``k`` nodes;
* variable-order model: queries orders ``k_max`` down to 1 and returns the
  highest-order hit;
* fusion model: trains the cartesian product of history sizes, day-of-week
  splits and time-of-day splits, then merges all sub-model distributions by
  weighted sum and normalizes.

Tables key on (history, day bucket, time bucket), where buckets derive from
the trip start time. Each (context, target) record carries a transition count
plus stay-duration statistics for the node the history ends at, so predictions
can report an expected stay. An end-of-trip pseudo-target (``EOT``) records
trip termination when enabled.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

from .errors import ConfigError, DataError

EOT = -1  # end-of-trip pseudo target; real node ids are >= 0

DAY_SPLITS = (1, 2, 7)
TIME_SPLITS = (1, 4, 24)

_MAGIC = b"FGMK1\n"
_TARGET_STRUCT = struct.Struct("<iIdI")  # id, count, stay_sum, stay_count
TARGET_BYTES = _TARGET_STRUCT.size  # 20


def bucketize(t, day_split, time_split, tz_offset=0.0) -> tuple[int, int]:
    """Map a timestamp to (day bucket, time bucket) in local wall time.

    day_split 7 -> weekday (Mon=0); 2 -> 0 weekday / 1 weekend; 1 -> 0.
    time_split 24 -> hour; 4 -> six-hour range; 1 -> 0.
    """
    if day_split not in DAY_SPLITS or time_split not in TIME_SPLITS:
        raise ConfigError(f"unsupported split sizes ({day_split}, {time_split})")
    wall = int(t + tz_offset)
    day = 0
    if day_split > 1:
        weekday = ((wall // 86400) + 3) % 7  # epoch day 0 was a Thursday
        day = weekday if day_split == 7 else (1 if weekday >= 5 else 0)
    tod = 0
    if time_split > 1:
        hour = (wall % 86400) // 3600
        tod = hour if time_split == 24 else hour // 6
    return day, tod


@dataclass
class TargetRecord:
    count: int = 0
    stay_sum: float = 0.0
    stay_count: int = 0

    @property
    def mean_stay(self) -> float | None:
        return self.stay_sum / self.stay_count if self.stay_count else None


class TransitionTable:
    """Context -> per-target counts. Contexts are (history tuple, day, time)."""

    def __init__(self):
        self.entries: dict[tuple, dict[int, TargetRecord]] = {}

    def add(self, context, target, stay=None):
        targets = self.entries.setdefault(context, {})
        rec = targets.get(target)
        if rec is None:
            rec = targets[target] = TargetRecord()
        rec.count += 1
        if stay is not None:
            rec.stay_sum += stay
            rec.stay_count += 1

    def lookup(self, context):
        return self.entries.get(context)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class SubModelSpec:
    order: int
    day_split: int
    time_split: int
    weight: float

    def __post_init__(self):
        if self.weight <= 0:
            raise ConfigError("sub-model weight must be > 0")


@dataclass
class SubModel:
    spec: SubModelSpec
    table: TransitionTable = field(default_factory=TransitionTable)


@dataclass(frozen=True)
class Prediction:
    target: int  # node id, or EOT
    probability: float
    expected_stay: float | None = None


def default_weight(order, day_split, time_split) -> float:
    """More specific sub-models weigh more: order x day groups x time groups."""
    return float(order * day_split * time_split)


def momm_predict(table: TransitionTable, history, buckets) -> list[Prediction] | None:
    """Distribution for an exact-length history, or None when the context was
    never seen (absence is a value, not an error)."""
    targets = table.lookup((tuple(history), buckets[0], buckets[1]))
    if not targets:
        return None
    total = sum(rec.count for rec in targets.values())
    preds = [Prediction(t, rec.count / total, rec.mean_stay)
             for t, rec in sorted(targets.items(), key=lambda kv: (kv[0] == EOT, kv[0]))]
    return preds


class MarkovPredictor:
    """Shared training/bookkeeping over a list of sub-models."""

    kind = "base"

    def __init__(self, submodels, eot=True, tz_offset=0.0):
        self.submodels: list[SubModel] = list(submodels)
        self.eot = eot
        self.tz_offset = tz_offset

    def _buckets(self, spec: SubModelSpec, trip_start):
        return bucketize(trip_start, spec.day_split, spec.time_split, self.tz_offset)

    def train_session(self, visits, trip_start):
        """Enter every transition of a completed trip, plus an end-of-trip
        transition when enabled. Buckets come from the trip start time."""
        if not visits:
            raise DataError("cannot train on an empty visit sequence")
        nodes = [v.node for v in visits]
        for sm in self.submodels:
            k = sm.spec.order
            day, tod = self._buckets(sm.spec, trip_start)
            for i in range(k, len(nodes)):
                stay = visits[i - 1].departure - visits[i - 1].arrival
                sm.table.add((tuple(nodes[i - k:i]), day, tod), nodes[i], stay)
            if self.eot and len(nodes) >= k:
                sm.table.add((tuple(nodes[-k:]), day, tod), EOT)

    def predict(self, history, trip_start):
        raise NotImplementedError

    def _query(self, sm: SubModel, history, trip_start):
        k = sm.spec.order
        if len(history) < k:
            return None
        return momm_predict(sm.table, tuple(history[-k:]), self._buckets(sm.spec, trip_start))

    def memory_bytes(self) -> int:
        return sum(_table_bytes(sm.spec.order, sm.table) for sm in self.submodels)

    # -- persistence -------------------------------------------------------

    def save_bytes(self) -> bytes:
        out = [_MAGIC]
        header = json.dumps(self._config_dict(), sort_keys=True).encode()
        out.append(struct.pack("<I", len(header)))
        out.append(header)
        for sm in self.submodels:
            entries = sorted(sm.table.entries.items())
            out.append(struct.pack("<I", len(entries)))
            counts = struct.pack(f"<{len(entries)}H", *(len(t) for _, t in entries))
            out.append(counts)
            for context, targets in entries:
                out.append(_encode_entry(context, targets))
        return b"".join(out)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.save_bytes())

    def _config_dict(self) -> dict:
        return {
            "kind": self.kind,
            "eot": self.eot,
            "tz_offset": self.tz_offset,
            "submodels": [[sm.spec.order, sm.spec.day_split, sm.spec.time_split, sm.spec.weight]
                          for sm in self.submodels],
        }

    @staticmethod
    def load_bytes(data: bytes) -> "MarkovPredictor":
        if not data.startswith(_MAGIC):
            raise DataError("not a predictor file")
        off = len(_MAGIC)
        (hlen,) = struct.unpack_from("<I", data, off)
        off += 4
        cfg = json.loads(data[off:off + hlen])
        off += hlen
        cls = {"momm": MommModel, "vomm": VommModel, "fomm": FommModel}.get(cfg["kind"])
        if cls is None:
            raise DataError(f"unknown predictor kind {cfg['kind']!r}")
        model = cls.__new__(cls)
        MarkovPredictor.__init__(
            model,
            [SubModel(SubModelSpec(o, d, t, w)) for o, d, t, w in cfg["submodels"]],
            eot=cfg["eot"], tz_offset=cfg["tz_offset"])
        for sm in model.submodels:
            (n_entries,) = struct.unpack_from("<I", data, off)
            off += 4
            counts = struct.unpack_from(f"<{n_entries}H", data, off)
            off += 2 * n_entries
            for n_targets in counts:
                context, targets, off = _decode_entry(data, off, sm.spec.order, n_targets)
                sm.table.entries[context] = targets
        if off != len(data):
            raise DataError("trailing bytes in predictor file")
        return model

    @staticmethod
    def load(path) -> "MarkovPredictor":
        with open(path, "rb") as fh:
            return MarkovPredictor.load_bytes(fh.read())


class MommModel(MarkovPredictor):
    """Fixed order k; no prediction when the history is shorter or unseen."""

    kind = "momm"

    def __init__(self, k, day_split=1, time_split=1, eot=True, tz_offset=0.0, weight=None):
        if k < 1:
            raise ConfigError("order must be >= 1")
        w = default_weight(k, day_split, time_split) if weight is None else weight
        super().__init__([SubModel(SubModelSpec(k, day_split, time_split, w))],
                         eot=eot, tz_offset=tz_offset)
        self.k = k

    def predict(self, history, trip_start):
        return self._query(self.submodels[0], history, trip_start)


class VommModel(MarkovPredictor):
    """Orders k_max..1, returning the highest-order distribution that exists."""

    kind = "vomm"

    def __init__(self, k_max, day_split=1, time_split=1, eot=True, tz_offset=0.0):
        if k_max < 1:
            raise ConfigError("k_max must be >= 1")
        subs = [SubModel(SubModelSpec(k, day_split, time_split,
                                      default_weight(k, day_split, time_split)))
                for k in range(1, k_max + 1)]
        super().__init__(subs, eot=eot, tz_offset=tz_offset)
        self.k_max = k_max

    def predict(self, history, trip_start):
        for sm in reversed(self.submodels):
            preds = self._query(sm, history, trip_start)
            if preds is not None:
                return preds
        return None


class FommModel(MarkovPredictor):
    """Cartesian product of orders x day splits x time splits, fused by
    weighted sum and normalization; stays fuse as weight-weighted averages
    over the sub-models that report one."""

    kind = "fomm"

    def __init__(self, k_max=2, day_splits=(1,), time_splits=(1,), eot=True,
                 tz_offset=0.0, weight_fn=default_weight, submodels=None):
        if submodels is None:
            if k_max < 1:
                raise ConfigError("k_max must be >= 1")
            for d in day_splits:
                if d not in DAY_SPLITS:
                    raise ConfigError(f"unsupported day split {d}")
            for t in time_splits:
                if t not in TIME_SPLITS:
                    raise ConfigError(f"unsupported time split {t}")
            submodels = [SubModel(SubModelSpec(k, d, t, weight_fn(k, d, t)))
                         for k in range(1, k_max + 1)
                         for d in sorted(day_splits)
                         for t in sorted(time_splits)]
            self.k_max = k_max
        else:
            submodels = list(submodels)
            self.k_max = max(sm.spec.order for sm in submodels)
        super().__init__(submodels, eot=eot, tz_offset=tz_offset)

    def predict(self, history, trip_start):
        raw: dict[int, float] = {}
        stay_num: dict[int, float] = {}
        stay_den: dict[int, float] = {}
        for sm in self.submodels:
            preds = self._query(sm, history, trip_start)
            if preds is None:
                continue
            w = sm.spec.weight
            for p in preds:
                raw[p.target] = raw.get(p.target, 0.0) + p.probability * w
                if p.expected_stay is not None:
                    stay_num[p.target] = stay_num.get(p.target, 0.0) + w * p.expected_stay
                    stay_den[p.target] = stay_den.get(p.target, 0.0) + w
        if not raw:
            return None
        total = sum(raw.values())
        return [Prediction(t, raw[t] / total,
                           stay_num[t] / stay_den[t] if t in stay_den else None)
                for t in sorted(raw, key=lambda t: (t == EOT, t))]


def vomm_predict(model: VommModel, history, trip_start):
    return model.predict(history, trip_start)


def fomm_predict(model: FommModel, history, trip_start):
    return model.predict(history, trip_start)


def dynamic_topn(preds, threshold=None, fixed_n=None, include_eot=True) -> list[int]:
    """Select targets by descending probability (ties by node id, end-of-trip
    last among ties): either the shortest prefix whose cumulative probability
    reaches ``threshold``, or exactly ``min(fixed_n, len(preds))`` targets.

    With include_eot=False, end-of-trip mass does not count toward the
    threshold but keeps its position in the ordering.
    """
    if (threshold is None) == (fixed_n is None):
        raise ConfigError("exactly one of threshold / fixed_n must be given")
    ordered = sorted(preds, key=lambda p: (-p.probability, p.target == EOT, p.target))
    if fixed_n is not None:
        if fixed_n < 1:
            raise ConfigError("fixed_n must be >= 1")
        return [p.target for p in ordered[:fixed_n]]
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"topN threshold must be in (0, 1], got {threshold}")
    selected = []
    cum = 0.0
    for p in ordered:
        selected.append(p.target)
        if include_eot or p.target != EOT:
            cum += p.probability
        if cum >= threshold:
            break
    return selected


def model_memory_bytes(model: MarkovPredictor) -> int:
    """Size of the canonical table serialization: per entry 2 bytes per
    history element plus 2 bytes per bucket, then 20 bytes per target
    (4 id + 4 count + 8 stay_sum + 4 stay_count)."""
    return model.memory_bytes()


def _table_bytes(order, table: TransitionTable) -> int:
    per_entry = 2 * order + 4
    return sum(per_entry + TARGET_BYTES * len(t) for t in table.entries.values())


def _encode_entry(context, targets) -> bytes:
    history, day, tod = context
    parts = [struct.pack(f"<{len(history)}HHH", *history, day, tod)]
    for target, rec in sorted(targets.items(), key=lambda kv: (kv[0] == EOT, kv[0])):
        parts.append(_TARGET_STRUCT.pack(target, rec.count, rec.stay_sum, rec.stay_count))
    return b"".join(parts)


def _decode_entry(data, off, order, n_targets):
    vals = struct.unpack_from(f"<{order}HHH", data, off)
    off += 2 * order + 4
    context = (tuple(vals[:order]), vals[order], vals[order + 1])
    targets = {}
    for _ in range(n_targets):
        tid, count, stay_sum, stay_count = _TARGET_STRUCT.unpack_from(data, off)
        off += TARGET_BYTES
        targets[tid] = TargetRecord(count, stay_sum, stay_count)
    return context, targets, off
