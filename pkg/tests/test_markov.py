import calendar
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogrep.errors import ConfigError
from fogrep.markov import (EOT, FommModel, MommModel, Prediction, SubModel,
                           SubModelSpec, TransitionTable, VommModel, bucketize,
                           default_weight, dynamic_topn, model_memory_bytes,
                           momm_predict, MarkovPredictor)
from fogrep.traces import NodeVisit


def ts(date_s, time_s="00:00:00"):
    y, mo, d = (int(x) for x in date_s.split("-"))
    h, mi, s = (int(x) for x in time_s.split(":"))
    return float(calendar.timegm((y, mo, d, h, mi, s)))


def visits(*spec):
    """visits(('A', 0, 600), ...) with string node labels A=0, B=1, ..."""
    out = []
    for node, a, b in spec:
        nid = node if isinstance(node, int) else ord(node) - ord("A")
        out.append(NodeVisit(nid, float(a), float(b)))
    return out


A, B, C, D = 0, 1, 2, 3


class TestBucketize:
    def test_saturday_afternoon(self):
        t = ts("2022-01-08", "13:30:00")  # a Saturday
        assert bucketize(t, 2, 4) == (1, 2)

    def test_degenerate_split(self):
        assert bucketize(ts("2023-06-14", "17:45:00"), 1, 1) == (0, 0)

    def test_monday_midnight(self):
        t = ts("2022-01-03")  # a Monday
        assert bucketize(t, 7, 24) == (0, 0)

    def test_weekday_index(self):
        for offset, expected in enumerate([0, 1, 2, 3, 4, 5, 6]):
            assert bucketize(ts("2022-01-03") + offset * 86400, 7, 1) == (expected, 0)

    def test_tz_offset_shifts_hour(self):
        t = ts("2008-10-23", "02:53:04")
        assert bucketize(t, 1, 24) == (0, 2)
        assert bucketize(t, 1, 24, tz_offset=8 * 3600) == (0, 10)

    def test_invalid_split(self):
        with pytest.raises(ConfigError):
            bucketize(0.0, 3, 1)


class TestTrainSession:
    def test_order1_counts_and_stays(self):
        m = MommModel(1)
        m.train_session(visits(("A", 0, 600), ("B", 600, 900)), trip_start=0.0)
        table = m.submodels[0].table
        rec = table.lookup(((A,), 0, 0))
        assert rec[B].count == 1 and rec[B].stay_sum == 600.0 and rec[B].stay_count == 1
        eot = table.lookup(((B,), 0, 0))
        assert eot[EOT].count == 1 and eot[EOT].stay_count == 0
        assert len(table) == 2

    def test_single_visit_only_eot(self):
        m = MommModel(1)
        m.train_session(visits(("A", 0, 100)), trip_start=0.0)
        table = m.submodels[0].table
        assert len(table) == 1
        assert table.lookup(((A,), 0, 0))[EOT].count == 1

    def test_order2_two_visits_only_eot(self):
        m = MommModel(2)
        m.train_session(visits(("A", 0, 600), ("B", 600, 900)), trip_start=0.0)
        table = m.submodels[0].table
        assert len(table) == 1
        assert table.lookup(((A, B), 0, 0))[EOT].count == 1

    def test_eot_disabled_records_no_eot(self):
        m = MommModel(1, eot=False)
        m.train_session(visits(("A", 0, 600), ("B", 600, 900)), trip_start=0.0)
        table = m.submodels[0].table
        assert table.lookup(((B,), 0, 0)) is None


class TestMommPredict:
    def make_table(self, counts):
        table = TransitionTable()
        for (ctx, target), n in counts.items():
            for _ in range(n):
                table.add((ctx, 0, 0), target, 100.0 if target != EOT else None)
        return table

    def test_count_arithmetic(self):
        table = self.make_table({((A,), B): 2, ((A,), C): 1})
        preds = momm_predict(table, (A,), (0, 0))
        assert {p.target: p.probability for p in preds} == {B: 2 / 3, C: 1 / 3}

    def test_unseen_history_is_none(self):
        table = self.make_table({((A,), B): 1})
        assert momm_predict(table, (C,), (0, 0)) is None

    def test_eot_only(self):
        table = self.make_table({((A,), EOT): 1})
        preds = momm_predict(table, (A,), (0, 0))
        assert [(p.target, p.probability) for p in preds] == [(EOT, 1.0)]
        assert preds[0].expected_stay is None

    def test_expected_stay_is_mean(self):
        m = MommModel(1)
        m.train_session(visits(("A", 0, 100), ("B", 100, 200)), 0.0)
        m.train_session(visits(("A", 0, 300), ("B", 300, 400)), 0.0)
        preds = m.predict([A], 0.0)
        by_target = {p.target: p for p in preds}
        assert by_target[B].expected_stay == pytest.approx((100 + 300) / 2)


class TestVommPredict:
    def test_higher_order_wins(self):
        m = VommModel(2)
        # order-2 contexts come from sessions of length >= 3
        m.train_session(visits(("A", 0, 100), ("B", 100, 200), ("C", 200, 300)), 0.0)
        m.train_session(visits(("D", 0, 100), ("B", 100, 200), ("D", 200, 250)), 0.0)
        preds = m.predict([A, B], 0.0)
        assert {p.target: p.probability for p in preds if p.target != EOT} == {C: 1.0}

    def test_fallback_to_order1(self):
        m = VommModel(2)
        m.train_session(visits(("A", 0, 100), ("B", 100, 200), ("C", 200, 300)), 0.0)
        preds = m.predict([D, A], 0.0)  # order-2 context (D, A) unseen; order-1 (A,) known
        assert {p.target for p in preds} == {B}

    def test_all_orders_miss(self):
        m = VommModel(3)
        m.train_session(visits(("A", 0, 100), ("B", 100, 200)), 0.0)
        assert m.predict([C], 0.0) is None

    def test_untrained_is_none(self):
        assert VommModel(2).predict([A], 0.0) is None


def fomm_from_tables(specs_tables, eot=True):
    subs = [SubModel(SubModelSpec(*spec), table) for spec, table in specs_tables]
    return FommModel(submodels=subs, eot=eot)


def table_of(order, rows):
    """rows: {(history, target): (count, stay_sum, stay_count)} at buckets (0, 0)."""
    table = TransitionTable()
    for (history, target), (count, stay_sum, stay_count) in rows.items():
        rec = table.entries.setdefault((tuple(history), 0, 0), {})
        from fogrep.markov import TargetRecord
        rec[target] = TargetRecord(count, stay_sum, stay_count)
    return table


class TestFommPredict:
    def test_single_submodel_weight_cancels(self):
        t1 = table_of(1, {((A,), B): (1, 100.0, 1), ((A,), C): (1, 100.0, 1)})
        m = fomm_from_tables([((1, 1, 1, 3.0), t1)])
        preds = m.predict([A], 0.0)
        assert {p.target: p.probability for p in preds} == {B: 0.5, C: 0.5}

    def test_two_submodel_fusion(self):
        # submodel 1, weight 1: {B: 0.5, C: 0.5}; submodel 2, weight 2: {B: 1.0}
        t1 = table_of(1, {((A,), B): (1, 100.0, 1), ((A,), C): (1, 100.0, 1)})
        t2 = table_of(1, {((A,), B): (3, 300.0, 3)})
        m = fomm_from_tables([((1, 1, 1, 1.0), t1), ((1, 1, 4, 2.0), t2)])
        preds = {p.target: p.probability for p in m.predict([A], 0.0)}
        assert preds[B] == pytest.approx(5 / 6, abs=1e-12)
        assert preds[C] == pytest.approx(1 / 6, abs=1e-12)

    def test_untrained_is_none(self):
        assert FommModel(2, (1, 2), (1, 4)).predict([A], 0.0) is None

    def test_stay_fusion_weighted_average(self):
        t1 = table_of(1, {((A,), B): (1, 100.0, 1)})   # stay 100
        t2 = table_of(1, {((A,), B): (1, 400.0, 1)})   # stay 400
        m = fomm_from_tables([((1, 1, 1, 1.0), t1), ((1, 1, 4, 3.0), t2)])
        (pred,) = m.predict([A], 0.0)
        assert pred.expected_stay == pytest.approx((1 * 100 + 3 * 400) / 4)

    def test_submodel_count_is_cartesian_product(self):
        m = FommModel(2, day_splits=(1, 2, 7), time_splits=(1, 4, 24))
        assert len(m.submodels) == 2 * 3 * 3
        m5 = FommModel(5, day_splits=(1, 2), time_splits=(1, 4))
        assert len(m5.submodels) == 5 * 2 * 2


def preds_of(dist):
    return [Prediction(t, p) for t, p in dist.items()]


class TestDynamicTopN:
    def test_prefix_two(self):
        # prefix sums: 0.7, then 0.95 >= 0.9
        sel = dynamic_topn(preds_of({B: 0.7, C: 0.25, D: 0.05}), threshold=0.9)
        assert sel == [B, C]

    def test_prefix_three(self):
        # prefix sums: 0.6, 0.85, then 1.0 >= 0.9
        sel = dynamic_topn(preds_of({B: 0.6, C: 0.25, D: 0.15}), threshold=0.9)
        assert sel == [B, C, D]

    def test_certain_single(self):
        assert dynamic_topn(preds_of({B: 1.0}), threshold=0.5) == [B]

    def test_threshold_one_returns_all(self):
        sel = dynamic_topn(preds_of({B: 0.5, C: 0.3, D: 0.2}), threshold=1.0)
        assert sel == [B, C, D]

    def test_fixed_n(self):
        assert dynamic_topn(preds_of({B: 0.5, C: 0.3, D: 0.2}), fixed_n=2) == [B, C]
        assert dynamic_topn(preds_of({B: 1.0}), fixed_n=5) == [B]

    def test_tie_breaks(self):
        sel = dynamic_topn(preds_of({D: 0.25, B: 0.25, EOT: 0.25, C: 0.25}), threshold=1.0)
        assert sel == [B, C, D, EOT]

    def test_eot_excluded_from_threshold(self):
        preds = preds_of({EOT: 0.6, B: 0.4})
        assert dynamic_topn(preds, threshold=0.9) == [EOT, B]
        # without counting the end-of-trip mass, B alone cannot reach 0.9
        assert dynamic_topn(preds, threshold=0.9, include_eot=False) == [EOT, B]
        assert dynamic_topn(preds_of({EOT: 0.6, B: 0.4}), threshold=0.4,
                            include_eot=False) == [EOT, B]
        assert dynamic_topn(preds_of({B: 0.6, EOT: 0.4}), threshold=0.5,
                            include_eot=False) == [B]

    def test_invalid_threshold(self):
        with pytest.raises(ConfigError):
            dynamic_topn(preds_of({B: 1.0}), threshold=1.5)
        with pytest.raises(ConfigError):
            dynamic_topn(preds_of({B: 1.0}), threshold=0.0)
        with pytest.raises(ConfigError):
            dynamic_topn(preds_of({B: 1.0}))


class TestMemoryAndPersistence:
    def test_empty_model_zero(self):
        assert model_memory_bytes(MommModel(1)) == 0

    def test_single_entry_single_target(self):
        m = MommModel(1, eot=False)
        m.train_session(visits(("A", 0, 600), ("B", 600, 900)), 0.0)
        # 2 bytes history + 4 bytes buckets + (4 + 4 + 8 + 4) per target
        assert model_memory_bytes(m) == 26

    def test_growth_is_monotonic(self):
        m = VommModel(2)
        rng = random.Random(1)
        prev = 0
        for _ in range(20):
            session = visits(*[(rng.randint(0, 3), i * 100, (i + 1) * 100) for i in range(4)])
            session = [v for i, v in enumerate(session)
                       if i == 0 or v.node != session[i - 1].node]
            fixed = []
            t = 0.0
            for v in session:
                fixed.append(NodeVisit(v.node, t, t + 100.0))
                t += 100.0
            m.train_session(fixed, 0.0)
            size = model_memory_bytes(m)
            assert size >= prev
            prev = size

    def test_save_load_round_trip(self, tmp_path):
        m = FommModel(2, day_splits=(1, 7), time_splits=(1, 24), tz_offset=8 * 3600.0)
        m.train_session(visits(("A", 0, 600), ("B", 600, 900), ("C", 900, 1000)),
                        ts("2008-10-23", "02:53:04"))
        m.train_session(visits(("A", 0, 500), ("C", 500, 900)), ts("2008-10-24", "08:00:00"))
        path = tmp_path / "model.bin"
        m.save(path)
        loaded = MarkovPredictor.load(path)
        assert loaded.save_bytes() == m.save_bytes()
        assert loaded.predict([A, B], ts("2008-10-23", "02:53:04")) == \
               m.predict([A, B], ts("2008-10-23", "02:53:04"))
        assert loaded.memory_bytes() == m.memory_bytes()

    def test_data_sections_equal_memory_metric(self, tmp_path):
        import json
        import struct
        m = VommModel(3)
        m.train_session(visits(("A", 0, 600), ("B", 600, 900), ("C", 900, 1000)), 0.0)
        blob = m.save_bytes()
        off = len(b"FGMK1\n")
        (hlen,) = struct.unpack_from("<I", blob, off)
        off += 4 + hlen
        data_bytes = 0
        for sm in m.submodels:
            (n_entries,) = struct.unpack_from("<I", blob, off)
            off += 4
            counts = struct.unpack_from(f"<{n_entries}H", blob, off)
            off += 2 * n_entries
            section = sum(2 * sm.spec.order + 4 + 20 * c for c in counts)
            data_bytes += section
            off += section
        assert off == len(blob)
        assert data_bytes == m.memory_bytes()


def random_momm(rng, k=1, nodes=4, sessions=6, eot=True):
    m = MommModel(k, eot=eot)
    for _ in range(sessions):
        length = rng.randint(2, 6)
        path = [rng.randrange(nodes)]
        while len(path) < length:
            nxt = rng.randrange(nodes)
            if nxt != path[-1]:
                path.append(nxt)
        t = 0.0
        vs = []
        for n in path:
            stay = rng.choice([60.0, 120.0, 600.0])
            vs.append(NodeVisit(n, t, t + stay))
            t += stay
        m.train_session(vs, 0.0)
    return m


class TestProperties:
    @given(st.lists(st.floats(min_value=0.01, max_value=100.0), min_size=1, max_size=8))
    def test_normalization(self, weights):
        tables = []
        rng = random.Random(99)
        for i, w in enumerate(weights):
            rows = {}
            for target in range(rng.randint(1, 4)):
                rows[((A,), target + 1)] = (rng.randint(1, 5), 100.0, rng.randint(1, 5))
            tables.append(((1, 1, 1, w), table_of(1, rows)))
        m = fomm_from_tables(tables)
        preds = m.predict([A], 0.0)
        assert abs(sum(p.probability for p in preds) - 1.0) <= 1e-9

    def test_fusion_dominance(self):
        # identical distributions in every submodel pass through unchanged
        rows = {((A,), B): (3, 300.0, 3), ((A,), C): (1, 50.0, 1)}
        m = fomm_from_tables([((1, 1, 1, 1.0), table_of(1, dict(rows))),
                              ((1, 1, 4, 7.0), table_of(1, dict(rows))),
                              ((1, 2, 1, 0.5), table_of(1, dict(rows)))])
        preds = {p.target: p.probability for p in m.predict([A], 0.0)}
        assert preds[B] == pytest.approx(0.75, abs=1e-12)
        assert preds[C] == pytest.approx(0.25, abs=1e-12)

    def test_weight_scaling_invariance(self):
        rng = random.Random(17)
        for _ in range(50):
            tables = []
            for i in range(rng.randint(1, 4)):
                rows = {}
                for target in rng.sample(range(1, 6), rng.randint(1, 4)):
                    rows[((A,), target)] = (rng.randint(1, 9), float(rng.randint(1, 900)), 1)
                tables.append([(1, 1, 1, rng.uniform(0.1, 10.0)), table_of(1, rows)])
            scale = rng.uniform(0.01, 100.0)
            m1 = fomm_from_tables([(tuple(spec), t) for spec, t in tables])
            scaled = [((spec[0], spec[1], spec[2], spec[3] * scale), t) for spec, t in tables]
            m2 = fomm_from_tables(scaled)
            p1 = {p.target: p.probability for p in m1.predict([A], 0.0)}
            p2 = {p.target: p.probability for p in m2.predict([A], 0.0)}
            assert set(p1) == set(p2)
            for t in p1:
                assert p1[t] == pytest.approx(p2[t], abs=1e-12)

    def test_vomm1_equals_momm1(self):
        rng = random.Random(4)
        for trial in range(25):
            seed = rng.randrange(10 ** 9)
            momm = random_momm(random.Random(seed), k=1)
            vomm = VommModel(1)
            for sm_m, sm_v in zip(momm.submodels, vomm.submodels):
                sm_v.table.entries = sm_m.table.entries
            for history in ([0], [1], [2], [3]):
                a = momm.predict(history, 0.0)
                b = vomm.predict(history, 0.0)
                assert a == b

    def test_periodic_trace_converges_to_perfect_top1(self):
        # one training period over a fixed daily loop, then every context's
        # top-1 equals the realized next node
        loop = [(0, 600.0), (1, 900.0), (2, 600.0), (3, 300.0)]
        m = VommModel(2, eot=True)
        day = []
        t = 0.0
        for node, stay in loop:
            day.append(NodeVisit(node, t, t + stay))
            t += stay
        m.train_session(day, 0.0)
        history = []
        for i, v in enumerate(day[:-1]):
            history.append(v.node)
            preds = m.predict(history, 0.0)
            top = max(preds, key=lambda p: (p.probability, p.target != EOT))
            assert top.target == day[i + 1].node
