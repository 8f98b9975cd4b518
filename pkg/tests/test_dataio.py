import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sofd import dataio
from sofd.dataio import Condition, DataError, RawRecord, Schema


def write_csv(path, rows, schema=None, drop=()):
    schema = schema or Schema()
    header = [h for h in schema.headers if h not in drop]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([row[h] for h in header])
    return path


def make_row(speed=1, coefs=(0.97, 1.05, 0.99, 0.995), base=0.0):
    schema = Schema()
    row = {"speed": speed}
    row.update(dict(zip(dataio.COEFFICIENTS, coefs)))
    for j, (_, header) in enumerate(schema.sensor_columns):
        row[header] = base + j
    return row


def record(kKt=0.97, kH=1.05, kKc=0.99, kMt=0.995):
    return RawRecord(1, kKt, kH, kKc, kMt, tuple(float(i) for i in range(25)))


class TestLoadRaw:
    def test_rows_in_order(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", [make_row(base=b) for b in (0, 100, 200)])
        recs = dataio.load_raw(path)
        assert len(recs) == 3
        assert [r.sensors[0] for r in recs] == [0, 100, 200]
        assert len(recs[0].sensors) == 25

    def test_text_cell_names_row_and_column(self, tmp_path):
        rows = [make_row(), make_row()]
        rows[1]["Fuel flow"] = "abc"
        path = write_csv(tmp_path / "d.csv", rows)
        with pytest.raises(DataError, match=r"row 2.*'Fuel flow'"):
            dataio.load_raw(path)

    def test_missing_sensor_column(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", [make_row()], drop=("GT speed",))
        with pytest.raises(DataError, match="schema mismatch.*'GT speed'"):
            dataio.load_raw(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            dataio.load_raw(tmp_path / "nope.csv")

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        with pytest.raises(DataError, match="empty"):
            dataio.load_raw(tmp_path / "e.csv")

    def test_short_row(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", [make_row()])
        with path.open("a") as fh:
            fh.write("1,2,3\n")
        with pytest.raises(DataError, match="row 2: malformed"):
            dataio.load_raw(path)

    def test_renamed_headers_via_schema(self, tmp_path):
        schema = Schema.from_mapping({"speed": "lever", "kKt": "prp", "sensors": {"Fuel flow": "mf"}})
        path = write_csv(tmp_path / "d.csv", [{**make_row(), "lever": 1, "prp": 0.92, "mf": 5}], schema)
        rec = dataio.load_raw(path, schema)[0]
        assert rec.kKt == 0.92
        assert dataio.select_variables(rec, schema)[5] == 5


class TestLabelConditions:
    @pytest.mark.parametrize("coefs,expected", [
        ((0.92, 1.05, 0.99, 0.995), Condition.FAULT1),
        ((0.97, 1.05, 0.99, 0.995), Condition.NORMAL),
        ((0.97, 1.15, 0.99, 0.995), Condition.FAULT2),
        ((0.97, 1.05, 0.96, 0.995), Condition.FAULT3),
        ((0.97, 1.05, 0.99, 0.98), Condition.FAULT4),
        ((0.80, 1.05, 0.99, 0.995), None),
    ])
    def test_table(self, coefs, expected):
        [(_, label)] = dataio.label_conditions([record(*coefs)])
        assert label == expected

    def test_bracket_endpoints(self):
        assert dataio.condition_of(record(kKt=0.95)) == Condition.NORMAL  # [0.9, 0.95) open
        assert dataio.condition_of(record(kH=1.1)) == Condition.NORMAL  # (1.1, 1.2] open
        assert dataio.condition_of(record(kH=1.2)) == Condition.FAULT2
        assert dataio.condition_of(record(kKc=0.98)) == Condition.NORMAL
        assert dataio.condition_of(record(kMt=0.975)) == Condition.FAULT4
        assert dataio.condition_of(record(kMt=0.99)) == Condition.NORMAL  # shared closed endpoint

    @given(st.floats(0.85, 1.0), st.floats(1.0, 1.25), st.floats(0.94, 1.0), st.floats(0.97, 1.0))
    def test_at_most_one_condition_away_from_shared_endpoint(self, kKt, kH, kKc, kMt):
        rec = record(kKt, kH, kKc, kMt)
        hits = [c for c, box in dataio.CONDITION_TABLE.items()
                if all(rec.coefficient(n) in box[n] for n in dataio.COEFFICIENTS)]
        if kMt != 0.99:
            assert len(hits) <= 1
        assert dataio.condition_of(rec) == (hits[0] if hits else None)


class TestSelectVariables:
    def test_order_matches_variable_table(self):
        out = dataio.select_variables(record())
        assert out.tolist() == list(range(17))
        assert dataio.SELECTED_VARIABLES[0] == "GT shaft torque"
        assert dataio.SELECTED_VARIABLES[16] == "Average propeller torque"

    def test_projection_ignores_other_columns(self):
        a = record()
        b = RawRecord(1, 0.97, 1.05, 0.99, 0.995, a.sensors[:17] + tuple(-1.0 for _ in range(8)))
        np.testing.assert_array_equal(dataio.select_variables(a), dataio.select_variables(b))

    def test_unmapped_variable(self):
        schema = Schema()
        schema.sensor_columns = [(n, h) for n, h in schema.sensor_columns if n != "Fuel flow"]
        with pytest.raises(DataError, match="Fuel flow"):
            dataio.select_variables(record(), schema)


def pool(per=1800, classes=(1, 2, 3, 4), speed=2):
    n = per * len(classes)
    rng = np.random.default_rng(0)
    return dataio.LabeledPool(rng.normal(size=(n, 17)), np.repeat(classes, per), np.full(n, speed))


class TestBuildSplit:
    def test_counts(self):
        s = dataio.build_split(pool(), [1, 2, 3], 4, speed=2, per_class=1800, train_frac=0.7, seed=1)
        assert len(s.labeled) == 3780
        assert len(s.unlabeled) == 2160
        assert s.labeled.counts == {0: 1260, 1: 1260, 2: 1260}
        assert np.bincount(s.truth).tolist() == [540] * 4
        assert set(s.unlabeled.y) == {dataio.UNLABELED}
        assert s.class_codes == (1, 2, 3, 4)

    def test_disjoint_and_unknown_only_in_test(self):
        p = pool(per=100)
        s = dataio.build_split(p, [1, 2, 3], 4, speed=2, per_class=100, seed=3)
        assert not set(s.labeled.ids) & set(s.unlabeled.ids)
        assert set(p.condition[s.labeled.ids]) == {1, 2, 3}
        assert np.all(p.condition[s.unlabeled.ids[s.truth == 3]] == 4)

    def test_seed_determinism(self):
        p = pool(per=100)
        a = dataio.build_split(p, [1, 2, 3], 4, 2, 100, 0.7, seed=5)
        b = dataio.build_split(p, [1, 2, 3], 4, 2, 100, 0.7, seed=5)
        np.testing.assert_array_equal(a.labeled.ids, b.labeled.ids)
        np.testing.assert_array_equal(a.unlabeled.ids, b.unlabeled.ids)

    @pytest.mark.parametrize("frac", [0.0, 1.0])
    def test_train_frac_bounds(self, frac):
        with pytest.raises(DataError, match="train_frac"):
            dataio.build_split(pool(per=10), [1, 2, 3], 4, 2, 10, frac)

    def test_insufficient_samples(self):
        with pytest.raises(DataError, match="available"):
            dataio.build_split(pool(per=10), [1, 2, 3], 4, 2, per_class=11)

    def test_wrong_speed_has_no_samples(self):
        with pytest.raises(DataError):
            dataio.build_split(pool(per=10), [1, 2, 3], 4, speed=5, per_class=10)

    def test_unknown_in_known(self):
        with pytest.raises(DataError, match="also listed"):
            dataio.build_split(pool(per=10), [1, 2, 4], 4, 2, 10)


class TestNormalizer:
    def test_population_std(self):
        x = np.array([[1.0], [2.0], [3.0]])
        out = dataio.Normalizer.fit(x).transform(x)
        np.testing.assert_allclose(out[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)

    def test_constant_column(self):
        x = np.column_stack([np.full(4, 7.0), np.arange(4.0)])
        norm = dataio.Normalizer.fit(x)
        assert norm.std[0] == 1.0
        np.testing.assert_array_equal(norm.transform(x)[:, 0], 0.0)

    def test_statistics_frozen_on_labeled(self):
        rng = np.random.default_rng(0)
        dl = dataio.Dataset(rng.normal(size=(50, 3)), np.zeros(50, int), np.arange(50), "D_l", 1)
        du = dataio.Dataset(rng.normal(5.0, 1.0, size=(20, 3)), np.full(20, -1), np.arange(20), "D_u", 1)
        norm = dataio.fit_normalizer(dl)
        out = dataio.apply_normalizer(norm, du)
        assert np.all(np.abs(out.x.mean(axis=0)) > 1.0)
        assert np.all(np.abs(dataio.apply_normalizer(norm, dl).x.mean(axis=0)) < 1e-9)

    @settings(max_examples=30)
    @given(st.integers(2, 60), st.integers(0, 10_000))
    def test_refit_is_identity(self, n, seed):
        x = np.random.default_rng(seed).normal(3.0, 2.0, size=(n, 4))
        z = dataio.Normalizer.fit(x).transform(x)
        again = dataio.Normalizer.fit(z)
        np.testing.assert_allclose(again.mean, 0.0, atol=1e-9)
        np.testing.assert_allclose(again.std, 1.0, atol=1e-9)

    def test_empty(self):
        with pytest.raises(DataError):
            dataio.Normalizer.fit(np.empty((0, 3)))


class TestSynthetic:
    def test_counts(self):
        spec = dataio.SyntheticSpec(dataio.separated_means(4), 1.0, 100, seed=0)
        x, y = dataio.generate_synthetic(spec)
        assert x.shape == (400, 17)
        assert np.bincount(y).tolist() == [0, 100, 100, 100, 100]

    def test_tiny_scale_collapses_to_means(self):
        means = dataio.separated_means(3, 5, scale=1.0)
        x, y = dataio.generate_synthetic(dataio.SyntheticSpec(means, 1e-300, 10, seed=0))
        np.testing.assert_allclose(x, means[y - 1], rtol=0, atol=1e-140)

    def test_determinism(self):
        spec = dataio.SyntheticSpec(dataio.separated_means(4), 1.0, 50, seed=9)
        a, _ = dataio.generate_synthetic(spec)
        b, _ = dataio.generate_synthetic(spec)
        assert a.tobytes() == b.tobytes()

    def test_separation(self):
        means = dataio.separated_means(4, 17, separation=6.0, scale=4.0)
        d = np.linalg.norm(means[0] - means[1])
        assert d == pytest.approx(12.0)

    def test_validation(self):
        with pytest.raises(DataError):
            dataio.SyntheticSpec(np.zeros((2, 3)), 1.0, 10)
        with pytest.raises(DataError):
            dataio.SyntheticSpec(dataio.separated_means(2), 0.0, 10)


def test_prepared_round_trip(tmp_path):
    p = pool(per=5)
    dataio.write_prepared(tmp_path / "s.csv", p.x, p.condition, p.speed)
    q = dataio.read_prepared(tmp_path / "s.csv")
    np.testing.assert_array_equal(q.x, p.x)
    np.testing.assert_array_equal(q.condition, p.condition)


def test_pool_from_records_drops_unassigned():
    recs = [record(), record(kKt=0.8), record(kKt=0.92)]
    p = dataio.LabeledPool.from_records(recs)
    assert p.condition.tolist() == [0, 1]
