import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from drivefp.classifiers import Hyperparameters, serialize_model
from drivefp.dataset import ChannelProfile, Dataset, DriverProfile, TelemetryRecord, Trip, segment_trips, synthesize_dataset
from drivefp.evaluation import (
    FeatureSpec,
    InsufficientDataError,
    cross_validate,
    emit_report,
    feature_set_comparison,
    iter_folds,
    kfold_split,
    per_driver_accuracy,
    resolve_prior_channels,
    standard_feature_sets,
    window_sweep,
)
from drivefp.features import WindowConfig

from conftest import separable_profiles

HP = Hyperparameters(n_trees=10, epochs=30)
SPEC = FeatureSpec(top_k=3)


def check_fold_invariants(labels, fa):
    k = fa.k
    assert fa.folds.shape == (len(labels),)
    assert set(np.unique(fa.folds)) <= set(range(k))
    sizes = fa.sizes()
    assert sizes.sum() == len(labels) and sizes.max() - sizes.min() <= 1
    for c in np.unique(labels):
        per = np.bincount(fa.folds[labels == c], minlength=k)
        assert per.max() - per.min() <= 1


class TestKFold:
    def test_exact_divisibility(self):
        labels = np.repeat(np.arange(10), 10)
        fa = kfold_split(labels, 10, 0)
        for f in range(10):
            assert sorted(labels[fa.test_index(f)].tolist()) == list(range(10))

    def test_pigeonhole(self):
        labels = np.repeat(np.arange(5), 19)
        assert set(kfold_split(labels, 10).sizes().tolist()) <= {9, 10}

    def test_deterministic(self):
        labels = np.repeat(list("ABC"), [13, 20, 11])
        assert kfold_split(labels, 4, 3) == kfold_split(labels, 4, 3)
        assert kfold_split(labels, 4, 3) != kfold_split(labels, 4, 4)

    def test_too_few_rows_names_class(self):
        with pytest.raises(InsufficientDataError, match="'B'"):
            kfold_split(["A"] * 10 + ["B"] * 3, 5)

    def test_k_at_least_two(self):
        with pytest.raises(ValueError):
            kfold_split(["A"] * 5, 1)

    @pytest.mark.parametrize("contiguous", [False, True])
    def test_random_distributions_100_seeds(self, contiguous):
        for seed in range(100):
            r = np.random.default_rng(seed)
            k = int(r.integers(2, 11))
            counts = r.integers(k, 4 * k + 7, size=int(r.integers(1, 6)))
            labels = r.permutation(np.repeat(np.arange(len(counts)), counts))
            fa = kfold_split(labels, k, seed, contiguous=contiguous)
            check_fold_invariants(labels, fa)
            if contiguous:
                for c in np.unique(labels):
                    seq = fa.folds[labels == c]
                    # each fold appears as one run within the class
                    assert len(np.flatnonzero(np.diff(seq) != 0)) + 1 == len(np.unique(seq))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=20, max_size=200), st.integers(0, 1000))
    def test_property(self, raw, seed):
        labels = np.array(raw)
        smallest = np.bincount(labels)[np.bincount(labels) > 0].min()
        assume(smallest >= 2)
        k = min(smallest, 10)
        check_fold_invariants(labels, kfold_split(labels, k, seed))


def _test_rows(dataset, road, art, w):
    """(trip_id, second) pairs inside any test window of a fold."""
    trips = [t for t in dataset.trips if t.road_type == road]
    slots = [(t.trip_id, e) for t in trips if len(t) >= w for e in range(w - 1, len(t))]
    rows = set()
    for i in art.test_index:
        tid, end = slots[i]
        rows.update((tid, s) for s in range(end - w + 1, end + 1))
    return rows


def _mutate(dataset, rows, seed=0):
    r = np.random.default_rng(seed)
    trips = []
    for t in dataset.trips:
        v = t.values.copy()
        for s in range(len(t)):
            if (t.trip_id, s) in rows:
                v[s] = v[s] * r.uniform(0.1, 3.0, v.shape[1]) + r.normal(0, 50, v.shape[1])
        trips.append(Trip(t.trip_id, t.driver_label, t.road_type, t.channel_names, v, t.timestamps))
    return Dataset(tuple(trips), dataset.channel_names)


def _fingerprint(art):
    return (
        art.channels,
        art.params.to_dict(),
        None if art.ranking is None else art.ranking.entries,
        {a: serialize_model(m) for a, m in art.models.items()},
        art.train_index.tolist(),
    )


class TestLeakage:
    @pytest.mark.parametrize("paper_mode,w", [(False, 12), (True, 1)])
    def test_mutating_test_rows_leaves_training_unchanged(self, small_dataset, paper_mode, w):
        kwargs = dict(hp=Hyperparameters(n_trees=3, epochs=3), window=WindowConfig(w), feature_spec=SPEC,
                      k=3, seed=5, paper_mode=paper_mode, road_types=["city_way"])
        algs = ["decision_tree", "random_forest", "knn", "mlp"]
        base = list(iter_folds(small_dataset, algs, **kwargs))
        for art in base:
            rows = _test_rows(small_dataset, "city_way", art, w)
            mutated = _mutate(small_dataset, rows, art.fold)
            assert not np.array_equal(mutated.values(), small_dataset.values())
            again = [a for a in iter_folds(mutated, algs, **kwargs) if a.fold == art.fold][0]
            assert _fingerprint(again) == _fingerprint(art)

    def test_blocked_mode_purges_overlapping_windows(self, small_dataset):
        w = 12
        for art in iter_folds(small_dataset, ["knn"], window=WindowConfig(w), feature_spec=SPEC, k=3, road_types=["motor_way"]):
            trips = [t for t in small_dataset.trips if t.road_type == "motor_way"]
            slots = [(t.trip_id, e) for t in trips for e in range(w - 1, len(t))]
            test = {slots[i] for i in art.test_index}
            for i in art.train_index:
                tid, end = slots[i]
                assert all(abs(end - e2) >= w for t2, e2 in test if t2 == tid)


class TestCrossValidate:
    def test_separable_drivers(self, small_dataset):
        report = cross_validate(small_dataset, ["decision_tree", "random_forest", "knn", "mlp"], HP, WindowConfig(10), SPEC, k=3)
        assert len(report) == 2 * 4
        for cell in report:
            assert cell.accuracy >= 0.95, (cell.road_type, cell.algorithm, cell.accuracy)
            assert cell.accuracy == np.mean(cell.fold_accuracies)
            assert cell.pooled_accuracy == np.trace(cell.confusion) / cell.confusion.sum()
            assert cell.confusion.sum() == cell.n_vectors
            assert len(cell.fold_accuracies) == 3 and cell.seed == 42

    def test_shuffled_labels_chance(self):
        r = np.random.default_rng(11)
        n = 6000
        labels = r.choice(list("ABC"), size=n)
        values = r.normal(size=(n, 3))
        recs = [TelemetryRecord(i, dict(zip(("x", "y", "z"), values[i])), labels[i], "city_way", None) for i in range(n)]
        # sorting by label keeps records grouped per driver; order is irrelevant at W=1
        recs.sort(key=lambda rec: rec.driver_label)
        recs = [TelemetryRecord(i, rec.channels, rec.driver_label, rec.road_type, None) for i, rec in enumerate(recs)]
        d = Dataset(tuple(segment_trips(recs)), ("x", "y", "z"))
        report = cross_validate(d, ["decision_tree", "knn"], HP, WindowConfig(1), SPEC, k=5, paper_mode=True)
        for cell in report:
            assert abs(cell.accuracy - 1 / 3) <= 0.05

    def test_deterministic(self, small_dataset):
        a = cross_validate(small_dataset, "random_forest", HP, WindowConfig(10), SPEC, k=3)
        b = cross_validate(small_dataset, "random_forest", HP, WindowConfig(10), SPEC, k=3)
        assert [c.confusion.tolist() for c in a] == [c.confusion.tolist() for c in b]

    def test_insufficient(self, small_dataset):
        with pytest.raises(InsufficientDataError, match="at least 500 s"):
            cross_validate(small_dataset, "knn", HP, WindowConfig(500), SPEC, k=3)
        with pytest.raises(InsufficientDataError):
            cross_validate(small_dataset, "knn", HP, WindowConfig(10), SPEC, k=500)

    def test_paper_mode_recorded(self, small_dataset):
        r = cross_validate(small_dataset, "knn", HP, WindowConfig(5), SPEC, k=3, paper_mode=True)
        assert {c.mode for c in r} == {"paper"}

    def test_per_driver(self, small_dataset):
        r = cross_validate(small_dataset, "knn", HP, WindowConfig(5), SPEC, k=3)
        acc = per_driver_accuracy(r)
        assert set(acc) == {"A", "B", "C"} and all(0 <= v["knn"] <= 1 for v in acc.values())


class TestSweepAndCompare:
    def test_singleton_sweep_equals_cross_validate(self, small_dataset):
        sweep = window_sweep(small_dataset, ["knn"], [8], HP, WindowConfig(), SPEC, k=3)
        cv = cross_validate(small_dataset, ["knn"], HP, WindowConfig(8), SPEC, k=3)
        assert [c.confusion.tolist() for c in sweep] == [c.confusion.tolist() for c in cv]

    def test_sweep_rows(self, small_dataset):
        sweep = window_sweep(small_dataset, ["knn", "decision_tree"], [1, 5, 9], HP, WindowConfig(), SPEC, k=3)
        assert len(sweep) == 3 * 2 * 2
        assert len(emit_report(sweep, "csv").splitlines()) == 1 + 12
        with pytest.raises(ValueError):
            window_sweep(small_dataset, ["knn"], [], HP)

    def test_std_only_separation(self):
        profiles = [
            DriverProfile(k, {f"c{i}": ChannelProfile(50.0, s) for i in range(3)})
            for k, s in zip("ABC", (1.0, 1.6, 2.5))
        ]
        d = synthesize_dataset(profiles, 400, 3, trips_per_road=2)
        sets = [FeatureSpec("ours", top_k=3, statistics=False), FeatureSpec("ours+stats", top_k=3)]
        r = feature_set_comparison(d, ["knn", "decision_tree"], WindowConfig(30), HP, k=3, feature_sets=sets)
        for alg in ("knn", "decision_tree"):
            assert r.accuracy("unspecified", alg, feature_set="ours+stats") - r.accuracy("unspecified", alg, feature_set="ours") >= 0.2

    def test_prior_mapping(self):
        names = ("Vehicle speed", "Engine_speed", "x")
        assert resolve_prior_channels(names, {"speed": "vehicle_speed", "rpm": "Engine speed"}) == ("Vehicle speed", "Engine_speed")
        with pytest.raises(ValueError, match="gear -> Current_Gear"):
            resolve_prior_channels(names, {"gear": "Current_Gear"})
        assert [s.name for s in standard_feature_sets(names, 2, {"speed": "Vehicle speed"})] == ["ours", "ours+stats", "prior", "prior+stats"]


@pytest.fixture(scope="module")
def report():
    d = synthesize_dataset(separable_profiles(3), 60, 1, road_types=("city_way", "motor_way", "parking_lot"), trips_per_road=1)
    return cross_validate(d, ["mlp", "knn", "decision_tree", "random_forest"], Hyperparameters(n_trees=3, epochs=3), WindowConfig(5), SPEC, k=3)


class TestEmit:
    def test_table_shape(self, report):
        lines = emit_report(report, "table").strip().splitlines()
        assert lines[1].split()[:3] == ["Road", "type", "Decision"]
        assert [ln.split()[0] for ln in lines[2:]] == ["city_way", "motor_way", "parking_lot"]
        assert all(len(ln.split()) == 5 for ln in lines[2:])

    def test_long_format(self, report):
        lines = emit_report(report, "csv").splitlines()
        assert lines[0].startswith("road_type,algorithm,window,feature_set,mode,fold,accuracy")
        assert len(lines) == 1 + 3 * 4
        folds = emit_report(report, "folds").splitlines()
        assert folds[0] == "road_type,algorithm,window,feature_set,fold,accuracy,train_ms,predict_ms"
        assert len(folds) == 1 + 3 * 4 * 3

    def test_empty(self):
        from drivefp.evaluation import EvaluationReport

        for fmt in ("csv", "folds", "table", "feature-table", "window-table"):
            assert len(emit_report(EvaluationReport(), fmt).splitlines()) == 1

    def test_unknown_format(self, report):
        with pytest.raises(ValueError, match="unknown format"):
            emit_report(report, "xml")

    def test_other_tables(self, report):
        assert "Feature set" in emit_report(report, "feature-table")
        assert "road=city_way" in emit_report(report, "window-table")
