import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivefp.classifiers import Hyperparameters, TrainedModel
from drivefp.dataset import TelemetryRecord, synthesize_dataset
from drivefp.evaluation import FeatureSpec
from drivefp.features import NormalizationParams, WindowConfig
from drivefp.training import train_bundle
from drivefp.verification import (
    ALERT,
    AUTHORIZED,
    WARMING_UP,
    Bundle,
    StreamError,
    VerificationError,
    Verifier,
    VerifierProfile,
    choose_threshold,
    decide,
    model_filename,
    read_stream,
    replay,
    similarity,
)

from conftest import separable_profiles


class SwitchModel(TrainedModel):
    """Predicts "B" when the scaled instantaneous value exceeds 0.5, else "A"."""

    variant = "stub"

    def _proba(self, X):
        b = (X[:, 0] > 0.5).astype(float)
        return np.column_stack([1 - b, b])


def stub_profile(w=60, threshold=0.97, n_models=1, **kw):
    models = {f"m{i}": SwitchModel(("A", "B"), 4, Hyperparameters()) for i in range(n_models)}
    params = NormalizationParams(("x",), [0.0], [1.0])
    return VerifierProfile(models, "A", ("x",), params, WindowConfig(w), threshold, **kw)


def run(profile, xs, trip_id="trip"):
    v = Verifier(profile, trip_id)
    return [v.step({"x": float(x)}) for x in xs]


def stream_with_mismatches(total, mismatch_seconds):
    """Values for seconds 1..total; a 1 at the listed seconds makes the stub predict "B"."""
    return [1.0 if t in mismatch_seconds else 0.0 for t in range(1, total + 1)]


class TestSimilarity:
    def test_basics(self):
        assert similarity(["A"] * 60, "A", 60) == 1.0
        assert similarity(["B"] * 60, "A", 60) == 0.0
        assert similarity(["A"] * 58 + ["B"] * 2, "A", 60) == 58 / 60
        assert similarity(["B"] + ["A"] * 3, "A", 60) == 0.75
        assert similarity(["B"] * 10 + ["A"] * 5, "A", 5) == 1.0

    def test_threshold_arithmetic(self):
        assert decide({"rf": 58 / 60}, 0.97) == ALERT
        assert decide({"rf": 59 / 60}, 0.97) == AUTHORIZED
        assert decide({"rf": 0.97}, 0.97) == AUTHORIZED
        assert decide({"a": 1.0, "b": 0.5}, 0.97) == ALERT

    def test_empty(self):
        with pytest.raises(ValueError):
            similarity([], "A", 60)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from("AB"), min_size=1, max_size=80), st.integers(1, 80), st.data())
    def test_monotone_in_matches(self, preds, w, data):
        i = data.draw(st.integers(0, len(preds) - 1))
        better = list(preds)
        better[i] = "A"
        assert similarity(better, "A", w) >= similarity(preds, "A", w)


class TestVerifyStep:
    def test_58_of_60_alerts_59_of_60_passes(self):
        v58 = run(stub_profile(), stream_with_mismatches(119, {118, 119}))
        assert v58[117].decision == AUTHORIZED  # 58/59 matches so far
        assert v58[-1].match_counts["m0"] == (58, 60)
        assert v58[-1].decision == ALERT and v58[-1].alert is not None
        v59 = run(stub_profile(), stream_with_mismatches(119, {119}))
        assert v59[-1].match_counts["m0"] == (59, 60)
        assert v59[-1].decision == AUTHORIZED

    def test_warm_up_boundary(self):
        out = run(stub_profile(), [0.0] * 61)
        assert [v.decision for v in out[:59]] == [WARMING_UP] * 59
        assert out[59].window_end_s == 60 and out[59].decision == AUTHORIZED
        assert out[59].similarities == {"m0": 1.0}

    def test_edge_triggered(self):
        # 70 authorized seconds, 30 impostor seconds, 60 owner seconds, 20 impostor seconds
        xs = [0.0] * 70 + [1.0] * 30 + [0.0] * 120 + [1.0] * 20
        out = run(stub_profile(), xs)
        alerts = [v for v in out if v.alert is not None]
        decisions = [v.decision for v in out]
        assert len(alerts) == 2
        edges = [i for i in range(1, len(out)) if decisions[i] == ALERT and decisions[i - 1] != ALERT]
        assert [a.window_end_s for a in alerts] == [out[i].window_end_s for i in edges]
        assert alerts[0].alert.trip_id == "trip" and alerts[0].alert.threshold == 0.97

    def test_threshold_one(self):
        out = run(stub_profile(threshold=1.0), stream_with_mismatches(80, {70}))
        assert out[68].decision == AUTHORIZED and out[69].decision == ALERT

    def test_all_models_required(self):
        class Never(SwitchModel):
            def _proba(self, X):
                return np.column_stack([np.zeros(len(X)), np.ones(len(X))])

        p = stub_profile(n_models=1)
        p.models["never"] = Never(("A", "B"), 4, Hyperparameters())
        out = run(p, [0.0] * 60)
        assert out[-1].similarities == {"m0": 1.0, "never": 0.0} and out[-1].decision == ALERT

    def test_similarity_window(self):
        out = run(stub_profile(w=5, similarity_window=3), stream_with_mismatches(9, {6}))
        assert [v.match_counts["m0"] for v in out[4:]] == [(1, 1), (1, 2), (2, 3), (2, 3), (3, 3)]

    def test_errors(self):
        v = Verifier(stub_profile())
        with pytest.raises(VerificationError, match="missing channel"):
            v.step({"y": 1.0})
        with pytest.raises(VerificationError, match="non-finite"):
            v.step({"x": float("inf")})

    def test_profile_validation(self):
        with pytest.raises(VerificationError):
            stub_profile(threshold=1.5)
        with pytest.raises(VerificationError, match="at least one model"):
            VerifierProfile({}, "A", ("x",), NormalizationParams(("x",), [0.0], [1.0]))
        with pytest.raises(VerificationError, match="not a class"):
            VerifierProfile({"m": SwitchModel(("A", "B"), 4, Hyperparameters())}, "Z", ("x",), NormalizationParams(("x",), [0.0], [1.0]))
        with pytest.raises(VerificationError, match="expects 4 features"):
            stub_profile(w=5).__class__(
                {"m": SwitchModel(("A", "B"), 4, Hyperparameters())},
                "A",
                ("x",),
                NormalizationParams(("x",), [0.0], [1.0]),
                WindowConfig(5, statistics=("mean",)),
            )


class TestReplay:
    def test_lines_and_format(self):
        recs = [TelemetryRecord(t, {"x": 1.0 if t >= 60 else 0.0}, "", "city_way", "t7") for t in range(65)]
        lines = list(replay(stub_profile(), recs))
        assert lines[0] == "VERDICT 1 warming_up -"
        assert lines[59] == "VERDICT 60 authorized m0:1.0000"
        assert lines[60] == "VERDICT 61 alert m0:0.5000"
        assert lines[61] == "ALERT 61 t7 0.5000 0.97"
        assert sum(ln.startswith("VERDICT") for ln in lines) == 65

    def test_realtime_equals_max_speed(self):
        xs = stream_with_mismatches(90, set(range(70, 80)))
        recs = [{"x": x} for x in xs]
        now = [0.0]
        sleeps = []

        def clock():
            return now[0]

        def sleep(d):
            sleeps.append(d)
            now[0] += d

        fast = list(replay(stub_profile(), recs))
        slow = list(replay(stub_profile(), recs, "realtime", sleep=sleep, clock=clock))
        assert fast == slow
        assert len(sleeps) == 89 and all(d == 1.0 for d in sleeps)

    def test_empty_stream(self):
        assert list(replay(stub_profile(), [])) == []

    def test_bad_pacing(self):
        with pytest.raises(ValueError):
            list(replay(stub_profile(), [], "slow"))


class TestChooseThreshold:
    def test_examples(self):
        assert choose_threshold([0.98, 0.99, 0.975]) == 0.97
        assert choose_threshold([1.0]) == 1.0
        assert choose_threshold({"A": {"rf": 0.993}, "B": {"rf": 0.971, "knn": 0.99}}) == 0.97
        assert choose_threshold([0.29]) == 0.29

    def test_empty(self):
        with pytest.raises(ValueError):
            choose_threshold([])


class TestReadStream:
    def test_parse(self):
        text = "x,time_s,Class\n1.5,0,A\n\n2.5,1,A\n"
        from drivefp.dataset import Schema

        recs = list(read_stream(io.StringIO(text), Schema(time_column="time_s")))
        assert [r.channels for r in recs] == [{"x": 1.5}, {"x": 2.5}]
        assert [r.timestamp_s for r in recs] == [0, 1]

    def test_label_optional_and_header_supplied(self):
        recs = list(read_stream(["3,4"], header=["a", "b"]))
        assert recs[0].channels == {"a": 3.0, "b": 4.0}
        recs = list(read_stream(["a;b", "3;4"]))
        assert recs[0].channels == {"a": 3.0, "b": 4.0} and recs[0].driver_label == ""

    def test_errors_name_line(self):
        with pytest.raises(StreamError, match="line 3"):
            list(read_stream(["x,Class", "1,A", "oops,A"]))
        with pytest.raises(StreamError, match="line 2: expected 2"):
            list(read_stream(["x,Class", "1"]))

    def test_empty(self):
        assert list(read_stream([])) == []


@pytest.fixture(scope="module")
def trained():
    d = synthesize_dataset(separable_profiles(4), 300, 21, road_types=("city_way",), trips_per_road=2, autocorrelation=0.5)
    train_trips = [t for t in d.trips if t.trip_id.endswith("000")]
    held_out = {t.driver_label: t for t in d.trips if t.trip_id.endswith("001")}
    from drivefp.dataset import Dataset

    bundle = train_bundle(
        Dataset(tuple(train_trips), d.channel_names),
        ["decision_tree", "random_forest", "knn", "mlp"],
        Hyperparameters(n_trees=10, epochs=40),
        WindowConfig(60),
        FeatureSpec(top_k=4),
    )
    return bundle, held_out


class TestSyntheticHarness:
    def test_owner_trip(self, trained):
        bundle, held = trained
        lines = list(replay(bundle.profile("A"), held["A"].records()))
        decisions = [ln.split()[2] for ln in lines]
        assert decisions.count(WARMING_UP) == 59 and decisions.count(AUTHORIZED) == 241
        assert not any(ln.startswith("ALERT") for ln in lines)
        assert lines[59].startswith("VERDICT 60 authorized") and lines[59].count(":1.0000") == 4

    def test_impostor_trip(self, trained):
        bundle, held = trained
        verifier = Verifier(bundle.profile("A"), held["B"].trip_id)
        verdicts = [verifier.step(r) for r in held["B"].records()]
        alerts = [v for v in verdicts if v.alert]
        assert len(alerts) == 1 and alerts[0].window_end_s >= 60
        assert max(verdicts[-1].similarities.values()) <= 0.5

    def test_bundle_round_trip(self, trained, tmp_path):
        bundle, held = trained
        bundle.save(tmp_path / "b")
        files = sorted(p.name for p in (tmp_path / "b").iterdir())
        assert files == sorted(["manifest.json", *(model_filename(a, "all", 60) for a in bundle.models)])
        back = Bundle.load(tmp_path / "b")
        assert back.channels == bundle.channels and back.window == bundle.window
        recs = list(held["C"].records())
        assert list(replay(back.profile("C"), recs)) == list(replay(bundle.profile("C"), recs))

    def test_bundle_errors(self, trained, tmp_path):
        bundle, _ = trained
        with pytest.raises(FileNotFoundError):
            Bundle.load(tmp_path / "nowhere")
        with pytest.raises(VerificationError, match="no model"):
            bundle.profile("A", algorithms=["svm"])
        with pytest.raises(VerificationError, match="not a class"):
            bundle.profile("Z")
