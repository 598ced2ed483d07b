"""Online driver verification over a per-second record stream."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from drivefp.classifiers import ALGORITHMS, TrainedModel, deserialize_model, serialize_model
from drivefp.dataset import Schema, TelemetryRecord, UNSPECIFIED_ROAD, detect_delimiter, normalize_road_type
from drivefp.features import NormalizationParams, WindowConfig, feature_rows

DEFAULT_THRESHOLD = 0.97
BUNDLE_FORMAT = "drivefp-bundle"
BUNDLE_VERSION = 1
MANIFEST = "manifest.json"

AUTHORIZED = "authorized"
ALERT = "alert"
WARMING_UP = "warming_up"


class VerificationError(ValueError):
    """Bad input record or inconsistent verifier configuration."""


class StreamError(ValueError):
    """A line of the input stream could not be parsed."""


@dataclass
class VerifierProfile:
    models: Mapping[str, TrainedModel]
    claimed_driver: str
    channels: tuple[str, ...]
    params: NormalizationParams
    window: WindowConfig = WindowConfig()
    threshold: float = DEFAULT_THRESHOLD
    similarity_window: int | None = None  # defaults to the feature window
    required_consensus: str = "all"

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if not self.models:
            raise VerificationError("verifier needs at least one model")
        if not 0.0 <= self.threshold <= 1.0:
            raise VerificationError("threshold must be within [0, 1]")
        if self.required_consensus != "all":
            raise VerificationError("only 'all' consensus is supported")
        if self.similarity_window is not None and self.similarity_window < 1:
            raise VerificationError("similarity_window must be >= 1")
        dim = len(self.channels) * (1 + len(self.window.statistics))
        for name, m in self.models.items():
            if self.claimed_driver not in m.class_set:
                raise VerificationError(
                    f"claimed driver {self.claimed_driver!r} is not a class of the {name} model"
                )
            if m.feature_dimension != dim:
                raise VerificationError(f"{name} model expects {m.feature_dimension} features, profile gives {dim}")

    @property
    def sim_window(self) -> int:
        return self.similarity_window or self.window.window_size


@dataclass
class AlertEvent:
    timestamp: int
    trip_id: str
    similarities: dict[str, float]
    threshold: float
    message: str

    @property
    def min_similarity(self) -> float:
        return min(self.similarities.values())


@dataclass
class VerificationVerdict:
    window_end_s: int
    decision: str
    similarities: dict[str, float] = field(default_factory=dict)
    match_counts: dict[str, tuple[int, int]] = field(default_factory=dict)
    predictions: dict[str, str] = field(default_factory=dict)
    alert: AlertEvent | None = None

    @property
    def min_similarity(self) -> float | None:
        return min(self.similarities.values()) if self.similarities else None


@dataclass
class VerifierState:
    """Rolling state of one trip stream; update it from a single writer only."""

    trip_id: str = ""
    seen: int = 0
    buffer: deque = field(default_factory=deque)
    matches: dict[str, deque] = field(default_factory=dict)
    last_decision: str | None = None

    @classmethod
    def for_profile(cls, profile: VerifierProfile, trip_id: str = "") -> "VerifierState":
        return cls(
            trip_id=trip_id,
            buffer=deque(maxlen=profile.window.window_size),
            matches={a: deque(maxlen=profile.sim_window) for a in profile.models},
        )


def similarity(predictions: Sequence[str], claimed_driver: str, window: int) -> float:
    """Share of the last ``min(window, len(predictions))`` predictions equal to the claimed driver."""
    if not predictions:
        raise ValueError("need at least one prediction")
    recent = list(predictions)[-window:]
    return sum(p == claimed_driver for p in recent) / len(recent)


def decide(similarities: Mapping[str, float], threshold: float) -> str:
    # inclusive: every algorithm must reach the threshold
    return AUTHORIZED if min(similarities.values()) >= threshold else ALERT


def _channel_values(profile: VerifierProfile, record) -> np.ndarray:
    channels = record.channels if isinstance(record, TelemetryRecord) else record
    try:
        row = np.array([float(channels[c]) for c in profile.channels])
    except KeyError as exc:
        raise VerificationError(f"record is missing channel {exc.args[0]!r}") from None
    if not np.all(np.isfinite(row)):
        raise VerificationError("record contains a non-finite channel value")
    return row


def verify_step(profile: VerifierProfile, record, state: VerifierState) -> VerificationVerdict:
    """Feed one second of telemetry and return the verdict for that second.

    Verdict times count observed seconds from 1. Until a full window has been
    seen the verdict is ``warming_up``; afterwards each model classifies the
    current window vector and the decision compares the smallest running
    similarity with the threshold. An :class:`AlertEvent` is attached only
    when the decision turns into ``alert``.
    """
    row = _channel_values(profile, record)
    state.buffer.append(row)
    state.seen += 1
    t = state.seen
    if t < profile.window.window_size:
        state.last_decision = WARMING_UP
        return VerificationVerdict(t, WARMING_UP)

    x = feature_rows(np.array(state.buffer), profile.params, profile.channels, profile.window)[0]
    sims, counts, preds = {}, {}, {}
    for name, model in profile.models.items():
        label = str(model.predict_labels(x)[0])
        hits = state.matches[name]
        hits.append(label == profile.claimed_driver)
        preds[name] = label
        counts[name] = (sum(hits), len(hits))
        sims[name] = counts[name][0] / counts[name][1]
    decision = decide(sims, profile.threshold)
    alert = None
    if decision == ALERT and state.last_decision != ALERT:
        alert = AlertEvent(
            timestamp=t,
            trip_id=state.trip_id,
            similarities=dict(sims),
            threshold=profile.threshold,
            message=(
                f"driver does not match {profile.claimed_driver!r}: "
                f"similarity {min(sims.values()):.4f} below {profile.threshold:g}"
            ),
        )
    state.last_decision = decision
    return VerificationVerdict(t, decision, sims, counts, preds, alert)


class Verifier:
    """Convenience wrapper owning the state of one stream."""

    def __init__(self, profile: VerifierProfile, trip_id: str = ""):
        self.profile = profile
        self.state = VerifierState.for_profile(profile, trip_id)

    def step(self, record) -> VerificationVerdict:
        return verify_step(self.profile, record, self.state)


def format_verdict(v: VerificationVerdict) -> str:
    sims = ",".join(f"{a}:{s:.4f}" for a, s in v.similarities.items()) or "-"
    return f"VERDICT {v.window_end_s} {v.decision} {sims}"


def format_alert(a: AlertEvent) -> str:
    return f"ALERT {a.timestamp} {a.trip_id or '-'} {a.min_similarity:.4f} {a.threshold:g}"


def replay(
    profile: VerifierProfile,
    records: Iterable,
    pacing: str = "max-speed",
    trip_id: str = "",
    sleep: Callable[[float], None] = time.sleep,
    clock: Callable[[], float] = time.monotonic,
) -> Iterator[str]:
    """Run a record stream through a fresh verifier, yielding output lines.

    One ``VERDICT`` line per record, followed by an ``ALERT`` line whenever
    an alert fires. ``pacing="realtime"`` releases one record per second;
    the lines themselves do not depend on pacing.
    """
    if pacing not in ("max-speed", "realtime"):
        raise ValueError("pacing must be 'max-speed' or 'realtime'")
    state = VerifierState.for_profile(profile, trip_id)
    start = None
    for i, record in enumerate(records):
        if pacing == "realtime":
            if start is None:
                start = clock()
            delay = start + i - clock()
            if delay > 0:
                sleep(delay)
        if not state.trip_id and isinstance(record, TelemetryRecord):
            state.trip_id = record.trip_id
        v = verify_step(profile, record, state)
        yield format_verdict(v)
        if v.alert is not None:
            yield format_alert(v.alert)


def choose_threshold(scores) -> float:
    """Smallest authorized similarity, rounded down to two decimals.

    ``scores`` may be a flat iterable of similarities or nested mappings such
    as ``{driver: {algorithm: similarity}}``.
    """
    values = list(_flatten(scores))
    if not values:
        raise ValueError("no similarity scores given")
    lowest = min(values)
    # round first so 0.29 does not floor to 0.28 through 28.999999999999996
    return math.floor(round(lowest * 100, 9)) / 100


def _flatten(obj):
    if isinstance(obj, Mapping):
        for v in obj.values():
            yield from _flatten(v)
    elif isinstance(obj, (list, tuple, set, np.ndarray)):
        for v in obj:
            yield from _flatten(v)
    else:
        yield float(obj)


# --- record streams -------------------------------------------------------


def read_stream(lines: Iterable[str], schema: Schema | None = None, header: Sequence[str] | None = None) -> Iterator[TelemetryRecord]:
    """Parse delimited lines into records; the first line is the header unless given.

    The label column is optional in a stream. Errors name the offending line.
    """
    schema = schema or Schema()
    it = iter(lines)
    line_no = 0
    delimiter = schema.delimiter
    if header is None:
        for raw in it:
            line_no += 1
            if raw.strip():
                delimiter = delimiter or detect_delimiter(raw)
                header = [h.strip() for h in next(csv.reader([raw], delimiter=delimiter))]
                break
        else:
            return
    header = list(header)
    delimiter = delimiter or ","
    special = {schema.label_column, schema.road_column, schema.trip_column, schema.time_column, *schema.ignore_columns}
    channel_idx = [(i, h) for i, h in enumerate(header) if h not in special]
    pos = {h: i for i, h in enumerate(header)}
    for raw in it:
        line_no += 1
        if not raw.strip():
            continue
        row = next(csv.reader([raw], delimiter=delimiter))
        if len(row) != len(header):
            raise StreamError(f"line {line_no}: expected {len(header)} columns, found {len(row)}")
        channels = {}
        for i, name in channel_idx:
            try:
                channels[name] = float(row[i])
            except ValueError:
                raise StreamError(f"line {line_no}: non-numeric value {row[i]!r} in channel {name!r}") from None
        ts = line_no
        if schema.time_column in pos:
            try:
                ts = int(round(float(row[pos[schema.time_column]])))
            except ValueError:
                raise StreamError(f"line {line_no}: bad timestamp") from None
        yield TelemetryRecord(
            timestamp_s=ts,
            channels=channels,
            driver_label=row[pos[schema.label_column]].strip() if schema.label_column in pos else "",
            road_type=normalize_road_type(row[pos[schema.road_column]]) if schema.road_column in pos else UNSPECIFIED_ROAD,
            trip_id=row[pos[schema.trip_column]].strip() if schema.trip_column in pos else "",
        )


# --- profile bundles ------------------------------------------------------


def model_filename(algorithm: str, road_type: str, window: int) -> str:
    return f"{algorithm}-{road_type}-{window}.model.json"


@dataclass
class Bundle:
    """Trained models plus the training-time feature artifacts they depend on."""

    models: dict[str, TrainedModel]
    channels: tuple[str, ...]
    params: NormalizationParams
    window: WindowConfig
    threshold: float = DEFAULT_THRESHOLD
    road_type: str = "all"
    seed: int = 42
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        # canonical order so verdict lines do not depend on how models were loaded
        rank = {a: i for i, a in enumerate(ALGORITHMS)}
        self.models = dict(sorted(self.models.items(), key=lambda kv: (rank.get(kv[0], len(rank)), kv[0])))

    @property
    def drivers(self) -> list[str]:
        first = next(iter(self.models.values()))
        return list(first.class_set)

    def profile(
        self,
        claimed_driver: str,
        threshold: float | None = None,
        algorithms: Sequence[str] | None = None,
        similarity_window: int | None = None,
    ) -> VerifierProfile:
        names = list(algorithms) if algorithms else list(self.models)
        missing = [a for a in names if a not in self.models]
        if missing:
            raise VerificationError(f"bundle has no model for {missing}")
        return VerifierProfile(
            models={a: self.models[a] for a in names},
            claimed_driver=claimed_driver,
            channels=self.channels,
            params=self.params,
            window=self.window,
            threshold=self.threshold if threshold is None else threshold,
            similarity_window=similarity_window,
        )

    def manifest(self) -> dict:
        return {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "channels": list(self.channels),
            "normalization": self.params.to_dict(),
            "window": self.window.window_size,
            "statistics": list(self.window.statistics),
            "normalize_first": self.window.normalize_first,
            "threshold": self.threshold,
            "road_type": self.road_type,
            "seed": self.seed,
            "drivers": self.drivers,
            "models": {a: model_filename(a, self.road_type, self.window.window_size) for a in self.models},
            **({"extra": self.extra} if self.extra else {}),
        }

    def save(self, directory: str | os.PathLike) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        manifest = self.manifest()
        for alg, fname in manifest["models"].items():
            (out / fname).write_text(serialize_model(self.models[alg]))
        (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return out

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "Bundle":
        root = Path(directory)
        path = root / MANIFEST
        if not path.is_file():
            raise FileNotFoundError(f"no bundle manifest at {path}")
        doc = json.loads(path.read_text())
        if doc.get("format") != BUNDLE_FORMAT or doc.get("version") != BUNDLE_VERSION:
            raise VerificationError("unsupported bundle manifest")
        window = WindowConfig(
            int(doc["window"]),
            statistics=tuple(doc["statistics"]),
            normalize_first=bool(doc.get("normalize_first", True)),
        )
        models = {a: deserialize_model((root / f).read_text()) for a, f in doc["models"].items()}
        params = NormalizationParams.from_dict(doc["normalization"])
        return cls(
            models=models,
            channels=tuple(doc["channels"]),
            params=params.subset(doc["channels"]),
            window=window,
            threshold=float(doc["threshold"]),
            road_type=doc.get("road_type", "all"),
            seed=int(doc.get("seed", 42)),
            extra=doc.get("extra", {}),
        )
