"""Parsing, validation, trip segmentation and synthesis of per-second driving logs."""

from __future__ import annotations

import csv
import io
import json
import os
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

ROAD_TYPES = ("city_way", "motor_way", "parking_lot")
UNSPECIFIED_ROAD = "unspecified"

_ROAD_ALIASES = {
    "city": "city_way",
    "cityway": "city_way",
    "cityroad": "city_way",
    "motor": "motor_way",
    "motorway": "motor_way",
    "vehicle": "motor_way",
    "vehicleway": "motor_way",
    "vehicleroad": "motor_way",
    "highway": "motor_way",
    "parking": "parking_lot",
    "parkinglot": "parking_lot",
    "parkingspace": "parking_lot",
}

# Physical ranges of the fifteen selected OBD-II channels.
CHANNEL_RANGES: dict[str, tuple[float, float]] = {
    "Long term fuel trim bank1": (-100.0, 100.0),
    "Intake air pressure": (0.0, 255.0),
    "Accelerator Pedal value": (0.0, 100.0),
    "Fuel consumption": (0.0, 10000.0),
    "Friction torque": (0.0, 100.0),
    "Maximum indicated engine torque": (0.0, 100.0),
    "Engine torque": (0.0, 100.0),
    "Calculated load value": (0.0, 100.0),
    "Activation of Air compressor": (0.0, 1.0),
    "Engine coolant temperature": (-40.0, 215.0),
    "Transmission oil temperature": (-40.0, 215.0),
    "Wheel velocity, front, left-hand": (0.0, 511.75),
    "Wheel velocity, front, right-hand": (0.0, 511.75),
    "Wheel velocity, rear, left-hand": (0.0, 511.75),
    "Torque converter speed": (0.0, 16383.75),
}


def channel_key(name: str) -> str:
    """Loose identity for channel names: case, spacing and punctuation are ignored.

    ``"Long_Term_Fuel_Trim_Bank1"`` and ``"Long term fuel trim bank1"`` share a key.
    """
    return re.sub(r"[^0-9a-z]", "", name.lower())


_RANGE_BY_KEY = {channel_key(k): v for k, v in CHANNEL_RANGES.items()}


def channel_range(name: str) -> tuple[float, float] | None:
    return _RANGE_BY_KEY.get(channel_key(name))


def resolve_channel(name: str, channel_names: Sequence[str]) -> str | None:
    """Find ``name`` among ``channel_names``, exactly first, then by loose key."""
    if name in channel_names:
        return name
    key = channel_key(name)
    for candidate in channel_names:
        if channel_key(candidate) == key:
            return candidate
    return None


def normalize_road_type(value: str | None) -> str:
    if value is None:
        return UNSPECIFIED_ROAD
    text = str(value).strip()
    if not text:
        return UNSPECIFIED_ROAD
    key = channel_key(text)
    if key in _ROAD_ALIASES:
        return _ROAD_ALIASES[key]
    return re.sub(r"[^0-9a-z]+", "_", text.lower()).strip("_")


class LogFormatError(ValueError):
    """A driving log could not be parsed."""


@dataclass(frozen=True)
class TelemetryRecord:
    timestamp_s: int
    channels: Mapping[str, float]
    driver_label: str
    road_type: str = UNSPECIFIED_ROAD
    trip_id: str = ""


@dataclass(frozen=True, eq=False)
class Trip:
    """A contiguous run of one driver's seconds on one road type.

    ``values`` has one row per second and one column per entry of
    ``channel_names``; ``timestamps`` increase by exactly one second.
    """

    trip_id: str
    driver_label: str
    road_type: str
    channel_names: tuple[str, ...]
    values: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, ndmin=2)
        if values.size == 0:
            values = values.reshape(0, len(self.channel_names))
        timestamps = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        if values.shape != (len(timestamps), len(self.channel_names)):
            raise ValueError(
                f"trip {self.trip_id}: values shape {values.shape} does not match "
                f"{len(timestamps)} timestamps x {len(self.channel_names)} channels"
            )
        if len(timestamps) > 1 and np.any(np.diff(timestamps) != 1):
            raise ValueError(f"trip {self.trip_id}: timestamps must increase by 1 second")
        values.setflags(write=False)
        timestamps.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    def __len__(self) -> int:
        return len(self.timestamps)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trip):
            return NotImplemented
        return (
            self.trip_id == other.trip_id
            and self.driver_label == other.driver_label
            and self.road_type == other.road_type
            and self.channel_names == other.channel_names
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore[assignment]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.channel_names.index(name)]

    def records(self) -> Iterator[TelemetryRecord]:
        for t, row in zip(self.timestamps, self.values):
            yield TelemetryRecord(
                timestamp_s=int(t),
                channels=dict(zip(self.channel_names, row.tolist())),
                driver_label=self.driver_label,
                road_type=self.road_type,
                trip_id=self.trip_id,
            )


@dataclass(frozen=True, eq=False)
class Dataset:
    trips: tuple[Trip, ...]
    channel_names: tuple[str, ...]
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "trips", tuple(self.trips))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        seen = set()
        for trip in self.trips:
            if trip.trip_id in seen:
                raise ValueError(f"duplicate trip_id {trip.trip_id!r}")
            seen.add(trip.trip_id)
            if trip.channel_names != self.channel_names:
                raise ValueError(f"trip {trip.trip_id} has a different channel set")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.channel_names == other.channel_names and self.trips == other.trips

    __hash__ = None  # type: ignore[assignment]

    def __len__(self) -> int:
        return sum(len(t) for t in self.trips)

    @property
    def n_records(self) -> int:
        return len(self)

    @property
    def drivers(self) -> list[str]:
        return sorted({t.driver_label for t in self.trips})

    @property
    def road_types(self) -> list[str]:
        return sorted({t.road_type for t in self.trips})

    def subset(self, road_type: str | None = None, drivers: Iterable[str] | None = None) -> "Dataset":
        keep = set(drivers) if drivers is not None else None
        trips = [
            t
            for t in self.trips
            if (road_type is None or t.road_type == road_type)
            and (keep is None or t.driver_label in keep)
        ]
        return Dataset(trips, self.channel_names, self.provenance)

    def values(self) -> np.ndarray:
        """All records stacked trip after trip, shape (n_records, n_channels)."""
        if not self.trips:
            return np.empty((0, len(self.channel_names)))
        return np.concatenate([t.values for t in self.trips])

    def labels(self) -> np.ndarray:
        return np.concatenate(
            [np.full(len(t), t.driver_label, dtype=object) for t in self.trips]
        ) if self.trips else np.empty(0, dtype=object)

    def records(self) -> Iterator[TelemetryRecord]:
        for trip in self.trips:
            yield from trip.records()

    def trip(self, trip_id: str) -> Trip:
        for t in self.trips:
            if t.trip_id == trip_id:
                return t
        raise KeyError(trip_id)


@dataclass(frozen=True)
class Schema:
    """Column mapping for a delimited driving log.

    Every column that is not the label, road, trip, time or an ignored column
    is read as a numeric channel.
    """

    label_column: str = "Class"
    road_column: str | None = None
    trip_column: str | None = None
    time_column: str | None = None
    delimiter: str | None = None
    ignore_columns: tuple[str, ...] = ()
    gap_threshold: int = 10
    check_ranges: bool = True

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Schema":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        if "label_column" in doc and not doc["label_column"]:
            raise ValueError("schema label_column must be non-empty")
        kwargs = dict(doc)
        if "ignore_columns" in kwargs:
            kwargs["ignore_columns"] = tuple(kwargs["ignore_columns"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Schema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc["ignore_columns"] = list(self.ignore_columns)
        return doc


CANONICAL_SCHEMA = Schema(
    label_column="Class",
    road_column="road_type",
    trip_column="trip_id",
    time_column="time_s",
    delimiter=",",
)


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8-sig")
    if isinstance(source, Path):
        return source.read_text(encoding="utf-8-sig")
    if isinstance(source, str):
        return source
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig")
    return data.lstrip("﻿")


def detect_delimiter(header_line: str) -> str:
    counts = {d: header_line.count(d) for d in (",", ";", "\t")}
    best = max(counts, key=lambda d: counts[d])
    return best if counts[best] else ","


def _boundaries(drivers, roads, trip_ids, timestamps, gap_threshold: int) -> list[int]:
    """Row indices where a new trip starts (always includes 0 for non-empty input)."""
    starts = []
    for i in range(len(drivers)):
        if i == 0:
            starts.append(0)
            continue
        gap = timestamps[i] - timestamps[i - 1]
        if (
            drivers[i] != drivers[i - 1]
            or roads[i] != roads[i - 1]
            or trip_ids[i] != trip_ids[i - 1]
            or gap <= 0
            or gap > gap_threshold
        ):
            starts.append(i)
    return starts


def _build_trips(channel_names, values, drivers, roads, trip_ids, timestamps, gap_threshold) -> list[Trip]:
    starts = _boundaries(drivers, roads, trip_ids, timestamps, gap_threshold)
    ends = starts[1:] + [len(drivers)]
    trips = []
    taken: set[str] = set()
    repeats: Counter = Counter()
    generated: Counter = Counter()
    for lo, hi in zip(starts, ends):
        driver, road, source_id = drivers[lo], roads[lo], trip_ids[lo]
        while True:
            if source_id:
                n = repeats[source_id]
                repeats[source_id] += 1
                trip_id = source_id if n == 0 else f"{source_id}#{n}"
            else:
                trip_id = f"{driver}-{road}-{generated[(driver, road)]:03d}"
                generated[(driver, road)] += 1
            if trip_id not in taken:
                break
        taken.add(trip_id)
        trips.append(
            Trip(
                trip_id=trip_id,
                driver_label=driver,
                road_type=road,
                channel_names=tuple(channel_names),
                values=values[lo:hi],
                timestamps=np.arange(hi - lo),
            )
        )
    return trips


def segment_trips(records: Sequence[TelemetryRecord], gap_threshold: int = 10) -> list[Trip]:
    """Split a flat, time-ordered record sequence into trips.

    A trip ends when the driver, road type or trip id changes, or when the
    clock jumps backwards or forward by more than ``gap_threshold`` seconds.
    Output timestamps are re-based to 0, 1, 2, ...
    """
    if gap_threshold < 1:
        raise ValueError("gap_threshold must be >= 1")
    records = list(records)
    if not records:
        return []
    channel_names = tuple(records[0].channels)
    for r in records:
        if tuple(r.channels) != channel_names:
            raise ValueError("records do not share one channel set")
    values = np.array([[r.channels[c] for c in channel_names] for r in records], dtype=np.float64)
    return _build_trips(
        channel_names,
        values.reshape(len(records), len(channel_names)),
        [r.driver_label for r in records],
        [r.road_type for r in records],
        [r.trip_id or "" for r in records],
        [r.timestamp_s for r in records],
        gap_threshold,
    )


def parse_log(source, schema: Schema | None = None) -> Dataset:
    """Parse a delimited per-second log into a :class:`Dataset`.

    ``source`` may be text, bytes, a :class:`~pathlib.Path` or an open file.
    Raises :class:`LogFormatError` on an empty log, a missing label column,
    ragged rows, or a channel cell that is not a finite number.
    """
    schema = schema or Schema()
    provenance = str(source) if isinstance(source, Path) else getattr(source, "name", "<stream>")
    text = _read_text(source)
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise LogFormatError("empty input")
    delimiter = schema.delimiter or detect_delimiter(lines[0])
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    header = [h.strip() for h in next(reader)]

    if schema.label_column not in header:
        raise LogFormatError(f"missing label column {schema.label_column!r}")
    for opt in (schema.road_column, schema.trip_column, schema.time_column):
        if opt is not None and opt not in header:
            raise LogFormatError(f"missing column {opt!r}")
    special = {schema.label_column, schema.road_column, schema.trip_column, schema.time_column}
    special |= set(schema.ignore_columns)
    channel_idx = [i for i, h in enumerate(header) if h not in special]
    channel_names = [header[i] for i in channel_idx]
    label_i = header.index(schema.label_column)
    road_i = header.index(schema.road_column) if schema.road_column else None
    trip_i = header.index(schema.trip_column) if schema.trip_column else None
    time_i = header.index(schema.time_column) if schema.time_column else None

    rows: list[list[float]] = []
    drivers: list[str] = []
    roads: list[str] = []
    trip_ids: list[str] = []
    timestamps: list[int] = []
    for row in reader:
        line_no = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise LogFormatError(
                f"line {line_no}: expected {len(header)} columns, found {len(row)}"
            )
        parsed = []
        for i, name in zip(channel_idx, channel_names):
            cell = row[i].strip()
            try:
                value = float(cell)
            except ValueError:
                raise LogFormatError(
                    f"line {line_no}: non-numeric value {cell!r} in channel {name!r}"
                ) from None
            if not np.isfinite(value):
                raise LogFormatError(f"line {line_no}: non-finite value in channel {name!r}")
            parsed.append(value)
        rows.append(parsed)
        drivers.append(row[label_i].strip())
        roads.append(normalize_road_type(row[road_i]) if road_i is not None else UNSPECIFIED_ROAD)
        trip_ids.append(row[trip_i].strip() if trip_i is not None else "")
        if time_i is not None:
            cell = row[time_i].strip()
            try:
                timestamps.append(int(round(float(cell))))
            except ValueError:
                raise LogFormatError(f"line {line_no}: bad timestamp {cell!r}") from None
        else:
            timestamps.append(len(timestamps))

    if not rows:
        raise LogFormatError("empty input")
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(channel_names))
    if schema.check_ranges:
        check_channel_ranges(channel_names, values)
    trips = _build_trips(channel_names, values, drivers, roads, trip_ids, timestamps, schema.gap_threshold)
    return Dataset(tuple(trips), tuple(channel_names), provenance)


def check_channel_ranges(channel_names: Sequence[str], values: np.ndarray) -> None:
    for j, name in enumerate(channel_names):
        rng = channel_range(name)
        if rng is None or values.shape[0] == 0:
            continue
        lo, hi = rng
        col = values[:, j]
        bad = np.flatnonzero((col < lo) | (col > hi))
        if bad.size:
            raise LogFormatError(
                f"channel {name!r} value {col[bad[0]]!r} outside physical range [{lo}, {hi}]"
            )


def write_log(dataset: Dataset, out: IO[str] | None = None) -> str:
    """Serialize in canonical form (comma separated, matching ``CANONICAL_SCHEMA``).

    Floats are written with ``repr`` so parsing the output gives back an
    equal dataset.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*dataset.channel_names, "time_s", "Class", "road_type", "trip_id"])
    for trip in dataset.trips:
        for t, row in zip(trip.timestamps, trip.values):
            writer.writerow([*map(repr, row.tolist()), int(t), trip.driver_label, trip.road_type, trip.trip_id])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


@dataclass
class DatasetSummary:
    n_records: int
    n_trips: int
    channel_names: list[str]
    records_per_driver: dict[str, int]
    records_per_road: dict[str, int]
    trips_per_driver: dict[str, int]
    duration_s: int

    @property
    def n_drivers(self) -> int:
        return len(self.records_per_driver)

    @property
    def n_road_types(self) -> int:
        return len(self.records_per_road)

    def to_text(self) -> str:
        lines = [
            f"records   {self.n_records}",
            f"trips     {self.n_trips}",
            f"drivers   {self.n_drivers}",
            f"roads     {self.n_road_types}",
            f"channels  {len(self.channel_names)}",
            f"duration  {self.duration_s} s",
            "",
            "driver  records  trips",
        ]
        for d, n in self.records_per_driver.items():
            lines.append(f"{d:<7} {n:>8} {self.trips_per_driver[d]:>6}")
        lines += ["", "road_type     records"]
        for r, n in self.records_per_road.items():
            lines.append(f"{r:<13} {n:>8}")
        return "\n".join(lines) + "\n"


def dataset_summary(d: Dataset) -> DatasetSummary:
    per_driver: Counter = Counter()
    per_road: Counter = Counter()
    trips_per_driver: Counter = Counter()
    for t in d.trips:
        per_driver[t.driver_label] += len(t)
        per_road[t.road_type] += len(t)
        trips_per_driver[t.driver_label] += 1
    return DatasetSummary(
        n_records=len(d),
        n_trips=len(d.trips),
        channel_names=list(d.channel_names),
        records_per_driver=dict(sorted(per_driver.items())),
        records_per_road=dict(sorted(per_road.items())),
        trips_per_driver=dict(sorted(trips_per_driver.items())),
        duration_s=len(d),
    )


# --- synthetic data -------------------------------------------------------


@dataclass(frozen=True)
class ChannelProfile:
    mean: float
    std: float
    drift: float = 0.0  # change of the mean per second


@dataclass(frozen=True)
class DriverProfile:
    label: str
    channels: Mapping[str, ChannelProfile]
    # optional per-road additive shift of every channel mean
    road_offsets: Mapping[str, float] = field(default_factory=dict)


def synthesize_dataset(
    profiles: Sequence[DriverProfile],
    seconds_per_trip: int,
    seed: int,
    *,
    road_types: Sequence[str] = (UNSPECIFIED_ROAD,),
    trips_per_road: int = 1,
    ranges: Mapping[str, tuple[float, float]] | None = None,
    autocorrelation: float = 0.0,
) -> Dataset:
    """Draw a labelled dataset from per-driver channel distributions.

    Each channel follows ``mean + drift * t + std * e_t`` where ``e_t`` is a
    unit-variance AR(1) process with coefficient ``autocorrelation`` (0 gives
    i.i.d. Gaussian noise). Values are clamped to ``ranges``, which default to
    the known physical channel ranges. Output is a pure function of the
    arguments.
    """
    if not profiles:
        raise ValueError("need at least one driver profile")
    if seconds_per_trip < 1 or trips_per_road < 1:
        raise ValueError("seconds_per_trip and trips_per_road must be >= 1")
    if not 0.0 <= autocorrelation < 1.0:
        raise ValueError("autocorrelation must be in [0, 1)")
    channel_names = tuple(profiles[0].channels)
    for p in profiles:
        if tuple(p.channels) != channel_names:
            raise ValueError(f"driver {p.label} declares a different channel set")
        for name, cp in p.channels.items():
            if not cp.std >= 0:
                raise ValueError(f"driver {p.label} channel {name}: std must be >= 0")
    labels = [p.label for p in profiles]
    if len(set(labels)) != len(labels):
        raise ValueError("driver labels must be unique")

    bounds = []
    for name in channel_names:
        if ranges is not None and name in ranges:
            lo, hi = ranges[name]
        else:
            lo, hi = channel_range(name) or (-np.inf, np.inf)
        if lo > hi:
            raise ValueError(f"invalid range for {name}: {lo} > {hi}")
        bounds.append((lo, hi))
    lo_arr = np.array([b[0] for b in bounds])
    hi_arr = np.array([b[1] for b in bounds])

    rng = np.random.default_rng(seed)
    innovation = np.sqrt(1.0 - autocorrelation**2)
    t = np.arange(seconds_per_trip, dtype=np.float64)[:, None]
    trips = []
    for p in profiles:
        means = np.array([p.channels[c].mean for c in channel_names])
        stds = np.array([p.channels[c].std for c in channel_names])
        drifts = np.array([p.channels[c].drift for c in channel_names])
        for road in road_types:
            road = normalize_road_type(road)
            offset = p.road_offsets.get(road, 0.0)
            for k in range(trips_per_road):
                z = rng.standard_normal((seconds_per_trip, len(channel_names)))
                if autocorrelation:
                    e = np.empty_like(z)
                    e[0] = z[0]
                    for i in range(1, seconds_per_trip):
                        e[i] = autocorrelation * e[i - 1] + innovation * z[i]
                    z = e
                values = np.clip(means + offset + drifts * t + stds * z, lo_arr, hi_arr)
                trips.append(
                    Trip(
                        trip_id=f"{p.label}-{road}-{k:03d}",
                        driver_label=p.label,
                        road_type=road,
                        channel_names=channel_names,
                        values=values,
                        timestamps=np.arange(seconds_per_trip),
                    )
                )
    return Dataset(tuple(trips), channel_names, provenance=f"synthetic(seed={seed})")


def driver_labels(n: int) -> list[str]:
    if n <= 26:
        return list(string.ascii_uppercase[:n])
    return [f"D{i:02d}" for i in range(n)]


def random_profiles(
    n_drivers: int,
    channels: int | Sequence[str],
    seed: int,
    *,
    spread: float = 10.0,
    std: float = 1.0,
) -> list[DriverProfile]:
    """Random driver profiles whose channel means are drawn from ``N(50, spread)``."""
    if n_drivers < 1:
        raise ValueError("n_drivers must be >= 1")
    names = [f"ch{i:02d}" for i in range(channels)] if isinstance(channels, int) else list(channels)
    rng = np.random.default_rng(seed)
    profiles = []
    for label in driver_labels(n_drivers):
        means = rng.normal(50.0, spread, len(names))
        profiles.append(
            DriverProfile(label, {n: ChannelProfile(float(m), std) for n, m in zip(names, means)})
        )
    return profiles
