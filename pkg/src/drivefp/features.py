"""Feature pipeline: redundancy removal, info-gain ranking, min-max scaling and
sliding-window statistics."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from drivefp.dataset import Dataset, TelemetryRecord, Trip

STATISTICS = ("mean", "median", "std")
DEFAULT_BINS = 16


class ShortTripWarning(UserWarning):
    """A trip is shorter than the window and yields no feature vectors."""


# --- information gain -------------------------------------------------------


def entropy(labels) -> float:
    """Shannon entropy of a label sequence, in bits."""
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    return _entropy_counts(counts)


def _entropy_counts(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def equal_frequency_bins(values, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Group index per value from equal-frequency slices of the sorted order.

    Sorted positions are sliced into ``bins`` runs counted inwards from both
    ends (an odd middle position stands alone). A slice boundary that falls
    inside a run of equal values moves to both edges of that run, so the run
    becomes a group of its own. The partition depends only on the ordering
    and is the same when the ordering is reversed.
    """
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(values, kind="stable")
    s = values[order]
    p = np.arange(n)
    lower = 2 * p < n - 1
    upper = 2 * p > n - 1
    slot = np.full(n, bins, dtype=np.int64)
    slot[lower] = (p[lower] * bins) // n
    slot[upper] = bins - 1 - ((n - 1 - p[upper]) * bins) // n

    # cut[b] splits sorted positions b-1 and b
    distinct = np.concatenate(([True], s[1:] > s[:-1]))
    run = np.cumsum(distinct) - 1
    run_start = np.flatnonzero(distinct)
    run_end = np.append(run_start[1:], n)
    cut = np.zeros(n + 1, dtype=bool)
    boundary = np.flatnonzero(slot[1:] != slot[:-1]) + 1
    clean = distinct[boundary]
    cut[boundary[clean]] = True
    inside = run[boundary[~clean]]
    cut[run_start[inside]] = True
    cut[run_end[inside]] = True
    group = np.cumsum(cut[:n]) - cut[0]
    out = np.empty(n, dtype=np.int64)
    out[order] = group
    return out


def info_gain(values, labels, bins: int = DEFAULT_BINS) -> float:
    """``H(labels) - H(labels | binned values)`` in bits.

    Values are discretised into ``bins`` equal-frequency bins first.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    if len(values) != len(labels):
        raise ValueError(f"length mismatch: {len(values)} values, {len(labels)} labels")
    if len(values) == 0:
        raise ValueError("empty input")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    _, y = np.unique(labels, return_inverse=True)
    x = equal_frequency_bins(values, bins)
    n_classes = y.max() + 1
    table = np.zeros((x.max() + 1, n_classes), dtype=np.int64)
    np.add.at(table, (x, y), 1)
    h_y = _entropy_counts(table.sum(axis=0))
    # canonical row order so the float sum does not depend on group numbering
    table = table[np.lexsort(table.T[::-1])]
    h_cond = sum(row.sum() / len(y) * _entropy_counts(row) for row in table if row.sum())
    return float(min(max(h_y - h_cond, 0.0), h_y))


# --- ranking and selection ----------------------------------------------------


@dataclass(frozen=True)
class RankEntry:
    channel: str
    score: float
    rank: int


@dataclass(frozen=True)
class FeatureRanking:
    entries: tuple[RankEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.channel for e in self.entries]

    def score(self, channel: str) -> float:
        for e in self.entries:
            if e.channel == channel:
                return e.score
        raise KeyError(channel)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "channel", "score"])
        for e in self.entries:
            w.writerow([e.rank, e.channel, f"{e.score:.6f}"])
        return buf.getvalue()


def rank_arrays(values: np.ndarray, labels, channel_names: Sequence[str], bins: int = DEFAULT_BINS) -> FeatureRanking:
    if values.shape[0] == 0:
        raise ValueError("empty input")
    scored = [
        (info_gain(values[:, j], labels, bins), name) for j, name in enumerate(channel_names)
    ]
    scored.sort(key=lambda s: (-s[0], s[1]))
    return FeatureRanking(
        tuple(RankEntry(name, score, i + 1) for i, (score, name) in enumerate(scored))
    )


def rank_features(d: Dataset, bins: int = DEFAULT_BINS, channels: Sequence[str] | None = None) -> FeatureRanking:
    """Rank channels by information gain about the driver label.

    Ties in score are broken by channel name.
    """
    if len(d) == 0:
        raise ValueError("empty dataset")
    channels = list(channels) if channels is not None else list(d.channel_names)
    idx = [d.channel_names.index(c) for c in channels]
    return rank_arrays(d.values()[:, idx], d.labels().astype(str), channels, bins)


def select_top(ranking: FeatureRanking, k: int) -> list[str]:
    if not 1 <= k <= len(ranking):
        raise ValueError(f"k={k} out of range 1..{len(ranking)}")
    return ranking.names[:k]


def redundant_arrays(
    values: np.ndarray,
    labels,
    channel_names: Sequence[str],
    corr_threshold: float = 0.99,
    bins: int = DEFAULT_BINS,
) -> list[str]:
    if not 0 < corr_threshold <= 1:
        raise ValueError("corr_threshold must be in (0, 1]")
    if values.shape[0] < 2:
        raise ValueError("need at least 2 records")
    varying = [j for j in range(values.shape[1]) if np.ptp(values[:, j]) > 0]
    gains = {j: info_gain(values[:, j], labels, bins) for j in varying}
    # Keep channels greedily from most to least informative.
    order = sorted(varying, key=lambda j: (-gains[j], channel_names[j]))
    centered = values[:, varying] - values[:, varying].mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    col = {j: i for i, j in enumerate(varying)}
    kept: list[int] = []
    for j in order:
        a = centered[:, col[j]] / norms[col[j]]
        if all(abs(a @ (centered[:, col[i]] / norms[col[i]])) <= corr_threshold for i in kept):
            kept.append(j)
    return [channel_names[j] for j in sorted(kept)]


def remove_redundant(d: Dataset, corr_threshold: float = 0.99, bins: int = DEFAULT_BINS) -> list[str]:
    """Channels left after dropping constant and highly correlated ones.

    Of two channels with ``|corr| > corr_threshold`` the one with lower info
    gain goes (on a tie, the lexicographically later name). Input order is
    preserved.
    """
    return redundant_arrays(d.values(), d.labels().astype(str), d.channel_names, corr_threshold, bins)


# --- normalization ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormalizationParams:
    channels: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64).copy()
        maxs = np.asarray(self.maxs, dtype=np.float64).copy()
        if mins.shape != (len(self.channels),) or maxs.shape != mins.shape:
            raise ValueError("mins/maxs must have one entry per channel")
        if np.any(mins > maxs):
            raise ValueError("min must not exceed max")
        mins.setflags(write=False)
        maxs.setflags(write=False)
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NormalizationParams):
            return NotImplemented
        return (
            self.channels == other.channels
            and np.array_equal(self.mins, other.mins)
            and np.array_equal(self.maxs, other.maxs)
        )

    def __getitem__(self, channel: str) -> tuple[float, float]:
        i = self.channels.index(channel)
        return float(self.mins[i]), float(self.maxs[i])

    def to_dict(self) -> dict:
        return {c: [float(lo), float(hi)] for c, lo, hi in zip(self.channels, self.mins, self.maxs)}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Sequence[float]]) -> "NormalizationParams":
        channels = list(doc)
        return cls(tuple(channels), [doc[c][0] for c in channels], [doc[c][1] for c in channels])

    def subset(self, channels: Sequence[str]) -> "NormalizationParams":
        idx = [self._index(c) for c in channels]
        return NormalizationParams(tuple(channels), self.mins[idx], self.maxs[idx])

    def _index(self, channel: str) -> int:
        try:
            return self.channels.index(channel)
        except ValueError:
            raise KeyError(f"unknown channel {channel!r}") from None


def _as_matrix(records, channels: Sequence[str]) -> np.ndarray:
    if isinstance(records, np.ndarray):
        return np.asarray(records, dtype=np.float64).reshape(-1, len(channels))
    rows = []
    for r in records:
        mapping = r.channels if isinstance(r, TelemetryRecord) else r
        rows.append([mapping[c] for c in channels])
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(channels))


def fit_normalization(records, channels: Sequence[str]) -> NormalizationParams:
    """Per-channel observed min and max.

    ``records`` is either an array whose columns follow ``channels`` or an
    iterable of :class:`TelemetryRecord` / channel mappings.
    """
    values = _as_matrix(records, channels)
    if values.shape[0] == 0:
        raise ValueError("need at least one record")
    return NormalizationParams(tuple(channels), values.min(axis=0), values.max(axis=0))


def _scale(values: np.ndarray, mins: np.ndarray, maxs: np.ndarray) -> np.ndarray:
    span = maxs - mins
    safe = np.where(span > 0, span, 1.0)
    with np.errstate(over="ignore"):  # huge outliers clamp to 1 anyway
        out = np.where(span > 0, (values - mins) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def apply_normalization(values, params: NormalizationParams, channels: Sequence[str] | None = None):
    """Min-max scale to [0, 1]; constant channels map to 0, outliers are clamped.

    A channel mapping returns a dict; an array (columns follow ``channels``,
    default ``params.channels``) returns an array.
    """
    if isinstance(values, Mapping):
        out = {}
        for c, v in values.items():
            i = params._index(c)
            out[c] = float(_scale(np.float64(v), params.mins[i], params.maxs[i]))
        return out
    channels = params.channels if channels is None else channels
    idx = [params._index(c) for c in channels]
    return _scale(np.asarray(values, dtype=np.float64), params.mins[idx], params.maxs[idx])


# --- sliding windows --------------------------------------------------------


@dataclass(frozen=True)
class WindowConfig:
    """Window of ``window_size`` seconds sliding one second at a time."""

    window_size: int = 60
    stride: int = 1
    statistics: tuple[str, ...] = STATISTICS
    normalize_first: bool = True

    def __post_init__(self):
        if int(self.window_size) != self.window_size or self.window_size < 1:
            raise ValueError("window_size must be an integer >= 1")
        if self.stride != 1:
            raise ValueError("only stride 1 is supported")
        stats = tuple(self.statistics)
        unknown = set(stats) - set(STATISTICS)
        if unknown:
            raise ValueError(f"unknown statistics {sorted(unknown)}")
        # canonical order regardless of how they were listed
        object.__setattr__(self, "statistics", tuple(s for s in STATISTICS if s in stats))

    def with_window(self, w: int) -> "WindowConfig":
        return WindowConfig(w, self.stride, self.statistics, self.normalize_first)

    def with_statistics(self, statistics: Sequence[str]) -> "WindowConfig":
        return WindowConfig(self.window_size, self.stride, tuple(statistics), self.normalize_first)


def _rolling(x: np.ndarray, w: int, statistics: Sequence[str]) -> dict[str, np.ndarray]:
    """Rolling statistics along axis 0 for every full window.

    Sums run left to right inside each window so the result equals a plain
    per-window loop bit for bit.
    """
    m = x.shape[0] - w + 1
    out = {}
    mean = None
    if "mean" in statistics or "std" in statistics:
        acc = x[0:m].copy()
        for j in range(1, w):
            acc += x[j : j + m]
        mean = acc / w
    if "mean" in statistics:
        out["mean"] = mean
    if "median" in statistics:
        s = np.sort(sliding_window_view(x, w, axis=0), axis=-1)
        if w % 2:
            out["median"] = s[..., w // 2]
        else:
            out["median"] = (s[..., w // 2 - 1] + s[..., w // 2]) / 2
    if "std" in statistics:
        dev = (x[0:m] - mean) ** 2
        for j in range(1, w):
            dev += (x[j : j + m] - mean) ** 2
        out["std"] = np.sqrt(dev / w)
    return {name: out[name] for name in STATISTICS if name in out}


def window_statistics(series, cfg: WindowConfig = WindowConfig()) -> dict[str, np.ndarray]:
    """Mean, median and population std of each full window of ``series``.

    Output position ``i`` covers ``series[i : i + W]``, i.e. the window ending
    at second ``i + W``. Works on 1-D series or column-wise on 2-D arrays.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.shape[0] < cfg.window_size:
        raise ValueError(f"series of length {x.shape[0]} shorter than window {cfg.window_size}")
    return _rolling(x, cfg.window_size, cfg.statistics)


# --- feature matrices -------------------------------------------------------


def feature_columns(channels: Sequence[str], cfg: WindowConfig) -> list[str]:
    cols = list(channels)
    for c in channels:
        cols += [f"{c}_{s}" for s in cfg.statistics]
    return cols


def feature_rows(raw: np.ndarray, params: NormalizationParams, channels: Sequence[str], cfg: WindowConfig) -> np.ndarray:
    """Feature vectors for every full window of ``raw`` (columns follow ``channels``)."""
    w = cfg.window_size
    n, f = raw.shape
    m = n - w + 1
    if m <= 0:
        return np.empty((0, f * (1 + len(cfg.statistics))))
    idx = [params._index(c) for c in channels]
    mins, maxs = params.mins[idx], params.maxs[idx]
    normalized = _scale(raw, mins, maxs)
    if not cfg.statistics:
        return normalized[w - 1 :].copy()
    if cfg.normalize_first:
        stats = _rolling(normalized, w, cfg.statistics)
    else:
        stats = _rolling(raw, w, cfg.statistics)
        span = maxs - mins
        for name in stats:
            if name == "std":
                stats[name] = np.clip(
                    np.where(span > 0, stats[name] / np.where(span > 0, span, 1.0), 0.0), 0.0, 1.0
                )
            else:
                stats[name] = _scale(stats[name], mins, maxs)
    block = np.stack([stats[s] for s in cfg.statistics], axis=-1).reshape(m, -1)
    return np.concatenate([normalized[w - 1 :], block], axis=1)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    label: str
    timestamp_s: int
    road_type: str


@dataclass(eq=False)
class FeatureMatrix:
    """Stacked feature vectors with their labels and provenance."""

    values: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray
    road_types: np.ndarray
    trip_ids: np.ndarray
    columns: list[str]

    def __len__(self) -> int:
        return self.values.shape[0]

    def vectors(self) -> Iterator[FeatureVector]:
        for row, label, t, road in zip(self.values, self.labels, self.timestamps, self.road_types):
            yield FeatureVector(row, str(label), int(t), str(road))

    def take(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(
            self.values[idx],
            self.labels[idx],
            self.timestamps[idx],
            self.road_types[idx],
            self.trip_ids[idx],
            self.columns,
        )

    @classmethod
    def empty(cls, columns: Sequence[str]) -> "FeatureMatrix":
        return cls(
            np.empty((0, len(columns))),
            np.empty(0, dtype=object),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=object),
            np.empty(0, dtype=object),
            list(columns),
        )

    @classmethod
    def concat(cls, parts: Sequence["FeatureMatrix"], columns: Sequence[str]) -> "FeatureMatrix":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(columns)
        return cls(
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.timestamps for p in parts]),
            np.concatenate([p.road_types for p in parts]),
            np.concatenate([p.trip_ids for p in parts]),
            list(columns),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*self.columns, "label", "road_type", "trip_id", "timestamp_s"])
        for row, label, road, trip, t in zip(self.values, self.labels, self.road_types, self.trip_ids, self.timestamps):
            w.writerow([*map(repr, row.tolist()), label, road, trip, int(t)])
        return buf.getvalue()


def build_feature_matrix(
    trip: Trip,
    channels: Sequence[str],
    params: NormalizationParams,
    cfg: WindowConfig = WindowConfig(),
) -> FeatureMatrix:
    """One vector per window-end second of ``trip``.

    Each vector holds the scaled instantaneous value of every channel followed
    by the configured window statistics per channel. A trip shorter than the
    window gives an empty matrix and a :class:`ShortTripWarning`.
    """
    columns = feature_columns(channels, cfg)
    if len(trip) < cfg.window_size:
        warnings.warn(
            f"trip {trip.trip_id} has {len(trip)} s, shorter than window {cfg.window_size}",
            ShortTripWarning,
            stacklevel=2,
        )
        return FeatureMatrix.empty(columns)
    idx = [trip.channel_names.index(c) for c in channels]
    x = feature_rows(trip.values[:, idx], params, channels, cfg)
    m = x.shape[0]
    return FeatureMatrix(
        x,
        np.full(m, trip.driver_label, dtype=object),
        np.asarray(trip.timestamps[cfg.window_size - 1 :]),
        np.full(m, trip.road_type, dtype=object),
        np.full(m, trip.trip_id, dtype=object),
        columns,
    )


def build_dataset_matrix(
    trips: Iterable[Trip],
    channels: Sequence[str],
    params: NormalizationParams,
    cfg: WindowConfig = WindowConfig(),
) -> FeatureMatrix:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShortTripWarning)
        parts = [build_feature_matrix(t, channels, params, cfg) for t in trips]
    return FeatureMatrix.concat(parts, feature_columns(channels, cfg))
