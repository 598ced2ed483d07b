"""Per-road cross-validation, window-size sweep and feature-set comparison."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from drivefp.classifiers import (
    ALGORITHM_TITLES,
    Hyperparameters,
    LabeledMatrix,
    TrainedModel,
    check_algorithms,
    train,
)
from drivefp.dataset import ROAD_TYPES, Dataset, Trip, resolve_channel
from drivefp.features import (
    DEFAULT_BINS,
    FeatureRanking,
    NormalizationParams,
    WindowConfig,
    feature_rows,
    fit_normalization,
    rank_arrays,
    redundant_arrays,
)

DEFAULT_SEED = 42
DEFAULT_WINDOWS = (1, 15, 30, 60, 90, 120)
FEATURE_SETS = ("ours", "ours+stats", "prior", "prior+stats")
# column order used by the accuracy tables
TABLE_ORDER = ("decision_tree", "knn", "random_forest", "mlp")

# Driving-behaviour channels used by earlier driver-identification work,
# mapped onto the column names of the public driving dataset.
PRIOR_WORK_FEATURES: dict[str, str] = {
    "accelerator pedal": "Accelerator_Pedal_value",
    "braking pedal": "Indication_of_brake_switch_ON/OFF",
    "steering wheel": "Steering_wheel_angle",
    "vehicle speed": "Vehicle_speed",
    "engine speed": "Engine_speed",
    "gear": "Current_Gear",
    "throttle position": "Throttle_position_signal",
    "engine coolant temperature": "Engine_coolant_temperature",
}


class InsufficientDataError(ValueError):
    """Too few feature vectors for the requested folds."""


# --- folds ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    folds: np.ndarray
    k: int
    seed: int
    contiguous: bool = False

    def __eq__(self, other) -> bool:
        if not isinstance(other, FoldAssignment):
            return NotImplemented
        return (self.k, self.seed, self.contiguous) == (other.k, other.seed, other.contiguous) and np.array_equal(
            self.folds, other.folds
        )

    def sizes(self) -> np.ndarray:
        return np.bincount(self.folds, minlength=self.k)

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds != fold)


def kfold_split(labels, k: int = 10, seed: int = DEFAULT_SEED, contiguous: bool = False) -> FoldAssignment:
    """Stratified fold assignment.

    Rows of each class are laid end to end (classes in sorted order) and
    position ``p`` of that sequence goes to fold ``p mod k``, which balances
    both fold sizes and per-class counts to within one. By default rows are
    shuffled within their class first. With ``contiguous=True`` each class
    keeps its row order and every fold receives one contiguous block of it;
    the blocks have the same sizes as in the shuffled case, in a seeded random
    fold order.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    classes, counts = np.unique(labels, return_counts=True)
    for c, n in zip(classes, counts):
        if n < k:
            raise InsufficientDataError(f"class {c.item()!r} has {n} rows, fewer than k={k}")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in classes:
        rows = np.flatnonzero(labels == c)
        n = len(rows)
        if contiguous:
            per_fold = np.bincount((offset + np.arange(n)) % k, minlength=k)
            order = rng.permutation(k)
            folds[rows] = np.repeat(order, per_fold[order])
        else:
            folds[rng.permutation(rows)] = (offset + np.arange(n)) % k
        offset += n
    return FoldAssignment(folds, k, seed, contiguous)


# --- feature specifications ---------------------------------------------


@dataclass(frozen=True)
class FeatureSpec:
    """Which channels feed the classifier and whether window statistics are added.

    With ``channels`` unset the channels are the ``top_k`` by info gain after
    redundancy removal, fitted on the training folds only.
    """

    name: str = "ours+stats"
    channels: tuple[str, ...] | None = None
    top_k: int = 15
    statistics: bool = True
    remove_redundant: bool = True
    corr_threshold: float = 0.99
    bins: int = DEFAULT_BINS

    def window_config(self, window: WindowConfig) -> WindowConfig:
        return window if self.statistics else window.with_statistics(())


def resolve_prior_channels(
    channel_names: Sequence[str], mapping: Mapping[str, str] | None = None
) -> tuple[str, ...]:
    mapping = PRIOR_WORK_FEATURES if mapping is None else mapping
    resolved, missing = [], []
    for concept, column in mapping.items():
        hit = resolve_channel(column, channel_names)
        if hit is None:
            missing.append(f"{concept} -> {column}")
        else:
            resolved.append(hit)
    if missing:
        raise ValueError("prior-work channels missing from dataset: " + "; ".join(missing))
    return tuple(dict.fromkeys(resolved))


def standard_feature_sets(
    channel_names: Sequence[str],
    top_k: int = 15,
    prior_mapping: Mapping[str, str] | None = None,
) -> list[FeatureSpec]:
    prior = resolve_prior_channels(channel_names, prior_mapping)
    return [
        FeatureSpec("ours", top_k=top_k, statistics=False),
        FeatureSpec("ours+stats", top_k=top_k, statistics=True),
        FeatureSpec("prior", channels=prior, statistics=False),
        FeatureSpec("prior+stats", channels=prior, statistics=True),
    ]


# --- results --------------------------------------------------------------


@dataclass(eq=False)
class CellResult:
    """Cross-validated outcome of one (road, algorithm, window, feature set)."""

    road_type: str
    algorithm: str
    window: int
    feature_set: str
    mode: str
    classes: tuple[str, ...]
    confusion: np.ndarray
    fold_accuracies: list[float] = field(default_factory=list)
    train_ms: list[float] = field(default_factory=list)
    predict_ms: list[float] = field(default_factory=list)
    n_vectors: int = 0
    seed: int = DEFAULT_SEED

    @property
    def accuracy(self) -> float:
        """Mean of the per-fold accuracies."""
        return float(np.mean(self.fold_accuracies)) if self.fold_accuracies else float("nan")

    @property
    def pooled_accuracy(self) -> float:
        # differs from the fold mean only when folds have unequal sizes (purging)
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else float("nan")

    def per_class_accuracy(self) -> dict[str, float]:
        """Share of each driver's held-out vectors classified as that driver."""
        out = {}
        for i, c in enumerate(self.classes):
            row = self.confusion[i].sum()
            out[c] = float(self.confusion[i, i] / row) if row else float("nan")
        return out

    def key(self) -> tuple:
        return (self.road_type, self.algorithm, self.window, self.feature_set)


@dataclass
class EvaluationReport:
    cells: list[CellResult] = field(default_factory=list)

    def __iter__(self):
        return iter(self.cells)

    def __len__(self) -> int:
        return len(self.cells)

    def extend(self, other: "EvaluationReport") -> "EvaluationReport":
        self.cells.extend(other.cells)
        return self

    def get(self, road_type: str, algorithm: str, window: int | None = None, feature_set: str | None = None) -> CellResult:
        for c in self.cells:
            if (
                c.road_type == road_type
                and c.algorithm == algorithm
                and (window is None or c.window == window)
                and (feature_set is None or c.feature_set == feature_set)
            ):
                return c
        raise KeyError((road_type, algorithm, window, feature_set))

    def accuracy(self, road_type: str, algorithm: str, window: int | None = None, feature_set: str | None = None) -> float:
        return self.get(road_type, algorithm, window, feature_set).accuracy

    def mean_accuracy(self, algorithm: str, feature_set: str | None = None, window: int | None = None) -> float:
        cells = [
            c
            for c in self.cells
            if c.algorithm == algorithm
            and (feature_set is None or c.feature_set == feature_set)
            and (window is None or c.window == window)
        ]
        return float(np.mean([c.accuracy for c in cells]))


@dataclass(eq=False)
class FoldArtifacts:
    """Everything fitted on the training part of one fold."""

    road_type: str
    fold: int
    channels: tuple[str, ...]
    ranking: FeatureRanking | None
    params: NormalizationParams
    models: dict[str, TrainedModel]
    train_index: np.ndarray
    test_index: np.ndarray
    predictions: dict[str, np.ndarray]
    train_ms: dict[str, float]
    predict_ms: dict[str, float]


# --- cross-validation -----------------------------------------------------


def _slots(trips: Sequence[Trip], w: int):
    """(trip index, end second) for every full window, in trip/time order."""
    trip_idx, ends = [], []
    for i, t in enumerate(trips):
        if len(t) >= w:
            trip_idx.append(np.full(len(t) - w + 1, i))
            ends.append(np.arange(w - 1, len(t)))
    if not trip_idx:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(trip_idx), np.concatenate(ends)


def _purge(train, test, slot_trip, slot_end, w):
    """Drop training slots whose window overlaps a test slot's window."""
    if w <= 1 or len(test) == 0:
        return train
    span = int(slot_end.max()) + 2 * w + 1
    test_keys = np.sort(slot_trip[test] * span + slot_end[test])
    keys = slot_trip[train] * span + slot_end[train]
    pos = np.searchsorted(test_keys, keys)
    near = np.full(len(keys), np.inf)
    hi = pos < len(test_keys)
    near[hi] = test_keys[pos[hi]] - keys[hi]
    lo = pos > 0
    near[lo] = np.minimum(near[lo], keys[lo] - test_keys[pos[lo] - 1])
    return train[near >= w]


def select_channels(spec: FeatureSpec, channel_names, raw, labels):
    if spec.channels is not None:
        chosen = []
        for c in spec.channels:
            hit = resolve_channel(c, channel_names)
            if hit is None:
                raise ValueError(f"channel {c!r} not in dataset")
            chosen.append(hit)
        return tuple(chosen), None
    candidates = list(channel_names)
    if spec.remove_redundant and raw.shape[0] >= 2:
        candidates = redundant_arrays(raw, labels, channel_names, spec.corr_threshold, spec.bins)
    idx = [list(channel_names).index(c) for c in candidates]
    ranking = rank_arrays(raw[:, idx], labels, candidates, spec.bins)
    return tuple(ranking.names[: min(spec.top_k, len(ranking))]), ranking


def iter_folds(
    dataset: Dataset,
    algorithms: Sequence[str],
    hp: Hyperparameters = Hyperparameters(),
    window: WindowConfig = WindowConfig(),
    feature_spec: FeatureSpec = FeatureSpec(),
    k: int = 10,
    seed: int = DEFAULT_SEED,
    paper_mode: bool = False,
    road_types: Sequence[str] | None = None,
) -> Iterator[FoldArtifacts]:
    """Train and score every fold of every road type, yielding the fitted artifacts.

    Feature selection and normalization see only the records at the end
    seconds of training windows. Outside ``paper_mode`` folds are contiguous
    per-driver blocks and training windows that overlap a test window are
    dropped, so nothing from a test window reaches training.
    """
    algorithms = check_algorithms(algorithms)
    cfg = feature_spec.window_config(window)
    w = cfg.window_size
    roads = road_types if road_types is not None else _ordered_roads(dataset.road_types)
    for road in roads:
        trips = [t for t in dataset.trips if t.road_type == road]
        slot_trip, slot_end = _slots(trips, w)
        if len(slot_trip) == 0:
            raise InsufficientDataError(f"road {road!r}: no trip is at least {w} s long")
        labels = np.array([trips[i].driver_label for i in slot_trip])
        classes = tuple(sorted(set(labels)))
        try:
            folds = kfold_split(labels, k, seed, contiguous=not paper_mode)
        except InsufficientDataError as exc:
            raise InsufficientDataError(f"road {road!r}: {exc}") from None
        all_raw = np.concatenate([t.values for t in trips])
        offsets = np.cumsum([0] + [len(t) for t in trips])
        slot_rows = offsets[slot_trip] + slot_end
        y = np.searchsorted(np.array(classes), labels)

        for f in range(k):
            test = folds.test_index(f)
            train_idx = folds.train_index(f)
            if not paper_mode:
                train_idx = _purge(train_idx, test, slot_trip, slot_end, w)
            if len(train_idx) == 0:
                raise InsufficientDataError(f"road {road!r} fold {f}: no training windows left")
            train_raw = all_raw[slot_rows[train_idx]]
            channels, ranking = select_channels(feature_spec, dataset.channel_names, train_raw, labels[train_idx])
            col = [dataset.channel_names.index(c) for c in channels]
            params = fit_normalization(train_raw[:, col], channels)
            X = _features(trips, slot_trip, slot_end, col, channels, params, cfg)

            data = LabeledMatrix(X[train_idx], y[train_idx], classes)
            models, preds, t_ms, p_ms = {}, {}, {}, {}
            for alg in algorithms:
                t0 = time.perf_counter()
                model = train(alg, data, hp)
                t1 = time.perf_counter()
                preds[alg] = model.predict_index(X[test])
                t2 = time.perf_counter()
                models[alg] = model
                t_ms[alg] = (t1 - t0) * 1e3
                p_ms[alg] = (t2 - t1) * 1e3
            yield FoldArtifacts(road, f, channels, ranking, params, models, train_idx, test, preds, t_ms, p_ms)


def _features(trips, slot_trip, slot_end, col, channels, params, cfg) -> np.ndarray:
    blocks = []
    for i in np.unique(slot_trip):
        blocks.append(feature_rows(trips[i].values[:, col], params, channels, cfg))
    X = np.concatenate(blocks)
    # slots are produced trip by trip in time order, exactly like the blocks
    assert X.shape[0] == len(slot_trip)
    return X


def _ordered_roads(roads: Sequence[str]) -> list[str]:
    known = [r for r in ROAD_TYPES if r in roads]
    return known + sorted(r for r in roads if r not in ROAD_TYPES)


def cross_validate(
    dataset: Dataset,
    algorithm: str | Sequence[str],
    hp: Hyperparameters = Hyperparameters(),
    window: WindowConfig = WindowConfig(),
    feature_spec: FeatureSpec = FeatureSpec(),
    k: int = 10,
    seed: int = DEFAULT_SEED,
    paper_mode: bool = False,
    road_types: Sequence[str] | None = None,
) -> EvaluationReport:
    """k-fold accuracy of one or more algorithms, separately per road type."""
    algorithms = [algorithm] if isinstance(algorithm, str) else list(algorithm)
    cells: dict[tuple[str, str], CellResult] = {}
    mode = "paper" if paper_mode else "blocked"
    y_cache: dict[str, tuple] = {}
    for art in iter_folds(dataset, algorithms, hp, window, feature_spec, k, seed, paper_mode, road_types):
        if art.road_type not in y_cache:
            trips = [t for t in dataset.trips if t.road_type == art.road_type]
            slot_trip, _ = _slots(trips, feature_spec.window_config(window).window_size)
            labels = np.array([trips[i].driver_label for i in slot_trip])
            classes = tuple(sorted(set(labels)))
            y_cache[art.road_type] = (classes, np.searchsorted(np.array(classes), labels))
        classes, y = y_cache[art.road_type]
        truth = y[art.test_index]
        for alg in algorithms:
            key = (art.road_type, alg)
            if key not in cells:
                cells[key] = CellResult(
                    road_type=art.road_type,
                    algorithm=alg,
                    window=window.window_size,
                    feature_set=feature_spec.name,
                    mode=mode,
                    classes=classes,
                    confusion=np.zeros((len(classes), len(classes)), dtype=np.int64),
                    n_vectors=len(y),
                    seed=seed,
                )
            cell = cells[key]
            pred = art.predictions[alg]
            np.add.at(cell.confusion, (truth, pred), 1)
            cell.fold_accuracies.append(float(np.mean(pred == truth)))
            cell.train_ms.append(art.train_ms[alg])
            cell.predict_ms.append(art.predict_ms[alg])
    return EvaluationReport(list(cells.values()))


def window_sweep(
    dataset: Dataset,
    algorithms: Sequence[str],
    sizes: Sequence[int] = DEFAULT_WINDOWS,
    hp: Hyperparameters = Hyperparameters(),
    window: WindowConfig = WindowConfig(),
    feature_spec: FeatureSpec = FeatureSpec(),
    k: int = 10,
    seed: int = DEFAULT_SEED,
    paper_mode: bool = False,
    road_types: Sequence[str] | None = None,
) -> EvaluationReport:
    if not sizes:
        raise ValueError("sizes must be non-empty")
    report = EvaluationReport()
    for w in sizes:
        if w < 1:
            raise ValueError("window sizes must be >= 1")
        report.extend(
            cross_validate(dataset, algorithms, hp, window.with_window(w), feature_spec, k, seed, paper_mode, road_types)
        )
    return report


def feature_set_comparison(
    dataset: Dataset,
    algorithms: Sequence[str],
    window: WindowConfig = WindowConfig(),
    hp: Hyperparameters = Hyperparameters(),
    top_k: int = 15,
    prior_mapping: Mapping[str, str] | None = None,
    k: int = 10,
    seed: int = DEFAULT_SEED,
    paper_mode: bool = False,
    road_types: Sequence[str] | None = None,
    feature_sets: Sequence[FeatureSpec] | None = None,
) -> EvaluationReport:
    """Accuracy of our channels vs. prior-work channels, each with and without statistics."""
    specs = feature_sets or standard_feature_sets(dataset.channel_names, top_k, prior_mapping)
    report = EvaluationReport()
    for spec in specs:
        report.extend(cross_validate(dataset, algorithms, hp, window, spec, k, seed, paper_mode, road_types))
    return report


# --- reports ----------------------------------------------------------------

REPORT_FORMATS = ("csv", "folds", "table", "feature-table", "window-table")
_SUMMARY_HEADER = ["road_type", "algorithm", "window", "feature_set", "mode", "fold", "accuracy", "train_ms", "predict_ms", "n_vectors", "seed"]
_FOLD_HEADER = ["road_type", "algorithm", "window", "feature_set", "fold", "accuracy", "train_ms", "predict_ms"]


def _algorithms_in(cells) -> list[str]:
    present = {c.algorithm for c in cells}
    return [a for a in TABLE_ORDER if a in present]


def _grid(title: str, row_label: str, rows: list[str], cols: list[str], value) -> list[str]:
    heads = [ALGORITHM_TITLES.get(c, c) for c in cols]
    first = max([len(row_label)] + [len(r) for r in rows])
    widths = [max(len(h), 6) for h in heads]
    lines = [title, "  ".join([row_label.ljust(first)] + [h.rjust(wd) for h, wd in zip(heads, widths)])]
    for r in rows:
        cells = []
        for c, wd in zip(cols, widths):
            v = value(r, c)
            cells.append(("-" if v is None or np.isnan(v) else f"{v:.3f}").rjust(wd))
        lines.append("  ".join([r.ljust(first)] + cells))
    return lines


def emit_report(report: EvaluationReport, fmt: str = "csv") -> str:
    """Render a report.

    ``csv``: one row per (road, algorithm, window, feature set);
    ``folds``: one row per fold; ``table``: road x algorithm grids;
    ``feature-table``: feature set x algorithm, averaged over roads;
    ``window-table``: window x algorithm grids per road.
    """
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown format {fmt!r}; choose from {', '.join(REPORT_FORMATS)}")
    cells = list(report)
    if fmt in ("csv", "folds"):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if fmt == "csv":
            w.writerow(_SUMMARY_HEADER)
            for c in cells:
                w.writerow([
                    c.road_type, c.algorithm, c.window, c.feature_set, c.mode, "all",
                    f"{c.accuracy:.6f}", f"{sum(c.train_ms):.1f}", f"{sum(c.predict_ms):.1f}", c.n_vectors, c.seed,
                ])
        else:
            w.writerow(_FOLD_HEADER)
            for c in cells:
                for i, (a, t, p) in enumerate(zip(c.fold_accuracies, c.train_ms, c.predict_ms)):
                    w.writerow([c.road_type, c.algorithm, c.window, c.feature_set, i, f"{a:.6f}", f"{t:.1f}", f"{p:.1f}"])
        return buf.getvalue()

    if not cells:
        return {"table": "Road type", "feature-table": "Feature set", "window-table": "Window"}[fmt] + "\n"
    algs = _algorithms_in(cells)
    lines: list[str] = []
    if fmt == "table":
        combos = list(dict.fromkeys((c.window, c.feature_set) for c in cells))
        for win, fs in combos:
            sub = [c for c in cells if c.window == win and c.feature_set == fs]
            roads = _ordered_roads(list(dict.fromkeys(c.road_type for c in sub)))
            lookup = {(c.road_type, c.algorithm): c.accuracy for c in sub}
            lines += _grid(f"window={win} features={fs}", "Road type", roads, algs, lambda r, a: lookup.get((r, a)))
            lines.append("")
    elif fmt == "feature-table":
        for win in dict.fromkeys(c.window for c in cells):
            sub = [c for c in cells if c.window == win]
            sets = list(dict.fromkeys(c.feature_set for c in sub))

            def mean_acc(fs, a, sub=sub):
                vals = [c.accuracy for c in sub if c.feature_set == fs and c.algorithm == a]
                return float(np.mean(vals)) if vals else None

            lines += _grid(f"window={win} (mean over road types)", "Feature set", sets, algs, mean_acc)
            lines.append("")
    else:
        for road in _ordered_roads(list(dict.fromkeys(c.road_type for c in cells))):
            for fs in dict.fromkeys(c.feature_set for c in cells):
                sub = [c for c in cells if c.road_type == road and c.feature_set == fs]
                if not sub:
                    continue
                wins = sorted({c.window for c in sub})
                lookup = {(str(c.window), c.algorithm): c.accuracy for c in sub}
                lines += _grid(f"road={road} features={fs}", "Window", [str(x) for x in wins], algs, lambda r, a: lookup.get((r, a)))
                lines.append("")
    return "\n".join(lines)


def per_driver_accuracy(report: EvaluationReport) -> dict[str, dict[str, float]]:
    """Held-out accuracy per driver and algorithm, pooled over the report's cells."""
    totals: dict[str, dict[str, list[int]]] = {}
    for c in report:
        for i, driver in enumerate(c.classes):
            entry = totals.setdefault(driver, {}).setdefault(c.algorithm, [0, 0])
            entry[0] += int(c.confusion[i, i])
            entry[1] += int(c.confusion[i].sum())
    return {
        d: {a: hit / n for a, (hit, n) in algs.items() if n}
        for d, algs in totals.items()
    }
