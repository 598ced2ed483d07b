"""Fit the full pipeline on a dataset and package it as a verifier bundle."""

from __future__ import annotations

from typing import Sequence

from drivefp.classifiers import Hyperparameters, LabeledMatrix, check_algorithms, train
from drivefp.dataset import Dataset
from drivefp.evaluation import FeatureSpec, select_channels
from drivefp.features import WindowConfig, build_dataset_matrix, fit_normalization
from drivefp.verification import DEFAULT_THRESHOLD, Bundle


def train_bundle(
    dataset: Dataset,
    algorithms: Sequence[str],
    hp: Hyperparameters = Hyperparameters(),
    window: WindowConfig = WindowConfig(),
    feature_spec: FeatureSpec = FeatureSpec(),
    road_type: str | None = None,
    threshold: float = DEFAULT_THRESHOLD,
) -> Bundle:
    """Select channels, fit scaling and train every algorithm on ``dataset``.

    ``road_type`` restricts training to one stratum; ``None`` uses all trips.
    """
    algorithms = check_algorithms(algorithms)
    data = dataset.subset(road_type=road_type) if road_type else dataset
    if len(data) == 0:
        raise ValueError(f"no records for road type {road_type!r}")
    raw = data.values()
    labels = data.labels().astype(str)
    channels, ranking = select_channels(feature_spec, data.channel_names, raw, labels)
    col = [data.channel_names.index(c) for c in channels]
    params = fit_normalization(raw[:, col], channels)
    cfg = feature_spec.window_config(window)
    fm = build_dataset_matrix(data.trips, channels, params, cfg)
    if len(fm) == 0:
        raise ValueError(f"no trip is at least {cfg.window_size} s long")
    matrix = LabeledMatrix.from_labels(fm.values, fm.labels, sorted(set(labels)))
    models = {alg: train(alg, matrix, hp) for alg in algorithms}
    extra = {"hyperparameters": hp.to_dict(), "feature_set": feature_spec.name}
    if ranking is not None:
        extra["ranking"] = [[e.rank, e.channel, e.score] for e in ranking.entries]
    return Bundle(
        models=models,
        channels=tuple(channels),
        params=params,
        window=cfg,
        threshold=threshold,
        road_type=road_type or "all",
        seed=hp.seed,
        extra=extra,
    )
