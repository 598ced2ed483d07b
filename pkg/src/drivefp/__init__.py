"""Driver fingerprinting from per-second in-vehicle telemetry.

Ingest OBD-II style logs, build windowed statistical features, train
per-driver classifiers, evaluate them per road type and run online
threshold verification that raises theft alerts.
"""

from drivefp.dataset import (
    Dataset,
    Schema,
    TelemetryRecord,
    Trip,
    dataset_summary,
    parse_log,
    segment_trips,
    synthesize_dataset,
    write_log,
)
from drivefp.features import (
    FeatureRanking,
    NormalizationParams,
    WindowConfig,
    apply_normalization,
    build_feature_matrix,
    fit_normalization,
    info_gain,
    rank_features,
    remove_redundant,
    select_top,
    window_statistics,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FeatureRanking",
    "NormalizationParams",
    "Schema",
    "TelemetryRecord",
    "Trip",
    "WindowConfig",
    "apply_normalization",
    "build_feature_matrix",
    "dataset_summary",
    "fit_normalization",
    "info_gain",
    "parse_log",
    "rank_features",
    "remove_redundant",
    "segment_trips",
    "select_top",
    "synthesize_dataset",
    "window_statistics",
    "write_log",
]
