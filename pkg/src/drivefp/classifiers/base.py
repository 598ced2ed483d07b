from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import numpy as np

ALGORITHMS = ("decision_tree", "random_forest", "knn", "mlp")

ALGORITHM_TITLES = {
    "decision_tree": "Decision Tree",
    "knn": "KNN",
    "random_forest": "Random Forest",
    "mlp": "Multilayer perceptron",
}


class TrainingDivergence(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class Hyperparameters:
    # decision tree / forest
    min_samples_split: int = 2
    max_depth: int | None = None
    n_trees: int = 100
    features_per_split: int | None = None  # None: ceil(sqrt(d))
    bootstrap: bool = True
    # knn
    k: int = 1
    # mlp
    hidden_layers: tuple[int, ...] | None = None  # None: one layer of ceil((d + classes) / 2)
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 42

    def __post_init__(self):
        counts = {
            "min_samples_split": self.min_samples_split,
            "n_trees": self.n_trees,
            "k": self.k,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")
        if self.hidden_layers is not None:
            object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
            if any(h < 1 for h in self.hidden_layers):
                raise ValueError("hidden layer sizes must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")

    def to_dict(self) -> dict:
        doc = asdict(self)
        if self.hidden_layers is not None:
            doc["hidden_layers"] = list(self.hidden_layers)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Hyperparameters":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**doc)

    def replace(self, **changes) -> "Hyperparameters":
        return Hyperparameters.from_dict({**self.to_dict(), **changes})


@dataclass(eq=False)
class LabeledMatrix:
    """Feature rows with driver labels; ``y`` indexes into ``class_set``."""

    X: np.ndarray
    y: np.ndarray
    class_set: tuple[str, ...]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.class_set = tuple(self.class_set)
        if self.X.ndim != 2 or self.X.shape[0] == 0:
            raise ValueError("need a non-empty 2-D feature matrix")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("one label per row required")
        if self.y.min() < 0 or self.y.max() >= len(self.class_set):
            raise ValueError("label index outside class_set")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("feature matrix contains non-finite values")

    @classmethod
    def from_labels(cls, X, labels: Sequence, class_set: Sequence[str] | None = None) -> "LabeledMatrix":
        labels = [str(v) for v in labels]
        classes = tuple(class_set) if class_set is not None else tuple(sorted(set(labels)))
        index = {c: i for i, c in enumerate(classes)}
        missing = set(labels) - set(index)
        if missing:
            raise ValueError(f"labels not in class_set: {sorted(missing)}")
        return cls(X, np.array([index[v] for v in labels], dtype=np.int64), classes)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_set)


class TrainedModel:
    """Common predict contract of the four classifier variants."""

    variant: str = ""

    def __init__(self, class_set: Sequence[str], feature_dimension: int, hyperparameters: Hyperparameters):
        self.class_set = tuple(class_set)
        self.feature_dimension = int(feature_dimension)
        self.hyperparameters = hyperparameters

    def _proba(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.feature_dimension:
            raise ValueError(
                f"expected vectors of dimension {self.feature_dimension}, got shape {X.shape}"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError("input contains non-finite values")
        return X

    def predict_proba(self, X) -> np.ndarray:
        return self._proba(self._check(X))

    def predict_index(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def predict_labels(self, X) -> np.ndarray:
        return np.array(self.class_set, dtype=object)[self.predict_index(X)]

    def params_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<{type(self).__name__} d={self.feature_dimension} classes={len(self.class_set)}>"


def predict(model: TrainedModel, v) -> tuple[str, dict[str, float]]:
    """Label and per-class probabilities for a single feature vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("predict takes a single vector")
    p = model.predict_proba(v)[0]
    return model.class_set[int(np.argmax(p))], {c: float(x) for c, x in zip(model.class_set, p)}


def default_features_per_split(d: int) -> int:
    return max(1, math.ceil(math.sqrt(d)))


def default_hidden_layers(d: int, n_classes: int) -> tuple[int, ...]:
    return (max(1, math.ceil((d + n_classes) / 2)),)
