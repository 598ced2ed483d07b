"""Decision tree, random forest, KNN and MLP classifiers behind one contract."""

from __future__ import annotations

from typing import Callable

from drivefp.classifiers.base import (
    ALGORITHM_TITLES,
    ALGORITHMS,
    Hyperparameters,
    LabeledMatrix,
    TrainedModel,
    TrainingDivergence,
    predict,
)
from drivefp.classifiers.knn import KNNModel, train_knn
from drivefp.classifiers.mlp import MLPModel, train_mlp
from drivefp.classifiers.serialize import ModelFormatError, deserialize_model, serialize_model
from drivefp.classifiers.tree import (
    DecisionTreeModel,
    RandomForestModel,
    train_decision_tree,
    train_random_forest,
)

TRAINERS: dict[str, Callable[[LabeledMatrix, Hyperparameters], TrainedModel]] = {
    "decision_tree": train_decision_tree,
    "random_forest": train_random_forest,
    "knn": train_knn,
    "mlp": train_mlp,
}


def check_algorithms(names) -> list[str]:
    names = list(names)
    unknown = [n for n in names if n not in TRAINERS]
    if unknown:
        raise ValueError(f"unknown algorithm(s) {unknown}; valid names: {', '.join(ALGORITHMS)}")
    if not names:
        raise ValueError("no algorithms selected")
    return names


def train(algorithm: str, data: LabeledMatrix, hp: Hyperparameters = Hyperparameters()) -> TrainedModel:
    check_algorithms([algorithm])
    return TRAINERS[algorithm](data, hp)


__all__ = [
    "ALGORITHMS",
    "ALGORITHM_TITLES",
    "DecisionTreeModel",
    "Hyperparameters",
    "KNNModel",
    "LabeledMatrix",
    "MLPModel",
    "ModelFormatError",
    "RandomForestModel",
    "TRAINERS",
    "TrainedModel",
    "TrainingDivergence",
    "check_algorithms",
    "deserialize_model",
    "predict",
    "serialize_model",
    "train",
    "train_decision_tree",
    "train_knn",
    "train_mlp",
    "train_random_forest",
]
