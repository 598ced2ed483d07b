"""Version-tagged JSON documents for trained models.

Arrays are stored as ``{"dtype", "shape", "data"}`` with base64 of the raw
little-endian bytes, which keeps large KNN training matrices compact and
exact.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from drivefp.classifiers.base import Hyperparameters, TrainedModel
from drivefp.classifiers.knn import KNNModel
from drivefp.classifiers.mlp import MLPModel
from drivefp.classifiers.tree import DecisionTreeModel, RandomForestModel

FORMAT = "drivefp-model"
VERSION = 1

_VARIANTS = {
    cls.variant: cls for cls in (DecisionTreeModel, RandomForestModel, KNNModel, MLPModel)
}


class ModelFormatError(ValueError):
    """A model document is malformed, of another version, or inconsistent."""


def _encode(obj):
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj)
        dtype = "<f8" if arr.dtype.kind == "f" else "<i8"
        return {
            "dtype": dtype,
            "shape": list(arr.shape),
            "data": base64.b64encode(arr.astype(dtype).tobytes()).decode("ascii"),
        }
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if set(obj) == {"dtype", "shape", "data"}:
            if obj["dtype"] not in ("<f8", "<i8"):
                raise ModelFormatError(f"unsupported array dtype {obj['dtype']!r}")
            raw = base64.b64decode(obj["data"], validate=True)
            arr = np.frombuffer(raw, dtype=obj["dtype"])
            native = np.float64 if obj["dtype"] == "<f8" else np.int64
            return arr.reshape(obj["shape"]).astype(native)
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def serialize_model(model: TrainedModel) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "variant": model.variant,
        "class_set": list(model.class_set),
        "feature_dimension": model.feature_dimension,
        "hyperparameters": model.hyperparameters.to_dict(),
        "params": _encode(model.params_dict()),
    }
    return json.dumps(doc, sort_keys=True)


def deserialize_model(document: str | bytes) -> TrainedModel:
    try:
        doc = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFormatError("not a drivefp model document")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    try:
        cls = _VARIANTS[doc["variant"]]
        class_set = tuple(doc["class_set"])
        d = int(doc["feature_dimension"])
        hp = Hyperparameters.from_dict(doc["hyperparameters"])
        params = _decode(doc["params"])
        if not class_set or d < 1:
            raise ValueError("empty class_set or feature_dimension < 1")
        return cls.from_params(params, class_set, d, hp)
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid model document: {exc}") from None
