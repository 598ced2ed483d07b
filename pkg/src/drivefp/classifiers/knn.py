"""Brute-force k-nearest-neighbour classifier (Euclidean distance)."""

from __future__ import annotations

import numpy as np

from drivefp.classifiers.base import Hyperparameters, LabeledMatrix, TrainedModel

_QUERY_CHUNK = 64


class KNNModel(TrainedModel):
    variant = "knn"

    def __init__(self, X: np.ndarray, y: np.ndarray, k: int, class_set, feature_dimension, hyperparameters):
        super().__init__(class_set, feature_dimension, hyperparameters)
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        self.k = int(k)
        self._sq = np.einsum("ij,ij->i", self.X, self.X)

    def kneighbors(self, Q: np.ndarray) -> np.ndarray:
        """Row indices of the k nearest training rows per query, nearest first.

        Equal distances are ordered by row index. Candidates are screened with
        the dot-product expansion and then ranked on exactly recomputed
        squared distances.
        """
        Q = self._check(Q)
        out = np.empty((Q.shape[0], self.k), dtype=np.int64)
        max_sq = float(self._sq.max())
        for start in range(0, Q.shape[0], _QUERY_CHUNK):
            q = Q[start : start + _QUERY_CHUNK]
            q_sq = np.einsum("ij,ij->i", q, q)
            approx = self._sq[None, :] - 2.0 * (q @ self.X.T) + q_sq[:, None]
            kth = np.partition(approx, self.k - 1, axis=1)[:, self.k - 1]
            slack = 1e-9 * (q_sq + max_sq) + 1e-12
            for i in range(q.shape[0]):
                cand = np.flatnonzero(approx[i] <= kth[i] + slack[i])
                exact = ((self.X[cand] - q[i]) ** 2).sum(axis=1)
                order = np.lexsort((cand, exact))[: self.k]
                out[start + i] = cand[order]
        return out

    def _proba(self, X):
        neighbors = self.kneighbors(X)
        votes = np.zeros((X.shape[0], len(self.class_set)))
        np.add.at(votes, (np.arange(X.shape[0])[:, None], self.y[neighbors]), 1.0)
        return votes / self.k

    def params_dict(self) -> dict:
        return {"k": self.k, "X": self.X, "y": self.y}

    @classmethod
    def from_params(cls, params, class_set, d, hp):
        X = np.asarray(params["X"], dtype=np.float64)
        y = np.asarray(params["y"], dtype=np.int64)
        k = int(params["k"])
        if X.ndim != 2 or X.shape[1] != d:
            raise ValueError("stored training matrix does not match feature_dimension")
        if y.shape != (X.shape[0],) or not 1 <= k <= X.shape[0]:
            raise ValueError("inconsistent knn parameters")
        if y.min() < 0 or y.max() >= len(class_set):
            raise ValueError("knn labels outside class_set")
        return cls(X, y, k, class_set, d, hp)


def train_knn(data: LabeledMatrix, hp: Hyperparameters = Hyperparameters()) -> KNNModel:
    if hp.k > data.X.shape[0]:
        raise ValueError(f"k={hp.k} exceeds the {data.X.shape[0]} training rows")
    return KNNModel(data.X, data.y, hp.k, data.class_set, data.n_features, hp)
