"""Feed-forward network: sigmoid hidden layers, softmax output, cross-entropy
loss, mini-batch gradient descent with momentum."""

from __future__ import annotations

import numpy as np

from drivefp.classifiers.base import (
    Hyperparameters,
    LabeledMatrix,
    TrainedModel,
    TrainingDivergence,
    default_hidden_layers,
)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def forward(weights, biases, X):
    """Activations of every layer; the last entry holds log-probabilities."""
    acts = [X]
    a = X
    for W, b in zip(weights[:-1], biases[:-1]):
        a = sigmoid(a @ W + b)
        acts.append(a)
    acts.append(_log_softmax(a @ weights[-1] + biases[-1]))
    return acts


def loss_and_grads(weights, biases, X, y):
    """Mean cross-entropy over the batch and its gradient for each layer."""
    acts = forward(weights, biases, X)
    n = X.shape[0]
    logp = acts[-1]
    loss = -logp[np.arange(n), y].mean()
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads_w = [None] * len(weights)
    grads_b = [None] * len(biases)
    for layer in range(len(weights) - 1, -1, -1):
        a_prev = acts[layer]
        grads_w[layer] = a_prev.T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ weights[layer].T) * a_prev * (1.0 - a_prev)
    return float(loss), grads_w, grads_b


def init_params(sizes, rng: np.random.Generator):
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return weights, biases


class MLPModel(TrainedModel):
    variant = "mlp"

    def __init__(self, weights, biases, class_set, feature_dimension, hyperparameters, loss_curve=None):
        super().__init__(class_set, feature_dimension, hyperparameters)
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.loss_curve = list(loss_curve or [])

    def _proba(self, X):
        p = np.exp(forward(self.weights, self.biases, X)[-1])
        return p / p.sum(axis=1, keepdims=True)

    def params_dict(self) -> dict:
        return {"weights": self.weights, "biases": self.biases}

    @classmethod
    def from_params(cls, params, class_set, d, hp):
        weights = [np.asarray(W, dtype=np.float64) for W in params["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in params["biases"]]
        if not weights or len(weights) != len(biases):
            raise ValueError("mlp needs matching weight and bias lists")
        fan_in = d
        for W, b in zip(weights, biases):
            if W.ndim != 2 or W.shape[0] != fan_in or b.shape != (W.shape[1],):
                raise ValueError("mlp weight shapes are inconsistent with feature_dimension")
            fan_in = W.shape[1]
        if fan_in != len(class_set):
            raise ValueError("mlp output layer does not match class_set")
        return cls(weights, biases, class_set, d, hp)


def train_mlp(data: LabeledMatrix, hp: Hyperparameters = Hyperparameters()) -> MLPModel:
    rng = np.random.default_rng(hp.seed)
    hidden = hp.hidden_layers or default_hidden_layers(data.n_features, data.n_classes)
    sizes = [data.n_features, *hidden, data.n_classes]
    weights, biases = init_params(sizes, rng)
    vel_w = [np.zeros_like(W) for W in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    n = data.X.shape[0]
    curve = []
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hp.batch_size):
            batch = order[start : start + hp.batch_size]
            loss, gw, gb = loss_and_grads(weights, biases, data.X[batch], data.y[batch])
            if not np.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}")
            total += loss * len(batch)
            for i in range(len(weights)):
                vel_w[i] = hp.momentum * vel_w[i] - hp.learning_rate * gw[i]
                vel_b[i] = hp.momentum * vel_b[i] - hp.learning_rate * gb[i]
                weights[i] += vel_w[i]
                biases[i] += vel_b[i]
        curve.append(total / n)
    return MLPModel(weights, biases, data.class_set, data.n_features, hp, curve)
