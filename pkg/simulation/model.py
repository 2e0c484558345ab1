"""
One-hidden-layer MLP (ReLU, softmax output) kept as a flat parameter vector.

The federated loop only ever sees flat vectors; the layer shapes travel
alongside as metadata so flatten/unflatten round-trip exactly.
"""
from dataclasses import dataclass

import numpy as np

from simulation.errors import InvalidArgumentError


@dataclass(frozen=True)
class ModelShape:
    """Layer sizes of the MLP."""
    n_inputs: int
    n_hidden: int
    n_classes: int

    @property
    def sizes(self):
        return (
            self.n_inputs * self.n_hidden,
            self.n_hidden,
            self.n_hidden * self.n_classes,
            self.n_classes,
        )

    @property
    def n_params(self):
        return int(sum(self.sizes))


@dataclass(eq=False)
class ModelParams:
    """
    Flat parameter vector w plus its shape metadata.

    Attributes:
        shape: ModelShape
        w: Real vector of length shape.n_params
    """
    shape: ModelShape
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.shape != (self.shape.n_params,):
            raise InvalidArgumentError(f"expected {self.shape.n_params} parameters, got shape {self.w.shape}")
        if not np.all(np.isfinite(self.w)):
            raise InvalidArgumentError("model parameters must be finite")

    @property
    def dimension(self):
        return self.shape.n_params

    def copy(self):
        return ModelParams(self.shape, self.w.copy())

    def unflatten(self):
        return unflatten(self.shape, self.w)


def init_model(shape, rng):
    """He-initialized weights, zero biases."""
    W1 = rng.standard_normal((shape.n_inputs, shape.n_hidden)) * np.sqrt(2.0 / shape.n_inputs)
    W2 = rng.standard_normal((shape.n_hidden, shape.n_classes)) * np.sqrt(2.0 / shape.n_hidden)
    return ModelParams(shape, flatten(W1, np.zeros(shape.n_hidden), W2, np.zeros(shape.n_classes)))


def flatten(W1, b1, W2, b2):
    return np.concatenate([W1.ravel(), b1.ravel(), W2.ravel(), b2.ravel()])


def unflatten(shape, w):
    """Split a flat vector into (W1, b1, W2, b2)."""
    s1, s2, s3, _ = shape.sizes
    W1 = w[:s1].reshape(shape.n_inputs, shape.n_hidden)
    b1 = w[s1:s1 + s2]
    W2 = w[s1 + s2:s1 + s2 + s3].reshape(shape.n_hidden, shape.n_classes)
    b2 = w[s1 + s2 + s3:]
    return W1, b1, W2, b2


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=1, keepdims=True)


def forward(shape, w, X):
    """
    Forward pass.

    Returns:
        Tuple of (hidden pre-activation, hidden activation, class probabilities)
    """
    W1, b1, W2, b2 = unflatten(shape, w)
    pre = X @ W1 + b1
    hidden = np.maximum(pre, 0.0)
    return pre, hidden, softmax(hidden @ W2 + b2)


def loss(shape, w, X, y):
    """Mean cross-entropy over the batch."""
    _, _, probs = forward(shape, w, X)
    picked = probs[np.arange(X.shape[0]), y]
    return float(-np.mean(np.log(np.clip(picked, 1e-300, None))))


def gradient(shape, w, X, y):
    """
    Backprop gradient of the mean cross-entropy.

    Args:
        shape: ModelShape
        w: Flat parameters
        X: n x n_inputs batch
        y: Integer labels

    Returns:
        Flat gradient vector
    """
    W2 = unflatten(shape, w)[2]
    pre, hidden, probs = forward(shape, w, X)
    n = X.shape[0]
    error = probs
    error[np.arange(n), y] -= 1.0
    error /= n

    dW2 = hidden.T @ error
    db2 = error.sum(axis=0)
    dhidden = error @ W2.T
    dhidden[pre <= 0] = 0.0
    dW1 = X.T @ dhidden
    db1 = dhidden.sum(axis=0)
    return flatten(dW1, db1, dW2, db2)


def predict(shape, w, X):
    _, _, probs = forward(shape, w, X)
    return np.argmax(probs, axis=1)


def accuracy(model, X, y):
    """Fraction of correctly classified samples."""
    if X.shape[0] == 0:
        return 0.0
    return float(np.mean(predict(model.shape, model.w, X) == y))
