"""One-vs-rest linear SVM trained by seeded subgradient descent.

Deterministic and dependency-free: per class, Pegasos-style updates on the
L2-regularized hinge loss over seeded shuffles. Features are standardized
with training-split statistics only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

SIGMA_FLOOR = 1e-8


@dataclass
class Standardizer:
    mean: np.ndarray
    sigma: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        mean = features.mean(axis=0)
        sigma = np.maximum(features.std(axis=0), SIGMA_FLOOR)
        return cls(mean=mean, sigma=sigma)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.sigma


@dataclass
class LinearSVM:
    weights: np.ndarray     # classes × D
    biases: np.ndarray      # classes
    classes: np.ndarray
    standardizer: Standardizer

    def decision(self, features: np.ndarray) -> np.ndarray:
        x = self.standardizer.apply(np.asarray(features, dtype=np.float64))
        return x @ self.weights.T + self.biases

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.classes[self.decision(features).argmax(axis=1)]


def train_linear_svm(features: np.ndarray, labels: np.ndarray, reg: float = 1e-3,
                     epochs: int = 60, seed: int = 0) -> LinearSVM:
    """Fit one binary hinge classifier per class on standardized features."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise InputError(f"need at least 2 classes, got {classes.size}")
    counts = np.bincount(np.searchsorted(classes, labels))
    if counts.min() < 2:
        raise InputError("need at least 2 samples per class")
    std = Standardizer.fit(features)
    x = std.apply(features)
    n, d = x.shape
    weights = np.zeros((classes.size, d))
    biases = np.zeros(classes.size)
    rng = np.random.default_rng(seed)
    for ci, cls in enumerate(classes):
        t = np.where(labels == cls, 1.0, -1.0)
        w = np.zeros(d)
        b = 0.0
        step = 0
        for _ in range(epochs):
            for i in rng.permutation(n):
                step += 1
                eta = 1.0 / (reg * step)
                margin = t[i] * (x[i] @ w + b)
                w *= max(0.0, 1.0 - eta * reg)
                if margin < 1.0:
                    w += eta * t[i] * x[i]
                    b += eta * t[i]
        weights[ci] = w
        biases[ci] = b
    return LinearSVM(weights=weights, biases=biases, classes=classes, standardizer=std)


def accuracy(model: LinearSVM, features: np.ndarray, labels: np.ndarray) -> float:
    return float((model.predict(features) == np.asarray(labels)).mean())


def per_class_accuracy(model: LinearSVM, features: np.ndarray,
                       labels: np.ndarray) -> dict[int, float]:
    pred = model.predict(features)
    labels = np.asarray(labels)
    return {int(c): float((pred[labels == c] == c).mean()) for c in model.classes}
