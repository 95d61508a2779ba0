"""Classical comparators: softmax regression and k-NN on pooled features,
plus a forward-only LSTM trained with the same loop as the Bi-LSTM."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import RunConfig
from .errors import KTooLarge
from .features import FeatureSequence
from .nn_core import softmax
from . import train_eval

L2_PENALTY = 1e-4


def pool(seq: FeatureSequence, aux=None) -> np.ndarray:
    """Column means, column (population) stds, then aux-descriptor means."""
    x = np.asarray(seq.x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("pooling needs at least two frames")
    aux = seq.aux if aux is None else aux
    parts = [x.mean(axis=0), x.std(axis=0)]
    if aux is not None:
        parts.append(np.asarray(aux, dtype=np.float64).mean(axis=0))
    return np.concatenate(parts)


@dataclass
class Standardizer:
    mu: np.ndarray
    sigma: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        return cls(X.mean(axis=0), X.std(axis=0))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mu) / np.maximum(self.sigma, 1e-8)


# --- multinomial logistic regression ------------------------------------------


@dataclass
class LogRegWeights:
    W: np.ndarray  # (n_features, n_classes)
    b: np.ndarray


def logreg_loss(weights: LogRegWeights, X, y, l2: float = L2_PENALTY) -> float:
    probs = softmax(X @ weights.W + weights.b)
    nll = -np.log(np.maximum(probs[np.arange(len(y)), y], 1e-12)).mean()
    return float(nll + 0.5 * l2 * np.sum(weights.W ** 2))


def logreg_train(X, y, n_classes: int, epochs: int = 500, lr: float = 0.1,
                 l2: float = L2_PENALTY, history: list | None = None) -> LogRegWeights:
    """Full-batch gradient descent on mean cross-entropy + ``l2/2 * ||W||^2``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    weights = LogRegWeights(np.zeros((X.shape[1], n_classes)), np.zeros(n_classes))
    onehot = np.eye(n_classes)[y]
    for _ in range(epochs):
        if history is not None:
            history.append(logreg_loss(weights, X, y, l2))
        err = (softmax(X @ weights.W + weights.b) - onehot) / len(X)
        weights.W -= lr * (X.T @ err + l2 * weights.W)
        weights.b -= lr * err.sum(axis=0)
    return weights


def logreg_predict(weights: LogRegWeights, X) -> np.ndarray:
    scores = np.atleast_2d(X) @ weights.W + weights.b
    return np.argmax(scores, axis=1)


# --- k nearest neighbours -----------------------------------------------------


def knn_predict(train_X, train_y, query, k: int = 10, n_classes: int | None = None) -> int:
    """Majority label of the ``k`` nearest training points (Euclidean).

    Equal distances keep dataset order; a tied vote goes to the lowest class.
    """
    train_X = np.asarray(train_X, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > len(train_X):
        raise KTooLarge(f"k={k} exceeds training set size {len(train_X)}")
    dist = np.sum((train_X - np.asarray(query, dtype=np.float64)) ** 2, axis=1)
    nearest = np.argsort(dist, kind="stable")[:k]
    n_classes = n_classes or int(train_y.max()) + 1
    votes = np.bincount(train_y[nearest], minlength=n_classes)
    return int(np.argmax(votes))


# --- unidirectional LSTM -----------------------------------------------------


def unilstm_train(train_set, val_set, labels, config: RunConfig, history_path=None):
    """Same pipeline as the Bi-LSTM with the backward direction removed."""
    return train_eval.train(train_set, val_set, labels, config, bidirectional=False,
                            history_path=history_path)


# --- comparative study -------------------------------------------------------


@dataclass
class ComparisonRow:
    model: str
    test_accuracy: float


@dataclass
class Comparison:
    rows: list[ComparisonRow]
    split_hash: str
    seed: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("model,test_accuracy,split_hash,seed\n")
        for r in self.rows:
            buf.write(f"{r.model},{r.test_accuracy:.6f},{self.split_hash},{self.seed}\n")
        return buf.getvalue()

    def format_table(self) -> str:
        width = max(len(r.model) for r in self.rows)
        lines = [f"{'Model':<{width}}  Accuracy", "-" * (width + 10)]
        lines += [f"{r.model:<{width}}  {100 * r.test_accuracy:7.2f}%" for r in self.rows]
        return "\n".join(lines)

    def accuracy(self, model: str) -> float:
        return next(r.test_accuracy for r in self.rows if r.model == model)


def _pooled(seqs: Sequence[FeatureSequence], labels: Sequence[str]):
    X = np.stack([pool(s) for s in seqs])
    y = np.array([labels.index(s.label) for s in seqs], dtype=np.int64)
    return X, y


def compare(train_set, val_set, test_set, labels, config: RunConfig, split_hash: str) -> Comparison:
    """Train every model on one shared split and report test accuracy."""
    labels = list(labels)
    Xtr, ytr = _pooled(train_set, labels)
    Xte, yte = _pooled(test_set, labels)
    scale = Standardizer.fit(Xtr)
    Xtr, Xte = scale(Xtr), scale(Xte)

    weights = logreg_train(Xtr, ytr, len(labels), config.logreg_epochs, config.logreg_lr)
    logreg_acc = float(np.mean(logreg_predict(weights, Xte) == yte))

    k = min(config.knn_k, len(Xtr))
    knn_pred = np.array([knn_predict(Xtr, ytr, q, k, len(labels)) for q in Xte])
    knn_acc = float(np.mean(knn_pred == yte))

    rows = [ComparisonRow("Logistic Regression", logreg_acc),
            ComparisonRow(f"K-NN(n={k})", knn_acc)]
    for name, bi in (("LSTM", False), ("Bi-LSTM", True)):
        result = train_eval.train(train_set, val_set, labels, config, bidirectional=bi)
        report = train_eval.evaluate(result.params, result.norm, test_set, labels)
        rows.append(ComparisonRow(name, report.accuracy))
    return Comparison(rows, split_hash, config.seed)

