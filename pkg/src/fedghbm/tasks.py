"""Differentiable learning tasks standing in for the clients' local objectives.

Three task kinds are provided:

* :class:`QuadraticRegression` -- least squares fit of ``(a, b, c)`` in
  ``y = a x^2 + b x + c``; features ``(x^2, x, 1)`` are built on the fly.
* :class:`LogisticRegression` -- multinomial softmax regression.
* :class:`Mlp` -- one tanh hidden layer followed by softmax cross-entropy.

Every loss is the *mean* over the rows selected by a batch, and every gradient
is the analytic gradient of that mean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError
from .params import ParamVector


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: Optional[int] = None  # None for regression

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        if self.n_classes is None:
            labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        else:
            labels = np.asarray(self.labels).reshape(-1).astype(np.int64)
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise ValueError("classification labels must lie in [0, n_classes)")
        if features.shape[0] != labels.shape[0]:
            raise DimensionError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def d_in(self) -> int:
        return int(self.features.shape[1])

    @property
    def is_classification(self) -> bool:
        return self.n_classes is not None

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.n_classes == other.n_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


def _batch_rows(data: Dataset, batch) -> np.ndarray:
    if batch is None:
        return np.arange(data.n)
    idx = np.asarray(batch, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ValueError("empty batch")
    if idx.min() < 0 or idx.max() >= data.n:
        raise IndexError("batch index out of range")
    return idx


class Task:
    """Common interface; subclasses implement ``_loss_grad``."""

    kind: str = ""
    is_classification = False

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def init_params(self, seed: int = 0) -> ParamVector:
        return np.zeros(self.dim)

    def _check(self, theta: ParamVector) -> None:
        if theta.ndim != 1 or theta.shape[0] != self.dim:
            raise DimensionError(
                f"{self.kind}: expected parameter dim {self.dim}, got {theta.shape}"
            )

    def _loss_grad(self, theta, X, y, need_grad):
        raise NotImplementedError

    def loss(self, theta, data: Dataset, batch=None) -> float:
        self._check(theta)
        rows = _batch_rows(data, batch)
        value, _ = self._loss_grad(theta, data.features[rows], data.labels[rows], False)
        return value

    def grad(self, theta, data: Dataset, batch=None) -> ParamVector:
        self._check(theta)
        rows = _batch_rows(data, batch)
        _, g = self._loss_grad(theta, data.features[rows], data.labels[rows], True)
        return g

    def predict(self, theta, X) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class QuadraticRegression(Task):
    kind = "quadratic"

    @property
    def dim(self) -> int:
        return 3

    @staticmethod
    def design(X) -> np.ndarray:
        x = X[:, 0]
        return np.stack([x * x, x, np.ones_like(x)], axis=1)

    def predict(self, theta, X):
        return self.design(X) @ theta

    def _loss_grad(self, theta, X, y, need_grad):
        phi = self.design(X)
        r = phi @ theta - y
        value = 0.5 * float(np.mean(r * r))
        g = phi.T @ r / len(y) if need_grad else None
        return value, g

    def to_dict(self):
        return {"kind": self.kind}


class LogisticRegression(Task):
    kind = "logistic"
    is_classification = True

    def __init__(self, n_classes: int, d_in: int):
        if n_classes < 2 or d_in < 1:
            raise ValueError("logistic regression needs n_classes >= 2 and d_in >= 1")
        self.n_classes = int(n_classes)
        self.d_in = int(d_in)

    @property
    def dim(self):
        return self.n_classes * self.d_in + self.n_classes

    def _unpack(self, theta):
        k, d = self.n_classes, self.d_in
        return theta[: k * d].reshape(k, d), theta[k * d :]

    def predict(self, theta, X):
        W, b = self._unpack(theta)
        return X @ W.T + b

    def _loss_grad(self, theta, X, y, need_grad):
        logits = self.predict(theta, X)
        value, dlogits = _softmax_xent(logits, y, need_grad)
        if not need_grad:
            return value, None
        gW = dlogits.T @ X
        gb = dlogits.sum(axis=0)
        return value, np.concatenate([gW.reshape(-1), gb])

    def to_dict(self):
        return {"kind": self.kind, "n_classes": self.n_classes, "d_in": self.d_in}


class Mlp(Task):
    kind = "mlp"
    is_classification = True

    def __init__(self, d_in: int, hidden: int, n_classes: int):
        if n_classes < 2 or d_in < 1 or hidden < 1:
            raise ValueError("invalid MLP shape")
        self.d_in = int(d_in)
        self.hidden = int(hidden)
        self.n_classes = int(n_classes)

    @property
    def dim(self):
        d, h, k = self.d_in, self.hidden, self.n_classes
        return h * d + h + k * h + k

    def _unpack(self, theta):
        d, h, k = self.d_in, self.hidden, self.n_classes
        o = 0
        W1 = theta[o : o + h * d].reshape(h, d)
        o += h * d
        b1 = theta[o : o + h]
        o += h
        W2 = theta[o : o + k * h].reshape(k, h)
        o += k * h
        b2 = theta[o : o + k]
        return W1, b1, W2, b2

    def init_params(self, seed=0):
        # Glorot-uniform weights, zero biases.
        rng = np.random.default_rng(seed)
        d, h, k = self.d_in, self.hidden, self.n_classes
        s1 = math.sqrt(6.0 / (d + h))
        s2 = math.sqrt(6.0 / (h + k))
        return np.concatenate(
            [
                rng.uniform(-s1, s1, size=h * d),
                np.zeros(h),
                rng.uniform(-s2, s2, size=k * h),
                np.zeros(k),
            ]
        )

    def predict(self, theta, X):
        W1, b1, W2, b2 = self._unpack(theta)
        return np.tanh(X @ W1.T + b1) @ W2.T + b2

    def _loss_grad(self, theta, X, y, need_grad):
        W1, b1, W2, b2 = self._unpack(theta)
        H = np.tanh(X @ W1.T + b1)
        logits = H @ W2.T + b2
        value, dlogits = _softmax_xent(logits, y, need_grad)
        if not need_grad:
            return value, None
        gW2 = dlogits.T @ H
        gb2 = dlogits.sum(axis=0)
        dpre = (dlogits @ W2) * (1.0 - H * H)
        gW1 = dpre.T @ X
        gb1 = dpre.sum(axis=0)
        return value, np.concatenate(
            [gW1.reshape(-1), gb1, gW2.reshape(-1), gb2]
        )

    def to_dict(self):
        return {
            "kind": self.kind,
            "d_in": self.d_in,
            "hidden": self.hidden,
            "n_classes": self.n_classes,
        }


def _softmax_xent(logits, y, need_grad):
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    value = float(np.mean(lse - shifted[rows, y]))
    if not need_grad:
        return value, None
    p = np.exp(shifted - lse[:, None])
    p[rows, y] -= 1.0
    return value, p / n


def make_task(spec: dict) -> Task:
    kind = spec["kind"]
    if kind == "quadratic":
        return QuadraticRegression()
    if kind == "logistic":
        return LogisticRegression(spec["n_classes"], spec["d_in"])
    if kind == "mlp":
        return Mlp(spec["d_in"], spec["hidden"], spec["n_classes"])
    raise ValueError(f"unknown task kind {kind!r}")


# Functional surface -------------------------------------------------------


def loss(task: Task, theta, data: Dataset, batch=None) -> float:
    return task.loss(theta, data, batch)


def grad(task: Task, theta, data: Dataset, batch=None) -> ParamVector:
    return task.grad(theta, data, batch)


def finite_diff_grad(task: Task, theta, data: Dataset, batch=None, h: float = 1e-5):
    """Central-difference gradient, one coordinate at a time."""
    if h == 0:
        raise ZeroDivisionError("finite-difference step h must be non-zero")
    if h < 0:
        raise ValueError("finite-difference step h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for k in range(theta.shape[0]):
        plus = theta.copy()
        minus = theta.copy()
        plus[k] += h
        minus[k] -= h
        out[k] = (task.loss(plus, data, batch) - task.loss(minus, data, batch)) / (2 * h)
    return out


def evaluate(task: Task, theta, data: Dataset):
    """Full-dataset mean loss and top-1 accuracy (``None`` for regression)."""
    value = task.loss(theta, data)
    if not task.is_classification:
        return value, None
    # argmax returns the lowest index among ties
    pred = np.argmax(task.predict(theta, data.features), axis=1)
    return value, float(np.mean(pred == data.labels))


# Generators ---------------------------------------------------------------


def generate_quadratic_dataset(
    n: int = 6400,
    x_low: float = -10.0,
    x_high: float = 10.0,
    coeffs: Sequence[float] = (10.0, 5.0, -1.0),
    noise_std: float = 0.0,
    seed: int = 0,
) -> Dataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not x_low < x_high:
        raise ValueError(f"invalid range [{x_low}, {x_high}]")
    a, b, c = coeffs
    x = np.linspace(x_low, x_high, n)
    y = a * x * x + b * x + c
    if noise_std > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_std, size=n)
    return Dataset(x[:, None], y)


def generate_synthetic_classification(
    n: int,
    d_in: int,
    n_classes: int,
    cluster_spread: float = 1.0,
    seed: int = 0,
    center_scale: float = 1.0,
) -> Dataset:
    """Gaussian clusters, one per class, with balanced class counts."""
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(n_classes, d_in))
    labels = rng.permutation(np.arange(n) % n_classes)
    X = centers[labels] + cluster_spread * rng.standard_normal((n, d_in))
    return Dataset(X, labels, n_classes)


# CSV snapshots ------------------------------------------------------------


def save_dataset_csv(data: Dataset, path) -> None:
    label_col = "label" if data.is_classification else "y"
    header = [f"x{j}" for j in range(data.d_in)] + [label_col]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row, lab in zip(data.features, data.labels):
            cells = [repr(float(v)) for v in row]
            cells.append(str(int(lab)) if data.is_classification else repr(float(lab)))
            w.writerow(cells)


def load_dataset_csv(path, n_classes: Optional[int] = None) -> Dataset:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    arr = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    X, y = arr[:, :-1], arr[:, -1]
    if header[-1] == "label":
        y = y.astype(np.int64)
        if n_classes is None:
            n_classes = int(y.max()) + 1
        return Dataset(X, y, n_classes)
    return Dataset(X, y)
