"""Synthetic per-client tasks: data generation, gradients, and optima.

Two task families are supported. Linear regression has closed-form
population gradients and a closed-form weighted optimum, which makes it the
vehicle for every analytic diagnostic. Classification is a linear softmax
model on a Gaussian mixture; it has no closed-form optimum and is evaluated
through train/test metrics instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schedules import LimitingWeights


class ZeroSignal(ValueError):
    """SNR conversion requested for a zero true-weight vector."""


class EmptyBatch(ValueError):
    """A gradient was requested over an empty batch."""


class SingularSystem(ValueError):
    """The weighted optimum is undefined (zero total weight)."""


# ---------------------------------------------------------------------------
# linear regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionTask:
    """Client data model y = x.w_true + eps, x ~ N(0, sigma_x^2 I)."""

    w_true: np.ndarray
    sigma_x: float
    sigma_eps: float
    n_samples: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "w_true", np.asarray(self.w_true, dtype=float))
        if self.sigma_x <= 0:
            raise ValueError("sigma_x must be positive")
        if self.sigma_eps < 0:
            raise ValueError("sigma_eps must be nonnegative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.w_true.ndim != 1 or self.w_true.size < 1:
            raise ValueError("w_true must be a nonempty vector")

    @property
    def dim(self) -> int:
        return self.w_true.size


@dataclass
class RegressionDataset:
    features: np.ndarray  # (n_samples, dim)
    targets: np.ndarray  # (n_samples,)

    def __post_init__(self) -> None:
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("features and targets disagree on sample count")

    def __len__(self) -> int:
        return self.targets.shape[0]


def noise_sigma_from_snr(sigma_x: float, w_true: np.ndarray, snr_db: float) -> float:
    """Noise std achieving the requested SNR in dB.

    Signal power for x ~ N(0, sigma_x^2 I) is E[(x.w)^2] = sigma_x^2 |w|^2,
    so sigma_eps = sigma_x |w| / 10^(snr_db/20).
    """
    norm = float(np.linalg.norm(w_true))
    if norm == 0.0:
        raise ZeroSignal("true weight vector has zero norm; SNR is undefined")
    return sigma_x * norm / 10.0 ** (snr_db / 20.0)


def generate_regression_data(task: RegressionTask, rng: np.random.Generator) -> RegressionDataset:
    """Draw the client's fixed dataset of IID (x, y) pairs."""
    x = rng.normal(0.0, task.sigma_x, size=(task.n_samples, task.dim))
    eps = rng.normal(0.0, task.sigma_eps, size=task.n_samples) if task.sigma_eps > 0 else np.zeros(task.n_samples)
    y = x @ task.w_true + eps
    return RegressionDataset(features=x, targets=y)


def regression_sample_grad(w: np.ndarray, x: np.ndarray, y: float) -> np.ndarray:
    """Gradient of the squared loss (y - x.w)^2 at a single sample."""
    return -2.0 * x * (y - x @ w)


def regression_minibatch_grad(
    w: np.ndarray, dataset: RegressionDataset, batch_indices: np.ndarray
) -> np.ndarray:
    """Mean of the per-sample gradients over the given batch indices."""
    idx = np.asarray(batch_indices)
    if idx.size == 0:
        raise EmptyBatch("mini-batch gradient over an empty batch")
    xb = dataset.features[idx]
    rb = dataset.targets[idx] - xb @ w
    return (-2.0 / idx.size) * (xb.T @ rb)


def regression_population_h(task: RegressionTask, w: np.ndarray) -> np.ndarray:
    """Exact negative population gradient, 2 sigma_x^2 (w_true - w)."""
    return 2.0 * task.sigma_x**2 * (task.w_true - np.asarray(w, dtype=float))


def closed_form_optimum(tasks: list[RegressionTask], p: LimitingWeights | np.ndarray) -> np.ndarray:
    """Zero of the p-weighted population gradient sum.

    With isotropic Gaussian features the weighted least-squares optimum is
    (sum_i p_i sigma_i^2)^-1 * sum_i p_i sigma_i^2 w_true_i.
    """
    weights = p.p if isinstance(p, LimitingWeights) else np.asarray(p, dtype=float)
    if len(weights) != len(tasks):
        raise ValueError("one weight per task is required")
    coeff = np.array([pi * t.sigma_x**2 for pi, t in zip(weights, tasks)])
    total = coeff.sum()
    if total <= 0.0:
        raise SingularSystem("weighted sum of feature variances is zero")
    stacked = np.stack([t.w_true for t in tasks])
    return (coeff @ stacked) / total


# ---------------------------------------------------------------------------
# linear softmax classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SoftmaxTask:
    """Gaussian-mixture classes with a shared isotropic feature noise."""

    class_means: np.ndarray  # (K, dim)
    sigma_x: float
    n_samples: int

    def __post_init__(self) -> None:
        means = np.asarray(self.class_means, dtype=float)
        object.__setattr__(self, "class_means", means)
        if means.ndim != 2 or means.shape[0] < 2:
            raise ValueError("need at least two class means")
        if len({tuple(row) for row in means}) != means.shape[0]:
            raise ValueError("class means must be pairwise distinct")
        if self.sigma_x <= 0:
            raise ValueError("sigma_x must be positive")

    @property
    def n_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]


@dataclass
class SoftmaxParams:
    """Linear classifier logits z = W x + b."""

    W: np.ndarray  # (K, dim)
    b: np.ndarray  # (K,)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b])

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_classes: int, dim: int) -> "SoftmaxParams":
        expected = n_classes * dim + n_classes
        if vec.size != expected:
            raise ValueError(f"parameter vector has size {vec.size}, expected {expected}")
        return cls(W=vec[: n_classes * dim].reshape(n_classes, dim), b=vec[n_classes * dim :])


def softmax(z: np.ndarray) -> np.ndarray:
    """Probability vector exp(z_r)/sum exp(z_j), stabilized by max-subtraction."""
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(params: SoftmaxParams, x: np.ndarray, y: int) -> float:
    """Negative log-probability of the true class under the linear model."""
    z = params.W @ x + params.b
    shifted = z - z.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[y])


def softmax_minibatch_grad(
    params: SoftmaxParams, batch_x: np.ndarray, batch_y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Mean gradients (dW, db) of the cross-entropy loss over a batch.

    Per sample, dW = (s - e(y)) x^T and db = s - e(y) with s the softmax
    probabilities of the sample's logits.
    """
    if batch_x.shape[0] == 0:
        raise EmptyBatch("softmax gradient over an empty batch")
    m = batch_x.shape[0]
    probs = softmax(batch_x @ params.W.T + params.b)  # (m, K)
    probs[np.arange(m), batch_y] -= 1.0
    return (probs.T @ batch_x) / m, probs.mean(axis=0)


def generate_classification_data(
    task: SoftmaxTask, class_proportions: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw labeled samples: y ~ proportions, x ~ N(class_means[y], sigma_x^2 I)."""
    props = np.asarray(class_proportions, dtype=float)
    if props.shape != (task.n_classes,):
        raise ValueError("one proportion per class is required")
    if abs(props.sum() - 1.0) > 1e-9 or np.any(props < 0):
        raise ValueError("class proportions must be a probability vector")
    y = rng.choice(task.n_classes, size=task.n_samples, p=props)
    x = task.class_means[y] + rng.normal(0.0, task.sigma_x, size=(task.n_samples, task.dim))
    return x, y


def softmax_dataset_metrics(params: SoftmaxParams, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) of the model over a labeled set."""
    logits = x @ params.W.T + params.b
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(len(y)), y]))
    acc = float(np.mean(logits.argmax(axis=1) == y))
    return loss, acc


# ---------------------------------------------------------------------------
# client adapters used by the engine
# ---------------------------------------------------------------------------


@dataclass
class RegressionClient:
    """A client's regression task with its materialized dataset.

    Mini-batches are index draws with replacement from the fixed dataset, so
    the exact conditional mean of the stochastic gradient is the full-dataset
    gradient; it is precomputed in Gram form for the noise diagnostics.
    """

    task: RegressionTask
    data: RegressionDataset
    _gram: np.ndarray = field(init=False, repr=False)
    _cross: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.data)
        self._gram = self.data.features.T @ self.data.features / n
        self._cross = self.data.features.T @ self.data.targets / n

    @property
    def dim(self) -> int:
        return self.task.dim

    def minibatch_grad(self, w: np.ndarray, rng: np.random.Generator, m: int) -> np.ndarray:
        idx = rng.integers(0, len(self.data), size=m)
        return regression_minibatch_grad(w, self.data, idx)

    def full_gradient(self, w: np.ndarray) -> np.ndarray:
        """Exact mean gradient over the fixed dataset."""
        return -2.0 * (self._cross - self._gram @ w)

    def population_h(self, w: np.ndarray) -> np.ndarray:
        return regression_population_h(self.task, w)


@dataclass
class SoftmaxClient:
    """A client's classification data behind the flat-vector interface."""

    task: SoftmaxTask
    x: np.ndarray
    y: np.ndarray

    @property
    def dim(self) -> int:
        return self.task.n_classes * self.task.dim + self.task.n_classes

    def _unpack(self, w: np.ndarray) -> SoftmaxParams:
        return SoftmaxParams.from_vector(w, self.task.n_classes, self.task.dim)

    def minibatch_grad(self, w: np.ndarray, rng: np.random.Generator, m: int) -> np.ndarray:
        idx = rng.integers(0, len(self.y), size=m)
        dw, db = softmax_minibatch_grad(self._unpack(w), self.x[idx], self.y[idx])
        return np.concatenate([dw.ravel(), db])

    def local_metrics(self, w: np.ndarray) -> tuple[float, float]:
        return softmax_dataset_metrics(self._unpack(w), self.x, self.y)


@dataclass
class ClassificationEval:
    """Held-out evaluation context shared by all rounds of a run."""

    task: SoftmaxTask
    test_x: np.ndarray
    test_y: np.ndarray
    rare_class: int

    def evaluate(self, w: np.ndarray, clients: list[SoftmaxClient]) -> dict[str, float]:
        params = SoftmaxParams.from_vector(w, self.task.n_classes, self.task.dim)
        test_loss, test_acc = softmax_dataset_metrics(params, self.test_x, self.test_y)
        local = [c.local_metrics(w) for c in clients]
        out = {
            "train_loss": float(np.mean([m[0] for m in local])) if local else float("nan"),
            "train_acc": float(np.mean([m[1] for m in local])) if local else float("nan"),
            "test_loss": test_loss,
            "test_acc": test_acc,
        }
        if self.rare_class >= 0:
            mask = self.test_y == self.rare_class
            logits = self.test_x[mask] @ params.W.T + params.b
            out["rare_class_acc"] = float(np.mean(logits.argmax(axis=1) == self.rare_class))
        return out

    def majority_baseline(self) -> float:
        """Accuracy of always predicting the most frequent test class."""
        return float(np.bincount(self.test_y).max() / len(self.test_y))
