"""Differentiable objectives with hand-written gradients.

Every objective exposes ``dim``, ``loss(theta, batch=None)``,
``grad(theta, batch=None)`` and ``loss_grad(theta, batch=None)``.  Analytic
landscapes ignore ``batch``; the classifier reads it as an index array into
its dataset (``None`` means the full set).
"""
import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericInputError

__all__ = [
    "Objective", "Quadratic", "DoubleWell", "Rosenbrock", "NoisyGradient",
    "Activation", "MlpSpec", "MlpClassifier", "quadratic", "double_well",
    "rosenbrock", "mlp_classifier", "finite_difference_grad", "relative_error",
    "DOUBLE_WELL_OFFSET_BOUND",
]


class Objective:
    """Base class. Subclasses implement :meth:`loss_grad`."""

    dim: int
    #: number of data samples for dataset-backed objectives, else None
    n_samples = None
    #: True when ``batch`` selects a random gradient realisation
    stochastic = False
    lower_bound = -math.inf

    def loss_grad(self, theta, batch=None):
        raise NotImplementedError

    def loss(self, theta, batch=None):
        return self.loss_grad(theta, batch)[0]

    def grad(self, theta, batch=None):
        return self.loss_grad(theta, batch)[1]

    def _check(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ContractError(f"expected theta of shape ({self.dim},), got {theta.shape}")
        return theta


class Quadratic(Objective):
    """``L = 0.5 * sum(lam_i * theta_i**2)``; minimum 0 at the origin."""

    lower_bound = 0.0

    def __init__(self, curvatures):
        lam = np.asarray(curvatures, dtype=np.float64).reshape(-1)
        if lam.size == 0 or not np.all(lam > 0) or not np.all(np.isfinite(lam)):
            raise ConfigError("quadratic curvatures must be positive and finite", ["curvatures"])
        self.curvatures = lam
        self.dim = lam.size

    def loss_grad(self, theta, batch=None):
        theta = self._check(theta)
        g = self.curvatures * theta
        return 0.5 * float(theta @ g), g


#: the cubic 4x^3 - 4x + c keeps three real roots iff |c| < 8 / (3 sqrt 3)
DOUBLE_WELL_OFFSET_BOUND = 8.0 / (3.0 * math.sqrt(3.0))


class DoubleWell(Objective):
    """Separable tilted double well ``sum((x**2 - 1)**2 + offset * x)``.

    For ``offset > 0`` the well near ``x = -1`` is the global one and the
    well near ``x = +1`` is a strictly higher local minimum.
    """

    def __init__(self, offset, dim=1):
        if not abs(offset) < DOUBLE_WELL_OFFSET_BOUND:
            raise ConfigError(
                f"|offset| must be below {DOUBLE_WELL_OFFSET_BOUND:.6f} for two wells", ["offset"])
        if dim < 1:
            raise ConfigError("dim must be positive", ["dim"])
        self.offset = float(offset)
        self.dim = int(dim)
        roots = np.sort(np.roots([4.0, 0.0, -4.0, self.offset]).real)
        self.lower_bound = dim * float(self._loss1(roots[0]))

    def _loss1(self, x):
        return (x * x - 1.0) ** 2 + self.offset * x

    def loss_grad(self, theta, batch=None):
        x = self._check(theta)
        g = 4.0 * x * (x * x - 1.0) + self.offset
        return float(np.sum(self._loss1(x))), g

    def stationary_points(self):
        """Left minimum, barrier top and right minimum of one coordinate."""
        return np.sort(np.roots([4.0, 0.0, -4.0, self.offset]).real)


class Rosenbrock(Objective):
    """``sum(100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2)``; minimum 0 at all-ones."""

    lower_bound = 0.0

    def __init__(self, dim=2):
        if dim < 2:
            raise ConfigError("rosenbrock needs dim >= 2", ["dim"])
        self.dim = int(dim)

    def loss_grad(self, theta, batch=None):
        x = self._check(theta)
        head, tail = x[:-1], x[1:]
        r = tail - head ** 2
        loss = float(np.sum(100.0 * r ** 2 + (1.0 - head) ** 2))
        g = np.zeros_like(x)
        g[:-1] = -400.0 * head * r - 2.0 * (1.0 - head)
        g[1:] += 200.0 * r
        return loss, g


class NoisyGradient(Objective):
    """Adds seeded Gaussian noise of scale ``sigma`` to a deterministic gradient.

    Models mini-batch gradient noise on analytic landscapes.  ``batch`` is an
    integer seed or a ``numpy.random.Generator`` to draw from;
    ``batch=None`` returns the clean loss and gradient.  The reported loss is
    always the clean one.
    """

    stochastic = True

    def __init__(self, objective, sigma):
        if not sigma >= 0:
            raise ConfigError("noise scale must be non-negative", ["noise"])
        self.base = objective
        self.sigma = float(sigma)
        self.dim = objective.dim
        self.lower_bound = objective.lower_bound

    def loss_grad(self, theta, batch=None):
        loss, g = self.base.loss_grad(theta)
        if batch is not None and self.sigma > 0:
            rng = batch if isinstance(batch, np.random.Generator) else np.random.default_rng(batch)
            g = g + self.sigma * rng.standard_normal(self.dim)
        return loss, g


# -- softmax classifier ------------------------------------------------------

class Activation(str, enum.Enum):
    TANH = "tanh"
    RELU = "relu"


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected softmax classifier.

    Flat parameter layout (frozen): for each layer in order, the weight matrix
    of shape ``(fan_in, fan_out)`` in row-major order, then its bias of length
    ``fan_out``.
    """

    input_dim: int
    hidden_dims: Sequence[int] = (64, 32)
    n_classes: int = 10
    activation: Activation = Activation.TANH

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "activation", Activation(self.activation))
        bad = [name for name, v in (("input_dim", self.input_dim), ("n_classes", self.n_classes))
               if v < 1]
        if any(h < 1 for h in self.hidden_dims):
            bad.append("hidden_dims")
        if bad:
            raise ConfigError(f"invalid MlpSpec fields: {', '.join(bad)}", bad)

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden_dims, self.n_classes)

    @property
    def n_params(self):
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    def unflatten(self, theta):
        """Views ``[(W, b), ...]`` into ``theta`` following the flat layout."""
        s = self.layer_sizes
        out, pos = [], 0
        for a, b in zip(s[:-1], s[1:]):
            W = theta[pos:pos + a * b].reshape(a, b)
            pos += a * b
            out.append((W, theta[pos:pos + b]))
            pos += b
        return out

    def init_params(self, seed):
        """Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)); zero biases."""
        rng = np.random.default_rng(seed)
        theta = np.zeros(self.n_params)
        for W, _ in self.unflatten(theta):
            s = math.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            W[...] = rng.uniform(-s, s, size=W.shape)
        return theta


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class MlpClassifier(Objective):
    """Mean cross-entropy of an :class:`MlpSpec` network over a dataset."""

    lower_bound = 0.0

    def __init__(self, spec, dataset):
        features = np.asarray(dataset.features, dtype=np.float64)
        labels = np.asarray(dataset.labels)
        if features.ndim != 2 or features.shape[1] != spec.input_dim:
            raise ContractError(
                f"dataset feature dim {features.shape[1:]} != input_dim {spec.input_dim}")
        if labels.size and (labels.min() < 0 or labels.max() >= spec.n_classes):
            raise ContractError(f"labels must lie in [0, {spec.n_classes - 1}]")
        self.spec = spec
        self.features = features
        self.labels = labels.astype(np.int64)
        self.dim = spec.n_params
        self.n_samples = features.shape[0]

    def _forward(self, theta, X):
        acts = [X]
        layers = self.spec.unflatten(theta)
        relu = self.spec.activation is Activation.RELU
        h = X
        for W, b in layers[:-1]:
            z = h @ W + b
            h = np.maximum(z, 0.0) if relu else np.tanh(z)
            acts.append(h)
        W, b = layers[-1]
        return layers, acts, h @ W + b

    def logits(self, theta, X):
        return self._forward(np.asarray(theta, dtype=np.float64), np.asarray(X, dtype=np.float64))[2]

    def loss_grad(self, theta, batch=None):
        theta = self._check(theta)
        if batch is None:
            X, y = self.features, self.labels
        else:
            X, y = self.features[batch], self.labels[batch]
        n = X.shape[0]
        if n == 0:
            raise ContractError("empty batch")
        layers, acts, z = self._forward(theta, X)
        logp = _log_softmax(z)
        loss = -float(logp[np.arange(n), y].mean())

        grad = np.zeros_like(theta)
        grad_layers = self.spec.unflatten(grad)
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        relu = self.spec.activation is Activation.RELU
        for i in range(len(layers) - 1, -1, -1):
            gW, gb = grad_layers[i]
            gW[...] = acts[i].T @ delta
            gb[...] = delta.sum(axis=0)
            if i:
                back = delta @ layers[i][0].T
                h = acts[i]
                delta = back * (h > 0) if relu else back * (1.0 - h * h)
        return loss, grad

    def per_sample_loss(self, theta, batch=None):
        X = self.features if batch is None else self.features[batch]
        y = self.labels if batch is None else self.labels[batch]
        logp = _log_softmax(self.logits(theta, X))
        return -logp[np.arange(X.shape[0]), y]

    def accuracy(self, theta, dataset=None):
        """Top-1 accuracy on ``dataset`` (default: the training data)."""
        X = self.features if dataset is None else dataset.features
        y = self.labels if dataset is None else np.asarray(dataset.labels)
        if len(y) == 0:
            return float("nan")
        return float(np.mean(self.logits(theta, X).argmax(axis=1) == y))


# -- factories ---------------------------------------------------------------

def quadratic(dim, curvature_spectrum=None):
    lam = np.ones(dim) if curvature_spectrum is None else curvature_spectrum
    if len(np.atleast_1d(lam)) != dim:
        raise ConfigError("curvature spectrum length must equal dim", ["curvatures"])
    return Quadratic(lam)


def double_well(offset, dim=1):
    return DoubleWell(offset, dim)


def rosenbrock(dim):
    return Rosenbrock(dim)


def mlp_classifier(spec, dataset):
    return MlpClassifier(spec, dataset)


def finite_difference_grad(objective, theta, h=1e-6, batch=None):
    """Central-difference gradient, one coordinate at a time."""
    if not h > 0:
        raise ConfigError("finite-difference step must be positive", ["h"])
    theta = np.array(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        up = objective.loss(theta, batch)
        theta[i] = old - h
        down = objective.loss(theta, batch)
        theta[i] = old
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericInputError(f"non-finite probe loss at coordinate {i}")
        g[i] = (up - down) / (2.0 * h)
    return g


def relative_error(a, b):
    """``|a - b| / max(|a|, |b|)`` in the Euclidean norm (0 when both vanish)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)
