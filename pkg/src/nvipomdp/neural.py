"""Small rectifier MLPs for per-node alpha-functions, written directly in numpy.

Networks map a state feature vector to one real value. Inputs are
standardized per feature with constants stored on the network; targets stay
in raw reward units so the absolute early-stopping threshold keeps its
meaning. All arithmetic is 64-bit.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DimensionMismatch, NonFiniteLoss

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
# fitting may run in single precision; stored weights are always double
TRAIN_DTYPES = {"single": np.float32, "double": np.float64}


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 1024
    max_epochs: int = 10_000
    early_stop_mse: float = 0.1
    seed: int = 0
    # arithmetic used while fitting: "single" or "double"
    precision: str = "single"

    def __post_init__(self):
        if self.precision not in TRAIN_DTYPES:
            raise ValueError(f"precision must be one of {sorted(TRAIN_DTYPES)}")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0 or self.early_stop_mse <= 0:
            raise ValueError("training parameters must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class TrainReport:
    final_mse: float
    epochs: int
    optimizer: str = "adam"
    learning_rate: float = 0.0
    retries: int = 0


@dataclass(eq=False)
class Mlp:
    """Feed-forward net: rectifier hidden layers, identity output of width 1."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_mean: np.ndarray = None
    x_scale: np.ndarray = None
    # outputs are de-standardized as ``y_mean + y_scale * f(z)``
    y_mean: float = 0.0
    y_scale: float = 1.0
    trained: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or self.layer_dims[-1] != 1:
            raise ValueError("layer_dims must run from the input width to a single output")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias vector per layer required")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_dims[i], self.layer_dims[i + 1]) or b.shape != (self.layer_dims[i + 1],):
                raise ValueError(f"layer {i} parameter shapes do not match layer_dims")
        d = self.layer_dims[0]
        if self.x_mean is None:
            self.x_mean = np.zeros(d)
        if self.x_scale is None:
            self.x_scale = np.ones(d)

    @classmethod
    def create(cls, input_dim: int, hidden_sizes=(128, 64, 32), rng=None) -> "Mlp":
        """He-normal weights and zero biases."""
        rng = np.random.default_rng(rng)
        dims = (int(input_dim), *(int(h) for h in hidden_sizes), 1)
        weights = [rng.normal(0.0, math.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1])) for i in range(len(dims) - 1)]
        biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
        return cls(dims, weights, biases)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(
            self.layer_dims,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.x_mean.copy(),
            self.x_scale.copy(),
            self.y_mean,
            self.y_scale,
            self.trained,
        )

    def standardize(self, X) -> np.ndarray:
        return (X - self.x_mean) / self.x_scale

    def _forward(self, Z):
        """Forward pass on standardized inputs; returns (output, activations)."""
        acts = [Z]
        h = Z
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                np.maximum(h, 0.0, out=h)
            acts.append(h)
        return h[:, 0], acts

    def _backward(self, acts, dout):
        """Gradients of ``sum(dout * output)`` w.r.t. every parameter."""
        grads = [None] * (2 * len(self.weights))
        delta = dout[:, None]
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return grads

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": float(self.y_mean),
            "y_scale": float(self.y_scale),
            "weights": [W.ravel(order="C").tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        dims = [int(d) for d in data["layer_dims"]]
        weights = [np.array(w, dtype=np.float64).reshape(dims[i], dims[i + 1]) for i, w in enumerate(data["weights"])]
        biases = [np.array(b, dtype=np.float64) for b in data["biases"]]
        net = cls(
            dims,
            weights,
            biases,
            np.array(data["x_mean"], dtype=np.float64),
            np.array(data["x_scale"], dtype=np.float64),
            float(data.get("y_mean", 0.0)),
            float(data.get("y_scale", 1.0)),
        )
        net.trained = True
        return net


def predict_batch(net: Mlp, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionMismatch(f"expected inputs of width {net.input_dim}, got shape {X.shape}")
    out, _ = net._forward(net.standardize(X))
    return net.y_mean + net.y_scale * out


def predict(net: Mlp, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise DimensionMismatch(f"expected a vector of length {net.input_dim}, got shape {x.shape}")
    return float(predict_batch(net, x[None, :])[0])


def mse(net: Mlp, X, Y) -> float:
    r = predict_batch(net, X) - np.asarray(Y, dtype=np.float64)
    return float(r @ r / len(r))


def fit_standardization(net: Mlp, X, Y=None) -> None:
    """Set input (and, given ``Y``, output) standardization from the data."""
    net.x_mean = X.mean(axis=0)
    std = X.std(axis=0)
    net.x_scale = np.where(std > 1e-12, std, 1.0)
    if Y is not None:
        net.y_mean = float(Y.mean())
        ys = float(Y.std())
        net.y_scale = ys if ys > 1e-12 else 1.0


def train(net: Mlp, X, Y, cfg: TrainConfig | None = None) -> TrainReport:
    """Fit ``net`` in place by Adam on shuffled mini-batches of squared error.

    Stops once the full-dataset MSE falls below ``cfg.early_stop_mse`` or
    after ``cfg.max_epochs`` epochs. Raises :class:`NonFiniteLoss` as soon as
    the loss or any parameter stops being finite.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionMismatch(f"expected inputs of width {net.input_dim}, got shape {X.shape}")
    if len(X) != len(Y) or len(X) == 0:
        raise ValueError("X and Y must have the same nonzero length")
    if not np.isfinite(Y).all():
        raise NonFiniteLoss("training targets must be finite")
    fit_standardization(net, X, Y)
    # fit standardized targets; losses are reported in raw units
    dtype = TRAIN_DTYPES[cfg.precision]
    Z = net.standardize(X).astype(dtype)
    T = ((Y - net.y_mean) / net.y_scale).astype(dtype)
    s2 = net.y_scale**2
    net.weights = [W.astype(dtype) for W in net.weights]
    net.biases = [b.astype(dtype) for b in net.biases]
    try:
        loss, epochs, lr = _adam_loop(net, Z, T, s2, cfg)
    finally:
        net.weights = [W.astype(np.float64) for W in net.weights]
        net.biases = [b.astype(np.float64) for b in net.biases]
    net.trained = True
    return TrainReport(final_mse=loss, epochs=epochs, learning_rate=lr)


def _adam_loop(net: Mlp, Z, T, s2: float, cfg: TrainConfig):
    rng = np.random.default_rng(cfg.seed)
    params = net.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    lr = cfg.learning_rate
    n = len(Z)
    bs = min(cfg.batch_size, n)
    t = 0
    epochs = 0

    def checked(val):
        if not math.isfinite(val):
            raise NonFiniteLoss(f"training loss became {val} after {epochs} epochs")
        return val

    def adam_step(grads):
        nonlocal t
        t += 1
        c1 = 1.0 - ADAM_BETA1**t
        c2 = 1.0 - ADAM_BETA2**t
        for p, g, mi, vi in zip(params, grads, m, v):
            mi *= ADAM_BETA1
            mi += (1.0 - ADAM_BETA1) * g
            vi *= ADAM_BETA2
            vi += (1.0 - ADAM_BETA2) * (g * g)
            p -= (lr * (mi / c1) / (np.sqrt(vi / c2) + ADAM_EPS)).astype(p.dtype, copy=False)

    if n <= bs:
        # one batch per epoch: its forward pass is the full-dataset loss
        while True:
            out, acts = net._forward(Z)
            r = out - T
            loss = checked(_raw_mse(r, s2))
            if loss < cfg.early_stop_mse or epochs >= cfg.max_epochs:
                break
            adam_step(net._backward(acts, (2.0 / n) * r))
            epochs += 1
    else:
        out, _ = net._forward(Z)
        loss = checked(_raw_mse(out - T, s2))
        while loss >= cfg.early_stop_mse and epochs < cfg.max_epochs:
            order = rng.permutation(n)
            for start in range(0, n, bs):
                idx = order[start : start + bs]
                out, acts = net._forward(Z[idx])
                adam_step(net._backward(acts, (2.0 / len(idx)) * (out - T[idx])))
            epochs += 1
            out, _ = net._forward(Z)
            loss = checked(_raw_mse(out - T, s2))
    return loss, epochs, lr


def _raw_mse(r, s2: float) -> float:
    r = r.astype(np.float64)
    return float(r @ r / len(r)) * s2


def gradient_check(net: Mlp, x, y, h: float = 1e-5) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    The loss is ``(f(x) - y)^2`` summed over the rows of ``x``. Relative
    error is ``|g - g_fd| / max(|g| + |g_fd|, 1e-8)`` per parameter entry.
    """
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    Z = net.standardize(X)

    def loss():
        out, _ = net._forward(Z)
        return float(((out - Y) ** 2).sum())

    out, acts = net._forward(Z)
    grads = net._backward(acts, 2.0 * (out - Y))
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = loss()
            flat[j] = old - h
            down = loss()
            flat[j] = old
            fd = (up - down) / (2 * h)
            err = abs(gflat[j] - fd) / max(abs(gflat[j]) + abs(fd), 1e-8)
            worst = max(worst, err)
    return worst


def backprop_gradients(net: Mlp, x, y) -> list[np.ndarray]:
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    out, acts = net._forward(net.standardize(X))
    return net._backward(acts, 2.0 * (out - Y))


def train_with_retry(net_factory, X, Y, cfg: TrainConfig) -> tuple[Mlp, TrainReport]:
    """Train a fresh net; on divergence retry once with a tenth of the learning rate."""
    net = net_factory()
    try:
        return net, train(net, X, Y, cfg)
    except NonFiniteLoss:
        slow = dataclasses.replace(cfg, learning_rate=cfg.learning_rate / 10)
        net = net_factory()
        report = train(net, X, Y, slow)
        report.retries = 1
        return net, report


class AlphaNetRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :class:`Mlp` and :func:`train`."""

    def __init__(
        self,
        hidden_layer_sizes=(128, 64, 32),
        learning_rate=0.005,
        batch_size=1024,
        max_epochs=10_000,
        early_stop_mse=0.1,
        precision="single",
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_mse = early_stop_mse
        self.precision = precision
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        seed = int(self.random_state or 0)
        init_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
        cfg = TrainConfig(self.learning_rate, self.batch_size, self.max_epochs, self.early_stop_mse, seed, self.precision)
        self.net_, self.report_ = train_with_retry(
            lambda: Mlp.create(X.shape[1], self.hidden_layer_sizes, init_rng), X, y, cfg
        )
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        return predict_batch(self.net_, X)
