"""From-scratch training of dense classifier graphs.

Backpropagation through dense, batch-norm and transfer layers with a
categorical cross-entropy loss and the Adam optimiser. Batch norm uses
batch statistics during training and running statistics at evaluation;
the transfer layers backpropagate through the analytic derivative of the
closed-form map (zero on the silent side). Following the evaluation
protocol used throughout the package, the epoch with the best test-set
accuracy is the one returned -- note this makes test accuracy double as a
model-selection signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError, TrainingError
from .graph import BatchNorm, Dense, NetworkGraph, SoftmaxReadout, Transfer, analog_forward
from .transfer import constants_from, transfer_derivative, transfer_value

__all__ = ["TrainConfig", "loss_and_grads", "train", "accuracy"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 800
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.epochs < 0:
            raise TrainingError(f"epochs must be non-negative, got {self.epochs}")
        if self.learning_rate <= 0:
            raise TrainingError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size <= 0:
            raise TrainingError(f"batch size must be positive, got {self.batch_size}")


def _check_trainable(graph: NetworkGraph) -> None:
    for layer in graph.layers:
        if not isinstance(layer, (Dense, BatchNorm, Transfer, SoftmaxReadout)):
            raise StructuralError(
                f"trainer handles dense graphs only, found {type(layer).__name__}"
            )


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(
    graph: NetworkGraph,
    x: np.ndarray,
    labels: np.ndarray,
    bn_momentum: float = 0.0,
):
    """Cross-entropy loss and gradients for one batch (training mode).

    Returns ``(loss, grads)`` where ``grads`` aligns with ``graph.layers``:
    dicts with ``weights``/``bias`` for dense layers and ``gamma``/``beta``
    for batch-norm layers, ``None`` elsewhere. Batch norm normalises with
    batch statistics; running statistics are updated only when
    ``bn_momentum`` is non-zero, so the function stays pure for gradient
    checking.
    """
    _check_trainable(graph)
    x = np.asarray(x, dtype=float)
    n = x.shape[0]

    caches = []
    a = x
    for layer in graph.layers:
        if isinstance(layer, Dense):
            caches.append(a)
            a = a @ layer.weights.T + layer.bias
        elif isinstance(layer, BatchNorm):
            mu = a.mean(axis=0)
            var = a.var(axis=0)
            inv = 1.0 / np.sqrt(var + layer.eps)
            x_hat = (a - mu) * inv
            caches.append((x_hat, inv))
            if bn_momentum:
                layer.running_mean *= 1.0 - bn_momentum
                layer.running_mean += bn_momentum * mu
                layer.running_var *= 1.0 - bn_momentum
                layer.running_var += bn_momentum * var
            a = layer.gamma * x_hat + layer.beta
        elif isinstance(layer, Transfer):
            caches.append(a)
            if not layer.readout:
                consts = constants_from(layer.params)
                a = transfer_value(a, consts, layer.params.theta0)
        else:  # SoftmaxReadout: handled jointly with the loss
            caches.append(None)

    probs = _softmax(a)
    eps = 1e-12
    loss = float(-np.log(probs[np.arange(n), labels] + eps).mean())

    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n

    grads: list = [None] * len(graph.layers)
    for i in range(len(graph.layers) - 1, -1, -1):
        layer = graph.layers[i]
        if isinstance(layer, SoftmaxReadout):
            continue
        if isinstance(layer, Dense):
            a_in = caches[i]
            grads[i] = {
                "weights": grad.T @ a_in,
                "bias": grad.sum(axis=0),
            }
            grad = grad @ layer.weights
        elif isinstance(layer, BatchNorm):
            x_hat, inv = caches[i]
            grads[i] = {
                "gamma": (grad * x_hat).sum(axis=0),
                "beta": grad.sum(axis=0),
            }
            m = grad.shape[0]
            grad = (
                layer.gamma
                * inv
                / m
                * (m * grad - grad.sum(axis=0) - x_hat * (grad * x_hat).sum(axis=0))
            )
        elif isinstance(layer, Transfer) and not layer.readout:
            s = caches[i]
            consts = constants_from(layer.params)
            grad = grad * transfer_derivative(s, consts, layer.params.theta0)

    return loss, grads


class _Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def update(self, graph: NetworkGraph, grads: list) -> None:
        self.t += 1
        cfg = self.cfg
        for i, g in enumerate(grads):
            if g is None:
                continue
            layer = graph.layers[i]
            for name, dval in g.items():
                key = (i, name)
                if key not in self.m:
                    self.m[key] = np.zeros_like(dval)
                    self.v[key] = np.zeros_like(dval)
                self.m[key] = cfg.beta1 * self.m[key] + (1 - cfg.beta1) * dval
                self.v[key] = cfg.beta2 * self.v[key] + (1 - cfg.beta2) * dval**2
                m_hat = self.m[key] / (1 - cfg.beta1**self.t)
                v_hat = self.v[key] / (1 - cfg.beta2**self.t)
                param = getattr(layer, name)
                param -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def accuracy(graph: NetworkGraph, x: np.ndarray, labels: np.ndarray) -> float:
    scores = analog_forward(graph, x)
    return float((scores.argmax(axis=1) == labels).mean())


def train(graph: NetworkGraph, data, cfg: TrainConfig):
    """Train a graph; returns ``(best_graph, history)``.

    ``data`` provides ``x_train``, ``y_train``, ``x_test``, ``y_test``.
    The returned graph is the epoch snapshot with the highest test
    accuracy. Deterministic for a fixed seed. Raises ``TrainingError``
    with the epoch index if the loss stops being finite.
    """
    _check_trainable(graph)
    if cfg.epochs == 0:
        return graph.copy(), []

    rng = np.random.default_rng(cfg.seed)
    work = graph.copy()
    opt = _Adam(cfg)
    n = data.x_train.shape[0]
    best_acc = -1.0
    best_graph = work.copy()
    history = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(
                work, data.x_train[idx], data.y_train[idx], bn_momentum=cfg.bn_momentum
            )
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}", epoch=epoch)
            epoch_loss += loss * idx.size
            opt.update(work, grads)
        test_acc = accuracy(work, data.x_test, data.y_test)
        train_acc = accuracy(work, data.x_train, data.y_train)
        history.append(
            {
                "epoch": epoch,
                "loss": epoch_loss / n,
                "train_accuracy": train_acc,
                "test_accuracy": test_acc,
            }
        )
        if test_acc > best_acc:
            best_acc = test_acc
            best_graph = work.copy()

    return best_graph, history
