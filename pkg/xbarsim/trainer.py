"""
Tiny mini-batch SGD trainer for dense networks.

Supports DenseLayer, ReLU, BatchNorm1d and Flatten with a fused
softmax cross-entropy loss.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .datasets import Dataset
from .errors import ConfigurationError, InputError, TrainingError
from .network import BatchNorm1d, DenseLayer, Flatten, Network, ReLU

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters; the learning rate is multiplied by decay_factor every decay_every epochs."""

    learning_rate: float = 0.1
    batch_size: int = 64
    epochs: int = 30
    decay_factor: float = 0.1
    decay_every: int = 20
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate >= 0 and np.isfinite(self.learning_rate)):
            raise ConfigurationError(f"Learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"Batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigurationError(f"Epochs must be >= 1, got {self.epochs}")
        if not (0 < self.decay_factor <= 1):
            raise ConfigurationError(f"Decay factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1:
            raise ConfigurationError(f"Decay interval must be >= 1, got {self.decay_every}")

    def learning_rate_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_every)


@dataclass
class TrainResult:
    network: Network
    losses: List[float] = field(default_factory=list)
    accuracies: List[float] = field(default_factory=list)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy of softmax(logits) and its gradient w.r.t. the logits.

    Uses the log-sum-exp shift for stability.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    batch = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_sum = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_sum - shifted[np.arange(batch), labels]))
    probabilities = np.exp(shifted - log_sum[:, None])
    probabilities[np.arange(batch), labels] -= 1.0
    return loss, probabilities / batch


def _forward_train(net: Network, x: np.ndarray) -> Tuple[np.ndarray, List[Dict[str, Any]]]:
    caches: List[Dict[str, Any]] = []
    for layer in net.layers:
        if isinstance(layer, DenseLayer):
            caches.append({"x": x})
            x = layer.forward(x)
        elif isinstance(layer, ReLU):
            caches.append({"mask": x > 0})
            x = layer.forward(x)
        elif isinstance(layer, Flatten):
            caches.append({"shape": x.shape})
            x = layer.forward(x)
        elif isinstance(layer, BatchNorm1d):
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + layer.eps)
            x_hat = (x - mean) * inv_std
            caches.append({"x_hat": x_hat, "inv_std": inv_std, "mean": mean, "var": var})
            x = x_hat * layer.gamma + layer.beta
        else:
            raise ConfigurationError(f"Layer {layer.name} ({layer.kind}) cannot be trained")
    return x, caches


def _backward(net: Network, caches: List[Dict[str, Any]], grad: np.ndarray) -> List[Dict[str, np.ndarray]]:
    grads: List[Dict[str, np.ndarray]] = [{} for _ in net.layers]
    for index in range(len(net.layers) - 1, -1, -1):
        layer, cache = net.layers[index], caches[index]
        if isinstance(layer, DenseLayer):
            grads[index] = {"weight": grad.T @ cache["x"], "bias": grad.sum(axis=0)}
            grad = grad @ layer.weight
        elif isinstance(layer, ReLU):
            grad = grad * cache["mask"]
        elif isinstance(layer, Flatten):
            grad = grad.reshape(cache["shape"])
        elif isinstance(layer, BatchNorm1d):
            x_hat, inv_std = cache["x_hat"], cache["inv_std"]
            batch = grad.shape[0]
            grads[index] = {"gamma": (grad * x_hat).sum(axis=0), "beta": grad.sum(axis=0)}
            d_hat = grad * layer.gamma
            grad = (
                inv_std
                / batch
                * (batch * d_hat - d_hat.sum(axis=0) - x_hat * (d_hat * x_hat).sum(axis=0))
            )
    return grads


def loss_and_gradients(
    net: Network, x: np.ndarray, labels: np.ndarray
) -> Tuple[float, List[Dict[str, np.ndarray]]]:
    """Training-mode loss and per-layer parameter gradients (batch-norm uses batch statistics)."""
    logits, caches = _forward_train(net, np.asarray(x, dtype=float))
    loss, grad = softmax_cross_entropy(logits, labels)
    return loss, _backward(net, caches, grad)


def _update_running_stats(net: Network, caches: List[Dict[str, Any]], batch: int) -> None:
    for layer, cache in zip(net.layers, caches):
        if isinstance(layer, BatchNorm1d):
            unbiased = cache["var"] * batch / (batch - 1) if batch > 1 else cache["var"]
            m = layer.momentum
            layer.running_mean = (1 - m) * layer.running_mean + m * cache["mean"]
            layer.running_var = (1 - m) * layer.running_var + m * unbiased


def accuracy(net: Network, data: Dataset) -> float:
    return float(np.mean(net.predict(data.features) == data.labels))


def train_tiny(
    net: Network, dataset: Dataset, cfg: TrainConfig, eval_dataset: Optional[Dataset] = None
) -> TrainResult:
    """
    Train a copy of ``net`` with mini-batch SGD and cross-entropy loss.

    Args:
        net: Network of dense, ReLU, batch-norm and flatten layers
        dataset: Labeled training data
        cfg: Hyperparameters
        eval_dataset: Data for the per-epoch accuracy (defaults to the training data)

    Returns:
        TrainResult with the trained network, per-epoch mean loss and accuracy

    Raises:
        TrainingError: If the loss becomes NaN or infinite
    """
    if len(dataset) == 0:
        raise InputError("Cannot train on an empty dataset")
    trained = net.copy()
    rng = np.random.default_rng(cfg.seed)
    eval_dataset = eval_dataset if eval_dataset is not None else dataset
    result = TrainResult(network=trained)

    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate_at(epoch)
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            x = dataset.features[batch]
            logits, caches = _forward_train(trained, x)
            loss, grad = softmax_cross_entropy(logits, dataset.labels[batch])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"Loss became {loss} at epoch {epoch + 1}, batch starting at {start} "
                    f"(learning rate {lr}); try a smaller learning rate"
                )
            grads = _backward(trained, caches, grad)
            for layer, layer_grads in zip(trained.layers, grads):
                for name, value in layer_grads.items():
                    setattr(layer, name, getattr(layer, name) - lr * value)
            _update_running_stats(trained, caches, len(batch))
            epoch_losses.append(loss)
        result.losses.append(float(np.mean(epoch_losses)))
        result.accuracies.append(accuracy(trained, eval_dataset))
        logger.debug(
            f"Epoch {epoch + 1}/{cfg.epochs}: loss={result.losses[-1]:.6f}, "
            f"accuracy={result.accuracies[-1]:.4f}, lr={lr:g}"
        )
    logger.info(f"Trained for {cfg.epochs} epochs: final accuracy {result.accuracies[-1]:.4f}")
    return result
