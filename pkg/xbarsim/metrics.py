"""
Classification metrics.
"""

from typing import Dict

import numpy as np

from .errors import InputError

METRICS = ("accuracy", "f1")


def _f1(predictions: np.ndarray, labels: np.ndarray, positive: int) -> float:
    true_positive = np.sum((predictions == positive) & (labels == positive))
    predicted = np.sum(predictions == positive)
    actual = np.sum(labels == positive)
    precision = true_positive / predicted if predicted else 0.0
    recall = true_positive / actual if actual else 0.0
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def compute_metrics(predictions, labels) -> Dict[str, float]:
    """
    Accuracy and F1 score of integer predictions.

    F1 treats class 1 as positive for binary labels and is macro-averaged
    when more than two classes occur. F1 is 0 when precision + recall is 0.

    Raises:
        InputError: On empty or mismatched inputs
    """
    predictions = np.asarray(predictions).ravel()
    labels = np.asarray(labels).ravel()
    if predictions.size == 0:
        raise InputError("Cannot compute metrics of empty predictions")
    if predictions.shape != labels.shape:
        raise InputError(f"Length mismatch: {predictions.size} predictions, {labels.size} labels")
    accuracy = float(np.mean(predictions == labels))
    classes = np.union1d(predictions, labels)
    if classes.size <= 2 and np.all(np.isin(classes, (0, 1))):
        f1 = _f1(predictions, labels, 1)
    else:
        f1 = float(np.mean([_f1(predictions, labels, c) for c in classes]))
    return {"accuracy": accuracy, "f1": f1}
