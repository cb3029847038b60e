"""
Datasets for xbarsim experiments: synthetic two-class data, CSV loading
and k-fold splitting.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ConfigurationError, InputError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Dataset:
    """Feature matrix (samples x features) with integer labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise InputError(
                f"Dataset needs (n, f) features and (n,) labels, got "
                f"{self.features.shape} and {self.labels.shape}"
            )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices])


def gen_synthetic_dataset(
    n_samples: int, n_features: int, class_separation: float, seed: int
) -> Dataset:
    """
    Two balanced Gaussian classes, standardized per feature.

    Class centers sit at -separation/2 and +separation/2 along a random
    unit direction; within-class noise has unit standard deviation.
    """
    if n_samples < 2:
        raise InputError(f"Need at least 2 samples, got {n_samples}")
    if n_features < 1:
        raise InputError(f"Need at least 1 feature, got {n_features}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_samples) % 2)
    direction = rng.normal(size=n_features)
    direction /= np.linalg.norm(direction)
    offsets = (labels - 0.5) * class_separation
    features = rng.normal(size=(n_samples, n_features)) + offsets[:, None] * direction
    std = features.std(axis=0)
    features = (features - features.mean(axis=0)) / np.where(std > 0, std, 1.0)
    return Dataset(features, labels)


def load_csv_dataset(path: Union[str, Path]) -> Dataset:
    """
    Load a dataset CSV: header row, feature columns, integer label column last.

    Raises:
        InputError: On unreadable files or non-integer labels
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"Cannot read dataset {path}: {e}")
    if frame.shape[1] < 2:
        raise InputError(f"Dataset {path} needs feature columns and a label column")
    try:
        labels = frame.iloc[:, -1].to_numpy(dtype=float)
        features = frame.iloc[:, :-1].to_numpy(dtype=float)
    except (TypeError, ValueError) as e:
        raise InputError(f"Dataset {path} must be numeric: {e}")
    if not np.all(np.isfinite(labels)) or not np.all(np.equal(np.mod(labels, 1), 0)):
        raise InputError(f"Labels in {path} must be integers")
    logger.info(f"Loaded {len(frame)} samples with {features.shape[1]} features from {path}")
    return Dataset(features, labels.astype(int))


def kfold_split(n_samples: int, k: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Shuffled k-fold partition of range(n_samples).

    Test folds are disjoint, cover every index and differ in size by at
    most one. With k = 1 the single fold trains and tests on everything.

    Raises:
        InputError: If k < 1 or k > n_samples
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if k > n_samples:
        raise InputError(f"k = {k} exceeds the number of samples {n_samples}")
    indices = np.arange(n_samples)
    if k == 1:
        return [(indices, indices)]
    permutation = np.random.default_rng(seed).permutation(n_samples)
    folds = np.array_split(permutation, k)
    splits = []
    for i, test in enumerate(folds):
        train = np.concatenate([fold for j, fold in enumerate(folds) if j != i])
        splits.append((np.sort(train), np.sort(test)))
    return splits


def dataset_from_dict(data: dict, seed: int) -> Dataset:
    """Build the dataset named by the "dataset" section of an experiment document."""
    if not isinstance(data, dict) or len(data) != 1:
        raise ConfigurationError('Dataset section must be {"synthetic": {...}} or {"csv": path}')
    kind, spec = next(iter(data.items()))
    if kind == "csv":
        return load_csv_dataset(spec)
    if kind != "synthetic":
        raise ConfigurationError(f"Unknown dataset kind: {kind!r}")
    allowed = {"n_samples", "n_features", "class_separation"}
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigurationError(f"Unknown synthetic dataset keys: {', '.join(sorted(unknown))}")
    return gen_synthetic_dataset(
        int(spec.get("n_samples", 1000)),
        int(spec.get("n_features", 64)),
        float(spec.get("class_separation", 4.0)),
        seed,
    )
