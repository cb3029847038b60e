"""
Experiment harness for xbarsim.

Parses experiment JSON documents, trains or loads the base network, and
runs seeded parameter sweeps over device, mapping and non-ideality
settings, emitting one CSV row per (grid point, repeat, fold).
"""

import copy
import hashlib
import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .crossbar import Arrangement
from .datasets import Dataset, dataset_from_dict, kfold_split
from .device import DeviceTemplate, get_preset, template_from_dict, with_ratio, with_variability
from .errors import ConfigurationError
from .mapping import MappingConfig
from .metrics import METRICS, compute_metrics
from .network import InputScaling, Network, build_mlp, load_weights, patch_model, tune_all
from .nonideality import QuantizationSpec, parse_nonideality, quantize
from .trainer import TrainConfig, train_tiny

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = {
    "seed",
    "device",
    "arrangement",
    "mapping",
    "nonidealities",
    "axes",
    "network",
    "dataset",
    "repeats",
    "metric",
    "k_folds",
    "scaling",
    "tuning_rows",
    "timing",
    "pulse",
}
# Sections an axis may vary; anything else would require retraining the base network
SWEEPABLE = ("device", "arrangement", "mapping", "nonidealities", "scaling", "tuning_rows", "pulse")
PULSE_KEYS = {"tolerance", "max_pulses", "amplitude", "duration"}
TRAIN_DEMO_KEYS = {"hidden", "batch_norm", "learning_rate", "batch_size", "epochs", "decay_factor", "decay_every"}


@dataclass(frozen=True)
class Axis:
    """A dotted path into the experiment document and the values it takes."""

    path: str
    values: Tuple[Any, ...]


def _resolve(document: Any, path: str) -> Tuple[Any, Union[str, int]]:
    """Return (container, key) for a dotted path; list indices are integers."""
    parts = path.split(".")
    node = document
    for part in parts[:-1]:
        node = _child(node, part, path)
    last = parts[-1]
    if isinstance(node, list):
        index = _index(node, last, path)
        return node, index
    if not isinstance(node, dict):
        raise ConfigurationError(f"Axis path {path!r} does not lead into an object")
    return node, last


def _index(node: list, part: str, path: str) -> int:
    try:
        index = int(part)
    except ValueError:
        raise ConfigurationError(f"Axis path {path!r}: {part!r} is not a list index")
    if not 0 <= index < len(node):
        raise ConfigurationError(f"Axis path {path!r}: index {index} out of range")
    return index


def _child(node: Any, part: str, path: str) -> Any:
    if isinstance(node, list):
        return node[_index(node, part, path)]
    if isinstance(node, dict):
        if part not in node:
            raise ConfigurationError(f"Axis path {path!r}: no key {part!r}")
        return node[part]
    raise ConfigurationError(f"Axis path {path!r} does not lead into an object")


def set_path(document: Dict[str, Any], path: str, value: Any) -> None:
    container, key = _resolve(document, path)
    container[key] = value  # type: ignore[index]


def derive_seed(master: int, assignments: Sequence[Tuple[str, Any]], repeat: int, fold: int) -> int:
    """
    Sub-seed of one sweep point, a pure function of its axis values.

    Adding values to an axis leaves the sub-seeds of existing points unchanged.
    """
    payload = json.dumps([master, sorted([list(a) for a in assignments]), repeat, fold], sort_keys=True)
    return int.from_bytes(hashlib.sha256(payload.encode("utf-8")).digest()[:8], "big")


def build_template(section: Dict[str, Any]) -> DeviceTemplate:
    """Device template from {"preset": ..., "sigma": ..., "ratio": ..., overrides...}."""
    if not isinstance(section, dict):
        raise ConfigurationError("Device section must be an object")
    section = dict(section)
    preset = section.pop("preset", None)
    sigma = section.pop("sigma", 0.0)
    ratio = section.pop("ratio", None)
    template = get_preset(preset) if preset is not None else None
    if section or template is None:
        template = template_from_dict(section, base=template)
    if ratio is not None:
        template = with_ratio(template, float(ratio))
    if sigma:
        template = with_variability(template, float(sigma))
    return template


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A validated experiment document."""

    document: Dict[str, Any]
    axes: Tuple[Axis, ...] = ()

    @property
    def seed(self) -> int:
        return int(self.document.get("seed", 0))

    @property
    def repeats(self) -> int:
        return int(self.document.get("repeats", 1))

    @property
    def k_folds(self) -> int:
        return int(self.document.get("k_folds", 1))

    @property
    def metric(self) -> str:
        return self.document.get("metric", "accuracy")

    @property
    def timing(self) -> bool:
        return bool(self.document.get("timing", False))

    @classmethod
    def from_dict(cls, data: Dict[str, Any], seed: Optional[int] = None) -> "ExperimentConfig":
        """
        Validate an experiment document.

        Args:
            data: Parsed JSON document
            seed: Overrides the document seed

        Raises:
            ConfigurationError: On unknown keys, bad values or unresolvable axes
        """
        if not isinstance(data, dict):
            raise ConfigurationError("Experiment document must be a JSON object")
        unknown = set(data) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigurationError(f"Unknown experiment keys: {', '.join(sorted(unknown))}")
        document = copy.deepcopy(data)
        axes_doc = document.pop("axes", [])
        if seed is not None:
            document["seed"] = seed
        for key in ("device", "network", "dataset"):
            if key not in document:
                raise ConfigurationError(f"Experiment document requires a {key!r} section")

        axes = []
        for entry in axes_doc:
            if not isinstance(entry, dict) or set(entry) != {"path", "values"}:
                raise ConfigurationError('Each axis must be {"path": ..., "values": [...]}')
            values = entry["values"]
            if not isinstance(values, list) or not values:
                raise ConfigurationError(f"Axis {entry['path']!r} needs a non-empty value list")
            path = str(entry["path"])
            if path.split(".")[0] not in SWEEPABLE:
                raise ConfigurationError(f"Axis {path!r} must vary one of: {', '.join(SWEEPABLE)}")
            _resolve_or_create(document, path)
            axes.append(Axis(path, tuple(values)))

        config = cls(document, tuple(axes))
        if config.repeats < 1:
            raise ConfigurationError(f"repeats must be >= 1, got {config.repeats}")
        if config.k_folds < 1:
            raise ConfigurationError(f"k_folds must be >= 1, got {config.k_folds}")
        if config.metric not in METRICS:
            raise ConfigurationError(f"metric must be one of {METRICS}, got {config.metric!r}")
        _network_section(document["network"])
        # validate the first grid point
        config.point_settings(config.point_document([(a.path, a.values[0]) for a in axes]))
        return config

    @classmethod
    def load(cls, path: Union[str, Path], seed: Optional[int] = None) -> "ExperimentConfig":
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid experiment JSON in {path}: {e}")
        except OSError as e:
            raise ConfigurationError(f"Cannot read experiment file {path}: {e}")
        return cls.from_dict(data, seed=seed)

    def grid(self) -> List[List[Tuple[str, Any]]]:
        """Axis assignments of every grid point, in row-major order."""
        if not self.axes:
            return [[]]
        return [
            list(zip([a.path for a in self.axes], values))
            for values in itertools.product(*[a.values for a in self.axes])
        ]

    def point_document(self, assignments: Sequence[Tuple[str, Any]]) -> Dict[str, Any]:
        document = copy.deepcopy(self.document)
        for path, value in assignments:
            set_path(document, path, value)
        return document

    def point_settings(self, document: Dict[str, Any]) -> "PointSettings":
        """Parse the sweepable sections of a point document."""
        template = build_template(document["device"])
        nominal = template.nominal()
        r_on, r_off = float(nominal.r_on), float(nominal.r_off)
        mapping = MappingConfig.from_dict(document.get("mapping", {}), min(r_on, r_off), max(r_on, r_off))
        stack = [parse_nonideality(entry) for entry in document.get("nonidealities", [])]
        pulse = dict(document.get("pulse", {}))
        unknown = set(pulse) - PULSE_KEYS
        if unknown:
            raise ConfigurationError(f"Unknown pulse keys: {', '.join(sorted(unknown))}")
        pulse_options = {
            "tolerance": pulse.get("tolerance", 0.01),
            "max_pulses": pulse.get("max_pulses"),
            "pulse_amplitude": pulse.get("amplitude", 1.0),
            "pulse_duration": pulse.get("duration"),
        }
        try:
            scaling = InputScaling(document.get("scaling", "none"))
        except ValueError:
            raise ConfigurationError(f"Unknown scaling mode: {document.get('scaling')!r}")
        rows = document.get("tuning_rows")
        if rows is not None and int(rows) < 2:
            raise ConfigurationError(f"tuning_rows must be >= 2, got {rows}")
        return PointSettings(
            template=template,
            mapping=mapping,
            stack=stack,
            arrangement=Arrangement.parse(document.get("arrangement", "1T1R")),
            scaling=scaling,
            tuning_rows=None if rows is None else int(rows),
            pulse_options=pulse_options,
        )


def _resolve_or_create(document: Dict[str, Any], path: str) -> None:
    """Axis paths must resolve; a missing final object key is created as a placeholder."""
    container, key = _resolve(document, path)
    if isinstance(container, dict) and key not in container:
        container[key] = None


def _network_section(section: Dict[str, Any]) -> None:
    if not isinstance(section, dict) or len(section) != 1 or next(iter(section)) not in ("weights", "train_demo"):
        raise ConfigurationError('Network section must be {"weights": path} or {"train_demo": {...}}')
    if "train_demo" in section:
        unknown = set(section["train_demo"]) - TRAIN_DEMO_KEYS
        if unknown:
            raise ConfigurationError(f"Unknown train_demo keys: {', '.join(sorted(unknown))}")


@dataclass
class PointSettings:
    template: DeviceTemplate
    mapping: MappingConfig
    stack: List[Any]
    arrangement: Arrangement
    scaling: InputScaling
    tuning_rows: Optional[int]
    pulse_options: Dict[str, Any]


@dataclass
class SweepRecord:
    assignments: List[Tuple[str, Any]]
    repeat: int
    fold: int
    metric: str
    value: float
    runtime_s: float
    seed: int
    error: str = ""


@dataclass
class SweepResult:
    axes: Tuple[Axis, ...]
    records: List[SweepRecord] = field(default_factory=list)

    @property
    def failures(self) -> List[SweepRecord]:
        return [r for r in self.records if r.error]

    def to_frame(self) -> pd.DataFrame:
        columns = [a.path for a in self.axes] + [
            "repeat",
            "fold",
            "metric",
            "value",
            "runtime_s",
            "seed",
            "error",
        ]
        rows = []
        for record in self.records:
            values = dict(record.assignments)
            rows.append(
                [values[a.path] for a in self.axes]
                + [
                    record.repeat,
                    record.fold,
                    record.metric,
                    record.value,
                    record.runtime_s,
                    record.seed,
                    record.error,
                ]
            )
        return pd.DataFrame(rows, columns=columns)

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)
        logger.info(f"Sweep results ({len(self.records)} rows) written to {path}")


def train_config_from_dict(section: Dict[str, Any], seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(section.get("learning_rate", 0.1)),
        batch_size=int(section.get("batch_size", 64)),
        epochs=int(section.get("epochs", 30)),
        decay_factor=float(section.get("decay_factor", 0.1)),
        decay_every=int(section.get("decay_every", 20)),
        seed=seed,
    )


def build_base_network(cfg: ExperimentConfig, train: Dataset, fold: int) -> Network:
    """Load the configured weights or train the demo MLP on one fold's training data."""
    section = cfg.document["network"]
    if "weights" in section:
        return load_weights(section["weights"])
    demo = section["train_demo"]
    seed = derive_seed(cfg.seed, [("network", "train_demo")], 0, fold)
    rng = np.random.default_rng(seed)
    sizes = [train.n_features, *demo.get("hidden", [32]), max(2, train.n_classes)]
    net = build_mlp(sizes, rng, batch_norm=bool(demo.get("batch_norm", False)))
    return train_tiny(net, train, train_config_from_dict(demo, seed)).network


def evaluate(net: Network, data: Dataset, metric: str, legacy: bool = False) -> float:
    return compute_metrics(net.predict(data.features, legacy=legacy), data.labels)[metric]


def _run_point(
    cfg: ExperimentConfig,
    base: Network,
    test: Dataset,
    assignments: List[Tuple[str, Any]],
    repeat: int,
    fold: int,
) -> SweepRecord:
    seed = derive_seed(cfg.seed, assignments, repeat, fold)
    start = time.perf_counter()
    try:
        settings = cfg.point_settings(cfg.point_document(assignments))
        rng = np.random.default_rng(seed)
        patched = patch_model(
            base,
            settings.template,
            settings.mapping,
            settings.stack,
            rng,
            arrangement=settings.arrangement,
            scaling=settings.scaling,
            pulse_options=settings.pulse_options,
        )
        tune_all(patched, settings.tuning_rows, rng)
        value = evaluate(patched, test, cfg.metric)
        error = ""
    except Exception as e:
        logger.warning(f"Sweep point {assignments} (repeat {repeat}, fold {fold}) failed: {e}")
        value, error = math.nan, f"{type(e).__name__}: {e}"
    runtime = time.perf_counter() - start if cfg.timing else 0.0
    logger.info(f"Point {assignments} repeat {repeat} fold {fold}: {cfg.metric}={value:.4f}")
    return SweepRecord(assignments, repeat, fold, cfg.metric, value, runtime, seed, error)


def run_sweep(
    cfg: ExperimentConfig, out_path: Optional[Union[str, Path]] = None, threads: Optional[int] = None
) -> SweepResult:
    """
    Run every (grid point, repeat, fold) of an experiment.

    Each fold's base network is built once; every point patches and tunes
    a fresh copy with its own sub-seed. Points run concurrently but records
    are kept in grid order. A failing point yields a NaN value and an
    error string instead of aborting the sweep.

    Args:
        cfg: Validated experiment configuration
        out_path: Optional CSV destination
        threads: Concurrent points (defaults to XBARSIM_THREADS)

    Returns:
        SweepResult in deterministic order
    """
    if threads is None:
        from .config import get_config

        threads = get_config().threads
    data = dataset_from_dict(cfg.document["dataset"], cfg.seed)
    splits = kfold_split(len(data), cfg.k_folds, cfg.seed)

    bases = []
    for fold, (train_idx, test_idx) in enumerate(splits):
        base = build_base_network(cfg, data.subset(train_idx), fold)
        test = data.subset(test_idx)
        logger.info(f"Fold {fold}: legacy {cfg.metric} = {evaluate(base, test, cfg.metric, legacy=True):.4f}")
        bases.append((base, test))

    jobs = [
        (assignments, repeat, fold)
        for assignments in cfg.grid()
        for repeat in range(cfg.repeats)
        for fold in range(len(splits))
    ]
    logger.info(f"Running {len(jobs)} sweep points on {threads} threads")

    def _job(job):
        assignments, repeat, fold = job
        base, test = bases[fold]
        return _run_point(cfg, base, test, assignments, repeat, fold)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            records = list(executor.map(_job, jobs))
    else:
        records = [_job(job) for job in jobs]

    result = SweepResult(axes=cfg.axes, records=records)
    if result.failures:
        logger.warning(f"{len(result.failures)} of {len(records)} sweep points failed")
    if out_path is not None:
        result.to_csv(out_path)
    return result


@dataclass
class BenchmarkRow:
    threads: int
    seconds: float
    elements_per_second: float


def benchmark_quantize(
    n_elements: int, n_states: int, thread_counts: Sequence[int], seed: int = 0
) -> List[BenchmarkRow]:
    """Time quantize on random values with per-element bounds for each thread count."""
    rng = np.random.default_rng(seed)
    lo = rng.random(n_elements)
    hi = lo + rng.random(n_elements) + 1e-3
    values = rng.uniform(lo - 0.1, hi + 0.1)
    spec = QuantizationSpec(n_states, lo, hi)
    rows = []
    for threads in thread_counts:
        if threads < 1:
            raise ConfigurationError(f"Thread counts must be >= 1, got {threads}")
        start = time.perf_counter()
        quantize(values, spec, threads=threads)
        seconds = time.perf_counter() - start
        rows.append(BenchmarkRow(threads, seconds, n_elements / seconds if seconds > 0 else math.inf))
        logger.debug(f"quantize with {threads} threads: {seconds:.4f}s")
    return rows
