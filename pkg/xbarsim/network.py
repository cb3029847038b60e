"""
Minimal neural-network runtime for xbarsim.

Dense, convolutional (by unrolling), batch-norm and activation layers,
conversion of trained networks to memristive equivalents, per-layer
tuning, and the weight JSON format.
"""

import copy
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .crossbar import (
    Arrangement,
    DoubleColumn,
    ProgrammingReport,
    RepresentationScheme,
    SingleColumn,
    TuningTransform,
    build_crossbar,
    midpoint_conductance,
    program_naive,
    program_pulsed,
)
from .device import DeviceTemplate
from .errors import ConfigurationError, InputError, StateError
from .mapping import DEFAULT_TUNING_ROWS, MappingConfig, MappingScheme, naive_map, tune_layer
from .nonideality import NonIdeality, apply_nonidealities

logger = logging.getLogger(__name__)

# Spatial size of random conv tuning inputs
CONV_TUNING_SIZE = 32


def _require_finite(name: str, *arrays: np.ndarray) -> None:
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise ConfigurationError(f"{name} parameters must be finite")


@dataclass(eq=False)
class DenseLayer:
    """y = x W^T + b with W of shape (out, in)."""

    weight: np.ndarray
    bias: np.ndarray
    name: str = "dense"

    kind = "dense"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ConfigurationError(
                f"Dense layer needs (out, in) weights and (out,) bias, got "
                f"{self.weight.shape} and {self.bias.shape}"
            )
        _require_finite("Dense layer", self.weight, self.bias)

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def matrix(self) -> np.ndarray:
        """Weights laid out as a crossbar, (in, out)."""
        return self.weight.T

    def as_matrix_input(self, x: np.ndarray) -> Tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise InputError(f"{self.name} expects (batch, {self.in_features}) inputs, got {x.shape}")
        return x, lambda y: y

    def forward(self, x: np.ndarray) -> np.ndarray:
        m, _ = self.as_matrix_input(x)
        return m @ self.weight.T + self.bias


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if size + 2 * padding < kernel or out < 1:
        raise InputError(
            f"Kernel {kernel} does not fit input {size} with padding {padding} and stride {stride}"
        )
    return out


@dataclass(eq=False)
class Conv2dLayer:
    """2-D convolution over (batch, C, H, W) inputs, evaluated by unrolling."""

    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    name: str = "conv2d"

    kind = "conv2d"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[0],):
            raise ConfigurationError(
                f"Conv layer needs (out, in, kh, kw) kernels and (out,) bias, got "
                f"{self.weight.shape} and {self.bias.shape}"
            )
        if self.stride < 1 or self.padding < 0:
            raise ConfigurationError(f"Invalid stride {self.stride} or padding {self.padding}")
        _require_finite("Conv layer", self.weight, self.bias)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_features(self) -> int:
        return int(np.prod(self.weight.shape[1:]))

    def matrix(self) -> np.ndarray:
        """Flattened kernels, (C*kh*kw, out_channels)."""
        return self.weight.reshape(self.out_channels, -1).T

    def as_matrix_input(self, x: np.ndarray) -> Tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
        x = np.asarray(x, dtype=float)
        patches, _ = unroll_conv2d(x, self)
        batch = x.shape[0]
        oh = conv_output_size(x.shape[2], self.weight.shape[2], self.stride, self.padding)
        ow = conv_output_size(x.shape[3], self.weight.shape[3], self.stride, self.padding)

        def restore(y: np.ndarray) -> np.ndarray:
            return y.reshape(batch, oh, ow, -1).transpose(0, 3, 1, 2)

        return patches, restore

    def forward(self, x: np.ndarray) -> np.ndarray:
        patches, restore = self.as_matrix_input(x)
        return restore(patches @ self.matrix() + self.bias)


def unroll_conv2d(x: np.ndarray, layer: Conv2dLayer) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unroll a convolution into a dense matrix product.

    Args:
        x: Inputs of shape (batch, C, H, W)
        layer: Convolution layer

    Returns:
        (patches, kernels): patches has shape (batch*oh*ow, C*kh*kw) with
        features ordered (C, kh, kw); kernels has shape (C*kh*kw, out).
        patches @ kernels reshaped to (batch, oh, ow, out) is the convolution.

    Raises:
        InputError: On inconsistent geometry
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 4 or x.shape[1] != layer.in_channels:
        raise InputError(
            f"{layer.name} expects (batch, {layer.in_channels}, H, W) inputs, got {x.shape}"
        )
    kh, kw = layer.weight.shape[2:]
    oh = conv_output_size(x.shape[2], kh, layer.stride, layer.padding)
    ow = conv_output_size(x.shape[3], kw, layer.stride, layer.padding)
    p = layer.padding
    padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, : (oh - 1) * layer.stride + 1 : layer.stride, : (ow - 1) * layer.stride + 1 : layer.stride]
    patches = windows.transpose(0, 2, 3, 1, 4, 5).reshape(x.shape[0] * oh * ow, -1)
    return patches, layer.matrix()


@dataclass(eq=False)
class BatchNorm1d:
    """Per-feature normalization; inference uses the running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    name: str = "batchnorm1d"

    kind = "batchnorm1d"

    def __post_init__(self):
        for attr in ("gamma", "beta", "running_mean", "running_var"):
            setattr(self, attr, np.asarray(getattr(self, attr), dtype=float))
        shapes = {self.gamma.shape, self.beta.shape, self.running_mean.shape, self.running_var.shape}
        if len(shapes) != 1 or self.gamma.ndim != 1:
            raise ConfigurationError("Batch-norm parameters must be equal-length vectors")
        if np.any(self.running_var < 0) or not self.eps > 0:
            raise ConfigurationError("Batch-norm requires running_var >= 0 and eps > 0")

    @classmethod
    def identity(cls, features: int, name: str = "batchnorm1d") -> "BatchNorm1d":
        return cls(np.ones(features), np.zeros(features), np.zeros(features), np.ones(features), name=name)

    @property
    def features(self) -> int:
        return self.gamma.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.features:
            raise InputError(f"{self.name} expects (batch, {self.features}) inputs, got {x.shape}")
        return (x - self.running_mean) / np.sqrt(self.running_var + self.eps) * self.gamma + self.beta


@dataclass(eq=False)
class ReLU:
    name: str = "relu"
    kind = "relu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(np.asarray(x, dtype=float), 0.0)


@dataclass(eq=False)
class Flatten:
    name: str = "flatten"
    kind = "flatten"

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x.reshape(x.shape[0], -1)


WeightLayer = Union[DenseLayer, Conv2dLayer]


class InputScaling(Enum):
    """Input handling before crossbar readout."""

    NONE = "none"
    PER_BATCH_MIN_MAX = "per_batch_min_max"


class MemristiveLayer:
    """A dense or conv layer computed on crossbars, with its legacy weights retained."""

    kind = "memristive"

    def __init__(
        self,
        legacy: WeightLayer,
        scheme: RepresentationScheme,
        transform: Optional[TuningTransform] = None,
        scaling: InputScaling = InputScaling.NONE,
        per_column: bool = False,
    ):
        matrix = legacy.matrix()
        if scheme.shape != matrix.shape:
            raise ConfigurationError(
                f"Crossbar shape {scheme.shape} does not match {legacy.name} weights {matrix.shape}"
            )
        self.legacy = legacy
        self.scheme = scheme
        self.transform = transform if transform is not None else TuningTransform()
        self.scaling = scaling
        if scaling is InputScaling.NONE:
            # Unscaled activations are not confined to the read window
            for xbar in scheme.crossbars():
                xbar.read_range = None
        self.per_column = per_column
        self.name = legacy.name
        self.reports: List[ProgrammingReport] = []

    def crossbars(self):
        return self.scheme.crossbars()

    def tuning_inputs(self, rows: int, rng: np.random.Generator) -> np.ndarray:
        if isinstance(self.legacy, Conv2dLayer):
            kh, kw = self.legacy.weight.shape[2:]
            size = max(CONV_TUNING_SIZE, kh, kw)
            return rng.random((rows, self.legacy.in_channels, size, size))
        return rng.random((rows, self.legacy.in_features))

    def raw_output(self, x: np.ndarray) -> np.ndarray:
        m, _ = self.legacy.as_matrix_input(x)
        return self._raw(m)

    def target_output(self, x: np.ndarray) -> np.ndarray:
        m, _ = self.legacy.as_matrix_input(x)
        return m @ self.legacy.matrix()

    def _raw(self, m: np.ndarray) -> np.ndarray:
        if self.scaling is not InputScaling.PER_BATCH_MIN_MAX:
            return self.scheme.raw(m)
        # Reads happen on [0, 1]; the affine rescale is undone before tuning applies.
        lo, hi = float(m.min()), float(m.max())
        scale = hi - lo if hi > lo else 1.0
        ones = np.ones((1, m.shape[1]))
        return scale * self.scheme.raw((m - lo) / scale) + lo * self.scheme.raw(ones)

    def forward(self, x: np.ndarray) -> np.ndarray:
        m, restore = self.legacy.as_matrix_input(x)
        return restore(self.transform.apply(self._raw(m)) + self.legacy.bias)

    def forward_legacy(self, x: np.ndarray) -> np.ndarray:
        return self.legacy.forward(x)

    def __repr__(self) -> str:
        return f"MemristiveLayer({self.name}, {type(self.scheme).__name__}, {self.scaling.value})"


class Network:
    """An ordered sequence of layers."""

    def __init__(self, layers: Sequence[Any]):
        self.layers = list(layers)

    @property
    def patched(self) -> bool:
        return any(isinstance(layer, MemristiveLayer) for layer in self.layers)

    def memristive_layers(self) -> List[MemristiveLayer]:
        return [layer for layer in self.layers if isinstance(layer, MemristiveLayer)]

    def crossbars(self):
        for layer in self.memristive_layers():
            yield from layer.crossbars()

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def forward_legacy(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward_legacy(x) if isinstance(layer, MemristiveLayer) else layer.forward(x)
        return x

    def predict(self, x: np.ndarray, legacy: bool = False) -> np.ndarray:
        outputs = self.forward_legacy(x) if legacy else self.forward(x)
        return np.argmax(outputs, axis=1)

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def __len__(self) -> int:
        return len(self.layers)


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def forward_legacy(layer: Union[MemristiveLayer, Network], x: np.ndarray) -> np.ndarray:
    return layer.forward_legacy(x)


def build_mlp(sizes: Sequence[int], rng: np.random.Generator, batch_norm: bool = False) -> Network:
    """
    Build an MLP with ReLU between dense layers.

    Weights and biases are drawn uniformly from +-1/sqrt(fan_in).
    """
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigurationError(f"Invalid layer sizes: {list(sizes)}")
    layers: List[Any] = []
    for index, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append(
            DenseLayer(
                rng.uniform(-bound, bound, (fan_out, fan_in)),
                rng.uniform(-bound, bound, fan_out),
                name=f"layers.{len(layers)}",
            )
        )
        if index < len(sizes) - 2:
            if batch_norm:
                layers.append(BatchNorm1d.identity(fan_out, name=f"layers.{len(layers)}"))
            layers.append(ReLU(name=f"layers.{len(layers)}"))
    return Network(layers)


# ---------------------------------------------------------------------------
# Conversion
# ---------------------------------------------------------------------------


def _build_scheme(
    matrix: np.ndarray,
    template: DeviceTemplate,
    cfg: MappingConfig,
    arrangement: Arrangement,
    rng: np.random.Generator,
    pulse_options: Dict[str, Any],
) -> Tuple[RepresentationScheme, List[ProgrammingReport]]:
    rows, cols = matrix.shape
    mapped = naive_map(matrix, cfg)

    def _program(xbar, target) -> ProgrammingReport:
        if arrangement is Arrangement.ONE_T1R:
            return program_naive(xbar, target)
        return program_pulsed(xbar, target, **pulse_options)

    if cfg.scheme is MappingScheme.SINGLE:
        xbar = build_crossbar(rows, cols, template, arrangement, rng)
        report = _program(xbar, mapped)
        return SingleColumn(xbar, midpoint_conductance(cfg.r_on, cfg.r_off)), [report]

    g_pos, g_neg = mapped
    pos = build_crossbar(rows, cols, template, arrangement, rng)
    neg = build_crossbar(rows, cols, template, arrangement, rng)
    reports = [_program(pos, g_pos), _program(neg, g_neg)]
    return DoubleColumn(pos, neg), reports


def patch_model(
    net: Network,
    template: DeviceTemplate,
    cfg: MappingConfig,
    stack: Sequence[NonIdeality] = (),
    rng: Optional[np.random.Generator] = None,
    arrangement: Union[str, Arrangement] = Arrangement.ONE_T1R,
    scaling: InputScaling = InputScaling.NONE,
    pulse_options: Optional[Dict[str, Any]] = None,
) -> Network:
    """
    Convert every dense and conv layer of a trained network to crossbars.

    The input network is left untouched. Weights are mapped and programmed
    (naively for 1T1R, with simulated pulses for 1R), then the
    non-ideality stack is applied in order. Tuning is a separate step.

    Args:
        net: Trained network
        template: Device template the crossbars are sampled from
        cfg: Mapping configuration
        stack: Non-idealities applied after programming
        rng: Random generator for device sampling and faults
        arrangement: 1T1R or 1R
        scaling: Input scaling of memristive layers
        pulse_options: Keyword arguments for pulsed programming

    Returns:
        A new network with memristive layers

    Raises:
        StateError: If the network is already patched
    """
    if net.patched:
        raise StateError("Network is already patched")
    rng = rng if rng is not None else np.random.default_rng()
    arrangement = Arrangement.parse(arrangement)
    patched = net.copy()
    for index, layer in enumerate(patched.layers):
        if not isinstance(layer, (DenseLayer, Conv2dLayer)):
            continue
        scheme, reports = _build_scheme(
            layer.matrix(), template, cfg, arrangement, rng, pulse_options or {}
        )
        memristive = MemristiveLayer(layer, scheme, scaling=scaling, per_column=cfg.per_column)
        memristive.reports = reports
        for report in reports:
            if report.unconverged or report.clamped:
                logger.warning(
                    f"{layer.name}: {len(report.unconverged)} unconverged, {report.clamped} clamped"
                )
        patched.layers[index] = memristive
        logger.info(f"Patched {layer.name} onto {type(scheme).__name__} crossbars {scheme.shape}")
    apply_nonidealities(patched, stack, rng)
    return patched


def tune_all(
    net: Network,
    sample_rows: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    calibration: Optional[np.ndarray] = None,
) -> List[TuningTransform]:
    """
    Tune every memristive layer in order.

    Every layer is tuned on the activations the legacy path of the
    preceding layers produces for it. The block entering the first
    memristive layer is ``calibration`` when given, otherwise
    ``sample_rows`` uniform random rows (8 by default).

    Raises:
        StateError: If the network has no memristive layers
    """
    if not net.patched:
        raise StateError("Network must be patched before tuning")
    rng = rng if rng is not None else np.random.default_rng()
    transforms = []
    x = None if calibration is None else np.asarray(calibration, dtype=float)
    for layer in net.layers:
        if isinstance(layer, MemristiveLayer):
            if x is None:
                x = layer.tuning_inputs(sample_rows or DEFAULT_TUNING_ROWS, rng)
            elif calibration is None and np.ptp(x) == 0.0:
                logger.debug(f"Constant activations reach {layer.name}; tuning on random inputs")
                x = layer.tuning_inputs(sample_rows or DEFAULT_TUNING_ROWS, rng)
            transforms.append(tune_layer(layer, sample_rows, rng, inputs=x))
            x = layer.forward_legacy(x)
        elif x is not None:
            x = layer.forward(x)
    return transforms


# ---------------------------------------------------------------------------
# Weight JSON
# ---------------------------------------------------------------------------


def _layer_to_dict(layer: Any) -> Dict[str, Any]:
    if isinstance(layer, MemristiveLayer):
        layer = layer.legacy
    if isinstance(layer, DenseLayer):
        return {
            "kind": "dense",
            "in": layer.in_features,
            "out": layer.out_features,
            "weights": layer.weight.ravel().tolist(),
            "bias": layer.bias.tolist(),
        }
    if isinstance(layer, Conv2dLayer):
        return {
            "kind": "conv2d",
            "in_channels": layer.in_channels,
            "out_channels": layer.out_channels,
            "kernel": list(layer.weight.shape[2:]),
            "stride": layer.stride,
            "padding": layer.padding,
            "weights": layer.weight.ravel().tolist(),
            "bias": layer.bias.tolist(),
        }
    if isinstance(layer, BatchNorm1d):
        return {
            "kind": "batchnorm1d",
            "features": layer.features,
            "gamma": layer.gamma.tolist(),
            "beta": layer.beta.tolist(),
            "running_mean": layer.running_mean.tolist(),
            "running_var": layer.running_var.tolist(),
            "eps": layer.eps,
        }
    if isinstance(layer, (ReLU, Flatten)):
        return {"kind": layer.kind}
    raise ConfigurationError(f"Cannot serialize layer {layer!r}")


def _layer_from_dict(data: Dict[str, Any], name: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigurationError(f"Layer {name} must be an object, got {type(data).__name__}")
    kind = data.get("kind")
    try:
        if kind == "dense":
            weight = np.asarray(data["weights"], dtype=float).reshape(data["out"], data["in"])
            return DenseLayer(weight, np.asarray(data["bias"], dtype=float), name=name)
        if kind == "conv2d":
            shape = (data["out_channels"], data["in_channels"], *data["kernel"])
            weight = np.asarray(data["weights"], dtype=float).reshape(shape)
            return Conv2dLayer(
                weight,
                np.asarray(data["bias"], dtype=float),
                stride=int(data.get("stride", 1)),
                padding=int(data.get("padding", 0)),
                name=name,
            )
        if kind == "batchnorm1d":
            return BatchNorm1d(
                data["gamma"],
                data["beta"],
                data["running_mean"],
                data["running_var"],
                eps=float(data.get("eps", 1e-5)),
                name=name,
            )
        if kind == "relu":
            return ReLU(name=name)
        if kind == "flatten":
            return Flatten(name=name)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid {kind} layer {name}: {e}")
    raise ConfigurationError(f"Unknown layer kind: {kind!r}")


def network_to_dict(net: Network) -> Dict[str, Any]:
    return {"layers": [_layer_to_dict(layer) for layer in net.layers]}


def network_from_dict(data: Dict[str, Any]) -> Network:
    if not isinstance(data, dict) or not isinstance(data.get("layers"), list):
        raise ConfigurationError('Weight document must contain a "layers" list')
    return Network([_layer_from_dict(layer, f"layers.{i}") for i, layer in enumerate(data["layers"])])


def save_weights(net: Network, path: Union[str, Path]) -> None:
    """Write the (legacy) weights of a network as JSON."""
    with open(path, "w") as f:
        json.dump(network_to_dict(net), f)
    logger.info(f"Weights written to {path}")


def load_weights(path: Union[str, Path]) -> Network:
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Invalid weight JSON in {path}: {e}")
    except OSError as e:
        raise ConfigurationError(f"Cannot read weight file {path}: {e}")
    return network_from_dict(data)
