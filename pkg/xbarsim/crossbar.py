"""
Memristive crossbar arrays for xbarsim.

A crossbar is an M x N grid of independently instantiated devices with a
cached conductance matrix. This module covers building crossbars,
programming them (naive state assignment or simulated pulses), ideal
Ohmic readout, the double- and single-column weight representations, and
JSON/CSV export.
"""

import json
import logging
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .device import (
    MODEL_KINDS,
    ArrayLike,
    DeviceTemplate,
    Dependence,
    Memristor,
    Samples,
    VteamParams,
    WindowFunction,
    simulate,
    window_from_dict,
)
from .errors import ConfigurationError, DomainError, InputError, RangeError

logger = logging.getLogger(__name__)

# Longest single pulse, in device timesteps
MAX_PULSE_STEPS = 256

# Fraction above the switching threshold that a decayed pulse still reaches
THRESHOLD_MARGIN = 0.05

# Default read-voltage window, volts
READ_VOLTAGE_RANGE = (0.0, 1.0)


class Arrangement(Enum):
    """Cell arrangement of a crossbar."""

    ONE_R = "1R"
    ONE_T1R = "1T1R"

    @classmethod
    def parse(cls, value: Union[str, "Arrangement"]) -> "Arrangement":
        if isinstance(value, Arrangement):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigurationError(f"Unknown arrangement: {value!r} (expected 1R or 1T1R)")


@dataclass
class ProgrammingReport:
    """Outcome of programming one crossbar."""

    devices: int
    clamped: int = 0
    unconverged: List[Tuple[int, int]] = field(default_factory=list)
    pulses: Optional[np.ndarray] = None
    stuck_skipped: int = 0

    @property
    def converged(self) -> bool:
        return not self.unconverged

    @property
    def total_pulses(self) -> int:
        return 0 if self.pulses is None else int(self.pulses.sum())


class Crossbar:
    """An M x N array of memristive devices with a conductance cache."""

    def __init__(self, devices: Memristor, arrangement: Arrangement = Arrangement.ONE_T1R):
        if len(devices.shape) != 2:
            raise ConfigurationError(f"Crossbar devices must form a 2-D grid, got shape {devices.shape}")
        self.devices = devices
        self.arrangement = Arrangement.parse(arrangement)
        self.rows, self.cols = devices.shape
        self.stuck = np.zeros(devices.shape, dtype=bool)
        # Non-ideal readout hook: (crossbar, voltages) -> currents
        self.reader: Optional[Callable[["Crossbar", np.ndarray], np.ndarray]] = None
        # Called after every programming operation (cycle-to-cycle resampling)
        self.after_programming: Optional[Callable[["Crossbar"], None]] = None
        # I/V lookup table built from the programmed states, see nonideality.build_iv_lut
        self.lut: Optional[Any] = None
        # Number of finite states the devices were quantized to, if any
        self.n_states: Optional[int] = None
        # None disables the read-voltage check
        self.read_range: Optional[Tuple[float, float]] = READ_VOLTAGE_RANGE
        self.conductance = np.empty(devices.shape)
        self.refresh()

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    def refresh(self) -> None:
        """Recompute the conductance cache from the device states."""
        self.conductance = np.asarray(self.devices.conductance(), dtype=float).reshape(self.shape)

    def conductance_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-device attainable conductance range (g_min, g_max)."""
        r_on = np.broadcast_to(self.devices.params.r_on, self.shape)
        r_off = np.broadcast_to(self.devices.params.r_off, self.shape)
        return 1.0 / np.maximum(r_on, r_off), 1.0 / np.minimum(r_on, r_off)

    def set_conductance(self, target: np.ndarray, mask: Optional[np.ndarray] = None) -> None:
        """Set device states so their conductance equals ``target`` (no clamping)."""
        mask = ~self.stuck if mask is None else (mask & ~self.stuck)
        w = np.array(np.broadcast_to(self.devices.w, self.shape), dtype=float)
        w_target = self.devices.params.state_for(1.0 / np.asarray(target, dtype=float))
        w[mask] = np.broadcast_to(w_target, self.shape)[mask]
        self.devices.w = w
        self.refresh()
        # cache holds the requested value; it agrees with 1/R(w) to rounding
        self.conductance[mask] = np.broadcast_to(target, self.shape)[mask]

    def pin(self, mask: np.ndarray, target: np.ndarray) -> None:
        """Force devices to ``target`` conductance and mark them stuck."""
        self.stuck[mask] = False
        self.set_conductance(target, mask)
        self.stuck[mask] = True

    def read(self, v: np.ndarray) -> np.ndarray:
        """Column currents through the installed reader, ideal when none is installed."""
        if self.reader is None:
            return read_currents(self, v, self.read_range)
        return self.reader(self, _checked_voltages(self, v, self.read_range))

    def copy(self) -> "Crossbar":
        clone = Crossbar(self.devices.copy(), self.arrangement)
        clone.stuck = self.stuck.copy()
        clone.reader = self.reader
        clone.after_programming = self.after_programming
        clone.lut = self.lut
        clone.n_states = self.n_states
        clone.read_range = self.read_range
        clone.conductance = self.conductance.copy()
        return clone

    def _programmed(self) -> None:
        self.lut = None
        self.n_states = None
        if self.after_programming is not None:
            self.after_programming(self)
            self.refresh()

    def __repr__(self) -> str:
        return f"Crossbar({self.rows}x{self.cols}, {self.devices.kind}, {self.arrangement.value})"


def build_crossbar(
    rows: int,
    cols: int,
    template: DeviceTemplate,
    arrangement: Union[str, Arrangement] = Arrangement.ONE_T1R,
    rng: Optional[np.random.Generator] = None,
) -> Crossbar:
    """
    Build a crossbar whose devices are independently sampled from a template.

    Args:
        rows: Number of word lines (M)
        cols: Number of bit lines (N)
        template: Device template, possibly with stochastic fields
        arrangement: 1R or 1T1R
        rng: Random generator used for per-device sampling

    Returns:
        A crossbar with every device at the template's initial state

    Raises:
        ConfigurationError: If dimensions or the template are invalid
    """
    if rows < 1 or cols < 1:
        raise ConfigurationError(f"Crossbar dimensions must be >= 1, got {rows}x{cols}")
    if not isinstance(template, DeviceTemplate):
        raise ConfigurationError(f"Expected a DeviceTemplate, got {type(template).__name__}")
    rng = rng if rng is not None else np.random.default_rng()
    devices = template.instantiate(rng, (rows, cols))
    xbar = Crossbar(devices, Arrangement.parse(arrangement))
    logger.debug(f"Built {xbar}")
    return xbar


def _checked_target(xbar: Crossbar, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    if target.shape != xbar.shape:
        raise InputError(f"Target shape {target.shape} does not match crossbar {xbar.shape}")
    if not np.all(np.isfinite(target)) or np.any(target <= 0):
        raise InputError("Target conductances must be finite and positive")
    return target


def _clamp_targets(xbar: Crossbar, target: np.ndarray) -> Tuple[np.ndarray, int]:
    g_min, g_max = xbar.conductance_bounds()
    tolerance = 1e-12
    outside = (target < g_min * (1 - tolerance)) | (target > g_max * (1 + tolerance))
    clamped = int(np.count_nonzero(outside & ~xbar.stuck))
    if clamped:
        logger.warning(f"{clamped} programming targets outside device range were clamped")
    return np.clip(target, g_min, g_max), clamped


def program_naive(xbar: Crossbar, target_conductance: np.ndarray) -> ProgrammingReport:
    """
    Assign every device the state whose conductance equals the target.

    Only valid in a 1T1R arrangement, where each device can be selected on
    its own. Stuck devices are left untouched.

    Raises:
        ConfigurationError: On a 1R crossbar
        InputError: If the target shape does not match
    """
    if xbar.arrangement is Arrangement.ONE_R:
        raise ConfigurationError(
            "Devices in a 1R arrangement cannot be programmed naively; use pulsed programming"
        )
    target, clamped = _clamp_targets(xbar, _checked_target(xbar, target_conductance))
    xbar.set_conductance(target)
    xbar._programmed()
    return ProgrammingReport(
        devices=xbar.rows * xbar.cols,
        clamped=clamped,
        stuck_skipped=int(xbar.stuck.sum()),
    )


def _thresholds(xbar: Crossbar, polarity: np.ndarray) -> np.ndarray:
    """Magnitude of the switching threshold for each device's pulse polarity."""
    params = xbar.devices.params
    if isinstance(params, VteamParams):
        v_off = np.broadcast_to(params.v_off, xbar.shape)
        v_on = np.broadcast_to(params.v_on, xbar.shape)
        return np.where(polarity > 0, v_off, -v_on)
    return np.zeros(xbar.shape)


def drive_amplitude(threshold: np.ndarray, drive: np.ndarray, pulse_amplitude: float) -> np.ndarray:
    """
    Pulse magnitude for a drive strength in [0, 1].

    The magnitude runs from THRESHOLD_MARGIN above the switching threshold
    (drive 0) to ``pulse_amplitude`` (drive 1), so a decayed pulse still
    switches. Amplitudes at or below that floor are used unchanged.
    """
    floor = threshold * (1.0 + THRESHOLD_MARGIN)
    span = np.maximum(pulse_amplitude - floor, 0.0)
    return np.where(pulse_amplitude > floor, floor + drive * span, pulse_amplitude)


def program_pulsed(
    xbar: Crossbar,
    target_conductance: np.ndarray,
    tolerance: float = 0.01,
    max_pulses: Optional[int] = None,
    pulse_amplitude: float = 1.0,
    pulse_duration: Optional[float] = None,
) -> ProgrammingReport:
    """
    Program a crossbar by simulating signed voltage pulses on every device.

    Each device keeps a pulse strength per polarity. A pulse that crosses
    the target halves the strength of its polarity, otherwise the strength
    grows by half. Strength is the pulse duration down to a single
    timestep, then the drive above the switching threshold.

    Args:
        xbar: Crossbar to program (1R or 1T1R)
        target_conductance: M x N target conductances in siemens
        tolerance: Relative conductance tolerance
        max_pulses: Pulse budget per device (defaults to XBARSIM_MAX_PULSES)
        pulse_amplitude: Largest pulse amplitude in volts
        pulse_duration: Initial pulse duration (defaults to one device timestep)

    Returns:
        ProgrammingReport listing unconverged devices

    Raises:
        ConfigurationError: If max_pulses is zero or the amplitude is not positive
    """
    if max_pulses is None:
        from .config import get_config

        max_pulses = get_config().max_pulses
    if max_pulses < 1:
        raise ConfigurationError(f"max_pulses must be >= 1, got {max_pulses}")
    if not pulse_amplitude > 0:
        raise ConfigurationError(f"Pulse amplitude must be positive, got {pulse_amplitude}")
    if not tolerance > 0:
        raise ConfigurationError(f"Tolerance must be positive, got {tolerance}")

    target, clamped = _clamp_targets(xbar, _checked_target(xbar, target_conductance))
    params = xbar.devices.params
    dt = params.dt
    initial_steps = 1.0 if pulse_duration is None else max(1.0, pulse_duration / dt)

    # +1 for pulses that raise conductance, -1 for pulses that lower it
    direction = params.set_polarity * np.sign(
        np.broadcast_to(params.r_off, xbar.shape) - np.broadcast_to(params.r_on, xbar.shape)
    )
    steps = {+1: np.full(xbar.shape, initial_steps), -1: np.full(xbar.shape, initial_steps)}
    scale = {+1: np.ones(xbar.shape), -1: np.ones(xbar.shape)}
    pulses = np.zeros(xbar.shape, dtype=int)

    xbar.refresh()
    for pulse in range(max_pulses):
        error = (xbar.conductance - target) / target
        active = (np.abs(error) > tolerance) & ~xbar.stuck
        if not active.any():
            break
        want = np.where(error < 0, 1, -1)
        polarity = want * direction
        threshold = _thresholds(xbar, polarity)
        n_steps = np.where(want > 0, steps[+1], steps[-1])
        drive = np.where(want > 0, scale[+1], scale[-1])
        amplitude = drive_amplitude(threshold, drive, pulse_amplitude)
        voltage = np.where(active, polarity * amplitude, 0.0)

        counts = np.where(active, np.maximum(1, np.round(n_steps)).astype(int), 0)
        length = int(counts.max())
        timeline = np.arange(length).reshape((length, 1, 1))
        signal = np.where(timeline < counts, voltage, 0.0)
        simulate(xbar.devices, Samples(signal, dt))
        xbar.refresh()
        pulses += active

        new_error = (xbar.conductance - target) / target
        crossed = active & (np.sign(new_error) != np.sign(error))
        grown = active & ~crossed
        for sign in (+1, -1):
            mine = want == sign
            halve = crossed & mine
            at_floor = steps[sign] <= 1.0
            steps[sign] = np.where(halve & ~at_floor, np.maximum(1.0, steps[sign] / 2), steps[sign])
            scale[sign] = np.where(halve & at_floor, scale[sign] / 2, scale[sign])
            grow = grown & mine
            full = scale[sign] >= 1.0
            scale[sign] = np.where(grow & ~full, np.minimum(1.0, scale[sign] * 1.5), scale[sign])
            steps[sign] = np.where(
                grow & full, np.minimum(MAX_PULSE_STEPS, steps[sign] * 1.5), steps[sign]
            )
        logger.debug(f"Pulse {pulse + 1}: {int(active.sum())} devices still programming")

    final_error = np.abs(xbar.conductance - target) / target
    unconverged_mask = (final_error > tolerance) & ~xbar.stuck
    unconverged = [tuple(int(i) for i in idx) for idx in np.argwhere(unconverged_mask)]
    if unconverged:
        logger.warning(f"{len(unconverged)} of {xbar.rows * xbar.cols} devices did not converge")
    xbar._programmed()
    return ProgrammingReport(
        devices=xbar.rows * xbar.cols,
        clamped=clamped,
        unconverged=unconverged,  # type: ignore[arg-type]
        pulses=pulses,
        stuck_skipped=int(xbar.stuck.sum()),
    )


def _checked_voltages(
    xbar: Crossbar, v: np.ndarray, v_range: Optional[Tuple[float, float]] = None
) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim not in (1, 2) or v.shape[-1] != xbar.rows:
        raise InputError(f"Expected {xbar.rows} row voltages, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError("Read voltages must be finite")
    if v_range is not None and v.size:
        lo, hi = v_range
        if v.min() < lo or v.max() > hi:
            raise RangeError(
                f"Read voltages must lie in [{lo}, {hi}] V, got [{v.min():.6g}, {v.max():.6g}]"
            )
    return v


def read_currents(
    xbar: Crossbar,
    v: np.ndarray,
    v_range: Optional[Tuple[float, float]] = READ_VOLTAGE_RANGE,
) -> np.ndarray:
    """
    Ideal Ohmic readout: column j current = sum_i v[i] * g[i, j].

    ``v`` may be a single vector of M voltages or a batch of shape (B, M).
    Voltages must lie inside ``v_range``; pass None to read unbounded inputs.

    Raises:
        InputError: If the voltage count does not match the rows
        DomainError: If a voltage is not finite
        RangeError: If a voltage is outside ``v_range``
    """
    return _checked_voltages(xbar, v, v_range) @ xbar.conductance


@dataclass
class TuningTransform:
    """Affine correction from raw crossbar output to layer output."""

    slope: ArrayLike = 1.0
    intercept: ArrayLike = 0.0
    r_squared: Optional[float] = None

    def __post_init__(self):
        slope = np.asarray(self.slope, dtype=float)
        if not np.all(np.isfinite(slope)) or np.any(slope == 0):
            raise ConfigurationError("Tuning slope must be finite and nonzero")

    def apply(self, raw: np.ndarray) -> np.ndarray:
        return raw * self.slope + self.intercept

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slope": np.asarray(self.slope).tolist(),
            "intercept": np.asarray(self.intercept).tolist(),
            "r_squared": self.r_squared,
        }


@dataclass
class DoubleColumn:
    """Weights as the difference of two crossbars, g_pos - g_neg."""

    pos: Crossbar
    neg: Crossbar

    def __post_init__(self):
        if self.pos.shape != self.neg.shape:
            raise ConfigurationError(
                f"Paired crossbars must match: {self.pos.shape} vs {self.neg.shape}"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pos.shape

    def crossbars(self) -> List[Crossbar]:
        return [self.pos, self.neg]

    def raw(self, a: np.ndarray) -> np.ndarray:
        return self.pos.read(a) - self.neg.read(a)


@dataclass
class SingleColumn:
    """Weights relative to a constant mirrored column of conductance g_m."""

    xbar: Crossbar
    g_m: float

    @property
    def shape(self) -> Tuple[int, int]:
        return self.xbar.shape

    def crossbars(self) -> List[Crossbar]:
        return [self.xbar]

    def raw(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        return self.xbar.read(a) - a.sum(axis=-1, keepdims=True) * self.g_m


RepresentationScheme = Union[DoubleColumn, SingleColumn]


def midpoint_conductance(r_on: float, r_off: float) -> float:
    """g_m = 2 / (R_on + R_off)."""
    return 2.0 / (r_on + r_off)


def vmm(scheme: RepresentationScheme, a: np.ndarray, transform: TuningTransform) -> np.ndarray:
    """
    Vector-matrix multiply a batch of row voltages through a representation scheme.

    Args:
        scheme: DoubleColumn or SingleColumn
        a: batch x M input voltages
        transform: Affine correction applied to the raw current difference

    Returns:
        batch x N outputs
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[1] != scheme.shape[0]:
        raise InputError(f"Expected inputs with {scheme.shape[0]} columns, got shape {a.shape}")
    return transform.apply(scheme.raw(a))


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------


def _params_to_dict(params) -> Dict[str, Any]:
    data: Dict[str, Any] = {"model": params.kind}
    for f in fields(params):
        value = getattr(params, f.name)
        if f.name == "allow_overlap":
            continue
        if isinstance(value, WindowFunction):
            data[f.name] = value.to_dict()
        elif isinstance(value, Dependence):
            data[f.name] = value.value
        elif isinstance(value, np.ndarray):
            data[f.name] = value.tolist()
        elif value is None:
            data[f.name] = None
        else:
            data[f.name] = float(value)
    return data


def _params_from_dict(data: Dict[str, Any]):
    data = dict(data)
    kind = data.pop("model", None)
    if kind not in MODEL_KINDS:
        raise ConfigurationError(f"Unknown device model: {kind!r}")
    values: Dict[str, Any] = {}
    for name, value in data.items():
        if name.startswith("window"):
            values[name] = window_from_dict(value)
        elif name == "dependence":
            values[name] = Dependence(value)
        elif isinstance(value, list):
            values[name] = np.asarray(value, dtype=float)
        else:
            values[name] = value
    try:
        return MODEL_KINDS[kind](allow_overlap=True, **values)
    except TypeError as e:
        raise ConfigurationError(f"Invalid device parameters: {e}")


def crossbar_to_dict(xbar: Crossbar) -> Dict[str, Any]:
    """Serialize dimensions, arrangement, per-device parameters, state and stuck flags."""
    return {
        "rows": xbar.rows,
        "cols": xbar.cols,
        "arrangement": xbar.arrangement.value,
        "params": _params_to_dict(xbar.devices.params),
        "nominal": _params_to_dict(xbar.devices.nominal),
        "w": np.broadcast_to(xbar.devices.w, xbar.shape).tolist(),
        "stuck": xbar.stuck.tolist(),
    }


def crossbar_from_dict(data: Dict[str, Any]) -> Crossbar:
    try:
        params = _params_from_dict(data["params"])
        nominal = _params_from_dict(data.get("nominal", data["params"]))
        devices = Memristor(params, w=np.asarray(data["w"], dtype=float), nominal=nominal)
        xbar = Crossbar(devices, Arrangement.parse(data["arrangement"]))
        xbar.stuck = np.asarray(data.get("stuck", np.zeros(xbar.shape)), dtype=bool)
    except KeyError as e:
        raise ConfigurationError(f"Crossbar document is missing {e}")
    if xbar.shape != (data["rows"], data["cols"]):
        raise ConfigurationError("Crossbar document dimensions do not match its device grid")
    return xbar


def scheme_to_dict(scheme: RepresentationScheme) -> Dict[str, Any]:
    if isinstance(scheme, DoubleColumn):
        return {
            "scheme": "double",
            "pos": crossbar_to_dict(scheme.pos),
            "neg": crossbar_to_dict(scheme.neg),
        }
    return {"scheme": "single", "g_m": scheme.g_m, "xbar": crossbar_to_dict(scheme.xbar)}


def scheme_from_dict(data: Dict[str, Any]) -> RepresentationScheme:
    kind = data.get("scheme")
    if kind == "double":
        return DoubleColumn(crossbar_from_dict(data["pos"]), crossbar_from_dict(data["neg"]))
    if kind == "single":
        return SingleColumn(crossbar_from_dict(data["xbar"]), float(data["g_m"]))
    raise ConfigurationError(f"Unknown representation scheme: {kind!r}")


def save_scheme(scheme: RepresentationScheme, path: Union[str, Path]) -> None:
    with open(path, "w") as f:
        json.dump(scheme_to_dict(scheme), f)
    logger.info(f"Crossbar state written to {path}")


def load_scheme(path: Union[str, Path]) -> RepresentationScheme:
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Invalid crossbar JSON in {path}: {e}")
    except OSError as e:
        raise ConfigurationError(f"Cannot read crossbar file {path}: {e}")
    return scheme_from_dict(data)


def conductance_to_csv(xbar: Crossbar, path: Union[str, Path]) -> None:
    """Write the conductance matrix (row-major, siemens) without headers."""
    pd.DataFrame(xbar.conductance).to_csv(path, header=False, index=False, float_format="%.17g")
