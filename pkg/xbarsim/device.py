"""
Behavioral memristor device models for xbarsim.

This module provides the linear ion drift and VTEAM models, window
functions, stochastic parameters for device-to-device variability, and a
forward-Euler finite-difference simulator. Every model function is
vectorized: parameters and state may be scalars or arrays of independent
devices, which is how crossbars step thousands of devices at once.
"""

import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ConfigurationError, DomainError, InputError, RangeError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

MAX_REDRAWS = 100
RESISTANCE_FLOOR = 1.0


def _as_output(value: Any) -> ArrayLike:
    """Return Python floats for 0-d results and arrays otherwise."""
    array = np.asarray(value, dtype=float)
    if array.ndim == 0:
        return float(array)
    return array


def _checked_voltage(v: ArrayLike) -> np.ndarray:
    array = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(array)):
        raise InputError("Voltage must be finite")
    return array


# ---------------------------------------------------------------------------
# Window functions
# ---------------------------------------------------------------------------


class WindowFunction:
    """Multiplicative factor restricting state-variable evolution to [0, 1]."""

    kind = "abstract"

    def factor(self, x: ArrayLike, current_sign: ArrayLike) -> np.ndarray:
        """Evaluate the window without domain checks (vectorized)."""
        raise NotImplementedError

    def to_dict(self) -> Dict[str, Any]:
        data = {"kind": self.kind}
        data.update({f.name: getattr(self, f.name) for f in fields(self)})  # type: ignore[arg-type]
        return data


def _positive_integer(name: str, value: Any) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class NoWindow(WindowFunction):
    """Unit window: state evolution is limited only by hard clamping."""

    kind = "none"

    def factor(self, x, current_sign):
        return np.ones_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Joglekar(WindowFunction):
    """f(x) = 1 - (2x - 1)^(2p)."""

    p: int = 2
    kind = "joglekar"

    def __post_init__(self):
        _positive_integer("Joglekar p", self.p)

    def factor(self, x, current_sign):
        x = np.asarray(x, dtype=float)
        return 1.0 - (2.0 * x - 1.0) ** (2 * self.p)


@dataclass(frozen=True)
class Biolek(WindowFunction):
    """f(x) = 1 - (x - stp(-i))^(2p), stp(s) = 1 for s >= 0 else 0."""

    p: int = 2
    kind = "biolek"

    def __post_init__(self):
        _positive_integer("Biolek p", self.p)

    def factor(self, x, current_sign):
        x = np.asarray(x, dtype=float)
        stp = np.where(-np.asarray(current_sign, dtype=float) >= 0, 1.0, 0.0)
        return 1.0 - (x - stp) ** (2 * self.p)


@dataclass(frozen=True)
class Prodromakis(WindowFunction):
    """f(x) = j * (1 - ((x - 0.5)^2 + 0.75)^p), clipped into [0, 1]."""

    p: float = 2.0
    j: float = 1.0
    kind = "prodromakis"

    def __post_init__(self):
        if not (math.isfinite(self.p) and self.p > 0):
            raise ConfigurationError(f"Prodromakis p must be positive, got {self.p!r}")
        if not (math.isfinite(self.j) and self.j > 0):
            raise ConfigurationError(f"Prodromakis j must be positive, got {self.j!r}")

    def factor(self, x, current_sign):
        x = np.asarray(x, dtype=float)
        value = self.j * (1.0 - ((x - 0.5) ** 2 + 0.75) ** self.p)
        return np.clip(value, 0.0, 1.0)


WINDOWS: Dict[str, type] = {
    "none": NoWindow,
    "joglekar": Joglekar,
    "biolek": Biolek,
    "prodromakis": Prodromakis,
}


def window_from_dict(data: Optional[Dict[str, Any]]) -> WindowFunction:
    """Build a window function from {"kind": ..., parameters...}."""
    if data is None:
        return NoWindow()
    data = dict(data)
    kind = str(data.pop("kind", "none")).lower()
    if kind not in WINDOWS:
        raise ConfigurationError(f"Unknown window function: {kind}")
    try:
        return WINDOWS[kind](**data)
    except TypeError as e:
        raise ConfigurationError(f"Invalid parameters for {kind} window: {e}")


def window_eval(wf: WindowFunction, x: ArrayLike, current_sign: ArrayLike = 0) -> ArrayLike:
    """
    Evaluate a window function at a normalized state.

    Args:
        wf: Window function
        x: Normalized state in [0, 1]
        current_sign: Sign of the device current, one of -1, 0, +1

    Returns:
        Multiplicative factor in [0, 1]

    Raises:
        DomainError: If x lies outside [0, 1]
    """
    x_array = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x_array)) or np.any(x_array < 0.0) or np.any(x_array > 1.0):
        raise DomainError(f"Normalized state must lie in [0, 1], got {x!r}")
    sign = np.asarray(current_sign, dtype=float)
    if np.any(~np.isin(sign, (-1.0, 0.0, 1.0))):
        raise DomainError(f"current_sign must be -1, 0 or +1, got {current_sign!r}")
    return _as_output(wf.factor(x_array, sign))


# ---------------------------------------------------------------------------
# Stochastic parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    """Deterministic parameter value."""

    value: float

    @property
    def mean(self) -> float:
        return float(self.value)

    def sample(self, rng: np.random.Generator, size=None) -> ArrayLike:
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))

    def to_dict(self) -> Dict[str, Any]:
        return {"dist": "constant", "value": self.value}


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal distribution restricted to [min, max] by bounded rejection."""

    mean: float
    std_dev: float
    min: float = -math.inf
    max: float = math.inf

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std_dev)):
            raise ConfigurationError("TruncatedNormal mean and std_dev must be finite")
        if self.std_dev < 0:
            raise ConfigurationError(f"TruncatedNormal std_dev must be >= 0, got {self.std_dev}")
        if not (self.min <= self.mean <= self.max):
            raise ConfigurationError(
                f"TruncatedNormal requires min <= mean <= max, got "
                f"{self.min} <= {self.mean} <= {self.max}"
            )

    def sample(self, rng: np.random.Generator, size=None) -> ArrayLike:
        shape = (1,) if size is None else size
        if self.std_dev == 0:
            values = np.full(shape, float(self.mean))
        else:
            values = np.asarray(rng.normal(self.mean, self.std_dev, size=shape), dtype=float)
            for _ in range(MAX_REDRAWS):
                outside = (values < self.min) | (values > self.max)
                count = int(outside.sum())
                if count == 0:
                    break
                values[outside] = rng.normal(self.mean, self.std_dev, size=count)
            values = np.clip(values, self.min, self.max)
        if size is None:
            return float(values[0])
        return values

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"dist": "truncated_normal", "mean": self.mean, "std": self.std_dev}
        if math.isfinite(self.min):
            data["min"] = self.min
        if math.isfinite(self.max):
            data["max"] = self.max
        return data


StochasticParameter = Union[Constant, TruncatedNormal]


def sample_parameter(sp: StochasticParameter, rng: np.random.Generator, size=None) -> ArrayLike:
    """Draw one value (or an array of ``size``) from a stochastic parameter."""
    return sp.sample(rng, size)


def parameter_from_json(value: Any) -> Union[float, StochasticParameter]:
    """Parse a plain number or a {"dist": ...} document."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, dict):
        raise ConfigurationError(f"Expected a number or a distribution, got {value!r}")
    data = dict(value)
    dist = data.pop("dist", None)
    if dist == "constant":
        allowed = {"value"}
    elif dist == "truncated_normal":
        allowed = {"mean", "std", "min", "max"}
    else:
        raise ConfigurationError(f"Unknown distribution: {dist!r}")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigurationError(f"Unknown keys for {dist}: {', '.join(sorted(unknown))}")
    if dist == "constant":
        return Constant(float(data["value"]))
    try:
        return TruncatedNormal(
            mean=float(data["mean"]),
            std_dev=float(data["std"]),
            min=float(data.get("min", -math.inf)),
            max=float(data.get("max", math.inf)),
        )
    except KeyError as e:
        raise ConfigurationError(f"truncated_normal requires {e}")


# ---------------------------------------------------------------------------
# Voltage signals and traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sinusoid:
    """v(t) = amplitude * sin(2*pi*frequency*t) for t in [0, duration]."""

    amplitude: float
    frequency: float
    duration: float

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ConfigurationError(f"Signal duration must be > 0, got {self.duration}")
        if not (math.isfinite(self.frequency) and self.frequency >= 0):
            raise ConfigurationError(f"Signal frequency must be >= 0, got {self.frequency}")
        if not math.isfinite(self.amplitude):
            raise ConfigurationError("Signal amplitude must be finite")

    def sample(self, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        n = max(1, int(round(self.duration / dt)))
        t = np.arange(n + 1) * dt
        return t, self.amplitude * np.sin(2.0 * np.pi * self.frequency * t)


@dataclass(frozen=True, eq=False)
class Samples:
    """Explicit voltage samples at a fixed timestep.

    ``values`` has shape (T,) or (T, *device_shape) for per-device signals.
    """

    values: np.ndarray
    dt: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 0 or values.shape[0] < 1:
            raise ConfigurationError("Sampled signal needs at least one sample")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(f"Sampled signal dt must be > 0, got {self.dt}")
        object.__setattr__(self, "values", values)

    def sample(self, dt: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
        return np.arange(self.values.shape[0]) * self.dt, self.values


VoltageSignal = Union[Sinusoid, Samples]


@dataclass(eq=False)
class SimulationTrace:
    """Time, voltage, current and state sequences of equal length."""

    time: np.ndarray
    voltage: np.ndarray
    current: np.ndarray
    state: np.ndarray

    def __post_init__(self):
        lengths = {len(self.time), len(self.voltage), len(self.current), len(self.state)}
        if len(lengths) != 1:
            raise InputError(f"Trace sequences must have equal length, got {sorted(lengths)}")

    def to_frame(self) -> pd.DataFrame:
        if np.ndim(self.current) != 1:
            raise InputError("Only single-device traces can be tabulated")
        return pd.DataFrame({"t": self.time, "v": self.voltage, "i": self.current, "w": self.state})

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)
        logger.info(f"Trace with {len(self.time)} samples written to {path}")


# ---------------------------------------------------------------------------
# Model parameters
# ---------------------------------------------------------------------------


def _validate_resistances(r_on: ArrayLike, r_off: ArrayLike, allow_overlap: bool) -> None:
    r_on_a = np.asarray(r_on, dtype=float)
    r_off_a = np.asarray(r_off, dtype=float)
    if not (np.all(np.isfinite(r_on_a)) and np.all(np.isfinite(r_off_a))):
        raise ConfigurationError("R_on and R_off must be finite")
    if np.any(r_on_a <= 0) or np.any(r_off_a <= 0):
        raise ConfigurationError("R_on and R_off must be positive")
    if not allow_overlap and np.any(r_off_a <= r_on_a):
        raise ConfigurationError("R_off must be greater than R_on")


def _safe_ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    numerator, denominator = np.broadcast_arrays(
        np.asarray(numerator, dtype=float), np.asarray(denominator, dtype=float)
    )
    out = np.zeros(numerator.shape)
    np.divide(numerator, denominator, out=out, where=denominator != 0)
    return out


class Dependence(Enum):
    """Resistance dependence on the VTEAM state variable."""

    LINEAR = "linear"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True, eq=False)
class LinearIonDriftParams:
    """Parameters of the ideal linear ion drift model (SI units)."""

    r_on: ArrayLike = 1000.0
    r_off: ArrayLike = 2000.0
    d: float = 10e-9
    mu_v: ArrayLike = 1e-14
    window: WindowFunction = field(default_factory=lambda: Joglekar(2))
    dt: float = 1e-3
    allow_overlap: bool = field(default=False, repr=False)

    kind = "linear_ion_drift"
    stochastic_fields = ("r_on", "r_off", "mu_v")
    # voltage sign that moves the state toward R_on
    set_polarity = 1.0

    def __post_init__(self):
        _validate_resistances(self.r_on, self.r_off, self.allow_overlap)
        if not (self.d > 0):
            raise ConfigurationError(f"Device width D must be > 0, got {self.d}")
        if not (self.dt > 0):
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        if np.any(np.asarray(self.mu_v) <= 0):
            raise ConfigurationError("Ion mobility mu_v must be positive")

    @property
    def w_lower(self) -> float:
        return 0.0

    @property
    def w_upper(self) -> float:
        return self.d

    def resistance(self, w: ArrayLike) -> np.ndarray:
        x = np.asarray(w, dtype=float) / self.d
        return self.r_on * x + self.r_off * (1.0 - x)

    def state_for(self, r: ArrayLike) -> np.ndarray:
        x = _safe_ratio(np.asarray(self.r_off) - np.asarray(r, dtype=float), np.asarray(self.r_off) - np.asarray(self.r_on))
        return np.clip(x, 0.0, 1.0) * self.d


@dataclass(frozen=True, eq=False)
class VteamParams:
    """Parameters of the VTEAM threshold model (SI units)."""

    r_on: ArrayLike = 50.0
    r_off: ArrayLike = 1000.0
    k_on: ArrayLike = -10.0
    k_off: ArrayLike = 5e-4
    alpha_on: ArrayLike = 3.0
    alpha_off: ArrayLike = 1.0
    v_on: ArrayLike = -0.2
    v_off: ArrayLike = 0.02
    w_on: float = 0.0
    w_off: float = 3e-9
    dependence: Dependence = Dependence.LINEAR
    window_on: WindowFunction = field(default_factory=NoWindow)
    window_off: WindowFunction = field(default_factory=NoWindow)
    dt: float = 1e-10
    lambda_: Optional[float] = None
    allow_overlap: bool = field(default=False, repr=False)

    kind = "vteam"
    set_polarity = -1.0
    stochastic_fields = ("r_on", "r_off", "k_on", "k_off", "alpha_on", "alpha_off", "v_on", "v_off")

    def __post_init__(self):
        _validate_resistances(self.r_on, self.r_off, self.allow_overlap)
        if not (np.all(np.asarray(self.v_on) < 0) and np.all(np.asarray(self.v_off) > 0)):
            raise ConfigurationError("VTEAM thresholds require v_on < 0 < v_off")
        if not (np.all(np.asarray(self.k_on) < 0) and np.all(np.asarray(self.k_off) > 0)):
            raise ConfigurationError("VTEAM rates require k_on < 0 < k_off")
        if not (self.w_on < self.w_off):
            raise ConfigurationError("VTEAM bounds require w_on < w_off")
        if not (self.dt > 0):
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        if self.lambda_ is not None and not self.allow_overlap:
            ratio = np.asarray(self.r_off, dtype=float) / np.asarray(self.r_on, dtype=float)
            if np.any(np.abs(math.exp(self.lambda_) - ratio) > 1e-9 * ratio):
                raise ConfigurationError("VTEAM lambda must satisfy exp(lambda) = R_off / R_on")

    @property
    def w_lower(self) -> float:
        return self.w_on

    @property
    def w_upper(self) -> float:
        return self.w_off

    @property
    def lam(self) -> np.ndarray:
        """Exponential fitting parameter, ln(R_off / R_on)."""
        return np.log(np.asarray(self.r_off, dtype=float) / np.asarray(self.r_on, dtype=float))

    def resistance(self, w: ArrayLike) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        span = self.w_off - self.w_on
        if self.dependence is Dependence.EXPONENTIAL:
            return self.r_on * np.exp(self.lam * (w - self.w_on) / span)
        return self.r_on + (self.r_off - np.asarray(self.r_on)) / span * (w - self.w_on)

    def state_for(self, r: ArrayLike) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        span = self.w_off - self.w_on
        if self.dependence is Dependence.EXPONENTIAL:
            x = _safe_ratio(np.log(r / self.r_on), self.lam)
        else:
            x = _safe_ratio(r - self.r_on, np.asarray(self.r_off) - np.asarray(self.r_on))
        return self.w_on + np.clip(x, 0.0, 1.0) * span


DeviceParams = Union[LinearIonDriftParams, VteamParams]


@dataclass(frozen=True, eq=False)
class DeviceState:
    """Internal state variable w in meters."""

    w: ArrayLike


# ---------------------------------------------------------------------------
# Model dynamics
# ---------------------------------------------------------------------------


def linear_ion_drift_step(
    params: LinearIonDriftParams, state: DeviceState, v: ArrayLike, dt: Optional[float] = None
) -> Tuple[DeviceState, ArrayLike]:
    """
    Advance the linear ion drift model by one explicit Euler step.

    Args:
        params: Model parameters
        state: Current state
        v: Applied voltage (scalar or per-device array)
        dt: Timestep in seconds (defaults to params.dt)

    Returns:
        (new state, current through the device at the start of the step)
    """
    v = _checked_voltage(v)
    dt = params.dt if dt is None else dt
    w = np.asarray(state.w, dtype=float)
    current = v / params.resistance(w)
    x = np.clip(w / params.d, 0.0, 1.0)
    rate = params.mu_v * params.r_on / params.d * current * params.window.factor(x, np.sign(current))
    w_new = np.clip(w + dt * rate, 0.0, params.d)
    return DeviceState(_as_output(w_new)), _as_output(current)


def vteam_step(
    params: VteamParams, state: DeviceState, v: ArrayLike, dt: Optional[float] = None
) -> Tuple[DeviceState, ArrayLike]:
    """
    Advance the VTEAM model by one explicit Euler step.

    Between the thresholds the state is returned untouched, bit for bit.

    Returns:
        (new state, current through the device at the start of the step)
    """
    v = _checked_voltage(v)
    dt = params.dt if dt is None else dt
    w = np.asarray(state.w, dtype=float)
    x = np.clip((w - params.w_on) / (params.w_off - params.w_on), 0.0, 1.0)
    sign = np.sign(v)

    off = v > params.v_off
    on = v < params.v_on
    drive_off = np.where(off, v / params.v_off - 1.0, 0.0)
    drive_on = np.where(on, v / params.v_on - 1.0, 0.0)
    rate = np.where(off, params.k_off * drive_off ** params.alpha_off * params.window_off.factor(x, sign), 0.0)
    rate = np.where(on, params.k_on * drive_on ** params.alpha_on * params.window_on.factor(x, sign), rate)

    current = v / params.resistance(w)
    moved = np.clip(w + dt * rate, params.w_on, params.w_off)
    w_new = np.where(off | on, moved, w)
    return DeviceState(_as_output(w_new)), _as_output(current)


STEP_FUNCTIONS: Dict[str, Callable[..., Tuple[DeviceState, ArrayLike]]] = {
    LinearIonDriftParams.kind: linear_ion_drift_step,
    VteamParams.kind: vteam_step,
}


def state_for_resistance(params: DeviceParams, r_target: ArrayLike) -> DeviceState:
    """
    Invert the resistance formula of a model.

    Raises:
        RangeError: If r_target lies outside [R_on, R_off]
    """
    r = np.asarray(r_target, dtype=float)
    lower = np.minimum(params.r_on, params.r_off)
    upper = np.maximum(params.r_on, params.r_off)
    tolerance = 1e-12 * upper
    if np.any(~np.isfinite(r)) or np.any(r < lower - tolerance) or np.any(r > upper + tolerance):
        raise RangeError(f"Target resistance outside [R_on, R_off]: {r_target!r}")
    return DeviceState(_as_output(params.state_for(np.clip(r, lower, upper))))


# ---------------------------------------------------------------------------
# Device instances
# ---------------------------------------------------------------------------


class Memristor:
    """A memristive device, or an array of independent devices of one model kind."""

    def __init__(
        self,
        params: DeviceParams,
        w: Optional[ArrayLike] = None,
        initial_resistance: Optional[float] = None,
        nominal: Optional[DeviceParams] = None,
    ):
        """
        Initialize a device.

        Args:
            params: Model parameters, scalars or per-device arrays
            w: Initial state; defaults to the state of ``initial_resistance``
            initial_resistance: Defaults to R_off
            nominal: Parameters the device was instantiated around
        """
        self.params = params
        self.nominal = nominal if nominal is not None else params
        shape = np.broadcast(np.asarray(params.r_on), np.asarray(params.r_off)).shape
        if w is None:
            target = params.r_off if initial_resistance is None else initial_resistance
            w = np.broadcast_to(state_for_resistance(params, target).w, shape)
        w_array = np.array(w, dtype=float)
        self.w: ArrayLike = float(w_array) if w_array.ndim == 0 else w_array

    @property
    def kind(self) -> str:
        return self.params.kind

    @property
    def shape(self) -> Tuple[int, ...]:
        return np.shape(self.w)

    @property
    def dt(self) -> float:
        return self.params.dt

    def resistance(self) -> ArrayLike:
        return _as_output(self.params.resistance(self.w))

    def conductance(self) -> ArrayLike:
        return _as_output(1.0 / np.asarray(self.params.resistance(self.w)))

    def step(self, v: ArrayLike, dt: Optional[float] = None) -> ArrayLike:
        """Apply ``v`` for one timestep, update the state, return the current."""
        state, current = STEP_FUNCTIONS[self.kind](self.params, DeviceState(self.w), v, dt)
        self.w = state.w
        return current

    def set_resistance(self, r_target: ArrayLike) -> None:
        self.w = state_for_resistance(self.params, r_target).w

    def simulate(self, signal: VoltageSignal) -> SimulationTrace:
        return simulate(self, signal)

    def copy(self) -> "Memristor":
        w = self.w.copy() if isinstance(self.w, np.ndarray) else self.w
        return Memristor(self.params, w=w, nominal=self.nominal)

    def device(self, index: Tuple[int, ...]) -> "Memristor":
        """Return an independent scalar copy of one device of an array."""
        values = {}
        for name in self.params.stochastic_fields:
            value = getattr(self.params, name)
            values[name] = float(np.asarray(value)[index]) if np.ndim(value) else value
        params = replace(self.params, allow_overlap=True, **values)
        return Memristor(params, w=float(np.asarray(self.w)[index]), nominal=params)


def simulate(device: Memristor, signal: VoltageSignal) -> SimulationTrace:
    """
    Roll a device out under a voltage signal with explicit forward Euler.

    The device state is mutated. The recorded state and current at each
    sample are those at the start of the corresponding step.

    Raises:
        ConfigurationError: If a sampled signal's dt differs from the device dt
    """
    dt = device.dt
    if isinstance(signal, Samples) and not math.isclose(signal.dt, dt, rel_tol=1e-12):
        raise ConfigurationError(f"Signal dt {signal.dt} does not match device dt {dt}")
    t, v = signal.sample(dt)
    n = v.shape[0]
    states = np.empty((n,) + device.shape)
    currents = np.empty((n,) + np.broadcast(np.empty(device.shape), v[0]).shape)
    for k in range(n):
        states[k] = device.w
        currents[k] = device.step(v[k], dt)
    return SimulationTrace(time=t, voltage=v, current=currents, state=states)


# ---------------------------------------------------------------------------
# Templates and presets
# ---------------------------------------------------------------------------

MODEL_KINDS: Dict[str, type] = {
    LinearIonDriftParams.kind: LinearIonDriftParams,
    VteamParams.kind: VteamParams,
}


@dataclass(frozen=True)
class DeviceTemplate:
    """Nominal device parameters plus the fields sampled per instantiation."""

    params: DeviceParams
    stochastic: Dict[str, StochasticParameter] = field(default_factory=dict)
    initial_resistance: Optional[float] = None

    def __post_init__(self):
        unknown = set(self.stochastic) - set(self.params.stochastic_fields)
        if unknown:
            raise ConfigurationError(
                f"Fields cannot be stochastic for {self.params.kind}: {', '.join(sorted(unknown))}"
            )
        if self.initial_resistance is not None:
            state_for_resistance(self.nominal(), self.initial_resistance)

    @property
    def kind(self) -> str:
        return self.params.kind

    def nominal(self) -> DeviceParams:
        """Parameters with every stochastic field at its mean."""
        means = {name: sp.mean for name, sp in self.stochastic.items()}
        return replace(self.params, **means) if means else self.params

    def instantiate(self, rng: np.random.Generator, shape: Tuple[int, ...] = ()) -> Memristor:
        """Sample independent per-device parameters for an array of devices."""
        sampled: Dict[str, ArrayLike] = {}
        for name in self.params.stochastic_fields:
            if name in self.stochastic:
                sampled[name] = sample_parameter(self.stochastic[name], rng, shape if shape else None)
        for name in ("r_on", "r_off"):
            if name not in sampled and shape:
                sampled[name] = np.full(shape, float(getattr(self.params, name)))
        try:
            params = replace(self.nominal(), allow_overlap=True, **sampled)
        except ConfigurationError as e:
            raise ConfigurationError(f"Sampled parameters are invalid: {e}")
        initial = self.initial_resistance
        if initial is None:
            initial_state = params.state_for(params.r_off)
        else:
            lower = np.minimum(params.r_on, params.r_off)
            upper = np.maximum(params.r_on, params.r_off)
            initial_state = params.state_for(np.clip(initial, lower, upper))
        w = np.broadcast_to(initial_state, shape) if shape else initial_state
        return Memristor(params, w=w, nominal=params)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"model": self.kind}
        for f in fields(self.params):
            if f.name == "allow_overlap":
                continue
            value = getattr(self.params, f.name)
            if f.name in self.stochastic:
                data[f.name] = self.stochastic[f.name].to_dict()
            elif isinstance(value, WindowFunction):
                data[f.name] = value.to_dict()
            elif isinstance(value, Dependence):
                data[f.name] = value.value
            elif f.name == "lambda_":
                if value is not None:
                    data["lambda"] = value
            else:
                data[f.name] = float(value)
        if self.initial_resistance is not None:
            data["initial_resistance"] = self.initial_resistance
        return data


def template_from_dict(doc: Dict[str, Any], base: Optional[DeviceTemplate] = None) -> DeviceTemplate:
    """
    Build a device template from a JSON document.

    The document names the model ("vteam" or "linear_ion_drift") and any
    parameter fields; a field may be a number or a distribution document.
    When ``base`` is given, the document overrides it field by field.

    Raises:
        ConfigurationError: On unknown keys or invalid values
    """
    doc = dict(doc)
    kind = doc.pop("model", base.kind if base is not None else None)
    if kind not in MODEL_KINDS:
        raise ConfigurationError(f"Unknown device model: {kind!r}")
    cls = MODEL_KINDS[kind]
    if base is not None and base.kind == kind:
        values: Dict[str, Any] = {
            f.name: getattr(base.params, f.name) for f in fields(base.params) if f.name != "allow_overlap"
        }
        stochastic: Dict[str, StochasticParameter] = dict(base.stochastic)
        initial = base.initial_resistance
    else:
        values, stochastic, initial = {}, {}, None

    if "initial_resistance" in doc:
        initial = float(doc.pop("initial_resistance"))
    if "lambda" in doc:
        doc["lambda_"] = doc.pop("lambda")
    field_names = {f.name for f in fields(cls)} - {"allow_overlap"}
    unknown = set(doc) - field_names
    if unknown:
        raise ConfigurationError(f"Unknown keys for {kind}: {', '.join(sorted(unknown))}")

    for name, raw in doc.items():
        if name in ("window", "window_on", "window_off"):
            values[name] = window_from_dict(raw)
        elif name == "dependence":
            try:
                values[name] = Dependence(str(raw).lower())
            except ValueError:
                raise ConfigurationError(f"Unknown dependence: {raw!r}")
        elif name == "lambda_":
            values[name] = None if raw is None else float(raw)
        else:
            parsed = parameter_from_json(raw)
            if isinstance(parsed, float):
                values[name] = parsed
                stochastic.pop(name, None)
            else:
                if name not in cls.stochastic_fields:
                    raise ConfigurationError(f"Field {name} cannot be stochastic")
                values[name] = parsed.mean
                stochastic[name] = parsed
    params = cls(**values)
    return DeviceTemplate(params=params, stochastic=stochastic, initial_resistance=initial)


def load_device_preset(path: Union[str, Path]) -> DeviceTemplate:
    """Load a device template from a JSON file."""
    try:
        with open(path, "r") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Invalid device JSON in {path}: {e}")
    except OSError as e:
        raise ConfigurationError(f"Cannot read device file {path}: {e}")
    if not isinstance(doc, dict):
        raise ConfigurationError(f"Device JSON in {path} must be an object")
    return template_from_dict(doc)


def with_variability(template: DeviceTemplate, sigma: float) -> DeviceTemplate:
    """
    Add device-to-device variability with sigma(R_on) = sigma, sigma(R_off) = 2*sigma.

    Resistances are bounded below by RESISTANCE_FLOOR to stay positive.
    """
    if sigma < 0:
        raise ConfigurationError(f"Variability sigma must be >= 0, got {sigma}")
    nominal = template.nominal()
    stochastic = dict(template.stochastic)
    for name, scale in (("r_on", 1.0), ("r_off", 2.0)):
        mean = float(getattr(nominal, name))
        stochastic[name] = TruncatedNormal(mean, scale * sigma, min=min(RESISTANCE_FLOOR, mean))
    return replace(template, stochastic=stochastic)


def with_ratio(template: DeviceTemplate, ratio: float) -> DeviceTemplate:
    """Set nominal R_off = ratio * R_on, keeping any variability on R_off."""
    if not ratio > 1:
        raise ConfigurationError(f"R_off / R_on ratio must be > 1, got {ratio}")
    r_off = float(template.nominal().r_on) * ratio
    stochastic = dict(template.stochastic)
    if "r_off" in stochastic and isinstance(stochastic["r_off"], TruncatedNormal):
        old = stochastic["r_off"]
        stochastic["r_off"] = TruncatedNormal(r_off, old.std_dev, min=min(old.min, r_off))
    else:
        stochastic.pop("r_off", None)
    initial = template.initial_resistance
    if initial is not None and initial > r_off:
        initial = r_off
    return DeviceTemplate(
        params=replace(template.params, r_off=r_off),
        stochastic=stochastic,
        initial_resistance=initial,
    )


def _linear_ion_drift_preset() -> DeviceTemplate:
    # Joglekar vanishes at w = 0, so an R_off start would never move
    return DeviceTemplate(LinearIonDriftParams(), initial_resistance=1500.0)


def _team_preset() -> DeviceTemplate:
    return DeviceTemplate(VteamParams())


def _pt_hf_ti_preset() -> DeviceTemplate:
    return DeviceTemplate(
        VteamParams(
            r_on=100.0,
            r_off=2500.0,
            k_on=-0.05,
            k_off=0.05,
            alpha_on=3.0,
            alpha_off=3.0,
            v_on=-0.5,
            v_off=0.5,
            w_on=0.0,
            w_off=3e-9,
        )
    )


PRESETS: Dict[str, Callable[[], DeviceTemplate]] = {
    "linear_ion_drift": _linear_ion_drift_preset,
    "team": _team_preset,
    "pt_hf_ti": _pt_hf_ti_preset,
}


def get_preset(name: str) -> DeviceTemplate:
    """Get a named device preset."""
    try:
        return PRESETS[name.lower()]()
    except KeyError:
        raise ConfigurationError(f"Unknown device preset: {name!r} (known: {', '.join(sorted(PRESETS))})")
