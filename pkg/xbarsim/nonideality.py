"""
Non-ideal device characteristics for xbarsim.

Finite conductance states, stuck-at faults, cycle-to-cycle variability and
non-linear I/V readout. Each applier accepts a network, a memristive
layer, a representation scheme or a crossbar and walks down to the
crossbars it contains.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .crossbar import Crossbar
from .device import (
    MAX_REDRAWS,
    RESISTANCE_FLOOR,
    STEP_FUNCTIONS,
    DeviceState,
    Memristor,
    Sinusoid,
    VoltageSignal,
    simulate,
)
from .errors import ConfigurationError, InputError, StateError

logger = logging.getLogger(__name__)

# Element count above which quantize splits work across threads
PARALLEL_THRESHOLD = 1_000_000
# Upper bound on batch x rows x cols elements materialized per readout chunk
READ_CHUNK_ELEMENTS = 4_000_000
LUT_MIN_SAMPLES = 8
DEFAULT_LUT_STEPS = 64


def crossbars_of(target: Any) -> List[Crossbar]:
    """Collect the crossbars held by a network, layer, scheme or crossbar."""
    if isinstance(target, Crossbar):
        return [target]
    if hasattr(target, "crossbars"):
        return list(target.crossbars())
    raise InputError(f"Object of type {type(target).__name__} holds no crossbars")


# ---------------------------------------------------------------------------
# Finite conductance states
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuantizationSpec:
    """n evenly spaced states from min to max inclusive (bounds may be per element)."""

    n_states: int
    min: Union[float, np.ndarray]
    max: Union[float, np.ndarray]

    def __post_init__(self):
        if isinstance(self.n_states, bool) or int(self.n_states) != self.n_states or self.n_states < 2:
            raise ConfigurationError(f"n_states must be an integer >= 2, got {self.n_states!r}")
        lo = np.asarray(self.min, dtype=float)
        hi = np.asarray(self.max, dtype=float)
        if lo.shape != hi.shape and lo.ndim and hi.ndim:
            raise InputError(f"Bound shapes differ: {lo.shape} vs {hi.shape}")
        if not np.all(lo < hi):
            raise ConfigurationError("Quantization requires min < max element-wise")


def state_value(k: np.ndarray, lo: np.ndarray, hi: np.ndarray, n: int) -> np.ndarray:
    """Value of state k on the grid lo + k * (hi - lo) / (n - 1), with the last state exactly hi."""
    step = (hi - lo) / (n - 1)
    return np.where(k == n - 1, hi, lo + k * step)


def state_grid(lo: float, hi: float, n: int) -> np.ndarray:
    """Materialize the full state grid for scalar bounds."""
    return state_value(np.arange(n), np.float64(lo), np.float64(hi), n)


def _quantize_chunk(values: np.ndarray, lo: np.ndarray, hi: np.ndarray, n: int) -> np.ndarray:
    # largest k with state(k) <= value, by binary search over the state index
    low = np.zeros(values.shape, dtype=np.int64)
    high = np.full(values.shape, n - 1, dtype=np.int64)
    while True:
        open_ = low < high
        if not open_.any():
            break
        mid = (low + high + 1) // 2
        below = state_value(mid, lo, hi, n) <= values
        low = np.where(open_ & below, mid, low)
        high = np.where(open_ & ~below, mid - 1, high)
    upper = np.minimum(low + 1, n - 1)
    lower_value = state_value(low, lo, hi, n)
    upper_value = state_value(upper, lo, hi, n)
    # ties go to the lower state
    take_upper = (upper_value - values) < (values - lower_value)
    return np.where(take_upper, upper_value, lower_value)


def quantize(values: np.ndarray, spec: QuantizationSpec, threads: Optional[int] = None) -> np.ndarray:
    """
    Replace every element by the nearest of its n evenly spaced states.

    Exact midpoints resolve to the lower state and out-of-range values snap
    to the boundary states. Work is split across threads for large arrays.

    Args:
        values: Array to quantize
        spec: Number of states and (possibly per-element) bounds
        threads: Worker count (defaults to XBARSIM_THREADS)

    Returns:
        Quantized array of the same shape

    Raises:
        InputError: If per-element bounds do not match the value shape
    """
    values = np.asarray(values, dtype=float)
    lo = np.asarray(spec.min, dtype=float)
    hi = np.asarray(spec.max, dtype=float)
    for bound in (lo, hi):
        if bound.ndim and bound.shape != values.shape:
            raise InputError(f"Bound shape {bound.shape} does not match values {values.shape}")
    n = int(spec.n_states)
    flat = values.ravel()
    lo_flat = np.broadcast_to(lo, values.shape).ravel()
    hi_flat = np.broadcast_to(hi, values.shape).ravel()

    if threads is None:
        from .config import get_config

        threads = get_config().threads
    if threads <= 1 or flat.size < PARALLEL_THRESHOLD:
        return _quantize_chunk(flat, lo_flat, hi_flat, n).reshape(values.shape)

    bounds = np.linspace(0, flat.size, threads + 1).astype(int)
    spans = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        parts = list(
            executor.map(
                lambda s: _quantize_chunk(flat[s[0] : s[1]], lo_flat[s[0] : s[1]], hi_flat[s[0] : s[1]], n),
                spans,
            )
        )
    return np.concatenate(parts).reshape(values.shape)


def apply_finite_states(target: Any, n_states: int) -> None:
    """Quantize every device conductance to its own n-state grid [1/R_off, 1/R_on]."""
    for xbar in crossbars_of(target):
        g_min, g_max = xbar.conductance_bounds()
        quantized = quantize(xbar.conductance, QuantizationSpec(n_states, g_min, g_max))
        xbar.set_conductance(quantized)
        xbar.lut = None
        xbar.n_states = int(n_states)
    logger.debug(f"Applied {n_states} finite conductance states")


# ---------------------------------------------------------------------------
# Device faults
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FaultSpec:
    """Proportions of devices stuck at R_on and at R_off."""

    proportion_stuck_on: float = 0.0
    proportion_stuck_off: float = 0.0

    def __post_init__(self):
        for value in (self.proportion_stuck_on, self.proportion_stuck_off):
            if not (0.0 <= value <= 1.0):
                raise ConfigurationError(f"Fault proportions must lie in [0, 1], got {value}")
        if self.proportion_stuck_on + self.proportion_stuck_off > 1.0 + 1e-12:
            raise ConfigurationError("Fault proportions must sum to at most 1")


@dataclass
class FaultReport:
    """Coordinates (crossbar index, row, col) of pinned devices."""

    stuck_on: List[Tuple[int, int, int]] = field(default_factory=list)
    stuck_off: List[Tuple[int, int, int]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.stuck_on) + len(self.stuck_off)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def apply_device_faults(target: Any, spec: FaultSpec, rng: np.random.Generator) -> FaultReport:
    """
    Pin round(proportion * count) distinct devices per crossbar at R_on or R_off.

    Pinned devices keep their conductance through any later programming.
    """
    report = FaultReport()
    for index, xbar in enumerate(crossbars_of(target)):
        count = xbar.rows * xbar.cols
        n_on = _round_half_up(spec.proportion_stuck_on * count)
        n_off = min(_round_half_up(spec.proportion_stuck_off * count), count - n_on)
        if n_on + n_off == 0:
            continue
        chosen = rng.choice(count, size=n_on + n_off, replace=False)
        r_on = np.broadcast_to(xbar.devices.params.r_on, xbar.shape)
        r_off = np.broadcast_to(xbar.devices.params.r_off, xbar.shape)
        for flat, level, bucket in (
            (chosen[:n_on], 1.0 / r_on, report.stuck_on),
            (chosen[n_on:], 1.0 / r_off, report.stuck_off),
        ):
            mask = np.zeros(count, dtype=bool)
            mask[flat] = True
            mask = mask.reshape(xbar.shape)
            xbar.pin(mask, level)
            bucket.extend((index, int(i), int(j)) for i, j in np.argwhere(mask))
        xbar.lut = None
    logger.info(f"Pinned {len(report.stuck_on)} devices at R_on and {len(report.stuck_off)} at R_off")
    return report


# ---------------------------------------------------------------------------
# Cycle-to-cycle variability
# ---------------------------------------------------------------------------


def _resample_positive(mean: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    values = rng.normal(mean, std)
    values = np.asarray(values, dtype=float)
    for _ in range(MAX_REDRAWS):
        outside = values < RESISTANCE_FLOOR
        count = int(outside.sum())
        if count == 0:
            break
        values[outside] = rng.normal(np.broadcast_to(mean, values.shape)[outside], std)
    return np.maximum(values, RESISTANCE_FLOOR)


def resample_device(device: Memristor, sigma: float, rng: np.random.Generator) -> None:
    """Redraw R_on (std sigma) and R_off (std 2*sigma) around the device's nominal values."""
    if sigma < 0:
        raise ConfigurationError(f"Cycle variability sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return
    shape = device.shape
    flat = (int(np.prod(shape)),)
    r_on = _resample_positive(np.broadcast_to(device.nominal.r_on, shape).reshape(flat), sigma, rng)
    r_off = _resample_positive(np.broadcast_to(device.nominal.r_off, shape).reshape(flat), 2.0 * sigma, rng)
    if shape:
        r_on, r_off = r_on.reshape(shape), r_off.reshape(shape)
    else:
        r_on, r_off = float(r_on[0]), float(r_off[0])
    device.params = replace(device.params, r_on=r_on, r_off=r_off, allow_overlap=True)


def apply_cycle_variability(target: Any, sigma: float, rng: np.random.Generator) -> None:
    """
    Resample R_on and R_off of every device, keeping each device's state variable.

    Accepts a Memristor, or anything crossbars_of() understands.
    """
    if isinstance(target, Memristor):
        resample_device(target, sigma, rng)
        return
    for xbar in crossbars_of(target):
        resample_device(xbar.devices, sigma, rng)
        xbar.refresh()
        xbar.lut = None


def enable_cycle_variability(target: Any, sigma: float, rng: np.random.Generator) -> None:
    """Resample after every future programming operation on the target's crossbars."""
    for xbar in crossbars_of(target):
        xbar.after_programming = lambda x, s=sigma, r=rng: resample_device(x.devices, s, r)


# ---------------------------------------------------------------------------
# Non-linear I/V readout
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IvLut:
    """
    Sampled I/V curves on a shared voltage grid.

    Per-device tables hold currents[t, *device_shape]. Per-state tables
    hold currents[s, t, *device_shape] with the conductance of each state in
    states[s, *device_shape], plus the device conductances at build time.
    """

    voltages: np.ndarray
    currents: np.ndarray
    states: Optional[np.ndarray] = None
    conductance: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(np.diff(self.voltages) <= 0):
            raise ConfigurationError("LUT voltage grid must be strictly increasing")


def default_sweep(dt: float) -> Sinusoid:
    """Quarter-wave 1 V sinusoid spanning DEFAULT_LUT_STEPS device timesteps."""
    duration = DEFAULT_LUT_STEPS * dt
    return Sinusoid(amplitude=1.0, frequency=1.0 / (4.0 * duration), duration=duration)


def _rising_portion(device: Memristor, sweep: VoltageSignal) -> int:
    _, v = sweep.sample(device.dt)
    if v.ndim != 1:
        raise ConfigurationError("LUT sweeps must apply the same voltage to every device")
    peak = int(np.argmax(v))
    if peak + 1 < LUT_MIN_SAMPLES:
        raise ConfigurationError(
            f"Sweep too coarse: {peak + 1} rising samples, need at least {LUT_MIN_SAMPLES}"
        )
    if np.any(np.diff(v[: peak + 1]) <= 0):
        raise ConfigurationError("Sweep must rise monotonically up to its peak")
    return peak + 1


def build_iv_lut(
    device: Memristor, sweep: Optional[VoltageSignal] = None, n_states: Optional[int] = None
) -> IvLut:
    """
    Characterize devices with a single reset voltage sweep.

    The rising portion of the sweep (from its first sample to its peak) is
    simulated on copies of the devices. Without ``n_states`` one curve per
    device is taken from its current state; with ``n_states`` one curve per
    finite conductance state of each device.

    Raises:
        ConfigurationError: If the sweep has fewer than 8 rising samples
    """
    sweep = sweep if sweep is not None else default_sweep(device.dt)
    length = _rising_portion(device, sweep)

    def _sweep_from(start: Memristor) -> Tuple[np.ndarray, np.ndarray]:
        trace = simulate(start, sweep)
        return trace.voltage[:length], trace.current[:length]

    if n_states is None:
        voltages, currents = _sweep_from(device.copy())
        return IvLut(voltages=voltages, currents=currents)

    r_on = np.asarray(device.params.r_on, dtype=float)
    r_off = np.asarray(device.params.r_off, dtype=float)
    g_lo = 1.0 / np.maximum(r_on, r_off)
    g_hi = 1.0 / np.minimum(r_on, r_off)
    curves = []
    levels = []
    for k in range(n_states):
        g = state_value(np.asarray(k), g_lo, g_hi, n_states)
        start = device.copy()
        start.set_resistance(np.broadcast_to(1.0 / g, device.shape) if device.shape else float(1.0 / g))
        voltages, currents = _sweep_from(start)
        curves.append(currents)
        levels.append(np.broadcast_to(g, device.shape))
    return IvLut(
        voltages=voltages,
        currents=np.stack(curves),
        states=np.stack(levels),
        conductance=np.asarray(device.conductance(), dtype=float).reshape(device.shape),
    )


def state_curves(lut: IvLut, conductance: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Per-device curves, (T, *device_shape), from a per-device or per-state LUT.

    A per-state LUT reads every device on the curve of the state nearest
    its conductance (the build-time conductance when none is given).
    """
    if lut.states is None:
        return lut.currents
    g = lut.conductance if conductance is None else conductance
    if g is None:
        raise StateError("A per-state LUT needs device conductances to select curves")
    g = np.broadcast_to(np.asarray(g, dtype=float), lut.states.shape[1:])
    nearest = np.argmin(np.abs(lut.states - g[None]), axis=0)
    return np.take_along_axis(lut.currents, nearest[None, None], axis=0)[0]


def lut_current(lut: IvLut, v: np.ndarray, conductance: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Column currents of a crossbar from its LUT.

    Args:
        lut: Per-device LUT with currents shaped (T, M, N) or (T,) for a
            single device, or a per-state LUT built with n_states
        v: Row voltages, (B, M)
        conductance: Device conductances selecting per-state curves

    Returns:
        (B, N) column currents
    """
    voltages = lut.voltages
    table = state_curves(lut, conductance)
    if table.ndim == 1:
        table = table[:, None, None]
    _, rows, cols = table.shape
    idx = np.clip(np.searchsorted(voltages, v, side="right") - 1, 0, len(voltages) - 2)
    v0 = voltages[idx]
    v1 = voltages[idx + 1]
    weight = ((v - v0) / (v1 - v0))[:, :, None]
    row_index = np.arange(rows)[None, :, None]
    col_index = np.arange(cols)[None, None, :]
    i0 = table[idx[:, :, None], row_index, col_index]
    i1 = table[idx[:, :, None] + 1, row_index, col_index]
    return (i0 + (i1 - i0) * weight).sum(axis=1)


def _chunks(batch: int, per_row: int):
    size = max(1, READ_CHUNK_ELEMENTS // max(1, per_row))
    for start in range(0, batch, size):
        yield slice(start, min(batch, start + size))


def lut_reader(xbar: Crossbar, v: np.ndarray) -> np.ndarray:
    """Reader that interpolates the crossbar's LUT; raises StateError when none is built."""
    if xbar.lut is None:
        raise StateError(f"{xbar} has no I/V lookup table; apply the non-linear LUT readout again")
    batch = np.atleast_2d(v)
    out = np.concatenate(
        [lut_current(xbar.lut, batch[s], xbar.conductance) for s in _chunks(batch.shape[0], xbar.rows * xbar.cols)]
    )
    return out if np.ndim(v) == 2 else out[0]


def single_timestep_reader(dt: Optional[float] = None):
    """
    Reader that steps every device once under its read voltage.

    The current is taken from the state reached after the step. The state
    change is discarded: read disturb is not accumulated.
    """

    def _read(xbar: Crossbar, v: np.ndarray) -> np.ndarray:
        params = xbar.devices.params
        step = STEP_FUNCTIONS[params.kind]
        state = DeviceState(np.broadcast_to(xbar.devices.w, xbar.shape))
        batch = np.atleast_2d(v)
        parts = []
        for s in _chunks(batch.shape[0], xbar.rows * xbar.cols):
            voltages = np.broadcast_to(batch[s][:, :, None], (batch[s].shape[0],) + xbar.shape)
            stepped, _ = step(params, state, voltages, dt)
            current = voltages / params.resistance(stepped.w)
            parts.append(np.asarray(current).sum(axis=1))
        out = np.concatenate(parts)
        return out if np.ndim(v) == 2 else out[0]

    return _read


@dataclass(frozen=True)
class SingleTimestep:
    dt: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Lut:
    sweep: Optional[VoltageSignal] = None


NonLinearMethod = Union[SingleTimestep, Lut]


def apply_non_linear(target: Any, method: NonLinearMethod) -> None:
    """Replace the ideal readout of every crossbar with a non-linear one."""
    for xbar in crossbars_of(target):
        if isinstance(method, SingleTimestep):
            xbar.reader = single_timestep_reader(method.dt)
        elif isinstance(method, Lut):
            xbar.lut = build_iv_lut(xbar.devices, method.sweep, n_states=xbar.n_states)
            xbar.reader = lut_reader
        else:
            raise ConfigurationError(f"Unknown non-linear method: {method!r}")
    logger.debug(f"Installed {type(method).__name__} non-linear readout")


# ---------------------------------------------------------------------------
# Declarative stack
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteStates:
    n: int


@dataclass(frozen=True)
class DeviceFaults:
    stuck_on: float = 0.0
    stuck_off: float = 0.0


@dataclass(frozen=True)
class CycleVariability:
    sigma: float


@dataclass(frozen=True, eq=False)
class NonLinear:
    method: NonLinearMethod


NonIdeality = Union[FiniteStates, DeviceFaults, CycleVariability, NonLinear]

_STACK_KEYS = {
    "finite_states": {"n"},
    "device_faults": {"stuck_on", "stuck_off"},
    "cycle_variability": {"sigma"},
    "non_linear": {"method", "dt"},
}


def parse_nonideality(data: Dict[str, Any]) -> NonIdeality:
    """Parse one entry of the "nonidealities" list of an experiment document."""
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in _STACK_KEYS:
        raise ConfigurationError(f"Unknown non-ideality kind: {kind!r}")
    unknown = set(data) - _STACK_KEYS[kind]
    if unknown:
        raise ConfigurationError(f"Unknown keys for {kind}: {', '.join(sorted(unknown))}")
    try:
        if kind == "finite_states":
            n = data["n"]
            if isinstance(n, bool) or int(n) != n or n < 2:
                raise ConfigurationError(f"finite_states n must be an integer >= 2, got {n!r}")
            return FiniteStates(int(n))
        if kind == "device_faults":
            FaultSpec(float(data.get("stuck_on", 0.0)), float(data.get("stuck_off", 0.0)))
            return DeviceFaults(float(data.get("stuck_on", 0.0)), float(data.get("stuck_off", 0.0)))
        if kind == "cycle_variability":
            sigma = float(data["sigma"])
            if sigma < 0:
                raise ConfigurationError(f"cycle_variability sigma must be >= 0, got {sigma}")
            return CycleVariability(sigma)
        method = data.get("method", "single_timestep")
        if method == "single_timestep":
            dt = data.get("dt")
            return NonLinear(SingleTimestep(None if dt is None else float(dt)))
        if method == "lut":
            if "dt" in data:
                raise ConfigurationError("dt applies to the single_timestep method only")
            return NonLinear(Lut())
        raise ConfigurationError(f"Unknown non-linear method: {method!r}")
    except KeyError as e:
        raise ConfigurationError(f"{kind} requires {e}")


def apply_nonidealities(
    target: Any, stack: Sequence[NonIdeality], rng: np.random.Generator
) -> List[Any]:
    """Apply a non-ideality stack in declared order; returns per-entry reports."""
    reports: List[Any] = []
    for entry in stack:
        if isinstance(entry, FiniteStates):
            apply_finite_states(target, entry.n)
            reports.append(None)
        elif isinstance(entry, DeviceFaults):
            reports.append(
                apply_device_faults(target, FaultSpec(entry.stuck_on, entry.stuck_off), rng)
            )
        elif isinstance(entry, CycleVariability):
            apply_cycle_variability(target, entry.sigma, rng)
            enable_cycle_variability(target, entry.sigma, rng)
            reports.append(None)
        elif isinstance(entry, NonLinear):
            apply_non_linear(target, entry.method)
            reports.append(None)
        else:
            raise ConfigurationError(f"Unknown non-ideality: {entry!r}")
    return reports
