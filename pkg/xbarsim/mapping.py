"""
Weight-to-conductance mapping and linear-regression tuning for xbarsim.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .crossbar import TuningTransform, midpoint_conductance
from .errors import ConfigurationError, DegenerateInputError, InputError, SingularFitError

logger = logging.getLogger(__name__)

DEFAULT_TUNING_ROWS = 8


class MappingScheme(Enum):
    """How signed weights are represented on crossbars."""

    DOUBLE = "double"
    SINGLE = "single"


class MappingDomain(Enum):
    """Whether the linear weight map is applied to conductances or resistances."""

    CONDUCTANCE = "conductance"
    RESISTANCE = "resistance"


@dataclass(frozen=True)
class MappingConfig:
    """Mapping parameters shared by every layer of a converted network."""

    p_l: float = 0.0
    scheme: MappingScheme = MappingScheme.DOUBLE
    r_on: float = 1000.0
    r_off: float = 2000.0
    domain: MappingDomain = MappingDomain.RESISTANCE
    per_column: bool = False

    def __post_init__(self):
        if not (0.0 <= self.p_l < 1.0):
            raise ConfigurationError(f"p_l must lie in [0, 1), got {self.p_l}")
        if not (self.r_off > self.r_on > 0):
            raise ConfigurationError(
                f"Mapping requires R_off > R_on > 0, got R_on={self.r_on}, R_off={self.r_off}"
            )

    @property
    def ratio(self) -> float:
        return self.r_off / self.r_on

    @classmethod
    def from_dict(cls, data: Dict[str, Any], r_on: float, r_off: float) -> "MappingConfig":
        """Parse the "mapping" section of an experiment document."""
        allowed = {"p_l", "scheme", "domain", "per_column"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigurationError(f"Unknown mapping keys: {', '.join(sorted(unknown))}")
        try:
            return cls(
                p_l=float(data.get("p_l", 0.0)),
                scheme=MappingScheme(data.get("scheme", "double")),
                r_on=r_on,
                r_off=r_off,
                domain=MappingDomain(data.get("domain", "resistance")),
                per_column=bool(data.get("per_column", False)),
            )
        except ValueError as e:
            raise ConfigurationError(f"Invalid mapping section: {e}")


@dataclass(frozen=True)
class ClippedWeights:
    magnitudes: np.ndarray
    signs: np.ndarray
    w_min: float
    w_max: float

    @property
    def signed(self) -> np.ndarray:
        return self.signs * self.magnitudes


def clip_weights(w: np.ndarray, p_l: float, ratio: float) -> ClippedWeights:
    """
    Clip weight magnitudes, excluding the largest proportion p_l.

    The magnitudes are sorted in descending order and w_max is taken at
    index floor(p_l * size), clamped to the last element. w_min is
    w_max / ratio and every magnitude is clipped into [w_min, w_max].

    Args:
        w: Weight array
        p_l: Proportion of largest-magnitude weights to exclude, in [0, 1)
        ratio: R_off / R_on

    Returns:
        ClippedWeights with magnitudes, signs and the range endpoints

    Raises:
        InputError: If w is empty
        DegenerateInputError: If every weight is zero
    """
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise InputError("Cannot clip an empty weight array")
    if not (0.0 <= p_l < 1.0):
        raise ConfigurationError(f"p_l must lie in [0, 1), got {p_l}")
    magnitudes = np.abs(w)
    ordered = np.sort(magnitudes.ravel())[::-1]
    index = min(int(np.floor(p_l * ordered.size)), ordered.size - 1)
    w_max = float(ordered[index])
    if w_max == 0.0:
        raise DegenerateInputError("All weights at or below the clipping index are zero")
    w_min = w_max / ratio
    return ClippedWeights(
        magnitudes=np.clip(magnitudes, w_min, w_max),
        signs=np.sign(w),
        w_min=w_min,
        w_max=w_max,
    )


def map_resistance(
    sigma: np.ndarray, w_min: float, w_max: float, r_on: float, r_off: float
) -> np.ndarray:
    """
    Linear weight-to-resistance map: w_min -> R_off, w_max -> R_on.

    Raises:
        DegenerateInputError: If w_max equals w_min
    """
    if w_max == w_min:
        raise DegenerateInputError(f"Degenerate weight range: w_min = w_max = {w_max}")
    sigma = np.asarray(sigma, dtype=float)
    return (r_on - r_off) / (w_max - w_min) * (sigma - w_min) + r_off


def naive_map(
    w: np.ndarray, cfg: MappingConfig
) -> Union[Tuple[np.ndarray, np.ndarray], np.ndarray]:
    """
    Map a weight matrix to target conductances.

    Double column returns (g_pos, g_neg): positive weights program the
    positive crossbar, negative magnitudes the negative one, and every
    other entry stays at 1/R_off. In the resistance domain the clipped
    magnitudes are interpolated in ohms between 0 (R_off) and w_max (R_on)
    and inverted; in the conductance domain the interpolation runs between
    1/R_off and 1/R_on directly.

    Single column returns one matrix centred on g_m = 2/(R_on + R_off):
    the resistance domain maps [-w_max, w_max] onto [R_off, R_on] in ohms,
    the conductance domain uses g_m + k*w with k chosen so the clipped
    range fits inside [1/R_off, 1/R_on].

    Raises:
        DegenerateInputError: If the resistance-domain range collapses
    """
    w = np.asarray(w, dtype=float)
    g_on, g_off = 1.0 / cfg.r_on, 1.0 / cfg.r_off
    try:
        clipped = clip_weights(w, cfg.p_l, cfg.ratio)
    except DegenerateInputError:
        logger.debug("All-zero weights map to the R_off state")
        if cfg.scheme is MappingScheme.SINGLE:
            return np.full(w.shape, midpoint_conductance(cfg.r_on, cfg.r_off))
        return np.full(w.shape, g_off), np.full(w.shape, g_off)

    w_max = clipped.w_max
    if cfg.scheme is MappingScheme.SINGLE:
        bounded = np.clip(w, -w_max, w_max)
        if cfg.domain is MappingDomain.RESISTANCE:
            return 1.0 / map_resistance(bounded, -w_max, w_max, cfg.r_on, cfg.r_off)
        g_m = midpoint_conductance(cfg.r_on, cfg.r_off)
        k = min(g_on - g_m, g_m - g_off) / w_max
        return g_m + k * bounded

    if cfg.domain is MappingDomain.RESISTANCE:
        magnitudes = clipped.magnitudes
        resistance = map_resistance(magnitudes, 0.0, w_max, cfg.r_on, cfg.r_off)
        g = 1.0 / resistance
    else:
        magnitudes = np.minimum(np.abs(w), w_max)
        g = g_off + (g_on - g_off) * magnitudes / w_max
    g_pos = np.where(clipped.signs > 0, g, g_off)
    g_neg = np.where(clipped.signs < 0, g, g_off)
    return g_pos, g_neg


def _fit_affine(raw: np.ndarray, target: np.ndarray) -> Tuple[float, float, float]:
    if np.ptp(raw) == 0:
        raise SingularFitError("Cannot fit a transform to constant crossbar output")
    design = np.column_stack([raw, np.ones_like(raw)])
    (slope, intercept), *_ = np.linalg.lstsq(design, target, rcond=None)
    residual = target - (slope * raw + intercept)
    ss_res = float(residual @ residual)
    centered = target - target.mean()
    ss_tot = float(centered @ centered)
    if ss_tot == 0:
        r_squared = 1.0 if ss_res == 0 else 0.0
    else:
        r_squared = 1.0 - ss_res / ss_tot
    if not np.isfinite(slope) or slope == 0:
        raise SingularFitError(f"Fitted slope is degenerate: {slope}")
    return float(slope), float(intercept), r_squared


def fit_linear_transform(
    raw: np.ndarray, target: np.ndarray, per_column: bool = False
) -> TuningTransform:
    """
    Ordinary least-squares fit of target = slope * raw + intercept.

    Args:
        raw: Crossbar outputs, samples x columns (or flat)
        target: Legacy outputs of the same shape
        per_column: Fit one (slope, intercept) per output column

    Returns:
        TuningTransform carrying the coefficient of determination

    Raises:
        InputError: On shape mismatch or fewer than two samples
        SingularFitError: If raw is constant
    """
    raw = np.asarray(raw, dtype=float)
    target = np.asarray(target, dtype=float)
    if raw.shape != target.shape:
        raise InputError(f"Shape mismatch between raw {raw.shape} and target {target.shape}")
    if raw.size < 2:
        raise InputError("At least two samples are needed to fit a transform")

    slope, intercept, r_squared = _fit_affine(raw.ravel(), target.ravel())
    if not per_column or raw.ndim != 2:
        return TuningTransform(slope, intercept, r_squared)

    slopes = np.full(raw.shape[1], slope)
    intercepts = np.full(raw.shape[1], intercept)
    for j in range(raw.shape[1]):
        try:
            slopes[j], intercepts[j], _ = _fit_affine(raw[:, j], target[:, j])
        except SingularFitError:
            logger.debug(f"Column {j} is degenerate; using the layer-wide fit")
    fitted = raw * slopes + intercepts
    residual = target - fitted
    centered = target - target.mean()
    ss_tot = float(np.sum(centered * centered))
    r_squared = 1.0 - float(np.sum(residual * residual)) / ss_tot if ss_tot else 1.0
    return TuningTransform(slopes, intercepts, r_squared)


def tune_layer(
    layer,
    sample_rows: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    inputs: Optional[np.ndarray] = None,
) -> TuningTransform:
    """
    Fit and install the tuning transform of a memristive layer.

    Random inputs are drawn uniformly from [0, 1] unless ``inputs`` is
    given. Both the crossbar path (before its transform) and the legacy
    path (before its bias) are evaluated on the same inputs.

    Args:
        layer: Memristive layer exposing tuning_inputs, raw_output and target_output
        sample_rows: Random input rows (defaults to 8)
        rng: Random generator for the inputs
        inputs: Explicit tuning inputs, e.g. calibration activations

    Returns:
        The installed transform
    """
    if inputs is None:
        rng = rng if rng is not None else np.random.default_rng()
        inputs = layer.tuning_inputs(sample_rows or DEFAULT_TUNING_ROWS, rng)
    raw = layer.raw_output(inputs)
    target = layer.target_output(inputs)
    transform = fit_linear_transform(raw, target, per_column=layer.per_column)
    layer.transform = transform
    logger.info(
        f"Tuned {layer.name}: slope={np.mean(transform.slope):.6g}, "
        f"intercept={np.mean(transform.intercept):.6g}, R^2={transform.r_squared:.6f}"
    )
    return transform
