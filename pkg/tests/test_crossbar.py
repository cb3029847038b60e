"""
Unit tests for the crossbar module.
"""

import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xbarsim.crossbar import (
    Arrangement,
    Crossbar,
    DoubleColumn,
    SingleColumn,
    TuningTransform,
    build_crossbar,
    conductance_to_csv,
    crossbar_from_dict,
    crossbar_to_dict,
    drive_amplitude,
    load_scheme,
    midpoint_conductance,
    program_naive,
    program_pulsed,
    read_currents,
    save_scheme,
    vmm,
)
from xbarsim.device import (
    DeviceState,
    DeviceTemplate,
    TruncatedNormal,
    VteamParams,
    get_preset,
    template_from_dict,
    vteam_step,
)
from xbarsim.errors import ConfigurationError, DomainError, InputError, RangeError


def _bounded_targets(xbar, rng):
    g_min, g_max = xbar.conductance_bounds()
    return g_min + rng.random(xbar.shape) * (g_max - g_min)


class TestBuildCrossbar:
    """Test building crossbars from templates."""

    def test_constant_template_devices_identical(self, rng):
        """Test that an all-constant template yields identical devices."""
        xbar = build_crossbar(3, 4, get_preset("team"), rng=rng)

        assert xbar.shape == (3, 4)
        assert np.all(xbar.devices.params.r_on == 50.0)
        assert np.allclose(xbar.conductance, 1 / 1000.0)

    def test_stochastic_template_statistics(self):
        """Test per-device sampling against the template distributions."""
        template = template_from_dict(
            {
                "model": "vteam",
                "r_on": {"dist": "truncated_normal", "mean": 50, "std": 25, "min": 1},
                "r_off": {"dist": "truncated_normal", "mean": 1000, "std": 50, "min": 1},
            }
        )
        xbar = build_crossbar(100, 100, template, rng=np.random.default_rng(0))
        r_on = xbar.devices.params.r_on
        r_off = xbar.devices.params.r_off

        assert np.ptp(r_on) > 0
        assert np.mean(r_off) == pytest.approx(1000.0, rel=0.01)
        assert np.std(r_off) == pytest.approx(50.0, rel=0.05)
        assert np.all(r_on >= 1.0)

    def test_seeded_build_is_reproducible(self):
        """Test that the same seed yields a bit-identical grid."""
        template = DeviceTemplate(VteamParams(), {"r_on": TruncatedNormal(50.0, 10.0, 1.0)})
        a = build_crossbar(5, 5, template, rng=np.random.default_rng(9))
        b = build_crossbar(5, 5, template, rng=np.random.default_rng(9))

        assert np.array_equal(a.devices.params.r_on, b.devices.params.r_on)
        assert np.array_equal(a.conductance, b.conductance)

    def test_invalid_dimensions(self, rng):
        """Test that empty crossbars are rejected."""
        with pytest.raises(ConfigurationError):
            build_crossbar(0, 3, get_preset("team"), rng=rng)

    def test_invalid_template(self, rng):
        """Test that the template must be a DeviceTemplate."""
        with pytest.raises(ConfigurationError):
            build_crossbar(2, 2, VteamParams(), rng=rng)

    def test_arrangement_parse(self):
        """Test parsing arrangements from strings."""
        assert Arrangement.parse("1r") is Arrangement.ONE_R
        assert Arrangement.parse("1T1R") is Arrangement.ONE_T1R
        with pytest.raises(ConfigurationError):
            Arrangement.parse("2T2R")


class TestProgramNaive:
    """Test direct state assignment."""

    def test_full_on_and_full_off(self, rng):
        """Test programming every device to either bound."""
        xbar = build_crossbar(2, 3, get_preset("team"), rng=rng)
        program_naive(xbar, np.full(xbar.shape, 1 / 50.0))
        assert np.allclose(xbar.devices.w, 0.0)

        program_naive(xbar, np.full(xbar.shape, 1 / 1000.0))
        assert np.allclose(xbar.devices.w, 3e-9)

    def test_round_trip(self, rng):
        """Test that conductances reproduce in-range targets."""
        xbar = build_crossbar(2, 2, get_preset("pt_hf_ti"), rng=rng)
        target = np.array([[1 / 150.0, 1 / 2000.0], [1 / 900.0, 1 / 400.0]])
        report = program_naive(xbar, target)

        assert report.clamped == 0
        assert report.converged
        assert np.allclose(xbar.conductance, target, rtol=1e-9, atol=0)
        assert np.allclose(xbar.devices.conductance(), target, rtol=1e-9, atol=0)

    def test_out_of_range_targets_clamped(self, rng):
        """Test that unreachable targets clamp and are counted."""
        xbar = build_crossbar(1, 2, get_preset("team"), rng=rng)
        report = program_naive(xbar, np.array([[1.0, 1e-6]]))

        assert report.clamped == 2
        assert np.allclose(xbar.conductance, [[1 / 50.0, 1 / 1000.0]])

    def test_one_r_forbidden(self, rng):
        """Test that naive programming needs per-device selection."""
        xbar = build_crossbar(2, 2, get_preset("team"), Arrangement.ONE_R, rng)
        with pytest.raises(ConfigurationError, match="1R"):
            program_naive(xbar, np.full((2, 2), 1 / 500.0))

    def test_shape_mismatch(self, rng):
        """Test that target dimensions must match."""
        xbar = build_crossbar(2, 2, get_preset("team"), rng=rng)
        with pytest.raises(InputError):
            program_naive(xbar, np.full((3, 2), 1 / 500.0))

    def test_after_programming_hook(self, rng, mocker):
        """Test that the programming hook runs once per operation."""
        xbar = build_crossbar(2, 2, get_preset("team"), rng=rng)
        hook = mocker.Mock()
        xbar.after_programming = hook
        program_naive(xbar, np.full((2, 2), 1 / 500.0))

        hook.assert_called_once_with(xbar)


class TestProgramPulsed:
    """Test programming with simulated pulses."""

    def test_already_at_target(self, rng):
        """Test that no pulses are applied when nothing needs to change."""
        xbar = build_crossbar(2, 2, get_preset("team"), Arrangement.ONE_R, rng)
        report = program_pulsed(xbar, xbar.conductance.copy(), max_pulses=10)

        assert report.total_pulses == 0
        assert report.converged

    def test_mid_range_converges(self, rng):
        """Test convergence to mid-range targets within tolerance."""
        xbar = build_crossbar(2, 2, get_preset("team"), Arrangement.ONE_R, rng)
        target = np.array([[1 / 500.0, 1 / 300.0], [1 / 700.0, 1 / 120.0]])
        report = program_pulsed(xbar, target, tolerance=0.01, max_pulses=1000)

        assert report.converged, report.unconverged
        assert np.all(np.abs(xbar.conductance - target) / target <= 0.01)
        assert report.total_pulses > 0

    def test_linear_ion_drift_converges(self, rng):
        """Test pulsed programming of threshold-free devices."""
        xbar = build_crossbar(2, 2, get_preset("linear_ion_drift"), Arrangement.ONE_T1R, rng)
        target = np.array([[1 / 1200.0, 1 / 1800.0], [1 / 1500.0, 1 / 1100.0]])
        report = program_pulsed(xbar, target, tolerance=0.01, max_pulses=500)

        assert report.converged, report.unconverged

    def test_sub_threshold_amplitude_never_converges(self, rng):
        """Test that pulses below both thresholds cannot move VTEAM devices."""
        xbar = build_crossbar(2, 2, get_preset("team"), Arrangement.ONE_R, rng)
        start = np.array(xbar.devices.w, copy=True)
        report = program_pulsed(xbar, np.full((2, 2), 1 / 400.0), max_pulses=20, pulse_amplitude=0.01)

        assert len(report.unconverged) == 4
        assert np.array_equal(xbar.devices.w, start)

    def test_decayed_drive_sits_above_threshold(self):
        """Test that zero drive still exceeds the strict switching threshold."""
        thresholds = np.array([0.02, 0.2, 0.0])
        floor = drive_amplitude(thresholds, np.zeros(3), 1.0)

        assert np.all(floor[:2] > thresholds[:2])
        assert floor[2] == 0.0
        assert np.allclose(drive_amplitude(thresholds, np.ones(3), 1.0), 1.0)
        assert np.all(drive_amplitude(thresholds[:2], np.zeros(2), 0.01) == 0.01)

    def test_decayed_drive_moves_vteam_state(self):
        """Test that a zero-drive pulse still moves a mid-range VTEAM device."""
        params = VteamParams()
        amplitude = drive_amplitude(np.array([params.v_off]), np.zeros(1), 1.0)
        moved, _ = vteam_step(params, DeviceState(np.array([1.5e-9])), amplitude)

        assert np.all(np.asarray(moved.w) > 1.5e-9)

    def test_zero_budget_raises(self, rng):
        """Test that a zero pulse budget is a configuration error."""
        xbar = build_crossbar(1, 1, get_preset("team"), rng=rng)
        with pytest.raises(ConfigurationError):
            program_pulsed(xbar, np.full((1, 1), 1 / 400.0), max_pulses=0)

    def test_stuck_devices_skipped(self, rng):
        """Test that stuck devices are neither pulsed nor reported unconverged."""
        xbar = build_crossbar(1, 2, get_preset("team"), Arrangement.ONE_R, rng)
        xbar.pin(np.array([[True, False]]), np.full((1, 2), 1 / 50.0))
        report = program_pulsed(xbar, np.full((1, 2), 1 / 400.0), max_pulses=1000)

        assert report.stuck_skipped == 1
        assert report.pulses[0, 0] == 0
        assert (0, 0) not in report.unconverged
        assert xbar.conductance[0, 0] == pytest.approx(1 / 50.0)


class TestReadout:
    """Test ideal readout and VMM."""

    def test_zero_voltage(self, rng):
        """Test that zero inputs read zero current."""
        xbar = build_crossbar(3, 2, get_preset("team"), rng=rng)
        assert np.all(read_currents(xbar, np.zeros(3)) == 0.0)

    def test_ohms_law(self, rng):
        """Test a single device at 0.01 S under 1 V."""
        xbar = build_crossbar(1, 1, get_preset("team"), rng=rng)
        program_naive(xbar, np.array([[0.01]]))

        assert read_currents(xbar, np.array([1.0]))[0] == pytest.approx(0.01)

    def test_matches_double_loop(self, rng):
        """Test readout against explicit accumulation."""
        xbar = build_crossbar(2, 2, get_preset("pt_hf_ti"), rng=rng)
        program_naive(xbar, _bounded_targets(xbar, rng))
        v = rng.random(2)
        expected = [sum(v[i] * xbar.conductance[i, j] for i in range(2)) for j in range(2)]

        assert np.allclose(read_currents(xbar, v), expected, rtol=1e-12, atol=0)

    def test_dimension_mismatch(self, rng):
        """Test that the voltage count must match the rows."""
        xbar = build_crossbar(3, 2, get_preset("team"), rng=rng)
        with pytest.raises(InputError):
            read_currents(xbar, np.zeros(2))

    def test_voltage_outside_read_window(self, rng):
        """Test that reads outside [0, 1] V are range errors."""
        xbar = build_crossbar(3, 2, get_preset("team"), rng=rng)
        with pytest.raises(RangeError):
            read_currents(xbar, np.array([0.5, 1.5, 0.0]))
        with pytest.raises(RangeError):
            xbar.read(np.array([[0.5, -0.1, 0.0]]))

    def test_non_finite_voltage(self, rng):
        """Test that NaN voltages are domain errors."""
        xbar = build_crossbar(3, 2, get_preset("team"), rng=rng)
        with pytest.raises(DomainError):
            read_currents(xbar, np.array([0.5, np.nan, 0.0]))

    def test_open_read_window(self, rng):
        """Test that a crossbar without a read window accepts any finite voltage."""
        xbar = build_crossbar(2, 1, get_preset("team"), rng=rng)
        program_naive(xbar, np.full((2, 1), 0.01))
        xbar.read_range = None

        assert xbar.read(np.array([2.0, -1.0]))[0] == pytest.approx(0.01)
        assert read_currents(xbar, np.array([3.0, 0.0]), v_range=None)[0] == pytest.approx(0.03)

    def test_double_column_symmetry(self, rng):
        """Test that equal crossbars cancel."""
        pos = build_crossbar(3, 2, get_preset("team"), rng=rng)
        program_naive(pos, _bounded_targets(pos, rng))
        scheme = DoubleColumn(pos, pos.copy())

        assert np.all(vmm(scheme, rng.random((4, 3)), TuningTransform()) == 0.0)

    def test_single_column_at_g_m(self, rng):
        """Test that every device at g_m reads zero."""
        xbar = build_crossbar(3, 2, get_preset("team"), rng=rng)
        g_m = midpoint_conductance(50.0, 1000.0)
        program_naive(xbar, np.full(xbar.shape, g_m))
        raw = vmm(SingleColumn(xbar, g_m), rng.random((4, 3)), TuningTransform())

        assert np.allclose(raw, 0.0, atol=1e-15)

    def test_double_column_brute_force(self, rng):
        """Test a 3x2 double-column VMM against explicit evaluation."""
        pos = build_crossbar(3, 2, get_preset("pt_hf_ti"), rng=rng)
        neg = build_crossbar(3, 2, get_preset("pt_hf_ti"), rng=rng)
        program_naive(pos, _bounded_targets(pos, rng))
        program_naive(neg, _bounded_targets(neg, rng))
        a = rng.random((2, 3))
        transform = TuningTransform(2.0, 0.5)

        expected = np.zeros((2, 2))
        for b in range(2):
            for j in range(2):
                total = sum(a[b, i] * (pos.conductance[i, j] - neg.conductance[i, j]) for i in range(3))
                expected[b, j] = 2.0 * total + 0.5
        assert np.allclose(vmm(DoubleColumn(pos, neg), a, transform), expected, rtol=1e-12)

    def test_mismatched_pair_raises(self, rng):
        """Test that paired crossbars must have equal dimensions."""
        with pytest.raises(ConfigurationError):
            DoubleColumn(
                build_crossbar(2, 2, get_preset("team"), rng=rng),
                build_crossbar(3, 2, get_preset("team"), rng=rng),
            )

    def test_row_decomposability(self, rng):
        """Test that row-by-row presentation equals batched presentation."""
        pos = build_crossbar(4, 3, get_preset("team"), rng=rng)
        neg = build_crossbar(4, 3, get_preset("team"), rng=rng)
        program_naive(pos, _bounded_targets(pos, rng))
        program_naive(neg, _bounded_targets(neg, rng))
        scheme = DoubleColumn(pos, neg)
        a = rng.random((5, 4))
        transform = TuningTransform(3.0, -1.0)

        batched = vmm(scheme, a, transform)
        rows = np.vstack([vmm(scheme, a[i : i + 1], transform) for i in range(5)])
        assert np.allclose(batched, rows, rtol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(alpha=st.floats(-3, 3), beta=st.floats(-3, 3), seed=st.integers(0, 1000))
    def test_linearity(self, alpha, beta, seed):
        """Test the affine superposition property of ideal VMM."""
        rng = np.random.default_rng(seed)
        pos = build_crossbar(3, 2, get_preset("team"), rng=rng)
        neg = build_crossbar(3, 2, get_preset("team"), rng=rng)
        program_naive(pos, _bounded_targets(pos, rng))
        program_naive(neg, _bounded_targets(neg, rng))
        pos.read_range = neg.read_range = None
        scheme = DoubleColumn(pos, neg)
        transform = TuningTransform(1.7, 0.3)
        a1, a2 = rng.random((2, 3)), rng.random((2, 3))

        combined = vmm(scheme, alpha * a1 + beta * a2, transform)
        expected = (
            alpha * vmm(scheme, a1, transform)
            + beta * vmm(scheme, a2, transform)
            - (alpha + beta - 1) * 0.3
        )
        assert np.allclose(combined, expected, rtol=1e-9, atol=1e-12)

    def test_zero_slope_rejected(self):
        """Test that a tuning transform needs a nonzero slope."""
        with pytest.raises(ConfigurationError):
            TuningTransform(0.0, 1.0)


class TestExport:
    """Test JSON and CSV export."""

    def test_crossbar_json_round_trip(self, rng, tmp_path):
        """Test that crossbar state survives save and load."""
        template = DeviceTemplate(VteamParams(), {"r_on": TruncatedNormal(50.0, 5.0, 1.0)})
        pos = build_crossbar(2, 3, template, rng=rng)
        neg = build_crossbar(2, 3, template, rng=rng)
        program_naive(pos, _bounded_targets(pos, rng))
        pos.stuck[0, 1] = True
        path = tmp_path / "scheme.json"
        save_scheme(DoubleColumn(pos, neg), path)

        loaded = load_scheme(path)

        assert isinstance(loaded, DoubleColumn)
        assert np.allclose(loaded.pos.conductance, pos.conductance, rtol=1e-12)
        assert loaded.pos.stuck[0, 1]
        assert loaded.pos.arrangement is Arrangement.ONE_T1R

    def test_crossbar_dict_fields(self, rng):
        """Test the documented fields of the crossbar document."""
        data = crossbar_to_dict(build_crossbar(2, 2, get_preset("team"), rng=rng))

        assert {"rows", "cols", "arrangement", "params", "w", "stuck"} <= set(data)
        assert json.loads(json.dumps(data))["params"]["model"] == "vteam"
        assert isinstance(crossbar_from_dict(data), Crossbar)

    def test_conductance_csv(self, rng, tmp_path):
        """Test the headerless row-major conductance CSV."""
        xbar = build_crossbar(2, 3, get_preset("team"), rng=rng)
        program_naive(xbar, _bounded_targets(xbar, rng))
        path = tmp_path / "g.csv"
        conductance_to_csv(xbar, path)

        frame = pd.read_csv(path, header=None)
        assert frame.shape == (2, 3)
        assert np.allclose(frame.to_numpy(), xbar.conductance, rtol=1e-15)

    def test_load_invalid_json(self, tmp_path):
        """Test that corrupt files are configuration errors."""
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError):
            load_scheme(path)


if __name__ == "__main__":
    pytest.main([__file__])
