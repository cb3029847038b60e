"""
End-to-end degradation trends on the 64-32-2 demo network.

These run many conversions and are marked slow; deselect with -m "not slow".
"""

import time

import numpy as np
import pytest

from xbarsim.datasets import gen_synthetic_dataset, kfold_split
from xbarsim.device import get_preset, with_ratio, with_variability
from xbarsim.harness import evaluate
from xbarsim.mapping import MappingConfig, MappingDomain
from xbarsim.network import InputScaling, patch_model, tune_all
from xbarsim.nonideality import DeviceFaults, FiniteStates, Lut, NonLinear, SingleTimestep

SEEDS = range(10)
R_ON, R_OFF = 100.0, 2500.0

pytestmark = pytest.mark.slow


def _converted(net, seed, template=None, mapping=None, stack=(), scaling=InputScaling.NONE):
    rng = np.random.default_rng(seed)
    patched = patch_model(
        net,
        template or get_preset("pt_hf_ti"),
        mapping or MappingConfig(r_on=R_ON, r_off=R_OFF, domain=MappingDomain.CONDUCTANCE),
        stack,
        rng,
        scaling=scaling,
    )
    tune_all(patched, rng=rng)
    return patched


def _mean_accuracy(net, test, **kwargs):
    return float(np.mean([evaluate(_converted(net, seed, **kwargs), test, "accuracy") for seed in SEEDS]))


def _overlapping_test_split(separation):
    # Same seed and shape as the training data, so the class direction matches
    data = gen_synthetic_dataset(2000, 64, separation, seed=7)
    _, test_idx = kfold_split(len(data), 5, seed=7)[0]
    return data.subset(test_idx)


class TestIdealPipeline:
    """Test the ideal conversion against the legacy network."""

    def test_outputs_match_legacy(self, trained_mlp):
        """Test relative RMS and argmax agreement on 10^4 samples within two minutes."""
        start = time.perf_counter()
        samples = gen_synthetic_dataset(10_000, 64, 6.0, seed=11).features
        patched = _converted(trained_mlp, 0)
        legacy = trained_mlp.forward(samples)
        crossbar = patched.forward(samples)

        rms = np.sqrt(np.mean((crossbar - legacy) ** 2) / np.mean(legacy**2))
        agreement = np.mean(crossbar.argmax(axis=1) == legacy.argmax(axis=1))
        assert rms <= 1e-4
        assert agreement >= 0.999
        assert time.perf_counter() - start < 120.0


class TestDegradationTrends:
    """Test the qualitative accuracy trends of each non-ideality."""

    def test_finite_states(self, trained_mlp, separable_data):
        """Test that fewer conductance states never help much, within ten minutes."""
        start = time.perf_counter()
        _, test = separable_data
        ideal = evaluate(trained_mlp, test, "accuracy")
        means = [
            _mean_accuracy(trained_mlp, test, stack=[FiniteStates(n)]) for n in (32, 16, 8, 4, 3, 2)
        ]

        inversions = [later - earlier for earlier, later in zip(means, means[1:]) if later > earlier]
        assert len(inversions) <= 1
        assert all(step <= 0.01 for step in inversions)
        assert means[-1] <= ideal - 0.2
        assert time.perf_counter() - start < 600.0

    def test_stuck_on_worse_than_stuck_off(self, trained_mlp, separable_data):
        """Test that devices stuck at R_on hurt more than devices stuck at R_off."""
        _, test = separable_data
        ideal = evaluate(trained_mlp, test, "accuracy")
        stuck_on = _mean_accuracy(trained_mlp, test, stack=[DeviceFaults(stuck_on=0.25)])
        stuck_off = _mean_accuracy(trained_mlp, test, stack=[DeviceFaults(stuck_off=0.25)])

        assert (ideal - stuck_on) - (ideal - stuck_off) >= 0.1

    def test_larger_ratio_is_more_resilient(self, trained_mlp, separable_data):
        """Test that a larger R_off / R_on ratio mitigates variability."""
        _, test = separable_data

        def at_ratio(ratio):
            template = with_variability(with_ratio(get_preset("pt_hf_ti"), ratio), 20.0)
            mapping = MappingConfig(r_on=R_ON, r_off=R_ON * ratio, domain=MappingDomain.CONDUCTANCE)
            return _mean_accuracy(
                trained_mlp, test, template=template, mapping=mapping, stack=[FiniteStates(4)]
            )

        assert at_ratio(32) >= at_ratio(2) + 0.05

    def test_device_to_device_variability(self, trained_mlp, separable_data):
        """Test that accuracy falls towards chance as R_on and R_off overlap."""
        _, test = separable_data
        means = [
            _mean_accuracy(
                trained_mlp, test, template=with_variability(get_preset("pt_hf_ti"), sigma)
            )
            for sigma in (0.0, 100.0, 400.0, 1200.0)
        ]

        assert all(later <= earlier + 0.005 for earlier, later in zip(means, means[1:]))
        assert abs(means[-1] - 0.5) <= 0.1


class TestNonLinearReadout:
    """Test non-linear readouts on the tuned network."""

    def test_single_timestep_costs_bounded_accuracy(self, trained_mlp):
        """Test that reads driven over threshold lower accuracy by a nonzero amount up to 15 points."""
        test = _overlapping_test_split(3.0)
        scaling = InputScaling.PER_BATCH_MIN_MAX
        readout = [NonLinear(SingleTimestep(dt=1e-9))]
        drops = []
        for seed in SEEDS:
            ideal = _converted(trained_mlp, seed, scaling=scaling)
            non_linear = _converted(trained_mlp, seed, stack=readout, scaling=scaling)
            if seed == SEEDS[0]:
                assert not np.allclose(non_linear.forward(test.features), ideal.forward(test.features))
            drops.append(evaluate(ideal, test, "accuracy") - evaluate(non_linear, test, "accuracy"))

        drop = float(np.mean(drops))
        assert 0.0 < drop <= 0.15

    def test_finite_states_with_lut(self, trained_mlp, separable_data):
        """Test the finite-states then lookup-table stack against finite states alone."""
        _, test = separable_data
        scaling = InputScaling.PER_BATCH_MIN_MAX
        quantized = _mean_accuracy(trained_mlp, test, stack=[FiniteStates(4)], scaling=scaling)
        patched = _converted(trained_mlp, 0, stack=[FiniteStates(4), NonLinear(Lut())], scaling=scaling)

        assert all(xbar.lut.states.shape[0] == 4 for xbar in patched.crossbars())
        outputs = patched.forward(test.features)
        assert np.all(np.isfinite(outputs))
        assert evaluate(patched, test, "accuracy") >= quantized - 0.15


if __name__ == "__main__":
    pytest.main([__file__])
