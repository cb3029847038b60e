"""
Unit tests for the datasets and metrics modules.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xbarsim.datasets import (
    Dataset,
    dataset_from_dict,
    gen_synthetic_dataset,
    kfold_split,
    load_csv_dataset,
)
from xbarsim.errors import ConfigurationError, InputError
from xbarsim.metrics import METRICS, compute_metrics


class TestDataset:
    """Test the Dataset container."""

    def test_shape_validation(self):
        """Test that labels must match the sample count."""
        with pytest.raises(InputError):
            Dataset(np.zeros((3, 2)), np.zeros(2))

    def test_subset(self):
        """Test selecting samples by index."""
        data = Dataset(np.arange(8.0).reshape(4, 2), [0, 1, 0, 1])
        part = data.subset(np.array([1, 3]))

        assert len(part) == 2
        assert np.array_equal(part.labels, [1, 1])
        assert part.n_features == 2
        assert data.n_classes == 2


class TestSyntheticDataset:
    """Test synthetic data generation."""

    def test_shape_and_balance(self):
        """Test sample count, feature count and class balance."""
        data = gen_synthetic_dataset(100, 5, 4.0, seed=1)

        assert data.features.shape == (100, 5)
        assert np.sum(data.labels == 1) == 50

    def test_standardized(self):
        """Test that features are standardized."""
        data = gen_synthetic_dataset(500, 4, 4.0, seed=2)

        assert np.allclose(data.features.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(data.features.std(axis=0), 1.0)

    def test_seeded(self):
        """Test that the seed fully determines the data."""
        a = gen_synthetic_dataset(50, 3, 2.0, seed=9)
        b = gen_synthetic_dataset(50, 3, 2.0, seed=9)

        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_too_few_samples(self):
        """Test that one sample cannot form two classes."""
        with pytest.raises(InputError):
            gen_synthetic_dataset(1, 3, 2.0, seed=0)


class TestCsvDataset:
    """Test loading datasets from CSV."""

    def test_load(self, tmp_path):
        """Test that the last column is the label."""
        path = tmp_path / "data.csv"
        path.write_text("a,b,label\n0.5,1.5,0\n2.0,-1.0,1\n")
        data = load_csv_dataset(path)

        assert data.features.shape == (2, 2)
        assert np.array_equal(data.labels, [0, 1])

    def test_non_integer_labels(self, tmp_path):
        """Test that fractional labels are rejected."""
        path = tmp_path / "data.csv"
        path.write_text("a,label\n0.5,0.5\n")
        with pytest.raises(InputError, match="integers"):
            load_csv_dataset(path)

    def test_missing_file(self, tmp_path):
        """Test that a missing file is an input error."""
        with pytest.raises(InputError):
            load_csv_dataset(tmp_path / "absent.csv")

    def test_label_only(self, tmp_path):
        """Test that a file without features is rejected."""
        path = tmp_path / "data.csv"
        path.write_text("label\n0\n1\n")
        with pytest.raises(InputError):
            load_csv_dataset(path)

    def test_non_numeric_features(self, tmp_path):
        """Test that text in a feature column is an input error."""
        path = tmp_path / "data.csv"
        path.write_text("a,label\nhigh,0\n0.5,1\n")
        with pytest.raises(InputError, match="numeric"):
            load_csv_dataset(path)

    def test_malformed_rows(self, tmp_path):
        """Test that rows with extra fields are an input error."""
        path = tmp_path / "data.csv"
        path.write_text("a,label\n0.5,0\n0.1,0.2,0.3,1\n")
        with pytest.raises(InputError, match="Cannot read"):
            load_csv_dataset(path)

    def test_directory_path(self, tmp_path):
        """Test that a directory in place of a file is an input error."""
        with pytest.raises(InputError):
            load_csv_dataset(tmp_path)

    def test_from_dict(self, tmp_path):
        """Test the dataset section of an experiment document."""
        path = tmp_path / "data.csv"
        path.write_text("a,label\n1.0,0\n2.0,1\n")

        assert len(dataset_from_dict({"csv": str(path)}, seed=0)) == 2
        synthetic = dataset_from_dict({"synthetic": {"n_samples": 40, "n_features": 3}}, seed=0)
        assert synthetic.features.shape == (40, 3)

    @pytest.mark.parametrize(
        "section",
        [{}, {"mnist": {}}, {"synthetic": {"samples": 10}}, {"csv": "a", "synthetic": {}}],
    )
    def test_from_dict_invalid(self, section):
        """Test that malformed dataset sections are configuration errors."""
        with pytest.raises(ConfigurationError):
            dataset_from_dict(section, seed=0)


class TestKfoldSplit:
    """Test k-fold partitioning."""

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(2, 200), data=st.data())
    def test_partition(self, n, data):
        """Test that test folds are disjoint, cover everything and are balanced."""
        k = data.draw(st.integers(2, min(n, 10)))
        splits = kfold_split(n, k, seed=3)
        tests = [test for _, test in splits]

        assert len(splits) == k
        assert np.array_equal(np.sort(np.concatenate(tests)), np.arange(n))
        sizes = [len(t) for t in tests]
        assert max(sizes) - min(sizes) <= 1
        for train, test in splits:
            assert not np.intersect1d(train, test).size
            assert len(train) + len(test) == n

    def test_single_fold(self):
        """Test that k = 1 trains and tests on all samples."""
        ((train, test),) = kfold_split(5, 1, seed=0)

        assert np.array_equal(train, np.arange(5))
        assert np.array_equal(test, np.arange(5))

    def test_too_many_folds(self):
        """Test that k cannot exceed the sample count."""
        with pytest.raises(InputError):
            kfold_split(3, 4, seed=0)

    def test_seeded(self):
        """Test that the seed determines the folds."""
        a = kfold_split(20, 4, seed=1)
        b = kfold_split(20, 4, seed=1)

        assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))


class TestMetrics:
    """Test accuracy and F1."""

    def test_binary_example(self):
        """Test a half-right binary prediction."""
        result = compute_metrics([1, 1, 0, 0], [1, 0, 1, 0])

        assert result["accuracy"] == 0.5
        assert result["f1"] == pytest.approx(0.5)

    def test_perfect(self):
        """Test perfect predictions."""
        assert compute_metrics([0, 1, 1], [0, 1, 1]) == {"accuracy": 1.0, "f1": 1.0}

    def test_no_positive_predictions(self):
        """Test that F1 is zero when precision and recall vanish."""
        assert compute_metrics([0, 0], [1, 1])["f1"] == 0.0

    def test_multiclass_macro(self):
        """Test macro-averaged F1 over three classes."""
        result = compute_metrics([0, 1, 2, 2], [0, 1, 2, 1])

        # per-class F1: 1, 2/3, 2/3
        assert result["f1"] == pytest.approx((1 + 2 / 3 + 2 / 3) / 3)

    def test_length_mismatch(self):
        """Test that predictions and labels must match."""
        with pytest.raises(InputError):
            compute_metrics([0, 1], [0])

    def test_empty(self):
        """Test that empty inputs are rejected."""
        with pytest.raises(InputError):
            compute_metrics([], [])

    def test_metric_names(self):
        """Test the metric names the harness accepts."""
        assert METRICS == ("accuracy", "f1")


if __name__ == "__main__":
    pytest.main([__file__])
