"""Metrics: MSD accumulation, dB conversion, convergence, recovery score."""

import numpy as np
import pytest

from difftrack.metrics import (
    MsdSeries,
    cluster_recovery_score,
    convergence_iteration,
    msd_accumulate,
    to_db,
)
from difftrack.topology import ClusterAssignment


def assignment(labels):
    labels = np.asarray(labels, dtype=np.int64)
    return ClusterAssignment(labels, int(labels.max()))


class TestToDb:
    def test_unit_value_is_zero_db(self):
        assert to_db(1.0) == 0.0

    def test_hundred_is_twenty_db(self):
        assert to_db(100.0) == pytest.approx(20.0)

    def test_zero_is_floored(self):
        assert to_db(0.0) == pytest.approx(-300.0)

    def test_monotone_on_random_values(self):
        rng = np.random.default_rng(7)
        vals = np.sort(rng.random(100))
        db = to_db(vals)
        assert np.all(np.diff(db) >= 0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            to_db(-1e-9)

    def test_array_shape_preserved(self):
        out = to_db(np.ones((3, 2)))
        assert out.shape == (3, 2)
        assert np.all(out == 0.0)


class TestMsdAccumulate:
    def test_perfect_estimates_give_zero(self):
        truths = np.array([[1.0, 2.0, 3.0, 4.0]])
        estimates = np.tile(truths, (5, 1))
        out = msd_accumulate(truths, estimates, assignment([1] * 5))
        assert out.shape == (1,)
        assert out[0] == 0.0

    def test_single_node_unit_error_vector(self):
        truths = np.zeros((1, 4))
        estimates = np.ones((1, 4))
        out = msd_accumulate(truths, estimates, assignment([1]))
        assert out[0] == pytest.approx(4.0)

    def test_two_node_cluster_mean(self):
        truths = np.zeros((1, 4))
        estimates = np.array(
            [[1.0, 1.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0]]
        )
        out = msd_accumulate(truths, estimates, assignment([1, 1]))
        assert out[0] == pytest.approx(3.0)

    def test_two_clusters_score_against_own_targets(self):
        truths = np.array([[0.0, 0.0, 0.0, 0.0], [10.0, 0.0, 0.0, 0.0]])
        estimates = np.array(
            [[1.0, 0.0, 0.0, 0.0], [10.0, 2.0, 0.0, 0.0]]
        )
        out = msd_accumulate(truths, estimates, assignment([1, 2]))
        assert out == pytest.approx([1.0, 4.0])

    def test_node_order_invariance(self):
        rng = np.random.default_rng(3)
        truths = rng.normal(size=(2, 4))
        estimates = rng.normal(size=(6, 4))
        labels = np.array([1, 2, 1, 2, 1, 2])
        base = msd_accumulate(truths, estimates, assignment(labels))
        perm = rng.permutation(6)
        shuffled = msd_accumulate(
            truths, estimates[perm], assignment(labels[perm])
        )
        assert shuffled == pytest.approx(base, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            msd_accumulate(np.zeros((1, 4)), np.zeros((3, 4)), assignment([1, 1]))


class TestMsdSeries:
    def test_db_channel_matches_formula(self):
        linear = np.array([[1.0, 100.0], [0.0, 4.0]])
        series = MsdSeries(linear, n_trials=7)
        assert series.msd_db[0, 1] == pytest.approx(20.0)
        assert series.msd_db[1, 0] == pytest.approx(-300.0)
        assert series.n_trials == 7
        assert series.n_iterations == 2
        assert series.n_clusters == 2

    def test_negative_linear_rejected(self):
        with pytest.raises(ValueError):
            MsdSeries(np.array([[-1.0]]))

    def test_arrays_frozen(self):
        series = MsdSeries(np.ones((3, 1)))
        with pytest.raises(ValueError):
            series.msd_linear[0, 0] = 2.0


class TestConvergenceIteration:
    def test_constant_series_converges_at_zero(self):
        assert convergence_iteration(np.full(50, -12.0)) == 0

    def test_plateau_entry_detected(self):
        series = np.concatenate([np.linspace(40.0, -20.0, 41), np.full(59, -20.0)])
        it = convergence_iteration(series, band_db=3.0)
        assert it is not None
        assert it <= 40
        # the series is 3 dB above the plateau at the returned index
        assert abs(series[it] - series[-12:].mean()) <= 3.0

    def test_diverging_series_returns_none(self):
        series = np.linspace(0.0, 80.0, 100)
        assert convergence_iteration(series) is None

    def test_late_spike_pushes_convergence_after_spike(self):
        series = np.full(100, -10.0)
        series[70] = 30.0
        assert convergence_iteration(series) == 71

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            convergence_iteration(np.zeros(5))

    def test_two_dimensional_rejected(self):
        with pytest.raises(ValueError):
            convergence_iteration(np.zeros((20, 2)))


class TestClusterRecoveryScore:
    def test_identical_assignments(self):
        a = assignment([1, 1, 2, 2])
        assert cluster_recovery_score(a, a) == 1.0

    def test_global_label_swap_scores_one(self):
        a = assignment([1, 1, 2, 2])
        b = assignment([2, 2, 1, 1])
        assert cluster_recovery_score(a, b) == 1.0

    def test_one_of_thirty_misassigned(self):
        labels = np.ones(30, dtype=np.int64)
        labels[15:] = 2
        wrong = labels.copy()
        wrong[0] = 2
        score = cluster_recovery_score(assignment(wrong), assignment(labels))
        assert score == pytest.approx(29 / 30)

    def test_symmetry_under_argument_order(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a = assignment(rng.integers(1, 4, size=12))
            b = assignment(rng.integers(1, 3, size=12))
            assert cluster_recovery_score(a, b) == pytest.approx(
                cluster_recovery_score(b, a)
            )

    def test_fragmented_cluster_scores_partial(self):
        truth = assignment([1, 1, 1, 2, 2, 2])
        split = assignment([1, 1, 3, 2, 2, 2])
        assert cluster_recovery_score(split, truth) == pytest.approx(5 / 6)

    def test_node_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cluster_recovery_score(assignment([1, 2]), assignment([1, 2, 2]))
