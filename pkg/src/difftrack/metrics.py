"""Mean-square-deviation series, convergence detection, and recovery scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .topology import ClusterAssignment

DB_FLOOR = 1e-30


def to_db(linear):
    """Convert linear MSD to decibels, flooring at DB_FLOOR to keep log finite."""
    arr = np.asarray(linear, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("MSD values must be nonnegative")
    out = 10.0 * np.log10(np.maximum(arr, DB_FLOOR))
    return float(out) if np.isscalar(linear) or arr.ndim == 0 else out


@dataclass(frozen=True)
class MsdSeries:
    """Per-iteration, per-cluster mean squared deviation averaged over trials."""

    msd_linear: np.ndarray  # (n_iterations, n_clusters)
    msd_db: np.ndarray = field(repr=False, default=None)
    n_trials: int = 1

    def __post_init__(self):
        linear = np.asarray(self.msd_linear, dtype=np.float64)
        if linear.ndim != 2:
            raise ValueError("msd_linear must be (n_iterations, n_clusters)")
        if np.any(linear < 0):
            raise ValueError("MSD values must be nonnegative")
        linear = linear.copy()
        linear.setflags(write=False)
        object.__setattr__(self, "msd_linear", linear)
        db = to_db(linear)
        db.setflags(write=False)
        object.__setattr__(self, "msd_db", db)
        object.__setattr__(self, "n_trials", int(self.n_trials))

    @property
    def n_iterations(self) -> int:
        return self.msd_linear.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.msd_linear.shape[1]


def msd_accumulate(
    truths: np.ndarray, estimates: np.ndarray, assignment: ClusterAssignment
) -> np.ndarray:
    """Per-cluster mean of ||truth - estimate||^2 over the cluster's nodes.

    truths has one row per cluster (the cluster's target state); estimates has
    one row per node. Node m is scored against the target of its cluster.
    """
    truths = np.asarray(truths, dtype=np.float64)
    estimates = np.asarray(estimates, dtype=np.float64)
    labels = assignment.cluster_of
    if estimates.shape[0] != labels.shape[0]:
        raise ValueError("one estimate row per node required")
    if truths.shape[0] < assignment.s:
        raise ValueError("every cluster needs a target state")
    err = estimates - truths[labels - 1]
    sq = np.einsum("ij,ij->i", err, err)
    sums = np.bincount(labels - 1, weights=sq, minlength=assignment.s)
    return sums / assignment.sizes


def convergence_iteration(series_db: np.ndarray, band_db: float = 3.0):
    """First iteration from which the dB series stays within +/- band_db of
    its steady-state level (mean over the final 20% of iterations).

    Returns None if the series never settles into the band.
    """
    db = np.asarray(series_db, dtype=np.float64)
    if db.ndim != 1:
        raise ValueError("expected a 1-D dB series")
    n = db.shape[0]
    if n < 10:
        raise ValueError("series too short for steady-state detection")
    tail = max(1, n // 5)
    steady = db[n - tail :].mean()
    inside = np.abs(db - steady) <= band_db
    # first index where every later value is also inside the band
    outside = np.flatnonzero(~inside)
    if outside.size == 0:
        return 0
    first = int(outside[-1]) + 1
    return first if first < n else None


def cluster_recovery_score(
    inferred: ClusterAssignment, truth: ClusterAssignment
) -> float:
    """Best-permutation agreement between two assignments, in [0, 1]."""
    ci = inferred.cluster_of
    ct = truth.cluster_of
    if ci.shape[0] != ct.shape[0]:
        raise ValueError("assignments must cover the same nodes")
    confusion = np.zeros((inferred.s, truth.s))
    np.add.at(confusion, (ci - 1, ct - 1), 1.0)
    rows, cols = linear_sum_assignment(-confusion)
    return float(confusion[rows, cols].sum() / ci.shape[0])
