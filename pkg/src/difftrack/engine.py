"""Adapt-then-combine diffusion Kalman filter engine.

Every iteration is a synchronous bulk step over all nodes:

1. each node measures the target its cluster tracks;
2. adaptation: incremental information updates over the node's
   neighborhood, neighbors processed in ascending node index;
3. residuals q = y - H psi;
4. adaptive policy only: recompute all combination weight columns from the
   fresh psi snapshot, then A = C^T;
5. combination: convex blend of neighbor intermediates (covariance is NOT
   blended; each node keeps its own);
6. link-pruning bookkeeping over a sliding window of weight matrices;
7. time update through the motion model.

Phases read only the previous phase's snapshot, so per-node work inside a
phase is order-free; the engine exploits that by batching phase 2 across
nodes (all rank-0 neighbors at once, then rank-1, ...), which produces
bit-identical results to a per-node loop because the per-matrix kernels
are identical under numpy batching.

The module-level functions adapt/residual/combine/time_update are the
single-node reference forms of the same arithmetic; tests hold the engine
to them.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .combiners import (
    POLICIES,
    adaptive_weight_row,
    diffusion_matrix,
    static_weights,
    validate_combination_matrix,
)
from .dynamics import STATE_DIM, MotionModel
from .errors import ConfigError, NumericError
from .numerics import inverse_spd, symmetrize
from .topology import ClusterAssignment, Network, prune_cross_links

# Column-stochasticity slack tolerated at combine time (looser than the
# construction-time tolerance; rounding accumulates over a run).
COMBINE_COL_TOL = 1e-9

# PSD slack: covariance eigenvalues may dip this far below zero before the
# engine calls it a failure.
PSD_TOL = -1e-9


def adapt(
    x_pred: np.ndarray,
    p_pred: np.ndarray,
    messages: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray]:
    """Sequential measurement updates for one node.

    ``messages`` holds (y, H, R) triples; the engine supplies them in
    ascending neighbor index and this function processes them in the given
    order. An empty sequence returns the prediction unchanged.
    """
    psi = np.array(x_pred, dtype=np.float64)
    p = np.array(p_pred, dtype=np.float64)
    for y, h, r in messages:
        hp = h @ p
        r_e = hp @ h.T + r
        gain = hp.T @ inverse_spd(r_e, role="innovation covariance")
        psi = psi + gain @ (y - h @ psi)
        p = symmetrize(p - gain @ hp)
    return psi, p


def residual(y: np.ndarray, h: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Post-adaptation innovation q = y - H psi."""
    return y - h @ psi


def combine(psi_all: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Convex combination of intermediate estimates.

    ``psi_all`` is (k, 4) and ``weights`` the matching column slice of C.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if abs(weights.sum() - 1.0) > COMBINE_COL_TOL:
        raise NumericError(
            f"combination weights sum to {weights.sum()!r}, not 1"
        )
    if (weights < 0.0).any():
        raise NumericError("combination weights must be nonnegative")
    return weights @ psi_all


def time_update(
    x_hat: np.ndarray,
    p: np.ndarray,
    model: MotionModel,
    knows_gravity: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Propagate one node's estimate through the motion model."""
    x_pred = model.F @ x_hat
    if knows_gravity:
        x_pred = x_pred + model.u_g
    p_pred = symmetrize(model.F @ p @ model.F.T + model.process_noise_cov)
    return x_pred, p_pred


@dataclass(frozen=True)
class NodeFilterState:
    """Read-only view of one node's filter quantities."""

    x_pred: np.ndarray
    P_pred: np.ndarray
    psi: np.ndarray
    P_psi: np.ndarray
    q: np.ndarray


class DiffusionKalmanEngine:
    """Synchronous multi-node filter over a fixed (but prunable) network."""

    def __init__(
        self,
        net: Network,
        assignment: ClusterAssignment,
        model: MotionModel,
        sigma2: np.ndarray,
        policy: str,
        *,
        eps: float = 1e-12,
        prune_tau: float = 0.05,
        prune_window: int = 10,
        pruning_enabled: bool = True,
        filter_knows_gravity: bool = True,
        p0_scale: float = 1.0,
        adapt_gate: float = 0.0,
        observation: np.ndarray | None = None,
    ) -> None:
        if policy not in POLICIES:
            raise ConfigError(f"unknown policy '{policy}', expected one of {POLICIES}")
        n = net.n_nodes
        sigma2 = np.asarray(sigma2, dtype=np.float64)
        if sigma2.shape != (n,):
            raise ConfigError(f"sigma2 must have shape ({n},), got {sigma2.shape}")
        if (sigma2 <= 0.0).any():
            raise ConfigError("all measurement variances must be positive")
        if assignment.n_nodes != n:
            raise ConfigError("cluster assignment does not match network size")
        if p0_scale <= 0.0:
            raise ConfigError(f"initial covariance scale must be positive, got {p0_scale}")

        self.net = net
        self.assignment = assignment
        self.model = model
        self.sigma2 = sigma2
        self.policy = policy
        self.eps = float(eps)
        self.prune_tau = float(prune_tau)
        self.prune_window = int(prune_window)
        self.pruning_enabled = bool(pruning_enabled)
        self.filter_knows_gravity = bool(filter_knows_gravity)
        self.adapt_gate = float(adapt_gate)

        if observation is None:
            self._h_identity = True
            self.H = np.broadcast_to(np.eye(STATE_DIM), (n, STATE_DIM, STATE_DIM)).copy()
            self._h_inv = None
        else:
            h = np.asarray(observation, dtype=np.float64)
            if h.shape == (STATE_DIM, STATE_DIM):
                h = np.broadcast_to(h, (n, STATE_DIM, STATE_DIM)).copy()
            if h.shape != (n, STATE_DIM, STATE_DIM):
                raise ConfigError(
                    f"observation must be 4x4 or per-node (n,4,4), got {h.shape}"
                )
            self.H = h
            self._h_identity = bool((h == np.eye(STATE_DIM)).all())
            if self._h_identity:
                self._h_inv = None
            else:
                # The adaptive rule adds a measurement-space residual to a
                # state-space estimate; for H != I that needs H^{-1}.
                try:
                    self._h_inv = np.linalg.inv(h)
                except np.linalg.LinAlgError as exc:
                    raise ConfigError(
                        "adaptive residual mapping needs invertible observation matrices"
                    ) from exc

        self.x_pred = np.zeros((n, STATE_DIM))
        self.P_pred = np.broadcast_to(
            p0_scale * np.eye(STATE_DIM), (n, STATE_DIM, STATE_DIM)
        ).copy()
        self.psi = self.x_pred.copy()
        self.P_psi = self.P_pred.copy()
        self.q = np.zeros((n, STATE_DIM))
        self.x_hat = np.zeros((n, STATE_DIM))

        if policy == "adaptive":
            self.C = np.eye(n)
        else:
            self.C = static_weights(policy, net, sigma2)
        validate_combination_matrix(self.C, net)
        self.A = diffusion_matrix(self.C)

        self.iteration = 0
        self.min_psd_eigenvalue = float("inf")
        self._history: deque[np.ndarray] = deque(maxlen=self.prune_window)
        self._rebuild_topology_arrays()
        self._gqg = model.process_noise_cov

    # -- topology-dependent caches ------------------------------------

    def _rebuild_topology_arrays(self) -> None:
        hoods = self.net.neighborhoods
        n = self.net.n_nodes
        max_deg = max(len(nb) for nb in hoods)
        ranks = np.full((n, max_deg), -1, dtype=np.int64)
        for m, nb in enumerate(hoods):
            ranks[m, : len(nb)] = nb  # already ascending
        self._ranks = ranks
        self._support = self.net.adjacency | np.eye(n, dtype=bool)

    def _adopt_network(self, net: Network) -> None:
        self.net = net
        self._rebuild_topology_arrays()
        if self.policy != "adaptive":
            self.C = static_weights(self.policy, net, self.sigma2)
            validate_combination_matrix(self.C, net)
            self.A = diffusion_matrix(self.C)

    # -- accessors ------------------------------------------------------

    def node_state(self, m: int) -> NodeFilterState:
        return NodeFilterState(
            x_pred=self.x_pred[m].copy(),
            P_pred=self.P_pred[m].copy(),
            psi=self.psi[m].copy(),
            P_psi=self.P_psi[m].copy(),
            q=self.q[m].copy(),
        )

    # -- the synchronous step -------------------------------------------

    def run_step(self, truths: np.ndarray, rng: np.random.Generator) -> "DiffusionKalmanEngine":
        """Advance every node one iteration against the given truth states.

        ``truths`` is (n_targets, 4); node m measures target
        cluster_of[m]. Consumes exactly one (n_nodes, 4) standard normal
        block from ``rng`` regardless of policy or topology, which keeps
        common-random-number comparisons across policies honest.
        """
        truths = np.asarray(truths, dtype=np.float64)
        n = self.net.n_nodes
        tidx = self.assignment.cluster_of - 1
        if truths.ndim != 2 or truths.shape[1] != STATE_DIM or tidx.max() >= truths.shape[0]:
            raise ConfigError(
                f"need one 4-state truth per cluster label, got {truths.shape}"
            )

        # Phase 1: measurements.
        noise = rng.standard_normal((n, STATE_DIM))
        target_states = truths[tidx]
        if self._h_identity:
            y = target_states + np.sqrt(self.sigma2)[:, None] * noise
        else:
            seen = (self.H @ target_states[:, :, None])[:, :, 0]
            y = seen + np.sqrt(self.sigma2)[:, None] * noise

        # Phase 2: adaptation, batched across nodes rank by rank.
        psi, p = self._adapt_all(y)
        self.psi, self.P_psi = psi, p
        self._track_psd(p)

        # Phase 3: residuals.
        if self._h_identity:
            self.q = y - psi
        else:
            self.q = y - (self.H @ psi[:, :, None])[:, :, 0]

        # Phase 4: weight update (adaptive policy only).
        if self.policy == "adaptive":
            self.C = self._adaptive_weights(psi, self.q)
            self.A = diffusion_matrix(self.C)

        # Phase 5: combination. Covariance is intentionally left alone.
        validate_combination_matrix(self.C, self.net, col_tol=COMBINE_COL_TOL)
        self.x_hat = self.A @ psi

        # Phase 6: pruning bookkeeping.
        if self.pruning_enabled:
            self._history.append(self.C.copy())
            if len(self._history) >= self.prune_window:
                pruned = prune_cross_links(
                    self.net, list(self._history), self.prune_tau, self.prune_window
                )
                if pruned is not self.net:
                    self._adopt_network(pruned)

        # Phase 7: time update.
        self.x_pred = self.x_hat @ self.model.F.T
        if self.filter_knows_gravity:
            self.x_pred = self.x_pred + self.model.u_g
        self.P_pred = symmetrize(
            self.model.F @ self.P_psi @ self.model.F.T + self._gqg
        )
        self._track_psd(self.P_pred)

        self.iteration += 1
        return self

    # -- internals --------------------------------------------------------

    def _adapt_all(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        psi = self.x_pred.copy()
        p = self.P_pred.copy()
        gate_mask = None
        if self.adapt_gate > 0.0:
            gate_mask = self.A >= self.adapt_gate
        diag = np.arange(STATE_DIM)
        for r in range(self._ranks.shape[1]):
            neighbor = self._ranks[:, r]
            valid = neighbor >= 0
            if gate_mask is not None:
                ok = np.zeros_like(valid)
                ok[valid] = gate_mask[neighbor[valid], np.flatnonzero(valid)]
                valid = ok
            if not valid.any():
                continue
            m_idx = np.flatnonzero(valid)
            n_idx = neighbor[m_idx]
            p_v = p[m_idx]
            psi_v = psi[m_idx]
            y_v = y[n_idx]
            s2_v = self.sigma2[n_idx]
            if self._h_identity:
                hp = p_v
                r_e = p_v.copy()
                r_e[:, diag, diag] += s2_v[:, None]
                innov = y_v - psi_v
            else:
                h_v = self.H[n_idx]
                hp = h_v @ p_v
                r_e = hp @ np.swapaxes(h_v, -1, -2)
                r_e[:, diag, diag] += s2_v[:, None]
                innov = y_v - (h_v @ psi_v[:, :, None])[:, :, 0]
            gain = np.swapaxes(hp, -1, -2) @ inverse_spd(
                r_e, role="innovation covariance"
            )
            psi[m_idx] = psi_v + (gain @ innov[:, :, None])[:, :, 0]
            p[m_idx] = symmetrize(p_v - gain @ hp)
        return psi, p

    def _adaptive_weights(self, psi: np.ndarray, q: np.ndarray) -> np.ndarray:
        if self._h_identity:
            q_state = q
        else:
            q_state = (self._h_inv @ q[:, :, None])[:, :, 0]
        target = psi + q_state
        diff = psi[:, None, :] - target[None, :, :]
        d = np.maximum(np.linalg.norm(diff, axis=2), self.eps)
        w = np.where(self._support, d**-2.0, 0.0)
        return w / w.sum(axis=0)

    def _track_psd(self, covs: np.ndarray) -> None:
        eigs = np.linalg.eigvalsh(symmetrize(covs))
        low = float(eigs.min())
        if low < self.min_psd_eigenvalue:
            self.min_psd_eigenvalue = low
        if low < PSD_TOL:
            raise NumericError(
                f"covariance lost positive semidefiniteness "
                f"(min eigenvalue {low:.3e} at iteration {self.iteration})"
            )
