"""Combination weight policies.

A combination matrix C is left-stochastic with c[n, m] being the weight
node m assigns to neighbor n; support is restricted to the self-inclusive
neighborhood N_m. The diffusion matrix A = C^T couples the adaptation
phase. Static policies depend only on the topology (and noise levels);
the adaptive rule re-derives every column each iteration from how far each
neighbor's intermediate estimate sits from the node's own data.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError
from .topology import Network

POLICIES = ("uniform", "metropolis", "relvar", "adaptive")

# Stochasticity slack for validation at construction time.
COLUMN_SUM_TOL = 1e-12


def _support(net: Network) -> np.ndarray:
    return net.adjacency | np.eye(net.n_nodes, dtype=bool)


def uniform_weights(net: Network) -> np.ndarray:
    """c[n, m] = 1/|N_m| for every n in N_m."""
    sup = _support(net)
    return sup / sup.sum(axis=0)


def metropolis_weights(net: Network) -> np.ndarray:
    """Off-diagonal 1/max(|N_n|, |N_m|); diagonal takes the remainder."""
    sizes = _support(net).sum(axis=0)
    c = np.where(net.adjacency, 1.0 / np.maximum.outer(sizes, sizes), 0.0)
    np.fill_diagonal(c, 1.0 - c.sum(axis=0))
    return c


def relative_variance_weights(net: Network, sigma2: np.ndarray) -> np.ndarray:
    """Weight neighbors by inverse noise variance, normalized over N_m."""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if sigma2.shape != (net.n_nodes,):
        raise ConfigError(
            f"sigma2 must have one entry per node, got shape {sigma2.shape}"
        )
    if (sigma2 <= 0.0).any():
        raise ConfigError("all measurement variances must be positive")
    w = _support(net) * (1.0 / sigma2)[:, None]
    return w / w.sum(axis=0)


def adaptive_weight_row(
    m: int,
    psi: np.ndarray,
    q_m: np.ndarray,
    neighborhood: np.ndarray,
    eps: float = 1e-12,
) -> np.ndarray:
    """Weight column for node m from current intermediate estimates.

    Each neighbor n in N_m is scored by the distance between its estimate
    psi[n] and the node's own data point psi[m] + q_m; weights are inverse
    squared distances normalized over the neighborhood. The self term's
    distance is just ||q_m||. Returns a full length-N column, zero outside
    N_m.
    """
    if eps <= 0.0:
        raise ConfigError(f"eps must be positive, got {eps}")
    psi = np.asarray(psi, dtype=np.float64)
    target = psi[m] + np.asarray(q_m, dtype=np.float64)
    d = np.linalg.norm(target - psi[neighborhood], axis=1)
    inv_sq = np.maximum(d, eps) ** -2.0
    col = np.zeros(psi.shape[0])
    col[neighborhood] = inv_sq / inv_sq.sum()
    return col


def diffusion_matrix(c: np.ndarray) -> np.ndarray:
    """A = C^T, element for element."""
    return np.asarray(c).T.copy()


def static_weights(policy: str, net: Network, sigma2: np.ndarray) -> np.ndarray:
    """Build the combination matrix for a static policy by name."""
    if policy == "uniform":
        return uniform_weights(net)
    if policy == "metropolis":
        return metropolis_weights(net)
    if policy == "relvar":
        return relative_variance_weights(net, sigma2)
    raise ConfigError(f"unknown static policy '{policy}'")


def validate_combination_matrix(
    c: np.ndarray,
    net: Network,
    col_tol: float = COLUMN_SUM_TOL,
) -> None:
    """Raise unless C is nonnegative, column-stochastic, and supported.

    Used both by tests and by the engine each iteration; a violation at
    runtime means a weight policy produced garbage, which is a numeric
    failure rather than a configuration problem.
    """
    c = np.asarray(c)
    if c.shape != (net.n_nodes, net.n_nodes):
        raise NumericError(f"combination matrix shape {c.shape} wrong")
    if (c < 0.0).any():
        raise NumericError("combination matrix has negative entries")
    col_err = np.abs(c.sum(axis=0) - 1.0).max()
    if col_err > col_tol:
        raise NumericError(
            f"combination matrix columns off stochastic by {col_err:.3e}"
        )
    if c[~_support(net)].any():
        raise NumericError("combination matrix leaks outside neighborhoods")
