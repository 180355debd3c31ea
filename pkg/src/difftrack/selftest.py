"""Built-in oracle checks runnable from the CLI.

The reference filter here is an independent textbook Kalman filter in gain
form, solving against the innovation covariance with LU factorization. It
shares no linear algebra helpers with the engine, so agreement between the
two is evidence about the engine rather than about a common bug.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import MotionModel, discretize_projectile, initial_state, step_truth
from .engine import DiffusionKalmanEngine, adapt
from .numerics import symmetrize
from .topology import ClusterAssignment, Network


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def reference_kf_update(
    x: np.ndarray,
    p: np.ndarray,
    y: np.ndarray,
    h: np.ndarray,
    r: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One textbook measurement update (gain form, LU solve)."""
    s = h @ p @ h.T + r
    gain = np.linalg.solve(s, h @ p).T
    x = x + gain @ (y - h @ x)
    p = p - gain @ h @ p
    return x, 0.5 * (p + p.T)


def reference_kf_predict(
    x: np.ndarray,
    p: np.ndarray,
    model: MotionModel,
    knows_gravity: bool,
) -> tuple[np.ndarray, np.ndarray]:
    x = model.F @ x
    if knows_gravity:
        x = x + model.u_g
    p = model.F @ p @ model.F.T + model.G @ model.Q @ model.G.T
    return x, 0.5 * (p + p.T)


def batch_adapt_reference(
    x: np.ndarray,
    p: np.ndarray,
    messages: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray]:
    """All measurements at once: stacked H, block-diagonal R."""
    k = len(messages)
    dim = x.size
    h_stk = np.vstack([h for _, h, _ in messages])
    y_stk = np.concatenate([y for y, _, _ in messages])
    r_stk = np.zeros((k * dim, k * dim))
    for i, (_, _, r) in enumerate(messages):
        r_stk[i * dim : (i + 1) * dim, i * dim : (i + 1) * dim] = r
    s = h_stk @ p @ h_stk.T + r_stk
    gain = np.linalg.solve(s, h_stk @ p).T
    psi = x + gain @ (y_stk - h_stk @ x)
    p_out = p - gain @ h_stk @ p
    return psi, 0.5 * (p_out + p_out.T)


def _single_node_setup():
    net = Network(
        positions=np.array([[0.5, 0.5]]),
        adjacency=np.zeros((1, 1), dtype=bool),
    )
    assignment = ClusterAssignment(cluster_of=np.array([1]), s=1)
    model = discretize_projectile(0.1, 10.0)
    return net, assignment, model


def single_node_max_deviation(
    policy: str,
    n_iterations: int = 100,
    seed: int = 12345,
    sigma2: float = 0.2,
) -> float:
    """Worst per-coordinate gap between engine and reference KF."""
    net, assignment, model = _single_node_setup()
    truth_rng = np.random.default_rng(seed)
    truth = initial_state(1.0, 30.0, 15.0, np.pi / 3)
    truths = [truth]
    for _ in range(n_iterations - 1):
        truths.append(step_truth(truths[-1], model, truth_rng))

    engine = DiffusionKalmanEngine(
        net, assignment, model, np.array([sigma2]), policy
    )
    eng_rng = np.random.default_rng(seed + 1)
    ref_rng = np.random.default_rng(seed + 1)
    x = np.zeros(4)
    p = np.eye(4)
    h = np.eye(4)
    r = sigma2 * np.eye(4)
    worst = 0.0
    for j in range(n_iterations):
        engine.run_step(truths[j][None, :], eng_rng)
        y = truths[j] + np.sqrt(sigma2) * ref_rng.standard_normal((1, 4))[0]
        x, p = reference_kf_update(x, p, y, h, r)
        worst = max(worst, np.abs(engine.x_hat[0] - x).max())
        x, p = reference_kf_predict(x, p, model, knows_gravity=True)
    return worst


def sequential_vs_batch_max_relative(n_cases: int = 100, seed: int = 7) -> float:
    """Worst relative gap between sequential and stacked-batch adaptation."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        k = int(rng.integers(1, 11))
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        p = (q * rng.uniform(0.1, 10.0, 4)) @ q.T
        p = 0.5 * (p + p.T)
        x = rng.standard_normal(4) * 10.0
        messages = []
        for _ in range(k):
            h = rng.standard_normal((4, 4))
            qr_, _ = np.linalg.qr(rng.standard_normal((4, 4)))
            r = (qr_ * rng.uniform(0.05, 2.0, 4)) @ qr_.T
            r = 0.5 * (r + r.T)
            y = rng.standard_normal(4) * 5.0
            messages.append((y, h, r))
        psi_s, p_s = adapt(x, p, messages)
        psi_b, p_b = batch_adapt_reference(x, p, messages)
        err_psi = np.abs(psi_s - psi_b).max() / max(np.abs(psi_b).max(), 1e-300)
        err_p = np.abs(symmetrize(p_s) - p_b).max() / max(np.abs(p_b).max(), 1e-300)
        worst = max(worst, err_psi, err_p)
    return worst


def discretization_max_error(n_steps: int = 100) -> float:
    """Worst gap between stepped and closed-form vertical position."""
    model = discretize_projectile(0.1, 10.0, q_scale=0.0)
    rng = np.random.default_rng(0)
    state = initial_state(1.0, 30.0, 15.0, np.pi / 3)
    y0, vy0 = state[1], state[3]
    worst = 0.0
    for k in range(1, n_steps + 1):
        state = step_truth(state, model, rng)
        t = k * model.delta
        worst = max(worst, abs(state[1] - (y0 + vy0 * t - 5.0 * t * t)))
    return worst


def determinism_check(seed: int = 3) -> bool:
    """Two identically seeded small runs must match bit for bit."""
    from .topology import generate_geometric, initial_partition

    def run_once():
        rng = np.random.default_rng(seed)
        net = generate_geometric(8, 0.6, 2, rng)
        part = initial_partition(net, 0.6, rng)
        model = discretize_projectile(0.1, 10.0)
        sigma2 = 0.01 + 0.5 * rng.random(8)
        truths = np.stack(
            [
                initial_state(1.0, 30.0, 15.0, np.pi / 3),
                initial_state(1.0, 30.0, 15.0, np.pi / 4),
            ]
        )
        engine = DiffusionKalmanEngine(net, part, model, sigma2, "adaptive")
        traj = []
        for _ in range(20):
            engine.run_step(truths, rng)
            truths = np.stack([step_truth(t, model, rng) for t in truths])
            traj.append(engine.x_hat.copy())
        return np.stack(traj)

    return np.array_equal(run_once(), run_once())


def run_selftest() -> list[CheckResult]:
    checks: list[CheckResult] = []

    worst = max(single_node_max_deviation(p) for p in ("uniform", "adaptive"))
    checks.append(
        CheckResult(
            "single-node engine matches reference Kalman filter",
            worst <= 1e-10,
            f"max deviation {worst:.3e} (tolerance 1e-10)",
        )
    )

    rel = sequential_vs_batch_max_relative()
    checks.append(
        CheckResult(
            "sequential adaptation matches stacked batch update",
            rel <= 1e-8,
            f"max relative error {rel:.3e} (tolerance 1e-8)",
        )
    )

    disc = discretization_max_error()
    checks.append(
        CheckResult(
            "discretization reproduces closed-form trajectory",
            disc <= 1e-9,
            f"max error {disc:.3e} (tolerance 1e-9)",
        )
    )

    det = determinism_check()
    checks.append(
        CheckResult(
            "identical seeds give identical trajectories",
            det,
            "bitwise equal" if det else "trajectories diverged",
        )
    )
    return checks
