"""Experiment configuration, Monte Carlo orchestration, and artifact emission."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import __version__
from .combiners import POLICIES
from .dynamics import discretize_projectile, initial_state, step_truth
from .engine import DiffusionKalmanEngine
from .errors import ConfigError, NumericError
from .metrics import (
    MsdSeries,
    cluster_recovery_score,
    convergence_iteration,
    msd_accumulate,
)
from .topology import ClusterAssignment, Network, generate_geometric, infer_clusters, initial_partition

_INT_FIELDS = {"n_nodes", "min_degree", "n_trials", "n_iterations", "prune_window", "seed"}
_BOOL_FIELDS = {"pruning_enabled", "filter_knows_gravity"}
_TRUE_WORDS = {"true", "1", "yes", "on"}
_FALSE_WORDS = {"false", "0", "no", "off"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete, explicit description of one tracking experiment."""

    n_nodes: int = 30
    comm_radius: float = 0.35
    min_degree: int = 4
    n_trials: int = 200
    n_iterations: int = 100
    delta: float = 0.1
    g: float = 10.0
    x0: float = 1.0
    y0: float = 30.0
    v0: float = 15.0
    angles: tuple = (math.pi / 3, math.pi / 4)
    sigma_min: float = 0.01
    sigma_span: float = 0.5
    G_scale: float = 0.625
    Q_scale: float = 0.001
    P0_scale: float = 1.0
    policy: str = "adaptive"
    eps: float = 1e-12
    prune_tau: float = 0.05
    prune_window: int = 10
    pruning_enabled: bool = True
    filter_knows_gravity: bool = True
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        for name in ("n_nodes", "n_trials", "n_iterations", "prune_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive count")
        if self.min_degree < 0:
            raise ConfigError("min_degree must be nonnegative")
        if not 0.0 < self.comm_radius <= math.sqrt(2.0) + 1e-12:
            raise ConfigError("comm_radius must lie in (0, sqrt(2)]")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.g < 0:
            raise ConfigError("g must be nonnegative")
        if self.v0 < 0:
            raise ConfigError("v0 must be nonnegative")
        if len(self.angles) != 2:
            raise ConfigError("angles must list exactly two launch angles")
        if not all(math.isfinite(a) for a in self.angles):
            raise ConfigError("angles must be finite")
        if self.sigma_min <= 0:
            raise ConfigError("sigma_min must be positive")
        if self.sigma_span < 0:
            raise ConfigError("sigma_span must be nonnegative")
        if self.Q_scale < 0:
            raise ConfigError("Q_scale must be nonnegative")
        if self.P0_scale <= 0:
            raise ConfigError("P0_scale must be positive")
        if self.policy not in POLICIES:
            raise ConfigError(
                f"policy must be one of {', '.join(POLICIES)}; got '{self.policy}'"
            )
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if not 0.0 <= self.prune_tau <= 1.0:
            raise ConfigError("prune_tau must lie in [0, 1]")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")

    @property
    def n_targets(self) -> int:
        return len(self.angles)


@dataclass(frozen=True)
class MetricsRecord:
    """One row of the long-format MSD table."""

    iteration: int
    cluster_id: int
    policy: str
    msd_linear: float
    msd_db: float
    n_trials: int


def _coerce(key: str, value):
    if key in _BOOL_FIELDS:
        if isinstance(value, bool):
            return value
        word = str(value).strip().lower()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
        raise ConfigError(f"cannot parse boolean value '{value}' for key '{key}'")
    if key in _INT_FIELDS:
        if isinstance(value, bool):
            raise ConfigError(f"key '{key}' expects an integer")
        if isinstance(value, int):
            return value
        text = str(value).strip()
        try:
            return int(text, 0)
        except ValueError as exc:
            raise ConfigError(f"cannot parse integer value '{value}' for key '{key}'") from exc
    if key == "angles":
        if isinstance(value, str):
            text = value.strip().strip("[]()")
            parts = [p for p in text.replace(",", " ").split() if p]
        else:
            parts = list(value)
        try:
            return tuple(float(p) for p in parts)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cannot parse angle list '{value}'") from exc
    if key == "policy":
        return str(value).strip()
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse numeric value '{value}' for key '{key}'") from exc


def _build_config(mapping: dict) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    resolved = {}
    for key, value in mapping.items():
        if key not in known:
            raise ConfigError(f"unknown configuration key '{key}'")
        resolved[key] = _coerce(key, value)
    return ExperimentConfig(**resolved)


def load_config(path) -> ExperimentConfig:
    """Parse a flat key = value document, or JSON (including run_meta.json)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON configuration: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("JSON configuration must be an object")
        if isinstance(doc.get("config"), dict):
            doc = doc["config"]
        return _build_config(doc)
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in mapping:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        mapping[key] = value.strip()
    return _build_config(mapping)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """The per-trial random stream; adding trials never perturbs earlier ones."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial,)))


def simulate_truths(cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
    """Both targets' true state trajectories, (n_iterations, n_targets, 4)."""
    model = discretize_projectile(cfg.delta, cfg.g, g_scale=cfg.G_scale, q_scale=cfg.Q_scale)
    out = np.empty((cfg.n_iterations, cfg.n_targets, 4))
    for i, angle in enumerate(cfg.angles):
        out[0, i] = initial_state(cfg.x0, cfg.y0, cfg.v0, angle)
    for j in range(1, cfg.n_iterations):
        for i in range(cfg.n_targets):
            out[j, i] = step_truth(out[j - 1, i], model, rng)
    return out


def _draw_scene(cfg: ExperimentConfig, rng: np.random.Generator, head_radius):
    if cfg.n_nodes == 1:
        net = Network(np.array([[0.5, 0.5]]), np.zeros((1, 1), dtype=bool))
        part = ClusterAssignment(np.array([1], dtype=np.int64), 1)
    else:
        net = generate_geometric(cfg.n_nodes, cfg.comm_radius, cfg.min_degree, rng)
        radius = cfg.comm_radius if head_radius is None else float(head_radius)
        part = initial_partition(net, radius, rng)
    return net, part


def _run_trial(trial: int, cfg: ExperimentConfig, head_radius, weights_every: int):
    try:
        return _run_trial_body(trial, cfg, head_radius, weights_every)
    except (ConfigError, NumericError) as exc:
        raise type(exc)(f"trial {trial}: {exc}") from exc
    except OSError:
        raise
    except Exception as exc:
        raise RuntimeError(f"trial {trial}: {exc}") from exc


def _run_trial_body(trial: int, cfg: ExperimentConfig, head_radius, weights_every: int):
    rng = trial_rng(cfg.seed, trial)
    net, part = _draw_scene(cfg, rng, head_radius)
    sigma2 = cfg.sigma_min + cfg.sigma_span * rng.random(cfg.n_nodes)
    truths = simulate_truths(cfg, rng)
    model = discretize_projectile(cfg.delta, cfg.g, g_scale=cfg.G_scale, q_scale=cfg.Q_scale)
    engine = DiffusionKalmanEngine(
        net,
        part,
        model,
        sigma2,
        cfg.policy,
        eps=cfg.eps,
        prune_tau=cfg.prune_tau,
        prune_window=cfg.prune_window,
        pruning_enabled=cfg.pruning_enabled,
        filter_knows_gravity=cfg.filter_knows_gravity,
        p0_scale=cfg.P0_scale,
    )
    keep_detail = trial == 0
    msd = np.empty((cfg.n_iterations, part.s))
    est_mean = np.empty((cfg.n_iterations, part.s, 2)) if keep_detail else None
    snapshots = [] if keep_detail and weights_every > 0 else None
    members = [np.flatnonzero(part.cluster_of == l + 1) for l in range(part.s)]
    for j in range(cfg.n_iterations):
        engine.run_step(truths[j], rng)
        msd[j] = msd_accumulate(truths[j], engine.x_hat, part)
        if keep_detail:
            for l, idx in enumerate(members):
                est_mean[j, l] = engine.x_hat[idx, :2].mean(axis=0)
            if snapshots is not None and j % weights_every == 0:
                snapshots.append((j, engine.C.copy()))
    inferred = infer_clusters(engine.C, cfg.prune_tau)
    score = cluster_recovery_score(inferred, part)
    result = {"msd": msd, "recovery": score, "min_psd": engine.min_psd_eigenvalue}
    if keep_detail:
        result["detail"] = {
            "positions": np.asarray(net.positions, dtype=np.float64).copy(),
            "cluster_of": part.cluster_of.copy(),
            "adjacency_initial": np.asarray(net.adjacency, dtype=bool).copy(),
            "adjacency_final": np.asarray(engine.net.adjacency, dtype=bool).copy(),
            "truths": truths,
            "est_mean": est_mean,
            "final_C": engine.C.copy(),
            "snapshots": snapshots or [],
        }
    return result


@dataclass(frozen=True)
class RunResult:
    """Merged output of one run_experiment call."""

    config: ExperimentConfig
    series: MsdSeries
    records: tuple
    recovery_scores: np.ndarray
    convergence: tuple
    head_radius: float
    min_psd_eigenvalue: float
    detail: dict = field(repr=False, default_factory=dict)


def run_experiment(
    cfg: ExperimentConfig,
    *,
    head_radius=None,
    workers: int = 1,
    weights_every: int = 0,
) -> RunResult:
    """Run cfg.n_trials independent trials and merge metrics in trial order."""
    worker = partial(_run_trial, cfg=cfg, head_radius=head_radius, weights_every=weights_every)
    results = [None] * cfg.n_trials
    if workers > 1 and cfg.n_trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for trial, res in enumerate(pool.map(worker, range(cfg.n_trials))):
                results[trial] = res
    else:
        for trial in range(cfg.n_trials):
            results[trial] = worker(trial)
    stacked = np.stack([res["msd"] for res in results])
    series = MsdSeries(stacked.mean(axis=0), n_trials=cfg.n_trials)
    records = tuple(
        MetricsRecord(
            iteration=j,
            cluster_id=l + 1,
            policy=cfg.policy,
            msd_linear=float(series.msd_linear[j, l]),
            msd_db=float(series.msd_db[j, l]),
            n_trials=cfg.n_trials,
        )
        for j in range(series.n_iterations)
        for l in range(series.n_clusters)
    )
    convergence = tuple(
        convergence_iteration(series.msd_db[:, l]) for l in range(series.n_clusters)
    )
    scores = np.array([res["recovery"] for res in results])
    effective_head = cfg.comm_radius if head_radius is None else float(head_radius)
    min_psd = min(res["min_psd"] for res in results)
    return RunResult(
        cfg, series, records, scores, convergence, effective_head, min_psd,
        results[0].get("detail", {}),
    )


@dataclass(frozen=True)
class SweepResult:
    """Per-policy runs over common random numbers, plus the combined records."""

    runs: dict
    records: tuple

    @property
    def policies(self) -> tuple:
        return tuple(self.runs)


def policy_sweep(cfg: ExperimentConfig, policies, **kwargs) -> SweepResult:
    """Run each policy with identical seeds so the curves are comparable."""
    policies = list(policies)
    if not policies:
        raise ConfigError("policy sweep needs at least one policy")
    for name in policies:
        if name not in POLICIES:
            raise ConfigError(f"unknown policy '{name}' in sweep")
    runs = {}
    records = []
    for name in policies:
        run = run_experiment(dataclasses.replace(cfg, policy=name), **kwargs)
        runs[name] = run
        records.extend(run.records)
    return SweepResult(runs, tuple(records))


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_lines(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


MSD_HEADER = "iteration,cluster_id,policy,msd_linear,msd_db,n_trials"


def write_msd_csv(records, path) -> None:
    rows = (
        (r.iteration, r.cluster_id, r.policy, r.msd_linear, r.msd_db, r.n_trials)
        for r in records
    )
    _write_lines(path, MSD_HEADER, rows)


def read_msd_csv(path):
    """Inverse of write_msd_csv; returns MetricsRecord tuples."""
    records = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != MSD_HEADER:
            raise ConfigError(f"unexpected MSD header '{header}'")
        for raw in fh:
            parts = raw.rstrip("\n").split(",")
            if len(parts) != 6:
                raise ConfigError(f"malformed MSD row '{raw.strip()}'")
            records.append(
                MetricsRecord(
                    iteration=int(parts[0]),
                    cluster_id=int(parts[1]),
                    policy=parts[2],
                    msd_linear=float(parts[3]),
                    msd_db=float(parts[4]),
                    n_trials=int(parts[5]),
                )
            )
    return tuple(records)


def _write_topology(prefix, positions, cluster_of, adjacency, alive):
    n = positions.shape[0]
    _write_lines(
        f"{prefix}.csv",
        "node_id,x,y,cluster",
        ((m, float(positions[m, 0]), float(positions[m, 1]), int(cluster_of[m])) for m in range(n)),
    )
    rows = []
    for a in range(n):
        for b in range(a + 1, n):
            if adjacency[a, b]:
                rows.append((a, b, int(bool(alive[a, b]))))
    _write_lines(f"{prefix}_edges.csv", "node_a,node_b,alive", rows)


def write_outputs(result, out_dir) -> None:
    """Emit the artifact file set for a RunResult or SweepResult."""
    if isinstance(result, RunResult):
        result = SweepResult({result.config.policy: result}, result.records)
    os.makedirs(out_dir, exist_ok=True)
    runs = result.runs
    first = next(iter(runs.values()))
    cfg = first.config
    write_msd_csv(result.records, os.path.join(out_dir, "msd.csv"))

    rows = []
    for name, run in runs.items():
        detail = run.detail
        if not detail:
            continue
        truths = detail["truths"]
        est = detail["est_mean"]
        for j in range(truths.shape[0]):
            for i in range(truths.shape[1]):
                e = est[j, i] if i < est.shape[1] else (math.nan, math.nan)
                rows.append(
                    (j, i + 1, float(truths[j, i, 0]), float(truths[j, i, 1]),
                     name, float(e[0]), float(e[1]))
                )
    _write_lines(
        os.path.join(out_dir, "trajectory.csv"),
        "iteration,target_id,x,y,policy,est_x,est_y",
        rows,
    )

    topo_policy = "adaptive" if "adaptive" in runs else next(iter(runs))
    detail = runs[topo_policy].detail
    if detail:
        adj0 = detail["adjacency_initial"]
        _write_topology(
            os.path.join(out_dir, "topology_initial"),
            detail["positions"], detail["cluster_of"], adj0, adj0,
        )
        _write_topology(
            os.path.join(out_dir, "topology_final"),
            detail["positions"], detail["cluster_of"], adj0, detail["adjacency_final"],
        )

    for name, run in runs.items():
        snaps = run.detail.get("snapshots") or []
        if not snaps:
            continue
        rows = []
        for iteration, c in snaps:
            nz = np.argwhere(c != 0.0)
            rows.extend(
                (iteration, int(nn), int(mm), float(c[nn, mm])) for nn, mm in nz
            )
        _write_lines(
            os.path.join(out_dir, f"weights_{name}.csv"),
            "iteration,n,m,weight",
            rows,
        )

    meta = {
        "artifact_version": __version__,
        "seed": cfg.seed,
        "config": {
            **{k: v for k, v in dataclasses.asdict(cfg).items()},
            "angles": list(cfg.angles),
        },
        "policies": list(runs),
        "topology_final_policy": topo_policy if detail else None,
        "head_radius": first.head_radius,
        "convergence_iteration": {
            name: list(run.convergence) for name, run in runs.items()
        },
        "recovery": {
            name: {
                "mean": float(run.recovery_scores.mean()),
                "perfect_trials": int((run.recovery_scores == 1.0).sum()),
                "n_trials": int(run.recovery_scores.shape[0]),
            }
            for name, run in runs.items()
        },
        "msd_normalization": "per-cluster mean over member nodes, then over trials",
    }
    with open(os.path.join(out_dir, "run_meta.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
