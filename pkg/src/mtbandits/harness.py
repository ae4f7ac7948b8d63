"""Experiment runner: similarity sweeps, bandit-vs-baseline comparisons,
theory checks, similarity estimation, and run manifests.

Every run is reproducible from its manifest: the manifest embeds the full
config echo and the library version, and all randomness flows through
counter-based streams derived from the config seeds.  Warmup rollouts (the
random-arm data used to estimate task similarity before a run) live in a
seed space offset from the evaluation rounds so the two never share draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .bandit import (
    PolicyConfig,
    RoundLog,
    cumulative_regret,
    logs_to_frame,
    run_independent,
    run_parallel,
    run_sequential,
)
from .config import ConfigError, ExperimentConfig, SweepSettings, TheorySettings
from .envs import GpRegressionConfig, GpTaskSampler, SyntheticBanditEnv, build_trace_env, ingest_traces
from .envs.trace import TraceSchema
from .kernels import KernelSpec, cross_gram, jitter_scale, median_heuristic
from .similarity import (
    TaskDataset,
    cke_similarity,
    identity_similarity,
    load_similarity_csv,
    r2_similarity,
    save_similarity_csv,
)
from .theory import check_monotonicity, rank_bound_check

__all__ = [
    "SweepResult",
    "run_sim_sweep",
    "collect_warmup_datasets",
    "default_context_kernel",
    "estimate_similarity",
    "MethodResult",
    "ExperimentResult",
    "build_env",
    "run_bandit_experiment",
    "run_theory_checks",
    "write_manifest",
    "write_experiment_outputs",
]

# keeps similarity-estimation rollouts out of the evaluation seed space
WARMUP_SEED_OFFSET = 1_000_003
_WARMUP_ARMS = 777


# --------------------------------------------------------------------- sweep


@dataclass
class SweepResult:
    """MSE of the coupled-task regressor across assumed training similarities."""

    grid: np.ndarray  # (G,)
    mse: np.ndarray  # (draws, G), per-draw MSE averaged over tasks

    @property
    def mean(self) -> np.ndarray:
        return self.mse.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        return self.mse.std(axis=0, ddof=1) / np.sqrt(self.mse.shape[0])

    @property
    def argmin_similarity(self) -> float:
        return float(self.grid[int(np.argmin(self.mean))])

    def mse_at(self, sim_value: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.grid - sim_value)))
        return self.mse[:, idx]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"sim_train": self.grid, "mean_mse": self.mean, "se_mse": self.stderr}
        )


def run_sim_sweep(cfg: SweepSettings) -> SweepResult:
    """Sweep the assumed similarity and measure multi-task regression MSE.

    For each target draw the coupled regressor is refit for every grid value
    of the assumed similarity; the ridge parameter defaults to the
    generator's noise variance (training matched to the generating process).
    """
    gp_cfg = GpRegressionConfig(
        tasks=cfg.tasks,
        points=cfg.points,
        sim_ground=cfg.sim_ground,
        lengthscale=cfg.lengthscale,
        noise_var=cfg.noise_var,
        train_size=cfg.train_size,
        seed=cfg.seed,
    )
    sampler = GpTaskSampler(gp_cfg)
    lam = cfg.noise_var if cfg.lam is None else cfg.lam
    if lam <= 0:
        raise ConfigError("sweep requires a positive ridge (set sweep.lam when noise_var = 0)")
    grid = np.round(np.arange(0.0, 1.0 + 1e-12, cfg.grid_step), 10)
    kx = sampler.kernel
    lam_total = lam + jitter_scale(kx)
    M = cfg.tasks

    mse = np.zeros((cfg.draws, grid.size))
    for draw in range(cfg.draws):
        train, test = sampler.sample(draw)
        tr_tasks = np.concatenate([np.full(len(ds), m) for m, ds in enumerate(train)])
        tr_X = np.vstack([ds.x for ds in train])
        tr_y = np.concatenate([ds.y for ds in train])
        KX_train = cross_gram(kx, tr_X, tr_X)
        crosses = [cross_gram(kx, ds.x, tr_X) for ds in test]
        for gi, s in enumerate(grid):
            S = np.where(np.equal.outer(tr_tasks, tr_tasks), 1.0, s)
            K = S * KX_train
            K[np.diag_indices_from(K)] += lam_total
            alpha = np.linalg.solve(K, tr_y)
            errs = []
            for m, ds in enumerate(test):
                factors = np.where(tr_tasks == m, 1.0, s)
                preds = (crosses[m] * factors) @ alpha
                errs.append(np.mean((preds - ds.y) ** 2))
            mse[draw, gi] = float(np.mean(errs))
    return SweepResult(grid=grid, mse=mse)


# ---------------------------------------------------------------- similarity


def collect_warmup_datasets(env, num_tasks: int, rounds: int, seed: int) -> list[TaskDataset]:
    """Random-arm rollouts per task, for similarity estimation before a run."""
    xs: list[list[np.ndarray]] = [[] for _ in range(num_tasks)]
    ys: list[list[float]] = [[] for _ in range(num_tasks)]
    for r in range(1, rounds + 1):
        for m in range(num_tasks):
            rnd = env.round(seed, r, m)
            arm = int(np.random.default_rng([seed, _WARMUP_ARMS, r, m]).integers(env.num_arms))
            xs[m].append(rnd.contexts[arm])
            ys[m].append(float(rnd.arm_rewards[arm]))
    return [TaskDataset(np.stack(xs[m]), np.array(ys[m])) for m in range(num_tasks)]


def default_context_kernel(datasets: list[TaskDataset]) -> KernelSpec:
    """Gaussian kernel with the median-heuristic lengthscale over pooled contexts."""
    pooled = np.vstack([ds.x for ds in datasets])
    if pooled.shape[0] > 2000:
        pooled = pooled[:: pooled.shape[0] // 2000 + 1]
    return KernelSpec("gaussian", lengthscale=median_heuristic(pooled))


def estimate_similarity(
    method: str,
    num_tasks: int,
    kx: KernelSpec,
    warmup: list[TaskDataset] | None,
    settings,
) -> np.ndarray:
    if method == "identity":
        return identity_similarity(num_tasks)
    if method == "file":
        S = load_similarity_csv(settings.file)
        if S.shape[0] != num_tasks:
            raise ConfigError(
                f"similarity file covers {S.shape[0]} tasks but the run uses {num_tasks}"
            )
        return S
    if warmup is None:
        raise ConfigError(f"similarity method {method!r} needs warmup data")
    if method == "cke":
        return cke_similarity(warmup, kx, lam=settings.cke_lam)
    if method == "r2":
        return r2_similarity(warmup, kx, lam=settings.r2_lam, floor=settings.r2_floor)
    raise ConfigError(f"unknown similarity method {method!r}")


# ---------------------------------------------------------------- experiment


@dataclass
class MethodResult:
    method: str
    similarity: np.ndarray
    curves: np.ndarray  # (num_seeds, horizon) cumulative pseudo-regret, all tasks summed
    frames: list[pd.DataFrame] = field(default_factory=list)  # per-seed round logs

    @property
    def final_mean(self) -> float:
        return float(self.curves[:, -1].mean())


@dataclass
class ExperimentResult:
    kind: str
    seeds: list[int]
    horizon: int
    methods: list[MethodResult]
    config_echo: dict

    def method(self, name: str) -> MethodResult:
        for m in self.methods:
            if m.method == name:
                return m
        raise KeyError(name)

    def summary_frame(self) -> pd.DataFrame:
        rows = []
        for m in self.methods:
            mean_curve = m.curves.mean(axis=0)
            rows.append(
                pd.DataFrame(
                    {"method": m.method, "time": np.arange(1, self.horizon + 1), "mean_cum_regret": mean_curve}
                )
            )
        return pd.concat(rows, ignore_index=True)

    def long_frame(self) -> pd.DataFrame:
        rows = []
        for m in self.methods:
            for seed, frame in zip(self.seeds, m.frames):
                f = frame.copy()
                f.insert(0, "seed", seed)
                f.insert(0, "method", m.method)
                rows.append(f)
        return pd.concat(rows, ignore_index=True)


def build_env(env_settings):
    if env_settings.name == "synthetic":
        return SyntheticBanditEnv()
    schema = TraceSchema.from_dict(env_settings.schema) if env_settings.schema else None
    result = ingest_traces(env_settings.path, schema)
    return build_trace_env(
        result.records,
        bs_ids=env_settings.bs_ids,
        k=env_settings.k,
        state_source=env_settings.state_source,
        holdout_fraction=env_settings.holdout_fraction,
    )


def _curve_from_logs(logs: list[RoundLog], num_tasks: int, horizon: int, mode: str) -> np.ndarray:
    cum = cumulative_regret(logs, [lg.best_expected for lg in logs])
    if mode == "parallel":
        return cum[num_tasks - 1 :: num_tasks]
    return cum


def run_bandit_experiment(cfg: ExperimentConfig, methods: list[str] | None = None) -> ExperimentResult:
    """Run the configured policy per seed and method; aggregate regret curves.

    The baseline list defaults to the configured similarity method plus the
    independent (identity-similarity) reference.  Warmup data is collected
    per seed in an offset seed space; the identity baseline in parallel mode
    runs as per-task independent models, which is decision-for-decision
    equivalent to the joint run and much cheaper.
    """
    env = build_env(cfg.env)
    M = cfg.run.tasks if cfg.run.tasks is not None else env.num_tasks
    if not 1 <= M <= env.num_tasks:
        raise ConfigError(f"run.tasks must be in 1..{env.num_tasks}, got {M}")
    if methods is None:
        methods = [cfg.similarity.method]
        if "identity" not in methods:
            methods.append("identity")

    needs_warmup = any(m in ("cke", "r2") for m in methods) or cfg.policy.kernel is None
    kernel_warmup = (
        collect_warmup_datasets(env, M, cfg.similarity.warmup_rounds, cfg.run.seeds[0] + WARMUP_SEED_OFFSET)
        if needs_warmup
        else None
    )
    kx = (
        KernelSpec.from_dict(cfg.policy.kernel)
        if cfg.policy.kernel
        else default_context_kernel(kernel_warmup)
    )

    results = {m: MethodResult(m, identity_similarity(M), np.zeros((len(cfg.run.seeds), cfg.run.horizon))) for m in methods}
    for si, seed in enumerate(cfg.run.seeds):
        warmup = None
        if any(m in ("cke", "r2") for m in methods):
            warmup = (
                kernel_warmup
                if seed == cfg.run.seeds[0]
                else collect_warmup_datasets(env, M, cfg.similarity.warmup_rounds, seed + WARMUP_SEED_OFFSET)
            )
        for method in methods:
            S = estimate_similarity(method, M, kx, warmup, cfg.similarity)
            pol = PolicyConfig(
                kx=kx,
                similarity=S,
                beta=cfg.policy.beta,
                lam=cfg.policy.lam,
                refresh_every=cfg.policy.refresh_every,
                engine=cfg.policy.engine,
            )
            try:
                if cfg.run.mode == "sequential":
                    logs = run_sequential(env, pol, cfg.run.horizon, seed=seed)
                elif method == "identity":
                    logs = run_independent(env, pol, cfg.run.horizon, num_tasks=M, seed=seed)
                else:
                    logs = run_parallel(env, pol, cfg.run.horizon, num_tasks=M, seed=seed)
            except Exception as exc:
                raise RuntimeError(f"run failed for method {method!r}, seed {seed}") from exc
            res = results[method]
            res.curves[si] = _curve_from_logs(logs, M, cfg.run.horizon, cfg.run.mode)
            res.frames.append(logs_to_frame(logs))
            if si == 0:
                res.similarity = S
    return ExperimentResult(
        kind=cfg.kind,
        seeds=list(cfg.run.seeds),
        horizon=cfg.run.horizon,
        methods=[results[m] for m in methods],
        config_echo=cfg.to_dict(),
    )


# ---------------------------------------------------------------- theory runs


def run_theory_checks(cfg: TheorySettings) -> dict:
    """Random-instance verification of the determinant-ratio bounds."""
    rng = np.random.default_rng(cfg.seed)
    kx_lin = KernelSpec("linear")
    kx_gauss = KernelSpec("gaussian", lengthscale=0.5)

    rank_checks = []
    for _ in range(cfg.instances):
        rank = int(rng.integers(1, cfg.tasks + 1))
        W = np.abs(rng.standard_normal((cfg.tasks, rank))) + 0.1
        K = W @ W.T
        d = 1.0 / np.sqrt(np.diag(K))
        S = K * np.outer(d, d)
        X = rng.standard_normal((cfg.contexts, 2))
        tasks = np.arange(cfg.contexts) % cfg.tasks
        rank_checks.append(rank_bound_check(tasks, X, S, kx_lin, lam=cfg.lam))

    mu_grid = list(np.round(np.arange(0.0, 1.0 + 1e-12, cfg.mu_step), 10))
    mono_reports = []
    for _ in range(cfg.mu_sets):
        X = rng.standard_normal((cfg.contexts, 2))
        tasks = np.arange(cfg.contexts) % cfg.tasks
        mono_reports.append(check_monotonicity(mu_grid, tasks, X, kx_gauss, lam=cfg.lam))

    return {
        "rank_checks": rank_checks,
        "rank_bound_all_satisfied": all(c["satisfied"] for c in rank_checks),
        "monotonicity": [r.to_dict() for r in mono_reports],
        "monotone_all": all(r.monotone for r in mono_reports),
        "mu_grid": mu_grid,
    }


# ---------------------------------------------------------------- outputs


def write_manifest(out_dir, kind: str, config_echo: dict, seeds, outputs: list[str]) -> Path:
    path = Path(out_dir) / "manifest.json"
    payload = {
        "kind": kind,
        "version": __version__,
        "seeds": list(seeds),
        "outputs": sorted(outputs),
        "config": config_echo,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_experiment_outputs(result: ExperimentResult, out_dir) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []
    result.long_frame().to_csv(out / "rounds.csv", index=False)
    outputs.append("rounds.csv")
    result.summary_frame().to_csv(out / "summary.csv", index=False)
    outputs.append("summary.csv")
    for m in result.methods:
        name = f"similarity_{m.method}.csv"
        save_similarity_csv(m.similarity, out / name)
        outputs.append(name)
    return outputs
