import numpy as np
import pytest

from mtbandits.config import ConfigError, ExperimentConfig, SweepSettings, TheorySettings
from mtbandits.envs import SyntheticBanditEnv
from mtbandits.harness import (
    WARMUP_SEED_OFFSET,
    collect_warmup_datasets,
    default_context_kernel,
    estimate_similarity,
    run_bandit_experiment,
    run_sim_sweep,
    run_theory_checks,
)
from mtbandits.kernels import KernelSpec
from mtbandits.krr import fit_predict_batch
from mtbandits.similarity import save_similarity_csv, uniform_similarity


# ---------------------------------------------------------------- sim sweep


@pytest.fixture(scope="module")
def small_sweep():
    cfg = SweepSettings(points=40, train_size=5, draws=12, grid_step=0.1, seed=5)
    return cfg, run_sim_sweep(cfg)


def test_sweep_zero_similarity_equals_independent_ridge(small_sweep):
    cfg, res = small_sweep
    from mtbandits.envs import GpRegressionConfig, GpTaskSampler

    sampler = GpTaskSampler(
        GpRegressionConfig(
            tasks=cfg.tasks, points=cfg.points, sim_ground=cfg.sim_ground,
            lengthscale=cfg.lengthscale, noise_var=cfg.noise_var,
            train_size=cfg.train_size, seed=cfg.seed,
        )
    )
    kx = KernelSpec("gaussian", lengthscale=cfg.lengthscale)
    want = []
    for draw in range(res.mse.shape[0]):
        train, test = sampler.sample(draw)
        errs = []
        for tr, te in zip(train, test):
            preds = fit_predict_batch(tr.x, tr.y, te.x, kx, lam=cfg.noise_var)
            errs.append(np.mean((preds - te.y) ** 2))
        want.append(np.mean(errs))
    got = res.mse[:, 0]  # grid point 0.0
    assert np.allclose(got, want, atol=1e-8)


def test_sweep_full_similarity_equals_pooled_ridge(small_sweep):
    cfg, res = small_sweep
    from mtbandits.envs import GpRegressionConfig, GpTaskSampler

    sampler = GpTaskSampler(
        GpRegressionConfig(
            tasks=cfg.tasks, points=cfg.points, sim_ground=cfg.sim_ground,
            lengthscale=cfg.lengthscale, noise_var=cfg.noise_var,
            train_size=cfg.train_size, seed=cfg.seed,
        )
    )
    kx = KernelSpec("gaussian", lengthscale=cfg.lengthscale)
    want = []
    for draw in range(res.mse.shape[0]):
        train, test = sampler.sample(draw)
        pool_x = np.vstack([tr.x for tr in train])
        pool_y = np.concatenate([tr.y for tr in train])
        errs = []
        for te in test:
            preds = fit_predict_batch(pool_x, pool_y, te.x, kx, lam=cfg.noise_var)
            errs.append(np.mean((preds - te.y) ** 2))
        want.append(np.mean(errs))
    got = res.mse[:, -1]  # grid point 1.0
    assert np.allclose(got, want, atol=1e-8)


def test_sweep_frame_columns(small_sweep):
    _, res = small_sweep
    frame = res.to_frame()
    assert list(frame.columns) == ["sim_train", "mean_mse", "se_mse"]
    assert len(frame) == 11
    assert 0.0 <= res.argmin_similarity <= 1.0


def test_sweep_zero_noise_requires_explicit_lam():
    with pytest.raises(ConfigError):
        run_sim_sweep(SweepSettings(noise_var=0.0, draws=2))


# ---------------------------------------------------------------- warmup + similarity


def test_warmup_is_deterministic_and_separated():
    env = SyntheticBanditEnv()
    a = collect_warmup_datasets(env, 3, 10, 4 + WARMUP_SEED_OFFSET)
    b = collect_warmup_datasets(env, 3, 10, 4 + WARMUP_SEED_OFFSET)
    assert all(np.array_equal(x.x, y.x) for x, y in zip(a, b))
    assert len(a) == 3 and len(a[0]) == 10
    c = collect_warmup_datasets(env, 3, 10, 5 + WARMUP_SEED_OFFSET)
    assert not np.array_equal(a[0].y, c[0].y)


def test_default_kernel_median_heuristic():
    env = SyntheticBanditEnv()
    warm = collect_warmup_datasets(env, 5, 30, 99)
    kx = default_context_kernel(warm)
    assert kx.family == "gaussian"
    assert 0.05 < kx.lengthscale < 2.0


def test_estimate_similarity_identity_and_file(tmp_path):
    from mtbandits.config import SimilaritySettings

    S_id = estimate_similarity("identity", 4, KernelSpec("linear"), None, SimilaritySettings())
    assert np.array_equal(S_id, np.eye(4))
    path = tmp_path / "kz.csv"
    save_similarity_csv(uniform_similarity(3, 0.5), path)
    settings = SimilaritySettings.from_dict({"method": "file", "file": str(path)})
    S = estimate_similarity("file", 3, KernelSpec("linear"), None, settings)
    assert S[0, 1] == 0.5
    with pytest.raises(ConfigError):
        estimate_similarity("file", 4, KernelSpec("linear"), None, settings)


# ---------------------------------------------------------------- experiment


@pytest.fixture(scope="module")
def tiny_experiment():
    cfg = ExperimentConfig.from_dict(
        {
            "kind": "synthetic-bandit",
            "similarity": {"method": "cke", "warmup_rounds": 25},
            "run": {"horizon": 12, "tasks": 3, "seeds": [0, 1]},
        }
    )
    return cfg, run_bandit_experiment(cfg)


def test_experiment_methods_and_shapes(tiny_experiment):
    cfg, result = tiny_experiment
    assert [m.method for m in result.methods] == ["cke", "identity"]
    for m in result.methods:
        assert m.curves.shape == (2, 12)
        assert np.all(np.diff(m.curves, axis=1) >= -1e-12)  # non-decreasing
        assert m.similarity.shape == (3, 3)


def test_experiment_summary_is_mean_of_seed_curves(tiny_experiment):
    _, result = tiny_experiment
    summary = result.summary_frame()
    for m in result.methods:
        got = summary[summary["method"] == m.method]["mean_cum_regret"].to_numpy()
        assert np.allclose(got, m.curves.mean(axis=0), atol=1e-12)


def test_experiment_long_frame_recomputes_curves(tiny_experiment):
    _, result = tiny_experiment
    long = result.long_frame()
    for m in result.methods:
        for si, seed in enumerate(result.seeds):
            sel = long[(long["method"] == m.method) & (long["seed"] == seed)]
            cum = sel["regret"].to_numpy().cumsum()
            # curve samples the cumulative regret at round boundaries
            assert np.allclose(cum[2::3], m.curves[si], atol=1e-12)


def test_experiment_identity_curve_matches_independent_runs(tiny_experiment):
    cfg, result = tiny_experiment
    from mtbandits.bandit import PolicyConfig, cumulative_regret, run_independent
    from mtbandits.envs import SyntheticBanditEnv

    idm = result.method("identity")
    env = SyntheticBanditEnv()
    warm = collect_warmup_datasets(env, 3, 25, cfg.run.seeds[0] + WARMUP_SEED_OFFSET)
    kx = default_context_kernel(warm)
    pol = PolicyConfig(kx=kx, similarity=np.eye(3), beta=1.0, lam=1.0)
    logs = run_independent(env, pol, 12, num_tasks=3, seed=0)
    cum = cumulative_regret(logs, [lg.best_expected for lg in logs])
    assert np.allclose(idm.curves[0], cum[2::3], atol=1e-12)


def test_experiment_rejects_bad_task_count():
    cfg = ExperimentConfig.from_dict(
        {"kind": "synthetic-bandit", "run": {"horizon": 3, "tasks": 7, "seeds": [0]}}
    )
    with pytest.raises(ConfigError):
        run_bandit_experiment(cfg)


# ---------------------------------------------------------------- theory checks


def test_theory_checks_report():
    report = run_theory_checks(TheorySettings(instances=5, mu_sets=3, contexts=10, seed=1))
    assert report["rank_bound_all_satisfied"]
    assert report["monotone_all"]
    assert len(report["rank_checks"]) == 5
    assert len(report["monotonicity"]) == 3
