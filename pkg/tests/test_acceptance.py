"""Acceptance gate: every release-blocking behavior, one test per criterion.

Each test prints a single PASS line with its measured quantities, so a
verbose run reads as a checklist.  The two experiment-scale criteria (the
similarity sweep and the multi-task regret comparison) run the full
desk-scale experiments from the committed configs and take several minutes.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from mtbandits.bandit import PolicyConfig, cumulative_regret, run_independent, run_parallel
from mtbandits.config import load_config
from mtbandits.envs import KnnSimulator, SyntheticBanditEnv, ingest_traces
from mtbandits.harness import run_bandit_experiment, run_sim_sweep
from mtbandits.kernels import KernelSpec
from mtbandits.krr import ModelState
from mtbandits.similarity import TaskDataset, cke_distance_sq, uniform_similarity
from mtbandits.theory import check_monotonicity, log_g, rank_bound_check

pytestmark = pytest.mark.acceptance

FIXTURES = Path(__file__).parent / "fixtures"
CONFIGS = Path(__file__).parent.parent / "configs"

GAUSS = KernelSpec("gaussian", lengthscale=0.5)
LINEAR = KernelSpec("linear")


def report(criterion: str, detail: str) -> None:
    print(f"\nPASS {criterion}: {detail}")


def test_criterion_1_similarity_sweep_reproduction():
    cfg = load_config(CONFIGS / "sim_sweep.toml").sweep
    assert (cfg.sim_ground, cfg.points, cfg.train_size) == (0.8, 100, 5)
    assert (cfg.lengthscale, cfg.noise_var, cfg.draws) == (0.5, 0.05, 100)
    t0 = time.perf_counter()
    res = run_sim_sweep(cfg)
    elapsed = time.perf_counter() - t0

    argmin = res.argmin_similarity
    assert 0.65 <= argmin <= 0.95, f"MSE minimum at sim_train={argmin}"

    # paired per-draw differences against the endpoints, in standard errors
    margins = {}
    for endpoint in (0.0, 1.0):
        diff = res.mse_at(endpoint) - res.mse_at(0.8)
        se = diff.std(ddof=1) / np.sqrt(diff.shape[0])
        margins[endpoint] = diff.mean() / se
        assert diff.mean() >= 3.0 * se, (
            f"MSE(0.8) beats MSE({endpoint}) by only {diff.mean() / se:.2f} SE"
        )
    assert elapsed <= 300, f"sweep took {elapsed:.0f}s (budget 300s)"
    report(
        "criterion 1 (similarity sweep)",
        f"argmin at {argmin:.2f}, margins {margins[0.0]:.1f} SE vs sim 0.0 and "
        f"{margins[1.0]:.1f} SE vs sim 1.0, runtime {elapsed:.0f}s",
    )


def test_criterion_2_multitask_regret_reduction():
    cfg = load_config(CONFIGS / "synthetic.toml")
    assert cfg.run.horizon == 1000 and len(cfg.run.seeds) == 10
    t0 = time.perf_counter()
    result = run_bandit_experiment(cfg, methods=["cke", "r2", "identity"])
    elapsed = time.perf_counter() - t0

    cke = result.method("cke").final_mean
    r2 = result.method("r2").final_mean
    ident = result.method("identity").final_mean
    ratio = cke / ident
    assert ratio <= 0.60, f"CKE/identity regret ratio {ratio:.3f} exceeds 0.60"
    assert r2 < ident, f"R2 policy ({r2:.1f}) does not beat the baseline ({ident:.1f})"
    assert elapsed <= 600, f"experiment took {elapsed:.0f}s (budget 600s)"
    report(
        "criterion 2 (regret reduction)",
        f"cke {cke:.1f} vs identity {ident:.1f} (ratio {ratio:.3f} <= 0.60), "
        f"r2 {r2:.1f} < identity, runtime {elapsed:.0f}s",
    )


def test_criterion_3_identity_equivalence_exact():
    env = SyntheticBanditEnv()
    cfg = PolicyConfig(kx=GAUSS, similarity=np.eye(5), beta=1.0, lam=1.0)
    joint = run_parallel(env, cfg, horizon=200, num_tasks=5, seed=17)
    indep = run_independent(env, cfg, horizon=200, num_tasks=5, seed=17)
    joint_arms = [(lg.time, lg.task, lg.arm) for lg in joint]
    indep_arms = [(lg.time, lg.task, lg.arm) for lg in indep]
    assert joint_arms == indep_arms
    report(
        "criterion 3 (identity equivalence)",
        f"{len(joint_arms)} decisions identical across 5 tasks x 200 rounds",
    )


def test_criterion_4_schur_update_correctness():
    rng = np.random.default_rng(42)
    model = ModelState(GAUSS, uniform_similarity(3, 0.6), lam=1.0, refresh_every=10**9)
    for _ in range(300):
        model.append_batch(rng.integers(0, 3, 1), rng.standard_normal((1, 2)), rng.random(1))
    K = model.joint_kernel(
        model.history_tasks, model.history_contexts, model.history_tasks, model.history_contexts
    )
    K[np.diag_indices_from(K)] += model.lam_eff
    direct = np.linalg.inv(K)
    inv_err = np.abs(model.inverse - direct).max()
    assert inv_err <= 1e-6, f"inverse deviates by {inv_err:.2e}"

    q_tasks = rng.integers(0, 3, 20)
    q_X = rng.standard_normal((20, 2))
    means, widths = model.predict_batch(q_tasks, q_X)
    kvec = model.joint_kernel(q_tasks, q_X, model.history_tasks, model.history_contexts)
    o_means = kvec @ (direct @ model.history_rewards)
    o_w2 = np.diag(model.similarity)[q_tasks] * GAUSS.output_scale - np.einsum(
        "ij,ji->i", kvec, direct @ kvec.T
    )
    mean_err = np.abs(means - o_means).max()
    width_err = np.abs(widths - np.sqrt(np.maximum(o_w2, 0))).max()
    assert mean_err <= 1e-6 and width_err <= 1e-6
    report(
        "criterion 4 (incremental inverse)",
        f"after 300 appends: inverse {inv_err:.1e}, means {mean_err:.1e}, widths {width_err:.1e}",
    )


def test_criterion_5_embedding_oracle_equivalence():
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(100):
        nm, nn = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        lam = float(rng.uniform(0.05, 1.0))
        dm = TaskDataset(rng.standard_normal((nm, 1)), rng.standard_normal(nm))
        dn = TaskDataset(rng.standard_normal((nn, 1)), rng.standard_normal(nn))

        def operator(ds):
            Phi = ds.x.ravel()[None, :]
            Psi = ds.y[None, :]
            reg = lam * len(ds) + 1e-8
            return Psi @ np.linalg.solve(Phi.T @ Phi + reg * np.eye(len(ds)), Phi.T)

        want = float(np.sum((operator(dm) - operator(dn)) ** 2))
        got = cke_distance_sq(dm, dn, LINEAR, LINEAR, lam=lam)
        worst = max(worst, abs(got - want))
        assert abs(got - want) <= 1e-8
    report("criterion 5 (embedding oracle)", f"100 instances, worst deviation {worst:.1e}")


def test_criterion_6_rank_bound():
    rng = np.random.default_rng(3)
    T = 20
    slack = np.inf
    for trial in range(50):
        rank = int(rng.integers(1, 4))
        W = np.abs(rng.standard_normal((3, rank))) + 0.1
        K = W @ W.T
        d = 1.0 / np.sqrt(np.diag(K))
        S = K * np.outer(d, d)
        X = rng.standard_normal((T + 1, 2))
        tasks = np.arange(T + 1) % 3
        out = rank_bound_check(tasks, X, S, LINEAR, lam=1.0)
        assert out["satisfied"], out
        slack = min(slack, out["bound"] - out["log_g"])
    report("criterion 6 (rank bound)", f"50 instances, zero violations, min slack {slack:.2f}")


def test_criterion_7_similarity_monotonicity():
    rng = np.random.default_rng(11)
    mu_grid = list(np.round(np.arange(0.0, 1.0 + 1e-12, 0.1), 10))
    for trial in range(20):
        n = int(rng.integers(6, 16))
        X = rng.standard_normal((n, 2))
        tasks = np.arange(n) % 3
        rep = check_monotonicity(mu_grid, tasks, X, GAUSS, lam=1.0)
        assert rep.monotone, rep.violations
    report("criterion 7 (monotone in similarity)", "20 context sets x 11 grid points, zero violations")


def test_criterion_8_trace_pipeline():
    res = ingest_traces(FIXTURES / "table1.csv")
    rewards = [r.reward for r in res.records]
    want = [0.9078014184, 0.8255813953, 0.8406884082, 0.6258613608]
    assert len(res.records) == 4
    assert rewards == pytest.approx(want, abs=1e-12)
    sim = KnnSimulator(res.records, k=1)
    for rec in res.records:
        assert sim.reward(rec.state, rec.action) == rec.reward
    report(
        "criterion 8 (trace pipeline)",
        "4 records with exact rewards; k=1 self-queries return own rewards",
    )


def test_criterion_9_trace_demo_smoke():
    # the real-data reductions depend on an unpublished fleet trace; this
    # demo checks the multi-task policy does not lose to the independent
    # baseline on the committed fixture trace at matched horizon
    cfg = load_config(CONFIGS / "trace_demo.toml")
    assert len(cfg.run.seeds) == 5
    result = run_bandit_experiment(cfg, methods=["cke", "identity"])
    cke = result.method("cke").final_mean
    ident = result.method("identity").final_mean
    assert cke <= ident, f"multi-task regret {cke:.2f} exceeds baseline {ident:.2f}"
    report(
        "criterion 9 (trace demo smoke)",
        f"fixture trace, 5-seed mean: cke {cke:.2f} <= identity {ident:.2f}",
    )
