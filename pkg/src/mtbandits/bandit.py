"""Arm-selection policies over the multi-task kernel regressor.

``run_parallel`` serves every task each round with the round-start model
and appends all observations at the round boundary; ``run_sequential``
serves one task per round and updates immediately.  ``run_super`` is the
staged-elimination variant used for the theory checks: it restricts the
model to mutually exclusive history subsets so each stage's confidence
intervals are computed from rewards its own selections never influenced.

Ties always break toward the lowest arm index, so runs replay exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve
from threadpoolctl import threadpool_limits

from .envs.base import EnvRound, SingleTaskEnv
from .kernels import KernelSpec
from .krr import CholeskyModel, ModelState, _validate_similarity

__all__ = [
    "PolicyConfig",
    "RoundLog",
    "select_arm",
    "run_parallel",
    "run_sequential",
    "run_independent",
    "run_super",
    "cumulative_regret",
    "logs_to_frame",
    "save_logs_csv",
]

ENGINES = ("inverse", "cholesky")


@dataclass(frozen=True)
class PolicyConfig:
    """Hyperparameters of the UCB policy: ucb = mean + beta * width."""

    kx: KernelSpec
    similarity: np.ndarray
    beta: float = 1.0
    lam: float = 1.0
    refresh_every: int = 512
    engine: str = "inverse"

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}, expected one of {ENGINES}")
        object.__setattr__(self, "similarity", _validate_similarity(self.similarity))

    @property
    def num_tasks(self) -> int:
        return self.similarity.shape[0]

    def make_model(self) -> ModelState | CholeskyModel:
        if self.engine == "cholesky":
            return CholeskyModel(self.kx, self.similarity, lam=self.lam)
        return ModelState(self.kx, self.similarity, lam=self.lam, refresh_every=self.refresh_every)

    def restrict_to_task(self) -> "PolicyConfig":
        """Single-task version of this config (unit similarity)."""
        return PolicyConfig(
            kx=self.kx,
            similarity=np.eye(1),
            beta=self.beta,
            lam=self.lam,
            refresh_every=self.refresh_every,
            engine=self.engine,
        )


@dataclass(frozen=True)
class RoundLog:
    """Audit record of one decision."""

    time: int
    task: int
    arm: int
    reward: float
    expected_reward: float
    best_expected: float
    ucb_values: np.ndarray
    width_values: np.ndarray
    stage: int | None = None
    recorded_set: int | None = None  # elimination-stage set this round's time joined

    def __post_init__(self) -> None:
        ucbs = np.asarray(self.ucb_values, dtype=np.float64)
        if self.arm != int(np.argmax(ucbs)) and self.stage is None:
            raise ValueError(
                f"chosen arm {self.arm} does not attain the maximum recorded ucb "
                f"(argmax is {int(np.argmax(ucbs))})"
            )

    @property
    def regret(self) -> float:
        return self.best_expected - self.expected_reward

    @property
    def width_chosen(self) -> float:
        return float(np.asarray(self.width_values)[self.arm])


def select_arm(
    model: ModelState | CholeskyModel,
    cfg: PolicyConfig,
    task: int,
    contexts: np.ndarray,
) -> tuple[int, np.ndarray, np.ndarray]:
    """Pick argmax of mean + beta * width; lowest index wins ties."""
    contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if contexts.shape[0] == 0:
        raise ValueError("select_arm needs at least one arm context")
    tasks = np.full(contexts.shape[0], task, dtype=np.int64)
    means, widths = model.predict_batch(tasks, contexts)
    ucbs = means + cfg.beta * widths
    return int(np.argmax(ucbs)), ucbs, widths


def _check_run_args(env, cfg: PolicyConfig, horizon: int, num_tasks: int | None) -> int:
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    M = env.num_tasks if num_tasks is None else int(num_tasks)
    if not 1 <= M <= env.num_tasks:
        raise ValueError(f"num_tasks must be in 1..{env.num_tasks}, got {M}")
    if cfg.num_tasks != M:
        raise ValueError(
            f"similarity matrix covers {cfg.num_tasks} tasks but the run uses {M}"
        )
    return M


def run_parallel(
    env,
    cfg: PolicyConfig,
    horizon: int,
    num_tasks: int | None = None,
    seed: int = 0,
) -> list[RoundLog]:
    """All tasks decided per round from the round-start model, then one batch append."""
    M = _check_run_args(env, cfg, horizon, num_tasks)
    model = cfg.make_model()
    N = env.num_arms
    logs: list[RoundLog] = []
    # per-round linear algebra is thin; a single BLAS thread avoids paying
    # worker wake-up latency on every call
    with threadpool_limits(limits=1):
        for t in range(1, horizon + 1):
            rounds = []
            for m in range(M):
                try:
                    rounds.append(env.round(seed, t, m))
                except Exception as exc:
                    raise RuntimeError(f"environment failed at round {t} (task {m})") from exc
            X = np.vstack([r.contexts for r in rounds])
            tasks_q = np.repeat(np.arange(M, dtype=np.int64), N)
            means, widths = model.predict_batch(tasks_q, X)
            chosen_rows = []
            rewards = []
            for m, rnd in enumerate(rounds):
                mu = means[m * N : (m + 1) * N]
                sig = widths[m * N : (m + 1) * N]
                ucbs = mu + cfg.beta * sig
                arm = int(np.argmax(ucbs))
                r = float(rnd.arm_rewards[arm])
                chosen_rows.append(m * N + arm)
                rewards.append(r)
                logs.append(
                    RoundLog(
                        time=t,
                        task=m,
                        arm=arm,
                        reward=r,
                        expected_reward=r,
                        best_expected=rnd.best_expected,
                        ucb_values=ucbs,
                        width_values=sig,
                    )
                )
            model.append_batch(np.arange(M, dtype=np.int64), X[chosen_rows], rewards)
    return logs


def run_sequential(
    env,
    cfg: PolicyConfig,
    horizon: int,
    seed: int = 0,
    schedule=None,
) -> list[RoundLog]:
    """One task per round (round-robin by default), updating after every round."""
    M = _check_run_args(env, cfg, horizon, cfg.num_tasks)
    if schedule is None:

        def schedule(t: int) -> int:
            return (t - 1) % M

    model = cfg.make_model()
    logs: list[RoundLog] = []
    with threadpool_limits(limits=1):
        for t in range(1, horizon + 1):
            m = int(schedule(t))
            if not 0 <= m < M:
                raise ValueError(f"schedule produced task {m} outside 0..{M - 1} at round {t}")
            try:
                rnd = env.round(seed, t, m)
            except Exception as exc:
                raise RuntimeError(f"environment failed at round {t} (task {m})") from exc
            arm, ucbs, sig = select_arm(model, cfg, m, rnd.contexts)
            r = float(rnd.arm_rewards[arm])
            logs.append(
                RoundLog(
                    time=t,
                    task=m,
                    arm=arm,
                    reward=r,
                    expected_reward=r,
                    best_expected=rnd.best_expected,
                    ucb_values=ucbs,
                    width_values=sig,
                )
            )
            model.append_batch([m], rnd.contexts[arm : arm + 1], [r])
    return logs


def run_independent(
    env,
    cfg: PolicyConfig,
    horizon: int,
    num_tasks: int | None = None,
    seed: int = 0,
) -> list[RoundLog]:
    """One isolated single-task run per task, merged into round order.

    With an identity similarity matrix this reproduces ``run_parallel``
    decision for decision, at a fraction of the cost, because a unit task
    factor zeroes every cross-task kernel entry.
    """
    M = _check_run_args(env, cfg, horizon, num_tasks)
    single = cfg.restrict_to_task()
    per_task: list[list[RoundLog]] = []
    for m in range(M):
        sub_logs = run_parallel(SingleTaskEnv(env, m), single, horizon, num_tasks=1, seed=seed)
        per_task.append(sub_logs)
    logs: list[RoundLog] = []
    for t in range(horizon):
        for m in range(M):
            lg = per_task[m][t]
            logs.append(
                RoundLog(
                    time=lg.time,
                    task=m,
                    arm=lg.arm,
                    reward=lg.reward,
                    expected_reward=lg.expected_reward,
                    best_expected=lg.best_expected,
                    ucb_values=lg.ucb_values,
                    width_values=lg.width_values,
                )
            )
    return logs


class _SubsetPredictor:
    """Mean/width computation against an arbitrary history subset (dense solves)."""

    def __init__(self, model_cfg: PolicyConfig) -> None:
        self.cfg = model_cfg
        self._scratch = ModelState(model_cfg.kx, model_cfg.similarity, lam=model_cfg.lam)

    def predict(
        self,
        hist_tasks: np.ndarray,
        hist_X: np.ndarray,
        hist_y: np.ndarray,
        task: int,
        contexts: np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray]:
        s = self._scratch
        tasks_q = np.full(contexts.shape[0], task, dtype=np.int64)
        kdiag = s._query_diag(tasks_q, contexts)
        if hist_X.shape[0] == 0:
            return np.zeros(contexts.shape[0]), np.sqrt(np.maximum(kdiag, 0.0))
        K = s.joint_kernel(hist_tasks, hist_X, hist_tasks, hist_X)
        K[np.diag_indices_from(K)] += s.lam_eff
        c = cho_factor(K, lower=True, check_finite=False)
        kvec = s.joint_kernel(tasks_q, contexts, hist_tasks, hist_X)  # (N, n)
        sol = cho_solve(c, kvec.T, check_finite=False)  # (n, N)
        means = sol.T @ hist_y
        w2 = kdiag - np.einsum("ij,ji->i", kvec, sol)
        return means, np.sqrt(np.maximum(w2, 0.0))


def run_super(
    env,
    cfg: PolicyConfig,
    horizon: int,
    seed: int = 0,
) -> list[RoundLog]:
    """Staged-elimination sequential run over mutually exclusive history subsets.

    Stage s keeps only arms whose ucb is within 2^(1-s) of the stage leader
    and trusts its intervals once every scaled width beta * sigma falls
    below 2^(-s); a round ends immediately when all widths drop below
    1/sqrt(horizon) (exploit) or some arm's width still exceeds the stage
    threshold (explore, recording the round into that stage's subset).
    """
    if horizon < 2:
        raise ValueError(f"run_super needs horizon >= 2, got {horizon}")
    M = cfg.num_tasks
    if M > env.num_tasks:
        raise ValueError(f"similarity covers {M} tasks but the environment has {env.num_tasks}")
    S = max(1, math.ceil(math.log2(horizon)))
    psi: list[set[int]] = [set() for _ in range(S + 2)]  # 1-based stages
    predictor = _SubsetPredictor(cfg)
    hist_tasks: list[int] = []
    hist_X: list[np.ndarray] = []
    hist_y: list[float] = []
    floor = 1.0 / math.sqrt(horizon)
    logs: list[RoundLog] = []

    for t in range(1, horizon + 1):
        m = (t - 1) % M
        rnd = env.round(seed, t, m)
        active = np.arange(env.num_arms)
        s = 1
        chosen: int | None = None
        recorded: int | None = None
        for _ in range(S + 1):
            subset = sorted(psi[s])
            sub_idx = [hist_idx for hist_idx in subset]
            ht = np.array([hist_tasks[i] for i in sub_idx], dtype=np.int64)
            hX = (
                np.stack([hist_X[i] for i in sub_idx])
                if sub_idx
                else np.empty((0, rnd.contexts.shape[1]))
            )
            hy = np.array([hist_y[i] for i in sub_idx])
            means, sigmas = predictor.predict(ht, hX, hy, m, rnd.contexts[active])
            ucbs = means + cfg.beta * sigmas
            w = cfg.beta * sigmas
            if np.all(w <= floor):
                chosen = int(active[int(np.argmax(ucbs))])
                break
            if np.all(w <= 2.0 ** (-s)):
                keep = ucbs >= ucbs.max() - 2.0 ** (1 - s)
                active = active[keep]
                s += 1
                if s > S:
                    raise RuntimeError(
                        f"elimination loop exceeded {S} stages at round {t}; "
                        "stage thresholds are inconsistent"
                    )
                continue
            wide = int(np.flatnonzero(w > 2.0 ** (-s))[0])
            chosen = int(active[wide])
            psi[s].add(t - 1)  # history index of the observation appended below
            recorded = s
            break
        if chosen is None:
            raise RuntimeError(f"no arm chosen within {S + 1} stage iterations at round {t}")

        # full-arm ucb/width bookkeeping for the log, from the last evaluated stage
        full_ucbs = np.full(env.num_arms, -np.inf)
        full_w = np.zeros(env.num_arms)
        full_ucbs[active] = ucbs
        full_w[active] = sigmas
        r = float(rnd.arm_rewards[chosen])
        logs.append(
            RoundLog(
                time=t,
                task=m,
                arm=chosen,
                reward=r,
                expected_reward=r,
                best_expected=rnd.best_expected,
                ucb_values=full_ucbs,
                width_values=full_w,
                stage=s,
                recorded_set=recorded,
            )
        )
        hist_tasks.append(m)
        hist_X.append(rnd.contexts[chosen])
        hist_y.append(r)
    return logs


def cumulative_regret(logs: list[RoundLog], oracle) -> np.ndarray:
    """Prefix sums of the per-decision gap between oracle and chosen expected reward."""
    oracle = np.asarray(oracle, dtype=np.float64).ravel()
    if oracle.shape[0] != len(logs):
        raise ValueError(f"{len(logs)} logs but {oracle.shape[0]} oracle values")
    gaps = oracle - np.array([lg.expected_reward for lg in logs])
    return np.cumsum(gaps)


def logs_to_frame(logs: list[RoundLog]) -> pd.DataFrame:
    """Flatten logs to the canonical CSV columns."""
    return pd.DataFrame(
        {
            "time": [lg.time for lg in logs],
            "task": [lg.task for lg in logs],
            "arm": [lg.arm for lg in logs],
            "reward": [lg.reward for lg in logs],
            "regret": [lg.regret for lg in logs],
            "width_chosen": [lg.width_chosen for lg in logs],
        }
    )


def save_logs_csv(logs: list[RoundLog], path) -> None:
    logs_to_frame(logs).to_csv(path, index=False)
