"""Trace-driven simulator: CSV ingestion and a k-nearest-neighbor reward model.

A trace row records one base station's observed state (five features), the
handover threshold it was configured with (integer dBm), and the resulting
fraction of users above the throughput target (a percentage, rescaled to
[0, 1] on ingestion).  The simulator answers reward queries for arbitrary
(state, threshold) pairs with the mean reward of the k nearest recorded
rows, after z-scoring every feature column so the raw dBm scale cannot
dominate the Euclidean distance.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .base import EnvRound

__all__ = [
    "ACTION_MIN",
    "ACTION_MAX",
    "THRESHOLDS",
    "TraceRecord",
    "TraceSchema",
    "IngestReport",
    "IngestResult",
    "ingest_traces",
    "KnnSimulator",
    "ReplayStateSource",
    "EmpiricalStateSource",
    "TraceBanditEnv",
    "build_trace_env",
]

logger = logging.getLogger(__name__)

ACTION_MIN, ACTION_MAX = -112, -84
THRESHOLDS = np.arange(ACTION_MIN, ACTION_MAX + 1)  # 29 arms
STATE_DIM = 5

_EMPIRICAL = 21  # stream tag for sampled state sources


@dataclass(frozen=True)
class TraceRecord:
    bs_id: str
    state: np.ndarray  # (5,)
    action: int
    reward: float  # in [0, 1]

    def features(self) -> np.ndarray:
        return np.concatenate([self.state, [float(self.action)]])


@dataclass(frozen=True)
class TraceSchema:
    """Column names mapping a trace CSV onto the record fields."""

    bs_id: str = "bs_id"
    state: tuple[str, ...] = (
        "active_users",
        "cqi",
        "small_packet_sdus",
        "small_packet_volume",
        "user_count",
    )
    action: str = "threshold"
    reward: str = "users_thp_ge_5mbps"

    def __post_init__(self) -> None:
        if len(self.state) != STATE_DIM:
            raise ValueError(f"expected {STATE_DIM} state columns, got {len(self.state)}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TraceSchema":
        kwargs = {}
        if "bs_id" in d:
            kwargs["bs_id"] = d["bs_id"]
        if "state" in d:
            kwargs["state"] = tuple(d["state"])
        if "action" in d:
            kwargs["action"] = d["action"]
        if "reward" in d:
            kwargs["reward"] = d["reward"]
        return cls(**kwargs)

    @property
    def columns(self) -> list[str]:
        return [self.bs_id, *self.state, self.action, self.reward]


@dataclass
class IngestReport:
    total_rows: int = 0
    accepted: int = 0
    rejected: int = 0
    reasons: Counter = field(default_factory=Counter)


@dataclass
class IngestResult:
    records: list[TraceRecord]
    report: IngestReport
    feature_mean: np.ndarray  # (6,) over state + action columns
    feature_std: np.ndarray  # (6,), zeros replaced with 1.0


def _feature_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std == 0.0] = 1.0
    return mean, std


def ingest_traces(path, schema: TraceSchema | None = None) -> IngestResult:
    """Parse a trace CSV, rejecting malformed rows and rescaling rewards.

    Rows with missing fields, non-integer or out-of-range thresholds, or
    rewards outside [0, 100] percent are dropped and counted in the report.
    An unreadable file, a missing schema column, or zero surviving rows is
    fatal.
    """
    schema = schema or TraceSchema()
    # station ids are labels, not numbers; a str dtype stops float upcasting
    df = pd.read_csv(path, dtype={schema.bs_id: str})
    missing = [c for c in schema.columns if c not in df.columns]
    if missing:
        raise ValueError(f"trace file {path} lacks schema columns {missing}")

    report = IngestReport(total_rows=len(df))
    records: list[TraceRecord] = []
    for _, row in df.iterrows():
        values = row[schema.columns]
        if values.isna().any():
            report.reasons["missing field"] += 1
            continue
        action_raw = float(row[schema.action])
        if action_raw != int(action_raw):
            report.reasons["non-integer action"] += 1
            continue
        action = int(action_raw)
        if not ACTION_MIN <= action <= ACTION_MAX:
            report.reasons["action out of range"] += 1
            continue
        reward_pct = float(row[schema.reward])
        if not 0.0 <= reward_pct <= 100.0:
            report.reasons["reward out of range"] += 1
            continue
        state = np.array([float(row[c]) for c in schema.state])
        if not np.all(np.isfinite(state)):
            report.reasons["non-finite state"] += 1
            continue
        records.append(
            TraceRecord(
                bs_id=str(row[schema.bs_id]),
                state=state,
                action=action,
                reward=reward_pct / 100.0,
            )
        )
    report.accepted = len(records)
    report.rejected = report.total_rows - report.accepted
    if report.rejected:
        logger.warning("rejected %d of %d trace rows: %s", report.rejected, report.total_rows, dict(report.reasons))
    if not records:
        raise ValueError(f"no valid rows in trace file {path}")
    features = np.stack([r.features() for r in records])
    mean, std = _feature_stats(features)
    return IngestResult(records=records, report=report, feature_mean=mean, feature_std=std)


class KnnSimulator:
    """Deterministic reward model: mean reward of the k nearest trace rows.

    Distances are Euclidean over z-scored (state, action) features; ties at
    the k-th distance resolve by record order, so shuffling tie-free data
    does not change any answer.
    """

    def __init__(self, records: Sequence[TraceRecord], k: int = 5) -> None:
        if not records:
            raise ValueError("KnnSimulator needs at least one record")
        if not 1 <= k <= len(records):
            raise ValueError(f"k must be in 1..{len(records)}, got {k}")
        self.records = list(records)
        self.k = int(k)
        features = np.stack([r.features() for r in self.records])
        self.feature_mean, self.feature_std = _feature_stats(features)
        self._scaled = (features - self.feature_mean) / self.feature_std
        self._rewards = np.array([r.reward for r in self.records])

    def normalize(self, state: np.ndarray, action: float) -> np.ndarray:
        q = np.concatenate([np.asarray(state, dtype=np.float64).ravel(), [float(action)]])
        if q.shape[0] != STATE_DIM + 1:
            raise ValueError(f"expected a {STATE_DIM}-dim state, got {q.shape[0] - 1}")
        return (q - self.feature_mean) / self.feature_std

    def reward(self, state: np.ndarray, action: float) -> float:
        return float(self.reward_vector(state, [action])[0])

    def reward_vector(self, state: np.ndarray, actions: Sequence[float]) -> np.ndarray:
        """Rewards for one state across many candidate actions."""
        queries = np.stack([self.normalize(state, a) for a in actions])
        # (A, n) squared distances; stable argsort keeps record order on ties
        d2 = ((queries[:, None, :] - self._scaled[None, :, :]) ** 2).sum(axis=2)
        idx = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        return self._rewards[idx].mean(axis=1)


class ReplayStateSource:
    """Cycle through each task's recorded states in file order."""

    def __init__(self, states_per_task: Sequence[np.ndarray]) -> None:
        if any(len(s) == 0 for s in states_per_task):
            raise ValueError("every task needs at least one replay state")
        self.states = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in states_per_task]

    def state(self, seed: int, t: int, task: int) -> np.ndarray:
        rows = self.states[task]
        return rows[(t - 1) % len(rows)]


class EmpiricalStateSource:
    """Sample uniformly from each task's recorded states, counter-seeded."""

    def __init__(self, states_per_task: Sequence[np.ndarray]) -> None:
        if any(len(s) == 0 for s in states_per_task):
            raise ValueError("every task needs at least one state to sample")
        self.states = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in states_per_task]

    def state(self, seed: int, t: int, task: int) -> np.ndarray:
        rows = self.states[task]
        i = np.random.default_rng([int(seed), _EMPIRICAL, int(t), int(task)]).integers(len(rows))
        return rows[i]


class TraceBanditEnv:
    """Bandit environment over the 29 handover thresholds.

    Contexts are the z-scored (state, threshold) features, matching the
    simulator's distance space; the per-arm reward vector is exact because
    the simulator is deterministic.
    """

    def __init__(self, sim: KnnSimulator, state_source, num_tasks: int) -> None:
        self.sim = sim
        self.state_source = state_source
        self.num_tasks = int(num_tasks)
        self.num_arms = len(THRESHOLDS)
        self.context_dim = STATE_DIM + 1

    def round(self, seed: int, t: int, task: int) -> EnvRound:
        if not 0 <= task < self.num_tasks:
            raise ValueError(f"task {task} outside 0..{self.num_tasks - 1}")
        state = self.state_source.state(seed, t, task)
        contexts = np.stack([self.sim.normalize(state, a) for a in THRESHOLDS])
        rewards = self.sim.reward_vector(state, THRESHOLDS)
        return EnvRound(contexts=contexts, arm_rewards=rewards)


def build_trace_env(
    records: Sequence[TraceRecord],
    bs_ids: Sequence[str] | None = None,
    k: int = 5,
    state_source: str = "replay",
    holdout_fraction: float = 0.25,
) -> TraceBanditEnv:
    """Assemble a trace environment: one task per selected base station.

    Each station's rows are split in file order; the leading portion feeds
    the k-NN simulator and the trailing ``holdout_fraction`` supplies the
    replayed states (all rows, when a station has too few to split).
    """
    if not 0.0 <= holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction must be in [0, 1), got {holdout_fraction}")
    by_bs: dict[str, list[TraceRecord]] = {}
    for r in records:
        by_bs.setdefault(r.bs_id, []).append(r)
    if bs_ids is None:
        bs_ids = sorted(by_bs)
    else:
        bs_ids = [str(b) for b in bs_ids]
        unknown = [b for b in bs_ids if b not in by_bs]
        if unknown:
            raise ValueError(f"trace has no rows for base stations {unknown}")

    sim_pool: list[TraceRecord] = []
    states_per_task: list[np.ndarray] = []
    for bs in bs_ids:
        rows = by_bs[bs]
        cut = int(round(len(rows) * (1.0 - holdout_fraction)))
        if cut == 0 or cut == len(rows):
            sim_pool.extend(rows)
            replay = rows
        else:
            sim_pool.extend(rows[:cut])
            replay = rows[cut:]
        states_per_task.append(np.stack([r.state for r in replay]))
    # stations outside the task set still inform the simulator
    for bs, rows in by_bs.items():
        if bs not in bs_ids:
            sim_pool.extend(rows)

    sim = KnnSimulator(sim_pool, k=min(k, len(sim_pool)))
    source_cls = {"replay": ReplayStateSource, "empirical": EmpiricalStateSource}.get(state_source)
    if source_cls is None:
        raise ValueError(f"unknown state source {state_source!r}; use 'replay' or 'empirical'")
    return TraceBanditEnv(sim, source_cls(states_per_task), num_tasks=len(bs_ids))
