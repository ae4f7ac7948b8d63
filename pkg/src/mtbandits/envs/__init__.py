"""Evaluation environments: GP-sampled regression data, the projected-context
synthetic bandit, and the k-NN simulator driven by real trace CSVs.

Every bandit environment exposes::

    env.num_tasks, env.num_arms
    env.round(seed, t, task) -> EnvRound

Rounds are pure functions of (seed, t, task) so runs are reproducible and
independent of thread schedule.  Rewards are deterministic given the round,
which makes the per-arm reward vector double as the expected-reward oracle
for pseudo-regret.
"""

from .base import EnvRound, SingleTaskEnv
from .gp_tasks import GpRegressionConfig, GpTaskSampler, generate_gp_tasks
from .synthetic import SyntheticBanditEnv
from .trace import (
    THRESHOLDS,
    EmpiricalStateSource,
    IngestReport,
    IngestResult,
    KnnSimulator,
    ReplayStateSource,
    TraceBanditEnv,
    TraceRecord,
    TraceSchema,
    build_trace_env,
    ingest_traces,
)

__all__ = [
    "EnvRound",
    "SingleTaskEnv",
    "GpRegressionConfig",
    "GpTaskSampler",
    "generate_gp_tasks",
    "SyntheticBanditEnv",
    "IngestReport",
    "IngestResult",
    "KnnSimulator",
    "ReplayStateSource",
    "EmpiricalStateSource",
    "THRESHOLDS",
    "TraceBanditEnv",
    "TraceRecord",
    "TraceSchema",
    "build_trace_env",
    "ingest_traces",
]
