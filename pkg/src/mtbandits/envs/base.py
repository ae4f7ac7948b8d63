"""Round container and environment adapters shared by all environments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["EnvRound", "SingleTaskEnv"]


@dataclass(frozen=True)
class EnvRound:
    """One round's per-arm contexts and deterministic expected rewards."""

    contexts: np.ndarray  # (num_arms, context_dim)
    arm_rewards: np.ndarray  # (num_arms,)

    @property
    def best_arm(self) -> int:
        return int(np.argmax(self.arm_rewards))

    @property
    def best_expected(self) -> float:
        return float(self.arm_rewards.max())


class SingleTaskEnv:
    """View of one task of a multi-task environment as a 1-task environment.

    Rounds are delegated with the original task id, so a single-task run
    sees exactly the contexts and rewards that task experiences inside the
    joint run with the same seed.
    """

    def __init__(self, base, task: int) -> None:
        if not 0 <= task < base.num_tasks:
            raise ValueError(f"task {task} outside 0..{base.num_tasks - 1}")
        self.base = base
        self.task = task
        self.num_tasks = 1
        self.num_arms = base.num_arms

    def round(self, seed: int, t: int, task: int) -> EnvRound:
        if task != 0:
            raise ValueError("a SingleTaskEnv only has task 0")
        return self.base.round(seed, t, self.task)
