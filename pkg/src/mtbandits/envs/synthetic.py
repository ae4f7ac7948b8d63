"""Projected-context synthetic bandit with five similar tasks.

A hidden parameter u is drawn uniformly from the unit square once per
round and shared by all tasks.  Arm a of task m (both 1-based in the
formulas below, 0-based in the API) sees the context

    x = [ u[0] * cos((pi/2) * (a/5 + m/10)),  u[1] * sin((pi/2) * (a/5)) ]

and pays the deterministic reward

    r = 1 - (u[0] - a/5 + 0.3 - m/10)^2

Tasks differ only through the m-dependent phase and offset, which makes
them similar but not identical.  Rewards never exceed 1; for extreme
(u, a, m) combinations they can dip below 0, which
:func:`reward_range_report` quantifies instead of clamping.
"""

from __future__ import annotations

import numpy as np

from .base import EnvRound

__all__ = ["SyntheticBanditEnv", "reward_range_report"]


class SyntheticBanditEnv:
    """Five tasks, five arms, two-dimensional contexts."""

    num_tasks = 5
    num_arms = 5
    context_dim = 2

    # 1-based arm values used by the generating formulas; API arm i is _ARMS[i]
    _ARMS = np.arange(1, 6, dtype=np.float64)

    def hidden_parameter(self, seed: int, t: int) -> np.ndarray:
        """The round's shared hidden parameter, a counter-based uniform draw."""
        return np.random.default_rng([int(seed), int(t)]).random(2)

    def round(self, seed: int, t: int, task: int) -> EnvRound:
        if not 0 <= task < self.num_tasks:
            raise ValueError(f"task {task} outside 0..{self.num_tasks - 1}")
        u = self.hidden_parameter(seed, t)
        a = self._ARMS
        m = float(task + 1)
        contexts = np.stack(
            [
                u[0] * np.cos((np.pi / 2.0) * (a / 5.0 + m / 10.0)),
                u[1] * np.sin((np.pi / 2.0) * (a / 5.0)),
            ],
            axis=1,
        )
        rewards = 1.0 - (u[0] - a / 5.0 + 0.3 - m / 10.0) ** 2
        return EnvRound(contexts=contexts, arm_rewards=rewards)


def reward_range_report(env: SyntheticBanditEnv, seed: int = 0, draws: int = 10_000) -> dict:
    """Empirical reward range over all (task, arm) combinations.

    The reward formula is bounded above by 1 but not below by 0; this
    reports how often it strays outside [0, 1] rather than clamping.
    """
    lo, hi = np.inf, -np.inf
    below = 0
    total = 0
    for t in range(1, draws + 1):
        for m in range(env.num_tasks):
            r = env.round(seed, t, m).arm_rewards
            lo = min(lo, float(r.min()))
            hi = max(hi, float(r.max()))
            below += int(np.sum(r < 0.0))
            total += r.size
    return {
        "min_reward": lo,
        "max_reward": hi,
        "below_zero_fraction": below / total,
        "draws": draws,
    }
