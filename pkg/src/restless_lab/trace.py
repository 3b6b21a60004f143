"""Per-step reward traces and regret checkpoints."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def checkpoints(T: int) -> list[int]:
    """Powers of two up to ``T`` plus ``T`` itself."""
    out = []
    t = 1
    while t <= T:
        out.append(t)
        t *= 2
    if not out or out[-1] != T:
        out.append(T)
    return out


@dataclass
class RegretTrace:
    """Cumulative reward after every step; regret once ``rho_star`` is attached."""

    cum_reward: np.ndarray
    rho_star: float | None = None
    rho_star_tolerance: float = 0.0

    @classmethod
    def from_rewards(cls, rewards) -> "RegretTrace":
        return cls(np.cumsum(np.asarray(rewards, dtype=float)))

    @property
    def horizon(self) -> int:
        return int(self.cum_reward.shape[0])

    def with_oracle(self, rho_star: float, tolerance: float = 0.0) -> "RegretTrace":
        return RegretTrace(self.cum_reward, float(rho_star), float(tolerance))

    def regret_at(self, t: int) -> float:
        if self.rho_star is None:
            raise ValueError("regret needs rho_star; attach it with with_oracle()")
        return t * self.rho_star - float(self.cum_reward[t - 1])

    def rows(self) -> list[tuple[int, float, float]]:
        """``(t, cumulative reward, regret)`` at every checkpoint."""
        return [(t, float(self.cum_reward[t - 1]), self.regret_at(t)) for t in checkpoints(self.horizon)]

    @property
    def final_regret(self) -> float:
        return self.regret_at(self.horizon)

    def concat(self, other: "RegretTrace") -> "RegretTrace":
        offset = self.cum_reward[-1] if self.horizon else 0.0
        return RegretTrace(np.concatenate([self.cum_reward, other.cum_reward + offset]), self.rho_star, self.rho_star_tolerance)
