"""Sparse tabular MDP container shared by the builders and the solvers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Mdp:
    """Finite MDP with at most ``B`` successors per state-action pair.

    ``succ[s, a, k]`` is the k-th successor of ``(s, a)`` and ``prob[s, a, k]``
    its probability; padding entries carry probability 0.  ``initial`` is the
    start-state distribution used when a policy's gain depends on where it
    starts.
    """

    succ: np.ndarray
    prob: np.ndarray
    reward: np.ndarray
    initial: np.ndarray | None = None

    def __post_init__(self):
        succ = np.ascontiguousarray(self.succ, dtype=np.int64)
        prob = np.ascontiguousarray(self.prob, dtype=float)
        reward = np.ascontiguousarray(self.reward, dtype=float)
        if succ.shape != prob.shape or succ.ndim != 3 or reward.shape != succ.shape[:2]:
            raise ValueError("inconsistent MDP array shapes")
        S = succ.shape[0]
        if np.any(succ < 0) or np.any(succ >= S):
            raise ValueError("successor index out of range")
        sums = prob.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            s, a = np.argwhere(np.abs(sums - 1.0) > 1e-9)[0]
            raise ValueError(f"transition law of ({s}, {a}) sums to {sums[s, a]!r}")
        for arr in (succ, prob, reward):
            arr.setflags(write=False)
        object.__setattr__(self, "succ", succ)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "reward", reward)
        if self.initial is None:
            init = np.full(S, 1.0 / S)
        else:
            init = np.asarray(self.initial, dtype=float)
            if init.shape != (S,) or abs(init.sum() - 1.0) > 1e-9:
                raise ValueError("initial distribution must be a probability vector over states")
        init.setflags(write=False)
        object.__setattr__(self, "initial", init)

    @property
    def n_states(self) -> int:
        return self.succ.shape[0]

    @property
    def n_actions(self) -> int:
        return self.succ.shape[1]

    @property
    def support_width(self) -> int:
        return self.succ.shape[2]

    @classmethod
    def from_dense(cls, P, R, initial=None) -> "Mdp":
        """Build from ``P[s, a, s']`` and ``R[s, a]``."""
        P = np.asarray(P, dtype=float)
        S, A, _ = P.shape
        succ = np.broadcast_to(np.arange(S), (S, A, S))
        return cls(succ=succ, prob=P, reward=R, initial=initial)

    def dense(self) -> np.ndarray:
        """``P[s, a, s']`` as a dense array (small MDPs only)."""
        S, A, _ = self.succ.shape
        P = np.zeros((S, A, S))
        s_idx, a_idx = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
        for k in range(self.support_width):
            np.add.at(P, (s_idx, a_idx, self.succ[:, :, k]), self.prob[:, :, k])
        return P

    def policy_matrix(self, policy) -> tuple[np.ndarray, np.ndarray]:
        """Transition matrix and reward vector of a deterministic policy."""
        policy = np.asarray(policy, dtype=np.int64)
        S = self.n_states
        rows = np.arange(S)
        P = np.zeros((S, S))
        for k in range(self.support_width):
            np.add.at(P, (rows, self.succ[rows, policy, k]), self.prob[rows, policy, k])
        return P, self.reward[rows, policy]
