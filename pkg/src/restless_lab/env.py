"""Restless bandit simulator.

Every arm is a hidden Markov chain that moves on every step whatever the
learner does.  Pulling an arm reveals its current state and pays a reward
with mean ``rewards[state]``; only then do all chains transition.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .chain import TransitionMatrix, as_transition_matrix

NOISE_TAGS = ("bernoulli", "deterministic")
_CHUNK = 4096


@dataclass(frozen=True)
class ArmSpec:
    """One arm: a transition matrix over its states plus mean rewards."""

    P: TransitionMatrix
    rewards: np.ndarray
    states: tuple = ()
    noise: str = "bernoulli"
    period: int | None = None

    def __post_init__(self):
        P = as_transition_matrix(self.P)
        object.__setattr__(self, "P", P)
        r = np.array(self.rewards, dtype=float).reshape(-1)
        if r.shape[0] != P.n_states:
            raise ValueError(f"{r.shape[0]} rewards for {P.n_states} states")
        if np.any(r < 0.0) or np.any(r > 1.0):
            raise ValueError(f"mean rewards must lie in [0, 1], got {r.tolist()}")
        r.setflags(write=False)
        object.__setattr__(self, "rewards", r)
        if not self.states:
            object.__setattr__(self, "states", tuple(range(P.n_states)))
        elif len(self.states) != P.n_states:
            raise ValueError("state labels do not match the transition matrix")
        if self.noise not in NOISE_TAGS:
            raise ValueError(f"unknown reward noise {self.noise!r}")

    @property
    def n_states(self) -> int:
        return self.P.n_states

    @property
    def stationary_mean(self) -> float:
        return float(self.P.stationary @ self.rewards)

    @classmethod
    def iid(cls, mean: float, noise: str = "bernoulli") -> "ArmSpec":
        """An i.i.d. arm, encoded as a single-state chain."""
        return cls(P=TransitionMatrix([[1.0]]), rewards=[mean], noise=noise)


@dataclass(frozen=True)
class BanditInstance:
    arms: tuple
    initial: tuple = field(default=())

    def __post_init__(self):
        arms = tuple(self.arms)
        if not arms:
            raise ValueError("a bandit needs at least one arm")
        object.__setattr__(self, "arms", arms)
        if not self.initial:
            init = tuple(arm.P.stationary for arm in arms)
        else:
            if len(self.initial) != len(arms):
                raise ValueError("one initial distribution per arm is required")
            init = []
            for arm, d in zip(arms, self.initial):
                d = np.array(d, dtype=float)
                if d.shape != (arm.n_states,) or np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
                    raise ValueError(f"invalid initial distribution {d.tolist()}")
                init.append(d / d.sum())
            init = tuple(init)
        object.__setattr__(self, "initial", init)

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    @property
    def state_counts(self) -> tuple[int, ...]:
        return tuple(arm.n_states for arm in self.arms)


class Observation(NamedTuple):
    t: int
    arm: int
    state: int
    reward: float


class MetaObservation(NamedTuple):
    """Last observed state and steps elapsed since, per arm."""

    states: tuple
    gaps: tuple


class _UniformStream:
    """Seeded uniforms handed out one at a time, generated in chunks."""

    __slots__ = ("_rng", "_buf", "_pos")

    def __init__(self, seed_seq: np.random.SeedSequence):
        self._rng = np.random.default_rng(seed_seq)
        self._buf = self._rng.random(_CHUNK).tolist()
        self._pos = 0

    def next(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._rng.random(_CHUNK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def _draw(cum: Sequence[float], u: float) -> int:
    i = bisect_right(cum, u)
    return min(i, len(cum) - 1)


class RestlessBandit:
    """Stateful environment handle.  Use :func:`reset` to create one.

    Randomness comes from one master seed split into one stream per arm
    (hidden chain moves) and one reward stream, so the hidden trajectories do
    not depend on the actions taken.
    """

    def __init__(self, instance: BanditInstance, seed: int):
        self.instance = instance
        self.seed = seed
        root = np.random.SeedSequence(seed)
        K = instance.n_arms
        children = root.spawn(K + 2)
        init_rng = np.random.default_rng(children[0])
        self._arm_streams = [_UniformStream(children[1 + j]) for j in range(K)]
        self._reward_stream = _UniformStream(children[K + 1])
        self._cum = [np.cumsum(arm.P.matrix, axis=1).tolist() for arm in instance.arms]
        self._rewards = [arm.rewards.tolist() for arm in instance.arms]
        self._bernoulli = [arm.noise == "bernoulli" for arm in instance.arms]
        self.hidden = [
            int(init_rng.choice(arm.n_states, p=d)) for arm, d in zip(instance.arms, instance.initial)
        ]
        self.t = 1
        self._last_state: list[int | None] = [None] * K
        self._last_time: list[int | None] = [None] * K

    @property
    def n_arms(self) -> int:
        return self.instance.n_arms

    def step(self, arm: int) -> Observation:
        if not 0 <= arm < self.instance.n_arms:
            raise IndexError(f"arm index {arm} out of range for {self.instance.n_arms} arms")
        s = self.hidden[arm]
        mean = self._rewards[arm][s]
        u = self._reward_stream.next()
        reward = (1.0 if u < mean else 0.0) if self._bernoulli[arm] else mean
        obs = Observation(self.t, arm, s, reward)
        self._last_state[arm] = s
        self._last_time[arm] = self.t
        self._advance()
        return obs

    def _advance(self) -> None:
        hidden = self.hidden
        for j, stream in enumerate(self._arm_streams):
            hidden[j] = _draw(self._cum[j][hidden[j]], stream.next())
        self.t += 1

    def all_pulled(self) -> bool:
        return all(s is not None for s in self._last_state)

    def last_observation_summary(self) -> MetaObservation:
        """``(s_j, n_j)`` for every arm, ``n_j`` counted from the next decision."""
        if not self.all_pulled():
            missing = [j for j, s in enumerate(self._last_state) if s is None]
            raise RuntimeError(f"arms {missing} have not been pulled yet")
        return MetaObservation(
            states=tuple(self._last_state),
            gaps=tuple(self.t - lt for lt in self._last_time),
        )


def reset(instance: BanditInstance, seed: int) -> RestlessBandit:
    """Fresh environment handle; identical seeds reproduce identical runs."""
    return RestlessBandit(instance, seed)
