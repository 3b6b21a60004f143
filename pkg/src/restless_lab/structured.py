"""Meta-state MDP of a restless bandit and its colouring.

A meta-state records, for every arm, the last observed state and the number of
steps since that observation.  Gap counters saturate: once an arm's gap reaches
its cap the exact value is forgotten (except its residue modulo the arm's
period), which is what aggregating the far-past states amounts to.

Counter encoding per arm (cap ``c``, period ``m``, ``b = max(c, 2)``):

* values ``1 .. b-1`` are exact gaps;
* values ``b .. b+m-1`` stand for every gap ``n >= b`` with ``n = value (mod m)``.

``b >= 2`` keeps the freshly pulled arm identifiable even when ``c == 1``.  The
law used for a pull at counter value ``v`` is ``P^g`` with ``g = v`` below the
cap and otherwise the smallest ``g >= c`` congruent to ``v`` modulo ``m``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .env import ArmSpec, BanditInstance, MetaObservation
from .mdp import Mdp

DEFAULT_SIZE_LIMIT = 10**6


class MetaState(NamedTuple):
    states: tuple
    gaps: tuple


class ColorKey(NamedTuple):
    arm: int
    state: int
    gap_class: int
    residue: int


class StateSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ArmLayout:
    n_states: int
    cap: int
    period: int = 1
    color_cap: int | None = None

    def __post_init__(self):
        if self.cap < 1 or self.period < 1 or self.n_states < 1:
            raise ValueError(f"invalid arm layout {self}")
        if self.color_cap is None:
            object.__setattr__(self, "color_cap", self.cap)
        elif not 1 <= self.color_cap <= self.cap:
            raise ValueError("colour cap must lie in 1..cap")

    @property
    def block_start(self) -> int:
        return max(self.cap, 2)

    @property
    def n_counters(self) -> int:
        return self.block_start + self.period - 1

    def fold(self, n: int) -> int:
        b = self.block_start
        return n if n < b else b + (n - b) % self.period

    def law_gap(self, v: int) -> int:
        c = self.cap
        return v if v < c else c + (v - c) % self.period

    def increment(self, v: int) -> int:
        return self.fold(v + 1)

    def color_key(self, arm: int, state: int, v: int) -> ColorKey:
        residue = v % self.period if self.period > 1 else 0
        return ColorKey(arm, state, min(v, self.color_cap), residue)

    @property
    def n_color_classes(self) -> int:
        # distinct (gap_class, residue) pairs reachable by counters
        return len({self.color_key(0, 0, v)[2:] for v in range(1, self.n_counters + 1)})


def _gap_vectors(layouts: Sequence[ArmLayout]) -> list[tuple]:
    """Valid counter vectors: one fresh arm, exact gaps pairwise distinct."""
    K = len(layouts)
    if K == 1:
        return [(1,)]
    out = []

    def rec(j, acc, used_exact):
        if j == K:
            if acc.count(1) == 1:
                out.append(tuple(acc))
            return
        lay = layouts[j]
        for v in range(1, lay.n_counters + 1):
            exact = v < lay.block_start
            if exact and v in used_exact:
                continue
            if v == 1 and 1 in acc:
                continue
            acc.append(v)
            if exact:
                used_exact.add(v)
            rec(j + 1, acc, used_exact)
            acc.pop()
            if exact:
                used_exact.discard(v)

    rec(0, [], set())
    return out


def enumerate_states(
    state_counts: Sequence[int],
    caps: Sequence[int],
    periods: Sequence[int] | None = None,
    *,
    size_limit: int = DEFAULT_SIZE_LIMIT,
) -> list[MetaState]:
    """All valid meta-states in canonical (lexicographic) order."""
    periods = periods or [1] * len(state_counts)
    layouts = [ArmLayout(n, c, m) for n, c, m in zip(state_counts, caps, periods)]
    return _enumerate(layouts, size_limit)


def _enumerate(layouts: Sequence[ArmLayout], size_limit: int) -> list[MetaState]:
    product = math.prod(lay.n_states * lay.n_counters for lay in layouts)
    if product > size_limit:
        dims = " x ".join(f"{lay.n_states}*{lay.n_counters}" for lay in layouts)
        raise StateSpaceTooLarge(f"meta-state space bound {dims} = {product} exceeds limit {size_limit}")
    gaps = _gap_vectors(layouts)
    state_tuples = list(itertools.product(*[range(lay.n_states) for lay in layouts]))
    out = [MetaState(s, g) for g in gaps for s in state_tuples]
    out.sort(key=lambda x: tuple(itertools.chain.from_iterable(zip(x.states, x.gaps))))
    return out


@dataclass(frozen=True)
class MetaModel:
    """Arms plus counter layouts; knows the dynamics of single meta-states."""

    arms: tuple
    layouts: tuple

    @classmethod
    def build(cls, arms, caps, periods=None, color_caps=None) -> "MetaModel":
        arms = tuple(arms)
        periods = periods or [1] * len(arms)
        color_caps = color_caps or caps
        layouts = tuple(
            ArmLayout(arm.n_states, int(c), int(m), int(cc))
            for arm, c, m, cc in zip(arms, caps, periods, color_caps)
        )
        if len(layouts) != len(arms):
            raise ValueError("one cap per arm is required")
        return cls(arms, layouts)

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    def landing_law(self, x: MetaState, a: int) -> np.ndarray:
        lay = self.layouts[a]
        return self.arms[a].P.power(lay.law_gap(x.gaps[a]))[x.states[a]]

    def successor(self, x: MetaState, a: int, landing: int) -> MetaState:
        states = list(x.states)
        states[a] = landing
        gaps = [1 if j == a else lay.increment(g) for j, (lay, g) in enumerate(zip(self.layouts, x.gaps))]
        return MetaState(tuple(states), tuple(gaps))

    def transition_and_reward(self, x: MetaState, a: int) -> tuple[dict, float]:
        law = self.landing_law(x, a)
        dist: dict[MetaState, float] = {}
        for s2, p in enumerate(law):
            if p > 0.0:
                y = self.successor(x, a, s2)
                dist[y] = dist.get(y, 0.0) + float(p)
        return dist, float(law @ self.arms[a].rewards)

    def color_of(self, x: MetaState, a: int) -> ColorKey:
        return self.layouts[a].color_key(a, x.states[a], x.gaps[a])

    def fold_observation(self, obs: MetaObservation) -> MetaState:
        return MetaState(
            tuple(obs.states), tuple(lay.fold(n) for lay, n in zip(self.layouts, obs.gaps))
        )

    def n_colors(self) -> int:
        return sum(arm.n_states * lay.n_color_classes for arm, lay in zip(self.arms, self.layouts))


def lcm_period(n_states: int) -> int:
    """``lcm(1..n)``: a multiple of the period of every chain on ``n`` states."""
    return math.lcm(*range(1, n_states + 1))


def color_count(state_counts: Sequence[int], caps: Sequence[int], periods=None) -> int:
    """Number of colours ``sum_j |S_j| * (cap_j + m_j - 1)``."""
    periods = periods or [1] * len(state_counts)
    return sum(n * ArmLayout(n, c, m).n_color_classes for n, c, m in zip(state_counts, caps, periods))


def color_of(model: MetaModel, x: MetaState, a: int) -> ColorKey:
    return model.color_of(x, a)


def transition_and_reward(model: MetaModel, x: MetaState, a: int) -> tuple[dict, float]:
    return model.transition_and_reward(x, a)


@dataclass(frozen=True, eq=False)
class StructuredMdp(Mdp):
    """Meta-state MDP with colouring.

    ``color_id[x, a]`` indexes into ``colors``; the landing state of the pulled
    arm is the successor index ``k``, which is the translation frame shared by
    all pairs of a colour.
    """

    model: MetaModel | None = None
    states: tuple = ()
    color_id: np.ndarray | None = None
    colors: tuple = ()
    color_reference: tuple = ()
    epsilon: float = 0.0
    index: dict = field(default_factory=dict, repr=False)

    @property
    def support_bound(self) -> int:
        return max(arm.n_states for arm in self.model.arms)

    @property
    def n_colors(self) -> int:
        return len(self.colors)

    def state_index(self, x: MetaState) -> int:
        return self.index[x]

    def observation_index(self, obs: MetaObservation) -> int:
        return self.index[self.model.fold_observation(obs)]

    def color_of(self, x: int | MetaState, a: int) -> ColorKey:
        if not isinstance(x, (int, np.integer)):
            x = self.index[x]
        return self.colors[self.color_id[x, a]]

    def transition_and_reward(self, x: int | MetaState, a: int) -> tuple[dict, float]:
        if not isinstance(x, (int, np.integer)):
            x = self.index[x]
        dist: dict[MetaState, float] = {}
        for k in range(self.support_width):
            p = self.prob[x, a, k]
            if p > 0.0:
                y = self.states[self.succ[x, a, k]]
                dist[y] = dist.get(y, 0.0) + float(p)
        return dist, float(self.reward[x, a])


def build_structured_mdp(
    arms: Sequence[ArmSpec],
    caps: Sequence[int],
    *,
    periods: Sequence[int] | None = None,
    color_caps: Sequence[int] | None = None,
    epsilon: float = 0.0,
    initial: Sequence[np.ndarray] | None = None,
    size_limit: int = DEFAULT_SIZE_LIMIT,
    validate: bool = True,
) -> StructuredMdp:
    """Enumerate meta-states, dynamics and colours for the given caps.

    ``initial`` holds per-arm initial hidden-state laws; the MDP's start
    distribution is then the law of the meta-state right after pulling the
    arms once in index order.  Defaults to the stationary laws.
    """
    model = MetaModel.build(arms, caps, periods, color_caps)
    states = _enumerate(model.layouts, size_limit)
    index = {x: i for i, x in enumerate(states)}
    S, K = len(states), model.n_arms
    B = max(arm.n_states for arm in model.arms)
    succ = np.zeros((S, K, B), dtype=np.int64)
    prob = np.zeros((S, K, B))
    reward = np.zeros((S, K))
    keys = {}
    color_id = np.zeros((S, K), dtype=np.int64)
    raw_color = [[None] * K for _ in range(S)]
    for i, x in enumerate(states):
        for a in range(K):
            law = model.landing_law(x, a)
            n_a = model.arms[a].n_states
            for k in range(n_a):
                succ[i, a, k] = index[model.successor(x, a, k)]
            succ[i, a, n_a:] = succ[i, a, 0]
            prob[i, a, :n_a] = law
            reward[i, a] = law @ model.arms[a].rewards
            key = model.color_of(x, a)
            raw_color[i][a] = key
            keys.setdefault(key, (i, a))
    colors = tuple(sorted(keys))
    cid = {c: n for n, c in enumerate(colors)}
    for i in range(S):
        for a in range(K):
            color_id[i, a] = cid[raw_color[i][a]]
    reference = tuple(keys[c] for c in colors)  # first visit in canonical order is the smallest pair
    init = sweep_initial_distribution(model, states, index, initial)
    mdp = StructuredMdp(
        succ=succ, prob=prob, reward=reward, initial=init, model=model, states=tuple(states),
        color_id=color_id, colors=colors, color_reference=reference, epsilon=float(epsilon),
        index=index,
    )
    if validate and S * K <= 10**4:
        aggregated = all(lay.color_cap == lay.cap for lay in model.layouts)
        bound_p = epsilon if aggregated else 2 * epsilon
        dr, dp = color_soundness(mdp)
        if dr >= epsilon + 1e-9 and dr > 1e-12 or dp >= bound_p + 1e-9 and dp > 1e-12:
            raise ValueError(f"colouring is not {epsilon}-structured: reward gap {dr}, L1 gap {dp}")
    return mdp


def sweep_initial_distribution(model: MetaModel, states, index, initial=None) -> np.ndarray:
    K = model.n_arms
    laws = []
    for j, arm in enumerate(model.arms):
        d0 = arm.P.stationary if initial is None else np.asarray(initial[j], dtype=float)
        laws.append(d0 @ arm.P.power(j))
    gaps = tuple(lay.fold(K - j) for j, lay in enumerate(model.layouts))
    init = np.zeros(len(states))
    for s in itertools.product(*[range(arm.n_states) for arm in model.arms]):
        p = math.prod(laws[j][s[j]] for j in range(K))
        if p > 0:
            init[index[MetaState(tuple(s), gaps)]] += p
    return init / init.sum()


def build_for_instance(instance: BanditInstance, caps, **kw) -> StructuredMdp:
    kw.setdefault("initial", instance.initial)
    return build_structured_mdp(instance.arms, caps, **kw)


def color_soundness(mdp: StructuredMdp) -> tuple[float, float]:
    """Largest reward gap and translated-L1 gap between same-coloured pairs.

    Every pair is compared with its colour's reference pair through the
    landing-state translation.
    """
    ref = np.array(mdp.color_reference, dtype=np.int64)
    rx, ra = ref[mdp.color_id, 0], ref[mdp.color_id, 1]
    dr = np.abs(mdp.reward - mdp.reward[rx, ra])
    dp = np.abs(mdp.prob - mdp.prob[rx, ra]).sum(axis=2)
    return float(dr.max()), float(dp.max())


class Translation:
    """Bijection on meta-state indices aligning the successors of two same-coloured pairs."""

    def __init__(self, mapping: dict[int, int]):
        self._map = mapping

    def __call__(self, x: int) -> int:
        return self._map.get(x, x)

    def as_permutation(self, n: int) -> np.ndarray:
        perm = np.arange(n)
        for k, v in self._map.items():
            perm[k] = v
        return perm


def translate(mdp: StructuredMdp, pair: tuple[int, int], target: tuple[int, int]) -> Translation:
    """Map successors of ``pair`` to successors of ``target`` with the same landing state."""
    (x, a), (y, b) = pair, target
    if mdp.color_id[x, a] != mdp.color_id[y, b]:
        raise ValueError(f"pairs {pair} and {target} have different colours")
    n_land = mdp.model.arms[a].n_states
    src = [int(mdp.succ[x, a, k]) for k in range(n_land)]
    dst = [int(mdp.succ[y, b, k]) for k in range(n_land)]
    mapping = dict(zip(src, dst))
    # complete to a bijection: images not hit by any source get the sources without an image
    free_src = [d for d in dst if d not in mapping]
    free_dst = [s for s in src if s not in set(dst)]
    mapping.update(zip(free_src, free_dst))
    return Translation({k: v for k, v in mapping.items() if k != v})


def aggregate(mdp: StructuredMdp, representative: str = "cap") -> tuple[StructuredMdp, np.ndarray]:
    """Merge meta-states that agree on every colour, with identity translations.

    Returns the aggregated MDP and the map from old to new state indices.
    Outgoing dynamics of a merged state come from ``representative``:

    ``"cap"``      the law at the colour cap (the ``P^cap`` row),
    ``"largest"``  the member with the largest gaps,
    ``"average"``  the average over all members.

    Incoming probabilities are summed over the merged members.
    """
    model = mdp.model
    new_model = MetaModel(
        model.arms,
        tuple(ArmLayout(l.n_states, l.color_cap, l.period, l.color_cap) for l in model.layouts),
    )
    keys = [new_model.fold_observation(MetaObservation(x.states, _real_gaps(model, x))) for x in mdp.states]
    new_states = sorted(set(keys), key=lambda x: tuple(itertools.chain.from_iterable(zip(x.states, x.gaps))))
    new_index = {x: i for i, x in enumerate(new_states)}
    old_to_new = np.array([new_index[k] for k in keys], dtype=np.int64)
    for i, x in enumerate(mdp.states):
        for a in range(mdp.n_actions):
            if mdp.color_of(i, a) != new_model.color_of(keys[i], a):
                raise AssertionError("aggregated states disagree on colours")

    if representative == "cap":
        agg = build_structured_mdp(
            model.arms, [l.color_cap for l in model.layouts], periods=[l.period for l in model.layouts],
            epsilon=mdp.epsilon, validate=False,
        )
        if agg.states != tuple(new_states):
            raise AssertionError("aggregated state set does not match the capped enumeration")
        init = np.zeros(len(new_states))
        np.add.at(init, old_to_new, mdp.initial)
        agg = _replace_initial(agg, init)
        return agg, old_to_new

    S, K, B = len(new_states), mdp.n_actions, mdp.support_width
    succ = np.zeros((S, K, B), dtype=np.int64)
    prob = np.zeros((S, K, B))
    reward = np.zeros((S, K))
    members: dict[int, list[int]] = {}
    for i, n in enumerate(old_to_new):
        members.setdefault(int(n), []).append(i)
    for n, group in members.items():
        if representative == "largest":
            group = [max(group, key=lambda i: _real_gaps(model, mdp.states[i]))]
        elif representative != "average":
            raise ValueError(f"unknown representative {representative!r}")
        w = 1.0 / len(group)
        for a in range(K):
            n_land = model.arms[a].n_states
            for k in range(n_land):
                succ[n, a, k] = old_to_new[mdp.succ[group[0], a, k]]
                prob[n, a, k] = w * sum(mdp.prob[i, a, k] for i in group)
                # every member lands on the same aggregated successor for the same landing state
            succ[n, a, n_land:] = succ[n, a, 0]
            reward[n, a] = w * sum(mdp.reward[i, a] for i in group)
    init = np.zeros(S)
    np.add.at(init, old_to_new, mdp.initial)
    color_id = np.zeros((S, K), dtype=np.int64)
    cid = {c: j for j, c in enumerate(mdp.colors)}
    for n, x in enumerate(new_states):
        for a in range(K):
            color_id[n, a] = cid[new_model.color_of(x, a)]
    ref = tuple(
        min((int(old_to_new[i]), a) for i, a in zip(*np.nonzero(mdp.color_id == c))) for c in range(len(mdp.colors))
    )
    agg = StructuredMdp(
        succ=succ, prob=prob, reward=reward, initial=init, model=new_model, states=tuple(new_states),
        color_id=color_id, colors=mdp.colors, color_reference=ref, epsilon=mdp.epsilon, index=new_index,
    )
    return agg, old_to_new


def _real_gaps(model: MetaModel, x: MetaState) -> tuple:
    # smallest real gaps represented by the counters (counters below the block are exact)
    return tuple(x.gaps)


def _replace_initial(mdp: StructuredMdp, init: np.ndarray) -> StructuredMdp:
    return StructuredMdp(
        succ=mdp.succ, prob=mdp.prob, reward=mdp.reward, initial=init, model=mdp.model, states=mdp.states,
        color_id=mdp.color_id, colors=mdp.colors, color_reference=mdp.color_reference,
        epsilon=mdp.epsilon, index=mdp.index,
    )
