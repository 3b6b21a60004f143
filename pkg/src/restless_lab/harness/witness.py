"""Searches for meta-states that show index policies and myopic play are not optimal."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..env import BanditInstance
from ..mdp import Mdp
from ..solver import brute_force_policy_search, relative_value_iteration
from ..structured import StructuredMdp, build_structured_mdp
from .scenarios import random_arm

GAIN_MARGIN = 1e-7


def force_action(mdp: Mdp, x: int, a: int) -> Mdp:
    """Copy of ``mdp`` in which every action at state ``x`` behaves like ``a``."""
    succ, prob, reward = mdp.succ.copy(), mdp.prob.copy(), mdp.reward.copy()
    succ[x, :] = mdp.succ[x, a]
    prob[x, :] = mdp.prob[x, a]
    reward[x, :] = mdp.reward[x, a]
    return Mdp(succ, prob, reward, mdp.initial)


def forcing_loss(mdp: Mdp, x: int, a: int, rho_star: float, tolerance: float = 1e-10) -> float:
    """Optimal gain lost when action ``a`` is imposed at ``x``."""
    return rho_star - relative_value_iteration(force_action(mdp, x, a), tolerance=tolerance).gain


def reachable_states(mdp: Mdp, policy) -> np.ndarray:
    """Meta-states reachable under ``policy`` from the support of the start distribution."""
    P, _ = mdp.policy_matrix(policy)
    seen = np.zeros(mdp.n_states, dtype=bool)
    stack = list(np.flatnonzero(mdp.initial > 0))
    seen[stack] = True
    while stack:
        s = stack.pop()
        for y in np.flatnonzero(P[s] > 0):
            if not seen[y]:
                seen[y] = True
                stack.append(int(y))
    return seen


@dataclass
class ExplorationWitness:
    state: object
    state_index: int
    optimal_action: int
    myopic_action: int
    reward_gap: float
    forcing_loss: float
    rho_star: float


def exploration_witness(mdp: StructuredMdp, rvi_tolerance: float = 1e-10) -> ExplorationWitness | None:
    """A reachable meta-state where the optimal policy forgoes immediate reward.

    The witness is confirmed by imposing the greedy action there and checking
    that the optimal gain strictly drops.
    """
    res = relative_value_iteration(mdp, tolerance=rvi_tolerance)
    pol = res.policy
    reach = reachable_states(mdp, pol)
    best = []
    for x in np.flatnonzero(reach):
        chosen = mdp.reward[x, pol[x]]
        greedy = int(np.argmax(mdp.reward[x]))
        gap = mdp.reward[x, greedy] - chosen
        if gap > 1e-12:
            best.append((gap, int(x), greedy))
    for gap, x, greedy in sorted(best, reverse=True):
        loss = forcing_loss(mdp, x, greedy, res.gain, rvi_tolerance)
        if loss > GAIN_MARGIN:
            return ExplorationWitness(mdp.states[x], x, int(pol[x]), greedy, float(gap), float(loss), res.gain)
    return None


@dataclass
class IndexWitness:
    """Two instances sharing arms A = 0 and B = 1 on which optimal play disagrees.

    In the two-arm instance the optimal policy must pull ``choice_small`` at
    ``state_small``; after adding arm C = 2 it must pull the other one of A, B
    at ``state_large``, although both meta-states hold the same history
    ``(s_A, n_A), (s_B, n_B)``.  An index policy ranks A against B from those
    histories alone, so it is suboptimal on one of the two instances.
    """

    seed: int
    instance_small: BanditInstance
    instance_large: BanditInstance
    caps: tuple
    state_small: object
    state_large: object
    choice_small: int
    choice_large: int
    rho_small: float
    rho_large: float
    loss_small: float
    losses_large: dict
    brute_force_rho_small: float | None = None
    brute_force_choice_small: int | None = None
    notes: list = field(default_factory=list)


@dataclass
class SearchReport:
    witness: IndexWitness | None
    tried: int

    @property
    def conclusive(self) -> bool:
        return self.witness is not None


def _candidates(mdp: StructuredMdp, policy, arms) -> dict:
    reach = reachable_states(mdp, policy)
    out = {}
    for x in np.flatnonzero(reach):
        st = mdp.states[x]
        a = int(policy[x])
        if a in arms:
            key = tuple((st.states[j], st.gaps[j]) for j in arms)
            out.setdefault(key, []).append((int(x), a))
    return out


def check_pair(small: StructuredMdp, large: StructuredMdp, *, tolerance: float = 1e-10):
    """Find matching meta-states where the optimal choice between arms 0 and 1 flips."""
    rs = relative_value_iteration(small, tolerance=tolerance)
    rl = relative_value_iteration(large, tolerance=tolerance)
    cs = _candidates(small, rs.policy, (0, 1))
    cl = _candidates(large, rl.policy, (0, 1))
    for key in sorted(set(cs) & set(cl)):
        for xs, a_s in cs[key]:
            for xl, a_l in cl[key]:
                if a_s == a_l:
                    continue
                loss_s = forcing_loss(small, xs, 1 - a_s, rs.gain, tolerance)
                if loss_s <= GAIN_MARGIN:
                    continue
                losses = {b: forcing_loss(large, xl, b, rl.gain, tolerance) for b in range(large.n_actions) if b != a_l}
                if min(losses.values()) <= GAIN_MARGIN:
                    continue
                return xs, xl, a_s, a_l, rs.gain, rl.gain, loss_s, losses
    return None


def index_suboptimality_search(budget: int = 200, seed: int = 0, *, caps: int = 2, q: int = 4,
                               brute_force_limit: int = 2**16) -> SearchReport:
    """Random search over small rational instances for an index-policy counterexample.

    Arms A and B have two states, arm C has one or two.  Every candidate is
    confirmed by imposing the competing action at the matched meta-states and
    checking that the optimal gain strictly drops; the two-arm side is also
    re-solved by exhaustive policy search when it is small enough.
    """
    rng = np.random.default_rng(seed)
    for tried in range(1, budget + 1):
        arms = [random_arm(rng, 2, q).spec(), random_arm(rng, 2, q).spec(),
                random_arm(rng, int(rng.integers(1, 3)), q).spec()]
        small_inst = BanditInstance(tuple(arms[:2]))
        large_inst = BanditInstance(tuple(arms))
        small = build_structured_mdp(small_inst.arms, (caps,) * 2, validate=False)
        large = build_structured_mdp(large_inst.arms, (caps,) * 3, validate=False)
        hit = check_pair(small, large)
        if hit is None:
            continue
        xs, xl, a_s, a_l, rho_s, rho_l, loss_s, losses = hit
        w = IndexWitness(tried, small_inst, large_inst, (caps,) * 3, small.states[xs], large.states[xl],
                         a_s, a_l, rho_s, rho_l, loss_s, losses)
        if small.n_actions ** small.n_states <= brute_force_limit:
            bf = brute_force_policy_search(small)
            w.brute_force_rho_small = bf.gain
            w.brute_force_choice_small = int(bf.policy[xs])
            if abs(bf.gain - rho_s) > 1e-6:
                w.notes.append("brute force and relative value iteration disagree on the two-arm gain")
        else:
            w.notes.append("two-arm instance too large for exhaustive policy search")
        w.notes.append("three-arm side confirmed by imposing each competing action")
        return SearchReport(w, tried)
    return SearchReport(None, budget)
