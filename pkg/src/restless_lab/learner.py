"""Colored UCRL2 on the restless-bandit meta-state MDP, its wrappers and baselines.

Statistics are pooled per colour (chosen arm, its last state, its gap class and
residue); transitions are counted in the colour's reference frame, which is
the landing state of the pulled arm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .env import ArmSpec, MetaObservation, RestlessBandit
from .solver import PlausibleSet, extended_value_iteration, relative_value_iteration
from .structured import ArmLayout, ColorKey, StructuredMdp, build_structured_mdp, lcm_period
from .trace import RegretTrace


@dataclass(frozen=True)
class LearnerConfig:
    """Inputs of the restless bandits algorithm.

    ``caps`` are the per-arm aggregation thresholds ``T_mix^j(epsilon)``.
    Without them they are derived from ``mixing_times`` (the 1/4-mixing
    times) through ``T_mix(eps) <= ceil(log2(1/eps)) * T_mix(1/4)``.
    """

    delta: float = 0.05
    horizon: int | None = None
    epsilon: float | None = None
    state_counts: tuple | None = None
    caps: tuple | None = None
    mixing_times: tuple | None = None
    periods: tuple | str | None = None
    support_bound: int | None = None
    support_restricted: bool = False
    evi_max_iter: int = 100_000

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

    @property
    def eps(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        if self.horizon is None:
            raise ValueError("epsilon defaults to 1/sqrt(horizon), but no horizon is set")
        return 1.0 / math.sqrt(self.horizon)

    def resolved_caps(self, K: int) -> tuple:
        if self.caps is not None:
            return tuple(int(c) for c in self.caps)
        if self.mixing_times is None:
            raise ValueError("either caps or mixing_times must be given")
        eps = self.eps
        factor = max(1, math.ceil(math.log2(1.0 / eps))) if eps > 0 else None
        if factor is None:
            raise ValueError("epsilon = 0 needs explicit caps")
        return tuple(factor * int(t) for t in self.mixing_times)


@dataclass
class EpisodeLog:
    k: int
    t_k: int
    policy: np.ndarray = field(repr=False)
    optimistic_gain: float
    terminating_color: ColorKey | None = None
    terminating_count: int | None = None
    evi_iterations: int = 0
    bias_span: float = 0.0
    truth_plausible: bool | None = None


@dataclass
class LearnerRun:
    trace: RegretTrace
    episodes: list
    n_colors: int
    caps: tuple
    epsilon: float
    exploration_steps: list = field(default_factory=list)

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)


def confidence_radii(N, t_k: int, delta: float, C: int, B: int, epsilon: float):
    """Reward and L1 transition radii for colours visited ``N`` times before episode start."""
    n = np.maximum(1, np.asarray(N, dtype=float))
    r = epsilon + np.sqrt(7.0 * math.log(2.0 * C * t_k / delta) / (2.0 * n))
    p = epsilon + np.sqrt(56.0 * B * math.log(4.0 * C * t_k / delta) / n)
    return r, p


def episode_bound(C: int, T: int) -> float:
    """``C log2(8T/C)`` upper bound on the number of episodes (for ``T >= C``)."""
    return C * math.log2(8.0 * T / C)


def episode_should_end(stats: "ColorStats", color: int) -> bool:
    return stats.v[color] >= max(1, stats.N[color])


def update_stats(stats: "ColorStats", color: int, landing: int, reward: float) -> "ColorStats":
    stats.reward_sum[color] += reward
    stats.trans[color][landing] += 1
    stats.v[color] += 1
    return stats


def resolve_periods(periods, state_counts) -> tuple:
    """Per-arm periods; ``None`` means aperiodic and ``"lcm"`` the safe ``lcm(1..|S_j|)``."""
    if periods is None:
        return (1,) * len(state_counts)
    if periods == "lcm":
        return tuple(lcm_period(n) for n in state_counts)
    return tuple(int(m) for m in periods)


class ColorStats:
    """Visit counts, reward sums and landing-state counts per colour."""

    def __init__(self, landing_sizes, B: int):
        C = len(landing_sizes)
        self.landing_sizes = list(landing_sizes)
        self.B = B
        self.N = [0] * C
        self.v = [0] * C
        self.reward_sum = [0.0] * C
        self.trans = [[0] * B for _ in range(C)]

    def close_episode(self) -> None:
        self.N = [n + v for n, v in zip(self.N, self.v)]
        self.v = [0] * len(self.v)

    def estimates(self) -> tuple[np.ndarray, np.ndarray]:
        """``r_hat`` and ``p_hat`` over all samples so far (``N + v``)."""
        n = np.array(self.N, dtype=float) + np.array(self.v, dtype=float)
        r_hat = np.array(self.reward_sum) / np.maximum(1.0, n)
        counts = np.array(self.trans, dtype=float)
        p_hat = np.zeros_like(counts)
        seen = n > 0
        p_hat[seen] = counts[seen] / n[seen, None]
        for c in np.flatnonzero(~seen):
            p_hat[c, : self.landing_sizes[c]] = 1.0 / self.landing_sizes[c]
        return r_hat, p_hat


def learner_skeleton(state_counts, caps, periods=None, epsilon: float = 0.0) -> StructuredMdp:
    """Meta-state layout (states, successors, colours) without any model knowledge."""
    dummy = [ArmSpec(np.full((n, n), 1.0 / n), np.zeros(n)) for n in state_counts]
    return build_structured_mdp(dummy, caps, periods=periods, epsilon=epsilon, validate=False)


class _Engine:
    """Runs episodes of colored UCRL2 on a fixed skeleton."""

    def __init__(self, skeleton: StructuredMdp, delta: float, epsilon: float, B: int,
                 support_restricted: bool, evi_max_iter: int, truth: StructuredMdp | None = None):
        self.sk = skeleton
        self.delta = delta
        self.eps = epsilon
        self.B = B
        self.C = skeleton.n_colors
        self.support_restricted = support_restricted
        self.evi_max_iter = evi_max_iter
        self.succ = skeleton.succ.tolist()
        self.cid = skeleton.color_id.tolist()
        sizes = [skeleton.model.arms[key.arm].n_states for key in skeleton.colors]
        self.stats = ColorStats(sizes, skeleton.support_width)
        self.u = None
        self.truth = None
        if truth is not None:
            ref = np.array(skeleton.color_reference)
            self.truth = (truth.reward[ref[:, 0], ref[:, 1]], truth.prob[ref[:, 0], ref[:, 1]])

    def plan(self, t_k: int, k: int) -> EpisodeLog:
        st = self.stats
        st.close_episode()
        r_hat, p_hat = st.estimates()
        rad_r, rad_p = confidence_radii(st.N, t_k, self.delta, self.C, self.B, self.eps)
        plausible_truth = None
        if self.truth is not None:
            tr, tp = self.truth
            plausible_truth = bool(
                np.all(np.abs(r_hat - tr) <= rad_r) and np.all(np.abs(p_hat - tp).sum(axis=1) <= rad_p)
            )
        cid = self.sk.color_id
        ps = PlausibleSet(
            succ=self.sk.succ, reward_center=r_hat[cid], reward_radius=rad_r[cid],
            p_center=p_hat[cid], p_radius=rad_p[cid], support_restricted=self.support_restricted,
        )
        res, _ = extended_value_iteration(ps, 1.0 / math.sqrt(t_k), max_iter=self.evi_max_iter, u0=self.u)
        self.u = res.bias
        self.policy = res.policy.tolist()
        return EpisodeLog(
            k=k, t_k=t_k, policy=res.policy, optimistic_gain=res.gain, evi_iterations=res.iterations,
            bias_span=res.span, truth_plausible=plausible_truth,
        )

    def execute(self, env: RestlessBandit, rewards: np.ndarray, t_done: int, T: int, cur: int,
                log: EpisodeLog, landing_map=None) -> tuple[int, int, bool]:
        """Follow the episode policy until its stopping rule, the horizon, or an unknown landing state.

        Returns the new step count, the new meta-state index and whether an
        unseen state was observed (only with ``landing_map``).
        """
        st = self.stats
        N, v, rsum, trans = st.N, st.v, st.reward_sum, st.trans
        policy, cid, succ = self.policy, self.cid, self.succ
        while t_done < T:
            a = policy[cur]
            c = cid[cur][a]
            if v[c] >= (N[c] if N[c] > 1 else 1):
                log.terminating_color = self.sk.colors[c]
                log.terminating_count = N[c]
                return t_done, cur, False
            obs = env.step(a)
            rewards[t_done] = obs.reward
            t_done += 1
            k = obs.state
            if landing_map is not None:
                k = landing_map[a].get(k)
                if k is None:
                    return t_done, cur, True
            rsum[c] += obs.reward
            trans[c][k] += 1
            v[c] += 1
            cur = succ[cur][a][k]
        return t_done, cur, False


def _initial_sweep(env: RestlessBandit, rewards: np.ndarray, T: int) -> int:
    t_done = 0
    for j in range(env.n_arms):
        if t_done >= T:
            break
        if env._last_state[j] is None:
            rewards[t_done] = env.step(j).reward
            t_done += 1
    return t_done


def run_colored_ucrl2(
    env: RestlessBandit,
    config: LearnerConfig,
    *,
    truth: StructuredMdp | None = None,
    check_episode_bound: bool = True,
) -> LearnerRun:
    """Colored UCRL2 for ``config.horizon`` steps on the restless bandit ``env``.

    Arms never pulled so far are sampled once, in index order, before the
    first episode; those steps count towards the horizon.  Passing the true
    capped MDP as ``truth`` records, at every episode start, whether it lies
    in the plausible set.
    """
    T = config.horizon
    if T is None or T < 1:
        raise ValueError("run_colored_ucrl2 needs a positive horizon")
    K = env.n_arms
    counts = config.state_counts or env.instance.state_counts
    caps = config.resolved_caps(K)
    periods = resolve_periods(config.periods, counts)
    eps = config.eps
    B = config.support_bound or max(counts)
    sk = learner_skeleton(counts, caps, periods, eps)
    if truth is not None and (truth.states != sk.states or truth.colors != sk.colors):
        raise ValueError("truth MDP does not share the learner's meta-state layout")
    rewards = np.zeros(T)
    t_done = _initial_sweep(env, rewards, T)
    episodes: list[EpisodeLog] = []
    if t_done < T:
        engine = _Engine(sk, config.delta, eps, B, config.support_restricted, config.evi_max_iter, truth)
        cur = sk.observation_index(env.last_observation_summary())
        k = 0
        while t_done < T:
            k += 1
            log = engine.plan(env.t, k)
            episodes.append(log)
            t_done, cur, _ = engine.execute(env, rewards, t_done, T, cur, log)
            # the tracked meta-state must always match what the environment reports
            if sk.states[cur] != sk.model.fold_observation(env.last_observation_summary()):
                raise AssertionError("tracked meta-state left the enumerated space")
        C = sk.n_colors
        if check_episode_bound and T >= C and len(episodes) > episode_bound(C, T):
            raise AssertionError(f"{len(episodes)} episodes exceed the bound {episode_bound(C, T):.1f}")
    return LearnerRun(RegretTrace.from_rewards(rewards), episodes, sk.n_colors, caps, eps)


def _round_lengths(horizon: int):
    i, total = 1, 0
    while total < horizon:
        L = min(2**i, horizon - total)
        yield i, L
        total += L
        i += 1


def run_with_doubling(env: RestlessBandit, config: LearnerConfig, horizon: int,
                      caps_for: Callable[[float], tuple] | None = None) -> tuple[RegretTrace, list[LearnerRun]]:
    """Horizon-free variant: rounds of length ``2^i`` with confidence ``delta / 2^i``.

    Every round is a fresh colored UCRL2 run (statistics reset) with
    ``epsilon = 2^{-i/2}``.  ``caps_for(eps)`` supplies the aggregation caps
    for a round's epsilon; without it the config's caps / mixing times are used.
    """
    runs = []
    for i, L in _round_lengths(horizon):
        eps = 1.0 / math.sqrt(2**i)
        cfg = replace(config, horizon=L, delta=config.delta / 2**i, epsilon=eps)
        if caps_for is not None:
            cfg = replace(cfg, caps=tuple(caps_for(eps)))
        runs.append(run_colored_ucrl2(env, cfg, check_episode_bound=False))
    return _concat(runs), runs


def mixing_guess(t: int) -> int:
    """Guess ``a(t) = max(1, ceil(ln t))`` for an upper bound on the mixing time."""
    return max(1, math.ceil(math.log(t)))


def run_with_mixing_guess(env: RestlessBandit, config: LearnerConfig, horizon: int) -> tuple[RegretTrace, list[LearnerRun]]:
    """Like :func:`run_with_doubling`, with every arm's cap set to ``a(2^i)`` in round ``i``."""
    K = env.n_arms
    runs = []
    for i, L in _round_lengths(horizon):
        guess = mixing_guess(2**i)
        cfg = replace(config, horizon=L, delta=config.delta / 2**i, epsilon=1.0 / math.sqrt(2**i),
                      caps=(guess,) * K, mixing_times=None)
        runs.append(run_colored_ucrl2(env, cfg, check_episode_bound=False))
    return _concat(runs), runs


def _concat(runs: list[LearnerRun]) -> RegretTrace:
    trace = runs[0].trace
    for r in runs[1:]:
        trace = trace.concat(r.trace)
    return trace


def run_with_state_discovery(env: RestlessBandit, config: LearnerConfig) -> LearnerRun:
    """Colored UCRL2 without knowing the arms' state spaces.

    The learner works on the states observed so far, labelled in order of
    discovery.  Between episodes every arm whose known states were not all
    observed since the previous exploration phase is pulled (round robin)
    until they have been; the arm's latest observation counts as observed.
    An episode also ends when an unseen state shows up, after which the
    meta-state space is rebuilt.  Colour statistics survive rebuilds.
    ``exploration_steps`` lists ``(arm, steps)`` for every exploration phase.
    """
    T = config.horizon
    if T is None or T < 1:
        raise ValueError("run_with_state_discovery needs a positive horizon")
    K = env.n_arms
    eps = config.eps
    periods = resolve_periods(config.periods, [1] * K)
    caps = config.resolved_caps(K)
    layouts = [ArmLayout(1, c, m) for c, m in zip(caps, periods)]
    rewards = np.zeros(T)
    labels: list[dict] = [dict() for _ in range(K)]
    # colour -> [samples, reward sum, {landing env state: count}]
    store: dict[ColorKey, list] = {}
    episodes: list[EpisodeLog] = []
    exploration: list[tuple[int, int]] = []
    seen: list[set] = [set() for _ in range(K)]
    skeletons: dict[tuple, StructuredMdp] = {}
    t_done = 0

    def pull(j: int) -> None:
        nonlocal t_done
        known = env._last_state[j] is not None
        if known:
            key = layouts[j].color_key(j, labels[j][env._last_state[j]], layouts[j].fold(env.t - env._last_time[j]))
        obs = env.step(j)
        rewards[t_done] = obs.reward
        t_done += 1
        labels[j].setdefault(obs.state, len(labels[j]))
        seen[j].add(obs.state)
        if known:
            _record(store, key, obs.state, obs.reward)

    for j in range(K):
        if t_done < T:
            pull(j)
    k = 0
    while t_done < T:
        for j in range(K):
            seen[j].add(env._last_state[j])
        pending = [j for j in range(K) if len(seen[j]) < len(labels[j])]
        steps = dict.fromkeys(pending, 0)
        while pending and t_done < T:
            for j in list(pending):
                if t_done >= T:
                    break
                pull(j)
                steps[j] += 1
                if len(seen[j]) >= len(labels[j]):
                    pending.remove(j)
        exploration.extend((j, n) for j, n in steps.items())
        seen = [set() for _ in range(K)]
        if t_done >= T:
            break
        counts = tuple(len(lab) for lab in labels)
        sk = skeletons.get(counts)
        if sk is None:
            sk = skeletons[counts] = learner_skeleton(counts, caps, periods, eps)
        B = config.support_bound or max(counts)
        engine = _Engine(sk, config.delta, eps, B, config.support_restricted, config.evi_max_iter)
        st = engine.stats
        for c, key in enumerate(sk.colors):
            rec = store.get(key)
            if rec is not None:
                # loaded as v so that planning moves them into N
                st.v[c], st.reward_sum[c] = rec[0], rec[1]
                for env_state, n in rec[2].items():
                    st.trans[c][labels[key.arm][env_state]] = n
        k += 1
        log = engine.plan(env.t, k)
        episodes.append(log)
        before = [row[:] for row in st.trans]
        cur = sk.observation_index(_local_summary(env, labels))
        t_done, cur, new_state = engine.execute(env, rewards, t_done, T, cur, log, landing_map=labels)
        inverse = [{v: s for s, v in lab.items()} for lab in labels]
        for c, key in enumerate(sk.colors):
            n = st.N[c] + st.v[c]
            if n:
                trans = {inverse[key.arm][i]: m for i, m in enumerate(st.trans[c][: counts[key.arm]]) if m}
                store[key] = [n, st.reward_sum[c], trans]
        for c, key in enumerate(sk.colors):
            for i, (m0, m1) in enumerate(zip(before[c], st.trans[c])):
                if m1 > m0:
                    seen[key.arm].add(inverse[key.arm][i])
        if new_state:
            a = int(log.policy[cur])
            _record(store, sk.colors[sk.color_id[cur, a]], env._last_state[a], rewards[t_done - 1])
            seen[a].add(env._last_state[a])
            labels[a].setdefault(env._last_state[a], len(labels[a]))
    n_colors = max((s.n_colors for s in skeletons.values()), default=0)
    return LearnerRun(RegretTrace.from_rewards(rewards), episodes, n_colors, caps, eps, exploration)


def _record(store, key: ColorKey, env_state: int, reward: float) -> None:
    rec = store.setdefault(key, [0, 0.0, {}])
    rec[0] += 1
    rec[1] += reward
    rec[2][env_state] = rec[2].get(env_state, 0) + 1


def _local_summary(env: RestlessBandit, labels):
    obs = env.last_observation_summary()
    return MetaObservation(tuple(labels[j][s] for j, s in enumerate(obs.states)), obs.gaps)


BASELINES = ("best_fixed_arm", "round_robin", "myopic", "oracle_optimal")


def baseline_policies(mdp: StructuredMdp, rvi_tolerance: float = 1e-9) -> dict[str, np.ndarray]:
    """Known-model reference policies as meta-state -> arm tables.

    ``round_robin`` pulls the least recently pulled arm (largest counter, ties
    to the lowest index); with caps of at least ``K`` this cycles through the
    arms in a fixed order.
    """
    S = mdp.n_states
    best = int(np.argmax([arm.stationary_mean for arm in mdp.model.arms]))
    gaps = np.array([x.gaps for x in mdp.states])
    # argmax returns the first maximiser, i.e. the lowest arm index on ties
    rr = np.argmax(gaps, axis=1)
    myopic = np.argmax(mdp.reward, axis=1)
    oracle = relative_value_iteration(mdp, tolerance=rvi_tolerance).policy
    return {
        "best_fixed_arm": np.full(S, best, dtype=np.int64),
        "round_robin": rr.astype(np.int64),
        "myopic": myopic.astype(np.int64),
        "oracle_optimal": np.asarray(oracle, dtype=np.int64),
    }


def run_tabular_policy(env: RestlessBandit, mdp: StructuredMdp, policy, horizon: int) -> RegretTrace:
    """Follow ``policy`` (meta-state index -> arm) after pulling every arm once."""
    rewards = np.zeros(horizon)
    t_done = _initial_sweep(env, rewards, horizon)
    if t_done < horizon:
        pol = np.asarray(policy).tolist()
        succ = mdp.succ.tolist()
        cur = mdp.observation_index(env.last_observation_summary())
        while t_done < horizon:
            a = pol[cur]
            obs = env.step(a)
            rewards[t_done] = obs.reward
            t_done += 1
            cur = succ[cur][a][obs.state]
    return RegretTrace.from_rewards(rewards)


def run_baseline(env: RestlessBandit, mdp: StructuredMdp, name: str, horizon: int) -> RegretTrace:
    if name not in BASELINES:
        raise ValueError(f"unknown baseline {name!r}; expected one of {BASELINES}")
    return run_tabular_policy(env, mdp, baseline_policies(mdp)[name], horizon)
