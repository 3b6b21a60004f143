"""Average-reward planning on tabular MDPs.

* :func:`relative_value_iteration` - optimal gain and policy (the regret oracle)
* :func:`extended_value_iteration` - optimistic planning over an L1-ball plausible set
* :func:`mdp_diameter` - max over state pairs of the minimal expected travel time
* :func:`brute_force_policy_search` - enumerate every deterministic policy
* :func:`policy_average_reward` - exact gain of one policy, multichain-safe
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .mdp import Mdp

TIE_TOL = 1e-12
DAMPING = 0.5
OSCILLATION_WINDOW = 100


class SolverError(RuntimeError):
    pass


@dataclass
class PlanResult:
    gain: float
    bias: np.ndarray
    policy: np.ndarray
    iterations: int
    span_history: list = field(default_factory=list, repr=False)
    gain_tolerance: float = 0.0
    damped: bool = False

    @property
    def span(self) -> float:
        return float(self.bias.max() - self.bias.min())


@dataclass
class PlausibleSet:
    """Per state-action confidence region around estimated rewards and laws.

    ``p_center[s, a, k]`` is the estimated probability of successor
    ``succ[s, a, k]``.  With ``support_restricted`` the optimistic law may only
    use those successors; otherwise any state can receive mass.
    """

    succ: np.ndarray
    reward_center: np.ndarray
    reward_radius: np.ndarray
    p_center: np.ndarray
    p_radius: np.ndarray
    support_restricted: bool = False

    def __post_init__(self):
        self.succ = np.ascontiguousarray(self.succ, dtype=np.int64)
        self.reward_center = np.clip(np.asarray(self.reward_center, dtype=float), 0.0, 1.0)
        self.reward_radius = np.broadcast_to(np.asarray(self.reward_radius, dtype=float), self.reward_center.shape).copy()
        self.p_center = np.ascontiguousarray(self.p_center, dtype=float)
        self.p_radius = np.broadcast_to(np.asarray(self.p_radius, dtype=float), self.reward_center.shape).copy()
        if np.any(self.reward_radius < 0) or np.any(self.p_radius < 0):
            raise ValueError("confidence radii must be non-negative")

    @classmethod
    def around(cls, mdp: Mdp, reward_radius=0.0, p_radius=0.0, **kw) -> "PlausibleSet":
        return cls(mdp.succ, mdp.reward, reward_radius, mdp.prob, p_radius, **kw)

    def contains(self, mdp: Mdp, slack: float = 0.0) -> bool:
        """Whether ``mdp`` (same successor layout) lies inside the set."""
        dr = np.abs(mdp.reward - self.reward_center)
        dp = np.abs(mdp.prob - self.p_center).sum(axis=2)
        return bool(np.all(dr <= self.reward_radius + slack) and np.all(dp <= self.p_radius + slack))


@dataclass
class OptimisticModel:
    reward: np.ndarray
    succ: np.ndarray
    prob: np.ndarray


def _span(x: np.ndarray) -> float:
    return float(x.max() - x.min())


def greedy(Q: np.ndarray) -> np.ndarray:
    """Greedy actions, ties broken towards the lowest action index."""
    return np.argmax(Q >= Q.max(axis=1, keepdims=True) - TIE_TOL, axis=1)


def q_values(mdp: Mdp, u: np.ndarray) -> np.ndarray:
    return mdp.reward + (mdp.prob * u[mdp.succ]).sum(axis=2)


def relative_value_iteration(
    mdp: Mdp,
    tolerance: float = 1e-9,
    *,
    max_iter: int = 100_000,
    ref_state: int = 0,
    u0: np.ndarray | None = None,
) -> PlanResult:
    """Relative value iteration for the optimal average reward.

    Stops once ``span(u_{i+1} - u_i) < tolerance``; the returned gain is the
    midpoint of the one-step change, so it is within ``tolerance / 2`` of the
    optimum.  Switches to the aperiodicity transform (``u <- (u + T u) / 2``)
    if the span stops shrinking, which leaves the gain unchanged.
    """
    u = np.zeros(mdp.n_states) if u0 is None else np.array(u0, dtype=float)
    spans: list[float] = []
    tau = 1.0
    for it in range(1, max_iter + 1):
        Q = q_values(mdp, u)
        Tu = Q.max(axis=1)
        new = u + tau * (Tu - u) if tau < 1.0 else Tu
        diff = new - u
        sp = _span(diff)
        spans.append(sp)
        if sp < tolerance * tau:
            gain = 0.5 * (diff.max() + diff.min()) / tau
            return PlanResult(
                gain=float(gain), bias=new - new[ref_state], policy=greedy(Q), iterations=it,
                span_history=spans, gain_tolerance=0.5 * sp / tau, damped=tau < 1.0,
            )
        if tau == 1.0 and it > OSCILLATION_WINDOW and sp >= spans[-OSCILLATION_WINDOW - 1]:
            tau = DAMPING
        u = new - new[ref_state]
    raise SolverError(
        f"relative value iteration did not converge in {max_iter} sweeps (last span {spans[-1]:.3e}, "
        f"min span {min(spans):.3e})"
    )


@numba.njit(cache=True)
def _evi_sweep(succ, p_hat, r_opt, p_rad, u, restricted, out_q):
    S, A, B = succ.shape
    best = 0
    for s in range(S):
        if u[s] > u[best]:
            best = s
    n = B if restricted else B + 1
    vals = np.empty(n)
    qs = np.empty(n)
    for s in range(S):
        for a in range(A):
            for k in range(B):
                vals[k] = u[succ[s, a, k]]
                qs[k] = p_hat[s, a, k]
            if not restricted:
                vals[B] = u[best]
                qs[B] = 0.0
            # insertion sort by value, ascending
            for i in range(1, n):
                v, q = vals[i], qs[i]
                j = i - 1
                while j >= 0 and vals[j] > v:
                    vals[j + 1] = vals[j]
                    qs[j + 1] = qs[j]
                    j -= 1
                vals[j + 1] = v
                qs[j + 1] = q
            top = min(1.0, qs[n - 1] + 0.5 * p_rad[s, a])
            excess = top - qs[n - 1]
            qs[n - 1] = top
            for i in range(n - 1):
                if excess <= 0.0:
                    break
                take = min(qs[i], excess)
                qs[i] -= take
                excess -= take
            acc = 0.0
            for i in range(n):
                acc += qs[i] * vals[i]
            out_q[s, a] = r_opt[s, a] + acc


def optimistic_transition(p_center: np.ndarray, values: np.ndarray, radius: float) -> np.ndarray:
    """Member of the L1 ball ``||p - p_center||_1 <= radius`` maximising ``p @ values``.

    Raises the best-valued entry by ``radius / 2`` (capped at 1) and removes
    the surplus from the worst-valued entries first.
    """
    p = np.array(p_center, dtype=float)
    order = np.argsort(values, kind="stable")
    top = order[-1]
    p[top] = min(1.0, p[top] + radius / 2)
    excess = p.sum() - 1.0
    for i in order[:-1]:
        if excess <= 0:
            break
        take = min(p[i], excess)
        p[i] -= take
        excess -= take
    return p


def _optimistic_model(ps: PlausibleSet, r_opt: np.ndarray, u: np.ndarray) -> OptimisticModel:
    S, A, B = ps.succ.shape
    best = int(np.argmax(u))
    width = B if ps.support_restricted else B + 1
    succ = np.empty((S, A, width), dtype=np.int64)
    prob = np.zeros((S, A, width))
    succ[:, :, :B] = ps.succ
    if not ps.support_restricted:
        succ[:, :, B] = best
    for s in range(S):
        for a in range(A):
            q = np.zeros(width)
            q[:B] = ps.p_center[s, a]
            prob[s, a] = optimistic_transition(q, u[succ[s, a]], ps.p_radius[s, a])
    return OptimisticModel(reward=r_opt, succ=succ, prob=prob)


def extended_value_iteration(
    plausible: PlausibleSet,
    tolerance: float = 1e-9,
    *,
    max_iter: int = 100_000,
    u0: np.ndarray | None = None,
    with_model: bool = False,
) -> tuple[PlanResult, OptimisticModel | None]:
    """Value iteration jointly over policies and plausible MDPs.

    Each sweep uses the optimistic reward ``min(1, r_hat + radius)`` and the
    L1-ball law maximising the expected next value.  Same stopping rule and
    gain certificate as :func:`relative_value_iteration`.
    """
    ps = plausible
    S = ps.succ.shape[0]
    r_opt = np.minimum(1.0, ps.reward_center + ps.reward_radius)
    u = np.zeros(S) if u0 is None else np.array(u0, dtype=float)
    Q = np.empty_like(r_opt)
    spans: list[float] = []
    tau = 1.0
    for it in range(1, max_iter + 1):
        _evi_sweep(ps.succ, ps.p_center, r_opt, ps.p_radius, u, ps.support_restricted, Q)
        Tu = Q.max(axis=1)
        new = u + tau * (Tu - u) if tau < 1.0 else Tu
        diff = new - u
        sp = _span(diff)
        spans.append(sp)
        if sp < tolerance * tau:
            gain = 0.5 * (diff.max() + diff.min()) / tau
            bias = new - new.min()
            res = PlanResult(
                gain=float(gain), bias=bias, policy=greedy(Q), iterations=it, span_history=spans,
                gain_tolerance=0.5 * sp / tau, damped=tau < 1.0,
            )
            return res, (_optimistic_model(ps, r_opt, new) if with_model else None)
        if tau == 1.0 and it > OSCILLATION_WINDOW and sp >= spans[-OSCILLATION_WINDOW - 1]:
            tau = DAMPING
        u = new - new.min()
    raise SolverError(f"extended value iteration did not converge in {max_iter} sweeps (last span {spans[-1]:.3e})")


@numba.njit(cache=True)
def _hitting_sweeps(succ, prob, H, tol, max_iter):
    # Gauss-Seidel value iteration on minimal expected hitting times, one row per target.
    S, A, B = succ.shape
    for t in range(S):
        it = 0
        while True:
            it += 1
            delta = 0.0
            for s in range(S):
                if s == t:
                    continue
                best = np.inf
                for a in range(A):
                    acc = 1.0
                    for k in range(B):
                        p = prob[s, a, k]
                        if p > 0.0:
                            acc += p * H[t, succ[s, a, k]]
                    if acc < best:
                        best = acc
                d = abs(best - H[t, s])
                if d > delta:
                    delta = d
                H[t, s] = best
            if delta < tol:
                break
            if it >= max_iter:
                return t
    return -1


def _support_graph(mdp: Mdp):
    S, A, B = mdp.succ.shape
    rows = np.repeat(np.arange(S), A * B)
    mask = mdp.prob.reshape(-1) > 0.0
    return csr_matrix((np.ones(mask.sum()), (rows[mask], mdp.succ.reshape(-1)[mask])), shape=(S, S))


def almost_sure_reach(mdp: Mdp, target: int) -> np.ndarray:
    """States from which some policy reaches ``target`` with probability one."""
    S, A, B = mdp.succ.shape
    live = mdp.prob > 0.0
    W = np.ones(S, dtype=bool)
    while True:
        # actions that stay inside W almost surely
        ok = np.all(~live | W[mdp.succ], axis=2)
        R = np.zeros(S, dtype=bool)
        R[target] = True
        frontier = [target]
        pred = {}
        src, act = np.nonzero(ok & W[:, None])
        for s, a in zip(src.tolist(), act.tolist()):
            for k in range(B):
                if live[s, a, k]:
                    pred.setdefault(int(mdp.succ[s, a, k]), set()).add(s)
        while frontier:
            y = frontier.pop()
            for s in pred.get(y, ()):
                if not R[s]:
                    R[s] = True
                    frontier.append(s)
        if np.array_equal(R, W):
            return W
        W = R


def hitting_time_table(mdp: Mdp, tol: float = 1e-9, max_iter: int = 10**6) -> np.ndarray:
    """``H[target, source]``: minimal expected steps from source to target (``inf`` if unreachable)."""
    S = mdp.n_states
    H = np.zeros((S, S))
    n_comp, _ = connected_components(_support_graph(mdp), directed=True, connection="strong")
    if n_comp > 1:
        # not communicating: states that cannot reach a target almost surely stay at inf
        for t in range(S):
            H[t, ~almost_sure_reach(mdp, t)] = np.inf
    failed = _hitting_sweeps(mdp.succ, mdp.prob, H, tol, max_iter)
    if failed >= 0:
        raise SolverError(f"hitting-time iteration for target {failed} exceeded {max_iter} sweeps")
    return H


def mdp_diameter(mdp: Mdp, tol: float = 1e-9, max_iter: int = 10**6) -> float:
    """Largest minimal expected travel time between two states."""
    if mdp.n_states == 1:
        return 0.0
    return float(hitting_time_table(mdp, tol, max_iter).max())


def _closed_classes(P: np.ndarray) -> list[np.ndarray]:
    n_comp, labels = connected_components(P > 0.0, directed=True, connection="strong")
    out = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        if P[np.ix_(members, np.flatnonzero(labels != c))].sum() <= 1e-15:
            out.append(members)
    return out


def chain_gain_vector(P: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Long-run average reward from every start state of a finite chain."""
    S = P.shape[0]
    classes = _closed_classes(P)
    g = np.zeros(S)
    recurrent = np.zeros(S, dtype=bool)
    class_gain = []
    for members in classes:
        sub = P[np.ix_(members, members)]
        n = len(members)
        A = sub.T - np.eye(n)
        A[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        mu = np.linalg.solve(A, b)
        gc = float(mu @ r[members])
        class_gain.append(gc)
        g[members] = gc
        recurrent[members] = True
    transient = np.flatnonzero(~recurrent)
    if transient.size:
        Qt = P[np.ix_(transient, transient)]
        # absorption-weighted class gains: (I - Q) g_T = sum_c P[T, c] * g_c
        rhs = np.zeros(transient.size)
        for members, gc in zip(classes, class_gain):
            rhs += P[np.ix_(transient, members)].sum(axis=1) * gc
        g[transient] = np.linalg.solve(np.eye(transient.size) - Qt, rhs)
    return g


def policy_average_reward(mdp: Mdp, policy, start: int | None = None) -> float:
    """Exact gain of ``policy``, from ``start`` or from the MDP's initial distribution."""
    P, r = mdp.policy_matrix(policy)
    g = chain_gain_vector(P, r)
    return float(g[start]) if start is not None else float(mdp.initial @ g)


def evaluate_policy(mdp: Mdp, policy, ref_state: int | None = None) -> tuple[float, np.ndarray]:
    """Gain and bias of a unichain policy (bias pinned to 0 at ``ref_state``)."""
    P, r = mdp.policy_matrix(policy)
    S = P.shape[0]
    classes = _closed_classes(P)
    if len(classes) != 1:
        raise SolverError(f"policy induces {len(classes)} recurrent classes")
    if ref_state is None:
        ref_state = int(classes[0][0])
    # unknowns: gain and bias; equations g + h - P h = r, h[ref] = 0
    A = np.zeros((S + 1, S + 1))
    A[:S, 0] = 1.0
    A[:S, 1:] = np.eye(S) - P
    A[S, 1 + ref_state] = 1.0
    b = np.concatenate([r, [0.0]])
    sol = np.linalg.solve(A, b)
    return float(sol[0]), sol[1:]


def bellman_residual(mdp: Mdp, policy) -> float:
    """How much a one-step deviation can improve on ``policy``'s exact gain+bias.

    Zero (up to rounding) certifies that a unichain policy is gain-optimal.
    """
    gain, h = evaluate_policy(mdp, policy)
    Q = q_values(mdp, h)
    return float((Q.max(axis=1) - gain - h).max())


def _multichain_gains(P: np.ndarray, r: np.ndarray, initial: np.ndarray, squarings: int = 60) -> np.ndarray:
    """Gains from ``initial`` for a batch of chains, via powers of the lazy chain.

    ``((I + P) / 2)^(2^k)`` converges to the Cesaro limit of ``P``; chains whose
    powers have not settled are evaluated exactly instead.
    """
    L = 0.5 * (P + np.eye(P.shape[1])[None])
    for _ in range(squarings):
        nxt = L @ L
        nxt /= nxt.sum(axis=2, keepdims=True)  # rounding in the row sums would grow with every squaring
        done = np.abs(nxt - L).max() < 1e-14
        L = nxt
        if done:
            break
    gains = np.einsum("s,nst,nt->n", initial, L, r)
    settled = np.abs(L @ L - L).max(axis=(1, 2)) < 1e-12
    for i in np.flatnonzero(~settled):
        gains[i] = initial @ chain_gain_vector(P[i], r[i])
    return gains


def brute_force_policy_search(mdp: Mdp, budget: int = 10**6, batch: int = 4096) -> PlanResult:
    """Enumerate every deterministic stationary policy and keep the best gain.

    Gains are measured from the MDP's initial distribution.  Unichain policies
    are evaluated in batches; anything whose stationary system is singular
    (several recurrent classes) falls back to the exact multichain evaluation.
    """
    S, A = mdp.n_states, mdp.n_actions
    count = A**S
    if count > budget:
        raise SolverError(f"{A}^{S} = {count} policies exceed the enumeration budget {budget}")
    P_all = mdp.dense()  # (S, A, S)
    rows = np.arange(S)
    best_gain, best_pol = -np.inf, None
    policies = itertools.product(range(A), repeat=S)
    while True:
        chunk = np.array(list(itertools.islice(policies, batch)), dtype=np.int64)
        if chunk.size == 0:
            break
        P = P_all[rows[None, :], chunk]  # (n, S, S)
        r = mdp.reward[rows[None, :], chunk]
        M = np.transpose(P, (0, 2, 1)) - np.eye(S)[None]
        M[:, -1, :] = 1.0
        b = np.zeros(S)
        b[-1] = 1.0
        sign, logdet = np.linalg.slogdet(M)
        ok = (sign != 0) & (logdet > -23.0)
        gains = np.full(len(chunk), -np.inf)
        if ok.any():
            mu = np.linalg.solve(M[ok], np.broadcast_to(b, (int(ok.sum()), S))[..., None])[..., 0]
            resid = np.abs(np.einsum("nij,nj->ni", M[ok], mu) - b).max(axis=1)
            good = (resid < 1e-10) & (mu.min(axis=1) > -1e-9)
            idx = np.flatnonzero(ok)
            ok[idx[~good]] = False
            gains[idx[good]] = (mu[good] * r[idx[good]]).sum(axis=1)
        bad = np.flatnonzero(~ok)
        if bad.size:
            gains[bad] = _multichain_gains(P[bad], r[bad], mdp.initial)
        i = int(np.argmax(gains))
        if gains[i] > best_gain + 1e-13:
            best_gain, best_pol = float(gains[i]), chunk[i].copy()
    try:
        _, bias = evaluate_policy(mdp, best_pol)
    except SolverError:
        bias = np.zeros(S)
    return PlanResult(gain=best_gain, bias=bias, policy=best_pol, iterations=count)
