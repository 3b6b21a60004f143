"""Exact analysis of a single irreducible Markov chain.

Stationary distributions, n-step laws, epsilon-mixing times, expected hitting
times and periods.  Everything here works on dense matrices and is meant for
desk-scale chains (a handful to a few hundred states).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse.csgraph import connected_components

ROW_SUM_TOL = 1e-9


class ChainError(ValueError):
    """Raised for invalid chains or analyses that do not apply to them."""


class TransitionMatrix:
    """Validated, row-stochastic, irreducible transition matrix.

    Rows whose sum is within ``ROW_SUM_TOL`` of one are renormalised; anything
    further off is rejected.  Matrix powers are cached on the instance.
    """

    def __init__(self, rows, *, check_irreducible: bool = True):
        P = np.array(rows, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise ChainError(f"transition matrix must be square and non-empty, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ChainError("transition matrix has non-finite entries")
        if np.any(P < 0.0) or np.any(P > 1.0):
            bad = np.argwhere((P < 0.0) | (P > 1.0))[0]
            raise ChainError(f"entry {tuple(int(i) for i in bad)} = {P[tuple(bad)]} is outside [0, 1]")
        sums = P.sum(axis=1)
        off = np.abs(sums - 1.0)
        if np.any(off > ROW_SUM_TOL):
            row = int(np.argmax(off))
            raise ChainError(f"row {row} sums to {sums[row]!r}, not 1")
        P = P / sums[:, None]
        P.setflags(write=False)
        self._P = P
        self._powers = [np.eye(P.shape[0]), P]
        if check_irreducible and not is_irreducible(P):
            raise ChainError("transition matrix is reducible")

    @property
    def matrix(self) -> np.ndarray:
        return self._P

    @property
    def n_states(self) -> int:
        return self._P.shape[0]

    def power(self, n: int) -> np.ndarray:
        """Return ``P**n`` (read-only), extending the power cache as needed."""
        if n < 0:
            raise ValueError("negative matrix power")
        while len(self._powers) <= n:
            nxt = self._powers[-1] @ self._P
            nxt.setflags(write=False)
            self._powers.append(nxt)
        return self._powers[n]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._P, dtype=dtype)

    def __repr__(self) -> str:
        return f"TransitionMatrix({self._P.tolist()!r})"

    @cached_property
    def stationary(self) -> np.ndarray:
        return stationary_distribution(self)

    @cached_property
    def period(self) -> int:
        return period(self)


def as_transition_matrix(P) -> TransitionMatrix:
    if isinstance(P, TransitionMatrix):
        return P
    return TransitionMatrix(P)


def is_irreducible(P) -> bool:
    n_comp, _ = connected_components(np.asarray(P) > 0.0, directed=True, connection="strong")
    return n_comp == 1


def stationary_distribution(P) -> np.ndarray:
    """Stationary distribution of an irreducible chain.

    Solves ``mu (P - I) = 0`` together with ``sum(mu) = 1`` as one
    least-squares-free square system (the last balance equation is replaced
    by the normalisation row).

    >>> stationary_distribution([[0.9, 0.1], [0.2, 0.8]]).round(6)
    array([0.666667, 0.333333])
    """
    tm = as_transition_matrix(P)
    M = tm.matrix
    n = M.shape[0]
    A = M.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        mu = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        mu = _stationary_power(M)
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def _stationary_power(M: np.ndarray, tol: float = 1e-13, max_iter: int = 1_000_000) -> np.ndarray:
    lazy = 0.5 * (M + np.eye(M.shape[0]))
    mu = np.full(M.shape[0], 1.0 / M.shape[0])
    for _ in range(max_iter):
        nxt = mu @ lazy
        if np.abs(nxt - mu).sum() < tol:
            return nxt
        mu = nxt
    raise ChainError("power iteration for the stationary distribution did not converge")


def n_step_matrix(P, n: int) -> np.ndarray:
    """``P**n``; ``n = 0`` gives the identity."""
    return as_transition_matrix(P).power(n)


def period(P) -> int:
    """Period of an irreducible chain, via BFS levels from state 0.

    For every edge ``u -> v`` of the positive-transition graph the quantity
    ``level(u) + 1 - level(v)`` is a multiple of the period, and their gcd is
    the period itself.
    """
    M = np.asarray(as_transition_matrix(P).matrix)
    n = M.shape[0]
    level = np.full(n, -1, dtype=int)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(M[u] > 0.0):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    g = 0
    for u, v in zip(*np.nonzero(M > 0.0)):
        g = math.gcd(g, int(abs(level[u] + 1 - level[v])))
    return g if g > 0 else 1


def cyclic_classes(P) -> np.ndarray:
    """Cyclic class (0..period-1) of every state, with state 0 in class 0."""
    tm = as_transition_matrix(P)
    m = tm.period
    M = tm.matrix
    n = M.shape[0]
    cls = np.full(n, -1, dtype=int)
    cls[0] = 0
    stack = [0]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(M[u] > 0.0):
            if cls[v] < 0:
                cls[v] = (cls[u] + 1) % m
                stack.append(int(v))
    return cls


def _require_aperiodic(tm: TransitionMatrix) -> None:
    if tm.period != 1:
        raise ChainError(f"chain has period {tm.period}; distance to stationarity does not converge")


def variation_distance_at(P, t: int) -> float:
    """Worst-start L1 distance ``max_s ||P^t(s, .) - mu||_1``."""
    tm = as_transition_matrix(P)
    _require_aperiodic(tm)
    return float(np.abs(tm.power(t) - tm.stationary[None, :]).sum(axis=1).max())


def _periodic_targets(tm: TransitionMatrix, t: int) -> np.ndarray:
    # Row s of P^t converges to mu restricted (and rescaled) to the class of s shifted by t.
    m = tm.period
    cls = cyclic_classes(tm)
    mu = tm.stationary
    targets = np.zeros_like(tm.matrix)
    for s in range(tm.n_states):
        mask = cls == (cls[s] + t) % m
        targets[s, mask] = mu[mask] / mu[mask].sum()
    return targets


def periodic_variation_distance_at(P, t: int) -> float:
    """Like :func:`variation_distance_at`, measured against the cyclic-class limits.

    For an aperiodic chain this coincides with :func:`variation_distance_at`.
    """
    tm = as_transition_matrix(P)
    return float(np.abs(tm.power(t) - _periodic_targets(tm, t)).sum(axis=1).max())


def mixing_time(P, eps: float, *, cap: int = 1_000_000, periodic: bool = False) -> int:
    """Least ``t >= 1`` with worst-start distance to stationarity at most ``eps``.

    With ``periodic=True`` the distance is measured against the limits of the
    cyclic sub-chains, which makes the notion usable for periodic arms.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    tm = as_transition_matrix(P)
    if not periodic:
        _require_aperiodic(tm)
    # Powers are cached on the matrix, so keep a local running power instead for long scans.
    M = tm.matrix
    Pt = M.copy()
    for t in range(1, cap + 1):
        target = _periodic_targets(tm, t) if periodic else tm.stationary[None, :]
        d = float(np.abs(Pt - target).sum(axis=1).max())
        if d <= eps:
            return t
        Pt = Pt @ M
    raise ChainError(f"mixing time exceeds cap {cap} (last distance {d:.3g} > {eps})")


def hitting_times(P, target: int) -> np.ndarray:
    """Expected hitting times of ``target`` from every state (0 at the target)."""
    M = as_transition_matrix(P).matrix
    n = M.shape[0]
    A = np.eye(n) - M
    A[target, :] = 0.0
    A[target, target] = 1.0
    b = np.ones(n)
    b[target] = 0.0
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ChainError(f"hitting-time system for target {target} is singular") from exc


def hitting_time_matrix(P) -> np.ndarray:
    """``H[s, s']`` = expected time to reach ``s'`` from ``s``."""
    n = as_transition_matrix(P).n_states
    return np.column_stack([hitting_times(P, j) for j in range(n)])


def return_times(P) -> np.ndarray:
    """Expected first return time to each state."""
    M = as_transition_matrix(P).matrix
    H = hitting_time_matrix(P)
    return 1.0 + np.einsum("su,us->s", M, H)


def diameter(P) -> float:
    """Maximal expected hitting time over ordered pairs of distinct states."""
    H = hitting_time_matrix(P)
    if H.shape[0] == 1:
        return 0.0
    return float(H.max())


@dataclass(frozen=True)
class ChainProfile:
    stationary: np.ndarray
    period: int
    diameter: float
    mix_quarter: int


def profile(P) -> ChainProfile:
    tm = as_transition_matrix(P)
    return ChainProfile(
        stationary=tm.stationary,
        period=tm.period,
        diameter=diameter(tm),
        mix_quarter=mixing_time(tm, 0.25, periodic=tm.period > 1),
    )
