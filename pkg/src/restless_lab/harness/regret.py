"""Regret against the aggregated-MDP oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import chain
from ..env import BanditInstance
from ..solver import mdp_diameter, relative_value_iteration
from ..structured import StateSpaceTooLarge, StructuredMdp, build_structured_mdp
from ..trace import RegretTrace


class OracleError(RuntimeError):
    pass


def arm_periods(instance: BanditInstance, periodic: bool) -> tuple:
    if not periodic:
        return (1,) * instance.n_arms
    return tuple(arm.P.period for arm in instance.arms)


def arm_caps(instance: BanditInstance, eps: float, periodic: bool = False) -> tuple:
    """Per-arm aggregation caps ``T_mix^j(eps)``."""
    return tuple(chain.mixing_time(arm.P, eps, periodic=periodic) for arm in instance.arms)


def _distance_at(P, t: int, periodic: bool) -> float:
    if periodic:
        return chain.periodic_variation_distance_at(P, t)
    return chain.variation_distance_at(P, t)


@dataclass
class Oracle:
    """Optimal gain on the ``eps``-aggregated MDP plus its certified slack."""

    rho_star: float
    tolerance: float
    d_eps: float | None
    eps: float
    caps: tuple
    periods: tuple
    mdp: StructuredMdp
    policy: np.ndarray


def build_oracle(instance: BanditInstance, eps_oracle: float = 1e-3, periodic: bool = False,
                 *, with_diameter: bool = True, size_limit: int = 10**6) -> Oracle:
    """Solve the aggregated MDP with relative value iteration.

    The gain of the aggregated MDP may differ from the T-step optimum by at
    most ``eps * (D_eps + 2)``; that amount is reported as ``tolerance``
    (infinite when the diameter is not computed).
    """
    periods = arm_periods(instance, periodic)
    caps = arm_caps(instance, eps_oracle, periodic)
    try:
        mdp = build_structured_mdp(instance.arms, caps, periods=periods, epsilon=eps_oracle,
                                   initial=instance.initial, size_limit=size_limit, validate=False)
    except StateSpaceTooLarge as exc:
        raise OracleError(f"{exc}; try a larger eps_oracle") from None
    res = relative_value_iteration(mdp)
    d_eps = mdp_diameter(mdp) if with_diameter else None
    # the distance actually reached at the caps; 0 means the aggregation is exact
    dist = max(_distance_at(arm.P, c, periodic) for arm, c in zip(instance.arms, caps))
    if dist == 0.0:
        tol = 0.0
    elif d_eps is not None and math.isfinite(d_eps):
        tol = dist * (d_eps + 2.0)
    else:
        tol = math.inf
    return Oracle(res.gain, tol + res.gain_tolerance, d_eps, eps_oracle, caps, periods, mdp, res.policy)


def compute_regret(trace: RegretTrace, instance: BanditInstance | None = None, eps_oracle: float = 1e-3,
                   *, oracle: Oracle | None = None, periodic: bool = False) -> RegretTrace:
    """Attach ``rho*`` (and its tolerance) from the oracle to ``trace``."""
    if oracle is None:
        if instance is None:
            raise ValueError("compute_regret needs an instance or a prebuilt oracle")
        oracle = build_oracle(instance, eps_oracle, periodic)
    return trace.with_oracle(oracle.rho_star, oracle.tolerance)
