"""Learning in restless bandits with hidden Markov arms.

Modules
-------
chain
    Finite Markov chain analysis (stationary laws, periods, mixing and hitting times).
env
    Restless bandit simulator with seeded, action-independent arm trajectories.
structured
    Meta-state MDP over last observed states and time since last pull, with colouring.
solver
    Relative and extended value iteration, diameters, exact policy evaluation.
learner
    Colored UCRL2, its horizon-free wrappers and known-model baselines.
harness
    Scenario files, replication grids, regret computation and the command line.
"""
from .chain import TransitionMatrix, mixing_time, stationary_distribution
from .env import ArmSpec, BanditInstance, RestlessBandit, reset
from .learner import LearnerConfig, run_colored_ucrl2
from .mdp import Mdp
from .structured import build_structured_mdp
from .solver import extended_value_iteration, relative_value_iteration

__all__ = [
    "ArmSpec",
    "BanditInstance",
    "LearnerConfig",
    "Mdp",
    "RestlessBandit",
    "TransitionMatrix",
    "build_structured_mdp",
    "extended_value_iteration",
    "mixing_time",
    "relative_value_iteration",
    "reset",
    "run_colored_ucrl2",
    "stationary_distribution",
]

__version__ = "0.1.0"
