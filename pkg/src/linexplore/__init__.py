"""Exploration for episodic MDPs whose optimal Q-function is linear in known features.

Agents (LinUCB, LinPSRL, BDQN-lite, hypothesis-set PSRL and epsilon-greedy /
Boltzmann baselines), exact tabular simulators, pseudo-regret accounting and
Monte-Carlo checks of the concentration lemmas behind the agents.
"""

__version__ = "0.1.0"

from .agents import (
    BdqnLiteAgent,
    EpsilonGreedyAgent,
    HypothesisSetPsrl,
    LinPsrlAgent,
    LinUcbAgent,
)
from .env import (
    EnvSpec,
    build_environment,
    make_chain_mdp,
    make_maze_mdp,
    make_random_mdp,
)
from .estimator import RidgeState, bar_rho, blr_posterior, confidence_radius
from .harness import (
    RegretLedger,
    RunConfig,
    run_experiment,
    run_single,
    sublinearity_diagnostic,
)

__all__ = [
    "BdqnLiteAgent",
    "EnvSpec",
    "EpsilonGreedyAgent",
    "HypothesisSetPsrl",
    "LinPsrlAgent",
    "LinUcbAgent",
    "RegretLedger",
    "RidgeState",
    "RunConfig",
    "bar_rho",
    "blr_posterior",
    "build_environment",
    "confidence_radius",
    "make_chain_mdp",
    "make_maze_mdp",
    "make_random_mdp",
    "run_experiment",
    "run_single",
    "sublinearity_diagnostic",
]
