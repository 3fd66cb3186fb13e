"""Optimality-preserving intrinsic reward shaping for finite MDPs.

Modules:
    mdp: finite-horizon MDPs and exact solvers.
    environments: bundled small MDPs and rollouts.
    intrinsic: history-dependent intrinsic reward generators.
    shaping: streaming shaping transforms (PBIM, GRM, PIES, ADOPS, ADOPES).
    oracle: exact certification of optimal-policy preservation.
    learner: tabular actor-critic and Q-learning.
    experiment, cli: config-driven runs and the ``opshape`` command.
"""
from .environments import EnvSpec, build_env, rollout
from .intrinsic import IMConfig, build_im, count_bonus, prediction_error_bonus
from .learner import (Critic, LearningCurve, TrainConfig, TrainingAborted, exact_critic_snapshot, td_sweep,
                      train)
from .mdp import (Mdp, discounted_return, optimal_action_set, policy_evaluation, value_iteration)
from .oracle import (OptimalityReport, build_augmented, check_optimality_preserved, compute_v_star_i,
                     grm_inexpressibility_check, is_unstable, optimal_policy_set_bruteforce)
from .shaping import (AdopsInputs, EpisodeLedger, MatchingFunction, ShaperConfig, ShapingEvent,
                      ZetaSchedule, adopes_step, adops_f2, check_matching, grm_delay_step,
                      grm_general_step, make_shaper, omega_decomposition, pbim_step, pies_update,
                      shaped_reward)

__all__ = [
    "AdopsInputs", "Critic", "EnvSpec", "EpisodeLedger", "IMConfig", "LearningCurve",
    "MatchingFunction", "Mdp", "OptimalityReport", "ShaperConfig", "ShapingEvent", "TrainConfig",
    "TrainingAborted", "ZetaSchedule", "adopes_step", "adops_f2", "build_augmented", "build_env",
    "build_im", "check_matching", "check_optimality_preserved", "compute_v_star_i", "count_bonus",
    "discounted_return", "exact_critic_snapshot", "grm_delay_step", "grm_general_step",
    "grm_inexpressibility_check", "is_unstable", "make_shaper", "omega_decomposition",
    "optimal_action_set", "optimal_policy_set_bruteforce", "pbim_step", "pies_update",
    "policy_evaluation", "prediction_error_bonus", "rollout", "shaped_reward", "td_sweep", "train",
    "value_iteration",
]
