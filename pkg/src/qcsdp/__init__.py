"""Moment relaxations of two-prover games and rounding to approximately commuting strategies."""
from .games import (CspInstance, Game, Strategy, chsh, chsh_optimal_strategy, classical_value,
                    commutator_report, dilate_to_projective, honest_strategy, oracularize,
                    random_game, strategy_value, trivial_game)
from .hierarchy import MomentProblem, build_level, constraint_audit, reduce_problem
from .solver import SdpSolution, extract_gram, solve
from .rounding import round_solution, rounding_pipeline, study_convergence, verify_commutators, \
    verify_identities, verify_value
from .extraction import marginals, sample_assignment, soundness_check

__all__ = [
    "CspInstance", "Game", "Strategy", "chsh", "chsh_optimal_strategy", "classical_value",
    "commutator_report", "dilate_to_projective", "honest_strategy", "oracularize",
    "random_game", "strategy_value", "trivial_game", "MomentProblem", "build_level",
    "constraint_audit", "reduce_problem", "SdpSolution", "extract_gram", "solve",
    "round_solution", "rounding_pipeline", "study_convergence", "verify_commutators",
    "verify_identities", "verify_value", "marginals", "sample_assignment", "soundness_check",
]
