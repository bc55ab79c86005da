"""Tabular reward tweaking: surrogate rewards that let short-sighted discounts recover total-return-optimal policies."""
from .adaptive_loop import LoopConfig, LoopLog, run, run_baseline
from .environments import (
    PuddleLayout,
    make_chain_fixture,
    make_chain_mdp,
    make_four_state_mdp,
    make_layered_mdp,
    make_puddle_world,
    make_random_mdp,
)
from .exact_surrogate import (
    build_theorem1_reward,
    build_theorem2_reward,
    check_scale_invariance,
    gamma_zero_counterexample,
    verify_order_preservation,
)
from .mdp_core import (
    DimensionError,
    FiniteHorizonMdp,
    InvalidMdpError,
    NonStationaryPolicy,
    SurrogateReward,
    Trajectory,
    ValueTable,
    evaluate_policy,
    find_gamma_crit,
    sample_trajectory,
    solve_optimal,
    total_return,
)
from .ranking_learner import LinearRewardModel, NoPreferenceSignal, ReplayBuffer, featurize, to_surrogate, train_epoch
from .robustness_lab import PerturbationSpec, check_bound, perturb_kernel, simulation_gap
from .serialization import canonical_puddle_layout, load_mdp, save_mdp

__all__ = [name for name in dir() if not name.startswith("_")]
