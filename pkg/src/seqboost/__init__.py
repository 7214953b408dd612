"""Boosted sequential tests: SPRTs, confidence sequences, audits and conformal martingales."""

from .process import (
    Level,
    Mode,
    ProcessState,
    Status,
    StopDecision,
    StopRule,
    decision,
    reaches_cap,
    step,
    truncate_one_sided,
    truncate_two_sided,
)
from .models import (
    BernoulliLRModel,
    ContinuousFactorModel,
    DiscreteFactorModel,
    FactorModel,
    GaussianLRModel,
    plugin_theta,
    truncated_expectation,
    truncated_expectation_one_sided,
    truncated_expectation_two_sided,
)
from .solver import (
    BoostResult,
    CoupledBoostResult,
    boost_batch,
    closed_form_binary_boost,
    coupled_boost_batch,
    solve_boost_coupled,
    solve_boost_one_sided,
    solve_boost_two_sided,
)
from .sprt import (
    Decision,
    TestOutcome,
    futility_randomization,
    randomized_futility_accept,
    run_baseline,
    run_power_one_boosted,
    run_power_one_plugin,
    run_two_sided_boosted,
    run_two_sided_fixed_nu,
    simulate_power_one,
    simulate_power_one_plugin,
    simulate_two_sided,
)
from .confseq import ConfSeqConfig, boosted_lower_bound, boosted_upper_bound, confidence_sequence, robbins_bound
from .wor import conditional_mean, read_population, rilacs_bet, run_wor_boosted, simulate_wor
from .conformal import (
    ConformalConfig,
    DistanceToMean,
    NonconformityMeasure,
    PowerBetModel,
    conformal_p,
    power_bet,
    run_conformal_boosted,
    simulate_conformal,
    solve_conformal_boost,
)
from .simkit import PRESETS, ExperimentPreset, TrialRecord, emit_csv, importance_sampling_type1, run_preset

__version__ = "0.1.0"
