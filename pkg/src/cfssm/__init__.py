"""Particle filtering with online latent-structure selection (cognitive flexibility)."""
from .bench import MethodId, RunResult, SummaryRow, monte_carlo, phi_bar, rmse, run_method
from .cf import (
    CFConfig,
    CFState,
    CFStepDiagnostics,
    cf_step,
    phi_score,
    select_structure,
    switch_rate,
    windowed_score,
)
from .core import (
    Belief,
    CFSSMError,
    DegenerateLikelihoodError,
    InvalidParameterError,
    ModelBank,
    NoViableStructureError,
    NumericOverflowError,
    RngStreams,
    Structure,
    belief_mean,
    effective_sample_size,
    gaussian_logpdf,
    normalize_log_weights,
)
from .imm import IMMConfig, IMMState, imm_estimate, imm_step
from .models import Scenario, UnknownScenarioError, build_scenario, simulate_truth
from .pf import bayes_update, innovation_likelihood, pf_step, predict, resample_systematic

__version__ = "0.1.0"
