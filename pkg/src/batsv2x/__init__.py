"""Two-phase vehicular content distribution with batched sparse (BATS) codes."""

from .config import SimConfig, load_config
from .harness import EXPERIMENTS, TrialResult, baseline_block_rlnc, dynamics_experiment, run_experiment, run_trial

__all__ = [
    "EXPERIMENTS", "SimConfig", "TrialResult", "baseline_block_rlnc", "dynamics_experiment",
    "load_config", "run_experiment", "run_trial",
]
__version__ = "0.1.0"
