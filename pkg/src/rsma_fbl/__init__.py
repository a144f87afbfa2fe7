"""Max-min fair rate-splitting precoding under finite-blocklength rate penalties."""

__version__ = "0.1.0"

from .channels import ChannelSet, derive_seed, load_ensemble, sample_channels, sample_ensemble, save_ensemble
from .fbl import FblParams, dispersion, fbl_rate, q_func, q_inv
from .model import ConfigError, Solution, SystemConfig, load_config, save_config, validate
from .strategies import (
    StrategyRun,
    evaluate_inf_fin,
    solve,
    solve_crsma,
    solve_noma,
    solve_rsma,
    solve_sdma,
)

__all__ = [
    "ChannelSet", "ConfigError", "FblParams", "Solution", "StrategyRun", "SystemConfig",
    "derive_seed", "dispersion", "evaluate_inf_fin", "fbl_rate", "load_config", "load_ensemble",
    "q_func", "q_inv", "sample_channels", "sample_ensemble", "save_config", "save_ensemble",
    "solve", "solve_crsma", "solve_noma", "solve_rsma", "solve_sdma", "validate",
]
