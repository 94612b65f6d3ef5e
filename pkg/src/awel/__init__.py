"""Equilibrium solver for two-stage exchange economies with financial markets."""

from .agent import AgentSolution, AgentSolverError, solve_agent
from .economy import (Economy, AgentSpec, QuadraticCobbDouglas, TildePrices,
                      UtilityFunction, ConfigError, ValidationError,
                      load_economy, load_economy_file, economy_to_toml,
                      check_survivability)
from .examples import example_names, get_example
from .market import (AugmentedParams, DualWeights, ExcessSupplyReport,
                     aggregate_excess_supply, augmented_walrasian,
                     infimum_walrasian, walrasian)
from .noarb import (RecoveredPrices, ZeroStatePriceError, check_no_arbitrage,
                    recover_prices)
from .solver import (EquilibriumResult, SolverConfig, default_start,
                     is_epsilon_equilibrium, solve_equilibrium,
                     write_trace_csv)

__all__ = [
    "Economy", "AgentSpec", "QuadraticCobbDouglas", "TildePrices",
    "UtilityFunction", "ConfigError", "ValidationError",
    "load_economy", "load_economy_file", "economy_to_toml",
    "check_survivability",
    "AgentSolution", "AgentSolverError", "solve_agent",
    "AugmentedParams", "DualWeights", "ExcessSupplyReport",
    "aggregate_excess_supply", "augmented_walrasian", "infimum_walrasian",
    "walrasian",
    "RecoveredPrices", "ZeroStatePriceError", "check_no_arbitrage",
    "recover_prices",
    "EquilibriumResult", "SolverConfig", "default_start",
    "is_epsilon_equilibrium", "solve_equilibrium", "write_trace_csv",
    "example_names", "get_example",
]

__version__ = "0.1.0"
