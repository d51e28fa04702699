from .fit import LinearFit, efficiency, fit_scaling, ols
from .oracle import OracleInput, OracleResult, oracle_simulate
from .runner import ClipStats, RunReport, run_clip, run_scenario
from .scenario import SCENARIOS, Scenario, equal_cost, paper_table3, resolve_scenario, uniform_scaling

__all__ = [
    "SCENARIOS",
    "ClipStats",
    "LinearFit",
    "OracleInput",
    "OracleResult",
    "RunReport",
    "Scenario",
    "efficiency",
    "equal_cost",
    "fit_scaling",
    "ols",
    "oracle_simulate",
    "paper_table3",
    "resolve_scenario",
    "run_clip",
    "run_scenario",
    "uniform_scaling",
]
