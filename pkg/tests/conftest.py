"""Shared fixtures.

The expensive artifacts (full equilibrium solves, the reference-price
market report) are session-scoped so each is computed once per run.
"""

import numpy as np
import pytest

from awel import SolverConfig, TildePrices, get_example, solve_equilibrium
from awel.cli import certified_report

# Reference reduced prices for the three-agent two-good example, and the
# allocations/market quantities reported at those prices (goods x stages;
# consumption entries ordered good-major within each stage).
REF_PTILDE = np.array([
    [1.0000, 0.2887, 0.3171, 0.3272],
    [0.7548, 0.2222, 0.2286, 0.2141],
])
REF_C_A = np.array([
    [0.605, 0.758, 0.744, 0.677],
    [2.406, 2.956, 3.094, 3.105],
])
REF_C_B = np.array([
    [1.726, 2.365, 2.109, 1.897],
    [0.762, 1.024, 0.975, 0.966],
])
REF_ES = np.array([
    [-0.058, 0.011, 0.038, 0.028],
    [0.069, -0.004, -0.044, -0.038],
])
REF_Z_A = np.array([-6.304, 10.481])
REF_Z_B = np.array([3.162, -5.259])
REF_EC = np.array([0.020, -0.037])
REF_Q = np.array([0.9330, 0.6650])

# A second published solution of the same economy (the one our solver's
# exact clearing point tracks most closely).
ALT_PTILDE = np.array([
    [1.0000, 0.2890, 0.3056, 0.3256],
    [0.7375, 0.2259, 0.2193, 0.2159],
])
ALT_Q = np.array([0.9203, 0.6611])


@pytest.fixture(scope="session")
def bde_econ():
    return get_example("bde")


@pytest.fixture(scope="session")
def table1_report(bde_econ):
    """Market report at the reference reduced prices."""
    return certified_report(bde_econ, TildePrices(REF_PTILDE))


@pytest.fixture(scope="session")
def bde_result(bde_econ):
    return solve_equilibrium(bde_econ, SolverConfig(epsilon=1e-2))


@pytest.fixture(scope="session")
def sch_endow_result():
    return solve_equilibrium(get_example("sch-endow"), SolverConfig(epsilon=1e-2))


@pytest.fixture(scope="session")
def sch_sym_result():
    return solve_equilibrium(get_example("sch-sym"), SolverConfig(epsilon=1e-2))
