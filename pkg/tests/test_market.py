"""Clearing objective, proximal envelope, and aggregate reports."""

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from awel import (AugmentedParams, DualWeights, ExcessSupplyReport,
                  TildePrices, aggregate_excess_supply, augmented_walrasian,
                  get_example, infimum_walrasian, walrasian)
from awel.market import envelope_term

from conftest import REF_EC, REF_ES


def _report(es, ec):
    es = np.asarray(es, float)
    p = np.full(es.shape, 0.5)
    p[0, 0] = 1.0
    return ExcessSupplyReport(es=es, financial_imbalance=np.asarray(ec, float),
                              per_agent=(), price_used=TildePrices(p))


def _numeric_envelope(e, g, r):
    """1-D oracle: inf over u >= 0 of u*e + (g - u)**2 / (2 r)."""
    ub = abs(g) + r * abs(e) + 1.0
    res = minimize_scalar(lambda u: u * e + (g - u) ** 2 / (2 * r),
                          bounds=(0.0, ub), method="bounded",
                          options={"xatol": 1e-12})
    corner = g * g / (2 * r)  # u = 0 endpoint
    return min(float(res.fun), corner)


def test_envelope_closed_form_vs_numeric_oracle():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        e = rng.uniform(-2.0, 2.0)
        g = rng.uniform(0.0, 5.0)
        r = rng.uniform(0.1, 10.0)
        assert abs(float(envelope_term(e, g, r)) - _numeric_envelope(e, g, r)) <= 1e-8


def test_envelope_specific_value():
    # e = -1, g = 0, r = 1: prox point stays nonnegative, value -0.5... the
    # interior branch applies since 0 >= -1
    assert float(envelope_term(-1.0, 0.0, 1.0)) == pytest.approx(-0.5)


def test_envelope_r_to_zero_recovers_bilinear():
    rng = np.random.default_rng(12)
    e = rng.uniform(-2.0, 2.0, 50)
    g = rng.uniform(0.0, 5.0, 50)
    assert np.allclose(envelope_term(e, g, 1e-9), g * e, atol=1e-6)


def test_walrasian_zero_duals():
    rep = _report([[0.1, -0.2], [0.3, 0.4]], [0.5, -0.25])
    rho = 2.0
    expected = -rho * (0.5 ** 2 + 0.25 ** 2)
    assert walrasian(rep, DualWeights.zeros((2, 2)), rho) == pytest.approx(expected)


def test_walrasian_unit_dual():
    rep = _report([[0.1, -0.2], [0.3, 0.4]], [0.5, 0.0])
    g = np.zeros((2, 2))
    g[1, 1] = 1.0
    val = walrasian(rep, DualWeights(g), 1.0)
    assert val == pytest.approx(0.4 - 0.25)


def test_walrasian_ignores_numeraire_coordinate():
    rep = _report([[5.0, 0.0], [0.0, 0.0]], [0.0])
    g = np.ones((2, 2))
    assert walrasian(rep, DualWeights(g), 1.0) == pytest.approx(0.0)


def test_augmented_below_walrasian():
    rng = np.random.default_rng(13)
    for _ in range(50):
        rep = _report(rng.uniform(-1, 1, (2, 3)), rng.uniform(-1, 1, 2))
        g = DualWeights(rng.uniform(0, 4, (2, 3)))
        r = rng.uniform(0.05, 5.0)
        params = AugmentedParams(1.0, r, 4.0)
        assert augmented_walrasian(rep, g, params) <= walrasian(rep, g, 1.0) + 1e-12


def test_augmented_nonincreasing_in_r():
    rng = np.random.default_rng(14)
    rep = _report(rng.uniform(-1, 1, (2, 3)), rng.uniform(-1, 1, 2))
    g = DualWeights(rng.uniform(0, 4, (2, 3)))
    values = [augmented_walrasian(rep, g, AugmentedParams(1.0, r, 4.0))
              for r in (0.01, 0.1, 1.0, 10.0, 100.0)]
    assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


def test_augmented_convex_in_duals():
    rng = np.random.default_rng(15)
    rep = _report(rng.uniform(-1, 1, (2, 3)), rng.uniform(-1, 1, 2))
    params = AugmentedParams(1.0, 0.7, 4.0)
    for _ in range(30):
        ga = rng.uniform(0, 4, (2, 3))
        gb = rng.uniform(0, 4, (2, 3))
        lam = rng.uniform()
        mid = augmented_walrasian(rep, DualWeights(lam * ga + (1 - lam) * gb), params)
        chord = (lam * augmented_walrasian(rep, DualWeights(ga), params)
                 + (1 - lam) * augmented_walrasian(rep, DualWeights(gb), params))
        assert mid <= chord + 1e-12


def test_infimum_equilibrium_certificate():
    rep = _report([[0.0, 0.2], [0.1, 0.0]], [0.0, 0.0])
    assert infimum_walrasian(rep, 1.0, 10.0) == 0.0


def test_infimum_single_shortage():
    es = np.full((2, 2), 0.5)
    es[1, 1] = -0.1
    rep = _report(es, [0.0])
    assert infimum_walrasian(rep, 1.0, 10.0) == pytest.approx(-1.0)


def test_infimum_sampling_oracle():
    rng = np.random.default_rng(16)
    for _ in range(10):
        rep = _report(rng.uniform(-1, 1, (2, 3)), rng.uniform(-0.5, 0.5, 2))
        K = 10.0
        closed = infimum_walrasian(rep, 1.0, K)
        es = rep.es.copy()
        es[0, 0] = 0.0
        samples = rng.uniform(0, K, (100000, 6))
        vals = samples @ es.T.ravel() - rep.ec_norm ** 2
        assert vals.min() >= closed - 1e-9
        # the bang-bang corner attains the infimum
        corner = np.where(es.T.ravel() < 0, K, 0.0)
        assert corner @ es.T.ravel() - rep.ec_norm ** 2 == pytest.approx(closed)


def test_reference_excess_supply(table1_report):
    assert np.allclose(table1_report.es, REF_ES, atol=2e-2)
    assert np.allclose(table1_report.financial_imbalance, REF_EC, atol=5e-2)


def test_walrasian_all_ones_matches_reference_arithmetic(table1_report):
    g = DualWeights(np.ones((2, 4)))
    val = walrasian(table1_report, g, 1.0)
    expected = REF_ES.sum() - REF_ES[0, 0] - (REF_EC @ REF_EC)
    assert val == pytest.approx(expected, abs=0.1)


def test_scenario_symmetric_economy_reports_symmetric_es():
    econ = get_example("sch-sym")
    p = np.array([[1.0, 0.3, 0.3, 0.3], [0.8, 0.25, 0.25, 0.25]])
    rep = aggregate_excess_supply(econ, TildePrices(p), agent_tol=1e-8)
    for xi in (2, 3):
        assert np.allclose(rep.es[:, 1], rep.es[:, xi], atol=1e-6)


def test_single_agent_single_good_autarky():
    # a lone agent exhausts each stage budget on the only good, so the
    # market clears exactly at any strictly positive prices
    from awel.economy import AgentSpec, Economy, QuadraticCobbDouglas
    util = QuadraticCobbDouglas(satiation=50.0, stage_weights=np.ones(2),
                                exponents=np.full((1, 2), 0.5))
    ag = AgentSpec(util, np.array([[2.0, 1.0]]), np.zeros((1, 1, 1)),
                   np.zeros((1, 0)), np.zeros((1, 1, 0)))
    econ = Economy(num_goods=1, num_scenarios=1, num_contracts=0,
                   agents=(ag,), issue_cost=np.zeros((1, 0)),
                   returns=np.zeros((1, 1, 0)),
                   consumption_bound=10.0, contract_bound=1.0)
    rep = aggregate_excess_supply(econ, TildePrices(np.array([[1.0, 0.7]])),
                                  agent_tol=1e-9)
    assert np.allclose(rep.es, 0.0, atol=1e-7)


def test_aggregate_walras_law(table1_report):
    # summing the (active) budget constraints: p.ES equals q.EC
    from awel.noarb import contract_values
    econ = get_example("bde")
    p = table1_report.price_used
    q = contract_values(econ, p)
    total = float(np.sum(p.values * table1_report.es))
    assert abs(total - q @ table1_report.financial_imbalance) <= 1e-6
