"""Outer-loop components: dual step, price step, schedules, and traces."""

import numpy as np
import pytest

from awel import (AugmentedParams, DualWeights, ExcessSupplyReport,
                  SolverConfig, TildePrices, ValidationError, default_start,
                  get_example, is_epsilon_equilibrium, write_trace_csv)
from awel.market import envelope_term
from awel.solver import _residual_norm, phase1, phase2, trace_header

from conftest import REF_EC, REF_ES


def _report(es, ec):
    es = np.asarray(es, float)
    p = np.full(es.shape, 0.5)
    p[0, 0] = 1.0
    return ExcessSupplyReport(es=es, financial_imbalance=np.asarray(ec, float),
                              per_agent=(), price_used=TildePrices(p))


def test_phase1_no_shortage_gives_zero_duals():
    rep = _report([[0.0, 0.2], [0.1, 0.3]], [0.0])
    g = phase1(rep, AugmentedParams(1.0, 1.0, 10.0))
    assert np.array_equal(g.values, np.zeros((2, 2)))


def test_phase1_bang_bang():
    es = np.full((2, 2), 0.3)
    es[1, 0] = -0.5
    rep = _report(es, [0.0])
    g = phase1(rep, AugmentedParams(1.0, 1.0, 10.0))
    expected = np.zeros((2, 2))
    expected[1, 0] = 10.0
    assert np.array_equal(g.values, expected)


def test_phase1_matches_grid_minimization():
    # per coordinate, the dual step must minimize the envelope term over
    # g in [0, K]; certify against a grid search with a numeric inner
    # minimization over the prox variable
    rng = np.random.default_rng(21)
    K, r = 10.0, 0.7
    params = AugmentedParams(1.0, r, K)
    g_grid = np.linspace(0.0, K, 101)
    u_grid = np.linspace(0.0, K + r * 2.0 + 1.0, 201)
    for _ in range(500):
        es = rng.uniform(-1.5, 1.5, (2, 2))
        rep = _report(es, [0.0])
        g = phase1(rep, params).values
        for (l, s), e in np.ndenumerate(es):
            if (l, s) == (0, 0):
                assert g[l, s] == 0.0
                continue
            inner = (u_grid[None, :] * e
                     + (g_grid[:, None] - u_grid[None, :]) ** 2 / (2 * r))
            grid_min = inner.min(axis=1).min()
            chosen = float(envelope_term(e, g[l, s], r))
            assert chosen <= grid_min + 1e-3


def test_phase1_infimum_limit_small_r():
    # as r vanishes the minimized envelope approaches the exact infimum
    rng = np.random.default_rng(22)
    K, r = 5.0, 1e-9
    for _ in range(500):
        es = rng.uniform(-1.0, 1.0, (2, 2))
        ec = rng.uniform(-0.5, 0.5, 2)
        rep = _report(es, ec)
        g = phase1(rep, AugmentedParams(1.0, r, K)).values
        phi = np.asarray(envelope_term(es, np.where(es < 0, K, 0.0), r))
        phi[0, 0] = 0.0
        val = float(phi.sum()) - float(ec @ ec)
        from awel import infimum_walrasian
        assert val == pytest.approx(infimum_walrasian(rep, 1.0, K), abs=1e-6)
        assert np.all(g[es >= 0] == 0.0)


def test_is_epsilon_equilibrium_reference_snapshot():
    rep = _report(REF_ES, REF_EC)
    assert is_epsilon_equilibrium(rep, 0.1)
    assert not is_epsilon_equilibrium(rep, 0.01)
    assert is_epsilon_equilibrium(_report(np.zeros((2, 2)), [0.0]), 1e-9)
    with pytest.raises(ValidationError):
        is_epsilon_equilibrium(rep, 0.0)


def test_solver_config_validation():
    with pytest.raises(ValidationError):
        SolverConfig(epsilon=-1.0)
    with pytest.raises(ValidationError):
        SolverConfig(r0=1.0, r_max=0.5)
    with pytest.raises(ValidationError):
        SolverConfig(smoothing_decay=1.5)
    with pytest.raises(ValidationError):
        SolverConfig(max_outer_iters=0)


def test_default_start_shape(bde_econ):
    p = default_start(bde_econ)
    assert p.shape == bde_econ.price_shape
    assert p.values[0, 0] == 1.0
    assert np.allclose(p.values[:, 1:], 1.0 / bde_econ.num_scenarios)


def test_phase2_reduces_residual(bde_econ, bde_result):
    # perturb the solved prices; one pass must fall back toward clearing
    v = bde_result.p_tilde.values.copy()
    v[1, 1] += 0.05
    start = TildePrices(v)
    params = AugmentedParams(1.0, 1.0, 4.0)
    g = DualWeights.zeros(bde_econ.price_shape)
    out = phase2(bde_econ, g, params, start, budget=210, agent_tol=1e-6)
    from awel import aggregate_excess_supply
    start_rep = aggregate_excess_supply(bde_econ, start, agent_tol=1e-6,
                                        best_effort=True)
    assert out.report is not None
    assert _residual_norm(out.report) < _residual_norm(start_rep)
    assert out.evaluations >= 1


def test_phase2_budget_validation(bde_econ):
    params = AugmentedParams(1.0, 1.0, 4.0)
    g = DualWeights.zeros(bde_econ.price_shape)
    with pytest.raises(ValidationError):
        phase2(bde_econ, g, params, default_start(bde_econ), budget=1)


def test_schedules_nondecreasing_and_capped(bde_result):
    rs = [rec.r_used for rec in bde_result.trace]
    ks = [rec.k_used for rec in bde_result.trace]
    cfg = SolverConfig()
    assert all(a <= b for a, b in zip(rs, rs[1:]))
    assert all(a <= b for a, b in zip(ks, ks[1:]))
    assert rs[-1] <= cfg.r_max and ks[-1] <= cfg.k_max
    assert rs[0] == cfg.r0 and ks[0] == cfg.k0
    assert [rec.iteration for rec in bde_result.trace] == list(range(1, len(rs) + 1))


def test_trace_csv_format(tmp_path, bde_result):
    path = tmp_path / "trace.csv"
    write_trace_csv(bde_result.trace, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == trace_header((2, 4))
    assert lines[0].startswith("iter,r,K,wall_s,w_value,inf_w,ec_norm,ptilde_0_0")
    assert len(lines) == 1 + bde_result.iterations
    first = lines[1].split(",")
    assert len(first) == len(lines[0].split(","))
    assert first[0] == "1"
    assert float(first[3]) == 0.0  # timing zeroed for reproducibility


def test_write_trace_rejects_empty(tmp_path):
    with pytest.raises(ValidationError):
        write_trace_csv((), tmp_path / "t.csv")


def test_solver_rejects_mismatched_start(bde_econ):
    with pytest.raises(ValidationError):
        from awel import solve_equilibrium
        solve_equilibrium(bde_econ, SolverConfig(),
                          start=TildePrices(np.array([[1.0, 0.5]])))


def test_final_report_certifies(bde_result):
    assert bde_result.converged
    assert is_epsilon_equilibrium(bde_result.final_report, 1e-2)
    assert bde_result.recovered is not None
