"""Economy loading, validation, serialization, and utility calculus."""

import numpy as np
import pytest

from awel import (ConfigError, QuadraticCobbDouglas, TildePrices,
                  ValidationError, check_survivability, economy_to_toml,
                  load_economy)
from awel.economy import AgentSpec, Economy
from awel.examples import BUILDERS, example_config_text, example_names

MINIMAL_CONFIG = """
goods = 1
scenarios = 1
contracts = 0
returns = [[[]]]

[bounds]
m = 4.0
M = 1.0

[[agents]]
endowment = [[1.0, 1.0]]

[agents.utility]
K = 5.7
lambda = [1.0, 1.0]
alpha = [[0.5, 0.5]]
"""


def _cd_agent(alpha, endowment, scenarios=1, **kw):
    goods = len(alpha)
    stages = scenarios + 1
    util = QuadraticCobbDouglas(
        satiation=kw.pop("satiation", 5.7),
        stage_weights=np.ones(stages),
        exponents=np.tile(np.asarray(alpha, float)[:, None], (1, stages)),
        **kw)
    return AgentSpec(util, np.asarray(endowment, float),
                     np.zeros((scenarios, goods, goods)),
                     np.zeros((goods, 0)), np.zeros((scenarios, goods, 0)))


def test_bde_example_structure():
    econ = BUILDERS["bde"]()
    assert econ.num_agents == 3
    assert econ.num_goods == 2
    assert econ.num_scenarios == 3
    assert econ.num_contracts == 2
    for xi in range(3):
        assert np.array_equal(econ.returns[xi], np.eye(2))
    u = econ.agents[0].utility
    assert u.satiation == 5.7
    assert np.allclose(u.exponents[:, 0], [0.25, 0.75])
    # one type-A agent, two type-B agents
    assert np.array_equal(econ.agents[1].endowment, econ.agents[2].endowment)
    assert not np.array_equal(econ.agents[0].endowment, econ.agents[1].endowment)


def test_minimal_economy_loads():
    econ = load_economy(MINIMAL_CONFIG)
    assert econ.num_goods == 1
    assert econ.num_scenarios == 1
    assert econ.num_contracts == 0
    assert econ.num_agents == 1
    assert econ.agents[0].activity_dim == 0


def test_alpha_column_sum_above_one_rejected():
    bad = MINIMAL_CONFIG.replace("alpha = [[0.5, 0.5]]", "alpha = [[1.2, 0.5]]")
    with pytest.raises(ValidationError):
        load_economy(bad)


def test_malformed_toml_rejected():
    with pytest.raises(ConfigError):
        load_economy("goods = [unclosed")


def test_missing_key_rejected():
    with pytest.raises(ConfigError):
        load_economy("goods = 1\nscenarios = 1\ncontracts = 0\n")


def test_bundled_configs_match_builders():
    for name in example_names():
        built = BUILDERS[name]()
        loaded = load_economy(example_config_text(name))
        assert loaded.num_agents == built.num_agents
        assert loaded.consumption_bound == built.consumption_bound
        assert np.array_equal(loaded.returns, built.returns)
        for a, b in zip(loaded.agents, built.agents):
            assert np.array_equal(a.endowment, b.endowment)
            assert np.array_equal(a.retention_carry, b.retention_carry)
            assert np.array_equal(a.utility.exponents, b.utility.exponents)
            assert a.utility.retention_weight == b.utility.retention_weight


def test_serialization_round_trip():
    for name in example_names():
        econ = BUILDERS[name]()
        back = load_economy(economy_to_toml(econ))
        assert back.num_goods == econ.num_goods
        assert np.array_equal(back.issue_cost, econ.issue_cost)
        assert np.array_equal(back.returns, econ.returns)
        for a, b in zip(back.agents, econ.agents):
            assert np.array_equal(a.endowment, b.endowment)
            assert np.array_equal(a.retention_carry, b.retention_carry)
            assert np.array_equal(a.home_input, b.home_input)
            assert np.array_equal(a.utility.stage_weights, b.utility.stage_weights)


def test_survivability_all_examples():
    for name in example_names():
        assert check_survivability(BUILDERS[name]()).all_pass, name


def test_survivability_zero_endowment_scenario():
    # zero endowment in a scenario with zero carry: c = w = 0 is feasible
    ag = _cd_agent([0.5], [[1.0, 0.0]])
    econ = Economy(num_goods=1, num_scenarios=1, num_contracts=0,
                   agents=(ag,), issue_cost=np.zeros((1, 0)),
                   returns=np.zeros((1, 1, 0)),
                   consumption_bound=4.0, contract_bound=1.0)
    assert check_survivability(econ).all_pass


def test_utility_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    util = QuadraticCobbDouglas(
        satiation=5.7, stage_weights=np.array([1.0, 1 / 3, 1 / 3, 1 / 3]),
        exponents=np.tile(np.array([[0.25], [0.5]]), (1, 4)),
        retention_weight=0.3)
    for _ in range(20):
        c = rng.uniform(0.2, 3.0, (2, 4))
        w = rng.uniform(0.2, 3.0, (2, 4))
        val, (gc, gw) = util.value_and_gradient(c, w)
        assert val == pytest.approx(util.value(c, w))
        h = 1e-6
        for arr, grad in ((c, gc), (w, gw)):
            for idx in np.ndindex(arr.shape):
                pert = arr.copy()
                pert[idx] += h
                up = util.value(pert if arr is c else c, pert if arr is w else w)
                pert[idx] -= 2 * h
                dn = util.value(pert if arr is c else c, pert if arr is w else w)
                fd = (up - dn) / (2 * h)
                scale = max(1.0, abs(fd))
                assert abs(grad[idx] - fd) <= 1e-5 * scale


def test_utility_hessian_matches_finite_differences():
    rng = np.random.default_rng(4)
    util = QuadraticCobbDouglas(
        satiation=5.7, stage_weights=np.array([1.0, 0.5]),
        exponents=np.tile(np.array([[0.25], [0.5]]), (1, 2)),
        retention_weight=0.2)
    c = rng.uniform(0.5, 2.0, (2, 2))
    w = rng.uniform(0.5, 2.0, (2, 2))
    hcc, hww, hcw = util.hessian_blocks(c, w)
    h = 1e-5
    for s in range(2):
        for l in range(2):
            cp = c.copy(); cp[l, s] += h
            cm = c.copy(); cm[l, s] -= h
            fd = (util.gradient(cp, w)[0] - util.gradient(cm, w)[0]) / (2 * h)
            assert np.allclose(hcc[s][:, l], fd[:, s], atol=1e-4)
            fdw = (util.gradient(cp, w)[1] - util.gradient(cm, w)[1]) / (2 * h)
            assert np.allclose(hcw[s][l, :], fdw[:, s], atol=1e-4)


def test_satiation_gap_clamps_smoothly():
    util = QuadraticCobbDouglas(
        satiation=1.0, stage_weights=np.array([1.0, 1.0]),
        exponents=np.full((1, 2), 1.0))
    w = np.zeros((1, 2))
    # well below the surface the quadratic penalty is exact
    assert util.value(np.array([[0.5, 0.25]]), w) == pytest.approx(
        -(0.5 ** 2 + 0.75 ** 2), abs=1e-8)
    # past the surface utility flattens out near its peak instead of
    # rewarding further consumption
    sat = util.value(np.array([[5.0, 9.0]]), w)
    assert -1e-4 < sat <= 0.0
    gc, _ = util.gradient(np.array([[5.0, 9.0]]), w)
    assert np.all(np.abs(gc) < 1e-8)
    # utility is nondecreasing along a ray through the surface
    grid = [util.value(np.array([[x, x]]), w) for x in np.linspace(0.1, 4.0, 80)]
    assert np.all(np.diff(grid) > -1e-12)


def test_tilde_prices_free_vector_round_trip():
    v = np.array([[1.0, 0.3, 0.4], [0.7, 0.2, 0.1]])
    p = TildePrices(v)
    free = p.free_vector()
    # stage-major ordering: stage-0 rest, then scenario columns
    assert np.array_equal(free, [0.7, 0.3, 0.2, 0.4, 0.1])
    back = TildePrices.from_free_vector(free, v.shape)
    assert np.array_equal(back.values, v)
    assert np.array_equal(TildePrices.flat_order(v), [1.0, 0.7, 0.3, 0.2, 0.4, 0.1])


def test_tilde_prices_validation():
    with pytest.raises(ValidationError):
        TildePrices(np.array([[0.9, 0.3], [0.7, 0.2]]))  # (0,0) not 1
    with pytest.raises(ValidationError):
        TildePrices(np.array([[1.0, -0.3], [0.7, 0.2]]))
    with pytest.raises(ValidationError):
        TildePrices(np.array([1.0, 0.5]))  # not a matrix
