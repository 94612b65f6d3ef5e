"""Bundled example economies.

Four ready-to-solve economies ship with the package as TOML configs
under ``examples_data/``:

- ``bde``: a 3-agent, 2-good, 3-scenario exchange economy with two
  identity-payoff contracts; one type-A agent and two type-B agents.
- ``sch-endow``: the same economy with type A's endowment substituted,
  shifting wealth toward the second stage.
- ``sch-sym``: a two-agent variant whose aggregate endowment is the
  same constant in every good and stage, so equilibrium prices are
  identical across scenarios.
- ``big5``: a larger economy with 5 agents, 6 goods, 3 scenarios,
  5 forward contracts, retention carried by identity matrices, and a
  small retention utility weight.

The ``big5`` endowments carry a random scenario tilt drawn once from
U(0, 0.1) with ``numpy.random.default_rng(0)`` and stored as literal
numbers in the config, so every install sees identical data.  Configs
are the source of truth; ``get_example`` parses them through the
regular loader.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .economy import Economy, ValidationError, load_economy

_DESCRIPTIONS = {
    "bde": "3 agents, 2 goods, 3 scenarios, 2 identity-payoff contracts",
    "sch-endow": "bde with type A's endowment shifted toward the second stage",
    "sch-sym": "2 agents, constant aggregate endowment; scenario-symmetric prices",
    "big5": "5 agents, 6 goods, 3 scenarios, 5 forward contracts, retention",
}


def example_names():
    """Bundled example names in a fixed, deterministic order."""
    return tuple(_DESCRIPTIONS)


def example_description(name: str) -> str:
    _require(name)
    return _DESCRIPTIONS[name]


def example_config_text(name: str) -> str:
    """Raw TOML text of a bundled example config."""
    _require(name)
    ref = resources.files(__package__) / "examples_data" / f"{name}.toml"
    return ref.read_text(encoding="utf-8")


def get_example(name: str) -> Economy:
    """Load a bundled example through the regular config loader."""
    return load_economy(example_config_text(name))


def _require(name: str) -> None:
    if name not in _DESCRIPTIONS:
        known = ", ".join(_DESCRIPTIONS)
        raise ValidationError(f"unknown example {name!r} (known: {known})")


# ---------------------------------------------------------------------------
# Builders.  These construct the same economies programmatically; the
# bundled configs were generated from them (see tests for the
# round-trip check).


def _cobb_agent(alpha_row, endowment, scenarios, satiation=5.7,
                retention_weight=0.0, carry=None):
    from .economy import AgentSpec, QuadraticCobbDouglas
    goods = len(alpha_row)
    stages = scenarios + 1
    weights = np.array([1.0] + [1.0 / scenarios] * scenarios)
    util = QuadraticCobbDouglas(
        satiation=satiation, stage_weights=weights,
        exponents=np.tile(np.asarray(alpha_row, dtype=float)[:, None], (1, stages)),
        retention_weight=retention_weight)
    if carry is None:
        carry = np.zeros((scenarios, goods, goods))
    return AgentSpec(util, np.asarray(endowment, dtype=float), carry,
                     np.zeros((goods, 0)), np.zeros((scenarios, goods, 0)))


def _two_good_economy(e_a, e_b, agents_per_type=(1, 2)):
    """The bde family: type A and type B agents, identity-payoff contracts."""
    goods, scenarios, contracts = 2, 3, 2
    a = _cobb_agent([0.25, 0.75], e_a, scenarios)
    b = _cobb_agent([0.75, 0.25], e_b, scenarios)
    agents = (a,) * agents_per_type[0] + (b,) * agents_per_type[1]
    returns = np.stack([np.eye(goods)] * scenarios)
    agg = sum(ag.endowment for ag in agents)
    return Economy(num_goods=goods, num_scenarios=scenarios,
                   num_contracts=contracts, agents=agents,
                   issue_cost=np.zeros((goods, contracts)), returns=returns,
                   consumption_bound=2.0 * float(agg.max()),
                   contract_bound=100.0)


def build_bde() -> Economy:
    return _two_good_economy(
        e_a=[[2.0, 0.5, 1.0, 1.5], [2.0, 1.0, 1.0, 1.0]],
        e_b=[[1.0, 2.5, 2.0, 1.5], [1.0, 2.0, 2.0, 2.0]])


def build_sch_endow() -> Economy:
    return _two_good_economy(
        e_a=[[2.0, 0.8, 1.0, 0.6], [2.0, 2.4, 3.0, 1.8]],
        e_b=[[1.0, 2.5, 2.0, 1.5], [1.0, 2.0, 2.0, 2.0]])


def build_sch_sym() -> Economy:
    return _two_good_economy(
        e_a=[[2.0, 2.0, 2.0, 2.0], [1.0, 1.0, 1.0, 1.0]],
        e_b=[[1.0, 1.0, 1.0, 1.0], [2.0, 2.0, 2.0, 2.0]],
        agents_per_type=(1, 1))


_BIG5_ALPHA = np.array([
    [0.25, 0.25, 0.17, 0.17, 0.08, 0.08],
    [0.25, 0.25, 0.17, 0.17, 0.08, 0.08],
    [0.17, 0.17, 0.25, 0.25, 0.08, 0.08],
    [0.17, 0.17, 0.25, 0.25, 0.08, 0.08],
    [0.08, 0.08, 0.08, 0.08, 0.50, 0.17],
])

_BIG5_BASE = np.array([
    [1.0, 4.0, 2.0, 2.0, 3.0, 1.5],
    [4.0, 1.0, 2.0, 2.0, 1.0, 1.5],
    [2.0, 1.0, 4.0, 3.0, 1.0, 1.5],
    [2.0, 4.0, 1.0, 3.0, 1.0, 1.5],
    [2.0, 2.0, 2.0, 2.0, 2.0, 2.0],
])


def build_big5() -> Economy:
    """5 agents, 6 goods, 5 forward contracts, identity retention carry.

    Each agent's scenario endowments tilt the base vector by a
    per-(agent, good) noise term: +noise in scenario 1, unchanged in
    scenario 2, -noise in scenario 3.  The noise is drawn from
    U(0, 0.1) with a fixed seed so the economy is reproducible.
    """
    goods, scenarios, contracts = 6, 3, 5
    rng = np.random.default_rng(0)
    noise = rng.uniform(0.0, 0.1, size=_BIG5_BASE.shape)
    carry = np.stack([np.eye(goods)] * scenarios)
    agents = []
    for i in range(5):
        b, n = _BIG5_BASE[i], noise[i]
        endow = np.column_stack([b, b + n, b, b - n])
        agents.append(_cobb_agent(_BIG5_ALPHA[i], endow, scenarios,
                                  retention_weight=0.01, carry=carry))
    returns = np.stack([np.vstack([np.eye(contracts),
                                   np.zeros((1, contracts))])] * scenarios)
    agg = sum(ag.endowment for ag in agents)
    # retention lets stage-0 goods carry into every scenario, so the
    # consumption box must cover endowment plus carried stock
    avail = float(agg[:, 1:].max() + agg[:, 0].max())
    return Economy(num_goods=goods, num_scenarios=scenarios,
                   num_contracts=contracts, agents=tuple(agents),
                   issue_cost=np.zeros((goods, contracts)), returns=returns,
                   consumption_bound=2.0 * avail, contract_bound=100.0)


BUILDERS = {
    "bde": build_bde,
    "sch-endow": build_sch_endow,
    "sch-sym": build_sch_sym,
    "big5": build_big5,
}
