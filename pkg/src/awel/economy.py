"""Domain types for two-stage exchange economies with real financial markets.

Conventions used throughout the package:

* matrices are goods-by-stages, with stage column 0 the first stage and
  columns 1..Xi the second-stage scenarios;
* good 0 is the numeraire (indispensable to every agent, price fixed
  to 1 in the first stage of the reduced price system);
* contract return matrices ``D_xi`` and the issue-cost matrix ``D_0``
  are goods-by-contracts.

All types are immutable after construction (arrays are marked
read-only) and safe to share across concurrent workers.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import tomli

from .simplex import maximize as _lp_maximize

# Floor applied inside Cobb-Douglas products so 0**0 and infinite
# gradients at the boundary never occur; bias is negligible at solver
# tolerances.
CONSUMPTION_FLOOR = 1e-10

# Activities are a cone, but the feasibility LP needs a finite box.
ACTIVITY_CAP = 1e6

# Width of the softplus that clamps the satiation gap at zero.
_GAP_WIDTH = 1e-2

# Tiny strictly concave tie-break so demand is single-valued on the
# satiation ridge (where the quadratic term is flat); far below solver
# tolerances everywhere else.
_TIEBREAK = 1e-7


def _soft_gap(t):
    """Smooth, convex, increasing surrogate for max(t, 0).

    Returns ``(s, s', s'')`` of the softplus with width _GAP_WIDTH;
    exact to machine precision a few widths away from zero.
    """
    d = _GAP_WIDTH
    t = np.asarray(t, dtype=float)
    s = d * np.logaddexp(0.0, t / d)
    sig = 0.5 * (1.0 + np.tanh(0.5 * t / d))  # overflow-safe sigmoid
    return s, sig, sig * (1.0 - sig) / d


class ConfigError(ValueError):
    """Malformed economy configuration text."""


class ValidationError(ValueError):
    """Structurally invalid economy (dimensions, signs, exponents)."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


class UtilityFunction(ABC):
    """Value-plus-gradient interface for agent preferences.

    Implementations must be finite on any box ``[delta, m]`` with
    ``delta > 0`` and concave on the region where the solver operates.
    """

    @abstractmethod
    def value(self, c: np.ndarray, w: np.ndarray) -> float:
        """Utility of a consumption matrix and a retention matrix."""

    @abstractmethod
    def gradient(self, c: np.ndarray, w: np.ndarray):
        """Return ``(dU/dc, dU/dw)`` with the same shapes as the inputs."""

    def value_and_gradient(self, c: np.ndarray, w: np.ndarray):
        """Fused evaluation; override when value and gradient share work."""
        return self.value(c, w), self.gradient(c, w)

    def hessian_blocks(self, c: np.ndarray, w: np.ndarray):
        """Per-stage Hessian blocks (Hcc, Hww, Hcw), or None if unavailable.

        Each entry is a (stages, goods, goods) array.  Used by the agent
        solver's Newton polish; returning None disables it.
        """
        return None


@dataclass(frozen=True)
class QuadraticCobbDouglas(UtilityFunction):
    """U(c, w) = -sum_s weight_s * (K - prod_l c_ls^a_ls - rho_w * prod_l w_ls^a_ls)**2.

    ``satiation`` is the bliss level K; ``stage_weights`` folds the
    scenario probabilities into the stage terms; ``exponents`` has one
    column per stage with column sums at most one (so each stage product
    is concave); ``retention_weight`` scales the retention product.

    The satiation gap ``K - prod(c) - rho_w * prod(w)`` passes through
    a softplus of width ``_GAP_WIDTH`` before squaring, which extends
    the utility concavely (asymptotically flat) past the satiation
    surface while keeping it twice continuously differentiable: the
    agent solver never crosses a nonconcave region or a gradient kink.
    Below the surface the softplus is numerically exact.
    """

    satiation: float
    stage_weights: np.ndarray  # (stages,)
    exponents: np.ndarray      # (goods, stages)
    retention_weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "stage_weights", _readonly(self.stage_weights))
        object.__setattr__(self, "exponents", _readonly(self.exponents))

    def _products(self, c, w):
        a = self.exponents
        pc = np.exp(np.sum(a * np.log(np.maximum(c, CONSUMPTION_FLOOR)), axis=0))
        if self.retention_weight > 0.0:
            pw = np.exp(np.sum(a * np.log(np.maximum(w, CONSUMPTION_FLOOR)), axis=0))
        else:
            pw = np.zeros_like(pc)
        return pc, pw

    def value(self, c, w):
        pc, pw = self._products(c, w)
        s, _, _ = _soft_gap(self.satiation - pc - self.retention_weight * pw)
        return float(-np.dot(self.stage_weights, s * s)
                     - _TIEBREAK * (np.sum(c * c) + np.sum(w * w)))

    def gradient(self, c, w):
        return self.value_and_gradient(c, w)[1]

    def value_and_gradient(self, c, w):
        a = self.exponents
        pc, pw = self._products(c, w)
        s, sp, _ = _soft_gap(self.satiation - pc - self.retention_weight * pw)
        val = float(-np.dot(self.stage_weights, s * s)
                    - _TIEBREAK * (np.sum(c * c) + np.sum(w * w)))
        coeff = 2.0 * self.stage_weights * s * sp
        gc = coeff[None, :] * a * pc[None, :] / np.maximum(c, CONSUMPTION_FLOOR)
        gc = gc - 2.0 * _TIEBREAK * c
        if self.retention_weight > 0.0:
            gw = (self.retention_weight * coeff[None, :] * a * pw[None, :]
                  / np.maximum(w, CONSUMPTION_FLOOR))
            gw = gw - 2.0 * _TIEBREAK * w
        else:
            gw = -2.0 * _TIEBREAK * np.asarray(w, dtype=float)
        return val, (gc, gw)

    def hessian_blocks(self, c, w):
        a = self.exponents
        G, S = a.shape
        rho = self.retention_weight
        vc = np.maximum(c, CONSUMPTION_FLOOR)
        vw = np.maximum(w, CONSUMPTION_FLOOR)
        pc, pw = self._products(c, w)
        s_, sp_, spp_ = _soft_gap(self.satiation - pc - rho * pw)
        # first and second derivatives of softplus(gap)**2 w.r.t. the gap
        f1 = 2.0 * s_ * sp_
        f2 = 2.0 * (sp_ * sp_ + s_ * spp_)
        hcc = np.zeros((S, G, G))
        hww = np.zeros((S, G, G))
        hcw = np.zeros((S, G, G))
        for s in range(S):
            lam = self.stage_weights[s]
            if lam == 0.0:
                continue
            av_c = a[:, s] / vc[:, s]
            dpc = av_c * pc[s]                       # dP/dc
            d2pc = pc[s] * np.outer(av_c, av_c)
            d2pc[np.diag_indices(G)] -= a[:, s] * pc[s] / vc[:, s] ** 2
            hcc[s] = lam * (f1[s] * d2pc - f2[s] * np.outer(dpc, dpc))
            if rho > 0.0:
                av_w = a[:, s] / vw[:, s]
                dpw = av_w * pw[s]
                d2pw = pw[s] * np.outer(av_w, av_w)
                d2pw[np.diag_indices(G)] -= a[:, s] * pw[s] / vw[:, s] ** 2
                hww[s] = lam * (f1[s] * rho * d2pw - f2[s] * rho * rho * np.outer(dpw, dpw))
                hcw[s] = -lam * f2[s] * rho * np.outer(dpc, dpw)
        diag = np.diag_indices(G)
        hcc[:, diag[0], diag[1]] -= 2.0 * _TIEBREAK
        hww[:, diag[0], diag[1]] -= 2.0 * _TIEBREAK
        return hcc, hww, hcw


@dataclass(frozen=True)
class AgentSpec:
    """One agent: preferences, endowments, retention carry, home technology."""

    utility: UtilityFunction
    endowment: np.ndarray          # (goods, stages)
    retention_carry: np.ndarray    # (scenarios, goods, goods)
    home_input: np.ndarray         # (goods, activity_dim)
    home_output: np.ndarray        # (scenarios, goods, activity_dim)

    def __post_init__(self):
        for name in ("endowment", "retention_carry", "home_input", "home_output"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def activity_dim(self) -> int:
        return self.home_input.shape[1]


@dataclass(frozen=True)
class Economy:
    """Full static description of a two-stage exchange economy."""

    num_goods: int
    num_scenarios: int
    num_contracts: int
    agents: tuple
    issue_cost: np.ndarray   # (goods, contracts)
    returns: np.ndarray      # (scenarios, goods, contracts)
    consumption_bound: float
    contract_bound: float
    numeraire_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "issue_cost", _readonly(self.issue_cost))
        object.__setattr__(self, "returns", _readonly(self.returns))
        _validate(self)

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @property
    def num_stages(self) -> int:
        return self.num_scenarios + 1

    @property
    def price_shape(self):
        return (self.num_goods, self.num_stages)


@dataclass(frozen=True)
class TildePrices:
    """Reduced price system on the no-arbitrage manifold.

    Goods-by-stages matrix with the numeraire first-stage coordinate
    pinned to 1; second-stage numeraire entries carry the state prices.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValidationError("price matrix must be two-dimensional")
        if abs(v[0, 0] - 1.0) > 1e-12:
            raise ValidationError("reduced prices must have entry (0,0) fixed at 1")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValidationError("reduced prices must be finite and nonnegative")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def shape(self):
        return self.values.shape

    def free_vector(self) -> np.ndarray:
        """All coordinates except the fixed (0,0) one, ordered stage-major."""
        return self.values.T.ravel()[1:].copy()

    @staticmethod
    def from_free_vector(free: np.ndarray, shape) -> "TildePrices":
        goods, stages = shape
        flat = np.empty(goods * stages)
        flat[0] = 1.0
        flat[1:] = free
        return TildePrices(flat.reshape(stages, goods).T)

    @staticmethod
    def flat_order(values: np.ndarray) -> np.ndarray:
        """Stage-major flattening, matching trace-file column order."""
        return values.T.ravel()


def _validate(econ: Economy) -> None:
    G, Xi, C = econ.num_goods, econ.num_scenarios, econ.num_contracts
    S = Xi + 1
    if G < 1 or Xi < 1 or C < 0:
        raise ValidationError("need at least one good and one scenario")
    if econ.num_agents < 1:
        raise ValidationError("need at least one agent")
    if econ.numeraire_index != 0:
        raise ValidationError("the numeraire must be good 0")
    for name, bound in (("m", econ.consumption_bound), ("M", econ.contract_bound)):
        if not np.isfinite(bound) or bound <= 0:
            raise ValidationError(f"bound {name} must be finite and positive")
    if econ.issue_cost.shape != (G, C):
        raise ValidationError("issue_cost must be goods x contracts")
    if econ.returns.shape != (Xi, G, C):
        raise ValidationError("returns must hold one goods x contracts matrix per scenario")
    if np.any(econ.issue_cost < 0) or np.any(econ.returns < 0):
        raise ValidationError("issue costs and returns must be nonnegative")
    for i, ag in enumerate(econ.agents):
        if ag.endowment.shape != (G, S):
            raise ValidationError(f"agent {i}: endowment must be goods x stages")
        if np.any(ag.endowment < 0):
            raise ValidationError(f"agent {i}: endowments must be nonnegative")
        if ag.retention_carry.shape != (Xi, G, G):
            raise ValidationError(f"agent {i}: retention carry must be one goods x goods matrix per scenario")
        if np.any(ag.retention_carry < 0):
            raise ValidationError(f"agent {i}: retention carry must be nonnegative")
        ma = ag.activity_dim
        if ag.home_input.shape != (G, ma) or ag.home_output.shape != (Xi, G, ma):
            raise ValidationError(f"agent {i}: home technology matrices are inconsistent")
        if np.any(ag.home_input < 0) or np.any(ag.home_output < 0):
            raise ValidationError(f"agent {i}: home technology must be nonnegative")
        u = ag.utility
        if isinstance(u, QuadraticCobbDouglas):
            if u.satiation <= 0:
                raise ValidationError(f"agent {i}: satiation level must be positive")
            if u.stage_weights.shape != (S,) or np.any(u.stage_weights < 0):
                raise ValidationError(f"agent {i}: stage weights must be a nonnegative stage vector")
            if u.exponents.shape != (G, S):
                raise ValidationError(f"agent {i}: utility exponents must be goods x stages")
            if np.any(u.exponents < 0):
                raise ValidationError(f"agent {i}: utility exponents must be nonnegative")
            if np.any(u.exponents.sum(axis=0) > 1.0 + 1e-12):
                raise ValidationError(f"agent {i}: utility exponent column sums must not exceed 1")
            if u.retention_weight < 0:
                raise ValidationError(f"agent {i}: retention weight must be nonnegative")
            if np.any(u.exponents[0, :] <= 0):
                raise ValidationError(
                    f"agent {i}: good 0 must be indispensable (positive exponent in every stage)")


# ---------------------------------------------------------------------------
# Config ingestion


def _matrix(raw, rows, cols, what) -> np.ndarray:
    try:
        m = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: not a numeric matrix") from exc
    if m.shape != (rows, cols):
        raise ConfigError(f"{what}: expected shape {rows}x{cols}, got {m.shape}")
    return m


def load_economy(text: str) -> Economy:
    """Parse TOML economy configuration text into a validated Economy."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    try:
        G = int(raw["goods"])
        Xi = int(raw["scenarios"])
        C = int(raw["contracts"])
        bounds = raw["bounds"]
        m_bound = float(bounds["m"])
        big_m = float(bounds["M"])
        agents_raw = raw["agents"]
    except KeyError as exc:
        raise ConfigError(f"missing config key: {exc}") from exc
    S = Xi + 1

    issue_cost = _matrix(raw.get("issue_cost", np.zeros((G, C))), G, C, "issue_cost")
    returns_raw = raw.get("returns", [])
    if len(returns_raw) != Xi:
        raise ConfigError(f"returns: expected {Xi} matrices, got {len(returns_raw)}")
    returns = np.stack([_matrix(rm, G, C, f"returns[{k}]") for k, rm in enumerate(returns_raw)]) \
        if Xi else np.zeros((Xi, G, C))

    agents = []
    for i, ag in enumerate(agents_raw):
        try:
            ut = ag["utility"]
            util = QuadraticCobbDouglas(
                satiation=float(ut["K"]),
                stage_weights=np.asarray(ut["lambda"], dtype=float),
                exponents=_matrix(ut["alpha"], G, S, f"agent {i} alpha"),
                retention_weight=float(ut.get("retention_weight", 0.0)),
            )
            endow = _matrix(ag["endowment"], G, S, f"agent {i} endowment")
        except KeyError as exc:
            raise ConfigError(f"agent {i}: missing key {exc}") from exc
        if util.stage_weights.shape != (S,):
            raise ConfigError(f"agent {i}: lambda must have {S} entries")
        if "retention_carry" in ag:
            carry_raw = ag["retention_carry"]
            if len(carry_raw) != Xi:
                raise ConfigError(f"agent {i}: retention_carry needs {Xi} matrices")
            carry = np.stack([_matrix(cm, G, G, f"agent {i} retention_carry[{k}]")
                              for k, cm in enumerate(carry_raw)])
        else:
            carry = np.broadcast_to(np.eye(G), (Xi, G, G)).copy()
        if "home_tech" in ag:
            ht = ag["home_tech"]
            t0 = np.atleast_2d(np.asarray(ht["T0"], dtype=float))
            ma = t0.shape[1]
            t0 = _matrix(t0, G, ma, f"agent {i} home_tech.T0")
            t_raw = ht["T"]
            if len(t_raw) != Xi:
                raise ConfigError(f"agent {i}: home_tech.T needs {Xi} matrices")
            t_out = np.stack([_matrix(tm, G, ma, f"agent {i} home_tech.T[{k}]")
                              for k, tm in enumerate(t_raw)])
        else:
            t0 = np.zeros((G, 0))
            t_out = np.zeros((Xi, G, 0))
        agents.append(AgentSpec(util, endow, carry, t0, t_out))

    try:
        return Economy(
            num_goods=G, num_scenarios=Xi, num_contracts=C,
            agents=tuple(agents), issue_cost=issue_cost, returns=returns,
            consumption_bound=m_bound, contract_bound=big_m,
        )
    except ValidationError:
        raise


def load_economy_file(path) -> Economy:
    with open(path, "r", encoding="utf-8") as fh:
        return load_economy(fh.read())


# ---------------------------------------------------------------------------
# Serialization (round-trips through load_economy)


def _toml_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return '"%s"' % v
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)!r}")


def _mat_rows(m: np.ndarray):
    return [[float(x) for x in row] for row in np.asarray(m)]


def economy_to_toml(econ: Economy) -> str:
    """Serialize an Economy back to the config schema."""
    out = []
    out.append(f"goods = {econ.num_goods}")
    out.append(f"scenarios = {econ.num_scenarios}")
    out.append(f"contracts = {econ.num_contracts}")
    out.append(f"issue_cost = {_toml_value(_mat_rows(econ.issue_cost))}")
    out.append("returns = ["
               + ", ".join(_toml_value(_mat_rows(econ.returns[k])) for k in range(econ.num_scenarios))
               + "]")
    out.append("")
    out.append("[bounds]")
    out.append(f"m = {_toml_value(float(econ.consumption_bound))}")
    out.append(f"M = {_toml_value(float(econ.contract_bound))}")
    for ag in econ.agents:
        u = ag.utility
        if not isinstance(u, QuadraticCobbDouglas):
            raise TypeError("only the quadratic Cobb-Douglas family is serializable")
        out.append("")
        out.append("[[agents]]")
        out.append(f"endowment = {_toml_value(_mat_rows(ag.endowment))}")
        out.append("retention_carry = ["
                   + ", ".join(_toml_value(_mat_rows(ag.retention_carry[k]))
                               for k in range(econ.num_scenarios))
                   + "]")
        out.append("")
        out.append("[agents.utility]")
        out.append(f"K = {_toml_value(float(u.satiation))}")
        out.append(f"lambda = {_toml_value([float(x) for x in u.stage_weights])}")
        out.append(f"alpha = {_toml_value(_mat_rows(u.exponents))}")
        out.append(f"retention_weight = {_toml_value(float(u.retention_weight))}")
        if ag.activity_dim > 0:
            out.append("")
            out.append("[agents.home_tech]")
            out.append(f"T0 = {_toml_value(_mat_rows(ag.home_input))}")
            out.append("T = ["
                       + ", ".join(_toml_value(_mat_rows(ag.home_output[k]))
                                   for k in range(econ.num_scenarios))
                       + "]")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Survivability (relatively complete recourse)


@dataclass(frozen=True)
class AgentFeasibility:
    agent_index: int
    passed: bool
    margin: float


@dataclass(frozen=True)
class SurvivabilityReport:
    agents: tuple

    @property
    def all_pass(self) -> bool:
        return all(a.passed for a in self.agents)


def check_survivability(econ: Economy, tol: float = 1e-9) -> SurvivabilityReport:
    """Check that each agent has a feasible plan at any prices.

    Solved as an LP maximizing the worst resource slack over
    nonnegative (consumption, retention, activity) choices; an agent
    passes when the optimal slack is nonnegative.
    """
    G, Xi = econ.num_goods, econ.num_scenarios
    S = Xi + 1
    ncw = G * S
    results = []
    for i, ag in enumerate(econ.agents):
        ma = ag.activity_dim
        n = 2 * ncw + ma + 1  # c, w, y, t
        rows = []
        rhs = []
        # stage 0: c0 + w0 + T0 y + t <= e0, per good
        for l in range(G):
            r = np.zeros(n)
            r[l * S + 0] = 1.0            # c[l, 0]
            r[ncw + l * S + 0] = 1.0      # w[l, 0]
            r[2 * ncw:2 * ncw + ma] = ag.home_input[l, :]
            r[-1] = 1.0
            rows.append(r)
            rhs.append(ag.endowment[l, 0])
        # scenario xi: c_xi + w_xi - T_xi y - A_xi w0 + t <= e_xi, per good
        for xi in range(1, S):
            for l in range(G):
                r = np.zeros(n)
                r[l * S + xi] = 1.0
                r[ncw + l * S + xi] = 1.0
                for k in range(G):
                    r[ncw + k * S + 0] -= ag.retention_carry[xi - 1, l, k]
                r[2 * ncw:2 * ncw + ma] = -ag.home_output[xi - 1, l, :]
                r[-1] = 1.0
                rows.append(r)
                rhs.append(ag.endowment[l, xi])
        # keep the LP bounded even for degenerate technologies
        for j in range(ma):
            r = np.zeros(n)
            r[2 * ncw + j] = 1.0
            rows.append(r)
            rhs.append(ACTIVITY_CAP)
        c_obj = np.zeros(n)
        c_obj[-1] = 1.0
        value, _ = _lp_maximize(c_obj, np.asarray(rows), np.asarray(rhs))
        results.append(AgentFeasibility(i, value >= -tol, value))
    return SurvivabilityReport(tuple(results))


def suggest_consumption_bound(econ_like_agents, retention_carry=True) -> float:
    """Heuristic per-good cap: twice the worst-case aggregate availability."""
    total = sum(np.asarray(ag.endowment) for ag in econ_like_agents)
    best = float(np.max(total))
    if retention_carry:
        carry = sum(float(np.max(np.sum(ag.retention_carry, axis=2), initial=0.0)) *
                    float(np.max(ag.endowment[:, 0], initial=0.0))
                    for ag in econ_like_agents)
        best = max(best, float(np.max(total)) + carry)
    return 2.0 * best
