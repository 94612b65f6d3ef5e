"""Aggregate market quantities and the dual-weighted clearing objective.

The solver works with a bifunction of reduced prices and nonnegative
dual weights: the weighted sum of aggregate excess supplies (the fixed
numeraire coordinate excluded) minus a quadratic penalty on the
financial imbalance.  Its proximal-style envelope in the dual argument
has a per-coordinate closed form, evaluated here without any inner
optimization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .agent import AgentSolution, AgentSolverError, solve_agent
from .economy import Economy, TildePrices, ValidationError

DEFAULT_PENALTY_RHO = 1.0


@dataclass(frozen=True)
class DualWeights:
    """Nonnegative weights on the goods markets, shaped like TildePrices.

    The (0,0) coordinate is carried for shape compatibility but ignored
    by every evaluation.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.ndim != 2:
            raise ValidationError("dual weights must be a goods x stages matrix")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValidationError("dual weights must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    @staticmethod
    def zeros(shape) -> "DualWeights":
        return DualWeights(np.zeros(shape))


@dataclass(frozen=True)
class AugmentedParams:
    """Parameters of the augmented clearing objective.

    ``penalty_rho`` scales the quadratic financial-imbalance penalty,
    ``augmenting_r`` is the proximal smoothing weight, and
    ``dual_bound`` is the box edge for the dual weights.
    """

    penalty_rho: float = DEFAULT_PENALTY_RHO
    augmenting_r: float = 1.0
    dual_bound: float = 4.0

    def __post_init__(self):
        if min(self.penalty_rho, self.augmenting_r, self.dual_bound) <= 0:
            raise ValidationError("augmented parameters must be strictly positive")


@dataclass(frozen=True)
class ExcessSupplyReport:
    """Market-level snapshot at one reduced price vector."""

    es: np.ndarray                   # (goods, stages) aggregate excess supply
    financial_imbalance: np.ndarray  # (contracts,) aggregate net positions
    per_agent: tuple                 # AgentSolution per agent, fixed order
    price_used: TildePrices

    def __post_init__(self):
        for name in ("es", "financial_imbalance"):
            a = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "per_agent", tuple(self.per_agent))

    @property
    def ec_norm(self) -> float:
        return float(np.linalg.norm(self.financial_imbalance))

    @property
    def worst_shortage(self) -> float:
        """Most negative excess supply entry (0 when all markets clear)."""
        return min(0.0, float(np.min(self.es)))


def aggregate_excess_supply(econ: Economy, prices: TildePrices,
                            warm: Optional[ExcessSupplyReport] = None,
                            agent_tol: float = 1e-6,
                            position_smoothing: float = 0.0,
                            best_effort: bool = False) -> ExcessSupplyReport:
    """Solve every agent at ``prices`` and sum their excess supplies.

    ``warm`` provides per-agent starting points from a nearby price
    vector.  ``position_smoothing`` is forwarded to the agent solver.
    With ``best_effort``, a marginally stalled agent solve (residual
    within 1e3x of the target) is used as-is instead of aborting the
    whole evaluation.  Summation runs in fixed agent order, so the
    result is deterministic.
    """
    if prices.shape != econ.price_shape:
        raise ValidationError("price matrix does not match the economy's dimensions")
    solutions = []
    es = np.zeros(econ.price_shape)
    ec = np.zeros(econ.num_contracts)
    for i, agent in enumerate(econ.agents):
        ws = None
        if warm is not None and i < len(warm.per_agent):
            ws = warm.per_agent[i]
        try:
            sol = solve_agent(agent, econ, prices, warm_start=ws, tol=agent_tol,
                              position_smoothing=position_smoothing)
        except AgentSolverError as exc:
            usable = (best_effort and exc.best is not None
                      and exc.best.kkt_residual <= 1e3 * agent_tol)
            if not usable:
                raise AgentSolverError(f"agent {i}: {exc}", best=exc.best) from exc
            sol = exc.best
        solutions.append(sol)
        es += sol.excess_supply
        ec += sol.net_position
    return ExcessSupplyReport(es=es, financial_imbalance=ec,
                              per_agent=tuple(solutions), price_used=prices)


def _masked(values: np.ndarray) -> np.ndarray:
    """Copy with the fixed numeraire coordinate (0,0) zeroed out."""
    out = np.array(values, dtype=float)
    out[0, 0] = 0.0
    return out


def walrasian(report: ExcessSupplyReport, g: DualWeights, rho: float) -> float:
    """Dual-weighted excess supply minus the quadratic imbalance penalty."""
    if rho <= 0:
        raise ValidationError("penalty weight must be positive")
    gv = _masked(g.values)
    ec = report.financial_imbalance
    return float(np.sum(gv * report.es) - rho * np.dot(ec, ec))


def envelope_term(e, g, r):
    """Per-coordinate proximal envelope of the bilinear term g*e.

    Equals ``inf_{u >= 0} u*e + (g - u)**2 / (2 r)``: the linear value
    ``g*e - (r/2) e**2`` while the prox point ``g - r*e`` stays
    nonnegative, and the boundary value ``g**2 / (2 r)`` past it.
    Vectorized over broadcastable inputs.
    """
    e = np.asarray(e, dtype=float)
    g = np.asarray(g, dtype=float)
    interior = g >= r * e
    return np.where(interior, g * e - 0.5 * r * e * e, g * g / (2.0 * r))


def augmented_walrasian(report: ExcessSupplyReport, g: DualWeights,
                        params: AugmentedParams) -> float:
    """Closed-form proximal envelope of the clearing objective in g."""
    gv = _masked(g.values)
    phi = envelope_term(report.es, gv, params.augmenting_r)
    phi = np.asarray(phi, dtype=float).copy()
    phi[0, 0] = 0.0
    ec = report.financial_imbalance
    return float(np.sum(phi) - params.penalty_rho * np.dot(ec, ec))


def infimum_walrasian(report: ExcessSupplyReport, rho: float,
                      dual_bound: float) -> float:
    """Exact infimum of the bilinear clearing objective over the dual box.

    Nonnegative exactly when every market has nonnegative excess supply
    and all contracts clear, which makes it a one-number equilibrium
    certificate.
    """
    if rho <= 0 or dual_bound <= 0:
        raise ValidationError("penalty weight and dual bound must be positive")
    es = _masked(report.es)
    ec = report.financial_imbalance
    return float(dual_bound * np.sum(np.minimum(0.0, es)) - rho * np.dot(ec, ec))
