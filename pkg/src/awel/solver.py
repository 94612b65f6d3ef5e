"""Outer loop: alternating dual and primal steps on the clearing objective.

Each outer iteration first picks the worst-case dual weights for the
current excess supplies (a closed-form bang-bang step), then improves
the reduced prices with a bound-constrained trust-region least-squares
pass on the market residual.  The agent subproblems carry a strictly
convex position-smoothing term that decays geometrically across
iterations: early iterations solve a regularized economy whose
demand is single-valued, and as the smoothing vanishes the iterates
continue into the exact economy.  The smoothing weight r and the dual
box edge K follow nondecreasing schedules; iteration stops once every
market shows excess supply above -epsilon and every contract clears
within epsilon.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from .agent import AgentSolverError
from .economy import Economy, TildePrices, ValidationError
from .market import (AugmentedParams, DualWeights, ExcessSupplyReport,
                     aggregate_excess_supply, augmented_walrasian,
                     infimum_walrasian)
from .noarb import ZeroStatePriceError, recover_prices

CONVERGED = "converged"
MAX_ITERS = "max_iters"

_PRICE_FLOOR = 1e-4
_PRICE_CEIL = 10.0


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances, schedules, and budgets for the outer loop."""

    epsilon: float = 1e-2
    r0: float = 1.0
    r_growth: float = 1.5
    r_max: float = 1e4
    k0: float = 4.0
    k_growth: float = 1.25
    k_max: float = 1e3
    max_outer_iters: int = 200
    phase2_budget: Optional[int] = None   # default: 30 * free price coordinates
    phase2_initial_radius: float = 0.1
    rng_seed: int = 0
    agent_tol: float = 1e-6
    penalty_rho: float = 1.0
    smoothing0: float = 1.0        # initial position-smoothing weight
    smoothing_decay: float = 0.3   # per-iteration multiplier on the smoothing weight
    smoothing_floor: float = 5e-4  # below this the exact (unsmoothed) economy is used

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if self.r0 <= 0 or self.r_growth < 1 or self.r_max < self.r0:
            raise ValidationError("invalid r schedule")
        if self.k0 <= 0 or self.k_growth < 1 or self.k_max < self.k0:
            raise ValidationError("invalid K schedule")
        if self.max_outer_iters < 1:
            raise ValidationError("need at least one outer iteration")
        if self.phase2_budget is not None and self.phase2_budget < 3:
            raise ValidationError("phase-2 budget too small")
        if self.phase2_initial_radius <= 0 or self.agent_tol <= 0 or self.penalty_rho <= 0:
            raise ValidationError("radii, tolerances, and penalties must be positive")
        if (self.smoothing0 < 0 or self.smoothing_floor <= 0
                or not 0 < self.smoothing_decay < 1):
            raise ValidationError("invalid smoothing schedule")


@dataclass(frozen=True)
class IterationRecord:
    """One outer iteration of the trace (append-only)."""

    iteration: int
    r_used: float
    k_used: float
    prices: TildePrices
    duals: DualWeights
    es_snapshot: np.ndarray
    ec_norm: float
    w_value: float
    inf_walrasian: float
    wall_clock_seconds: float


@dataclass(frozen=True)
class EquilibriumResult:
    status: str                      # CONVERGED or MAX_ITERS
    p_tilde: TildePrices
    final_report: ExcessSupplyReport
    trace: tuple
    recovered: Optional[object]      # RecoveredPrices when status == CONVERGED

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def iterations(self) -> int:
        return len(self.trace)


def default_start(econ: Economy) -> TildePrices:
    """Unit first-stage prices, uniform state prices across scenarios."""
    G, S = econ.price_shape
    v = np.full((G, S), 1.0 / econ.num_scenarios)
    v[:, 0] = 1.0
    return TildePrices(v)


def phase1(report: ExcessSupplyReport, params: AugmentedParams) -> DualWeights:
    """Exact minimizer of the augmented objective over the dual box.

    Separable: full weight K on every market in shortage, zero weight
    elsewhere (ties at zero resolve to zero); the fixed numeraire
    coordinate stays at zero.
    """
    g = np.where(report.es < 0.0, params.dual_bound, 0.0)
    g[0, 0] = 0.0
    return DualWeights(g)


def is_epsilon_equilibrium(report: ExcessSupplyReport, epsilon: float) -> bool:
    """All markets within epsilon of clearing from the supply side; contracts too."""
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    return bool(np.all(report.es >= -epsilon)
                and np.all(np.abs(report.financial_imbalance) <= epsilon))


@dataclass
class Phase2Result:
    prices: TildePrices
    report: Optional[ExcessSupplyReport]
    value: float
    evaluations: int


class _Residual:
    """Budget-tracked market residual at a free price vector.

    The residual stacks the excess supplies of every non-numeraire
    market with the financial imbalances; a zero residual is an exact
    clearing point.  Agent solves warm-start from a reference report
    that is held fixed during a pass -- advancing it per probe would
    make repeated evaluations at the same point disagree and wreck the
    finite-difference sensitivities.  Marginally stalled solves are
    tolerated so that probes cannot abort the whole pass.
    """

    def __init__(self, econ, warm, agent_tol, smoothing):
        self.econ = econ
        self.warm = warm
        self.agent_tol = agent_tol
        self.smoothing = smoothing
        self.evals = 0

    def report_at(self, prices: TildePrices,
                  advance: bool = False) -> ExcessSupplyReport:
        rep = aggregate_excess_supply(
            self.econ, prices, warm=self.warm, agent_tol=self.agent_tol,
            position_smoothing=self.smoothing, best_effort=True)
        if advance:
            self.warm = rep
        self.evals += 1
        return rep

    def __call__(self, free_vec):
        prices = TildePrices.from_free_vector(
            np.maximum(free_vec, _PRICE_FLOOR), self.econ.price_shape)
        rep = self.report_at(prices)
        es = TildePrices.flat_order(rep.es)[1:]
        return np.concatenate([es, rep.financial_imbalance])


def phase2(econ: Economy, g: DualWeights, params: AugmentedParams,
           start: TildePrices, budget: int, seed: int = 0,
           agent_tol: float = 1e-8,
           warm: Optional[ExcessSupplyReport] = None,
           initial_radius: float = 0.1,
           position_smoothing: float = 0.0) -> Phase2Result:
    """Primal improvement of the augmented objective in the prices.

    Runs a bound-constrained trust-region least-squares pass on the
    market residual (a Gauss-Newton model with finite-difference
    sensitivities).  The pass is monotone in the residual norm, so the
    refined point clears markets at least as well as the start; the
    reported value is the augmented objective at the refined point.
    Deterministic; respects the evaluation budget up to one
    finite-difference stencil.
    """
    del seed  # the search is deterministic; kept for interface stability
    if budget < 3:
        raise ValidationError("phase-2 budget must allow at least one model")
    shape = econ.price_shape
    n = shape[0] * shape[1] - 1
    res = _Residual(econ, warm, agent_tol, position_smoothing)

    x0 = np.clip(start.free_vector(), _PRICE_FLOOR, _PRICE_CEIL)
    try:
        start_report = res.report_at(
            TildePrices.from_free_vector(x0, shape), advance=True)
    except AgentSolverError:
        return Phase2Result(start, warm, -np.inf, res.evals)
    start_value = augmented_walrasian(start_report, g, params)

    max_nfev = max(5, budget // (n + 1))
    try:
        sol = least_squares(
            res, x0, bounds=(_PRICE_FLOOR, _PRICE_CEIL),
            # wide finite-difference step: excess-supply evaluations carry
            # agent-solver noise ~1e-4, so differences must dominate it
            method="trf", diff_step=max(1e-2, 0.001 * initial_radius),
            x_scale="jac", xtol=1e-10, ftol=1e-10, gtol=1e-14,
            max_nfev=max_nfev)
        prices = TildePrices.from_free_vector(
            np.maximum(sol.x, _PRICE_FLOOR), shape)
        report = res.report_at(prices, advance=True)
    except AgentSolverError:
        return Phase2Result(start, start_report, start_value, res.evals)
    if _residual_norm(report) > _residual_norm(start_report):
        # defensive: the trust-region pass never worsens its own cost,
        # but a final re-evaluation could (multi-valued demand edge)
        return Phase2Result(start, start_report, start_value, res.evals)
    value = augmented_walrasian(report, g, params)
    return Phase2Result(prices, report, value, res.evals)


def _residual_norm(report: ExcessSupplyReport) -> float:
    es = TildePrices.flat_order(report.es)[1:]
    return float(np.sqrt(es @ es + report.financial_imbalance @ report.financial_imbalance))


def solve_equilibrium(econ: Economy, cfg: SolverConfig,
                      start: Optional[TildePrices] = None) -> EquilibriumResult:
    """Run the alternating loop until an epsilon-equilibrium or the cap.

    The position-smoothing weight of the agent subproblems decays
    geometrically across iterations and is dropped entirely below the
    configured floor, so late iterations work on the exact economy.
    When an exact pass stalls short of the tolerance, the next
    iteration briefly re-anneals at the floor weight -- this re-centers
    the agents' warm starts on the smoothed demand manifold, from which
    the exact pass reliably converges.  Convergence is always measured
    on the exact economy.
    """
    prices = start if start is not None else default_start(econ)
    if prices.shape != econ.price_shape:
        raise ValidationError("start prices do not match the economy's dimensions")
    n_free = econ.num_goods * econ.num_stages - 1
    budget = cfg.phase2_budget if cfg.phase2_budget is not None else 30 * n_free

    report = aggregate_excess_supply(econ, prices, agent_tol=cfg.agent_tol,
                                     best_effort=True)
    r, k = cfg.r0, cfg.k0
    trace = []
    status = MAX_ITERS
    smooth_warm: Optional[ExcessSupplyReport] = None

    if is_epsilon_equilibrium(report, cfg.epsilon):
        status = CONVERGED
    else:
        tau = cfg.smoothing0
        if tau < cfg.smoothing_floor:
            tau = 0.0
        viol_at_last_r_increase = -report.worst_shortage
        for nu in range(1, cfg.max_outer_iters + 1):
            tick = time.perf_counter()
            params = AugmentedParams(cfg.penalty_rho, r, k)
            g = phase1(report, params)
            step = phase2(econ, g, params, prices, budget, seed=cfg.rng_seed,
                          agent_tol=cfg.agent_tol, warm=smooth_warm,
                          initial_radius=cfg.phase2_initial_radius,
                          position_smoothing=tau)
            if step.report is not None:
                prices = step.prices
                smooth_warm = step.report
                # convergence is judged on the exact economy
                if tau == 0.0:
                    report = step.report
                else:
                    try:
                        report = aggregate_excess_supply(
                            econ, prices, warm=step.report,
                            agent_tol=cfg.agent_tol, best_effort=True)
                    except AgentSolverError:
                        pass
            trace.append(IterationRecord(
                iteration=nu, r_used=r, k_used=k, prices=prices, duals=g,
                es_snapshot=report.es.copy(), ec_norm=report.ec_norm,
                w_value=step.value,
                inf_walrasian=infimum_walrasian(report, cfg.penalty_rho, k),
                wall_clock_seconds=time.perf_counter() - tick))
            if is_epsilon_equilibrium(report, cfg.epsilon):
                status = CONVERGED
                break
            # grow r only when the worst shortage is not shrinking
            viol = -report.worst_shortage
            if viol > 0.9 * viol_at_last_r_increase:
                r = min(cfg.r_max, r * cfg.r_growth)
                viol_at_last_r_increase = viol
            k = min(cfg.k_max, k * cfg.k_growth)
            if tau > 0.0:
                tau = tau * cfg.smoothing_decay
                if tau < cfg.smoothing_floor:
                    tau = 0.0
            else:
                # exact pass stalled: re-anneal once at the floor weight
                tau = cfg.smoothing_floor

    recovered = None
    if status == CONVERGED:
        try:
            recovered = recover_prices(econ, prices)
        except ZeroStatePriceError:
            recovered = None
    return EquilibriumResult(status=status, p_tilde=prices, final_report=report,
                             trace=tuple(trace), recovered=recovered)


def trace_header(shape) -> str:
    G, S = shape
    cols = ["iter", "r", "K", "wall_s", "w_value", "inf_w", "ec_norm"]
    cols += [f"ptilde_{xi}_{l}" for xi in range(S) for l in range(G)]
    cols += [f"es_{xi}_{l}" for xi in range(S) for l in range(G)]
    return ",".join(cols)


def write_trace_csv(trace, path, include_timing: bool = False) -> None:
    """Export the iteration trace; timing column zeroed by default.

    Wall-clock values vary run to run, so they are written as 0.0
    unless ``include_timing`` is set; everything else is bit-for-bit
    reproducible for a fixed configuration.
    """
    if not trace:
        raise ValidationError("empty trace")
    shape = trace[0].prices.shape
    lines = [trace_header(shape)]
    for rec in trace:
        wall = rec.wall_clock_seconds if include_timing else 0.0
        row = [str(rec.iteration), repr(rec.r_used), repr(rec.k_used),
               repr(float(wall)), repr(rec.w_value), repr(rec.inf_walrasian),
               repr(rec.ec_norm)]
        row += [repr(float(v)) for v in TildePrices.flat_order(rec.prices.values)]
        row += [repr(float(v)) for v in TildePrices.flat_order(rec.es_snapshot)]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
