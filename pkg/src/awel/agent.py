"""Per-agent utility maximization over the reduced-price budget set.

Each agent maximizes a concave utility over consumption, retention,
home-production activity, and long/short contract positions, subject to
one budget inequality per stage.  All constraints are linear in the
decision variables, so the problem is handled with an augmented-penalty
treatment of the budget inequalities around a bound-constrained inner
minimization: L-BFGS-B for fast global progress, then an active-set
Newton refinement (analytic Hessian) that drives the projected KKT
residual down to tight tolerances.  A spectral projected-gradient
loop remains as a derivative-only fallback.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .economy import (ACTIVITY_CAP, CONSUMPTION_FLOOR, AgentSpec, Economy,
                      TildePrices)

DEFAULT_TOL = 1e-8
MAX_INNER_ITERS = 5000
_LBFGS_ROUNDS = 25
_POLISH_ROUNDS = 30
_LS_MEMORY = 8
_BETA_CAP = 1e4


class AgentSolverError(RuntimeError):
    """Agent solve failed; ``best`` carries the best point found (may be None)."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class AgentSolution:
    """Optimal point of one agent's problem at fixed reduced prices."""

    consumption: np.ndarray       # (goods, stages)
    retention: np.ndarray         # (goods, stages)
    activity: np.ndarray          # (activity_dim,)
    long_position: np.ndarray     # (contracts,)
    short_position: np.ndarray    # (contracts,)
    excess_supply: np.ndarray     # (goods, stages)
    utility_value: float
    kkt_residual: float
    budget_slacks: np.ndarray     # (stages,)
    budget_multipliers: np.ndarray  # (stages,)
    penalty: float                # augmented-penalty weight at exit (warm-start state)

    @property
    def net_position(self) -> np.ndarray:
        return self.long_position - self.short_position


def individual_excess_supply(agent: AgentSpec, econ: Economy,
                             consumption, retention, activity,
                             long_position, short_position) -> np.ndarray:
    """Net goods the agent puts on the market, per (good, stage)."""
    G, S = econ.price_shape
    c = np.asarray(consumption, dtype=float)
    w = np.asarray(retention, dtype=float)
    y = np.asarray(activity, dtype=float)
    zm = np.asarray(short_position, dtype=float)
    z = np.asarray(long_position, dtype=float) - zm
    if c.shape != (G, S) or w.shape != (G, S):
        raise ValueError("consumption/retention shape mismatch")
    s = np.empty((G, S))
    s[:, 0] = (agent.endowment[:, 0] - c[:, 0] - w[:, 0]
               - econ.issue_cost @ zm - agent.home_input @ y)
    for xi in range(1, S):
        s[:, xi] = (agent.endowment[:, xi] + econ.returns[xi - 1] @ z
                    + agent.retention_carry[xi - 1] @ w[:, 0]
                    + agent.home_output[xi - 1] @ y
                    - c[:, xi] - w[:, xi])
    return s


def solution_excess_supply(agent: AgentSpec, econ: Economy, sol: AgentSolution) -> np.ndarray:
    """Recompute the individual excess supply from a solution's decisions."""
    return individual_excess_supply(agent, econ, sol.consumption, sol.retention,
                                    sol.activity, sol.long_position, sol.short_position)


class _Problem:
    """Linearized structure of one agent problem at fixed prices."""

    def __init__(self, agent: AgentSpec, econ: Economy, prices: TildePrices,
                 position_smoothing: float = 0.0):
        self.tau = float(position_smoothing)
        G, S = econ.price_shape
        Xi, C, ma = econ.num_scenarios, econ.num_contracts, agent.activity_dim
        self.agent, self.econ = agent, econ
        self.G, self.S, self.ncw = G, S, G * S
        self.ma, self.C = ma, C
        n = 2 * self.ncw + ma + 2 * C
        self.n = n
        p = prices.values
        # contract value at reduced prices: q_tilde = sum_xi D_xi^T p_xi
        q_tilde = np.zeros(C)
        for xi in range(Xi):
            q_tilde += econ.returns[xi].T @ p[:, xi + 1]

        B = np.zeros((S, n))
        b = np.empty(S)
        # consumption/retention flattened good-major: index l*S + stage
        cidx = np.arange(G) * S
        off_y = 2 * self.ncw
        off_zp = off_y + ma
        off_zm = off_zp + C
        # stage-0 budget
        B[0, cidx] = -p[:, 0]
        B[0, self.ncw + cidx] = -p[:, 0]
        B[0, off_y:off_zp] = -(agent.home_input.T @ p[:, 0])
        B[0, off_zp:off_zm] = -q_tilde
        B[0, off_zm:] = -(econ.issue_cost.T @ p[:, 0]) + q_tilde
        b[0] = p[:, 0] @ agent.endowment[:, 0]
        # scenario budgets
        for xi in range(1, S):
            pxi = p[:, xi]
            dv = econ.returns[xi - 1].T @ pxi
            B[xi, cidx + xi] = -pxi
            B[xi, self.ncw + cidx + xi] = -pxi
            B[xi, self.ncw + cidx] += agent.retention_carry[xi - 1].T @ pxi
            B[xi, off_y:off_zp] = agent.home_output[xi - 1].T @ pxi
            B[xi, off_zp:off_zm] = dv
            B[xi, off_zm:] = -dv
            b[xi] = pxi @ agent.endowment[:, xi]
        self.B, self.b = B, b
        self.Bt = np.ascontiguousarray(B.T)

        lo = np.zeros(n)
        hi = np.empty(n)
        hi[:2 * self.ncw] = econ.consumption_bound
        hi[off_y:off_zp] = ACTIVITY_CAP
        hi[off_zp:] = econ.contract_bound
        self.lo, self.hi = lo, hi
        self.off_y, self.off_zp, self.off_zm = off_y, off_zp, off_zm

    def split(self, x):
        c = x[:self.ncw].reshape(self.G, self.S)
        w = x[self.ncw:2 * self.ncw].reshape(self.G, self.S)
        y = x[self.off_y:self.off_zp]
        zp = x[self.off_zp:self.off_zm]
        zm = x[self.off_zm:]
        return c, w, y, zp, zm

    def start_point(self):
        x = np.zeros(self.n)
        c0 = np.clip(self.agent.endowment / 2.0, CONSUMPTION_FLOOR,
                     self.econ.consumption_bound)
        x[:self.ncw] = c0.ravel()
        return x

    def neg_utility(self, x):
        """Negative (smoothed) utility and its gradient in the full vector.

        A strictly convex term tau*(|z+|^2 + |z-|^2) makes the optimal
        positions unique when contract payoffs leave them otherwise
        indeterminate; tau=0 recovers the exact problem.
        """
        c, w, _, _, _ = self.split(x)
        val, (gc, gw) = self.agent.utility.value_and_gradient(c, w)
        g = np.zeros(self.n)
        g[:self.ncw] = -gc.ravel()
        g[self.ncw:2 * self.ncw] = -gw.ravel()
        f = -val
        if self.tau > 0.0:
            z = x[self.off_zp:]
            f += self.tau * float(z @ z)
            g[self.off_zp:] += 2.0 * self.tau * z
        return f, g

    def penalized(self, x, mu, beta):
        f, g = self.neg_utility(x)
        h = self.B @ x + self.b
        t = np.maximum(0.0, mu - beta * h)
        f += (t @ t - mu @ mu) / (2.0 * beta)
        g -= self.Bt @ t
        return f, g

    def kkt_residual(self, x, mu):
        _, gf = self.neg_utility(x)
        h = self.B @ x + self.b
        gL = gf - self.Bt @ mu
        pg = float(np.max(np.abs(x - _project(x - gL, self.lo, self.hi))))
        viol = max(0.0, float(-np.min(h, initial=0.0)))
        comp = float(np.max(np.abs(mu * h), initial=0.0))
        return max(pg, viol, comp), h


def _project(x, lo, hi):
    return np.minimum(np.maximum(x, lo), hi)


def _neg_utility_hessian(problem, x):
    """Dense Hessian of -U in the full variable vector, or None."""
    c, w, _, _, _ = problem.split(x)
    blocks = problem.agent.utility.hessian_blocks(c, w)
    if blocks is None:
        return None
    hcc, hww, hcw = blocks
    n, G, S, ncw = problem.n, problem.G, problem.S, problem.ncw
    H = np.zeros((n, n))
    cidx = np.arange(G) * S
    for s in range(S):
        ic = cidx + s
        iw = ncw + cidx + s
        H[np.ix_(ic, ic)] = -hcc[s]
        H[np.ix_(iw, iw)] = -hww[s]
        H[np.ix_(ic, iw)] = -hcw[s]
        H[np.ix_(iw, ic)] = -hcw[s].T
    if problem.tau > 0.0:
        idx = np.arange(problem.off_zp, n)
        H[idx, idx] += 2.0 * problem.tau
    return H


def _newton_polish(problem, x, mu, tol, rounds=12):
    """Active-set Newton refinement of a near-optimal point.

    Solves the KKT equality system on the free variables and active
    budgets; quadratically sharpens the residual left by the
    first-order loop.  Returns the best (kkt, x, mu) found.
    """
    lo, hi = problem.lo, problem.hi
    B, b = problem.B, problem.b
    kkt, _ = problem.kkt_residual(x, mu)
    best = (kkt, x.copy(), mu.copy())
    for _ in range(rounds):
        H = _neg_utility_hessian(problem, x)
        if H is None:
            break
        _, gf = problem.neg_utility(x)
        h = B @ x + b
        gL = gf - problem.Bt @ mu
        at_lo = (x <= lo + 1e-9) & (gL >= 0.0)
        at_hi = (x >= hi - 1e-9) & (gL <= 0.0)
        free = ~(at_lo | at_hi)
        act = (mu > 1e-12) | (h < 1e-9)
        nf, na = int(free.sum()), int(act.sum())
        if nf == 0:
            break
        Ba = B[np.ix_(act, free)]
        K = np.zeros((nf + na, nf + na))
        K[:nf, :nf] = H[np.ix_(free, free)]
        K[:nf, nf:] = -Ba.T
        K[nf:, :nf] = Ba
        rhs = np.concatenate([-gL[free], -h[act]])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        if not np.all(np.isfinite(sol)) or np.max(np.abs(sol)) > 1e6:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            if not np.all(np.isfinite(sol)) or np.max(np.abs(sol)) > 1e6:
                break
        dx = np.zeros_like(x)
        dx[free] = sol[:nf]
        dmu = np.zeros_like(mu)
        dmu[act] = sol[nf:]
        step = 1.0
        improved = False
        for _ in range(6):
            xn = _project(x + step * dx, lo, hi)
            mun = np.maximum(0.0, mu + step * dmu)
            kn, _ = problem.kkt_residual(xn, mun)
            if kn < best[0]:
                x, mu = xn, mun
                best = (kn, xn.copy(), mun.copy())
                improved = True
                break
            step *= 0.5
        if not improved or best[0] <= tol:
            break
    return best


def _spg(problem, x, mu, beta, omega, iter_budget):
    """Spectral projected-gradient descent on the penalized objective."""
    lo, hi = problem.lo, problem.hi
    f, g = problem.penalized(x, mu, beta)
    history = [f]
    alpha = 1.0 / max(1.0, float(np.max(np.abs(g))))
    used = 0
    while used < iter_budget:
        pg = _project(x - g, lo, hi) - x
        if np.max(np.abs(pg)) <= omega:
            break
        d = _project(x - alpha * g, lo, hi) - x
        gd = g @ d
        if gd > -1e-18:
            alpha = 1.0
            d = pg
            gd = g @ d
            if gd > -1e-18:
                break
        fmax = max(history)
        step = 1.0
        while True:
            xn = x + step * d
            fn, gn = problem.penalized(xn, mu, beta)
            used += 1
            if fn <= fmax + 1e-4 * step * gd or step < 1e-13:
                break
            step *= 0.5
        s = xn - x
        yv = gn - g
        sy = s @ yv
        ss = s @ s
        alpha = min(max(ss / sy, 1e-10), 1e10) if sy > 1e-14 * max(ss, 1e-30) else 1.0
        x, f, g = xn, fn, gn
        history.append(f)
        if len(history) > _LS_MEMORY:
            history.pop(0)
    return x, used


def _solve_al(problem, x0, mu0, beta0, tol, max_iter):
    """Multiplier loop: L-BFGS-B rounds, then an SPG polish."""
    x = _project(np.asarray(x0, dtype=float).copy(), problem.lo, problem.hi)
    mu = np.asarray(mu0, dtype=float).copy()
    beta = float(np.clip(beta0, 10.0, _BETA_CAP))
    bounds = list(zip(problem.lo, problem.hi))
    used = 0
    best = (np.inf, x.copy(), mu.copy(), beta)
    kkt_prev = np.inf

    # A warm start near the optimum can often be finished by Newton alone.
    kkt0, _ = problem.kkt_residual(x, mu)
    if kkt0 <= 1e-2:
        kn, xn, mun = _newton_polish(problem, x, mu, tol)
        if kn < best[0]:
            best = (kn, xn, mun, beta)
        if kn <= tol:
            return (*best, used)

    for _ in range(_LBFGS_ROUNDS):
        res = _scipy_minimize(
            problem.penalized, x, args=(mu, beta), method="L-BFGS-B",
            jac=True, bounds=bounds,
            options=dict(maxiter=2000, maxcor=20, ftol=1e-18,
                         gtol=max(0.03 * tol, 1e-12), maxls=60))
        used += res.nfev
        x = res.x
        h = problem.B @ x + problem.b
        mu = np.maximum(0.0, mu - beta * h)
        kkt, h = problem.kkt_residual(x, mu)
        if kkt < best[0]:
            best = (kkt, x.copy(), mu.copy(), beta)
        if kkt <= tol or used >= max_iter:
            return (*best, used)
        if kkt <= 1e-2:
            # close enough for the second-order refinement to take over
            kn, xn, mun = _newton_polish(problem, best[1], best[2], tol)
            if kn < best[0]:
                best = (kn, xn, mun, best[3])
            if kn <= tol:
                return (*best, used)
        if kkt > 0.2 * kkt_prev:
            if beta >= _BETA_CAP:
                break  # multiplier iteration saturated; hand over to polish
            beta = min(beta * 10.0, _BETA_CAP)
        kkt_prev = kkt

    # SPG polish from the best point seen, with a moderate penalty weight
    kkt, x, mu, beta = best
    beta = min(beta, 1e3)
    omega = 0.3 * tol
    for _ in range(_POLISH_ROUNDS):
        if used >= max_iter:
            break
        x, it = _spg(problem, x, mu, beta, omega, max_iter - used)
        used += it
        h = problem.B @ x + problem.b
        mu = np.maximum(0.0, mu - beta * h)
        kkt, h = problem.kkt_residual(x, mu)
        if kkt < best[0]:
            best = (kkt, x.copy(), mu.copy(), beta)
        kn, xn, mun = _newton_polish(problem, best[1], best[2], tol)
        if kn < best[0]:
            best = (kn, xn, mun, best[3])
        if best[0] <= tol:
            break
    return (*best, used)


def solve_agent(agent: AgentSpec, econ: Economy, prices: TildePrices,
                warm_start: Optional[AgentSolution] = None,
                tol: float = DEFAULT_TOL,
                max_iter: int = MAX_INNER_ITERS,
                position_smoothing: float = 0.0) -> AgentSolution:
    """Solve one agent's problem to a projected-KKT residual of ``tol``.

    ``position_smoothing`` adds a strictly convex penalty on the
    contract positions that makes the demand correspondence
    single-valued; pass 0 for the exact problem.

    Deterministic given (inputs, warm_start).  Raises AgentSolverError
    when the residual target cannot be met within the evaluation budget;
    the error carries the best point found.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    problem = _Problem(agent, econ, prices, position_smoothing=position_smoothing)

    attempts = []
    if warm_start is not None:
        x = np.concatenate([
            warm_start.consumption.ravel(), warm_start.retention.ravel(),
            warm_start.activity, warm_start.long_position, warm_start.short_position,
        ])
        if x.shape == (problem.n,):
            attempts.append((x, warm_start.budget_multipliers.copy(),
                             warm_start.penalty))
    attempts.append((problem.start_point(), np.zeros(problem.S), 10.0))

    best = None
    for x0, mu0, beta0 in attempts:
        kkt, x, mu, beta, _ = _solve_al(problem, x0, mu0, beta0, tol, max_iter)
        if best is None or kkt < best[0]:
            best = (kkt, x, mu, beta)
        if kkt <= tol:
            break

    kkt, x, mu, beta = best
    c, w, y, zp, zm = problem.split(x)
    sol = AgentSolution(
        consumption=c.copy(), retention=w.copy(), activity=y.copy(),
        long_position=zp.copy(), short_position=zm.copy(),
        excess_supply=individual_excess_supply(agent, econ, c, w, y, zp, zm),
        utility_value=agent.utility.value(c, w),
        kkt_residual=kkt,
        budget_slacks=problem.B @ x + problem.b,
        budget_multipliers=mu,
        penalty=beta,
    )
    if kkt > tol:
        raise AgentSolverError(
            f"agent solver stalled: KKT residual {kkt:.3e} > tol {tol:.1e}", best=sol)
    return sol
