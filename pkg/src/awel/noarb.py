"""Price recovery from the reduced system and arbitrage detection.

The reduced prices fold the contract prices into scenario-wise goods
prices.  Unfolding gives the state prices (the second-stage numeraire
entries), the normalized goods prices, and contract prices as the
state-price-weighted sum of payoff values.  Prices built this way admit
strictly positive state prices, so they never support an arbitrage; the
check is still run as an LP for use on externally supplied prices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .economy import Economy, TildePrices, ValidationError
from .simplex import SimplexError, maximize as _lp_maximize

STATE_PRICE_TOL = 1e-12
DEFAULT_MARGIN = 1e-9


class ZeroStatePriceError(ValueError):
    """A second-stage numeraire price is (numerically) zero; recovery undefined."""


@dataclass(frozen=True)
class RecoveredPrices:
    """Original-economy prices unfolded from a reduced price vector."""

    goods_prices: np.ndarray     # (goods, stages), numeraire row = 1 in scenarios
    contract_prices: np.ndarray  # (contracts,)
    state_prices: np.ndarray     # (scenarios,), strictly positive
    interest_rate: Optional[float]  # set only when contract 0 is a numeraire bond

    def __post_init__(self):
        for name in ("goods_prices", "contract_prices", "state_prices"):
            a = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            a.setflags(write=False)
            object.__setattr__(self, name, a)


def _is_numeraire_bond(econ: Economy) -> bool:
    """Contract 0 pays one unit of good 0 in every scenario and nothing else."""
    if econ.num_contracts == 0:
        return False
    unit = np.zeros(econ.num_goods)
    unit[0] = 1.0
    return all(np.array_equal(econ.returns[xi][:, 0], unit)
               for xi in range(econ.num_scenarios))


def contract_values(econ: Economy, p_tilde: TildePrices) -> np.ndarray:
    """Contract prices implied by reduced prices: sum of scenario payoff values."""
    p = p_tilde.values
    q = np.zeros(econ.num_contracts)
    for xi in range(econ.num_scenarios):
        q += econ.returns[xi].T @ p[:, xi + 1]
    return q


def recover_prices(econ: Economy, p_tilde: TildePrices) -> RecoveredPrices:
    """Unfold reduced prices into goods prices, contract prices, state prices."""
    if p_tilde.shape != econ.price_shape:
        raise ValidationError("price matrix does not match the economy's dimensions")
    p = p_tilde.values
    sigma = p[0, 1:].copy()
    if np.any(sigma <= STATE_PRICE_TOL):
        raise ZeroStatePriceError(
            "state price at or below %g in some scenario; cannot normalize" % STATE_PRICE_TOL)
    goods = np.empty_like(p)
    goods[:, 0] = p[:, 0]
    goods[:, 1:] = p[:, 1:] / sigma[None, :]
    goods[0, 1:] = 1.0  # exact, not up to rounding
    q = contract_values(econ, p_tilde)
    rate = None
    if _is_numeraire_bond(econ) and q[0] > 0:
        rate = float(1.0 / q[0] - 1.0)
    return RecoveredPrices(goods_prices=goods, contract_prices=q,
                           state_prices=sigma, interest_rate=rate)


def reduce_prices(econ: Economy, recovered: RecoveredPrices) -> TildePrices:
    """Inverse of recover_prices: rescale scenario prices by state prices."""
    p = np.array(recovered.goods_prices)
    p[:, 1:] *= recovered.state_prices[None, :]
    return TildePrices(p)


def check_no_arbitrage(econ: Economy, recovered: RecoveredPrices,
                       margin: float = DEFAULT_MARGIN):
    """Search for a portfolio with a nonnegative, nonzero payoff vector.

    The payoff matrix stacks the stage-0 row ``-q`` over the scenario
    rows of payoff values.  The LP maximizes the total payoff over unit
    portfolios whose payoff vector is componentwise nonnegative; a best
    value above ``margin`` is a free lunch (this catches both strict
    arbitrages and zero-cost positive payoffs).  Returns
    ``(ok, witness)`` with ``witness`` the offending portfolio or None.
    """
    if margin <= 0:
        raise ValidationError("margin must be positive")
    C = econ.num_contracts
    if C == 0:
        return True, None
    rows = [-recovered.contract_prices]
    for xi in range(econ.num_scenarios):
        rows.append(econ.returns[xi].T @ recovered.goods_prices[:, xi + 1])
    M = np.asarray(rows)
    S = M.shape[0]
    # variables: z+ (C), z- (C); maximize 1.M(z+ - z-)
    # subject to M(z+ - z-) >= 0 and z+ + z- <= 1 per contract
    n = 2 * C
    A = np.zeros((S + C, n))
    b = np.zeros(S + C)
    A[:S, :C] = -M
    A[:S, C:] = M
    A[S:, :C] = np.eye(C)
    A[S:, C:] = np.eye(C)
    b[S:] = 1.0
    total = M.sum(axis=0)
    obj = np.concatenate([total, -total])
    try:
        value, x = _lp_maximize(obj, A, b)
    except SimplexError as exc:
        raise SimplexError(f"arbitrage LP failed: {exc}") from exc
    if value <= margin:
        return True, None
    return False, x[:C] - x[C:]
