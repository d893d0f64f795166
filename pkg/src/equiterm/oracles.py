"""Independent reference solutions used to cross-check the general solver.

Three routes that never touch the Newton/price-adjustment machinery:

* a closed-form relation between the two expected prices of a one-delivery,
  two-trading-time market (risk premium = total cost covariance with the
  delivery-time price divided by the market's aggregate risk tolerance),
* the expectation-only (no variance penalty) equilibrium, solved per
  delivery by bisection against the merit-order supply step function,
* an exhaustive multi-resolution price-grid scan for tiny markets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .assembly import PlayerProblem, assemble_producer
from .equilibrium import EquilibriumResult, Market
from .errors import EquitermError, ScenarioError
from .players import PlayerSolution, solve_qp
from .scenario import Scenario

__all__ = [
    "TwoStageParams",
    "two_stage_price",
    "two_stage_check",
    "producer_solution_with_fixed_totals",
    "MeanMaxResult",
    "DeliveryMeanMax",
    "mean_max_equilibrium",
    "GridSpec",
    "BruteForceResult",
    "brute_force_equilibrium",
]


# ---------------------------------------------------------------------------
# two-stage closed form


@dataclass(frozen=True)
class TwoStageParams:
    """Inputs of the two-stage price relation.

    ``cost_covariances[p]`` is the covariance, seen from the first trading
    time, between the delivery-time power price and producer p's realized
    fuel-plus-emission procurement cost at fixed total volume;
    ``retail`` is the demand-share-weighted sum of retail prices.
    """

    expected_t2_price: float
    lambdas: tuple[float, ...]
    cost_covariances: tuple[float, ...]
    demand_covariance: float = 0.0
    retail: float = 0.0

    def __post_init__(self):
        if not self.lambdas:
            raise ScenarioError("need at least one risk aversion")
        for lam in self.lambdas:
            if not math.isfinite(lam) or lam <= 0:
                raise ScenarioError("risk aversions must be finite and positive")
        for v in (self.expected_t2_price, self.demand_covariance, self.retail,
                  *self.cost_covariances):
            if not math.isfinite(v):
                raise ScenarioError("two-stage parameters must be finite")


def two_stage_price(params: TwoStageParams) -> float:
    """First trading-time price implied by clearing at the second one.

    price(t1) = E[price(t2)] + (sum_p cost_cov_p - retail * demand_cov) / T,
    with T = sum_k 1/lambda_k the aggregate risk tolerance.  The premium
    vanishes as any player turns risk neutral.
    """
    tolerance = sum(1.0 / lam for lam in params.lambdas)
    premium = (sum(params.cost_covariances)
               - params.retail * params.demand_covariance) / tolerance
    return params.expected_t2_price + premium


@dataclass(frozen=True)
class TwoStageCheck:
    params: TwoStageParams
    predicted_t1: float
    solver_t1: float

    @property
    def rel_error(self) -> float:
        scale = max(1.0, abs(self.solver_t1))
        return abs(self.predicted_t1 - self.solver_t1) / scale


def two_stage_check(scenario: Scenario, result: EquilibriumResult) -> TwoStageCheck:
    """Compare a solved two-trading-time equilibrium against the closed form.

    Works in discounted units throughout (the relation is exact there);
    cost covariances are read off the covariance blocks at the producers'
    realized fuel and emission positions.
    """
    grid = scenario.grid
    if grid.n_deliveries != 1 or grid.sizes != (2,):
        raise ScenarioError("two-stage check needs one delivery with two trading times")
    blocks = scenario.covariance_blocks()
    n_fuels = len(scenario.fuel_names)
    nl = 2 * n_fuels  # width of the fuel block for N = 2

    cost_covs = []
    for k, producer in enumerate(scenario.producers):
        sol = result.player_solutions[k]
        im = assemble_producer(producer, scenario).index_map
        primal = sol.primal
        f_block = primal[im.n_v : im.n_v + im.n_f]
        o_block = primal[im.n_v + im.n_f : im.n_traded]
        # covariance of the discounted t2 power price with the discounted cost
        row = blocks.q2[1]
        cost_covs.append(float(row[:nl] @ f_block + row[nl:] @ o_block))

    lambdas = tuple(p.risk_aversion for p in scenario.producers) + tuple(
        c.risk_aversion for c in scenario.consumers
    )
    retail = sum(c.retail_price * c.demand_share for c in scenario.consumers)
    params = TwoStageParams(
        expected_t2_price=float(result.prices[1]),
        lambdas=lambdas,
        cost_covariances=tuple(cost_covs),
        demand_covariance=0.0,  # demand is deterministic in this model
        retail=retail,
    )
    return TwoStageCheck(params, two_stage_price(params), float(result.prices[0]))


def producer_solution_with_fixed_totals(problem: PlayerProblem, expected_prices,
                                        volume_totals) -> PlayerSolution:
    """Producer optimum with the per-delivery power totals pinned.

    Realizes the procurement-cost functional at a given committed volume:
    the producer still chooses the trade split, fuel and emission strategy,
    and dispatch, subject to sum_i V(t_i, T_j) = volume_totals[j].
    """
    grid = problem.index_map.grid
    totals = np.asarray(volume_totals, dtype=float)
    if totals.shape != (grid.n_deliveries,):
        raise ScenarioError("one volume total per delivery required")
    extra = np.zeros((grid.n_deliveries, problem.n_vars))
    pos = 0
    for j, m in enumerate(grid.sizes):
        extra[j, pos : pos + m] = 1.0
        pos += m
    restricted = replace(
        problem,
        eq_matrix=np.vstack([problem.eq_matrix, extra]),
        eq_rhs=np.concatenate([problem.eq_rhs, totals]),
        eq_labels=problem.eq_labels + tuple(("volume_total", j) for j in range(grid.n_deliveries)),
    )
    return solve_qp(restricted, expected_prices)


# ---------------------------------------------------------------------------
# expectation-only (mean maximization) equilibrium


@dataclass(frozen=True)
class DeliveryMeanMax:
    delivery: int
    price: float                         # representative undiscounted level
    volume: float
    kind: str                            # "volume-interval" | "price-interval"
    price_interval: tuple[float, float]
    volume_interval: tuple[float, float]


@dataclass(frozen=True)
class MeanMaxResult:
    prices: np.ndarray                   # discounted canonical (N,)
    deliveries: tuple[DeliveryMeanMax, ...]
    intra_delivery_spread: float
    converged: bool
    message: str
    notes: tuple[str, ...] = ()


def _supply_at(levels, price):
    """Capacity offered strictly below ``price`` on the merit stack."""
    return sum(cap for mc, cap in levels if mc < price)


def _bisect_crossing(levels, demand, lo, hi, tol=1e-12):
    """Smallest price at which offered capacity reaches the demand."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _supply_at(levels, mid) >= demand:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * max(1.0, abs(hi)):
            break
    return hi


def mean_max_equilibrium(scenario: Scenario) -> MeanMaxResult:
    """Clearing prices when every player maximizes expectation only.

    Supply per delivery is the merit-order step function of undiscounted
    marginal cost (fuel burn plus emission charge); demand is the inelastic
    total.  The crossing is located by bisection, then classified exactly:
    demand strictly inside a stack level pins the price at that level's
    marginal cost but leaves the level's dispatch free (volume interval);
    demand exactly at a stack edge leaves a whole price interval.
    """
    grid = scenario.grid
    notes = []

    # expectation-only trading runs to the boxes unless same-delivery fuel
    # quotes and all discounted emission quotes are flat
    for fuel in scenario.fuel_names:
        for j in range(grid.n_deliveries):
            row = scenario.exogenous.forwards_for(fuel)[j]
            if max(row) - min(row) > 1e-12 * max(1.0, abs(row[0])):
                return MeanMaxResult(
                    np.zeros(grid.n_contracts), (), 0.0, False,
                    f"expected {fuel} quotes vary within delivery {j}: the "
                    "expectation-only market rides its trading boxes", tuple(notes))
    gem_disc = [grid.discount(j) * v
                for j in range(grid.n_deliveries)
                for v in scenario.exogenous.emission_forwards[j]]
    if max(gem_disc) - min(gem_disc) > 1e-12 * max(1.0, abs(gem_disc[0])):
        return MeanMaxResult(
            np.zeros(grid.n_contracts), (), 0.0, False,
            "discounted emission quotes vary across the horizon: the "
            "expectation-only market rides its trading boxes", tuple(notes))

    if grid.n_deliveries > 1:
        tight = any(
            pl.ramp_up < pl.capacity or -pl.ramp_down < pl.capacity
            for p in scenario.producers for pl in p.plants
        )
        if tight:
            notes.append("ramp limits below capacity: deliveries treated "
                         "independently, result is an outer approximation")

    out = []
    prices = np.zeros(grid.n_contracts)
    pos = 0
    pi_max = scenario.bounds.pi_max
    for j in range(grid.n_deliveries):
        e_bar = scenario.exogenous.emission_forwards[j][0]
        raw_costs = []
        for producer in scenario.producers:
            for plant in producer.plants:
                g_bar = scenario.exogenous.forwards_for(plant.fuel)[j][0]
                mc = plant.efficiency * g_bar + scenario.fuels.intensity(plant.fuel) * e_bar
                raw_costs.append((mc, plant.capacity))
        raw_costs.sort()
        # merge ties into stack levels
        levels: list[tuple[float, float]] = []
        for mc, cap in raw_costs:
            if levels and abs(mc - levels[-1][0]) <= 1e-12 * max(1.0, abs(mc)):
                levels[-1] = (levels[-1][0], levels[-1][1] + cap)
            else:
                levels.append((mc, cap))
        D = scenario.exogenous.demand[j]
        total = sum(cap for _, cap in levels)
        if not levels or D <= 0.0 or D > total + 1e-12 * max(1.0, total):
            return MeanMaxResult(
                np.zeros(grid.n_contracts), tuple(out), 0.0, False,
                f"delivery {j}: demand {D} outside the producible range (0, {total}]",
                tuple(notes))
        lo = min(mc for mc, _ in levels) - 1.0 - abs(levels[0][0])
        hi = max(mc for mc, _ in levels) + 1.0 + abs(levels[-1][0])
        crossing = _bisect_crossing(levels, D, lo, hi)
        # classify against the exact stack
        cum = 0.0
        detail = None
        for idx, (mc, cap) in enumerate(levels):
            tie = 1e-9 * max(1.0, abs(cum + cap), abs(D))
            if abs(D - (cum + cap)) <= tie:
                upper = levels[idx + 1][0] if idx + 1 < len(levels) else pi_max
                detail = DeliveryMeanMax(
                    delivery=j,
                    price=0.5 * (mc + upper),
                    volume=D,
                    kind="price-interval",
                    price_interval=(mc, upper),
                    volume_interval=(D, D),
                )
                break
            if cum < D < cum + cap:
                detail = DeliveryMeanMax(
                    delivery=j,
                    price=mc,
                    volume=D,
                    kind="volume-interval",
                    price_interval=(mc, mc),
                    volume_interval=(cum, cum + cap),
                )
                break
            cum += cap
        if detail is None:  # numerical corner: snap to the bisection crossing
            detail = DeliveryMeanMax(j, crossing, D, "volume-interval",
                                     (crossing, crossing), (0.0, total))
        if detail.kind == "volume-interval" and abs(crossing - detail.price) > 1e-6 * max(1.0, abs(detail.price)):
            notes.append(f"delivery {j}: bisection crossing {crossing} differs "
                         f"from the stack price {detail.price}")
        out.append(detail)
        prices[pos : pos + grid.sizes[j]] = grid.discount(j) * detail.price
        pos += grid.sizes[j]

    spread = 0.0
    pos = 0
    for j, m in enumerate(grid.sizes):
        block = prices[pos : pos + m]
        spread = max(spread, float(block.max() - block.min()))
        pos += m
    return MeanMaxResult(prices, tuple(out), spread, True, "ok", tuple(notes))


# ---------------------------------------------------------------------------
# brute-force grid oracle


@dataclass(frozen=True)
class GridSpec:
    step: float = 1e-4
    points_per_level: int = 33
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.points_per_level < 5:
            raise ValueError("need at least 5 points per level")


@dataclass(frozen=True)
class BruteForceResult:
    prices: np.ndarray
    residual: float
    step: float
    evaluations: int
    levels: int


class _Counter:
    def __init__(self):
        self.n = 0


def _bisect_root(f, lo, hi, tol):
    """Root of a non-increasing scalar map on [lo, hi] by plain bisection."""
    f_lo, f_hi = f(lo), f(hi)
    if f_lo <= 0.0:
        return lo
    if f_hi >= 0.0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def brute_force_equilibrium(scenario: Scenario, grid_spec: GridSpec | None = None,
                            market: Market | None = None) -> BruteForceResult:
    """Exhaustive price search for tiny markets; shares only the per-player
    best responses with the main solver.

    The excess map is strictly decreasing off the pinned region, so for one
    contract the component is a monotone scalar and plain bisection brackets
    the root; for two contracts the second component is first zeroed in the
    second price (inner bisection) and the resulting reduced map, again
    monotone by the sign structure of the response sensitivities, is
    bisected in the first price.  Three contracts fall back to a
    multi-resolution scan of the full box.  The winner lies within one grid
    step of the true equilibrium.
    """
    spec = grid_spec or GridSpec()
    market = market or Market(scenario)
    n = market.n_prices
    if n > 3:
        raise EquitermError(f"brute force limited to 3 contracts, got {n}")
    lo, hi = market.price_box()
    if spec.lo is not None:
        lo = np.asarray(spec.lo, dtype=float)
    if spec.hi is not None:
        hi = np.asarray(spec.hi, dtype=float)
    lo = lo.astype(float).copy()
    hi = hi.astype(float).copy()

    count = _Counter()

    def z_at(p):
        count.n += 1
        z, _ = market.excess(np.asarray(p, dtype=float))
        return z

    if n == 1:
        root = _bisect_root(lambda p: float(z_at([p])[0]), lo[0], hi[0], 0.5 * spec.step)
        price = np.array([root])
        resid = float(np.max(np.abs(z_at(price))))
        return BruteForceResult(price, resid, spec.step, count.n, 1)

    if n == 2:
        inner_tol = 0.01 * spec.step

        def second_root(p1):
            return _bisect_root(lambda p2: float(z_at([p1, p2])[1]),
                                lo[1], hi[1], inner_tol)

        def reduced(p1):
            return float(z_at([p1, second_root(p1)])[0])

        p1 = _bisect_root(reduced, lo[0], hi[0], 0.5 * spec.step)
        price = np.array([p1, second_root(p1)])
        resid = float(np.max(np.abs(z_at(price))))
        return BruteForceResult(price, resid, spec.step, count.n, 2)

    # n == 3: multi-resolution scan of the full box
    box_lo, box_hi = lo.copy(), hi.copy()
    pts = spec.points_per_level
    best_price = 0.5 * (lo + hi)
    best_resid = np.inf
    levels = 0
    while True:
        levels += 1
        spacing = (hi - lo) / (pts - 1)
        axes = [np.linspace(lo[k], hi[k], pts) for k in range(n)]
        for combo in itertools.product(*axes):
            p = np.array(combo)
            r = float(np.max(np.abs(z_at(p))))
            if r < best_resid:
                best_resid = r
                best_price = p
        if float(np.max(spacing)) <= spec.step * (1 + 1e-12):
            break
        half = np.maximum(1.5 * spacing, 0.5 * spec.step * (pts - 1))
        lo = np.maximum(box_lo, best_price - half)
        hi = np.minimum(box_hi, best_price + half)
    return BruteForceResult(best_price, best_resid, spec.step, count.n, levels)
