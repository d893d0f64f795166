"""Scenario validation: feasibility certificates and bound adequacy.

Every economic precondition of the equilibrium analysis becomes a runtime
check here: strictly interior feasible points per player (certified by a
phase-I linear program maximizing the worst constraint slack), joint
feasibility of market clearing at interior points, positive definiteness
of the covariance, and heuristic adequacy of the trading and price boxes
(the boxes must be loose enough never to bind at an equilibrium).
Failures are reported, never raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .assembly import assemble_all
from .errors import CovarianceError, EquitermError
from .scenario import Scenario

__all__ = ["CheckResult", "ValidationReport", "validate_scenario", "FEAS_MARGIN"]

FEAS_MARGIN = 1e-6
MARGIN_CAP = 1.0  # phase-I slack variable cap keeps the LP bounded


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    message: str
    data: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]
    feas_margin: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> tuple[CheckResult, ...]:
        return tuple(c for c in self.checks if not c.passed)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "feas_margin": self.feas_margin,
            "checks": [
                {"name": c.name, "passed": c.passed, "message": c.message, "data": dict(c.data)}
                for c in self.checks
            ],
        }


def _interior_margin(A, a, B, b):
    """max t s.t. Av = a, Bv + t <= b, t <= cap; returns (margin, status)."""
    n = A.shape[1]
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))]) if A.shape[0] else None
    A_ub = np.hstack([B, np.ones((B.shape[0], 1))])
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=b,
        A_eq=A_eq,
        b_eq=a if A.shape[0] else None,
        bounds=[(None, None)] * n + [(None, MARGIN_CAP)],
        method="highs",
    )
    if res.status == 2:
        return None, "infeasible"
    if not res.success:
        return None, res.message
    return float(res.x[-1]), "ok"


def _joint_clearing_margin(scenario, problems):
    """Phase-I over all players at once with the clearing rows coupled in."""
    sizes = [p.n_vars for p in problems]
    offsets = np.cumsum([0] + sizes)
    total = offsets[-1]
    n_nodes = scenario.n_contracts

    eq_rows, eq_rhs = [], []
    for k, p in enumerate(problems):
        for r in range(p.eq_matrix.shape[0]):
            row = np.zeros(total + 1)
            row[offsets[k] : offsets[k] + p.n_vars] = p.eq_matrix[r]
            eq_rows.append(row)
            eq_rhs.append(p.eq_rhs[r])
    for node in range(n_nodes):
        row = np.zeros(total + 1)
        for k, p in enumerate(problems):
            row[offsets[k] + node] = 1.0  # V block leads every player vector
        eq_rows.append(row)
        eq_rhs.append(0.0)

    ub_rows, ub_rhs = [], []
    for k, p in enumerate(problems):
        for r in range(p.ineq_matrix.shape[0]):
            row = np.zeros(total + 1)
            row[offsets[k] : offsets[k] + p.n_vars] = p.ineq_matrix[r]
            row[-1] = 1.0
            ub_rows.append(row)
            ub_rhs.append(p.ineq_rhs[r])

    c = np.zeros(total + 1)
    c[-1] = -1.0
    res = linprog(
        c,
        A_ub=np.array(ub_rows),
        b_ub=np.array(ub_rhs),
        A_eq=np.array(eq_rows),
        b_eq=np.array(eq_rhs),
        bounds=[(None, None)] * total + [(None, MARGIN_CAP)],
        method="highs",
    )
    if res.status == 2:
        return None, "infeasible"
    if not res.success:
        return None, res.message
    return float(res.x[-1]), "ok"


def _marginal_costs(scenario):
    out = []
    for j in range(scenario.grid.n_deliveries):
        e_bar = float(np.mean(scenario.exogenous.emission_forwards[j]))
        for producer in scenario.producers:
            for plant in producer.plants:
                g_bar = float(np.mean(scenario.exogenous.forwards_for(plant.fuel)[j]))
                out.append(plant.efficiency * g_bar
                           + scenario.fuels.intensity(plant.fuel) * e_bar)
    return out


def validate_scenario(scenario: Scenario, feas_margin: float = FEAS_MARGIN) -> ValidationReport:
    """Run all preconditions; returns a structured report, never raises."""
    checks: list[CheckResult] = []

    # covariance: symmetric positive definite, possibly estimated from paths
    try:
        blocks = scenario.covariance_blocks()
        lam_min = blocks.min_eigenvalue()
        checks.append(CheckResult(
            "covariance_pd",
            lam_min > 0.0,
            f"smallest eigenvalue of the stacked covariance is {lam_min:.3e}",
            {"min_eigenvalue": lam_min, "ridge": blocks.ridge},
        ))
    except (CovarianceError, EquitermError) as exc:
        blocks = None
        checks.append(CheckResult("covariance_pd", False, str(exc)))

    if not scenario.producers:
        checks.append(CheckResult(
            "has_producers", False,
            "no producers: demand cannot clear and price uniqueness fails",
        ))

    problems = None
    if blocks is not None:
        problems = assemble_all(scenario)
        for p in problems:
            margin, status = _interior_margin(p.eq_matrix, p.eq_rhs, p.ineq_matrix, p.ineq_rhs)
            if margin is None:
                checks.append(CheckResult(
                    f"strict_interior:{p.name}", False,
                    f"phase-I LP reports {status}: the player's feasible set has "
                    "no interior point",
                ))
            else:
                checks.append(CheckResult(
                    f"strict_interior:{p.name}",
                    margin >= feas_margin,
                    f"strict-interior margin {margin:.3e} (need >= {feas_margin:.0e})",
                    {"margin": margin},
                ))
        margin, status = _joint_clearing_margin(scenario, problems)
        if margin is None:
            checks.append(CheckResult(
                "joint_clearing", False,
                f"phase-I LP reports {status}: no strictly interior point clears "
                "the market (feasibility assumption fails)",
            ))
        else:
            checks.append(CheckResult(
                "joint_clearing",
                margin >= feas_margin,
                f"joint clearing margin {margin:.3e} (need >= {feas_margin:.0e})",
                {"margin": margin},
            ))

    # crisp capacity-vs-demand message (subsumed by the joint LP)
    bad = []
    for j in range(scenario.grid.n_deliveries):
        D = scenario.exogenous.demand[j]
        cap = scenario.total_capacity(j)
        if not 0.0 < D < cap:
            bad.append(f"delivery {j}: demand {D} outside (0, total capacity {cap})")
    checks.append(CheckResult(
        "demand_within_capacity",
        not bad,
        "; ".join(bad) if bad else "demand strictly inside (0, total capacity) everywhere",
    ))

    # bound adequacy heuristics: boxes should never bind at an equilibrium
    b = scenario.bounds
    for nm, val in (("v_trade", b.v_trade), ("f_trade", b.f_trade), ("pi_max", b.pi_max)):
        if val <= 0.0:
            checks.append(CheckResult(
                f"bound_positive:{nm}", False, f"{nm} must be strictly positive"))
    demand = scenario.demand_vector()
    caps = np.array([scenario.total_capacity(j) for j in range(scenario.grid.n_deliveries)])
    v_need = float(max(np.max(demand, initial=0.0), np.max(caps, initial=0.0)))
    v_floor = 2.0 * v_need
    checks.append(CheckResult(
        "bound_adequacy:v_trade",
        b.v_trade >= v_floor,
        f"v_trade {b.v_trade} vs heuristic floor {v_floor} "
        "(twice the largest demand or fleet capacity)",
        {"floor": v_floor},
    ))
    f_need = 0.0
    o_need = 0.0
    for j in range(scenario.grid.n_deliveries):
        for fuel in scenario.fuel_names:
            f_need = max(f_need, sum(
                pl.efficiency * pl.capacity
                for p in scenario.producers for pl in p.plants if pl.fuel == fuel
            ))
        o_need += sum(
            scenario.fuels.intensity(pl.fuel) * pl.capacity
            for p in scenario.producers for pl in p.plants
        )
    f_floor = 2.0 * max(f_need, o_need)
    checks.append(CheckResult(
        "bound_adequacy:f_trade",
        b.f_trade >= f_floor,
        f"f_trade {b.f_trade} vs heuristic floor {f_floor} "
        "(twice the worst fuel burn or horizon emissions)",
        {"floor": f_floor},
    ))
    mcs = _marginal_costs(scenario)
    mc_max = max(mcs, default=0.0)
    if blocks is not None and (scenario.producers or scenario.consumers):
        inv_tol = sum(1.0 / p.risk_aversion for p in scenario.producers)
        inv_tol += sum(1.0 / c.risk_aversion for c in scenario.consumers)
        lam_agg = 1.0 / inv_tol if inv_tol > 0 else 0.0
        sig_max = float(np.max(np.diag(blocks.q1))) if blocks.q1.size else 0.0
        pi_floor = 2.0 * (mc_max + lam_agg * sig_max * v_need)
        checks.append(CheckResult(
            "bound_adequacy:pi_max",
            b.pi_max >= pi_floor,
            f"pi_max {b.pi_max} vs heuristic floor {pi_floor} "
            "(twice marginal cost plus an aggregate risk premium allowance)",
            {"floor": pi_floor, "mc_max": mc_max},
        ))

    for producer in scenario.producers:
        grouped = producer.plants_by_fuel(scenario.fuel_names)
        empty = [f for f, ps in grouped.items() if not ps]
        if empty:
            checks.append(CheckResult(
                f"plantless_fuels:{producer.name}", True,
                f"no plants for {empty}; fuel trades in those fuels must net "
                "to zero each delivery",
            ))

    return ValidationReport(tuple(checks), feas_margin)
