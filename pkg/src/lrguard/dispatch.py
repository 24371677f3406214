"""Linear programs and the PTDF-form DC optimal power flow."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .grid import GridCase
from .network import PtdfMatrix

__all__ = [
    "LpProblem",
    "LpSolution",
    "DispatchSolution",
    "InfeasibleDispatchError",
    "solve_lp",
    "solve_dcopf",
]

FEAS_REL = 1e-7
FEAS_ABS_MW = 1e-6

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL = "numerical_failure"


class InfeasibleDispatchError(RuntimeError):
    """The DCOPF has no feasible dispatch for the given loads."""


@dataclass
class LpProblem:
    """``sense`` objective over box-bounded variables with ``<=``, ``=``, ``>=`` rows.

    ``rows`` is an ``(m, n)`` coefficient array; ``ops`` holds one of
    ``"<="``, ``"=="``, ``">="`` per row.
    """

    objective: np.ndarray
    sense: str = "min"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    rows: np.ndarray | None = None
    ops: Sequence[str] = ()
    rhs: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.shape[0]
        if not np.all(np.isfinite(self.objective)):
            raise ValueError("objective coefficients must be finite")
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the number of variables")
        if self.rows is None:
            self.rows = np.zeros((0, n))
            self.rhs = np.zeros(0)
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.ops = tuple(self.ops)
        m = self.rows.shape[0]
        if self.rows.shape[1] != n or self.rhs.shape != (m,) or len(self.ops) != m:
            raise ValueError("constraint rows, comparators and rhs have inconsistent dimensions")
        bad = set(self.ops) - {"<=", "==", ">="}
        if bad:
            raise ValueError(f"unknown comparator(s): {sorted(bad)}")

    @property
    def n_vars(self):
        return self.objective.shape[0]

    def violation(self, x) -> float:
        """Largest scaled violation of bounds and rows at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        lo_fin = np.isfinite(self.lower)
        hi_fin = np.isfinite(self.upper)
        if lo_fin.any():
            worst = max(worst, float(np.max((self.lower - x)[lo_fin] / (1 + np.abs(self.lower[lo_fin])), initial=0)))
        if hi_fin.any():
            worst = max(worst, float(np.max((x - self.upper)[hi_fin] / (1 + np.abs(self.upper[hi_fin])), initial=0)))
        if self.rows.shape[0]:
            lhs = self.rows @ x
            scale = 1 + np.abs(self.rhs)
            ops = np.array(self.ops)
            gap = np.zeros_like(lhs)
            gap[ops == "<="] = (lhs - self.rhs)[ops == "<="]
            gap[ops == ">="] = (self.rhs - lhs)[ops == ">="]
            gap[ops == "=="] = np.abs(lhs - self.rhs)[ops == "=="]
            worst = max(worst, float(np.max(gap / scale, initial=0)))
        return worst


@dataclass
class LpSolution:
    status: str
    values: np.ndarray | None = None
    objective_value: float | None = None
    message: str = ""
    duals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def solve_lp(problem: LpProblem, tol: float = FEAS_REL, options: dict | None = None) -> LpSolution:
    """Solve with HiGHS and re-verify feasibility of the returned point.

    A returned point that violates the problem by more than ``tol`` (relative)
    is reported as ``numerical_failure`` rather than passed on. ``options`` is
    passed to :func:`scipy.optimize.linprog` (e.g. HiGHS tolerances).
    """
    sign = -1.0 if problem.sense == "max" else 1.0
    ops = np.array(problem.ops, dtype=object)
    le = ops == "<="
    ge = ops == ">="
    eq = ops == "=="
    a_ub = np.vstack([problem.rows[le], -problem.rows[ge]])
    b_ub = np.concatenate([problem.rhs[le], -problem.rhs[ge]])
    kwargs = {}
    if a_ub.shape[0]:
        kwargs.update(A_ub=a_ub, b_ub=b_ub)
    if eq.any():
        kwargs.update(A_eq=problem.rows[eq], b_eq=problem.rhs[eq])
    bounds = [
        (None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
        for lo, hi in zip(problem.lower, problem.upper)
    ]
    res = linprog(sign * problem.objective, bounds=bounds, method="highs", options=options, **kwargs)
    if res.status == 2:
        return LpSolution(INFEASIBLE, message=res.message)
    if res.status == 3:
        return LpSolution(UNBOUNDED, message=res.message)
    if res.status != 0 or res.x is None:
        return LpSolution(NUMERICAL, message=res.message)
    x = np.asarray(res.x, dtype=float)
    viol = problem.violation(x)
    if viol > tol:
        return LpSolution(NUMERICAL, x, None, f"solution violates constraints by {viol:.3g}")
    duals = {}
    if getattr(res, "eqlin", None) is not None:
        duals["eq"] = np.asarray(res.eqlin.marginals) * sign
    if getattr(res, "ineqlin", None) is not None:
        duals["ub"] = np.asarray(res.ineqlin.marginals) * sign
    return LpSolution(OPTIMAL, x, float(problem.objective @ x), res.message, duals)


@dataclass(frozen=True)
class DispatchSolution:
    dispatch: np.ndarray
    total_cost: float
    cyber_flows: np.ndarray
    loads: np.ndarray

    def injections(self, case: GridCase) -> np.ndarray:
        """Generation at each bus (MW), before subtracting load."""
        out = np.zeros(case.n_buses)
        np.add.at(out, case.gen_bus_index, self.dispatch)
        return out


def solve_dcopf(case: GridCase, ptdf: PtdfMatrix, loads=None, tie_epsilon: float = 1e-6) -> DispatchSolution:
    """Least-cost dispatch for ``loads`` under generator bounds and branch ratings.

    Equal-cost generators are ordered by a cost nudge of ``tie_epsilon`` per
    generator position so the lower id is loaded first. The reported cost uses
    the unperturbed costs.
    """
    loads = case.loads if loads is None else np.asarray(loads, dtype=float)
    if loads.shape != (case.n_buses,):
        raise ValueError(f"expected {case.n_buses} loads, got shape {loads.shape}")
    if np.any(loads < -FEAS_ABS_MW):
        raise ValueError("loads must be nonnegative")
    n_g = len(case.generators)
    if n_g == 0:
        raise InfeasibleDispatchError("case has no generators")

    costs = np.array([g.cost for g in case.generators])
    order = np.argsort([g.id for g in case.generators], kind="stable")
    nudge = np.empty(n_g)
    nudge[order] = np.arange(n_g) * tie_epsilon * max(1.0, float(np.max(np.abs(costs))))
    pmin = np.array([g.p_min for g in case.generators])
    pmax = np.array([g.p_max for g in case.generators])

    ptdf_full = np.asarray(ptdf.values)
    shift = ptdf_full[:, case.gen_bus_index]  # n_br x n_g
    base_flow = ptdf_full @ loads
    ratings = case.ratings
    total = float(loads.sum())

    rows = np.vstack([np.ones((1, n_g)), shift, shift])
    rhs = np.concatenate([[total], ratings + base_flow, -ratings + base_flow])
    ops = ["=="] + ["<="] * len(ratings) + [">="] * len(ratings)
    sol = solve_lp(LpProblem(costs + nudge, "min", pmin, pmax, rows, ops, rhs))
    if sol.status == INFEASIBLE:
        raise InfeasibleDispatchError("DCOPF infeasible: load cannot be served within ratings")
    if not sol.optimal:
        raise InfeasibleDispatchError(f"DCOPF failed: {sol.status} ({sol.message})")
    p = np.clip(sol.values, pmin, pmax)
    flows = shift @ p - base_flow
    return DispatchSolution(p, float(costs @ p), flows, loads.copy())
