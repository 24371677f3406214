"""Best load-redistribution attack against one branch.

The attacker picks per-bus load deviations ``d`` with ``|d_i| <= alpha * L_i``
and ``sum(d) == 0`` to maximize ``direction * (ptdf_row @ d)``, the flow the
dispatch pushes onto the target beyond what the control room sees. This is a
fractional-knapsack-like LP solved exactly by sorting.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dispatch import InfeasibleDispatchError, LpProblem, solve_dcopf, solve_lp
from .grid import GridCase
from .network import PtdfMatrix, build_susceptance, solve_dcpf

__all__ = [
    "ALPHA_CAP",
    "DeviationVector",
    "AttackSpec",
    "AlphaMin",
    "attack_bounds",
    "attack_direction",
    "greedy_maximize",
    "greedy_best_attack",
    "lp_best_attack",
    "attack_objective",
    "verify_optimality",
    "find_alpha_min",
    "physical_flows",
]

log = logging.getLogger(__name__)

ALPHA_CAP = 0.10
# tightest tolerances HiGHS accepts; the LP is only an oracle, so accuracy beats speed
TIGHT_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
EXOGENOUS = "exogenous"


@dataclass(frozen=True)
class DeviationVector:
    """Per-bus load deviations in MW; ``alpha`` is ``"exogenous"`` for measured or noise vectors."""

    deltas: np.ndarray
    alpha: float | str = EXOGENOUS
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arr = np.array(self.deltas, dtype=float)
        arr.flags.writeable = False
        object.__setattr__(self, "deltas", arr)

    def __len__(self):
        return self.deltas.shape[0]

    def __neg__(self):
        return DeviationVector(-self.deltas, self.alpha, dict(self.meta))

    @property
    def net(self) -> float:
        return float(self.deltas.sum())


@dataclass(frozen=True)
class AttackSpec:
    target_branch: int | str
    direction: int = 1
    alpha: float = ALPHA_CAP
    alpha_cap: float = ALPHA_CAP

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if not 0 < self.alpha <= self.alpha_cap + 1e-12:
            raise ValueError(f"alpha must lie in (0, {self.alpha_cap}]")


def attack_bounds(loads, alpha, zeroed=None):
    """Symmetric ``(-alpha*L, alpha*L)`` bounds; zero-load and ``zeroed`` buses get ``[0, 0]``."""
    loads = np.asarray(loads, dtype=float)
    if np.any(loads < 0):
        raise ValueError("loads must be nonnegative")
    upper = alpha * loads
    if zeroed is not None and len(zeroed):
        upper = upper.copy()
        upper[np.asarray(zeroed, dtype=int)] = 0.0
    return -upper, upper


def greedy_maximize(values, lower, upper):
    """Maximize ``values @ x`` over ``lower <= x <= upper``, ``sum(x) == 0``.

    Buses are ranked by value (stable, so ties keep bus order). The top of the
    ranking is pushed to its upper bound and the bottom to its lower bound,
    with the single bus where the two sides meet filled partially to close the
    balance. Requires ``sum(lower) <= 0 <= sum(upper)``.
    """
    values = np.asarray(values, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    need = -float(lower.sum())
    if need < -1e-12 or float(upper.sum()) < -1e-12:
        raise ValueError("bounds admit no zero-sum point")
    order = np.argsort(-values, kind="stable")
    x = lower.copy()
    span = (upper - lower)[order]
    filled = np.cumsum(span)
    k = int(np.searchsorted(filled, need, side="left"))
    if k >= len(order):
        k = len(order) - 1
    top = order[:k]
    x[top] = upper[top]
    already = filled[k - 1] if k > 0 else 0.0
    x[order[k]] = lower[order[k]] + min(max(need - already, 0.0), span[k])
    return x


def greedy_best_attack(ptdf_row, loads, spec: AttackSpec, zeroed=None) -> DeviationVector:
    """Optimal attack deviations by the sort-and-saturate rule."""
    row = np.asarray(ptdf_row, dtype=float)
    lower, upper = attack_bounds(loads, spec.alpha, zeroed)
    deltas = greedy_maximize(spec.direction * row, lower, upper)
    return DeviationVector(deltas, spec.alpha, {"method": "greedy", "direction": spec.direction})


def lp_best_attack(ptdf_row, loads, spec: AttackSpec, zeroed=None) -> DeviationVector:
    """Same problem as :func:`greedy_best_attack`, solved as a general LP."""
    row = np.asarray(ptdf_row, dtype=float)
    lower, upper = attack_bounds(loads, spec.alpha, zeroed)
    n = row.shape[0]
    meta = {"method": "lp", "direction": spec.direction}
    # the problem is homogeneous in the bounds and in the objective; solve at
    # unit scale so solver tolerances mean the same thing for any magnitude
    scale = float(np.max(upper, initial=0.0))
    weight = float(np.max(np.abs(row), initial=0.0))
    if scale == 0.0 or weight == 0.0:
        return DeviationVector(np.zeros(n), spec.alpha, meta)
    prob = LpProblem(spec.direction * row / weight, "max", lower / scale, upper / scale,
                     np.ones((1, n)), ["=="], np.zeros(1))
    sol = solve_lp(prob, options=TIGHT_HIGHS)
    if not sol.optimal:
        raise RuntimeError(f"attack LP failed: {sol.status} ({sol.message})")
    return DeviationVector(np.clip(sol.values * scale, lower, upper), spec.alpha, meta)


def attack_objective(dev, ptdf_row, direction: int = 1) -> float:
    deltas = dev.deltas if isinstance(dev, DeviationVector) else np.asarray(dev, dtype=float)
    row = np.asarray(ptdf_row, dtype=float)
    if deltas.shape != row.shape:
        raise ValueError("deviation and PTDF row dimensions differ")
    return float(direction * (deltas @ row))


def verify_optimality(dev, ptdf_row, lower, upper, direction: int = 1, tol: float = 1e-9) -> bool:
    """Pairwise exchange test: optimal iff no bus with a strictly larger
    (direction-adjusted) PTDF is below its upper bound while a bus with a
    smaller one is above its lower bound.

    Raises ``ValueError`` when ``dev`` is infeasible.
    """
    x = dev.deltas if isinstance(dev, DeviationVector) else np.asarray(dev, dtype=float)
    p = direction * np.asarray(ptdf_row, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    scale = max(1.0, float(np.max(np.abs(upper), initial=0.0)), float(np.max(np.abs(lower), initial=0.0)))
    atol = tol * scale
    if np.any(x < lower - atol) or np.any(x > upper + atol):
        raise ValueError("deviation vector violates its bounds")
    if abs(float(x.sum())) > atol * max(1, x.shape[0]):
        raise ValueError("deviation vector is not balanced")

    below_upper = x < upper - atol
    above_lower = x > lower + atol
    order = np.argsort(-p, kind="stable")
    ps = p[order]
    # walk groups of equal PTDF from the top; a violation needs strict inequality
    seen_slack_above = False
    start = 0
    n = len(order)
    while start < n:
        stop = start
        while stop < n and ps[stop] == ps[start]:
            stop += 1
        grp = order[start:stop]
        if seen_slack_above and above_lower[grp].any():
            return False
        if below_upper[grp].any():
            seen_slack_above = True
        start = stop
    return True


def physical_flows(case: GridCase, dispatch, true_loads, system=None) -> np.ndarray:
    """DC power flow of a fixed dispatch against the true loads (MW per branch)."""
    system = build_susceptance(case) if system is None else system
    inj = np.zeros(case.n_buses)
    np.add.at(inj, case.gen_bus_index, dispatch)
    inj -= true_loads
    tol = max(1e-6, 1e-9 * float(np.sum(np.abs(true_loads))))
    return solve_dcpf(system, inj, tol=tol).flows


def attack_direction(ptdf: PtdfMatrix, case: GridCase, target, loads=None) -> int:
    """+1 when the pre-attack DCOPF flow on ``target`` is >= 0, else -1."""
    k = case.branch_position(target)
    sol = solve_dcopf(case, ptdf, case.loads if loads is None else loads)
    return 1 if sol.cyber_flows[k] >= 0 else -1


@dataclass(frozen=True)
class AlphaMin:
    """Result of the alpha grid search; ``value`` is None when not attackable."""

    value: float | None
    mode: str
    step: float
    skipped: tuple[float, ...] = ()

    @property
    def attackable(self) -> bool:
        return self.value is not None


def alpha_grid(step: float, alpha_cap: float) -> np.ndarray:
    if not step > 0:
        raise ValueError("step must be positive")
    n = int(np.floor(alpha_cap / step + 1e-9))
    return np.round(step * np.arange(1, n + 1), 12)


def find_alpha_min(
    case: GridCase,
    ptdf: PtdfMatrix,
    target,
    mode: str = "pipeline",
    deviation_threshold: float = 0.0,
    step: float = 0.0025,
    alpha_cap: float = ALPHA_CAP,
    *,
    direction: int | None = None,
    loads=None,
    overflow_tol: float = 1e-6,
) -> AlphaMin:
    """Smallest grid alpha whose best attack harms ``target``.

    ``mode="deviation"``: the attack's flow shift reaches ``deviation_threshold`` MW.
    ``mode="pipeline"``: falsified loads -> DCOPF -> DC power flow on true loads
    puts the target beyond its rating. Grid points where the DCOPF is
    infeasible are skipped and reported.
    """
    if mode not in ("pipeline", "deviation"):
        raise ValueError("mode must be 'pipeline' or 'deviation'")
    loads = case.loads if loads is None else np.asarray(loads, dtype=float)
    k = case.branch_position(target)
    row = ptdf.row_at(k)
    if direction is None:
        direction = 1 if mode == "deviation" else attack_direction(ptdf, case, target, loads)
    grid = alpha_grid(step, alpha_cap)

    if mode == "deviation":
        if np.all(np.abs(row) <= 1e-12):
            return AlphaMin(None, mode, step)
        for a in grid:
            dev = greedy_best_attack(row, loads, AttackSpec(target, direction, float(a), alpha_cap))
            obj = attack_objective(dev, row, direction)
            if obj > 1e-12 and obj >= deviation_threshold - 1e-12:
                return AlphaMin(float(a), mode, step)
        return AlphaMin(None, mode, step)

    system = ptdf.system if ptdf.system is not None else build_susceptance(case)
    rating = case.branches[k].rating
    skipped = []
    for a in grid:
        dev = greedy_best_attack(row, loads, AttackSpec(target, direction, float(a), alpha_cap))
        try:
            disp = solve_dcopf(case, ptdf, np.maximum(loads + dev.deltas, 0.0))
        except InfeasibleDispatchError:
            log.info("alpha %.4f skipped: DCOPF infeasible", a)
            skipped.append(float(a))
            continue
        flow = physical_flows(case, disp.dispatch, loads, system)[k]
        if abs(flow) > rating + overflow_tol:
            return AlphaMin(float(a), mode, step, tuple(skipped))
    return AlphaMin(None, mode, step, tuple(skipped))
