"""DC network model: bus susceptance, PTDF rows and DC power flow.

All public quantities are in MW; per-unit stays internal. Branch flow is
positive from ``from_bus`` to ``to_bus``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GridCase

__all__ = [
    "DisconnectedNetworkError",
    "ImbalanceError",
    "SusceptanceSystem",
    "PtdfMatrix",
    "FlowSolution",
    "build_susceptance",
    "compute_ptdf",
    "solve_dcpf",
    "flows_from_ptdf",
    "FixedPtdf",
]

DENSE_LIMIT = 300
BALANCE_TOL = 1e-6


class DisconnectedNetworkError(ValueError):
    pass


class ImbalanceError(ValueError):
    pass


class _ReducedSolver:
    """Factorized reduced susceptance matrix (reference row/column removed)."""

    def __init__(self, b_red):
        self.n = b_red.shape[0]
        if self.n == 0:
            self._solve = lambda rhs: np.zeros_like(rhs)
            return
        if sp.issparse(b_red):
            try:
                lu = spla.splu(b_red.tocsc())
            except RuntimeError as exc:
                raise DisconnectedNetworkError("disconnected network: reduced system is singular") from exc
            diag = np.abs(lu.U.diagonal())
            if diag.min() <= 1e-12 * diag.max():
                raise DisconnectedNetworkError("disconnected network: reduced system is singular")
            self._solve = lu.solve
        else:
            try:
                cho = sla.cho_factor(b_red, check_finite=False)
            except sla.LinAlgError as exc:
                raise DisconnectedNetworkError("disconnected network: reduced system is singular") from exc
            d = np.abs(np.diag(cho[0]))
            if d.min() <= 1e-7 * d.max():
                raise DisconnectedNetworkError("disconnected network: reduced system is singular")
            self._solve = lambda rhs: sla.cho_solve(cho, rhs, check_finite=False)

    def solve(self, rhs):
        return self._solve(np.asarray(rhs, dtype=float))


@dataclass(frozen=True, eq=False)
class SusceptanceSystem:
    """Bus susceptance matrix, scaled branch incidence and reduced factorization.

    ``b_matrix`` and ``branch_incidence`` are per-unit susceptances (1/x);
    they are dense for small cases and CSR sparse above ``DENSE_LIMIT`` buses.
    """

    case: GridCase
    b_matrix: object
    branch_incidence: object
    reference_index: int
    _solver: _ReducedSolver = field(repr=False)

    @property
    def n_buses(self):
        return self.case.n_buses

    @property
    def reference_bus(self):
        return self.case.buses[self.reference_index].id

    @property
    def is_sparse(self):
        return sp.issparse(self.b_matrix)

    def solve_angles(self, injections_pu):
        """Angles with the reference fixed at zero for a balanced per-unit injection vector."""
        keep = self._keep
        theta = np.zeros(self.n_buses)
        theta[keep] = self._solver.solve(np.asarray(injections_pu, dtype=float)[keep])
        return theta

    @property
    def _keep(self):
        mask = np.ones(self.n_buses, dtype=bool)
        mask[self.reference_index] = False
        return mask

    def with_reference(self, bus_id) -> SusceptanceSystem:
        return build_susceptance(self.case, reference=bus_id)


def build_susceptance(case: GridCase, reference: int | None = None, dense: bool | None = None) -> SusceptanceSystem:
    """Assemble B and the scaled incidence and factorize the reduced system.

    ``reference`` defaults to the case's reference bus. ``dense`` defaults to
    True for cases up to ``DENSE_LIMIT`` buses.
    """
    n, m = case.n_buses, case.n_branches
    ref_id = case.reference_bus if reference is None else reference
    if ref_id not in case.bus_index:
        raise KeyError(f"reference bus {ref_id} not in case")
    ref = case.bus_index[ref_id]
    if dense is None:
        dense = n <= DENSE_LIMIT

    b = np.array([1.0 / br.reactance for br in case.branches])
    f, t = case.from_index, case.to_index
    rows = np.repeat(np.arange(m), 2)
    cols = np.column_stack([f, t]).ravel()
    vals = np.column_stack([b, -b]).ravel()
    bf = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
    a = sp.csr_matrix((np.column_stack([np.ones(m), -np.ones(m)]).ravel(), (rows, cols)), shape=(m, n))
    bbus = (a.T @ bf).tocsr()

    keep = np.ones(n, dtype=bool)
    keep[ref] = False
    if dense:
        bbus_d = bbus.toarray()
        solver = _ReducedSolver(bbus_d[np.ix_(keep, keep)])
        return SusceptanceSystem(case, bbus_d, bf.toarray(), ref, solver)
    idx = np.flatnonzero(keep)
    solver = _ReducedSolver(bbus[idx][:, idx])
    return SusceptanceSystem(case, bbus, bf, ref, solver)


class PtdfMatrix:
    """Branch-by-bus shift factors with respect to one reference bus.

    Rows are computed on demand and cached; ``values`` materializes the full
    matrix. ``values[k, i]`` is the MW change on branch k per MW injected at
    bus i and withdrawn at the reference bus.
    """

    def __init__(self, system: SusceptanceSystem, *, _rows=None):
        self.system = system
        self._rows = {} if _rows is None else dict(_rows)
        self._full = None

    @property
    def case(self) -> GridCase:
        return self.system.case

    @property
    def reference_bus(self) -> int:
        return self.system.reference_bus

    @property
    def shape(self):
        return (self.case.n_branches, self.case.n_buses)

    def row(self, branch) -> np.ndarray:
        """PTDF row for a branch id or ``"from-to"`` label."""
        return self.row_at(self.case.branch_position(branch))

    def row_at(self, k: int) -> np.ndarray:
        if self._full is not None:
            return self._full[k]
        cached = self._rows.get(k)
        if cached is not None:
            return cached
        sysm = self.system
        bf = sysm.branch_incidence
        rhs = bf[k].toarray().ravel() if sp.issparse(bf) else np.asarray(bf[k], dtype=float)
        keep = sysm._keep
        out = np.zeros(sysm.n_buses)
        # B_red is symmetric, so a PTDF row is B_red^{-1} applied to the incidence row
        out[keep] = sysm._solver.solve(rhs[keep])
        out.flags.writeable = False
        self._rows[k] = out
        return out

    @property
    def values(self) -> np.ndarray:
        if self._full is None:
            sysm = self.system
            bf = sysm.branch_incidence
            keep = sysm._keep
            bf_red = bf[:, np.flatnonzero(keep)]
            rhs = bf_red.T.toarray() if sp.issparse(bf_red) else np.asarray(bf_red).T
            full = np.zeros(self.shape)
            if rhs.size:
                full[:, keep] = sysm._solver.solve(rhs).T
            full.flags.writeable = False
            self._full = full
        return self._full

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


class FixedPtdf(PtdfMatrix):
    """PTDF rows supplied externally (e.g. reference values) instead of computed."""

    def __init__(self, case: GridCase, rows: dict[int, np.ndarray], reference_bus: int):
        self._case = case
        self._reference = reference_bus
        self._rows = {}
        for k, r in rows.items():
            r = np.array(r, dtype=float)
            if r.shape != (case.n_buses,):
                raise ValueError(f"PTDF row for branch position {k} has shape {r.shape}")
            r.flags.writeable = False
            self._rows[k] = r
        self._full = None
        self.system = None

    @property
    def case(self):
        return self._case

    @property
    def reference_bus(self):
        return self._reference

    def row_at(self, k):
        try:
            return self._rows[k]
        except KeyError:
            raise KeyError(f"no PTDF row supplied for branch {self._case.branches[k].id}") from None

    @property
    def values(self):
        if len(self._rows) != self._case.n_branches:
            raise ValueError("full PTDF matrix unavailable: only some rows were supplied")
        return np.vstack([self._rows[k] for k in range(self._case.n_branches)])


def compute_ptdf(system: SusceptanceSystem, reference: int | None = None, materialize: bool = False) -> PtdfMatrix:
    """PTDF handle for ``system``; pass ``reference`` to re-anchor on another bus."""
    if reference is not None and reference != system.reference_bus:
        if reference not in system.case.bus_index:
            raise KeyError(f"reference bus {reference} not in case")
        system = build_susceptance(system.case, reference=reference, dense=not system.is_sparse)
    ptdf = PtdfMatrix(system)
    if materialize:
        ptdf.values
    return ptdf


@dataclass(frozen=True)
class FlowSolution:
    angles: np.ndarray
    flows: np.ndarray


def solve_dcpf(system: SusceptanceSystem, injections, tol: float = BALANCE_TOL) -> FlowSolution:
    """DC power flow for MW bus injections.

    A net imbalance up to ``tol`` MW is absorbed by the reference bus; a larger
    one raises :class:`ImbalanceError`.
    """
    inj = np.array(injections, dtype=float)
    if inj.shape != (system.n_buses,):
        raise ValueError(f"expected {system.n_buses} injections, got shape {inj.shape}")
    mismatch = float(inj.sum())
    if abs(mismatch) > tol:
        raise ImbalanceError(f"injections are unbalanced by {mismatch:.6g} MW (tolerance {tol:g})")
    inj[system.reference_index] -= mismatch
    base = system.case.base_mva
    theta = system.solve_angles(inj / base)
    bf = system.branch_incidence
    flows = np.asarray(bf @ theta).ravel() * base
    return FlowSolution(theta, flows)


def flows_from_ptdf(ptdf: PtdfMatrix, injections, branches=None) -> np.ndarray:
    """Branch flows by superposition. ``branches`` restricts to some branch positions."""
    inj = np.asarray(injections, dtype=float)
    n_b = ptdf.case.n_buses
    if inj.shape != (n_b,):
        raise ValueError(f"dimension mismatch: {inj.shape} injections for {n_b} buses")
    if branches is None:
        return ptdf.values @ inj
    return np.array([ptdf.row_at(k) @ inj for k in branches])
