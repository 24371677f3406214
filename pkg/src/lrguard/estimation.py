"""DC state estimation and the residual bad-data test.

Measurements are MW: one net-injection measurement per bus followed by one
flow measurement per branch. States are bus angles in radians with the
reference angle pinned at zero. An attack ``a = H @ c`` shifts the estimate by
``c`` and leaves the residual untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .grid import GridCase
from .network import build_susceptance

__all__ = [
    "MeasurementModel",
    "StateEstimate",
    "build_measurement_model",
    "estimate_states",
    "craft_bypass",
    "state_error_for_deviation",
    "default_tau",
]


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    h_matrix: np.ndarray
    measurement_kinds: tuple[tuple[str, int], ...]
    reference_index: int
    reference_bus: int

    @property
    def n_measurements(self):
        return self.h_matrix.shape[0]

    @property
    def n_buses(self):
        return self.h_matrix.shape[1]

    @property
    def injection_rows(self) -> np.ndarray:
        """The bus-injection block (``H'``)."""
        return self.h_matrix[: self.n_buses]

    def __post_init__(self):
        keep = np.ones(self.n_buses, dtype=bool)
        keep[self.reference_index] = False
        h_red = self.h_matrix[:, keep]
        q, r = sla.qr(h_red, mode="economic")
        diag = np.abs(np.diag(r))
        rank_ok = diag.size == h_red.shape[1] and (diag.size == 0 or diag.min() > 1e-10 * diag.max())
        object.__setattr__(self, "_keep", keep)
        object.__setattr__(self, "_qr", (q, r) if rank_ok else None)


@dataclass(frozen=True)
class StateEstimate:
    angles: np.ndarray
    residual_norm: float
    residual: np.ndarray


def build_measurement_model(case: GridCase) -> MeasurementModel:
    system = build_susceptance(case, dense=True)
    base = case.base_mva
    h = np.vstack([np.asarray(system.b_matrix), np.asarray(system.branch_incidence)]) * base
    kinds = tuple(("injection", b.id) for b in case.buses) + tuple(("flow", br.id) for br in case.branches)
    return MeasurementModel(h, kinds, system.reference_index, system.reference_bus)


def estimate_states(model: MeasurementModel, z) -> StateEstimate:
    """Unweighted least squares with the reference angle fixed at zero."""
    z = np.asarray(z, dtype=float)
    if z.shape != (model.n_measurements,):
        raise ValueError(f"expected {model.n_measurements} measurements, got shape {z.shape}")
    if model._qr is None:
        raise np.linalg.LinAlgError("measurement model is rank deficient (unobservable)")
    q, r = model._qr
    x = np.zeros(model.n_buses)
    x[model._keep] = sla.solve_triangular(r, q.T @ z)
    res = z - model.h_matrix @ x
    return StateEstimate(x, float(np.linalg.norm(res)), res)


def craft_bypass(model: MeasurementModel, c) -> np.ndarray:
    """Measurement attack ``H @ c`` for a state error ``c`` (reference entry must be 0)."""
    c = np.asarray(c, dtype=float)
    if c.shape != (model.n_buses,):
        raise ValueError(f"state error must have {model.n_buses} entries, got shape {c.shape}")
    if c[model.reference_index] != 0:
        raise ValueError("state error at the reference bus must be zero")
    return model.h_matrix @ c


def state_error_for_deviation(model: MeasurementModel, deltas) -> np.ndarray:
    """State error ``c`` whose injection rows realize load deviations ``deltas``.

    Injection measurements are net injections, so a load increase of
    ``deltas[i]`` is ``H'_i c = -deltas[i]``. ``deltas`` must sum to zero.
    """
    d = np.asarray(deltas, dtype=float)
    if abs(d.sum()) > 1e-9 * max(1.0, np.abs(d).sum()):
        raise ValueError("load deviations must sum to zero to be realizable")
    keep = model._keep
    hp = model.injection_rows[np.ix_(keep, keep)]
    c = np.zeros(model.n_buses)
    c[keep] = np.linalg.solve(hp, -d[keep])
    return c


def default_tau(model: MeasurementModel, sigma: float) -> float:
    """Residual threshold: three times the expected norm of iid noise with std ``sigma``."""
    return 3.0 * sigma * np.sqrt(model.n_measurements)
