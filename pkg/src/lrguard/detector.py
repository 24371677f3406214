"""NPDSB detection of load-redistribution attacks.

For each critical branch an :class:`AssetProfile` records which buses the
branch is sensitive to (``|PTDF| > cutoff``), the direction the optimal attack
moves each of them, and a magnitude threshold ``alpha_min * L_i``. An interval's
load deviations are flagged when more than ``decision_threshold`` of the
sensitive buses deviate in the attack direction by more than their threshold.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .attack import (
    ALPHA_CAP,
    AlphaMin,
    AttackSpec,
    DeviationVector,
    attack_direction,
    find_alpha_min,
    greedy_best_attack,
)
from .grid import GridCase
from .network import PtdfMatrix, build_susceptance, compute_ptdf

__all__ = [
    "AlphaMinConfig",
    "AssetProfile",
    "BusDetail",
    "DetectionVerdict",
    "DetectionReport",
    "build_asset_profile",
    "npdsb",
    "classify",
    "detect",
    "dump_profiles",
    "load_profiles",
    "LRAttackDetector",
]

DEFAULT_CUTOFF = 0.05
DEFAULT_DECISION = 0.5
PROFILE_FORMAT = "lrguard-profiles"
PROFILE_VERSION = 1


@dataclass(frozen=True)
class AlphaMinConfig:
    mode: str = "pipeline"
    step: float = 0.0025
    deviation_threshold: float = 0.0
    alpha_cap: float = ALPHA_CAP


@dataclass(frozen=True)
class AssetProfile:
    target_branch: int
    direction: int
    ptdf_row: np.ndarray
    sensitive_buses: tuple[int, ...]
    sensitive_index: tuple[int, ...]
    expected_signs: tuple[int, ...]
    alpha_min: float | None
    magnitude_thresholds: tuple[float, ...]
    cutoff: float
    alpha_cap: float = ALPHA_CAP
    loads: np.ndarray | None = None
    rating: float | None = None

    @property
    def tnsb(self) -> int:
        return len(self.sensitive_buses)

    @property
    def degenerate(self) -> bool:
        return self.tnsb == 0

    @property
    def attackable(self) -> bool:
        return self.alpha_min is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ptdf_row"] = [float(v) for v in self.ptdf_row]
        d["loads"] = None if self.loads is None else [float(v) for v in self.loads]
        for key in ("sensitive_buses", "sensitive_index", "expected_signs", "magnitude_thresholds"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AssetProfile:
        d = dict(d)
        d["ptdf_row"] = np.asarray(d["ptdf_row"], dtype=float)
        d["loads"] = None if d.get("loads") is None else np.asarray(d["loads"], dtype=float)
        for key in ("sensitive_buses", "sensitive_index", "expected_signs"):
            d[key] = tuple(int(v) for v in d[key])
        d["magnitude_thresholds"] = tuple(float(v) for v in d["magnitude_thresholds"])
        return cls(**d)


def _resolve_alpha_min(case, ptdf, target, alpha_min, direction, loads) -> float | None:
    if alpha_min is None:
        alpha_min = AlphaMinConfig()
    if isinstance(alpha_min, AlphaMin):
        return alpha_min.value
    if isinstance(alpha_min, AlphaMinConfig):
        res = find_alpha_min(
            case,
            ptdf,
            target,
            alpha_min.mode,
            alpha_min.deviation_threshold,
            alpha_min.step,
            alpha_min.alpha_cap,
            direction=direction,
            loads=loads,
        )
        return res.value
    return float(alpha_min)


def build_asset_profile(
    case: GridCase,
    ptdf: PtdfMatrix,
    target,
    cutoff: float = DEFAULT_CUTOFF,
    alpha_min=None,
    *,
    alpha_cap: float = ALPHA_CAP,
    direction: int | None = None,
    loads=None,
) -> AssetProfile:
    """Precompute the detection data for one target branch.

    ``alpha_min`` may be a number, an :class:`AlphaMin` result, or an
    :class:`AlphaMinConfig` (searched here; default pipeline mode). The
    expected signs come from the best attack at ``alpha_cap``.
    """
    loads = case.loads if loads is None else np.asarray(loads, dtype=float)
    k = case.branch_position(target)
    branch_id = case.branches[k].id
    row = np.asarray(ptdf.row_at(k), dtype=float)
    if direction is None:
        direction = attack_direction(ptdf, case, branch_id, loads)
    amin = _resolve_alpha_min(case, ptdf, branch_id, alpha_min, direction, loads)

    sens = np.flatnonzero(np.abs(row) > cutoff)
    best = greedy_best_attack(row, loads, AttackSpec(branch_id, direction, alpha_cap, alpha_cap))
    signs = np.sign(best.deltas[sens]).astype(int)
    # a sensitive loaded bus can land exactly on 0 only as the balancing bus
    fallback = np.where(direction * row[sens] >= np.median(direction * row), 1, -1)
    signs = np.where((signs == 0) & (loads[sens] > 0), fallback, signs)
    thresholds = (amin if amin is not None else alpha_cap) * loads[sens]
    return AssetProfile(
        target_branch=branch_id,
        direction=int(direction),
        ptdf_row=row.copy(),
        sensitive_buses=tuple(case.buses[i].id for i in sens),
        sensitive_index=tuple(int(i) for i in sens),
        expected_signs=tuple(int(s) for s in signs),
        alpha_min=amin,
        magnitude_thresholds=tuple(float(t) for t in thresholds),
        cutoff=float(cutoff),
        alpha_cap=float(alpha_cap),
        loads=loads.copy(),
        rating=float(case.branches[k].rating),
    )


@dataclass(frozen=True)
class BusDetail:
    bus: int
    delta: float
    direction_ok: bool
    magnitude_ok: bool


@dataclass(frozen=True)
class DetectionVerdict:
    target_branch: int
    npdsb: int
    tnsb: int
    ratio: float
    flagged: bool
    per_bus_detail: tuple[BusDetail, ...] = ()
    warning: str | None = None

    def to_dict(self) -> dict:
        return {
            "asset": self.target_branch,
            "npdsb": self.npdsb,
            "tnsb": self.tnsb,
            "ratio": self.ratio,
            "flagged": self.flagged,
            "warning": self.warning,
            "per_bus_detail": [asdict(b) for b in self.per_bus_detail],
        }


def _deltas(dev):
    return dev.deltas if isinstance(dev, DeviationVector) else np.asarray(dev, dtype=float)


def _proper(deltas, profile):
    idx = np.asarray(profile.sensitive_index, dtype=int)
    d = deltas[..., idx]
    direction_ok = np.sign(d) == np.asarray(profile.expected_signs)
    magnitude_ok = np.abs(d) > np.asarray(profile.magnitude_thresholds)
    return d, direction_ok, magnitude_ok


def npdsb(dev, profile: AssetProfile) -> int:
    """Number of sensitive buses whose deviation has the attack's sign and exceeds its threshold."""
    deltas = _deltas(dev)
    if deltas.shape[-1] != profile.ptdf_row.shape[0]:
        raise ValueError("deviation vector does not cover all buses")
    _, ok_dir, ok_mag = _proper(deltas, profile)
    return int(np.count_nonzero(ok_dir & ok_mag))


def classify(count: int, profile: AssetProfile, decision_threshold: float = DEFAULT_DECISION, dev=None) -> DetectionVerdict:
    """Flag when ``count / TNSB`` strictly exceeds ``decision_threshold``.

    Pass ``dev`` to fill in the per-bus detail.
    """
    tnsb = profile.tnsb
    if not 0 <= count <= tnsb:
        raise ValueError(f"npdsb {count} outside [0, {tnsb}]")
    detail = ()
    if dev is not None:
        d, ok_dir, ok_mag = _proper(_deltas(dev), profile)
        detail = tuple(
            BusDetail(b, float(v), bool(od), bool(om))
            for b, v, od, om in zip(profile.sensitive_buses, d, ok_dir, ok_mag)
        )
    if tnsb == 0:
        return DetectionVerdict(
            profile.target_branch, 0, 0, 0.0, False, detail, "degenerate profile: no sensitive buses"
        )
    ratio = count / tnsb
    return DetectionVerdict(profile.target_branch, int(count), tnsb, ratio, ratio > decision_threshold, detail)


@dataclass(frozen=True)
class DetectionReport:
    deviations: np.ndarray
    verdicts: tuple[DetectionVerdict, ...]

    @property
    def flagged(self) -> bool:
        return any(v.flagged for v in self.verdicts)

    def to_dict(self) -> dict:
        return {"flagged": self.flagged, "assets": [v.to_dict() for v in self.verdicts]}


def detect(estimated_loads, forecast_loads, profiles, decision_threshold: float = DEFAULT_DECISION) -> DetectionReport:
    est = np.asarray(estimated_loads, dtype=float)
    fc = np.asarray(forecast_loads, dtype=float)
    if est.shape != fc.shape or est.ndim != 1:
        raise ValueError(f"load vectors differ in shape: {est.shape} vs {fc.shape}")
    if np.any(est < 0) or np.any(fc < 0):
        raise ValueError("load vectors must be nonnegative")
    dev = est - fc
    verdicts = tuple(classify(npdsb(dev, p), p, decision_threshold, dev) for p in profiles)
    return DetectionReport(dev, verdicts)


# ---------------------------------------------------------------------------
# profile cache (JSON text, versioned)


def dump_profiles(profiles, fh, config: dict | None = None):
    doc = {
        "format": PROFILE_FORMAT,
        "version": PROFILE_VERSION,
        "config": config or {},
        "profiles": [p.to_dict() for p in profiles],
    }
    json.dump(doc, fh, indent=1)
    fh.write("\n")


def load_profiles(fh) -> list[AssetProfile]:
    doc = json.load(fh)
    if doc.get("format") != PROFILE_FORMAT:
        raise ValueError("not a profile cache file")
    if doc.get("version") != PROFILE_VERSION:
        raise ValueError(f"unsupported profile cache version {doc.get('version')}")
    return [AssetProfile.from_dict(d) for d in doc["profiles"]]


# ---------------------------------------------------------------------------
# estimator front end


class LRAttackDetector(TransformerMixin, BaseEstimator):
    """Estimator wrapper around the per-asset NPDSB test.

    ``fit`` builds one profile per target branch from the case (and optional
    forecast loads). Rows of ``X`` passed to ``transform``/``predict`` are
    estimated bus loads for one interval each.

    Parameters
    ----------
    case : GridCase
    targets : sequence of branch ids or "from-to" labels
    cutoff : float
        PTDF magnitude above which a bus counts as sensitive.
    alpha_cap : float
    alpha_min : float or None
        Fixed magnitude factor; when None it is searched with ``alpha_min_mode``.
    alpha_min_mode : {"pipeline", "deviation"}
    alpha_min_step : float
    deviation_threshold : float
        MW shift that counts as harmful in deviation mode.
    decision_threshold : float
    ptdf : PtdfMatrix, optional
        Reuse precomputed shift factors.
    """

    def __init__(
        self,
        case=None,
        targets=(),
        cutoff=DEFAULT_CUTOFF,
        alpha_cap=ALPHA_CAP,
        alpha_min=None,
        alpha_min_mode="pipeline",
        alpha_min_step=0.0025,
        deviation_threshold=0.0,
        decision_threshold=DEFAULT_DECISION,
        ptdf=None,
    ):
        self.case = case
        self.targets = targets
        self.cutoff = cutoff
        self.alpha_cap = alpha_cap
        self.alpha_min = alpha_min
        self.alpha_min_mode = alpha_min_mode
        self.alpha_min_step = alpha_min_step
        self.deviation_threshold = deviation_threshold
        self.decision_threshold = decision_threshold
        self.ptdf = ptdf

    def fit(self, X=None, y=None):
        """``X``: optional forecast loads, shape ``(n_buses,)`` or ``(1, n_buses)``."""
        if self.case is None:
            raise ValueError("LRAttackDetector needs a case")
        if not 0 <= self.decision_threshold < 1:
            raise ValueError("decision_threshold must lie in [0, 1)")
        if not 0 < self.alpha_cap <= 1:
            raise ValueError("alpha_cap must lie in (0, 1]")
        case = self.case
        if X is None:
            forecast = case.loads.copy()
        else:
            forecast = check_array(np.atleast_2d(X), ensure_2d=True)
            if forecast.shape != (1, case.n_buses):
                raise ValueError(f"forecast must hold {case.n_buses} loads")
            forecast = forecast[0]
        ptdf = self.ptdf if self.ptdf is not None else compute_ptdf(build_susceptance(case))
        amin = self.alpha_min
        if amin is None:
            amin = AlphaMinConfig(self.alpha_min_mode, self.alpha_min_step, self.deviation_threshold, self.alpha_cap)
        self.profiles_ = [
            build_asset_profile(case, ptdf, t, self.cutoff, amin, alpha_cap=self.alpha_cap, loads=forecast)
            for t in self.targets
        ]
        self.forecast_ = forecast
        self.n_features_in_ = case.n_buses
        for p in self.profiles_:
            if p.degenerate:
                warnings.warn(f"branch {p.target_branch} has no sensitive buses at cutoff {self.cutoff}")
        return self

    def _deviations(self, X):
        check_is_fitted(self, "profiles_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return X - self.forecast_

    def transform(self, X):
        """NPDSB per interval and asset, shape ``(n_samples, n_assets)``."""
        dev = self._deviations(X)
        out = np.zeros((dev.shape[0], len(self.profiles_)), dtype=int)
        for j, p in enumerate(self.profiles_):
            _, ok_dir, ok_mag = _proper(dev, p)
            out[:, j] = np.count_nonzero(ok_dir & ok_mag, axis=1)
        return out

    def ratios(self, X):
        counts = self.transform(X)
        tnsb = np.array([max(p.tnsb, 1) for p in self.profiles_], dtype=float)
        r = counts / tnsb
        r[:, [p.degenerate for p in self.profiles_]] = 0.0
        return r

    def decision_function(self, X):
        """Largest per-asset ratio minus the decision threshold; > 0 means flagged."""
        r = self.ratios(X)
        if r.shape[1] == 0:
            return np.full(r.shape[0], -self.decision_threshold)
        return r.max(axis=1) - self.decision_threshold

    def predict(self, X):
        return self.decision_function(X) > 0
