"""Random weakened attacks, truncated noise, and the cyber/physical pipeline.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence((base_seed, stream, index))``, so every scenario can be
regenerated on its own.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attack import ALPHA_CAP, AttackSpec, DeviationVector, greedy_best_attack, physical_flows
from .detector import AssetProfile, DEFAULT_DECISION, classify, npdsb
from .dispatch import InfeasibleDispatchError, solve_dcopf
from .grid import GridCase
from .network import PtdfMatrix, build_susceptance

__all__ = [
    "RNG_ALGORITHM",
    "NoiseConfig",
    "ScenarioRecord",
    "scenario_rng",
    "random_lr_attack",
    "gaussian_noise",
    "cauchy_noise",
    "make_noise",
    "run_pipeline",
    "monte_carlo",
    "default_zeroed_count",
]

RNG_ALGORITHM = "numpy.PCG64 via SeedSequence((base_seed, stream, index))"
ATTACK_STREAM = 0
NOISE_STREAM = 1
# share of sensitive buses pinned to zero in a weakened attack (150 of 1168)
ZEROED_FRACTION = 150 / 1168


def scenario_rng(seed, stream: int = 0, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream), int(index)])))


def default_zeroed_count(tnsb: int) -> int:
    return int(round(ZEROED_FRACTION * tnsb))


@dataclass(frozen=True)
class NoiseConfig:
    """Truncated per-bus noise.

    Gaussian: ``N(0, alpha*L_i/3.1)``; Cauchy: location 0, scale ``0.01*L_i/3.1``.
    Both are truncated to ``|d_i| <= alpha*L_i`` by rejection.
    """

    kind: str = "gaussian"
    alpha: float = ALPHA_CAP
    seed: int = 0
    spread_divisor: float = 3.1
    cauchy_scale_factor: float = 0.01
    balance_rounds: int = 10

    def __post_init__(self):
        if self.kind not in ("gaussian", "cauchy"):
            raise ValueError("noise kind must be 'gaussian' or 'cauchy'")
        if not self.alpha > 0:
            raise ValueError("noise alpha must be positive")


def _truncated(sampler, bound, rng, max_rounds=10_000):
    out = np.zeros_like(bound)
    todo = np.flatnonzero(bound > 0)
    for _ in range(max_rounds):
        if todo.size == 0:
            return out
        draw = sampler(todo, rng)
        ok = np.abs(draw) <= bound[todo]
        out[todo[ok]] = draw[ok]
        todo = todo[~ok]
    raise RuntimeError("rejection sampling did not converge")


def _balance(d, bound, rounds, tol):
    """Pull the net change to ~0 while keeping ``|d_i| <= bound_i``."""
    live = bound > 0
    if not live.any():
        return d
    for _ in range(rounds):
        net = d.sum()
        if abs(net) <= tol:
            return d
        d[live] -= net / live.sum()
        np.clip(d, -bound, bound, out=d)
    net = d.sum()
    if abs(net) > tol:
        # spread what is left over buses with room, largest load first
        room = (bound + d) if net > 0 else (bound - d)
        for i in np.argsort(-bound, kind="stable"):
            if abs(net) <= tol:
                break
            take = min(abs(net), room[i])
            d[i] -= np.sign(net) * take
            net = d.sum()
    return d


def _noise(case_or_loads, config: NoiseConfig, sampler) -> DeviationVector:
    loads = case_or_loads.loads if isinstance(case_or_loads, GridCase) else np.asarray(case_or_loads, dtype=float)
    rng = scenario_rng(config.seed, NOISE_STREAM)
    bound = config.alpha * np.maximum(loads, 0.0)
    d = _truncated(lambda idx, r: sampler(idx, r, loads), bound, rng)
    tol = 1e-9 * max(1.0, float(loads.sum()))
    d = _balance(d, bound, config.balance_rounds, tol)
    return DeviationVector(d, "exogenous", {"kind": config.kind, "seed": config.seed})


def gaussian_noise(case, config: NoiseConfig) -> DeviationVector:
    if config.kind != "gaussian":
        raise ValueError("config.kind must be 'gaussian'")
    scale = config.alpha / config.spread_divisor
    return _noise(case, config, lambda idx, r, L: r.normal(0.0, scale * L[idx]))


def cauchy_noise(case, config: NoiseConfig) -> DeviationVector:
    if config.kind != "cauchy":
        raise ValueError("config.kind must be 'cauchy'")
    scale = config.cauchy_scale_factor / config.spread_divisor
    return _noise(case, config, lambda idx, r, L: scale * L[idx] * r.standard_cauchy(idx.size))


def make_noise(case, config: NoiseConfig) -> DeviationVector:
    return gaussian_noise(case, config) if config.kind == "gaussian" else cauchy_noise(case, config)


def random_lr_attack(
    profile: AssetProfile,
    case: GridCase,
    alpha_cap: float = ALPHA_CAP,
    rng_seed=0,
    zeroed_count: int | None = None,
    *,
    alpha_low: float | None = None,
    index: int = 0,
) -> DeviationVector:
    """A weakened best attack: random alpha and some sensitive buses pinned to zero.

    ``alpha`` is uniform on ``[alpha_low, alpha_cap]`` with ``alpha_low``
    defaulting to the profile's alpha_min. ``zeroed_count`` sensitive buses,
    drawn without replacement, get ``[0, 0]`` bounds before the greedy solve.
    """
    if profile.degenerate and zeroed_count:
        raise ValueError("profile has no sensitive buses to zero")
    if zeroed_count is None:
        zeroed_count = default_zeroed_count(profile.tnsb)
    if not 0 <= zeroed_count <= profile.tnsb:
        raise ValueError(f"zeroed_count must lie in [0, {profile.tnsb}]")
    loads = profile.loads if profile.loads is not None else case.loads
    low = alpha_low if alpha_low is not None else (profile.alpha_min or alpha_cap)
    low = min(low, alpha_cap)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else scenario_rng(rng_seed, ATTACK_STREAM, index)
    alpha = float(rng.uniform(low, alpha_cap)) if low < alpha_cap else float(alpha_cap)
    pool = np.asarray(profile.sensitive_index, dtype=int)
    zeroed = np.sort(rng.choice(pool, size=zeroed_count, replace=False)) if zeroed_count else np.zeros(0, int)
    spec = AttackSpec(profile.target_branch, profile.direction, alpha, alpha_cap)
    dev = greedy_best_attack(profile.ptdf_row, loads, spec, zeroed=zeroed)
    meta = dict(dev.meta)
    meta["zeroed"] = tuple(case.buses[i].id for i in zeroed)
    return DeviationVector(dev.deltas, alpha, meta)


@dataclass(frozen=True)
class ScenarioRecord:
    kind: str
    deviations: DeviationVector
    cyber_flow: float | None
    physical_flow: float | None
    npdsb: int
    tnsb: int
    flagged: bool
    overflow: float | None
    rating: float
    index: int = 0
    error: str | None = None
    alpha: float | str = field(default="exogenous")

    @property
    def ratio(self) -> float:
        return self.npdsb / self.tnsb if self.tnsb else 0.0

    @property
    def failed(self) -> bool:
        return self.error is not None


def run_pipeline(
    case: GridCase,
    ptdf: PtdfMatrix,
    target,
    dev: DeviationVector,
    profile: AssetProfile,
    *,
    kind: str = "attack",
    index: int = 0,
    loads=None,
    system=None,
    decision_threshold: float = DEFAULT_DECISION,
) -> ScenarioRecord:
    """Falsify loads, dispatch on them, then flow the dispatch against the true loads.

    A DCOPF infeasibility is recorded on the returned record instead of raised.
    """
    loads = case.loads if loads is None else np.asarray(loads, dtype=float)
    k = case.branch_position(target)
    rating = case.branches[k].rating
    count = npdsb(dev, profile)
    flagged = classify(count, profile, decision_threshold).flagged
    base = dict(kind=kind, deviations=dev, npdsb=count, tnsb=profile.tnsb, flagged=flagged,
                rating=rating, index=index, alpha=dev.alpha)
    falsified = loads + dev.deltas
    if np.any(falsified < -1e-9):
        return ScenarioRecord(cyber_flow=None, physical_flow=None, overflow=None,
                              error="falsified loads negative", **base)
    try:
        disp = solve_dcopf(case, ptdf, np.maximum(falsified, 0.0))
    except InfeasibleDispatchError as exc:
        return ScenarioRecord(cyber_flow=None, physical_flow=None, overflow=None, error=str(exc), **base)
    system = system if system is not None else (ptdf.system or build_susceptance(case))
    phys = physical_flows(case, disp.dispatch, loads, system)
    pf = float(phys[k])
    return ScenarioRecord(
        cyber_flow=float(disp.cyber_flows[k]),
        physical_flow=pf,
        overflow=max(0.0, abs(pf) - rating),
        **base,
    )


def monte_carlo(
    case: GridCase,
    ptdf: PtdfMatrix,
    profile: AssetProfile,
    n_attacks: int,
    n_noise: int,
    noise_kind: str = "gaussian",
    base_seed: int = 0,
    *,
    zeroed_count: int | None = None,
    alpha_cap: float = ALPHA_CAP,
    noise_alpha: float = ALPHA_CAP,
    decision_threshold: float = DEFAULT_DECISION,
    pipeline: bool = True,
) -> list[ScenarioRecord]:
    """Attacks first (indices ``0..n_attacks-1``), then noise; each with its own derived seed.

    With ``pipeline=False`` only detection is evaluated (flows left as None).
    """
    if n_attacks < 0 or n_noise < 0:
        raise ValueError("scenario counts must be nonnegative")
    system = ptdf.system or build_susceptance(case)
    target = profile.target_branch
    out = []
    for i in range(n_attacks + n_noise):
        if i < n_attacks:
            kind = "attack"
            dev = random_lr_attack(profile, case, alpha_cap, scenario_rng(base_seed, ATTACK_STREAM, i), zeroed_count)
        else:
            kind = noise_kind
            seq = np.random.SeedSequence([int(base_seed), NOISE_STREAM, i]).generate_state(2, np.uint64)
            seed = int(seq[0])
            loads = profile.loads if profile.loads is not None else case.loads
            dev = make_noise(loads, NoiseConfig(noise_kind, noise_alpha, seed))
        if pipeline:
            rec = run_pipeline(case, ptdf, target, dev, profile, kind=kind, index=i, system=system,
                               loads=profile.loads, decision_threshold=decision_threshold)
        else:
            count = npdsb(dev, profile)
            rec = ScenarioRecord(kind, dev, None, None, count, profile.tnsb,
                                 classify(count, profile, decision_threshold).flagged, None,
                                 case.branches[case.branch_position(target)].rating, i, None, dev.alpha)
        out.append(rec)
    return out
