"""Bundled test systems.

``case3``  3-bus triangle; line 1 (bus 1 -> 2, rated 30 MW) is congested
           before any attack, so 5 % and 10 % attacks overload it physically.
``case6``  6-bus network; the PTDF row of line 3-5 with bus 1 as reference
           is (0, 0.062, 0.289, 0.0183, -0.1207, 0.1526).
``sep60``  60-bus synthetic system with flow-based ratings derated to 70 %;
           branch 5 is critical with a pipeline alpha_min of 0.0375.
"""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

import numpy as np

from .grid import GridCase, apply_modifications, flow_based_ratings, parse_case, read_case, synthetic_case

__all__ = [
    "BUILTIN",
    "load_builtin",
    "resolve_case",
    "case3",
    "case6",
    "separation_case",
    "SEPARATION_TARGET",
    "EXAMPLE_PTDF_6BUS",
    "EXAMPLE_LOADS_6BUS",
    "VECTOR_A1",
    "VECTOR_A2",
]

# line 3-5 shift factors (three decimals) and loads of the 6-bus example, buses 1..6
EXAMPLE_PTDF_6BUS = np.array([0.0, 0.062, 0.289, 0.0183, -0.1207, 0.152])
EXAMPLE_LOADS_6BUS = np.array([10.0, 15.0, 15.0, 30.0, 20.0, 10.0])
VECTOR_A1 = np.array([-0.456, -0.127, 1.136, -0.564, -0.751, 0.762])
VECTOR_A2 = np.array([0.976, -0.954, 1.143, -2.051, 1.519, -0.633])

SEPARATION_SEED = 4
SEPARATION_BUSES = 60
SEPARATION_SCALE = 0.7
SEPARATION_TARGET = 5


def _data(name: str) -> str:
    return resources.files("lrguard").joinpath("data", name).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def case3() -> GridCase:
    return parse_case(_data("case3.grid"))


@lru_cache(maxsize=None)
def case6() -> GridCase:
    return parse_case(_data("case6.grid"))


@lru_cache(maxsize=None)
def separation_base() -> GridCase:
    """The 60-bus system with flow-based ratings, before derating."""
    from .dispatch import solve_dcopf
    from .network import build_susceptance, compute_ptdf

    raw = synthetic_case(SEPARATION_BUSES, SEPARATION_SEED)
    flows = solve_dcopf(raw, compute_ptdf(build_susceptance(raw))).cyber_flows
    return flow_based_ratings(raw, flows, SEPARATION_SEED)


def separation_case(rating_scale: float = SEPARATION_SCALE) -> GridCase:
    return apply_modifications(separation_base(), rating_scale)


BUILTIN = {"case3": case3, "case6": case6, "sep60": separation_case}


def load_builtin(name: str) -> GridCase:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise KeyError(f"unknown builtin case {name!r}; choose from {sorted(BUILTIN)}") from None


def resolve_case(spec: str) -> GridCase:
    """A path to a case file, or ``builtin:<name>``."""
    if spec.startswith("builtin:"):
        return load_builtin(spec.split(":", 1)[1])
    return read_case(spec)
