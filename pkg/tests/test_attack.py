import numpy as np
import pytest
from hypothesis import assume, example, given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lrguard import (
    AttackSpec,
    DeviationVector,
    attack_bounds,
    attack_direction,
    attack_objective,
    find_alpha_min,
    greedy_best_attack,
    lp_best_attack,
    physical_flows,
    solve_dcopf,
    verify_optimality,
)
from lrguard.attack import alpha_grid, greedy_maximize
from lrguard.cases import EXAMPLE_LOADS_6BUS, EXAMPLE_PTDF_6BUS
from lrguard.grid import replace

sizes = st.integers(2, 40)


@st.composite
def instances(draw):
    n = draw(sizes)
    row = draw(hnp.arrays(float, n, elements=st.floats(-1, 1)))
    loads = draw(hnp.arrays(float, n, elements=st.floats(0, 200)))
    return row, loads


def test_six_bus_best_attack():
    spec = AttackSpec("3-5", 1, 0.10)
    dev = greedy_best_attack(EXAMPLE_PTDF_6BUS, EXAMPLE_LOADS_6BUS, spec)
    # buses 1..6
    assert dev.deltas.tolist() == [-1.0, 1.5, 1.5, -1.0, -2.0, 1.0]
    assert attack_objective(dev, EXAMPLE_PTDF_6BUS) == pytest.approx(
        1.5 * 0.289 + 1.0 * 0.152 + 2.0 * 0.1207 + 1.5 * 0.062 - 0.0183 - 0.0, abs=1e-12)


def test_three_bus_attacks_raise_loads_on_sending_end(c3, ptdf3):
    for alpha, expect in ((0.05, [5, -5, 0]), (0.10, [10, -10, 0])):
        dev = greedy_best_attack(ptdf3.row(1), c3.loads, AttackSpec(1, 1, alpha))
        np.testing.assert_allclose(dev.deltas, expect, atol=1e-12)


@pytest.mark.parametrize("alpha, phys", [(0.05, (34, -8.5, 8.5)), (0.10, (38, -9.5, 9.5))])
def test_three_bus_physical_flows(c3, ptdf3, alpha, phys):
    dev = greedy_best_attack(ptdf3.row(1), c3.loads, AttackSpec(1, 1, alpha))
    sol = solve_dcopf(c3, ptdf3, c3.loads + dev.deltas)
    assert sol.cyber_flows[0] == pytest.approx(30, abs=1e-6)
    np.testing.assert_allclose(physical_flows(c3, sol.dispatch, c3.loads), phys, atol=1e-6)


def test_physical_equals_cyber_plus_shift(c6, ptdf6):
    dev = greedy_best_attack(ptdf6.row("3-5"), c6.loads, AttackSpec("3-5", 1, 0.1))
    sol = solve_dcopf(c6, ptdf6, c6.loads + dev.deltas)
    np.testing.assert_allclose(physical_flows(c6, sol.dispatch, c6.loads),
                               sol.cyber_flows + ptdf6.values @ dev.deltas, atol=1e-8)


@given(instances(), st.sampled_from([1, -1]))
# tiny bounds or PTDFs once fell inside the LP solver's absolute tolerances
@example((np.ones(2), np.full(2, 5.96e-08)), 1)
@example((np.zeros(17), np.full(17, 5.96e-08)), 1)
@example((np.array([2.99388872e-10, 0, 0]), np.full(3, 17.0)), 1)
@example((np.array([1.0, 1e-10, 0, 0]), np.full(4, 50.0)), 1)
def test_greedy_matches_lp(inst, direction):
    row, loads = inst
    spec = AttackSpec(0, direction, 0.1)
    g = attack_objective(greedy_best_attack(row, loads, spec), row, direction)
    lp = attack_objective(lp_best_attack(row, loads, spec), row, direction)
    # any LP point is feasible, so the greedy may never lose to it
    assert g >= lp - 1e-9
    # the LP itself is only optimal up to HiGHS's dual tolerance (1e-10 on the
    # unit-normalized objective), which near-tied PTDFs can expose
    slack = 1e-10 * np.max(np.abs(row), initial=0) * 0.2 * loads.sum()
    assert lp >= g - 1e-9 - slack


@given(instances(), st.floats(0.001, 0.1))
def test_greedy_feasible_and_certified(inst, alpha):
    row, loads = inst
    dev = greedy_best_attack(row, loads, AttackSpec(0, 1, alpha))
    lo, hi = attack_bounds(loads, alpha)
    assert abs(dev.net) <= 1e-9 * max(1.0, loads.sum())
    assert np.all(dev.deltas >= lo - 1e-12) and np.all(dev.deltas <= hi + 1e-12)
    assert verify_optimality(dev, row, lo, hi)


@given(instances(), st.floats(0.01, 1.0))
def test_objective_scales_linearly_with_alpha(inst, t):
    row, loads = inst
    full = greedy_best_attack(row, loads, AttackSpec(0, 1, 0.1))
    part = greedy_best_attack(row, loads, AttackSpec(0, 1, 0.1 * t))
    np.testing.assert_allclose(part.deltas, t * full.deltas, atol=1e-9 * max(1.0, loads.max()))


@given(instances())
def test_direction_flip_equals_negated_row(inst):
    row, loads = inst
    a = greedy_best_attack(row, loads, AttackSpec(0, -1, 0.1))
    b = greedy_best_attack(-row, loads, AttackSpec(0, 1, 0.1))
    np.testing.assert_array_equal(a.deltas, b.deltas)


@given(instances(), st.data())
def test_zeroed_buses_stay_zero(inst, data):
    row, loads = inst
    zeroed = data.draw(st.lists(st.integers(0, len(row) - 1), unique=True, max_size=len(row)))
    dev = greedy_best_attack(row, loads, AttackSpec(0, 1, 0.1), zeroed=zeroed)
    assert np.all(dev.deltas[zeroed] == 0)
    lo, hi = attack_bounds(loads, 0.1, zeroed)
    assert verify_optimality(dev, row, lo, hi)


@given(instances(), st.floats(0, 0.999))
def test_verify_rejects_interior_blends(inst, t):
    """Blending the optimum toward 0 loses objective, and the exchange test must notice."""
    row, loads = inst
    dev = greedy_best_attack(row, loads, AttackSpec(0, 1, 0.1))
    best = attack_objective(dev, row)
    assume(best > 1e-6)
    lo, hi = attack_bounds(loads, 0.1)
    assert not verify_optimality(t * dev.deltas, row, lo, hi)


def test_verify_brute_force_on_vertices(rng):
    """Enumerate balanced vertices of small boxes; certified iff objective is maximal."""
    import itertools

    for _ in range(40):
        n = 4
        row = rng.normal(size=n)
        loads = rng.uniform(1, 10, n)
        lo, hi = attack_bounds(loads, 0.1)
        best = attack_objective(greedy_best_attack(row, loads, AttackSpec(0, 1, 0.1)), row)
        for free in range(n):
            for pattern in itertools.product([0, 1], repeat=n - 1):
                x = np.empty(n)
                others = [i for i in range(n) if i != free]
                x[others] = np.where(pattern, hi[others], lo[others])
                x[free] = -x[others].sum()
                if not lo[free] - 1e-12 <= x[free] <= hi[free] + 1e-12:
                    continue
                optimal = attack_objective(x, row) >= best - 1e-9
                assert verify_optimality(x, row, lo, hi) == optimal


def test_verify_rejects_infeasible():
    lo, hi = attack_bounds([10, 10], 0.1)
    with pytest.raises(ValueError, match="bounds"):
        verify_optimality([2, -2], [1, 0], lo, hi)
    with pytest.raises(ValueError, match="balanced"):
        verify_optimality([1, 0], [1, 0], lo, hi)


def test_ties_keep_bus_order():
    x = greedy_maximize([0.5, 0.5, 0.5, 0.0], [-1, -1, -1, -1], [1, 1, 1, 1])
    np.testing.assert_array_equal(x, [1, 1, -1, -1])


def test_greedy_rejects_unbalanceable_bounds():
    with pytest.raises(ValueError):
        greedy_maximize([1, 2], [1, 1], [2, 2])


def test_all_zero_loads_give_zero_attack():
    dev = greedy_best_attack([0.3, -0.2, 0.1], [0, 0, 0], AttackSpec(0, 1, 0.1))
    assert np.all(dev.deltas == 0)


@pytest.mark.parametrize("kw", [dict(direction=0), dict(alpha=0.0), dict(alpha=0.2)])
def test_attack_spec_validation(kw):
    with pytest.raises(ValueError):
        AttackSpec(1, **kw)


def test_attack_bounds_reject_negative_loads():
    with pytest.raises(ValueError):
        attack_bounds([1, -1], 0.1)


def test_deviation_vector_is_immutable():
    d = DeviationVector([1.0, -1.0])
    with pytest.raises(ValueError):
        d.deltas[0] = 0
    assert (-d).deltas.tolist() == [-1.0, 1.0]
    assert d.alpha == "exogenous"


def test_alpha_grid():
    g = alpha_grid(0.0025, 0.1)
    assert len(g) == 40 and g[0] == 0.0025 and g[-1] == 0.1
    with pytest.raises(ValueError):
        alpha_grid(0, 0.1)


def test_direction_follows_base_flow(c3, ptdf3):
    assert attack_direction(ptdf3, c3, 1) == 1
    assert attack_direction(ptdf3, c3, 2) == -1


def test_alpha_min_three_bus_pipeline(c3, ptdf3):
    res = find_alpha_min(c3, ptdf3, 1, "pipeline")
    assert res.value == 0.0025 and res.attackable and res.skipped == ()


def test_alpha_min_deviation_mode(c6):
    from lrguard.network import FixedPtdf

    p = FixedPtdf(c6.with_loads(EXAMPLE_LOADS_6BUS), {c6.branch_position("3-5"): EXAMPLE_PTDF_6BUS}, 1)
    res = find_alpha_min(c6.with_loads(EXAMPLE_LOADS_6BUS), p, "3-5", "deviation", 0.3)
    assert res.value == 0.035


def test_alpha_min_monotone_in_threshold(c6, ptdf6):
    vals = [find_alpha_min(c6, ptdf6, "3-5", "deviation", t).value for t in (0.1, 0.3, 0.6, 0.9)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_alpha_min_unattackable(c3, ptdf3):
    roomy = replace(c3, branches=tuple(replace(b, rating=1e4) for b in c3.branches))
    assert find_alpha_min(roomy, ptdf3, 1).value is None
    assert find_alpha_min(c3, ptdf3, 1, "deviation", 1e6).value is None
    with pytest.raises(ValueError):
        find_alpha_min(c3, ptdf3, 1, "bogus")
