import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lrguard import (
    Branch,
    Bus,
    DisconnectedNetworkError,
    GridCase,
    ImbalanceError,
    build_susceptance,
    compute_ptdf,
    flows_from_ptdf,
    solve_dcpf,
    synthetic_case,
)
from lrguard.cases import EXAMPLE_PTDF_6BUS
from lrguard.grid import replace


def balanced(rng, n):
    x = rng.normal(0, 50, n)
    return x - x.mean()


def test_six_bus_line_3_5_row(c6, ptdf6):
    # reference values carry three decimals (0.1526 is given as 0.152); bus 1 is the reference
    row = ptdf6.row("3-5")
    np.testing.assert_allclose(row, EXAMPLE_PTDF_6BUS, atol=1e-3)
    assert row[0] == 0.0


def test_three_bus_rows(c3, ptdf3):
    # reference bus 3; injection at bus 1 splits 0.4 over 1-2-3 (x=0.6) and 0.6 over 1-3 (x=0.4)
    np.testing.assert_allclose(ptdf3.row(1), [0.4, -0.4, 0.0], atol=1e-12)
    np.testing.assert_allclose(ptdf3.row(3), [0.6, 0.4, 0.0], atol=1e-12)


def test_b_matrix_properties(c6):
    sys_ = build_susceptance(c6)
    b = np.asarray(sys_.b_matrix)
    np.testing.assert_allclose(b, b.T)
    np.testing.assert_allclose(b.sum(axis=1), 0, atol=1e-12)
    assert np.all(np.diag(b) > 0)


def test_reference_column_is_zero(c6):
    for ref in (1, 4):
        p = compute_ptdf(build_susceptance(c6, reference=ref))
        assert np.all(p.values[:, c6.bus_index[ref]] == 0.0)


def test_rows_read_only_and_cached(c6):
    p = compute_ptdf(build_susceptance(c6))
    r = p.row_at(0)
    assert r is p.row_at(0)
    np.testing.assert_allclose(p.values[0], r)
    with pytest.raises(ValueError):
        r[0] = 1.0


@given(st.integers(3, 60), st.integers(0, 500), st.integers(0, 2**32 - 1))
def test_superposition_matches_dcpf(n, seed, draw):
    case = synthetic_case(n, seed)
    system = build_susceptance(case)
    p = compute_ptdf(system)
    inj = balanced(np.random.default_rng(draw), n)
    np.testing.assert_allclose(flows_from_ptdf(p, inj), solve_dcpf(system, inj).flows, atol=1e-8)


@given(st.integers(3, 40), st.integers(0, 500))
def test_kcl_holds(n, seed):
    case = synthetic_case(n, seed)
    system = build_susceptance(case)
    inj = balanced(np.random.default_rng(seed), n)
    flows = solve_dcpf(system, inj).flows
    net = np.zeros(n)
    np.add.at(net, case.from_index, flows)
    np.add.at(net, case.to_index, -flows)
    np.testing.assert_allclose(net, inj, atol=1e-8)


@given(st.integers(3, 40), st.integers(0, 500), st.floats(0.01, 100))
def test_uniform_reactance_scaling_leaves_ptdf(n, seed, k):
    case = synthetic_case(n, seed)
    scaled = replace(case, branches=tuple(replace(b, reactance=b.reactance * k) for b in case.branches))
    p0 = compute_ptdf(build_susceptance(case)).values
    p1 = compute_ptdf(build_susceptance(scaled)).values
    np.testing.assert_allclose(p0, p1, atol=1e-9)


@given(st.integers(3, 40), st.integers(0, 500), st.data())
def test_flows_independent_of_reference(n, seed, data):
    case = synthetic_case(n, seed)
    ref = data.draw(st.sampled_from([b.id for b in case.buses]))
    inj = balanced(np.random.default_rng(seed), n)
    f0 = flows_from_ptdf(compute_ptdf(build_susceptance(case)), inj)
    f1 = flows_from_ptdf(compute_ptdf(build_susceptance(case, reference=ref)), inj)
    np.testing.assert_allclose(f0, f1, atol=1e-8)


@given(st.integers(3, 40), st.integers(0, 500))
def test_flow_linearity(n, seed):
    case = synthetic_case(n, seed)
    system = build_susceptance(case)
    rng = np.random.default_rng(seed)
    a, b = balanced(rng, n), balanced(rng, n)
    fa, fb = solve_dcpf(system, a).flows, solve_dcpf(system, b).flows
    np.testing.assert_allclose(solve_dcpf(system, 2 * a - 3 * b).flows, 2 * fa - 3 * fb, atol=1e-8)


def test_sparse_and_dense_agree():
    case = synthetic_case(80, 3)
    d = compute_ptdf(build_susceptance(case, dense=True))
    s = compute_ptdf(build_susceptance(case, dense=False))
    assert s.system.is_sparse and not d.system.is_sparse
    np.testing.assert_allclose(d.values, s.values, atol=1e-10)


def test_disconnected_network_raises():
    case = GridCase(
        (Bus(1, 0, True), Bus(2, 1), Bus(3, 1), Bus(4, 1)),
        (Branch(1, 1, 2, 0.1, 10), Branch(2, 3, 4, 0.1, 10)),
    )
    with pytest.raises(DisconnectedNetworkError):
        build_susceptance(case)


def test_imbalance_and_shape_errors(c6):
    system = build_susceptance(c6)
    with pytest.raises(ImbalanceError):
        solve_dcpf(system, np.ones(6))
    with pytest.raises(ValueError):
        solve_dcpf(system, np.zeros(5))
    with pytest.raises(ValueError, match="dimension mismatch"):
        flows_from_ptdf(compute_ptdf(system), np.zeros(5))


def test_small_imbalance_goes_to_reference(c6):
    system = build_susceptance(c6)
    inj = np.array([0, 10, -10, 0, 0, 1e-8])
    np.testing.assert_allclose(solve_dcpf(system, inj).flows, solve_dcpf(system, inj - [1e-8, 0, 0, 0, 0, 0]).flows,
                               atol=1e-12)


def test_unknown_reference(c6):
    with pytest.raises(KeyError):
        build_susceptance(c6, reference=42)
