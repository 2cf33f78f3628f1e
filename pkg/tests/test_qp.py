import io as _io
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from macrostate.errors import DegenerateOptimum, InvalidInput, TooLargeForOracle
from macrostate.laplacian import ItemSet, build_item_system, kernel_similarity
from macrostate.qp import (
    admissible,
    build_polytope,
    enumerate_vertices_bruteforce,
    frank_wolfe,
    is_full_rank,
    multistart_optimize,
    polytope_vertices,
    restore_feasibility,
    solve_lp,
    upsilon,
)
from macrostate.spectra import decompose
from conftest import check_feasible, random_instance

CRISP = np.array([[0.5, 0.5], [0.5, -0.5]])


def same_rows(A, B, atol=1e-12):
    """Equal up to a permutation of rows."""
    A, B = np.asarray(A), np.asarray(B)
    return any(np.allclose(A[list(p)], B, atol=atol) for p in itertools.permutations(range(len(A))))


# ---- objective and polytope -------------------------------------------------

def test_upsilon_values():
    assert upsilon(np.ones((1, 1))) == 0.0
    assert upsilon(CRISP) == 0.0
    for m in (2, 3, 5):
        M0 = np.zeros((m, m))
        M0[:, 0] = 1.0 / m
        assert upsilon(M0) == pytest.approx(1.0 - 1.0 / m)


def test_single_component_polytope(two_point_basis):
    _, b = two_point_basis
    poly = build_polytope(b, 1)
    assert np.array_equal(solve_lp(np.array([[-3.0]]), poly).M, [[1.0]])
    sol = frank_wolfe(poly, np.ones((1, 1)))
    assert sol.iterations == 0 and sol.upsilon == 0.0
    assert enumerate_vertices_bruteforce(poly).M.tolist() == [[1.0]]


def test_two_point_feasible_region(two_point_basis):
    _, b = two_point_basis
    poly = build_polytope(b, 2)
    assert np.allclose(np.abs(poly.omega[:, 1]), 1.0)
    for a in np.linspace(-0.2, 1.2, 15):
        for bb in np.linspace(-0.7, 0.7, 15):
            M = np.array([[a, bb], [1 - a, -bb]])
            expected = abs(bb) <= min(a, 1 - a) + 1e-12
            assert poly.is_feasible(M, tol=1e-12) == expected


def test_two_point_vertices(two_point_basis):
    # the square |b| <= min(a, 1 - a) has four corners; only (1/2, +-1/2) are nonsingular
    _, b = two_point_basis
    poly = build_polytope(b, 2)
    V = polytope_vertices(poly)
    ab = sorted((round(M[0, 0], 12), round(M[0, 1], 12)) for M in V)
    assert ab == [(0.0, 0.0), (0.5, -0.5), (0.5, 0.5), (1.0, 0.0)]
    assert sum(is_full_rank(M) for M in V) == 2
    assert all(np.sum(M ** 2) == pytest.approx(1.0) for M in V)


def test_uniform_start_feasible():
    rng = np.random.default_rng(2)
    for _ in range(5):
        poly = random_instance(rng, 3, 8)
        check_feasible(poly, poly.uniform())


# ---- linear programs --------------------------------------------------------

def test_lp_tie_is_deterministic(two_point_basis):
    _, b = two_point_basis
    poly = build_polytope(b, 2)
    # <M0, M> is constant on the polytope, so every vertex is optimal
    v1 = solve_lp(poly.uniform(), poly)
    v2 = solve_lp(poly.uniform(), poly)
    assert np.array_equal(v1.M, v2.M)
    assert any(np.allclose(v1.M, V) for V in polytope_vertices(poly))


def test_lp_zero_objective_feasible():
    poly = random_instance(np.random.default_rng(3), 3, 8)
    v = solve_lp(np.zeros((3, 3)), poly)
    check_feasible(poly, v.M)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 4), st.sampled_from([1, 3, 50]))
def test_row_generation_matches_full_lp(seed, m, batch):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 2)) + rng.integers(0, 3, size=(40, 1)) * 3.0
    try:
        sys = build_item_system(kernel_similarity(ItemSet(X), scale=1.5), "symmetric", 1.0)
        poly = build_polytope(decompose(sys, m), m)
    except Exception:
        return
    C = rng.normal(size=(m, m))
    v = solve_lp(C, poly, batch=batch)
    A, bvec = poly.rows(np.arange(poly.n_rows))
    c = poly.linear_objective(C)
    ref = linprog(-c, A_ub=A, b_ub=bvec, bounds=[(None, None)] * poly.dim, method="highs")
    ours = c @ poly.to_vector(v.M)
    assert ours == pytest.approx(-ref.fun, rel=1e-7, abs=1e-7)
    check_feasible(poly, v.M)


def test_restore_feasibility_shrinks_to_uniform(two_point_basis):
    _, b = two_point_basis
    poly = build_polytope(b, 2)
    M = np.array([[0.5 + 1e-8, 0.5 + 2e-8], [0.5 - 1e-8, -0.5 - 2e-8]])
    U = restore_feasibility(poly, M)
    assert poly.min_window(U) >= 0.0
    assert np.abs(U - M).max() < 1e-7


# ---- Frank-Wolfe ------------------------------------------------------------

def test_fw_two_point_reaches_vertex(two_point_basis):
    _, b = two_point_basis
    poly = build_polytope(b, 2)
    sol = frank_wolfe(poly, poly.uniform())
    assert sol.norm2 == pytest.approx(1.0, abs=1e-12)
    assert sol.upsilon == pytest.approx(0.0, abs=1e-12)
    assert sol.converged


def test_fw_at_local_optimum_does_not_move(chain_basis):
    _, b = chain_basis
    poly = build_polytope(b, 2)
    best = enumerate_vertices_bruteforce(poly)
    buf = _io.StringIO()
    sol = frank_wolfe(poly, best.M, trace=buf)
    assert sol.iterations == 0 and sol.converged
    assert np.array_equal(sol.M, best.M)
    lines = [json.loads(s) for s in buf.getvalue().splitlines()]
    assert len(lines) == 1 and lines[0]["accepted"] is False


def test_fw_rejects_infeasible_start(two_point_basis):
    _, b = two_point_basis
    with pytest.raises(InvalidInput):
        frank_wolfe(build_polytope(b, 2), np.array([[2.0, 0.0], [-1.0, 0.0]]))


def test_fw_trace_lines():
    poly = random_instance(np.random.default_rng(8), 3, 8)
    buf = _io.StringIO()
    frank_wolfe(poly, poly.uniform(), trace=buf)
    recs = [json.loads(s) for s in buf.getvalue().splitlines()]
    assert recs and set(recs[0]) == {"iteration", "step", "upsilon", "accepted", "working_rows", "lp_rounds"}
    assert recs[-1]["accepted"] is False


# ---- multistart and oracle --------------------------------------------------

def test_multistart_two_point(two_point_basis):
    _, b = two_point_basis
    poly = build_polytope(b, 2)
    sol = multistart_optimize(poly, n_starts=8, seed=0)
    assert same_rows(sol.M, CRISP)
    assert sol.upsilon == pytest.approx(0.0, abs=1e-12)
    W = poly.windows(sol.M)
    assert same_rows(W.T, np.eye(2))
    assert np.isclose(enumerate_vertices_bruteforce(poly).norm2, sol.norm2, atol=1e-12)


def test_chain_fuzzy_optimum(chain_basis):
    # windows (1, 1/2, 0) and (0, 1/2, 1): ||M||^2 = 2 (1/4 + 1/6) = 5/6
    _, b = chain_basis
    poly = build_polytope(b, 2)
    oracle = enumerate_vertices_bruteforce(poly)
    sol = multistart_optimize(poly, n_starts=16, seed=1)
    assert oracle.norm2 == pytest.approx(5 / 6, abs=1e-12)
    assert sol.norm2 == pytest.approx(oracle.norm2, abs=1e-6)
    assert 0 < sol.upsilon < 1
    assert same_rows(poly.windows(sol.M).T, [[1, 0.5, 0], [0, 0.5, 1]], atol=1e-9)


def test_single_start_is_fw_from_uniform():
    poly = random_instance(np.random.default_rng(11), 2, 10)
    ms = multistart_optimize(poly, n_starts=1, seed=3)
    fw = frank_wolfe(poly, poly.uniform(), admit=lambda M: admissible(poly, M))
    assert np.allclose(np.sort(ms.M, axis=0), np.sort(fw.M, axis=0), atol=0)
    assert ms.start_index == 0


def test_multistart_deterministic():
    poly = random_instance(np.random.default_rng(12), 3, 8)
    a = multistart_optimize(poly, n_starts=16, seed=4)
    b = multistart_optimize(poly, n_starts=16, seed=4)
    assert np.array_equal(a.M, b.M) and a.start_index == b.start_index
    assert [r.trace for r in a.runs] == [r.trace for r in b.runs]


def test_canonical_row_order():
    poly = random_instance(np.random.default_rng(13), 3, 8)
    sol = multistart_optimize(poly, n_starts=8, seed=0)
    assert np.all(np.diff(sol.M[:, 0]) <= 0)


def test_no_admissible_candidate_raises(two_point_basis):
    _, b = two_point_basis
    poly = build_polytope(b, 2)
    with pytest.raises(DegenerateOptimum) as err:
        multistart_optimize(poly, n_starts=2, core_level=1.5)
    assert "smaller m" in str(err.value)


def test_oracle_size_guard():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 2))
    sys = build_item_system(kernel_similarity(ItemSet(X), scale=2.0), "symmetric")
    with pytest.raises(TooLargeForOracle):
        polytope_vertices(build_polytope(decompose(sys, 2), 2))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 3]))
def test_multistart_invariants(seed, m):
    rng = np.random.default_rng(seed)
    poly = random_instance(rng, m, 10 if m == 2 else 8)
    try:
        sol = multistart_optimize(poly, n_starts=8, seed=seed)
    except DegenerateOptimum:
        return
    check_feasible(poly, sol.M)
    assert admissible(poly, sol.M)
    assert -1e-8 <= sol.upsilon < 1
    for run in sol.runs:
        assert np.all(np.diff(run.trace) < 0)
        check_feasible(poly, run.M)
