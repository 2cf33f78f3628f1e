import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from macrostate.errors import DisconnectedSystem, NoSeparableStructure, ZeroDenominator
from macrostate.laplacian import DensityGrid, build_grid_system, build_item_system
from macrostate.spectra import (
    decompose,
    gap_profile,
    scan_beta,
    select_m,
    spectral_gaps,
    write_gap_csv,
)
from conftest import grid_1d, path_weights, random_grid_system


def test_path_rates():
    b = decompose(build_item_system(path_weights(3), "unnormalized"), 3)
    assert np.allclose(b.rates, [0.0, 1.0, 3.0], atol=1e-12)


def test_two_node_rate():
    b = decompose(build_grid_system(grid_1d([1.0, 0.25]), 1.0), 2)
    assert b.rates[1] == pytest.approx(2.5, abs=1e-12)


def test_basis_contract():
    rng = np.random.default_rng(3)
    sys = random_grid_system(rng)
    b = decompose(sys, 6)
    assert np.allclose(b.vectors.T @ b.vectors, np.eye(6), atol=1e-8)
    assert np.all(np.diff(b.rates) >= 0)
    assert abs(b.rates[0]) <= 1e-10 * sys.max_abs()
    assert np.allclose(b.omega[:, 0], 1.0)
    assert np.allclose(b.omega * sys.psi0[:, None], b.vectors)
    for j in range(1, 6):
        v = b.vectors[:, j]
        assert v[np.argmax(np.abs(v))] > 0


def test_full_spectrum_matches_trace():
    rng = np.random.default_rng(4)
    sys = random_grid_system(rng, n_max=60)
    b = decompose(sys, sys.n)
    assert b.rates.sum() == pytest.approx(-np.trace(sys.dense_H()), rel=1e-8)


def test_iterative_matches_dense():
    f = np.exp(-0.5 * ((np.arange(60) - 15) / 4.0) ** 2) + np.exp(-0.5 * ((np.arange(60) - 45) / 4.0) ** 2)
    sys = build_grid_system(grid_1d(f + 1e-3), 1.0)
    d = decompose(sys, 6, method="dense")
    it = decompose(sys, 6, method="iterative")
    assert np.allclose(d.rates, it.rates, rtol=1e-8, atol=1e-12)
    assert np.allclose(np.abs(d.vectors.T @ it.vectors), np.eye(6), atol=1e-6)


def test_decompose_deterministic():
    rng = np.random.default_rng(7)
    sys = random_grid_system(rng)
    a, b = decompose(sys, 5), decompose(sys, 5)
    assert np.array_equal(a.rates, b.rates) and np.array_equal(a.vectors, b.vectors)


def test_disconnected_generator_detected():
    H = sp.block_diag([[[-1.0, 1.0], [1.0, -1.0]], [[-1.0, 1.0], [1.0, -1.0]]]).toarray()
    base = build_item_system(path_weights(4), "unnormalized")
    from dataclasses import replace
    with pytest.raises(DisconnectedSystem):
        decompose(replace(base, H=H), 3)


def test_gap_arithmetic():
    assert spectral_gaps([0, 1, 10, 11]).gaps == pytest.approx({2: 10.0, 3: 1.1})
    assert spectral_gaps([0, 5, 5]).gaps == {2: 1.0}
    with pytest.raises(ZeroDenominator) as err:
        spectral_gaps([0, 0, 3], zero_tol=1e-12)
    assert err.value.details["m"] == 2


def test_select_m_rule():
    assert select_m({2: 1.2, 3: 5.0, 4: 1.1}, 1.5) == 3
    assert select_m({2: 1.6, 3: 1.2, 4: 1.7}, 1.5) == 4
    with pytest.raises(NoSeparableStructure):
        select_m({2: 1.5, 3: 1.1}, 1.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0.1, 10.0, 3.7]))
def test_gaps_scale_invariant(seed, c):
    sys = random_grid_system(np.random.default_rng(seed), n_max=80)
    k = min(8, sys.n)
    g0 = gap_profile(sys, k - 1).gaps
    g1 = gap_profile(sys.scaled(c), k - 1).gaps
    for m in g0:
        assert abs(g1[m] - g0[m]) <= 1e-10 * g0[m]


def three_wells(n=120):
    x = np.linspace(-6, 6, n)
    f = sum(np.exp(-0.5 * ((x - c) / 0.6) ** 2) for c in (-4, 0, 4))
    return grid_1d(f, x[1] - x[0])


def test_three_well_scan_selects_three(tmp_path):
    grid = three_wells()
    betas = np.linspace(1, 3, 5)
    scan = scan_beta(lambda b: build_grid_system(grid, b), betas, m_max=8)
    assert not scan.errors
    for c in range(betas.size):
        gaps = scan.column(c)
        assert max(gaps, key=gaps.get) == 3
    single = scan_beta(lambda b: build_grid_system(grid, b), [betas[2]], m_max=8)
    assert np.array_equal(single.table[:, 0], scan.table[:, 2])
    path = tmp_path / "gaps.csv"
    write_gap_csv(path, scan)
    lines = path.read_text().splitlines()
    assert lines[0] == "beta," + ",".join(f"r_{m}" for m in range(2, 9))
    assert len(lines) == 6


def test_scan_two_node_rate_increasing():
    grid = grid_1d([1.0, 0.25])
    scan = scan_beta(lambda b: build_grid_system(grid, b), np.linspace(0.5, 3, 6), m_max=2)
    mu = [r[1] for r in scan.rates]
    assert np.all(np.diff(mu) > 0)


def test_scan_parallel_matches_serial():
    grid = three_wells(60)
    build = lambda b: build_grid_system(grid, b)  # noqa: E731
    a = scan_beta(build, [1.0, 2.0, 3.0], m_max=5)
    b = scan_beta(build, [1.0, 2.0, 3.0], m_max=5, workers=3)
    assert np.array_equal(a.table, b.table)


def test_scan_records_failing_columns():
    def build(beta):
        if beta > 2:
            raise DisconnectedSystem("boom")
        return build_grid_system(three_wells(40), beta)

    scan = scan_beta(build, [1.0, 3.0], m_max=4)
    assert list(scan.errors) == [1]
    assert scan.errors[1]["error"] == "DisconnectedSystem"
    assert np.isnan(scan.table[:, 1]).all()


def test_slow_rates_keep_relative_accuracy():
    # an outlying cluster makes mu_1 ~ 1e-9 max|H|; eigenvalues read off a
    # dense solver would only carry ~1e-7 relative accuracy here
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(size=(40, 2)), rng.normal(size=(5, 2)) * 0.3 + [9.0, 0.0]])
    from macrostate.laplacian import ItemSet, kernel_similarity
    sys = build_item_system(kernel_similarity(ItemSet(X), "gaussian", 1.3), "unnormalized", 1.0)
    b = decompose(sys, 6)
    assert b.rates[1] < 1e-6 * sys.max_abs()
    for c in (0.1, 10.0):
        bc = decompose(sys.scaled(c), 6)
        assert np.allclose(bc.rates / c, b.rates, rtol=1e-12, atol=0)
    # the refined rates are Rayleigh quotients of the returned vectors
    L = -sys.dense_H()
    rq = np.einsum("ij,ij->j", b.vectors, L @ b.vectors)
    assert np.allclose(rq[2:], b.rates[2:], rtol=1e-9)
