import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamkit.numerics import (
    NumericsError,
    check_psd,
    hermitian_eig,
    logdet_psd,
    phase_codebook,
    quantize_phase,
    svd,
    water_filling,
)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_hermitian(rng, n):
    a = crandn(rng, n, n)
    return a + a.conj().T


def grid_water_filling(g, budget, step=1e-6):
    """Oracle: scan the water level on a fine grid, keep the best feasible allocation."""
    inv = 1.0 / g
    levels = np.arange(inv.min(), inv.max() + budget + step, step)
    used = np.maximum(levels[:, None] - inv[None, :], 0.0).sum(axis=1)
    best = levels[np.searchsorted(used, budget, side="right") - 1]
    return np.maximum(best - inv, 0.0)


# -- eigen / svd ---------------------------------------------------------------


def test_eig_identity():
    w, _ = hermitian_eig(np.eye(3))
    np.testing.assert_allclose(w, [1, 1, 1])


def test_eig_diagonal_sorted_descending():
    w, u = hermitian_eig(np.diag([1.0, 4.0]))
    np.testing.assert_allclose(w, [4, 1])
    np.testing.assert_allclose(np.abs(u), [[0, 1], [1, 0]])


def test_eig_reconstruction_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        m = random_hermitian(rng, 5)
        w, u = hermitian_eig(m)
        assert np.all(np.diff(w) <= 0)
        rec = (u * w) @ u.conj().T
        assert np.linalg.norm(rec - m) <= 1e-8 * np.linalg.norm(m)
        assert np.linalg.norm(u.conj().T @ u - np.eye(5)) <= 1e-8


def test_eig_rejects_non_hermitian():
    with pytest.raises(NumericsError, match="not Hermitian"):
        hermitian_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_svd_zero_and_diagonal():
    _, s, _ = svd(np.zeros((3, 2)))
    np.testing.assert_array_equal(s, [0, 0])
    _, s, _ = svd(np.diag([3.0, 2.0]))
    np.testing.assert_allclose(s, [3, 2])


def test_svd_reconstruction_random():
    rng = np.random.default_rng(1)
    for _ in range(100):
        m = crandn(rng, 4, 6)
        u, s, v = svd(m)
        assert np.linalg.norm(u @ np.diag(s) @ v.conj().T - m) <= 1e-8 * np.linalg.norm(m)
        assert np.linalg.norm(u.conj().T @ u - np.eye(4)) <= 1e-8
        assert np.linalg.norm(v.conj().T @ v - np.eye(4)) <= 1e-8


def test_svd_rejects_nan():
    with pytest.raises(NumericsError):
        svd(np.array([[np.nan, 1.0]]))


# -- water-filling -------------------------------------------------------------


def test_water_filling_single_and_symmetric():
    np.testing.assert_allclose(water_filling([2.5], 3.0).powers, [3.0])
    np.testing.assert_allclose(water_filling([2.0, 2.0], 1.0).powers, [0.5, 0.5])


def test_water_filling_grid_oracle_two_gains():
    alloc = water_filling([1.0, 0.1], 1.0)
    ref = grid_water_filling(np.array([1.0, 0.1]), 1.0)
    np.testing.assert_allclose(alloc.powers, ref, atol=1e-5)
    # with these numbers the weak channel stays dry
    assert alloc.powers[1] == 0.0


def test_water_filling_kkt_form():
    rng = np.random.default_rng(2)
    g = rng.exponential(size=6)
    alloc = water_filling(g, 2.0)
    np.testing.assert_allclose(alloc.powers, np.maximum(alloc.water_level - 1 / g, 0), atol=1e-12)
    assert alloc.total == pytest.approx(2.0, rel=1e-10)


def test_water_filling_zero_gain_gets_nothing():
    alloc = water_filling([0.0, 1.0, 3.0], 1.0)
    assert alloc.powers[0] == 0.0
    assert alloc.total == pytest.approx(1.0)


@pytest.mark.parametrize("gains", [[], [0.0, 0.0], [-1.0, 2.0]])
def test_water_filling_rejects_bad_gains(gains):
    with pytest.raises(NumericsError):
        water_filling(gains, 1.0)


def test_water_filling_perturbation_never_helps():
    rng = np.random.default_rng(3)
    eps = 1e-4
    for _ in range(1000):
        n = rng.integers(1, 9)
        g = rng.exponential(size=n) * 10 ** rng.uniform(-2, 2)
        p = water_filling(g, 1.0).powers
        base = np.sum(np.log2(1 + g * p))
        active = np.nonzero(p > eps)[0]
        for a, b in itertools.permutations(range(n), 2):
            if a not in active:
                continue
            q = p.copy()
            q[a] -= eps
            q[b] += eps
            assert np.sum(np.log2(1 + g * q)) <= base + 1e-12


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(min_value=1e-3, max_value=1e3), min_size=1, max_size=8),
    st.floats(min_value=1e-3, max_value=1e3),
)
def test_water_filling_spends_budget(gains, budget):
    alloc = water_filling(gains, budget)
    assert np.all(alloc.powers >= 0)
    assert alloc.total == pytest.approx(budget, rel=1e-9)


# -- log-determinant -----------------------------------------------------------


def test_logdet_simple():
    assert logdet_psd(np.eye(4)) == 0.0
    assert logdet_psd(np.diag([2.0, 4.0])) == pytest.approx(np.log(8))


def test_logdet_matches_eigenvalues():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a = crandn(rng, 4, 4)
        m = a @ a.conj().T
        w, _ = hermitian_eig(m)
        assert logdet_psd(m) == pytest.approx(np.sum(np.log(w)), abs=1e-8)


def test_logdet_singular_is_minus_inf():
    assert logdet_psd(np.diag([1.0, 0.0])) == -np.inf


def test_logdet_rejects_indefinite():
    with pytest.raises(NumericsError, match="semidefinite"):
        logdet_psd(np.diag([1.0, -1.0]))


def test_check_psd_tolerates_roundoff():
    check_psd(np.diag([1.0, -1e-14]))


# -- phase quantization --------------------------------------------------------


def test_quantize_unbounded():
    assert quantize_phase(3 + 4j) == pytest.approx((3 + 4j) / 5)
    assert quantize_phase(0j) == 1


def test_quantize_one_bit():
    assert quantize_phase(-0.3 + 0.1j, 1) == -1


def test_quantize_two_bit_exhaustive():
    z = np.exp(0.8j)
    cb = phase_codebook(2)
    best = cb[np.argmax([(np.conj(g) * z).real for g in cb])]
    assert quantize_phase(z, 2) == best == 1j


def test_quantize_tie_goes_to_smaller_index():
    # exp(j pi/4) is equidistant from 1 and j
    assert quantize_phase(np.exp(1j * np.pi / 4), 2) == 1
    assert quantize_phase(0j, 3) == 1


def test_codebook_exact_axes():
    np.testing.assert_array_equal(phase_codebook(2), [1, 1j, -1, -1j])


@settings(max_examples=300, deadline=None)
@given(
    st.floats(min_value=-10, max_value=10),
    st.floats(min_value=-10, max_value=10),
    st.integers(min_value=1, max_value=5),
)
def test_quantize_is_argmax_over_codebook(re, im, bits):
    z = complex(re, im)
    cb = phase_codebook(bits)
    scores = [(np.conj(g) * z).real for g in cb]
    assert quantize_phase(z, bits) == cb[int(np.argmax(scores))]


def test_quantize_vectorized_matches_scalar():
    rng = np.random.default_rng(5)
    z = crandn(rng, 3, 4)
    out = quantize_phase(z, 3)
    assert out.shape == z.shape
    for idx in np.ndindex(z.shape):
        assert out[idx] == quantize_phase(complex(z[idx]), 3)
