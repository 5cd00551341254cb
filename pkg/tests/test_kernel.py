import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fastbkmr.errors import DomainError
from fastbkmr.kernel import (VFactor, cross_kernel, gram_ard, gram_isotropic, robust_cholesky,
                             v_matrix)


def test_unit_diagonal():
    z = np.random.default_rng(1).standard_normal((8, 3))
    np.testing.assert_allclose(np.diag(gram_isotropic(z, 0.7).m), 1.0)
    np.testing.assert_allclose(np.diag(gram_ard(z, [0.3, 1.0, 2.0]).m), 1.0)


@pytest.mark.parametrize("q", [1, 2, 5])
def test_unit_distance_unit_rho(q):
    z = np.zeros((2, q))
    z[1, 0] = 1.0
    assert gram_isotropic(z, 1.0).m[0, 1] == pytest.approx(np.exp(-1.0)) == pytest.approx(0.367879, abs=1e-6)


def test_isotropic_literal_power_brute_force():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((6, 3))
    rho = 1.3
    expect = np.array([[np.exp(-np.sum((a - b) ** 2) / rho ** 6) for b in z] for a in z])
    np.testing.assert_allclose(gram_isotropic(z, rho).m, expect, atol=1e-14)
    expect2 = np.array([[np.exp(-np.sum((a - b) ** 2) / rho ** 2) for b in z] for a in z])
    np.testing.assert_allclose(gram_isotropic(z, rho, power=2).m, expect2, atol=1e-14)


def test_psd_random():
    z = np.random.default_rng(3).standard_normal((10, 3))
    assert np.linalg.eigvalsh(gram_isotropic(z, 0.9).m).min() >= -1e-8


def test_ard_zero_and_spike():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((7, 3))
    np.testing.assert_array_equal(gram_ard(z, np.zeros(3)).m, np.ones((7, 7)))
    one_d = gram_ard(z[:, :1], [1.0]).m
    np.testing.assert_allclose(gram_ard(z, [1.0, 0.0, 0.0]).m, one_d, atol=1e-15)


def test_ard_brute_force():
    rng = np.random.default_rng(5)
    z = rng.standard_normal((9, 4))
    r = rng.gamma(1.0, 1.0, 4)
    n = z.shape[0]
    expect = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            s = 0.0
            for l in range(4):
                s += r[l] * (z[i, l] - z[j, l]) ** 2
            expect[i, j] = np.exp(-s)
    np.testing.assert_allclose(gram_ard(z, r).m, expect, atol=1e-12)


def test_bad_parameters():
    z = np.zeros((3, 2))
    with pytest.raises(DomainError):
        gram_isotropic(z, 0.0)
    with pytest.raises(DomainError):
        gram_ard(z, [-1.0, 1.0])
    with pytest.raises(DomainError):
        VFactor(np.eye(3), 0.0)


def test_cross_kernel_matches_gram():
    z = np.random.default_rng(6).standard_normal((5, 2))
    np.testing.assert_allclose(cross_kernel("isotropic", z, z, rho=1.1), gram_isotropic(z, 1.1).m)
    np.testing.assert_allclose(cross_kernel("ard", z, z, r=[0.5, 2.0]), gram_ard(z, [0.5, 2.0]).m)


def test_v_identity_kernel():
    n = 6
    v = v_matrix(np.eye(n), 1.0)
    np.testing.assert_allclose(v.matrix(), 2 * np.eye(n))
    assert v.logdet == pytest.approx(n * np.log(2.0))


def test_v_small_lambda():
    rng = np.random.default_rng(7)
    z = rng.standard_normal((5, 2))
    y = rng.standard_normal(5)
    v = v_matrix(gram_isotropic(z, 1.0), 1e-14)
    np.testing.assert_allclose(v.solve(y), y, atol=1e-12)


def test_v_solve_dense_inverse():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((12, 12))
    k = a @ a.T / 12
    b = rng.standard_normal((12, 3))
    v = v_matrix(k, 0.7)
    dense = np.linalg.inv(np.eye(12) + 0.7 * k)
    np.testing.assert_allclose(v.solve(b), dense @ b, atol=1e-8)
    assert v.logdet == pytest.approx(np.linalg.slogdet(np.eye(12) + 0.7 * k)[1], abs=1e-10)
    assert v.quad(b[:, 0]) == pytest.approx(b[:, 0] @ dense @ b[:, 0], rel=1e-10)


def test_v_scaled():
    rng = np.random.default_rng(9)
    k = gram_isotropic(rng.standard_normal((8, 2)), 1.0).m
    v1, v4 = VFactor(k, 0.5), VFactor(k, 0.5, scale=4.0)
    np.testing.assert_allclose(v4.matrix(), 4 * v1.matrix())
    assert v4.logdet == pytest.approx(8 * np.log(4.0) + v1.logdet)
    np.testing.assert_allclose(v4.inverse(), np.linalg.inv(v4.matrix()), atol=1e-10)


def test_robust_cholesky_rank_deficient():
    u = np.random.default_rng(10).standard_normal((6, 2))
    c = u @ u.T
    chol = robust_cholesky(c)
    np.testing.assert_allclose(chol @ chol.T, c, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 15), st.floats(0.2, 5.0), st.integers(0, 10_000))
def test_gram_symmetric_psd_property(n, rho, seed):
    z = np.random.default_rng(seed).standard_normal((n, 2))
    k = gram_isotropic(z, rho).m
    np.testing.assert_array_equal(k, k.T)
    assert np.all((k >= 0) & (k <= 1))
    assert np.linalg.eigvalsh(k).min() >= -1e-8
