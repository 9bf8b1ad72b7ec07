import numpy as np
import pytest
from hypothesis import given, strategies as st

from g2lab._linalg import (
    MatrixError,
    dagger,
    dexp_antihermitian,
    expm_antihermitian,
    hermitian_sqrt,
    logm_unitary,
    polar_derivative,
    polar_unitary,
    random_unitary,
    sqrt_derivative,
)

seeds = st.integers(0, 2**32 - 1)


def rand_c(rng, m):
    return rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))


def rand_pd(rng, m):
    M = rand_c(rng, m)
    return M @ dagger(M) + 0.1 * np.eye(m)


def herm(rng, m):
    X = rand_c(rng, m)
    return 0.5 * (X + dagger(X))


def test_sqrt_examples():
    assert np.allclose(hermitian_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    assert np.allclose(hermitian_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    with pytest.raises(MatrixError):
        hermitian_sqrt(np.diag([1.0, -1.0]))
    with pytest.raises(MatrixError):
        hermitian_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))


@given(seeds, st.integers(1, 4))
def test_sqrt_squares_back(seed, m):
    rng = np.random.default_rng(seed)
    H = rand_pd(rng, m)
    h = hermitian_sqrt(H)
    assert np.abs(h @ h - H).max() < 1e-12 * max(1, np.abs(H).max())
    assert np.linalg.eigvalsh(h).min() > 0


def test_sqrt_derivative_examples(rng):
    X = herm(rng, 3)
    assert np.allclose(sqrt_derivative(np.eye(3), X), X / 2)
    lam = np.array([1.0, 4.0, 9.0])
    oracle = X / (np.sqrt(lam)[:, None] + np.sqrt(lam)[None, :])
    assert np.allclose(sqrt_derivative(np.diag(lam), X), oracle, atol=1e-14)


@given(seeds)
def test_sqrt_derivative_solves_sylvester(seed):
    rng = np.random.default_rng(seed)
    H, dH = rand_pd(rng, 3), herm(rng, 3)
    h, dh = hermitian_sqrt(H), sqrt_derivative(H, dH)
    assert np.abs(h @ dh + dh @ h - dH).max() < 1e-11
    assert np.abs(dh - dagger(dh)).max() < 1e-12


def test_matches_finite_differences(rng):
    H, dH = rand_pd(rng, 3), herm(rng, 3)
    dh = sqrt_derivative(H, dH)
    errs = []
    for eps in (1e-2, 5e-3):
        fd = (hermitian_sqrt(H + eps * dH) - hermitian_sqrt(H - eps * dH)) / (2 * eps)
        errs.append(np.abs(fd - dh).max())
    assert np.log2(errs[0] / errs[1]) > 1.9


def test_polar_examples(rng):
    U = random_unitary(rng, 3)
    assert np.abs(polar_unitary(U) - U).max() < 1e-14
    assert np.allclose(polar_unitary(np.diag([2.0, 3.0])), np.eye(2), atol=1e-15)
    with pytest.raises(MatrixError):
        polar_unitary(np.zeros((2, 2)))


@given(seeds, st.integers(1, 4))
def test_polar_properties(seed, m):
    rng = np.random.default_rng(seed)
    N = rand_c(rng, m)
    P = polar_unitary(N)
    assert np.abs(dagger(P) @ P - np.eye(m)).max() < 1e-12
    # N = sqrt(N N^*) P(N)
    assert np.abs(hermitian_sqrt(N @ dagger(N)) @ P - N).max() < 1e-10 * max(1, np.abs(N).max())
    g = random_unitary(rng, m)
    assert np.abs(polar_unitary(dagger(g) @ N @ g) - dagger(g) @ P @ g).max() < 1e-11


def test_polar_derivative_fd(rng):
    N, dN = rand_c(rng, 3) + 3 * np.eye(3), rand_c(rng, 3)
    fd = (polar_unitary(N + 1e-5 * dN) - polar_unitary(N - 1e-5 * dN)) / 2e-5
    assert np.abs(fd - polar_derivative(N, dN)).max() < 1e-8


@given(seeds)
def test_exp_log(seed):
    rng = np.random.default_rng(seed)
    X = rand_c(rng, 3)
    X = 0.5 * (X - dagger(X))
    U = expm_antihermitian(X)
    assert np.abs(dagger(U) @ U - np.eye(3)).max() < 1e-13
    from scipy.linalg import expm

    assert np.abs(U - expm(X)).max() < 1e-12
    assert np.abs(expm_antihermitian(logm_unitary(U)) - U).max() < 1e-12
    dX = rand_c(rng, 3)
    dX = 0.5 * (dX - dagger(dX))
    fd = (expm(X + 1e-6 * dX) - expm(X - 1e-6 * dX)) / 2e-6
    assert np.abs(fd - dexp_antihermitian(X, dX)).max() < 1e-8


def test_random_unitary_batch(rng):
    U = random_unitary(rng, 3, size=5)
    assert U.shape == (5, 3, 3)
    assert np.abs(dagger(U) @ U - np.eye(3)).max() < 1e-13
