import numpy as np
import pytest
from hypothesis import given, strategies as st

from g2lab.exterior import (
    AlgebraicForm,
    FiberMetric,
    FormError,
    MetricError,
    basis,
    contract,
    hodge_star,
    inner,
    inner_norm,
    perm_sign,
    wedge,
)
from g2lab.structures import phi_euclidean, standard_su3

from oracles import random_form, random_spd, star_tensor, wedge_tensor

E = AlgebraicForm.monomial
seeds = st.integers(0, 2**32 - 1)


def test_basis_products():
    assert wedge(E(6, (0,)), E(6, (1,))).allclose(E(6, (0, 1)))
    assert wedge(E(6, (0,)), E(6, (0,))).max_abs() == 0
    w = E(6, (0, 1)) + E(6, (2, 3))
    assert wedge(w, w).allclose(2 * E(6, (0, 1, 2, 3)))


def test_reversed_index_sign():
    assert AlgebraicForm(5, 2, {(3, 1): 1.0}).allclose(-E(5, (1, 3)))
    assert perm_sign((2, 0, 1)) == 1 and perm_sign((1, 0)) == -1 and perm_sign((0, 0)) == 0


@given(seeds, st.integers(3, 6))
def test_wedge_matches_tensor_oracle(seed, n):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    l = int(rng.integers(0, n - k + 1))
    a, b = random_form(rng, n, k), random_form(rng, n, l)
    assert (wedge(a, b) - wedge_tensor(a, b)).max_abs() < 1e-12


@given(seeds, st.integers(2, 8))
def test_alternation(seed, n):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    l = int(rng.integers(0, n - k + 1))
    a, b = random_form(rng, n, k), random_form(rng, n, l)
    assert (wedge(a, b) - (-1) ** (k * l) * wedge(b, a)).max_abs() < 1e-12


def test_matrix_wedge_is_ordered():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(2, 2))
    B = rng.normal(size=(2, 2))
    w = wedge(E(4, (0,), A, rank=2), E(4, (1,), B, rank=2))
    assert np.allclose(w.coefficient((0, 1)), A @ B)


def test_mixed_wedge_needs_promotion():
    a = E(4, (0,), np.eye(2), rank=2)
    b = E(4, (1,))
    with pytest.raises(FormError):
        wedge(a, b)
    assert np.allclose(wedge(a, b, promote=True).coefficient((0, 1)), np.eye(2))


def test_wedge_errors():
    with pytest.raises(FormError):
        wedge(E(4, (0,)), E(5, (1,)))
    with pytest.raises(FormError):
        wedge(E(3, (0, 1)), E(3, (1, 2)))
    with pytest.raises(FormError):
        wedge(E(3, (0,), np.eye(2), rank=2), E(3, (1,), np.eye(3), rank=3))


def test_star_examples():
    vol = E(7, tuple(range(7)))
    assert hodge_star(AlgebraicForm(7, 0, {(): 1.0})).allclose(vol)
    # complement of {1,2,7} (1-based) is {3,4,5,6}; the shuffle (1,2,7,3,4,5,6) is even
    s = hodge_star(E(7, (0, 1, 6)))
    assert s.allclose(E(7, (2, 3, 4, 5)))


@given(seeds, st.integers(2, 8))
def test_star_involution(seed, n):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    a = random_form(rng, n, k)
    g = FiberMetric(random_spd(rng, n))
    assert (hodge_star(hodge_star(a, g), g) - (-1) ** (k * (n - k)) * a).max_abs() < 1e-12 * max(1, a.max_abs())


@given(seeds, st.integers(2, 6))
def test_star_matches_tensor_oracle(seed, n):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    a = random_form(rng, n, k)
    g = random_spd(rng, n)
    assert (hodge_star(a, FiberMetric(g)) - star_tensor(a, g)).max_abs() < 1e-10


@given(seeds, st.integers(2, 8))
def test_inner_product_volume_identity(seed, n):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    a, b = random_form(rng, n, k), random_form(rng, n, k)
    g = FiberMetric(random_spd(rng, n))
    lhs = wedge(b, hodge_star(a.conj(), g))
    vol = g.volume_factor * g.orientation
    assert abs(lhs.coefficient(tuple(range(n))) - inner(b, a, g) * vol) < 1e-10


@given(seeds, st.integers(3, 8))
def test_contraction_adjunction(seed, n):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n + 1))
    j = int(rng.integers(0, k + 1))
    beta, alpha, gamma = random_form(rng, n, j), random_form(rng, n, k), random_form(rng, n, k - j)
    g = FiberMetric(random_spd(rng, n))
    # <beta -| alpha, gamma> = <alpha, beta ^ gamma> for real beta (Hermitian pairing)
    beta = beta.real
    lhs = inner(contract(beta, alpha, g), gamma, g)
    rhs = inner(alpha, wedge(beta, gamma), g)
    assert abs(lhs - rhs) < 1e-10 * (1 + abs(lhs))


def test_contraction_examples():
    assert abs(contract(E(7, (0, 1)), E(7, (0, 1))).coefficient(()) - 1) < 1e-15
    assert contract(E(7, (0, 1)), phi_euclidean()).allclose(E(7, (6,)))
    s = standard_su3()
    assert abs(contract(s.omega, s.omega).coefficient(()) - 3) < 1e-14
    with pytest.raises(FormError):
        contract(E(5, (0, 1, 2)), E(5, (0, 1)))


def test_norm_examples():
    assert abs(inner_norm(phi_euclidean()) - 7) < 1e-14
    assert inner_norm(AlgebraicForm.zero(6, 3)) == 0
    # dz1 ^ dz2 ^ dz3 with dz = e^{odd} + i e^{even}
    dz = [E(6, (2 * j,)) + E(6, (2 * j + 1,)) * 1j for j in range(3)]
    assert abs(inner_norm(wedge(wedge(dz[0], dz[1]), dz[2])) - 8) < 1e-14


def test_matrix_inner_uses_trace():
    rng = np.random.default_rng(2)
    A, B = rng.normal(size=(2, 3, 3)) + 1j * rng.normal(size=(2, 3, 3))
    a, b = E(4, (0, 2), A, rank=3), E(4, (0, 2), B, rank=3)
    assert abs(inner(b, a) - np.trace(B @ A.conj().T)) < 1e-12


def test_metric_validation():
    with pytest.raises(MetricError):
        FiberMetric(np.diag([1.0, -1.0]))
    with pytest.raises(MetricError):
        FiberMetric(np.array([[1.0, 2.0], [0.0, 1.0]]))
    g = FiberMetric(np.diag([4.0, 1.0, 1.0]), orientation=-1)
    assert hodge_star(AlgebraicForm(3, 0, {(): 1.0}), g).allclose(-2 * E(3, (0, 1, 2)))


def test_degree_bounds():
    with pytest.raises(FormError):
        AlgebraicForm(3, 4)
    with pytest.raises(FormError):
        AlgebraicForm(3, 1, {(5,): 1.0})
    assert len(basis(7, 3)) == 35
