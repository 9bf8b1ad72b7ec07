import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from g2lab._linalg import expm_antihermitian, random_unitary
from g2lab.gauge import (
    Equivalence,
    GaugeError,
    GaugeTransform,
    act,
    conjugacy_distance,
    conn_distance,
    gauge_equivalent,
    project_to_stabilizer,
    random_gauge,
    random_log_gauge,
    stabilizer,
)
from g2lab.lattice import BandLimitedField, Connection, TorusLattice, curvature, flat_connection, random_connection

seeds = st.integers(0, 2**32 - 1)
LAT3 = TorusLattice((6, 6, 6))


def sup(f):
    return f.sup_norm()


def test_identity_and_central_gauges_act_trivially(rng):
    A = random_connection(rng, LAT3, 2, 1, 4)
    assert sup(act(GaugeTransform.identity(LAT3, 2), A).A - A.A) < 1e-15
    c = GaugeTransform.constant(LAT3, np.exp(0.7j) * np.eye(2))
    assert sup(act(c, A).A - A.A) < 1e-15


@given(seeds)
def test_right_action_law(seed):
    rng = np.random.default_rng(seed)
    A = random_connection(rng, LAT3, 2, 1, 3)
    u = random_gauge(rng, LAT3, 2, 1, 1)
    v = random_gauge(rng, LAT3, 2, 1, 1)
    # v acting after u equals the product u v acting once
    assert sup(act(v, act(u, A)).A - act(u * v, A).A) < 1e-10


@given(seeds)
def test_gauge_covariance_of_curvature(seed):
    rng = np.random.default_rng(seed)
    A = random_connection(rng, LAT3, 2, 1, 3)
    u = random_gauge(rng, LAT3, 2, 1, 1)
    U = u.field
    lhs = curvature(act(u, A), check_grid=False)
    assert sup(lhs - U.adjoint().wedge(curvature(A).wedge(U))) < 1e-10


def test_act_on_grid_matches_exact_action(rng):
    A = random_connection(rng, LAT3, 2, 1, 3)
    u = random_gauge(rng, LAT3, 2, 1, 1)
    from g2lab.gauge import grid_values

    assert np.abs(u.act_on_grid(A) - grid_values(act(u, A).A)).max() < 1e-12


def test_log_gauge_unitary_and_serialization(rng):
    u = random_log_gauge(rng, LAT3, 2)
    assert u.unitarity_defect() < 1e-13
    d = json.loads(json.dumps(u.to_json()))
    assert d["kind"] == "gauge-log"
    v = GaugeTransform.from_json(d)
    assert np.abs(v.values() - u.values()).max() < 1e-14
    with pytest.raises(GaugeError):
        GaugeTransform.from_json({"kind": "connection"})


def test_non_unitary_gauge_rejected():
    f = BandLimitedField.constant(LAT3, 2 * np.eye(2), 0, 2)
    with pytest.raises(GaugeError):
        GaugeTransform(f)
    with pytest.raises(GaugeError):
        act(GaugeTransform.identity(LAT3, 3), Connection.trivial(LAT3, 2))


def test_stabilizer_trivial_connection():
    G = stabilizer(Connection.trivial(LAT3, 2))
    assert G.complex_dim == 4 and not G.ambiguous and G.is_constant


def test_stabilizer_flat_diagonal_holonomy():
    B = flat_connection(LAT3, [[0.1, 0.3], [0.0, 0.2], [0.4, 0.4]])
    G = stabilizer(B)
    assert G.complex_dim == 2
    M = G.matrices()
    assert np.abs(M - np.array([np.diag(np.diag(x)) for x in M])).max() < 1e-12


def test_stabilizer_equal_holonomy_is_full():
    V = random_unitary(np.random.default_rng(0), 2)
    B = flat_connection(LAT3, [[0.25, 0.25], [0.1, 0.1], [0.0, 0.0]], V)
    assert stabilizer(B).complex_dim == 4


@settings(max_examples=8)
@given(seeds)
def test_generic_connection_irreducible(seed):
    rng = np.random.default_rng(seed)
    B = random_connection(rng, LAT3, 2, 1, 4, amplitude=0.7)
    G = stabilizer(B)
    assert G.complex_dim == 1 and G.irreducible()


@settings(max_examples=6)
@given(seeds)
def test_stabilizer_dimension_gauge_invariant(seed):
    rng = np.random.default_rng(seed)
    B = flat_connection(LAT3, rng.uniform(-0.4, 0.4, size=(3, 2)))
    u = random_gauge(rng, LAT3, 2, 1, 1)
    assert stabilizer(act(u, B)).complex_dim == stabilizer(B).complex_dim == 2


def test_stabilizer_elements_are_parallel(rng):
    from g2lab.lattice import cov_d

    B = flat_connection(LAT3, [[0.1, 0.3], [0.0, 0.2], [0.4, 0.4]])
    u = random_gauge(rng, LAT3, 2, 1, 1)
    Bu = act(u, B)
    G = stabilizer(Bu)
    assert G.complex_dim == 2
    assert max(sup(cov_d(Bu, e)) for e in G.elements) < 1e-10
    assert G.contains_identity() < 1e-10


def test_equivalence_examples(rng):
    B = random_connection(rng, LAT3, 2, 1, 4, amplitude=0.6)
    X = np.diag(np.exp([0.3j, 1.1j]))
    res = gauge_equivalent(B, B)
    assert res.status == Equivalence.FOUND and res.residuals["connection"] < 1e-10
    g0 = random_gauge(rng, LAT3, 2, 1, 1)
    Bt = act(g0, B)
    res = gauge_equivalent(B, Bt)
    assert res.found and res.residuals["connection"] < 1e-8 and res.residuals["unitarity"] < 1e-8


def test_equivalence_with_intertwining(rng):
    B = flat_connection(LAT3, [[0.1, 0.3], [0.0, 0.2], [0.4, 0.4]])
    g0 = random_gauge(rng, LAT3, 2, 1, 1)
    Bt = act(g0, B)
    X = np.diag(np.exp([0.3j, 1.1j]))
    # Y as a band-limited field: g0^{-1} X g0
    Yf = g0.field.adjoint().wedge(BandLimitedField.constant(LAT3, X, 0, 2).wedge(g0.field))
    res = gauge_equivalent(B, Bt, X, Yf)
    assert res.found and res.residuals["intertwining"] < 1e-8
    # endpoints in different conjugacy classes of the diagonal stabilizer
    Z = np.diag(np.exp([1.1j, 0.3j]))
    res = gauge_equivalent(B, B, X, Z)
    assert res.status == Equivalence.NOT_EQUIVALENT


def test_not_equivalent_by_holonomy():
    B1 = flat_connection(LAT3, [[0.1, 0.3], [0.0, 0.2], [0.4, 0.4]])
    B2 = flat_connection(LAT3, [[0.15, 0.3], [0.0, 0.2], [0.4, 0.4]])
    assert gauge_equivalent(B1, B2).status == Equivalence.NOT_EQUIVALENT


@settings(max_examples=2)
@given(seeds)
def test_orbit_collapse(seed):
    rng = np.random.default_rng(seed)
    A = random_connection(rng, LAT3, 2, 1, 3, amplitude=0.6)
    u = random_gauge(rng, LAT3, 2, 1, 1)
    d = conn_distance(A, act(u, A))
    assert d.value < 1e-8


@pytest.mark.parametrize("c", [0.0, 0.3, 0.5, 1.2, -2.7])
def test_abelian_constant_distance(c):
    lat = TorusLattice((8, 8))
    A1 = Connection.trivial(lat, 1)
    A2 = flat_connection(lat, [[c], [0.0]])
    oracle = min(abs(c - k) for k in range(-5, 6))
    d = conn_distance(A1, A2)
    assert d.value >= oracle - 1e-9  # cannot beat the true infimum
    assert d.value <= oracle + 1e-8


@settings(max_examples=3)
@given(seeds)
def test_distance_triangle(seed):
    rng = np.random.default_rng(seed)
    lat = TorusLattice((4, 4))
    A = [random_connection(rng, lat, 1, 1, 2, amplitude=0.3) for _ in range(3)]
    d = lambda a, b: conn_distance(a, b, budget=1).value
    assert d(A[0], A[2]) <= d(A[0], A[1]) + d(A[1], A[2]) + 1e-6


def test_conjugacy_distance_examples(rng):
    G_full = stabilizer(Connection.trivial(LAT3, 2))
    x = np.diag(np.exp([0.4j, 1.5j]))
    g = random_unitary(rng, 2)
    assert conjugacy_distance(x, g @ x @ g.conj().T, G_full).value < 1e-8
    B_irr = random_connection(rng, LAT3, 2, 1, 4, amplitude=0.7)
    G_c = stabilizer(B_irr)
    for a, b in [(0.0, 1.0), (0.5, 2.5), (3.0, -3.0)]:
        d = conjugacy_distance(np.exp(1j * a) * np.eye(2), np.exp(1j * b) * np.eye(2), G_c).value
        assert abs(d - abs(np.exp(1j * a) - np.exp(1j * b))) < 1e-12


def test_conjugacy_distance_torus_against_sampling(rng):
    B = flat_connection(LAT3, [[0.1, 0.3], [0.0, 0.2], [0.4, 0.4]])
    G = stabilizer(B)
    al, be = 0.4, 2.0
    x = np.diag(np.exp([1j * al, 1j * be]))
    y = np.diag(np.exp([1j * be, 1j * al]))
    d = conjugacy_distance(x, y, G).value
    # sampling oracle over the diagonal torus, which acts trivially on diagonal matrices
    th = rng.uniform(0, 2 * np.pi, size=(2000, 2))
    samples = []
    for t in th:
        D = np.diag(np.exp(1j * t))
        samples.append(np.linalg.norm(x - D @ y @ D.conj().T, 2))
    assert abs(d - min(samples)) < 1e-9
    assert abs(d - abs(np.exp(1j * al) - np.exp(1j * be))) < 1e-12
    # in the full unitary group the swap is a conjugation
    assert conjugacy_distance(x, y, stabilizer(Connection.trivial(LAT3, 2))).value < 1e-8


def test_project_to_stabilizer(rng):
    B = flat_connection(LAT3, [[0.1, 0.3], [0.0, 0.2], [0.4, 0.4]])
    G = stabilizer(B)
    a0 = np.diag(np.exp([0.2j, -1.0j]))
    a, gap, _ = project_to_stabilizer(a0, B, G)
    assert gap < 1e-13
    xi = np.array([[0, 1], [-1, 0]], complex)  # off-diagonal, orthogonal to the diagonal kernel
    gaps = []
    for eps in (1e-2, 1e-3):
        a, gap, _ = project_to_stabilizer(a0 @ expm_antihermitian(eps * xi), B, G)
        gaps.append(gap)
        assert np.abs(a.values()[0] - a0).max() < 10 * eps**2
    assert 5 < gaps[0] / gaps[1] < 20  # gap is O(eps)
    far = np.array([[0, 1], [1, 0]], complex)
    a, gap, info = project_to_stabilizer(far, B, G)
    assert gap > 0.5 or info.get("flag")
