import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from g2lab.exterior import basis
from g2lab.gauge import act, random_gauge
from g2lab.lattice import (
    BandLimitedField,
    Connection,
    GridError,
    LatticeError,
    SplitConnection,
    TorusLattice,
    assemble,
    check_periodicity,
    cov_d,
    curvature,
    dumps_json,
    ext_d,
    integrate,
    random_connection,
    random_field,
    split,
)
from g2lab.structures import standard_su3

seeds = st.integers(0, 2**32 - 1)
TWO_PI = 2 * np.pi


def scalar_modes(lat, modes):
    return BandLimitedField.from_modes(lat, {k: np.array([c]) for k, c in modes.items()})


def test_d_of_sine():
    lat = TorusLattice((6, 6, 6))
    f = scalar_modes(lat, {(1, 0, 0): -0.5j, (-1, 0, 0): 0.5j})  # sin x0
    df = ext_d(f)
    pts = np.random.default_rng(0).uniform(0, TWO_PI, size=(10, 3))
    v = df.evaluate(pts)[:, :, 0, 0]
    assert np.abs(v[:, 0] - np.cos(pts[:, 0])).max() < 1e-14
    assert np.abs(v[:, 1:]).max() < 1e-14


def _grad_oracle(f: BandLimitedField, pts):
    """Analytic partials of each component at points: sum i k_mu c_k exp(i k.x)."""
    ph = np.exp(1j * pts @ f.freqs.T)
    return np.einsum("pa,am,acxy->pmcxy", ph, 1j * f.freqs, f.coeffs)


@given(seeds, st.integers(2, 5))
def test_ext_d_against_analytic_derivatives(seed, n):
    rng = np.random.default_rng(seed)
    lat = TorusLattice((5,) * n)
    k = int(rng.integers(0, n))
    f = random_field(rng, lat, k, None, 2, 5)
    pts = rng.uniform(0, TWO_PI, size=(7, n))
    grad = _grad_oracle(f, pts)[..., 0, 0]  # (P, mu, comp)
    idx_k = basis(n, k)
    pos = {I: p for p, I in enumerate(idx_k)}
    expected = np.zeros((len(pts), len(basis(n, k + 1))), complex)
    for q, J in enumerate(basis(n, k + 1)):
        for r, mu in enumerate(J):
            rest = J[:r] + J[r + 1 :]
            expected[:, q] += (-1) ** r * grad[:, mu, pos[rest]]
    got = ext_d(f).evaluate(pts)[:, :, 0, 0] if k + 1 <= n else None
    assert np.abs(got - expected).max() < 1e-12


@given(seeds)
def test_d_squared_zero(seed):
    rng = np.random.default_rng(seed)
    lat = TorusLattice((5,) * 4)
    f = random_field(rng, lat, int(rng.integers(0, 3)), 2, 2, 6)
    assert ext_d(ext_d(f)).sup_norm() < 1e-13


def test_d_constant_and_top_degree():
    lat = TorusLattice((4,) * 6)
    om = BandLimitedField.from_form(lat, standard_su3().omega)
    assert ext_d(om).sup_norm() == 0
    with pytest.raises(LatticeError):
        ext_d(BandLimitedField.zeros(lat, 6))


def test_cov_d_basic(rng):
    lat = TorusLattice((6,) * 3)
    s = random_field(rng, lat, 0, 2, 1, 4)
    assert (cov_d(Connection.trivial(lat, 2), s) - ext_d(s)).sup_norm() < 1e-15
    A = random_connection(rng, lat, 2, 1, 4)
    I = BandLimitedField.constant(lat, np.eye(2), 0, 2)
    assert cov_d(A, I).sup_norm() < 1e-14
    with pytest.raises(LatticeError):
        cov_d(A, random_field(rng, lat, 0, 3, 1, 2))


@given(seeds)
def test_cov_d_leibniz(seed):
    rng = np.random.default_rng(seed)
    lat = TorusLattice((8,) * 3)
    A = random_connection(rng, lat, 2, 1, 3)
    s1, s2 = random_field(rng, lat, 0, 2, 1, 3), random_field(rng, lat, 0, 2, 1, 3)
    lhs = cov_d(A, s1.wedge(s2))
    rhs = cov_d(A, s1).wedge(s2) + s1.wedge(cov_d(A, s2))
    assert (lhs - rhs).sup_norm() < 1e-11


def test_curvature_examples():
    lat = TorusLattice((6,) * 4)
    assert curvature(Connection.trivial(lat, 1)).sup_norm() == 0
    # A = i sin(x2) dx0 (abelian); F = i cos(x2) dx2 ^ dx0 = -i cos(x2) dx0 ^ dx2
    c = np.zeros((2, 4, 1, 1), complex)
    c[0, 0] = 0.5
    c[1, 0] = -0.5
    A = Connection(BandLimitedField(lat, 1, 1, [[0, 0, 1, 0], [0, 0, -1, 0]], c))
    F = curvature(A)
    pts = np.random.default_rng(1).uniform(0, TWO_PI, size=(5, 4))
    pos = {I: p for p, I in enumerate(basis(4, 2))}
    v = F.evaluate(pts)[:, :, 0, 0]
    assert np.abs(v[:, pos[(0, 2)]] + 1j * np.cos(pts[:, 2])).max() < 1e-14
    assert np.abs(np.delete(v, pos[(0, 2)], axis=1)).max() < 1e-14


def test_curvature_grid_check(rng):
    lat = TorusLattice((4,) * 3)
    A = random_connection(rng, lat, 2, 2, 6)
    with pytest.raises(GridError):
        curvature(A)


@given(seeds)
def test_bianchi(seed):
    rng = np.random.default_rng(seed)
    lat = TorusLattice((8,) * 4)
    A = random_connection(rng, lat, 2, 1, 3)
    assert cov_d(A, curvature(A)).sup_norm() < 1e-11


@given(seeds)
def test_curvature_covariance(seed):
    rng = np.random.default_rng(seed)
    lat = TorusLattice((8,) * 3)
    A = random_connection(rng, lat, 2, 1, 3)
    u = random_gauge(rng, lat, 2, 1, 1)
    F1 = curvature(act(u, A), check_grid=False)
    U = u.field
    F2 = U.adjoint().wedge(curvature(A).wedge(U))
    assert (F1 - F2).sup_norm() < 1e-10


@given(seeds)
def test_split_assemble(seed):
    rng = np.random.default_rng(seed)
    lat = TorusLattice((6,) * 4, time_axis=int(rng.integers(0, 4)))
    A = random_connection(rng, lat, 2, 1, 4)
    sc = split(A)
    assert (assemble(sc).A - A.A).sup_norm() == 0
    assert (sc.curvature_from_parts() - curvature(A)).sup_norm() < 1e-11


def test_split_static_has_no_dt_part(rng):
    lat = TorusLattice((6,) * 4, time_axis=3)
    A = random_connection(rng, lat, 2, 1, 4, active_axes=(0, 1, 2))
    A_Y = Connection(A.A.restrict_axes(lat.spatial_axes), check=False)
    sc = SplitConnection(A_Y, BandLimitedField.zeros(lat, 0, 2, lat.spatial_axes))
    F = curvature(assemble(sc))
    pos = [p for p, I in enumerate(basis(4, 2)) if 3 in I]
    assert np.abs(F.coeffs[:, pos]).max(initial=0) < 1e-15
    with pytest.raises(LatticeError):
        split(random_connection(rng, TorusLattice((6,) * 3), 2))


def test_integrate_examples():
    lat = TorusLattice((4,) * 6)
    assert abs(integrate(BandLimitedField.constant(lat, 1.0)) - TWO_PI**6) < 1e-6
    sin = scalar_modes(lat, {(1, 0, 0, 0, 0, 0): -0.5j, (-1, 0, 0, 0, 0, 0): 0.5j})
    assert abs(integrate(sin)) == 0
    # quadrature oracle on a 1-D grid: mean of sin^2 is 1/2
    x = np.linspace(0, TWO_PI, 64, endpoint=False)
    assert abs(integrate(sin.wedge(sin)) - np.mean(np.sin(x) ** 2) * TWO_PI**6) < 1e-6
    with pytest.raises(LatticeError):
        integrate(BandLimitedField.zeros(lat, 2))


@given(seeds)
def test_stokes(seed):
    rng = np.random.default_rng(seed)
    lat = TorusLattice((5,) * 4)
    a = random_field(rng, lat, 3, 2, 2, 5)
    assert np.abs(integrate(ext_d(a))).max() < 1e-11


def test_periodicity_examples():
    t = np.linspace(0, TWO_PI, 257)
    assert check_periodicity(np.ones((257, 2))).max_defect == 0
    assert check_periodicity(np.sin(t)).max_defect < 1e-7
    r = check_periodicity(t)
    assert abs(r.defects[0] - TWO_PI) < 1e-12 and not r.passed
    with pytest.raises(LatticeError):
        check_periodicity(np.ones(3), K=3)


@given(seeds)
def test_json_roundtrip_bit_stable(seed):
    rng = np.random.default_rng(seed)
    lat = TorusLattice((5,) * 3, time_axis=2)
    f = random_field(rng, lat, 1, 2, 2, 5)
    s = f.dumps()
    g = BandLimitedField.from_json(json.loads(s))
    assert (g - f).sup_norm() == 0
    assert g.dumps() == s
    modes = json.loads(s)["modes"]
    ks = [tuple(m["k"]) for m in modes]
    assert ks == sorted(ks)


def test_json_errors():
    with pytest.raises(LatticeError):
        BandLimitedField.from_json({"lattice": {"grid": [4]}, "modes": [{"k": [0]}]})
    with pytest.raises(LatticeError):
        TorusLattice.from_json({"dims": 3, "grid": [4, 4]})


def test_connection_must_be_antihermitian(rng):
    lat = TorusLattice((4,) * 2)
    f = random_field(rng, lat, 1, 2, 1, 3, symmetry="hermitian")
    with pytest.raises(LatticeError):
        Connection(f)


def test_dumps_json_precision():
    assert dumps_json({"x": 0.1 + 0.2}) == '{\n "x": 0.30000000000000004\n}'
