"""Acceptance criteria at their stated tolerances; each test records one pass/fail line."""

import itertools
import time

import numpy as np
import pytest

from g2lab._linalg import (
    dagger,
    expm_antihermitian,
    hermitian_sqrt,
    polar_unitary,
    random_unitary,
    sqrt_derivative,
)
from g2lab.chernsimons import (
    CSContext,
    cs_gradient,
    cs_value,
    flow,
    g2_residual,
    gauge_orbit_invariance,
    l2_real,
    reduction_ratio,
    theorem_I_roundtrip,
)
from g2lab.exterior import AlgebraicForm, FiberMetric, basis, contract, hodge_star, inner_norm, wedge
from g2lab.gauge import GaugeTransform, conjugacy_distance, random_gauge, stabilizer
from g2lab.isotrivial import admissible_gauge, assemble_isotrivial, reducibility_check
from g2lab.lattice import BandLimitedField, Connection, TorusLattice, flat_connection, random_connection
from g2lab.structures import (
    G2Structure,
    SU3Structure,
    cayley_euclidean,
    check_cayley_redundancy,
    check_g2_identities,
    normalize_conformal,
    standard_su3,
)

pytestmark = pytest.mark.acceptance

T6 = TorusLattice((6,) * 6)
Y3 = TorusLattice((5, 5, 5))


def rand_ah(rng, m):
    X = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    return 0.5 * (X - dagger(X))


def flat_pair(rng, lat=T6):
    """Flat ``B`` with holonomy and an endpoint ``a`` in its stabilizer.

    The holonomy angles are grouped into blocks of equal values; ``a`` is a
    block-diagonal unitary in the same basis, so it is parallel for ``B``.
    """
    m = int(rng.integers(2, 4))
    sizes = [m] if rng.random() < 0.2 else ([1] * m if rng.random() < 0.5 else [2] + [1] * (m - 2))
    ang = []
    for s in sizes:
        ang += [rng.uniform(-0.45, 0.45, lat.n)] * s
    angles = np.array(ang).T
    V = random_unitary(rng, m)
    B = flat_connection(lat, angles, V)
    blocks = np.zeros((m, m), complex)
    i = 0
    for s in sizes:
        blocks[i : i + s, i : i + s] = random_unitary(rng, s)
        i += s
    return B, V @ blocks @ dagger(V)


# 1 ------------------------------------------------------------------------------------

def test_c1_fiber_identities(rng, criterion):
    t0 = time.perf_counter()
    worst = {}
    s = standard_su3()
    for _ in range(200):
        n = int(rng.choice([6, 7, 8]))
        k = int(rng.integers(0, n + 1))
        a = AlgebraicForm.from_array(n, k, rng.normal(size=len(basis(n, k))))
        g = FiberMetric.euclidean(n)
        r = (hodge_star(hodge_star(a, g), g) - (-1) ** (k * (n - k)) * a).max_abs()
        worst["star_star"] = max(worst.get("star_star", 0), r)
        th = AlgebraicForm.from_array(7, 2, rng.normal(size=21))
        g2 = G2Structure.euclidean()
        r = (contract(contract(th, g2.phi), g2.phi) - hodge_star(wedge(th, g2.phi)) - th).max_abs()
        worst["phi_contraction"] = max(worst.get("phi_contraction", 0), r)
        F = AlgebraicForm.from_array(6, 2, rng.normal(size=15))
        gi = check_g2_identities(F, s)
        worst["J_ReOmega"] = max(worst.get("J_ReOmega", 0), gi["J(F-|ReOmega) - F-|ImOmega"])
        worst["star_ReOmega"] = max(worst.get("star_ReOmega", 0), gi["*ReOmega - ImOmega"])
    Psi = cayley_euclidean()
    worst["cayley_self_dual"] = (hodge_star(Psi) - Psi).max_abs()
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-12 and dt < 10
    criterion(1, ok, f"max residual {max(worst.values()):.2e} (< 1e-12), {dt:.1f} s (< 10 s)")
    assert ok, worst


# 2 ------------------------------------------------------------------------------------

def _reduction_cases(rng, lat, count, bandwidths, expected):
    worst_ratio, worst_orphan, zeros = 0.0, 0.0, 0
    for i in range(count):
        m = int(rng.integers(1, 3))
        bw = int(rng.choice(bandwidths))
        active = sorted(set(rng.choice(lat.spatial_axes, size=2, replace=False).tolist()) | {lat.time_axis})
        if i % 10 == 0:
            # pullback of a flat connection: both residuals vanish
            A = flat_connection(lat, rng.uniform(-1, 1, (lat.n, m)))
        else:
            A = random_connection(rng, lat, m, bw, 3, amplitude=0.5, active_axes=active)
        r = reduction_ratio(A)
        if np.isnan(r["ratio_min"]):
            zeros += r["full_sup"] < 1e-12 and r["reduced_sup"] < 1e-12
            worst_orphan = max(worst_orphan, r["orphan"])
            continue
        worst_ratio = max(worst_ratio, abs(r["ratio_min"] - expected), abs(r["ratio_max"] - expected))
        worst_orphan = max(worst_orphan, r["orphan"])
    return worst_ratio, worst_orphan, zeros


def test_c2_reduction_equivalence(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    g2 = _reduction_cases(rng, TorusLattice((6,) * 6 + (8,), 6), 100, (1, 2), 1.0)
    sp = _reduction_cases(rng, TorusLattice((8,) + (4,) * 7, 0), 20, (1,), 2.0)
    dt = time.perf_counter() - t0
    ok = max(g2[0], g2[1], sp[0], sp[1]) < 1e-8 and dt < 120 and g2[2] > 0 and sp[2] > 0
    criterion(2, ok, f"G2 ratio dev {g2[0]:.1e}, orphan {g2[1]:.1e}; Spin(7) ratio dev {sp[0]:.1e}, "
                     f"orphan {sp[1]:.1e} (< 1e-8); {dt:.0f} s (< 120 s)")
    assert ok


# 3 ------------------------------------------------------------------------------------

def test_c3_cayley_redundancy(rng, criterion):
    worst = max(check_cayley_redundancy(AlgebraicForm.from_array(7, 2, rng.normal(size=21)))["redundancy"]
                for _ in range(200))
    ok = worst < 1e-12
    criterion(3, ok, f"max redundancy residual {worst:.2e} (< 1e-12)")
    assert ok


# 4 ------------------------------------------------------------------------------------

ACT = (0, 2, 3)
RE_OMEGA = standard_su3().re_Omega


def test_c4_chern_simons(criterion):
    rng = np.random.default_rng(4)
    orders, rel = [], []
    for _ in range(20):
        A0 = random_connection(rng, T6, 2, 1, 3, amplitude=0.5, active_axes=ACT)
        ctx = CSContext(A0, RE_OMEGA, random_connection(rng, T6, 2, 1, 3, amplitude=0.5, active_axes=ACT).A)
        v = random_connection(rng, T6, 2, 1, 3, active_axes=ACT).A
        X = rng.normal(size=(6, 2, 2)) + 1j * rng.normal(size=(6, 2, 2))
        v = v + BandLimitedField.constant(T6, 0.5 * (X - np.conj(np.swapaxes(X, 1, 2))), 1, 2)
        exact = l2_real(v, cs_gradient(ctx))
        fd = lambda e: (cs_value(ctx.with_a(ctx.a + e * v)) - cs_value(ctx.with_a(ctx.a - e * v))) / (2 * e)
        e1, e2 = abs(fd(1e-2) - exact), abs(fd(5e-3) - exact)
        orders.append(np.log2(e1 / e2))
        rel.append(abs(fd(1e-5) - exact) / abs(exact))  # error is c3 e^2 with c3 ~ torus volume
    drift = 0.0
    for _ in range(20):
        A0 = random_connection(rng, T6, 2, 1, 3, amplitude=0.5, active_axes=ACT)
        ctx = CSContext(A0, RE_OMEGA, random_connection(rng, T6, 2, 1, 2, amplitude=0.5, active_axes=ACT).A)
        W = random_gauge(rng, T6, 2, 1, 2, active_axes=ACT[:2])
        X = rand_ah(rng, 2)
        fam = [W * GaugeTransform.constant(T6, expm_antihermitian(th * X)) for th in (0.0, 0.5, 1.0)]
        drift = max(drift, gauge_orbit_invariance(ctx, fam) / max(1.0, abs(cs_value(ctx))))
    defect, mono = 0.0, True
    for k in range(10):
        m = 1 + k % 2
        start = random_connection(rng, T6, m, 1, 2, amplitude=0.3, active_axes=ACT)
        res = flow(start, CSContext(Connection.trivial(T6, m), RE_OMEGA), steps=200)
        defect = max(defect, res.max_defect)
        mono = mono and res.monotone and bool(np.all(np.diff(res.cs) >= 0)) and res.stable
    ok = min(orders) >= 1.9 and max(rel) < 1e-6 and drift < 1e-9 and defect < 1e-6 and mono
    criterion(4, ok, f"(a) min order {min(orders):.3f}, max rel err {max(rel):.1e}; (b) max drift {drift:.1e}; "
                     f"(c) max defect {defect:.1e}, monotone {mono}")
    assert ok


# 5 ------------------------------------------------------------------------------------

def test_c5_isotrivial_pipeline(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_adm, worst_g2, failed = 0.0, 0.0, 0
    for _ in range(50):
        B, a = flat_pair(rng)
        p = admissible_gauge(B, a)
        r = p.record
        worst_adm = max(worst_adm, r.start_defect, r.endpoint_defect, r.periodicity_defect, r.unitarity_defect)
        failed += not r.passed
        res = g2_residual(assemble_isotrivial(p, B), n_slices=9)
        worst_g2 = max(worst_g2, res.sup("*(F^psi)"))
    dt = time.perf_counter() - t0
    ok = failed == 0 and worst_adm < 1e-9 and worst_g2 < 1e-8 and dt < 60
    criterion(5, ok, f"admissibility {worst_adm:.1e} (< 1e-9), G2 residual {worst_g2:.1e} (< 1e-8), {dt:.0f} s (< 60 s)")
    assert ok


# 6 ------------------------------------------------------------------------------------

def test_c6_round_trip(criterion):
    rng = np.random.default_rng(6)
    worst_eq, worst_tau, failures = 0.0, 0.0, []
    for seed in range(50):
        B, a = flat_pair(rng)
        rep = theorem_I_roundtrip(B, a, tol=1e-8)
        if not rep.passed:
            failures.append((seed, rep.stage))
            continue
        eq = rep.details["equivalence"]
        worst_eq = max(worst_eq, eq["unitarity"], eq["connection"], eq["intertwining"])
        worst_tau = max(worst_tau, rep.details["tau_B_distance"])
    ok = not failures and worst_eq < 1e-8 and worst_tau < 1e-8
    criterion(6, ok, f"{50 - len(failures)}/50 pass; witness residual {worst_eq:.1e}, tau_B distance {worst_tau:.1e} (< 1e-8)")
    assert ok, failures


# 7 ------------------------------------------------------------------------------------

def test_c7_polar_sqrt(criterion):
    rng = np.random.default_rng(7)
    sq, un, fix, eqv, order = 0.0, 0.0, 0.0, 0.0, np.inf
    for _ in range(200):
        m = int(rng.integers(1, 5))
        N = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
        H = N @ dagger(N) + 0.1 * np.eye(m)
        h = hermitian_sqrt(H)
        sq = max(sq, np.abs(h @ h - H).max() / max(1, np.abs(H).max()))
        P = polar_unitary(N)
        un = max(un, np.abs(dagger(P) @ P - np.eye(m)).max())
        U = random_unitary(rng, m)
        fix = max(fix, np.abs(polar_unitary(U) - U).max())
        g = random_unitary(rng, m)
        eqv = max(eqv, np.abs(polar_unitary(dagger(g) @ N @ g) - dagger(g) @ P @ g).max())
        dH = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
        dH = 0.5 * (dH + dagger(dH))
        exact = sqrt_derivative(H, dH)
        errs = [np.abs((hermitian_sqrt(H + e * dH) - hermitian_sqrt(H - e * dH)) / (2 * e) - exact).max()
                for e in (1e-2, 5e-3)]
        if errs[1] > 1e-11:  # below this the difference quotient is at rounding level
            order = min(order, np.log2(errs[0] / errs[1]))
    ok = sq < 1e-12 and un < 1e-12 and fix < 1e-13 and eqv < 1e-12 and order >= 1.9
    criterion(7, ok, f"h^2-H {sq:.1e}, unitarity {un:.1e}, P(U)-U {fix:.1e}, equivariance {eqv:.1e}, min FD order {order:.2f}")
    assert ok


# 8 ------------------------------------------------------------------------------------

def _lemma_cases(rng):
    d = lambda *x: np.diag(np.exp(1j * np.array(x)))
    V2, V3 = random_unitary(rng, 2), random_unitary(rng, 3)
    Id = lambda m: np.zeros((3, m))
    cases = [
        ("m2 trivial, a=Id", Connection.trivial(Y3, 2), np.eye(2)),
        ("m2 trivial, central", Connection.trivial(Y3, 2), np.exp(0.7j) * np.eye(2)),
        ("m2 trivial, diag", Connection.trivial(Y3, 2), d(1.1, 0.0)),
        ("m2 trivial, non-commuting generic", Connection.trivial(Y3, 2), random_unitary(rng, 2)),
        ("m2 torus holonomy, diag", flat_connection(Y3, [[0.1, 0.3], [0.2, -0.1], [0.0, 0.2]], V2), V2 @ d(0.4, -1.3) @ dagger(V2)),
        ("m2 torus holonomy, central", flat_connection(Y3, [[0.1, 0.3], [0.2, -0.1], [0.0, 0.2]], V2), -np.eye(2)),
        ("m3 trivial, diag (2+1)", Connection.trivial(Y3, 3), d(0.9, 0.9, 0.0)),
        ("m3 trivial, generic", Connection.trivial(Y3, 3), random_unitary(rng, 3)),
        ("m3 U(2)xU(1) holonomy, non-commuting block", flat_connection(Y3, [[0.2, 0.2, -0.3], [0.1, 0.1, 0.3], [0, 0, 0.15]], V3),
         V3 @ np.block([[random_unitary(rng, 2), np.zeros((2, 1))], [np.zeros((1, 2)), np.eye(1) * np.exp(0.5j)]]) @ dagger(V3)),
        ("m3 U(2)xU(1) holonomy, central", flat_connection(Y3, [[0.2, 0.2, -0.3], [0.1, 0.1, 0.3], [0, 0, 0.15]], V3), np.exp(2.0j) * np.eye(3)),
        ("m3 torus holonomy, diag", flat_connection(Y3, [[0.1, 0.25, -0.3], [0.2, -0.1, 0.05], [0.0, 0.2, 0.4]], V3), V3 @ d(0.3, 0.3, 2.0) @ dagger(V3)),
    ]
    return cases


def test_c8_stabilizer_correspondence(criterion):
    rng = np.random.default_rng(8)
    mism = []
    for name, B, a in _lemma_cases(rng):
        r = reducibility_check(assemble_isotrivial(admissible_gauge(B, a), B))
        if not (r.consistent and r.product_dim == r.commutant_dim):
            mism.append((name, r.product_dim, r.commutant_dim))
    generic_bad = 0
    for _ in range(20):
        B = random_connection(rng, Y3, 2, 1, 4, amplitude=0.7)
        beta = rng.uniform(-3, 3)
        r = reducibility_check(assemble_isotrivial(admissible_gauge(B, np.exp(1j * beta) * np.eye(2)), B))
        generic_bad += not (r.irreducible and r.commutant_dim == 1 and r.consistent)
    ok = not mism and generic_bad == 0
    criterion(8, ok, f"{len(_lemma_cases(np.random.default_rng(0))) - len(mism)} reducible cases match, "
                     f"{20 - generic_bad}/20 generic irreducible on both sides")
    assert ok, mism


# 9 ------------------------------------------------------------------------------------

def test_c9_normalize_conformal(criterion):
    rng = np.random.default_rng(9)
    s = standard_su3()
    norm_err, idem = 0.0, 0.0
    for _ in range(50):
        f = rng.normal()
        c = rng.normal() + 1j * rng.normal()
        Omega = s.Omega * c
        g, omega, _ = normalize_conformal(s.J, Omega, FiberMetric(np.exp(2 * f) * np.eye(6)))
        norm_err = max(norm_err, abs(inner_norm(Omega, g) - 8))
        g2, omega2, _ = normalize_conformal(s.J, Omega, g)
        idem = max(idem, np.abs(g2.g - g.g).max(), (omega2 - omega).max_abs())
    ok = norm_err < 1e-12 and idem < 1e-12
    criterion(9, ok, f"max ||Omega|^2 - 8| {norm_err:.1e}, idempotence {idem:.1e} (< 1e-12)")
    assert ok


# 10 -----------------------------------------------------------------------------------

def test_c10_moduli_circle(criterion):
    rng = np.random.default_rng(10)
    B = random_connection(rng, Y3, 2, 1, 4, amplitude=0.7)
    G = stabilizer(B)
    assert G.irreducible()
    betas = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    taus = [admissible_gauge(B, np.exp(1j * b) * np.eye(2)).endpoint_field() for b in betas]
    worst = 0.0
    for i, j in itertools.combinations(range(len(betas)), 2):
        d = conjugacy_distance(taus[i], taus[j], G).value
        worst = max(worst, abs(d - abs(np.exp(1j * betas[i]) - np.exp(1j * betas[j]))))
    ok = worst < 1e-6
    criterion(10, ok, f"max |distance - |e^(i b1) - e^(i b2)|| = {worst:.1e} over 66 pairs (< 1e-6)")
    assert ok
