"""Chern-Simons functional, instanton residuals, reduction to ``Y`` and the gradient flow.

For a connection ``A = A_0 + a`` on a torus ``Y^n`` and a constant closed
``(n-3)``-form ``H``

    CS(a) = int Tr(a ^ d_{A_0} a + 2/3 a ^ a ^ a + 2 a ^ F_{A_0}) ^ H,

with variation ``2 int Tr(v ^ F_A ^ H) = 2 (-1)^n int <v, *(F_A ^ H)>``.
Inner products of matrix-valued forms are ``<X, Y> = Re Tr(X Y^*)`` summed
over form components.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field as dc_field

import numpy as np

from .exterior import AlgebraicForm, FiberMetric
from .gauge import (
    Equivalence,
    GaugeTransform,
    act,
    conjugacy_distance,
    gauge_equivalent_isotrivial,
    grid_values,
    stabilizer,
)
from .isotrivial import (
    IsotrivialConnection,
    IsotrivialError,
    admissible_gauge,
    assemble_isotrivial,
    decompose_instanton,
    slice_curvature,
)
from .lattice import (
    TWO_PI,
    BandLimitedField,
    Connection,
    LatticeError,
    SplitConnection,
    cov_d,
    curvature,
    field_contract,
    field_star,
    field_wedge_const,
    integrate,
    split,
)
from .structures import G2Structure, SU3Structure, Spin7Structure, product_g2, standard_su3

__all__ = [
    "CSError",
    "CSContext",
    "cs_value",
    "cs_gradient",
    "cs_variation",
    "gauge_orbit_invariance",
    "ResidualReport",
    "hym_residual",
    "g2_residual",
    "spin7_residual",
    "proj_g2_residual",
    "reduced_residuals",
    "reduction_ratio",
    "FlowResult",
    "flow",
    "RoundtripReport",
    "theorem_I_roundtrip",
]


class CSError(ValueError):
    pass


# --------------------------------------------------------------------------
# the functional
# --------------------------------------------------------------------------

@dataclass
class CSContext:
    """Reference connection ``A0``, constant closed form ``H`` and perturbation ``a``."""

    A0: Connection
    H: AlgebraicForm
    a: BandLimitedField | None = None
    metric: FiberMetric | None = None

    def __post_init__(self):
        n = len(self.A0.form_axes)
        if self.A0.form_axes != self.A0.lattice.axes:
            raise CSError("the reference connection must have every lattice axis as a form axis")
        if self.H.n != n or self.H.degree != n - 3:
            raise CSError(f"H must be a constant ({n - 3})-form on R^{n}")
        if self.a is None:
            self.a = BandLimitedField.zeros(self.A0.lattice, 1, self.A0.rank, self.A0.form_axes)
        if self.a.degree != 1 or self.a.rank != self.A0.rank or self.a.form_axes != self.A0.form_axes:
            raise CSError("perturbation must be a 1-form of the connection's rank and axes")

    @property
    def n(self) -> int:
        return self.A0.lattice.n

    @property
    def closedness(self) -> float:
        """``|dH|``; zero for constant coefficients."""
        return 0.0

    @property
    def connection(self) -> Connection:
        return Connection(self.A0.A + self.a, check=False)

    def with_a(self, a: BandLimitedField) -> "CSContext":
        return CSContext(self.A0, self.H, a, self.metric)

    def with_connection(self, A: Connection) -> "CSContext":
        return self.with_a(A.A - self.A0.A)


def cs_density(ctx: CSContext) -> BandLimitedField:
    a, A0 = ctx.a, ctx.A0
    F0 = curvature(A0, check_grid=False)
    da = cov_d(A0, a)
    inner = a.wedge(da) + (2.0 / 3.0) * a.wedge(a.wedge(a)) + 2.0 * a.wedge(F0)
    return field_wedge_const(inner.trace(), ctx.H)


def cs_value(ctx: CSContext, return_imag: bool = False):
    """``CS(a)``; with ``return_imag`` also the discarded imaginary part."""
    v = integrate(cs_density(ctx))
    return (float(v.real), float(v.imag)) if return_imag else float(v.real)


def cs_gradient(ctx: CSContext) -> BandLimitedField:
    """``2 (-1)^n *(F_A ^ H)``, so that ``dCS(a + e v)/de = <v, grad>_{L^2}``."""
    F = curvature(ctx.connection, check_grid=False)
    return (2.0 * (-1) ** ctx.n) * field_star(field_wedge_const(F, ctx.H), ctx.metric)


def cs_variation(ctx: CSContext, v: BandLimitedField) -> float:
    """``2 int Tr(v ^ F_A ^ H)``, the variation in its wedge form."""
    F = curvature(ctx.connection, check_grid=False)
    return float(integrate(field_wedge_const(v.wedge(F).trace(), ctx.H)).real) * 2.0


def l2_real(x: BandLimitedField, y: BandLimitedField) -> float:
    return float(x.l2_inner(y).real)


def gauge_orbit_invariance(ctx: CSContext, gauges) -> float:
    """``max_j |CS(s_j(A)) - CS(A)|`` over a sampled gauge family ``s_j``."""
    A = ctx.connection
    base = cs_value(ctx)
    drift = 0.0
    for s in gauges:
        if callable(s) and not isinstance(s, GaugeTransform):
            s = s()
        drift = max(drift, abs(cs_value(ctx.with_connection(act(s, A))) - base))
    return drift


# --------------------------------------------------------------------------
# residual reports
# --------------------------------------------------------------------------

@dataclass
class ResidualReport:
    entries: dict = dc_field(default_factory=dict)  # label -> {"sup", "l2"}
    extras: dict = dc_field(default_factory=dict)

    def add(self, label: str, f: BandLimitedField | None = None, sup: float | None = None, l2: float | None = None):
        if f is not None:
            sup, l2 = f.sup_norm(), f.l2_norm()
        prev = self.entries.get(label)
        if prev is not None:
            sup, l2 = max(sup, prev["sup"]), float(np.hypot(l2, prev["l2"]))
        self.entries[label] = {"sup": float(sup), "l2": float(l2)}

    def sup(self, label: str) -> float:
        return self.entries[label]["sup"]

    def max_sup(self, labels=None) -> float:
        labels = self.entries if labels is None else labels
        return max((self.entries[k]["sup"] for k in labels), default=0.0)

    def passed(self, tol: float, labels=None) -> bool:
        return self.max_sup(labels) < tol

    def to_json(self) -> dict:
        ex = {k: (float(v) if isinstance(v, (int, float, np.floating, np.integer)) else v) for k, v in self.extras.items()}
        return {"entries": self.entries, "extras": ex}

    def to_csv_row(self) -> dict:
        row = {}
        for k, v in self.entries.items():
            row[f"{k}.sup"] = v["sup"]
            row[f"{k}.l2"] = v["l2"]
        return row


def hym_residual(B: Connection, s: SU3Structure | None = None, tol: float = 1e-10) -> ResidualReport:
    """``|F ^ Omega|``, ``|(i/2pi) F -| omega - mu Id|`` with the slope ``mu``."""
    s = standard_su3() if s is None else s
    if B.lattice.n != 6 or len(B.form_axes) != 6:
        raise CSError("HYM residuals need a connection on T^6")
    m = B.rank
    F = curvature(B, check_grid=False)
    rep = ResidualReport()
    rep.add("F^Omega", field_wedge_const(F, s.Omega))
    Lam = (1j / TWO_PI) * field_contract(F, s.omega, s.g)
    vol = B.lattice.volume
    tr = complex(np.trace(integrate(Lam)))
    mu = tr.real / (m * vol)
    I = BandLimitedField.constant(B.lattice, np.eye(m), 0, m, B.form_axes)
    rep.add("Lambda-mu", Lam - mu * I)
    rep.extras.update(mu=mu, degree=tr.real, rank=m, volume=vol)
    rep.extras["hym0"] = bool(rep.max_sup() < tol and abs(mu) < tol)
    return rep


def _curvature_fields(A):
    if isinstance(A, Connection):
        return [curvature(A, check_grid=False)]
    if isinstance(A, BandLimitedField):
        return [A]
    if isinstance(A, IsotrivialConnection):
        return None
    raise CSError(f"unsupported connection type {type(A).__name__}")


def _slices(ic: IsotrivialConnection, n_slices: int):
    ts = np.linspace(0.0, TWO_PI, n_slices)
    return [ic.curvature_slice(t) for t in ts]


def g2_residual(A, g2: G2Structure | None = None, n_slices: int = 17) -> ResidualReport:
    """``*(F ^ psi)`` with the cross-check against ``F -| phi``.

    ``A`` is a connection on a 7-torus, a curvature field, or an
    :class:`IsotrivialConnection` (evaluated on ``n_slices`` time slices).
    """
    g2 = G2Structure.euclidean() if g2 is None else g2
    Fs = _curvature_fields(A)
    if Fs is None:
        if g2 is None or g2.phi.n != 7:
            raise CSError("need a G2 structure")
        Fs = _slices(A, n_slices)
    rep = ResidualReport()
    eqv = 0.0
    for F in Fs:
        if F.nform != 7:
            raise CSError("G2 residual needs a 2-form with 7 form axes")
        r = field_star(field_wedge_const(F, g2.psi), g2.g)
        c = field_contract(F, g2.phi, g2.g)
        rep.add("*(F^psi)", r)
        rep.add("F-|phi", c)
        if len(r.freqs) + len(c.freqs):
            grid = _active_grid([r, c])
            eqv = max(eqv, float(np.abs(r.pointwise_norm(grid) - c.pointwise_norm(grid)).max()))
    rep.extras["norm_equivalence"] = eqv
    return rep


def spin7_residual(A, spin7: Spin7Structure | None = None) -> ResidualReport:
    """``*(F ^ Psi) + F`` on an 8-torus."""
    S = Spin7Structure.euclidean() if spin7 is None else spin7
    rep = ResidualReport()
    for F in _curvature_fields(A):
        if F.nform != 8:
            raise CSError("Spin(7) residual needs a 2-form with 8 form axes")
        rep.add("*(F^Psi)+F", field_star(field_wedge_const(F, S.Psi), S.g) + F)
    return rep


def proj_g2_residual(A: Connection, g2: G2Structure | None = None) -> ResidualReport:
    """``(i/2pi) F -| phi = theta Id`` with the tracial ``theta`` and its harmonicity."""
    g2 = G2Structure.euclidean() if g2 is None else g2
    F = curvature(A, check_grid=False)
    m = A.rank
    L = (1j / TWO_PI) * field_contract(F, g2.phi, g2.g)
    theta = L.trace() * (1.0 / m)
    rep = ResidualReport()
    rep.add("trace-free", L - theta.times_identity(m))
    rep.add("theta.imag", 0.5 * (theta - theta.conj()))
    th = 0.5 * (theta + theta.conj())
    rep.add("d theta", th.d())
    rep.add("d*theta", field_star(th, g2.g).d())
    rep.extras["theta_l2"] = th.l2_norm()
    return rep


def _family_parts(sc):
    """``(F_Y, E = d chi - dA/dt)`` from a split connection or a slice tuple."""
    if isinstance(sc, Connection):
        sc = split(sc)
    if isinstance(sc, SplitConnection):
        return [sc.curvature_parts()]
    if isinstance(sc, tuple) and len(sc) == 3:
        A_Y, chi, dA = sc
        return [(curvature(A_Y, check_grid=False), cov_d(A_Y, chi) - dA)]
    if isinstance(sc, IsotrivialConnection):
        out = []
        for t in np.linspace(0.0, TWO_PI, 17):
            A_Y, chi, dA = sc.at(t)
            out.append((curvature(A_Y, check_grid=False), cov_d(A_Y, chi) - dA))
        return out
    raise CSError(f"unsupported split type {type(sc).__name__}")


def reduced_residuals(sc, structure=None) -> ResidualReport:
    """Residuals of the reduced equations on ``Y``.

    With an SU(3) structure (``dim Y = 6``): the flow equation
    ``dA/dt - *(F_Y ^ ReOmega) - d chi`` and the moment condition
    ``F_Y -| omega``. With a G2 structure (``dim Y = 7``):
    ``*(F_Y ^ psi) - (d chi - dA/dt)``.
    """
    parts = _family_parts(sc)
    rep = ResidualReport()
    for F_Y, E in parts:
        n = F_Y.nform
        if n == 6:
            s = standard_su3() if structure is None else structure
            if not isinstance(s, SU3Structure):
                raise CSError("six-dimensional reduction needs an SU(3) structure")
            rep.add("flow", -E - field_star(field_wedge_const(F_Y, s.re_Omega), s.g))
            rep.add("moment", field_contract(F_Y, s.omega, s.g))
        elif n == 7:
            g2 = G2Structure.euclidean() if structure is None else structure
            if not isinstance(g2, G2Structure):
                raise CSError("seven-dimensional reduction needs a G2 structure")
            rep.add("spin7-reduced", field_star(field_wedge_const(F_Y, g2.psi), g2.g) - E)
        else:
            raise CSError(f"no reduction for dim Y = {n}")
    return rep


def _active_grid(fields):
    lat = fields[0].lattice
    bw = np.zeros(lat.n, int)
    for f in fields:
        if len(f.freqs):
            bw = np.maximum(bw, f.bandwidth())
    return tuple(N if b > 0 else 1 for N, b in zip(lat.grid, bw))


def reduction_ratio(A: Connection, structure=None, floor: float = 1e-9) -> dict:
    """Pointwise norm ratio of the full residual to the reduced residuals.

    Returns the ratio range over grid points where both exceed ``floor``
    and the largest value of either where the other vanishes.
    """
    sc = split(A)
    F_Y, E = sc.curvature_parts()
    lat = A.lattice
    F = sc.curvature_from_parts()
    n = len(lat.spatial_axes)
    if n == 6:
        s = standard_su3() if structure is None else structure
        g2 = product_g2(s)
        full = field_star(field_wedge_const(F, g2.psi), g2.g)
        red = [-E - field_star(field_wedge_const(F_Y, s.re_Omega), s.g), field_contract(F_Y, s.omega, s.g)]
    elif n == 7:
        from .structures import product_spin7

        g2 = G2Structure.euclidean() if structure is None else structure
        S = product_spin7(g2)
        full = field_star(field_wedge_const(F, S.Psi), S.g) + F
        red = [field_star(field_wedge_const(F_Y, g2.psi), g2.g) - E]
    else:
        raise CSError(f"no reduction for dim Y = {n}")
    grid = _active_grid([full] + red)
    nf = full.pointwise_norm(grid).ravel()
    nr = np.sqrt(sum(r.pointwise_norm(grid).ravel() ** 2 for r in red))
    both = (nf > floor) & (nr > floor)
    ratio = nf[both] / nr[both]
    return {
        "ratio_min": float(ratio.min()) if both.any() else float("nan"),
        "ratio_max": float(ratio.max()) if both.any() else float("nan"),
        "full_sup": float(nf.max()),
        "reduced_sup": float(nr.max()),
        "orphan": float(max(nf[nr <= floor].max(initial=0.0), nr[nf <= floor].max(initial=0.0))),
        "count": int(both.sum()),
    }


# --------------------------------------------------------------------------
# gradient flow
# --------------------------------------------------------------------------

@dataclass
class FlowResult:
    times: np.ndarray
    cs: np.ndarray
    rate: np.ndarray  # 2 int |P(F ^ H)|^2, the rate of the projected flow
    rate_full: np.ndarray  # 2 int |F ^ H|^2
    curvature_sup: np.ndarray  # nan between monitor steps
    discard: np.ndarray
    defect: np.ndarray  # |dCS/dt - rate| / max(rate, floor), interior steps
    final: CSContext
    monotone: bool
    stable: bool
    hym: list = dc_field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "t", "cs", "rate", "rate_full", "curvature_sup", "discard", "defect"])
        for k, t in enumerate(self.times):
            w.writerow([k] + [f"{x:.12e}" for x in (t, self.cs[k], self.rate[k], self.rate_full[k], self.curvature_sup[k],
                                                    self.discard[k], self.defect[k])])
        return buf.getvalue()

    @property
    def max_defect(self) -> float:
        d = self.defect[np.isfinite(self.defect)]
        return float(d.max()) if d.size else 0.0


def flow(start: Connection, ctx: CSContext, steps: int = 200, dt: float | None = None, bandwidth=None,
         monotone_tol: float = 1e-10, hym_every: int = 0, monitor_every: int = 20) -> FlowResult:
    """Explicit RK4 for ``dA/dt = (-1)^n *(F_A ^ H)`` with band re-projection.

    Along the flow ``dCS/dt = 2 int |F ^ H|^2``. The velocity is projected to
    the working bandwidth, which turns the rate into ``2 int |P(F ^ H)|^2``;
    the defect compares that rate with a five-point difference of the
    recorded CS values, and the discarded norm is reported per step. The two
    rates coincide whenever nothing is discarded (e.g. abelian flows).
    """
    ctx = ctx.with_connection(start)
    n = ctx.n
    sign = (-1) ** n
    bw = start.A.bandwidth() if bandwidth is None else np.broadcast_to(np.asarray(bandwidth, int), (n,))

    def velocity(a):
        A = Connection(ctx.A0.A + a, check=False)
        F = curvature(A, check_grid=False)
        v = sign * field_star(field_wedge_const(F, ctx.H), ctx.metric)
        pv = v.project(bw)
        return pv, v, F

    a = ctx.a.project(bw)
    F0 = curvature(ctx.connection, check_grid=False)
    h = 0.01 / (1.0 + F0.sup_norm()) if dt is None else dt
    times, cs, rate, rfull, fsup, disc = [], [], [], [], [], []
    hym = []
    stable = True
    for k in range(steps + 1):
        pv, v, F = velocity(a)
        times.append(k * h)
        cs.append(cs_value(ctx.with_a(a)))
        rate.append(2.0 * pv.l2_norm() ** 2)
        rfull.append(2.0 * v.l2_norm() ** 2)
        fsup.append(F.sup_norm() if k % max(monitor_every, 1) == 0 or k == steps else np.nan)
        disc.append((v - pv).l2_norm())
        if hym_every and n == 6 and k % hym_every == 0:
            hym.append(hym_residual(Connection(ctx.A0.A + a, check=False)).to_json())
        if k == steps:
            break
        k1 = pv
        k2 = velocity(a + (0.5 * h) * k1)[0]
        k3 = velocity(a + (0.5 * h) * k2)[0]
        k4 = velocity(a + h * k3)[0]
        a = (a + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).compress(1e-15)
        a = (0.5 * (a - a.adjoint())).compress(1e-15)
        if not np.isfinite(np.abs(a.coeffs).max(initial=0.0)):
            stable = False
            break
    cs, rate = np.array(cs), np.array(rate)
    times = np.array(times)
    steps_cs = np.diff(cs)
    scale = max(1.0, float(np.abs(cs).max()))
    monotone = bool(np.all(steps_cs >= -monotone_tol * scale))
    defect = np.full(len(cs), np.nan)
    floor = 1e-12 * max(1.0, float(rate.max(initial=0.0)))
    for k in range(2, len(cs) - 2):
        d = (cs[k - 2] - 8 * cs[k - 1] + 8 * cs[k + 1] - cs[k + 2]) / (12 * h)
        defect[k] = abs(d - rate[k]) / max(rate[k], floor)
    if len(cs) < 5:
        defect[:] = 0.0 if np.all(rate <= floor) else np.nan
    return FlowResult(times, cs, rate, np.array(rfull), np.array(fsup), np.array(disc), defect, ctx.with_a(a), monotone, stable, hym)


# --------------------------------------------------------------------------
# end-to-end
# --------------------------------------------------------------------------

@dataclass
class RoundtripReport:
    passed: bool
    stage: str
    details: dict = dc_field(default_factory=dict)

    def to_json(self):
        return {"passed": self.passed, "stage": self.stage, "details": self.details}


def theorem_I_roundtrip(B: Connection, a, s: SU3Structure | None = None, tol: float = 1e-8, J: int = 256,
                        n_slices: int = 17) -> RoundtripReport:
    """Build ``u(B)`` for a slope-zero HYM ``B``, check the G2 equation, decompose and compare."""
    s = standard_su3() if s is None else s
    det = {}
    hym = hym_residual(B, s, tol)
    det["hym"] = hym.to_json()
    if not hym.extras["hym0"]:
        return RoundtripReport(False, "precondition", det)
    try:
        path = admissible_gauge(B, a, J=J)
    except IsotrivialError as exc:
        det["error"] = str(exc)
        return RoundtripReport(False, "admissible_gauge", det)
    det["admissibility"] = path.record.to_json()
    if not path.record.passed:
        return RoundtripReport(False, "admissible_gauge", det)
    ic = assemble_isotrivial(path, B)
    g2 = product_g2(s)
    r9 = g2_residual(ic, g2, n_slices)
    det["g2_residual"] = r9.sup("*(F^psi)")
    if det["g2_residual"] >= tol:
        return RoundtripReport(False, "g2_residual", det)
    dec = decompose_instanton(ic, J=J)
    det["decomposition"] = {k: float(v) for k, v in dec.residuals.items()}
    if not dec.success:
        det["error"] = dec.message
        return RoundtripReport(False, "decompose", det)
    h2 = hym_residual(dec.B, s, tol)
    det["recovered_hym0"] = bool(h2.extras["hym0"])
    if not h2.extras["hym0"]:
        return RoundtripReport(False, "recovered_hym", det)
    eq = gauge_equivalent_isotrivial(path, B, dec.path, dec.B, tol=tol)
    det["equivalence"] = {"status": str(eq.status), **{k: float(v) for k, v in eq.residuals.items()}}
    if eq.status is not Equivalence.FOUND:
        return RoundtripReport(False, "gauge_match", det)
    G = stabilizer(B)
    d = conjugacy_distance(path.endpoint_field(), dec.path.endpoint_field(), G)
    det["tau_B_distance"] = float(d.value)
    U = path.endpoint_field()
    if U.is_constant(1e-13):
        M = U.constant_part()[0]
        det["tau_B_eigenvalues"] = sorted([float(np.angle(z)) for z in np.linalg.eigvals(M)])
    ok = d.value < tol
    return RoundtripReport(ok, "done" if ok else "tau_B", det)
