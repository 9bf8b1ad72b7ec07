"""Iso-trivial connections on ``Y x S^1``: admissible gauge paths, assembly and decomposition.

For a unitary ``a`` parallel for ``B`` the path

    tau(t) = a + gamma(t) (Id - a),     u(t) = P(tau(t)),

joins ``Id`` to ``a`` through parallel unitaries once ``gamma`` avoids the
roots of ``det(a + x (Id - a))``. Writing ``a = sum_r lambda_r Pi_r`` with
spectral projectors ``Pi_r`` (themselves parallel), ``u(t) = sum_r c_r(t) Pi_r``
with ``c_r = mu_r / |mu_r|`` and ``mu_r = lambda_r + gamma (1 - lambda_r)``.
This closed form is band-limited in space and is used for exact field
algebra; the polar map evaluated sample by sample is kept as the reference
construction and the two are cross-checked in the admissibility record.

Time slices of a connection on ``Y x S^1`` are represented by a *family*
object with ``at(t) -> (A_Y, chi, dA_Y/dt)`` on the spatial lattice.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import fft as sfft
from scipy import linalg as sla
from scipy import optimize

from ._linalg import (
    MatrixError,
    dagger,
    expm_antihermitian,
    logm_unitary,
    polar_unitary,
)
from .gauge import (
    GaugeError,
    GaugeTransform,
    StabilizerBasis,
    _assemble,
    _box_modes,
    _classify,
    _stack_terms,
    _shift_generators,
    _svd_kernel,
    _with_axes,
    act,
    conjugacy_distance,
    grid_values,
    project_to_stabilizer,
    relative_kernel,
    stabilizer,
)
from .lattice import (
    TWO_PI,
    BandLimitedField,
    Connection,
    LatticeError,
    TorusLattice,
    check_periodicity,
    cov_d,
    dt_form,
    split,
)

__all__ = [
    "IsotrivialError",
    "GammaPath",
    "gamma_path",
    "smooth_step",
    "AdmissibilityRecord",
    "GaugePath",
    "admissible_gauge",
    "gauge_ode_solve",
    "IsotrivialConnection",
    "assemble_isotrivial",
    "BandLimitedFamily",
    "TransformedFamily",
    "DecompositionResult",
    "decompose_instanton",
    "ModuliPoint",
    "moduli_maps",
    "ReducibilityReport",
    "product_stabilizer",
    "reducibility_check",
    "field_from_grid",
    "product_lattice",
]

EDGE = 0.1  # gamma is constant on [0, EDGE] and [2 pi - EDGE, 2 pi]


class IsotrivialError(ValueError):
    """Construction or decomposition failure, with a stage diagnostic."""


def product_lattice(Y: TorusLattice, Nt: int = 8, time_axis: int | None = None) -> TorusLattice:
    """``Y x S^1`` with the time axis appended (default) or inserted at ``time_axis``."""
    ta = Y.n if time_axis is None else time_axis
    grid = list(Y.grid)
    grid.insert(ta, Nt)
    return TorusLattice(tuple(grid), ta)


def field_from_grid(values, lattice: TorusLattice, degree=0, rank=None, form_axes=None, grid=None, tol=1e-13):
    """Trigonometric interpolant of grid values ``(P, ncomp, m, m)`` (exact for resolved band limits)."""
    grid = lattice.grid if grid is None else tuple(grid)
    v = np.asarray(values, complex)
    if v.ndim == 3:
        v = v[:, None]
    P, nc, m, _ = v.shape
    arr = np.moveaxis(v, 0, -1).reshape((nc, m, m) + grid)
    spec = sfft.fftn(arr, axes=tuple(range(3, 3 + len(grid))), norm="forward")
    idx = np.argwhere(np.abs(spec).reshape(nc * m * m, -1).max(axis=0).reshape(grid) > tol)
    freqs = np.array([[int(i) if i <= N // 2 else int(i) - N for i, N in zip(row, grid)] for row in idx], np.int64)
    coeffs = np.array([spec[(slice(None),) * 3 + tuple(row)] for row in idx]).reshape(-1, nc, m, m)
    return BandLimitedField(lattice, degree, rank, freqs.reshape(-1, lattice.n), coeffs, form_axes, merge=False)


# --------------------------------------------------------------------------
# the curve gamma
# --------------------------------------------------------------------------

def _psi(s):
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)


def smooth_step(t):
    """``(S, dS/dt)``: ``C^infinity``, 0 on ``t <= EDGE`` and 1 on ``t >= 2 pi - EDGE``."""
    t = np.asarray(t, float)
    L = TWO_PI - 2 * EDGE
    s = (t - EDGE) / L
    f, g = _psi(s), _psi(1 - s)
    den = f + g
    S = f / den
    with np.errstate(divide="ignore", invalid="ignore"):
        df = np.where(s > 0, f / np.where(s > 0, s, 1.0) ** 2, 0.0)
        dg = np.where(1 - s > 0, g / np.where(1 - s > 0, 1 - s, 1.0) ** 2, 0.0)
    dS = (df * g + f * dg) / den**2 / L
    return S, dS


@dataclass
class GammaPath:
    """``gamma(t) = (1 - S) + 4 i h S (1 - S)``: the segment from 1 to 0 bent through ``1/2 + i h``."""

    roots: np.ndarray
    height: float
    clearance: float
    margin: float

    def __call__(self, t):
        S, _ = smooth_step(t)
        return (1 - S) + 4j * self.height * S * (1 - S)

    def derivative(self, t):
        S, dS = smooth_step(t)
        return (-1 + 4j * self.height * (1 - 2 * S)) * dS

    def image_distance(self, z: complex) -> float:
        return _parabola_distance(self.height, z)


def _parabola_distance(h: float, z: complex) -> float:
    x = np.linspace(0.0, 1.0, 2001)
    d = np.abs(x + 4j * h * x * (1 - x) - z)
    i = int(np.argmin(d))
    lo, hi = x[max(i - 1, 0)], x[min(i + 1, len(x) - 1)]
    r = optimize.minimize_scalar(lambda s: abs(s + 4j * h * s * (1 - s) - z), bounds=(lo, hi), method="bounded",
                                 options={"xatol": 1e-12})
    return float(min(d[i], r.fun))


def _eigenvalues(a, tol=1e-10):
    A = np.asarray(a, complex)
    if np.abs(dagger(A) @ A - np.eye(A.shape[-1])).max() > tol:
        raise IsotrivialError("endpoint is not unitary")
    return np.linalg.eigvals(A)


def gamma_path(a, tol: float = 1e-10, floor: float = 0.05) -> GammaPath:
    """Curve avoiding the roots ``x = lambda / (lambda - 1)`` of ``det(a + x (Id - a))``.

    ``a`` is a unitary matrix or an array of its eigenvalues. For unitary ``a``
    every root has real part ``1/2``, so only the crossing height matters;
    the height with the largest clearance among gaps between roots, just
    outside them and on a uniform grid is chosen. The required clearance is a
    tenth of the smallest root spacing, capped at a tenth of the smallest
    ``|x|``: every curve from 1 to 0 passes within ``|x| = |x - 1|`` of the root
    ``x``, so no curve can do better than that. ``floor`` is the margin used
    when there is a single root and no spacing.
    """
    a = np.asarray(a, complex)
    lam = a if a.ndim == 1 else _eigenvalues(a, tol)
    if np.any(np.abs(np.abs(lam) - 1) > 1e-8):
        raise IsotrivialError("eigenvalues are not unimodular")
    lam = lam[np.abs(lam - 1) > 1e-12]
    roots = lam / (lam - 1)
    roots = np.array(sorted(set(np.round(roots, 10)), key=lambda z: (z.imag, z.real)), complex)
    if len(roots) == 0:
        return GammaPath(roots, 0.0, np.inf, 0.0)
    ys = np.sort(roots.imag)
    cands = [0.0, ys[0] - 1.0, ys[-1] + 1.0] + list(0.5 * (ys[1:] + ys[:-1]))
    cands += list(np.linspace(min(ys[0], 0.0) - 1.0, max(ys[-1], 0.0) + 1.0, 41))
    scored = []
    for h in cands:
        c = min(_parabola_distance(h, z) for z in roots)
        scored.append((c, -abs(h), h))
    c, _, h = max(scored)
    cap = 0.1 * float(np.abs(roots).min())
    if len(roots) > 1:
        spacing = float(np.min(np.abs(roots[:, None] - roots[None, :]) + np.eye(len(roots)) * 1e300))
        margin = min(0.1 * spacing, cap)
    else:
        margin = floor  # |x| >= 1/2, so the cap never binds
    if c < margin:
        raise IsotrivialError(f"gamma clearance {c:.3e} below margin {margin:.3e}")
    return GammaPath(roots, float(h), float(c), float(margin))


# --------------------------------------------------------------------------
# gauge paths
# --------------------------------------------------------------------------

@dataclass
class AdmissibilityRecord:
    start_defect: float
    endpoint_defect: float
    periodicity_defect: float
    unitarity_defect: float
    endpoint_match: float
    construction_agreement: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.start_defect, self.endpoint_defect, self.periodicity_defect, self.unitarity_defect) < self.tol

    def to_json(self) -> dict:
        d = {k: float(v) for k, v in self.__dict__.items()}
        d["passed"] = self.passed
        return d


@dataclass
class SpectralData:
    """``u(t) = sum_r c_r(t) Pi_r`` with ``c_r = mu_r/|mu_r|``, ``mu_r = lambda_r + gamma (1 - lambda_r)``."""

    lambdas: np.ndarray
    projectors: list
    gamma: GammaPath

    def coefficients(self, t):
        t = np.atleast_1d(np.asarray(t, float))
        g = self.gamma(t)[:, None]
        dg = self.gamma.derivative(t)[:, None]
        mu = self.lambdas[None] + g * (1 - self.lambdas[None])
        dmu = dg * (1 - self.lambdas[None])
        c = mu / np.abs(mu)
        rate = 1j * np.imag(dmu / mu)  # c' / c
        return c, rate


class GaugePath:
    """Time-sampled gauge ``u(t)`` on ``[0, 2 pi]`` over a spatial lattice.

    ``u_values`` and ``chi_values`` have shape ``(J + 1, P, m, m)`` on the
    sample grid ``grid`` (axes of size 1 where the path is constant).
    """

    def __init__(self, lattice, rank, times, u_values, chi_values, form_axes=None, grid=None,
                 spectral: SpectralData | None = None, record: AdmissibilityRecord | None = None):
        self.lattice = lattice
        self.rank = rank
        self.form_axes = tuple(lattice.axes if form_axes is None else form_axes)
        self.times = np.asarray(times, float)
        self.grid = tuple(lattice.grid if grid is None else grid)
        self.u_values = np.asarray(u_values, complex)
        self.chi_values = np.asarray(chi_values, complex)
        self.spectral = spectral
        self.record = record
        self._spline = None

    @property
    def J(self) -> int:
        return len(self.times) - 1

    @property
    def is_spatially_constant(self) -> bool:
        return self.u_values.shape[1] == 1

    def _fields(self, coeffs):
        m = self.rank
        out = BandLimitedField.zeros(self.lattice, 0, m, self.form_axes)
        for c, P in zip(coeffs, self.spectral.projectors):
            out = out + c * P
        return out.compress(1e-15)

    def _interp(self, t, which):
        from scipy.interpolate import CubicSpline

        if self._spline is None:
            self._spline = {
                "u": CubicSpline(self.times, self.u_values, axis=0),
                "chi": CubicSpline(self.times, self.chi_values, axis=0),
            }
        return self._spline[which](t)

    def u_at(self, t) -> np.ndarray:
        """``(P, m, m)`` values at time ``t``."""
        if self.spectral is not None:
            return grid_values(self.u_field(t), self.grid)[:, 0]
        return self._interp(t, "u")

    def chi_at(self, t) -> np.ndarray:
        if self.spectral is not None:
            return grid_values(self.chi_field(t), self.grid)[:, 0]
        return self._interp(t, "chi")

    def u_field(self, t) -> BandLimitedField:
        if self.spectral is not None:
            c, _ = self.spectral.coefficients(t)
            return self._fields(c[0])
        return self._grid_field(self.u_at(t))

    def chi_field(self, t) -> BandLimitedField:
        if self.spectral is not None:
            _, r = self.spectral.coefficients(t)
            return self._fields(r[0])
        return self._grid_field(self.chi_at(t))

    def udot_field(self, t) -> BandLimitedField:
        """``du/dt = u chi``."""
        return self.u_field(t).wedge(self.chi_field(t))

    def _grid_field(self, v):
        if v.shape[0] == 1:
            return BandLimitedField.constant(self.lattice, v[0], 0, self.rank, self.form_axes)
        return field_from_grid(v, self.lattice, 0, self.rank, self.form_axes, self.grid)

    def endpoint(self) -> np.ndarray:
        return self.u_values[-1]

    def endpoint_field(self) -> BandLimitedField:
        return _with_axes(self.u_field(TWO_PI) if self.spectral is not None else self._grid_field(self.endpoint()),
                          self.form_axes)

    def gauge_at(self, t) -> GaugeTransform:
        return GaugeTransform(_with_axes(self.u_field(t), self.lattice.axes), check=False)

    def to_json(self) -> dict:
        def mats(v):
            if v.shape[0] == 1:
                return {"re": v[0].real.tolist(), "im": v[0].imag.tolist()}
            f = field_from_grid(v, self.lattice, 0, self.rank, None, self.grid)
            return {"field": f.to_json("gauge-log")}

        samples = []
        for j, t in enumerate(self.times):
            samples.append({"t": float(t), "log": mats(logm_unitary(self.u_values[j])), "chi": mats(self.chi_values[j])})
        return {
            "kind": "gauge-path",
            "lattice": self.lattice.to_json(),
            "rank": self.rank,
            "form_axes": list(self.form_axes),
            "grid": list(self.grid),
            "J": self.J,
            "samples": samples,
            "admissibility": None if self.record is None else self.record.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "GaugePath":
        try:
            lat = TorusLattice.from_json(d["lattice"])
            m = int(d["rank"])
            grid = tuple(d["grid"])

            def load(e):
                if "field" in e:
                    f = BandLimitedField.from_json(e["field"])
                    return grid_values(f, grid)[:, 0]
                return (np.array(e["re"], float) + 1j * np.array(e["im"], float)).reshape(1, m, m)

            logs = np.array([load(s["log"]) for s in d["samples"]])
            chis = np.array([load(s["chi"]) for s in d["samples"]])
            times = np.array([s["t"] for s in d["samples"]], float)
        except (KeyError, TypeError, ValueError) as exc:
            raise IsotrivialError(f"malformed gauge path document: {exc}") from exc
        U = expm_antihermitian(logs)
        return cls(lat, m, times, U, chis, tuple(d.get("form_axes", lat.axes)), grid)


def _spectral_projectors(a_field: BandLimitedField, tol=1e-8):
    """Eigenvalues and spectral projectors of a parallel normal section."""
    m = a_field.rank
    if a_field.is_constant(1e-13):
        A = a_field.constant_part()[0]
        T, Z = sla.schur(A, output="complex")
        ev = np.diag(T)
        groups = []
        for i, l in enumerate(ev):
            for g in groups:
                if abs(ev[g[0]] - l) < tol:
                    g.append(i)
                    break
            else:
                groups.append([i])
        lambdas = np.array([ev[g].mean() for g in groups])
        projs = []
        for g in groups:
            Zr = Z[:, g]
            projs.append(BandLimitedField.constant(a_field.lattice, Zr @ dagger(Zr), 0, m, a_field.form_axes))
        return lambdas, projs
    vals = grid_values(a_field)[:, 0]
    ev = np.linalg.eigvals(vals)
    ev0 = np.linalg.eigvals(vals[0])
    lambdas = []
    for l in ev0:
        if all(abs(l - x) >= tol for x in lambdas):
            lambdas.append(l)
    lambdas = np.array(lambdas)
    spread = max(np.min(np.abs(ev[:, :, None] - lambdas[None, None, :]), axis=2).max(), 0.0)
    if spread > 1e-7:
        raise IsotrivialError(f"eigenvalues of the endpoint vary in space (spread {spread:.2e}); it is not parallel")
    I = BandLimitedField.constant(a_field.lattice, np.eye(m), 0, m, a_field.form_axes)
    projs = []
    for r, lr in enumerate(lambdas):
        P = I
        for s, ls in enumerate(lambdas):
            if s != r:
                P = P.wedge((a_field - I * ls) * (1.0 / (lr - ls)))
        P = (0.5 * (P + P.adjoint())).compress(1e-14)
        projs.append(P)
    return lambdas, projs


def _as_section(a, B: Connection) -> BandLimitedField:
    m = B.rank
    if isinstance(a, GaugeTransform):
        a = a.field
    if isinstance(a, BandLimitedField):
        return _with_axes(a, B.form_axes)
    A = np.asarray(a, complex)
    if A.ndim == 0:
        A = A * np.eye(m)
    return BandLimitedField.constant(B.lattice, A, 0, m, B.form_axes)


def admissible_gauge(B: Connection, a, J: int = 256, tol: float = 1e-9, check_parallel: float = 1e-8) -> GaugePath:
    """B-admissible path ``u = P(a + gamma (Id - a))`` from ``Id`` to ``a``."""
    af = _as_section(a, B)
    m = B.rank
    par = cov_d(B, af).sup_norm() if len(B.form_axes) else 0.0
    if par > check_parallel:
        raise IsotrivialError(f"endpoint is not parallel for B (|d_B a| = {par:.2e})")
    const = af.is_constant(1e-13)
    grid = tuple(1 for _ in B.lattice.grid) if const else tuple(N if b > 0 else 1 for N, b in zip(B.lattice.grid, af.bandwidth()))
    av = grid_values(af, grid)[:, 0]
    if np.abs(dagger(av) @ av - np.eye(m)).max() > 1e-10:
        raise IsotrivialError("endpoint is not unitary")
    lambdas, projs = _spectral_projectors(af)
    gam = gamma_path(lambdas)
    spec = SpectralData(lambdas, projs, gam)
    times = np.linspace(0.0, TWO_PI, J + 1)
    g = gam(times)
    tau = av[None] + g[:, None, None, None] * (np.eye(m) - av)[None]
    try:
        U = polar_unitary(tau)
    except MatrixError as exc:
        raise IsotrivialError(f"polar map failed along the path: {exc}") from exc
    c, rate = spec.coefficients(times)
    Pv = np.array([grid_values(P, grid)[:, 0] for P in projs])  # (R, P, m, m)
    U_spec = np.einsum("jr,rpxy->jpxy", c, Pv)
    chi = np.einsum("jr,rpxy->jpxy", rate, Pv)
    path = GaugePath(B.lattice, m, times, U, chi, B.form_axes, grid, spec)
    u_end = path.endpoint_field()
    end_par = cov_d(B, u_end).sup_norm() if len(B.form_axes) else 0.0
    per = check_periodicity(chi, K=3, tol=tol)
    path.record = AdmissibilityRecord(
        start_defect=float(np.abs(U[0] - np.eye(m)).max()),
        endpoint_defect=float(end_par),
        periodicity_defect=per.max_defect,
        unitarity_defect=float(np.abs(dagger(U) @ U - np.eye(m)).max()),
        endpoint_match=float(np.abs(U[-1] - av).max()),
        construction_agreement=float(np.abs(U - U_spec).max()),
        tol=tol,
    )
    return path


# --------------------------------------------------------------------------
# gauge ODE
# --------------------------------------------------------------------------

_G1, _G2 = 0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6


def _expm(X, antihermitian):
    if antihermitian:
        return expm_antihermitian(X)
    return sla.expm(X)


def _sampler(chi, times):
    if chi is None:
        return None
    if callable(chi):
        return chi
    from scipy.interpolate import CubicSpline

    arr = np.asarray(chi, complex)
    return CubicSpline(times, arr, axis=0)


def gauge_ode_solve(chi1, chi2, s0, times=None, J: int = 256, substeps: int = 1, antihermitian: bool | None = None):
    """Solve ``ds/dt = chi1 s + s chi2`` on ``[0, 2 pi]``.

    ``chi1``/``chi2`` are callables ``t -> (..., m, m)`` or samples on
    ``times``; ``None`` means zero. Uses the fourth-order two-point Gauss
    Magnus step for each factor of ``s = L s0 R`` with ``L' = chi1 L`` and
    ``R' = R chi2``; every step is an exact exponential, so anti-Hermitian
    generators give unitary ``L``, ``R`` to rounding. Returns samples at the
    ``J + 1`` uniform times.
    """
    times = np.linspace(0.0, TWO_PI, J + 1) if times is None else np.asarray(times, float)
    f1, f2 = _sampler(chi1, times), _sampler(chi2, times)
    s0 = np.asarray(s0, complex)
    m = s0.shape[-1]

    def eval_(f, t, like):
        return np.zeros_like(like) if f is None else np.asarray(f(t), complex)

    probe = eval_(f1, times[0], s0) if f1 is not None else eval_(f2, times[0], s0)
    shape = np.broadcast_shapes(probe.shape, s0.shape)
    if antihermitian is None:
        tests = [np.asarray(f(times[0]), complex) for f in (f1, f2) if f is not None]
        antihermitian = all(np.abs(X + dagger(X)).max() < 1e-12 for X in tests)
    L = np.broadcast_to(np.eye(m, dtype=complex), shape).copy()
    R = L.copy()
    out = [np.broadcast_to(s0, shape).copy()]
    c3 = np.sqrt(3) / 12
    for j in range(len(times) - 1):
        t0, t1 = times[j], times[j + 1]
        h = (t1 - t0) / substeps
        for k in range(substeps):
            a = t0 + k * h
            if f1 is not None:
                X1, X2 = np.asarray(f1(a + _G1 * h), complex), np.asarray(f1(a + _G2 * h), complex)
                Om = 0.5 * h * (X1 + X2) + c3 * h * h * (X2 @ X1 - X1 @ X2)
                L = _expm(np.broadcast_to(Om, shape), antihermitian) @ L
            if f2 is not None:
                Y1, Y2 = np.asarray(f2(a + _G1 * h), complex), np.asarray(f2(a + _G2 * h), complex)
                Om = 0.5 * h * (Y1 + Y2) - c3 * h * h * (Y2 @ Y1 - Y1 @ Y2)
                R = R @ _expm(np.broadcast_to(Om, shape), antihermitian)
        out.append(L @ s0 @ R)
    return np.array(out)


# --------------------------------------------------------------------------
# families of time slices
# --------------------------------------------------------------------------

class _Family:
    """Connection on ``Y x S^1`` seen through its time slices."""

    Y: TorusLattice
    rank: int

    def at(self, t):  # pragma: no cover - interface
        raise NotImplementedError

    def chi(self, t) -> BandLimitedField:
        return self.at(t)[1]

    def chi_grid(self, t, grid):
        return grid_values(self.chi(t), grid)[:, 0]

    def precondition(self, times) -> float:
        """``sup_t |dA_Y/dt - d_{A_Y} chi|`` over ``times``."""
        r = 0.0
        for t in times:
            A_Y, chi, dA = self.at(t)
            r = max(r, (dA - cov_d(A_Y, chi)).sup_norm())
        return r


class BandLimitedFamily(_Family):
    """Slices of a band-limited connection on a product lattice."""

    def __init__(self, A: Connection):
        lat = A.lattice
        if lat.time_axis is None:
            raise IsotrivialError("connection has no time axis")
        self.A = A
        self.sc = split(A)
        self.ta = lat.time_axis
        self.Y = lat.without_axis(self.ta)
        self.rank = A.rank
        self._dA = self.sc.dA_dt()

    def at(self, t):
        ta = self.ta
        A_Y = Connection(self.sc.A_Y.A.slice_axis(ta, t), check=False)
        chi = self.sc.chi.slice_axis(ta, t)
        dA = self._dA.slice_axis(ta, t)
        return A_Y, chi, dA

    def chi(self, t):
        return self.sc.chi.slice_axis(self.ta, t)


class TransformedFamily(_Family):
    """``g(A)`` for an exact band-limited gauge ``g`` on ``Y x S^1`` (or on ``Y``)."""

    def __init__(self, family: _Family, g: GaugeTransform, time_axis: int | None = None):
        self.family = family
        self.Y = family.Y
        self.rank = family.rank
        self.g = g
        self.ta = time_axis
        if g.lattice.n == self.Y.n:
            self._g = lambda t: g.field
            self._gdot = lambda t: BandLimitedField.zeros(self.Y, 0, self.rank)
        else:
            ta = g.lattice.time_axis if time_axis is None else time_axis
            gd = g.field.partial(ta)
            self._g = lambda t: g.field.slice_axis(ta, t)
            self._gdot = lambda t: gd.slice_axis(ta, t)

    def chi(self, t):
        chi = self.family.chi(t)
        fa = chi.form_axes
        G = _with_axes(self._g(t), fa)
        return (G.adjoint().wedge(chi.wedge(G)) + G.adjoint().wedge(_with_axes(self._gdot(t), fa))).compress(1e-15)

    def at(self, t):
        A_Y, chi, dA = self.family.at(t)
        fa = A_Y.form_axes
        G = _with_axes(self._g(t), fa)
        Gd = _with_axes(self._gdot(t), fa)
        Gi, Gdi = G.adjoint(), Gd.adjoint()
        A2 = act(GaugeTransform(G, check=False), A_Y)
        chi2 = Gi.wedge(_with_axes(chi, fa).wedge(G)) + Gi.wedge(Gd)
        dG, dGd = G.d(), Gd.d()
        dA2 = (
            Gdi.wedge(A_Y.A.wedge(G))
            + Gi.wedge(dA.wedge(G))
            + Gi.wedge(A_Y.A.wedge(Gd))
            + Gdi.wedge(dG)
            + Gi.wedge(dGd)
        )
        return A2, chi2.compress(1e-15), dA2.compress(1e-15)


class IsotrivialConnection(_Family):
    """``A = u(B) = u_Y(B) + chi_u dt`` on ``Y x S^1``."""

    def __init__(self, B: Connection, path: GaugePath, check: bool = True):
        if path.rank != B.rank:
            raise IsotrivialError("rank mismatch between B and the gauge path")
        if check and path.record is not None and not path.record.passed:
            raise IsotrivialError(f"gauge path is not admissible: {path.record.to_json()}")
        self.B = B
        self.path = path
        self.Y = B.lattice
        self.rank = B.rank

    @property
    def times(self):
        return self.path.times

    def chi(self, t):
        return _with_axes(self.path.chi_field(t), self.B.form_axes)

    def at(self, t):
        """``(u_Y(B), chi_u, d u_Y(B)/dt)`` with the time derivative from the product rule."""
        fa = self.B.form_axes
        u = _with_axes(self.path.u_field(t), fa)
        ud = _with_axes(self.path.udot_field(t), fa)
        ui, udi = u.adjoint(), ud.adjoint()
        A_Y = act(GaugeTransform(u, check=False), self.B)
        chi = _with_axes(self.path.chi_field(t), fa)
        B = self.B.A
        dA = udi.wedge(B.wedge(u)) + ui.wedge(B.wedge(ud)) + udi.wedge(u.d()) + ui.wedge(ud.d())
        return A_Y, chi, dA.compress(1e-15)

    def to_json(self) -> dict:
        return {
            "kind": "isotrivial",
            "B": self.B.to_json(),
            "endpoint": self.path.endpoint_field().to_json("section"),
            "path": self.path.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict, tol: float = 1e-10) -> "IsotrivialConnection":
        """Rebuild from a document; the path is reconstructed and checked against the stored samples."""
        try:
            if d.get("kind") != "isotrivial":
                raise IsotrivialError(f"unexpected kind {d.get('kind')!r}")
            B = Connection.from_json(d["B"])
            a = BandLimitedField.from_json(d["endpoint"])
            stored = GaugePath.from_json(d["path"])
        except (KeyError, TypeError, ValueError, LatticeError, GaugeError) as exc:
            raise IsotrivialError(f"malformed iso-trivial document: {exc}") from exc
        path = admissible_gauge(B, a, J=stored.J)
        U = path.u_values
        Us = stored.u_values
        if Us.shape != U.shape:
            Us = np.broadcast_to(Us, U.shape) if Us.shape[1] == 1 else Us
        if Us.shape != U.shape or np.abs(Us - U).max() > tol:
            raise IsotrivialError("stored gauge samples disagree with the reconstructed path")
        return cls(B, path)

    def curvature_slice(self, t, time_axis: int | None = None):
        """Curvature on ``Y x R`` at time ``t``: ``F_Y + (d_{A_Y} chi - dA_Y/dt) ^ dt``.

        Returned as a constant-in-time field on the product lattice (time axis
        appended unless ``time_axis`` is given).
        """
        A_Y, chi, dA = self.at(t)
        return slice_curvature(A_Y, chi, dA, time_axis)

    def periodicity(self, K: int = 3, n_points: int = 32, rng=None) -> float:
        """Endpoint derivative mismatch of ``A_Y`` and ``chi`` at random spatial points."""
        rng = np.random.default_rng(0) if rng is None else rng
        pts = rng.uniform(0, TWO_PI, size=(n_points, self.Y.n))
        vals = []
        for t in self.times:
            A_Y, chi, _ = self.at(t)
            vals.append(np.concatenate([A_Y.A.evaluate(pts).ravel(), chi.evaluate(pts).ravel()]))
        return check_periodicity(np.array(vals), K=K).max_defect

    def time_derivative_check(self, n_points: int = 16, rng=None) -> float:
        """Spectral time derivative of the sampled ``A_Y`` against the product-rule value."""
        rng = np.random.default_rng(1) if rng is None else rng
        pts = rng.uniform(0, TWO_PI, size=(n_points, self.Y.n))
        ts = self.times[:-1]
        vals, dvals = [], []
        for t in ts:
            A_Y, _, dA = self.at(t)
            vals.append(A_Y.A.evaluate(pts))
            dvals.append(dA.evaluate(pts))
        vals, dvals = np.array(vals), np.array(dvals)
        N = len(ts)
        k = sfft.fftfreq(N, 1.0 / N)
        if N % 2 == 0:
            k[N // 2] = 0.0
        spec = sfft.fft(vals, axis=0)
        der = sfft.ifft(1j * k.reshape((-1,) + (1,) * (vals.ndim - 1)) * spec, axis=0)
        return float(np.abs(der - dvals).max())


def slice_curvature(A_Y: Connection, chi: BandLimitedField, dA: BandLimitedField, time_axis: int | None = None):
    Y = A_Y.lattice
    ta = Y.n if time_axis is None else time_axis
    P = product_lattice(Y, 8, ta)
    F_Y = A_Y.curvature()
    E = cov_d(A_Y, chi) - dA
    full = P.axes
    F_Y = F_Y.extend_axis(P, ta).embed_axes(full)
    E = E.extend_axis(P, ta).embed_axes(full)
    return F_Y + E.wedge(dt_form(P))


def assemble_isotrivial(u: GaugePath, B: Connection, check: bool = True) -> IsotrivialConnection:
    return IsotrivialConnection(B, u, check)


# --------------------------------------------------------------------------
# decomposition
# --------------------------------------------------------------------------

@dataclass
class DecompositionResult:
    success: bool
    B: Connection | None
    path: GaugePath | None
    residuals: dict = dc_field(default_factory=dict)
    message: str = ""


def _active_grid(fields, Y):
    bw = np.zeros(Y.n, int)
    for f in fields:
        bw = np.maximum(bw, f.bandwidth())
    return tuple(N if b > 0 else 1 for N, b in zip(Y.grid, bw))


def decompose_instanton(family, J: int = 256, tol: float = 1e-6, substeps: int = 1, check_times: int = 17) -> DecompositionResult:
    """Recover ``(B, u)`` with ``A = u(B)`` from a connection satisfying ``dA_Y/dt = d_{A_Y} chi``.

    ``family`` is an :class:`IsotrivialConnection`, a slice family, or a
    band-limited :class:`Connection` on a product lattice.
    """
    if isinstance(family, Connection):
        family = BandLimitedFamily(family)
    times = np.linspace(0.0, TWO_PI, J + 1)
    probe = np.linspace(0.0, TWO_PI, check_times)
    pre = family.precondition(probe)
    res = {"precondition": pre}
    if pre > tol:
        return DecompositionResult(False, None, None, res, f"precondition residual {pre:.3e} exceeds {tol:.0e}")
    Y, m = family.Y, family.rank
    slices = [family.at(t) for t in probe]
    grid = _active_grid([s[1] for s in slices] + [s[0].A for s in slices], Y)
    A0, chi0, _ = family.at(0.0)
    fa = A0.form_axes
    chi_const = all(s[1].is_constant(1e-13) for s in slices)
    if chi_const:
        grid = tuple(1 for _ in Y.grid)
    f = lambda t: -family.chi_grid(t, grid)
    S = gauge_ode_solve(f, None, np.eye(m, dtype=complex)[None], times, substeps=substeps)
    U = dagger(S)
    chi_samples = np.array([family.chi_grid(t, grid) for t in times])
    path = GaugePath(Y, m, times, U, chi_samples, fa, grid)
    B = A0
    res["unitarity"] = float(np.abs(S @ dagger(S) - np.eye(m)).max())
    # t-independence of s_Y(A_Y)
    drift = 0.0
    idx = np.linspace(0, J, check_times).round().astype(int)
    for j in idx:
        A_Y, _, _ = family.at(times[j])
        s = GaugeTransform(_with_axes(path._grid_field(S[j]), fa), check=False)
        drift = max(drift, (act(s, A_Y).A - B.A).sup_norm())
    res["t_independence"] = drift
    end = path.endpoint_field()
    G = stabilizer(B)
    try:
        a, gap, info = project_to_stabilizer(GaugeTransform(_with_axes(end, fa), check=False), B, G)
    except (MatrixError, GaugeError) as exc:
        a, gap, info = None, float("inf"), {"error": str(exc)}
    res["stabilizer_gap"] = gap
    res["endpoint_parallel"] = cov_d(B, end).sup_norm() if len(fa) else 0.0
    path.record = AdmissibilityRecord(
        float(np.abs(U[0] - np.eye(m)).max()),
        res["endpoint_parallel"],
        check_periodicity(chi_samples, K=3).max_defect,
        res["unitarity"],
        float("nan"),
        float("nan"),
        tol,
    )
    ok = drift < tol and gap < tol
    msg = "" if ok else f"t-independence {drift:.2e}, stabilizer gap {gap:.2e}"
    return DecompositionResult(ok, B, path, res, msg)


# --------------------------------------------------------------------------
# moduli maps and reducibility
# --------------------------------------------------------------------------

@dataclass
class ModuliPoint:
    rho: Connection
    tau_B: np.ndarray
    stabilizer: StabilizerBasis
    tau: tuple | None


def moduli_maps(ic: IsotrivialConnection, require_tau: bool = False) -> ModuliPoint:
    """``rho = A(0)``, ``tau_B = [u(2 pi)]`` and ``tau = (u(2 pi), [B])`` for irreducible ``B``."""
    rho, _, _ = ic.at(0.0)
    G = stabilizer(ic.B)
    end = ic.path.endpoint_field()
    tau = (end, ic.B) if G.irreducible() else None
    if require_tau and tau is None:
        raise IsotrivialError(f"B is reducible (stabilizer dimension {G.complex_dim}); tau is undefined")
    U = end.constant_part()[0] if end.is_constant(1e-13) else end
    return ModuliPoint(rho, U, G, tau)


@dataclass
class ReducibilityReport:
    product_dim: int
    commutant_dim: int
    base_dim: int
    product_ambiguous: bool
    commutant_ambiguous: bool
    explicit_residual: float
    product_gap_ratio: float

    @property
    def consistent(self) -> bool:
        return self.product_dim == self.commutant_dim and not (self.product_ambiguous or self.commutant_ambiguous)

    @property
    def irreducible(self) -> bool:
        return self.product_dim == 1

    def to_json(self):
        d = {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}
        d["consistent"] = self.consistent
        return d


def product_stabilizer(family: _Family, n_times: int = 17, J: int = 256, substeps: int = 2, tol: float | None = None,
                       bandwidth=None, winding_radius: int | None = None, gap: float = 1e3):
    """Parallel sections of a connection on ``Y x S^1`` through the transport in time.

    ``d_A v = 0`` splits into ``dv/dt = -[chi, v]`` and ``d_{A_Y(t)} v(t) = 0``.
    The first gives ``v(t) = s v0 s^{-1}`` with ``ds/dt = -chi s``, ``s(0) = Id``,
    and smooth periodicity reduces to ``[s(2 pi), v0] = 0``. Conjugating the
    second by ``s`` turns it into ``d_{s(A_Y(t))} v0 = 0``, imposed at
    ``n_times`` sample times. Returns a :class:`StabilizerBasis` of the ``v0``.
    """
    Y, m = family.Y, family.rank
    times = np.linspace(0.0, TWO_PI, J + 1)
    A0 = family.at(0.0)[0]
    fa = A0.form_axes
    nf = len(fa)
    idx = np.linspace(0, J, n_times).round().astype(int)
    probe = [family.at(times[j]) for j in idx]
    if not all(c.is_constant(1e-13) for _, c, _ in probe):
        raise IsotrivialError("product stabilizer needs a spatially constant time component")
    S = gauge_ode_solve(lambda t: -family.chi(t).constant_part()[0], None, np.eye(m, dtype=complex), times,
                        substeps=substeps)
    conns = [act(GaugeTransform.constant(Y, S[j]), probe[k][0]) for k, j in enumerate(idx)]
    end = S[-1]
    cons_f = BandLimitedField.constant(Y, end, 0, m, fa)
    ncomp_out = nf * len(conns) + 1
    lefts, rights = [], []
    for k, C in enumerate(conns):
        lefts.append((C.A, k * nf))
    lefts.append((cons_f, nf * len(conns)))
    left = _stack_terms(lefts, ncomp_out, m, Y.n)
    scale = 1.0 + np.abs(left[1]).max(initial=0.0)
    tol = 1e-8 * scale if tol is None else tol
    fields = [C.A for C in conns]
    m2 = m * m
    if all(f.is_constant(0.0) for f in fields) and bandwidth is None:
        R = (2 if nf <= 6 else 1) if winding_radius is None else winding_radius
        bw = np.zeros(Y.n, int)
        bw[list(fa)] = R
        modes = _box_modes(bw)
        Lc = left[1].sum(axis=0)
        I = np.eye(m)
        base = np.concatenate([np.kron(Lc[c], I) - np.kron(I, Lc[c].T) for c in range(ncomp_out)])
        Ms = np.broadcast_to(base, (len(modes),) + base.shape).copy()
        for k in range(len(conns)):
            for c, ax in enumerate(fa):
                r0 = (k * nf + c) * m2
                Ms[:, r0 : r0 + m2] += 1j * modes[:, ax, None, None] * np.eye(m2)
        _, s, Vh = np.linalg.svd(Ms, full_matrices=False)
        flat = s.ravel()
        d, ratio, amb = _classify(flat, tol, gap)
        elements = [BandLimitedField(Y, 0, m, modes[a : a + 1], Vh[a, b].conj().reshape(1, 1, m, m), fa)
                    for a, b in zip(*np.nonzero(s < tol))]
        return StabilizerBasis(A0, elements, np.sort(flat), tol, ratio, amb, bw, gap, A0)
    from scipy import sparse

    if bandwidth is None:
        bw = np.zeros(Y.n, int)
        for f in fields:
            bw = np.maximum(bw, f.bandwidth())
    else:
        bw = np.broadcast_to(np.asarray(bandwidth, int), (Y.n,)).copy()
    modes = _box_modes(bw)
    blocks = []
    free = [c for c, ax in enumerate(fa) if bandwidth is None and bw[ax] == 0]
    for C in conns:
        t = _stack_terms([(C.A, 0)], nf, m, Y.n)
        L, om = _assemble(modes, fa, nf, nf, m, t, t)
        blocks.append((L, _shift_generators(modes, om, [fa[c] for c in free], free, nf, m)))
    t = _stack_terms([(cons_f, 0)], 1, m, Y.n)
    blocks.append((_assemble(modes, fa, 0, 1, m, t, t)[0], [None] * len(free)))
    if free:
        R = (2 if len(free) <= 2 else 1) if winding_radius is None else winding_radius
        shifts = _box_modes([R] * len(free))
    else:
        shifts = np.zeros((1, 0), np.int64)
    svs, elements = [], []
    for q in shifts:
        rows = []
        for L, Ds in blocks:
            Lq = L
            for qi, Dq in zip(q, Ds):
                if qi and Dq is not None:
                    Lq = Lq + qi * Dq
            rows.append(Lq)
        sv, V = _svd_kernel(sparse.vstack(rows).tocsr())
        svs.append(sv)
        mq = modes.copy()
        for qi, c in zip(q, free):
            mq[:, fa[c]] += qi
        for j in np.nonzero(sv < tol)[0]:
            elements.append(BandLimitedField(Y, 0, m, mq, V[:, j].reshape(len(modes), 1, m, m), fa).compress(1e-14))
    sv = np.concatenate(svs)
    d, ratio, amb = _classify(sv, tol, gap)
    return StabilizerBasis(A0, elements, np.sort(sv), tol, ratio, amb, bw, gap, A0)


def reducibility_check(ic: IsotrivialConnection, bandwidth=None, check_times: int = 9) -> ReducibilityReport:
    """Compare the stabilizer of ``u(B)`` with ``{b in Gamma_B : b u(2 pi) = u(2 pi) b}``."""
    fa = ic.B.form_axes
    end = ic.path.endpoint_field()
    K = relative_kernel(ic.B, None, [(end, end)], bandwidth=bandwidth)
    GB = stabilizer(ic.B, bandwidth=bandwidth)
    P = product_stabilizer(ic, bandwidth=bandwidth)
    # explicit parallel sections v = u^{-1} b u
    worst = 0.0
    ts = np.linspace(0.0, TWO_PI, check_times)
    h = 1e-3
    for b in K.elements:
        for t in ts:
            A_Y, chi, _ = ic.at(t)
            u = GaugeTransform(_with_axes(ic.path.u_field(t), fa), check=False)
            v = u.inverse().field.wedge(_with_axes(b, fa).wedge(u.field))
            worst = max(worst, cov_d(A_Y, v).sup_norm())
            if 2 * h < t < TWO_PI - 2 * h:
                vs = []
                for dt in (-2 * h, -h, h, 2 * h):
                    w = GaugeTransform(_with_axes(ic.path.u_field(t + dt), fa), check=False)
                    vs.append(w.inverse().field.wedge(_with_axes(b, fa).wedge(w.field)))
                vdot = (vs[0] - vs[1] * 8 + vs[2] * 8 - vs[3]) * (1 / (12 * h))
                worst = max(worst, (vdot + chi.wedge(v) - v.wedge(chi)).sup_norm())
    return ReducibilityReport(P.complex_dim, K.complex_dim, GB.complex_dim, P.ambiguous, K.ambiguous, worst, P.gap_ratio)
