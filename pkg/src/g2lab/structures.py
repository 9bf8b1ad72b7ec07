"""SU(3), G2 and Spin(7) structures on a single fiber.

Index conventions are 0-based. On R^7 the associative form uses axes
0..6 with axis 6 playing the role of ``dt`` in the product ``R^6 x R``. On
R^8 the Cayley form uses axis 0 for the extra direction and axes 1..7 for the
G2 factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exterior import (
    AlgebraicForm,
    FiberMetric,
    FormError,
    basis,
    contract,
    hodge_star,
    inner,
    inner_norm,
    linear_map_matrix,
    wedge,
)

__all__ = [
    "StructureError",
    "SU3Structure",
    "G2Structure",
    "Spin7Structure",
    "UnitaryFrame",
    "phi_euclidean",
    "psi_euclidean",
    "cayley_euclidean",
    "standard_su3",
    "standard_J",
    "product_g2",
    "product_spin7",
    "validate_su3",
    "normalize_conformal",
    "check_g2_identities",
    "check_cayley_redundancy",
    "metric_from_phi",
    "type_projection",
    "J_on_forms",
    "spin7_reduction_map",
    "g2_reduction_map",
    "INDEX_TABLE",
]


class StructureError(ValueError):
    """Invalid or degenerate structure data."""


def _form(n, terms):
    out = AlgebraicForm.zero(n, len(terms[0][1]))
    for c, idx in terms:
        out = out + AlgebraicForm.monomial(n, idx, c)
    return out


# (label in 1-based notation, 0-based index) for the R^7 and R^8 factors
INDEX_TABLE = {
    "R7": {f"e{i + 1}": i for i in range(7)},
    "R7_product": {**{f"x{i + 1}": i for i in range(6)}, "dt": 6},
    "R8": {f"e{i}": i for i in range(8)},
    "R8_product": {"dt": 0, **{f"e{i}": i for i in range(1, 8)}},
}


def phi_euclidean() -> AlgebraicForm:
    """The associative 3-form on R^7 (0-based indices)."""
    return _form(
        7,
        [
            (1, (0, 1, 6)),
            (1, (2, 3, 6)),
            (1, (4, 5, 6)),
            (1, (0, 2, 4)),
            (-1, (0, 3, 5)),
            (-1, (1, 2, 5)),
            (-1, (1, 3, 4)),
        ],
    )


def psi_euclidean() -> AlgebraicForm:
    return hodge_star(phi_euclidean())


def cayley_euclidean() -> AlgebraicForm:
    """``e^0 ^ phi + psi`` on R^8 with the R^7 factor on axes 1..7."""
    shift = list(range(1, 8))
    phi8 = phi_euclidean().embed(8, shift)
    psi8 = psi_euclidean().embed(8, shift)
    return wedge(AlgebraicForm.monomial(8, (0,)), phi8) + psi8


# --------------------------------------------------------------------------
# SU(3)
# --------------------------------------------------------------------------

def standard_J() -> np.ndarray:
    """Complex structure on R^6 with ``J e_{2i} = e_{2i+1}`` (columns are images)."""
    J = np.zeros((6, 6))
    for i in range(3):
        J[2 * i + 1, 2 * i] = 1.0
        J[2 * i, 2 * i + 1] = -1.0
    return J


def _omega_from(J, g: FiberMetric) -> AlgebraicForm:
    W = J.T @ g.g  # omega(a, b) = g(J e_a, e_b)
    return AlgebraicForm(6, 2, {(a, b): W[a, b] for a in range(6) for b in range(a + 1, 6)})


@dataclass
class SU3Structure:
    J: np.ndarray
    g: FiberMetric
    omega: AlgebraicForm
    Omega: AlgebraicForm
    half_closed: bool = True

    @property
    def re_Omega(self) -> AlgebraicForm:
        return self.Omega.real

    @property
    def im_Omega(self) -> AlgebraicForm:
        return self.Omega.imag


def standard_su3() -> SU3Structure:
    """Flat structure ``omega = e^01 + e^23 + e^45``, ``Omega = dz^0 ^ dz^1 ^ dz^2``."""
    g = FiberMetric.euclidean(6)
    J = standard_J()
    dz = [AlgebraicForm(6, 1, {(2 * i,): 1.0, (2 * i + 1,): 1j}) for i in range(3)]
    Omega = wedge(wedge(dz[0], dz[1]), dz[2])
    return SU3Structure(J, g, _omega_from(J, g), Omega)


def J_on_forms(J: np.ndarray, k: int) -> np.ndarray:
    """Derivation extension of the dual action ``(J^* a)(X) = a(J X)`` to k-forms."""
    n = J.shape[0]
    Jc = J.T  # components: (J^* a)_b = sum_a a_a J[a, b]

    def fn(a: AlgebraicForm):
        out = AlgebraicForm.zero(n, a.degree)
        for key, c in a.coeffs.items():
            for slot in range(len(key)):
                for b in range(n):
                    w = Jc[b, key[slot]]
                    if w == 0:
                        continue
                    new = key[:slot] + (b,) + key[slot + 1 :]
                    if len(set(new)) == len(new):
                        out = out + AlgebraicForm(n, a.degree, {new: w * c})
        return out

    return linear_map_matrix(fn, n, k)


def type_projection(alpha: AlgebraicForm, J: np.ndarray, p: int) -> AlgebraicForm:
    """The ``(p, k-p)`` component of ``alpha`` with respect to ``J``."""
    k = alpha.degree
    D = J_on_forms(J, k)
    target = 1j * (p - (k - p))
    P = np.eye(D.shape[0], dtype=complex)
    for q in range(k + 1):
        mu = 1j * (q - (k - q))
        if q != p:
            P = P @ (D - mu * np.eye(D.shape[0])) / (target - mu)
    vec = alpha.to_array()
    if alpha.rank is None:
        return AlgebraicForm.from_array(alpha.n, k, P @ vec)
    return AlgebraicForm.from_array(alpha.n, k, np.einsum("ij,jxy->ixy", P, vec))


@dataclass
class ValidationReport:
    residuals: dict
    tol: float

    @property
    def passed(self) -> bool:
        return all(v < self.tol for v in self.residuals.values())

    def failures(self) -> list:
        return [k for k, v in self.residuals.items() if not v < self.tol]


def validate_su3(s: SU3Structure, tol: float = 1e-12) -> ValidationReport:
    J, g = np.asarray(s.J, float), s.g
    res = {}
    res["J_squared"] = float(np.abs(J @ J + np.eye(6)).max())
    res["hermitian_metric"] = float(np.abs(g.g - J.T @ g.g @ J).max())
    res["omega_compatible"] = (s.omega - _omega_from(J, g)).max_abs()
    res["omega_type_11"] = (type_projection(s.omega, J, 2) + type_projection(s.omega, J, 0)).max_abs()
    res["Omega_type_30"] = (s.Omega - type_projection(s.Omega, J, 3)).max_abs()
    res["Omega_norm"] = abs(inner_norm(s.Omega, g) - 8.0)
    w3 = wedge(wedge(s.omega, s.omega), s.omega) / 6.0
    rhs = wedge(s.re_Omega, s.im_Omega) * 0.25
    res["volume_normalization"] = (w3 - rhs).max_abs()
    return ValidationReport(res, tol)


@dataclass
class UnitaryFrame:
    """(1,0)-coframe ``v`` with ``omega = (i/2) sum v ^ conj(v)`` and ``Omega = v^1 ^ v^2 ^ v^3``.

    ``u`` is the coframe built from a J-adapted orthonormal basis of ``g``
    (so ``Omega = c0 u^1 ^ u^2 ^ u^3`` with respect to ``g_ref``), ``h`` the
    dual real vectors of that basis, ``c1 = c0 / |c0|`` and ``c2`` a cube root
    of ``c1``.
    """

    v: list
    u: list
    h: np.ndarray
    c0: complex
    c1: complex
    c2: complex

    def omega(self) -> AlgebraicForm:
        out = AlgebraicForm.zero(6, 2)
        for vi in self.v:
            out = out + wedge(vi, vi.conj()) * 0.5j
        return out

    def Omega(self) -> AlgebraicForm:
        return wedge(wedge(self.v[0], self.v[1]), self.v[2])


def _adapted_basis(J: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Columns ``e1, J e1, e2, J e2, e3, J e3`` orthonormal for ``g``."""
    cols = []
    ip = lambda x, y: float(x @ g @ y)
    for x in np.eye(6):
        y = x.copy()
        for c in cols:
            y = y - ip(c, y) * c
        nrm = np.sqrt(max(ip(y, y), 0.0))
        if nrm < 1e-8:
            continue
        y = y / nrm
        z = J @ y
        for c in cols:
            z = z - ip(c, z) * c
        z = z / np.sqrt(ip(z, z))
        cols += [y, z]
        if len(cols) == 6:
            break
    return np.array(cols).T


def normalize_conformal(J, Omega: AlgebraicForm, g_ref: FiberMetric, tol: float = 1e-10):
    """Rescale ``g_ref`` conformally so that ``|Omega|^2_g = 8``.

    Returns ``(g, omega, frame)`` with ``g = |c0|^{2/3} g_ref`` where
    ``|c0|^2 = |Omega|^2_{g_ref} / 8``.
    """
    J = np.asarray(J, float)
    if not isinstance(g_ref, FiberMetric):
        g_ref = FiberMetric(g_ref)
    if np.abs(J @ J + np.eye(6)).max() > tol:
        raise StructureError("J^2 != -Id")
    if np.abs(g_ref.g - J.T @ g_ref.g @ J).max() > tol * max(1.0, np.abs(g_ref.g).max()):
        raise StructureError("reference metric is not Hermitian for J")
    n2 = inner_norm(Omega, g_ref)
    if n2 < tol:
        raise StructureError("Omega vanishes")
    if (Omega - type_projection(Omega, J, 3)).max_abs() > tol * max(1.0, Omega.max_abs()):
        raise StructureError("Omega is not of type (3,0)")
    E = _adapted_basis(J, g_ref.g)
    dual = np.linalg.inv(E)  # rows: coframe for g_ref
    cof = [AlgebraicForm.from_array(6, 1, row) for row in dual]
    u_ref = [cof[2 * i] + cof[2 * i + 1] * 1j for i in range(3)]
    vol30 = wedge(wedge(u_ref[0], u_ref[1]), u_ref[2])
    c0 = inner(Omega, vol30, g_ref) / inner_norm(vol30, g_ref)
    lam = abs(c0) ** (2.0 / 3.0)
    g = FiberMetric(lam * g_ref.g, g_ref.orientation)
    scale = np.sqrt(lam)
    u = [x * scale for x in u_ref]
    c1 = c0 / abs(c0)
    c2 = c1 ** (1.0 / 3.0)
    v = [x * c2 for x in u]
    omega = _omega_from(J, g)
    return g, omega, UnitaryFrame(v, u, E / scale, complex(c0), complex(c1), complex(c2))


def su3_from(J, Omega, g_ref) -> SU3Structure:
    g, omega, _ = normalize_conformal(J, Omega, g_ref)
    return SU3Structure(np.asarray(J, float), g, omega, Omega)


# --------------------------------------------------------------------------
# G2 and Spin(7)
# --------------------------------------------------------------------------

def metric_from_phi(phi: AlgebraicForm) -> FiberMetric:
    """Metric determined by a positive 3-form on R^7."""
    if (phi.n, phi.degree) != (7, 3):
        raise StructureError("need a 3-form on R^7")
    B = np.zeros((7, 7))
    ei = [contract(AlgebraicForm.monomial(7, (i,)), phi) for i in range(7)]
    for i in range(7):
        for j in range(i, 7):
            top = wedge(wedge(ei[i], ei[j]), phi)
            B[i, j] = B[j, i] = np.real(top.coefficient(tuple(range(7)))) / 6.0
    det = np.linalg.det(B)
    if det <= 0:
        raise StructureError("3-form is not positive (definite) for the standard orientation")
    return FiberMetric(B / det ** (1.0 / 9.0))


@dataclass
class G2Structure:
    phi: AlgebraicForm
    g: FiberMetric
    psi: AlgebraicForm

    @classmethod
    def from_phi(cls, phi: AlgebraicForm, g: FiberMetric | None = None) -> "G2Structure":
        g = metric_from_phi(phi) if g is None else g
        return cls(phi, g, hodge_star(phi, g))

    @classmethod
    def euclidean(cls) -> "G2Structure":
        return cls(phi_euclidean(), FiberMetric.euclidean(7), psi_euclidean())


@dataclass
class Spin7Structure:
    Psi: AlgebraicForm
    g: FiberMetric
    orientation: int = 1

    @classmethod
    def euclidean(cls) -> "Spin7Structure":
        return cls(cayley_euclidean(), FiberMetric.euclidean(8), 1)


def product_g2(s: SU3Structure, tol: float = 1e-10) -> G2Structure:
    """``phi = dt ^ omega + Re Omega`` on R^6 x R with ``dt`` on axis 6."""
    rep = validate_su3(s, tol)
    if not rep.passed:
        raise StructureError(f"invalid SU(3) structure: {rep.failures()}")
    idx = list(range(6))
    dt = AlgebraicForm.monomial(7, (6,))
    phi = wedge(dt, s.omega.embed(7, idx)) + s.re_Omega.embed(7, idx)
    G = np.eye(7)
    G[:6, :6] = s.g.g
    g = FiberMetric(G)
    return G2Structure(phi.real, g, hodge_star(phi.real, g))


def product_spin7(g2: G2Structure, tol: float = 1e-10) -> Spin7Structure:
    """``Psi = dt ^ phi + psi`` on R x R^7 with ``dt`` on axis 0."""
    if (g2.phi.n, g2.phi.degree) != (7, 3):
        raise StructureError("need a G2 structure on R^7")
    if (hodge_star(g2.phi, g2.g) - g2.psi).max_abs() > tol:
        raise StructureError("psi is not the Hodge dual of phi")
    shift = list(range(1, 8))
    G = np.eye(8)
    G[1:, 1:] = g2.g.g
    dt = AlgebraicForm.monomial(8, (0,))
    phi8 = g2.phi.embed(8, shift)
    psi8 = g2.psi.embed(8, shift)
    top = wedge(wedge(dt, phi8), psi8).coefficient(tuple(range(8)))
    orient = 1 if np.real(top) > 0 else -1
    return Spin7Structure(wedge(dt, phi8) + psi8, FiberMetric(G, orient), orient)


# --------------------------------------------------------------------------
# pointwise identities
# --------------------------------------------------------------------------

def _J1(s: SU3Structure):
    """``J(eta) = eta -| omega`` on 1-forms."""
    return lambda eta: contract(eta, s.omega, s.g)


def check_g2_identities(F: AlgebraicForm, s: SU3Structure | None = None) -> dict:
    s = standard_su3() if s is None else s
    J = _J1(s)
    re, im = s.re_Omega, s.im_Omega
    return {
        "J(F-|ReOmega) - F-|ImOmega": (J(contract(F, re, s.g)) - contract(F, im, s.g)).max_abs(),
        "*ReOmega - ImOmega": (hodge_star(re, s.g) - im).max_abs(),
        "F-|ImOmega - *(F^ReOmega)": (contract(F, im, s.g) - hodge_star(wedge(F, re), s.g)).max_abs(),
    }


def check_cayley_redundancy(F7: AlgebraicForm, F0: AlgebraicForm | None = None, g2: G2Structure | None = None) -> dict:
    """Residuals of the contraction identity and of the redundant Spin(7) equation.

    With ``F0 = *(F7 ^ psi)`` the equation ``*(F7 ^ phi) + F7 = *(psi ^ F0)``
    must hold identically.
    """
    g2 = G2Structure.euclidean() if g2 is None else g2
    phi, psi, g = g2.phi, g2.psi, g2.g
    ident = contract(contract(F7, phi, g), phi, g) - hodge_star(wedge(F7, phi), g) - F7
    F0s = hodge_star(wedge(F7, psi), g)
    red = hodge_star(wedge(F7, phi), g) + F7 - hodge_star(wedge(psi, F0s), g)
    out = {"identity": ident.max_abs(), "redundancy": red.max_abs()}
    if F0 is not None:
        out["first_equation"] = (F0s - F0).max_abs()
        out["second_equation"] = (hodge_star(wedge(F7, phi), g) + F7 - hodge_star(wedge(psi, F0), g)).max_abs()
    return out


@lru_cache(maxsize=None)
def g2_reduction_map():
    """Matrix ``M`` (7 x 7) with ``*(F ^ psi) = M (r_flow, r_moment)``.

    Here ``F = F_X + E ^ dt`` on R^6 x R, ``r_flow = -E - *(F_X ^ ReOmega)``
    (1-form on R^6) and ``r_moment = F_X -| omega`` (scalar). Returns
    ``(M, fit_residual)``.
    """
    s = standard_su3()
    g2 = product_g2(s)
    rows_in, rows_out = [], []
    rng = np.random.default_rng(0)
    for _ in range(40):
        FX = AlgebraicForm.from_array(6, 2, rng.normal(size=15))
        E = AlgebraicForm.from_array(6, 1, rng.normal(size=6))
        F = FX.embed(7, range(6)) + wedge(E.embed(7, range(6)), AlgebraicForm.monomial(7, (6,)))
        r9 = hodge_star(wedge(F, g2.psi)).to_array().real
        rf = (-E - hodge_star(wedge(FX, s.re_Omega))).to_array().real
        rm = np.real(inner(FX, s.omega))
        rows_in.append(np.concatenate([rf, [rm]]))
        rows_out.append(r9)
    X, Y = np.array(rows_in), np.array(rows_out)
    M, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return M.T, float(np.abs(X @ M - Y).max())


@lru_cache(maxsize=None)
def spin7_reduction_map():
    """Matrix ``L`` (28 x 7) with ``*(F ^ Psi) + F = L (*(F7 ^ psi) - F0)``.

    ``F = F7 + F0 ^ e^0`` on R x R^7 (product axes, ``e^0`` first). Returns
    ``(L, fit_residual)``.
    """
    S = Spin7Structure.euclidean()
    psi8 = psi_euclidean()
    shift = list(range(1, 8))
    e0 = AlgebraicForm.monomial(8, (0,))
    rng = np.random.default_rng(1)
    rows_in, rows_out = [], []
    for _ in range(60):
        F7 = AlgebraicForm.from_array(7, 2, rng.normal(size=21))
        F0 = AlgebraicForm.from_array(7, 1, rng.normal(size=7))
        F = F7.embed(8, shift) + wedge(F0.embed(8, shift), e0)
        r11 = (hodge_star(wedge(F, S.Psi)) + F).to_array().real
        r30 = (hodge_star(wedge(F7, psi8)) - F0).to_array().real
        rows_in.append(r30)
        rows_out.append(r11)
    X, Y = np.array(rows_in), np.array(rows_out)
    L, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return L.T, float(np.abs(X @ L - Y).max())
