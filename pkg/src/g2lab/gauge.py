"""Gauge transformations, stabilizers, gauge-equivalence search and moduli distances.

Convention: a gauge ``u`` acts on the right,

    u(A) = u^{-1} A u + u^{-1} du,    so that    w[u(A)] = (u w)(A),

and ``d_{u(A)} = u^{-1} d_A u`` on sections of the adjoint bundle.

Gauges are stored as ``u = W exp(xi)`` with ``W`` an exactly unitary
band-limited field (constant unitaries times diagonal windings) and ``xi`` an
anti-Hermitian band-limited logarithm. When ``xi`` is absent the action on a
band-limited connection is computed exactly in mode space; otherwise it is
evaluated on the grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import optimize, sparse

from ._linalg import (
    MatrixError,
    dagger,
    dexp_antihermitian,
    expm_antihermitian,
    hermitian_sqrt,
    random_unitary,
    sqrt_derivative,
)
from .lattice import BandLimitedField, Connection, LatticeError, TorusLattice, _keys

__all__ = [
    "GaugeError",
    "GaugeTransform",
    "random_gauge",
    "random_log_gauge",
    "act",
    "StabilizerBasis",
    "stabilizer",
    "relative_kernel",
    "Equivalence",
    "EquivalenceResult",
    "gauge_equivalent",
    "gauge_equivalent_isotrivial",
    "DistanceResult",
    "conn_distance",
    "conjugacy_distance",
    "project_to_stabilizer",
    "grid_values",
]


class GaugeError(ValueError):
    """Invalid gauge data or an operation outside the exact regime."""


def _with_axes(f: BandLimitedField, form_axes) -> BandLimitedField:
    if f.degree != 0:
        raise GaugeError("expected a section (degree 0)")
    return BandLimitedField(f.lattice, 0, f.rank, f.freqs, f.coeffs, tuple(form_axes), merge=False)


def grid_values(f: BandLimitedField, grid=None) -> np.ndarray:
    """Fiber values on the grid as ``(P, ncomp, m, m)`` with points in C order."""
    v = f.on_grid(grid)
    nc, m = v.shape[0], v.shape[1]
    return np.moveaxis(v.reshape(nc, m, m, -1), -1, 0)


def _active_grid(f: BandLimitedField) -> tuple:
    """Grid that samples ``f`` only along the axes where it varies."""
    bw = f.bandwidth() if len(f.freqs) else np.zeros(f.lattice.n, int)
    return tuple(N if b > 0 else 1 for N, b in zip(f.lattice.grid, bw))


def _gradient_values(f: BandLimitedField, grid=None) -> np.ndarray:
    """``(P, n, m, m)`` partial derivatives of a section along every lattice axis."""
    return np.stack([grid_values(f.partial(a), grid)[:, 0] for a in range(f.lattice.n)], axis=1)


# --------------------------------------------------------------------------
# gauge transforms
# --------------------------------------------------------------------------

class GaugeTransform:
    """Unitary gauge ``u = W exp(xi)``.

    ``base`` is the band-limited unitary factor ``W`` (degree-0 matrix
    field); ``log`` is an anti-Hermitian degree-0 field or ``None``.
    """

    def __init__(self, base: BandLimitedField, log: BandLimitedField | None = None, check: bool = True):
        if base.degree != 0 or base.rank is None:
            raise GaugeError("gauge base must be a matrix-valued section")
        self.base = base
        if log is not None:
            if log.degree != 0 or log.rank != base.rank:
                raise GaugeError("gauge logarithm must be a section of matching rank")
            if check:
                d = (log + log.adjoint()).compress(0.0)
                if len(d.freqs) and np.abs(d.coeffs).max() > 1e-10:
                    raise GaugeError("gauge logarithm is not anti-Hermitian")
            if len(log.compress(0.0).freqs) == 0:
                log = None
        self.log = log
        if check:
            defect = self.unitarity_defect()
            if defect > 1e-10:
                raise GaugeError(f"gauge is not unitary (defect {defect:.2e})")

    # -- constructors -------------------------------------------------------
    @classmethod
    def identity(cls, lattice: TorusLattice, m: int) -> "GaugeTransform":
        return cls.constant(lattice, np.eye(m))

    @classmethod
    def constant(cls, lattice: TorusLattice, U) -> "GaugeTransform":
        U = np.asarray(U, complex)
        return cls(BandLimitedField.constant(lattice, U, 0, U.shape[0]))

    @classmethod
    def from_field(cls, u: BandLimitedField, check: bool = True) -> "GaugeTransform":
        return cls(u, None, check)

    @classmethod
    def from_log(cls, xi: BandLimitedField, U0=None) -> "GaugeTransform":
        m = xi.rank
        U0 = np.eye(m) if U0 is None else U0
        return cls(BandLimitedField.constant(xi.lattice, U0, 0, m), xi)

    @classmethod
    def winding(cls, lattice: TorusLattice, ks, V=None) -> "GaugeTransform":
        """``V diag(exp(i k_r . x)) V^*`` with one integer vector ``k_r`` per diagonal entry."""
        ks = np.asarray(ks, dtype=np.int64)
        m = ks.shape[0]
        V = np.eye(m) if V is None else np.asarray(V, complex)
        c = np.zeros((m, 1, m, m), complex)
        for r in range(m):
            c[r, 0] = np.outer(V[:, r], V[:, r].conj())
        return cls(BandLimitedField(lattice, 0, m, ks, c))

    # -- properties ---------------------------------------------------------
    @property
    def lattice(self) -> TorusLattice:
        return self.base.lattice

    @property
    def rank(self) -> int:
        return self.base.rank

    @property
    def is_exact(self) -> bool:
        return self.log is None

    @property
    def field(self) -> BandLimitedField:
        if not self.is_exact:
            raise GaugeError("gauge with a logarithm is not band-limited")
        return self.base

    def values(self, grid=None) -> np.ndarray:
        """``(P, m, m)`` gauge values on the grid."""
        W = grid_values(self.base, grid)[:, 0]
        if self.log is None:
            return W
        return W @ expm_antihermitian(grid_values(self.log, grid)[:, 0])

    def gradient_values(self, grid=None) -> np.ndarray:
        """``(P, n, m, m)`` partial derivatives on the grid."""
        dW = _gradient_values(self.base, grid)
        if self.log is None:
            return dW
        W = grid_values(self.base, grid)[:, 0]
        X = grid_values(self.log, grid)[:, 0]
        E = expm_antihermitian(X)
        dX = _gradient_values(self.log, grid)
        out = np.empty_like(dW)
        for a in range(dW.shape[1]):
            out[:, a] = dW[:, a] @ E + W @ dexp_antihermitian(X, dX[:, a])
        return out

    def unitarity_defect(self, grid=None) -> float:
        U = self.values(grid)
        return float(np.abs(dagger(U) @ U - np.eye(self.rank)).max())

    # -- group operations (exact gauges) ------------------------------------
    def inverse(self) -> "GaugeTransform":
        return GaugeTransform(self.field.adjoint(), check=False)

    def __mul__(self, other: "GaugeTransform") -> "GaugeTransform":
        if not isinstance(other, GaugeTransform):
            return NotImplemented
        if other.is_exact:
            base = self.base.wedge(other.base)
            return GaugeTransform(base, self.log, check=False) if self.is_exact else _compose_error()
        if self.is_exact:
            return GaugeTransform(self.base.wedge(other.base), other.log, check=False)
        return _compose_error()

    # -- action ---------------------------------------------------------------
    def act(self, A: Connection) -> Connection:
        return act(self, A)

    def act_on_grid(self, A: Connection, grid=None) -> np.ndarray:
        """``(P, nform, m, m)`` values of ``u(A)`` along the form axes of ``A``."""
        U = self.values(grid)
        dU = self.gradient_values(grid)[:, list(A.form_axes)]
        Av = grid_values(A.A, grid)
        Ui = dagger(U)[:, None]
        return Ui @ Av @ U[:, None] + Ui @ dU

    def conjugate_on_grid(self, s: BandLimitedField, grid=None) -> np.ndarray:
        """``(P, ncomp, m, m)`` values of ``u^{-1} s u``."""
        U = self.values(grid)[:, None]
        return dagger(U) @ grid_values(s, grid) @ U

    # -- serialization ------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "lattice": self.lattice.to_json(),
            "kind": "gauge-log",
            "rank": self.rank,
            "base": self.base.to_json("gauge-base"),
            "log": None if self.log is None else self.log.to_json("gauge-log"),
        }

    @classmethod
    def from_json(cls, d: dict) -> "GaugeTransform":
        try:
            if d.get("kind") != "gauge-log":
                raise GaugeError(f"unexpected kind {d.get('kind')!r}")
            base = BandLimitedField.from_json(d["base"])
            log = None if d.get("log") is None else BandLimitedField.from_json(d["log"])
        except (KeyError, TypeError) as exc:
            raise GaugeError(f"malformed gauge document: {exc}") from exc
        return cls(base, log)

    def __repr__(self):
        return f"GaugeTransform(rank={self.rank}, base_modes={len(self.base.freqs)}, log={'yes' if self.log is not None else 'no'})"


def _compose_error():
    raise GaugeError("composition is only available when at most one factor has a logarithm on the right")


def random_gauge(rng, lattice, rank, winding=1, n_factors=2, active_axes=None) -> GaugeTransform:
    """Exactly unitary band-limited gauge ``V_0 D_1(x) V_1 ... D_r(x) V_r``.

    Each ``D_j`` is diagonal with entries ``exp(i k . x)``, ``|k_mu| <= winding``.
    """
    axes = list(lattice.axes if active_axes is None else active_axes)
    u = GaugeTransform.constant(lattice, random_unitary(rng, rank))
    for _ in range(n_factors):
        ks = np.zeros((rank, lattice.n), dtype=np.int64)
        ks[:, axes] = rng.integers(-winding, winding + 1, size=(rank, len(axes)))
        u = u * GaugeTransform.winding(lattice, ks) * GaugeTransform.constant(lattice, random_unitary(rng, rank))
    return u


def random_log_gauge(rng, lattice, rank, bandwidth=1, n_modes=3, amplitude=0.5, active_axes=None) -> GaugeTransform:
    """Null-homotopic gauge ``U_0 exp(xi)`` with random band-limited ``xi``."""
    from .lattice import random_field

    xi = random_field(rng, lattice, 0, rank, bandwidth, n_modes, None, amplitude, "antihermitian", active_axes)
    return GaugeTransform.from_log(xi, random_unitary(rng, rank))


def act(u: GaugeTransform, A: Connection) -> Connection:
    """``u(A) = u^{-1} A u + u^{-1} du`` computed exactly for band-limited ``u``."""
    if u.rank != A.rank:
        raise GaugeError(f"rank mismatch: gauge {u.rank}, connection {A.rank}")
    if not u.is_exact:
        raise GaugeError("gauge has a logarithm; use act_on_grid")
    U = _with_axes(u.base, A.form_axes)
    Ui = U.adjoint()
    out = Ui.wedge(A.A.wedge(U)) + Ui.wedge(U.d()) if len(A.form_axes) else Ui.wedge(A.A.wedge(U))
    out = (0.5 * (out - out.adjoint())).compress(1e-15)
    return Connection(out, check=False)


# --------------------------------------------------------------------------
# linear kernels: stabilizers and relative gauges
# --------------------------------------------------------------------------

def _box_modes(bw) -> np.ndarray:
    bw = [int(b) for b in bw]
    grids = np.meshgrid(*[np.arange(-b, b + 1) for b in bw], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def _stack_terms(fields_and_slots, ncomp_out, m, n):
    """Concatenate coefficient fields into one ``(P, ncomp_out, m, m)`` term list."""
    fr, co = [np.zeros((0, n), np.int64)], [np.zeros((0, ncomp_out, m, m), complex)]
    for f, slot in fields_and_slots:
        if f is None or len(f.freqs) == 0:
            continue
        c = np.zeros((len(f.freqs), ncomp_out, m, m), complex)
        c[:, slot : slot + f.ncomp] = f.coeffs
        fr.append(f.freqs)
        co.append(c)
    return np.concatenate(fr), np.concatenate(co)


def _assemble(modes, form_axes, ncomp_form, ncomp_out, m, left, right):
    """Sparse matrix of ``s -> (ds + L s - s R)`` on the span of ``modes``.

    The derivative acts on output slots ``0..ncomp_form-1``; ``left``/``right``
    are ``(freqs, coeffs)`` term lists over all output slots.
    """
    M = len(modes)
    n = modes.shape[1]
    m2 = m * m
    I = np.eye(m)
    out_f = [modes]
    for fr, _ in (left, right):
        if len(fr):
            out_f.append((modes[:, None, :] + fr[None, :, :]).reshape(-1, n))
    allf = np.concatenate(out_f)
    keys = _keys(allf)
    ukeys, inv = np.unique(keys, return_inverse=True)
    inv = inv.ravel()
    n_out = len(ukeys)
    # recover frequencies of unique output modes
    first = np.zeros(n_out, dtype=np.int64)
    first[inv[::-1]] = np.arange(len(inv))[::-1]
    out_modes = allf[first]

    rows, cols, vals = [], [], []
    col0 = np.arange(M) * m2
    row_base = lambda om: om * (ncomp_out * m2)
    # derivative
    om = inv[:M]
    for c, ax in enumerate(form_axes[:ncomp_form]):
        k = modes[:, ax]
        sel = k != 0
        for e in range(m2):
            rows.append(row_base(om[sel]) + c * m2 + e)
            cols.append(col0[sel] + e)
            vals.append(1j * k[sel].astype(complex))
    offset = M
    for sign, (fr, co) in ((1.0, left), (-1.0, right)):
        if not len(fr):
            continue
        P = len(fr)
        om = inv[offset : offset + M * P].reshape(M, P)
        offset += M * P
        for p in range(P):
            for c in range(ncomp_out):
                X = co[p, c]
                if not np.any(X):
                    continue
                blk = np.kron(X, I) if sign > 0 else -np.kron(I, X.T)
                r, q = np.nonzero(blk)
                for ri, qi in zip(r, q):
                    rows.append(row_base(om[:, p]) + c * m2 + ri)
                    cols.append(col0 + qi)
                    vals.append(np.full(M, blk[ri, qi]))
    if rows:
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        rows = cols = np.zeros(0, int)
        vals = np.zeros(0, complex)
    L = sparse.coo_matrix((vals, (rows, cols)), shape=(n_out * ncomp_out * m2, M * m2)).tocsr()
    return L, out_modes


def _svd_kernel(L, dense_limit=2e6, refine: float = 1e-3):
    """Ascending singular values and right singular vectors (columns).

    Large operators go through the Gram matrix ``L^* L``; the near-kernel
    eigenvectors (``sigma < refine * ||L||``) are then re-solved by an SVD of
    ``L`` restricted to their span, which restores full accuracy for the small
    singular values that decide the kernel.
    """
    nr, nc = L.shape
    if nc == 0:
        return np.zeros(0), np.zeros((0, 0), complex)
    if nr * nc <= dense_limit:
        D = L.toarray()
        if nr < nc:
            D = np.vstack([D, np.zeros((nc - nr, nc), complex)])
        _, s, Vh = np.linalg.svd(D, full_matrices=False)
        order = np.argsort(s)
        return s[order], Vh.conj().T[:, order]
    G = (L.getH() @ L).toarray()
    lam, V = np.linalg.eigh(0.5 * (G + G.conj().T))
    s = np.sqrt(np.clip(lam, 0.0, None))
    small = np.nonzero(s < refine * max(s[-1], 1.0))[0]
    if len(small):
        _, s2, Wh = np.linalg.svd(np.asarray(L @ V[:, small]), full_matrices=False)
        V[:, small] = V[:, small] @ Wh.conj().T
        s[small] = s2
    order = np.argsort(s)
    return s[order], V[:, order]


@dataclass
class StabilizerBasis:
    """Numerical kernel of ``s -> d_B s - s ... `` with its spectral diagnostics.

    ``elements`` are degree-0 matrix fields, orthonormal in coefficient space.
    """

    B: Connection
    elements: list
    singular_values: np.ndarray
    tol: float
    gap_ratio: float
    ambiguous: bool
    bandwidth: np.ndarray
    gap: float = 1e3
    Bt: Connection | None = None

    @property
    def complex_dim(self) -> int:
        return len(self.elements)

    @property
    def real_dim(self) -> int:
        """Real dimension of the stabilizer group (its Lie algebra is the anti-Hermitian part)."""
        return len(self.elements)

    @property
    def is_constant(self) -> bool:
        return all(e.is_constant(1e-13) for e in self.elements)

    def matrices(self) -> np.ndarray:
        """``(d, m, m)`` constant values; requires constant elements."""
        if not self.is_constant:
            raise GaugeError("stabilizer has non-constant elements")
        return np.array([e.constant_part()[0] for e in self.elements]).reshape(-1, self.B.rank, self.B.rank)

    def irreducible(self) -> bool:
        return self.complex_dim == 1 and not self.ambiguous and self.contains_identity() < 1e-8

    def contains_identity(self) -> float:
        """Distance from ``Id`` to the span (in coefficient norm)."""
        m = self.B.rank
        I = BandLimitedField.constant(self.B.lattice, np.eye(m), 0, m, self.B.form_axes)
        return (I - self.project(I)).l2_norm() / np.sqrt(self.B.lattice.volume)

    def project(self, s: BandLimitedField) -> BandLimitedField:
        s = _with_axes(s, self.B.form_axes)
        out = BandLimitedField.zeros(self.B.lattice, 0, self.B.rank, self.B.form_axes)
        vol = self.B.lattice.volume
        for e in self.elements:
            out = out + e * (s.l2_inner(e) / vol)
        return out

    def summary(self) -> dict:
        return {
            "complex_dim": self.complex_dim,
            "gap_ratio": float(self.gap_ratio),
            "ambiguous": bool(self.ambiguous),
            "tol": self.tol,
            "smallest_singular_values": [float(x) for x in self.singular_values[: self.complex_dim + 3]],
        }


def _classify(sv, tol, gap):
    sv = np.sort(np.asarray(sv, float))
    d = int(np.sum(sv < tol))
    if len(sv) == 0:
        return 0, np.inf, False
    if d == 0:
        ratio = sv[0] / tol
        return 0, ratio, bool(sv[0] < 10 * tol)
    if d == len(sv):
        return d, np.inf, False
    ratio = sv[d] / max(sv[d - 1], 1e-300)
    return d, ratio, bool(ratio < gap)


def _all_constant(fields) -> bool:
    return all(f is None or f.is_constant(0.0) for f in fields)


def relative_kernel(
    B: Connection,
    Bt: Connection | None = None,
    constraints=(),
    tol: float | None = None,
    bandwidth=None,
    winding_radius: int | None = None,
    gap: float = 1e3,
) -> StabilizerBasis:
    """Kernel of ``s -> (ds + B s - s Bt, X_j s - s Y_j)``.

    With ``Bt = B`` and no constraints this is the Lie algebra of the
    stabilizer of ``B``; with ``Bt != B`` it contains every gauge ``g`` with
    ``g(B) = Bt``. ``constraints`` is a list of pairs ``(X, Y)`` of constant
    matrices or degree-0 fields. The search space is all sections with
    ``|k_mu| <= bandwidth_mu``; when every coefficient is constant the problem
    decouples by Fourier mode and modes up to ``winding_radius`` are scanned.
    """
    Bt = B if Bt is None else Bt
    if B.rank != Bt.rank or B.form_axes != Bt.form_axes:
        raise GaugeError("connections must share rank and form axes")
    lat, m, fa = B.lattice, B.rank, B.form_axes
    n = lat.n
    nf = len(fa)

    def as_field(X):
        if isinstance(X, BandLimitedField):
            return _with_axes(X, fa)
        return BandLimitedField.constant(lat, np.asarray(X, complex), 0, m, fa)

    cons = [(as_field(X), as_field(Y)) for X, Y in constraints]
    ncomp_out = nf + len(cons)
    left = _stack_terms([(B.A, 0)] + [(X, nf + j) for j, (X, _) in enumerate(cons)], ncomp_out, m, n)
    right = _stack_terms([(Bt.A, 0)] + [(Y, nf + j) for j, (_, Y) in enumerate(cons)], ncomp_out, m, n)
    scale = 1.0 + max(np.abs(left[1]).max(initial=0.0), np.abs(right[1]).max(initial=0.0))
    tol = 1e-8 * scale if tol is None else tol
    all_fields = [B.A, Bt.A] + [f for pair in cons for f in pair]

    if _all_constant(all_fields) and bandwidth is None:
        R = (2 if nf <= 6 else 1) if winding_radius is None else winding_radius
        bw = np.zeros(n, int)
        bw[list(fa)] = R
        modes = _box_modes(bw)
        Lc = np.zeros((ncomp_out, m, m), complex)
        Rc = np.zeros((ncomp_out, m, m), complex)
        if len(left[0]):
            Lc = left[1].sum(axis=0)
        if len(right[0]):
            Rc = right[1].sum(axis=0)
        I = np.eye(m)
        base = np.concatenate([np.kron(Lc[c], I) - np.kron(I, Rc[c].T) for c in range(ncomp_out)])
        m2 = m * m
        # G(k) = sum_c M_c(k)^* M_c(k) is quadratic in k; one batched eigh gives
        # every singular value, and only near-singular modes get a proper SVD.
        blocks = base.reshape(ncomp_out, m2, m2)
        G0 = np.einsum("cji,cjk->ik", blocks.conj(), blocks)
        G = np.broadcast_to(G0, (len(modes), m2, m2)).copy()
        eye = np.eye(m2)
        for c, ax in enumerate(fa):
            k = modes[:, ax].astype(float)
            G += k[:, None, None] * (1j * (dagger(blocks[c]) - blocks[c]))
            G += (k * k)[:, None, None] * eye
        lam = np.linalg.eigvalsh(G)
        s = np.sqrt(np.clip(lam, 0.0, None))[:, ::-1]
        near = np.nonzero(s[:, -1] < max(1e4 * tol, 1e-5 * scale))[0]
        Vh = {}
        if len(near):
            Ms = np.broadcast_to(base, (len(near),) + base.shape).copy()
            for c, ax in enumerate(fa):
                Ms[:, c * m2 : (c + 1) * m2] += 1j * modes[near, ax, None, None] * eye
            _, sn, Vn = np.linalg.svd(Ms, full_matrices=False)
            s[near] = sn
            Vh = dict(zip(near.tolist(), Vn))
        flat_s = s.ravel()
        d, ratio, amb = _classify(flat_s, tol, gap)
        elements = []
        for a, b in zip(*np.nonzero(s < tol)):
            v = Vh[int(a)][b].conj().reshape(1, 1, m, m)
            elements.append(BandLimitedField(lat, 0, m, modes[a : a + 1], v, fa))
        return StabilizerBasis(B, elements, np.sort(flat_s), tol, ratio, amb, bw, gap, Bt)

    if bandwidth is None:
        bw = np.maximum(B.A.bandwidth(), Bt.A.bandwidth())
        for X, Y in cons:
            bw = np.maximum(bw, np.maximum(X.bandwidth(), Y.bandwidth()))
    else:
        bw = np.broadcast_to(np.asarray(bandwidth, int), (n,)).copy()
    modes = _box_modes(bw)
    L, out_modes = _assemble(modes, fa, nf, ncomp_out, m, left, right)
    # Along form axes where every coefficient is constant the operator keeps the
    # Fourier index, so windings there are scanned as shifted copies of L.
    free = [c for c, ax in enumerate(fa) if bandwidth is None and bw[ax] == 0]
    if free:
        R = (2 if len(free) <= 2 else 1) if winding_radius is None else winding_radius
        shifts = _box_modes([R] * len(free))
    else:
        shifts = np.zeros((1, 0), np.int64)
    D = _shift_generators(modes, out_modes, [fa[c] for c in free], free, ncomp_out, m)
    svs, elements = [], []
    for q in shifts:
        Lq = L
        for qi, Dq in zip(q, D):
            if qi:
                Lq = Lq + qi * Dq
        sv, V = _svd_kernel(Lq)
        svs.append(sv)
        mq = modes.copy()
        for qi, c in zip(q, free):
            mq[:, fa[c]] += qi
        for j in np.nonzero(sv < tol)[0]:
            v = V[:, j].reshape(len(modes), 1, m, m)
            elements.append(BandLimitedField(lat, 0, m, mq, v, fa).compress(1e-14))
    sv = np.concatenate(svs)
    d, ratio, amb = _classify(sv, tol, gap)
    if free:
        bw = bw.copy()
        bw[[fa[c] for c in free]] = R
    return StabilizerBasis(B, elements, np.sort(sv), tol, ratio, amb, bw, gap, Bt)


def _shift_generators(modes, out_modes, axes, slots, ncomp_out, m):
    """Sparse ``d/dq`` of the operator when input modes shift by ``q`` along ``axes``."""
    m2 = m * m
    pos = {k: i for i, k in enumerate(_keys(out_modes).tolist())}
    om = np.array([pos[k] for k in _keys(modes).tolist()], dtype=np.int64)
    shape = (len(out_modes) * ncomp_out * m2, len(modes) * m2)
    out = []
    for ax, c in zip(axes, slots):
        rows = (om[:, None] * (ncomp_out * m2) + c * m2 + np.arange(m2)[None]).ravel()
        cols = (np.arange(len(modes))[:, None] * m2 + np.arange(m2)[None]).ravel()
        out.append(sparse.coo_matrix((np.full(len(rows), 1j), (rows, cols)), shape=shape).tocsr())
    return out


def stabilizer(B: Connection, tol: float | None = None, bandwidth=None, winding_radius=None, gap: float = 1e3) -> StabilizerBasis:
    """Parallel endomorphisms ``d_B s = 0`` spanning the stabilizer of ``B``."""
    return relative_kernel(B, None, (), tol, bandwidth, winding_radius, gap)


# --------------------------------------------------------------------------
# gauge equivalence
# --------------------------------------------------------------------------

class Equivalence:
    FOUND = "found"
    NOT_EQUIVALENT = "not-equivalent"
    INDETERMINATE = "indeterminate"


@dataclass
class EquivalenceResult:
    status: str
    witness: GaugeTransform | None
    witness_values: np.ndarray | None
    residuals: dict = dc_field(default_factory=dict)
    kernel: StabilizerBasis | None = None

    @property
    def found(self) -> bool:
        return self.status == Equivalence.FOUND


def _polar_left(s: BandLimitedField, grid=None):
    """Grid values and gradients of ``g = (s s^*)^{-1/2} s`` for a kernel element ``s``."""
    S = grid_values(s, grid)[:, 0]
    dS = _gradient_values(s, grid)
    H = S @ dagger(S)
    h = hermitian_sqrt(H)
    hinv = np.linalg.inv(h)
    G = hinv @ S
    dG = np.empty_like(dS)
    for a in range(dS.shape[1]):
        dH = dS[:, a] @ dagger(S) + S @ dagger(dS[:, a])
        dh = sqrt_derivative(H, dH)
        dG[:, a] = -hinv @ dh @ hinv @ S + hinv @ dS[:, a]
    return G, dG


def _exact_polar(s: BandLimitedField):
    """``g = h^{-1} s`` as a band-limited field when ``s s^*`` is constant."""
    ss = s.wedge(s.adjoint()).compress(1e-13)
    if not ss.is_constant(1e-12):
        return None
    H = ss.constant_part()[0]
    h = hermitian_sqrt(H)
    return s.left(np.linalg.inv(h))


def gauge_equivalent(
    B: Connection,
    Bt: Connection,
    X=None,
    Y=None,
    tol: float = 1e-8,
    rng=None,
    tries: int = 3,
    **kernel_kw,
) -> EquivalenceResult:
    """Search for a unitary ``g`` with ``g(B) = Bt`` and ``X g = g Y``.

    The linear kernel of ``s -> (ds + B s - s Bt, X s - s Y)`` is computed; a
    generic element ``s`` is invertible exactly when a witness exists, and
    then ``g = (s s^*)^{-1/2} s`` solves both conditions.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    cons = [] if X is None else [(X, Y)]
    K = relative_kernel(B, Bt, cons, **kernel_kw)
    if K.ambiguous:
        return EquivalenceResult(Equivalence.INDETERMINATE, None, None, {"gap_ratio": K.gap_ratio}, K)
    if K.complex_dim == 0:
        return EquivalenceResult(Equivalence.NOT_EQUIVALENT, None, None, {"kernel_dim": 0}, K)
    m = B.rank
    best = None
    for _ in range(tries):
        c = rng.normal(size=K.complex_dim) + 1j * rng.normal(size=K.complex_dim)
        s = BandLimitedField.zeros(B.lattice, 0, m, B.form_axes)
        for ci, e in zip(c, K.elements):
            s = s + ci * e
        sv = np.linalg.svd(grid_values(s, _active_grid(s))[:, 0], compute_uv=False)
        cond = float((sv[:, -1] / sv[:, 0]).min())
        if best is None or cond > best[0]:
            best = (cond, s)
    cond, s = best
    if cond < 1e-8:
        return EquivalenceResult(Equivalence.NOT_EQUIVALENT, None, None, {"kernel_dim": K.complex_dim, "min_conditioning": cond}, K)
    g_field = _exact_polar(s)
    res = {"kernel_dim": K.complex_dim, "min_conditioning": cond}
    if g_field is not None:
        g = GaugeTransform(g_field, check=False)
        res["unitarity"] = g.unitarity_defect()
        res["connection"] = (act(g, B).A - Bt.A).sup_norm() if len(B.form_axes) else 0.0
        Gv = g.values()
    else:
        g = None
        Gv, dG = _polar_left(s)
        Bv = grid_values(B.A)
        gi = dagger(Gv)[:, None]
        gB = gi @ Bv @ Gv[:, None] + gi @ dG[:, list(B.form_axes)]
        res["unitarity"] = float(np.abs(dagger(Gv) @ Gv - np.eye(m)).max())
        res["connection"] = float(np.sqrt((np.abs(gB - grid_values(Bt.A)) ** 2).sum(axis=(1, 2, 3))).max())
    if X is not None:
        Xv = np.asarray(X, complex) if not isinstance(X, BandLimitedField) else grid_values(X)[:, 0]
        Yv = np.asarray(Y, complex) if not isinstance(Y, BandLimitedField) else grid_values(Y)[:, 0]
        res["intertwining"] = float(np.abs(Xv @ Gv - Gv @ Yv).max())
    ok = all(res[k] < tol for k in ("unitarity", "connection", "intertwining") if k in res)
    status = Equivalence.FOUND if ok else Equivalence.INDETERMINATE
    return EquivalenceResult(status, g, Gv, res, K)


def gauge_equivalent_isotrivial(u, B: Connection, v, Bt: Connection, tol: float = 1e-8, **kw) -> EquivalenceResult:
    """Witness ``g`` with ``g(B) = Bt`` and ``u(2pi) g = g v(2pi)`` for gauge paths ``u``, ``v``."""
    return gauge_equivalent(B, Bt, u.endpoint_field(), v.endpoint_field(), tol=tol, **kw)


# --------------------------------------------------------------------------
# distances
# --------------------------------------------------------------------------

@dataclass
class DistanceResult:
    value: float
    gauge: GaugeTransform | None
    exact: bool
    details: dict = dc_field(default_factory=dict)

    def __float__(self):
        return float(self.value)


def _sup_frobenius(X) -> float:
    return float(np.sqrt((np.abs(X) ** 2).reshape(X.shape[0], -1).sum(axis=1)).max())


def _common_eigenbasis(mats: np.ndarray, rng) -> np.ndarray | None:
    """Unitary diagonalizing commuting anti-Hermitian matrices, else ``None``."""
    m = mats.shape[-1]
    for a, b in itertools.combinations(range(len(mats)), 2):
        if np.abs(mats[a] @ mats[b] - mats[b] @ mats[a]).max() > 1e-10:
            return None
    c = rng.normal(size=len(mats))
    H = 1j * np.tensordot(c, mats, axes=1)
    _, V = np.linalg.eigh(0.5 * (H + dagger(H)))
    for M in mats:
        D = dagger(V) @ M @ V
        if np.abs(D - np.diag(np.diag(D))).max() > 1e-8:
            return None
    return V


def _winding_candidates(A1: Connection, A2: Connection, rng, limit: int = 64):
    """Constant-times-winding gauges that align the constant parts of ``A2`` with ``A1``."""
    m, fa = A1.rank, A1.form_axes
    lat = A1.lattice
    c1, c2 = A1.A.constant_part(), A2.A.constant_part()
    cands = [GaugeTransform.identity(lat, m)]
    V2 = _common_eigenbasis(c2, rng)
    V1 = _common_eigenbasis(c1, rng)
    if V1 is None or V2 is None:
        return cands
    a1 = np.array([np.real(np.diag(dagger(V1) @ M @ V1) / 1j) for M in c1])  # (nf, m)
    a2 = np.array([np.real(np.diag(dagger(V2) @ M @ V2) / 1j) for M in c2])
    out = []
    for perm in itertools.permutations(range(m)):
        diff = a1[:, list(perm)] - a2  # eigenvalue r of A2 matched with perm[r] of A1
        base = np.floor(diff)
        choices = [np.unique([base[c, r], base[c, r] + 1]) for c in range(len(fa)) for r in range(m)]
        rounded = np.round(diff)
        for combo in [rounded.ravel()] + ([] if len(choices) > 8 else list(itertools.product(*choices))):
            k = np.asarray(combo).reshape(len(fa), m)
            ks = np.zeros((m, lat.n), np.int64)
            ks[:, list(fa)] = k.T.astype(np.int64)
            P = np.eye(m)[:, list(perm)]
            # g = V2 diag(exp(i k x)) (V1 P)^*  maps the constant part of A2 onto that of A1
            W = GaugeTransform.winding(lat, ks)
            g = GaugeTransform.constant(lat, V2) * W * GaugeTransform.constant(lat, dagger(V1 @ P))
            out.append(g)
            if len(out) >= limit:
                break
        if len(out) >= limit:
            break
    return cands + out


def conn_distance(
    A1: Connection,
    A2: Connection,
    budget: int = 4,
    bandwidth=None,
    rng=None,
    max_nfev: int = 400,
    exact_tol: float = 1e-9,
) -> DistanceResult:
    """Upper bound on ``inf_g sup_x |A1 - g(A2)|`` (pointwise Frobenius norm).

    An exact linear solve for ``g(A2) = A1`` is tried first; otherwise gauges
    ``g = W exp(xi)`` are fitted by least squares from ``budget`` starts per
    winding candidate ``W``.
    """
    if A1.rank != A2.rank or A1.lattice.n != A2.lattice.n or A1.form_axes != A2.form_axes:
        raise GaugeError("connections must share lattice, rank and form axes")
    rng = np.random.default_rng(0) if rng is None else rng
    lat, m = A1.lattice, A1.rank
    direct = _sup_frobenius(grid_values((A1 - A2).A)) if len((A1 - A2).A.freqs) else 0.0
    best = DistanceResult(direct, GaugeTransform.identity(lat, m), False, {"method": "identity"})
    # exact orbit test: g with dg + A2 g - g A1 = 0
    try:
        eq = gauge_equivalent(A2, A1, tol=exact_tol, rng=rng)
    except (MatrixError, LatticeError):
        eq = None
    if eq is not None and eq.found:
        return DistanceResult(eq.residuals["connection"], eq.witness, True, {"method": "linear", **eq.residuals})
    fa = list(A1.form_axes)
    bw = np.maximum(A1.A.bandwidth(), A2.A.bandwidth()) if bandwidth is None else np.broadcast_to(bandwidth, (lat.n,))
    modes = _box_modes(bw)
    M = len(modes)
    A1v = grid_values(A1.A)
    for W in _winding_candidates(A1, A2, rng):
        Wv = W.values()
        dWv = W.gradient_values()[:, fa]
        A2v = grid_values(A2.A)
        base_res = dagger(Wv)[:, None] @ A2v @ Wv[:, None] + dagger(Wv)[:, None] @ dWv
        val = _sup_frobenius(A1v - base_res)
        if val < best.value:
            best = DistanceResult(val, W, False, {"method": "winding"})
        if M * m * m > 400:
            continue

        def unpack(p):
            c = (p[: M * m * m] + 1j * p[M * m * m :]).reshape(M, 1, m, m)
            xi = BandLimitedField(lat, 0, m, modes, c, None).antihermitian_part()
            return xi

        def residual(p, W=W):
            g = GaugeTransform(W.base, unpack(p), check=False)
            R = A1v - g.act_on_grid(A2)
            return np.concatenate([R.real.ravel(), R.imag.ravel()])

        for start in range(budget):
            p0 = np.zeros(2 * M * m * m) if start == 0 else 0.3 * rng.normal(size=2 * M * m * m)
            sol = optimize.least_squares(residual, p0, max_nfev=max_nfev, xtol=1e-14, ftol=1e-14, gtol=1e-14)
            g = GaugeTransform(W.base, unpack(sol.x), check=False)
            val = _sup_frobenius(A1v - g.act_on_grid(A2))
            if val < best.value:
                best = DistanceResult(val, g, False, {"method": "least-squares", "nfev": int(sol.nfev)})
    return best


def _op_norm_sup(X) -> float:
    return float(np.linalg.norm(X, ord=2, axis=(-2, -1)).max())


def _as_grid_unitary(x, lattice, grid=None):
    if isinstance(x, GaugeTransform):
        return x.values(grid)
    if isinstance(x, BandLimitedField):
        return grid_values(x, grid)[:, 0]
    x = np.asarray(x, complex)
    return x[None] if x.ndim == 2 else x


def conjugacy_distance(x, y, G: StabilizerBasis, budget: int = 6, rng=None) -> DistanceResult:
    """Upper bound on ``inf_{g in Gamma_B} sup |x - g y g^{-1}|`` (operator norm).

    ``g = P exp(X)`` with ``X`` anti-Hermitian in the span of the stabilizer and
    ``P`` running over permutation matrices that lie in it; each start is
    refined by BFGS on the squared Frobenius error followed by Nelder-Mead on
    the objective itself.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    lat, m = G.B.lattice, G.B.rank
    # sample only along axes where x, y or the stabilizer vary
    bw = np.zeros(lat.n, int)
    for f in [x, y] + ([] if G.is_constant else list(G.elements)):
        f = f.base if isinstance(f, GaugeTransform) and f.is_exact else f
        if isinstance(f, BandLimitedField) and len(f.freqs):
            bw = np.maximum(bw, f.bandwidth())
        elif isinstance(f, GaugeTransform) or (isinstance(f, np.ndarray) and f.ndim == 3 and len(f) > 1):
            bw[:] = 1  # logarithmic gauges and raw grid samples keep the full grid
    grid = tuple(N if b > 0 else 1 for N, b in zip(lat.grid, bw))
    xv = _as_grid_unitary(x, lat, grid)
    yv = _as_grid_unitary(y, lat, grid)
    if G.complex_dim == 0:
        return DistanceResult(_op_norm_sup(xv - yv), None, False, {"starts": 0})
    if G.is_constant:
        E = G.matrices()[:, None]  # (d, 1, m, m)
    else:
        E = np.array([grid_values(e, grid)[:, 0] for e in G.elements])
    # anti-Hermitian real basis of the Lie algebra
    gens = []
    for e in E:
        for Z in (e - dagger(e), 1j * (e + dagger(e))):
            gens.append(0.5 * Z)
    gens = np.array(gens)
    flat = gens.reshape(len(gens), -1)
    q, r = np.linalg.qr(np.concatenate([flat.real, flat.imag], axis=1).T)
    keep = np.abs(np.diag(r)) > 1e-10
    gens = gens[np.nonzero(keep)[0]] if keep.any() else gens[:1]
    d = len(gens)

    starts = [np.eye(m)]
    if G.is_constant:
        for perm in itertools.permutations(range(m)):
            P = np.eye(m)[:, list(perm)]
            if np.abs(G.project(BandLimitedField.constant(lat, P, 0, m, G.B.form_axes)).constant_part()[0] - P).max() < 1e-10:
                starts.append(P)
        yc = yv[0] if len(yv) == 1 else None
        xc = xv[0] if len(xv) == 1 else None
        if xc is not None and yc is not None:
            # eigenbasis alignments x = Vx Dx Vx^*, y = Vy Dy Vy^*
            _, Vx = np.linalg.eig(xc)
            _, Vy = np.linalg.eig(yc)
            Vx, _ = np.linalg.qr(Vx)
            Vy, _ = np.linalg.qr(Vy)
            for perm in itertools.permutations(range(m)):
                Pm = np.eye(m)[:, list(perm)]
                starts.append(Vx @ Pm @ dagger(Vy))
    # project starts to the group (polar of projection onto the span)
    group_starts = []
    for S in starts:
        Sf = BandLimitedField.constant(lat, S, 0, m, G.B.form_axes)
        pr = G.project(Sf)
        Sv = grid_values(pr)[:, 0] if not G.is_constant else pr.constant_part()[0][None]
        try:
            h = hermitian_sqrt(Sv @ dagger(Sv))
            group_starts.append(np.linalg.solve(h, Sv))
        except (MatrixError, np.linalg.LinAlgError):
            continue
    for _ in range(budget):
        c = rng.normal(size=d)
        group_starts.append(expm_antihermitian(np.tensordot(c, gens, axes=1)))

    def conj(p, P0):
        g = P0 @ expm_antihermitian(np.tensordot(p, gens, axes=1))
        return g @ yv @ dagger(g)

    best = (_op_norm_sup(xv - yv), np.eye(m)[None], "identity")
    if best[0] < 1e-14:
        return DistanceResult(best[0], None, False, {"group_element": best[1], "starts": 0, "dim": d})
    for P0 in group_starts:
        f2 = lambda p: float(np.sum(np.abs(xv - conj(p, P0)) ** 2))
        r1 = optimize.minimize(f2, np.zeros(d), method="BFGS", options={"gtol": 1e-12})
        f = lambda p: _op_norm_sup(xv - conj(p, P0))
        cands = [r1.x]
        if f(r1.x) > 1e-13:  # Nelder-Mead polishes only nonzero minima
            r2 = optimize.minimize(f, r1.x, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
            cands.append(r2.x)
        for p in cands:
            val = f(p)
            if val < best[0]:
                best = (val, P0 @ expm_antihermitian(np.tensordot(p, gens, axes=1)), "optimized")
        if best[0] < 1e-13:
            break
    return DistanceResult(best[0], None, False, {"group_element": best[1], "starts": len(group_starts), "dim": d})


def project_to_stabilizer(eta, B: Connection, G: StabilizerBasis | None = None, grid=None):
    """Nearest stabilizer element to ``eta`` by projection and polar retraction.

    Returns ``(a, gap, info)`` where ``a`` is a :class:`GaugeTransform` when the
    retraction is band-limited (grid values otherwise) and ``gap`` is
    ``sup |eta - a|`` in the operator norm.
    """
    G = stabilizer(B) if G is None else G
    lat, m = B.lattice, B.rank
    if isinstance(eta, np.ndarray):
        eta = GaugeTransform.constant(lat, eta)
    ev = eta.values(grid)
    if eta.is_exact:
        p = G.project(eta.base)
    else:
        Xv = ev.reshape(len(ev), -1)
        p = BandLimitedField.zeros(lat, 0, m, B.form_axes)
        for e in G.elements:
            Ev = grid_values(e, grid)[:, 0].reshape(len(ev), -1)
            p = p + e * np.mean(np.sum(Xv * Ev.conj(), axis=1))
    info = {"kernel_dim": G.complex_dim, "ambiguous": G.ambiguous}
    Pv = grid_values(p, _active_grid(p) if grid is None else grid)[:, 0]
    sv = np.linalg.svd(Pv, compute_uv=False)
    cond = float((sv[:, -1] / np.maximum(sv[:, 0], 1e-300)).min()) if len(sv) else 0.0
    info["conditioning"] = cond
    if cond < 1e-8:
        info["flag"] = "projection is singular"
        return None, float("inf"), info
    ex = _exact_polar(p)
    if ex is not None:
        a = GaugeTransform(ex, check=False)
        av = a.values(grid)
    else:
        av, _ = _polar_left(p, grid)
        a = av
    return a, _op_norm_sup(ev - av), info
