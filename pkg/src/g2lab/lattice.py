"""Band-limited field calculus on flat tori.

A :class:`BandLimitedField` is a finite Fourier sum

    f(x) = sum_k c_k exp(i k.x),     x in [0, 2 pi)^n,

whose coefficients ``c_k`` are arrays of shape ``(ncomp, m, m)``: ``ncomp``
exterior-form components along a chosen set of *form axes* and an ``m x m``
matrix (``m = 1`` for scalar fields). Derivatives multiply by ``i k``,
products are exact discrete convolutions, and integrals read off the zero
mode. Grid evaluation folds frequencies modulo the grid size, so values at
grid points are exact for every bandwidth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy import fft as sfft

from .exterior import (
    AlgebraicForm,
    FiberMetric,
    basis,
    basis_position,
    bilinear_tensor,
    hodge_star,
    contract,
    linear_map_matrix,
    perm_sign,
    wedge,
)

__all__ = [
    "LatticeError",
    "GridError",
    "TorusLattice",
    "BandLimitedField",
    "Connection",
    "SplitConnection",
    "ext_d",
    "cov_d",
    "curvature",
    "split",
    "assemble",
    "integrate",
    "check_periodicity",
    "PeriodicityReport",
    "fiber_operator",
    "random_field",
    "random_connection",
    "flat_connection",
    "dt_form",
]

TWO_PI = 2.0 * np.pi


class LatticeError(ValueError):
    """Incompatible lattices, degrees, ranks or axes."""


class GridError(LatticeError):
    """Grid too coarse for the requested operation."""


# --------------------------------------------------------------------------
# lattice
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TorusLattice:
    """Flat torus ``(R / 2 pi Z)^n`` with an evaluation grid.

    ``time_axis`` marks the circle factor of a product ``Y x S^1``.
    """

    grid: tuple
    time_axis: int | None = None

    def __post_init__(self):
        g = tuple(int(x) for x in self.grid)
        if not g or any(x < 1 for x in g):
            raise LatticeError(f"invalid grid {self.grid}")
        object.__setattr__(self, "grid", g)
        if self.time_axis is not None and not 0 <= self.time_axis < len(g):
            raise LatticeError(f"time axis {self.time_axis} outside {len(g)} axes")

    @property
    def n(self) -> int:
        return len(self.grid)

    @property
    def volume(self) -> float:
        return TWO_PI ** self.n

    @property
    def axes(self) -> tuple:
        return tuple(range(self.n))

    @property
    def spatial_axes(self) -> tuple:
        return tuple(a for a in range(self.n) if a != self.time_axis)

    def without_axis(self, axis: int) -> "TorusLattice":
        grid = tuple(g for i, g in enumerate(self.grid) if i != axis)
        t = self.time_axis
        if t is not None:
            t = None if t == axis else (t - 1 if t > axis else t)
        return TorusLattice(grid, t)

    def with_grid(self, grid) -> "TorusLattice":
        return TorusLattice(tuple(grid), self.time_axis)

    def points(self, grid=None) -> np.ndarray:
        """Grid coordinates, shape ``(*grid, n)``."""
        grid = self.grid if grid is None else tuple(grid)
        axes = [TWO_PI * np.arange(N) / N for N in grid]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def to_json(self) -> dict:
        return {"dims": self.n, "grid": list(self.grid), "time_axis": self.time_axis}

    @classmethod
    def from_json(cls, d: dict) -> "TorusLattice":
        grid = d["grid"]
        if int(d.get("dims", len(grid))) != len(grid):
            raise LatticeError("lattice dims and grid length disagree")
        return cls(tuple(grid), d.get("time_axis"))


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _keys(freqs: np.ndarray) -> np.ndarray:
    """Hashable row keys (one void scalar per frequency vector)."""
    f = np.ascontiguousarray(freqs, dtype=np.int64)
    return f.view(np.dtype((np.void, f.dtype.itemsize * f.shape[1]))).ravel()


def _merge(freqs: np.ndarray, coeffs: np.ndarray):
    if len(freqs) == 0:
        return freqs, coeffs
    keys = _keys(freqs)
    uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    if len(uniq) == len(freqs):
        order = np.lexsort(freqs.T[::-1])
        return freqs[order], coeffs[order]
    out = np.zeros((len(uniq),) + coeffs.shape[1:], dtype=complex)
    np.add.at(out, inv.ravel(), coeffs)
    f = freqs[first]
    order = np.lexsort(f.T[::-1])
    return f[order], out[order]


@lru_cache(maxsize=None)
def _axis_embedding(src: tuple, dst: tuple, k: int):
    """Component map from degree-``k`` forms on ``src`` axes into ``dst`` axes."""
    pos = {a: i for i, a in enumerate(dst)}
    if any(a not in pos for a in src):
        raise LatticeError(f"form axes {src} not contained in {dst}")
    dpos = basis_position(len(dst), k)
    idx, sign = [], []
    for key in basis(len(src), k):
        mapped = tuple(pos[src[i]] for i in key)
        idx.append(dpos[tuple(sorted(mapped))])
        sign.append(perm_sign(mapped))
    return np.array(idx, dtype=int), np.array(sign, dtype=float)


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------

class BandLimitedField:
    """Finite Fourier sum with form-valued matrix coefficients.

    Parameters
    ----------
    lattice : TorusLattice
    degree : int
        Form degree along ``form_axes`` (0 for sections and functions).
    rank : int or None
        ``m`` for ``m x m`` matrix values, ``None`` for scalar values.
    freqs : (M, n) int array
    coeffs : (M, ncomp, m, m) complex array (``m = 1`` when ``rank`` is None)
    form_axes : tuple of lattice axes carrying the form components;
        defaults to all axes.
    """

    __slots__ = ("lattice", "degree", "rank", "form_axes", "freqs", "coeffs")

    def __init__(self, lattice, degree, rank, freqs, coeffs, form_axes=None, merge=True):
        self.lattice = lattice
        self.form_axes = tuple(lattice.axes if form_axes is None else sorted(form_axes))
        if any(a < 0 or a >= lattice.n for a in self.form_axes):
            raise LatticeError(f"form axes {self.form_axes} outside lattice")
        if not 0 <= degree <= len(self.form_axes):
            raise LatticeError(f"degree {degree} invalid for {len(self.form_axes)} form axes")
        self.degree = degree
        self.rank = rank
        m = 1 if rank is None else rank
        freqs = np.asarray(freqs, dtype=np.int64).reshape(-1, lattice.n)
        coeffs = np.asarray(coeffs, dtype=complex)
        ncomp = len(basis(len(self.form_axes), degree))
        if coeffs.shape != (len(freqs), ncomp, m, m):
            raise LatticeError(f"coefficient shape {coeffs.shape} != {(len(freqs), ncomp, m, m)}")
        if merge:
            freqs, coeffs = _merge(freqs, coeffs)
        self.freqs = freqs
        self.coeffs = coeffs

    # -- basic properties ---------------------------------------------------
    @property
    def m(self) -> int:
        return 1 if self.rank is None else self.rank

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[1]

    @property
    def nform(self) -> int:
        return len(self.form_axes)

    @property
    def kind(self) -> str:
        if self.degree == 0:
            return "scalar" if self.rank is None else "matrix"
        return "form"

    def bandwidth(self) -> np.ndarray:
        if len(self.freqs) == 0:
            return np.zeros(self.lattice.n, dtype=int)
        return np.abs(self.freqs).max(axis=0)

    def _like(self, freqs, coeffs, degree=None, rank="same", form_axes=None, merge=True):
        return BandLimitedField(
            self.lattice,
            self.degree if degree is None else degree,
            self.rank if rank == "same" else rank,
            freqs,
            coeffs,
            self.form_axes if form_axes is None else form_axes,
            merge=merge,
        )

    # -- constructors -------------------------------------------------------
    @classmethod
    def zeros(cls, lattice, degree=0, rank=None, form_axes=None):
        fa = tuple(lattice.axes if form_axes is None else form_axes)
        m = 1 if rank is None else rank
        ncomp = len(basis(len(fa), degree))
        return cls(lattice, degree, rank, np.zeros((0, lattice.n), int), np.zeros((0, ncomp, m, m)), fa)

    @classmethod
    def constant(cls, lattice, value, degree=0, rank=None, form_axes=None):
        """Constant field; ``value`` has shape (ncomp, m, m), (m, m), (ncomp,) or is scalar."""
        fa = tuple(lattice.axes if form_axes is None else form_axes)
        ncomp = len(basis(len(fa), degree))
        v = np.asarray(value, dtype=complex)
        if rank is None:
            v = v.reshape(ncomp, 1, 1)
        else:
            v = v.reshape(ncomp, rank, rank)
        return cls(lattice, degree, rank, np.zeros((1, lattice.n), int), v[None], fa)

    @classmethod
    def from_modes(cls, lattice, modes: dict, degree=0, rank=None, form_axes=None):
        """``modes`` maps frequency tuples to coefficient arrays."""
        fa = tuple(lattice.axes if form_axes is None else form_axes)
        ncomp = len(basis(len(fa), degree))
        m = 1 if rank is None else rank
        freqs = np.array([list(k) for k in modes], dtype=np.int64).reshape(-1, lattice.n)
        coeffs = np.array([np.asarray(c, complex).reshape(ncomp, m, m) for c in modes.values()]).reshape(
            -1, ncomp, m, m
        )
        return cls(lattice, degree, rank, freqs, coeffs, fa)

    @classmethod
    def from_form(cls, lattice, form: AlgebraicForm, form_axes=None):
        """Constant field with fiber value ``form``; fiber index i is the i-th form axis."""
        fa = tuple(lattice.axes if form_axes is None else form_axes)
        if form.n != len(fa):
            raise LatticeError(f"form dimension {form.n} != {len(fa)} form axes")
        return cls.constant(lattice, form.to_array(), form.degree, form.rank, fa)

    # -- arithmetic ---------------------------------------------------------
    def _check_same(self, other):
        if not isinstance(other, BandLimitedField):
            raise LatticeError("operand is not a BandLimitedField")
        if self.lattice.n != other.lattice.n:
            raise LatticeError("fields live on different lattices")
        if (self.degree, self.form_axes) != (other.degree, other.form_axes):
            raise LatticeError(
                f"degree/form axes differ: {(self.degree, self.form_axes)} vs {(other.degree, other.form_axes)}"
            )
        if self.rank != other.rank:
            raise LatticeError(f"ranks differ: {self.rank} vs {other.rank}")

    def __add__(self, other):
        self._check_same(other)
        return self._like(np.concatenate([self.freqs, other.freqs]), np.concatenate([self.coeffs, other.coeffs]))

    def __neg__(self):
        return self._like(self.freqs, -self.coeffs, merge=False)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, s):
        if np.ndim(s) != 0:
            return NotImplemented
        return self._like(self.freqs, s * self.coeffs, merge=False)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / s)

    def left(self, M) -> "BandLimitedField":
        """Multiply matrix values on the left by a constant matrix."""
        M = np.asarray(M, complex)
        return self._like(self.freqs, np.einsum("xy,acyz->acxz", M, self.coeffs), merge=False)

    def right(self, M) -> "BandLimitedField":
        M = np.asarray(M, complex)
        return self._like(self.freqs, np.einsum("acxy,yz->acxz", self.coeffs, M), merge=False)

    def adjoint(self) -> "BandLimitedField":
        """Pointwise conjugate transpose: modes ``k -> -k``, coefficients ``c -> c^H``."""
        return self._like(-self.freqs, np.conj(np.swapaxes(self.coeffs, -1, -2)))

    def conj(self) -> "BandLimitedField":
        return self._like(-self.freqs, np.conj(self.coeffs))

    def antihermitian_part(self) -> "BandLimitedField":
        return 0.5 * (self - self.adjoint())

    def trace(self) -> "BandLimitedField":
        tr = np.trace(self.coeffs, axis1=-2, axis2=-1)[..., None, None]
        return self._like(self.freqs, tr, rank=None, merge=False)

    def times_identity(self, m: int) -> "BandLimitedField":
        if self.rank is not None:
            raise LatticeError("field already matrix-valued")
        return self._like(self.freqs, self.coeffs * np.eye(m), rank=m, merge=False)

    def compress(self, tol: float = 0.0) -> "BandLimitedField":
        if len(self.freqs) == 0:
            return self
        keep = np.abs(self.coeffs).reshape(len(self.freqs), -1).max(axis=1) > tol
        return self._like(self.freqs[keep], self.coeffs[keep], merge=False)

    def project(self, bandwidth) -> "BandLimitedField":
        """Drop modes with ``|k_mu| > bandwidth_mu``."""
        bw = np.broadcast_to(np.asarray(bandwidth), (self.lattice.n,))
        keep = np.all(np.abs(self.freqs) <= bw, axis=1)
        return self._like(self.freqs[keep], self.coeffs[keep], merge=False)

    def constant_part(self) -> np.ndarray:
        """Zero-mode coefficient, shape (ncomp, m, m)."""
        sel = np.all(self.freqs == 0, axis=1)
        if not sel.any():
            return np.zeros(self.coeffs.shape[1:], complex)
        return self.coeffs[sel][0]

    def is_constant(self, tol: float = 0.0) -> bool:
        nz = np.any(self.freqs != 0, axis=1)
        return bool(np.all(np.abs(self.coeffs[nz]) <= tol))

    def components(self) -> list:
        """Scalar/matrix fields, one per form component."""
        return [
            BandLimitedField(self.lattice, 0, self.rank, self.freqs, self.coeffs[:, c : c + 1], None, merge=False)
            for c in range(self.ncomp)
        ]

    # -- calculus -----------------------------------------------------------
    def partial(self, axis: int) -> "BandLimitedField":
        return self._like(self.freqs, 1j * self.freqs[:, axis, None, None, None] * self.coeffs, merge=False).compress()

    def d(self) -> "BandLimitedField":
        return ext_d(self)

    def wedge(self, other: "BandLimitedField", chunk: int = 4_000_000) -> "BandLimitedField":
        """Exact product ``self ^ other`` (matrix values multiplied in order)."""
        if self.lattice.n != other.lattice.n:
            raise LatticeError("fields live on different lattices")
        if self.form_axes != other.form_axes:
            raise LatticeError(f"form axes differ: {self.form_axes} vs {other.form_axes}")
        if self.rank is not None and other.rank is not None and self.rank != other.rank:
            raise LatticeError(f"ranks differ: {self.rank} vs {other.rank}")
        k = self.degree + other.degree
        nf = self.nform
        if k > nf:
            raise LatticeError(f"degree {k} exceeds {nf} form axes")
        rank = self.rank if self.rank is not None else other.rank
        m = 1 if rank is None else rank
        T = bilinear_tensor(nf, self.degree, other.degree)
        nnz = np.argwhere(T != 0)
        M1, M2 = len(self.freqs), len(other.freqs)
        ncomp = T.shape[0]
        if M1 == 0 or M2 == 0:
            return BandLimitedField.zeros(self.lattice, k, rank, self.form_axes)
        parts_f, parts_c = [], []
        step = max(1, chunk // max(1, M2 * m * m))
        for a0 in range(0, M1, step):
            c1 = self.coeffs[a0 : a0 + step]
            out = np.zeros((len(c1), M2, ncomp, m, m), complex)
            for c, i, j in nnz:
                A = c1[:, i]
                B = other.coeffs[:, j]
                if self.rank is None or other.rank is None:
                    if self.rank is None:
                        prod = A[:, None, 0, 0, None, None] * B[None]
                    else:
                        prod = A[:, None] * B[None, :, 0, 0, None, None]
                else:
                    prod = np.einsum("axy,byz->abxz", A, B)
                out[:, :, c] += T[c, i, j] * prod
            f = self.freqs[a0 : a0 + step, None, :] + other.freqs[None, :, :]
            parts_f.append(f.reshape(-1, self.lattice.n))
            parts_c.append(out.reshape(-1, ncomp, m, m))
        return BandLimitedField(
            self.lattice, k, rank, np.concatenate(parts_f), np.concatenate(parts_c), self.form_axes
        )

    def __matmul__(self, other):
        return self.wedge(other)

    def graded_commutator(self, other: "BandLimitedField") -> "BandLimitedField":
        """``[self ^ other] = self ^ other - (-1)^{pq} other ^ self``."""
        s = (-1) ** (self.degree * other.degree)
        return self.wedge(other) - s * other.wedge(self)

    def apply_fiber(self, L: np.ndarray, out_degree: int, out_axes=None) -> "BandLimitedField":
        """Apply a constant linear map on form components (``L`` is ncomp_out x ncomp_in)."""
        L = np.asarray(L)
        coeffs = np.einsum("oc,acxy->aoxy", L, self.coeffs)
        return self._like(self.freqs, coeffs, degree=out_degree, form_axes=out_axes, merge=False)

    def embed_axes(self, new_axes) -> "BandLimitedField":
        """Re-express components with respect to a larger set of form axes."""
        new_axes = tuple(sorted(new_axes))
        idx, sgn = _axis_embedding(self.form_axes, new_axes, self.degree)
        ncomp = len(basis(len(new_axes), self.degree))
        c = np.zeros((len(self.freqs), ncomp, self.m, self.m), complex)
        c[:, idx] = self.coeffs * sgn[None, :, None, None]
        return self._like(self.freqs, c, form_axes=new_axes, merge=False)

    def restrict_axes(self, new_axes) -> "BandLimitedField":
        """Keep only components lying entirely along ``new_axes``."""
        new_axes = tuple(sorted(new_axes))
        idx, sgn = _axis_embedding(new_axes, self.form_axes, self.degree)
        c = self.coeffs[:, idx] * sgn[None, :, None, None]
        return self._like(self.freqs, c, form_axes=new_axes, merge=False)

    def slice_axis(self, axis: int, value: float) -> "BandLimitedField":
        """Restrict to ``x_axis = value``; the axis is removed from the lattice."""
        if axis in self.form_axes:
            raise LatticeError("cannot slice along a form axis; restrict components first")
        phase = np.exp(1j * self.freqs[:, axis] * value)
        freqs = np.delete(self.freqs, axis, axis=1)
        fa = tuple(a - 1 if a > axis else a for a in self.form_axes)
        return BandLimitedField(
            self.lattice.without_axis(axis), self.degree, self.rank, freqs, self.coeffs * phase[:, None, None, None], fa
        )

    def extend_axis(self, lattice: "TorusLattice", axis: int) -> "BandLimitedField":
        """Pull back to ``lattice`` which has one extra axis at position ``axis``."""
        freqs = np.insert(self.freqs, axis, 0, axis=1)
        fa = tuple(a + 1 if a >= axis else a for a in self.form_axes)
        return BandLimitedField(lattice, self.degree, self.rank, freqs, self.coeffs, fa, merge=False)

    # -- evaluation and norms ----------------------------------------------
    def evaluate(self, points) -> np.ndarray:
        """Values at arbitrary points ``(P, n)``; returns ``(P, ncomp, m, m)``."""
        pts = np.atleast_2d(np.asarray(points, float))
        ph = np.exp(1j * pts @ self.freqs.T)
        return np.einsum("pa,acxy->pcxy", ph, self.coeffs)

    def on_grid(self, grid=None) -> np.ndarray:
        """Exact values on the uniform grid; shape ``(ncomp, m, m, *grid)``."""
        grid = self.lattice.grid if grid is None else tuple(grid)
        spec = np.zeros((self.ncomp, self.m, self.m) + grid, complex)
        if len(self.freqs):
            idx = tuple((self.freqs[:, a] % grid[a]) for a in range(self.lattice.n))
            for c in range(self.ncomp):
                for x in range(self.m):
                    for y in range(self.m):
                        np.add.at(spec[c, x, y], idx, self.coeffs[:, c, x, y])
        axes = tuple(range(3, 3 + len(grid)))
        return sfft.ifftn(spec, axes=axes, norm="forward")

    def pointwise_norm(self, grid=None) -> np.ndarray:
        """Frobenius norm of the fiber value at each grid point."""
        v = self.on_grid(grid)
        return np.sqrt(np.sum(np.abs(v) ** 2, axis=(0, 1, 2)))

    def sup_norm(self, grid=None) -> float:
        if len(self.freqs) == 0:
            return 0.0
        if grid is None:
            # constant directions need a single sample
            grid = tuple(N if b > 0 else 1 for N, b in zip(self.lattice.grid, self.bandwidth()))
        return float(self.pointwise_norm(grid).max())

    def l2_norm(self) -> float:
        """``(int |f|^2)^{1/2}`` by Parseval (Frobenius on matrices, Euclidean on forms)."""
        return float(np.sqrt(self.lattice.volume * np.sum(np.abs(self.coeffs) ** 2)))

    def l2_inner(self, other: "BandLimitedField") -> complex:
        """``int <self, other>`` with ``<A, B> = Tr(A B^*)`` summed over components."""
        self._check_same(other)
        ka, kb = _keys(self.freqs), _keys(other.freqs)
        common, ia, ib = np.intersect1d(ka, kb, return_indices=True)
        return complex(self.lattice.volume * np.sum(self.coeffs[ia] * np.conj(other.coeffs[ib])))

    def integrate(self):
        return integrate(self)

    # -- serialization ------------------------------------------------------
    def to_json(self, kind: str | None = None) -> dict:
        order = np.lexsort(self.freqs.T[::-1])
        modes = []
        for a in order:
            c = self.coeffs[a].reshape(self.ncomp, self.m * self.m)
            modes.append(
                {
                    "k": [int(x) for x in self.freqs[a]],
                    "re": [[float(x) for x in row] for row in c.real],
                    "im": [[float(x) for x in row] for row in c.imag],
                }
            )
        return {
            "lattice": self.lattice.to_json(),
            "kind": kind or self.kind,
            "rank": self.rank,
            "degree": self.degree,
            "form_axes": list(self.form_axes),
            "modes": modes,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BandLimitedField":
        try:
            lat = TorusLattice.from_json(d["lattice"])
            rank = d.get("rank")
            degree = int(d.get("degree", 0))
            fa = tuple(d.get("form_axes", lat.axes))
            m = 1 if rank is None else int(rank)
            ncomp = len(basis(len(fa), degree))
            freqs = np.array([mo["k"] for mo in d["modes"]], dtype=np.int64).reshape(-1, lat.n)
            re = np.array([mo["re"] for mo in d["modes"]], dtype=float).reshape(-1, ncomp, m, m)
            im = np.array([mo["im"] for mo in d["modes"]], dtype=float).reshape(-1, ncomp, m, m)
        except (KeyError, TypeError, ValueError) as exc:
            raise LatticeError(f"malformed field document: {exc}") from exc
        return cls(lat, degree, None if rank is None else m, freqs, re + 1j * im, fa)

    def dumps(self, kind: str | None = None) -> str:
        return dumps_json(self.to_json(kind))

    def __repr__(self):
        return (
            f"BandLimitedField(n={self.lattice.n}, degree={self.degree}, rank={self.rank}, "
            f"form_axes={self.form_axes}, modes={len(self.freqs)})"
        )


def dumps_json(obj) -> str:
    """Deterministic JSON with 17 significant digits for floats."""

    def fmt(o):
        if isinstance(o, float):
            return float(f"{o:.17g}")
        if isinstance(o, dict):
            return {k: fmt(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [fmt(v) for v in o]
        return o

    return json.dumps(fmt(obj), indent=1, sort_keys=False)


# --------------------------------------------------------------------------
# fiber operators on fields
# --------------------------------------------------------------------------

_FIBER_CACHE: dict = {}


def fiber_operator(kind: str, nf: int, k: int, form: AlgebraicForm | None = None, metric=None) -> np.ndarray:
    """Component matrix of a constant fiber map on degree-``k`` forms.

    ``kind`` is ``"star"``, ``"wedge"`` (``alpha -> alpha ^ form``),
    ``"contract"`` (``alpha -> alpha -| form``) or ``"contract_into"``
    (``alpha -> form -| alpha``).
    """
    key = None
    if metric is None:
        fkey = None if form is None else (form.n, form.degree, tuple(sorted(form.coeffs.items())))
        key = (kind, nf, k, fkey)
        if key in _FIBER_CACHE:
            return _FIBER_CACHE[key]
    if kind == "star":
        fn = lambda a: hodge_star(a, metric)
    elif kind == "wedge":
        fn = lambda a: wedge(a, form)
    elif kind == "contract":
        fn = lambda a: contract(a, form, metric)
    elif kind == "contract_into":
        fn = lambda a: contract(form, a, metric)
    else:
        raise LatticeError(f"unknown fiber operator {kind}")
    L = linear_map_matrix(fn, nf, k)
    if key is not None:
        _FIBER_CACHE[key] = L
    return L


def _apply(f: BandLimitedField, kind: str, form=None, metric=None) -> BandLimitedField:
    L = fiber_operator(kind, f.nform, f.degree, form, metric)
    if kind == "star":
        out = f.nform - f.degree
    elif kind == "wedge":
        out = f.degree + form.degree
    elif kind == "contract":
        out = form.degree - f.degree
    else:
        out = f.degree - form.degree
    return f.apply_fiber(L, out)


def field_star(f, metric=None):
    return _apply(f, "star", metric=metric)


def field_wedge_const(f, form):
    return _apply(f, "wedge", form)


def field_contract(f, form, metric=None):
    """``f -| form`` pointwise."""
    return _apply(f, "contract", form, metric)


def field_contract_into(form, f, metric=None):
    """``form -| f`` pointwise."""
    return _apply(f, "contract_into", form, metric)


BandLimitedField.star = field_star
BandLimitedField.wedge_const = field_wedge_const
BandLimitedField.contract = field_contract


# --------------------------------------------------------------------------
# calculus
# --------------------------------------------------------------------------

def ext_d(f: BandLimitedField) -> BandLimitedField:
    """Exterior derivative along the form axes (exact on Fourier modes)."""
    if f.degree >= f.nform:
        raise LatticeError(f"degree {f.degree} is top degree on {f.nform} form axes")
    nf = f.nform
    T = bilinear_tensor(nf, 1, f.degree)
    ik = 1j * f.freqs[:, list(f.form_axes)]
    coeffs = np.einsum("cmi,am,aixy->acxy", T, ik, f.coeffs)
    return f._like(f.freqs, coeffs, degree=f.degree + 1, merge=False).compress()


def dt_form(lattice: TorusLattice, form_axes=None) -> BandLimitedField:
    """Constant scalar 1-form ``dt`` along the lattice time axis."""
    fa = tuple(lattice.axes if form_axes is None else form_axes)
    if lattice.time_axis is None or lattice.time_axis not in fa:
        raise LatticeError("lattice has no time axis among the form axes")
    v = np.zeros(len(fa))
    v[fa.index(lattice.time_axis)] = 1.0
    return BandLimitedField.constant(lattice, v, 1, None, fa)


class Connection:
    """Unitary connection ``d + A`` in a global trivialization.

    ``A`` is an anti-Hermitian matrix-valued 1-form field.
    """

    def __init__(self, A: BandLimitedField, check: bool = True, tol: float = 1e-10):
        if A.degree != 1:
            raise LatticeError("connection form must have degree 1")
        if A.rank is None:
            raise LatticeError("connection form must be matrix-valued (use rank 1 for U(1))")
        if check:
            defect = (A + A.adjoint()).compress(0.0)
            if len(defect.freqs) and np.abs(defect.coeffs).max() > tol:
                raise LatticeError("connection form is not anti-Hermitian")
        self.A = A

    @property
    def lattice(self):
        return self.A.lattice

    @property
    def rank(self):
        return self.A.rank

    @property
    def form_axes(self):
        return self.A.form_axes

    @classmethod
    def trivial(cls, lattice, rank, form_axes=None):
        return cls(BandLimitedField.zeros(lattice, 1, rank, form_axes))

    def curvature(self) -> BandLimitedField:
        return curvature(self)

    def cov_d(self, s: BandLimitedField) -> BandLimitedField:
        return cov_d(self, s)

    def __add__(self, other):
        a = other.A if isinstance(other, Connection) else other
        return Connection(self.A + a, check=False)

    def __sub__(self, other):
        a = other.A if isinstance(other, Connection) else other
        return Connection(self.A - a, check=False)

    def to_json(self):
        return self.A.to_json("connection")

    @classmethod
    def from_json(cls, d):
        return cls(BandLimitedField.from_json(d))

    def __repr__(self):
        return f"Connection(rank={self.rank}, {self.A!r})"


def cov_d(A: Connection, s: BandLimitedField) -> BandLimitedField:
    """``d_A s = ds + [A ^ s]`` for adjoint-valued (endomorphism) forms."""
    if s.rank is not None and s.rank != A.rank:
        raise LatticeError(f"rank mismatch: connection {A.rank}, section {s.rank}")
    if s.form_axes != A.form_axes:
        raise LatticeError("section and connection use different form axes")
    if s.rank is None:
        s = s.times_identity(A.rank)
    return ext_d(s) + A.A.graded_commutator(s) if s.degree < s.nform else A.A.graded_commutator(s)


def curvature(A: Connection, check_grid: bool = True) -> BandLimitedField:
    """``F = dA + A ^ A``; requires ``N_mu >= 2 bw_mu + 2`` on the lattice grid."""
    bw = A.A.bandwidth()
    if check_grid:
        grid = np.array(A.lattice.grid)
        bad = [mu for mu in range(A.lattice.n) if bw[mu] > 0 and grid[mu] < 2 * bw[mu] + 2]
        if bad:
            raise GridError(f"grid {A.lattice.grid} too small for bandwidth {tuple(bw)} on axes {bad}")
    return ext_d(A.A) + A.A.wedge(A.A)


# --------------------------------------------------------------------------
# splitting on Y x S^1
# --------------------------------------------------------------------------

@dataclass
class SplitConnection:
    """``A = A_Y + chi dt`` on a product lattice; ``A_Y`` has spatial form axes."""

    A_Y: Connection
    chi: BandLimitedField

    def __post_init__(self):
        lat = self.A_Y.lattice
        if lat.time_axis is None:
            raise LatticeError("split connection needs a time axis")
        if self.A_Y.form_axes != lat.spatial_axes or self.chi.form_axes != lat.spatial_axes:
            raise LatticeError("A_Y and chi must use the spatial form axes")

    @property
    def lattice(self):
        return self.A_Y.lattice

    def dA_dt(self) -> BandLimitedField:
        return self.A_Y.A.partial(self.lattice.time_axis)

    def curvature_parts(self):
        """``(F_{Y, A_Y}, d_{Y,A_Y} chi - dA_Y/dt)``."""
        F_Y = curvature(self.A_Y, check_grid=False)
        E = cov_d(self.A_Y, self.chi) - self.dA_dt()
        return F_Y, E

    def curvature_from_parts(self) -> BandLimitedField:
        """Curvature assembled as ``F_Y + (d chi - dA_Y/dt) ^ dt``."""
        F_Y, E = self.curvature_parts()
        full = self.lattice.axes
        dt = dt_form(self.lattice)
        return F_Y.embed_axes(full) + E.embed_axes(full).wedge(dt)


def split(A: Connection) -> SplitConnection:
    lat = A.lattice
    if lat.time_axis is None:
        raise LatticeError("lattice has no time axis")
    if A.form_axes != lat.axes:
        raise LatticeError("connection must have all lattice axes as form axes")
    sp = lat.spatial_axes
    A_Y = A.A.restrict_axes(sp)
    ti = A.form_axes.index(lat.time_axis)
    chi = BandLimitedField(lat, 0, A.rank, A.A.freqs, A.A.coeffs[:, ti : ti + 1], sp, merge=False)
    return SplitConnection(Connection(A_Y, check=False), chi)


def assemble(sc: SplitConnection) -> Connection:
    lat = sc.lattice
    full = lat.axes
    A = sc.A_Y.A.embed_axes(full)
    ti = full.index(lat.time_axis)
    c = np.zeros((len(sc.chi.freqs), len(full), sc.chi.m, sc.chi.m), complex)
    c[:, ti] = sc.chi.coeffs[:, 0]
    return Connection(A + BandLimitedField(lat, 1, sc.chi.rank, sc.chi.freqs, c, full), check=False)


# --------------------------------------------------------------------------
# integration and periodicity
# --------------------------------------------------------------------------

def integrate(f: BandLimitedField):
    """Integral of a scalar/matrix field or of a top-degree form over the torus."""
    if f.degree not in (0, f.lattice.n) or (f.degree and f.form_axes != f.lattice.axes):
        raise LatticeError("integrate needs a function or a top-degree form on all axes")
    c = f.constant_part()[0] * f.lattice.volume
    return complex(c[0, 0]) if f.rank is None else c


@dataclass
class PeriodicityReport:
    defects: list  # per derivative order k
    max_defect: float
    passed: bool
    tol: float


def _one_sided_weights(order: int, npts: int, h: float, side: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at an endpoint."""
    x = side * h * np.arange(npts)
    A = np.vander(x, npts, increasing=True).T
    b = np.zeros(npts)
    b[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(A, b)


def check_periodicity(samples, K: int = 3, tol: float = 1e-8, accuracy: int | None = None) -> PeriodicityReport:
    """Compare one-sided derivatives at ``t = 0`` and ``t = 2 pi``.

    ``samples`` has shape ``(J + 1, ...)`` on the uniform grid of ``[0, 2 pi]``
    including both endpoints.
    """
    s = np.asarray(samples)
    J = s.shape[0] - 1
    acc = K + 2 if accuracy is None else max(accuracy, K + 1)
    if J < 1:
        raise LatticeError("need at least two samples")
    h = TWO_PI / J
    defects = []
    for k in range(K + 1):
        npts = k + acc
        if npts > J + 1:
            raise LatticeError(f"too few samples ({J + 1}) for derivative order {k}")
        wl = _one_sided_weights(k, npts, h, +1)
        wr = _one_sided_weights(k, npts, h, -1)
        sl, sr = s[:npts], s[::-1][:npts]
        if k > 0:  # weights sum to zero; differencing removes their rounding error on constants
            sl, sr = sl - sl[0], sr - sr[0]
        left = np.tensordot(wl, sl, axes=1)
        right = np.tensordot(wr, sr, axes=1)
        defects.append(float(np.max(np.abs(left - right))) if s.size else 0.0)
    mx = max(defects)
    return PeriodicityReport(defects, mx, mx < tol, tol)


# --------------------------------------------------------------------------
# random and special fields
# --------------------------------------------------------------------------

def _random_freqs(rng, lattice, bandwidth, n_modes, active_axes=None):
    bw = np.broadcast_to(np.asarray(bandwidth), (lattice.n,)).astype(int)
    if active_axes is not None:
        mask = np.zeros(lattice.n, bool)
        mask[list(active_axes)] = True
        bw = np.where(mask, bw, 0)
    return np.stack([rng.integers(-b, b + 1, size=n_modes) for b in bw], axis=1)


def random_field(
    rng,
    lattice,
    degree=0,
    rank=None,
    bandwidth=1,
    n_modes=4,
    form_axes=None,
    amplitude=1.0,
    symmetry=None,
    active_axes=None,
):
    """Random band-limited field with ``n_modes`` random frequencies.

    ``symmetry`` is ``None``, ``"real"`` (real scalar values), or
    ``"antihermitian"`` / ``"hermitian"`` (matrix values).
    """
    fa = tuple(lattice.axes if form_axes is None else form_axes)
    ncomp = len(basis(len(fa), degree))
    m = 1 if rank is None else rank
    freqs = _random_freqs(rng, lattice, bandwidth, n_modes, active_axes)
    c = amplitude * (rng.normal(size=(n_modes, ncomp, m, m)) + 1j * rng.normal(size=(n_modes, ncomp, m, m)))
    f = BandLimitedField(lattice, degree, rank, freqs, c / np.sqrt(2 * n_modes), fa)
    if symmetry == "real":
        f = 0.5 * (f + f.conj())
    elif symmetry == "antihermitian":
        f = f.antihermitian_part()
    elif symmetry == "hermitian":
        f = 0.5 * (f + f.adjoint())
    return f.compress()


def random_connection(rng, lattice, rank, bandwidth=1, n_modes=4, form_axes=None, amplitude=1.0, active_axes=None):
    A = random_field(
        rng, lattice, 1, rank, bandwidth, n_modes, form_axes, amplitude, "antihermitian", active_axes
    )
    return Connection(A, check=False)


def flat_connection(lattice, angles, basis_change=None, form_axes=None) -> Connection:
    """Constant commuting connection ``A_mu = i V diag(angles[mu]) V^*``.

    Its holonomy around axis ``mu`` is ``V diag(exp(-2 pi i angles[mu])) V^*``.
    """
    fa = tuple(lattice.axes if form_axes is None else form_axes)
    angles = np.asarray(angles, float)
    if angles.shape[0] != len(fa):
        raise LatticeError("need one angle vector per form axis")
    m = angles.shape[1]
    V = np.eye(m) if basis_change is None else np.asarray(basis_change, complex)
    vals = np.array([V @ np.diag(1j * a) @ V.conj().T for a in angles])
    return Connection(BandLimitedField.constant(lattice, vals, 1, m, fa), check=False)
