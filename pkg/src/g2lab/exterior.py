"""Exterior algebra on a single oriented inner-product fiber.

Forms are stored sparsely: a map from strictly increasing index tuples
(0-based, lexicographic) to coefficients. A coefficient is either a complex
scalar or an ``m x m`` complex matrix, uniformly across one form. All signs
come from permutation parity.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "FormError",
    "MetricError",
    "FiberMetric",
    "AlgebraicForm",
    "basis",
    "basis_position",
    "perm_sign",
    "wedge",
    "hodge_star",
    "contract",
    "inner",
    "inner_norm",
    "linear_map_matrix",
    "bilinear_tensor",
]


class FormError(ValueError):
    """Dimension, degree or coefficient-rank mismatch between forms."""


class MetricError(ValueError):
    """Metric is not symmetric positive definite."""


@lru_cache(maxsize=None)
def basis(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    """Strictly increasing index tuples of length ``k`` in ``range(n)``."""
    if not 0 <= k <= n:
        raise FormError(f"degree {k} outside [0, {n}]")
    return tuple(combinations(range(n), k))


@lru_cache(maxsize=None)
def basis_position(n: int, k: int) -> dict[tuple[int, ...], int]:
    return {idx: i for i, idx in enumerate(basis(n, k))}


def perm_sign(seq) -> int:
    """Parity of the permutation sorting ``seq``; 0 if an entry repeats."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def _merge_sign(left: tuple[int, ...], right: tuple[int, ...]):
    """Sign and sorted union for ``e^left ^ e^right``."""
    s = perm_sign(left + right)
    if s == 0:
        return 0, ()
    return s, tuple(sorted(left + right))


class FiberMetric:
    """Constant metric ``g`` on the fiber together with an orientation sign."""

    def __init__(self, g, orientation: int = 1, tol: float = 1e-12):
        g = np.array(g, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise MetricError("metric must be a square matrix")
        if not np.allclose(g, g.T, atol=tol):
            raise MetricError("metric is not symmetric")
        eig = np.linalg.eigvalsh(g)
        if eig.min() <= tol * max(1.0, eig.max()):
            raise MetricError(f"metric is degenerate (min eigenvalue {eig.min():.3e})")
        if orientation not in (1, -1):
            raise MetricError("orientation must be +1 or -1")
        self.g = 0.5 * (g + g.T)
        self.orientation = orientation
        self.n = g.shape[0]
        self._minors: dict[int, np.ndarray] = {}

    @classmethod
    def euclidean(cls, n: int, orientation: int = 1) -> "FiberMetric":
        return cls(np.eye(n), orientation)

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    @property
    def volume_factor(self) -> float:
        return float(np.sqrt(np.linalg.det(self.g)))

    @property
    def is_euclidean(self) -> bool:
        return bool(np.array_equal(self.g, np.eye(self.n)))

    def inverse_minors(self, k: int) -> np.ndarray:
        """Matrix ``G[I, J] = det(g^{-1}[I, J])`` over degree-``k`` basis pairs."""
        if k not in self._minors:
            idx = basis(self.n, k)
            if k == 0:
                self._minors[k] = np.ones((1, 1))
            elif self.is_euclidean:
                self._minors[k] = np.eye(len(idx))
            else:
                ginv = self.inverse
                rows = np.array(idx)
                sub = ginv[rows[:, None, :, None], rows[None, :, None, :]]
                self._minors[k] = np.linalg.det(sub)
        return self._minors[k]

    def __repr__(self):
        return f"FiberMetric(n={self.n}, orientation={self.orientation})"


class AlgebraicForm:
    """Degree-``k`` form on an ``n``-dimensional fiber.

    ``coeffs`` maps strictly increasing 0-based index tuples to coefficients.
    ``rank`` is ``None`` for scalar coefficients and ``m`` for ``m x m``
    matrix coefficients.
    """

    __slots__ = ("n", "degree", "rank", "coeffs")

    def __init__(self, n: int, degree: int, coeffs: Mapping | None = None, rank: int | None = None):
        if not 0 <= degree <= n:
            raise FormError(f"degree {degree} outside [0, {n}]")
        self.n = n
        self.degree = degree
        self.rank = rank
        self.coeffs: dict[tuple[int, ...], object] = {}
        for idx, c in (coeffs or {}).items():
            idx = tuple(int(i) for i in idx)
            if len(idx) != degree or any(i < 0 or i >= n for i in idx):
                raise FormError(f"index {idx} invalid for degree {degree} on dimension {n}")
            s = perm_sign(idx)
            if s == 0:
                continue
            key = tuple(sorted(idx))
            c = self._check_coeff(c)
            prev = self.coeffs.get(key)
            self.coeffs[key] = s * c if prev is None else prev + s * c

    def _check_coeff(self, c):
        if self.rank is None:
            if np.ndim(c) != 0:
                raise FormError("matrix coefficient in a scalar form")
            return complex(c)
        c = np.asarray(c, dtype=complex)
        if c.shape != (self.rank, self.rank):
            raise FormError(f"coefficient shape {c.shape} != ({self.rank}, {self.rank})")
        return c

    # construction -----------------------------------------------------
    @classmethod
    def zero(cls, n: int, degree: int, rank: int | None = None) -> "AlgebraicForm":
        return cls(n, degree, {}, rank)

    @classmethod
    def monomial(cls, n: int, idx, coeff=1.0, rank: int | None = None) -> "AlgebraicForm":
        idx = tuple(idx)
        return cls(n, len(idx), {idx: coeff}, rank)

    @classmethod
    def from_array(cls, n: int, degree: int, arr) -> "AlgebraicForm":
        """Build from a component array ordered like ``basis(n, degree)``.

        A trailing ``(m, m)`` shape makes a matrix-valued form.
        """
        arr = np.asarray(arr, dtype=complex)
        idx = basis(n, degree)
        if arr.shape[0] != len(idx):
            raise FormError(f"expected {len(idx)} components, got {arr.shape[0]}")
        rank = None if arr.ndim == 1 else arr.shape[-1]
        return cls(n, degree, {i: arr[p] for p, i in enumerate(idx)}, rank)

    def to_array(self) -> np.ndarray:
        idx = basis(self.n, self.degree)
        shape = (len(idx),) if self.rank is None else (len(idx), self.rank, self.rank)
        out = np.zeros(shape, dtype=complex)
        pos = basis_position(self.n, self.degree)
        for key, c in self.coeffs.items():
            out[pos[key]] = c
        return out

    def coefficient(self, idx):
        idx = tuple(idx)
        s = perm_sign(idx)
        zero = 0j if self.rank is None else np.zeros((self.rank, self.rank), complex)
        if s == 0:
            return zero
        c = self.coeffs.get(tuple(sorted(idx)))
        return zero if c is None else s * c

    # arithmetic -------------------------------------------------------
    def _same_space(self, other: "AlgebraicForm"):
        if not isinstance(other, AlgebraicForm):
            raise FormError("operand is not an AlgebraicForm")
        if (self.n, self.degree, self.rank) != (other.n, other.degree, other.rank):
            raise FormError(
                f"incompatible forms: (n, k, rank) {(self.n, self.degree, self.rank)}"
                f" vs {(other.n, other.degree, other.rank)}"
            )

    def __add__(self, other):
        self._same_space(other)
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out[k] + c if k in out else c
        return AlgebraicForm(self.n, self.degree, out, self.rank)

    def __neg__(self):
        return AlgebraicForm(self.n, self.degree, {k: -c for k, c in self.coeffs.items()}, self.rank)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, s):
        if np.ndim(s) != 0:
            return NotImplemented
        return AlgebraicForm(self.n, self.degree, {k: s * c for k, c in self.coeffs.items()}, self.rank)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / s)

    def conj(self) -> "AlgebraicForm":
        return AlgebraicForm(self.n, self.degree, {k: np.conj(c) for k, c in self.coeffs.items()}, self.rank)

    @property
    def real(self) -> "AlgebraicForm":
        return AlgebraicForm(self.n, self.degree, {k: np.real(c) for k, c in self.coeffs.items()}, self.rank)

    @property
    def imag(self) -> "AlgebraicForm":
        return AlgebraicForm(self.n, self.degree, {k: np.imag(c) for k, c in self.coeffs.items()}, self.rank)

    def promote(self, m: int) -> "AlgebraicForm":
        """Scalar form times ``Id_m``."""
        if self.rank is not None:
            raise FormError("form already has matrix coefficients")
        eye = np.eye(m)
        return AlgebraicForm(self.n, self.degree, {k: c * eye for k, c in self.coeffs.items()}, m)

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(c))) for c in self.coeffs.values()), default=0.0)

    def allclose(self, other: "AlgebraicForm", atol: float = 1e-12) -> bool:
        return (self - other).max_abs() <= atol

    def embed(self, n_new: int, mapping) -> "AlgebraicForm":
        """Relabel index ``i`` as ``mapping[i]`` in an ``n_new``-dimensional fiber."""
        out = {tuple(mapping[i] for i in k): c for k, c in self.coeffs.items()}
        return AlgebraicForm(n_new, self.degree, out, self.rank)

    def __repr__(self):
        terms = []
        for k in sorted(self.coeffs):
            c = self.coeffs[k]
            if self.rank is None and abs(c) < 1e-15:
                continue
            label = "e^" + "".join(str(i) for i in k) if k else "1"
            terms.append(f"{c:.4g}*{label}" if self.rank is None else f"[M]*{label}")
        return f"AlgebraicForm(n={self.n}, k={self.degree}: " + (" + ".join(terms) or "0") + ")"


def _coeff_product(a, b, ra, rb, promote):
    if ra is None and rb is None:
        return a * b, None
    if ra is not None and rb is not None:
        if ra != rb:
            raise FormError(f"coefficient ranks differ: {ra} vs {rb}")
        return a @ b, ra
    if not promote:
        raise FormError("scalar/matrix wedge requires promote=True")
    return a * b, ra if ra is not None else rb


def wedge(alpha: AlgebraicForm, beta: AlgebraicForm, promote: bool = False) -> AlgebraicForm:
    """Graded product ``alpha ^ beta``; matrix coefficients multiply in order."""
    if alpha.n != beta.n:
        raise FormError(f"fiber dimensions differ: {alpha.n} vs {beta.n}")
    k = alpha.degree + beta.degree
    if k > alpha.n:
        raise FormError(f"degree {k} exceeds dimension {alpha.n}")
    if (alpha.rank is None) != (beta.rank is None) and not promote:
        raise FormError("scalar/matrix wedge requires promote=True")
    if alpha.rank is not None and beta.rank is not None and alpha.rank != beta.rank:
        raise FormError(f"coefficient ranks differ: {alpha.rank} vs {beta.rank}")
    rank = alpha.rank if alpha.rank is not None else beta.rank
    out: dict = {}
    for ka, ca in alpha.coeffs.items():
        for kb, cb in beta.coeffs.items():
            s, key = _merge_sign(ka, kb)
            if s == 0:
                continue
            c, _ = _coeff_product(ca, cb, alpha.rank, beta.rank, promote)
            out[key] = out[key] + s * c if key in out else s * c
    return AlgebraicForm(alpha.n, k, out, rank)


def _metric(g, n) -> FiberMetric:
    if g is None:
        return FiberMetric.euclidean(n)
    if not isinstance(g, FiberMetric):
        g = FiberMetric(g)
    if g.n != n:
        raise FormError(f"metric dimension {g.n} != form dimension {n}")
    return g


def _raise(alpha: AlgebraicForm, g: FiberMetric) -> dict:
    """Components of the metric dual multivector of ``alpha``."""
    if g.is_euclidean:
        return dict(alpha.coeffs)
    G = g.inverse_minors(alpha.degree)
    pos = basis_position(alpha.n, alpha.degree)
    idx = basis(alpha.n, alpha.degree)
    out: dict = {}
    for key, c in alpha.coeffs.items():
        col = G[:, pos[key]]
        for p in np.nonzero(np.abs(col) > 0)[0]:
            k2 = idx[p]
            out[k2] = out[k2] + col[p] * c if k2 in out else col[p] * c
    return out


def hodge_star(alpha: AlgebraicForm, g: FiberMetric | None = None) -> AlgebraicForm:
    """Complex-linear Hodge star: ``beta ^ *alpha = (beta, alpha)_g vol`` (bilinear pairing)."""
    g = _metric(g, alpha.n)
    n, k = alpha.n, alpha.degree
    full = tuple(range(n))
    vf = g.volume_factor * g.orientation
    out: dict = {}
    for key, c in _raise(alpha, g).items():
        comp = tuple(i for i in full if i not in key)
        s = perm_sign(key + comp) * vf
        out[comp] = out[comp] + s * c if comp in out else s * c
    return AlgebraicForm(n, n - k, out, alpha.rank)


def contract(beta: AlgebraicForm, alpha: AlgebraicForm, g: FiberMetric | None = None) -> AlgebraicForm:
    """Metric contraction ``beta -| alpha`` of degree ``deg alpha - deg beta``.

    Characterized by ``(beta -| alpha, gamma) = (alpha, beta ^ gamma)`` for the
    bilinear metric pairing; coefficients multiply as ``beta_I alpha_J``.
    """
    if beta.n != alpha.n:
        raise FormError(f"fiber dimensions differ: {beta.n} vs {alpha.n}")
    if beta.degree > alpha.degree:
        raise FormError(f"cannot contract degree {beta.degree} into degree {alpha.degree}")
    if (beta.rank is not None and alpha.rank is not None) and beta.rank != alpha.rank:
        raise FormError(f"coefficient ranks differ: {beta.rank} vs {alpha.rank}")
    g = _metric(g, alpha.n)
    rank = beta.rank if beta.rank is not None else alpha.rank
    out: dict = {}
    for kb, cb in _raise(beta, g).items():
        sb = set(kb)
        for ka, ca in alpha.coeffs.items():
            if not sb.issubset(ka):
                continue
            rest = tuple(i for i in ka if i not in sb)
            s = perm_sign(kb + rest)
            c, _ = _coeff_product(cb, ca, beta.rank, alpha.rank, True)
            out[rest] = out[rest] + s * c if rest in out else s * c
    res = AlgebraicForm(alpha.n, alpha.degree - beta.degree, out, rank)
    return res


def inner(beta: AlgebraicForm, alpha: AlgebraicForm, g: FiberMetric | None = None) -> complex:
    """Hermitian pointwise inner product ``<beta, alpha>``; matrices pair by ``Tr(B A^*)``."""
    if (beta.n, beta.degree) != (alpha.n, alpha.degree):
        raise FormError("inner product needs forms of equal dimension and degree")
    g = _metric(g, alpha.n)
    a = alpha.to_array()
    b = beta.to_array()
    G = g.inverse_minors(alpha.degree)
    if alpha.rank is None and beta.rank is None:
        return complex(b @ G @ np.conj(a))
    if alpha.rank is None or beta.rank is None:
        raise FormError("inner product between scalar and matrix forms")
    return complex(np.einsum("ij,ixy,jxy->", G, b, np.conj(a)))


def inner_norm(alpha: AlgebraicForm, g: FiberMetric | None = None) -> float:
    """``<alpha, alpha>`` (squared pointwise norm)."""
    return float(np.real(inner(alpha, alpha, g)))


# linear-algebra views used by the field code --------------------------------

def linear_map_matrix(fn: Callable[[AlgebraicForm], AlgebraicForm], n: int, k: int) -> np.ndarray:
    """Matrix of a scalar-linear map on degree-``k`` forms in the lexicographic basis."""
    cols = []
    out_deg = None
    for idx in basis(n, k):
        img = fn(AlgebraicForm.monomial(n, idx))
        if out_deg is None:
            out_deg = img.degree
        cols.append(img.to_array())
    return np.stack(cols, axis=1)


@lru_cache(maxsize=None)
def bilinear_tensor(n: int, k1: int, k2: int) -> np.ndarray:
    """``T[c, i, j]`` with ``(a ^ b)_c = sum T[c, i, j] a_i b_j``."""
    b1, b2 = basis(n, k1), basis(n, k2)
    pos = basis_position(n, k1 + k2)
    T = np.zeros((len(pos), len(b1), len(b2)))
    for i, ka in enumerate(b1):
        for j, kb in enumerate(b2):
            s, key = _merge_sign(ka, kb)
            if s:
                T[pos[key], i, j] = s
    return T
