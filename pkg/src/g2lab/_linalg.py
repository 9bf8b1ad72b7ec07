"""Batched matrix functions: Hermitian square root, polar factor, exponentials."""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla

__all__ = [
    "MatrixError",
    "hermitian_sqrt",
    "sqrt_derivative",
    "polar_unitary",
    "polar_derivative",
    "expm_antihermitian",
    "dexp_antihermitian",
    "logm_unitary",
    "dagger",
    "unitarity_defect",
    "random_unitary",
]


class MatrixError(ValueError):
    """Matrix outside the domain of a matrix function."""


def dagger(X):
    return np.conj(np.swapaxes(X, -1, -2))


def _check_hermitian(H, tol=1e-10):
    H = np.asarray(H, complex)
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    if np.abs(H - dagger(H)).max(initial=0.0) > tol * scale:
        raise MatrixError("matrix is not Hermitian")
    return 0.5 * (H + dagger(H))


def hermitian_sqrt(H):
    """Unique positive-definite square root of a positive-definite Hermitian matrix."""
    H = _check_hermitian(H)
    lam, V = np.linalg.eigh(H)
    if np.any(lam <= 0):
        raise MatrixError(f"matrix is not positive definite (min eigenvalue {lam.min():.3e})")
    return (V * np.sqrt(lam)[..., None, :]) @ dagger(V)


def sqrt_derivative(H, dH):
    """Solve ``h dh + dh h = dH`` with ``h = sqrt(H)``."""
    H = _check_hermitian(H)
    dH = np.asarray(dH, complex)
    lam, V = np.linalg.eigh(H)
    if np.any(lam <= 0):
        raise MatrixError("matrix is not positive definite")
    r = np.sqrt(lam)
    X = dagger(V) @ dH @ V
    X = X / (r[..., :, None] + r[..., None, :])
    return V @ X @ dagger(V)


def polar_unitary(N, cond_max: float = 1e12):
    """``P(N) = sqrt(N N^*) (N^*)^{-1}``, the unitary factor in ``N = sqrt(N N^*) P(N)``.

    Computed as ``(N^{-1} h)^*`` with ``h = sqrt(N N^*)``.
    """
    N = np.asarray(N, complex)
    s = np.linalg.svd(N, compute_uv=False)
    if np.any(s[..., -1] <= s[..., 0] / cond_max):
        raise MatrixError("matrix is singular or too ill-conditioned for the polar map")
    h = hermitian_sqrt(N @ dagger(N))
    return dagger(np.linalg.solve(N, h))


def polar_derivative(N, dN):
    """Directional derivative of :func:`polar_unitary` at ``N`` along ``dN``."""
    N = np.asarray(N, complex)
    dN = np.asarray(dN, complex)
    NN = N @ dagger(N)
    h = hermitian_sqrt(NN)
    dh = sqrt_derivative(NN, dN @ dagger(N) + N @ dagger(dN))
    Ninv_star = dagger(np.linalg.inv(N))
    return dh @ Ninv_star - h @ Ninv_star @ dagger(dN) @ Ninv_star


def expm_antihermitian(X):
    """``exp(X)`` for anti-Hermitian ``X`` through the eigenbasis of ``iX`` (exactly unitary)."""
    X = np.asarray(X, complex)
    H = 0.5j * (X - dagger(X))
    lam, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * lam)[..., None, :]) @ dagger(V)


def dexp_antihermitian(X, dX):
    """``d/ds exp(X + s dX)`` at ``s = 0`` for anti-Hermitian ``X``."""
    X = np.asarray(X, complex)
    H = 0.5j * (X - dagger(X))
    lam, V = np.linalg.eigh(H)
    mu = -1j * lam  # eigenvalues of X
    e = np.exp(mu)
    diff = mu[..., :, None] - mu[..., None, :]
    num = e[..., :, None] - e[..., None, :]
    close = np.abs(diff) < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        Phi = np.where(close, np.exp(0.5 * (mu[..., :, None] + mu[..., None, :])) * (1 + diff**2 / 24), num / diff)
    Y = dagger(V) @ dX @ V
    return V @ (Phi * Y) @ dagger(V)


def logm_unitary(U):
    """Principal anti-Hermitian logarithm of a unitary matrix (eigenvalues in (-pi, pi])."""
    U = np.asarray(U, complex)
    if U.ndim == 2:
        T, Z = sla.schur(U, output="complex")
        d = np.diag(T)
        L = Z @ np.diag(1j * np.angle(d)) @ Z.conj().T
        return 0.5 * (L - L.conj().T)
    out = np.empty_like(U)
    for idx in np.ndindex(U.shape[:-2]):
        out[idx] = logm_unitary(U[idx])
    return out


def unitarity_defect(U) -> float:
    U = np.asarray(U, complex)
    m = U.shape[-1]
    return float(np.abs(dagger(U) @ U - np.eye(m)).max(initial=0.0))


def random_unitary(rng, m, size=None):
    """Haar-distributed unitary matrices."""
    shape = () if size is None else (size,) if np.ndim(size) == 0 else tuple(size)
    Z = (rng.normal(size=shape + (m, m)) + 1j * rng.normal(size=shape + (m, m))) / np.sqrt(2)
    Q, R = np.linalg.qr(Z)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    return Q * (d / np.abs(d))[..., None, :]
