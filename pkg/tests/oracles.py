"""Dense-tensor reference implementations used as independent checks."""

import itertools
import math

import numpy as np

from g2lab.exterior import AlgebraicForm, basis


def parity(p):
    p = list(p)
    s = 1
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            s = -s
    return s


def to_tensor(a: AlgebraicForm) -> np.ndarray:
    """Fully antisymmetric tensor T with T[idx] = coefficient for increasing idx."""
    n, k = a.n, a.degree
    T = np.zeros((n,) * k, complex)
    for idx, c in a.coeffs.items():
        for p in itertools.permutations(range(k)):
            T[tuple(idx[i] for i in p)] += parity(p) * c
    return T


def from_tensor(T: np.ndarray, n: int, k: int) -> AlgebraicForm:
    return AlgebraicForm.from_array(n, k, np.array([T[i] if k else T[()] for i in basis(n, k)]))


def antisymmetrize(T):
    k = T.ndim
    out = np.zeros_like(T)
    for p in itertools.permutations(range(k)):
        out += parity(p) * np.transpose(T, p)
    return out / math.factorial(k)


def wedge_tensor(a: AlgebraicForm, b: AlgebraicForm) -> AlgebraicForm:
    k, l = a.degree, b.degree
    T = np.multiply.outer(to_tensor(a), to_tensor(b))
    W = antisymmetrize(T) * math.factorial(k + l) / (math.factorial(k) * math.factorial(l))
    return from_tensor(W, a.n, k + l)


def levi_civita(n):
    E = np.zeros((n,) * n)
    for p in itertools.permutations(range(n)):
        E[p] = parity(p)
    return E


def star_tensor(a: AlgebraicForm, g: np.ndarray) -> AlgebraicForm:
    """(*a)_{j..} = sqrt(det g) / k! a^{i..} eps_{i.. j..}."""
    n, k = a.n, a.degree
    gi = np.linalg.inv(g)
    T = to_tensor(a)
    for ax in range(k):
        T = np.moveaxis(np.tensordot(gi, T, axes=([1], [ax])), 0, ax)
    E = levi_civita(n) * np.sqrt(np.linalg.det(g))
    S = np.tensordot(T, E, axes=(list(range(k)), list(range(k)))) / math.factorial(k)
    return from_tensor(S, n, n - k)


def random_form(rng, n, k, rank=None):
    size = (len(basis(n, k)),) + (() if rank is None else (rank, rank))
    return AlgebraicForm.from_array(n, k, rng.normal(size=size) + 1j * rng.normal(size=size))


def random_spd(rng, n):
    X = rng.normal(size=(n, n))
    return X @ X.T + n * np.eye(n)
