"""Numpy implementations of the hot kernels.

Same signatures and error behaviour as the compiled ``_kernels`` module;
used when the extension is not built or ``DNL_PURE_PYTHON`` is set.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateNormalizerError

KRONECKER = 0
SCALED_DOT = 1
GAUSSIAN = 2

_EPS = np.finfo(np.float64).eps


def start_vector(n: int) -> np.ndarray:
    # all-ones plus a small ramp: a pure all-ones start is orthogonal to the
    # top singular vector of symmetric patterns such as [[1.5, -.5], [-.5, 1.5]]
    x = 1.0 + 0.5 * np.arange(n) / n
    return x / np.linalg.norm(x)


def _fallback_starts(n: int):
    alt = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    yield alt / np.linalg.norm(alt)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        yield e


def spectral_norms(stack, tol: float = 1e-12, max_iter: int = 10000):
    """Power iteration on M^T M for every matrix of a (m, n, n) stack.

    Returns ``(sigma, u, v, iterations)`` with ``M v = sigma u``.
    """
    stack = np.asarray(stack, dtype=np.float64)
    m, n = stack.shape[0], stack.shape[-1]
    gram = np.einsum("kji,kjl->kil", stack, stack)
    x = np.tile(start_vector(n), (m, 1))
    y = np.einsum("kij,kj->ki", gram, x)
    ynorm = np.linalg.norm(y, axis=1)

    sigma = np.zeros(m)
    iters = np.zeros(m, dtype=np.int64)
    dead = ynorm == 0.0
    if dead.any():
        for k in np.flatnonzero(dead):
            if not gram[k].any():
                continue
            for cand in _fallback_starts(n):
                if np.linalg.norm(gram[k] @ cand) > 0.0:
                    x[k] = cand
                    dead[k] = False
                    break
    zero = dead.copy()
    active = np.flatnonzero(~zero)
    if active.size:
        sigma[active] = np.linalg.norm(
            np.einsum("kij,kj->ki", stack[active], x[active]), axis=1
        )
    it = 0
    while active.size and it < max_iter:
        it += 1
        g = gram[active]
        y = np.einsum("kij,kj->ki", g, x[active])
        xa = y / np.linalg.norm(y, axis=1)[:, None]
        x[active] = xa
        s_new = np.linalg.norm(np.einsum("kij,kj->ki", stack[active], xa), axis=1)
        done = np.abs(s_new - sigma[active]) <= tol * s_new
        sigma[active] = s_new
        iters[active] = it
        active = active[~done]

    u = np.zeros((m, n))
    nz = sigma > 0.0
    if nz.any():
        u[nz] = np.einsum("kij,kj->ki", stack[nz], x[nz]) / sigma[nz, None]
    x[zero] = 0.0
    return sigma, u, x, iters


def _logits(kind, T1, T2, Z):
    n = Z.shape[-1]
    if kind == SCALED_DOT:
        if T1.ndim == 2:
            q = Z @ T1.T
            k = Z @ T2.T
        else:
            q = np.einsum("rij,rj->ri", T1, Z)
            k = np.einsum("rij,rj->ri", T2, Z)
        return q[:, :, None] * k[:, None, :] / np.sqrt(n)
    return Z[:, :, None] * Z[:, None, :]


def transform_rows(kind: int, T1, T2, T3, Z) -> np.ndarray:
    """Apply the non-local transformation to every row of ``Z``.

    ``T1..T3`` are either shared (n, n) matrices or per-row (m, n, n) stacks.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if T3.ndim == 2:
        v = Z @ T3.T
    else:
        v = np.einsum("rij,rj->ri", T3, Z)
    if kind == KRONECKER:
        return v
    S = _logits(kind, T1, T2, Z)
    with np.errstate(invalid="ignore", over="ignore"):
        S = S - S.max(axis=-1, keepdims=True)
        E = np.exp(S)
        norm = E.sum(axis=-1)
    if not np.all(norm > _EPS):
        raise DegenerateNormalizerError("softmax normalizer vanished or is not finite")
    return np.einsum("rij,rj->ri", E, v) / norm


def history_sum(kind: int, T1, T2, T3, X, W, c, weights) -> np.ndarray:
    """sum_k weights[k] * (W[k] A(T; X[k]) + c[k]) for a shared T."""
    if X.shape[0] == 0:
        return np.zeros(X.shape[-1])
    A = transform_rows(kind, T1, T2, T3, X)
    return np.einsum("k,kij,kj->i", weights, W, A) + weights @ c
