"""Small dense real linear algebra used throughout the package.

Vectors are 1-d float64 arrays of length ``n``; matrices are ``(n, n)``
float64 arrays. The matrix norm everywhere is the spectral norm.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _backend
from .errors import InvalidInputError

SPECTRAL_TOL = 1e-12
SPECTRAL_MAX_ITER = 10_000


def as_vector(x, n: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError(f"expected a non-empty vector, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise InvalidInputError(f"expected length {n}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vector has non-finite entries")
    return v


def as_matrix(m, n: int | None = None) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.size == 0:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    if n is not None and a.shape[0] != n:
        raise InvalidInputError(f"expected {n}x{n}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    return a


def spectral_norm(m) -> float:
    """Largest singular value of a square matrix via power iteration on m^T m."""
    return float(leading_singular_pairs(as_matrix(m)[None])[0][0])


def spectral_norms(stack) -> np.ndarray:
    """Spectral norm of every matrix in a ``(..., n, n)`` stack."""
    return leading_singular_pairs(stack)[0]


def leading_singular_pairs(stack):
    """Return ``(sigma, u, v)`` with ``M v = sigma u`` for each matrix.

    ``u v^T`` is the gradient of the spectral norm wherever the top singular
    value is simple.
    """
    a = np.asarray(stack, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InvalidInputError(f"expected a stack of square matrices, got {a.shape}")
    lead = a.shape[:-2]
    n = a.shape[-1]
    flat = np.ascontiguousarray(a.reshape(-1, n, n))
    if flat.shape[0] == 0:
        return np.zeros(lead), np.zeros(lead + (n,)), np.zeros(lead + (n,))
    if not np.all(np.isfinite(flat)):
        raise InvalidInputError("matrix stack has non-finite entries")
    # iterate on M / max|M_ij|: the squared norms inside the iteration would
    # underflow for entries below ~1e-75 and overflow above ~1e75
    scale = np.abs(flat).max(axis=(1, 2))
    safe = np.where(scale > 0.0, scale, 1.0)
    sigma, u, v, _ = _backend.spectral_norms(flat / safe[:, None, None], SPECTRAL_TOL, SPECTRAL_MAX_ITER)
    sigma = sigma * safe
    return sigma.reshape(lead), u.reshape(lead + (n,)), v.reshape(lead + (n,))


def norm_gradients(stack):
    """``(sigma, u v^T, gap)`` for every matrix, singular vectors from LAPACK.

    Power-iteration vectors are only accurate to about the square root of the
    value tolerance, too coarse for gradients. ``gap`` is the relative
    separation of the two largest singular values (0 for a repeated top).
    """
    a = np.asarray(stack, dtype=np.float64)
    sigma = leading_singular_pairs(a)[0]
    u, s, vt = np.linalg.svd(a)
    outer = u[..., :, 0, None] * vt[..., None, 0, :]
    outer = np.where(sigma[..., None, None] > 0.0, outer, 0.0)
    if a.shape[-1] > 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            gap = np.where(s[..., 0] > 0.0, (s[..., 0] - s[..., 1]) / s[..., 0], 1.0)
    else:
        gap = np.ones(a.shape[:-2])
    return sigma, outer, gap


def vec_norm(x) -> float:
    return float(np.linalg.norm(np.asarray(x, dtype=np.float64)))


def matvec(m, x) -> np.ndarray:
    a = as_matrix(m)
    return a @ as_vector(x, a.shape[0])


def affine_map(pairs: Sequence[tuple], inputs: Sequence) -> np.ndarray:
    """sum_k (M^k x^k + v^k) over matching (matrix, vector) pairs and inputs."""
    if len(pairs) == 0 or len(pairs) != len(inputs):
        raise InvalidInputError(
            f"need as many inputs as pairs (>= 1), got {len(pairs)} pairs and {len(inputs)} inputs"
        )
    n = np.asarray(pairs[0][0]).shape[0]
    out = np.zeros(n)
    for (mk, vk), xk in zip(pairs, inputs):
        out += as_matrix(mk, n) @ as_vector(xk, n) + as_vector(vk, n)
    return out


# Activations: all increasing, 1-Lipschitz and zero at zero.
ACTIVATIONS = ("relu", "tanh", "identity")


def activate(name: str, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "identity":
        return np.asarray(x, dtype=np.float64).copy()
    raise InvalidInputError(f"unknown activation {name!r}")


def activate_grad(name: str, x):
    """Derivative of the activation; relu uses 0 at the kink."""
    if name == "relu":
        return (np.asarray(x) > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - np.tanh(x) ** 2
    if name == "identity":
        return np.ones_like(np.asarray(x, dtype=np.float64))
    raise InvalidInputError(f"unknown activation {name!r}")


def activation_lipschitz(name: str) -> float:
    if name not in ACTIVATIONS:
        raise InvalidInputError(f"unknown activation {name!r}")
    return 1.0
