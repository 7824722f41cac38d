"""Parametrized non-local transformations and their growth/Lipschitz envelopes.

For a state ``z`` and matrices ``(xi1, xi2, xi3)`` the transformation is

    A(z)[i] = sum_j kappa(i, j) (xi3 z)[j] / sum_j kappa(i, j)

with one of three kernels:

* ``kronecker``           kappa = delta_ij, so A(z) = xi3 z (a DenseNet layer)
* ``scaled-dot-softmax``  kappa = exp((xi1 z)[i] (xi2 z)[j] / sqrt(n))
* ``gaussian-softmax``    kappa = exp(z[i] z[j]), independent of xi1, xi2
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import InvalidInputError
from .linalg import as_matrix, as_vector, spectral_norm


class KernelFamily(str, enum.Enum):
    KRONECKER = "kronecker"
    SCALED_DOT = "scaled-dot-softmax"
    GAUSSIAN = "gaussian-softmax"

    @property
    def code(self) -> int:
        return _CODES[self]

    @classmethod
    def parse(cls, value) -> "KernelFamily":
        try:
            return cls(value)
        except ValueError:
            raise InvalidInputError(
                f"unknown kernel {value!r}; choose from {[k.value for k in cls]}"
            ) from None


_CODES = {KernelFamily.KRONECKER: 0, KernelFamily.SCALED_DOT: 1, KernelFamily.GAUSSIAN: 2}


@dataclass(frozen=True)
class TransformParams:
    xi1: np.ndarray
    xi2: np.ndarray
    xi3: np.ndarray

    def __post_init__(self):
        n = as_matrix(self.xi3).shape[0]
        for name in ("xi1", "xi2", "xi3"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), n))

    @property
    def n(self) -> int:
        return self.xi3.shape[0]

    def norm(self) -> float:
        """max of the three spectral norms."""
        return max(spectral_norm(self.xi1), spectral_norm(self.xi2), spectral_norm(self.xi3))


def apply_transform(kernel: KernelFamily, p: TransformParams, z) -> np.ndarray:
    z = as_vector(z, p.n)
    return _backend.transform_rows(kernel.code, p.xi1, p.xi2, p.xi3, z[None, :])[0]


def apply_transform_batch(kernel: KernelFamily, T1, T2, T3, Z) -> np.ndarray:
    """Transform every row of ``Z`` (m, n); ``T*`` shared (n, n) or per-row (m, n, n)."""
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    return _backend.transform_rows(kernel.code, T1, T2, T3, Z)


def growth_bound(kernel: KernelFamily, p: TransformParams) -> float:
    g = spectral_norm(p.xi3)
    if kernel is KernelFamily.KRONECKER:
        return g
    return math.sqrt(p.n) * g


def lipschitz_bound(kernel: KernelFamily, p: TransformParams, z, z2) -> float:
    """Local Lipschitz modulus at (p, z) against any (p', z2)."""
    z = as_vector(z, p.n)
    z2 = as_vector(z2, p.n)
    nz, nz2 = float(np.linalg.norm(z)), float(np.linalg.norm(z2))
    rn = math.sqrt(p.n)
    if kernel is KernelFamily.KRONECKER:
        return spectral_norm(p.xi3) + nz2
    xi = p.norm()
    if kernel is KernelFamily.SCALED_DOT:
        return rn * max(
            xi**2 * nz**3,
            xi**3 * (nz**2 + nz * nz2) + xi,
            xi**2 * nz**2 * nz2,
            nz2,
        )
    return max(xi * nz * (nz + nz2) + rn * xi, rn * nz2)


def transform_vjp(kernel: KernelFamily, T1, T2, T3, Z, G):
    """Vector-Jacobian product of the batched transform with shared ``T``.

    Returns ``(dT1, dT2, dT3, dZ)`` where the ``dT`` are summed over rows.
    """
    n = Z.shape[-1]
    V = Z @ T3.T
    if kernel is KernelFamily.KRONECKER:
        return np.zeros_like(T1), np.zeros_like(T2), G.T @ Z, G @ T3
    if kernel is KernelFamily.SCALED_DOT:
        Q = Z @ T1.T
        K = Z @ T2.T
        S = Q[:, :, None] * K[:, None, :] / math.sqrt(n)
    else:
        S = Z[:, :, None] * Z[:, None, :]
    S = S - S.max(axis=-1, keepdims=True)
    P = np.exp(S)
    P /= P.sum(axis=-1, keepdims=True)
    dV = np.einsum("rij,ri->rj", P, G)
    dP = G[:, :, None] * V[:, None, :]
    dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True))
    dT3 = dV.T @ Z
    dZ = dV @ T3
    if kernel is KernelFamily.SCALED_DOT:
        dQ = np.einsum("rij,rj->ri", dS, K) / math.sqrt(n)
        dK = np.einsum("rij,ri->rj", dS, Q) / math.sqrt(n)
        dZ = dZ + dQ @ T1 + dK @ T2
        return dQ.T @ Z, dK.T @ Z, dT3, dZ
    dZ = dZ + np.einsum("rij,rj->ri", dS, Z) + np.einsum("rij,ri->rj", dS, Z)
    return np.zeros_like(T1), np.zeros_like(T2), dT3, dZ
