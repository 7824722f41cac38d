"""The L-layer dense non-local network.

Layer ``l`` sees the transformed input and every earlier state through
tau-scaled affine maps, tau = 1/L:

    x^0 = V^0 phi(U^0 A(T^0; d) + a^0) + b^0
    x^l = V^l phi(U^l A(T^l; d) + a^l
                  + tau sum_{k<l} [W^{l,k+1} A(T^l; x^k) + c^{l,k+1}]) + b^l

The dense weights ``W^{l,k}`` (1 <= k <= l <= L) are stored packed row by
row: row ``l`` holds ``k = 1..l`` contiguously.
"""

from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from .errors import InvalidInputError, NumericalOverflowError
from .linalg import (
    ACTIVATIONS, activate, activation_lipschitz, as_vector, leading_singular_pairs, norm_gradients,
)
from .transforms import KernelFamily, TransformParams, growth_bound

BLOCKS = ("T", "U", "a", "V", "b", "W", "c")
JSON_FORMAT = "dnl.discrete-params/1"


def tri_size(L: int) -> int:
    return L * (L + 1) // 2


def tri_index(l: int, k: int) -> int:
    """Packed position of the block (l, k), 1 <= k <= l."""
    return l * (l - 1) // 2 + (k - 1)


def tri_row(l: int) -> slice:
    return slice(l * (l - 1) // 2, l * (l + 1) // 2)


def tri_order(size: int) -> int:
    L = int(round((math.sqrt(8 * size + 1) - 1) / 2))
    if tri_size(L) != size or L < 1:
        raise InvalidInputError(f"{size} blocks do not form a triangular array")
    return L


@dataclass(frozen=True)
class NetConfig:
    kernel: KernelFamily = KernelFamily.KRONECKER
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "kernel", KernelFamily.parse(self.kernel))
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"activation must be one of {ACTIVATIONS}")

    @property
    def lipschitz(self) -> float:
        return activation_lipschitz(self.activation)


def _frozen(a, shape, name):
    arr = np.array(a, dtype=np.float64)
    if arr.shape != shape:
        raise InvalidInputError(f"block {name} has shape {arr.shape}, expected {shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteParams:
    """Learnable parameters of an L-layer network (also used for gradients)."""

    T: np.ndarray  # (3, L+1, n, n)
    U: np.ndarray  # (L+1, n, n)
    a: np.ndarray  # (L+1, n)
    V: np.ndarray  # (L+1, n, n)
    b: np.ndarray  # (L+1, n)
    W: np.ndarray  # (L(L+1)/2, n, n)
    c: np.ndarray  # (L(L+1)/2, n)

    def __post_init__(self):
        T = np.asarray(self.T)
        if T.ndim != 4 or T.shape[0] != 3:
            raise InvalidInputError(f"T must have shape (3, L+1, n, n), got {T.shape}")
        L, n = T.shape[1] - 1, T.shape[-1]
        if L < 1 or n < 1:
            raise InvalidInputError("need L >= 1 and n >= 1")
        m = tri_size(L)
        shapes = {
            "T": (3, L + 1, n, n), "U": (L + 1, n, n), "a": (L + 1, n),
            "V": (L + 1, n, n), "b": (L + 1, n), "W": (m, n, n), "c": (m, n),
        }
        for name in BLOCKS:
            object.__setattr__(self, name, _frozen(getattr(self, name), shapes[name], name))

    @property
    def L(self) -> int:
        return self.T.shape[1] - 1

    @property
    def n(self) -> int:
        return self.T.shape[-1]

    @property
    def tau(self) -> float:
        return 1.0 / self.L

    def transform_params(self, l: int) -> TransformParams:
        return TransformParams(self.T[0, l], self.T[1, l], self.T[2, l])

    def W_block(self, l: int, k: int) -> np.ndarray:
        return self.W[tri_index(l, k)]

    def c_block(self, l: int, k: int) -> np.ndarray:
        return self.c[tri_index(l, k)]

    def blocks(self) -> dict:
        return {name: getattr(self, name) for name in BLOCKS}

    def replace(self, **blocks) -> "DiscreteParams":
        return DiscreteParams(**{**self.blocks(), **blocks})

    # flat-vector view for optimisers and finite differences
    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, b).ravel() for b in BLOCKS])

    @classmethod
    def from_vector(cls, vec, n: int, L: int) -> "DiscreteParams":
        vec = np.asarray(vec, dtype=np.float64)
        shapes = _block_shapes(n, L)
        if vec.ndim != 1 or vec.size != sum(math.prod(s) for s in shapes.values()):
            raise InvalidInputError(f"vector of shape {vec.shape} does not match n={n}, L={L}")
        out, pos = {}, 0
        for name, shape in shapes.items():
            size = math.prod(shape)
            out[name] = vec[pos:pos + size].reshape(shape)
            pos += size
        return cls(**out)

    @classmethod
    def zeros(cls, n: int, L: int) -> "DiscreteParams":
        return cls(**{k: np.zeros(s) for k, s in _block_shapes(n, L).items()})

    @classmethod
    def random(cls, n: int, L: int, rng: np.random.Generator, scale: float = 0.1) -> "DiscreteParams":
        """Every scalar drawn from uniform(-scale, scale)."""
        return cls(**{k: rng.uniform(-scale, scale, s) for k, s in _block_shapes(n, L).items()})

    def __add__(self, other: "DiscreteParams") -> "DiscreteParams":
        return DiscreteParams(**{k: getattr(self, k) + getattr(other, k) for k in BLOCKS})

    def scaled(self, alpha: float) -> "DiscreteParams":
        return DiscreteParams(**{k: alpha * getattr(self, k) for k in BLOCKS})

    def allclose(self, other: "DiscreteParams", atol: float = 0.0) -> bool:
        return all(np.allclose(getattr(self, k), getattr(other, k), rtol=0.0, atol=atol) for k in BLOCKS)


def _block_shapes(n: int, L: int) -> dict:
    m = tri_size(L)
    return {
        "T": (3, L + 1, n, n), "U": (L + 1, n, n), "a": (L + 1, n),
        "V": (L + 1, n, n), "b": (L + 1, n), "W": (m, n, n), "c": (m, n),
    }


@dataclass(frozen=True, eq=False)
class DiscreteTrajectory:
    states: np.ndarray = field(repr=False)  # (L+1, n)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self) -> int:
        return self.states.shape[0]


def forward(cfg: NetConfig, p: DiscreteParams, d) -> DiscreteTrajectory:
    """Run the dense recurrence for one input and return x^0..x^L."""
    d = as_vector(d, p.n)
    kind = cfg.kernel.code
    L, tau = p.L, p.tau
    states = np.empty((L + 1, p.n))
    d_row = d[None, :]
    for l in range(L + 1):
        T1, T2, T3 = p.T[0, l], p.T[1, l], p.T[2, l]
        pre = p.U[l] @ _backend.transform_rows(kind, T1, T2, T3, d_row)[0] + p.a[l]
        if l > 0:
            row = tri_row(l)
            pre = pre + _backend.history_sum(
                kind, T1, T2, T3, states[:l], p.W[row], p.c[row], np.full(l, tau)
            )
        with np.errstate(over="ignore", invalid="ignore"):
            x = p.V[l] @ activate(cfg.activation, pre) + p.b[l]
        if not np.all(np.isfinite(x)):
            raise NumericalOverflowError(f"non-finite state at layer {l}", layer=l)
        states[l] = x
    return DiscreteTrajectory(states)


def param_norm(p: DiscreteParams) -> float:
    """max over all blocks of their spectral (matrices) or euclidean (vectors) norms."""
    mats = leading_singular_pairs(np.concatenate([p.T.reshape(-1, p.n, p.n), p.U, p.V, p.W]))[0]
    vecs = np.linalg.norm(np.concatenate([p.a, p.b, p.c]), axis=1)
    return float(max(mats.max(), vecs.max()))


@functools.lru_cache(maxsize=64)
def _flip_indices(L: int) -> np.ndarray:
    idx = _build_flip_indices(L)
    idx.setflags(write=False)
    return idx


def flip_indices(L: int) -> np.ndarray:
    """Packed-triangle source index of every entry of the (L+1) x (L+1) flipped grid."""
    return _flip_indices(int(L))


def _build_flip_indices(L: int) -> np.ndarray:
    idx = np.empty((L + 1, L + 1), dtype=np.intp)
    for l in range(L + 1):
        for k in range(L + 1):
            if l >= 1 and k >= 1:
                hi, lo = max(l, k), min(l, k)
            else:
                hi, lo = max(l, k, 1), 1
            idx[l, k] = tri_index(hi, lo)
    return idx


def flip(tri) -> np.ndarray:
    """Reflect a packed lower-triangular array into a symmetric (L+1) x (L+1) grid.

    Accepts a packed array of ``L(L+1)/2`` blocks or nested rows
    ``[[x11], [x21, x22], ...]``.
    """
    if isinstance(tri, (list, tuple)) and tri and isinstance(tri[0], (list, tuple)):
        for l, row in enumerate(tri, start=1):
            if len(row) != l:
                raise InvalidInputError(f"row {l} has {len(row)} entries, expected {l}")
        tri = np.array([x for row in tri for x in row], dtype=np.float64)
    tri = np.asarray(tri, dtype=np.float64)
    return tri[flip_indices(tri_order(tri.shape[0]))]


# ---------------------------------------------------------------- regularizers


class RepeatedSingularValueWarning(RuntimeWarning):
    pass


REPEATED_SIGMA_GAP = 1e-8


def _norms(stack, matrix: bool, norm: str, grad: bool = True):
    """Norms of a stack of blocks and d(norm)/d(block) (``None`` when not ``grad``)."""
    if not grad:
        if matrix and norm == "spectral":
            return leading_singular_pairs(stack)[0], None
        if matrix and norm == "frobenius":
            return np.sqrt(np.sum(stack**2, axis=(-2, -1))), None
        if not matrix:
            return np.linalg.norm(stack, axis=-1), None
    if matrix:
        if norm == "frobenius":
            s = np.sqrt(np.sum(stack**2, axis=(-2, -1)))
            with np.errstate(invalid="ignore", divide="ignore"):
                g = np.where(s[..., None, None] > 0, stack / s[..., None, None], 0.0)
            return s, g
        if norm != "spectral":
            raise InvalidInputError(f"unknown matrix norm {norm!r}")
        s, g, gap = norm_gradients(stack)
        if np.any((gap < REPEATED_SIGMA_GAP) & (s > 0.0)):
            warnings.warn("repeated top singular value: spectral-norm gradient is a subgradient; "
                          "consider norm='frobenius'", RepeatedSingularValueWarning, stacklevel=3)
        return s, g
    s = np.linalg.norm(stack, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(s[..., None] > 0, stack / s[..., None], 0.0)
    return s, g


def _reg_sequence(seq, matrix: bool, norm: str, grad: bool):
    seq = np.asarray(seq, dtype=np.float64)
    L = seq.shape[0] - 1
    tau = 1.0 / L
    s, g = _norms(seq[1:], matrix, norm, grad)
    diff = seq[1:] - seq[:-1]
    sd, gd = _norms(diff, matrix, norm, grad)
    value = tau * np.sum(s**2) + np.sum(sd**2) / tau
    if not grad:
        return float(value)
    ex = (slice(None),) + (None,) * (seq.ndim - 1)
    out = np.zeros_like(seq)
    out[1:] += 2 * tau * s[ex] * g
    gdiff = 2 / tau * sd[ex] * gd
    out[1:] += gdiff
    out[:-1] -= gdiff
    return float(value), out


def _reg_grid(grid, matrix: bool, norm: str, grad: bool):
    grid = np.asarray(grid, dtype=np.float64)
    L = grid.shape[0] - 1
    tau = 1.0 / L
    inner = grid[1:, 1:]
    s, g = _norms(inner, matrix, norm, grad)
    dl = grid[1:, 1:] - grid[:-1, 1:]
    dk = grid[1:, 1:] - grid[1:, :-1]
    sl, gl = _norms(dl, matrix, norm, grad)
    sk, gk = _norms(dk, matrix, norm, grad)
    value = tau**2 * np.sum(s**3) + (np.sum(sl**3) + np.sum(sk**3)) / tau
    if not grad:
        return float(value)
    ex = (slice(None), slice(None)) + (None,) * (grid.ndim - 2)
    out = np.zeros_like(grid)
    out[1:, 1:] += 3 * tau**2 * (s**2)[ex] * g
    g_l = 3 / tau * (sl**2)[ex] * gl
    g_k = 3 / tau * (sk**2)[ex] * gk
    out[1:, 1:] += g_l + g_k
    out[:-1, 1:] -= g_l
    out[1:, :-1] -= g_k
    return float(value), out


def reg1(seq, norm: str = "spectral") -> float:
    """tau sum_{l>=1} ||U^l||^2 + tau^-1 sum_{l>=1} ||U^l - U^{l-1}||^2 over L+1 matrices."""
    return _reg_sequence(seq, True, norm, False)


def reg2(seq) -> float:
    """Vector analogue of :func:`reg1`."""
    return _reg_sequence(seq, False, "spectral", False)


def reg3(grid, norm: str = "spectral") -> float:
    """tau^2 sum ||W||^3 plus tau^-1 times both-direction cubed differences over a flipped grid."""
    return _reg_grid(grid, True, norm, False)


def reg4(grid) -> float:
    return _reg_grid(grid, False, "spectral", False)


def reg_discrete(p: DiscreteParams, norm: str = "spectral") -> float:
    total = sum(reg1(p.T[j], norm) for j in range(3))
    total += reg1(p.U, norm) + reg2(p.a) + reg1(p.V, norm) + reg2(p.b)
    total += reg3(flip(p.W), norm) + reg4(flip(p.c))
    return float(total)


def reg_discrete_grad(p: DiscreteParams, norm: str = "spectral"):
    """Return ``(R_L, gradient)`` with the gradient packed as DiscreteParams.

    Spectral norms are differentiated through the leading singular pair
    (d||M|| = u v^T); ``norm="frobenius"`` swaps in the smooth surrogate.
    """
    total = 0.0
    gT = np.zeros_like(p.T)
    for j in range(3):
        v, gT[j] = _reg_sequence(p.T[j], True, norm, True)
        total += v
    vU, gU = _reg_sequence(p.U, True, norm, True)
    va, ga = _reg_sequence(p.a, False, norm, True)
    vV, gV = _reg_sequence(p.V, True, norm, True)
    vb, gb = _reg_sequence(p.b, False, norm, True)
    idx = flip_indices(p.L)
    vW, gWgrid = _reg_grid(p.W[idx], True, norm, True)
    vc, gcgrid = _reg_grid(p.c[idx], False, norm, True)
    gW = np.zeros_like(p.W)
    gc = np.zeros_like(p.c)
    np.add.at(gW, idx, gWgrid)
    np.add.at(gc, idx, gcgrid)
    total += vU + va + vV + vb + vW + vc
    return float(total), DiscreteParams(T=gT, U=gU, a=ga, V=gV, b=gb, W=gW, c=gc)


# ---------------------------------------------------------------- bounds / objective


def state_bound(cfg: NetConfig, p: DiscreteParams, d) -> float:
    """A-priori bound on every |x^l| in terms of ||Theta|| and the growth envelope."""
    d = as_vector(d, p.n)
    th = param_norm(p)
    lphi = cfg.lipschitz
    m_a = max(growth_bound(cfg.kernel, p.transform_params(l)) for l in range(p.L + 1))
    inner = lphi * th**2 * (m_a * np.linalg.norm(d) + 2) + th
    k = lphi * th**2 * m_a
    return float(k * inner * math.exp(k) + inner)


def objective(cfg: NetConfig, p: DiscreteParams, dataset, loss, reg_weight: float = 1.0,
              norm: str = "spectral") -> float:
    """Mean data loss of x^L over the dataset plus the regularizer."""
    finals = np.array([forward(cfg, p, d).final for d in dataset.inputs])
    data = loss.value(finals, dataset.targets)
    reg = reg_discrete(p, norm) if reg_weight else 0.0
    return float(data + reg_weight * reg)


# ---------------------------------------------------------------- serialization


def to_json(p: DiscreteParams) -> str:
    blocks = {
        "T1": p.T[0].ravel().tolist(), "T2": p.T[1].ravel().tolist(),
        "T3": p.T[2].ravel().tolist(),
        "U": p.U.ravel().tolist(), "a": p.a.ravel().tolist(),
        "V": p.V.ravel().tolist(), "b": p.b.ravel().tolist(),
        "W": p.W.ravel().tolist(), "c": p.c.ravel().tolist(),
    }
    return json.dumps({"format": JSON_FORMAT, "n": p.n, "L": p.L, "blocks": blocks}, indent=1)


def from_json(text: str) -> DiscreteParams:
    doc = json.loads(text)
    if doc.get("format") != JSON_FORMAT:
        raise InvalidInputError(f"not a {JSON_FORMAT} document")
    n, L = int(doc["n"]), int(doc["L"])
    bl = doc["blocks"]
    shapes = _block_shapes(n, L)

    def arr(key, shape):
        a = np.array(bl[key], dtype=np.float64)
        if a.size != math.prod(shape):
            raise InvalidInputError(f"block {key} has {a.size} entries, expected {math.prod(shape)}")
        return a.reshape(shape)

    mat = (L + 1, n, n)
    T = np.stack([arr("T1", mat), arr("T2", mat), arr("T3", mat)])
    return DiscreteParams(
        T=T, U=arr("U", mat), a=arr("a", shapes["a"]), V=arr("V", mat),
        b=arr("b", shapes["b"]), W=arr("W", shapes["W"]), c=arr("c", shapes["c"]),
    )
