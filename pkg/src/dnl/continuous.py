"""Continuous-depth limit: a nonlinear Volterra integral equation of the second kind.

    x(t) = V(t) phi(U(t) A(T(t); d) + a(t)
                    + int_0^t [W(t, s) A(T(t); x(s)) + c(t, s)] ds) + b(t)

solved by causal marching on a uniform grid. Parameter curves live on
[0, 1]; the surfaces ``W`` and ``c`` live on [0, 1]^2 and are symmetric.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _backend
from .discrete import NetConfig
from .errors import InvalidInputError, NumericalOverflowError, SolverStallError
from .linalg import activate, as_vector, leading_singular_pairs
from .transforms import KernelFamily

SUP_GRID = 4096
SURFACE_SUP_GRID = 64  # 64 x 64 = 4096 probe points on the square
FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 50
SCHEMES = ("left-rectangle", "trapezoid")


# ------------------------------------------------------------------ curves


class Curve:
    """A block-valued function on [0, 1] with an analytic t-derivative."""

    shape: tuple

    def __call__(self, t) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, t) -> np.ndarray:
        raise NotImplementedError


class Surface:
    """A block-valued function on [0, 1]^2 with analytic partial derivatives."""

    shape: tuple

    def __call__(self, t, s) -> np.ndarray:
        raise NotImplementedError

    def dt(self, t, s) -> np.ndarray:
        raise NotImplementedError

    def ds(self, t, s) -> np.ndarray:
        raise NotImplementedError


class ConstantCurve(Curve):
    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.shape = self.value.shape

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.broadcast_to(self.value, t.shape + self.shape).copy()

    def derivative(self, t):
        return np.zeros(np.shape(t) + self.shape)


class ConstantSurface(Surface):
    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.shape = self.value.shape

    def __call__(self, t, s):
        sh = np.broadcast_shapes(np.shape(t), np.shape(s))
        return np.broadcast_to(self.value, sh + self.shape).copy()

    def dt(self, t, s):
        return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(s)) + self.shape)

    ds = dt


class FunctionCurve(Curve):
    """Wrap vectorized callables ``f(t)`` and ``df(t)``."""

    def __init__(self, f: Callable, df: Callable, shape: tuple):
        self.f, self.df, self.shape = f, df, tuple(shape)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.broadcast_to(self.f(t), t.shape + self.shape).astype(np.float64)

    def derivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.broadcast_to(self.df(t), t.shape + self.shape).astype(np.float64)


class FunctionSurface(Surface):
    def __init__(self, f: Callable, dt: Callable, ds: Callable, shape: tuple):
        self.f, self._dt, self._ds, self.shape = f, dt, ds, tuple(shape)

    def _eval(self, fn, t, s):
        t, s = np.broadcast_arrays(np.asarray(t, dtype=np.float64), np.asarray(s, dtype=np.float64))
        return np.broadcast_to(fn(t, s), t.shape + self.shape).astype(np.float64)

    def __call__(self, t, s):
        return self._eval(self.f, t, s)

    def dt(self, t, s):
        return self._eval(self._dt, t, s)

    def ds(self, t, s):
        return self._eval(self._ds, t, s)


def basis(t, P: int):
    """Values and derivatives of 1, t, cos(pi t), sin(pi t), cos(2 pi t), ... (P terms)."""
    t = np.asarray(t, dtype=np.float64)
    val = np.empty(t.shape + (P,))
    der = np.empty(t.shape + (P,))
    val[..., 0], der[..., 0] = 1.0, 0.0
    if P > 1:
        val[..., 1], der[..., 1] = t, 1.0
    for p in range(2, P):
        m = p // 2
        w = m * math.pi
        if p % 2 == 0:
            val[..., p], der[..., p] = np.cos(w * t), -w * np.sin(w * t)
        else:
            val[..., p], der[..., p] = np.sin(w * t), w * np.cos(w * t)
    return val, der


class BasisCurve(Curve):
    """sum_p coeffs[p] * basis_p(t)."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=np.float64)
        self.P = self.coeffs.shape[0]
        self.shape = self.coeffs.shape[1:]
        self._flat = self.coeffs.reshape(self.P, -1)

    def _apply(self, f):
        return (f @ self._flat).reshape(f.shape[:-1] + self.shape)

    def __call__(self, t):
        return self._apply(basis(t, self.P)[0])

    def derivative(self, t):
        return self._apply(basis(t, self.P)[1])


class BasisSurface(Surface):
    """sum_{p,q} S[p, q] basis_p(t) basis_q(s) with S symmetric in (p, q)."""

    def __init__(self, coeffs):
        S = np.asarray(coeffs, dtype=np.float64)
        self.coeffs = 0.5 * (S + S.swapaxes(0, 1))
        self.P = S.shape[0]
        self.shape = S.shape[2:]

    def _eval(self, t, s, dt=False, ds=False):
        t, s = np.broadcast_arrays(np.asarray(t, dtype=np.float64), np.asarray(s, dtype=np.float64))
        ft = basis(t, self.P)[1 if dt else 0]
        fs = basis(s, self.P)[1 if ds else 0]
        k = int(np.prod(self.shape, dtype=int))
        S = self.coeffs.reshape(self.P, self.P, k)
        if t.ndim == 0 or np.all(t == t.flat[0]):
            # one t against many s: contract t first
            row = np.tensordot(ft.reshape(-1, self.P)[0], S, axes=(0, 0))  # (P, k)
            out = fs.reshape(-1, self.P) @ row
        else:
            out = np.einsum("rp,pqk,rq->rk", ft.reshape(-1, self.P), S, fs.reshape(-1, self.P))
        return out.reshape(t.shape + self.shape)

    def __call__(self, t, s):
        return self._eval(t, s)

    def dt(self, t, s):
        return self._eval(t, s, dt=True)

    def ds(self, t, s):
        return self._eval(t, s, ds=True)


# ------------------------------------------------------------------ parameters


CURVE_BLOCKS = ("T1", "T2", "T3", "U", "a", "V", "b")
SURFACE_BLOCKS = ("W", "c")


@dataclass(frozen=True, eq=False)
class ContinuousParams:
    T1: Curve
    T2: Curve
    T3: Curve
    U: Curve
    a: Curve
    V: Curve
    b: Curve
    W: Surface
    c: Surface

    def __post_init__(self):
        n = self.U.shape[0]
        for name in CURVE_BLOCKS + SURFACE_BLOCKS:
            want = (n,) if name in ("a", "b", "c") else (n, n)
            if tuple(getattr(self, name).shape) != want:
                raise InvalidInputError(f"{name} has block shape {getattr(self, name).shape}, expected {want}")

    @property
    def n(self) -> int:
        return self.U.shape[0]

    def curves(self) -> dict:
        return {k: getattr(self, k) for k in CURVE_BLOCKS}

    def surfaces(self) -> dict:
        return {k: getattr(self, k) for k in SURFACE_BLOCKS}

    def replace(self, **blocks) -> "ContinuousParams":
        return ContinuousParams(**{**self.curves(), **self.surfaces(), **blocks})

    def symmetry_defect(self, probes: int = 33) -> float:
        """max |W(t,s) - W(s,t)| and |c(t,s) - c(s,t)| over a probe grid."""
        g = np.linspace(0.0, 1.0, probes)
        t, s = np.meshgrid(g, g, indexing="ij")
        return float(max(np.abs(self.W(t, s) - self.W(s, t)).max(),
                         np.abs(self.c(t, s) - self.c(s, t)).max()))


def constant_params(n: int, *, T1=None, T2=None, T3=None, U=None, a=None, V=None, b=None,
                    W=None, c=None) -> ContinuousParams:
    """Time-invariant parameters; unspecified blocks are zero."""
    Z, z = np.zeros((n, n)), np.zeros(n)
    pick = lambda v, d: d if v is None else np.asarray(v, dtype=np.float64)  # noqa: E731
    return ContinuousParams(
        T1=ConstantCurve(pick(T1, Z)), T2=ConstantCurve(pick(T2, Z)), T3=ConstantCurve(pick(T3, Z)),
        U=ConstantCurve(pick(U, Z)), a=ConstantCurve(pick(a, z)),
        V=ConstantCurve(pick(V, Z)), b=ConstantCurve(pick(b, z)),
        W=ConstantSurface(pick(W, Z)), c=ConstantSurface(pick(c, z)),
    )


DEFAULT_AMPLITUDES = {
    # block: (identity offset, random amplitude)
    "T1": (0.0, 0.5), "T2": (0.0, 0.5), "T3": (1.0, 0.3),
    "U": (1.0, 0.3), "a": (0.0, 0.2), "V": (1.0, 0.3), "b": (0.0, 0.2),
    "W": (0.0, 0.5), "c": (0.0, 0.2),
}


@dataclass(frozen=True)
class ParamGenerator:
    """Seeded factory for smooth parameters (trigonometric/polynomial basis).

    Coefficient ``p`` of every block is uniform(-1, 1) times the block
    amplitude, damped by ``1 / (1 + p // 2)^2``.
    """

    n: int
    seed: int = 0
    modes: int = 2
    amplitudes: dict = field(default_factory=lambda: dict(DEFAULT_AMPLITUDES))

    @property
    def P(self) -> int:
        return 2 + 2 * self.modes

    def build(self) -> ContinuousParams:
        rng = np.random.default_rng(self.seed)
        n, P = self.n, self.P
        damp = 1.0 / (1.0 + np.arange(P) // 2) ** 2
        blocks = {}
        for name in CURVE_BLOCKS:
            off, amp = self.amplitudes.get(name, DEFAULT_AMPLITUDES[name])
            shape = (n,) if name in ("a", "b") else (n, n)
            co = rng.uniform(-1.0, 1.0, (P,) + shape) * amp * damp.reshape((P,) + (1,) * len(shape))
            if off and len(shape) == 2:
                co[0] += off * np.eye(n)
            blocks[name] = BasisCurve(co)
        for name in SURFACE_BLOCKS:
            off, amp = self.amplitudes.get(name, DEFAULT_AMPLITUDES[name])
            shape = (n,) if name == "c" else (n, n)
            dd = np.outer(damp, damp).reshape((P, P) + (1,) * len(shape))
            co = rng.uniform(-1.0, 1.0, (P, P) + shape) * amp * dd
            if off and len(shape) == 2:
                co[0, 0] += off * np.eye(n)
            blocks[name] = BasisSurface(co)
        return ContinuousParams(**blocks)


def smooth_params(n: int, seed: int = 0, **kwargs) -> ContinuousParams:
    return ParamGenerator(n=n, seed=seed, **kwargs).build()


# ------------------------------------------------------------------ solver


@dataclass(frozen=True, eq=False)
class GridSolution:
    t: np.ndarray  # (N+1,)
    values: np.ndarray  # (N+1, n)
    scheme: str

    @property
    def N(self) -> int:
        return self.t.shape[0] - 1

    def interpolate(self, t) -> np.ndarray:
        """Piecewise-linear interpolation of the state at times ``t``."""
        t = np.asarray(t, dtype=np.float64)
        cols = [np.interp(t, self.t, self.values[:, i]) for i in range(self.values.shape[1])]
        return np.stack(cols, axis=-1)

    def to_csv(self, path) -> None:
        n = self.values.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["t"] + [f"x_{i + 1}" for i in range(n)])
            for tj, xj in zip(self.t, self.values):
                w.writerow([f"{tj:.17g}"] + [f"{v:.17g}" for v in xj])


def _grid(N: int) -> np.ndarray:
    return np.arange(N + 1, dtype=np.float64) / N


def _input_terms(cfg: NetConfig, p: ContinuousParams, d, ts):
    """Per-node blocks and the memoryless part U A(T; d) + a."""
    kind = cfg.kernel.code
    T1, T2, T3 = p.T1(ts), p.T2(ts), p.T3(ts)
    U, a, V, b = p.U(ts), p.a(ts), p.V(ts), p.b(ts)
    base = np.empty_like(a)
    drow = d[None, :]
    for j in range(ts.shape[0]):
        ad = _backend.transform_rows(kind, T1[j], T2[j], T3[j], drow)[0]
        base[j] = U[j] @ ad + a[j]
    return T1, T2, T3, V, b, base


def solve(cfg: NetConfig, p: ContinuousParams, d, N: int, scheme: str = "trapezoid") -> GridSolution:
    """March the integral equation over t_j = j/N.

    ``left-rectangle`` pairs the state at the left node of each cell with the
    kernel at its right node, which is exactly the discrete network when the
    parameters are piecewise constant. ``trapezoid`` treats the endpoint
    implicitly and resolves it by fixed-point iteration.
    """
    if N < 1:
        raise InvalidInputError("N must be >= 1")
    if scheme not in SCHEMES:
        raise InvalidInputError(f"scheme must be one of {SCHEMES}")
    d = as_vector(d, p.n)
    kind = cfg.kernel.code
    act = cfg.activation
    ts = _grid(N)
    h = 1.0 / N
    T1, T2, T3, V, b, base = _input_terms(cfg, p, d, ts)
    X = np.empty((N + 1, p.n))
    for j in range(N + 1):
        if j == 0:
            x = V[0] @ activate(act, base[0]) + b[0]
        elif scheme == "left-rectangle":
            Wr = p.W(ts[j], ts[1:j + 1])
            cr = p.c(ts[j], ts[1:j + 1])
            q = _backend.history_sum(kind, T1[j], T2[j], T3[j], X[:j], Wr, cr, np.full(j, h))
            x = V[j] @ activate(act, base[j] + q) + b[j]
        else:
            Wr = p.W(ts[j], ts[:j + 1])
            cr = p.c(ts[j], ts[:j + 1])
            w = np.full(j, h)
            w[0] = 0.5 * h
            partial = _backend.history_sum(kind, T1[j], T2[j], T3[j], X[:j], Wr[:j], cr[:j], w)
            pred = _backend.history_sum(kind, T1[j], T2[j], T3[j], X[:j], Wr[1:], cr[1:], np.full(j, h))
            x = V[j] @ activate(act, base[j] + pred) + b[j]
            for _ in range(FIXED_POINT_MAX_ITER):
                ax = _backend.transform_rows(kind, T1[j], T2[j], T3[j], x[None, :])[0]
                end = 0.5 * h * (Wr[j] @ ax + cr[j])
                x_new = V[j] @ activate(act, base[j] + partial + end) + b[j]
                if not np.all(np.isfinite(x_new)):
                    raise SolverStallError(f"fixed point blew up at t={ts[j]:.6g}", time=float(ts[j]))
                step = np.max(np.abs(x_new - x))
                x = x_new
                if step < FIXED_POINT_TOL:
                    break
            else:
                raise SolverStallError(f"fixed point did not converge at t={ts[j]:.6g}", time=float(ts[j]))
        if not np.all(np.isfinite(x)):
            raise NumericalOverflowError(f"non-finite state at t={ts[j]:.6g}", time=float(ts[j]))
        X[j] = x
    return GridSolution(ts, X, scheme)


def _trapezoid_weights(m: int, h: float) -> np.ndarray:
    w = np.full(m + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def residual(cfg: NetConfig, p: ContinuousParams, d, sol: GridSolution, M: int = 2) -> float:
    """Defect of the integral equation at the solution nodes.

    The integral is re-evaluated by composite trapezoid on a grid ``M`` times
    finer, with the state linearly interpolated between nodes.
    """
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    d = as_vector(d, p.n)
    kind = cfg.kernel.code
    act = cfg.activation
    N = sol.N
    ts = sol.t
    T1, T2, T3, V, b, base = _input_terms(cfg, p, d, ts)
    tf = _grid(N * M)
    xf = sol.interpolate(tf)
    worst = 0.0
    for j in range(N + 1):
        q = 0.0
        if j > 0:
            m = j * M
            w = _trapezoid_weights(m, 1.0 / (N * M))
            Wr = p.W(ts[j], tf[:m + 1])
            cr = p.c(ts[j], tf[:m + 1])
            q = _backend.history_sum(kind, T1[j], T2[j], T3[j], xf[:m + 1], Wr, cr, w)
        rhs = V[j] @ activate(act, base[j] + q) + b[j]
        worst = max(worst, float(np.linalg.norm(sol.values[j] - rhs)))
    return worst


# ------------------------------------------------------------------ bound, regularizer


def _curve_sup(curve: Curve, matrix: bool, grid: np.ndarray) -> float:
    vals = curve(grid)
    if matrix:
        return float(leading_singular_pairs(vals)[0].max())
    return float(np.linalg.norm(vals, axis=-1).max())


def _surface_sup(surface: Surface, matrix: bool, probes: int = SURFACE_SUP_GRID) -> float:
    g = np.linspace(0.0, 1.0, probes)
    t, s = np.meshgrid(g, g, indexing="ij")
    vals = surface(t, s)
    if matrix:
        return float(leading_singular_pairs(vals)[0].max())
    return float(np.linalg.norm(vals, axis=-1).max())


def sup_growth(kernel: KernelFamily, p: ContinuousParams, grid: np.ndarray) -> float:
    """sup_t of the growth envelope of A(T(t); .) over the grid."""
    s3 = leading_singular_pairs(p.T3(grid))[0]
    scale = 1.0 if kernel is KernelFamily.KRONECKER else math.sqrt(p.n)
    return float(scale * s3.max())


def cont_bound(cfg: NetConfig, p: ContinuousParams, d) -> float:
    """A-priori bound on |x(t)| with sup norms sampled on fixed grids."""
    d = as_vector(d, p.n)
    g = np.linspace(0.0, 1.0, SUP_GRID)
    lphi = cfg.lipschitz
    m_a = sup_growth(cfg.kernel, p, g)
    nV = _curve_sup(p.V, True, g)
    nU = _curve_sup(p.U, True, g)
    na = _curve_sup(p.a, False, g)
    nb = _curve_sup(p.b, False, g)
    nW = _surface_sup(p.W, True)
    nc = _surface_sup(p.c, False)
    pre = lphi * nV * (m_a * nU * float(np.linalg.norm(d)) + na + nb) + nc
    return float(pre * math.exp(lphi * m_a * nV * nW))


def _trapz(values: np.ndarray, h: float) -> float:
    return float(h * (values.sum() - 0.5 * (values[0] + values[-1])))


def reg_continuous(p: ContinuousParams, N_quad: int = 1024) -> float:
    """Squared H^1 norms of the curves plus cubed W^{1,3} norms of the surfaces.

    Integrals use composite (tensor) trapezoid at ``N_quad`` intervals; matrix
    blocks are measured in the spectral norm.
    """
    g = _grid(N_quad)
    h = 1.0 / N_quad
    total = 0.0
    for name, curve in p.curves().items():
        matrix = name not in ("a", "b")
        f, df = curve(g), curve.derivative(g)
        if matrix:
            nf = leading_singular_pairs(f)[0]
            ndf = leading_singular_pairs(df)[0]
        else:
            nf = np.linalg.norm(f, axis=-1)
            ndf = np.linalg.norm(df, axis=-1)
        total += _trapz(nf**2 + ndf**2, h)
    w = _trapezoid_weights(N_quad, h)
    for name, surf in p.surfaces().items():
        matrix = name == "W"
        rows = np.empty(N_quad + 1)
        for i, ti in enumerate(g):
            parts = (surf(ti, g), surf.dt(ti, g), surf.ds(ti, g))
            if matrix:
                acc = sum(leading_singular_pairs(v)[0] ** 3 for v in parts)
            else:
                acc = sum(np.linalg.norm(v, axis=-1) ** 3 for v in parts)
            rows[i] = w @ acc
        total += float(w @ rows)
    return float(total)
