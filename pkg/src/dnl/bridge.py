"""Operators between discrete parameter stacks and continuous parameters.

Extensions turn node values on t_l = l/L into functions on [0, 1] (curves)
or [0, 1]^2 (surfaces, built from the flipped dense weights). Sampling and
recovery go the other way.
"""

from __future__ import annotations

import numpy as np

from .continuous import CURVE_BLOCKS, ContinuousParams, Curve, Surface
from .discrete import DiscreteParams, flip
from .errors import InvalidInputError
from .linalg import leading_singular_pairs

_SNAP = 1e-9
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


def _locate(t, L: int):
    """Cell index for the constant extension and (cell, offset) for the linear one.

    ``t`` in ((l-1)/L, l/L] belongs to cell ``l``; t = 0 maps to node 0.
    Points within 1e-9 grid units of a node snap onto it.
    """
    x = np.asarray(t, dtype=np.float64) * L
    r = np.rint(x)
    snap = np.abs(x - r) <= _SNAP
    cell = np.where(snap, r, np.ceil(x)).astype(np.intp)
    if np.any(cell < 0) or np.any(cell > L):
        raise InvalidInputError("evaluation point outside [0, 1]")
    lin = np.clip(cell, 1, L)
    theta = np.where(snap, r - (lin - 1), x - (lin - 1))
    return cell, lin, theta


class PiecewiseCurve(Curve):
    """Piecewise constant (right-continuous cells) or piecewise linear extension of L+1 nodes."""

    def __init__(self, kind: str, nodes):
        if kind not in ("constant", "linear"):
            raise InvalidInputError(f"curve extension must be constant or linear, got {kind!r}")
        self.kind = kind
        self.nodes = np.asarray(nodes, dtype=np.float64)
        self.L = self.nodes.shape[0] - 1
        self.shape = self.nodes.shape[1:]

    def _bc(self, theta):
        return theta.reshape(theta.shape + (1,) * len(self.shape))

    def __call__(self, t):
        cell, lin, theta = _locate(t, self.L)
        if self.kind == "constant":
            return self.nodes[cell]
        th = self._bc(theta)
        return (1.0 - th) * self.nodes[lin - 1] + th * self.nodes[lin]

    def derivative(self, t):
        cell, lin, _ = _locate(t, self.L)
        if self.kind == "constant":
            return np.zeros(np.shape(t) + self.shape)
        return (self.nodes[lin] - self.nodes[lin - 1]) * self.L


class PiecewiseSurface(Surface):
    """Piecewise constant or bilinear extension of an (L+1) x (L+1) node grid."""

    def __init__(self, kind: str, nodes):
        if kind not in ("constant", "bilinear"):
            raise InvalidInputError(f"surface extension must be constant or bilinear, got {kind!r}")
        self.kind = kind
        self.nodes = np.asarray(nodes, dtype=np.float64)
        self.L = self.nodes.shape[0] - 1
        self.shape = self.nodes.shape[2:]

    def _parts(self, t, s):
        t, s = np.broadcast_arrays(np.asarray(t, dtype=np.float64), np.asarray(s, dtype=np.float64))
        ct, lt, at = _locate(t, self.L)
        cs, ls, as_ = _locate(s, self.L)
        ex = (1,) * len(self.shape)
        return ct, lt, at.reshape(at.shape + ex), cs, ls, as_.reshape(as_.shape + ex)

    def __call__(self, t, s):
        ct, lt, at, cs, ls, as_ = self._parts(t, s)
        g = self.nodes
        if self.kind == "constant":
            return g[ct, cs]
        return (1.0 - as_) * ((1.0 - at) * g[lt - 1, ls - 1] + at * g[lt, ls - 1]) + as_ * (
            (1.0 - at) * g[lt - 1, ls] + at * g[lt, ls]
        )

    def dt(self, t, s):
        ct, lt, at, cs, ls, as_ = self._parts(t, s)
        g = self.nodes
        if self.kind == "constant":
            return np.zeros(ct.shape + self.shape)
        return self.L * ((1.0 - as_) * (g[lt, ls - 1] - g[lt - 1, ls - 1]) + as_ * (g[lt, ls] - g[lt - 1, ls]))

    def ds(self, t, s):
        ct, lt, at, cs, ls, as_ = self._parts(t, s)
        g = self.nodes
        if self.kind == "constant":
            return np.zeros(ct.shape + self.shape)
        return self.L * ((1.0 - at) * (g[lt - 1, ls] - g[lt - 1, ls - 1]) + at * (g[lt, ls] - g[lt, ls - 1]))


def extend_params(p: DiscreteParams, mode: str = "linear") -> ContinuousParams:
    """Extend every one-index family along t and the flipped W, c over the square."""
    if mode not in ("constant", "linear"):
        raise InvalidInputError(f"mode must be constant or linear, got {mode!r}")
    smode = "constant" if mode == "constant" else "bilinear"
    return ContinuousParams(
        T1=PiecewiseCurve(mode, p.T[0]), T2=PiecewiseCurve(mode, p.T[1]), T3=PiecewiseCurve(mode, p.T[2]),
        U=PiecewiseCurve(mode, p.U), a=PiecewiseCurve(mode, p.a),
        V=PiecewiseCurve(mode, p.V), b=PiecewiseCurve(mode, p.b),
        W=PiecewiseSurface(smode, flip(p.W)), c=PiecewiseSurface(smode, flip(p.c)),
    )


def _cell_means_1d(curve: Curve, L: int) -> np.ndarray:
    """Mean of the curve over each cell [(l-1)/L, l/L], l = 1..L (4-point Gauss-Legendre)."""
    left = np.arange(L) / L
    pts = left[:, None] + (_GL_X[None, :] + 1.0) / (2.0 * L)
    vals = curve(pts)  # (L, 4, ...)
    return np.tensordot(vals, _GL_W / 2.0, axes=([1], [0]))


def _lower_cell_means(surface: Surface, L: int) -> np.ndarray:
    """Cell means over [(l-1)/L, l/L] x [(k-1)/L, k/L] for 1 <= k <= l <= L, packed."""
    ls, ks = [], []
    for l in range(1, L + 1):
        ls.extend([l] * l)
        ks.extend(range(1, l + 1))
    ls, ks = np.array(ls), np.array(ks)
    off = (_GL_X + 1.0) / (2.0 * L)
    t = ((ls - 1) / L)[:, None, None] + off[None, :, None]
    s = ((ks - 1) / L)[:, None, None] + off[None, None, :]
    t, s = np.broadcast_arrays(t, s)
    vals = surface(t, s)  # (m, 4, 4, ...)
    w2 = np.outer(_GL_W, _GL_W) / 4.0
    return np.tensordot(vals, w2, axes=([1, 2], [0, 1]))


def _assemble(one_index: dict, W, c) -> DiscreteParams:
    T = np.stack([one_index["T1"], one_index["T2"], one_index["T3"]])
    return DiscreteParams(T=T, U=one_index["U"], a=one_index["a"], V=one_index["V"],
                          b=one_index["b"], W=W, c=c)


def sample_params(p: ContinuousParams, L: int) -> DiscreteParams:
    """Node sampling for the one-index families, cell means for W and c."""
    if L < 1:
        raise InvalidInputError("L must be >= 1")
    nodes = np.arange(L + 1) / L
    one = {name: p.curves()[name](nodes) for name in CURVE_BLOCKS}
    return _assemble(one, _lower_cell_means(p.W, L), _lower_cell_means(p.c, L))


def recovery_sequence(p: ContinuousParams, L: int) -> DiscreteParams:
    """Windowed means: half-width windows at both ends, two-cell windows inside."""
    if L < 1:
        raise InvalidInputError("L must be >= 1")
    one = {}
    for name, curve in p.curves().items():
        m = _cell_means_1d(curve, L)  # cells 1..L
        out = np.empty((L + 1,) + m.shape[1:])
        out[0] = m[0]
        out[L] = m[L - 1]
        if L > 1:
            out[1:L] = 0.5 * (m[:-1] + m[1:])
        one[name] = out
    return _assemble(one, _lower_cell_means(p.W, L), _lower_cell_means(p.c, L))


def sup_distance(p: ContinuousParams, q: ContinuousParams, grid: int = 256) -> float:
    """Grid approximation of the max-over-blocks sup-norm distance."""
    g = np.linspace(0.0, 1.0, grid + 1)
    worst = 0.0
    for name in CURVE_BLOCKS:
        diff = p.curves()[name](g) - q.curves()[name](g)
        if diff.ndim == 3:
            worst = max(worst, float(leading_singular_pairs(diff)[0].max()))
        else:
            worst = max(worst, float(np.linalg.norm(diff, axis=-1).max()))
    for name, surf in p.surfaces().items():
        other = q.surfaces()[name]
        for ti in g:
            diff = surf(ti, g) - other(ti, g)
            if diff.ndim == 3:
                worst = max(worst, float(leading_singular_pairs(diff)[0].max()))
            else:
                worst = max(worst, float(np.linalg.norm(diff, axis=-1).max()))
    return worst
