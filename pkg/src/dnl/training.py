"""Discrete learning problem: losses, reverse-mode gradients and momentum descent.

The objective is ``loss(x^L(d_m), g_m)`` averaged over the dataset plus
``reg_weight * R_L``. Gradients are propagated by hand through the dense
recurrence, batched over samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .bridge import sample_params
from .continuous import smooth_params
from .discrete import BLOCKS, DiscreteParams, NetConfig, objective, reg_discrete_grad, tri_row
from .errors import InvalidInputError, NumericalOverflowError, TrainingDivergedError
from .linalg import activate, activate_grad
from .transforms import transform_vjp

DIVERGENCE_THRESHOLD = 1e12
LOSSES = ("mse", "cross-entropy")
METRICS = ("euclidean", "quadrature")


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray  # (M, n)
    targets: np.ndarray  # (M, n) vectors, or (M,) class indices
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise InvalidInputError(f"inputs must be (M, n) with M, n >= 1, got {x.shape}")
        g = np.array(self.targets)
        if g.shape[0] != x.shape[0] or g.ndim not in (1, 2):
            raise InvalidInputError("targets must have one row (or index) per input")
        if g.ndim == 2 and g.shape[1] != x.shape[1]:
            raise InvalidInputError("target vectors must match the input dimension")
        g = g.astype(np.int64) if g.ndim == 1 else g.astype(np.float64)
        for a in (x, g):
            a.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", g)

    @property
    def M(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class LossSpec:
    """``mse`` averages squared errors over samples and components;
    ``cross-entropy`` applies a softmax head to x^L."""

    kind: str = "mse"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise InvalidInputError(f"loss must be one of {LOSSES}")
        if not self.scale > 0:
            raise InvalidInputError("loss scale must be positive")

    def _labels(self, finals, targets):
        targets = np.asarray(targets)
        if targets.ndim == 1:
            idx = targets.astype(np.int64)
            if np.any(idx < 0) or np.any(idx >= finals.shape[1]):
                raise InvalidInputError("class index out of range")
            onehot = np.zeros_like(finals)
            onehot[np.arange(finals.shape[0]), idx] = 1.0
            return onehot
        return np.asarray(targets, dtype=np.float64)

    def value_and_grad(self, finals, targets):
        """Loss and its gradient w.r.t. the final states ``(M, n)``."""
        finals = np.asarray(finals, dtype=np.float64)
        M = finals.shape[0]
        if self.kind == "mse":
            if np.asarray(targets).ndim != 2:
                raise InvalidInputError("mse needs vector targets")
            r = finals - targets
            return self.scale * float(np.mean(r**2)), self.scale * 2.0 * r / r.size
        y = self._labels(finals, targets)
        z = finals - finals.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - lse
        val = -float(np.sum(y * logp)) / M
        grad = (np.exp(logp) * y.sum(axis=1, keepdims=True) - y) / M
        return self.scale * val, self.scale * grad

    def value(self, finals, targets) -> float:
        return self.value_and_grad(finals, targets)[0]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 100
    seed: int = 0
    reg_weight: float = 1.0
    norm: str = "spectral"
    trainable: tuple = BLOCKS
    metric: str = "euclidean"

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidInputError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError("momentum must lie in [0, 1)")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")
        if self.reg_weight < 0:
            raise InvalidInputError("reg_weight must be >= 0")
        bad = set(self.trainable) - set(BLOCKS)
        if bad:
            raise InvalidInputError(f"unknown blocks {sorted(bad)}")
        object.__setattr__(self, "trainable", tuple(self.trainable))
        if self.metric not in METRICS:
            raise InvalidInputError(f"metric must be one of {METRICS}")


# gradients share the parameter container
GradPack = DiscreteParams


def _forward_batch(cfg: NetConfig, p: DiscreteParams, D: np.ndarray):
    """All samples at once; keeps what the backward sweep needs."""
    kind = cfg.kernel.code
    L, tau, M, n = p.L, p.tau, D.shape[0], p.n
    X = np.empty((L + 1, M, n))
    Ad, Ax, pre = [], [], []
    for l in range(L + 1):
        T1, T2, T3 = p.T[0, l], p.T[1, l], p.T[2, l]
        ad = _backend.transform_rows(kind, T1, T2, T3, D)
        z = ad @ p.U[l].T + p.a[l]
        if l > 0:
            row = tri_row(l)
            ax = _backend.transform_rows(kind, T1, T2, T3, X[:l].reshape(l * M, n)).reshape(l, M, n)
            z = z + tau * (np.einsum("kij,kmj->mi", p.W[row], ax) + p.c[row].sum(axis=0))
            Ax.append(ax)
        else:
            Ax.append(None)
        x = activate(cfg.activation, z) @ p.V[l].T + p.b[l]
        if not np.all(np.isfinite(x)):
            raise NumericalOverflowError(f"non-finite state at layer {l}", layer=l)
        X[l] = x
        Ad.append(ad)
        pre.append(z)
    return X, Ad, Ax, pre


def grad_reverse(cfg: NetConfig, p: DiscreteParams, dataset: Dataset, loss: LossSpec,
                 reg_weight: float = 1.0, norm: str = "spectral"):
    """Objective value and its exact gradient with respect to every block."""
    data, reg, grad = _parts(cfg, p, dataset, loss, reg_weight, norm)
    return data + reg_weight * reg, grad


def _parts(cfg, p, dataset, loss, reg_weight, norm):
    D = dataset.inputs
    if D.shape[1] != p.n:
        raise InvalidInputError("dataset dimension does not match the parameters")
    kernel = cfg.kernel
    L, tau, M, n = p.L, p.tau, D.shape[0], p.n
    X, Ad, Ax, pre = _forward_batch(cfg, p, D)
    data, gfinal = loss.value_and_grad(X[L], dataset.targets)

    gT = np.zeros_like(p.T)
    gU, gV = np.zeros_like(p.U), np.zeros_like(p.V)
    ga, gb = np.zeros_like(p.a), np.zeros_like(p.b)
    gW, gc = np.zeros_like(p.W), np.zeros_like(p.c)
    gX = np.zeros_like(X)
    gX[L] = gfinal
    for l in range(L, -1, -1):
        T1, T2, T3 = p.T[0, l], p.T[1, l], p.T[2, l]
        h = activate(cfg.activation, pre[l])
        gV[l] = gX[l].T @ h
        gb[l] = gX[l].sum(axis=0)
        gz = (gX[l] @ p.V[l]) * activate_grad(cfg.activation, pre[l])
        gU[l] = gz.T @ Ad[l]
        ga[l] = gz.sum(axis=0)
        d1, d2, d3, _ = transform_vjp(kernel, T1, T2, T3, D, gz @ p.U[l])
        gT[0, l] += d1
        gT[1, l] += d2
        gT[2, l] += d3
        if l == 0:
            continue
        row = tri_row(l)
        ax = Ax[l]
        gW[row] = tau * np.einsum("mi,kmj->kij", gz, ax)
        gc[row] = tau * gz.sum(axis=0)
        gax = tau * np.einsum("mi,kij->kmj", gz, p.W[row])
        d1, d2, d3, dz = transform_vjp(kernel, T1, T2, T3, X[:l].reshape(l * M, n), gax.reshape(l * M, n))
        gT[0, l] += d1
        gT[1, l] += d2
        gT[2, l] += d3
        gX[:l] += dz.reshape(l, M, n)

    grad = DiscreteParams(T=gT, U=gU, a=ga, V=gV, b=gb, W=gW, c=gc)
    reg = 0.0
    if reg_weight:
        reg, greg = reg_discrete_grad(p, norm)
        grad = grad + greg.scaled(reg_weight)
    if not (math.isfinite(data + reg) and np.all(np.isfinite(grad.to_vector()))):
        raise NumericalOverflowError("non-finite objective or gradient")
    return float(data), float(reg), grad


def grad_fd(cfg: NetConfig, p: DiscreteParams, dataset: Dataset, loss: LossSpec,
            step: float = 1e-5, reg_weight: float = 1.0, norm: str = "spectral") -> GradPack:
    """Central finite differences of the objective, one scalar at a time."""
    base = p.to_vector()
    g = np.empty_like(base)

    def f(vec):
        q = DiscreteParams.from_vector(vec, p.n, p.L)
        return objective(cfg, q, dataset, loss, reg_weight, norm)

    for i in range(base.size):
        e = base.copy()
        e[i] = base[i] + step
        fp = f(e)
        e[i] = base[i] - step
        fm = f(e)
        g[i] = (fp - fm) / (2.0 * step)
    return DiscreteParams.from_vector(g, p.n, p.L)


def relative_error(reverse: GradPack, fd: GradPack, floor: float = 1e-3) -> float:
    """Largest componentwise ``|r - f| / max(|r|, |f|, floor * max|f|)``.

    The floor keeps components that vanish up to rounding from dominating.
    """
    r, f = reverse.to_vector(), fd.to_vector()
    scale = max(float(np.abs(f).max()), 1e-300)
    denom = np.maximum(np.maximum(np.abs(r), np.abs(f)), floor * scale)
    return float(np.max(np.abs(r - f) / denom))


def mask(grad: GradPack, trainable) -> GradPack:
    return DiscreteParams(**{k: (getattr(grad, k) if k in trainable else np.zeros_like(getattr(grad, k)))
                             for k in BLOCKS})


def precondition(grad: GradPack, metric: str) -> GradPack:
    """Gradient with respect to the chosen inner product.

    ``quadrature`` weights one-index blocks by tau and two-index blocks by
    tau^2, the discrete analogue of the L^2 inner product on curves and
    surfaces; steps then act on the depth-continuum function rather than on
    individual layers.
    """
    if metric == "euclidean":
        return grad
    L = grad.L
    return DiscreteParams(
        T=grad.T * L, U=grad.U * L, a=grad.a * L, V=grad.V * L, b=grad.b * L,
        W=grad.W * L**2, c=grad.c * L**2,
    )


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    data_loss: float
    reg: float
    total: float


def train(cfg: NetConfig, init: DiscreteParams, dataset: Dataset, loss: LossSpec, tc: TrainConfig):
    """Full-batch heavy-ball descent: v <- mu v - lr grad, theta <- theta + v.

    Returns the final parameters and one trace row per epoch; row ``e``
    describes the parameters after ``e`` updates.
    """
    theta = init.to_vector()
    vel = np.zeros_like(theta)
    trace = []
    n, L = init.n, init.L
    p = init
    for epoch in range(tc.epochs + 1):
        data, reg, grad = _parts(cfg, p, dataset, loss, tc.reg_weight, tc.norm)
        total = data + tc.reg_weight * reg
        if not math.isfinite(total) or total > DIVERGENCE_THRESHOLD:
            raise TrainingDivergedError(f"objective {total:.3g} at epoch {epoch}", epoch=epoch)
        trace.append(TraceRow(epoch, float(data), float(reg), float(total)))
        if epoch == tc.epochs:
            break
        vel = tc.momentum * vel - tc.lr * precondition(mask(grad, tc.trainable), tc.metric).to_vector()
        theta = theta + vel
        p = DiscreteParams.from_vector(theta, n, L)
    return p, trace


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["epoch", "data_loss", "reg", "total"])
        for r in trace:
            w.writerow([r.epoch, f"{r.data_loss:.17g}", f"{r.reg:.17g}", f"{r.total:.17g}"])


def teacher_dataset(cfg: NetConfig, n: int, M: int, seed: int, L_teacher: int = 256,
                    loss: str = "mse") -> Dataset:
    """Inputs uniform on [-1, 1]^n labelled by a smooth teacher network at depth ``L_teacher``."""
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    teacher = sample_params(smooth_params(n, seed), L_teacher)
    rng = np.random.default_rng(seed)
    D = rng.uniform(-1.0, 1.0, (M, n))
    X = _forward_batch(cfg, teacher, D)[0][-1]
    targets = X if loss == "mse" else np.argmax(X, axis=1)
    prov = {"seed": seed, "teacher": f"smooth generator seed={seed} sampled at L={L_teacher}",
            "inputs": "uniform(-1, 1)", "M": M, "n": n}
    return Dataset(D, targets, prov)
