"""Piecewise-polynomial kernels represented as sparse Dirac-ramp mixtures.

A kernel of polynomial degree n-1 is stored as the list of Dirac deltas of
its n-th derivative per axis (positions c_i, magnitudes w_i).  The
continuous kernel is recovered as a superposition of shifted order-n ramps

    ghat(x) = sum_i ramp_n(x - c_i) * w_i,
    ramp_n(x) = prod_a x_a^(n-1) / ((n-1)!)^d     if min_a x_a >= 0, else 0.

This module fits such mixtures to target kernel shapes by stochastic
gradient descent with a magnitude-sum penalty that keeps the reconstruction
compact, transforms them (axis-aligned scale + shift), combines separable
1D factors, and constructs the minimal smoothing kernels (n-fold box
self-convolutions) used to supervise integral-field training.

Kernel domain conventions: canonical kernels live on [-0.5, 0.5]^d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DivergenceError,
    EmptyKernelError,
    InfeasibleBudgetError,
    InputShapeError,
    InvalidTransformError,
    OrderMismatchError,
    ValidationError,
)
from .tensor_math import adam_step, init_adam

__all__ = [
    "DiracMixture",
    "TargetKernel",
    "FitConfig",
    "TransformSpec",
    "ramp_eval",
    "kernel_eval",
    "kernel_eval_batch",
    "differentiate_to_diracs",
    "fit_kernel",
    "prune",
    "transform_kernel",
    "separable_product",
    "minimal_kernel",
    "MinimalKernelEvaluator",
    "kernel_mass",
    "mixture_to_dict",
    "mixture_from_dict",
]

CANONICAL_HALFWIDTH = 0.5


@dataclass(frozen=True)
class DiracMixture:
    """Sparse differential kernel: Dirac positions and magnitudes.

    ``positions`` has shape (K, dim); ``magnitudes`` shape (K,).  Arrays are
    frozen after construction; operations return new mixtures.  ``meta`` is
    free-form bookkeeping (fit target, achieved MSE, kernel mass).
    """

    dim: int
    order: int
    positions: np.ndarray
    magnitudes: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.order < 1:
            raise ValidationError(f"order must be >= 1, got {self.order}")
        pos = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        mag = np.asarray(self.magnitudes, dtype=np.float64).ravel()
        if pos.shape != (mag.size, self.dim):
            raise InputShapeError(
                f"positions shape {pos.shape} does not match {mag.size} magnitudes of dim {self.dim}")
        if mag.size == 0:
            raise EmptyKernelError("mixture must contain at least one Dirac")
        if not (np.isfinite(pos).all() and np.isfinite(mag).all()):
            raise ValidationError("positions and magnitudes must be finite")
        pos.setflags(write=False)
        mag.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "magnitudes", mag)

    def __len__(self) -> int:
        return self.magnitudes.size

    def extent(self) -> np.ndarray:
        """Per-axis span of the Dirac positions (max - min)."""
        return self.positions.max(axis=0) - self.positions.min(axis=0)


@dataclass(frozen=True)
class TransformSpec:
    """Axis-aligned kernel transform: positive per-axis scale plus shift."""

    scale: np.ndarray
    shift: np.ndarray | None = None

    def __post_init__(self):
        scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        shift = (np.zeros_like(scale) if self.shift is None
                 else np.atleast_1d(np.asarray(self.shift, dtype=np.float64)))
        if scale.shape != shift.shape:
            raise InvalidTransformError(f"scale shape {scale.shape} != shift shape {shift.shape}")
        if not np.all(scale > 0):
            raise InvalidTransformError(f"scale entries must be positive, got {scale}")
        if not (np.isfinite(scale).all() and np.isfinite(shift).all()):
            raise InvalidTransformError("transform entries must be finite")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "shift", shift)


_TARGET_KINDS = ("gaussian", "box", "tent", "disk", "derivative_of_gaussian")


@dataclass(frozen=True)
class TargetKernel:
    """Analytic reference kernel to be approximated by a Dirac mixture.

    Smoothing kinds integrate to one; derivative_of_gaussian integrates to
    zero.  ``param`` is the bandwidth: sigma for (derivative of) Gaussian,
    full side/width for box and tent, radius for disk.
    """

    kind: str
    param: float
    dim: int = 1

    def __post_init__(self):
        if self.kind not in _TARGET_KINDS:
            raise ValidationError(f"unknown kernel kind {self.kind!r}; choose from {_TARGET_KINDS}")
        if not (self.param > 0 and math.isfinite(self.param)):
            raise ValidationError(f"kernel parameter must be positive, got {self.param}")
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.kind == "disk" and self.dim != 2:
            raise ValidationError("disk kernels are 2D")
        if self.kind == "derivative_of_gaussian" and self.dim != 1:
            raise ValidationError("derivative_of_gaussian kernels are 1D")

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Kernel values at points x of shape (N, dim)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise InputShapeError(f"expected points of dim {self.dim}, got {x.shape}")
        p = self.param
        if self.kind == "gaussian":
            norm = (p * math.sqrt(2.0 * math.pi)) ** self.dim
            return np.exp(-0.5 * (x * x).sum(axis=1) / (p * p)) / norm
        if self.kind == "box":
            inside = np.all(np.abs(x) <= 0.5 * p, axis=1)
            return inside / p ** self.dim
        if self.kind == "tent":
            half = 0.5 * p
            per_axis = np.clip(1.0 - np.abs(x) / half, 0.0, None) / half
            return per_axis.prod(axis=1)
        if self.kind == "disk":
            inside = (x * x).sum(axis=1) <= p * p
            return inside / (math.pi * p * p)
        # derivative_of_gaussian, 1D
        t = x[:, 0]
        pdf = np.exp(-0.5 * t * t / (p * p)) / (p * math.sqrt(2.0 * math.pi))
        return -t / (p * p) * pdf

    def support_halfwidth(self) -> float:
        """Half-width of a box that contains (effectively all of) the kernel."""
        if self.kind in ("gaussian", "derivative_of_gaussian"):
            return 4.0 * self.param
        if self.kind in ("box", "tent"):
            return 0.5 * self.param
        return self.param  # disk radius

    def describe(self) -> str:
        return f"{self.kind}({self.param:g}, dim={self.dim})"


@dataclass
class FitConfig:
    """Hyperparameters for Dirac-mixture fitting.

    ``prune_threshold`` is relative: at every ``prune_interval`` iterations,
    Diracs with |magnitude| below prune_threshold * max|magnitude| are
    dropped.  ``sample_dilation`` widens the canonical support so the
    optimizer also sees the kernel's zero exterior.
    """

    budget: int = 13
    lambda_compact: float = 0.1
    iterations: int = 20000
    batch_size: int = 4096
    prune_interval: int = 500
    prune_threshold: float = 1e-4
    seed: int = 0
    lr: float = 1e-2
    lr_decay: float = 0.01         # final lr fraction, cosine schedule
    pos_lr_fraction: float = 0.3   # position lr relative to magnitude lr
    warmup_fraction: float = 0.15  # magnitudes-only phase before positions move
    sample_dilation: float = 1.2

    def __post_init__(self):
        if self.budget < 1:
            raise ValidationError("budget must be positive")
        if self.lambda_compact < 0:
            raise ValidationError("lambda must be >= 0")


def _factorial_norm(order: int, dim: int) -> float:
    return float(math.factorial(order - 1) ** dim)


def ramp_eval(order: int, dim: int, x) -> float:
    """Order-n ramp: the n-fold repeated antiderivative of the Dirac delta.

    Returns prod_a x_a^(n-1) / ((n-1)!)^dim on the closed positive orthant
    and 0 elsewhere.
    """
    if order < 1:
        raise ValidationError(f"order must be >= 1, got {order}")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (dim,):
        raise InputShapeError(f"expected point of dim {dim}, got shape {x.shape}")
    if np.min(x) < 0:
        return 0.0
    if order == 1:
        return 1.0
    return float(np.prod(x ** (order - 1)) / _factorial_norm(order, dim))


def _ramp_values(order: int, diffs: np.ndarray) -> np.ndarray:
    """Ramp values for difference tensors x - c_i; diffs shape (..., dim)."""
    mask = np.min(diffs, axis=-1) >= 0
    if order == 1:
        return mask.astype(np.float64)
    dim = diffs.shape[-1]
    vals = np.prod(diffs ** (order - 1), axis=-1) / _factorial_norm(order, dim)
    return np.where(mask, vals, 0.0)


def kernel_eval_batch(m: DiracMixture, x: np.ndarray) -> np.ndarray:
    """Reconstructed kernel ghat at points x of shape (N, dim)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != m.dim:
        raise InputShapeError(f"expected points of dim {m.dim}, got {x.shape}")
    diffs = x[:, None, :] - m.positions[None, :, :]
    return _ramp_values(m.order, diffs) @ m.magnitudes


def kernel_eval(m: DiracMixture, x) -> float:
    """Reconstructed kernel ghat(x) = sum_i ramp_n(x - c_i) w_i at one point."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (m.dim,):
        raise InputShapeError(f"expected point of dim {m.dim}, got shape {x.shape}")
    return float(kernel_eval_batch(m, x[None, :])[0])


def differentiate_to_diracs(m: DiracMixture) -> DiracMixture:
    """The n-th derivative of the reconstructed kernel, as Dirac deltas.

    The stored (position, magnitude) list *is* that derivative by
    construction, so this is the identity; it exists to make the duality
    between the ramp superposition and its derivative explicit, and as the
    hook that tests compare against numerical n-th differences.
    """
    return m


def _halton(index: np.ndarray, base: int) -> np.ndarray:
    result = np.zeros(index.shape, dtype=np.float64)
    f = 1.0
    i = index.astype(np.int64) + 1
    fs = np.full(index.shape, 1.0)
    while np.any(i > 0):
        fs = fs / base
        result = result + fs * (i % base)
        i = i // base
    return result


def _grid_init(budget: int, dim: int) -> np.ndarray:
    """Initial Dirac positions: regular grid plus low-discrepancy remainder."""
    per_axis = int(math.floor(budget ** (1.0 / dim) + 1e-9))
    centers = (np.arange(per_axis) + 0.5) / per_axis - CANONICAL_HALFWIDTH
    axes = np.meshgrid(*([centers] * dim), indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=1)
    remainder = budget - per_axis ** dim
    if remainder > 0:
        bases = [2, 3, 5][:dim]
        idx = np.arange(remainder)
        extra = np.stack([_halton(idx, b) - CANONICAL_HALFWIDTH for b in bases], axis=1)
        pts = np.concatenate([pts, extra], axis=0)
    return pts


def _fit_gradients(target_vals, pos, mags, x, order, lam):
    """Loss, and gradients of the fit objective w.r.t. positions and magnitudes."""
    n_samples = x.shape[0]
    dim = x.shape[1]
    diffs = x[:, None, :] - pos[None, :, :]
    vals = _ramp_values(order, diffs)          # (N, K)
    residual = vals @ mags - target_vals       # (N,)
    mag_sum = float(mags.sum())
    loss = float(np.mean(residual ** 2)) + lam * abs(mag_sum)

    scale = 2.0 / n_samples
    dmags = scale * (vals.T @ residual) + lam * np.sign(mag_sum)

    dpos = np.zeros_like(pos)
    if order >= 2:
        mask = (np.min(diffs, axis=-1) >= 0).astype(np.float64)
        norm = _factorial_norm(order, dim)
        powers = diffs ** (order - 1)          # (N, K, dim)
        for axis in range(dim):
            other = np.ones(diffs.shape[:2])
            for a in range(dim):
                if a != axis:
                    other = other * powers[:, :, a]
            dr = (order - 1) * diffs[:, :, axis] ** (order - 2) * other / norm * mask
            # d ghat / d c_[i,axis] = -w_i * dr
            dpos[:, axis] = -scale * mags * (dr.T @ residual)
    return loss, dpos, dmags


def fit_kernel(target: TargetKernel, order: int, cfg: FitConfig) -> DiracMixture:
    """Fit a Dirac mixture of the given order to an analytic target kernel.

    Minimizes E_x[(g(x) - ghat(x))^2] + lambda * |sum_i w_i| with Adam over
    Dirac positions and magnitudes; positions start on a regular grid,
    magnitudes at zero.  Diracs whose magnitude collapses are pruned at
    regular intervals.  Deterministic for a fixed config seed.
    """
    if order < 1:
        raise ValidationError(f"order must be >= 1, got {order}")
    dim = target.dim
    if cfg.budget < (order + 1) ** dim:
        raise InfeasibleBudgetError(
            f"budget {cfg.budget} below ({order}+1)^{dim} needed for order {order} in dim {dim}")

    rng = np.random.default_rng(cfg.seed)
    pos = _grid_init(cfg.budget, dim)
    mags = np.zeros(len(pos))
    # separate Adam groups: magnitudes converge first on the fixed grid,
    # positions then refine with a smaller step (joint full-rate Adam makes
    # every position drift at uniform speed and collapse to one side)
    mag_state = init_adam([mags], lr=cfg.lr)
    pos_state = init_adam([pos], lr=cfg.lr * cfg.pos_lr_fraction)
    warmup = int(cfg.iterations * cfg.warmup_fraction)
    half = CANONICAL_HALFWIDTH * cfg.sample_dilation

    for it in range(cfg.iterations):
        x = rng.uniform(-half, half, size=(cfg.batch_size, dim))
        loss, dpos, dmags = _fit_gradients(target.evaluate(x), pos, mags, x,
                                           order, cfg.lambda_compact)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite fit loss at iteration {it}",
                                  phase="kernel-fit", iteration=it)
        # cosine decay towards lr * lr_decay settles the Adam limit cycle
        frac = it / max(cfg.iterations - 1, 1)
        decay = cfg.lr_decay + (1 - cfg.lr_decay) * 0.5 * (1 + math.cos(math.pi * frac))
        mag_state.lr = cfg.lr * decay
        [mags], mag_state = adam_step([mags], [dmags], mag_state)
        if it >= warmup and order >= 2:
            pos_state.lr = cfg.lr * cfg.pos_lr_fraction * decay
            [pos], pos_state = adam_step([pos], [dpos], pos_state)

        if cfg.prune_interval and (it + 1) % cfg.prune_interval == 0 and it + 1 < cfg.iterations:
            thr = cfg.prune_threshold * np.max(np.abs(mags))
            keep = np.abs(mags) >= thr
            if keep.any() and not keep.all():
                pos, mags = pos[keep], mags[keep]
                mag_state.first_moment = [mm[keep] for mm in mag_state.first_moment]
                mag_state.second_moment = [vv[keep] for vv in mag_state.second_moment]
                pos_state.first_moment = [mm[keep] for mm in pos_state.first_moment]
                pos_state.second_moment = [vv[keep] for vv in pos_state.second_moment]

    mixture = DiracMixture(dim, order, pos, mags)
    mse = _dense_mse(target, mixture, half)
    meta = {"target": target.describe(), "mse": mse, "mass": kernel_mass(mixture)}
    return replace(mixture, meta=meta)


def _dense_mse(target: TargetKernel, m: DiracMixture, half: float) -> float:
    """Reconstruction MSE on a deterministic midpoint grid over the fit domain."""
    per_axis = {1: 8192, 2: 181, 3: 48}.get(m.dim, 32)
    centers = (np.arange(per_axis) + 0.5) / per_axis * 2 * half - half
    axes = np.meshgrid(*([centers] * m.dim), indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=1)
    err2 = []
    for chunk in np.array_split(pts, max(1, len(pts) // 65536)):
        err2.append((kernel_eval_batch(m, chunk) - target.evaluate(chunk)) ** 2)
    return float(np.mean(np.concatenate(err2)))


def prune(m: DiracMixture, threshold: float) -> DiracMixture:
    """Drop Diracs with |magnitude| < threshold (absolute)."""
    if threshold < 0:
        raise ValidationError("threshold must be >= 0")
    keep = np.abs(m.magnitudes) >= threshold
    if not keep.any():
        raise EmptyKernelError(f"threshold {threshold} would remove every Dirac")
    if keep.all():
        return m
    return DiracMixture(m.dim, m.order, m.positions[keep], m.magnitudes[keep],
                        meta=dict(m.meta))


def transform_kernel(m: DiracMixture, t: TransformSpec) -> DiracMixture:
    """Scale and shift a kernel by moving its Diracs.

    Positions map to scale * pos + shift; magnitudes divide by det(T)^n so
    the reconstructed kernel obeys ghat_T(x) = ghat(T^-1 (x - shift)) / det(T)
    (mass preserved).
    """
    if t.scale.shape != (m.dim,):
        if t.scale.size == 1:
            t = TransformSpec(np.full(m.dim, float(t.scale[0])),
                              np.full(m.dim, float(t.shift[0])))
        else:
            raise InvalidTransformError(
                f"transform dim {t.scale.size} does not match kernel dim {m.dim}")
    det = float(np.prod(t.scale))
    pos = m.positions * t.scale + t.shift
    mags = m.magnitudes / det ** m.order
    meta = {k: v for k, v in m.meta.items() if k != "mse"}
    return DiracMixture(m.dim, m.order, pos, mags, meta=meta)


def separable_product(mixtures: list[DiracMixture]) -> DiracMixture:
    """Combine 1D mixtures into a tensor-product kernel.

    The result has K = prod K_j Diracs: positions are tuples of the factor
    positions, magnitudes the products of factor magnitudes.
    """
    if not mixtures:
        raise ValidationError("need at least one factor")
    order = mixtures[0].order
    for m in mixtures:
        if m.dim != 1:
            raise ValidationError("separable factors must be 1D")
        if m.order != order:
            raise OrderMismatchError(f"factor orders differ: {m.order} != {order}")
    if len(mixtures) == 1:
        return mixtures[0]
    cols = [m.positions[:, 0] for m in mixtures]
    grids = np.meshgrid(*cols, indexing="ij")
    pos = np.stack([g.ravel() for g in grids], axis=1)
    mags = mixtures[0].magnitudes
    for m in mixtures[1:]:
        mags = np.multiply.outer(mags, m.magnitudes)
    meta = {}
    if all("mass" in m.meta for m in mixtures):
        meta["mass"] = float(np.prod([m.meta["mass"] for m in mixtures]))
    return DiracMixture(len(mixtures), order, pos, mags.ravel(), meta=meta)


class MinimalKernelEvaluator:
    """Continuous minimal kernel: per-axis degree n-1 B-spline of unit mass.

    Callable on points of shape (N, dim); zero outside the support box
    [-n*w/2, n*w/2]^dim.
    """

    def __init__(self, order: int, dim: int, width: float):
        self.order = order
        self.dim = dim
        self.width = width
        self.support_halfwidth = 0.5 * order * width
        k = np.arange(order + 1)
        self._offsets = (k - order / 2.0) * width
        self._mags = (-1.0) ** k * np.array([math.comb(order, int(i)) for i in k]) / width ** order

    def _axis_values(self, t: np.ndarray) -> np.ndarray:
        diffs = t[:, None] - self._offsets[None, :]
        vals = _ramp_values(self.order, diffs[:, :, None]) @ self._mags
        return np.where(np.abs(t) <= self.support_halfwidth, vals, 0.0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise InputShapeError(f"expected points of dim {self.dim}, got {x.shape}")
        out = np.ones(x.shape[0])
        for a in range(self.dim):
            out = out * self._axis_values(x[:, a])
        return out

    def support_box(self):
        h = self.support_halfwidth
        return np.full(self.dim, -h), np.full(self.dim, h)


def minimal_kernel(order: int, dim: int, width: float):
    """The n-fold self-convolution of a unit-mass box of the given width.

    Returns (continuous evaluator, Dirac mixture).  Per axis the mixture has
    n+1 spikes at offsets (k - n/2) * width with magnitudes
    (-1)^k * C(n, k) / width^n; the tensor product gives (n+1)^dim Diracs.
    """
    if order < 1:
        raise ValidationError(f"order must be >= 1, got {order}")
    if not width > 0:
        raise ValidationError(f"width must be positive, got {width}")
    evaluator = MinimalKernelEvaluator(order, dim, width)
    axis = DiracMixture(1, order, evaluator._offsets[:, None], evaluator._mags,
                        meta={"mass": 1.0})
    mixture = separable_product([axis] * dim) if dim > 1 else axis
    return evaluator, mixture


def _gauss_segments(breaks: np.ndarray, npts: int):
    """Gauss-Legendre nodes/weights on each interval between breakpoints."""
    nodes, weights = np.polynomial.legendre.leggauss(npts)
    lo, hi = breaks[:-1], breaks[1:]
    mid = 0.5 * (lo + hi)
    halflen = 0.5 * (hi - lo)
    xs = (mid[:, None] + halflen[:, None] * nodes[None, :]).ravel()
    ws = (halflen[:, None] * weights[None, :]).ravel()
    return xs, ws


def kernel_mass(m: DiracMixture, tail: float = 0.25) -> float:
    """Integral of the reconstructed kernel over its junction box.

    Integrates exactly (piecewise Gauss quadrature aligned to the Dirac
    coordinates) over [min_pos, max_pos + tail * span] per axis; compact
    zero-sum kernels carry no mass beyond that.
    """
    npts = max(2, (m.order + 2) // 2)
    axis_nodes, axis_weights = [], []
    for a in range(m.dim):
        coords = np.unique(m.positions[:, a])
        span = max(coords[-1] - coords[0], 1e-6)
        breaks = np.concatenate([coords, [coords[-1] + tail * span]])
        xs, ws = _gauss_segments(breaks, npts)
        axis_nodes.append(xs)
        axis_weights.append(ws)
    grids = np.meshgrid(*axis_nodes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*axis_weights, indexing="ij")
    wts = np.ones(pts.shape[0])
    for wg in wgrids:
        wts = wts * wg.ravel()
    total = 0.0
    for start in range(0, len(pts), 65536):
        sl = slice(start, start + 65536)
        total += float(kernel_eval_batch(m, pts[sl]) @ wts[sl])
    return total


def mixture_to_dict(m: DiracMixture) -> dict:
    """JSON-ready representation of a mixture."""
    return {
        "dim": m.dim,
        "order": m.order,
        "diracs": [{"pos": [float(v) for v in p], "mag": float(w)}
                   for p, w in zip(m.positions, m.magnitudes)],
        "meta": {k: v for k, v in m.meta.items()},
    }


def mixture_from_dict(doc: dict) -> DiracMixture:
    """Inverse of :func:`mixture_to_dict`; accepts any finite reals."""
    try:
        dim = int(doc["dim"])
        order = int(doc["order"])
        diracs = doc["diracs"]
        pos = np.array([d["pos"] for d in diracs], dtype=np.float64)
        mags = np.array([d["mag"] for d in diracs], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed kernel document: {exc}") from exc
    meta = doc.get("meta", {})
    if not isinstance(meta, dict):
        raise ValidationError("kernel meta must be an object")
    return DiracMixture(dim, order, pos, mags, meta=dict(meta))
