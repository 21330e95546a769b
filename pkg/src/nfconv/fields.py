"""Continuous signals over the unit box, and exact grid antiderivatives.

A :class:`SignalField` maps points of [0, 1]^din to R^dout and extends
evenly (mirror) outside the box.  Three backends: sampled grids with
multilinear interpolation, analytic closures, and neural networks.

For grid signals this module also provides order-n repeated antiderivatives
built from prefix sums over a mirror-padded copy of the grid -- the
continuous generalization of summed-area tables.  Two access paths exist:

* ``sample`` on :class:`GridAntiderivative`: multilinear interpolation of
  the plain repeated prefix sums (one cell of discretization error);
* ``sample_exact``: analytic evaluation of the repeated antiderivative of
  the cell-constant signal model (each grid sample held constant over its
  cell).  This path is exact up to rounding and serves as the reference
  integral field against which sparse convolutions are verified.

Constants of integration are zero at the lower corner of the padded box;
zero-sum differential kernels are insensitive to that choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputShapeError, UnsupportedBackendError, ValidationError
from .tensor_math import Mlp, mlp_forward_batch

__all__ = [
    "SignalField",
    "GridField",
    "AnalyticField",
    "NeuralField",
    "GridAntiderivative",
    "grid_repeated_antiderivative",
    "sample_antiderivative",
    "GridOracleField",
]


def _fold_indices(idx: np.ndarray, n: int) -> np.ndarray:
    """Symmetric (half-sample mirror) folding of integer indices into [0, n)."""
    j = np.mod(idx, 2 * n)
    return np.where(j >= n, 2 * n - 1 - j, j)


def _fold_coords(x: np.ndarray) -> np.ndarray:
    """Mirror coordinates into [0, 1]: the even extension about 0 and 1."""
    u = np.remainder(x, 2.0)
    return np.where(u > 1.0, 2.0 - u, u)


def _multilinear(values: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Interpolate values (res_0,..,res_{d-1}, dout) at pixel coords u (N, d).

    u is in continuous pixel units where node j sits at coordinate j;
    out-of-range coordinates are mirrored.
    """
    ndim = u.shape[1]
    base = np.floor(u).astype(np.int64)
    frac = u - base
    out = 0.0
    for corner in range(1 << ndim):
        weight = np.ones(u.shape[0])
        idx = []
        for a in range(ndim):
            bit = (corner >> a) & 1
            weight = weight * (frac[:, a] if bit else 1.0 - frac[:, a])
            idx.append(_fold_indices(base[:, a] + bit, values.shape[a]))
        out = out + weight[:, None] * values[tuple(idx)]
    return out


class SignalField:
    """Continuous map from [0, 1]^din (mirror-extended) to R^dout."""

    din: int
    dout: int

    def sample_many(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if x.shape != (self.din,):
            raise InputShapeError(f"expected point of dim {self.din}, got shape {x.shape}")
        return self.sample_many(x[None, :])[0]

    def _check_points(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.din:
            raise InputShapeError(f"expected (N, {self.din}) points, got {x.shape}")
        if not np.isfinite(x).all():
            raise ValidationError("sample coordinates must be finite")
        return x


class GridField(SignalField):
    """Grid-backed signal: multilinear interpolation of node values.

    ``values`` has shape (res_0, ..., res_{din-1}, dout); node (i_0..i_k)
    sits at coordinate ((i_a + 0.5) / res_a) per axis.  Outside the unit box
    the signal continues by mirror reflection.
    """

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim < 2:
            raise InputShapeError("grid values need shape (*resolution, channels)")
        if not np.isfinite(values).all():
            raise ValidationError("grid values must be finite")
        self.values = values
        self.resolution = values.shape[:-1]
        self.din = len(self.resolution)
        self.dout = values.shape[-1]

    def sample_many(self, x: np.ndarray) -> np.ndarray:
        x = self._check_points(x)
        res = np.asarray(self.resolution, dtype=np.float64)
        u = x * res - 0.5
        return _multilinear(self.values, u)

    def channel_stats(self):
        """Per-channel mean and standard deviation of the node values."""
        flat = self.values.reshape(-1, self.dout)
        return flat.mean(axis=0), flat.std(axis=0)


class AnalyticField(SignalField):
    """Signal defined by a closure mapping (N, din) points to (N, dout).

    Coordinates outside the unit box are mirrored before the closure is
    called, so every field backend shares the even-extension behaviour.
    """

    def __init__(self, fn, din: int, dout: int, name: str = "analytic"):
        self.fn = fn
        self.din = din
        self.dout = dout
        self.name = name

    def sample_many(self, x: np.ndarray) -> np.ndarray:
        x = self._check_points(x)
        out = np.asarray(self.fn(_fold_coords(x)), dtype=np.float64)
        if out.shape != (x.shape[0], self.dout):
            raise InputShapeError(f"closure returned shape {out.shape}, "
                                  f"expected ({x.shape[0]}, {self.dout})")
        return out


class NeuralField(SignalField):
    """Signal backed by an MLP; sampling mirrors coordinates, then forwards."""

    def __init__(self, net: Mlp):
        self.net = net
        self.din = net.din
        self.dout = net.dout

    def sample_many(self, x: np.ndarray) -> np.ndarray:
        x = self._check_points(x)
        return mlp_forward_batch(self.net, _fold_coords(x))


@dataclass
class GridAntiderivative:
    """Order-n repeated antiderivative of a grid signal, on a padded box.

    ``prefix`` holds the plain repeated inclusive prefix sums (scaled by the
    cell size per integration) of the mirror-padded grid; ``exact_stack``
    holds, for every per-axis order combination k in {0..n}^len(axes), the
    exact antiderivative of the cell-constant signal model evaluated at
    right cell edges.  The padded box spans [-n, 1+n] along each integrated
    axis.
    """

    order: int
    axes: tuple
    resolution: tuple
    lo: np.ndarray            # lower corner of the padded box, per axis
    cell: np.ndarray          # cell size per axis
    prefix: np.ndarray        # top-order plain prefix sums
    exact_stack: dict         # {orders tuple -> array}
    dout: int

    @property
    def padded_shape(self):
        return self.exact_stack[(0,) * len(self.resolution)].shape[:-1]

    def sample(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return self.sample_many(x[None, :])[0]

    def sample_many(self, x: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of the plain prefix-sum grid."""
        x = np.asarray(x, dtype=np.float64)
        u = (x - self.lo) / self.cell - 0.5
        return _multilinear(self.prefix, u)

    def sample_exact_many(self, x: np.ndarray) -> np.ndarray:
        """Exact antiderivative of the cell-constant signal at points x.

        Within each cell the antiderivative is a polynomial whose Taylor
        coefficients at the cell's lower corner are the lower-order edge
        antiderivatives; this evaluates that polynomial, tensorized over the
        integrated axes.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != len(self.resolution):
            raise InputShapeError(f"expected (N, {len(self.resolution)}) points, got {x.shape}")
        n = self.order
        naxes = len(self.resolution)
        shape = self.exact_stack[tuple(n if a in self.axes else 0 for a in range(naxes))].shape
        # cell index and offset from the cell's lower edge, per axis
        cells, offsets = [], []
        for a in range(naxes):
            u = (x[:, a] - self.lo[a]) / self.cell[a]
            j = np.clip(np.floor(u).astype(np.int64), 0, shape[a] - 1)
            cells.append(j)
            offsets.append((u - j) * self.cell[a])

        int_axes = [a for a in range(naxes) if a in self.axes]
        out = np.zeros((x.shape[0], self.dout))
        # sum over per-axis Taylor terms i_a = 0..n (order n - i_a arrays)
        for combo in np.ndindex(*([n + 1] * len(int_axes))):
            coeff = np.ones(x.shape[0])
            key = [0] * naxes
            idx = [None] * naxes
            for a in range(naxes):
                if a not in self.axes:
                    idx[a] = cells[a]
            for pos_a, a in enumerate(int_axes):
                i = combo[pos_a]
                k = n - i
                key[a] = k
                coeff = coeff * offsets[a] ** i / math.factorial(i)
                if k >= 1:
                    coeff = coeff * (cells[a] >= 1)
                    idx[a] = np.maximum(cells[a] - 1, 0)
                else:
                    idx[a] = cells[a]
            arr = self.exact_stack[tuple(key)]
            out += coeff[:, None] * arr[tuple(idx)]
        return out

    def sample_exact(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return self.sample_exact_many(x[None, :])[0]


def _axis_exact_antiderivatives(arr: np.ndarray, axis: int, order: int, h: float):
    """Edge antiderivatives E^1..E^n of a cell-constant signal along one axis.

    E^m[j] is the m-fold antiderivative at the right edge of cell j, with
    all constants of integration zero at the left boundary.  Uses the cell
    Taylor identity: the integral of F^m over cell j is
    sum_i h^(i+1)/(i+1)! E^(m-i)[j-1] + h^(m+1)/(m+1)! v_j.
    """
    def shifted(e):
        pad = [(0, 0)] * e.ndim
        pad[axis] = (1, 0)
        sl = [slice(None)] * e.ndim
        sl[axis] = slice(0, -1)
        return np.pad(e[tuple(sl)], pad)

    levels = [arr]
    for m in range(order):
        cell_integral = (h ** (m + 1) / math.factorial(m + 1)) * arr
        for i in range(m):
            cell_integral = cell_integral + (h ** (i + 1) / math.factorial(i + 1)) * shifted(levels[m - i])
        levels.append(np.cumsum(cell_integral, axis=axis))
    return levels


def grid_repeated_antiderivative(field: GridField, order: int, axes=None) -> GridAntiderivative:
    """Repeated antiderivative of a grid signal over a mirror-padded box.

    Integrates ``order`` times along each requested axis (all by default).
    The grid is mirror-padded by order * resolution cells per side so that
    the antiderivative is available on [-order, 1 + order] along each
    integrated axis.
    """
    if not isinstance(field, GridField):
        raise UnsupportedBackendError("repeated antiderivatives require a grid backend")
    if order < 1:
        raise ValidationError(f"order must be >= 1, got {order}")
    naxes = field.din
    axes = tuple(range(naxes)) if axes is None else tuple(sorted(axes))
    if any(a < 0 or a >= naxes for a in axes) or len(set(axes)) != len(axes):
        raise ValidationError(f"bad axes {axes} for a {naxes}-dimensional grid")

    pad = [(order * field.resolution[a], order * field.resolution[a]) if a in axes else (0, 0)
           for a in range(naxes)] + [(0, 0)]
    padded = np.pad(field.values, pad, mode="symmetric")
    cell = np.array([1.0 / r for r in field.resolution])
    lo = np.array([-float(order) if a in axes else 0.0 for a in range(naxes)])

    # plain repeated prefix sums (inclusive, scaled by the cell size)
    prefix = padded
    for a in axes:
        for _ in range(order):
            prefix = np.cumsum(prefix, axis=a) * cell[a]

    # exact edge antiderivatives for every mixed order combination
    stack = {(0,) * naxes: padded}
    for a in axes:
        new_stack = {}
        for key, arr in stack.items():
            for k, e in enumerate(_axis_exact_antiderivatives(arr, a, order, cell[a])):
                new_key = list(key)
                new_key[a] = k
                new_stack[tuple(new_key)] = e
        stack = new_stack

    return GridAntiderivative(order=order, axes=axes, resolution=field.resolution,
                              lo=lo, cell=cell, prefix=prefix, exact_stack=stack,
                              dout=field.dout)


def sample_antiderivative(g: GridAntiderivative, x) -> np.ndarray:
    """Multilinear interpolation of the prefix-sum grid at point x."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return g.sample_many(x[None, :])[0]


class GridOracleField:
    """Exact integral field over a grid signal, for verifying convolutions.

    Exposes the same evaluation surface as a trained integral-field
    checkpoint (order, kernel_dim, eval_many, output normalization), but
    backed by the exact cell-polynomial antiderivative.
    """

    def __init__(self, field: GridField, order: int, kernel_dim: int | None = None):
        self.din = field.din
        self.dout = field.dout
        self.order = order
        self.kernel_dim = field.din if kernel_dim is None else kernel_dim
        if self.kernel_dim > self.din:
            raise ValidationError("kernel_dim cannot exceed the field dimension")
        self.antiderivative = grid_repeated_antiderivative(
            field, order, axes=tuple(range(self.kernel_dim)))
        self.norm_scale = np.ones(self.dout)
        self.norm_shift = np.zeros(self.dout)

    def eval_many(self, x: np.ndarray) -> np.ndarray:
        return self.antiderivative.sample_exact_many(x)
