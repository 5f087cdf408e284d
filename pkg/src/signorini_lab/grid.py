"""Truncated half-space grids, Gaussian quadrature and finite differences.

Nodes live on ``[-R, R]^(n-1) x [0, R]`` with spacing ``h``; the last axis is
the normal direction and its first layer is the boundary plane ``y_n = 0``.
Field values are stored as arrays of shape ``grid.shape`` in axis order
``(y_1, ..., y_n)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

DEFAULT_RADIUS = {2: 6.0, 3: 5.0}

CONFORMAL = "conformal"
ORIGINAL = "original"


@dataclass(frozen=True)
class HalfSpaceGrid:
    n: int
    R: float
    h: float

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"unsupported dimension n={self.n}; expected 2 or 3")
        if self.R <= 0 or self.h <= 0:
            raise ValueError("R and h must be positive")
        ratio = self.R / self.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"R/h = {ratio:g} is not an integer")

    @property
    def cells(self) -> int:
        return int(round(self.R / self.h))

    @property
    def shape(self) -> tuple:
        k = self.cells
        return (2 * k + 1,) * (self.n - 1) + (k + 1,)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def axes(self) -> list:
        k = self.cells
        tang = self.h * np.arange(-k, k + 1)
        return [tang] * (self.n - 1) + [self.h * np.arange(k + 1)]

    def coords(self) -> list:
        return np.meshgrid(*self.axes, indexing="ij")

    def points(self) -> np.ndarray:
        """Node coordinates as an array of shape ``shape + (n,)``."""
        return np.stack(self.coords(), axis=-1)

    def trapezoid_factors(self) -> np.ndarray:
        """Product of the per-axis trapezoid end factors (1/2 at box faces)."""
        out = np.ones(self.shape)
        for d, m in enumerate(self.shape):
            f = np.ones(m)
            f[0] = f[-1] = 0.5
            out = out * f.reshape([-1 if i == d else 1 for i in range(self.n)])
        return out

    def outer_mask(self) -> np.ndarray:
        """Nodes on the artificial boundary (box faces other than y_n = 0)."""
        mask = np.zeros(self.shape, dtype=bool)
        for d in range(self.n - 1):
            idx = [slice(None)] * self.n
            idx[d] = 0
            mask[tuple(idx)] = True
            idx[d] = -1
            mask[tuple(idx)] = True
        mask[..., -1] = True
        return mask

    def boundary_points(self) -> np.ndarray:
        """Tangential coordinates of the y_n = 0 layer, shape ``shape[:-1] + (n-1,)``."""
        return self.points()[..., 0, :-1]


def make_grid(n: int, R: float | None = None, h: float = 0.05) -> HalfSpaceGrid:
    if R is None:
        if n not in DEFAULT_RADIUS:
            raise ValueError(f"unsupported dimension n={n}; expected 2 or 3")
        R = DEFAULT_RADIUS[n]
    return HalfSpaceGrid(int(n), float(R), float(h))


def _density(kind: str, r2: np.ndarray) -> np.ndarray:
    if kind == CONFORMAL:
        return np.exp(-r2)
    if kind == ORIGINAL:
        return np.exp(-r2 / 4.0)
    raise ValueError(f"unknown measure kind {kind!r}")


@dataclass(frozen=True)
class GaussianMeasure:
    """Trapezoid quadrature weights for e^{-|y|^2}dy or e^{-|x|^2/4}dx."""

    grid: HalfSpaceGrid
    kind: str
    weights: np.ndarray

    def boundary_weights(self) -> np.ndarray:
        return _boundary_weights(self.grid, self.kind)


@lru_cache(maxsize=64)
def _weights(grid: HalfSpaceGrid, kind: str) -> np.ndarray:
    r2 = sum(c * c for c in grid.coords())
    w = grid.h ** grid.n * grid.trapezoid_factors() * _density(kind, r2)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=64)
def _boundary_weights(grid: HalfSpaceGrid, kind: str) -> np.ndarray:
    pts = grid.boundary_points()
    r2 = np.sum(pts * pts, axis=-1)
    fac = grid.trapezoid_factors()[..., 0] * 2.0  # undo the y_n end factor
    w = grid.h ** (grid.n - 1) * fac * _density(kind, r2)
    w.setflags(write=False)
    return w


def measure(grid: HalfSpaceGrid, kind: str = CONFORMAL) -> GaussianMeasure:
    return GaussianMeasure(grid, kind, _weights(grid, kind))


@dataclass(frozen=True, eq=False)
class WeightedField:
    """Node values on a half-space grid, stamped with a time (tau or t)."""

    grid: HalfSpaceGrid
    values: np.ndarray
    time: float = 0.0
    kind: str = CONFORMAL

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field has non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def trace(self) -> np.ndarray:
        return self.values[..., 0]

    def with_values(self, values, time=None) -> "WeightedField":
        return WeightedField(self.grid, values, self.time if time is None else time, self.kind)

    def _check(self, other):
        if isinstance(other, WeightedField) and other.grid != self.grid:
            raise ValueError("grid mismatch")

    def __add__(self, other):
        self._check(other)
        v = other.values if isinstance(other, WeightedField) else other
        return self.with_values(self.values + v)

    def __sub__(self, other):
        self._check(other)
        v = other.values if isinstance(other, WeightedField) else other
        return self.with_values(self.values - v)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def field_from_function(grid: HalfSpaceGrid, fn, time: float = 0.0, kind: str = CONFORMAL):
    return WeightedField(grid, fn(grid.points()), time, kind)


def _measure_for(a: WeightedField, m: GaussianMeasure | None) -> GaussianMeasure:
    if m is None:
        return measure(a.grid, a.kind)
    if m.grid != a.grid:
        raise ValueError("grid mismatch")
    return m


def inner_mu(a: WeightedField, b: WeightedField, m: GaussianMeasure | None = None) -> float:
    if a.grid != b.grid:
        raise ValueError("grid mismatch")
    m = _measure_for(a, m)
    return float(np.sum(m.weights * a.values * b.values))


def l2mu_norm(a: WeightedField, m: GaussianMeasure | None = None) -> float:
    return float(np.sqrt(max(inner_mu(a, a, m), 0.0)))


def gradient_fd(a: WeightedField) -> list:
    """Centered differences inside, second-order one-sided at every face."""
    return [np.gradient(a.values, a.grid.h, axis=d, edge_order=2) for d in range(a.grid.n)]


def w12mu_norm(a: WeightedField, m: GaussianMeasure | None = None) -> float:
    m = _measure_for(a, m)
    total = np.sum(m.weights * a.values ** 2)
    for g in gradient_fd(a):
        total += np.sum(m.weights * g ** 2)
    return float(np.sqrt(total))


def _second_difference(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(v, axis, 0)
    if v.shape[0] < 4:
        raise ValueError("grid too small for the one-sided second-derivative stencil")
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h ** 2
    out[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / h ** 2
    out[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / h ** 2
    return np.moveaxis(out, 0, axis)


def laplacian_fd(a: WeightedField) -> WeightedField:
    lap = sum(_second_difference(a.values, a.grid.h, d) for d in range(a.grid.n))
    return a.with_values(lap)


def normal_derivative(a: WeightedField) -> np.ndarray:
    """d/dy_n on the boundary layer, one-sided second order: (-3u0 + 4u1 - u2)/2h."""
    v = a.values
    if v.shape[-1] < 3:
        raise ValueError("grid too small for the one-sided normal stencil")
    return (-3 * v[..., 0] + 4 * v[..., 1] - v[..., 2]) / (2 * a.grid.h)


def boundary_trace_integral(g, grid: HalfSpaceGrid, kind: str = CONFORMAL) -> float:
    """Trapezoid value of the integral of g over {y_n = 0} against the Gaussian."""
    g = np.asarray(g, dtype=float)
    w = _boundary_weights(grid, kind)
    if g.shape != w.shape:
        raise ValueError("boundary array does not match the grid")
    return float(np.sum(w * g))


def edge_collar_mask(grid: HalfSpaceGrid, e=None) -> np.ndarray:
    """Nodes within one cell of the slit edge {y'.e = 0, y_n = 0}."""
    pts = grid.points()
    e = np.array([1.0] + [0.0] * (grid.n - 2)) if e is None else np.asarray(e, float)
    s = pts[..., :-1] @ e
    return (np.abs(s) <= grid.h * (1 + 1e-9)) & (pts[..., -1] <= grid.h * (1 + 1e-9))


@lru_cache(maxsize=16)
def dirichlet_form(grid: HalfSpaceGrid, kind: str = CONFORMAL) -> sp.csr_matrix:
    """Weighted stiffness K with u.K.u ~ integral of |grad u|^2 against the Gaussian.

    Edge differences along each axis, density sampled at the edge midpoint and
    trapezoid end factors in the transverse axes.
    """
    n, h = grid.n, grid.h
    shape = grid.shape
    idx = np.arange(grid.size).reshape(shape)
    coords = grid.coords()
    tf = grid.trapezoid_factors()
    rows, cols, vals = [], [], []
    for d in range(n):
        lo = [slice(None)] * n
        hi = [slice(None)] * n
        lo[d] = slice(0, -1)
        hi[d] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        r2 = 0.0
        for k in range(n):
            c = 0.5 * (coords[k][lo] + coords[k][hi]) if k == d else coords[k][lo]
            r2 = r2 + c * c
        # transverse trapezoid factors only: divide out the factor along d
        fd = np.ones(shape[d])
        fd[0] = fd[-1] = 0.5
        trans = tf[lo] / fd[:-1].reshape([-1 if i == d else 1 for i in range(n)])
        c = (h ** (n - 2) * trans * _density(kind, r2)).ravel()
        a, b = idx[lo].ravel(), idx[hi].ravel()
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        vals += [c, c, -c, -c]
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    ).tocsr()
    return K


def dirichlet_energy(a: WeightedField) -> float:
    """Quadrature of the integral of |grad a|^2 against the field's Gaussian."""
    v = a.values.ravel()
    return float(v @ (dirichlet_form(a.grid, a.kind) @ v))


def interpolator(a: WeightedField):
    """Multilinear interpolant of a field; raises outside the grid box."""
    from scipy.interpolate import RegularGridInterpolator

    return RegularGridInterpolator(a.grid.axes, a.values, method="linear", bounds_error=True)
