"""Closed-form fields: backward heat kernel, 3/2-profiles, Hermite tensors, h_2m."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.special import eval_hermite as _hermite_1d

from .grid import HalfSpaceGrid, WeightedField, l2mu_norm

_GOLDEN_FILE = "normalizers.json"


def eval_kernel(x, t: float, n: int):
    """Backward heat kernel (-4 pi t)^(-n/2) exp(|x|^2 / 4t); zero for t >= 0."""
    x = np.asarray(x, dtype=float)
    if t >= 0:
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
    r2 = np.sum(x * x, axis=-1)
    return (-4.0 * math.pi * t) ** (-n / 2.0) * np.exp(r2 / (4.0 * t))


# -- normalizers ---------------------------------------------------------------


@lru_cache(maxsize=1)
def load_goldens() -> list:
    text = resources.files("signorini_lab").joinpath("data", _GOLDEN_FILE).read_text()
    return json.loads(text)["entries"]


def golden(name: str, n: int, m: int = 0) -> float:
    for row in load_goldens():
        if row["name"] == name and row["n"] == n and row["m"] == m:
            return float(row["value"])
    raise KeyError(f"no golden value for {name} n={n} m={m}")


def profile_normalizer_closed_form(n: int) -> float:
    # |Re(s + i|y_n|)^{3/2}|^2 integrates to (3 sqrt(pi)/8)(pi/2) in the half plane
    mass = 3.0 * math.pi ** 1.5 / 16.0 * math.pi ** ((n - 2) / 2.0)
    return 1.0 / math.sqrt(mass)


def hermite_normalizer(alpha) -> float:
    """c_alpha with unit norm of c_alpha prod H_{alpha_i}(y_i) on the half space."""
    sq = 1.0
    for a in alpha:
        sq *= math.sqrt(math.pi) * 2.0 ** a * math.factorial(a)
    return 1.0 / math.sqrt(0.5 * sq)


# -- 3/2-homogeneous profiles ------------------------------------------------------


@dataclass(frozen=True)
class Profile32:
    amplitude: float
    direction: tuple
    c_n: float | None = None

    def __post_init__(self):
        e = np.asarray(self.direction, dtype=float).ravel()
        if abs(np.linalg.norm(e) - 1.0) > 1e-9:
            raise ValueError(f"direction must be a unit vector, got |e| = {np.linalg.norm(e):.6g}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        object.__setattr__(self, "direction", tuple(float(v) for v in e))

    @property
    def n(self) -> int:
        return len(self.direction) + 1


def direction_from_angle(n: int, phi: float) -> tuple:
    if n == 2:
        return (1.0,) if math.cos(phi) >= 0 else (-1.0,)
    return (math.cos(phi), math.sin(phi))


def profile_raw(points, direction) -> np.ndarray:
    """Re(s + i|y_n|)^{3/2} with s = y'.e, written as r^{3/2} cos(3 theta/2)."""
    pts = np.asarray(points, dtype=float)
    s = pts[..., :-1] @ np.asarray(direction, dtype=float)
    yn = np.abs(pts[..., -1])
    r = np.hypot(s, yn)
    theta = np.arctan2(yn, s)
    vals = r ** 1.5 * np.cos(1.5 * theta)
    # cos(3 pi / 2) rounds to -1.8e-16; the contact ray is an exact zero set
    return np.where((yn == 0) & (s <= 0), 0.0, vals)


def _resolve_grid_points(where):
    if isinstance(where, HalfSpaceGrid):
        return where, where.points()
    return None, np.asarray(where, dtype=float)


def eval_profile32(p: Profile32, where):
    """Sample lambda c_n h_e on a grid (-> WeightedField) or at raw points (-> array)."""
    grid, pts = _resolve_grid_points(where)
    if pts.shape[-1] != p.n:
        raise ValueError("point dimension does not match the profile")
    c = p.c_n if p.c_n is not None else golden("c_n", p.n)
    vals = p.amplitude * c * profile_raw(pts, p.direction)
    return WeightedField(grid, vals) if grid is not None else vals


def normalize_profile(n: int, grid: HalfSpaceGrid) -> float:
    """c_n making the sampled unit-amplitude profile unit-norm on this grid."""
    if grid.n != n:
        raise ValueError("grid dimension does not match n")
    e = (1.0,) + (0.0,) * (n - 2)
    raw = WeightedField(grid, profile_raw(grid.points(), e))
    norm = l2mu_norm(raw)
    if not norm > 0:
        raise ValueError("degenerate grid: profile has zero quadrature norm")
    return 1.0 / norm


def unit_profile(grid: HalfSpaceGrid, direction=None, c_n=None) -> WeightedField:
    e = direction if direction is not None else (1.0,) + (0.0,) * (grid.n - 2)
    return eval_profile32(Profile32(1.0, e, c_n), grid)


# -- Hermite tensors ------------------------------------------------------------


def multi_indices(n: int, degree: int, upto: bool = False) -> list:
    """Multi-indices with alpha_n even, |alpha| == degree (or <= degree), sorted."""
    out = []
    degs = range(degree + 1) if upto else [degree]
    for d in degs:
        for alpha in itertools.product(range(d + 1), repeat=n):
            if sum(alpha) == d and alpha[-1] % 2 == 0:
                out.append(tuple(alpha))
    return sorted(out, key=lambda a: (sum(a), a))


def hermite_raw(alpha, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    vals = np.ones(pts.shape[:-1])
    for i, a in enumerate(alpha):
        vals = vals * _hermite_1d(a, pts[..., i])
    return vals


def eval_hermite(alpha, where):
    """Normalized p_alpha on a grid (-> WeightedField) or at points (-> array)."""
    alpha = tuple(int(a) for a in alpha)
    grid, pts = _resolve_grid_points(where)
    if pts.shape[-1] != len(alpha):
        raise ValueError("multi-index length does not match point dimension")
    vals = hermite_normalizer(alpha) * hermite_raw(alpha, pts)
    return WeightedField(grid, vals) if grid is not None else vals


@dataclass
class HermiteElement:
    """sum lambda_alpha p_alpha, kept sparse as a dict keyed by multi-index."""

    n: int
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        for alpha in self.coeffs:
            if len(alpha) != self.n:
                raise ValueError(f"multi-index {alpha} has wrong length")
            if alpha[-1] % 2:
                raise ValueError(f"multi-index {alpha} is odd in y_n")

    @property
    def degree(self) -> int:
        return max((sum(a) for a, c in self.coeffs.items() if c != 0), default=0)

    def norm(self) -> float:
        return math.sqrt(sum(c * c for c in self.coeffs.values()))


def assemble_element(element: HermiteElement, where):
    grid, pts = _resolve_grid_points(where)
    vals = np.zeros(pts.shape[:-1])
    for alpha, c in element.coeffs.items():
        if c:
            vals = vals + c * eval_hermite(alpha, pts)
    return WeightedField(grid, vals) if grid is not None else vals


# -- h_2m ------------------------------------------------------------------------


def h2m_raw(m: int, points) -> np.ndarray:
    """Unnormalized h_2m: harmonic tangential part plus the y_n Hermite part."""
    if m <= 0:
        raise ValueError("m must be a positive integer")
    pts = np.asarray(points, dtype=float)
    yn = pts[..., -1]
    vals = np.zeros(pts.shape[:-1])
    for j in range(pts.shape[-1] - 1):
        vals = vals + 4.0 ** m * np.real((pts[..., j] + 1j * yn) ** (2 * m))
    poly = sum(
        (-1) ** l / (math.factorial(m - l) * math.factorial(2 * l)) * (2 * yn) ** (2 * l)
        for l in range(m + 1)
    )
    return vals + math.factorial(m) * poly


def h2m_normalizer_grid(m: int, grid: HalfSpaceGrid) -> float:
    return l2mu_norm(WeightedField(grid, h2m_raw(m, grid.points())))


def eval_h2m(m: int, where, C: float | None = None):
    """h_2m / C_{m,n}; C defaults to the stored high-resolution golden."""
    grid, pts = _resolve_grid_points(where)
    if C is None:
        C = golden("C_mn", pts.shape[-1], m)
    vals = h2m_raw(m, pts) / C
    return WeightedField(grid, vals) if grid is not None else vals


# -- homogeneous extension ------------------------------------------------------------


def homogeneous_extend(stationary, kappa: float, x, t: float):
    """(sqrt(-t))^kappa * stationary(x / (2 sqrt(-t))).

    ``stationary`` is a WeightedField (multilinear interpolation) or a callable
    taking points of shape (..., n).
    """
    if t >= 0:
        raise ValueError("homogeneous extension needs t < 0")
    x = np.asarray(x, dtype=float)
    s = math.sqrt(-t)
    y = x / (2.0 * s)
    y[..., -1] = np.abs(y[..., -1])
    if callable(stationary) and not isinstance(stationary, WeightedField):
        return s ** kappa * stationary(y)
    vals = sample_field(stationary, y)
    return s ** kappa * vals


def sample_field(f: WeightedField, points) -> np.ndarray:
    """Multilinear interpolation; raises if any point leaves the grid box."""
    pts = np.asarray(points, dtype=float)
    g = f.grid
    lo = np.array([-g.R] * (g.n - 1) + [0.0])
    hi = np.full(g.n, g.R)
    tol = 1e-12 * g.R
    if np.any(pts < lo - tol) or np.any(pts > hi + tol):
        raise ValueError("evaluation point maps outside the truncated grid")
    pts = np.clip(pts, lo, hi)
    # direct multilinear lookup, faster than building an interpolator each call
    k = np.floor((pts - lo) / g.h).astype(int)
    k = np.minimum(k, np.array(g.shape) - 2)
    frac = (pts - lo) / g.h - k
    out = np.zeros(pts.shape[:-1])
    for corner in itertools.product((0, 1), repeat=g.n):
        wgt = np.ones(pts.shape[:-1])
        idx = []
        for d, c in enumerate(corner):
            wgt = wgt * (frac[..., d] if c else 1.0 - frac[..., d])
            idx.append(k[..., d] + c)
        out = out + wgt * f.values[tuple(idx)]
    return out
