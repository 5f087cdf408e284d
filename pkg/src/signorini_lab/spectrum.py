"""Dirichlet-Neumann spectrum of -1/2 Lap + y.grad on the slit plane.

The map y - s e_1 = z^2 opens the slit {y_1 <= s, y_2 = 0} onto the imaginary
axis, so with z in the quarter plane {z_1 > 0, z_2 >= 0} the problem becomes

    1/2 int grad_z u . grad_z v rho dz = lam int u v 4|z|^2 rho dz,
    rho = exp(-|z^2 + s|^2),

Dirichlet on z_1 = 0 (the slit, including its tip at the origin), Neumann on
z_2 = 0 (evenness in y_2) and Dirichlet on the far edges.  The edge-based
stiffness and lumped mass keep the pencil symmetric.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class EigenError(RuntimeError):
    pass


@dataclass
class SlitEigenProblem:
    cells: int
    Rz: float
    shift: float
    z1: np.ndarray
    z2: np.ndarray
    free: np.ndarray  # boolean mask on the (z1, z2) node array
    K: sp.csr_matrix  # half the weighted Dirichlet form, free block
    B: np.ndarray  # lumped 4|z|^2 rho mass on free nodes

    @property
    def h(self) -> float:
        return self.Rz / self.cells

    @property
    def shape(self):
        return (self.z1.size, self.z2.size)

    def points(self):
        return np.meshgrid(self.z1, self.z2, indexing="ij")

    def to_y(self):
        Z1, Z2 = self.points()
        return Z1 * Z1 - Z2 * Z2 + self.shift, 2 * Z1 * Z2

    def expand(self, vec):
        out = np.zeros(self.shape)
        out[self.free] = vec
        return out

    def restrict(self, full):
        return np.asarray(full, float)[self.free]


def default_radius(R: float = 6.0, shift: float = 0.0) -> float:
    return math.sqrt(R + abs(shift))


def assemble(cells: int, Rz: float | None = None, shift: float = 0.0, R: float = 6.0) -> SlitEigenProblem:
    if cells < 4:
        raise ValueError("grid too coarse: need at least 4 cells per axis")
    Rz = default_radius(R, shift) if Rz is None else Rz
    h = Rz / cells
    z = h * np.arange(cells + 1)
    Z1, Z2 = np.meshgrid(z, z, indexing="ij")

    def rho(a, b):
        y1 = a * a - b * b + shift
        y2 = 2 * a * b
        return np.exp(-(y1 * y1 + y2 * y2))

    tf = np.ones(cells + 1)
    tf[0] = tf[-1] = 0.5
    N = Z1.size
    idx = np.arange(N).reshape(Z1.shape)
    rows, cols, vals = [], [], []
    # edges along z1: transverse trapezoid factor in z2
    c = 0.5 * rho(0.5 * (Z1[:-1] + Z1[1:]), Z2[:-1]) * tf[None, :]
    a, b = idx[:-1].ravel(), idx[1:].ravel()
    c = c.ravel()
    rows += [a, b, a, b]; cols += [a, b, b, a]; vals += [c, c, -c, -c]
    c = 0.5 * rho(Z1[:, :-1], 0.5 * (Z2[:, :-1] + Z2[:, 1:])) * tf[:, None]
    a, b = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    c = c.ravel()
    rows += [a, b, a, b]; cols += [a, b, b, a]; vals += [c, c, -c, -c]
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N)).tocsr()
    mass = h * h * np.outer(tf, tf) * 4 * (Z1 ** 2 + Z2 ** 2) * rho(Z1, Z2)
    free = np.ones(Z1.shape, dtype=bool)
    free[0, :] = False  # slit and its tip
    free[-1, :] = False
    free[:, -1] = False
    fl = free.ravel()
    return SlitEigenProblem(cells, Rz, shift, z, z, free, K[fl][:, fl].tocsr(), mass.ravel()[fl])


@dataclass
class EigenPairs:
    values: np.ndarray
    vectors: np.ndarray  # columns, B-orthonormal, on free nodes


def solve_lowest(problem: SlitEigenProblem, k: int = 3, sigma: float = 0.0) -> EigenPairs:
    """k eigenvalues closest above sigma by shift-invert Lanczos."""
    if k < 1:
        raise ValueError("k must be at least 1")
    Bm = sp.diags(problem.B)
    # ARPACK otherwise draws a random start vector and results differ in the last bits
    v0 = np.ones(problem.B.size)
    try:
        vals, vecs = spla.eigsh(problem.K, k=k, M=Bm, sigma=sigma, which="LM", tol=1e-12, v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise EigenError("shift-invert iteration did not converge") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # fix signs so the trace integral (or the first nonzero moment) is positive
    for j in range(k):
        s = np.sum(problem.B * vecs[:, j])
        if s < 0:
            vecs[:, j] = -vecs[:, j]
    return EigenPairs(vals, vecs)


def b_inner(problem: SlitEigenProblem, a, b) -> float:
    return float(np.sum(problem.B * a * b))


def correlation(problem: SlitEigenProblem, vec, target_full) -> float:
    t = problem.restrict(target_full)
    return abs(b_inner(problem, vec, t)) / math.sqrt(b_inner(problem, vec, vec) * b_inner(problem, t, t))


def ground_pullback(problem: SlitEigenProblem):
    """Re(y_1 + i|y_2|)^{1/2} in mapped coordinates is z_1."""
    Z1, _ = problem.points()
    return Z1


def second_pullback(problem: SlitEigenProblem):
    """Re(y_1 + i|y_2|)^{3/2} in mapped coordinates is Re z^3."""
    Z1, Z2 = problem.points()
    return Z1 ** 3 - 3 * Z1 * Z2 ** 2


@dataclass
class SpanReport:
    correlation: float
    captured: float  # fraction of weighted norm captured by the candidate
    residual: float
    gap_to_neighbours: float


def verify_eigenspace(problem: SlitEigenProblem, pairs: EigenPairs, index: int, candidate_full,
                      cluster_gap: float = 1e-3) -> SpanReport:
    vals = pairs.values
    gaps = [abs(vals[index] - vals[j]) for j in range(vals.size) if j != index]
    gap = min(gaps) if gaps else float("inf")
    if gap < cluster_gap:
        raise EigenError(f"eigenvalue {vals[index]:.6f} is numerically degenerate (gap {gap:.2e})")
    v = pairs.vectors[:, index]
    c = correlation(problem, v, candidate_full)
    t = problem.restrict(candidate_full)
    coef = b_inner(problem, v, t) / b_inner(problem, t, t)
    res = v - coef * t
    return SpanReport(c, c * c, math.sqrt(b_inner(problem, res, res) / b_inner(problem, v, v)), gap)


def local_cubic_coefficient(problem: SlitEigenProblem, vec, radius: float = 0.3) -> float:
    """Fit u ~ b z_1 (z_2^2 - z_1^2/3) near the tip; b is reported, not asserted."""
    Z1, Z2 = problem.points()
    full = problem.expand(vec)
    sel = (Z1 ** 2 + Z2 ** 2 <= radius ** 2) & problem.free
    basis = (Z1 * (Z2 ** 2 - Z1 ** 2 / 3))[sel]
    return float(np.dot(basis, full[sel]) / np.dot(basis, basis))


def richardson(values_by_level, ratio: float = 2.0):
    """Extrapolate from three refinement levels (coarse to fine).

    Returns (extrapolated, observed order).  The order is estimated from the
    three levels and clipped to [1, 4]; extrapolation uses the finest pair.
    """
    a, b, c = (np.asarray(v, float) for v in values_by_level[-3:])
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.log(np.abs((a - b) / (b - c))) / math.log(ratio)
    p = np.where(np.isfinite(p), np.clip(p, 1.0, 4.0), 2.0)
    f = ratio ** p
    return c + (c - b) / (f - 1), p


@dataclass
class SpectrumTable:
    cells: list
    values: np.ndarray  # levels x k
    extrapolated: np.ndarray
    order: np.ndarray
    correlations: dict
    band_clear: bool  # nothing in (0.55, 1.45) on the finest level


def spectrum_study(levels=(40, 80, 160), k: int = 3, R: float = 6.0) -> SpectrumTable:
    vals, corr = [], {}
    last = None
    for N in levels:
        prob = assemble(N, R=R)
        pairs = solve_lowest(prob, k)
        vals.append(pairs.values)
        last = (prob, pairs)
    prob, pairs = last
    corr["ground"] = correlation(prob, pairs.vectors[:, 0], ground_pullback(prob))
    corr["second"] = correlation(prob, pairs.vectors[:, 1], second_pullback(prob))
    corr["orthogonality"] = abs(b_inner(prob, pairs.vectors[:, 0], pairs.vectors[:, 1]))
    corr["tip_coefficient"] = local_cubic_coefficient(prob, pairs.vectors[:, 1])
    vals = np.array(vals)
    ext, p = richardson(vals)
    band = not np.any((vals[-1] > 0.55) & (vals[-1] < 1.45))
    return SpectrumTable(list(levels), vals, ext, p, corr, band)


# -- tip-shifted problems for eigen-trajectories ----------------------------------------


def eigenvalue_at_shift(shift: float, index: int, cells: int, R: float = 6.0) -> float:
    prob = assemble(cells, shift=shift, R=R)
    return float(solve_lowest(prob, index + 1).values[index])


def tune_shift(target: float, index: int, cells: int, bracket, R: float = 6.0, xtol: float = 1e-10):
    """Tip shift s with the index-th discrete eigenvalue equal to target."""
    from scipy.optimize import brentq

    f = lambda s: eigenvalue_at_shift(s, index, cells, R) - target
    a, b = bracket
    fa, fb = f(a), f(b)
    if fa * fb > 0:
        raise EigenError(f"target {target} not bracketed by shifts {bracket}")
    return brentq(f, a, b, xtol=xtol)


@dataclass
class MappedTrajectory:
    tau: np.ndarray
    W: np.ndarray
    norm2: np.ndarray
    eigenvalue: float


def evolve_mapped(problem: SlitEigenProblem, v0, m: int, dtau: float, tau_max: float) -> MappedTrajectory:
    """Implicit Euler for u_tau = 1/4 Lap u - (y/2).grad u + m u on the mapped slit problem.

    In the pencil's units B u_tau = -(1/2) K u + m B u, and the 2m energy is
    W = 1/2 u.K.u - m u.B.u (K already carries the factor 1/2).
    """
    Bm = sp.diags(problem.B)
    A = (Bm * (1 - dtau * m) + dtau * 0.5 * problem.K).tocsc()
    lu = spla.splu(A)
    u = np.asarray(v0, float).copy()
    steps = int(round(tau_max / dtau))
    taus, Ws, Ns = [0.0], [], []

    def energy(x):
        return 0.5 * float(x @ (problem.K @ x)) - m * b_inner(problem, x, x)

    Ws.append(energy(u))
    Ns.append(b_inner(problem, u, u))
    for k in range(1, steps + 1):
        u = lu.solve(problem.B * u)
        taus.append(k * dtau)
        Ws.append(energy(u))
        Ns.append(b_inner(problem, u, u))
    lam = float(u @ (problem.K @ u)) / b_inner(problem, u, u)
    return MappedTrajectory(np.array(taus), np.array(Ws), np.array(Ns), lam)


def trace_admissible(problem: SlitEigenProblem, vec, tol: float = 1e-10) -> bool:
    """Nonnegative even trace off the slit: the z_2 = 0 row (y_2 = 0, y_1 >= s)."""
    full = problem.expand(vec)
    tr = full[:, 0]
    scale = float(np.max(np.abs(full)))
    return bool(np.all(tr >= -tol * scale))


def eigen_residual_3d(grid, direction_index: int = 0):
    """Strong residual of -1/2 Lap u + y.grad u - 3/2 u for u = y_i Re(y_2 + i|y_3|)^{1/2}.

    Returns (max residual away from the slit edge, max |u|) on a 3-d grid.
    """
    from .grid import WeightedField, gradient_fd, laplacian_fd

    pts = grid.points()
    s = pts[..., 1]
    yn = np.abs(pts[..., 2])
    half = np.real(np.sqrt(s + 1j * yn))
    u = WeightedField(grid, pts[..., direction_index] * half)
    lap = laplacian_fd(u).values
    grads = gradient_fd(u)
    drift = sum(pts[..., d] * grads[d] for d in range(3))
    res = -0.5 * lap + drift - 1.5 * u.values
    r_edge = np.hypot(s, yn)
    far = (r_edge > 0.5) & (pts[..., 2] > 2 * grid.h) & (np.max(np.abs(pts), axis=-1) < grid.R - 2 * grid.h)
    far &= np.linalg.norm(pts, axis=-1) < 2.5
    return float(np.max(np.abs(res[far]))), float(np.max(np.abs(u.values[far])))
