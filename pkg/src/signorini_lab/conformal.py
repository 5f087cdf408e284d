"""Self-similar change of variables (y, tau) = (x / 2sqrt(-t), -ln(-t)).

Original-coordinate slices are WeightedFields of kind ``original`` whose time
stamp is t < 0.  Their grid is usually the conformal grid scaled by
2 sqrt(-t), so the forward and backward maps land exactly on nodes and no
interpolation is involved; interpolation only enters through `rescale` or an
explicit target grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exact import sample_field
from .grid import CONFORMAL, ORIGINAL, HalfSpaceGrid, WeightedField


@dataclass(frozen=True)
class ConformalFrame:
    kappa: float
    tau_max: float = 5.0
    dtau: float = 0.01

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.dtau > 0:
            raise ValueError("time step must be positive")
        if self.tau_max < 0:
            raise ValueError("tau_max must be nonnegative")

    @property
    def is_experimental(self) -> bool:
        k = self.kappa
        return k == 1.5 or (k >= 2 and float(k).is_integer() and int(k) % 2 == 0)

    @property
    def steps(self) -> int:
        return int(round(self.tau_max / self.dtau))


def tau_of(t: float) -> float:
    if t >= 0:
        raise ValueError("self-similar time needs t < 0")
    return -math.log(-t)


def t_of(tau: float) -> float:
    return -math.exp(-tau)


def scaled_grid(grid: HalfSpaceGrid, factor: float) -> HalfSpaceGrid:
    return HalfSpaceGrid(grid.n, grid.R * factor, grid.h * factor)


def _same_grid(a: HalfSpaceGrid, b: HalfSpaceGrid) -> bool:
    # scaling by 2 sqrt(-t) and back leaves round-off in R and h
    return a.n == b.n and math.isclose(a.R, b.R, rel_tol=1e-12) and math.isclose(a.h, b.h, rel_tol=1e-12)


def to_selfsimilar(u, kappa: float, t: float | None = None,
                   target: HalfSpaceGrid | None = None) -> WeightedField:
    """u~(y, tau) = u(2 sqrt(-t) y, t) / (sqrt(-t))^kappa.

    ``u`` is an original slice (WeightedField, time = t) or a callable u(x, t);
    a callable needs ``t`` and ``target``.
    """
    if isinstance(u, WeightedField):
        t = u.time if t is None else t
    if t is None or t >= 0:
        raise ValueError("to_selfsimilar needs t < 0")
    if not -1.0 <= t:
        raise ValueError("t must lie in [-1, 0)")
    s = math.sqrt(-t)
    tau = -math.log(-t)
    if callable(u) and not isinstance(u, WeightedField):
        if target is None:
            raise ValueError("a target grid is required for callable data")
        vals = u(2.0 * s * target.points(), t) / s ** kappa
        return WeightedField(target, vals, tau, CONFORMAL)
    natural = HalfSpaceGrid(u.grid.n, u.grid.R / (2 * s), u.grid.h / (2 * s))
    if target is None or _same_grid(target, natural):
        return WeightedField(target or natural, u.values / s ** kappa, tau, CONFORMAL)
    vals = sample_field(u, 2.0 * s * target.points()) / s ** kappa
    return WeightedField(target, vals, tau, CONFORMAL)


def from_selfsimilar(v: WeightedField, kappa: float,
                     target: HalfSpaceGrid | None = None) -> WeightedField:
    """u(x, t) = (sqrt(-t))^kappa u~(x / 2sqrt(-t), tau) at t = -e^{-tau}."""
    t = t_of(v.time)
    s = math.sqrt(-t)
    natural = scaled_grid(v.grid, 2 * s)
    if target is None or _same_grid(target, natural):
        return WeightedField(target or natural, s ** kappa * v.values, t, ORIGINAL)
    vals = s ** kappa * sample_field(v, target.points() / (2.0 * s))
    return WeightedField(target, vals, t, ORIGINAL)


def rescale(u, lam: float, kappa: float):
    """Parabolic rescaling u_lam(x, t) = u(lam x, lam^2 t) / lam^kappa.

    Callables map to callables.  An original slice at time t maps to the slice
    of u_lam at time t / lam^2 on the grid enlarged by 1/lam (node values by
    multilinear interpolation).  A conformal field is returned time-shifted:
    u~_lam(tau) = u~(tau - 2 ln lam), so it keeps its values and gets the
    stamp tau + 2 ln lam.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if lam > 1:
        raise ValueError("lambda must lie in (0, 1]")
    if callable(u) and not isinstance(u, WeightedField):
        return lambda x, t: u(lam * np.asarray(x, float), lam * lam * t) / lam ** kappa
    if u.kind == CONFORMAL:
        return WeightedField(u.grid, u.values, u.time + 2.0 * math.log(lam), CONFORMAL)
    if lam == 1.0:
        return u
    target = scaled_grid(u.grid, 1.0 / lam)
    vals = sample_field(u, lam * target.points()) / lam ** kappa
    return WeightedField(target, vals, u.time / (lam * lam), ORIGINAL)


def shift_trajectory(times, lam: float):
    """Times at which the rescaled trajectory sees the same snapshots."""
    return np.asarray(times, dtype=float) + 2.0 * math.log(lam)


def rescaled_snapshot(snapshot: WeightedField, lam: float, kappa: float) -> WeightedField:
    """u~_lam at tau = snapshot.time + 2 ln lam, built through original coordinates."""
    u = from_selfsimilar(snapshot, kappa)
    u_lam = rescale(u, lam, kappa)
    return to_selfsimilar(u_lam, kappa, target=snapshot.grid)


def weiss_shift_identity_check(trace, lam: float, snapshots=(), kappa=None) -> float:
    """max over tau of |W(u~(tau - 2 ln lam)) - W(u~_lam(tau))|.

    The left side is read off the stored energy trace (linear interpolation in
    tau); the right side is recomputed from each snapshot after rescaling in
    original coordinates, so spatial interpolation error shows up here.
    """
    from .weiss import weiss_energy

    tau = np.asarray(trace.tau, dtype=float)
    W = np.asarray(trace.W, dtype=float)
    if lam == 1.0:
        return 0.0
    shift = -2.0 * math.log(lam)
    kappa = trace.kappa if kappa is None else kappa
    if not snapshots:
        raise ValueError("snapshots are required to evaluate the rescaled energy")
    res = []
    for snap in snapshots:
        target_tau = snap.time - shift
        if target_tau < tau[0] - 1e-12:
            continue
        lhs = float(np.interp(snap.time, tau, W))
        rhs = weiss_energy(rescaled_snapshot(snap, lam, kappa), kappa)
        res.append(abs(lhs - rhs))
    if not res:
        raise ValueError("trace does not cover the shifted window")
    return float(max(res))
