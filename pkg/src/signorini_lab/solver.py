"""Implicit Euler for the constrained drift-diffusion equation in conformal variables.

Discretization is variational: lumped Gaussian mass M, edge-based weighted
stiffness K and Q = K/4 - (kappa/2) M, so that W_h(u) = u.Q.u is the discrete
Weiss energy and the boundary condition y_n = 0 is natural.  One step solves

    A u = M u_old + dtau M F + E mu,      A = M + dtau Q,

with E injecting boundary-node multipliers.  Eliminating the bulk leaves a
dense system on the boundary layer, u_B = q + S mu with S = E^T A^{-1} E:

* projected: the LCP  u_B >= 0, mu >= 0, u_B . mu = 0  (projected SOR,
  omega = 1.5, then an active-set polish);
* penalized: mu = -(dtau/4) w' beta_eps(u_B), solved by damped Newton.

The outward flux read off the discrete equation,
dn u = -4 (A u - b)_B / (dtau w'), is the normal derivative d/dy_n that both
schemes and all boundary integrals use.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .conformal import ConformalFrame
from .weiss import weiss_energy
from .grid import CONFORMAL, HalfSpaceGrid, WeightedField, dirichlet_form, measure, normal_derivative

log = logging.getLogger(__name__)

PROJECTED = "projected"
PENALIZED = "penalized"


class SolverError(RuntimeError):
    pass


# -- penalty profile ---------------------------------------------------------------


def beta_eps(s, eps: float):
    """0 for s >= 0, eps + s/eps for s <= -2 eps^2, quartic C^2 bridge between."""
    s = np.asarray(s, dtype=float)
    t = (s + 2 * eps * eps) / (2 * eps * eps)
    bridge = eps * (-1.0 + 2 * t - 2 * t ** 3 + t ** 4)
    return np.where(s >= 0, 0.0, np.where(t <= 0, eps + s / eps, bridge))


def dbeta_eps(s, eps: float):
    s = np.asarray(s, dtype=float)
    t = (s + 2 * eps * eps) / (2 * eps * eps)
    bridge = (1 - t) ** 2 * (1 + 2 * t) / eps
    return np.where(s >= 0, 0.0, np.where(t <= 0, 1.0 / eps, bridge))


# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    frame: ConformalFrame
    grid: HalfSpaceGrid
    scheme: str = PROJECTED
    eps: float = 1e-2
    forcing: object = None  # callable tau -> array on grid (the profile f~)
    forcing_bound: float = 0.0
    tol: float = 1e-10
    omega: float = 1.5
    max_iter: int = 200_000
    snapshot_stride: int = 10

    def __post_init__(self):
        if self.scheme not in (PROJECTED, PENALIZED):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.eps > 0:
            raise ValueError("penalty eps must be positive")
        if not self.tol > 0:
            raise ValueError("solver tolerance must be positive")
        if not 0 < self.omega < 2:
            raise ValueError("over-relaxation must lie in (0, 2)")
        # A = (1 - dtau kappa/2) M + dtau K/4 is SPD iff this holds
        if self.frame.dtau * self.frame.kappa / 2 >= 1:
            raise ValueError(f"dtau must be below 2/kappa = {2 / self.frame.kappa:g}")

    @property
    def kappa(self) -> float:
        return self.frame.kappa

    @property
    def dtau(self) -> float:
        return self.frame.dtau

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


# -- cached operators -------------------------------------------------------------


@dataclass
class Operators:
    grid: HalfSpaceGrid
    kappa: float
    dtau: float
    free: np.ndarray  # flat indices of unknown nodes
    bnd: np.ndarray  # positions (in the free vector) of boundary-layer unknowns
    bnd_flat: np.ndarray  # flat grid indices of the same nodes
    mass: np.ndarray  # full lumped mass
    K: sp.csr_matrix  # full stiffness
    w_bnd: np.ndarray  # boundary weights at the free boundary nodes
    lu: object
    A: sp.csc_matrix
    S: np.ndarray
    S_diag: np.ndarray


def _boundary_layer_free(grid: HalfSpaceGrid):
    fixed = grid.outer_mask()
    layer = np.zeros(grid.shape, dtype=bool)
    layer[..., 0] = True
    layer &= ~fixed
    return fixed, layer


@lru_cache(maxsize=8)
def operators(grid: HalfSpaceGrid, kappa: float, dtau: float) -> Operators:
    fixed, layer = _boundary_layer_free(grid)
    free = np.flatnonzero(~fixed.ravel())
    pos = np.full(grid.size, -1)
    pos[free] = np.arange(free.size)
    bnd_flat = np.flatnonzero(layer.ravel())
    bnd = pos[bnd_flat]
    mass = measure(grid).weights.ravel()
    K = dirichlet_form(grid)
    Kf = K[free][:, free]
    Mf = mass[free]
    A = (sp.diags(Mf * (1 - dtau * kappa / 2)) + (dtau / 4) * Kf).tocsc()
    lu = spla.splu(A)
    nb = bnd.size
    S = np.empty((nb, nb))
    block = 128
    for j0 in range(0, nb, block):
        j1 = min(nb, j0 + block)
        E = np.zeros((free.size, j1 - j0))
        E[bnd[j0:j1], np.arange(j1 - j0)] = 1.0
        S[:, j0:j1] = lu.solve(E)[bnd, :]
    S = 0.5 * (S + S.T)
    # flat index of node (i', 0) is (flat i') * shape[-1]
    w_bnd = measure(grid).boundary_weights().reshape(-1)[bnd_flat // grid.shape[-1]]
    return Operators(grid, kappa, dtau, free, bnd, bnd_flat, mass, K, w_bnd, lu, A, S,
                     np.diag(S).copy())


# -- LCP kernel ---------------------------------------------------------------------


@numba.njit(cache=True)
def _psor(S, q, mu, omega, tol, maxit):
    nb = q.size
    res = np.inf
    for it in range(maxit):
        for i in range(nb):
            r = q[i]
            for j in range(nb):
                r += S[i, j] * mu[j]
            v = mu[i] - omega * r / S[i, i]
            mu[i] = v if v > 0.0 else 0.0
        res = 0.0
        for i in range(nb):
            w = q[i]
            for j in range(nb):
                w += S[i, j] * mu[j]
            a = abs(min(mu[i], w))
            if a > res:
                res = a
        if res < tol:
            return it + 1, res
    return maxit, res


def solve_lcp(S, q, mu0, omega=1.5, tol=1e-10, maxit=200_000, diag=None):
    """mu >= 0, w = q + S mu >= 0, mu.w = 0 for symmetric positive definite S.

    Sweeps run on the Jacobi-scaled system (projected SOR is scaling invariant
    in exact arithmetic, the scaling only balances the stopping test).  The
    converged active set is then solved exactly when that is consistent.
    """
    d = np.sqrt(np.diag(S) if diag is None else diag)
    Ss = S / np.outer(d, d)
    qs = q / d
    ms = np.maximum(mu0, 0.0) * d
    sweeps, res = _psor(Ss, qs, ms, omega, tol, maxit)
    if res >= tol:
        raise SolverError(f"projected SOR did not converge: residual {res:.3e} after {sweeps} sweeps")
    mu = ms / d
    active = mu > 0
    if np.any(active):
        try:
            mu_a = np.linalg.solve(S[np.ix_(active, active)], -q[active])
        except np.linalg.LinAlgError:
            mu_a = None
        if mu_a is not None and np.all(mu_a >= 0):
            cand = np.zeros_like(mu)
            cand[active] = mu_a
            w = q + S @ cand
            if np.all(w[~active] >= -tol * d[~active]):
                mu = cand
    return mu, sweeps


def solve_penalty(S, q, x0, eps, scale, tol=1e-10, maxit=100):
    """Damped Newton for x - q + S g(x) = 0, g = scale * beta_eps(x)."""
    x = x0.copy()
    for it in range(maxit):
        F = x - q + S @ (scale * beta_eps(x, eps))
        nF = np.max(np.abs(F))
        if nF < tol:
            return x, it
        J = np.eye(x.size) + S * (scale * dbeta_eps(x, eps))[None, :]
        dx = np.linalg.solve(J, -F)
        t = 1.0
        while t > 1e-8:
            xt = x + t * dx
            Ft = xt - q + S @ (scale * beta_eps(xt, eps))
            if np.max(np.abs(Ft)) < (1 - 1e-4 * t) * nF:
                break
            t *= 0.5
        x = xt
    F = x - q + S @ (scale * beta_eps(x, eps))
    if np.max(np.abs(F)) < tol:
        return x, maxit
    raise SolverError(f"penalty Newton did not converge: residual {np.max(np.abs(F)):.3e}")


# -- state and stepping -------------------------------------------------------------


@dataclass
class SolverState:
    field: WeightedField
    tau: float
    mu: np.ndarray | None = None  # boundary multipliers (projected) or warm start
    dn: np.ndarray | None = None  # d/dy_n on the boundary layer, shape grid.shape[:-1]
    iterations: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=3))

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def _forcing_rhs(cfg: SolverConfig, ops: Operators, tau: float):
    if cfg.forcing is None:
        return None
    f = np.asarray(cfg.forcing(tau), dtype=float).ravel()
    return math.exp(tau * (cfg.kappa / 2 - 1)) * f


def admissible_start(u0: WeightedField, cfg: SolverConfig) -> WeightedField:
    vals = np.array(u0.values)
    vals[cfg.grid.outer_mask()] = 0.0
    if cfg.scheme == PROJECTED:
        tr = vals[..., 0]
        if np.any(tr < 0):
            log.warning("initial trace negative at %d nodes (min %.3e); clipped to 0",
                        int(np.sum(tr < 0)), float(tr.min()))
            vals[..., 0] = np.maximum(tr, 0.0)
    return u0.with_values(vals)


def initial_state(u0: WeightedField, cfg: SolverConfig) -> SolverState:
    if u0.grid != cfg.grid:
        raise ValueError("initial field is not on the solver grid")
    u = admissible_start(u0, cfg)
    st = SolverState(u.with_values(u.values, time=0.0) if u.time != 0.0 else u, u.time)
    st.history.append(st.values)
    return st


def step(state: SolverState, cfg: SolverConfig) -> SolverState:
    grid = cfg.grid
    if state.field.grid != grid:
        raise ValueError("state is not on the solver grid")
    ops = operators(grid, cfg.kappa, cfg.dtau)
    dt = cfg.dtau
    tau_new = state.tau + dt
    u_old = state.values.ravel()[ops.free]
    Mf = ops.mass[ops.free]
    b = Mf * u_old
    F = _forcing_rhs(cfg, ops, tau_new)
    if F is not None:
        b = b + dt * Mf * F[ops.free]
    x = ops.lu.solve(b)
    q = x[ops.bnd]
    nb = ops.bnd.size
    if cfg.scheme == PROJECTED:
        mu0 = state.mu if state.mu is not None and state.mu.size == nb else np.zeros(nb)
        mu, its = solve_lcp(ops.S, q, mu0, cfg.omega, cfg.tol, cfg.max_iter, ops.S_diag)
        rhs = b.copy()
        rhs[ops.bnd] += mu
        u = ops.lu.solve(rhs)
        # exact complementarity: zero trace on the active set, round-off clipped elsewhere
        tr = np.maximum(u[ops.bnd], 0.0)
        tr[mu > 0] = 0.0
        u[ops.bnd] = tr
        dn = -4.0 * mu / (dt * ops.w_bnd)
        warm = mu
    else:
        scale = dt / 4.0 * ops.w_bnd
        x0 = state.values.ravel()[ops.bnd_flat]
        xb, its = solve_penalty(ops.S, q, x0, cfg.eps, scale, cfg.tol)
        g = scale * beta_eps(xb, cfg.eps)
        rhs = b.copy()
        rhs[ops.bnd] -= g
        u = ops.lu.solve(rhs)
        dn = beta_eps(u[ops.bnd], cfg.eps)
        warm = None
    if not np.all(np.isfinite(u)):
        raise SolverError(f"non-finite values at tau = {tau_new:.4f}")
    full = np.zeros(grid.size)
    full[ops.free] = u
    dn_full = np.zeros(grid.shape[:-1])
    dn_full.reshape(-1)[ops.bnd_flat // grid.shape[-1]] = dn
    fld = WeightedField(grid, full.reshape(grid.shape), tau_new, CONFORMAL)
    new = SolverState(fld, tau_new, warm, dn_full, its, deque(state.history, maxlen=3))
    new.history.append(fld.values)
    return new


# -- trajectories ---------------------------------------------------------------------


@dataclass
class Trajectory:
    """Per-step diagnostics plus strided snapshots of one run."""

    kappa: float
    dtau: float
    scheme: str
    tau: np.ndarray
    W: np.ndarray
    norm2: np.ndarray
    dissipation: np.ndarray  # |u_k - u_{k-1}|^2 / dtau, i.e. the step integral of |u_tau|^2
    trace_min: np.ndarray
    iterations: np.ndarray
    probes: dict
    flux_probes: dict
    snapshots: list
    snapshot_dn: list
    forcing_norm: np.ndarray | None = None

    def final(self) -> WeightedField:
        return self.snapshots[-1]


def solve_trajectory(initial: WeightedField, cfg: SolverConfig, tau_max: float | None = None,
                     probes: dict | None = None, flux_probes: dict | None = None,
                     callback=None) -> Trajectory:
    """Run to tau_max recording W, |u|^2, dissipation and linear probes every step.

    ``probes`` maps names to grid arrays p (recorded: the plain dot product p.u,
    so mass weights belong in p); ``flux_probes``
    maps names to boundary arrays phi (recorded: boundary integral of phi dn u).
    """
    tau_max = cfg.frame.tau_max if tau_max is None else tau_max
    nsteps = int(round(tau_max / cfg.dtau))
    grid = cfg.grid
    m = measure(grid).weights
    wb = measure(grid).boundary_weights()
    probes = probes or {}
    flux_probes = flux_probes or {}
    st = initial_state(initial, cfg)
    rows = {k: [] for k in ("tau", "W", "norm2", "diss", "tmin", "its", "fnorm")}
    pr = {k: [] for k in probes}
    fp = {k: [] for k in flux_probes}
    snaps, snap_dn = [], []

    def record(s: SolverState, prev):
        v = s.values
        rows["tau"].append(s.tau)
        rows["W"].append(weiss_energy(WeightedField(grid, v), cfg.kappa))
        rows["norm2"].append(float(np.sum(m * v * v)))
        rows["diss"].append(np.nan if prev is None else float(np.sum(m * (v - prev) ** 2)) / cfg.dtau)
        rows["tmin"].append(float(v[..., 0].min()))
        rows["its"].append(s.iterations)
        if cfg.forcing is not None:
            f = np.asarray(cfg.forcing(s.tau), float).reshape(grid.shape)
            rows["fnorm"].append(math.sqrt(float(np.sum(m * f * f))))
        for k, p in probes.items():
            pr[k].append(float(np.sum(p * v)))
        dn = s.dn if s.dn is not None else np.full(grid.shape[:-1], np.nan)
        for k, phi in flux_probes.items():
            fp[k].append(float(np.sum(wb * phi * dn)))

    record(st, None)
    snaps.append(st.field)
    snap_dn.append(st.dn)
    for k in range(1, nsteps + 1):
        prev = st.values
        st = step(st, cfg)
        record(st, prev)
        if callback is not None:
            callback(st)
        if k % cfg.snapshot_stride == 0 or k == nsteps:
            snaps.append(st.field)
            snap_dn.append(st.dn)
    return Trajectory(
        kappa=cfg.kappa, dtau=cfg.dtau, scheme=cfg.scheme,
        tau=np.array(rows["tau"]), W=np.array(rows["W"]), norm2=np.array(rows["norm2"]),
        dissipation=np.array(rows["diss"]), trace_min=np.array(rows["tmin"]),
        iterations=np.array(rows["its"]),
        probes={k: np.array(v) for k, v in pr.items()},
        flux_probes={k: np.array(v) for k, v in fp.items()},
        snapshots=snaps, snapshot_dn=snap_dn,
        forcing_norm=np.array(rows["fnorm"]) if rows["fnorm"] else None,
    )


def cross_validate(initial: WeightedField, cfg_pen: SolverConfig, cfg_proj: SolverConfig,
                   tau_max: float) -> float:
    """Max over steps of the L2_mu distance between penalized and projected runs."""
    if cfg_pen.grid != cfg_proj.grid or cfg_pen.dtau != cfg_proj.dtau:
        raise ValueError("cross-validation needs the same grid and time step")
    if cfg_pen.scheme != PENALIZED or cfg_proj.scheme != PROJECTED:
        raise ValueError("expected one penalized and one projected configuration")
    m = measure(cfg_pen.grid).weights
    # both runs start from the same (clipped) data
    start = admissible_start(initial, cfg_proj)
    a = initial_state(start, cfg_pen)
    b = initial_state(start, cfg_proj)
    worst = math.sqrt(float(np.sum(m * (a.values - b.values) ** 2)))
    for _ in range(int(round(tau_max / cfg_pen.dtau))):
        a = step(a, cfg_pen)
        b = step(b, cfg_proj)
        worst = max(worst, math.sqrt(float(np.sum(m * (a.values - b.values) ** 2))))
    return worst


def residual_complementarity(state, dn=None):
    """(max violation of u >= 0, of dn u <= 0, max |u dn u|) over the boundary layer.

    ``state`` is a SolverState (its stored flux is used) or a WeightedField,
    whose normal derivative then comes from the one-sided stencil unless given.
    """
    if isinstance(state, SolverState):
        fld = state.field
        dn = state.dn if dn is None else dn
    else:
        fld = state
    if dn is None:
        dn = normal_derivative(fld)
    tr = fld.values[..., 0]
    return (float(max(0.0, -tr.min())), float(max(0.0, np.max(dn))), float(np.max(np.abs(tr * dn))))


def check_forcing_2m(forcing, grid: HalfSpaceGrid, m: int, bound: float, eps0: float, taus) -> bool:
    """Decay condition |f~(tau)| <= M e^{-tau (m - 1 + eps0)} on sampled tau."""
    w = measure(grid).weights
    for t in taus:
        f = np.asarray(forcing(t), float).reshape(grid.shape)
        if math.sqrt(float(np.sum(w * f * f))) > bound * math.exp(-t * (m - 1 + eps0)) * (1 + 1e-12):
            return False
    return True


def forcing_sup_norm(forcing, grid: HalfSpaceGrid, taus) -> float:
    """M_f: sup over sampled tau of |f~(tau)| in L2_mu."""
    w = measure(grid).weights
    best = 0.0
    for t in taus:
        f = np.asarray(forcing(t), float).reshape(grid.shape)
        best = max(best, math.sqrt(float(np.sum(w * f * f))))
    return best
