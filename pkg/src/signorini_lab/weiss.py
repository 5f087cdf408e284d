"""Weiss energies, projections onto the blow-up families, and decay fits."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from .exact import (eval_h2m, eval_hermite, eval_kernel, multi_indices, profile_raw,
                    golden, HermiteElement)
from .grid import (CONFORMAL, HalfSpaceGrid, WeightedField, boundary_trace_integral,
                   dirichlet_form, gradient_fd, measure)


# -- energies ---------------------------------------------------------------------


def weiss_energy(u: WeightedField, kappa: float) -> float:
    """W = int 1/4 |grad u|^2 - kappa/2 u^2 dmu with the solver's stiffness and mass."""
    if u.kind != CONFORMAL:
        raise ValueError("weiss_energy expects a conformal field")
    v = u.values.ravel()
    m = measure(u.grid).weights.ravel()
    return float(0.25 * v @ (dirichlet_form(u.grid) @ v) - 0.5 * kappa * np.sum(m * v * v))


def bilinear_weiss(a: WeightedField, b: WeightedField, kappa: float) -> float:
    va, vb = a.values.ravel(), b.values.ravel()
    m = measure(a.grid).weights.ravel()
    return float(0.25 * va @ (dirichlet_form(a.grid) @ vb) - 0.5 * kappa * np.sum(m * va * vb))


def weiss_original(u: WeightedField, kappa: float) -> float:
    """(-t)^{1-kappa} int |grad u|^2 G - (kappa/2)(-t)^{-kappa} int u^2 G on an original slice.

    Independent route: centered finite-difference gradient and trapezoid weights
    with the backward kernel.  Equals pi^{-n/2} times the conformal energy.
    """
    t = u.time
    if t >= 0:
        raise ValueError("weiss_original needs t < 0")
    g = u.grid
    G = eval_kernel(g.points(), t, g.n)
    wq = g.h ** g.n * g.trapezoid_factors() * G
    grad2 = sum(d * d for d in gradient_fd(u))
    return float((-t) ** (1 - kappa) * np.sum(wq * grad2)
                 - 0.5 * kappa * (-t) ** (-kappa) * np.sum(wq * u.values ** 2))


# -- the 3/2 cone ------------------------------------------------------------------


@dataclass
class Projection32:
    lam: float
    direction: tuple
    angle: float
    v: WeightedField
    orth_value: float  # <v, h_e>
    orth_angle: float  # <v, d/dphi h_e>, zero in two dimensions
    profile: WeightedField


def _direction(n: int, phi: float):
    return (math.cos(phi),) if n == 2 else (math.cos(phi), math.sin(phi))


def _profile_field(grid: HalfSpaceGrid, phi: float) -> WeightedField:
    return WeightedField(grid, golden("c_n", grid.n) * profile_raw(grid.points(), _direction(grid.n, phi)))


def _angle_derivative(grid: HalfSpaceGrid, phi: float) -> np.ndarray:
    # d/dphi Re(s + i|y_n|)^{3/2} = 3/2 Re(s + i|y_n|)^{1/2} (y'.e_perp)
    pts = grid.points()
    e = np.array([math.cos(phi), math.sin(phi)])
    ep = np.array([-math.sin(phi), math.cos(phi)])
    s = pts[..., :-1] @ e
    z = s + 1j * np.abs(pts[..., -1])
    return golden("c_n", 3) * 1.5 * np.real(np.sqrt(z)) * (pts[..., :-1] @ ep)


def project_E32(u: WeightedField, coarse: int = 256, angle_tol: float = 1e-6) -> Projection32:
    """Closest lam h_e with lam >= 0 in L2_mu; ties go to the smallest angle."""
    grid = u.grid
    m = measure(grid).weights

    def score(phi):
        h = _profile_field(grid, phi).values
        nh = math.sqrt(float(np.sum(m * h * h)))
        return max(0.0, float(np.sum(m * u.values * h))) / nh

    if grid.n == 2:
        cands = [0.0, math.pi]
    else:
        cands = list(2 * math.pi * np.arange(coarse) / coarse)
    scores = [score(p) for p in cands]
    best = int(np.argmax(scores))  # argmax keeps the first maximizer
    phi = cands[best]
    if grid.n == 3 and scores[best] > 0:
        step = 2 * math.pi / coarse
        res = minimize_scalar(lambda p: -score(p), bracket=None, bounds=(phi - step, phi + step),
                              method="bounded", options={"xatol": angle_tol})
        cand = float(res.x)
        # one parabolic refinement through the bracketing triple
        d = 10 * angle_tol
        f0, fm, fp = score(cand), score(cand - d), score(cand + d)
        curv = fp - 2 * f0 + fm
        if curv < 0:
            refined = cand - d * (fp - fm) / (2 * curv)
            if abs(refined - cand) < d and score(refined) >= f0:
                cand = refined
        if score(cand) >= scores[best]:
            phi = cand % (2 * math.pi)
    h = _profile_field(grid, phi)
    hh = float(np.sum(m * h.values ** 2))
    lam = max(0.0, float(np.sum(m * u.values * h.values)) / hh)
    v = u.with_values(u.values - lam * h.values)
    orth1 = float(np.sum(m * v.values * h.values))
    orth2 = float(np.sum(m * v.values * _angle_derivative(grid, phi))) if grid.n == 3 else 0.0
    return Projection32(lam, _direction(grid.n, phi), phi, v, orth1, orth2, h)


def profile_normal_derivative(grid: HalfSpaceGrid, direction) -> np.ndarray:
    """d/dy_n h_e on {y_n = 0}: -(3/2) c_n |s|^{1/2} on the contact ray s = y'.e < 0."""
    s = grid.boundary_points() @ np.asarray(direction, float)
    return np.where(s < 0, -1.5 * golden("c_n", grid.n) * np.sqrt(np.abs(s)), 0.0)


@dataclass
class Split32:
    W_u: float
    W_v: float
    boundary_term: float
    residual: float


def weiss_split_32(u: WeightedField, proj: Projection32 | None = None, kappa: float = 1.5) -> Split32:
    """W(u) against W(v) - (lam/2) int_{y_n=0} u dn h_e; both sides computed separately."""
    proj = project_E32(u) if proj is None else proj
    W_u = weiss_energy(u, kappa)
    W_v = weiss_energy(proj.v, kappa)
    dnh = profile_normal_derivative(u.grid, proj.direction)
    bterm = -0.5 * proj.lam * boundary_trace_integral(u.values[..., 0] * dnh, u.grid)
    return Split32(W_u, W_v, bterm, abs(W_u - (W_v + bterm)))


# -- the 2m family -------------------------------------------------------------------


@dataclass
class Projection2m:
    coeffs: dict
    v: WeightedField
    orth_residual: float


def hermite_basis(grid: HalfSpaceGrid, degree: int, upto: bool = False) -> dict:
    return {a: eval_hermite(a, grid).values for a in multi_indices(grid.n, degree, upto)}


def project_E2m(u: WeightedField, m: int, basis: dict | None = None) -> Projection2m:
    basis = hermite_basis(u.grid, 2 * m) if basis is None else basis
    w = measure(u.grid).weights
    coeffs = {a: float(np.sum(w * u.values * p)) for a, p in basis.items()}
    v = u.values - sum(c * basis[a] for a, c in coeffs.items())
    orth = max(abs(float(np.sum(w * v * p))) for p in basis.values())
    return Projection2m(coeffs, u.with_values(v), orth)


def lambda_2m(u: WeightedField, m: int) -> float:
    w = measure(u.grid).weights
    return float(np.sum(w * u.values * eval_h2m(m, u.grid).values))


def probes_2m(grid: HalfSpaceGrid, m: int, kappa: float | None = None):
    """Linear probes for the 2m bookkeeping.

    Returns (probes, flux_probes): probes give lam_alpha = <u, p_alpha>,
    q_alpha = (Q p_alpha).u and lam_2m; flux probes give the boundary
    integrals of p_alpha dn u and h_2m dn u.
    """
    kappa = 2 * m if kappa is None else kappa
    wts = measure(grid).weights
    K = dirichlet_form(grid)
    probes, flux = {}, {}
    for a, p in hermite_basis(grid, 2 * m).items():
        key = "_".join(map(str, a))
        probes[f"lam_{key}"] = wts * p
        probes[f"q_{key}"] = (0.25 * (K @ p.ravel()) - 0.5 * kappa * wts.ravel() * p.ravel()).reshape(grid.shape)
        flux[f"flux_{key}"] = p[..., 0]
    h = eval_h2m(m, grid).values
    probes["lam_2m"] = wts * h
    probes["q_2m"] = (0.25 * (K @ h.ravel()) - 0.5 * kappa * wts.ravel() * h.ravel()).reshape(grid.shape)
    flux["flux_2m"] = h[..., 0]
    return probes, flux


@dataclass
class Residuals2m:
    tau: np.ndarray
    weiss2m: np.ndarray  # 1/2 d|v|^2 + W(v) - sum lam/4 int p dn v, centered
    lambda2m: np.ndarray  # max over alpha of the centered lam_alpha residual
    lambda2m_spatial: np.ndarray  # part explained by (Q p_alpha).u, the spatial defect
    lambda2m_temporal: np.ndarray  # what remains once the spatial defect is accounted for
    weiss_equal: np.ndarray  # |W(u) - W(v)| per step
    lam_2m: np.ndarray
    lam_2m_increments: np.ndarray


def evolution_residuals_2m(traj, m: int, grid: HalfSpaceGrid | None = None) -> Residuals2m:
    """Centered-in-tau residuals of the 2m evolution identities from probe series.

    The integrator's flux at step k belongs to the interval (tau_{k-1}, tau_k],
    so the centered derivative at tau_k is matched with the mean flux of the
    two adjacent steps.
    """
    tau = traj.tau
    if tau.size < 3:
        raise ValueError("trajectory too short for centered differences")
    dt = traj.dtau
    keys = sorted(k[4:] for k in traj.probes if k.startswith("lam_") and k != "lam_2m")
    lam = np.array([traj.probes[f"lam_{k}"] for k in keys])
    qv = np.array([traj.probes[f"q_{k}"] for k in keys])
    flux = np.array([traj.flux_probes[f"flux_{k}"] for k in keys])
    mid = slice(1, -1)
    dlam = (lam[:, 2:] - lam[:, :-2]) / (2 * dt)
    fmean = 0.5 * (flux[:, 1:-1] + flux[:, 2:])
    qmean = 0.5 * (qv[:, 1:-1] + qv[:, 2:])
    res_lam = dlam + 0.25 * fmean
    # W(v) = W(u) - 2 sum lam_a (Q p_a).u + lam.(P^T Q P).lam; Q p_a ~ 0, kept exact below
    W_u = traj.W
    grid = traj.snapshots[0].grid if grid is None else grid
    G = gram_Q(grid, m, traj.kappa)
    W_v = W_u - 2 * np.sum(lam * qv, axis=0) + np.einsum("ak,ab,bk->k", lam, G, lam)
    v2 = traj.norm2 - np.sum(lam * lam, axis=0)
    dv2 = (v2[2:] - v2[:-2]) / (2 * dt)
    bsum = np.sum(lam[:, mid] * 0.25 * flux[:, mid], axis=0)
    res_w = 0.5 * dv2 + W_v[mid] - bsum
    lam2m = traj.probes["lam_2m"]
    return Residuals2m(tau[mid], res_w, np.max(np.abs(res_lam), axis=0),
                       np.max(np.abs(qmean), axis=0), np.max(np.abs(res_lam + qmean), axis=0),
                       np.abs(W_u - W_v), lam2m, np.diff(lam2m))


def gram_Q(grid: HalfSpaceGrid, m: int, kappa: float | None = None) -> np.ndarray:
    kappa = 2 * m if kappa is None else kappa
    basis = hermite_basis(grid, 2 * m)
    # same order as the probe names sorted as strings
    keys = sorted(basis, key=lambda a: "_".join(map(str, a)))
    P = np.array([basis[a].ravel() for a in keys])
    K = dirichlet_form(grid)
    w = measure(grid).weights.ravel()
    return 0.25 * P @ (K @ P.T) - 0.5 * kappa * (P * w) @ P.T


def spectral_gap_draw(grid: HalfSpaceGrid, m: int, rng, scale: float = 1.0):
    """Random q in E_{<2m}; returns (W_2m(q), |q|^2, closed-form W_2m(q))."""
    idx = [a for a in multi_indices(grid.n, 2 * m - 1, upto=True)]
    coeffs = {a: float(c) for a, c in zip(idx, scale * rng.standard_normal(len(idx)))}
    from .exact import assemble_element

    q = assemble_element(HermiteElement(grid.n, coeffs), grid)
    w = measure(grid).weights
    closed = sum(c * c * (sum(a) / 2 - m) for a, c in coeffs.items())
    return weiss_energy(q, 2 * m), float(np.sum(w * q.values ** 2)), closed


# -- traces and fits ------------------------------------------------------------------

TRACE_COLUMNS = ("tau", "W", "norm2", "dissipation")


@dataclass
class WeissTrace:
    kappa: float
    tau: np.ndarray
    W: np.ndarray
    norm2: np.ndarray
    dissipation: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, float)
        if self.tau.size > 1 and np.any(np.diff(self.tau) <= 0):
            raise ValueError("tau must be strictly increasing")

    @classmethod
    def from_trajectory(cls, traj, extra: dict | None = None) -> "WeissTrace":
        return cls(traj.kappa, traj.tau, traj.W, traj.norm2, traj.dissipation, dict(extra or {}))

    def columns(self) -> list:
        return list(TRACE_COLUMNS) + sorted(self.extra)

    def to_csv(self) -> str:
        cols = self.columns()
        data = [self.tau, self.W, self.norm2, self.dissipation] + [self.extra[k] for k in sorted(self.extra)]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(cols)
        for row in zip(*data):
            wr.writerow([format(float(x), ".17g") for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, kappa: float) -> "WeissTrace":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        col = {k: body[:, i] for i, k in enumerate(header)}
        missing = [k for k in TRACE_COLUMNS if k not in col]
        if missing:
            raise ValueError(f"trace is missing columns {missing}")
        extra = {k: v for k, v in col.items() if k not in TRACE_COLUMNS}
        return cls(kappa, col["tau"], col["W"], col["norm2"], col["dissipation"], extra)


@dataclass
class DecayFit:
    model: str
    params: dict
    window: tuple
    r2: float
    extras: dict = field(default_factory=dict)


def _window(tau, window):
    lo, hi = window if window is not None else (tau[0], tau[-1])
    sel = (tau >= lo - 1e-12) & (tau <= hi + 1e-12)
    if np.sum(sel) < 5:
        raise ValueError("fit window holds fewer than 5 samples")
    return sel, (float(lo), float(hi))


def fit_decay(tau, W, model: str = "exponential", window=None) -> DecayFit:
    tau = np.asarray(tau, float)
    W = np.asarray(W, float)
    sel, win = _window(tau, window)
    t, w = tau[sel], W[sel]
    if model == "exponential":
        if np.all(w > 0):
            sign = 1.0
        elif np.all(w < 0):
            sign = -1.0
        else:
            raise ValueError("exponential fit needs single-signed values in the window")
        y = np.log(sign * w)
        A = np.vstack([np.ones_like(t), t]).T
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        pred = A @ coef
        ss = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 if ss < 1e-30 else 1.0 - float(np.sum((y - pred) ** 2)) / ss
        return DecayFit("exponential", {"gamma": float(-coef[1]), "log_W0": float(coef[0]), "sign": sign},
                        win, r2)
    if model == "contraction":
        c0 = unit_contractions(tau, W, sel)
        return DecayFit("contraction", {"c0_min": float(np.min(c0)) if c0.size else float("nan")},
                        win, float("nan"), {"c0": c0.tolist()})
    if model == "logarithmic":
        if np.any(w <= 0):
            raise ValueError("logarithmic fit needs positive values in the window")
        W0 = float(W[0])
        if not 0 < W0 < 1:
            raise ValueError("logarithmic model needs 0 < W(0) < 1")
        A0 = 1.0 / (W0 * math.log(W0) ** 2)

        def denom(c0, tt):
            z = A0 + c0 * tt
            return z * np.log(z) ** 2

        def envelope(lc):
            c0 = math.exp(lc)
            return float(np.max(w * denom(c0, t)))

        def misfit(lc):
            c0 = math.exp(lc)
            C = envelope(lc)
            return float(np.sum((np.log(C / denom(c0, t)) - np.log(w)) ** 2))

        res = minimize_scalar(misfit, bounds=(math.log(1e-4), math.log(1e4)), method="bounded")
        c0 = math.exp(float(res.x))
        C = envelope(float(res.x))
        bound_all = C / denom(c0, tau[tau >= 0])
        frac = float(np.mean(W[tau >= 0] <= bound_all * (1 + 1e-12)))
        y = np.log(w)
        ss = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(res.fun) / ss if ss > 0 else 1.0
        return DecayFit("logarithmic", {"C": C, "c0": c0, "A0": A0}, win, r2, {"fraction_holding": frac})
    raise ValueError(f"unknown decay model {model!r}")


def unit_contractions(tau, W, sel=None, variant: str = "positive"):
    """Implied constants over unit-separated pairs (tau, tau + 1)."""
    tau = np.asarray(tau, float)
    W = np.asarray(W, float)
    dt = float(np.median(np.diff(tau)))
    k = int(round(1.0 / dt))
    idx = np.arange(tau.size - k)
    if sel is not None:
        idx = idx[sel[idx] & sel[idx + k]]
    a, b = W[idx], W[idx + k]
    with np.errstate(divide="ignore", invalid="ignore"):
        if variant == "positive":
            return 1.0 - b / a
        if variant == "negative":
            return b / a - 1.0
        if variant == "logarithmic":
            return (1.0 - b / a) / (b * np.log(b) ** 2)
    raise ValueError(f"unknown contraction variant {variant!r}")


@dataclass
class EpiperimetricReport:
    variant: str
    pairs: np.ndarray  # start times of the unit pairs
    implied_c0: np.ndarray
    c0_min: float
    degenerate: bool
    split_points: list
    fit: DecayFit | None


def modified_energy(tau, W, forcing_bound: float):
    """W~ = W + 4 e^{-tau/2} M^2 for forced runs."""
    return np.asarray(W, float) + 4.0 * np.exp(-np.asarray(tau, float) / 2.0) * forcing_bound ** 2


def epiperimetric_check(trace: WeissTrace, kappa: float | None = None, variant: str = "positive",
                        forcing_bound: float | None = None, window=None) -> EpiperimetricReport:
    tau = trace.tau
    if tau[-1] - tau[0] < 1.0 - 1e-9:
        raise ValueError("trace shorter than one unit interval")
    W = trace.W if forcing_bound is None else modified_energy(tau, trace.W, forcing_bound)
    scale = max(1e-300, float(np.max(np.abs(W))))
    if np.all(np.abs(W) <= 1e-12 * max(1.0, scale)) or np.max(np.abs(W)) < 1e-14:
        return EpiperimetricReport(variant, np.array([]), np.array([]), float("nan"), True, [], None)
    sgn = np.sign(W)
    splits = [float(tau[i + 1]) for i in np.flatnonzero(sgn[1:] != sgn[:-1])]
    dt = float(np.median(np.diff(tau)))
    k = int(round(1.0 / dt))
    idx = np.arange(tau.size - k)
    same = sgn[idx] == sgn[idx + k]
    want = 1.0 if variant in ("positive", "logarithmic") else -1.0
    keep = idx[same & (sgn[idx] == want)]
    if window is not None:
        keep = keep[(tau[keep] >= window[0] - 1e-12) & (tau[keep + k] <= window[1] + 1e-12)]
    a, b = W[keep], W[keep + k]
    if variant == "positive":
        c0 = 1.0 - b / a
    elif variant == "negative":
        c0 = b / a - 1.0
    elif variant == "logarithmic":
        c0 = (1.0 - b / a) / (b * np.log(b) ** 2)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    fit = None
    try:
        model = "logarithmic" if variant == "logarithmic" else "exponential"
        sel_w = window if window is not None else (tau[0], tau[-1])
        fit = fit_decay(tau, W, model, sel_w)
    except ValueError:
        pass
    return EpiperimetricReport(variant, tau[keep], c0, float(np.min(c0)) if c0.size else float("nan"),
                               False, splits, fit)


# -- limits ---------------------------------------------------------------------------------


@dataclass
class LimitReport:
    kappa: float
    profile: object  # Projection32 or Projection2m
    lam_inf: float
    trend: np.ndarray  # |v|^2 (3/2) or |u_inf|^2 - |u|^2 (2m) per snapshot
    trend_lam: np.ndarray | None
    last_increment: float
    nontrivial: bool | None


def limit_extraction(snapshots, kappa: float, tol: float = 1e-2, m: int | None = None) -> LimitReport:
    """Project the last snapshot; refuse if successive snapshots still move by more than tol."""
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots")
    w = measure(snapshots[-1].grid).weights
    a, b = snapshots[-2], snapshots[-1]
    inc = math.sqrt(float(np.sum(w * (b.values - a.values) ** 2))) / max(b.time - a.time, 1e-300)
    size = math.sqrt(float(np.sum(w * b.values ** 2)))
    if inc > tol * max(size, 1e-12):
        raise ValueError(f"trajectory has not settled: rate {inc:.3e} per unit tau")
    u0norm = math.sqrt(float(np.sum(w * snapshots[0].values ** 2)))
    if abs(kappa - 1.5) < 1e-12:
        proj = project_E32(b)
        vn = np.array([float(np.sum(w * project_E32(s).v.values ** 2)) for s in snapshots])
        lams = np.array([project_E32(s).lam for s in snapshots])
        return LimitReport(kappa, proj, proj.lam, vn, np.abs(lams ** 2 - proj.lam ** 2), inc,
                           proj.lam > 0.5 * u0norm)
    m = int(round(kappa / 2)) if m is None else m
    proj = project_E2m(b, m)
    lam_inf = math.sqrt(sum(c * c for c in proj.coeffs.values()))
    n_inf = float(np.sum(w * b.values ** 2))
    trend = np.array([n_inf - float(np.sum(w * s.values ** 2)) for s in snapshots])
    return LimitReport(kappa, proj, lam_inf, trend, None, inc, lam_inf > 0)


# -- logarithmic calculus ----------------------------------------------------------------


def F_log(s, s0: float):
    """-1/(s ln^2 s) - 2 int_{-ln s0}^{-ln s} e^u / u^3 du for 0 < s < s0 < 1."""
    val, _ = quad(lambda u: math.exp(u) / u ** 3, -math.log(s0), -math.log(s), limit=200)
    return -1.0 / (s * math.log(s) ** 2) - 2.0 * val


def F_log_derivative(s):
    return 1.0 / (s * s * math.log(s) ** 2)


def log_asymp_bracket(s, s0: float):
    """(lower, middle, upper) of -2 ln|ln s|/(s|ln s|^3) <= -2 int ... <= 0."""
    val, _ = quad(lambda u: math.exp(u) / u ** 3, -math.log(s0), -math.log(s), limit=200)
    ls = abs(math.log(s))
    return -2.0 * math.log(ls) / (s * ls ** 3), -2.0 * val, 0.0


def G_log(w):
    return w * math.log(w) ** 2
