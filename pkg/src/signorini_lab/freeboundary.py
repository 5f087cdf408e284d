"""Contact sets, vanishing order from H_u(r), blow-ups and regular free boundaries.

Space-time data are callables u(x, t) with x of shape (..., n), x_n >= 0,
and t < 0; an optional ``t_range`` attribute (t_lo, t_hi) marks where they
are defined.  `TrajectoryData` turns solver snapshots into such a callable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exact import golden, profile_raw, sample_field
from .grid import HalfSpaceGrid, measure
from .weiss import project_E32

REGULAR = "regular-3/2"
UNCLASSIFIED = "unclassified"


def singular_tag(m: int) -> str:
    return f"singular-{2 * m}"


# -- data adaptors ---------------------------------------------------------------------


class TrajectoryData:
    """u(x, t) = (sqrt(-t))^kappa u~(x / 2sqrt(-t), -ln(-t)) from conformal snapshots.

    Linear interpolation in tau between snapshots, multilinear in space.
    Past the last snapshot the final profile is extended homogeneously, which
    is where a converged run is heading anyway.
    """

    def __init__(self, snapshots, kappa: float, extend: bool = True):
        self.snapshots = list(snapshots)
        self.kappa = kappa
        self.taus = np.array([s.time for s in self.snapshots])
        self.extend = extend
        hi = -math.exp(-self.taus[-1]) if not extend else 0.0
        self.t_range = (-math.exp(-self.taus[0]), hi)

    def conformal_values(self, y, tau: float):
        taus = self.taus
        if tau < taus[0] - 1e-12:
            raise ValueError("time before the first snapshot")
        if tau >= taus[-1]:
            if not self.extend and tau > taus[-1] + 1e-12:
                raise ValueError("time after the last snapshot")
            return sample_field(self.snapshots[-1], y)
        j = int(np.searchsorted(taus, tau, side="right")) - 1
        a = (tau - taus[j]) / (taus[j + 1] - taus[j])
        return (1 - a) * sample_field(self.snapshots[j], y) + a * sample_field(self.snapshots[j + 1], y)

    def __call__(self, x, t):
        if t >= 0:
            raise ValueError("needs t < 0")
        s = math.sqrt(-t)
        y = np.asarray(x, float) / (2 * s)
        y = y.copy()
        y[..., -1] = np.abs(y[..., -1])
        return s ** self.kappa * self.conformal_values(y, -math.log(-t))


def translated(u, center):
    """Data recentred so that (x0, t0) becomes the origin."""
    x0 = np.asarray(center[0], float)
    t0 = float(center[1])

    def v(x, t):
        return u(np.asarray(x, float) + x0, t0 + t)

    rng = getattr(u, "t_range", None)
    if rng is not None:
        v.t_range = (rng[0] - t0, rng[1] - t0)
    return v


# -- contact sets ------------------------------------------------------------------------------


@dataclass
class ContactSet:
    axes: list  # coordinate arrays of the boundary slab, time axis first
    flags: np.ndarray  # True where |u| <= threshold
    gamma: np.ndarray  # flagged nodes with an unflagged face-neighbour
    threshold: float


def extract_contact(values, axes, threshold: float) -> ContactSet:
    """Flag the zero set of boundary-time samples and its boundary.

    ``values`` has shape (n_t, *tangential shape) and ``axes`` lists matching
    coordinate arrays.
    """
    if not threshold > 0:
        raise ValueError("contact threshold must be positive")
    v = np.asarray(values, float)
    flags = np.abs(v) <= threshold
    gamma = np.zeros_like(flags)
    for d in range(v.ndim):
        if v.shape[d] < 2:
            continue
        lo = [slice(None)] * v.ndim
        hi = [slice(None)] * v.ndim
        lo[d] = slice(0, -1)
        hi[d] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        gamma[lo] |= flags[lo] & ~flags[hi]
        gamma[hi] |= flags[hi] & ~flags[lo]
    return ContactSet(list(axes), flags, gamma, threshold)


def boundary_samples(u, xs, ts, n: int):
    """Evaluate u on {x_n = 0} over a tensor grid of tangential axes and times."""
    mesh = list(np.meshgrid(*xs, indexing="ij"))
    pts = np.stack(mesh + [np.zeros_like(mesh[0])], axis=-1)
    return np.array([u(pts, t) for t in ts])


# -- H curve ----------------------------------------------------------------------------------


def r_grid(decades: float = 4.0, per_decade: int = 8, r_max: float = 1.0):
    j = np.arange(int(round(decades * per_decade)) + 1)
    return r_max * 10.0 ** (-j / per_decade)


@dataclass
class HCurve:
    r: np.ndarray
    H: np.ndarray


def compute_H(u, center, r, grid: HalfSpaceGrid, substeps: int = 8, tail: float = 30.0) -> HCurve:
    """H(r) = r^{-2} int_{-r^2}^0 int u^2 G dx dt around ``center``.

    The spatial integral at each t runs over the conformal grid,
    int u^2 G dx = pi^{-n/2} int u(2 sqrt(-t) y, t)^2 dmu(y); the time integral is
    a trapezoid rule in s = ln(-t) on a uniform grid aligned with ln r^2, so
    exactly homogeneous data give slopes of exactly 2 kappa.
    """
    r = np.sort(np.asarray(r, float))[::-1]
    if np.any(r <= 0):
        raise ValueError("radii must be positive")
    x0 = np.asarray(center[0], float)
    t0 = float(center[1])
    rng = getattr(u, "t_range", None)
    if rng is not None and t0 - r[0] ** 2 < rng[0] - 1e-12:
        raise ValueError("r^2 exceeds the time range of the data")
    logs = np.log(r ** 2)
    steps = np.diff(-logs)
    ds = float(np.min(steps)) / substeps if steps.size else 0.1
    s_top = logs[0]
    s_bot = logs[-1] - tail
    nlev = int(math.ceil((s_top - s_bot) / ds))
    s = s_top - ds * np.arange(nlev + 1)
    pts = grid.points()
    w = measure(grid).weights
    I = np.empty(s.size)
    for i, sv in enumerate(s):
        t = -math.exp(sv)
        vals = u(x0 + 2 * math.sqrt(-t) * pts, t0 + t)
        I[i] = math.pi ** (-grid.n / 2) * float(np.sum(w * vals * vals))
    # integrand in s: I(t(s)) e^s; cumulative trapezoid from the bottom up
    f = I * np.exp(s)
    f_up = f[::-1]
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (f_up[1:] + f_up[:-1]) * ds)])[::-1]
    H = []
    for lr in logs:
        k = int(round((s_top - lr) / ds))
        H.append(cum[k] / math.exp(lr))
    return HCurve(r, np.array(H))


@dataclass
class FreeBoundarySample:
    center: tuple
    curve: HCurve
    kappa_fit: float
    slope: float
    r2: float
    classification: str = UNCLASSIFIED
    blowup: dict = field(default_factory=dict)


def fit_order(curve: HCurve, decades: tuple | None = None) -> tuple:
    """Least-squares slope of ln H against ln r over the middle decades."""
    r, H = curve.r, curve.H
    lr = np.log10(r)
    if decades is None:
        lo, hi = lr.min() + 1.0, lr.max() - 1.0
    else:
        lo, hi = decades
    sel = (lr >= lo - 1e-9) & (lr <= hi + 1e-9) & (H > 0)
    if np.sum(sel) < 3:
        raise ValueError("too few radii in the fit window")
    x, y = np.log(r[sel]), np.log(H[sel])
    A = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else 1.0
    return float(coef[1]), r2


def make_sample(u, center, grid: HalfSpaceGrid, r=None, decades=None) -> FreeBoundarySample:
    r = r_grid() if r is None else r
    curve = compute_H(u, center, r, grid)
    slope, r2 = fit_order(curve, decades)
    return FreeBoundarySample(center, curve, slope / 2.0, slope, r2)


def classify(sample: FreeBoundarySample, window: float = 0.4, max_m: int = 4) -> str:
    """Full window width: the default 0.4 accepts kappa_fit within 0.2 of a family."""
    k = sample.kappa_fit
    half = window / 2.0
    if abs(k - 1.5) < half:
        tag = REGULAR
    else:
        tag = UNCLASSIFIED
        for m in range(1, max_m + 1):
            if abs(k - 2 * m) < half:
                tag = singular_tag(m)
                break
    sample.classification = tag
    return tag


# -- blow-ups ------------------------------------------------------------------------------------


def on_free_boundary(u, center, n: int, radius: float = 0.2, threshold: float = 1e-8, samples: int = 41) -> bool:
    """Centre is a contact point with non-contact boundary points nearby.

    Checked on the slice t0 - radius^2, since data need not exist at t0.
    """
    x0 = np.asarray(center[0], float)
    t0 = float(center[1]) - radius * radius
    if abs(float(u(x0[None, :], t0)[0])) > threshold:
        return False
    offs = np.linspace(-radius, radius, samples)
    if n == 2:
        pts = np.stack([x0[0] + offs, np.zeros_like(offs)], axis=-1)
    else:
        a, b = np.meshgrid(offs, offs, indexing="ij")
        pts = np.stack([x0[0] + a.ravel(), x0[1] + b.ravel(), np.zeros(a.size)], axis=-1)
    vals = u(pts, t0)
    return bool(np.any(np.abs(vals) > threshold) and np.any(np.abs(vals) <= threshold))


@dataclass
class BlowupReport:
    lams: np.ndarray
    amplitudes: np.ndarray
    angles: np.ndarray
    distances: np.ndarray  # |u~_lam - limit| in L2_mu, limit from the smallest lam
    rate: float  # fitted exponent of distance against lam
    stabilized: bool


def blowup(u, center, lams, kappa: float, grid: HalfSpaceGrid, threshold: float = 1e-8,
           stab_tol: float = 5e-2) -> BlowupReport:
    """Rescale at the centre, read the t = -1 slice in conformal variables, project."""
    if not on_free_boundary(u, center, grid.n, threshold=threshold):
        raise ValueError("centre is not on the free boundary")
    lams = np.sort(np.asarray(lams, float))[::-1]
    if abs(kappa - 1.5) > 1e-12:
        raise ValueError("blow-up projection is implemented for the 3/2 family")
    v = translated(u, center)
    pts = grid.points()
    w = measure(grid).weights
    fields, amps, angs = [], [], []
    from .grid import WeightedField

    for lam in lams:
        vals = v(lam * 2.0 * pts, -lam * lam) / lam ** kappa
        f = WeightedField(grid, vals)
        p = project_E32(f)
        fields.append(vals)
        amps.append(p.lam)
        angs.append(p.angle)
    last = fields[-1]
    dist = np.array([math.sqrt(float(np.sum(w * (f - last) ** 2))) for f in fields])
    ok = dist[:-1] > 1e-14
    if np.sum(ok) >= 2:
        rate = float(np.polyfit(np.log(lams[:-1][ok]), np.log(dist[:-1][ok]), 1)[0])
    else:
        rate = float("inf")
    amps, angs = np.array(amps), np.array(angs)
    da = np.abs(np.diff(angs))
    da = np.minimum(da, 2 * math.pi - da)
    stab = bool(np.all(np.abs(np.diff(amps))[-2:] <= stab_tol * max(amps[-1], 1e-12)) and np.all(da[-2:] <= stab_tol))
    return BlowupReport(lams, amps, angs, dist, rate, stab)


# -- graph of the regular set ------------------------------------------------------------------


@dataclass
class GraphReport:
    x: np.ndarray  # x'' samples (x_1)
    t: np.ndarray
    g: np.ndarray  # shape (n_t, n_x)
    dg: np.ndarray
    graphical: bool
    bad_columns: list
    slope: float
    angle: float
    theta_hat: float
    quotients: dict


def _flip(xs, col, threshold):
    """Sub-cell position of the single contact-to-positive flip in one column."""
    flags = np.abs(col) <= threshold
    changes = np.flatnonzero(flags[1:] != flags[:-1])
    if changes.size != 1 or not flags[changes[0]]:
        return None
    i = changes[0]  # last contact node
    a, b = i + 1, i + 2
    if b >= xs.size:
        return xs[i] + 0.5 * (xs[a] - xs[i])
    # the trace grows like distance^{3/2}: u^{2/3} is linear in the distance
    ua, ub = max(col[a], 0.0) ** (2 / 3), max(col[b], 0.0) ** (2 / 3)
    if ub <= ua:
        return xs[a]
    x = xs[a] - ua * (xs[b] - xs[a]) / (ub - ua)
    return float(np.clip(x, xs[i], xs[a]))


def reconstruct_graph(contact_values, x1, x2, ts, threshold: float, thetas=None) -> GraphReport:
    """g(x_1, t): the x_2 level where the contact flag flips, column by column.

    ``contact_values`` has shape (n_t, n_x1, n_x2) (the boundary trace in a
    window); columns with more than one flip are reported, not guessed.
    """
    vals = np.asarray(contact_values, float)
    if vals.ndim != 3:
        raise ValueError("graph reconstruction needs n = 3 boundary-time data")
    nt, nx, _ = vals.shape
    g = np.full((nt, nx), np.nan)
    bad = []
    for k in range(nt):
        for i in range(nx):
            f = _flip(np.asarray(x2, float), vals[k, i], threshold)
            if f is None:
                bad.append((k, i))
            else:
                g[k, i] = f
    graphical = not bad
    dg = np.gradient(g, np.asarray(x1, float), axis=1) if nx > 2 else np.zeros_like(g)
    ok = np.isfinite(g)
    X = np.broadcast_to(np.asarray(x1, float)[None, :], g.shape)
    slope = float(np.polyfit(X[ok], g[ok], 1)[0]) if np.sum(ok) > 2 else float("nan")
    thetas = np.linspace(0.1, 1.0, 10) if thetas is None else np.asarray(thetas, float)
    theta_hat, quot = holder_quotients(np.asarray(x1, float), np.asarray(ts, float), dg, thetas)
    return GraphReport(np.asarray(x1, float), np.asarray(ts, float), g, dg, graphical, bad,
                       slope, math.atan(slope) if np.isfinite(slope) else float("nan"), theta_hat, quot)


def parabolic_distance(p, q):
    return float(np.linalg.norm(np.asarray(p[0], float) - np.asarray(q[0], float))) + math.sqrt(abs(p[1] - q[1]))


def holder_quotients(x, t, f, thetas):
    """Sup of |f(p) - f(q)| / d(p, q)^theta and a log-log oscillation exponent."""
    T, X = np.meshgrid(t, x, indexing="ij")
    pts = np.stack([X.ravel(), T.ravel()], axis=-1)
    vals = f.ravel()
    ok = np.isfinite(vals)
    pts, vals = pts[ok], vals[ok]
    if vals.size < 2:
        return float("nan"), {float(th): float("nan") for th in thetas}
    dx = np.abs(pts[:, None, 0] - pts[None, :, 0])
    dt = np.sqrt(np.abs(pts[:, None, 1] - pts[None, :, 1]))
    d = dx + dt
    dv = np.abs(vals[:, None] - vals[None, :])
    iu = np.triu_indices(vals.size, 1)
    d, dv = d[iu], dv[iu]
    pos = d > 0
    d, dv = d[pos], dv[pos]
    quot = {float(th): float(np.max(dv / d ** th)) for th in thetas}
    if np.max(dv) < 1e-12:
        return 1.0, quot
    # oscillation against distance over distance bins
    edges = np.quantile(d, np.linspace(0.05, 0.95, 10))
    osc = np.array([np.max(dv[d <= e]) for e in edges])
    good = osc > 0
    if np.sum(good) < 3:
        return float("nan"), quot
    theta = float(np.polyfit(np.log(edges[good]), np.log(osc[good]), 1)[0])
    return float(np.clip(theta, 0.0, 1.0)), quot


@dataclass
class HolderReport:
    pairs: int
    c_quotient: dict
    e_quotient: dict


def holder_maps(samples, thetas=(0.25, 0.5, 0.75, 1.0)) -> HolderReport:
    """Quotients of the blow-up amplitude and direction maps over sample pairs."""
    regs = [s for s in samples if s.blowup]
    if len(regs) < 2:
        raise ValueError("need at least two regular samples with blow-ups")
    cq = {float(th): 0.0 for th in thetas}
    eq = {float(th): 0.0 for th in thetas}
    npairs = 0
    for i in range(len(regs)):
        for j in range(i + 1, len(regs)):
            a, b = regs[i], regs[j]
            d = parabolic_distance(a.center, b.center)
            if d <= 0:
                continue
            npairs += 1
            dc = abs(a.blowup["c"] - b.blowup["c"])
            de = float(np.linalg.norm(np.asarray(a.blowup["e"]) - np.asarray(b.blowup["e"])))
            for th in cq:
                cq[th] = max(cq[th], dc / d ** th)
                eq[th] = max(eq[th], de / d ** th)
    return HolderReport(npairs, cq, eq)


# -- homogeneous reference data ---------------------------------------------------------------


def homogeneous_profile_data(n: int, direction=None, kappa: float = 1.5):
    """Callable space-time data: the parabolic extension of c_n h_e."""
    e = np.asarray(direction if direction is not None else (1.0,) + (0.0,) * (n - 2), float)
    c = golden("c_n", n)

    def u(x, t):
        if t >= 0:
            raise ValueError("needs t < 0")
        s = math.sqrt(-t)
        return s ** kappa * c * profile_raw(np.asarray(x, float) / (2 * s), e)

    return u


def homogeneous_polynomial_data(element_fn, kappa: float):
    """Callable space-time data from a stationary conformal callable."""

    def u(x, t):
        if t >= 0:
            raise ValueError("needs t < 0")
        s = math.sqrt(-t)
        y = np.asarray(x, float) / (2 * s)
        y = y.copy()
        y[..., -1] = np.abs(y[..., -1])
        return s ** kappa * element_fn(y)

    return u


# -- frequency gap -------------------------------------------------------------------------------


def gap_inequality(eps: float, c_tilde: float, c0: float):
    """(lhs, rhs) of e^{-eps} <= 1 - c~ e^{-eps} eps |-eps + ln eps + ln(c~/c0)|^2."""
    lhs = math.exp(-eps)
    rhs = 1.0 - c_tilde * math.exp(-eps) * eps * (-eps + math.log(eps) + math.log(c_tilde / c0)) ** 2
    return lhs, rhs


def implied_eps0(c_tilde: float, c0: float, grid=None) -> float:
    """Smallest sampled eps at which the gap inequality can hold."""
    grid = np.logspace(-8, 0, 4001) if grid is None else grid
    for e in grid:
        lhs, rhs = gap_inequality(float(e), c_tilde, c0)
        if lhs <= rhs:
            return float(e)
    return float("inf")


@dataclass
class GapRow:
    eps: float
    sign: str  # "+" for frequency 2m + eps (decaying), "-" for 2m - eps
    hermite_exact: bool
    eigenvalue_target: float
    shift: float
    admissible: bool
    max_rel_error: float


def _find_branch(target: float, cells: int, R: float, span: float = 4.0, max_index: int = 8):
    from .spectrum import eigenvalue_at_shift

    for j in range(max_index):
        a = eigenvalue_at_shift(-span, j, cells, R)
        b = eigenvalue_at_shift(span, j, cells, R)
        if min(a, b) < target < max(a, b):
            return j, (-span, span)
    raise ValueError(f"no eigen-branch reaches {target}")


def frequency_gap_experiment(m: int, eps_grid, cells: int = 60, R: float = 6.0, dtau: float = 0.01,
                             tau_max: float = 5.0):
    """Closed-form Weiss traces of synthetic eigen-trajectories e^{-+eps tau/2} v.

    v is a discrete Dirichlet-Neumann eigenvector on the slit plane whose tip
    is moved until its eigenvalue is 2m +- eps; no Hermite polynomial gives a
    fractional eps, so every row is synthetic.
    """
    from .spectrum import assemble, evolve_mapped, solve_lowest, trace_admissible, tune_shift

    rows, trajs = [], []
    for eps in eps_grid:
        if not 0 < eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        for sign in ("+", "-"):
            target = 2 * m + eps if sign == "+" else 2 * m - eps
            j, bracket = _find_branch(target, cells, R)
            s = tune_shift(target, j, cells, bracket, R)
            prob = assemble(cells, shift=s, R=R)
            pairs = solve_lowest(prob, j + 1)
            v = pairs.vectors[:, j]
            v = v / math.sqrt(float(np.sum(prob.B * v * v)))
            tr = evolve_mapped(prob, v, m, dtau, tau_max)
            lam = float(pairs.values[j])
            # with |v| = 1 the energy is (lam/2 - m) e^{(2m - lam) tau}
            closed = (lam / 2 - m) * np.exp((2 * m - lam) * tr.tau)
            rel = float(np.max(np.abs(tr.W - closed) / np.abs(closed)))
            rows.append(GapRow(float(eps), sign, False, target, float(s), trace_admissible(prob, v), rel))
            trajs.append(tr)
    return rows, trajs
