"""Named experiments.  Each one writes its artifacts and returns its checks.

Every check carries the number of the acceptance criterion it decides, so a
report lists each criterion exactly once per experiment that owns it.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import freeboundary as fb
from .config import ExperimentConfig
from .conformal import ConformalFrame
from .exact import eval_h2m, eval_hermite, unit_profile
from .grid import WeightedField, make_grid, measure
from .initial import (clip_trace, forcing_profile, negative_2m, negative_profile, perturbed_2m,
                      perturbed_profile, positive_2m, random_admissible, random_hermite)
from .solver import SolverConfig, cross_validate, solve_trajectory
from .spectrum import spectrum_study
from .weiss import (WeissTrace, epiperimetric_check, evolution_residuals_2m, fit_decay, limit_extraction,
                    modified_energy, probes_2m, project_E2m, project_E32, spectral_gap_draw,
                    unit_contractions, weiss_energy)

log = logging.getLogger(__name__)

OWNERS = {
    "stationarity": (1, 2, 3, 4),
    "decay-32": (5, 6),
    "decay-2m": (7, 8, 9),
    "inhomogeneous-32": (13,),
    "frequency-gap": (10,),
    "regular-fb": (11, 15),
    "spectrum": (12,),
    "crossval": (14,),
}


@dataclass
class Check:
    criterion: int
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: dict = field(default_factory=dict)


@dataclass
class RunReport:
    config: dict
    checks: list
    manifest: dict
    fits: dict = field(default_factory=dict)
    runtime: float | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        d = {"config": self.config, "checks": [asdict(c) for c in self.checks],
             "manifest": self.manifest, "fits": self.fits, "passed": self.passed}
        if self.runtime is not None:
            d["runtime_seconds"] = self.runtime
        return d


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


class Context:
    """Output directory, manifest and the run's single generator."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.rng = np.random.default_rng(cfg.seed)
        self.manifest: dict = {}
        self.fits: dict = {}
        out.mkdir(parents=True, exist_ok=True)

    def write_bytes(self, name: str, data: bytes) -> Path:
        p = self.out / name
        p.write_bytes(data)
        self.manifest[name] = hashlib.sha256(data).hexdigest()
        return p

    def write_text(self, name: str, text: str) -> Path:
        return self.write_bytes(name, text.encode("utf-8"))

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, dumps_json(obj))

    def write_csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(x) for x in r])
        return self.write_text(name, buf.getvalue())

    def write_trace(self, label: str, traj, extra=None) -> Path:
        return self.write_text(f"trace_{label}.csv", WeissTrace.from_trajectory(traj, extra).to_csv())

    def record_fit(self, label: str, fit) -> None:
        if fit is None:
            return
        entry = {"model": fit.model, "window": list(fit.window), "r2": fit.r2}
        if fit.model == "exponential":
            entry.update(gamma=fit.params["gamma"], A=math.exp(fit.params["log_W0"]))
        else:
            entry.update(fit.params)
        self.fits[label] = entry

    def solver(self, grid, kappa: float, dtau: float, tau_max: float, **kw) -> SolverConfig:
        s = self.cfg.solver
        base = dict(scheme=s["scheme"], eps=s["eps"], tol=s["tol"], omega=s["omega"])
        base.update(kw)
        return SolverConfig(ConformalFrame(kappa, tau_max, dtau), grid, **base)


def _norm(grid, values) -> float:
    return math.sqrt(float(np.sum(measure(grid).weights * values * values)))


def _safe_fit(tau, W, model, window):
    try:
        return fit_decay(tau, W, model, window)
    except ValueError as e:
        log.warning("decay fit failed: %s", e)
        return None


# -- stationarity: criteria 1-4 ---------------------------------------------------------------


def _drift_run(ctx: Context, u0: WeightedField, kappa: float, dtau: float, tau_max: float):
    w = measure(u0.grid).weights
    ref = u0.values
    worst = [0.0]

    def track(st):
        worst[0] = max(worst[0], math.sqrt(float(np.sum(w * (st.values - ref) ** 2))))

    traj = solve_trajectory(u0, ctx.solver(u0.grid, kappa, dtau, tau_max), tau_max, callback=track)
    return traj, worst[0]


def stationarity(ctx: Context) -> list:
    cfg, p = ctx.cfg, ctx.cfg.params
    n, R = cfg.grid["n"], cfg.grid["R"]
    tau_max = cfg.solver["tau_max"]
    checks = []

    # 1: h_e and h_2 stay put
    rows, ok, slowest = [], True, 0.0
    levels = [tuple(lv) for lv in p["refinement"]]
    for h, dt in levels:
        g = make_grid(n, R, h)
        bound = 5.0 * (h ** 1.5 + dt)
        for label, kappa, u0 in (("h_e", 1.5, unit_profile(g)), ("h_2", 2.0, eval_h2m(1, g))):
            t0 = time.perf_counter()
            traj, drift = _drift_run(ctx, u0, kappa, dt, tau_max)
            slowest = max(slowest, time.perf_counter() - t0)
            ok &= drift <= bound
            rows.append((label, kappa, h, dt, drift, bound))
            if (h, dt) == levels[-1]:
                ctx.write_trace(f"stationary_{label}", traj)
    ctx.write_csv("stationarity_drift.csv", ("profile", "kappa", "h", "dtau", "drift", "bound"), rows)
    bounds = [5.0 * (h ** 1.5 + dt) for h, dt in levels]
    ratios = [a / b for a, b in zip(bounds, bounds[1:])]
    detail = {"rows": [dict(zip(("profile", "kappa", "h", "dtau", "drift", "bound"), r)) for r in rows],
              "bound_ratios": ratios, "runtime_limit_seconds": 120.0}
    fast = slowest <= 120.0
    if not cfg.deterministic:
        detail["slowest_run_seconds"] = slowest
    worst = max(r[4] / r[5] for r in rows)
    checks.append(Check(1, "stationary profiles do not drift", bool(ok and fast and all(x >= 2 for x in ratios)),
                        worst, 1.0, detail))

    # 2: Weiss identity, centered in tau, away from the initial layer
    skip = p["identity_skip"]
    T = p["identity_tau_max"]
    seq = ctx.rng.spawn(1)[0]
    per_level = []
    for h, dt in (tuple(lv) for lv in p["identity_levels"]):
        g = make_grid(n, R, h)
        gen = copy.deepcopy(seq)  # same random data on every level
        data = {
            "profile_plus_hermite": WeightedField(g, clip_trace(
                unit_profile(g).values + 0.2 * eval_hermite((2, 0), g).values
                + 0.1 * eval_hermite((1, 2), g).values)) if n == 2 else unit_profile(g),
            "random_admissible": random_admissible(g, gen, 1.5).field,
        }
        worst_r = 0.0
        for label, u0 in data.items():
            traj = solve_trajectory(u0, ctx.solver(g, 1.5, dt, T), T)
            N = traj.norm2
            r = traj.W[1:-1] + 0.5 * (N[2:] - N[:-2]) / (2 * dt)
            tt = traj.tau[1:-1]
            sel = (tt >= skip - 1e-12) & (tt <= T - dt + 1e-12)
            worst_r = max(worst_r, float(np.max(np.abs(r[sel]))))
        per_level.append((h, dt, worst_r, worst_r / (dt * dt + h)))
    ctx.write_csv("weiss_identity.csv", ("h", "dtau", "max_residual", "C"), per_level)
    Cs = [row[3] for row in per_level]
    spread = max(Cs) / min(Cs) if min(Cs) > 0 else float("inf")
    checks.append(Check(2, "Weiss identity residual O(dtau^2 + h) with stable constant", bool(spread <= 2.0),
                        spread, 2.0, {"levels": [dict(zip(("h", "dtau", "max_residual", "C"), r)) for r in per_level],
                                      "interior_from_tau": skip}))

    # 3 and 4 on the same randomized runs
    h, dt, T = p["random_h"], p["random_dtau"], p["random_tau_max"]
    g = make_grid(n, R, h)
    stride = p["pair_stride"]
    viol3, viol4, pairs, worst3, worst4 = 0, 0, 0, -math.inf, -math.inf
    rows = []
    for i in range(p["random_runs"]):
        kappa = 1.5 if i % 2 == 0 else 2.0
        u0 = random_admissible(g, ctx.rng, kappa).field
        traj = solve_trajectory(u0, ctx.solver(g, kappa, dt, T), T)
        W, N, d = traj.W, traj.norm2, np.nan_to_num(traj.dissipation)
        cum = np.concatenate([[0.0], np.cumsum(d[1:])])
        idx = np.arange(0, W.size, stride)
        a, b = np.meshgrid(idx, idx, indexing="ij")
        up = a < b
        a, b = a[up], b[up]
        diss = cum[b] - cum[a]
        resid = W[b] - W[a] + 2.0 * diss
        tol = 0.5 * kappa * dt * diss + 1e-9 * max(1.0, float(np.max(np.abs(W))))
        v3 = int(np.sum(resid > tol))
        second = N[2:] - 2 * N[1:-1] + N[:-2]
        tol4 = 1e-10 * float(np.max(N))
        v4 = int(np.sum(second < -tol4))
        viol3 += v3
        viol4 += v4
        pairs += a.size
        worst3 = max(worst3, float(np.max(resid - tol)))
        worst4 = max(worst4, float(np.max(-second - tol4)))
        rows.append((i, kappa, a.size, v3, float(np.max(resid - tol)), v4, float(np.min(second))))
        if i < 2:
            ctx.write_trace(f"random_{i}", traj)
    ctx.write_csv("monotonicity_runs.csv", ("run", "kappa", "pairs", "violations_dissipation",
                                            "max_excess", "violations_convexity", "min_second_difference"), rows)
    checks.append(Check(3, "dissipation inequality on sampled pairs", viol3 == 0, float(viol3), 0.0,
                        {"runs": p["random_runs"], "pairs": pairs, "max_excess_over_tolerance": worst3}))
    checks.append(Check(4, "convexity of the squared norm", viol4 == 0, float(viol4), 0.0,
                        {"runs": p["random_runs"], "max_excess_over_tolerance": worst4}))
    return checks


# -- decay at 3/2: criteria 5 and 6 ---------------------------------------------------------------


def _vnorm_series(traj):
    w = measure(traj.snapshots[0].grid).weights
    taus, vn, lam = [], [], []
    for s in traj.snapshots:
        pr = project_E32(s)
        taus.append(s.time)
        vn.append(float(np.sum(w * pr.v.values ** 2)))
        lam.append(pr.lam)
    return np.array(taus), np.array(vn), np.array(lam)


def decay_32(ctx: Context) -> list:
    cfg, p = ctx.cfg, ctx.cfg.params
    g = make_grid(cfg.grid["n"], cfg.grid["R"], cfg.grid["h"])
    dt, T = cfg.solver["dtau"], cfg.solver["tau_max"]
    win = tuple(p["fit_window"])
    rows, ok5, ok6 = [], True, True
    gammas = []
    for i in range(p["runs"]):
        d = perturbed_profile(g, ctx.rng, delta=p["delta"])
        traj = solve_trajectory(d.field, ctx.solver(g, 1.5, dt, T), T)
        fit = _safe_fit(traj.tau, traj.W, "exponential", win)
        ts, vn, lam = _vnorm_series(traj)
        vfit = _safe_fit(ts, vn, "exponential", win)
        c0 = unit_contractions(traj.tau, traj.W)
        gamma = fit.params["gamma"] if fit else float("nan")
        r2 = fit.r2 if fit else float("nan")
        vrate = vfit.params["gamma"] if vfit else float("nan")
        c0min = float(np.min(c0))
        run_ok = bool(fit is not None and vfit is not None and gamma > 0 and r2 >= 0.98
                      and vrate >= 0.8 * gamma and c0min > 0)
        ok5 &= run_ok
        u0n = math.sqrt(traj.norm2[0])
        try:
            lim = limit_extraction(traj.snapshots, 1.5)
            lam_inf = lim.lam_inf
        except ValueError as e:
            log.warning("run %d: %s", i, e)
            lam_inf = float("nan")
        nontrivial = bool(lam_inf > 0.5 * u0n)
        ok6 &= nontrivial
        gammas.append(gamma)
        rows.append((i, d.recipe["eta"], d.recipe["weiss_ratio"], d.recipe["dist_ratio"], gamma, r2, vrate,
                     c0min, lam_inf, u0n))
        ctx.write_trace(f"decay32_{i}", traj)
        ctx.record_fit(f"decay32_{i}", fit)
        ctx.write_csv(f"lambda_decay32_{i}.csv", ("tau", "lambda", "v_norm2"), zip(ts, lam, vn))
    header = ("run", "eta", "weiss_ratio", "dist_ratio", "gamma0", "r2", "v_rate", "c0_min", "lambda_inf",
              "u0_norm")
    ctx.write_csv("decay32_runs.csv", header, rows)
    table = [dict(zip(header, r)) for r in rows]
    checks = [
        Check(5, "exponential decay of W and of the distance to E_3/2", ok5,
              float(np.nanmin(gammas)) if gammas else float("nan"), 0.0,
              {"runs": table, "r2_min": 0.98, "v_rate_factor": 0.8}),
        Check(6, "limit amplitude above half the initial norm", ok6,
              min((r[8] / r[9] for r in rows), default=float("nan")), 0.5, {}),
    ]
    return checks


# -- 2m bookkeeping and negative regime: criteria 7-9 --------------------------------------------------


def _negative_check(ctx: Context, p) -> Check:
    n, R = ctx.cfg.grid["n"], ctx.cfg.grid["R"]
    g = make_grid(n, R, p["negative_h"])
    dt, T = p["negative_dtau"], p["negative_tau_max"]
    rows, ok = [], True
    for kappa in (1.5, 2.0):
        for i in range(p["negative_runs"]):
            d = negative_profile(g, ctx.rng) if kappa == 1.5 else negative_2m(g, ctx.rng)
            traj = solve_trajectory(d.field, ctx.solver(g, kappa, dt, T), T)
            tau, W, N = traj.tau, traj.W, traj.norm2
            W0 = float(W[0])
            gamma, gamma_unit, margin = float("nan"), float("nan"), float("nan")
            if W0 < 0:
                ep = epiperimetric_check(WeissTrace.from_trajectory(traj), variant="negative")
                gamma_unit = math.log1p(ep.c0_min)
                # largest gamma with W(tau) <= e^{gamma tau} W(0) on the whole run
                gamma = float(np.min(np.log(W[1:] / W0) / tau[1:]))
                lower = -2.0 * W0 * np.expm1(gamma * tau) / gamma + N[0]
                sel = tau >= 1.0 - 1e-12
                margin = float(np.min(N[sel] - lower[sel]))
            run_ok = bool(W0 < 0 and gamma > 0 and margin > 0)
            ok &= run_ok
            rows.append((kappa, i, W0, gamma, gamma_unit, margin))
            ctx.write_trace(f"negative_k{kappa:g}_{i}", traj)
    header = ("kappa", "run", "W0", "gamma", "gamma_unit_pairs", "min_margin")
    ctx.write_csv("negative_runs.csv", header, rows)
    return Check(7, "norm growth above the lower-bound curve when W < 0", ok,
                 min(r[5] for r in rows), 0.0,
                 {"runs": [dict(zip(header, r)) for r in rows],
                  "gamma_from": "min over tau of ln(W(tau)/W(0))/tau"})


def _bookkeeping_check(ctx: Context, p) -> Check:
    cfg = ctx.cfg
    g = make_grid(cfg.grid["n"], cfg.grid["R"], cfg.grid["h"])
    h = cfg.grid["h"]
    m = p["m"]
    dt, T = cfg.solver["dtau"], cfg.solver["tau_max"]
    probes, flux = probes_2m(g, m)
    w = measure(g).weights
    rows, ok = [], True
    worst = 0.0
    for i in range(p["bookkeeping_runs"]):
        d = perturbed_2m(g, ctx.rng, m)
        traj = solve_trajectory(d.field, ctx.solver(g, 2.0 * m, dt, T), T, probes, flux)
        res = evolution_residuals_2m(traj, m, g)
        # W(u) = W(v) snapshot by snapshot, computed directly on both
        eq = []
        for s in traj.snapshots:
            v = project_E2m(s, m).v
            tol = h * h * (1.0 + float(np.sum(w * s.values ** 2)))
            eq.append(abs(weiss_energy(s, 2.0 * m) - weiss_energy(v, 2.0 * m)) / tol)
        eq_ratio = max(eq)
        lam_ratio = float(np.max(res.lambda2m_temporal)) / (dt * dt)
        mono_tol = dt * h * h * (1.0 + float(np.max(traj.norm2)))
        mono_ratio = max(0.0, -float(np.min(res.lam_2m_increments))) / mono_tol
        run_ok = eq_ratio <= 1.0 and lam_ratio <= 1.0 and mono_ratio <= 1.0
        ok &= bool(run_ok)
        worst = max(worst, eq_ratio, lam_ratio, mono_ratio)
        rows.append((i, eq_ratio, float(np.max(res.lambda2m_temporal)), float(np.max(res.lambda2m_spatial)),
                     float(np.max(res.lambda2m)), float(np.max(np.abs(res.weiss2m))),
                     float(np.min(res.lam_2m_increments)), mono_tol))
        if i == 0:
            ctx.write_trace("bookkeeping_0", traj)
            ctx.write_csv("lambda_bookkeeping_0.csv", ("tau", "lambda_2m"), zip(traj.tau, res.lam_2m))
    header = ("run", "weiss_equal_over_tol", "lambda_temporal", "lambda_spatial", "lambda_raw",
              "weiss2m_residual", "min_lambda2m_increment", "monotone_tol")
    ctx.write_csv("bookkeeping_runs.csv", header, rows)
    return Check(8, "2m bookkeeping: W(u) = W(v), lambda evolution, lambda_2m monotone", ok, worst, 1.0,
                 {"runs": [dict(zip(header, r)) for r in rows],
                  "weiss_equal_tol": "h^2 (1 + |u|^2)", "lambda_tol": "dtau^2",
                  "monotone_tol": "dtau h^2 (1 + max |u|^2)"})


def _gap_check(ctx: Context, p) -> Check:
    n, R = ctx.cfg.grid["n"], ctx.cfg.grid["R"]
    g = make_grid(n, R, p["gap_h"])
    rows, worst_full, worst_half = [], -math.inf, -math.inf
    for m in p["gap_orders"]:
        for i in range(p["gap_draws"]):
            W, q2, closed = spectral_gap_draw(g, int(m), ctx.rng)
            full = W + q2 - 1e-3  # asserted bound: W <= -|q|^2 + 1e-3
            half = W + 0.5 * q2 - 1e-3  # what the Hermite spectrum actually gives
            worst_full = max(worst_full, full)
            worst_half = max(worst_half, half)
            rows.append((m, i, W, q2, closed, full <= 0, half <= 0))
    ctx.write_csv("spectral_gap_draws.csv", ("m", "draw", "W", "norm2", "closed_form", "full_bound_holds",
                                             "half_bound_holds"), rows)
    return Check(9, "spectral gap W_2m(q) <= -|q|^2 + 1e-3 on E_<2m", bool(worst_full <= 0), worst_full, 0.0,
                 {"draws": len(rows), "violations": sum(1 for r in rows if not r[5]),
                  "half_bound_max_excess": worst_half,
                  "half_bound_violations": sum(1 for r in rows if not r[6])})


def decay_2m(ctx: Context) -> list:
    p = ctx.cfg.params
    return [_negative_check(ctx, p), _bookkeeping_check(ctx, p), _gap_check(ctx, p)]


# -- forced decay: criterion 13 -----------------------------------------------------------------------


def inhomogeneous_32(ctx: Context) -> list:
    cfg, p = ctx.cfg, ctx.cfg.params
    g = make_grid(cfg.grid["n"], cfg.grid["R"], cfg.grid["h"])
    dt, T = cfg.solver["dtau"], cfg.solver["tau_max"]
    win = tuple(p["fit_window"])
    lo, hi = p["amplitude"]
    rows, ok = [], True
    for i in range(p["runs"]):
        d = perturbed_profile(g, ctx.rng, delta=p["delta"])
        phi, info = forcing_profile(g, ctx.rng, float(ctx.rng.uniform(lo, hi)))
        M = _norm(g, phi)

        def forcing(tau, phi=phi):
            return math.exp(-tau / 2.0) * phi

        base = ctx.solver(g, 1.5, dt, T)
        forced = solve_trajectory(d.field, base.with_(forcing=forcing, forcing_bound=M), T)
        free = solve_trajectory(d.field, base, T)
        Wt = modified_energy(forced.tau, forced.W, M)
        inc = float(np.max(np.diff(Wt)))
        tol = 1e-9 * float(np.max(np.abs(Wt)))
        ff = _safe_fit(forced.tau, forced.W, "exponential", win)
        f0 = _safe_fit(free.tau, free.W, "exponential", win)
        gf = ff.params["gamma"] if ff else float("nan")
        g0 = f0.params["gamma"] if f0 else float("nan")
        rel = abs(gf - g0) / g0 if (ff and f0 and g0 > 0) else float("nan")
        run_ok = bool(inc <= tol and rel <= 0.25)
        ok &= run_ok
        rows.append((i, info["amplitude"], M, inc, tol, gf, g0, rel))
        ctx.write_trace(f"forced_{i}", forced, {"modified_W": Wt})
        ctx.record_fit(f"forced_{i}", ff)
    header = ("run", "amplitude", "M", "max_increment_modified_W", "tolerance", "gamma_forced",
              "gamma_unforced", "relative_change")
    ctx.write_csv("forced_runs.csv", header, rows)
    return [Check(13, "forced run: modified energy nonincreasing, decay rate within 25%", ok,
                  max((r[7] for r in rows), default=float("nan")), 0.25,
                  {"runs": [dict(zip(header, r)) for r in rows]})]


# -- frequency gap: criterion 10 -----------------------------------------------------------------------


def frequency_gap(ctx: Context) -> list:
    cfg, p = ctx.cfg, ctx.cfg.params
    m = p["m"]
    gap_rows, _ = fb.frequency_gap_experiment(m, p["eps"], cells=p["cells"], R=cfg.grid["R"],
                                              dtau=p["mapped_dtau"], tau_max=p["mapped_tau_max"])
    ctx.write_csv("frequency_gap.csv", ("eps", "sign", "hermite_exact", "eigenvalue_target", "shift",
                                        "admissible", "max_rel_error"),
                  [(r.eps, r.sign, r.hermite_exact, r.eigenvalue_target, r.shift, r.admissible, r.max_rel_error)
                   for r in gap_rows])
    worst = max(r.max_rel_error for r in gap_rows)
    # measured c0 from a positive 2m run, logarithmic contraction
    g = make_grid(cfg.grid["n"], cfg.grid["R"], cfg.grid["h"])
    d = positive_2m(g, ctx.rng, m)
    dt, T = cfg.solver["dtau"], cfg.solver["tau_max"]
    traj = solve_trajectory(d.field, ctx.solver(g, 2.0 * m, dt, T), T)
    ctx.write_trace("positive_2m", traj)
    ep = epiperimetric_check(WeissTrace.from_trajectory(traj), variant="logarithmic")
    c0 = ep.c0_min
    c_tilde = 0.5 * c0  # |v| = 1
    cut = p["exclude_below"]
    probe = np.logspace(-8, math.log10(cut), 200)
    held = []
    for e in probe:
        lhs, rhs = fb.gap_inequality(float(e), c_tilde, c0)
        if lhs <= rhs:
            held.append(float(e))
    excluded = c0 > 0 and not held
    eps0 = fb.implied_eps0(c_tilde, c0) if c0 > 0 else float("nan")
    ok = bool(worst <= 0.01 and excluded)
    return [Check(10, "eigen-trajectory Weiss traces and the frequency-gap inequality", ok, worst, 0.01,
                  {"rows": [asdict(r) for r in gap_rows], "admissible_rows": sum(r.admissible for r in gap_rows),
                   "c0_logarithmic": c0, "c_tilde": c_tilde, "excluded_up_to": cut,
                   "inequality_holds_at": held[:5], "implied_eps0": eps0})]


# -- regular free boundary: criteria 11 and 15 ---------------------------------------------------------------


def _hcurve_check(ctx: Context) -> Check:
    cfg = ctx.cfg
    g = make_grid(2, cfg.grid["R"], cfg.grid["h"])
    origin = (np.zeros(2), 0.0)
    cases = (("profile_32", 1.5, fb.homogeneous_profile_data(2), fb.REGULAR),
             ("polynomial_2", 2.0, fb.homogeneous_polynomial_data(lambda y: y[..., 0] ** 2 - 0.5, 2.0),
              fb.singular_tag(1)))
    rows, ok, worst = [], True, 0.0
    for label, kappa, u, want in cases:
        s = fb.make_sample(u, origin, g)
        tag = fb.classify(s)
        s2 = fb.make_sample(lambda x, t, u=u: 2.0 * u(x, t), origin, g)
        tag2 = fb.classify(s2)
        ratio = float(np.max(np.abs(s2.curve.H / s.curve.H - 4.0))) / 4.0
        rel = abs(s.slope - 2 * kappa) / (2 * kappa)
        worst = max(worst, rel)
        ok &= bool(rel <= 0.01 and tag == want and tag2 == tag and ratio <= 1e-10)
        rows.append((label, kappa, s.slope, rel, s.r2, tag, tag2, ratio))
        ctx.write_csv(f"hcurve_{label}.csv", ("r", "H"), zip(s.curve.r, s.curve.H))
    header = ("data", "kappa", "slope", "relative_error", "r2", "classification", "classification_scaled",
              "scaling_defect")
    ctx.write_csv("classification.csv", header, rows)
    return Check(11, "H-curve slope 2 kappa and classification", ok, worst, 0.01,
                 {"rows": [dict(zip(header, r)) for r in rows], "window": 0.4})


def _window(h):
    x1 = np.arange(-0.2, 0.2 + 1e-9, h)
    x2 = np.arange(-0.3, 0.3 + 1e-9, h)
    return x1, x2


def _graph_check(ctx: Context) -> Check:
    cfg, p = ctx.cfg, ctx.cfg.params
    wh = p["window_h"]
    x1, x2 = _window(wh)
    arc = wh / float(x2[-1])  # one cell of arc at the window edge
    ts = [-0.04, -0.02, -0.01]
    rows, ok = [], True
    for phi in p["angles"]:
        e = (-math.sin(phi), math.cos(phi))
        u = fb.homogeneous_profile_data(3, e)
        vals = fb.boundary_samples(u, [x1, x2], ts, 3)
        rep = fb.reconstruct_graph(vals, x1, x2, ts, 1e-10)
        err = abs(rep.angle - phi)
        ok &= bool(rep.graphical and err <= arc)
        rows.append(("rotated", phi, rep.angle, err, rep.graphical, rep.theta_hat))
    # perturbed tilted profile, coarse three-dimensional run
    g3 = make_grid(3, p["n3_R"], p["n3_h"])
    tilt = p["tilt"]
    e = (-math.sin(tilt), math.cos(tilt))
    vals0 = unit_profile(g3, direction=e).values + p["perturbation"] * random_hermite(g3, ctx.rng, (2, 3))
    u0 = WeightedField(g3, clip_trace(vals0))
    dt, T = cfg.solver["dtau"], cfg.solver["tau_max"]
    traj = solve_trajectory(u0, ctx.solver(g3, 1.5, dt, T, snapshot_stride=2), T)
    ctx.write_trace("regular_n3", traj)
    data = fb.TrajectoryData(traj.snapshots, 1.5)
    tw = [-0.2, -0.1, -0.05]
    bvals = fb.boundary_samples(data, [x1, x2], tw, 3)
    rep = fb.reconstruct_graph(bvals, x1, x2, tw, 1e-10)
    ctx.write_csv("graph_perturbed.csv", ("x1", "t", "g", "dg"),
                  [(x1[i], tw[k], rep.g[k, i], rep.dg[k, i]) for k in range(len(tw)) for i in range(x1.size)])
    samples = []
    holder = None
    if rep.graphical:
        for k, tk in enumerate(tw):
            for i in (2, x1.size // 2, x1.size - 3):
                below = np.flatnonzero(x2 <= rep.g[k, i])
                if below.size == 0:
                    continue
                center = (np.array([x1[i], x2[below[-1]] - wh, 0.0]), tk)
                try:
                    b = fb.blowup(data, center, [0.2, 0.1, 0.05], 1.5, g3)
                except ValueError as err:
                    log.warning("skipping blow-up at %s: %s", center, err)
                    continue
                ang = float(b.angles[-1])
                samples.append(fb.FreeBoundarySample(center, None, 1.5, 3.0, float("nan"), fb.REGULAR,
                                                     {"c": float(b.amplitudes[-1]),
                                                      "e": [math.cos(ang), math.sin(ang)]}))
        try:
            holder = fb.holder_maps(samples)
        except ValueError as err:
            log.warning("Hölder report incomplete: %s", err)
    finite = holder is not None and all(math.isfinite(v) for v in
                                        list(holder.c_quotient.values()) + list(holder.e_quotient.values()))
    ok &= bool(rep.graphical and finite)
    rows.append(("perturbed", tilt, rep.angle, abs(rep.angle - tilt), rep.graphical, rep.theta_hat))
    header = ("data", "angle", "recovered", "error", "graphical", "theta_hat")
    ctx.write_csv("graph_summary.csv", header, rows)
    detail = {"rows": [dict(zip(header, r)) for r in rows], "arc_tolerance": arc,
              "bad_columns": len(rep.bad_columns), "samples": len(samples)}
    if holder is not None:
        detail["holder"] = {"pairs": holder.pairs, "c": holder.c_quotient, "e": holder.e_quotient}
    return Check(15, "regular free boundary is a graph; tilt recovered", ok,
                 max(r[3] for r in rows[:-1]) if len(rows) > 1 else float("nan"), arc, detail)


def regular_fb(ctx: Context) -> list:
    return [_hcurve_check(ctx), _graph_check(ctx)]


# -- spectrum: criterion 12 ----------------------------------------------------------------------------


def spectrum(ctx: Context) -> list:
    p = ctx.cfg.params
    t0 = time.perf_counter()
    tab = spectrum_study(tuple(int(c) for c in p["levels"]), int(p["k"]), R=ctx.cfg.grid["R"])
    elapsed = time.perf_counter() - t0
    k = tab.values.shape[1]
    ctx.write_csv("spectrum_table.csv", ["cells"] + [f"lambda_{j + 1}" for j in range(k)],
                  [[c] + list(v) for c, v in zip(tab.cells, tab.values)])
    l1, l2 = float(tab.extrapolated[0]), float(tab.extrapolated[1])
    e1, e2 = abs(l1 - 0.5) / 0.5, abs(l2 - 1.5) / 1.5
    eg = abs((l2 - l1) - 1.0)
    corr = tab.correlations["second"]
    ok = bool(e1 <= 0.005 and e2 <= 0.005 and eg <= 0.01 and tab.band_clear and corr >= 0.999
              and elapsed <= 300)
    detail = {"extrapolated": tab.extrapolated, "order": tab.order, "correlations": tab.correlations,
              "band_clear": tab.band_clear, "gap": l2 - l1}
    if not ctx.cfg.deterministic:
        detail["seconds"] = elapsed
    return [Check(12, "slit spectrum 1/2, 3/2 with the expected eigenvector", ok, max(e1, e2), 0.005, detail)]


# -- crossval: criterion 14 -----------------------------------------------------------------------------


def crossval(ctx: Context) -> list:
    cfg, p = ctx.cfg, ctx.cfg.params
    g = make_grid(cfg.grid["n"], cfg.grid["R"], cfg.grid["h"])
    dt, T = cfg.solver["dtau"], cfg.solver["tau_max"]
    pts = g.points()
    he = unit_profile(g)
    c = np.zeros(g.n)
    c[0], c[-1] = -0.5, 0.3
    dent = he.values - 0.3 * np.exp(-np.sum((pts - c) ** 2, axis=-1))
    cases = {"profile": he, "active_contact": WeightedField(g, clip_trace(dent)),
             "no_contact": WeightedField(g, np.ones(g.shape))}
    eps = sorted((float(e) for e in p["eps"]), reverse=True)
    rows, ok = [], True
    for label, u0 in cases.items():
        dists = []
        for e in eps:
            pen = ctx.solver(g, 1.5, dt, T, scheme="penalized", eps=e)
            proj = ctx.solver(g, 1.5, dt, T, scheme="projected")
            dists.append(cross_validate(u0, pen, proj, T))
        linear = max(dists) <= 1e-8
        mono = all(b < a for a, b in zip(dists, dists[1:]))
        ok &= bool(linear or mono)
        rows += [(label, e, d_, linear) for e, d_ in zip(eps, dists)]
    ctx.write_csv("crossval.csv", ("data", "eps", "max_distance", "contact_free"), rows)
    return [Check(14, "penalized runs converge to the projected run as eps decreases", ok,
                  max(r[2] for r in rows if r[1] == eps[-1]), float("nan"),
                  {"rows": [dict(zip(("data", "eps", "max_distance", "contact_free"), r)) for r in rows]})]


EXPERIMENT_FUNCS = {
    "stationarity": stationarity,
    "decay-32": decay_32,
    "decay-2m": decay_2m,
    "inhomogeneous-32": inhomogeneous_32,
    "frequency-gap": frequency_gap,
    "regular-fb": regular_fb,
    "spectrum": spectrum,
    "crossval": crossval,
}


def run(cfg: ExperimentConfig, out: Path | None = None, plots: bool = True) -> RunReport:
    """Run one experiment; writes artifacts and report.json under ``out``."""
    out = cfg.output_dir() if out is None else Path(out)
    ctx = Context(cfg, out)
    t0 = time.perf_counter()
    checks = EXPERIMENT_FUNCS[cfg.experiment](ctx)
    got = sorted(c.criterion for c in checks)
    if got != sorted(OWNERS[cfg.experiment]):
        raise RuntimeError(f"experiment produced checks {got}, expected {OWNERS[cfg.experiment]}")
    if plots:
        from .plotting import plot_dir

        ctx.write_json("fits.json", ctx.fits)
        for svg in plot_dir(ctx.out, cfg.deterministic):
            ctx.manifest[svg.name] = hashlib.sha256(svg.read_bytes()).hexdigest()
    runtime = None if cfg.deterministic else time.perf_counter() - t0
    report = RunReport(cfg.to_dict(), checks, dict(sorted(ctx.manifest.items())), ctx.fits, runtime)
    (out / "report.json").write_text(dumps_json(report.to_dict()), encoding="utf-8")
    return report
