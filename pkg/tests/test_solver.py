import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signorini_lab.conformal import ConformalFrame
from signorini_lab.exact import eval_h2m, eval_hermite, unit_profile
from signorini_lab.grid import WeightedField, make_grid, measure
from signorini_lab.solver import (
    PENALIZED,
    PROJECTED,
    SolverConfig,
    beta_eps,
    check_forcing_2m,
    cross_validate,
    dbeta_eps,
    forcing_sup_norm,
    initial_state,
    residual_complementarity,
    solve_lcp,
    solve_trajectory,
    step,
)

GRID = make_grid(2, 4.0, 0.1)


def config(kappa, dtau=0.02, tau_max=1.0, grid=GRID, **kw):
    return SolverConfig(ConformalFrame(kappa, tau_max, dtau), grid, **kw)


def dist(a, b):
    w = measure(a.grid).weights
    return math.sqrt(float(np.sum(w * (a.values - b.values) ** 2)))


# -- penalty profile -------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-3, 0.5))
def test_beta_eps_three_properties(s, eps):
    b = float(beta_eps(s, eps))
    if s >= 0:
        assert b == 0.0
    if s <= -2 * eps * eps:
        assert b == pytest.approx(eps + s / eps, rel=1e-12, abs=1e-12)
    assert float(dbeta_eps(s, eps)) >= 0.0


@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_beta_eps_is_c1_with_matching_derivative(eps):
    s = np.linspace(-4 * eps * eps, eps * eps, 4001)
    d = 1e-7 * eps * eps
    fd = (beta_eps(s + d, eps) - beta_eps(s - d, eps)) / (2 * d)
    assert np.max(np.abs(fd - dbeta_eps(s, eps))) < 1e-4 / eps
    # continuity at both joins
    for s0 in (0.0, -2 * eps * eps):
        lo, hi = beta_eps(s0 - 1e-14, eps), beta_eps(s0 + 1e-14, eps)
        assert abs(lo - hi) < 1e-10


def test_config_validation():
    with pytest.raises(ValueError):
        config(1.5, scheme="explicit")
    with pytest.raises(ValueError):
        config(1.5, eps=0.0)
    with pytest.raises(ValueError):
        config(1.5, omega=2.0)
    with pytest.raises(ValueError):
        config(2.0, dtau=1.0)


# -- LCP kernel --------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_lcp_complementarity(seed):
    rng = np.random.default_rng(seed)
    n = 12
    A = rng.standard_normal((n, n))
    S = A @ A.T + n * np.eye(n)
    q = rng.standard_normal(n)
    mu, _ = solve_lcp(S, q, np.zeros(n), tol=1e-12)
    w = q + S @ mu
    assert np.all(mu >= 0)
    assert np.all(w >= -1e-10)
    assert np.max(np.abs(mu * w)) < 1e-10


# -- complementarity residual ------------------------------------------------------------


def test_residual_positive_trace_flat_normal():
    pts = GRID.points()
    f = WeightedField(GRID, 1.0 + pts[..., 0] ** 2)
    viol_u, viol_dn, prod = residual_complementarity(f)
    assert viol_u == 0.0 and viol_dn < 1e-12 and prod < 1e-12


def test_residual_negative_linear_trace():
    pts = GRID.points()
    f = WeightedField(GRID, -pts[..., 0])
    assert residual_complementarity(f)[0] == pytest.approx(GRID.R)


def test_residual_of_profile():
    for h in (0.1, 0.05):
        g = make_grid(2, 4.0, h)
        viol_u, viol_dn, prod = residual_complementarity(unit_profile(g))
        assert viol_u == 0.0
        # the profile has dn h = 0 off the contact ray; the stencil error is largest at the tip
        assert viol_dn <= 2.0 * math.sqrt(h)
        assert prod <= 2.0 * h


# -- stepping ---------------------------------------------------------------------------


def test_projected_step_keeps_trace_nonnegative():
    pts = GRID.points()
    vals = unit_profile(GRID).values + 0.3 * np.sin(3 * pts[..., 0]) * np.exp(-pts[..., 1])
    cfg = config(1.5)
    st_ = initial_state(WeightedField(GRID, vals), cfg)
    for _ in range(5):
        st_ = step(st_, cfg)
        assert st_.field.trace.min() >= 0.0
        viol_u, viol_dn, prod = residual_complementarity(st_)
        assert viol_u == 0.0 and viol_dn == 0.0 and prod < 1e-8


def test_penalized_violation_is_order_eps():
    pts = GRID.points()
    vals = unit_profile(GRID).values - 0.3 * np.exp(-((pts[..., 0] + 0.5) ** 2 + pts[..., 1] ** 2))
    viol = []
    for eps in (1e-1, 1e-2, 1e-3):
        cfg = config(1.5, scheme=PENALIZED, eps=eps)
        st_ = initial_state(WeightedField(GRID, vals), cfg)
        for _ in range(5):
            st_ = step(st_, cfg)
        viol.append(-st_.field.trace.min())
        # u ~ eps dn u on the contact set, and |dn u| is O(1) here
        assert viol[-1] <= 5 * eps
    assert viol[0] > viol[1] > viol[2]


def test_state_on_wrong_grid():
    cfg = config(1.5)
    with pytest.raises(ValueError):
        initial_state(unit_profile(make_grid(2, 4.0, 0.2)), cfg)


def test_profile_is_stationary_and_improves_under_refinement():
    drifts = []
    for h, dt in ((0.1, 0.02), (0.05, 0.01)):
        g = make_grid(2, 6.0, h)
        u0 = unit_profile(g)
        tr = solve_trajectory(u0, config(1.5, dtau=dt, grid=g), tau_max=100 * dt)
        d = dist(tr.final(), u0)
        assert d <= 5 * (h ** 1.5 + dt)
        drifts.append(d)
    assert drifts[1] < drifts[0]


def test_positive_2m_element_is_stationary():
    g = make_grid(2, 6.0, 0.1)
    u0 = eval_h2m(1, g)
    tr = solve_trajectory(u0, config(2.0, dtau=0.02, grid=g), tau_max=1.0)
    assert dist(tr.final(), u0) <= 5 * (g.h ** 1.5 + 0.02)


def test_pure_eigen_decay():
    # p_(0,4) has a positive constant trace, so the constraint never binds
    g = make_grid(2, 6.0, 0.05)
    p = eval_hermite((0, 4), g)
    assert np.all(p.trace > 0)
    dt = 0.01
    tr = solve_trajectory(p, config(2.0, dtau=dt, grid=g), tau_max=0.5)
    ratio = np.sqrt(tr.norm2[1:] / tr.norm2[:-1])
    assert np.max(np.abs(ratio - math.exp(-dt))) < dt ** 2 + 10 * g.h ** 2
    inner = tr.final().trace[1:-1]  # the box corners carry the Dirichlet zero
    assert np.all(inner > 0)


def test_zero_horizon_gives_single_snapshot():
    tr = solve_trajectory(unit_profile(GRID), config(1.5), tau_max=0.0)
    assert len(tr.snapshots) == 1 and tr.tau.size == 1


def test_discrete_energy_identity_projected():
    pts = GRID.points()
    vals = unit_profile(GRID).values + 0.4 * np.cos(2 * pts[..., 0]) * np.exp(-pts[..., 1] ** 2)
    cfg = config(1.5)
    tr = solve_trajectory(WeightedField(GRID, vals), cfg, tau_max=0.4)
    dt = cfg.dtau
    lhs = np.diff(tr.norm2)
    rhs = -2 * dt * tr.W[1:] - dt * tr.dissipation[1:]
    assert np.max(np.abs(lhs - rhs)) < 1e-9 * max(1.0, np.max(tr.norm2))
    # and the energy drops by at least twice the dissipation, up to the kappa term
    dW = np.diff(tr.W)
    diss = tr.dissipation[1:] * dt
    assert np.all(dW <= -2 * diss + 0.5 * cfg.kappa * dt * diss + 1e-12)


def test_stationary_trace_is_constant():
    g = make_grid(2, 6.0, 0.1)
    tr = solve_trajectory(unit_profile(g), config(1.5, grid=g), tau_max=0.5)
    assert np.ptp(tr.W) < 1e-3


def test_snapshots_and_probes():
    cfg = config(1.5, snapshot_stride=5)
    w = measure(GRID).weights
    p = unit_profile(GRID)
    tr = solve_trajectory(p, cfg, tau_max=0.2, probes={"lam": w * p.values},
                          flux_probes={"one": np.ones(GRID.shape[:-1])})
    assert len(tr.snapshots) == 3
    assert tr.probes["lam"][0] == pytest.approx(float(np.sum(w * p.values ** 2)))
    assert np.isnan(tr.flux_probes["one"][0]) and np.all(np.isfinite(tr.flux_probes["one"][1:]))


# -- cross-validation -----------------------------------------------------------------------


def test_schemes_coincide_in_linear_regime():
    g = make_grid(2, 4.0, 0.1)
    u0 = eval_h2m(1, g) + 0.3 * eval_hermite((0, 4), g)
    assert np.all(u0.trace > 0)
    d = cross_validate(u0, config(2.0, grid=g, scheme=PENALIZED, eps=1e-2),
                       config(2.0, grid=g, scheme=PROJECTED), tau_max=0.4)
    assert d <= 1e-8


def test_cross_validation_shrinks_with_eps():
    pts = GRID.points()
    vals = unit_profile(GRID).values - 0.3 * np.exp(-((pts[..., 0] + 0.5) ** 2 + (pts[..., 1]) ** 2))
    u0 = WeightedField(GRID, vals)
    ds = [cross_validate(u0, config(1.5, scheme=PENALIZED, eps=e), config(1.5), tau_max=0.2)
          for e in (1e-1, 1e-2, 1e-3)]
    assert ds[0] > ds[1] > ds[2]


def test_cross_validation_argument_checks():
    with pytest.raises(ValueError):
        cross_validate(unit_profile(GRID), config(1.5), config(1.5), 0.1)
    with pytest.raises(ValueError):
        cross_validate(unit_profile(GRID), config(1.5, scheme=PENALIZED), config(1.5, dtau=0.01), 0.1)


# -- forcing -------------------------------------------------------------------------------


def test_forcing_norms_and_decay_condition():
    phi = np.ones(GRID.shape)
    f = lambda tau: math.exp(-tau / 2) * phi
    taus = np.linspace(0, 3, 31)
    M = forcing_sup_norm(f, GRID, taus)
    assert M == pytest.approx(math.sqrt(float(np.sum(measure(GRID).weights))))
    # decay e^{-tau/2} meets the m = 1 condition for eps0 <= 1/2 only
    assert check_forcing_2m(f, GRID, 1, M, 0.5, taus)
    assert not check_forcing_2m(f, GRID, 1, M, 0.8, taus)


def test_forced_run_records_forcing_norm():
    f = lambda tau: 0.01 * np.exp(-np.sum(GRID.points() ** 2, axis=-1))
    cfg = config(1.5, forcing=f, forcing_bound=0.01)
    tr = solve_trajectory(unit_profile(GRID), cfg, tau_max=0.1)
    assert tr.forcing_norm is not None and tr.forcing_norm.size == tr.tau.size
