import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signorini_lab.conformal import ConformalFrame, from_selfsimilar
from signorini_lab.exact import eval_h2m, eval_hermite, multi_indices, unit_profile
from signorini_lab.grid import WeightedField, make_grid, measure
from signorini_lab.solver import SolverConfig, solve_trajectory
from signorini_lab.weiss import (
    F_log,
    F_log_derivative,
    G_log,
    WeissTrace,
    epiperimetric_check,
    evolution_residuals_2m,
    fit_decay,
    lambda_2m,
    limit_extraction,
    log_asymp_bracket,
    modified_energy,
    probes_2m,
    project_E2m,
    project_E32,
    spectral_gap_draw,
    unit_contractions,
    weiss_energy,
    weiss_original,
    weiss_split_32,
)

G2 = make_grid(2, 6.0, 0.05)


def dist(a, b):
    w = measure(a.grid).weights
    return math.sqrt(float(np.sum(w * (a.values - b.values) ** 2)))


# -- energies --------------------------------------------------------------------------


def test_profile_energy_vanishes_under_refinement():
    vals = [abs(weiss_energy(unit_profile(make_grid(2, 6.0, h)), 1.5)) for h in (0.1, 0.05, 0.025)]
    assert vals[0] <= 1e-2
    assert vals[0] > vals[1] > vals[2]


@pytest.mark.parametrize("m", [1, 2])
def test_hermite_energies(m):
    for a in multi_indices(2, 2 * m):
        assert abs(weiss_energy(eval_hermite(a, G2), 2 * m)) <= 1e-3
    for a in multi_indices(2, 2 * m + 2):
        # (|alpha|/2 - m) |p|^2 = 1
        assert abs(weiss_energy(eval_hermite(a, G2), 2 * m) - 1.0) <= 1e-3


def test_h2m_energy_vanishes():
    assert abs(weiss_energy(eval_h2m(1, G2), 2.0)) <= 1e-3


def test_weiss_original_matches_conformal():
    g = make_grid(2, 6.0, 0.025)
    h = unit_profile(g)
    u = from_selfsimilar(h, 1.5)  # the slice at t = -1
    assert abs(weiss_original(u, 1.5)) <= 1e-2
    rng = np.random.default_rng(0)
    pts = g.points()
    v = h.with_values(h.values + 0.3 * np.cos(pts[..., 0]) * np.exp(-pts[..., 1]) * rng.uniform(0.5, 1), time=0.4)
    orig = weiss_original(from_selfsimilar(v, 1.5), 1.5)
    # the conformal energy carries no pi^{-n/2} from the kernel
    assert orig == pytest.approx(math.pi ** -1 * weiss_energy(v, 1.5), rel=2e-2, abs=1e-3)


def test_weiss_original_kappa_mismatch_is_negative():
    h = unit_profile(make_grid(2, 6.0, 0.05))
    assert weiss_original(from_selfsimilar(h, 2.0), 2.0) < 0


def test_weiss_original_rejects_positive_time():
    g = make_grid(2, 6.0, 0.1)
    with pytest.raises(ValueError):
        weiss_original(WeightedField(g, np.zeros(g.shape), 0.5, "original"), 1.5)


# -- 3/2 projection ------------------------------------------------------------------------


def test_project_member_of_cone():
    h = unit_profile(G2)
    p = project_E32(2 * h)
    assert p.lam == pytest.approx(2.0, abs=1e-3)
    assert p.direction == (1.0,)
    assert float(np.max(np.abs(p.v.values))) < 1e-12


def test_project_negative_multiple():
    h = unit_profile(G2)
    p = project_E32(-1 * h)
    # -h still correlates positively with the mirrored profile in two dimensions
    assert p.direction == (-1.0,) or p.lam == 0.0
    mirrored = WeightedField(G2, h.values[::-1])
    corr = float(np.sum(measure(G2).weights * (-h.values) * mirrored.values))
    assert p.lam == pytest.approx(max(0.0, corr), abs=1e-9)


def test_project_negative_multiple_3d_is_outside_cone():
    g = make_grid(3, 5.0, 0.125)
    h = unit_profile(g)
    p = project_E32(-1 * h, coarse=64)
    # the best lam h_e for any e is no closer than 0 when all correlations are small
    assert dist(p.v, -1 * h) <= dist(-1 * h, 0 * h) + 1e-12
    assert p.lam < 0.5


def test_project_perturbed_profile_matches_least_squares():
    h = unit_profile(G2)
    u = h + 0.1 * eval_hermite((2, 0), G2)
    p = project_E32(u)
    ls = float(np.sum(measure(G2).weights * u.values * h.values))
    assert p.direction == (1.0,)
    assert abs(p.lam - ls) <= 1e-2
    assert abs(p.orth_value) < 1e-10


def test_project_recovers_rotation_in_3d():
    g = make_grid(3, 5.0, 0.125)
    phi = 0.7
    h = unit_profile(g, (math.cos(phi), math.sin(phi)))
    p = project_E32(1.5 * h, coarse=64)
    assert p.angle == pytest.approx(phi, abs=1e-4)
    assert p.lam == pytest.approx(1.5, rel=1e-3)
    assert abs(p.orth_value) < 1e-8 and abs(p.orth_angle) < 1e-2


def test_project_brute_force_oracle():
    # grid search over (lam, e) at resolution 1e-3 against the projection
    h = unit_profile(G2)
    u = 0.8 * h + 0.2 * eval_hermite((1, 0), G2)
    p = project_E32(u)
    w = measure(G2).weights
    best = min(
        ((lam, s) for s in (1.0, -1.0) for lam in np.arange(0, 2, 1e-3)),
        key=lambda ls: float(np.sum(w * (u.values - ls[0] * (h.values if ls[1] > 0 else h.values[::-1])) ** 2)),
    )
    assert p.lam == pytest.approx(best[0], abs=1e-3)
    assert p.direction[0] == best[1]


def test_split_identity_on_profile_and_positive_data():
    g = make_grid(2, 6.0, 0.05)
    h = unit_profile(g)
    s = weiss_split_32(h)
    assert abs(s.W_u) < 1e-2 and abs(s.W_v) < 1e-12 and abs(s.boundary_term) < 1e-12
    pts = g.points()
    u = h + 0.2 * np.exp(-np.sum((pts - np.array([1.0, 0.0])) ** 2, axis=-1))
    s = weiss_split_32(u)
    assert u.trace.min() >= 0
    assert s.W_v <= s.W_u + 1e-3


def test_split_residual_shrinks_under_refinement():
    res = []
    for h in (0.1, 0.05, 0.025):
        g = make_grid(2, 6.0, h)
        pts = g.points()
        u = unit_profile(g) + 0.2 * np.exp(-np.sum((pts - np.array([1.0, 0.0])) ** 2, axis=-1))
        res.append(weiss_split_32(u).residual)
    assert res[0] > res[1] > res[2]
    assert res[2] < 3 * 0.025 ** 1.5


# -- 2m projection -------------------------------------------------------------------------


def test_project_E2m_coefficients():
    a, b = multi_indices(2, 2)[:2]
    u = 3 * eval_hermite(a, G2) + eval_hermite(b, G2)
    p = project_E2m(u, 1)
    assert p.coeffs[a] == pytest.approx(3.0, abs=1e-3)
    assert p.coeffs[b] == pytest.approx(1.0, abs=1e-3)
    assert float(np.max(np.abs(p.v.values))) < 1e-2
    assert p.orth_residual < 1e-3


def test_project_E2m_orthogonal_input():
    p = project_E2m(eval_hermite((4, 0), G2), 1)
    assert max(abs(c) for c in p.coeffs.values()) <= 1e-3


def test_h2m_expansion_reconstructs():
    h = eval_h2m(1, G2)
    assert lambda_2m(h, 1) == pytest.approx(1.0, abs=1e-3)
    p = project_E2m(h, 1)
    rec = sum(c * eval_hermite(a, G2).values for a, c in p.coeffs.items())
    assert dist(h, h.with_values(rec)) <= 1e-3


# -- spectral gap ----------------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2]))
def test_spectral_gap_closed_form(seed, m):
    g = make_grid(2, 6.0, 0.1)
    W, n2, closed = spectral_gap_draw(g, m, np.random.default_rng(seed))
    assert W == pytest.approx(closed, rel=1e-3, abs=1e-3)
    # the largest degree below 2m gives exactly -1/2 per unit norm
    assert W <= -0.5 * n2 + 1e-3


# -- evolution identities --------------------------------------------------------------------


def run_2m(u0, tau_max=0.3, dtau=0.01):
    g = u0.grid
    probes, flux = probes_2m(g, 1)
    cfg = SolverConfig(ConformalFrame(2.0, tau_max, dtau), g)
    return solve_trajectory(u0, cfg, probes=probes, flux_probes=flux)


def test_residuals_on_eigen_trajectory():
    g = make_grid(2, 6.0, 0.1)
    tr = run_2m(eval_h2m(1, g) + 0.3 * eval_hermite((0, 4), g))
    res = evolution_residuals_2m(tr, 1)
    # constraint inactive: every boundary flux vanishes
    for k, v in tr.flux_probes.items():
        assert np.max(np.abs(v[1:])) < 1e-12
    assert np.max(res.lambda2m_temporal) < 1e-8
    assert np.min(res.lam_2m_increments) > -1e-10


def test_weiss_equal_is_discretization_error():
    # W(u) = W(v) up to the cross term of the discrete operator with h_2m
    errs = []
    for h in (0.1, 0.05):
        g = make_grid(2, 6.0, h)
        tr = run_2m(eval_h2m(1, g) + 0.3 * eval_hermite((0, 4), g), tau_max=0.05)
        errs.append(np.max(evolution_residuals_2m(tr, 1).weiss_equal))
    assert errs[0] < 5e-3
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_stationary_element_has_constant_coefficients():
    g = make_grid(2, 6.0, 0.1)
    tr = run_2m(eval_h2m(1, g))
    for k, v in tr.probes.items():
        if k.startswith("lam_"):
            assert np.ptp(v) < 1e-3


def test_lambda_2m_nondecreasing_with_contact():
    g = make_grid(2, 6.0, 0.1)
    vals = eval_h2m(1, g).values + 0.4 * eval_hermite((3, 0), g).values
    vals[..., 0] = np.maximum(vals[..., 0], 0)
    tr = run_2m(WeightedField(g, vals))
    res = evolution_residuals_2m(tr, 1)
    assert np.min(tr.trace_min) == 0.0
    assert np.any(np.abs(tr.flux_probes["flux_2m"][1:]) > 1e-6)
    assert np.min(res.lam_2m_increments) >= -1e-4


def test_residuals_need_three_steps():
    g = make_grid(2, 4.0, 0.2)
    tr = run_2m(eval_h2m(1, g), tau_max=0.01)
    with pytest.raises(ValueError):
        evolution_residuals_2m(tr, 1)


# -- fits ---------------------------------------------------------------------------------------


def test_exponential_fit_exact():
    tau = np.linspace(0, 6, 61)
    f = fit_decay(tau, np.exp(-0.3 * tau))
    assert f.params["gamma"] == pytest.approx(0.3, abs=1e-6)
    assert f.r2 == pytest.approx(1.0)
    f = fit_decay(tau, np.full_like(tau, 2.0))
    assert abs(f.params["gamma"]) < 1e-6


def test_exponential_fit_on_negative_values():
    tau = np.linspace(0, 3, 31)
    f = fit_decay(tau, -np.exp(0.2 * tau))
    assert f.params["gamma"] == pytest.approx(-0.2, abs=1e-9) and f.params["sign"] == -1.0


def test_logarithmic_fit_on_closed_form():
    tau = np.linspace(0, 20, 201)
    W = 1 / ((10 + tau) * np.log(10 + tau) ** 2)
    f = fit_decay(tau, W, "logarithmic")
    assert f.extras["fraction_holding"] == 1.0
    assert f.r2 > 0.99 and f.params["c0"] > 0


def test_fit_errors():
    tau = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        fit_decay(tau, np.sin(6 * tau) + 0.01)
    with pytest.raises(ValueError):
        fit_decay(tau[:4], np.exp(-tau[:4]))
    with pytest.raises(ValueError):
        fit_decay(tau, np.exp(-tau), "logarithmic")
    with pytest.raises(ValueError):
        fit_decay(tau, np.exp(-tau), "polynomial")


def test_unit_contractions_exact_exponential():
    tau = np.linspace(0, 4, 41)
    c = unit_contractions(tau, np.exp(-0.5 * tau))
    assert np.allclose(c, 1 - math.exp(-0.5))
    c = unit_contractions(tau, np.exp(0.5 * tau), variant="negative")
    assert np.allclose(c, math.exp(0.5) - 1)


def test_epiperimetric_degenerate_and_short():
    tau = np.linspace(0, 3, 31)
    zero = WeissTrace(1.5, tau, np.zeros_like(tau), np.ones_like(tau), np.zeros_like(tau))
    assert epiperimetric_check(zero).degenerate
    short = WeissTrace(1.5, tau[:5], np.ones(5), np.ones(5), np.zeros(5))
    with pytest.raises(ValueError):
        epiperimetric_check(short)


def test_epiperimetric_sign_split():
    tau = np.linspace(0, 4, 41)
    W = 1.01 - tau / 2
    tr = WeissTrace(1.5, tau, W, np.ones_like(tau), np.zeros_like(tau))
    rep = epiperimetric_check(tr)
    assert rep.split_points == [pytest.approx(2.1)]


def test_modified_energy():
    tau = np.array([0.0, 2.0])
    assert np.allclose(modified_energy(tau, [1.0, 1.0], 0.5), [2.0, 1.0 + math.exp(-1.0)])


def test_trace_csv_round_trip():
    tau = np.linspace(0, 1, 5)
    tr = WeissTrace(2.0, tau, -tau, tau ** 2, np.full(5, np.nan), {"lam": tau + 1})
    text = tr.to_csv()
    assert text.splitlines()[0] == "tau,W,norm2,dissipation,lam"
    back = WeissTrace.from_csv(text, 2.0)
    assert np.array_equal(back.W, tr.W) and np.array_equal(back.extra["lam"], tau + 1)
    with pytest.raises(ValueError):
        WeissTrace(1.5, [0.0, 0.0], [1, 1], [1, 1], [0, 0])


# -- limits -------------------------------------------------------------------------------------------


def test_limit_of_stationary_profile():
    g = make_grid(2, 6.0, 0.1)
    h = unit_profile(g)
    snaps = [h.with_values(h.values, time=t) for t in (0.0, 1.0, 2.0)]
    rep = limit_extraction(snaps, 1.5)
    assert rep.lam_inf == pytest.approx(1.0, abs=1e-2)
    assert rep.profile.direction == (1.0,)
    assert rep.nontrivial


def test_limit_refuses_moving_trajectory():
    g = make_grid(2, 6.0, 0.1)
    h = unit_profile(g)
    with pytest.raises(ValueError):
        limit_extraction([h.with_values(h.values, time=0.0), h.with_values(2 * h.values, time=1.0)], 1.5)


def test_limit_2m():
    g = make_grid(2, 6.0, 0.1)
    h = eval_h2m(1, g)
    rep = limit_extraction([h.with_values(h.values, time=0.0), h.with_values(h.values, time=1.0)], 2.0)
    assert rep.lam_inf == pytest.approx(1.0, abs=1e-3)


# -- logarithmic calculus ------------------------------------------------------------------------------


@pytest.mark.parametrize("s", [1e-4, 1e-3, 0.01, 0.05])
def test_F_derivative(s):
    s0 = 0.1
    d = 1e-6 * s
    fd = (F_log(s + d, s0) - F_log(s - d, s0)) / (2 * d)
    assert fd == pytest.approx(F_log_derivative(s), rel=1e-5)


@pytest.mark.parametrize("s", [1e-6, 1e-4, 1e-3, 0.01])
def test_log_bracket_ordering(s):
    lo, mid, hi = log_asymp_bracket(s, 0.05)
    assert lo <= mid <= hi


def test_G_log():
    assert G_log(math.e ** -2) == pytest.approx(4 * math.e ** -2)
