import math

import numpy as np
import pytest

from signorini_lab.exact import eval_h2m, eval_hermite
from signorini_lab.freeboundary import (
    REGULAR,
    UNCLASSIFIED,
    FreeBoundarySample,
    HCurve,
    blowup,
    boundary_samples,
    classify,
    compute_H,
    extract_contact,
    fit_order,
    gap_inequality,
    holder_maps,
    holder_quotients,
    homogeneous_polynomial_data,
    homogeneous_profile_data,
    implied_eps0,
    make_sample,
    on_free_boundary,
    r_grid,
    reconstruct_graph,
    singular_tag,
    translated,
)
from signorini_lab.grid import make_grid

G2 = make_grid(2, 4.0, 0.1)
ORIGIN2 = (np.zeros(2), 0.0)


def sample_with(kappa_fit):
    return FreeBoundarySample(ORIGIN2, HCurve(np.ones(1), np.ones(1)), kappa_fit, 2 * kappa_fit, 1.0)


# -- contact -------------------------------------------------------------------------------


def test_contact_of_profile_extension():
    u = homogeneous_profile_data(2)
    xs = np.linspace(-1, 1, 21)
    ts = [-1.0, -0.5]
    vals = boundary_samples(u, [xs], ts, 2)
    cs = extract_contact(vals, [np.array(ts), xs], 1e-10)
    assert np.array_equal(cs.flags[0], xs <= 1e-12)
    # the free boundary is the last contact node next to positive trace
    gx = xs[np.flatnonzero(cs.gamma[0])]
    assert gx.tolist() == [pytest.approx(0.0)]


def test_positive_data_has_no_contact():
    cs = extract_contact(np.ones((3, 10)), [np.arange(3), np.arange(10)], 1e-8)
    assert not cs.flags.any() and not cs.gamma.any()
    with pytest.raises(ValueError):
        extract_contact(np.ones((3, 10)), [], 0.0)


# -- vanishing order ----------------------------------------------------------------------------


def test_H_slope_of_profile_is_three():
    curve = compute_H(homogeneous_profile_data(2), ORIGIN2, r_grid(3.0, 6), G2)
    slope, r2 = fit_order(curve)
    assert slope == pytest.approx(3.0, abs=1e-6)
    assert r2 == pytest.approx(1.0)


def test_H_slope_of_h2_is_four():
    u = homogeneous_polynomial_data(lambda y: eval_h2m(1, y), 2.0)
    s = make_sample(u, ORIGIN2, G2, r=r_grid(3.0, 6))
    assert s.slope == pytest.approx(4.0, abs=1e-6)
    assert s.kappa_fit == pytest.approx(2.0, abs=1e-6)
    assert classify(s) == singular_tag(1)


def test_H_scales_quadratically_with_data():
    u = homogeneous_profile_data(2)
    r = r_grid(2.0, 4)
    a = compute_H(u, ORIGIN2, r, G2).H
    b = compute_H(lambda x, t: 2 * u(x, t), ORIGIN2, r, G2).H
    assert np.allclose(b, 4 * a, rtol=1e-12)


def test_H_rejects_radius_outside_data():
    u = homogeneous_profile_data(2)
    u.t_range = (-0.5, 0.0)
    with pytest.raises(ValueError):
        compute_H(u, ORIGIN2, [1.0, 0.5], G2)
    with pytest.raises(ValueError):
        compute_H(homogeneous_profile_data(2), ORIGIN2, [1.0, 0.0], G2)


def test_fit_order_needs_radii():
    with pytest.raises(ValueError):
        fit_order(HCurve(np.array([1.0, 0.1]), np.array([1.0, 1e-3])))


@pytest.mark.parametrize(
    "kappa_fit, window, tag",
    [(1.5, 0.4, REGULAR), (1.62, 0.4, REGULAR), (2.1, 0.4, singular_tag(1)), (4.05, 0.4, singular_tag(2)),
     (1.9, 0.2, UNCLASSIFIED), (3.0, 0.4, UNCLASSIFIED), (10.0, 0.4, UNCLASSIFIED)],
)
def test_classify(kappa_fit, window, tag):
    assert classify(sample_with(kappa_fit), window) == tag


# -- blow-ups --------------------------------------------------------------------------------------


def test_blowup_of_homogeneous_data_is_constant():
    u = homogeneous_profile_data(2)
    rep = blowup(u, ORIGIN2, [0.5, 0.25, 0.125], 1.5, G2)
    assert np.allclose(rep.amplitudes, rep.amplitudes[0], rtol=1e-10)
    assert rep.amplitudes[0] == pytest.approx(1.0, abs=1e-2)
    assert np.max(rep.distances) < 1e-12
    assert rep.stabilized


def test_blowup_centre_must_be_on_free_boundary():
    u = homogeneous_profile_data(2)
    assert on_free_boundary(u, ORIGIN2, 2)
    for x in (-1.0, 1.0):
        c = (np.array([x, 0.0]), 0.0)
        assert not on_free_boundary(u, c, 2)
        with pytest.raises(ValueError):
            blowup(u, c, [0.5, 0.25], 1.5, G2)


def test_blowup_at_translated_point():
    u = homogeneous_profile_data(2)
    shifted = translated(u, (np.array([-0.3, 0.0]), 0.0))
    rep = blowup(shifted, (np.array([0.3, 0.0]), 0.0), [0.5, 0.25], 1.5, G2)
    assert np.max(rep.distances) < 1e-12


def test_blowup_only_for_three_halves():
    u = homogeneous_profile_data(2)
    with pytest.raises(ValueError):
        blowup(u, ORIGIN2, [0.5, 0.25], 2.0, G2)


# -- graph reconstruction -----------------------------------------------------------------------------


@pytest.mark.parametrize("phi", [math.pi / 2, 1.2, 2.0])
def test_graph_of_rotated_profile(phi):
    u = homogeneous_profile_data(3, (math.cos(phi), math.sin(phi)))
    x1 = np.linspace(-0.3, 0.3, 13)
    x2 = np.linspace(-1.0, 1.0, 201)
    ts = np.array([-1.0, -0.8, -0.6])
    vals = boundary_samples(u, [x1, x2], ts, 3)
    rep = reconstruct_graph(vals, x1, x2, ts, 1e-10)
    assert rep.graphical
    # contact is x . e <= 0, so the flip sits at x2 = -x1 cot(phi)
    assert rep.slope == pytest.approx(-1 / math.tan(phi), abs=2e-3)
    assert np.max(np.abs(rep.g + x1[None, :] / math.tan(phi))) < 1e-2


def test_graph_reports_non_graphical_columns():
    x1 = np.linspace(0, 1, 3)
    x2 = np.linspace(0, 1, 11)
    vals = np.ones((1, 3, 11))
    vals[0, 1, [0, 5]] = 0.0  # two contact runs in the middle column
    rep = reconstruct_graph(vals, x1, x2, [-1.0], 1e-8)
    assert not rep.graphical and (0, 1) in rep.bad_columns
    with pytest.raises(ValueError):
        reconstruct_graph(np.ones((2, 3)), x1, x2, [-1.0], 1e-8)


def test_holder_quotients_on_linear_map():
    x = np.linspace(0, 1, 6)
    t = np.array([-1.0])
    f = x[None, :]
    theta, quot = holder_quotients(x, t, f, [1.0])
    assert quot[1.0] == pytest.approx(1.0)
    # binned oscillation undershoots the true exponent slightly
    assert theta == pytest.approx(1.0, abs=0.1)


def test_holder_maps():
    a = sample_with(1.5)
    a.blowup = {"c": 1.0, "e": (1.0, 0.0)}
    b = FreeBoundarySample((np.array([0.25, 0.0]), 0.0), a.curve, 1.5, 3.0, 1.0,
                           blowup={"c": 1.0, "e": (1.0, 0.0)})
    rep = holder_maps([a, b])
    assert rep.pairs == 1 and all(v == 0.0 for v in rep.c_quotient.values())
    b.blowup = {"c": 1.5, "e": (0.0, 1.0)}
    rep = holder_maps([a, b])
    assert rep.c_quotient[1.0] == pytest.approx(0.5 / 0.25)
    assert rep.e_quotient[0.5] == pytest.approx(math.sqrt(2) / 0.5)
    with pytest.raises(ValueError):
        holder_maps([a])


# -- frequency gap ---------------------------------------------------------------------------------------


def test_gap_inequality_value():
    eps, ct, c0 = 1e-3, 0.5, 0.05
    lhs, rhs = gap_inequality(eps, ct, c0)
    expect = 1 - ct * math.exp(-eps) * eps * (-eps + math.log(eps) + math.log(ct / c0)) ** 2
    assert lhs == pytest.approx(math.exp(-1e-3))
    assert rhs == pytest.approx(expect, rel=1e-14)
    # to first order lhs <= rhs exactly when c~ (ln term)^2 <= 1
    assert lhs > rhs
    lhs, rhs = gap_inequality(0.1, ct, c0)
    assert lhs <= rhs


def test_implied_eps0_is_first_admissible():
    grid = np.logspace(-8, 0, 801)
    e0 = implied_eps0(0.5, 0.05, grid)
    assert 1e-3 < e0 < 0.1
    lhs, rhs = gap_inequality(e0, 0.5, 0.05)
    assert lhs <= rhs
    prev = grid[grid < e0]
    assert all(gap_inequality(float(e), 0.5, 0.05)[0] > gap_inequality(float(e), 0.5, 0.05)[1] for e in prev)
    # with c~ = c0/2 only eps of order one qualifies, through the curvature of e^{-eps}
    assert implied_eps0(0.5, 1.0, grid) > 0.5
    assert implied_eps0(0.5, 1.0, np.logspace(-8, -1, 50)) == math.inf


def test_polynomial_data_reads_conformal_element():
    u = homogeneous_polynomial_data(lambda y: eval_hermite((2, 0), y), 2.0)
    x = np.array([[0.4, 0.6]])
    assert u(x, -1.0) == pytest.approx(eval_hermite((2, 0), x / 2))
    with pytest.raises(ValueError):
        u(x, 0.0)
