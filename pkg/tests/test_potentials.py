import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from moirelax import (DisplacementField, GaussianRule, LennardJonesRule, MorseRule, NoDecay,
                      ProductPotential, TabulatedRule, ZeroPotential, decay_radius,
                      gaussian_potential, graphene_morse_lj, lennard_jones_potential,
                      load_potential, morse_potential, potential_from_dict, weighted_norm_estimate)
from moirelax.potentials import CoreRegularized, bracket_integral, l1_shift_bound

E0, KAPPA0, R0 = 2.8437, 1.8168, 3.6891


def _tabulated():
    r = np.linspace(0.0, 5.0, 26)
    return TabulatedRule(r, 1.0 - 0.1 * r)


SHIPPED = {
    "morse": morse_potential(),
    "lj": lennard_jones_potential(),
    "gaussian": gaussian_potential(),
    "product": graphene_morse_lj(),
    "tabulated": ProductPotential(_tabulated(), LennardJonesRule(1.0, 3.4)),
}

vectors = st.tuples(*[st.floats(-12, 12, allow_nan=False)] * 3)


def test_morse_minimum_value():
    v = morse_potential()
    assert v(np.array([R0, 0.0, 0.0])) == pytest.approx(-E0, rel=1e-14)
    assert v(np.array([0.0, 0.0, R0])) == pytest.approx(-E0, rel=1e-14)
    assert v(np.array([R0 / math.sqrt(3)] * 3)) == pytest.approx(-E0, rel=1e-12)


def test_lj_vertical_minimum():
    v = lennard_jones_potential(eps0=2.39, sigma=3.41)
    zmin = 2 ** (1 / 6) * 3.41
    assert v(np.array([0.0, 0.0, zmin])) == pytest.approx(-2.39, rel=1e-14)
    assert v(np.array([0.0, 0.0, -zmin])) == pytest.approx(-2.39, rel=1e-14)


@pytest.mark.parametrize("name", sorted(SHIPPED))
@settings(max_examples=200, deadline=None)
@given(x=vectors)
def test_even_and_finite(name, x):
    v = SHIPPED[name]
    x = np.array(x)
    val = v(x)
    assert np.isfinite(val)
    assert val == v(-x)


@pytest.mark.parametrize("name", sorted(SHIPPED))
def test_gradient_matches_finite_differences(name, rng):
    v = SHIPPED[name]
    x = rng.uniform(-4, 4, size=(20, 3))
    x[:, 2] += 3.4
    h = 1e-6
    fd = np.stack([(v(x + h * e) - v(x - h * e)) / (2 * h) for e in np.eye(3)], axis=-1)
    g = v.gradient(x)
    scale = np.abs(g).max()
    assert np.allclose(g, fd, rtol=0, atol=1e-6 * scale)


@pytest.mark.parametrize("rule", [MorseRule(E0, KAPPA0, R0), LennardJonesRule(2.39, 3.41)])
def test_core_regularization_is_c2(rule):
    rho = 0.8
    reg = CoreRegularized(rule, rho)
    eps = 1e-9
    for fn in ("value", "d1", "d2"):
        inside = getattr(reg, fn)(rho - eps)
        outside = getattr(reg, fn)(rho + eps)
        exact = getattr(rule, fn)(rho)
        assert inside == pytest.approx(exact, rel=1e-6)
        assert outside == pytest.approx(exact, rel=1e-6)
    # even polynomial core: zero slope at the origin
    assert reg.d1(0.0) == 0.0


def test_decay_radius_morse_envelope():
    v = morse_potential()
    tol = E0 * math.exp(-10)
    got = decay_radius(v, tol)
    # oracle: last crossing of |v(r)| = tol on the analytic formula

    def excess(r):
        y = 1 - math.exp(-KAPPA0 * (r - R0))
        return abs(E0 * (y * y - 1)) - tol

    want = brentq(excess, R0 + 1.0, R0 + 20.0)
    assert abs(got - want) <= 0.01
    assert abs(got - (R0 + 10 / KAPPA0)) < math.log(2) / KAPPA0 + 0.01


def test_decay_radius_trivial_cases():
    v = gaussian_potential()
    assert decay_radius(v, 2.0) == 0.0
    assert decay_radius(ZeroPotential(), 1e-9) == 0.0
    with pytest.raises(ValueError):
        decay_radius(v, 0.0)
    with pytest.raises(NoDecay):
        decay_radius(lennard_jones_potential(), 1e-30, max_radius=50.0)


def test_decay_radius_compact_horizontal():
    v = SHIPPED["tabulated"]
    got = decay_radius(v, 1e-8, z_limit=3.4)
    assert got == pytest.approx(5.0, abs=0.01)


@pytest.mark.parametrize("name,tol,zl", [("morse", 1e-6, 0.0), ("product", 1e-5, 3.4),
                                         ("gaussian", 1e-10, 1.0)])
def test_decay_radius_property_on_denser_grid(name, tol, zl):
    v = SHIPPED[name]
    rc = decay_radius(v, tol, z_limit=zl)
    r = np.arange(rc, rc + 60.0, 0.0025)
    zs = np.linspace(-zl, zl, 17) if zl else np.zeros(1)
    assert np.abs(v.profile(r[:, None], zs[None, :])).max() < tol


def test_weighted_norm_examples():
    assert weighted_norm_estimate(ZeroPotential(), 1.5) == 0.0
    v = graphene_morse_lj()
    a = weighted_norm_estimate(v, 1.5, 3.4, points=64)
    b = weighted_norm_estimate(v, 1.5, 3.4, points=128)
    assert np.isfinite(a) and abs(a - b) / b < 0.05
    assert weighted_norm_estimate(v.scaled(2.0), 1.5, 3.4, points=64) == pytest.approx(2 * a, rel=1e-14)
    with pytest.raises(ValueError):
        weighted_norm_estimate(v, 1.0)


def test_bracket_integral_direct():
    # radial integration of (1 + r^2)^{-r} over the plane
    from scipy.integrate import quad
    for r in (1.2, 1.5, 3.0):
        val = quad(lambda t: 2 * math.pi * t * (1 + t * t) ** -r, 0, np.inf)[0]
        assert bracket_integral(r) == pytest.approx(val, rel=1e-8)


def test_l1_shift_bound_sanity(graphene5):
    v = graphene_morse_lj()
    r = 1.5
    u1 = DisplacementField.from_modes(graphene5, 1, {(1, 0): [0.05, 0.05j, 0.0]})
    u2 = DisplacementField.from_modes(graphene5, 1, {(0, 1): [-0.04j, 0.03, 0.0]})
    shift = np.array([0.7, -0.4])
    u1s, u2s = float(u1.sup_bound()[:2].max()), float(u2.sup_bound()[:2].max())
    radius = 40.0
    s = np.linspace(-radius, radius, 801)
    X = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
    X = X[np.linalg.norm(X, axis=1) <= radius]
    g = shift + u1.evaluate(X)[:, :2] - u2.evaluate(X)[:, :2]
    pts = np.column_stack([X + g, np.full(len(X), 3.35)])
    integral = np.abs(v(pts)).sum() * (s[1] - s[0]) ** 2
    wn = weighted_norm_estimate(v, r, 3.35, extent=60.0, points=256)
    bound = l1_shift_bound(v, r, float(np.linalg.norm(shift)), u1s, u2s, wn)
    assert integral <= bound


def test_potential_config_roundtrip(tmp_path):
    table = tmp_path / "table.csv"
    table.write_text("radius,value\n0,1.0\n1,0.5\n2,0.0\n")
    spec = {"variant": "product", "params": {
        "horizontal": {"rule": "tabulated", "table": "table.csv"},
        "vertical": {"rule": "lj", "eps0_mev": 1.0, "sigma_angstrom": 3.4}}}
    path = tmp_path / "pot.json"
    path.write_text(json.dumps(spec))
    v = load_potential(path)
    assert v(np.array([3.0, 0.0, 3.4])) == 0.0
    # vertical factor is -1 at the Lennard-Jones minimum
    assert v(np.array([1.0, 0.0, 2 ** (1 / 6) * 3.4])) == pytest.approx(-0.5, rel=1e-12)
    m = potential_from_dict({"variant": "morse", "params": {"E0_mev": E0, "kappa0_inv_angstrom": KAPPA0,
                                                           "r0_angstrom": R0}})
    assert m(np.array([R0, 0, 0])) == pytest.approx(-E0)
    with pytest.raises(ValueError):
        potential_from_dict({"variant": "nonsense", "params": {}})


def test_tabulated_interpolates_samples():
    rule = _tabulated()
    assert np.allclose(rule.value(rule.radii), rule.values, atol=1e-14)
    assert rule.value(6.0) == 0.0
    assert rule.d1(0.0) == pytest.approx(0.0, abs=1e-14)


def test_gaussian_rule_closed_form():
    g = GaussianRule(2.0, 1.5)
    assert g.value(1.0) == pytest.approx(2.0 * math.exp(-1 / 2.25))
