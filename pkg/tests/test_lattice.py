import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moirelax import (SingularBasis, DegenerateScale, build_geometry, commensuration_scan,
                      disregistry_matrix, geometry_from_dict, geometry_to_dict, graphene_basis,
                      layer_frac, moire_frac, moire_scale, moire_scale_ratio, rotation)

angles = st.floats(min_value=0.2, max_value=30.0).map(np.radians)
ratios = st.floats(min_value=0.8, max_value=1.25)


def test_graphene_1p1_bases(graphene11):
    g = graphene11
    A = graphene_basis()
    assert np.allclose(g.A1, rotation(-g.theta / 2) @ A, atol=1e-14)
    assert np.allclose(g.A2, rotation(g.theta / 2) @ A, atol=1e-14)
    for j in (1, 2):
        assert np.allclose(g.layer_basis(j).T @ g.reciprocal_basis(j), 2 * np.pi * np.eye(2))
    assert np.allclose(g.A_M.T @ g.B_M, 2 * np.pi * np.eye(2))
    # nearest-neighbour spacing 2.46/sqrt(3) = 1.42
    assert np.isclose(np.linalg.norm(A[:, 0]), 2.46)


def test_identity_zero_angle_is_singular():
    with pytest.raises(SingularBasis):
        build_geometry(np.eye(2), 0.0, 1.0)


@pytest.mark.parametrize("A,theta,q", [(np.zeros((2, 2)), 0.1, 1.0), (np.eye(2), 0.1, -1.0),
                                       (np.eye(2), np.nan, 1.0), ([[1, 2], [2, 4]], 0.1, 1.0)])
def test_invalid_inputs(A, theta, q):
    with pytest.raises(SingularBasis):
        build_geometry(A, theta, q)


def test_quarter_turn_identity_basis():
    g = build_geometry(np.eye(2), np.pi / 2, 1.0)
    # oracle: direct arithmetic on the rotated bases
    A1, A2 = rotation(-np.pi / 4), rotation(np.pi / 4)
    B_M = 2 * np.pi * (np.linalg.inv(A1).T - np.linalg.inv(A2).T)
    assert np.allclose(g.A_M, 2 * np.pi * np.linalg.inv(B_M).T, atol=1e-13)


def test_moire_frac_examples(graphene5):
    g = graphene5
    d = moire_frac(g, np.zeros(2))
    assert np.all(d.frac == 0) and np.all(d.n == 0)
    d = moire_frac(g, g.A_M @ np.array([3, -2]))
    assert np.allclose(d.frac, 0, atol=1e-9) and tuple(d.n) == (3, -2)
    x = g.A_M @ np.array([0.25, 0.75]) + g.A_M @ np.array([1, 1])
    d = moire_frac(g, x)
    assert np.allclose(d.frac, g.A_M @ np.array([0.25, 0.75]), atol=1e-12 * np.abs(x).max())
    assert tuple(d.n) == (1, 1)


def test_layer_frac_examples(graphene5):
    g = graphene5
    d = layer_frac(g, g.A1 @ np.array([5, 5]), 1)
    assert np.allclose(d.frac, 0, atol=1e-12) and tuple(d.n) == (5, 5)
    d = layer_frac(g, g.A2 @ np.array([0.5, 0.5]), 2)
    assert np.allclose(d.frac, g.A2 @ np.array([0.5, 0.5])) and tuple(d.n) == (0, 0)


@settings(max_examples=50, deadline=None)
@given(theta=angles, q=ratios, seed=st.integers(0, 2**31))
def test_frac_roundtrip(theta, q, seed):
    g = build_geometry(graphene_basis(), theta, q)
    x = np.random.default_rng(seed).uniform(-500, 500, size=(200, 2))
    for basis, dec in ((g.A_M, moire_frac(g, x)), (g.A1, layer_frac(g, x, 1)), (g.A2, layer_frac(g, x, 2))):
        assert np.allclose(dec.frac + dec.n @ basis.T, x, rtol=0, atol=1e-12 * np.abs(x).max())
        c = np.linalg.solve(basis, dec.frac.T)
        assert np.all(c >= -1e-12) and np.all(c < 1 + 1e-12)


def test_disregistry_examples():
    g = build_geometry(2.0 * np.eye(2), np.pi / 2, 1.0)
    # A1 = R_{-pi/4}, A2 = R_{pi/4}; A2 A1^{-1} = R_{pi/2}
    assert np.allclose(disregistry_matrix(g, 1), np.eye(2) - rotation(np.pi / 2), atol=1e-14)
    assert np.allclose(np.eye(2) - rotation(np.pi / 2), [[1, 1], [-1, 1]])


@settings(max_examples=40, deadline=None)
@given(theta=angles, q=ratios, seed=st.integers(0, 2**31))
def test_disregistry_properties(theta, q, seed):
    g = build_geometry(graphene_basis(), theta, q)
    D12, D21 = disregistry_matrix(g, 1), disregistry_matrix(g, 2)
    for j, D in ((1, D12), (2, D21)):
        want = (-1) ** j * g.layer_basis(3 - j) @ np.linalg.inv(g.A_M)
        assert np.allclose(D, want, rtol=0, atol=1e-12 * np.abs(want).max())
    lhs = -D21 @ np.linalg.inv(D12)
    assert np.allclose(lhs, g.A1 @ np.linalg.inv(g.A2), atol=1e-12 * np.abs(lhs).max())
    assert np.allclose(lhs, np.eye(2) - D21, atol=1e-12 * np.abs(lhs).max())
    # D_{1->2}^{-1} = -A_M A_2^{-1} stretches by q^{-1/2} rho_M, D_{2->1}^{-1} by q^{1/2} rho_M
    x = np.random.default_rng(seed).normal(size=(20, 2))
    for D, power in ((D12, -0.5), (D21, 0.5)):
        got = np.linalg.norm(np.linalg.solve(D, x.T), axis=0)
        want = q**power * moire_scale(g) * np.linalg.norm(x, axis=1)
        assert np.allclose(got, want, rtol=1e-12)


def test_disregistry_maps_moire_cell_onto_layer_cell(graphene5):
    g = graphene5
    D = disregistry_matrix(g, 1)
    corners = g.A_M @ np.array([[0, 1, 0, 1], [0, 0, 1, 1]])
    img = D @ corners
    want = -g.A2 @ np.array([[0, 1, 0, 1], [0, 0, 1, 1]])
    assert np.allclose(img, want, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(theta=angles, q=ratios, seed=st.integers(0, 2**31))
def test_moire_scale_is_uniform_stretch(theta, q, seed):
    g = build_geometry(graphene_basis(), theta, q)
    x = np.random.default_rng(seed).normal(size=(20, 2))
    ratio = np.linalg.norm(x @ g.A_M.T, axis=1) / np.linalg.norm(x @ g.A.T, axis=1)
    assert np.allclose(ratio, moire_scale(g), rtol=1e-10)


def test_moire_scale_examples(graphene11):
    assert np.isclose(moire_scale(graphene11), 1 / (2 * np.sin(np.radians(0.55))), rtol=1e-12)
    assert np.isclose(moire_scale(graphene11), 52.09, atol=5e-3)
    assert np.isclose(moire_scale_ratio(np.pi, 1.0), 0.5)
    with pytest.raises(DegenerateScale):
        moire_scale_ratio(0.0, 1.0)


def test_commensuration_examples(graphene5):
    v = commensuration_scan(build_geometry(np.eye(2), np.pi / 2, 1.0), 4, 1e-9)
    assert v.commensurate and abs(v.witness[0]) + abs(v.witness[1]) == 1
    v = commensuration_scan(graphene5, 64, 1e-6)
    assert not v.commensurate
    assert "no commensuration" in v.describe()


def test_geometry_dict_roundtrip(graphene5):
    data = {"A": graphene_basis().tolist(), "theta_deg": 5.0, "q": 1.0}
    g, spec = geometry_from_dict(data)
    assert np.allclose(g.A_M, graphene5.A_M)
    back = geometry_to_dict(g, spec)
    g2, _ = geometry_from_dict(back)
    assert np.allclose(g2.A_M, g.A_M)


def test_swapped_exchanges_layers(graphene5):
    s = graphene5.swapped()
    assert np.allclose(s.A1, graphene5.A2) and np.allclose(s.A2, graphene5.A1)
    assert np.allclose(s.B_M, -graphene5.B_M)
