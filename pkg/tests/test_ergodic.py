import cmath

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from moirelax import (DoubleObservable, PeriodicObservable, diophantine_scan, dirichlet_kernel,
                      ergodic_average, ergodic_average_double, limit_average, limit_average_double,
                      random_hermitian_observable, reconstruct_fourier, set_threads)


def test_kernel_examples(graphene5):
    g = graphene5
    assert dirichlet_kernel(g.A1, np.zeros(2), 7) == 1.0
    assert dirichlet_kernel(g.A1, g.B1 @ np.array([2, -1]), 9) == pytest.approx(1.0, abs=1e-12)
    val = dirichlet_kernel(np.eye(2), np.array([np.pi, 0.0]), 1)
    assert val == pytest.approx(-1 / 3, abs=1e-15)
    assert val == pytest.approx(oracles.kernel_bruteforce(np.eye(2), (np.pi, 0.0), 1).real, abs=1e-15)
    with pytest.raises(ValueError):
        dirichlet_kernel(g.A1, np.zeros(2), -1)


@settings(max_examples=60, deadline=None)
@given(N=st.integers(0, 50), G=st.tuples(st.floats(-20, 20), st.floats(-20, 20)))
def test_kernel_pointwise_bounds(graphene5, N, G):
    A = graphene5.A2
    val = dirichlet_kernel(A, np.array(G), N)
    assert abs(val) <= 1 + 1e-12
    t = A.T @ np.array(G)
    for tl in t:
        s = abs(np.sin(tl / 2))
        if s > 1e-6:
            assert abs(val) <= 1 / ((2 * N + 1) * s) + 1e-12


def test_kernel_near_pole_is_smooth():
    # continuity across the removable singularity
    A = np.eye(2)
    vals = [dirichlet_kernel(A, np.array([2 * np.pi + e, 0.0]), 5) for e in (1e-6, 1e-9, 1e-11, 0.0)]
    assert np.allclose(vals, 1.0, atol=1e-9)


def test_kernel_diophantine_bound(graphene5):
    scan = diophantine_scan(graphene5, 1.15, 24)
    n, _, _ = scan.table(1)
    G = n @ graphene5.B_M.T
    norms = np.linalg.norm(n, axis=1)
    for N in (4, 16, 64):
        for j in (1, 2):
            vals = np.abs(dirichlet_kernel(graphene5.layer_basis(j), G, N))
            bound = norms ** (2 * scan.sigma) / (np.sqrt(2) * scan.K_hat * (2 * N + 1))
            assert np.all(vals <= bound * (1 + 1e-12))


def test_ergodic_average_constant(graphene5):
    f = PeriodicObservable.constant(1.0)
    for N in (0, 3, 20):
        assert ergodic_average(graphene5, 1, f, N) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("j", [1, 2])
def test_ergodic_average_plane_wave_is_kernel(graphene5, j):
    f = PeriodicObservable.plane_wave(graphene5, (1, 0))
    G = graphene5.B_M @ np.array([1, 0])
    for N in (0, 5, 32):
        got = ergodic_average(graphene5, j, f, N)
        assert abs(got - dirichlet_kernel(graphene5.layer_basis(j), G, N)) < 1e-12


def test_ergodic_average_fourier_series(graphene5, rng):
    modes = rng.integers(-3, 4, size=(5, 2))
    coeffs = rng.normal(size=5) + 1j * rng.normal(size=5)
    f = PeriodicObservable.from_fourier(graphene5, modes, coeffs)
    N = 32
    want = sum(c * dirichlet_kernel(graphene5.A1, graphene5.B_M @ m, N) for m, c in zip(modes, coeffs))
    assert abs(ergodic_average(graphene5, 1, f, N) - want) < 1e-12


def test_fourier_observable_evaluation(graphene5, rng):
    f = random_hermitian_observable(graphene5, 2, rng)
    assert f.is_hermitian(1e-15)
    x = rng.uniform(-30, 30, size=(10, 2))
    terms = [(tuple(graphene5.B_M @ m), complex(c)) for m, c in zip(f.modes, f.coeffs)]
    for xi, fi in zip(x, f(x)):
        assert abs(fi - oracles.fourier_eval(terms, xi)) < 1e-10
        assert abs(fi.imag) < 1e-10
    # periodic under moire translations
    shift = x + graphene5.A_M @ np.array([2, -3])
    assert np.allclose(f(shift), f(x), atol=1e-10)


def test_double_average_examples(graphene5, rng):
    one = DoubleObservable(lambda x, y: np.ones(x.shape[:-1]))
    assert ergodic_average_double(graphene5, 1, one, 4) == pytest.approx(1.0)
    f = random_hermitian_observable(graphene5, 1, rng)
    h = DoubleObservable.from_single(f)
    assert abs(ergodic_average_double(graphene5, 1, h, 6) - ergodic_average(graphene5, 1, f, 6)) < 1e-13
    assert abs(limit_average_double(graphene5, 1, h, n=32) - limit_average(graphene5, f, 32)) < 1e-13
    assert limit_average_double(graphene5, 2, one, n=16) == pytest.approx(1.0)


@pytest.mark.parametrize("j", [1, 2])
def test_double_plane_wave_pair(graphene5, j):
    g = graphene5
    h = DoubleObservable.plane_wave_pair(g, j, (1, -1), (2, 1))
    GM = g.B_M @ np.array([1, -1])
    Gk = g.reciprocal_basis(3 - j) @ np.array([2, 1])
    for N in (2, 5):
        want = oracles.kernel_bruteforce(g.layer_basis(j), GM + Gk, N)
        assert abs(ergodic_average_double(g, j, h, N) - want) < 1e-12


def test_double_plane_wave_limit(graphene5):
    g = graphene5
    # D^T B_2 m = -B_M m, so the phase integrates to 1 only for matching indices
    same = DoubleObservable.plane_wave_pair(g, 1, (2, 1), (2, 1))
    other = DoubleObservable.plane_wave_pair(g, 1, (1, 1), (2, 1))
    assert abs(limit_average_double(g, 1, same, n=16) - 1.0) < 1e-12
    assert abs(limit_average_double(g, 1, other, n=16)) < 1e-12


def test_double_periodicity(graphene5, rng):
    h = DoubleObservable.plane_wave_pair(graphene5, 1, (1, 2), (-1, 3))
    x, y = rng.normal(size=(5, 2)) * 20, rng.normal(size=(5, 2)) * 5
    xs = x + graphene5.A_M @ np.array([1, -2])
    ys = y + graphene5.A2 @ np.array([4, 7])
    assert np.allclose(h(xs, ys), h(x, y), atol=1e-10)


def test_limit_average_examples(graphene5, rng):
    assert limit_average(graphene5, PeriodicObservable.constant(2.5 - 1j), 8) == pytest.approx(2.5 - 1j)
    assert abs(limit_average(graphene5, PeriodicObservable.plane_wave(graphene5, (3, 1)), 16)) < 1e-12
    f = random_hermitian_observable(graphene5, 3, rng)
    assert abs(limit_average(graphene5, f, 16) - f.mean()) < 1e-12
    with pytest.raises(ValueError):
        limit_average(graphene5, f, 1)


def test_reconstruct_examples(graphene5):
    g = graphene5
    const = PeriodicObservable.constant(0.7)
    for N in (0, 3):
        assert reconstruct_fourier(g, 1, const, N, (0, 0)) == pytest.approx(0.7)
    wave = PeriodicObservable.plane_wave(g, (1, 2))
    assert reconstruct_fourier(g, 2, wave, 10, (1, 2)) == pytest.approx(1.0, abs=1e-12)
    gamma = np.array([0.3, -0.4])
    dG = g.B_M @ np.array([1, 2]) - g.B_M @ np.array([0, 1])
    for N in (2, 6):
        got = reconstruct_fourier(g, 1, wave, N, (0, 1), gamma)
        want = cmath.exp(1j * float(dG @ gamma)) * oracles.kernel_bruteforce(g.A1, dG, N)
        assert abs(got - want) < 1e-12


def test_reconstruct_accepts_samples(graphene5, rng):
    f = random_hermitian_observable(graphene5, 1, rng)
    from moirelax import lattice_window, moire_frac
    pts = lattice_window(graphene5.A1, 4)
    samples = f(moire_frac(graphene5, pts).frac)
    assert abs(reconstruct_fourier(graphene5, 1, samples, 4, (1, 0))
               - reconstruct_fourier(graphene5, 1, f, 4, (1, 0))) < 1e-14


def test_sums_independent_of_threads(graphene5, rng):
    f = random_hermitian_observable(graphene5, 2, rng)
    vals = []
    for k in (1, 4):
        set_threads(k)
        vals.append(ergodic_average(graphene5, 1, f, 150))
    set_threads(1)
    assert vals[0] == vals[1]
