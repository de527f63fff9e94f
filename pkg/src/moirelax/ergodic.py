"""Dirichlet kernels, lattice ergodic averages and their cell-average limits."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._reduce import chunked_sum
from .lattice import BilayerGeometry, disregistry_matrix, layer_frac, moire_frac

SINE_FLOOR = 1e-9


@dataclass(frozen=True)
class PeriodicObservable:
    """Moire-periodic function f(x), optionally with its Fourier data.

    ``modes`` are integer indices n with frequency G_M = B_M n.
    """

    func: Callable[[np.ndarray], np.ndarray]
    modes: np.ndarray | None = None
    coeffs: np.ndarray | None = None

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    @classmethod
    def constant(cls, c: complex) -> "PeriodicObservable":
        return cls(lambda x: np.full(x.shape[:-1], c, dtype=complex),
                   np.zeros((1, 2), dtype=int), np.array([c], dtype=complex))

    @classmethod
    def from_fourier(cls, geom: BilayerGeometry, modes, coeffs) -> "PeriodicObservable":
        modes = np.asarray(modes, dtype=np.int64).reshape(-1, 2)
        coeffs = np.asarray(coeffs, dtype=complex).reshape(-1)
        G = modes @ geom.B_M.T

        def f(x):
            flat = x.reshape(-1, 2)
            out = np.exp(1j * flat @ G.T) @ coeffs
            return out.reshape(x.shape[:-1])

        return cls(f, modes, coeffs)

    @classmethod
    def plane_wave(cls, geom: BilayerGeometry, n) -> "PeriodicObservable":
        return cls.from_fourier(geom, [n], [1.0])

    def coefficient(self, n) -> complex:
        if self.modes is None:
            raise ValueError("observable has no stored Fourier data")
        hit = np.all(self.modes == np.asarray(n), axis=1)
        return complex(self.coeffs[hit].sum()) if np.any(hit) else 0j

    def mean(self) -> complex:
        return self.coefficient((0, 0))

    def is_hermitian(self, atol: float = 0.0) -> bool:
        for n, c in zip(self.modes, self.coeffs):
            if abs(self.coefficient(-n) - np.conj(c)) > atol:
                return False
        return True


def random_hermitian_observable(geom: BilayerGeometry, half_width: int, rng) -> PeriodicObservable:
    """Real observable on the (2w+1)^2 mode square with random Hermitian coefficients."""
    r = np.arange(-half_width, half_width + 1)
    modes = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
    c = rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))
    # modes are symmetric about the centre index, so reversing maps n to -n
    c = 0.5 * (c + np.conj(c[::-1]))
    return PeriodicObservable.from_fourier(geom, modes, c)


@dataclass(frozen=True)
class DoubleObservable:
    """h(x, y), periodic in x over the moire lattice and in y over layer ``3 - j``."""

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, x, y):
        return self.func(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    @classmethod
    def plane_wave_pair(cls, geom: BilayerGeometry, j: int, n_moire, m_layer) -> "DoubleObservable":
        GM = geom.B_M @ np.asarray(n_moire, dtype=float)
        Gk = geom.reciprocal_basis(3 - j) @ np.asarray(m_layer, dtype=float)
        return cls(lambda x, y: np.exp(1j * (x @ GM + y @ Gk)))

    @classmethod
    def from_single(cls, f: PeriodicObservable) -> "DoubleObservable":
        return cls(lambda x, y: f(x))


def dirichlet_kernel(Aj: np.ndarray, G, N: int) -> np.ndarray:
    """Normalized exponential sum over A_j [-N, N]^2 in closed product form."""
    if N < 0:
        raise ValueError("N must be >= 0")
    G = np.asarray(G, dtype=float)
    t = G @ np.asarray(Aj) if G.ndim > 1 else np.asarray(Aj).T @ G
    t = t - 2 * np.pi * np.rint(t / (2 * np.pi))
    m = 2 * N + 1
    half = np.sin(t / 2)
    small = np.abs(half) < SINE_FLOOR
    safe = np.where(small, 1.0, half)
    ratio = np.sin(m * t / 2) / (m * safe)
    # second order Taylor expansion of the ratio about t = 0
    ratio = np.where(small, 1.0 - (m * m - 1) * t * t / 24.0, ratio)
    return np.prod(ratio, axis=-1)


def lattice_window(Aj: np.ndarray, N: int, gamma=None) -> np.ndarray:
    """Points A_j n + gamma for n in [-N, N]^2, row-major in (n1, n2)."""
    r = np.arange(-N, N + 1, dtype=float)
    n = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
    pts = n @ np.asarray(Aj).T
    if gamma is not None:
        pts = pts + np.asarray(gamma, dtype=float)
    return pts


def _lattice_mean(values_fn, npts: int):
    return chunked_sum(values_fn, npts) / npts


def ergodic_average(geom: BilayerGeometry, j: int, f, N: int, offset=None) -> complex:
    pts = lattice_window(geom.layer_basis(j), N, offset)

    def part(a, b):
        return np.sum(f(moire_frac(geom, pts[a:b]).frac), axis=0)

    return _lattice_mean(part, len(pts))


def ergodic_average_double(geom: BilayerGeometry, j: int, h, N: int, omega_M=None, omega_layer=None) -> complex:
    pts = lattice_window(geom.layer_basis(j), N)
    wM = np.zeros(2) if omega_M is None else np.asarray(omega_M, float)
    wL = np.zeros(2) if omega_layer is None else np.asarray(omega_layer, float)

    def part(a, b):
        p = pts[a:b]
        x = moire_frac(geom, p + wM).frac
        y = layer_frac(geom, p + wL, 3 - j).frac
        return np.sum(h(x, y), axis=0)

    return _lattice_mean(part, len(pts))


def cell_grid(basis: np.ndarray, n: int) -> np.ndarray:
    """Uniform n x n grid basis @ (k/n) over one cell, shape (n*n, 2)."""
    if n < 2:
        raise ValueError("grid must have n >= 2")
    s = np.arange(n) / n
    S = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1).reshape(-1, 2)
    return S @ np.asarray(basis).T


def limit_average(geom: BilayerGeometry, f, n: int = 128) -> complex:
    """Periodic trapezoid average of f over the moire cell."""
    x = cell_grid(geom.A_M, n)
    return _lattice_mean(lambda a, b: np.sum(f(x[a:b]), axis=0), len(x))


def limit_average_double(geom: BilayerGeometry, j: int, h, omega_M=None, omega_layer=None, n: int = 128) -> complex:
    """Cell average of x -> h(x, D_{j->3-j}(x - omega_M) + omega_{3-j})."""
    wM = np.zeros(2) if omega_M is None else np.asarray(omega_M, float)
    wL = np.zeros(2) if omega_layer is None else np.asarray(omega_layer, float)
    D = disregistry_matrix(geom, j)
    x = cell_grid(geom.A_M, n)
    y = (x - wM) @ D.T + wL
    return _lattice_mean(lambda a, b: np.sum(h(x[a:b], y[a:b]), axis=0), len(x))


def reconstruct_fourier(geom: BilayerGeometry, j: int, u, N: int, n_moire, gamma=None):
    """Lattice estimate of the Fourier coefficient of u at G_M = B_M n.

    ``u`` is either a callable (evaluated at moire fractional parts) or an
    array of samples with leading shape ((2N+1)^2,) ordered like
    :func:`lattice_window`.
    """
    pts = lattice_window(geom.layer_basis(j), N, gamma)
    GM = geom.B_M @ np.asarray(n_moire, dtype=float)
    phase = np.exp(-1j * pts @ GM)
    if callable(u):
        def part(a, b):
            vals = np.asarray(u(moire_frac(geom, pts[a:b]).frac))
            return np.tensordot(phase[a:b], vals, axes=(0, 0))
    else:
        samples = np.asarray(u)
        if samples.shape[0] != len(pts):
            # (2N+1, 2N+1, ...) layout
            samples = samples.reshape((len(pts),) + samples.shape[2:])

        def part(a, b):
            return np.tensordot(phase[a:b], samples[a:b], axes=(0, 0))

    return _lattice_mean(part, len(pts))
