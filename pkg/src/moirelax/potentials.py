"""Even pair potentials with core regularization and decay metadata.

Radial rules are one-dimensional profiles phi(r), r >= 0.  A pair potential
combines them either as a function of the full distance |x| or as a product
phi_h(|x_h|) * phi_z(|z|) of horizontal and vertical factors.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import NoDecay

DEFAULT_CORE_RADIUS = 0.5


class RadialRule:
    """phi(r) with first and second derivatives."""

    def value(self, r):
        raise NotImplementedError

    def d1(self, r):
        raise NotImplementedError

    def d2(self, r):
        raise NotImplementedError

    def d1_over_r(self, r):
        """phi'(r) / r, finite at r = 0 for the regularized rules."""
        r = np.asarray(r, dtype=float)
        return self.d1(r) / np.where(r > 0, r, 1.0)


@dataclass(frozen=True)
class MorseRule(RadialRule):
    E0: float
    kappa0: float
    r0: float

    def value(self, r):
        e = np.exp(-self.kappa0 * (np.asarray(r) - self.r0))
        return self.E0 * ((e - 1) ** 2 - 1)

    def d1(self, r):
        e = np.exp(-self.kappa0 * (np.asarray(r) - self.r0))
        return -2 * self.kappa0 * self.E0 * (e - 1) * e

    def d2(self, r):
        e = np.exp(-self.kappa0 * (np.asarray(r) - self.r0))
        return 2 * self.kappa0**2 * self.E0 * e * (2 * e - 1)


@dataclass(frozen=True)
class LennardJonesRule(RadialRule):
    eps0: float
    sigma: float

    def value(self, r):
        x = (self.sigma / np.asarray(r, dtype=float)) ** 6
        return 4 * self.eps0 * (x * x - x)

    def d1(self, r):
        r = np.asarray(r, dtype=float)
        x = (self.sigma / r) ** 6
        return 4 * self.eps0 * (-12 * x * x + 6 * x) / r

    def d2(self, r):
        r = np.asarray(r, dtype=float)
        x = (self.sigma / r) ** 6
        return 4 * self.eps0 * (156 * x * x - 42 * x) / r**2


@dataclass(frozen=True)
class GaussianRule(RadialRule):
    amplitude: float = 1.0
    width: float = 1.0

    def value(self, r):
        return self.amplitude * np.exp(-(np.asarray(r) / self.width) ** 2)

    def d1(self, r):
        r = np.asarray(r)
        return -2 * r / self.width**2 * self.value(r)

    def d2(self, r):
        r = np.asarray(r)
        return (4 * r**2 / self.width**4 - 2 / self.width**2) * self.value(r)

    def d1_over_r(self, r):
        return -2 / self.width**2 * self.value(r)


@dataclass(frozen=True)
class ConstantRule(RadialRule):
    c: float = 1.0

    def value(self, r):
        return np.full(np.shape(r), self.c, dtype=float)

    def d1(self, r):
        return np.zeros(np.shape(r))

    def d2(self, r):
        return np.zeros(np.shape(r))

    def d1_over_r(self, r):
        return np.zeros(np.shape(r))


class TabulatedRule(RadialRule):
    """Cubic spline through (radius, value) samples, zero past the table end.

    The slope is clamped to zero at r = 0 (even extension) and at the last
    radius, so the zero extension joins with continuous slope when the last
    tabulated value is zero.
    """

    def __init__(self, radii, values):
        radii = np.asarray(radii, dtype=float)
        values = np.asarray(values, dtype=float)
        if radii[0] != 0.0:
            radii = np.concatenate([[0.0], radii])
            values = np.concatenate([[values[0]], values])
        self.radii, self.values = radii, values
        self.r_end = float(radii[-1])
        self._spline = CubicSpline(radii, values, bc_type=((1, 0.0), (1, 0.0)))

    def _eval(self, r, nu):
        r = np.asarray(r, dtype=float)
        inside = r <= self.r_end
        return np.where(inside, self._spline(np.clip(r, 0.0, self.r_end), nu), 0.0)

    def value(self, r):
        return self._eval(r, 0)

    def d1(self, r):
        return self._eval(r, 1)

    def d2(self, r):
        return self._eval(r, 2)

    def d1_over_r(self, r):
        r = np.asarray(r, dtype=float)
        # phi'(0) = 0, so phi'(r)/r -> phi''(0)
        return np.where(r > 1e-12, self.d1(r) / np.where(r > 1e-12, r, 1.0), self.d2(np.zeros_like(r)))


class CoreRegularized(RadialRule):
    """Replace phi on [0, rho) by a + b r^2 + c r^4 matching phi, phi', phi'' at rho."""

    def __init__(self, rule: RadialRule, rho: float):
        self.rule, self.rho = rule, float(rho)
        f, d1, d2 = (float(g(self.rho)) for g in (rule.value, rule.d1, rule.d2))
        c = (d2 * rho - d1) / (8 * rho**3)
        b = (d1 - 4 * c * rho**3) / (2 * rho)
        self.coef = (f - b * rho**2 - c * rho**4, b, c)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        a, b, c = self.coef
        out = self.rule.value(np.maximum(r, self.rho))
        return np.where(r < self.rho, a + b * r**2 + c * r**4, out)

    def d1(self, r):
        r = np.asarray(r, dtype=float)
        _, b, c = self.coef
        return np.where(r < self.rho, 2 * b * r + 4 * c * r**3, self.rule.d1(np.maximum(r, self.rho)))

    def d2(self, r):
        r = np.asarray(r, dtype=float)
        _, b, c = self.coef
        return np.where(r < self.rho, 2 * b + 12 * c * r**2, self.rule.d2(np.maximum(r, self.rho)))

    def d1_over_r(self, r):
        r = np.asarray(r, dtype=float)
        _, b, c = self.coef
        rr = np.maximum(r, self.rho)
        return np.where(r < self.rho, 2 * b + 4 * c * r**2, self.rule.d1(rr) / rr)


def regularize(rule: RadialRule, core_radius: float | None) -> RadialRule:
    if core_radius is None or core_radius <= 0:
        return rule
    return CoreRegularized(rule, core_radius)


class PairPotential:
    """Even potential v: R^3 -> energy.

    Subclasses implement ``profile(rh, z)`` in terms of the horizontal radius
    and the vertical offset, plus the gradient.
    """

    variant = "abstract"
    decay_exponent_r: float = 1.5
    scale: float = 1.0

    def profile(self, rh, z):
        raise NotImplementedError

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        rh = np.hypot(x[..., 0], x[..., 1])
        return self.profile(rh, x[..., 2])

    def gradient(self, x):
        raise NotImplementedError

    def scaled(self, factor: float) -> "PairPotential":
        import copy
        out = copy.copy(self)
        out.scale = self.scale * factor
        return out

    @property
    def is_zero(self) -> bool:
        return self.scale == 0.0


class ZeroPotential(PairPotential):
    variant = "zero"

    def profile(self, rh, z):
        return np.zeros(np.broadcast(rh, z).shape)

    def gradient(self, x):
        return np.zeros(np.shape(x))

    @property
    def is_zero(self) -> bool:
        return True


class RadialPotential(PairPotential):
    """v(x) = phi(|x|) with a single radial rule on the full 3D distance."""

    def __init__(self, rule: RadialRule, core_radius: float | None = DEFAULT_CORE_RADIUS,
                 decay_exponent_r: float = 1.5, variant: str = "radial"):
        self.raw_rule = rule
        self.rule = regularize(rule, core_radius)
        self.core_radius = core_radius
        self.decay_exponent_r = decay_exponent_r
        self.variant = variant

    def profile(self, rh, z):
        return self.scale * self.rule.value(np.hypot(rh, z))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        return self.scale * self.rule.d1_over_r(r)[..., None] * x


class ProductPotential(PairPotential):
    """v(x) = phi_h(|x_h|) * phi_z(|z|)."""

    variant = "product"

    def __init__(self, horizontal: RadialRule, vertical: RadialRule,
                 core_radius: float | None = DEFAULT_CORE_RADIUS, decay_exponent_r: float = 1.5):
        self.horizontal = regularize(horizontal, core_radius)
        self.vertical = regularize(vertical, core_radius)
        self.core_radius = core_radius
        self.decay_exponent_r = decay_exponent_r

    def profile(self, rh, z):
        return self.scale * self.horizontal.value(rh) * self.vertical.value(np.abs(z))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        rh = np.hypot(x[..., 0], x[..., 1])
        az = np.abs(x[..., 2])
        h, vz = self.horizontal.value(rh), self.vertical.value(az)
        gh = self.horizontal.d1_over_r(rh) * vz
        gz = h * self.vertical.d1_over_r(az) * x[..., 2]
        return self.scale * np.stack([gh * x[..., 0], gh * x[..., 1], gz], axis=-1)


def morse_potential(E0=2.8437, kappa0=1.8168, r0=3.6891, core_radius=DEFAULT_CORE_RADIUS,
                    decay_exponent_r=1.5) -> RadialPotential:
    """Morse potential (meV, 1/Angstrom, Angstrom) on the 3D distance."""
    return RadialPotential(MorseRule(E0, kappa0, r0), core_radius, decay_exponent_r, "morse")


def lennard_jones_potential(eps0=2.39, sigma=3.41, core_radius=DEFAULT_CORE_RADIUS,
                            decay_exponent_r=1.5) -> RadialPotential:
    return RadialPotential(LennardJonesRule(eps0, sigma), core_radius, decay_exponent_r, "lennard_jones")


def gaussian_potential(amplitude=1.0, width=1.0, decay_exponent_r=1.5) -> RadialPotential:
    """Smooth test potential amplitude * exp(-|x|^2 / width^2)."""
    return RadialPotential(GaussianRule(amplitude, width), None, decay_exponent_r, "gaussian")


def graphene_morse_lj(E0=2.8437, kappa0=1.8168, r0=3.6891, lj_sigma=3.4,
                      core_radius=DEFAULT_CORE_RADIUS) -> ProductPotential:
    """Horizontal Morse profile times a dimensionless vertical Lennard-Jones factor."""
    return ProductPotential(MorseRule(E0, kappa0, r0), LennardJonesRule(1.0, lj_sigma), core_radius)


# --- decay and weighted norms -------------------------------------------------

def _z_probe(z_limit: float, count: int = 9) -> np.ndarray:
    return np.linspace(0.0, abs(z_limit), count) if z_limit else np.zeros(1)


def decay_radius(v: PairPotential, tol: float, z_limit: float = 0.0, max_radius: float = 400.0,
                 resolution: float = 0.005) -> float:
    """Smallest radius beyond which |v(x_h, z)| < tol for the probed |z| <= z_limit.

    The bracket is found by doubling from 1; the final value is bisected on a
    sampled envelope (running max of |v| from the outside in).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if v.is_zero:
        return 0.0
    zs = _z_probe(z_limit)
    r = np.arange(0.0, max_radius + resolution, resolution)
    vals = np.abs(v.profile(r[:, None], zs[None, :])).max(axis=1)
    if vals[-1] >= tol:
        raise NoDecay(f"|v| >= {tol:g} at radius {max_radius:g}")
    envelope = np.maximum.accumulate(vals[::-1])[::-1]

    def tail_ok(radius: float) -> bool:
        return envelope[min(int(np.ceil(radius / resolution)), len(r) - 1)] < tol

    if tail_ok(0.0):
        return 0.0
    hi = 1.0
    while not tail_ok(hi):
        hi *= 2
        if hi > max_radius:
            raise NoDecay(f"no cutoff below {max_radius:g} for tol {tol:g}")
    lo = hi / 2 if hi > 1 else 0.0
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if tail_ok(mid):
            hi = mid
        else:
            lo = mid
    return float(np.ceil(hi / resolution) * resolution)


def peak_magnitude(v: PairPotential, z_limit: float = 0.0, extent: float = 50.0) -> float:
    zs = _z_probe(z_limit)
    r = np.linspace(0.0, extent, 20001)
    return float(np.abs(v.profile(r[:, None], zs[None, :])).max())


def cutoff_radius(v: PairPotential, rel_tol: float = 1e-12, z_limit: float = 0.0) -> float:
    """decay_radius with the tolerance taken relative to the peak |v|."""
    if v.is_zero:
        return 0.0
    return decay_radius(v, rel_tol * peak_magnitude(v, z_limit), z_limit)


def weighted_norm_estimate(v: PairPotential, r: float, z_limit: float = 0.0,
                           extent: float = 40.0, points: int = 64, z_points: int = 9) -> float:
    """max over a probe grid of <x_h>^{2r} |v(x_h, z)|, a lower estimate of the sup.

    The horizontal grid is a symmetric square with an odd number of points per
    axis so the origin is always probed.
    """
    if not r > 1:
        raise ValueError("r must exceed 1")
    m = 2 * (points // 2) + 1
    s = np.linspace(-extent, extent, m)
    X, Y = np.meshgrid(s, s, indexing="ij")
    rh = np.hypot(X, Y).ravel()
    zs = np.linspace(-abs(z_limit), abs(z_limit), z_points) if z_limit else np.zeros(1)
    weight = (1 + rh**2) ** r
    return float(np.max(weight[:, None] * np.abs(v.profile(rh[:, None], zs[None, :]))))


def bracket_integral(r: float) -> float:
    """Integral of <x>^{-2r} over R^2."""
    if not r > 1:
        raise ValueError("r must exceed 1")
    return np.pi / (r - 1)


def l1_shift_bound(v: PairPotential, r: float, d: float, u1_sup: float, u2_sup: float,
                   weighted_norm: float) -> float:
    """Upper bound for the integral of |v(x + g(x))| over R^2 when |g_h| stays
    below d + ||u1|| + ||u2||."""
    return 5 ** (r - 1) * bracket_integral(r) * (1 + d + u1_sup + u2_sup) ** (2 * r) * weighted_norm


# --- configuration -----------------------------------------------------------

def _rule_from(name: str, params: dict, base: Path | None) -> RadialRule:
    name = name.lower()
    if name == "morse":
        return MorseRule(float(params["E0_mev"]), float(params["kappa0_inv_angstrom"]), float(params["r0_angstrom"]))
    if name in ("lj", "lennard_jones"):
        return LennardJonesRule(float(params["eps0_mev"]), float(params["sigma_angstrom"]))
    if name == "gaussian":
        return GaussianRule(float(params.get("amplitude_mev", 1.0)), float(params.get("width_angstrom", 1.0)))
    if name == "constant":
        return ConstantRule(float(params.get("value", 1.0)))
    if name == "tabulated":
        path = Path(params["table"])
        if base is not None and not path.is_absolute():
            path = base / path
        radii, values = read_table(path)
        return TabulatedRule(radii, values)
    raise ValueError(f"unknown radial rule '{name}'")


def read_table(path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                continue  # header line
    data = np.array(rows)
    return data[:, 0], data[:, 1]


def potential_from_dict(data: dict, base: Path | None = None) -> PairPotential:
    """Build a potential from {variant, params, core_radius, decay_exponent_r}."""
    variant = str(data["variant"]).lower()
    params = data.get("params", {})
    core = data.get("core_radius", None if variant == "gaussian" else DEFAULT_CORE_RADIUS)
    r = float(data.get("decay_exponent_r", 1.5))
    if variant == "zero":
        return ZeroPotential()
    if variant == "product":
        h = params["horizontal"]
        z = params["vertical"]
        pot = ProductPotential(_rule_from(h["rule"], h, base), _rule_from(z["rule"], z, base), core, r)
    else:
        pot = RadialPotential(_rule_from(variant, params, base), core, r, variant)
    if "scale" in data:
        pot = pot.scaled(float(data["scale"]))
    return pot


def load_potential(path) -> PairPotential:
    path = Path(path)
    return potential_from_dict(json.loads(path.read_text()), path.parent)
