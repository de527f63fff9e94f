"""Diophantine rotation distances, the scanned constant K and ergodic error prefactors."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .errors import DivergentTail, NotDiophantine
from .lattice import BilayerGeometry, moire_scale, ordered_half_box, rotation

# distances below this (relative to |M n|) are treated as exact lattice hits
EXACT_HIT_RTOL = 1e-12

# lower end of the admissible sigma range in the pair-potential case
PAIR_SIGMA_MIN = 1433 / 1248
PAIR_SIGMA_GRID = 32

_BERNOULLI = [1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6]


def zeta(s: float, terms: int = 32) -> float:
    """Riemann zeta for real s > 1: partial sum plus Euler-Maclaurin tail."""
    if not s > 1:
        raise DivergentTail(f"zeta({s}) diverges")
    k = np.arange(1, terms, dtype=float)
    total = np.sum(k**-s)
    N = float(terms)
    total += N ** (1 - s) / (s - 1) + 0.5 * N**-s
    rising = s  # s (s+1) ... (s + 2j - 2)
    for j, b in enumerate(_BERNOULLI, start=1):
        total += b / factorial(2 * j) * rising * N ** (-s - 2 * j + 1)
        rising *= (s + 2 * j - 1) * (s + 2 * j)
    return float(total)


@dataclass(frozen=True)
class RotationSpec:
    """Only (A, theta, q); enough for scans of commensurate inputs that have no moire basis."""

    A: np.ndarray
    theta: float
    q: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        if not self.q > 0:
            raise ValueError("q must be positive")


def rotation_map(geom: BilayerGeometry, sign: int) -> np.ndarray:
    """q^{sign} A^T R_{sign theta} A^{-T}."""
    return geom.q**sign * geom.A.T @ rotation(sign * geom.theta) @ np.linalg.inv(geom.A).T


def _distances(geom: BilayerGeometry, n: np.ndarray, sign: int) -> np.ndarray:
    v = np.asarray(n, dtype=float) @ rotation_map(geom, sign).T
    d = np.linalg.norm(v - np.rint(v), axis=-1)
    exact = d <= EXACT_HIT_RTOL * np.maximum(1.0, np.linalg.norm(v, axis=-1))
    return np.where(exact, 0.0, d)


def diophantine_distance(geom: BilayerGeometry, n, sign: int = 1) -> float:
    n = np.asarray(n)
    if not np.any(n != 0):
        raise ValueError("n must be nonzero")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return float(_distances(geom, n.reshape(1, 2), sign)[0])


@dataclass
class DiophantineScan:
    geometry: BilayerGeometry
    sigma: float
    n_max: int
    K_hat: float
    argmin: tuple
    argmin_sign: int
    per_sign: dict
    label: str = "empirical (n_max-limited)"
    _table: dict = field(default=None, repr=False)

    @property
    def commensurate(self) -> bool:
        return self.K_hat == 0.0

    def table(self, sign: int):
        """(n, dist, |n|^{2 sigma} dist) over the scanned half box."""
        return self._table[sign]

    def summary(self) -> dict:
        return {
            "sigma": self.sigma,
            "n_max": self.n_max,
            "K_hat": self.K_hat,
            "argmin": list(self.argmin),
            "argmin_sign": self.argmin_sign,
            "per_sign": {str(s): {"K": v["K"], "argmin": list(v["argmin"])} for s, v in self.per_sign.items()},
            "label": self.label,
        }


def diophantine_scan(geom: BilayerGeometry, sigma: float, n_max: int) -> DiophantineScan:
    """Exhaustive scan of |n|^{2 sigma} dist over 0 < |n|_inf <= n_max and both signs.

    Only one of each +-n pair is visited since the distance is symmetric.
    """
    if not sigma > 1:
        raise ValueError("sigma must exceed 1")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = ordered_half_box(n_max)
    norms = np.linalg.norm(n, axis=1)
    per_sign, tables = {}, {}
    for sign in (1, -1):
        dist = _distances(geom, n, sign)
        weighted = norms ** (2 * sigma) * dist
        i = int(np.argmin(weighted))
        per_sign[sign] = {"K": float(weighted[i]), "argmin": tuple(int(k) for k in n[i])}
        tables[sign] = (n, dist, weighted)
    best = min((1, -1), key=lambda s: (per_sign[s]["K"], -s))
    return DiophantineScan(
        geometry=geom, sigma=float(sigma), n_max=int(n_max),
        K_hat=per_sign[best]["K"], argmin=per_sign[best]["argmin"], argmin_sign=best,
        per_sign=per_sign, _table=tables,
    )


def _zeta_bracket(s: float) -> float:
    return zeta(2 * s) + 2.0**-s * zeta(s) ** 2


def moire_frequency_scale(geom: BilayerGeometry) -> float:
    """rho_M ||A||_2 / 2 pi, the factor relating |n| to |B_M n|."""
    return moire_scale(geom) * np.linalg.norm(geom.A, 2) / (2 * np.pi)


def zeta_tail_bound(geom: BilayerGeometry, s: float) -> float:
    """Upper bound for the sum of |G_M|^{-2s} over nonzero moire frequencies."""
    if not s > 1:
        raise DivergentTail(f"lattice sum of |G|^(-2s) diverges for s = {s}")
    return 4 * moire_frequency_scale(geom) ** (2 * s) * _zeta_bracket(s)


@dataclass(frozen=True)
class ErrorPrefactor:
    sigma: float
    s: float
    K: float
    fourierDecaySup: float
    C: float
    label: str = "empirical (n_max-limited)"

    def bound(self, N) -> np.ndarray:
        return self.C / (2 * np.asarray(N) + 1)


def error_prefactor(scan: DiophantineScan, s: float, fourierDecaySup: float) -> ErrorPrefactor:
    """Coefficient C with |A_N f - <f>| <= C / (2N + 1)."""
    if scan.K_hat == 0:
        raise NotDiophantine(f"K_hat = 0: commensuration witness {scan.argmin} within n_max={scan.n_max}")
    if not s > 1:
        raise DivergentTail(f"s = {s} must exceed 1")
    if fourierDecaySup < 0:
        raise ValueError("fourierDecaySup must be nonnegative")
    sigma = scan.sigma
    C = (2 * np.sqrt(2) / scan.K_hat
         * moire_frequency_scale(scan.geometry) ** (2 * (sigma + s))
         * _zeta_bracket(s) * fourierDecaySup)
    return ErrorPrefactor(sigma, float(s), scan.K_hat, float(fourierDecaySup), float(C))


def fourier_decay_sup(geom: BilayerGeometry, modes, coeffs, sigma: float, s: float) -> float:
    """sup over nonzero G_M = B_M n of |G_M|^{2(sigma+s)} |coefficient|."""
    modes = np.asarray(modes).reshape(-1, 2)
    coeffs = np.abs(np.asarray(coeffs)).reshape(modes.shape[0], -1).max(axis=1)
    G = np.linalg.norm(modes @ geom.B_M.T, axis=1)
    keep = np.any(modes != 0, axis=1)
    if not np.any(keep):
        return 0.0
    return float(np.max(G[keep] ** (2 * (sigma + s)) * coeffs[keep]))


def pair_constant_surrogate(geom: BilayerGeometry, n_max: int = 64) -> dict:
    """Grid approximation of the pair-case constant min over sigma of
    (zeta(6 - 2 sigma) + 2^{sigma-3} zeta(3 - sigma)^2) / K(sigma)."""
    sigmas = np.linspace(PAIR_SIGMA_MIN, 2.0, PAIR_SIGMA_GRID + 2)[1:-1]
    best = {"value": np.inf, "sigma": None, "K_hat": None}
    for sig in sigmas:
        scan = diophantine_scan(geom, sig, n_max)
        if scan.K_hat == 0:
            continue
        val = (zeta(6 - 2 * sig) + 2.0 ** (sig - 3) * zeta(3 - sig) ** 2) / scan.K_hat
        if val < best["value"]:
            best = {"value": float(val), "sigma": float(sig), "K_hat": scan.K_hat}
    if best["sigma"] is None:
        raise NotDiophantine("K_hat vanished for every sigma on the grid")
    best["label"] = "empirical (n_max-limited)"
    return best
