"""Bilayer lattice algebra: layer and moire bases, fractional parts, disregistry."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateScale, SingularBasis

SINGULAR_RTOL = 1e-14
# lattice coordinates this close to an integer are snapped before flooring
SNAP_RTOL = 1e-13


def rotation(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def graphene_basis(a0: float = 2.46) -> np.ndarray:
    """Triangular lattice basis with lattice constant ``a0`` (Angstrom)."""
    return a0 * np.array([[np.sqrt(3) / 2, np.sqrt(3) / 2], [-0.5, 0.5]])


@dataclass(frozen=True, eq=False)
class BilayerGeometry:
    A: np.ndarray
    theta: float
    q: float
    A1: np.ndarray
    A2: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    A_M: np.ndarray
    B_M: np.ndarray
    areaGamma1: float
    areaGamma2: float
    areaGammaM: float

    def layer_basis(self, j: int) -> np.ndarray:
        return {1: self.A1, 2: self.A2}[j]

    def reciprocal_basis(self, j: int) -> np.ndarray:
        return {1: self.B1, 2: self.B2}[j]

    def layer_area(self, j: int) -> float:
        return {1: self.areaGamma1, 2: self.areaGamma2}[j]

    def swapped(self) -> "BilayerGeometry":
        """Same bilayer with the layer labels exchanged (theta -> -theta, q -> 1/q)."""
        return build_geometry(self.A, -self.theta, 1.0 / self.q)

    def to_dict(self) -> dict:
        out = {"theta": self.theta, "theta_deg": np.degrees(self.theta), "q": self.q}
        for name in ("A", "A1", "A2", "B1", "B2", "A_M", "B_M"):
            out[name] = getattr(self, name).tolist()
        out["areaGamma1"] = self.areaGamma1
        out["areaGamma2"] = self.areaGamma2
        out["areaGammaM"] = self.areaGammaM
        return out


def build_geometry(A, theta: float, q: float = 1.0) -> BilayerGeometry:
    A = np.array(A, dtype=float)
    if A.shape != (2, 2) or not np.all(np.isfinite(A)):
        raise SingularBasis("A must be a finite 2x2 matrix")
    if not np.isfinite(theta):
        raise SingularBasis("theta must be finite")
    if not q > 0:
        raise SingularBasis("q must be positive")
    scale = np.linalg.norm(A, 2)
    if abs(np.linalg.det(A)) <= SINGULAR_RTOL * scale**2:
        raise SingularBasis("det(A) vanishes")

    A1 = q**-0.5 * rotation(-theta / 2) @ A
    A2 = q**0.5 * rotation(theta / 2) @ A
    B1 = 2 * np.pi * np.linalg.inv(A1).T
    B2 = 2 * np.pi * np.linalg.inv(A2).T
    B_M = B1 - B2
    if abs(np.linalg.det(B_M)) < SINGULAR_RTOL * np.linalg.norm(B1, 2) ** 2:
        raise SingularBasis("moire basis is singular (commensurate-degenerate theta, q)")
    A_M = 2 * np.pi * np.linalg.inv(B_M).T
    return BilayerGeometry(
        A=A, theta=float(theta), q=float(q), A1=A1, A2=A2, B1=B1, B2=B2,
        A_M=A_M, B_M=B_M,
        areaGamma1=abs(np.linalg.det(A1)),
        areaGamma2=abs(np.linalg.det(A2)),
        areaGammaM=abs(np.linalg.det(A_M)),
    )


@dataclass(frozen=True)
class CellDecomposition:
    frac: np.ndarray
    n: np.ndarray


def cell_decompose(basis: np.ndarray, x) -> CellDecomposition:
    """Split ``x = basis @ n + frac`` with ``frac`` in ``basis @ [0,1)^2``."""
    x = np.asarray(x, dtype=float)
    coords = np.linalg.solve(basis, x.reshape(-1, 2).T).T
    nearest = np.rint(coords)
    snap = np.abs(coords - nearest) <= SNAP_RTOL * np.maximum(1.0, np.abs(coords))
    coords = np.where(snap, nearest, coords)
    n = np.floor(coords)
    frac = x.reshape(-1, 2) - n @ basis.T
    return CellDecomposition(frac.reshape(x.shape), n.astype(np.int64).reshape(x.shape))


def moire_frac(geom: BilayerGeometry, x) -> CellDecomposition:
    return cell_decompose(geom.A_M, x)


def layer_frac(geom: BilayerGeometry, x, j: int) -> CellDecomposition:
    return cell_decompose(geom.layer_basis(j), x)


def disregistry_matrix(geom: BilayerGeometry, j: int) -> np.ndarray:
    """D_{j->3-j} = I - A_{3-j} A_j^{-1}."""
    Aj, Ak = geom.layer_basis(j), geom.layer_basis(3 - j)
    return np.eye(2) - Ak @ np.linalg.inv(Aj)


def moire_scale_ratio(theta: float, q: float = 1.0) -> float:
    bracket = (np.sqrt(q) - 1 / np.sqrt(q)) ** 2 + 4 * np.sin(theta / 2) ** 2
    if not bracket > 1e-300:
        raise DegenerateScale("moire length scale is infinite (theta = 0, q = 1)")
    return float(bracket**-0.5)


def moire_scale(geom: BilayerGeometry) -> float:
    """Ratio |A_M x| / |A x|, identical for every x."""
    return moire_scale_ratio(geom.theta, geom.q)


def integer_box(n_max: int, half: bool = False) -> np.ndarray:
    """All n in Z^2 with 0 < |n|_inf <= n_max, optionally one of each +-n pair."""
    r = np.arange(-n_max, n_max + 1)
    n = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
    n = n[np.any(n != 0, axis=1)]
    if half:
        n = n[(n[:, 0] > 0) | ((n[:, 0] == 0) & (n[:, 1] > 0))]
    return n


def ordered_half_box(n_max: int) -> np.ndarray:
    """One representative of each +-n pair, shortest first, (1, 0) before (0, 1)."""
    n = integer_box(n_max, half=True)
    order = np.lexsort((n[:, 1], -n[:, 0], (n**2).sum(1), np.abs(n).max(1)))
    return n[order]


@dataclass(frozen=True)
class CommensurationVerdict:
    commensurate: bool
    witness: tuple | None
    distance: float | None
    n_max: int

    def describe(self) -> str:
        if self.commensurate:
            return f"commensurate: witness n={self.witness} at distance {self.distance:.3e}"
        return f"no commensuration found up to n_max={self.n_max}"


def commensuration_scan(geom: BilayerGeometry, n_max: int, tol: float) -> CommensurationVerdict:
    """Look for n with q A^T R_theta A^{-T} n within ``tol`` of Z^2."""
    if n_max < 1 or not tol > 0:
        raise ValueError("need n_max >= 1 and tol > 0")
    M = geom.q * geom.A.T @ rotation(geom.theta) @ np.linalg.inv(geom.A).T
    n = ordered_half_box(n_max)
    v = n @ M.T
    dist = np.linalg.norm(v - np.rint(v), axis=1)
    hits = np.flatnonzero(dist < tol)
    if hits.size == 0:
        return CommensurationVerdict(False, None, None, n_max)
    best = hits[0]
    return CommensurationVerdict(True, tuple(int(k) for k in n[best]), float(dist[best]), n_max)


@dataclass
class SublatticeSpec:
    """Sublattice labels and shifts per layer plus optional layer shifts gamma_j."""

    labels: dict = field(default_factory=lambda: {1: ["A"], 2: ["A"]})
    tau: dict = field(default_factory=lambda: {1: np.zeros((1, 2)), 2: np.zeros((1, 2))})
    gamma: dict = field(default_factory=lambda: {1: np.zeros(2), 2: np.zeros(2)})

    def __post_init__(self):
        for j in (1, 2):
            t = np.asarray(self.tau[j], dtype=float).reshape(-1, 2)
            if not np.all(np.isfinite(t)):
                raise ValueError(f"layer {j}: sublattice shifts must be finite")
            if len(set(self.labels[j])) != len(self.labels[j]):
                raise ValueError(f"layer {j}: sublattice labels must be unique")
            if len(self.labels[j]) != t.shape[0]:
                raise ValueError(f"layer {j}: one shift per label required")
            self.tau[j] = t
            self.gamma[j] = np.asarray(self.gamma.get(j, np.zeros(2)), dtype=float)

    def check_gamma(self, geom: BilayerGeometry) -> None:
        for j in (1, 2):
            s = np.linalg.solve(geom.layer_basis(j), self.gamma[j])
            if np.any(s < 0) or np.any(s >= 1):
                raise ValueError(f"gamma for layer {j} is outside the half-open cell")

    def count(self, j: int) -> int:
        return self.tau[j].shape[0]

    def max_shift_distance(self) -> float:
        """Largest |tau_1 - tau_2| over sublattice pairs."""
        d = self.tau[1][:, None, :] - self.tau[2][None, :, :]
        return float(np.linalg.norm(d, axis=-1).max())


def geometry_from_dict(data: dict) -> tuple[BilayerGeometry, SublatticeSpec]:
    geom = build_geometry(data["A"], np.radians(float(data["theta_deg"])), float(data.get("q", 1.0)))
    labels, tau = {}, {}
    subl = data.get("sublattices") or {}
    for j in (1, 2):
        entries = subl.get(f"layer{j}") or [{"label": "A", "tau": [0.0, 0.0]}]
        labels[j] = [str(e["label"]) for e in entries]
        tau[j] = np.array([e["tau"] for e in entries], dtype=float)
    gam = data.get("gamma") or {}
    gamma = {j: np.array(gam.get(f"layer{j}", [0.0, 0.0]), dtype=float) for j in (1, 2)}
    spec = SublatticeSpec(labels, tau, gamma)
    spec.check_gamma(geom)
    return geom, spec


def load_geometry(path) -> tuple[BilayerGeometry, SublatticeSpec]:
    return geometry_from_dict(json.loads(Path(path).read_text()))


def geometry_to_dict(geom: BilayerGeometry, spec: SublatticeSpec | None = None) -> dict:
    spec = spec or SublatticeSpec()
    return {
        "A": geom.A.tolist(),
        "theta_deg": float(np.degrees(geom.theta)),
        "q": geom.q,
        "sublattices": {
            f"layer{j}": [{"label": lab, "tau": t.tolist()} for lab, t in zip(spec.labels[j], spec.tau[j])]
            for j in (1, 2)
        },
        "gamma": {f"layer{j}": spec.gamma[j].tolist() for j in (1, 2)},
    }
