"""Moire-periodic displacement fields stored as truncated Fourier series."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lattice import BilayerGeometry

EVAL_CHUNK = 8192


def mode_indices(n_cut: int) -> np.ndarray:
    """All n with |n|_inf <= n_cut, row-major; shape ((2n_cut+1)^2, 2)."""
    r = np.arange(-n_cut, n_cut + 1)
    return np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)


@dataclass
class DisplacementField:
    """Displacement u(x, alpha) in R^3 for one layer.

    ``coeffs[alpha, i + n_cut, k + n_cut, :]`` is the coefficient of
    exp(i B_M (i, k) . x).
    """

    geometry: BilayerGeometry
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim == 3:
            c = c[None]
        if c.ndim != 4 or c.shape[1] != c.shape[2] or c.shape[1] % 2 == 0 or c.shape[3] != 3:
            raise ValueError("coeffs must have shape (n_sub, 2n+1, 2n+1, 3)")
        self.coeffs = c

    # construction ------------------------------------------------------
    @classmethod
    def zeros(cls, geom: BilayerGeometry, n_cut: int, n_sub: int = 1) -> "DisplacementField":
        K = 2 * n_cut + 1
        return cls(geom, np.zeros((n_sub, K, K, 3), dtype=complex))

    @classmethod
    def from_modes(cls, geom: BilayerGeometry, n_cut: int, modes: dict, n_sub: int = 1,
                   sublattice: int | None = None) -> "DisplacementField":
        """Build from {(n1, n2): c in C^3}; conjugate partners are filled in."""
        field = cls.zeros(geom, n_cut, n_sub)
        subs = range(n_sub) if sublattice is None else [sublattice]
        for n, c in modes.items():
            c = np.asarray(c, dtype=complex)
            i, k = n[0] + n_cut, n[1] + n_cut
            for a in subs:
                field.coeffs[a, i, k] = c
                field.coeffs[a, 2 * n_cut - i, 2 * n_cut - k] = np.conj(c)
        return field

    @classmethod
    def random(cls, geom: BilayerGeometry, n_cut: int, amplitude: float, rng, n_sub: int = 1,
               in_plane: bool = False, decay: float = 0.0) -> "DisplacementField":
        K = 2 * n_cut + 1
        c = rng.standard_normal((n_sub, K, K, 3)) + 1j * rng.standard_normal((n_sub, K, K, 3))
        if decay:
            n = mode_indices(n_cut).reshape(K, K, 2)
            c *= np.exp(-decay * np.linalg.norm(n, axis=-1))[None, :, :, None]
        if in_plane:
            c[..., 2] = 0
        field = cls(geom, amplitude * c)
        field.hermitize()
        return field

    def copy(self) -> "DisplacementField":
        return DisplacementField(self.geometry, self.coeffs.copy())

    def hermitize(self) -> "DisplacementField":
        flipped = np.conj(self.coeffs[:, ::-1, ::-1, :])
        self.coeffs = 0.5 * (self.coeffs + flipped)
        return self

    # properties ----------------------------------------------------------
    @property
    def n_cut(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def n_sub(self) -> int:
        return self.coeffs.shape[0]

    def modes(self) -> np.ndarray:
        return mode_indices(self.n_cut)

    def frequencies(self) -> np.ndarray:
        return self.modes() @ self.geometry.B_M.T

    def flat(self, alpha: int = 0) -> np.ndarray:
        """Coefficients of one sublattice as ((2n+1)^2, 3)."""
        return self.coeffs[alpha].reshape(-1, 3)

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def hermitian_defect(self) -> float:
        return float(np.abs(self.coeffs - np.conj(self.coeffs[:, ::-1, ::-1, :])).max(initial=0.0))

    def sup_bound(self) -> np.ndarray:
        """Per-component upper bound sum |c_n| on ||u||_inf (max over sublattices)."""
        return np.abs(self.coeffs).sum(axis=(1, 2)).max(axis=0)

    def sup_norm(self, grid: int = 64) -> np.ndarray:
        """Per-component sampled ||u||_inf on a moire-cell grid."""
        from .ergodic import cell_grid
        x = cell_grid(self.geometry.A_M, grid)
        return np.max([np.abs(self.evaluate(x, a)).max(axis=0) for a in range(self.n_sub)], axis=0)

    def sobolev_bound(self, order: int) -> float:
        """sum_k<=order sup |D^k u| bounded by sum_n |c_n| |G_n|^k."""
        G = np.linalg.norm(self.frequencies(), axis=1)
        amp = np.linalg.norm(self.coeffs, axis=-1).reshape(self.n_sub, -1).max(axis=0)
        return float(sum(np.sum(amp * G**k) for k in range(order + 1)))

    # evaluation ----------------------------------------------------------
    def _phases(self, x):
        """exp(2 pi i s_l k) for the two moire coordinates s of x, k in [-n_cut, n_cut]."""
        s = np.linalg.solve(self.geometry.A_M, np.asarray(x, float).reshape(-1, 2).T).T
        s = s - np.floor(s)
        k = np.arange(-self.n_cut, self.n_cut + 1)
        e1 = np.exp(2j * np.pi * s[:, 0:1] * k)
        e2 = np.exp(2j * np.pi * s[:, 1:2] * k)
        return e1, e2

    def evaluate(self, x, alpha: int = 0) -> np.ndarray:
        """u(x, alpha), shape x.shape[:-1] + (3,)."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        out = np.empty((len(flat), 3))
        K = self.coeffs.shape[1]
        # C[l, (k, c)] so that sum_l e2[p, l] C[l, k, c] contracts the second index
        C = self.coeffs[alpha].transpose(1, 0, 2).reshape(K, 3 * K)
        for a in range(0, len(flat), EVAL_CHUNK):
            e1, e2 = self._phases(flat[a:a + EVAL_CHUNK])
            W = (e2 @ C).reshape(-1, K, 3)
            out[a:a + EVAL_CHUNK] = np.einsum("pk,pkc->pc", e1, W).real
        return out.reshape(x.shape[:-1] + (3,))

    def jacobian(self, x, alpha: int = 0) -> np.ndarray:
        """In-plane gradient Du[a, b] = d u_a / d x_b, shape (..., 2, 2)."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        G = self.frequencies()
        c = self.flat(alpha)[:, :2]
        ph = np.exp(1j * flat @ G.T)
        Du = np.einsum("pn,na,nb->pab", 1j * ph, c, G).real
        return Du.reshape(x.shape[:-1] + (2, 2))

    def project(self, x, weights) -> np.ndarray:
        """S[n, c] = sum_p weights[p, c] exp(i G_n . x_p), shaped like one sublattice block."""
        flat = np.asarray(x, float).reshape(-1, 2)
        w = np.asarray(weights, float).reshape(-1, 3)
        K = self.coeffs.shape[1]
        S = np.zeros((K, K, 3), dtype=complex)
        for a in range(0, len(flat), EVAL_CHUNK):
            e1, e2 = self._phases(flat[a:a + EVAL_CHUNK])
            left = (e1[:, :, None] * w[a:a + EVAL_CHUNK, None, :]).reshape(len(e1), 3 * K)
            S += (left.T @ e2).reshape(K, 3, K).transpose(0, 2, 1)
        return S

    # serialization ---------------------------------------------------------
    def to_records(self, layer: int, labels=None) -> list:
        out = []
        n = self.modes()
        for a in range(self.n_sub):
            modes = []
            for idx, c in zip(n, self.flat(a)):
                if np.any(c != 0):
                    modes.append({"n": [int(idx[0]), int(idx[1])],
                                  "c": [[float(v.real), float(v.imag)] for v in c]})
            label = labels[a] if labels else str(a)
            out.append({"layer": layer, "sublattice": label, "modes": modes})
        return out


def field_from_records(geom: BilayerGeometry, records: list, layer: int, labels=None, n_cut: int | None = None) -> DisplacementField:
    """Collect the records of one layer into a field (missing coefficients are zero)."""
    labels = list(labels) if labels else ["A"]
    mine = [r for r in records if int(r["layer"]) == layer]
    need = max([max(abs(m["n"][0]), abs(m["n"][1])) for r in mine for m in r["modes"]] + [0])
    n_cut = max(need, n_cut or 0)
    field = DisplacementField.zeros(geom, n_cut, len(labels))
    for r in mine:
        lab = str(r.get("sublattice", labels[0]))
        subs = range(len(labels)) if lab in ("*", "all") else [labels.index(lab) if lab in labels else int(lab)]
        for m in r["modes"]:
            c = np.array([complex(re, im) for re, im in m["c"]])
            for a in subs:
                field.coeffs[a, m["n"][0] + n_cut, m["n"][1] + n_cut] = c
    return field


def load_displacements(path, geom: BilayerGeometry, labels=None, n_cut: int | None = None):
    """Read a displacement JSON (one record or a list) into a (u1, u2) pair."""
    data = json.loads(Path(path).read_text())
    records = data if isinstance(data, list) else data.get("fields", [data])
    labels = labels or {1: ["A"], 2: ["A"]}
    return tuple(field_from_records(geom, records, j, labels[j], n_cut) for j in (1, 2))


def save_displacements(path, pair, labels=None) -> None:
    labels = labels or {1: None, 2: None}
    records = pair[0].to_records(1, labels[1]) + pair[1].to_records(2, labels[2])
    Path(path).write_text(json.dumps(records, indent=1))
