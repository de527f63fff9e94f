"""Energy densities: misfit, monolayer stencils, interlayer sums and limits, elasticity."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._reduce import chunked_sum
from .ergodic import cell_grid, lattice_window
from .errors import QuadratureNotConverged
from .fields import DisplacementField
from .lattice import (BilayerGeometry, SublatticeSpec, disregistry_matrix,
                      layer_frac, moire_frac)
from .potentials import PairPotential, cutoff_radius

DEFAULT_REL_TOL = 1e-12
DEFAULT_Z_OFFSET = 3.35
POINT_CHUNK = 1024


def _z_positions(z_offset: float) -> dict:
    return {1: 0.0, 2: float(z_offset)}


def _cell_offsets(basis: np.ndarray, reach: float) -> np.ndarray:
    """Integer m with |basis (m - (1/2, 1/2))| <= reach + circumradius of the cell."""
    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]]) - 0.5
    circ = np.linalg.norm(corners @ basis.T, axis=1).max()
    lim = reach + circ
    smin = np.linalg.svd(basis, compute_uv=False).min()
    w = int(np.ceil(lim / smin)) + 2
    r = np.arange(-w, w + 1)
    m = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
    keep = np.linalg.norm((m - 0.5) @ basis.T, axis=1) <= lim
    return m[keep]


def interaction_radius(v: PairPotential, rel_tol: float, z_offset: float, uz_sup: float = 0.0) -> float:
    if v.is_zero:
        return 0.0
    return cutoff_radius(v, rel_tol, abs(z_offset) + uz_sup)


# --- misfit ------------------------------------------------------------------

def misfit_energy(geom: BilayerGeometry, v: PairPotential, x, j: int = 1,
                  z_offset: float = DEFAULT_Z_OFFSET, rel_tol: float = DEFAULT_REL_TOL,
                  radius: float | None = None) -> np.ndarray:
    """(1/|Gamma_j|) sum over R in layer 3-j with |R - x| <= R_c of v(x - R, z_offset)."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 2)
    if v.is_zero:
        return np.zeros(x.shape[:-1])
    Ak = geom.layer_basis(3 - j)
    Rc = interaction_radius(v, rel_tol, z_offset) if radius is None else radius
    m = _cell_offsets(Ak, Rc)
    dec = layer_frac(geom, flat, 3 - j)
    out = np.empty(len(flat))
    for a in range(0, len(flat), POINT_CHUNK):
        d = dec.frac[a:a + POINT_CHUNK, None, :] - (m @ Ak.T)[None]
        rh = np.linalg.norm(d, axis=-1)
        vals = np.where(rh <= Rc, v.profile(rh, z_offset), 0.0)
        out[a:a + POINT_CHUNK] = vals.sum(axis=1)
    return (out / geom.layer_area(j)).reshape(x.shape[:-1])


def stacking_points(geom: BilayerGeometry, j: int = 1) -> dict:
    """AA, AB and BA disregistry points in the cell of layer 3 - j."""
    Ak = geom.layer_basis(3 - j)
    return {"AA": np.zeros(2), "AB": Ak @ np.array([1, 1]) / 3, "BA": Ak @ np.array([2, 2]) / 3}


# --- monolayer stencils ----------------------------------------------------------

@dataclass
class PairStencil:
    """Pair-difference monolayer interaction sum_{R'} [w(R' + du) - w(R')].

    Offsets are all in-layer lattice vectors (plus sublattice shifts) with
    length at most ``cutoff``, excluding the site itself.
    """

    w: PairPotential
    cutoff: float

    def offsets(self, basis: np.ndarray, tau: np.ndarray):
        """List of (alpha, alpha', m, vector) with vector = basis m + tau_alpha' - tau_alpha."""
        m = _cell_offsets(basis, self.cutoff + np.ptp(tau, axis=0).max(initial=0.0) + 1.0)
        out = []
        for a in range(len(tau)):
            for b in range(len(tau)):
                vec = m @ basis.T + tau[b] - tau[a]
                keep = np.linalg.norm(vec, axis=1) <= self.cutoff
                if a == b:
                    keep &= np.any(m != 0, axis=1)
                out.append((a, b, m[keep], vec[keep]))
        return out


def _stencil_site_sum(stencil: PairStencil, u: DisplacementField, basis, tau, x) -> float:
    """sum over points x, sublattices and stencil offsets of the energy difference."""
    total = 0.0
    if stencil.w.is_zero:
        return 0.0
    for a, b, m, vec in stencil.offsets(basis, tau):
        if len(vec) == 0:
            continue
        ua = u.evaluate(x, a)
        shifted = x[:, None, :] + (m @ basis.T)[None]
        ub = u.evaluate(moire_frac(u.geometry, shifted.reshape(-1, 2)).frac, b).reshape(len(x), len(m), 3)
        rest = np.concatenate([vec, np.zeros((len(vec), 1))], axis=1)
        arg = rest[None] + ub - ua[:, None, :]
        total += float(np.sum(stencil.w(arg)) - len(x) * np.sum(stencil.w(rest)))
    return total


def monolayer_energy_N(geom: BilayerGeometry, j: int, u: DisplacementField, stencil: PairStencil,
                       N: int, sub: SublatticeSpec | None = None, gamma=None) -> float:
    sub = sub or SublatticeSpec()
    gamma = sub.gamma[j] if gamma is None else gamma
    basis = geom.layer_basis(j)
    pts = moire_frac(geom, lattice_window(basis, N, gamma)).frac
    total = chunked_sum(lambda a, b: _stencil_site_sum(stencil, u, basis, sub.tau[j], pts[a:b]), len(pts))
    return total / (geom.layer_area(j) * len(pts))


def monolayer_energy_limit(geom: BilayerGeometry, j: int, u: DisplacementField, stencil: PairStencil,
                           n: int = 64, sub: SublatticeSpec | None = None) -> float:
    sub = sub or SublatticeSpec()
    basis = geom.layer_basis(j)
    x = cell_grid(geom.A_M, n)
    total = chunked_sum(lambda a, b: _stencil_site_sum(stencil, u, basis, sub.tau[j], x[a:b]), len(x))
    return total / (geom.layer_area(j) * len(x))


# --- interlayer --------------------------------------------------------------------

class InterlayerSum:
    """Weighted sum over sample points x of the diagonal interlayer site potential.

    For each x the layer disregistry y = D x + A_k A_j^{-1} gamma_j - gamma_k
    (k = 3 - j) is reduced to the cell of layer k, and the potential is summed
    over a fixed set of lattice offsets m around that cell.  The same kernel
    gives the finite-N energy (x = moire parts of lattice sites) and the
    limit (x on a moire-cell grid).
    """

    def __init__(self, geom: BilayerGeometry, sub: SublatticeSpec, v: PairPotential, j: int,
                 x: np.ndarray, z_offset: float, radius: float, margin: float):
        self.geom, self.sub, self.v, self.j = geom, sub, v, j
        k = 3 - j
        self.k = k
        Aj, Ak = geom.layer_basis(j), geom.layer_basis(k)
        D = disregistry_matrix(geom, j)
        shift = Ak @ np.linalg.solve(Aj, sub.gamma[j]) - sub.gamma[k]
        self.x = np.asarray(x, dtype=float).reshape(-1, 2)
        self.y = layer_frac(geom, self.x @ D.T + shift, k).frac
        self.m = _cell_offsets(Ak, radius + margin)
        self.R = self.m @ Ak.T
        self.radius, self.margin = radius, margin
        zpos = _z_positions(z_offset)
        self.dz = zpos[j] - zpos[k]
        self.norm = 0.5 / (geom.layer_area(j) * len(self.x))
        self._lattice_phase = {}

    @property
    def tiles(self) -> int:
        return len(self.m)

    def _phase_table(self, n_cut: int) -> np.ndarray:
        """exp(i G_n . R_m) for the offsets, shape (K^2, S)."""
        if n_cut not in self._lattice_phase:
            from .fields import mode_indices
            G = mode_indices(n_cut) @ self.geom.B_M.T
            self._lattice_phase[n_cut] = np.exp(1j * G @ self.R.T)
        return self._lattice_phase[n_cut]

    def _neighbor_u(self, uk: DisplacementField, beta: int, rows: slice) -> np.ndarray:
        """u_k(x - y + R_m, beta) for the rows, shape (p, S, 3)."""
        p = self.x[rows] - self.y[rows]
        if uk.is_zero():
            return np.zeros((len(p), len(self.m), 3))
        G = uk.frequencies()
        ph = np.exp(1j * p @ G.T)
        Psi = self._phase_table(uk.n_cut)
        c = uk.flat(beta)
        block = (c.T[:, :, None] * Psi[None]).transpose(1, 0, 2).reshape(len(G), -1)
        vals = (ph @ block).real.reshape(len(p), 3, len(self.m))
        return vals.transpose(0, 2, 1)

    def _arguments(self, uj, uk, alpha, beta, rows):
        tau = self.sub.tau[self.j][alpha] - self.sub.tau[self.k][beta]
        base = self.y[rows, None, :] - self.R[None] + tau
        arg = np.concatenate([base, np.full(base.shape[:2] + (1,), self.dz)], axis=-1)
        if not uj.is_zero():
            arg += uj.evaluate(self.x[rows], alpha)[:, None, :]
        arg -= self._neighbor_u(uk, beta, rows)
        return arg

    def energy(self, uj: DisplacementField, uk: DisplacementField) -> float:
        if self.v.is_zero:
            return 0.0

        def part(a, b):
            rows = slice(a, b)
            s = 0.0
            for alpha in range(self.sub.count(self.j)):
                for beta in range(self.sub.count(self.k)):
                    s += float(np.sum(self.v(self._arguments(uj, uk, alpha, beta, rows))))
            return s

        return self.norm * chunked_sum(part, len(self.x), POINT_CHUNK)

    def energy_and_gradient(self, uj: DisplacementField, uk: DisplacementField):
        """Energy and the projections S[n, c] = sum grad * exp(i G_n . position) per
        sublattice for both fields (shapes like the coefficient arrays)."""
        Kj, Kk = uj.coeffs.shape[1], uk.coeffs.shape[1]
        Sj = np.zeros((uj.n_sub, Kj, Kj, 3), dtype=complex)
        Sk = np.zeros((uk.n_sub, Kk, Kk, 3), dtype=complex)
        if self.v.is_zero:
            return 0.0, Sj, Sk
        Gk = uk.frequencies()
        Psi = self._phase_table(uk.n_cut)

        def part(a, b):
            rows = slice(a, b)
            e = 0.0
            sj = np.zeros_like(Sj)
            sk = np.zeros_like(Sk)
            for alpha in range(self.sub.count(self.j)):
                for beta in range(self.sub.count(self.k)):
                    arg = self._arguments(uj, uk, alpha, beta, rows)
                    e += float(np.sum(self.v(arg)))
                    g = self.v.gradient(arg) * self.norm
                    sj[alpha] += uj.project(self.x[rows], g.sum(axis=1))
                    ph = np.exp(1j * (self.x[rows] - self.y[rows]) @ Gk.T)
                    T = ph.T @ g.reshape(len(ph), -1)
                    T = T.reshape(len(Gk), len(self.m), 3)
                    sk[beta] -= np.einsum("nm,nmc->nc", Psi, T).reshape(Kk, Kk, 3)
            return np.array([e], dtype=complex), sj, sk

        parts = [part(a, min(a + POINT_CHUNK, len(self.x))) for a in range(0, len(self.x), POINT_CHUNK)]
        from ._reduce import _tree
        e = _tree([p[0] for p in parts])[0].real
        return self.norm * e, _tree([p[1] for p in parts]), _tree([p[2] for p in parts])


def _pair_margin(pair, sub: SublatticeSpec) -> tuple[float, float]:
    """(in-plane margin, vertical extent of u) for truncation."""
    b1, b2 = pair[0].sup_bound(), pair[1].sup_bound()
    h = float(np.hypot(b1[0], b1[1]) + np.hypot(b2[0], b2[1]))
    return 2 * (h + sub.max_shift_distance()), float(b1[2] + b2[2])


def _resolve_pair(geom, pair, sub):
    sub = sub or SublatticeSpec()
    if pair is None:
        pair = (DisplacementField.zeros(geom, 0, sub.count(1)), DisplacementField.zeros(geom, 0, sub.count(2)))
    return pair, sub


def interlayer_energy_N(geom: BilayerGeometry, pair, v: PairPotential, N: int, j: int = 1,
                        sub: SublatticeSpec | None = None, z_offset: float = DEFAULT_Z_OFFSET,
                        rel_tol: float = DEFAULT_REL_TOL, radius: float | None = None) -> float:
    """Finite-N interlayer energy density seen from layer j."""
    pair, sub = _resolve_pair(geom, pair, sub)
    if v.is_zero:
        return 0.0
    margin, uz = _pair_margin(pair, sub)
    Rc = interaction_radius(v, rel_tol, z_offset, uz) if radius is None else radius
    sites = lattice_window(geom.layer_basis(j), N, sub.gamma[j])
    x = moire_frac(geom, sites).frac
    plan = InterlayerSum(geom, sub, v, j, x, z_offset, Rc, margin)
    uj, uk = pair[j - 1], pair[2 - j]
    return plan.energy(uj, uk)


def interlayer_plan(geom: BilayerGeometry, pair, v: PairPotential, j: int, n: int,
                    sub: SublatticeSpec | None = None, z_offset: float = DEFAULT_Z_OFFSET,
                    rel_tol: float = DEFAULT_REL_TOL, margin: float | None = None) -> InterlayerSum:
    pair, sub = _resolve_pair(geom, pair, sub)
    auto_margin, uz = _pair_margin(pair, sub)
    Rc = interaction_radius(v, rel_tol, z_offset, uz)
    return InterlayerSum(geom, sub, v, j, cell_grid(geom.A_M, n), z_offset, Rc,
                         auto_margin if margin is None else margin)


def interlayer_energy_limit(geom: BilayerGeometry, pair, v: PairPotential, j: int = 1, n: int = 64,
                            sub: SublatticeSpec | None = None, z_offset: float = DEFAULT_Z_OFFSET,
                            rel_tol: float = DEFAULT_REL_TOL, check: bool = False,
                            info: dict | None = None) -> float:
    """Thermodynamic-limit interlayer energy density by moire-cell quadrature.

    The plane integral is split into one periodic quadrature per moire tile;
    each tile corresponds to one lattice offset of layer 3-j.  With ``check``
    the grid is doubled and QuadratureNotConverged raised when the two results
    differ by more than 10 * rel_tol relative.
    """
    pair, sub = _resolve_pair(geom, pair, sub)
    if v.is_zero:
        return 0.0
    plan = interlayer_plan(geom, pair, v, j, n, sub, z_offset, rel_tol)
    uj, uk = pair[j - 1], pair[2 - j]
    e = plan.energy(uj, uk)
    if info is not None:
        info.update({"grid": n, "tiles": plan.tiles, "radius": plan.radius, "margin": plan.margin})
    if check:
        fine = interlayer_plan(geom, pair, v, j, 2 * n, sub, z_offset, rel_tol).energy(uj, uk)
        if abs(fine - e) > 10 * rel_tol * max(abs(fine), 1e-300):
            raise QuadratureNotConverged(f"grid {n} -> {2 * n} changed the energy by {abs(fine - e):.3e}")
        if info is not None:
            info["doubled_grid_change"] = abs(fine - e)
        e = fine
    return e


# --- elasticity --------------------------------------------------------------------

@dataclass(frozen=True)
class ElasticModuli:
    lam: float
    mu: float

    def __post_init__(self):
        if not (self.mu > 0 and self.lam + self.mu > 0):
            raise ValueError("need mu > 0 and lambda + mu > 0")

    @classmethod
    def graphene(cls, per_cell_area: float | None = None) -> "ElasticModuli":
        """Graphene Lame parameters in meV per unit cell, optionally divided by a cell area."""
        lam, mu = 37950.0, 47352.0
        if per_cell_area:
            lam, mu = lam / per_cell_area, mu / per_cell_area
        return cls(lam, mu)


def elastic_density(M, moduli: ElasticModuli):
    """1/2 M : E : M for the isotropic tensor; M may carry leading axes."""
    M = np.asarray(M, dtype=float)
    tr = M[..., 0, 0] + M[..., 1, 1]
    sq = np.sum(M * M, axis=(-2, -1))
    cross = np.sum(M * np.swapaxes(M, -1, -2), axis=(-2, -1))
    return 0.5 * (moduli.lam * tr**2 + moduli.mu * (sq + cross))


def _mean_field(u: DisplacementField) -> DisplacementField:
    if u.n_sub == 1:
        return u
    return DisplacementField(u.geometry, u.coeffs.mean(axis=0, keepdims=True))


def cauchy_born_energy(geom: BilayerGeometry, u: DisplacementField, moduli: ElasticModuli, n: int = 64) -> float:
    """Cell average of 1/2 Du : E : Du for the sublattice-averaged in-plane field."""
    um = _mean_field(u)
    if um.is_zero():
        return 0.0
    x = cell_grid(geom.A_M, n)
    return chunked_sum(lambda a, b: float(np.sum(elastic_density(um.jacobian(x[a:b]), moduli))), len(x)) / len(x)


def cauchy_born_spectral(u: DisplacementField, moduli: ElasticModuli) -> float:
    """Same energy from the coefficients (Parseval), exact for any grid > 2 n_cut."""
    um = _mean_field(u)
    G = um.frequencies()
    c = um.flat(0)[:, :2]
    cg = np.abs(np.sum(c * G, axis=1)) ** 2
    cc = np.sum(np.abs(c) ** 2, axis=1) * np.sum(G * G, axis=1)
    return float(0.5 * np.sum(moduli.lam * cg + moduli.mu * (cc + cg)))


def cauchy_born_gradient(u: DisplacementField, moduli: ElasticModuli) -> np.ndarray:
    """Elastic counterpart of the interlayer projections S_n.

    With c_n = a_n + i b_n on the half set of modes, dE/da_n = 2 Re S_n and
    dE/db_n = -2 Im S_n.
    """
    um = _mean_field(u)
    G = um.frequencies()
    c = um.flat(0)[:, :2]
    cG = np.sum(c * G, axis=1)
    # E = 1/2 sum_n [lam |c.G|^2 + mu (|c|^2 |G|^2 + |c.G|^2)]; derivative wrt
    # Re c_n gives lam Re(c.G) G + mu(|G|^2 Re c + Re(c.G) G), similarly Im.
    g = moduli.lam * cG[:, None] * G + moduli.mu * (np.sum(G * G, axis=1)[:, None] * c + cG[:, None] * G)
    S = np.zeros((um.coeffs.shape[1] ** 2, 3), dtype=complex)
    S[:, :2] = np.conj(g)
    # spread over sublattices: u_mean depends on each sublattice with weight 1/n_sub
    K = u.coeffs.shape[1]
    return np.repeat((S / u.n_sub).reshape(1, K, K, 3), u.n_sub, axis=0)


# --- totals --------------------------------------------------------------------------

@dataclass
class EnergyBreakdown:
    elastic: dict
    interlayer: dict
    monolayer: dict = field(default_factory=lambda: {1: 0.0, 2: 0.0})
    metadata: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(sum(self.elastic.values()) + sum(self.interlayer.values()) + sum(self.monolayer.values()))

    def to_dict(self) -> dict:
        out = {}
        for j in (1, 2):
            out[f"layer{j}"] = {"e_mono": self.monolayer[j], "e_inter": self.interlayer[j], "e_elastic": self.elastic[j]}
        out["total"] = self.total
        out["metadata"] = self.metadata
        return out


def total_energy(geom: BilayerGeometry, pair, v: PairPotential, moduli, n: int = 64,
                 sub: SublatticeSpec | None = None, z_offset: float = DEFAULT_Z_OFFSET,
                 rel_tol: float = DEFAULT_REL_TOL) -> EnergyBreakdown:
    """Elastic energy of both layers plus half of each layer's interlayer limit.

    Each layer's interlayer share is (1/2) times its cell-averaged site
    potential, so the two shares add up to the interlayer energy.
    """
    pair, sub = _resolve_pair(geom, pair, sub)
    if isinstance(moduli, ElasticModuli):
        moduli = (moduli, moduli)
    elastic = {j: cauchy_born_energy(geom, pair[j - 1], moduli[j - 1], n) for j in (1, 2)}
    inter, meta = {}, {"grid": n, "rel_tol": rel_tol, "z_offset": z_offset}
    for j in (1, 2):
        info = {}
        inter[j] = 0.5 * interlayer_energy_limit(geom, pair, v, j, n, sub, z_offset, rel_tol, info=info)
        meta[f"layer{j}"] = info
    return EnergyBreakdown(elastic, inter, metadata=meta)
