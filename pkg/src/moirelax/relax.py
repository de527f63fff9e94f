"""Gradient-descent relaxation of the elastic plus interlayer energy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import (DEFAULT_Z_OFFSET, ElasticModuli, cauchy_born_gradient,
                     cauchy_born_spectral, interaction_radius, InterlayerSum,
                     _pair_margin)
from .ergodic import cell_grid
from .errors import LineSearchStalled
from .fields import DisplacementField, mode_indices
from .lattice import BilayerGeometry, SublatticeSpec, disregistry_matrix, layer_frac
from .potentials import PairPotential


@dataclass(frozen=True)
class ParamLayout:
    """Real parameters of a Hermitian field shared by all sublattices of a layer.

    Per layer and active component: Re c_0, then Re c_n and Im c_n for one
    representative n of every +-n pair.
    """

    n_cut: int
    components: tuple = (0, 1)

    @property
    def half(self) -> np.ndarray:
        n = mode_indices(self.n_cut)
        return np.flatnonzero((n[:, 0] > 0) | ((n[:, 0] == 0) & (n[:, 1] > 0)))

    @property
    def center(self) -> int:
        K = 2 * self.n_cut + 1
        return (K * K) // 2

    @property
    def size_per_layer(self) -> int:
        return len(self.components) * (1 + 2 * len(self.half))

    @property
    def size(self) -> int:
        return 2 * self.size_per_layer

    def _split(self, vec):
        nc, nh = len(self.components), len(self.half)
        a0 = vec[:nc]
        a = vec[nc:nc + nh * nc].reshape(nh, nc)
        b = vec[nc + nh * nc:].reshape(nh, nc)
        return a0, a, b

    def to_fields(self, vec, geom: BilayerGeometry, n_sub=(1, 1), base=None):
        """Fields from parameters; inactive components are copied from ``base``."""
        vec = np.asarray(vec, dtype=float)
        K = 2 * self.n_cut + 1
        out = []
        for j in (0, 1):
            a0, a, b = self._split(vec[j * self.size_per_layer:(j + 1) * self.size_per_layer])
            if base is not None:
                flat = base[j].flat(0).copy()
            else:
                flat = np.zeros((K * K, 3), dtype=complex)
            comps = list(self.components)
            flat[self.center, comps] = a0
            flat[self.half[:, None], comps] = a + 1j * b
            flat[(K * K - 1 - self.half)[:, None], comps] = a - 1j * b
            coeffs = np.repeat(flat.reshape(1, K, K, 3), n_sub[j], axis=0)
            out.append(DisplacementField(geom, coeffs))
        return tuple(out)

    def from_fields(self, pair) -> np.ndarray:
        parts = []
        comps = list(self.components)
        for u in pair:
            flat = u.flat(0)
            parts += [flat[self.center, comps].real,
                      flat[self.half][:, comps].real.ravel(),
                      flat[self.half][:, comps].imag.ravel()]
        return np.concatenate(parts)

    def gradient_from_projection(self, S_pair) -> np.ndarray:
        """Parameter gradient from per-layer projections S (summed over sublattices)."""
        parts = []
        comps = list(self.components)
        for S in S_pair:
            flat = np.asarray(S).sum(axis=0).reshape(-1, 3)
            parts += [flat[self.center, comps].real,
                      2 * flat[self.half][:, comps].real.ravel(),
                      -2 * flat[self.half][:, comps].imag.ravel()]
        return np.concatenate(parts)


class RelaxProblem:
    """Total energy e = sum_j E_el(u_j) + 1/2 sum_j <Phi_j> with both quadrature routes."""

    def __init__(self, geom: BilayerGeometry, v: PairPotential, moduli, n_cut: int, grid: int = 64,
                 sub: SublatticeSpec | None = None, z_offset: float = DEFAULT_Z_OFFSET,
                 rel_tol: float = 1e-10, components=(0, 1), base=None, margin: float = 2.0):
        self.geom, self.v = geom, v
        self.sub = sub or SublatticeSpec()
        if isinstance(moduli, ElasticModuli):
            moduli = (moduli, moduli)
        self.moduli = moduli
        self.layout = ParamLayout(n_cut, tuple(components))
        self.grid, self.z_offset, self.rel_tol = grid, z_offset, rel_tol
        self.base = base
        self.extra_margin = margin
        self.plans = None
        self.evaluations = 0

    def _ensure_plans(self, pair):
        margin, uz = _pair_margin(pair, self.sub)
        if self.plans is not None and margin <= self.plans[0].margin:
            return
        margin += self.extra_margin
        Rc = interaction_radius(self.v, self.rel_tol, self.z_offset, uz + 1.0)
        x = cell_grid(self.geom.A_M, self.grid)
        self.plans = [InterlayerSum(self.geom, self.sub, self.v, j, x, self.z_offset, Rc, margin) for j in (1, 2)]

    def fields(self, params):
        n_sub = (self.sub.count(1), self.sub.count(2))
        return self.layout.to_fields(params, self.geom, n_sub, self.base)

    def energy_parts(self, pair) -> dict:
        el = {j: cauchy_born_spectral(pair[j - 1], self.moduli[j - 1]) for j in (1, 2)}
        inter = {1: 0.0, 2: 0.0}
        if not self.v.is_zero:
            self._ensure_plans(pair)
            for j, plan in zip((1, 2), self.plans):
                inter[j] = 0.5 * plan.energy(pair[j - 1], pair[2 - j])
        return {"elastic": el, "interlayer": inter}

    def energy(self, params) -> float:
        self.evaluations += 1
        parts = self.energy_parts(self.fields(params))
        return float(sum(parts["elastic"].values()) + sum(parts["interlayer"].values()))

    def energy_and_gradient(self, params):
        pair = self.fields(params)
        E = sum(cauchy_born_spectral(pair[j], self.moduli[j]) for j in (0, 1))
        S = [cauchy_born_gradient(pair[j], self.moduli[j]) for j in (0, 1)]
        if not self.v.is_zero:
            self._ensure_plans(pair)
            for j, plan in zip((1, 2), self.plans):
                e, sj, sk = plan.energy_and_gradient(pair[j - 1], pair[2 - j])
                E += 0.5 * e
                S[j - 1] = S[j - 1] + 0.5 * sj
                S[2 - j] = S[2 - j] + 0.5 * sk
        return float(E), self.layout.gradient_from_projection(S)


def energy_gradient(geom: BilayerGeometry, pair, v: PairPotential, moduli, n: int = 64,
                    sub: SublatticeSpec | None = None, z_offset: float = DEFAULT_Z_OFFSET,
                    rel_tol: float = 1e-10, components=(0, 1, 2)):
    """Total energy and its gradient with respect to the real parameters of
    :class:`ParamLayout` (all sublattices of a layer share coefficients)."""
    n_cut = max(pair[0].n_cut, pair[1].n_cut)
    pair = tuple(_pad(u, n_cut) for u in pair)
    prob = RelaxProblem(geom, v, moduli, n_cut, n, sub, z_offset, rel_tol, components, base=pair)
    params = prob.layout.from_fields(pair)
    E, g = prob.energy_and_gradient(params)
    return E, g, prob


def _pad(u: DisplacementField, n_cut: int) -> DisplacementField:
    if u.n_cut == n_cut:
        return u
    out = DisplacementField.zeros(u.geometry, n_cut, u.n_sub)
    d = n_cut - u.n_cut
    K = 2 * u.n_cut + 1
    out.coeffs[:, d:d + K, d:d + K] = u.coeffs
    return out


@dataclass
class RelaxConfig:
    n_cut: int = 6
    grid: int = 64
    max_iter: int = 500
    tol: float = 1e-6
    backtrack: float = 0.5
    armijo: float = 1e-4
    initial_step: float = 1.0
    min_step: float = 1e-30
    max_move: float = 1.0
    relax_z: bool = False
    report_epsilon: bool = True
    rel_tol: float = 1e-10

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if not 0 < self.armijo < 1:
            raise ValueError("sufficient-decrease constant must lie in (0, 1)")
        if not self.max_move > 0:
            raise ValueError("max_move must be positive")


@dataclass
class RelaxTrace:
    energies: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    final: tuple = None
    converged: bool = False
    epsilon: float | None = None
    evaluations: int = 0

    def rows(self):
        for i, (e, g, s) in enumerate(zip(self.energies, self.grad_norms, self.steps)):
            yield i, e, g, s

    def max_in_plane_displacement(self, grid: int = 64) -> float:
        return float(max(np.hypot(*u.sup_norm(grid)[:2]) for u in self.final))


def relax(geom: BilayerGeometry, u0, v: PairPotential, moduli, config: RelaxConfig | None = None,
          sub: SublatticeSpec | None = None, z_offset: float = DEFAULT_Z_OFFSET) -> RelaxTrace:
    """Backtracking (Armijo) gradient descent over the Fourier coefficients.

    Each accepted step satisfies E(x - t g) <= E(x) - armijo * t * |g|^2; the
    trial step starts at twice the previous accepted step, capped so that the
    coefficients move by at most ``max_move`` (Angstrom, Euclidean norm).
    """
    config = config or RelaxConfig()
    sub = sub or SublatticeSpec()
    if u0 is None:
        u0 = (DisplacementField.zeros(geom, config.n_cut, sub.count(1)),
              DisplacementField.zeros(geom, config.n_cut, sub.count(2)))
    if max(u0[0].n_cut, u0[1].n_cut) > config.n_cut:
        raise ValueError("initial field exceeds the mode cutoff")
    u0 = tuple(_pad(u, config.n_cut) for u in u0)
    comps = (0, 1, 2) if config.relax_z else (0, 1)
    prob = RelaxProblem(geom, v, moduli, config.n_cut, config.grid, sub, z_offset,
                        config.rel_tol, comps, base=u0)
    x = prob.layout.from_fields(u0)
    E, g = prob.energy_and_gradient(x)
    trace = RelaxTrace()
    if config.report_epsilon:
        trace.epsilon = float(2 * np.sin(abs(geom.theta) / 2))
    step = config.initial_step
    for it in range(config.max_iter + 1):
        gn = float(np.linalg.norm(g))
        trace.energies.append(E)
        trace.grad_norms.append(gn)
        if gn < config.tol:
            trace.steps.append(0.0)
            trace.converged = True
            break
        if it == config.max_iter:
            trace.steps.append(0.0)
            break
        t = min(step, config.max_move / gn)
        while True:
            trial = x - t * g
            E_trial = prob.energy(trial)
            if E_trial <= E - config.armijo * t * gn * gn:
                break
            t *= config.backtrack
            if t < config.min_step:
                raise LineSearchStalled(f"step fell below {config.min_step:g} at iteration {it}")
        trace.steps.append(t)
        x = trial
        E, g = prob.energy_and_gradient(x)
        step = 2 * t
    trace.final = prob.fields(x)
    trace.evaluations = prob.evaluations
    return trace


def domain_wall_profile(geom: BilayerGeometry, pair, p0, p1, k: int = 101, alpha: int = 0) -> dict:
    """Samples of the modulated disregistry D_{1->2} x + u1(x) - u2(x) along p0 -> p1."""
    if k < 2:
        raise ValueError("need at least two samples")
    t = np.linspace(0.0, 1.0, k)
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    x = p0 + t[:, None] * (p1 - p0)
    D = disregistry_matrix(geom, 1)
    curve = x @ D.T
    if pair is not None:
        curve = curve + pair[0].evaluate(x, alpha)[:, :2] - pair[1].evaluate(x, alpha)[:, :2]
    frac = np.linalg.solve(geom.A2, layer_frac(geom, curve, 2).frac.T).T
    return {"t": t, "x": x, "disregistry": curve, "layer2_coords": frac}


def max_slope(profile: dict) -> float:
    d = np.diff(profile["disregistry"], axis=0)
    dt = np.diff(profile["t"])
    return float(np.max(np.linalg.norm(d, axis=1) / dt))
