"""Experiment configuration, convergence records and rate fitting."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateFit, ParseError, ValidationError

KINDS = ("geometry", "dirichlet", "diophantine", "converge", "misfit", "energy", "relax", "profile")

# kind-specific defaults; every key listed here is also the set of accepted keys
DEFAULTS = {
    "geometry": {"n_max": 16, "commensuration_tol": 1e-9},
    "dirichlet": {"N_list": [1, 5, 20], "modes": [[1, 0], [0, 1], [1, 1], [2, -1]], "layer": 1},
    "diophantine": {"sigma": 1.15, "n_max": 64, "nested": [8, 16, 32, 64]},
    "converge": {"observable": "random_fourier", "mode": [1, 0], "half_width": 3, "layer": 1,
                 "N_list": [8, 16, 32, 64, 128], "grid": 128, "sigma": 1.15, "s": 1.85, "n_max": 64,
                 "z_offset_angstrom": 3.35, "rel_tol": 1e-12},
    "misfit": {"grid": 64, "layer": 1, "z_offset_angstrom": 3.35, "rel_tol": 1e-12},
    "energy": {"N": None, "grid": 64, "z_offset_angstrom": 3.35, "rel_tol": 1e-12, "check": False},
    "relax": {"n_cut": 6, "grid": 64, "max_iter": 500, "tol": 1e-6, "backtrack": 0.5, "armijo": 1e-4,
              "max_move_angstrom": 1.0, "relax_z": False, "report_epsilon": True,
              "z_offset_angstrom": 3.35, "rel_tol": 1e-10},
    "profile": {"p0_moire": [0.0, 0.0], "p1_moire": [1.0, 1.0], "samples": 201},
}

NEEDS_POTENTIAL = {"misfit", "energy", "relax"}
OBSERVABLES = ("plane_wave", "random_fourier", "interlayer")


@dataclass
class ExperimentConfig:
    kind: str
    geometry: Path | dict
    potential: Path | dict | None = None
    displacements: Path | None = None
    moduli: dict = field(default_factory=lambda: {"lambda_mev": 37950.0, "mu_mev": 47352.0})
    params: dict = field(default_factory=dict)
    output_dir: Path = Path("out")
    seed: int = 0
    source: str = ""

    def input_files(self) -> dict:
        out = {}
        for name in ("geometry", "potential", "displacements"):
            value = getattr(self, name)
            if isinstance(value, Path):
                out[name] = value
        return out


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(text, message, path):
    return ValidationError(message, path, _line_of(text, path.split(".")[-1]))


def _resolve(value, base: Path):
    if isinstance(value, dict):
        return value
    p = Path(value)
    return p if p.is_absolute() else base / p


def parse_config(text: str, base_dir=None, kind: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a JSON experiment description.

    ``kind`` and ``overrides`` (top-level keys, e.g. from command-line flags)
    take precedence over the document.  Relative paths resolve against
    ``base_dir``.
    """
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ParseError("top level must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    kind = kind or data.get("kind")
    if kind is None:
        raise _fail(text, "experiment kind is required", "kind")
    if kind not in KINDS:
        raise _fail(text, f"unknown experiment kind '{kind}'", "kind")
    if data.get("kind") not in (None, kind):
        raise _fail(text, f"config is for '{data['kind']}', not '{kind}'", "kind")

    params = dict(DEFAULTS[kind])
    given = data.get("params", {}) or {}
    if not isinstance(given, dict):
        raise _fail(text, "params must be an object", "params")
    unknown = sorted(set(given) - set(params))
    if unknown:
        raise _fail(text, f"unknown parameter '{unknown[0]}'", f"params.{unknown[0]}")
    params.update(given)
    _validate_params(text, kind, params)

    if "geometry" not in data:
        raise _fail(text, "geometry is required", "geometry")
    cfg = ExperimentConfig(kind=kind, geometry=_resolve(data["geometry"], base), params=params,
                           output_dir=_resolve(data.get("output_dir", "out"), base),
                           seed=int(data.get("seed", 0)), source=text)
    needs_pot = kind in NEEDS_POTENTIAL or (kind == "converge" and params["observable"] == "interlayer")
    if data.get("potential") is not None:
        cfg.potential = _resolve(data["potential"], base)
    elif needs_pot:
        raise _fail(text, f"{kind} experiment needs a potential", "potential")
    if data.get("displacements") is not None:
        cfg.displacements = _resolve(data["displacements"], base)
    if data.get("moduli") is not None:
        m = data["moduli"]
        if not isinstance(m, dict):
            m = _load_json(text, _resolve(m, base), "moduli")
        cfg.moduli = m
    _check_inputs(text, cfg)
    return cfg


def _validate_params(text, kind, p):
    def need(cond, message, key):
        if not cond:
            raise _fail(text, message, f"params.{key}")

    if "N_list" in p:
        Ns = p["N_list"]
        need(isinstance(Ns, list) and len(Ns) > 0 and all(isinstance(n, int) and n >= 0 for n in Ns),
             "N list must be nonnegative integers", "N_list")
        need(all(b > a for a, b in zip(Ns, Ns[1:])), "N list not increasing", "N_list")
    for key in ("grid", "samples"):
        if key in p:
            need(isinstance(p[key], int) and p[key] >= 2, f"{key} must be an integer >= 2", key)
    for key in ("n_max", "n_cut", "max_iter", "half_width"):
        if key in p:
            need(isinstance(p[key], int) and p[key] >= (0 if key in ("n_cut", "half_width", "max_iter") else 1),
                 f"{key} out of range", key)
    if "sigma" in p:
        need(p["sigma"] > 1, "sigma must exceed 1", "sigma")
    if "s" in p:
        need(p["s"] > 1, "s must exceed 1", "s")
    for key in ("rel_tol", "tol", "commensuration_tol"):
        if key in p:
            need(0 < p[key] < 1, f"{key} must lie in (0, 1)", key)
    for key in ("backtrack", "armijo"):
        if key in p:
            need(0 < p[key] < 1, f"{key} must lie in (0, 1)", key)
    if "layer" in p:
        need(p["layer"] in (1, 2), "layer must be 1 or 2", "layer")
    if "nested" in p:
        ns = p["nested"]
        need(all(b > a for a, b in zip(ns, ns[1:])) and min(ns) >= 1, "nested n_max list not increasing", "nested")
    if kind == "converge":
        need(p["observable"] in OBSERVABLES, f"observable must be one of {', '.join(OBSERVABLES)}", "observable")
    if kind == "energy" and p["N"] is not None:
        need(isinstance(p["N"], int) and p["N"] >= 0, "N must be a nonnegative integer", "N")


def _load_json(text, path: Path, name: str):
    if not path.exists():
        raise _fail(text, f"file not found: {path}", name)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise _fail(text, f"{path} is not valid JSON ({exc.msg}, line {exc.lineno})", name) from exc


def _check_inputs(text, cfg: ExperimentConfig):
    """Referenced files must exist and parse."""
    from .lattice import geometry_from_dict
    from .potentials import potential_from_dict

    geo = cfg.geometry if isinstance(cfg.geometry, dict) else _load_json(text, cfg.geometry, "geometry")
    try:
        geometry_from_dict(geo)
    except (KeyError, ValueError, TypeError) as exc:
        raise _fail(text, f"geometry does not parse: {exc}", "geometry") from exc
    if cfg.potential is not None:
        pot = cfg.potential if isinstance(cfg.potential, dict) else _load_json(text, cfg.potential, "potential")
        base = cfg.potential.parent if isinstance(cfg.potential, Path) else None
        try:
            potential_from_dict(pot, base)
        except (KeyError, ValueError, TypeError, OSError) as exc:
            raise _fail(text, f"potential does not parse: {exc}", "potential") from exc
    if cfg.displacements is not None:
        _load_json(text, cfg.displacements, "displacements")
    for key in ("lambda_mev", "mu_mev"):
        if key not in cfg.moduli:
            raise _fail(text, f"moduli need '{key}'", f"moduli.{key}")


# --- convergence records -----------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceRecord:
    N: int
    value: complex
    reference: complex
    theoretical_bound: float | None = None

    def __post_init__(self):
        if self.N < 0:
            raise ValueError("N must be nonnegative")

    @property
    def abs_error(self) -> float:
        return float(abs(complex(self.value) - complex(self.reference)))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    max_residual: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "max_residual": self.max_residual, "degenerate": self.degenerate}


UNDERFLOW = np.finfo(float).tiny


def fit_rate(records, strict: bool = False) -> RateFit:
    """Least-squares fit of log(abs_error) against log(2N + 1).

    Errors at or below the smallest normal float mean the sequence has
    already converged; this is reported as slope -inf with the degenerate
    flag, or raised as DegenerateFit when ``strict``.
    """
    records = list(records)
    if len(records) < 3:
        raise DegenerateFit(f"need at least 3 records, got {len(records)}")
    err = np.array([r.abs_error for r in records])
    if np.any(err <= UNDERFLOW):
        if strict:
            raise DegenerateFit("errors underflow; the sequence has already converged")
        return RateFit(-np.inf, np.nan, np.nan, True)
    X = np.log(2 * np.array([r.N for r in records], dtype=float) + 1)
    Y = np.log(err)
    design = np.stack([X, np.ones_like(X)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(design, Y, rcond=None)
    resid = Y - design @ np.array([slope, intercept])
    return RateFit(float(slope), float(intercept), float(np.abs(resid).max()))
