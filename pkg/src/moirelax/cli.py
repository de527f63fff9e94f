"""Command-line harness: run one experiment and write CSV/JSON artifacts."""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._reduce import get_threads, set_threads
from .config import KINDS, ConvergenceRecord, ExperimentConfig, fit_rate, parse_config
from .diophantine import diophantine_scan, error_prefactor, fourier_decay_sup
from .energy import (ElasticModuli, interlayer_energy_limit, interlayer_energy_N,
                     misfit_energy, stacking_points, total_energy, cauchy_born_energy)
from .ergodic import (PeriodicObservable, cell_grid, dirichlet_kernel, ergodic_average,
                      limit_average, random_hermitian_observable)
from .errors import ConfigError, MoireError, NumericalError
from .fields import DisplacementField, load_displacements, save_displacements
from .lattice import (commensuration_scan, geometry_from_dict, geometry_to_dict,
                      moire_scale)
from .potentials import potential_from_dict
from .relax import RelaxConfig, domain_wall_profile, max_slope, relax

log = logging.getLogger("moirelax")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path: Path, header, rows) -> None:
    """CSV with a timestamp comment line and 17-significant-digit numbers."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    path.write_text(f"# generated {stamp}\n" + buf.getvalue())


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, Path):
        return str(obj)
    return obj


class Inputs:
    """Objects loaded from the configuration's referenced files."""

    def __init__(self, cfg: ExperimentConfig):
        geo = cfg.geometry if isinstance(cfg.geometry, dict) else json.loads(cfg.geometry.read_text())
        self.geom, self.sub = geometry_from_dict(geo)
        self.potential = None
        if cfg.potential is not None:
            pot = cfg.potential if isinstance(cfg.potential, dict) else json.loads(cfg.potential.read_text())
            base = cfg.potential.parent if isinstance(cfg.potential, Path) else None
            self.potential = potential_from_dict(pot, base)
        m = cfg.moduli
        area = None
        if m.get("per_cell_area"):
            area = abs(np.linalg.det(self.geom.A))
        lam, mu = float(m["lambda_mev"]), float(m["mu_mev"])
        if area:
            lam, mu = lam / area, mu / area
        self.moduli = ElasticModuli(lam, mu)
        n_cut = cfg.params.get("n_cut")
        if cfg.displacements is not None:
            self.pair = load_displacements(cfg.displacements, self.geom, self.sub.labels, n_cut)
        else:
            k = n_cut or 0
            self.pair = (DisplacementField.zeros(self.geom, k, self.sub.count(1)),
                         DisplacementField.zeros(self.geom, k, self.sub.count(2)))


# --- experiments ---------------------------------------------------------------------

def _run_geometry(cfg, inp, out):
    p = cfg.params
    verdict = commensuration_scan(inp.geom, p["n_max"], p["commensuration_tol"])
    result = geometry_to_dict(inp.geom, inp.sub)
    result.update(inp.geom.to_dict())
    result["moire_scale"] = moire_scale(inp.geom)
    result["commensuration"] = {"commensurate": verdict.commensurate, "witness": verdict.witness,
                                "n_max": p["n_max"], "tol": p["commensuration_tol"]}
    (out / "geometry.json").write_text(json.dumps(_jsonable(result), indent=1))
    return result


def _run_dirichlet(cfg, inp, out):
    p = cfg.params
    j = p["layer"]
    Aj = inp.geom.layer_basis(j)
    rows = []
    for n in p["modes"]:
        G = inp.geom.B_M @ np.asarray(n, float)
        for N in p["N_list"]:
            d = float(dirichlet_kernel(Aj, G, N))
            rows.append((N, n[0], n[1], d, abs(d) * (2 * N + 1)))
    write_csv(out / "dirichlet.csv", ["N", "n1", "n2", "delta_N", "scaled_abs"], rows)
    return {"rows": len(rows), "layer": j}


def _run_diophantine(cfg, inp, out):
    p = cfg.params
    scan = diophantine_scan(inp.geom, p["sigma"], p["n_max"])
    rows = []
    for n_max in p["nested"]:
        s = diophantine_scan(inp.geom, p["sigma"], n_max)
        rows.append((n_max, s.K_hat, s.argmin[0], s.argmin[1], s.argmin_sign))
    write_csv(out / "diophantine_nested.csv", ["n_max", "K_hat", "argmin_n1", "argmin_n2", "sign"], rows)
    table = []
    for sign in (1, -1):
        n, dist, weighted = scan.table(sign)
        table += zip([sign] * len(n), n[:, 0], n[:, 1], np.linalg.norm(n, axis=1), dist, weighted)
    write_csv(out / "diophantine.csv", ["sign", "n1", "n2", "norm_n", "dist", "weighted_dist"], table)
    dist = np.array([row[4] for row in table])
    counts, edges = np.histogram(dist, bins=10, range=(0.0, float(np.sqrt(2) / 2)))
    summary = scan.summary()
    summary["distances_histogram"] = {"edges": edges, "counts": counts}
    return summary


def _observable(cfg, inp, rng):
    p = cfg.params
    if p["observable"] == "plane_wave":
        return PeriodicObservable.plane_wave(inp.geom, p["mode"])
    return random_hermitian_observable(inp.geom, p["half_width"], rng)


def _run_converge(cfg, inp, out):
    p = cfg.params
    j = p["layer"]
    records, info = [], {"observable": p["observable"]}
    if p["observable"] == "interlayer":
        kw = dict(sub=inp.sub, z_offset=p["z_offset_angstrom"], rel_tol=p["rel_tol"])
        ref = interlayer_energy_limit(inp.geom, inp.pair, inp.potential, j, p["grid"], **kw)
        for N in p["N_list"]:
            val = interlayer_energy_N(inp.geom, inp.pair, inp.potential, N, j, **kw)
            records.append(ConvergenceRecord(N, val, ref))
    else:
        rng = np.random.default_rng(cfg.seed)
        f = _observable(cfg, inp, rng)
        ref = limit_average(inp.geom, f, p["grid"])
        bound = None
        scan = diophantine_scan(inp.geom, p["sigma"], p["n_max"])
        if not scan.commensurate:
            decay = fourier_decay_sup(inp.geom, f.modes, f.coeffs, p["sigma"], p["s"])
            bound = error_prefactor(scan, p["s"], decay)
            info["prefactor"] = bound.C
            info["K_hat"] = scan.K_hat
        for N in p["N_list"]:
            val = ergodic_average(inp.geom, j, f, N, inp.sub.gamma[j])
            records.append(ConvergenceRecord(N, val, ref, None if bound is None else float(bound.bound(N))))
    rows = []
    for r in records:
        v, ref_ = complex(r.value), complex(r.reference)
        rows.append((r.N, v.real, v.imag, ref_.real, ref_.imag, r.abs_error, r.theoretical_bound))
    write_csv(out / "converge.csv",
              ["N", "value_re", "value_im", "reference_re", "reference_im", "abs_error", "theoretical_bound"], rows)
    if len(records) >= 3:
        info["fit"] = fit_rate(records).to_dict()
    return info


def _run_misfit(cfg, inp, out):
    p = cfg.params
    j = p["layer"]
    n = p["grid"]
    k = 3 - j
    x = cell_grid(inp.geom.layer_basis(k), n)
    kw = dict(j=j, z_offset=p["z_offset_angstrom"], rel_tol=p["rel_tol"])
    vals = misfit_energy(inp.geom, inp.potential, x, **kw)
    s = np.arange(n) / n
    S1, S2 = np.meshgrid(s, s, indexing="ij")
    rows = zip(S1.ravel(), S2.ravel(), x[:, 0], x[:, 1], vals)
    write_csv(out / "misfit.csv", ["s1", "s2", "x", "y", "misfit"], rows)
    i = int(np.argmax(vals))
    stack = {name: float(misfit_energy(inp.geom, inp.potential, pt[None], **kw)[0])
             for name, pt in stacking_points(inp.geom, j).items()}
    return {"argmax_fractional": [float(S1.ravel()[i]), float(S2.ravel()[i])], "max": float(vals[i]),
            "min": float(vals.min()), "stacking": stack}


def _run_energy(cfg, inp, out):
    p = cfg.params
    kw = dict(sub=inp.sub, z_offset=p["z_offset_angstrom"], rel_tol=p["rel_tol"])
    if p["N"] is None:
        br = total_energy(inp.geom, inp.pair, inp.potential, inp.moduli, p["grid"], **kw)
        if p["check"]:
            for j in (1, 2):
                interlayer_energy_limit(inp.geom, inp.pair, inp.potential, j, p["grid"], check=True, **kw)
        mode = f"limit grid {p['grid']}"
        ledger = br.to_dict()
    else:
        ledger = {}
        for j in (1, 2):
            e = interlayer_energy_N(inp.geom, inp.pair, inp.potential, p["N"], j, **kw)
            ledger[f"layer{j}"] = {"e_mono": 0.0, "e_inter": 0.5 * e,
                                   "e_elastic": cauchy_born_energy(inp.geom, inp.pair[j - 1], inp.moduli, p["grid"])}
        ledger["total"] = sum(sum(v.values()) for k_, v in ledger.items() if k_.startswith("layer"))
        mode = f"N {p['N']}"
    rows = [(f"layer{j}", ledger[f"layer{j}"]["e_mono"], ledger[f"layer{j}"]["e_inter"],
             ledger[f"layer{j}"]["e_elastic"], mode) for j in (1, 2)]
    rows.append(("total",) + tuple(rows[0][c] + rows[1][c] for c in (1, 2, 3)) + (mode,))
    write_csv(out / "energy.csv", ["layer", "e_mono", "e_inter", "e_elastic", "truncation"], rows)
    (out / "energy.json").write_text(json.dumps(_jsonable(ledger), indent=1))
    _append_ledger(out / "results_ledger.csv", cfg, mode, rows[-1][1:4], ledger["total"])
    return ledger


def _append_ledger(path: Path, cfg, mode, parts, total) -> None:
    """One row per energy run; the file accumulates across runs."""
    new = not path.exists()
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["timestamp", "config_sha256", "truncation", "e_mono", "e_inter", "e_elastic", "total"])
        w.writerow([stamp, hashlib.sha256(cfg.source.encode()).hexdigest()[:16], mode] + [_fmt(x) for x in parts]
                   + [_fmt(total)])


def _run_relax(cfg, inp, out):
    p = cfg.params
    rc = RelaxConfig(n_cut=p["n_cut"], grid=p["grid"], max_iter=p["max_iter"], tol=p["tol"],
                     backtrack=p["backtrack"], armijo=p["armijo"], max_move=p["max_move_angstrom"],
                     relax_z=p["relax_z"], report_epsilon=p["report_epsilon"], rel_tol=p["rel_tol"])
    trace = relax(inp.geom, inp.pair, inp.potential, inp.moduli, rc, inp.sub, p["z_offset_angstrom"])
    write_csv(out / "relax_trace.csv", ["iter", "energy", "grad_norm", "step"], trace.rows())
    save_displacements(out / "relaxed_displacements.json", trace.final, inp.sub.labels)
    return {"converged": trace.converged, "iterations": len(trace.energies) - 1,
            "energy_initial": trace.energies[0], "energy_final": trace.energies[-1],
            "grad_norm_final": trace.grad_norms[-1], "epsilon": trace.epsilon,
            "max_in_plane_displacement": trace.max_in_plane_displacement()}


def _run_profile(cfg, inp, out):
    p = cfg.params
    A_M = inp.geom.A_M
    p0, p1 = A_M @ np.asarray(p["p0_moire"], float), A_M @ np.asarray(p["p1_moire"], float)
    prof = domain_wall_profile(inp.geom, inp.pair, p0, p1, p["samples"])
    base = domain_wall_profile(inp.geom, None, p0, p1, p["samples"])
    rows = zip(prof["t"], prof["x"][:, 0], prof["x"][:, 1], prof["disregistry"][:, 0], prof["disregistry"][:, 1],
               prof["layer2_coords"][:, 0], prof["layer2_coords"][:, 1],
               base["disregistry"][:, 0], base["disregistry"][:, 1])
    write_csv(out / "profile.csv", ["t", "x", "y", "d1", "d2", "s1", "s2", "base_d1", "base_d2"], rows)
    return {"max_slope": max_slope(prof), "max_slope_unrelaxed": max_slope(base)}


RUNNERS = {
    "geometry": _run_geometry, "dirichlet": _run_dirichlet, "diophantine": _run_diophantine,
    "converge": _run_converge, "misfit": _run_misfit, "energy": _run_energy,
    "relax": _run_relax, "profile": _run_profile,
}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run one experiment, write its artifacts and summary.json; returns the summary."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    inp = Inputs(cfg)
    result = RUNNERS[cfg.kind](cfg, inp, out)
    hashes = {"config": hashlib.sha256(cfg.source.encode()).hexdigest()}
    hashes.update({name: _sha256(path) for name, path in cfg.input_files().items()})
    summary = {
        "kind": cfg.kind,
        "params": cfg.params,
        "seed": cfg.seed,
        "threads": get_threads(),
        "inputs": {name: str(path) for name, path in cfg.input_files().items()},
        "input_sha256": hashes,
        "versions": {"moirelax": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "result": result,
    }
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=1))
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moirelax", description="Moire bilayer lattice experiments.")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", type=Path, help="JSON experiment description")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--geometry", type=Path)
        sp.add_argument("--potential", type=Path)
        sp.add_argument("--displacements", "--displacement", type=Path, dest="displacements")
        sp.add_argument("--moduli", type=Path)
        if kind == "energy":
            grp = sp.add_mutually_exclusive_group()
            grp.add_argument("--N", type=int)
            grp.add_argument("--limit", action="store_true")
            sp.add_argument("--grid", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        set_threads(args.threads)
        text = args.config.read_text() if args.config else ""
        base = args.config.parent if args.config else Path.cwd()
        cwd = Path.cwd()
        overrides = {
            "geometry": str(cwd / args.geometry) if args.geometry else None,
            "potential": str(cwd / args.potential) if args.potential else None,
            "displacements": str(cwd / args.displacements) if args.displacements else None,
            "moduli": str(cwd / args.moduli) if args.moduli else None,
            "output_dir": str(cwd / args.out) if args.out else None,
            "seed": args.seed,
        }
        if args.kind == "energy" and (args.N is not None or args.grid is not None):
            doc = json.loads(text) if text.strip() else {}
            params = doc.setdefault("params", {})
            if args.N is not None:
                params["N"] = args.N
            if args.grid is not None:
                params["grid"] = args.grid
            text = json.dumps(doc)
        cfg = parse_config(text, base, kind=args.kind, overrides=overrides)
        summary = run_experiment(cfg)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, MoireError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(_jsonable({"kind": summary["kind"], "output_dir": str(cfg.output_dir)})))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
