"""Command line experiment runner.

Every command reads a JSON config, writes CSV tables, a JSON report and PNG
figures to an output directory, and exits with 0 when all gated checks pass
(or always, in ``--measure`` mode).
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import plotting
from .charflow import (DataPairPath, DomainParams, evolve_gap, gap_comparison,
                       integrate_characteristic, nesting_audit, closed_form_characteristic)
from .ensemble import (DenseGaussian, EnsembleModel, FilterModel, IndependentGaussian,
                       relative_fullness, s_of_t, surjectivity_covariance,
                       sigma_flow_closed_form, to_coordinates, trial_rng, zag_covariance,
                       zig_covariance, zig_flow)
from .errors import ConfigError, CuspflowError, FlowExitsDomain, GapClosed
from .mde import scdos, stability_operator_norms
from .models import build_model, two_level_family
from .pearcey import (PearceyConfig, compare_density, empirical_cusp_statistics, pearcey_kernel,
                      reflection_asymmetry, slope_estimate)
from .selfenergy import COMPLEX, REAL, normalize_class
from .shape import classify_singularity, critical_coupling_search, default_range, scan_support
from .verify import (DensityTable, ResolventCache, band_and_gap_by_inertia, band_mass_check,
                     bulk_window, delocalization_check, dense_sampler, exclusion_interval,
                     probe_vectors, rigidity_check, scaling_study, tridiagonal_sampler)

COMMANDS = ("density", "flow", "locallaw", "rigidity", "exclusion", "deloc", "cusp", "zigzag")
TOP_KEYS = ("command", "seed", "model", "N", "trials", "params")

_SEMICIRCLE = {"N": 2, "class": "complex", "A": {"kind": "zero"}, "S": {"variant": "wigner-scalar"}}
_TWO_LEVEL = {"N": 2, "class": "complex", "A": {"kind": "two-level", "params": {"d": 5.0}},
              "S": {"variant": "wigner-scalar"}}

DEFAULTS = {
    "density": {"model": _SEMICIRCLE, "N": [2], "trials": 0, "params": {
        "E_min": None, "E_max": None, "points": 401, "eta": 1e-3, "eta_floor": 1e-6,
        "rho_threshold": 1e-6, "grid_step": 1e-3, "stability": True, "mass_tol": 1e-4}},
    "flow": {"model": _TWO_LEVEL, "N": [1000], "trials": 0, "params": {
        "T": 0.3, "t_start": 0.0, "characteristics": 20, "E_min": -7.0, "E_max": 7.0,
        "eta_T": 0.05, "reference": "average", "tol": 1e-10, "conservation_tol": 1e-5,
        "gap": "auto", "gap_steps": 20, "gap_ratio": [0.2, 5.0]}},
    "locallaw": {"model": _SEMICIRCLE, "N": [256, 512, 1024, 2048], "trials": 100, "params": {
        "E": 0.0, "n_eta": 8, "eta_min_exponent": -0.9, "eta_max": 0.1, "quantile": 0.9,
        "sampler": "auto", "avg_slope": -1.0, "avg_slope_tol": 0.15, "iso_slope": -0.5,
        "iso_slope_tol": 0.1, "N_slope_max": 0.1}},
    "rigidity": {"model": _SEMICIRCLE, "N": [2048], "trials": 100, "params": {
        "window": None, "bulk_fraction": 0.5, "exponent": 0.15, "quantile": 0.99,
        "offset": 0.5, "sampler": "auto", "pass_rate": 0.99}},
    "exclusion": {"model": _TWO_LEVEL, "N": [2048], "trials": 200, "params": {
        "eps": 0.1, "pass_rate": 0.99, "mass_integral_tol": 1e-3}},
    "deloc": {"model": _SEMICIRCLE, "N": [1024], "trials": 100, "params": {
        "window": None, "exponent": 0.15, "pass_rate": 0.99, "probes": 10, "law": "gaussian"}},
    "cusp": {"model": {**_TWO_LEVEL, "N": 4096}, "N": [4096], "trials": 200, "params": {
        "bracket": [0.1, 5.0], "center": 0.0, "x_max": 5.0, "bin_width": 0.25,
        "compare_range": 3.0, "tolerance": 0.1, "kernel_step": 0.05, "alpha": 0.0,
        "nodes_per_ray": 64, "delta": 0.2, "ray_length": 7.0, "kernel_tol": 1e-6,
        "min_points": 500}},
    "zigzag": {"model": {"N": 32, "class": "complex"}, "N": [32], "trials": 2000, "params": {
        "full": 0.5, "c": None, "t_grid": 16, "mc_t": 0.2, "probes": 4,
        "covariance_tol": 1e-10, "mc_sigmas": 3.0}},
}
_MC_COMMANDS = ("locallaw", "rigidity", "exclusion", "deloc", "cusp", "zigzag")


# ---------------------------------------------------------------- config

def resolve_config(raw: dict, command: str, seed: int | None = None) -> dict:
    """Validate a raw config against the schema of ``command`` and fill in defaults."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(raw) - set(TOP_KEYS)
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    if raw.get("command", command) != command:
        raise ConfigError(f"config is for command {raw['command']!r}, not {command!r}")
    cfg = copy.deepcopy(DEFAULTS[command])
    cfg["command"] = command
    s = raw.get("seed") if seed is None else seed
    if s is None:
        raise ConfigError("seed is mandatory")
    if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg["seed"] = int(s)
    if "model" in raw:
        if not isinstance(raw["model"], dict):
            raise ConfigError("model must be an object")
        cfg["model"] = copy.deepcopy(raw["model"])
    if "N" in raw:
        Ns = raw["N"] if isinstance(raw["N"], list) else [raw["N"]]
        if not Ns or any(isinstance(n, bool) or not isinstance(n, int) or n < 1 for n in Ns):
            raise ConfigError("N must be a positive integer or a nonempty list of them")
        cfg["N"] = list(Ns)
    if "trials" in raw:
        tr = raw["trials"]
        if isinstance(tr, bool) or not isinstance(tr, int):
            raise ConfigError("trials must be an integer")
        cfg["trials"] = tr
    if command in _MC_COMMANDS and cfg["trials"] < 1:
        raise ConfigError("trials must be at least 1")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be an object")
    unknown = set(params) - set(cfg["params"])
    if unknown:
        raise ConfigError(f"unknown params for {command}: {sorted(unknown)}")
    cfg["params"].update(params)
    _validate_params(command, cfg)
    return cfg


def _validate_params(command, cfg):
    p = cfg["params"]
    if command == "density":
        if p["E_min"] is not None and p["E_max"] is not None and not p["E_min"] < p["E_max"]:
            raise ConfigError("empty energy range: E_min must be below E_max")
        if p["points"] < 2:
            raise ConfigError("points must be at least 2")
    if command == "flow":
        if not 0 <= p["t_start"] <= p["T"]:
            raise ConfigError("t_start must lie in [0, T]")
        if not p["E_min"] <= p["E_max"]:
            raise ConfigError("empty energy range")
        if p["characteristics"] < 1:
            raise ConfigError("characteristics must be at least 1")
    if command in ("rigidity", "deloc") and p["window"] is not None:
        w = p["window"]
        if len(w) != 2 or not w[0] < w[1]:
            raise ConfigError("window must be [lo, hi] with lo < hi")
    if command == "locallaw" and len(cfg["N"]) < 2:
        raise ConfigError("locallaw needs at least two matrix sizes")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serializable: {type(o)}")


# ---------------------------------------------------------------- run context

class Run:
    """Output directory, check registry and worker pool of one command invocation."""

    def __init__(self, cfg: dict, out: Path, threads: int = 1, plots: bool = True):
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.threads = max(1, int(threads))
        self.plots = plots
        self.checks = []
        self.metrics = {}
        self.files = []

    def check(self, name: str, value, bound, passed: bool, gated: bool = True):
        self.checks.append({"name": name, "value": value, "bound": bound,
                            "pass": bool(passed), "gated": gated})

    def map(self, fn, items):
        items = list(items)
        if self.threads == 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(fn, items))

    def write_csv(self, name: str, header, rows):
        path = self.out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
        self.files.append(name)
        return path

    def write_json(self, name: str, obj):
        path = self.out / name
        path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n",
                        encoding="utf-8")
        self.files.append(name)
        return path

    def figure(self, fn, name: str, *args, **kw):
        if not self.plots:
            return None
        fn(self.out / name, *args, **kw)
        self.files.append(name)

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks if c["gated"])

    def report(self) -> dict:
        return {"command": self.cfg["command"], "config": self.cfg,
                "config_hash": config_hash(self.cfg), "checks": self.checks,
                "metrics": self.metrics, "passed": self.passed,
                "files": sorted(set(self.files) | {"report.json"})}


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (complex, np.complexfloating)):
        return repr(complex(v))
    return v


def _model_at(desc: dict, N: int):
    d = copy.deepcopy(desc)
    d["N"] = N
    return build_model(d)


def _is_semicircle(desc: dict) -> bool:
    A = desc.get("A", {"kind": "zero"})
    S = desc.get("S", {"variant": "wigner-scalar"})
    sp = S.get("params", {})
    return (A.get("kind", "zero") == "zero" and S.get("variant", "wigner-scalar") == "wigner-scalar"
            and float(sp.get("scale", 1.0)) == 1.0 and sp.get("transpose") is None)


def ensemble_for(desc: dict, N: int, law: str = "gaussian") -> EnsembleModel:
    """Random matrix model H = A + W matching a model description at size N."""
    pair = _model_at(desc, N)
    klass = pair.klass
    S = desc.get("S", {"variant": "wigner-scalar"})
    variant = S.get("variant", "wigner-scalar")
    sp = S.get("params", {})
    if variant == "wigner-scalar":
        if float(sp.get("scale", 1.0)) != 1.0 or sp.get("transpose") is not None:
            raise ConfigError("sampling supports the unit Wigner self-energy only")
        corr = IndependentGaussian(N, klass)
    elif variant in ("filter", "metric-decay"):
        corr = FilterModel(N, klass, decay=float(sp.get("decay", 3.0)), radius=sp.get("radius"),
                           law=law)
    else:
        raise ConfigError(f"no sampler for self-energy variant {variant!r}")
    A = pair.A.real if klass == REAL else pair.A
    return EnsembleModel(corr, A, name=pair.name)


def _eigen_sampler(desc: dict, mode: str, law: str = "gaussian"):
    """(rng, N) -> sorted eigenvalues."""
    klass = normalize_class(desc.get("class", COMPLEX))
    if mode == "auto":
        mode = "tridiagonal" if _is_semicircle(desc) else "dense"
    if mode == "tridiagonal":
        if not _is_semicircle(desc):
            raise ConfigError("the tridiagonal sampler needs A = 0 and the unit Wigner self-energy")
        draw = tridiagonal_sampler(klass)
        return lambda rng, N: draw(rng, N).eigenvalues
    if mode == "dense":
        cache = {}

        def eig(rng, N):
            if N not in cache:
                cache[N] = ensemble_for(desc, N, law)
            m = cache[N]
            return np.linalg.eigvalsh(m.A + m.corr.sample_w(rng))
        return eig
    raise ConfigError(f"unknown sampler {mode!r}")


# ---------------------------------------------------------------- commands

def cmd_density(run: Run):
    cfg, p = run.cfg, run.cfg["params"]
    model = build_model(cfg["model"])
    lo, hi = default_range(model)
    E_min = lo if p["E_min"] is None else p["E_min"]
    E_max = hi if p["E_max"] is None else p["E_max"]
    E = np.linspace(E_min, E_max, p["points"])
    rho = scdos(model, E, p["eta_floor"])
    beta = np.full_like(E, np.nan)
    sigma = np.full_like(E, np.nan)
    if p["stability"]:
        diags = run.map(lambda e: stability_operator_norms(model, complex(e, p["eta"])), E)
        beta = np.array([d.beta for d in diags])
        sigma = np.array([d.sigma for d in diags])
    run.write_csv("density.csv", ["E", "eta", "rho", "beta", "sigma"],
                  [(e, p["eta"], r, b, s) for e, r, b, s in zip(E, rho, beta, sigma)])
    prof = scan_support(model, (min(E_min, lo), max(E_max, hi)), p["grid_step"],
                        p["rho_threshold"], p["eta_floor"])
    mass = float(sum(prof.band_masses))
    run.write_json("support.json", prof.to_dict())
    run.metrics.update({"bands": prof.bands, "gaps": prof.gaps, "mass": mass,
                        "rho_max": float(rho.max())})
    run.check("normalization", abs(mass - 1.0), p["mass_tol"], abs(mass - 1.0) <= p["mass_tol"])
    run.figure(plotting.line_plot, "density.png", [("rho", E, rho)], "E", "density",
               title=model.name or "density")


def cmd_flow(run: Run):
    cfg, p = run.cfg, run.cfg["params"]
    model = build_model(cfg["model"])
    T, t0 = float(p["T"]), float(p["t_start"])
    path = DataPairPath(model, T, p["reference"])
    Es = np.linspace(p["E_min"], p["E_max"], p["characteristics"])

    def one(E):
        z_T = complex(E, p["eta_T"])
        try:
            return integrate_characteristic(path, z_T, t0, tol=p["tol"])
        except FlowExitsDomain as exc:
            return exc.last_sample
    chars = run.map(one, Es)
    rows, worst, worst_cf = [], 0.0, 0.0
    for k, ch in enumerate(chars):
        res = ch.conservation_residual()
        worst = max(worst, float(res.max()))
        if p["reference"] == "average":
            cf = closed_form_characteristic(path, ch.z_T, ch.t)
            worst_cf = max(worst_cf, float(np.abs(cf - ch.z).max()))
        for j in range(len(ch.t)):
            rows.append((k, ch.t[j], ch.z[j].real, ch.z[j].imag, ch.rho[j], ch.conserved()[j], res[j]))
    run.write_csv("trajectories.csv", ["char", "t", "re_z", "im_z", "rho", "conserved", "residual"], rows)
    run.check("conservation", worst, p["conservation_tol"], worst <= p["conservation_tol"])
    run.metrics["exited"] = int(sum(ch.exited for ch in chars))
    if p["reference"] == "average":
        run.metrics["closed_form_deviation"] = worst_cf
    audit = nesting_audit(path, chars, DomainParams(cfg["N"][0], T))
    run.metrics["nesting"] = audit
    run.check("domain nesting", audit["violations"], 0, audit["violations"] == 0)
    if p["gap"] is not None and t0 < T:
        gap = None
        if p["gap"] == "auto":
            prof = scan_support(model, classify=False)
            gap = prof.gaps[0] if prof.gaps else None
        else:
            gap = tuple(p["gap"])
        if gap is not None:
            try:
                track = evolve_gap(path, gap, t0, p["gap_steps"])
                ratio = gap_comparison(track, T)
                lo, hi = p["gap_ratio"]
                ok = bool(np.all((ratio >= lo) & (ratio <= hi)))
                run.write_csv("gap.csv", ["t", "e_minus", "e_plus", "Delta", "ratio"],
                              zip(track.t, track.e_minus, track.e_plus, track.Delta, ratio))
                run.check("gap comparison", [float(ratio.min()), float(ratio.max())], p["gap_ratio"], ok)
            except GapClosed as exc:
                run.check("gap comparison", str(exc), p["gap_ratio"], False)
    run.figure(plotting.trajectories, "trajectories.png", [ch.z for ch in chars],
               title="characteristics")


def cmd_locallaw(run: Run):
    cfg, p = run.cfg, run.cfg["params"]
    desc = cfg["model"]
    klass = normalize_class(desc.get("class", COMPLEX))
    mode = p["sampler"]
    if mode == "auto":
        mode = "tridiagonal" if _is_semicircle(desc) else "dense"
    if mode == "tridiagonal":
        if not _is_semicircle(desc):
            raise ConfigError("the tridiagonal sampler needs A = 0 and the unit Wigner self-energy")
        sampler = tridiagonal_sampler(klass)
    else:
        ens = {}

        def make(rng, N):
            if N not in ens:
                ens[N] = ensemble_for(desc, N)
            return ens[N].A + ens[N].corr.sample_w(rng)
        sampler = dense_sampler(make)
    rep = scaling_study(lambda N: _model_at(desc, N), cfg["N"], cfg["trials"], cfg["seed"],
                        E=p["E"], n_eta=p["n_eta"], eta_range=(p["eta_min_exponent"], p["eta_max"]),
                        sampler=sampler, quantile=p["quantile"])
    rows = []
    for N in cfg["N"]:
        for j, eta in enumerate(rep.etas[N]):
            rows.append((N, eta, rep.avg_raw_q[N][j], rep.iso_raw_q[N][j],
                         rep.avg_norm_q[N][j], rep.iso_norm_q[N][j]))
    run.write_csv("locallaw.csv", ["N", "eta", "avg_raw_q", "iso_raw_q", "avg_norm_q", "iso_norm_q"], rows)
    run.metrics.update({"avg_eta_slopes": rep.avg_eta_slopes, "iso_eta_slopes": rep.iso_eta_slopes,
                        "avg_N_slope": rep.avg_N_slope, "iso_N_slope": rep.iso_N_slope})
    for N in cfg["N"]:
        a, i = rep.avg_eta_slopes[N], rep.iso_eta_slopes[N]
        run.check(f"average eta-slope N={N}", a, [p["avg_slope"], p["avg_slope_tol"]],
                  abs(a - p["avg_slope"]) <= p["avg_slope_tol"])
        run.check(f"isotropic eta-slope N={N}", i, [p["iso_slope"], p["iso_slope_tol"]],
                  abs(i - p["iso_slope"]) <= p["iso_slope_tol"])
    run.check("average N-slope", rep.avg_N_slope, p["N_slope_max"], rep.avg_N_slope <= p["N_slope_max"])
    run.check("isotropic N-slope", rep.iso_N_slope, p["N_slope_max"], rep.iso_N_slope <= p["N_slope_max"])
    series = [(f"avg N={N}", rep.etas[N], rep.avg_raw_q[N], "o-") for N in cfg["N"]]
    series += [(f"iso N={N}", rep.etas[N], rep.iso_raw_q[N], "s--") for N in cfg["N"]]
    run.figure(plotting.line_plot, "locallaw.png", series, "eta", f"{p['quantile']}-quantile of error",
               logx=True, logy=True)


def cmd_rigidity(run: Run):
    cfg, p = run.cfg, run.cfg["params"]
    desc = cfg["model"]
    eig = _eigen_sampler(desc, p["sampler"])
    rows = []
    for N in cfg["N"]:
        model = _model_at(desc, N)
        prof = scan_support(model, classify=False)
        table = DensityTable(model, prof.bands)
        window = tuple(p["window"]) if p["window"] else bulk_window(table, model, p["bulk_fraction"])
        gamma = table.quantiles(N, p["offset"])
        idx = np.flatnonzero((gamma >= window[0]) & (gamma <= window[1]))
        ef = table.fluctuation_scale(gamma[idx], N)

        def one(t):
            lam = eig(trial_rng(run.cfg["seed"], N * 100003 + t), N)
            r = rigidity_check(lam, table, window, p["offset"], eta_f=ef)
            bm = band_mass_check(lam, prof.bands, prof.band_masses)
            return r.max_deviation, bm.exact
        res = run.map(one, range(cfg["trials"]))
        dev = np.array([r[0] for r in res])
        q = float(np.quantile(dev, p["quantile"]))
        bound = N ** p["exponent"]
        rows += [(N, t, d, int(e)) for t, (d, e) in enumerate(res)]
        run.metrics[f"N={N}"] = {"window": window, "indices": int(len(idx)), "median": float(np.median(dev)),
                                 "quantile": q, "offset": p["offset"]}
        run.check(f"rigidity N={N}", q, bound, q <= bound)
        if len(prof.bands) > 1:
            rate = float(np.mean([r[1] for r in res]))
            run.check(f"band counts N={N}", rate, p["pass_rate"], rate >= p["pass_rate"])
        run.figure(plotting.histogram, f"rigidity_N{N}.png", dev, "max |lambda_k - gamma_k| / eta_f",
                   bound=bound)
    run.write_csv("rigidity.csv", ["N", "trial", "max_deviation", "band_counts_exact"], rows)


def cmd_exclusion(run: Run):
    cfg, p = run.cfg, run.cfg["params"]
    desc = cfg["model"]
    rows = []
    for N in cfg["N"]:
        model = _model_at(desc, N)
        prof = scan_support(model, classify=False)
        ens = ensemble_for(desc, N)
        expected = [N * m for m in prof.band_masses]
        integral = all(abs(e - round(e)) <= p["mass_integral_tol"] for e in expected)
        target = [round(e) for e in expected]

        def one(t):
            H = ens.A + ens.corr.sample_w(trial_rng(cfg["seed"], N * 100003 + t))
            return band_and_gap_by_inertia(H, prof.bands, prof.gaps, N, p["eps"])
        res = run.map(one, range(cfg["trials"]))
        exact = np.array([c == target for c, _ in res])
        excl = np.array([e for _, e in res])
        rows += [(N, t, " ".join(map(str, c)), int(e)) for t, (c, e) in enumerate(res)]
        run.metrics[f"N={N}"] = {"bands": prof.bands, "gaps": prof.gaps, "expected": expected,
                                 "exclusion_intervals": [exclusion_interval(g, N, p["eps"]) for g in prof.gaps]}
        run.check(f"mass integrality N={N}", expected, p["mass_integral_tol"], integral)
        run.check(f"band counts N={N}", float(exact.mean()), p["pass_rate"], exact.mean() >= p["pass_rate"])
        run.check(f"gap exclusion N={N}", float(excl.mean()), p["pass_rate"], excl.mean() >= p["pass_rate"])
    run.write_csv("exclusion.csv", ["N", "trial", "band_counts", "excluded"], rows)


def cmd_deloc(run: Run):
    cfg, p = run.cfg, run.cfg["params"]
    desc = cfg["model"]
    rows = []
    for N in cfg["N"]:
        ens = ensemble_for(desc, N, p["law"])
        probes = probe_vectors(N, p["probes"], real=ens.corr.real)
        window = tuple(p["window"]) if p["window"] else None

        def one(t):
            H = ens.A + ens.corr.sample_w(trial_rng(cfg["seed"], N * 100003 + t))
            return delocalization_check(ResolventCache(H), window, probes)
        vals = np.array(run.map(one, range(cfg["trials"])))
        bound = N ** p["exponent"]
        rate = float(np.mean(vals <= bound))
        rows += [(N, t, v) for t, v in enumerate(vals)]
        run.metrics[f"N={N}"] = {"median": float(np.median(vals)), "max": float(vals.max()),
                                 "bound": bound}
        run.check(f"delocalization N={N}", rate, p["pass_rate"], rate >= p["pass_rate"])
        run.figure(plotting.histogram, f"deloc_N{N}.png", vals, "max overlap * sqrt(N)", bound=bound)
    run.write_csv("deloc.csv", ["N", "trial", "max_overlap"], rows)


def cmd_cusp(run: Run):
    cfg, p = run.cfg, run.cfg["params"]
    desc = cfg["model"]
    klass = normalize_class(desc.get("class", COMPLEX))
    if klass != COMPLEX:
        raise ConfigError("cusp comparison is available for the complex Hermitian class only")
    if desc.get("A", {}).get("kind") != "two-level":
        raise ConfigError("cusp construction uses the two-level family (A.kind = two-level)")
    sp = desc.get("S", {}).get("params", {})
    scale = float(sp.get("scale", 1.0))
    fam = two_level_family(2, klass, scale)
    d, b = critical_coupling_search(fam, tuple(p["bracket"]), p["center"])
    model = fam(d)
    kind, expo, r2 = classify_singularity(model, b, eta_floor=1e-10)
    fit = slope_estimate(model, b)
    run.metrics.update({"d_cusp": d, "b": b, "singularity": [kind, expo, r2],
                        "c": fit.c, "gamma": fit.gamma, "slope_r2": fit.r2,
                        "gamma_convention": fit.convention})
    run.check("cusp exponent", expo, [1 / 3, 0.05], abs(expo - 1 / 3) <= 0.05 and r2 >= 0.99)
    kcfg = PearceyConfig(p["alpha"], p["ray_length"], p["nodes_per_ray"], p["delta"], tol=np.inf)
    x = np.round(np.arange(-p["x_max"], p["x_max"] + 1e-12, p["kernel_step"]), 12)
    K, err = pearcey_kernel(kcfg, x, x, return_error=True)
    diag = np.real(np.diag(K))
    alt = PearceyConfig(p["alpha"], p["ray_length"], p["nodes_per_ray"], 0.5 * p["delta"] + 0.05, tol=np.inf)
    shift = float(np.abs(np.real(np.diag(pearcey_kernel(alt, x, x))) - diag).max())
    run.write_csv("kernel.csv", ["x", "K_xx"], zip(x, diag))
    run.metrics.update({"kernel_doubling_change": err, "kernel_delta_change": shift})
    run.check("kernel self-convergence", err, p["kernel_tol"], err <= p["kernel_tol"])
    run.check("kernel contour invariance", shift, p["kernel_tol"], shift <= p["kernel_tol"])
    N = cfg["N"][0]
    ens = ensemble_for({**desc, "A": {"kind": "two-level", "params": {"d": d}}}, N)
    sampler = lambda rng, n: ens.A + ens.corr.sample_w(rng)
    stats = empirical_cusp_statistics(sampler, b, fit.gamma, N, cfg["trials"], cfg["seed"],
                                      p["x_max"], p["bin_width"], p["min_points"])
    cmp = compare_density(stats, PearceyConfig(p["alpha"], p["ray_length"], p["nodes_per_ray"], p["delta"]),
                          p["compare_range"])
    asym = reflection_asymmetry(stats)
    run.write_csv("histogram.csv", ["x", "empirical", "stderr", "predicted"],
                  zip(stats.centers, stats.density, stats.stderr, cmp["predicted"]))
    run.metrics.update({"points": int(len(stats.all_samples)), "sup_distance": cmp["sup_distance"],
                        "sup_kernel": cmp["sup_kernel"], "relative_sup_distance": cmp["relative"],
                        "max_abs_z": float(np.nanmax(np.abs(cmp["z_scores"]))),
                        "max_reflection_z": float(np.abs(asym).max())})
    run.check("pearcey sup distance", cmp["relative"], p["tolerance"], cmp["relative"] <= p["tolerance"])
    run.figure(plotting.density_comparison, "cusp_density.png", stats.centers, stats.density,
               stats.stderr, cmp["predicted"], title=f"N={N}, {cfg['trials']} trials")


def cmd_zigzag(run: Run):
    cfg, p = run.cfg, run.cfg["params"]
    desc = cfg["model"]
    N = cfg["N"][0]
    klass = normalize_class(desc.get("class", COMPLEX))
    corr = DenseGaussian.random(N, klass, p["full"], seed=cfg["seed"])
    c = relative_fullness(corr) if p["c"] is None else float(p["c"])
    if not 0 < c < 1:
        raise ConfigError("c must lie in (0, 1)")
    t_max = -np.log1p(-c)
    ts = np.linspace(0.0, t_max, p["t_grid"] + 1)[:-1]
    ident = float(np.abs(s_of_t(1.0, ts) - ts).max())
    run.check("s_1(t) = t", ident, 1e-12, ident <= 1e-12)
    tb = np.linspace(0.0, c / 2, p["t_grid"])
    slack = float((2 * tb / c - s_of_t(c, tb)).min())
    run.check("s_c(t) <= 2t/c on [0, c/2]", slack, 0.0, slack >= -1e-14)
    worst = 0.0
    rows = []
    for t in ts[1:]:
        s = float(s_of_t(c, t))
        lhs = zig_covariance(surjectivity_covariance(corr.C, c, t, N, klass), t, N, klass)
        diff = float(np.abs(lhs - zag_covariance(corr.C, s)).max())
        worst = max(worst, diff)
        rows.append((t, s, diff))
    run.write_csv("zigzag.csv", ["t", "s", "covariance_difference"], rows)
    run.check("covariance identity", worst, p["covariance_tol"], worst <= p["covariance_tol"])
    # Monte Carlo of the zig flow covariance along fixed probe directions
    t = p["mc_t"]
    Ct = sigma_flow_closed_form(corr.C, t, N, klass)
    w, V = np.linalg.eigh(corr.C)
    rng = np.random.default_rng([cfg["seed"], 99])
    dirs = [V[:, 0], V[:, -1]] + [rng.standard_normal(len(w)) for _ in range(p["probes"] - 2)]
    dirs = np.array([v / np.linalg.norm(v) for v in dirs[: p["probes"]]])

    def one(k):
        H0 = corr.sample_w(trial_rng(cfg["seed"], 2 * k))
        Ht = zig_flow(H0, t, cfg["seed"], klass, 2 * k + 1)
        return dirs @ to_coordinates(Ht, klass)
    proj = np.array(run.map(one, range(cfg["trials"])))
    sq = proj ** 2
    mean, se = sq.mean(axis=0), sq.std(axis=0, ddof=1) / np.sqrt(cfg["trials"])
    exact = np.einsum("ki,ij,kj->k", dirs, Ct, dirs)
    zs = (mean - exact) / se
    run.metrics.update({"c": c, "t_max": t_max, "mc_z_scores": zs.tolist(),
                        "mc_exact": exact.tolist(), "mc_mean": mean.tolist()})
    run.check("sigma flow closed form vs Monte Carlo", float(np.abs(zs).max()), p["mc_sigmas"],
              float(np.abs(zs).max()) <= p["mc_sigmas"])
    run.figure(plotting.line_plot, "zigzag.png", [("s_c(t)", ts, s_of_t(c, ts)), ("2t/c", ts, 2 * ts / c)],
               "t", "s")


HANDLERS = {"density": cmd_density, "flow": cmd_flow, "locallaw": cmd_locallaw,
            "rigidity": cmd_rigidity, "exclusion": cmd_exclusion, "deloc": cmd_deloc,
            "cusp": cmd_cusp, "zigzag": cmd_zigzag}


# ---------------------------------------------------------------- entry point

def run_command(command: str, raw: dict, out=None, seed=None, threads: int = 1,
                plots: bool = True) -> Run:
    """Resolve the config, run the command and write config, report and timing files."""
    cfg = resolve_config(raw, command, seed)
    out = Path(out) if out else Path("runs") / f"{command}-{config_hash(cfg)[:10]}"
    run = Run(cfg, out, threads, plots)
    start = time.perf_counter()
    HANDLERS[command](run)
    run.write_json("config.json", cfg)
    run.write_json("report.json", run.report())
    (run.out / "timing.json").write_text(
        json.dumps({"wall_clock_s": round(time.perf_counter() - start, 3)}) + "\n", encoding="utf-8")
    return run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cuspflow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=HANDLERS[name].__name__.replace("cmd_", "") + " experiment")
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for trials")
        mode = sp.add_mutually_exclusive_group()
        mode.add_argument("--check", dest="mode", action="store_const", const="check",
                          help="exit nonzero when a gated check fails (default)")
        mode.add_argument("--measure", dest="mode", action="store_const", const="measure",
                          help="report metrics only, always exit 0")
        sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")
        sp.set_defaults(mode="check")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        run = run_command(args.command, raw, args.out, args.seed, args.threads, not args.no_plots)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CuspflowError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    for chk in run.checks:
        tag = "PASS" if chk["pass"] else ("FAIL" if chk["gated"] else "info")
        print(f"{tag:4s}  {chk['name']}: {chk['value']} (bound {chk['bound']})")
    print(f"report: {run.out / 'report.json'}")
    if args.mode == "measure":
        return 0
    return 0 if run.passed else 1


if __name__ == "__main__":
    sys.exit(main())
