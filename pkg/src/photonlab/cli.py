"""Command-line interface wiring configs to simulation, correlation and fits.

Exit codes: 0 success, 2 usage or config-schema error, 3 numerical failure
(fit non-convergence), 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import fields as dataclass_fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__, models
from .correlate import Histogram, correlate, g2_zero
from .efficiency import (EfficiencyReport, Method, alpha_upper_bound,
                         eta_absolute, eta_relative, polarization_fraction,
                         preparation_bounds)
from .fitting import FitError, FitReport, fit_hom, fit_saturation
from .models import (CavityCoupling, DetectionChain, EmitterSpec,
                     ExcitationSchedule, HomModelParams, beta_and_efficiency,
                     hom_binned_model)
from .simulate import SimConfig, SimulationError, TimeTagStream, simulate

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

OUTPUT_DIR_ENV = "PHOTONLAB_OUT"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config schema

_SECTION_TYPES = {
    "emitter": EmitterSpec,
    "schedule": ExcitationSchedule,
    "chain": DetectionChain,
    "cavity": CavityCoupling,
}
_SIMULATION_KEYS = {"mode", "n_periods", "rng_seed", "background_mode",
                    "interference"}
_FIT_KEYS = {"bin_width_ps", "window_ns", "center_window_ns", "norm_span_ns",
             "gamma", "delta", "rep_period", "irf_sigma", "weight_mode",
             "exclusion_half_width"}
_TOP_KEYS = {"emitter", "schedule", "chain", "cavity", "simulation", "fit",
             "output_dir"}


def _line_of(path: Path, key: str) -> str:
    """Best-effort line reference for an offending config key."""
    try:
        for i, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.split("#")[0]
            if stripped.strip().startswith(f"{key}:"):
                return f"{path}:{i}"
    except OSError:
        pass
    return str(path)


def _check_keys(path: Path, section: str, given: dict, allowed: set):
    unknown = set(given) - allowed
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(
            f"{_line_of(path, key)}: unknown key '{key}' in section "
            f"'{section}' (allowed: {', '.join(sorted(allowed))})")


def _build_section(path: Path, name: str, doc: dict):
    cls = _SECTION_TYPES[name]
    spec = doc.get(name)
    if spec is None:
        raise ConfigError(f"{path}: missing required section '{name}'")
    if not isinstance(spec, dict):
        raise ConfigError(f"{_line_of(path, name)}: section '{name}' must be a mapping")
    allowed = {f.name for f in dataclass_fields(cls)}
    _check_keys(path, name, spec, allowed)
    try:
        return cls(**spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_line_of(path, name)}: invalid '{name}': {exc}") from exc


def load_config(path) -> dict:
    """Parse and schema-validate a YAML run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark else str(path)
        raise ConfigError(f"{where}: YAML parse error: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping of sections")
    _check_keys(path, "<top level>", doc, _TOP_KEYS)
    if "simulation" in doc:
        _check_keys(path, "simulation", doc["simulation"] or {}, _SIMULATION_KEYS)
    if "fit" in doc:
        _check_keys(path, "fit", doc["fit"] or {}, _FIT_KEYS)
    doc["_path"] = path
    return doc


def sim_config_from(doc: dict, periods=None, seed=None) -> SimConfig:
    path = doc["_path"]
    emitter = _build_section(path, "emitter", doc)
    schedule = _build_section(path, "schedule", doc)
    chain = _build_section(path, "chain", doc)
    sim = dict(doc.get("simulation") or {})
    if "mode" not in sim:
        raise ConfigError(f"{path}: simulation.mode is required")
    if periods is not None:
        sim["n_periods"] = periods
    if seed is not None:
        sim["rng_seed"] = seed
    try:
        return SimConfig(emitter=emitter, schedule=schedule, chain=chain, **sim)
    except (SimulationError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid simulation section: {exc}") from exc


# ---------------------------------------------------------------------------
# provenance

def _provenance(args_ns, extra=None) -> dict:
    doc = {"tool": f"photonlab {__version__}",
           "command": " ".join(sys.argv[1:])}
    doc.update(extra or {})
    return doc


def _write_sidecar(out_path: Path, payload: dict):
    side = out_path.with_suffix(out_path.suffix + ".provenance.json")
    with open(side, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_out(arg_out, default_name: str) -> Path:
    if arg_out:
        return Path(arg_out)
    base = Path(os.environ.get(OUTPUT_DIR_ENV, "."))
    base.mkdir(parents=True, exist_ok=True)
    return base / default_name


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    doc = load_config(args.config)
    if args.periods is not None and args.periods < 1:
        raise ConfigError("--periods must be >= 1")
    config = sim_config_from(doc, periods=args.periods, seed=args.seed)
    stream = simulate(config, n_jobs=args.threads)
    out = _resolve_out(args.out, "stream")
    out.parent.mkdir(parents=True, exist_ok=True)
    prov = _provenance(args, {"config_digest": config.digest(),
                              "rng_seed": config.rng_seed,
                              "n_periods": config.n_periods,
                              "records": len(stream)})
    written = []
    if args.format in ("csv", "both"):
        path = out.with_suffix(".csv")
        stream.to_csv(path, {"config_digest": config.digest(),
                             "rng_seed": config.rng_seed})
        written.append(path)
    if args.format in ("binary", "both"):
        path = out.with_suffix(".ttag")
        stream.to_binary(path)
        written.append(path)
    for path in written:
        _write_sidecar(path, prov)
        print(f"wrote {path} ({len(stream)} records)")
    return EXIT_OK


def _load_stream(path) -> TimeTagStream:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"stream file not found: {path}")
    if path.suffix == ".csv":
        return TimeTagStream.from_csv(path)
    return TimeTagStream.from_binary(path)


def cmd_correlate(args) -> int:
    stream = _load_stream(args.stream)
    hist = correlate(stream, bin_width_ps=args.bin_width_ps,
                     window_ps=int(args.window_ns * 1000),
                     n_slices=max(1, args.threads))
    out = _resolve_out(args.out, "histogram.csv")
    hist.to_csv(out, _provenance(args, {"stream": str(args.stream)}))
    _write_sidecar(out, _provenance(args))
    print(f"wrote {out} ({hist.total_pairs} pairs)")
    return EXIT_OK


def cmd_g2(args) -> int:
    hist = Histogram.from_csv(args.hist)
    if hist.counts.sum() == 0:
        raise FitError("histogram is empty; cannot normalize g2")
    value, err = g2_zero(hist, args.rep_period_ns, args.center_window_ns,
                         args.norm_span_ns)
    doc = {"g2_zero": {"value": value, "error": err},
           "center_window_ns": args.center_window_ns,
           "norm_span_ns": args.norm_span_ns,
           "rep_period_ns": args.rep_period_ns,
           "provenance": _provenance(args, {"histogram": str(args.hist)})}
    out = _resolve_out(args.out, "g2.json")
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"g2(0) = {value:.4f} +- {err:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_fit_hom(args) -> int:
    hist = Histogram.from_csv(args.hist)
    report = fit_hom(hist, gamma=args.gamma, delta=args.delta,
                     rep_period=args.rep_period, irf_sigma=args.irf_sigma,
                     weight_mode=args.weight_mode)
    report.provenance = _provenance(args, {"histogram": str(args.hist)})
    out = _resolve_out(args.out, "hom_fit.json")
    report.to_json(out)
    vis = report.derived["visibility"]
    print(f"gamma_dp = {report['gamma_dp'][0]:.4f} +- {report['gamma_dp'][1]:.4f} ns^-1")
    print(f"V = {vis['value']:.4f} +- {vis['error']:.4f}")
    print(f"wrote {out}")
    if args.curve_out:
        _write_hom_curve(args.curve_out, hist, report)
        print(f"wrote {args.curve_out}")
    return EXIT_OK


def _write_hom_curve(path, hist: Histogram, report: FitReport):
    fx = report.fixed
    params = HomModelParams(gamma=fx["gamma"], gamma_dp=report["gamma_dp"][0],
                            amplitude=report["amplitude"][0], delta=fx["delta"],
                            rep_period=fx["rep_period"], irf_sigma=fx["irf_sigma"])
    comps = hom_binned_model(hist.bin_centers_ns, params, components=True)
    cols = ["bin_center_ps", "counts", "model_total", "comp_center",
            "comp_minus_delta", "comp_plus_delta", "comp_minus_2delta",
            "comp_plus_2delta", "comp_side"]
    data = np.column_stack([
        hist.bin_centers_ps, hist.counts, comps["total"], comps["center"],
        comps["minus_delta"], comps["plus_delta"], comps["minus_2delta"],
        comps["plus_2delta"], comps["side"]])
    with open(path, "w") as fh:
        fh.write(f"# bin_width_ps={hist.bin_width_ps}\n")
        fh.write(f"# t_min_ps={hist.t_min_ps}\n")
        fh.write(f"# visibility={report.derived['visibility']['value']:.6f}\n")
        fh.write(f"# tool=photonlab {__version__}\n")
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, data, fmt="%.6g", delimiter=",")


def cmd_fit_sat(args) -> int:
    path = Path(args.data)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    rows = np.loadtxt(path, delimiter=",", comments="#", skiprows=args.skip_header,
                      ndmin=2)
    if rows.shape[1] < 3:
        raise FitError("saturation data needs power,counts,error columns")
    report = fit_saturation(rows[:, :3])
    report.provenance = _provenance(args, {"data": str(path)})
    out = _resolve_out(args.out, "sat_fit.json")
    report.to_json(out)
    c_sat, p_sat = report["c_sat"], report["p_sat"]
    print(f"c_sat = {c_sat[0]:.6g} +- {c_sat[1]:.3g} counts/s")
    print(f"p_sat = {p_sat[0]:.6g} +- {p_sat[1]:.3g}")
    print(f"wrote {out}")
    if args.curve_out:
        grid = np.geomspace(max(rows[:, 0].min(), 1e-3 * p_sat[0]),
                            rows[:, 0].max(), 200)
        curve = models.saturation_curve(grid, p_sat[0], c_sat[0])
        with open(args.curve_out, "w") as fh:
            fh.write(f"# c_sat={c_sat[0]:.8g}\n# p_sat={p_sat[0]:.8g}\n")
            fh.write(f"# tool=photonlab {__version__}\n")
            fh.write("power,model_counts\n")
            np.savetxt(fh, np.column_stack([grid, curve]), fmt="%.8g", delimiter=",")
        print(f"wrote {args.curve_out}")
    return EXIT_OK


def cmd_efficiency(args) -> int:
    if args.method == "relative":
        for name in ("csat_qd", "csat_bulk", "eta_bulk"):
            if getattr(args, name) is None:
                raise ConfigError(f"--{name.replace('_', '-')} is required for relative")
        value = eta_relative((args.csat_qd, args.csat_qd_err),
                             (args.csat_bulk, args.csat_bulk_err), args.eta_bulk)
        report = EfficiencyReport(method=Method.RELATIVE, eta_x=value,
                                  assumption="alpha_X*eps_X/eps_bulk = 1")
        print(f"eta_X = {value[0] * 100:.1f}% +- {value[1] * 100:.1f}%")
    elif args.method == "absolute":
        for name in ("csat_qd", "eta_setup", "rep_rate"):
            if getattr(args, name) is None:
                raise ConfigError(f"--{name.replace('_', '-')} is required for absolute")
        value = eta_absolute((args.csat_qd, args.csat_qd_err),
                             (args.eta_setup, args.eta_setup_err),
                             args.rep_rate, args.alpha_eps)
        report = EfficiencyReport(method=Method.ABSOLUTE, eta_x=value,
                                  assumption=f"alpha_X*eps_X = {args.alpha_eps}")
        print(f"eta_X = {value[0] * 100:.1f}% +- {value[1] * 100:.1f}%")
    elif args.method == "bounds":
        for name in ("intensity_ratio", "gamma_fast", "gamma_nrad"):
            if getattr(args, name) is None:
                raise ConfigError(f"--{name.replace('_', '-')} is required for bounds")
        report = preparation_bounds(args.intensity_ratio, args.gamma_fast,
                                    (args.gamma_nrad, args.gamma_nrad_err))
        (lo, dlo), (hi, dhi) = report.epsilon_bounds
        qe, dqe = report.eta_qe
        print(f"eta_QE = {qe * 100:.0f}% +- {dqe * 100:.0f}%")
        print(f"epsilon in [{lo * 100:.0f}% +- {dlo * 100:.0f}%, "
              f"{hi * 100:.0f}% +- {dhi * 100:.0f}%]")
    elif args.method == "alpha-upper":
        if args.i_slow is None:
            raise ConfigError("--i-slow is required for alpha-upper")
        bound = alpha_upper_bound(args.i_slow, args.i_fast)
        report = EfficiencyReport(method=Method.ABSOLUTE, alpha_upper=bound,
                                  assumption="slow decay attributed to the second dipole")
        print(f"alpha <= {bound:.4g}")
    elif args.method == "rho":
        if args.alpha is None or args.eta_ratio is None:
            raise ConfigError("--alpha and --eta-ratio are required for rho")
        rho = polarization_fraction(args.alpha, args.eta_ratio)
        report = EfficiencyReport(method=Method.ABSOLUTE, rho=rho)
        print(f"rho = {rho:.4f}")
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown method {args.method}")
    if args.out:
        doc = report.to_dict()
        doc["provenance"] = _provenance(args)
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_detuning(args) -> int:
    doc = load_config(args.config)
    cavity = _build_section(doc["_path"], "cavity", doc)
    grid = np.linspace(args.min_nm, args.max_nm, args.points)
    beta, eta, purcell = beta_and_efficiency(grid, cavity)
    out = _resolve_out(args.out, "detuning.csv")
    with open(out, "w") as fh:
        fh.write(f"# q_factor={cavity.q_factor}\n")
        fh.write(f"# purcell_peak={cavity.purcell_peak}\n")
        fh.write(f"# tool=photonlab {__version__}\n")
        fh.write("detuning_nm,beta,eta_x,purcell\n")
        np.savetxt(fh, np.column_stack([grid, beta, eta, purcell]),
                   fmt="%.8g", delimiter=",")
    _write_sidecar(out, _provenance(args))
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduce: bundled end-to-end pipeline

def _bundled(name: str) -> Path:
    return Path(__file__).parent / "configs" / name


def _sat_sweep(doc, powers, periods, seed):
    """Simulated detected-rate points (power, counts_per_s, error) for a sweep."""
    rows = []
    for i, ratio in enumerate(powers):
        base = sim_config_from(doc, periods=periods, seed=seed + i)
        config = replace(base, schedule=replace(base.schedule,
                                                power_ratio=float(ratio)))
        stream = simulate(config)
        span_s = config.n_periods * config.schedule.rep_period * 1e-9
        rate = len(stream) / span_s
        err = max(math.sqrt(len(stream)), 1.0) / span_s
        rows.append((ratio, rate, err))
    return np.asarray(rows)


def _check(label, value, target, tol):
    ok = abs(value - target) <= tol
    print(f"  [{'PASS' if ok else 'FAIL'}] {label}: {value:.4g} "
          f"(target {target:.4g} +- {tol:.2g})")
    return ok


def cmd_reproduce(args) -> int:
    out_dir = Path(args.out or os.environ.get(OUTPUT_DIR_ENV, "reproduce_out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    quick = args.quick
    ok = True

    print("== efficiency calculus ==")
    eta_rel = eta_relative((2.93e5, 8.6e3), (5.22e3, 0.10e3), 0.0079)
    ok &= _check("relative collection efficiency", eta_rel[0], 0.443, 0.001)
    eta_abs = eta_absolute((722e3, 46e3), (0.120, 0.014), 80e6, 1.0)
    ok &= _check("absolute collection efficiency", eta_abs[0], 0.150, 0.002)
    prep = preparation_bounds(0.52, 0.62, (0.06, 0.05))
    ok &= _check("quantum efficiency", prep.eta_qe[0], 0.90, 0.005)
    ok &= _check("preparation lower bound", prep.epsilon_bounds[0][0], 0.59, 0.005)
    ok &= _check("preparation upper bound", prep.epsilon_bounds[1][0], 0.72, 0.005)
    ok &= _check("polarization-mixing bound", alpha_upper_bound(0.092), 1.092, 1e-12)

    print("== antibunching pipeline (HBT) ==")
    doc = load_config(_bundled("qd1_hbt.yaml"))
    config = sim_config_from(doc, periods=200_000 if quick else None)
    stream = simulate(config, n_jobs=args.threads)
    stream.to_binary(out_dir / "qd1_hbt.ttag")
    hist = correlate(stream, 50, 160_000, n_slices=max(1, args.threads))
    hist.to_csv(out_dir / "qd1_hbt_hist.csv")
    g2, g2_err = g2_zero(hist, config.schedule.rep_period)
    ok &= _check("g2(0) at 2.1x saturation", g2, 0.04, max(3 * g2_err, 0.01))

    print("== two-photon interference (HOM) ==")
    for label, cfg_name, t2_star in (("LO", "hom_lo.yaml", 0.49),
                                     ("LA", "hom_la.yaml", 0.77)):
        doc = load_config(_bundled(cfg_name))
        config = sim_config_from(doc, periods=200_000 if quick else None)
        stream = simulate(config, n_jobs=args.threads)
        hist = correlate(stream, 50, 48_000, n_slices=max(1, args.threads))
        hist.to_csv(out_dir / f"hom_{label.lower()}_hist.csv")
        fit_cfg = doc.get("fit") or {}
        gamma = fit_cfg.get("gamma", config.emitter.gamma_fast)
        report = fit_hom(hist, gamma=gamma,
                         delta=config.schedule.intra_delay,
                         rep_period=config.schedule.rep_period,
                         irf_sigma=math.sqrt(2.0) * config.chain.irf_sigma)
        report.to_json(out_dir / f"hom_{label.lower()}_fit.json")
        _write_hom_curve(out_dir / f"hom_{label.lower()}_curve.csv", hist, report)
        vis = report.derived["visibility"]
        t2s = report.derived["T2_star_ns"]
        target_v = models.visibility(1 / 1.61, 1 / t2_star)
        tol_v = max(3 * vis["error"], 0.04 if label == "LA" else 0.02)
        ok &= _check(f"V_{label}", vis["value"], target_v, tol_v)
        ok &= _check(f"T2*_{label} (ns)", t2s["value"], t2_star,
                     max(3 * t2s["error"], 0.2 * t2_star))

    print("== coherence table ==")
    for t2_star, t2_target in ((0.49, 0.43), (0.77, 0.63)):
        _, _, t2 = models.coherence_times(1 / 1.61, 1 / t2_star)
        ok &= _check(f"T2 for T2*={t2_star} ns", t2, t2_target, 0.01)

    print("== saturation sweep ==")
    doc = load_config(_bundled("qd1_sat.yaml"))
    powers = np.geomspace(0.08, 8.0, 10)
    rows = _sat_sweep(doc, powers, 50_000 if quick else 200_000, seed=11)
    np.savetxt(out_dir / "qd1_sat.csv", rows, delimiter=",",
               header="power,counts,error", comments="")
    report = fit_saturation(rows)
    report.to_json(out_dir / "qd1_sat_fit.json")
    ok &= _check("recovered saturation power ratio", report["p_sat"][0], 1.0,
                 max(3 * report["p_sat"][1], 0.05))

    print("== detuning sweep ==")
    doc = load_config(_bundled("cavity.yaml"))
    cavity = _build_section(doc["_path"], "cavity", doc)
    grid = np.linspace(-40, 40, 161)
    beta, eta, purcell = beta_and_efficiency(grid, cavity)
    with open(out_dir / "detuning.csv", "w") as fh:
        fh.write("detuning_nm,beta,eta_x,purcell\n")
        np.savetxt(fh, np.column_stack([grid, beta, eta, purcell]),
                   fmt="%.8g", delimiter=",")
    b0, e0, f0 = beta_and_efficiency(0.0, cavity)
    ok &= _check("on-resonance Purcell factor", f0,
                 cavity.purcell_peak + cavity.background_inhibition, 1e-9)

    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photonlab",
        description="Simulate and analyze pulsed single-photon-source experiments")
    parser.add_argument("--version", action="version",
                        version=f"photonlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a time-tag stream from a config")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--out", help="output path stem (default $PHOTONLAB_OUT/stream)")
    p.add_argument("--format", choices=["csv", "binary", "both"], default="binary")
    p.add_argument("--periods", type=int, help="override simulation.n_periods")
    p.add_argument("--seed", type=int, help="override simulation.rng_seed")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="build a coincidence histogram from a stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--bin-width-ps", type=int, default=50)
    p.add_argument("--window-ns", type=float, default=48.0)
    p.add_argument("--out")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("g2", help="zero-delay antibunching value from a histogram")
    p.add_argument("--hist", required=True)
    p.add_argument("--rep-period-ns", type=float, required=True)
    p.add_argument("--center-window-ns", type=float, default=2.0)
    p.add_argument("--norm-span-ns", type=float, default=300.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_g2)

    p = sub.add_parser("fit-hom", help="staged five-peak interference fit")
    p.add_argument("--hist", required=True)
    p.add_argument("--gamma", type=float, required=True,
                   help="decay rate (ns^-1) from time-resolved measurement")
    p.add_argument("--delta", type=float, required=True,
                   help="interferometer delay (ns)")
    p.add_argument("--rep-period", type=float, required=True)
    p.add_argument("--irf-sigma", type=float, required=True,
                   help="Gaussian IRF sigma on the delay axis (ns)")
    p.add_argument("--weight-mode", choices=["mle", "pearson", "neyman"],
                   default="mle")
    p.add_argument("--out")
    p.add_argument("--curve-out", help="also write data/model/component CSV")
    p.set_defaults(func=cmd_fit_hom)

    p = sub.add_parser("fit-sat", help="fit the saturation curve to power series")
    p.add_argument("--data", required=True, help="CSV of power,counts,error")
    p.add_argument("--skip-header", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--curve-out")
    p.set_defaults(func=cmd_fit_sat)

    p = sub.add_parser("efficiency", help="collection/preparation efficiency calculus")
    p.add_argument("--method", required=True,
                   choices=["relative", "absolute", "bounds", "alpha-upper", "rho"])
    p.add_argument("--csat-qd", type=float, dest="csat_qd")
    p.add_argument("--csat-qd-err", type=float, dest="csat_qd_err", default=0.0)
    p.add_argument("--csat-bulk", type=float, dest="csat_bulk")
    p.add_argument("--csat-bulk-err", type=float, dest="csat_bulk_err", default=0.0)
    p.add_argument("--eta-bulk", type=float, dest="eta_bulk")
    p.add_argument("--eta-setup", type=float, dest="eta_setup")
    p.add_argument("--eta-setup-err", type=float, dest="eta_setup_err", default=0.0)
    p.add_argument("--rep-rate", type=float, dest="rep_rate")
    p.add_argument("--alpha-eps", type=float, dest="alpha_eps", default=1.0)
    p.add_argument("--intensity-ratio", type=float, dest="intensity_ratio")
    p.add_argument("--gamma-fast", type=float, dest="gamma_fast")
    p.add_argument("--gamma-nrad", type=float, dest="gamma_nrad")
    p.add_argument("--gamma-nrad-err", type=float, dest="gamma_nrad_err", default=0.0)
    p.add_argument("--i-slow", type=float, dest="i_slow")
    p.add_argument("--i-fast", type=float, dest="i_fast", default=1.0)
    p.add_argument("--alpha", type=float)
    p.add_argument("--eta-ratio", type=float, dest="eta_ratio")
    p.add_argument("--out")
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("detuning", help="beta-factor / efficiency vs cavity detuning")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--min-nm", type=float, default=-40.0)
    p.add_argument("--max-nm", type=float, default=40.0)
    p.add_argument("--points", type=int, default=161)
    p.add_argument("--out")
    p.set_defaults(func=cmd_detuning)

    p = sub.add_parser("reproduce", help="run the bundled pipeline and check targets")
    p.add_argument("--out", help="output directory")
    p.add_argument("--quick", action="store_true",
                   help="smaller runs (statistical checks loosened)")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FitError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FileNotFoundError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
