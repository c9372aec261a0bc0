"""Nonlinear least-squares fitting of the analytic models to histograms.

Count histograms can be weighted three ways: "mle" (default) minimizes the
Poisson deviance via signed square-root deviance residuals, "pearson" uses
model-based sigma = sqrt(model), and "neyman" uses the observed
sqrt(max(counts, 1)).  Neyman weighting is biased wherever bins run nearly
empty (the interference dip), which is why it is not the default.  Errors
come from the Gauss-Newton covariance at the optimum without rescaling by
the reduced chi-square, so reported uncertainties are absolute.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from . import models
from .correlate import Histogram
from .models import HomModelParams, hom_binned_model

MAX_NFEV = 2000


class FitError(RuntimeError):
    pass


class FitConvergenceError(FitError):
    def __init__(self, stage: str, message: str, residual_norm: float):
        super().__init__(f"{stage}: {message} (residual norm {residual_norm:.4g})")
        self.stage = stage
        self.residual_norm = residual_norm


@dataclass
class FitReport:
    """Fitted parameters with uncertainties and derived physics quantities."""

    kind: str
    param_names: list
    values: np.ndarray
    errors: np.ndarray
    covariance: np.ndarray
    chi2_per_dof: float
    derived: dict = field(default_factory=dict)
    fixed: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        cov = self.covariance
        if cov.shape != (len(self.param_names),) * 2:
            raise ValueError("covariance shape does not match parameters")
        if not np.allclose(cov, cov.T, atol=1e-10 * (1 + np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        eig = np.linalg.eigvalsh(0.5 * (cov + cov.T))
        if eig.size and eig.min() < -1e-9 * max(1.0, eig.max()):
            raise ValueError("covariance must be positive semidefinite")

    def __getitem__(self, name: str):
        i = self.param_names.index(name)
        return float(self.values[i]), float(self.errors[i])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "parameters": {n: {"value": float(v), "error": float(e)}
                           for n, v, e in zip(self.param_names, self.values, self.errors)},
            "covariance": {"order": list(self.param_names),
                           "matrix": self.covariance.tolist()},
            "chi2_per_dof": float(self.chi2_per_dof),
            "derived": self.derived,
            "fixed": self.fixed,
            "stages": self.stages,
            "provenance": self.provenance,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, doc: dict) -> "FitReport":
        names = doc["covariance"]["order"]
        values = [doc["parameters"][n]["value"] for n in names]
        errors = [doc["parameters"][n]["error"] for n in names]
        return cls(doc["kind"], list(names), np.array(values), np.array(errors),
                   np.array(doc["covariance"]["matrix"]), doc["chi2_per_dof"],
                   doc.get("derived", {}), doc.get("fixed", {}),
                   doc.get("stages", {}), doc.get("provenance", {}))

    @classmethod
    def from_json(cls, path) -> "FitReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _solve(stage: str, residual: Callable, x0, bounds) -> tuple:
    res = least_squares(residual, x0, bounds=bounds, max_nfev=MAX_NFEV,
                        x_scale="jac", method="trf")
    if not res.success:
        raise FitConvergenceError(stage, res.message, float(np.linalg.norm(res.fun)))
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
    cov = 0.5 * (cov + cov.T)
    chi2 = float(res.fun @ res.fun)
    dof = max(res.fun.size - res.x.size, 1)
    return res.x, cov, chi2 / dof


def poisson_sigma(counts: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(np.asarray(counts, dtype=float), 1.0))


WEIGHT_MODES = ("mle", "pearson", "neyman")


def count_residuals(model: np.ndarray, counts: np.ndarray, mode: str) -> np.ndarray:
    """Residual vector for Poisson count data under the chosen weighting."""
    if mode == "neyman":
        return (model - counts) / poisson_sigma(counts)
    if mode == "pearson":
        return (model - counts) / np.sqrt(np.maximum(model, 1e-12))
    if mode == "mle":
        m = np.maximum(model, 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            entropy = np.where(counts > 0, counts * np.log(counts / m), 0.0)
        dev = 2.0 * (m - counts + entropy)
        return np.sign(counts - m) * np.sqrt(np.maximum(dev, 0.0))
    raise FitError(f"unknown weight mode '{mode}'; choose from {WEIGHT_MODES}")


# ---------------------------------------------------------------------------
# saturation

def fit_saturation(points) -> FitReport:
    """Weighted fit of c_sat*(1 - exp(-P/P_sat)) to (power, counts, error) rows."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 4 or pts.shape[1] != 3:
        raise FitError("need at least 4 (power, counts, error) points")
    power, counts, err = pts[:, 0], pts[:, 1], pts[:, 2]
    if np.any(err <= 0):
        raise FitError("errors must be positive")
    c0 = counts.max()
    half = counts <= 0.63 * c0
    p0 = power[half].max() if half.any() and power[half].max() > 0 else power.mean()

    def residual(x):
        return (models.saturation_curve(power, x[1], x[0]) - counts) / err

    x, cov, chi2 = _solve("saturation", residual, [c0, p0],
                          ([0.0, 1e-12 * power.max()], [np.inf, np.inf]))
    errors = np.sqrt(np.diag(cov))
    return FitReport("saturation", ["c_sat", "p_sat"], x, errors, cov, chi2)


# ---------------------------------------------------------------------------
# coincidence-cluster fit, staged

def _hom_params(amplitude, gamma_dp, gamma, delta, rep_period, irf_sigma,
                fss_beat=None, beat_weight=0.0) -> HomModelParams:
    return HomModelParams(gamma=gamma, gamma_dp=gamma_dp, amplitude=amplitude,
                          delta=delta, rep_period=rep_period, irf_sigma=irf_sigma,
                          fss_beat=fss_beat, beat_weight=beat_weight)


def _derived_from_dephasing(gamma: float, gamma_dp: float, gamma_dp_err: float) -> dict:
    vis = models.visibility(gamma, gamma_dp)
    dvis = 2.0 * gamma / (gamma + 2.0 * gamma_dp) ** 2 * gamma_dp_err
    t1, t2_star, t2 = models.coherence_times(gamma, gamma_dp)
    t2_star_err = gamma_dp_err / gamma_dp ** 2 if gamma_dp > 0 else math.inf
    t2_err = gamma_dp_err / (0.5 * gamma + gamma_dp) ** 2
    return {
        "visibility": {"value": vis, "error": dvis},
        "T1_ns": {"value": t1, "error": 0.0},
        "T2_star_ns": {"value": t2_star, "error": t2_star_err},
        "T2_ns": {"value": t2, "error": t2_err},
        "decoherence_energy_uev": {
            "value": models.decoherence_energy_uev(gamma, gamma_dp),
            "error": models.HBAR_UEV_NS * gamma_dp_err},
        "dephasing_energy_uev": {
            "value": models.dephasing_energy_uev(gamma_dp),
            "error": models.HBAR_UEV_NS * gamma_dp_err},
    }


def fit_hom(hist: Histogram, gamma: float, delta: float, rep_period: float,
            irf_sigma: float, exclusion_half_width: Optional[float] = None,
            n_model_clusters: int = 5, weight_mode: str = "mle") -> FitReport:
    """Three-stage fit of the coincidence-cluster model to a histogram.

    gamma, delta, rep_period and irf_sigma are fixed inputs (gamma and
    delta come from independent time-resolved measurements; irf_sigma is
    the timing-response width on the coincidence delay axis).  Stage 1
    fits the overall amplitude on the side clusters only, as a consistency
    check.  Stage 2 fits the amplitude A on the central cluster with the
    region |tau| < exclusion_half_width (default delta/2) left out.
    Stage 3 holds A fixed and fits the pure-dephasing rate gamma_dp on the
    full central cluster.  The center-peak suppression reaches past the
    exclusion window when gamma_dp is small, so stages 2 and 3 alternate
    to joint convergence (one pass suffices in the strongly dephased
    regime).  All curves are IRF-convolved before comparison.
    """
    if irf_sigma is None or irf_sigma < 0:
        raise FitError("irf_sigma must be provided (>= 0); there is no default")
    if exclusion_half_width is None:
        exclusion_half_width = delta / 2.0
    tau = hist.bin_centers_ns
    counts = hist.counts.astype(float)
    needed = 3.5 * rep_period
    if tau.min() > -needed or tau.max() < needed:
        raise FitError("histogram must cover at least 3 clusters on each side of zero")

    central = np.abs(tau) <= rep_period / 2.0
    side = ~central
    stage2_sel = central & (np.abs(tau) >= exclusion_half_width)

    def model_counts(amplitude, gamma_dp, sel):
        params = _hom_params(amplitude, gamma_dp, gamma, delta, rep_period, irf_sigma)
        return hom_binned_model(tau, params, n_model_clusters)[sel]

    # rough amplitude scale from the counts around the +-delta peaks
    width = tau[1] - tau[0]
    near = central & (np.abs(np.abs(tau) - delta) < delta / 4.0)
    a0 = max((counts[near].mean() if near.any() else counts.max()) / width, 1e-6)

    def res_side(x):
        return count_residuals(model_counts(x[0], np.inf, side), counts[side], weight_mode)

    x1, cov1, chi2_1 = _solve("stage1-side-clusters", res_side, [a0],
                              ([0.0], [np.inf]))
    a_side = float(x1[0])

    gamma_dp = math.inf
    amplitude = a_side
    rounds = 0
    for rounds in range(1, 9):
        def res_central_amp(x):
            return count_residuals(model_counts(x[0], gamma_dp, stage2_sel),
                                   counts[stage2_sel], weight_mode)

        x2, cov2, chi2_2 = _solve("stage2-central-amplitude", res_central_amp,
                                  [amplitude], ([0.0], [np.inf]))
        amplitude = float(x2[0])
        amp_err = float(np.sqrt(cov2[0, 0]))

        def res_dephasing(x):
            return count_residuals(model_counts(amplitude, x[0], central),
                                   counts[central], weight_mode)

        x3, cov3, chi2_3 = _solve("stage3-dephasing", res_dephasing,
                                  [gamma if math.isinf(gamma_dp) else gamma_dp],
                                  ([0.0], [np.inf]))
        previous = gamma_dp
        gamma_dp = float(x3[0])
        gamma_dp_err = float(np.sqrt(cov3[0, 0]))
        if abs(gamma_dp - previous) <= 1e-3 * gamma_dp + 1e-4 * gamma:
            break

    cov = np.diag([amp_err ** 2, gamma_dp_err ** 2])
    report = FitReport(
        "hom", ["amplitude", "gamma_dp"],
        np.array([amplitude, gamma_dp]), np.array([amp_err, gamma_dp_err]),
        cov, chi2_3,
        derived=_derived_from_dephasing(gamma, gamma_dp, gamma_dp_err),
        fixed={"gamma": gamma, "delta": delta, "rep_period": rep_period,
               "irf_sigma": irf_sigma,
               "exclusion_half_width": exclusion_half_width,
               "weight_mode": weight_mode},
        stages={
            "side": {"amplitude": a_side,
                     "amplitude_error": float(np.sqrt(cov1[0, 0])),
                     "chi2_per_dof": chi2_1},
            "central_amplitude": {"chi2_per_dof": chi2_2},
            "dephasing": {"chi2_per_dof": chi2_3, "rounds": rounds},
            "amplitude_consistency": a_side / amplitude,
        })
    return report


def hom_fit_residuals(hist: Histogram, report: FitReport):
    """Pearson-standardized residuals of the fitted model, central cluster."""
    tau = hist.bin_centers_ns
    counts = hist.counts.astype(float)
    fx = report.fixed
    params = _hom_params(report["amplitude"][0], report["gamma_dp"][0],
                         fx["gamma"], fx["delta"], fx["rep_period"], fx["irf_sigma"])
    model = hom_binned_model(tau, params, 5)
    central = np.abs(tau) <= fx["rep_period"] / 2.0
    return (counts[central] - model[central]) / np.sqrt(np.maximum(model[central], 1e-12))


# ---------------------------------------------------------------------------
# area-ratio visibility

def area_visibility(hist: Histogram, delta: float, integration_window: float):
    """Visibility 1 - S0/S1 from windowed peak areas.

    S0 integrates the window around zero delay, S1 the average of the
    windows around +-delta.  When the peaks overlap (gamma*delta small)
    this estimator biases low: neighboring-peak tails leak into the center
    window, so S0 stays finite even for a fully coalescing source and the
    fit-based estimate should be preferred.  (Windows much narrower than
    the coherence dip instead sample the suppressed center and can bias
    high; the default protocol integrates the full window = delta.)
    Returns (visibility, poisson_error).
    """
    if integration_window <= 0 or integration_window > delta:
        raise ValueError("integration_window must be in (0, delta] to keep windows disjoint")
    half_ps = integration_window * 500.0
    s0 = hist.window_counts(0.0, half_ps)
    s1a = hist.window_counts(-delta * 1e3, half_ps)
    s1b = hist.window_counts(delta * 1e3, half_ps)
    s1 = 0.5 * (s1a + s1b)
    if s1 == 0:
        raise ValueError("empty side peaks; cannot normalize")
    vis = 1.0 - s0 / s1
    var = s0 / s1 ** 2 + (s0 ** 2 / s1 ** 4) * 0.25 * (s1a + s1b)
    return vis, math.sqrt(var)


# ---------------------------------------------------------------------------
# bi-exponential lifetime helper

def fit_lifetime(t, counts, irf_sigma: float, t0: float = 0.0,
                 weight_mode: str = "mle") -> FitReport:
    """Fit A_fast*exp(-g_fast*(t-t0)) + A_slow*exp(-g_slow*(t-t0)), IRF-convolved.

    Supplies the decay rates used as fixed inputs elsewhere.  t must be a
    uniform grid (ns).
    """
    t = np.asarray(t, dtype=float)
    counts = np.asarray(counts, dtype=float)
    dt = t[1] - t[0]

    def curve(x):
        a_f, g_f, a_s, g_s = x
        rel = t - t0
        y = np.zeros_like(t)
        for a, g in ((a_f, g_f), (a_s, g_s)):
            comp = np.where(rel >= 0, a * np.exp(-g * np.clip(rel, 0, None)), 0.0)
            comp[rel == 0] *= 0.5
            y += comp
        if irf_sigma > 0:
            y = models.convolve_with_irf(y, dt, irf_sigma)
        return y

    peak = counts.max()
    x0 = [peak, 1.0, 0.1 * peak, 0.2]
    x, cov, chi2 = _solve("lifetime",
                          lambda x: count_residuals(curve(x), counts, weight_mode), x0,
                          ([0, 1e-6, 0, 1e-6], [np.inf, np.inf, np.inf, np.inf]))
    if x[1] < x[3]:  # keep the fast component first
        x = np.array([x[2], x[3], x[0], x[1]])
        perm = [2, 3, 0, 1]
        cov = cov[np.ix_(perm, perm)]
    errors = np.sqrt(np.diag(cov))
    report = FitReport("lifetime", ["a_fast", "gamma_fast", "a_slow", "gamma_slow"],
                       x, errors, cov, chi2, fixed={"irf_sigma": irf_sigma, "t0": t0})
    i_fast = x[0] / x[1]
    i_slow = x[2] / x[3]
    report.derived["slow_fast_intensity_ratio"] = {
        "value": i_slow / i_fast if i_fast > 0 else math.inf, "error": 0.0}
    return report


# ---------------------------------------------------------------------------
# parametric bootstrap

def parametric_bootstrap(make_data: Callable[[np.random.Generator], tuple],
                         fit: Callable, n_trials: int, seed: int = 0):
    """Run fit over n_trials resampled datasets; returns the fitted arrays."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_trials):
        args = make_data(rng)
        rows.append(fit(*args))
    return np.asarray(rows)
