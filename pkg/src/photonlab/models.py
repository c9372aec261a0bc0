"""Domain types and closed-form models for a pulsed single-photon emitter.

All times are in nanoseconds and rates in ns^-1 unless a name says
otherwise.  Blinking rates are in us^-1 (the telegraph process is orders
of magnitude slower than the emission dynamics), detector dark counts in
s^-1 and timestamps in integer picoseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

# hbar in ueV * ns (2pi-reduced)
HBAR_UEV_NS = 0.6582119569

# Relative weights of the five peaks in a coincidence cluster, in units of
# the model amplitude A, at offsets (-2d, -d, 0, +d, +2d) from the cluster
# center.  Central cluster: the center peak additionally carries the
# two-photon coherence suppression.  Side clusters pick up correlations
# with both the previous and following pulse pair, hence 1:4:6:4:1.
CENTRAL_WEIGHTS = (0.5, 1.0, 1.0, 1.0, 0.5)
SIDE_WEIGHTS = (0.5, 2.0, 3.0, 2.0, 0.5)


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class EmitterSpec:
    """Rates and per-pulse branching probabilities of the emitter.

    gamma_fast / gamma_slow are the two components of the bi-exponential
    decay, gamma_nrad the non-radiative rate entering the internal quantum
    efficiency, gamma_dp the pure-dephasing rate.  xi_x / xi_x2 are the
    mean neutral / charged exciton preparations per excitation pulse.
    blink_off_rate / blink_on_rate (us^-1) drive the bright/dark telegraph.
    """

    gamma_fast: float
    gamma_slow: float
    gamma_nrad: float = 0.0
    gamma_dp: float = 0.0
    fss_beat: Optional[float] = None
    xi_x: float = 1.0
    xi_x2: float = 0.0
    blink_off_rate: float = 0.0
    blink_on_rate: float = 0.0

    def __post_init__(self):
        for name in ("gamma_fast", "gamma_slow", "gamma_nrad", "gamma_dp",
                     "blink_off_rate", "blink_on_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.gamma_fast > self.gamma_slow:
            raise ValueError("gamma_fast must exceed gamma_slow")
        if not self.gamma_fast > self.gamma_nrad:
            raise ValueError("gamma_fast must exceed gamma_nrad")
        if self.xi_x < 0 or self.xi_x2 < 0 or self.xi_x + self.xi_x2 > 1.0 + 1e-12:
            raise ValueError("xi_x, xi_x2 must be >= 0 with xi_x + xi_x2 <= 1")

    @property
    def eta_qe(self) -> float:
        """Internal quantum efficiency (gamma_fast - gamma_nrad) / gamma_fast."""
        return (self.gamma_fast - self.gamma_nrad) / self.gamma_fast


@dataclass(frozen=True)
class ExcitationSchedule:
    """Pulse train: one pulse per period (HBT) or a pair (HOM)."""

    rep_period: float
    pulses_per_period: int = 1
    intra_delay: float = 0.0
    power_ratio: float = 1.0

    def __post_init__(self):
        if self.rep_period <= 0:
            raise ValueError("rep_period must be > 0")
        if self.pulses_per_period not in (1, 2):
            raise ValueError("pulses_per_period must be 1 or 2")
        if self.pulses_per_period == 2 and not 0 < self.intra_delay < self.rep_period / 2:
            raise ValueError("intra_delay must satisfy 0 < delay < rep_period/2")
        if self.power_ratio < 0:
            raise ValueError("power_ratio must be >= 0")

    @property
    def excitation_probability(self) -> float:
        """Per-pulse excitation probability 1 - exp(-P/P_sat)."""
        return -math.expm1(-self.power_ratio)


@dataclass(frozen=True)
class DetectionChain:
    """Optical and detector efficiencies of the collection path.

    alpha_mix in [0, 2] is the polarization-mixing factor: the selected
    linear polarization transmits a fraction alpha_mix/2 of the emission
    (1 means no mixing, 2 means both dipoles emit into the selected
    polarization).  background_fraction is the probability that a detected
    photon originates from an uncorrelated emission line.
    """

    eta_first_lens: float = 1.0
    eta_setup: float = 1.0
    alpha_mix: float = 1.0
    background_fraction: float = 0.0
    dark_count_rate: float = 0.0
    irf_sigma: float = 0.0

    def __post_init__(self):
        for name in ("eta_first_lens", "eta_setup", "background_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 0.0 <= self.alpha_mix <= 2.0:
            raise ValueError("alpha_mix must be in [0, 2]")
        if self.irf_sigma < 0 or self.dark_count_rate < 0:
            raise ValueError("irf_sigma and dark_count_rate must be >= 0")

    @property
    def slow_fraction(self) -> float:
        """Fraction of emissions following the slow decay branch.

        The slow bi-exponential component is attributed to the orthogonal
        dipole leaking into the selected polarization, so its weight is
        (alpha_mix - 1)/alpha_mix for alpha_mix > 1 and 0 otherwise.
        """
        if self.alpha_mix > 1.0:
            return (self.alpha_mix - 1.0) / self.alpha_mix
        return 0.0


@dataclass(frozen=True)
class CavityCoupling:
    """Cavity mode parameters for the beta-factor / Purcell model."""

    q_factor: float
    lambda_0: float
    purcell_peak: float
    eta_cav: float
    eta_rad: float = 0.0
    gamma_bulk: float = 1.0
    background_inhibition: float = 0.5

    def __post_init__(self):
        if self.q_factor <= 0:
            raise ValueError("q_factor must be > 0")
        if self.purcell_peak <= 0:
            raise ValueError("purcell_peak must be > 0")
        if not 0.0 <= self.eta_cav <= 1.0 or not 0.0 <= self.eta_rad <= 1.0:
            raise ValueError("eta_cav and eta_rad must be in [0, 1]")
        if self.gamma_bulk <= 0 or self.background_inhibition <= 0:
            raise ValueError("gamma_bulk and background_inhibition must be > 0")


@dataclass(frozen=True)
class HomModelParams:
    """Parameters of the five-peak coincidence-cluster model.

    amplitude is the free scale A of the cluster expression (counts per ns
    of delay for a binned histogram); delta the interferometer delay and
    rep_period the pulse-pair repetition period.  fss_beat/beat_weight
    optionally mix a fine-structure beating factor into the center-peak
    coherence.
    """

    gamma: float
    gamma_dp: float
    amplitude: float
    delta: float
    rep_period: float
    irf_sigma: float = 0.0
    fss_beat: Optional[float] = None
    beat_weight: float = 0.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.gamma_dp < 0:
            raise ValueError("gamma_dp must be >= 0")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be > 0")
        if self.delta <= 0 or self.rep_period <= 0:
            raise ValueError("delta and rep_period must be > 0")
        if not 0.0 <= self.beat_weight <= 1.0:
            raise ValueError("beat_weight must be in [0, 1]")


# ---------------------------------------------------------------------------
# closed-form models

def saturation_curve(power, p_sat, c_sat):
    """Detected count rate under pulsed excitation, c_sat*(1 - exp(-P/P_sat))."""
    if p_sat <= 0:
        raise ValueError("p_sat must be > 0")
    power = np.asarray(power, dtype=float)
    if np.any(power < 0):
        raise ValueError("power must be >= 0")
    if c_sat < 0:
        raise ValueError("c_sat must be >= 0")
    out = c_sat * -np.expm1(-power / p_sat)
    return float(out) if out.ndim == 0 else out


def coherence_suppression(tau, params: HomModelParams):
    """Center-peak factor 1 - C(tau) with C the two-photon coherence.

    C(tau) = exp(-2*gamma_dp*|tau|), optionally degraded by fine-structure
    beating: C *= (1 - w) + w*cos^2(omega*tau/2).
    """
    atau = np.abs(np.asarray(tau, dtype=float))
    if math.isinf(params.gamma_dp):
        coh = np.where(atau == 0.0, 1.0, 0.0)
    else:
        coh = np.exp(-2.0 * params.gamma_dp * atau)
    if params.fss_beat is not None and params.beat_weight > 0.0:
        w = params.beat_weight
        coh = coh * ((1.0 - w) + w * np.cos(0.5 * params.fss_beat * atau) ** 2)
    return 1.0 - coh


def hom_coincidence_density(tau, params: HomModelParams, cluster: int = 0):
    """Coincidence density of one five-peak cluster at signed delay tau.

    cluster = 0 is the interference cluster: peak amplitudes
    A*(1/2, 1, 1, 1, 1/2) at offsets (-2d, -d, 0, +d, +2d), the center
    term multiplied by (1 - exp(-2*gamma_dp*|tau|)).  Side clusters
    (|cluster| >= 1) are centered at cluster*rep_period and carry
    amplitudes A*(1/2, 2, 3, 2, 1/2), i.e. areas in ratio 1:4:6:4:1, with
    no coherence suppression.  The absolute side weights follow from pair
    counting: a pulse pair contributes four photon-pair combinations to a
    cross-period cluster but only one to the central one.
    """
    tau = np.asarray(tau, dtype=float)
    a = params.amplitude
    d = params.delta
    center = cluster * params.rep_period
    offsets = np.array([-2.0 * d, -d, 0.0, d, 2.0 * d])
    weights = np.array(CENTRAL_WEIGHTS if cluster == 0 else SIDE_WEIGHTS)
    out = np.zeros_like(tau, dtype=float)
    for off, w in zip(offsets, weights):
        peak = np.exp(-params.gamma * np.abs(tau - center - off))
        if cluster == 0 and off == 0.0:
            peak = peak * coherence_suppression(tau, params)
        out += a * w * peak
    return float(out) if out.ndim == 0 else out


def hom_model_curve(tau, params: HomModelParams, n_side_clusters: int = 5):
    """Full coincidence model: central cluster plus n side clusters per side."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau, dtype=float)
    for m in range(-n_side_clusters, n_side_clusters + 1):
        out += hom_coincidence_density(tau, params, cluster=m)
    return out


def cluster_peak_areas(params: HomModelParams, cluster: int = 0) -> np.ndarray:
    """Analytic integrated areas of the five peaks of one cluster."""
    a, g = params.amplitude, params.gamma
    weights = np.array(CENTRAL_WEIGHTS if cluster == 0 else SIDE_WEIGHTS)
    areas = 2.0 * a * weights / g
    if cluster == 0:
        if math.isinf(params.gamma_dp):
            supp = 1.0
        else:
            supp = 1.0 - g / (g + 2.0 * params.gamma_dp)
        areas[2] *= supp
    return areas


def gaussian_kernel(dt: float, sigma: float, half_width_sigmas: float = 10.0) -> np.ndarray:
    """Discrete unit-sum Gaussian kernel sampled on a grid of step dt."""
    if sigma <= 0:
        return np.array([1.0])
    half = int(math.ceil(half_width_sigmas * sigma / dt))
    x = np.arange(-half, half + 1) * dt
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def convolve_with_irf(values, dt: float, irf_sigma: float):
    """Convolve a uniformly sampled curve with a Gaussian timing response.

    The kernel is normalized to unit discrete area so the total integral
    of the curve is preserved; callers must provide a grid extending at
    least ~10 sigma beyond the region they care about.  A grid coarser
    than irf_sigma/4 undersamples the kernel and is rejected.
    """
    values = np.asarray(values, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if irf_sigma < 0:
        raise ValueError("irf_sigma must be >= 0")
    if irf_sigma == 0.0:
        return values.copy()
    if dt > irf_sigma / 4.0:
        raise ValueError(
            f"grid step {dt} too coarse for irf_sigma {irf_sigma}; need dt <= sigma/4")
    kernel = gaussian_kernel(dt, irf_sigma)
    if values.size * kernel.size > 10_000_000:
        from scipy.signal import fftconvolve
        return fftconvolve(values, kernel, mode="same")
    return np.convolve(values, kernel, mode="same")


def hom_binned_model(bin_centers, params: HomModelParams,
                     n_side_clusters: int = 5, components: bool = False):
    """Expected counts per bin of the cluster model, convolved with the IRF.

    bin_centers must be uniformly spaced (ns).  The model is evaluated on
    an internally refined grid (step <= irf_sigma/4), convolved, and
    averaged back onto the bins, so coarse histogram binning remains
    valid.  With components=True a dict of the central cluster's five
    convolved peak curves (plus 'side' and 'total') is returned.
    """
    centers = np.asarray(bin_centers, dtype=float)
    if centers.size < 2:
        raise ValueError("need at least two bins")
    width = centers[1] - centers[0]
    if not np.allclose(np.diff(centers), width, rtol=0, atol=1e-9 * width):
        raise ValueError("bin centers must be uniformly spaced")

    refine = 1
    if params.irf_sigma > 0:
        refine = max(1, int(math.ceil(4.0 * width / params.irf_sigma)))
    h = width / refine
    pad_bins = int(math.ceil((10.0 * params.irf_sigma + 2.0 * width) / width))
    n_fine = (centers.size + 2 * pad_bins) * refine
    start = centers[0] - (pad_bins + 0.5) * width + 0.5 * h
    fine = start + h * np.arange(n_fine)

    def finish(y):
        y = convolve_with_irf(y, h, params.irf_sigma) if params.irf_sigma > 0 else y
        y = y.reshape(-1, refine).mean(axis=1)[pad_bins:pad_bins + centers.size]
        return y * width

    if not components:
        return finish(hom_model_curve(fine, params, n_side_clusters))

    d = params.delta
    names = ("minus_2delta", "minus_delta", "center", "plus_delta", "plus_2delta")
    out = {}
    for name, off, w in zip(names, (-2 * d, -d, 0.0, d, 2 * d), CENTRAL_WEIGHTS):
        peak = params.amplitude * w * np.exp(-params.gamma * np.abs(fine - off))
        if name == "center":
            peak = peak * coherence_suppression(fine, params)
        out[name] = finish(peak)
    side = np.zeros_like(fine)
    for m in range(-n_side_clusters, n_side_clusters + 1):
        if m != 0:
            side += hom_coincidence_density(fine, params, cluster=m)
    out["side"] = finish(side)
    out["total"] = sum(out.values())
    return out


def visibility(gamma: float, gamma_dp: float) -> float:
    """Two-photon indistinguishability gamma / (gamma + 2*gamma_dp)."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    if gamma_dp < 0:
        raise ValueError("gamma_dp must be >= 0")
    return gamma / (gamma + 2.0 * gamma_dp)


def coherence_times(gamma: float, gamma_dp: float):
    """(T1, T2*, T2) with 1/T2 = 1/(2 T1) + 1/T2*.

    gamma_dp = 0 is accepted as the lifetime-limited coherence limit and
    yields T2* = inf, T2 = 2*T1.
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    if gamma_dp < 0:
        raise ValueError("gamma_dp must be >= 0")
    t1 = 1.0 / gamma
    t2_star = math.inf if gamma_dp == 0 else 1.0 / gamma_dp
    t2 = 1.0 / (0.5 * gamma + gamma_dp)
    return t1, t2_star, t2


def decoherence_energy_uev(gamma: float, gamma_dp: float) -> float:
    """hbar*(gamma/2 + gamma_dp) in ueV for rates in ns^-1."""
    return HBAR_UEV_NS * (0.5 * gamma + gamma_dp)


def dephasing_energy_uev(gamma_dp: float) -> float:
    """hbar*gamma_dp in ueV for a rate in ns^-1."""
    return HBAR_UEV_NS * gamma_dp


def lorentzian_unit_peak(x, fwhm: float):
    """Lorentzian normalized to 1 at x = 0, with the given FWHM."""
    if fwhm <= 0:
        raise ValueError("fwhm must be > 0")
    hw = 0.5 * fwhm
    x = np.asarray(x, dtype=float)
    out = hw ** 2 / (x ** 2 + hw ** 2)
    return float(out) if out.ndim == 0 else out


def beta_and_efficiency(detuning, coupling: CavityCoupling):
    """Cavity coupling fraction, collection efficiency and Purcell factor.

    gamma_cav(detuning) follows a unit-peak Lorentzian of FWHM lambda_0/Q
    scaled to purcell_peak*gamma_bulk on resonance; the non-cavity decay
    floor is background_inhibition*gamma_bulk (the band gap inhibits but
    does not suppress leaky-mode decay).  Returns (beta, eta_x, purcell)
    with beta = gamma_cav/gamma_tot, eta_x = eta_cav*beta +
    eta_rad*(1 - beta) and purcell = gamma_tot/gamma_bulk.
    """
    fwhm = coupling.lambda_0 / coupling.q_factor
    gamma_cav = coupling.purcell_peak * coupling.gamma_bulk * \
        lorentzian_unit_peak(detuning, fwhm)
    gamma_bg = coupling.background_inhibition * coupling.gamma_bulk
    gamma_tot = gamma_cav + gamma_bg
    beta = gamma_cav / gamma_tot
    eta_x = coupling.eta_cav * beta + coupling.eta_rad * (1.0 - beta)
    purcell = gamma_tot / coupling.gamma_bulk
    return beta, eta_x, purcell


def beat_weight_from_alpha(alpha_mix: float) -> float:
    """Heuristic beating weight: fraction of light from the second dipole."""
    if alpha_mix <= 1.0:
        return 0.0
    return (alpha_mix - 1.0) / alpha_mix
