"""photonlab: pulsed single-photon-source simulation and analysis toolkit."""

__version__ = "0.1.0"

from .models import (
    CavityCoupling,
    DetectionChain,
    EmitterSpec,
    ExcitationSchedule,
    HomModelParams,
    beta_and_efficiency,
    coherence_times,
    convolve_with_irf,
    decoherence_energy_uev,
    hom_coincidence_density,
    hom_model_curve,
    saturation_curve,
    visibility,
)
from .simulate import SimConfig, TimeTagStream, simulate
from .correlate import Histogram, PeakStats, correlate, g2_zero, peak_amplitude_scan
from .fitting import FitReport, area_visibility, fit_hom, fit_lifetime, fit_saturation
from .efficiency import (
    EfficiencyReport,
    alpha_upper_bound,
    eta_absolute,
    eta_relative,
    polarization_fraction,
    preparation_bounds,
)

__all__ = [
    "CavityCoupling", "DetectionChain", "EmitterSpec", "ExcitationSchedule",
    "HomModelParams", "SimConfig", "TimeTagStream", "Histogram", "PeakStats",
    "FitReport", "EfficiencyReport",
    "beta_and_efficiency", "coherence_times", "convolve_with_irf",
    "decoherence_energy_uev", "hom_coincidence_density", "hom_model_curve",
    "saturation_curve", "visibility", "simulate", "correlate", "g2_zero",
    "peak_amplitude_scan", "area_visibility", "fit_hom", "fit_lifetime",
    "fit_saturation", "alpha_upper_bound", "eta_absolute", "eta_relative",
    "polarization_fraction", "preparation_bounds",
]
