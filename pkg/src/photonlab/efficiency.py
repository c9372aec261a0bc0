"""Collection/preparation-efficiency calculus with error propagation.

The saturation count rate of a pulsed source factorizes as
C_sat = eta_setup * eta * r with r = alpha*eps*Gamma_l/2: eta is the
collection efficiency at the first lens, alpha in [0, 2] the polarization
mixing, eps the photon-generation efficiency per pulse and Gamma_l the
laser repetition rate (the /2 selects one of two dipole polarizations).
All error propagation is first order; propagate_mc provides a Monte Carlo
cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

Value = Tuple[float, float]  # (value, one-sigma error)


class EfficiencyRangeError(ValueError):
    """A quantity that must be a probability left [0, 1]."""


class Method(str, Enum):
    RELATIVE = "relative"   # assumes alpha_X * eps_X / eps_bulk = 1
    ABSOLUTE = "absolute"   # assumes alpha_X * eps_X = 1 unless bounds applied


def _check_probability(name: str, value: float, slack: float = 1e-9):
    if not -slack <= value <= 1.0 + slack:
        raise EfficiencyRangeError(f"{name} = {value:.6g} is outside [0, 1]")


@dataclass
class EfficiencyReport:
    """Bundle of efficiency results produced by the calculus.

    Interval fields are ((low, low_err), (high, high_err)).
    """

    method: Method
    eta_x: Optional[Value] = None
    eta_qe: Optional[Value] = None
    epsilon_bounds: Optional[Tuple[Value, Value]] = None
    alpha_upper: Optional[float] = None
    rho: Optional[float] = None
    xi_ratio_bounds: Optional[Tuple[float, float]] = None
    assumption: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("eta_x", "eta_qe"):
            v = getattr(self, name)
            if v is not None:
                _check_probability(name, v[0])
        if self.epsilon_bounds is not None:
            (lo, _), (hi, _) = self.epsilon_bounds
            _check_probability("epsilon low", lo)
            _check_probability("epsilon high", hi)
            if lo > hi:
                raise ValueError("interval lower bound exceeds upper bound")
        if self.xi_ratio_bounds is not None and self.xi_ratio_bounds[0] > self.xi_ratio_bounds[1]:
            raise ValueError("interval lower bound exceeds upper bound")

    def to_dict(self) -> dict:
        def pack(v):
            return None if v is None else {"value": v[0], "error": v[1]}
        return {
            "method": self.method.value,
            "assumption": self.assumption,
            "eta_x": pack(self.eta_x),
            "eta_qe": pack(self.eta_qe),
            "epsilon_bounds": None if self.epsilon_bounds is None else
            [pack(self.epsilon_bounds[0]), pack(self.epsilon_bounds[1])],
            "alpha_upper": self.alpha_upper,
            "rho": self.rho,
            "xi_ratio_bounds": self.xi_ratio_bounds,
            "extras": self.extras,
        }


# ---------------------------------------------------------------------------
# Eq.-style inversions

def eta_absolute(c_sat: Value, eta_setup: Value, rep_rate: float,
                 alpha_eps: float = 1.0) -> Value:
    """Collection efficiency from an absolutely calibrated count rate.

    eta = 2*C_sat / (eta_setup * alpha*eps * Gamma_l).  c_sat and rep_rate
    are in s^-1.  alpha_eps defaults to the idealized assumption 1.
    """
    c, dc = c_sat
    s, ds = eta_setup
    if c <= 0 or s <= 0 or rep_rate <= 0:
        raise ValueError("c_sat, eta_setup and rep_rate must be positive")
    if not 0.0 < alpha_eps <= 2.0:
        raise ValueError("alpha_eps must be in (0, 2]")
    eta = 2.0 * c / (s * alpha_eps * rep_rate)
    err = eta * math.hypot(dc / c, ds / s)
    _check_probability("eta_x", eta)
    return eta, err


def eta_relative(c_sat_qd: Value, c_sat_bulk: Value, eta_bulk: float) -> Value:
    """Collection efficiency from the count-rate ratio to a bulk reference.

    eta = (C_qd / C_bulk) * eta_bulk, valid when blinking, charged-exciton
    formation and polarization mixing act identically on both emitters.
    """
    cq, dcq = c_sat_qd
    cb, dcb = c_sat_bulk
    if cq <= 0 or cb <= 0 or eta_bulk <= 0:
        raise ValueError("count rates and eta_bulk must be positive")
    eta = cq / cb * eta_bulk
    err = eta * math.hypot(dcq / cq, dcb / cb)
    _check_probability("eta_x", eta)
    return eta, err


def preparation_bounds(i_x2_over_i_x: float, gamma_fast: float,
                       gamma_nrad: Value) -> EfficiencyReport:
    """Bounds on the photon-generation efficiency per excitation pulse.

    The intensity ratio of the charged and neutral exciton lines bounds
    the initial-population ratio within [i/2, i] (the circular-dipole pair
    couples to the cavity between 1x and 2x as strongly as the linear
    pair), so the neutral exciton is prepared with probability in
    [1/(1+i), 1/(1+i/2)].  Multiplying by the internal quantum efficiency
    (gamma_fast - gamma_nrad)/gamma_fast gives the preparation-efficiency
    interval.
    """
    gn, dgn = gamma_nrad
    if i_x2_over_i_x <= 0:
        raise ValueError("intensity ratio must be > 0")
    if gn >= gamma_fast:
        raise ValueError("gamma_nrad must be below gamma_fast")
    eta_qe = (gamma_fast - gn) / gamma_fast
    eta_qe_err = dgn / gamma_fast
    _check_probability("eta_qe", eta_qe)
    r = i_x2_over_i_x
    xi_lo, xi_hi = r / 2.0, r
    occ_lo, occ_hi = 1.0 / (1.0 + xi_hi), 1.0 / (1.0 + xi_lo)
    eps_lo = occ_lo * eta_qe
    eps_hi = occ_hi * eta_qe
    return EfficiencyReport(
        method=Method.ABSOLUTE,
        eta_qe=(eta_qe, eta_qe_err),
        epsilon_bounds=((eps_lo, occ_lo * eta_qe_err), (eps_hi, occ_hi * eta_qe_err)),
        xi_ratio_bounds=(xi_lo, xi_hi),
        assumption="equal internal quantum efficiency for both exciton lines",
        extras={"occupation_bounds": (occ_lo, occ_hi)},
    )


# ---------------------------------------------------------------------------
# polarization mixing

def polarization_fraction(alpha: float, eta_ratio: float,
                          allow_limit: bool = False) -> float:
    """Fraction of detected intensity in the selected polarization.

    rho = (1 + (eta_y/eta_x) * (2 - alpha)/alpha)^-1.  alpha = 0 is the
    fully blocked limit; it is rejected unless allow_limit is set, in
    which case rho = 0 is returned by continuity.
    """
    if eta_ratio < 0:
        raise ValueError("eta_ratio must be >= 0")
    if alpha == 0.0:
        if allow_limit:
            return 0.0
        raise ValueError("alpha = 0 only defines rho as a limit; pass allow_limit=True")
    if not 0.0 < alpha <= 2.0:
        raise ValueError("alpha must be in (0, 2]")
    return 1.0 / (1.0 + eta_ratio * (2.0 - alpha) / alpha)


def eta_ratio_from_fraction(alpha: float, rho: float) -> float:
    """Invert the mixing relation for the detection-efficiency ratio."""
    if not 0.0 < alpha <= 2.0:
        raise ValueError("alpha must be in (0, 2]")
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must be in (0, 1]")
    if alpha == 2.0:
        raise ValueError("alpha = 2 leaves eta_ratio unconstrained")
    return (1.0 / rho - 1.0) * alpha / (2.0 - alpha)


def alpha_from_fraction(rho: float, eta_ratio: float) -> float:
    """Invert the mixing relation for the polarization-mixing factor."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must be in (0, 1]")
    if eta_ratio <= 0:
        raise ValueError("eta_ratio must be > 0")
    return 2.0 / (1.0 + (1.0 / rho - 1.0) / eta_ratio)


def alpha_upper_bound(i_slow: float, i_fast: float = 1.0) -> float:
    """Upper bound on polarization mixing from the slow decay intensity.

    Attributing the whole slow bi-exponential component to the orthogonal
    dipole gives alpha <= 1 + I_slow/I_fast; the bound presumes alpha >= 1.
    """
    if i_fast <= 0:
        raise ValueError("i_fast must be > 0")
    if i_slow < 0:
        raise ValueError("i_slow must be >= 0")
    return 1.0 + i_slow / i_fast


# ---------------------------------------------------------------------------
# Monte Carlo validation of the linearized propagation

def propagate_mc(func: Callable[..., float], inputs: Sequence[Value],
                 n_samples: int = 100_000, seed: int = 0) -> Value:
    """Propagate input Gaussians through func by resampling."""
    rng = np.random.default_rng(seed)
    draws = np.column_stack([rng.normal(v, e, size=n_samples) for v, e in inputs])
    out = np.array([func(*row) for row in draws])
    return float(out.mean()), float(out.std(ddof=1))
