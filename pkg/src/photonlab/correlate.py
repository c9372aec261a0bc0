"""Coincidence histograms from time-tag streams.

The correlator counts every ordered pair (channel 0 record, channel 1
record) whose signed delay t1 - t0 falls inside the window, using a
two-pointer sweep over the sorted stream so the cost is linear in the
number of records plus the number of in-window pairs.  Start-stop
correlation is deliberately not offered: multi-peak clusters need
all-pair statistics.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .simulate import TimeTagStream

_CHUNK = 200_000


@dataclass
class Histogram:
    """Binned coincidence counts over [t_min, t_max) in ps."""

    bin_width_ps: int
    t_min_ps: int
    counts: np.ndarray
    total_pairs: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.bin_width_ps < 1:
            raise ValueError("bin_width_ps must be >= 1")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def t_max_ps(self) -> int:
        return self.t_min_ps + self.bin_width_ps * len(self.counts)

    @property
    def bin_centers_ps(self) -> np.ndarray:
        return self.t_min_ps + self.bin_width_ps * (np.arange(len(self.counts)) + 0.5)

    @property
    def bin_centers_ns(self) -> np.ndarray:
        return self.bin_centers_ps * 1e-3

    def window_counts(self, center_ps: float, half_width_ps: float) -> int:
        """Total counts in bins whose centers lie within +-half_width of center."""
        sel = np.abs(self.bin_centers_ps - center_ps) <= half_width_ps
        return int(self.counts[sel].sum())

    def to_csv(self, path, provenance: Optional[dict] = None):
        with open(path, "w") as fh:
            fh.write(f"# bin_width_ps={self.bin_width_ps}\n")
            fh.write(f"# t_min_ps={self.t_min_ps}\n")
            fh.write(f"# total_pairs={self.total_pairs}\n")
            for key, val in (provenance or {}).items():
                fh.write(f"# {key}={val}\n")
            fh.write("bin_center_ps,counts\n")
            np.savetxt(fh, np.column_stack([self.bin_centers_ps, self.counts]),
                       fmt="%.1f,%d")

    @classmethod
    def from_csv(cls, path) -> "Histogram":
        meta = {}
        with open(path) as fh:
            line = fh.readline()
            while line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
                line = fh.readline()
            if line.strip() != "bin_center_ps,counts":
                raise ValueError(f"{path}: expected 'bin_center_ps,counts' header")
            body = fh.read().strip()
        if "bin_width_ps" not in meta or "t_min_ps" not in meta:
            raise ValueError(f"{path}: missing bin_width_ps / t_min_ps headers")
        bw = int(meta.pop("bin_width_ps"))
        t_min = int(meta.pop("t_min_ps"))
        total = int(meta.pop("total_pairs", 0))
        if body:
            data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
            counts = data[:, 1].astype(np.int64)
        else:
            counts = np.empty(0, dtype=np.int64)
        return cls(bw, t_min, counts, total, meta)


def merge_histograms(parts: Sequence[Histogram]) -> Histogram:
    """Add histograms that share an identical binning grid."""
    if not parts:
        raise ValueError("nothing to merge")
    first = parts[0]
    counts = np.zeros_like(first.counts)
    total = 0
    for h in parts:
        if (h.bin_width_ps, h.t_min_ps, len(h.counts)) != \
                (first.bin_width_ps, first.t_min_ps, len(first.counts)):
            raise ValueError("histograms have mismatched grids")
        counts += h.counts
        total += h.total_pairs
    return Histogram(first.bin_width_ps, first.t_min_ps, counts, total, dict(first.meta))


def _pair_bincount(t0: np.ndarray, t1: np.ndarray, window_ps: int,
                   bin_width_ps: int, n_bins: int) -> np.ndarray:
    """Histogram of delays t1_j - t0_i in [-window, +window) for sorted inputs."""
    counts = np.zeros(n_bins, dtype=np.int64)
    if t0.size == 0 or t1.size == 0:
        return counts
    lo = np.searchsorted(t1, t0 - window_ps, side="left")
    hi = np.searchsorted(t1, t0 + window_ps, side="left")
    per = hi - lo
    cum = np.concatenate([[0], np.cumsum(per)])
    total = int(cum[-1])
    for start in range(0, t0.size, _CHUNK):
        stop = min(start + _CHUNK, t0.size)
        n_pairs = int(cum[stop] - cum[start])
        if n_pairs == 0:
            continue
        seg = per[start:stop]
        anchors = np.repeat(np.arange(start, stop), seg)
        offsets = np.arange(n_pairs) - np.repeat(cum[start:stop] - cum[start], seg)
        j = np.repeat(lo[start:stop], seg) + offsets
        delays = t1[j] - t0[anchors]
        bins = (delays + window_ps) // bin_width_ps
        counts += np.bincount(bins, minlength=n_bins)
    return counts


def correlate(stream: TimeTagStream, bin_width_ps: int, window_ps: int,
              n_slices: int = 1) -> Histogram:
    """Cross-correlation histogram of channel 0 vs channel 1 records.

    counts[k] is the number of ordered pairs (i on channel 0, j on
    channel 1) whose delay t_j - t_i falls in bin k; bins tile
    [-window, +window) and the window is rounded up to a whole number of
    bins.  Streams may be sliced for parallel processing; each slice
    anchors its own channel-0 records and looks into the full channel-1
    record list, so the merged result is exactly slice-count independent.
    """
    if bin_width_ps < 1:
        raise ValueError("bin_width_ps must be >= 1 ps")
    if window_ps > 10 ** 12:
        raise ValueError("window_ps must be <= 1 s")
    if np.any(np.diff(stream.timestamps_ps) < 0):
        raise ValueError("stream must be sorted by timestamp")
    half_bins = -(-window_ps // bin_width_ps)
    window_ps = int(half_bins * bin_width_ps)
    n_bins = 2 * half_bins
    t0 = stream.channel_times(0)
    t1 = stream.channel_times(1)

    n_slices = max(1, min(n_slices, max(1, t0.size)))
    edges = np.linspace(0, t0.size, n_slices + 1).astype(int)
    parts = []
    for a, b in zip(edges[:-1], edges[1:]):
        counts = _pair_bincount(t0[a:b], t1, window_ps, bin_width_ps, n_bins)
        parts.append(Histogram(bin_width_ps, -window_ps, counts, int(counts.sum())))
    hist = merge_histograms(parts)
    hist.meta = {"n_ch0": int(t0.size), "n_ch1": int(t1.size)}
    return hist


def g2_zero(hist: Histogram, rep_period_ns: float, center_window_ns: float = 2.0,
            norm_span_ns: float = 300.0):
    """Normalized zero-delay coincidence level of a pulsed histogram.

    Integrates counts in a center_window around zero delay and divides by
    the average of equal windows placed at the repetition peaks within
    +-norm_span/2.  Returns (value, poisson_error).
    """
    if rep_period_ns <= 0:
        raise ValueError("rep_period_ns must be > 0")
    half_w = center_window_ns * 500.0  # ns -> ps, half window
    rep_ps = rep_period_ns * 1000.0
    span = min(norm_span_ns * 500.0, hist.t_max_ps - half_w, -hist.t_min_ps - half_w)
    k_max = int(math.floor(span / rep_ps))
    peaks = [k * rep_ps for k in range(-k_max, k_max + 1) if k != 0]
    if len(peaks) < 3:
        raise ValueError("histogram spans fewer than 3 off-zero peaks")
    center = hist.window_counts(0.0, half_w)
    areas = np.array([hist.window_counts(c, half_w) for c in peaks], dtype=float)
    norm = areas.mean()
    if norm == 0:
        raise ValueError("no counts in normalization peaks")
    value = center / norm
    var = center / norm ** 2 + (center ** 2 / norm ** 4) * areas.sum() / len(areas) ** 2
    return value, math.sqrt(var)


@dataclass
class PeakStats:
    """Repetition-peak areas and their spread at long delays."""

    peak_centers_ps: np.ndarray
    areas: np.ndarray
    area_errors: np.ndarray
    amplitude_std_fraction: float   # raw fractional std of the peak areas
    excess_std_fraction: float      # Poisson expectation subtracted in quadrature

    def __post_init__(self):
        if np.any(self.areas < 0):
            raise ValueError("areas must be nonnegative")
        if len(self.areas) != len(self.peak_centers_ps):
            raise ValueError("one area per peak center required")


def peak_amplitude_scan(hist: Histogram, rep_period_ns: float,
                        max_delay_ms: Optional[float] = None) -> PeakStats:
    """Integrate every repetition peak and quantify amplitude fluctuations.

    Blinking slower than the repetition period shows up as peak-area
    variance in excess of Poisson counting noise; the excess fractional
    standard deviation is the raw variance minus the mean Poisson variance,
    floored at zero, normalized by the mean area.
    """
    rep_ps = rep_period_ns * 1000.0
    limit = hist.t_max_ps if max_delay_ms is None else \
        min(hist.t_max_ps, max_delay_ms * 1e9)
    k_max = int(math.floor((limit - rep_ps / 2) / rep_ps))
    if k_max < 2:
        raise ValueError("histogram covers fewer than 2 repetition peaks")
    centers = rep_ps * np.arange(1, k_max + 1)
    areas = np.array([hist.window_counts(c, rep_ps / 2 - hist.bin_width_ps / 2)
                      for c in centers], dtype=float)
    mean = areas.mean()
    if mean == 0:
        raise ValueError("empty repetition peaks")
    raw_var = areas.var(ddof=1)
    raw_frac = math.sqrt(raw_var) / mean
    excess = max(raw_var - mean, 0.0)
    return PeakStats(centers.astype(np.int64), areas, np.sqrt(areas),
                     raw_frac, math.sqrt(excess) / mean)
