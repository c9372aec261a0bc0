"""Monte Carlo time-tag simulation of the pulsed emission / detection chain.

Each excitation pulse advances the blinking telegraph, excites the emitter
with probability 1 - exp(-P/P_sat), branches into neutral / charged
exciton emission, draws an exponential emission delay, thins through the
polarizer and the collection optics, routes through the HBT splitter or
the unbalanced HOM interferometer, and lands on one of two detectors with
Gaussian timing jitter.  Uncorrelated background lines and detector dark
counts are injected on top.

Simulation is carved into fixed-size period blocks, each driven by its own
deterministically derived RNG substream, so results are bit-identical for
a given seed regardless of how many workers process the blocks.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .models import (EmitterSpec, ExcitationSchedule, DetectionChain,
                     beat_weight_from_alpha)

BLOCK_PERIODS = 1 << 16
MAX_TIMESTAMP_PS = 2 ** 63 - 1

STREAM_MAGIC = b"PHLTAG1"  # 7 bytes, followed by a version byte
STREAM_VERSION = 1

HBT = "hbt"
HOM = "hom"

BERNOULLI = "bernoulli"
PHASE_DIFFUSION = "phase-diffusion"

BG_THERMAL = "thermal"
BG_POISSON = "poisson"


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    emitter: EmitterSpec
    schedule: ExcitationSchedule
    chain: DetectionChain
    mode: str = HBT
    n_periods: int = 100_000
    rng_seed: int = 0
    background_mode: str = BG_THERMAL
    interference: str = BERNOULLI

    def __post_init__(self):
        if self.mode not in (HBT, HOM):
            raise SimulationError(f"mode must be '{HBT}' or '{HOM}'")
        if self.n_periods < 1:
            raise SimulationError("n_periods must be >= 1")
        if self.mode == HOM and self.schedule.pulses_per_period != 2:
            raise SimulationError("HOM mode requires pulses_per_period = 2")
        if self.background_mode not in (BG_THERMAL, BG_POISSON):
            raise SimulationError("background_mode must be 'thermal' or 'poisson'")
        if self.interference not in (BERNOULLI, PHASE_DIFFUSION):
            raise SimulationError("interference must be 'bernoulli' or 'phase-diffusion'")

    def digest(self) -> str:
        """Stable hash of the full configuration."""
        doc = {"emitter": asdict(self.emitter), "schedule": asdict(self.schedule),
               "chain": asdict(self.chain), "mode": self.mode,
               "n_periods": self.n_periods, "rng_seed": self.rng_seed,
               "background_mode": self.background_mode,
               "interference": self.interference}
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class TimeTagStream:
    """Ordered detection records: channel in {0, 1}, timestamp in ps."""

    channels: np.ndarray
    timestamps_ps: np.ndarray
    duration_ps: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        self.timestamps_ps = np.asarray(self.timestamps_ps, dtype=np.int64)
        if self.channels.shape != self.timestamps_ps.shape:
            raise ValueError("channels and timestamps must have equal length")
        if np.any((self.channels != 0) & (self.channels != 1)):
            raise ValueError("channels must be 0 or 1")
        if self.timestamps_ps.size and np.any(np.diff(self.timestamps_ps) < 0):
            raise ValueError("timestamps must be nondecreasing")

    def __len__(self):
        return int(self.timestamps_ps.size)

    def channel_times(self, channel: int) -> np.ndarray:
        return self.timestamps_ps[self.channels == channel]

    # -- CSV form: 'channel,timestamp_ps' rows -----------------------------
    def to_csv(self, path, provenance: Optional[dict] = None):
        with open(path, "w") as fh:
            fh.write(f"# duration_ps={self.duration_ps}\n")
            for key, val in (provenance or {}).items():
                fh.write(f"# {key}={val}\n")
            fh.write("channel,timestamp_ps\n")
            np.savetxt(fh, np.column_stack([self.channels, self.timestamps_ps]),
                       fmt="%d", delimiter=",")

    @classmethod
    def from_csv(cls, path) -> "TimeTagStream":
        meta = {}
        with open(path) as fh:
            line = fh.readline()
            while line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
                line = fh.readline()
            if line.strip() != "channel,timestamp_ps":
                raise ValueError(f"{path}: expected 'channel,timestamp_ps' header")
            body = fh.read().strip()
        if body:
            data = np.loadtxt(io.StringIO(body), dtype=np.int64, delimiter=",", ndmin=2)
        else:
            data = np.empty((0, 2), dtype=np.int64)
        duration = int(meta.pop("duration_ps", data[:, 1].max() + 1 if len(data) else 0))
        return cls(data[:, 0].astype(np.uint8), data[:, 1], duration, meta)

    # -- binary form: 16-byte header + (u8 channel, u64 ps) records --------
    def to_binary(self, path):
        rec = np.zeros(len(self), dtype=[("ch", "<u1"), ("t", "<u8")])
        rec["ch"] = self.channels
        rec["t"] = self.timestamps_ps.astype(np.uint64)
        with open(path, "wb") as fh:
            fh.write(STREAM_MAGIC + struct.pack("<B", STREAM_VERSION))
            fh.write(struct.pack("<Q", self.duration_ps))
            rec.tofile(fh)

    @classmethod
    def from_binary(cls, path) -> "TimeTagStream":
        with open(path, "rb") as fh:
            header = fh.read(16)
            if len(header) != 16 or header[:7] != STREAM_MAGIC:
                raise ValueError(f"{path}: not a photonlab time-tag file")
            version = header[7]
            if version != STREAM_VERSION:
                raise ValueError(f"{path}: unsupported version {version}")
            (duration,) = struct.unpack("<Q", header[8:16])
            rec = np.fromfile(fh, dtype=[("ch", "<u1"), ("t", "<u8")])
        return cls(rec["ch"], rec["t"].astype(np.int64), int(duration))


# ---------------------------------------------------------------------------
# telegraph blinking

@dataclass(frozen=True)
class _Telegraph:
    """Precomputed bright/dark switching trajectory over the full run."""

    switch_times: np.ndarray  # ns, ascending
    initial_on: bool

    def on_at(self, t_ns: np.ndarray) -> np.ndarray:
        if self.switch_times.size == 0:
            return np.full(np.shape(t_ns), self.initial_on, dtype=bool)
        idx = np.searchsorted(self.switch_times, t_ns, side="right")
        return (idx % 2 == 0) == self.initial_on


def _build_telegraph(emitter: EmitterSpec, total_ns: float,
                     rng: np.random.Generator) -> _Telegraph:
    off_rate = emitter.blink_off_rate * 1e-3  # us^-1 -> ns^-1
    on_rate = emitter.blink_on_rate * 1e-3
    if off_rate == 0.0:
        return _Telegraph(np.empty(0), True)
    if on_rate == 0.0:
        # falls dark once and never recovers
        return _Telegraph(np.array([rng.exponential(1.0 / off_rate)]), True)
    p_on = on_rate / (on_rate + off_rate)
    state_on = bool(rng.random() < p_on)
    initial_on = state_on
    times = []
    t = 0.0
    while t < total_ns:
        rate = off_rate if state_on else on_rate
        t += rng.exponential(1.0 / rate)
        times.append(t)
        state_on = not state_on
    return _Telegraph(np.asarray(times), initial_on)


def stationary_on_probability(emitter: EmitterSpec) -> float:
    if emitter.blink_off_rate == 0.0:
        return 1.0
    if emitter.blink_on_rate == 0.0:
        return 0.0
    return emitter.blink_on_rate / (emitter.blink_on_rate + emitter.blink_off_rate)


# ---------------------------------------------------------------------------
# routing

def route_hbt(rng: np.random.Generator, n: int) -> np.ndarray:
    """Independent 50:50 splitter: each photon lands on channel 0 or 1."""
    return rng.integers(0, 2, size=n).astype(np.uint8)


def hom_cross_probability(tau_ns, gamma_dp: float, fss_beat=None, beat_weight=0.0):
    """Probability that an interfering pair splits across the detectors."""
    atau = np.abs(np.asarray(tau_ns, dtype=float))
    if math.isinf(gamma_dp):
        coh = np.where(atau == 0.0, 1.0, 0.0)
    else:
        coh = np.exp(-2.0 * gamma_dp * atau)
    if fss_beat is not None and beat_weight > 0.0:
        coh = coh * ((1.0 - beat_weight)
                     + beat_weight * np.cos(0.5 * fss_beat * atau) ** 2)
    return 0.5 * (1.0 - coh)


def route_hom_pairs(rng: np.random.Generator, tau_ns: np.ndarray, gamma_dp: float,
                    interference: str = BERNOULLI, fss_beat=None, beat_weight=0.0):
    """Channel assignment (ch_early, ch_late) for interfering photon pairs.

    tau_ns is the arrival-time difference at the recombining beamsplitter.
    In the Bernoulli sampler the pair splits with the ensemble-averaged
    probability (1 - exp(-2*gamma_dp*|tau|))/2; the phase-diffusion sampler
    draws a per-shot relative phase from a Wiener process of variance rate
    2*gamma_dp per photon and splits with probability (1 - cos(dphi))/2.
    Non-split pairs bunch into one random output port.
    """
    n = tau_ns.size
    if interference == BERNOULLI:
        p_cross = hom_cross_probability(tau_ns, gamma_dp, fss_beat, beat_weight)
    elif interference == PHASE_DIFFUSION:
        if math.isinf(gamma_dp):
            p_cross = np.full(n, 0.5)
        else:
            var = 4.0 * gamma_dp * np.abs(tau_ns)
            dphi = rng.normal(0.0, 1.0, size=n) * np.sqrt(var)
            if fss_beat is not None and beat_weight > 0.0:
                # a pair involving the second dipole carries an extra
                # deterministic phase at the fine-structure splitting;
                # averaging over the two orderings gives cos^2(w*tau/2)
                other = rng.random(n) < beat_weight
                detuned = other & (rng.random(n) < 0.5)
                dphi = dphi + np.where(detuned, fss_beat * np.abs(tau_ns), 0.0)
            p_cross = 0.5 * (1.0 - np.cos(dphi))
    else:
        raise SimulationError(f"unknown interference sampler '{interference}'")
    cross = rng.random(n) < p_cross
    ch_early = np.where(rng.random(n) < 0.5, 0, 1).astype(np.uint8)
    ch_late = np.where(cross, 1 - ch_early, ch_early).astype(np.uint8)
    return ch_early, ch_late


# ---------------------------------------------------------------------------
# per-pulse signal yield

def detected_signal_probability(config: SimConfig) -> float:
    """Expected detected signal photons per pulse (excluding blinking)."""
    em, sched, ch = config.emitter, config.schedule, config.chain
    p_species = (em.xi_x + em.xi_x2) * em.eta_qe
    return (sched.excitation_probability * p_species * (ch.alpha_mix / 2.0)
            * ch.eta_first_lens * ch.eta_setup)


def background_mean_per_pulse(config: SimConfig) -> float:
    """Mean detected background photons per pulse for the requested fraction."""
    b = config.chain.background_fraction
    if b == 0.0:
        return 0.0
    p_sig = detected_signal_probability(config) * stationary_on_probability(config.emitter)
    if p_sig == 0.0:
        raise SimulationError(
            "background_fraction > 0 requires a nonzero signal to calibrate against")
    return b / (1.0 - b) * p_sig


# ---------------------------------------------------------------------------
# block simulation

def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, block + 1))))


def _simulate_block(config: SimConfig, block: int, telegraph: _Telegraph,
                    lead_ns: float, bg_lambda: float):
    em, sched, ch = config.emitter, config.schedule, config.chain
    rng = _block_rng(config.rng_seed, block)

    lo = block * BLOCK_PERIODS
    hi = min(lo + BLOCK_PERIODS, config.n_periods)
    n = hi - lo
    pulses = sched.pulses_per_period
    period_start = lead_ns + (lo + np.arange(n)) * sched.rep_period
    pulse_offsets = np.array([0.0, sched.intra_delay])[:pulses]
    pulse_t = period_start[:, None] + pulse_offsets[None, :]  # (n, pulses)

    on = telegraph.on_at(pulse_t)
    excited = on & (rng.random((n, pulses)) < sched.excitation_probability)
    u = rng.random((n, pulses))
    p_x = em.xi_x * em.eta_qe
    p_x2 = em.xi_x2 * em.eta_qe
    is_x = excited & (u < p_x)
    is_x2 = excited & ~is_x & (u < p_x + p_x2)
    emitted = is_x | is_x2

    slow = is_x & (rng.random((n, pulses)) < ch.slow_fraction)
    rate = np.full((n, pulses), em.gamma_fast)
    rate[slow] = em.gamma_slow
    decay = rng.exponential(1.0, size=(n, pulses)) / rate

    kept = emitted \
        & (rng.random((n, pulses)) < ch.alpha_mix / 2.0) \
        & (rng.random((n, pulses)) < ch.eta_first_lens) \
        & (rng.random((n, pulses)) < ch.eta_setup)
    distinguishable = is_x2 | slow

    emit_t = pulse_t + decay
    long_arm = rng.random((n, pulses)) < 0.5
    if config.mode == HOM:
        arrival = emit_t + np.where(long_arm, sched.intra_delay, 0.0)
    else:
        arrival = emit_t
    channel = rng.integers(0, 2, size=(n, pulses)).astype(np.uint8)

    if config.mode == HOM:
        pair = (kept[:, 0] & kept[:, 1]
                & ~distinguishable[:, 0] & ~distinguishable[:, 1]
                & long_arm[:, 0] & ~long_arm[:, 1])
        tau = arrival[pair, 1] - arrival[pair, 0]
        fss = em.fss_beat
        beat_w = beat_weight_from_alpha(ch.alpha_mix) if fss is not None else 0.0
        ch_early, ch_late = route_hom_pairs(
            rng, tau, em.gamma_dp, config.interference, fss, beat_w)
        channel[pair, 0] = ch_early
        channel[pair, 1] = ch_late

    times = [arrival[kept]]
    chans = [channel[kept]]

    # uncorrelated background lines: bunched (thermal) or Poissonian photon
    # number per pulse, same emission-time profile as the fast signal decay
    if bg_lambda > 0.0:
        if config.background_mode == BG_THERMAL:
            counts = rng.geometric(1.0 / (1.0 + bg_lambda), size=(n, pulses)) - 1
        else:
            counts = rng.poisson(bg_lambda, size=(n, pulses))
        total = int(counts.sum())
        if total:
            origin = np.repeat(pulse_t.ravel(), counts.ravel())
            bg_t = origin + rng.exponential(1.0 / em.gamma_fast, size=total)
            if config.mode == HOM:
                bg_t = bg_t + np.where(rng.random(total) < 0.5, sched.intra_delay, 0.0)
            times.append(bg_t)
            chans.append(rng.integers(0, 2, size=total).astype(np.uint8))

    # detector dark counts, uniform in time over the block
    if ch.dark_count_rate > 0.0:
        span = n * sched.rep_period
        n_dark = rng.poisson(ch.dark_count_rate * 1e-9 * span)
        if n_dark:
            times.append(period_start[0] + rng.random(n_dark) * span)
            chans.append(rng.integers(0, 2, size=n_dark).astype(np.uint8))

    t = np.concatenate(times)
    c = np.concatenate(chans)
    if ch.irf_sigma > 0.0:
        t = t + rng.normal(0.0, ch.irf_sigma, size=t.size)
    return t, c


def simulate(config: SimConfig, n_jobs: int = 1) -> TimeTagStream:
    """Generate the detection time-tag stream for a configuration.

    Deterministic: the same config (including rng_seed) produces a
    bit-identical stream for any n_jobs.
    """
    em, sched, ch = config.emitter, config.schedule, config.chain
    if ch.slow_fraction > 0.0 and em.gamma_slow <= 0.0:
        raise SimulationError("alpha_mix > 1 requires a nonzero gamma_slow")
    lead_ns = max(8.0 * ch.irf_sigma, 1.0)
    slow_active = ch.slow_fraction > 0.0
    min_rate = em.gamma_slow if slow_active else em.gamma_fast
    tail_ns = min(15.0 / min_rate + 8.0 * ch.irf_sigma, 200.0 * sched.rep_period)
    total_ns = lead_ns + config.n_periods * sched.rep_period + tail_ns
    duration_ps = int(math.ceil(total_ns * 1e3))
    if duration_ps > MAX_TIMESTAMP_PS:
        raise SimulationError(
            f"run spans {duration_ps} ps which overflows the timestamp range")

    telegraph = _build_telegraph(em, total_ns, _block_rng(config.rng_seed, -1))
    bg_lambda = background_mean_per_pulse(config)

    n_blocks = (config.n_periods + BLOCK_PERIODS - 1) // BLOCK_PERIODS
    work = [(config, b, telegraph, lead_ns, bg_lambda) for b in range(n_blocks)]
    if n_jobs > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda a: _simulate_block(*a), work))
    else:
        parts = [_simulate_block(*a) for a in work]

    t_ns = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
    chans = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.uint8)
    ts = np.rint(t_ns * 1e3).astype(np.int64)
    keep = (ts >= 0) & (ts < duration_ps)
    ts, chans = ts[keep], chans[keep]
    order = np.lexsort((chans, ts))
    meta = {"config_digest": config.digest(), "rng_seed": config.rng_seed,
            "n_periods": config.n_periods, "mode": config.mode,
            "lead_ns": lead_ns}
    return TimeTagStream(chans[order], ts[order], duration_ps, meta)
