"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion
lines; every tolerance is pinned here, nothing is deferred.
"""

import math
import time

import numpy as np
import pytest
from scipy.special import ndtr

import photonlab as pl
from photonlab import models
from photonlab.correlate import Histogram
from photonlab.efficiency import (alpha_upper_bound, eta_absolute,
                                  eta_relative, preparation_bounds)
from photonlab.fitting import fit_hom, fit_saturation
from photonlab.models import HomModelParams, convolve_with_irf, hom_binned_model
from photonlab.simulate import SimConfig, simulate

from conftest import DELTA, GAMMA, GAMMA_DP_LA, GAMMA_DP_LO, IRF, REP, \
    hbt_config, run_hom
from test_correlate import brute_force_histogram, random_stream


def report(name: str, ok: bool, detail: str) -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


# ---------------------------------------------------------------------------

def test_efficiency_algebra_exact():
    t0 = time.perf_counter()
    rel, _ = eta_relative((2.93e5, 8.6e3), (5.22e3, 0.10e3), 0.0079)
    absolute, _ = eta_absolute((722e3, 46e3), (0.120, 0.014), 80e6, 1.0)
    prep = preparation_bounds(0.52, 0.62, (0.06, 0.05))
    alpha = alpha_upper_bound(0.092)
    elapsed_ms = (time.perf_counter() - t0) * 1e3

    qe, dqe = prep.eta_qe
    (eps_lo, d_lo), (eps_hi, d_hi) = prep.epsilon_bounds
    ok = abs(rel - 0.443) <= 0.001
    ok &= abs(absolute - 0.150) <= 0.002
    ok &= abs(qe - 0.90) <= 0.005 and abs(dqe - 0.08) <= 0.005
    ok &= abs(eps_lo - 0.59) <= 0.005 and abs(d_lo - 0.05) <= 0.005
    ok &= abs(eps_hi - 0.72) <= 0.005 and abs(d_hi - 0.06) <= 0.005
    ok &= alpha == 1.092
    ok &= elapsed_ms < 50.0
    assert report(
        "efficiency algebra", ok,
        f"relative {rel:.4f}, absolute {absolute:.4f}, "
        f"QE {qe:.3f}+-{dqe:.3f}, eps [{eps_lo:.3f}, {eps_hi:.3f}], "
        f"alpha<= {alpha}, {elapsed_ms:.2f} ms")


def test_hom_oracle_equivalence(lo_run, la_run):
    t0 = time.perf_counter()
    simulate(lo_run[0])
    sim_seconds = time.perf_counter() - t0

    ok = sim_seconds < 120.0
    details = [f"1e6-period simulation {sim_seconds:.1f}s"]
    for label, (config, _, hist), gamma_dp_true, v_target, v_tol, e_target, e_tol in (
            ("LO", lo_run, GAMMA_DP_LO, 0.13, 0.02, 1.53, 0.25),
            ("LA", la_run, GAMMA_DP_LA, 0.19, 0.04, 1.05, 0.21)):
        fit = fit_hom(hist, gamma=GAMMA, delta=DELTA, rep_period=REP,
                      irf_sigma=IRF * math.sqrt(2))
        gdp, _ = fit["gamma_dp"]
        vis = fit.derived["visibility"]["value"]
        energy = fit.derived["decoherence_energy_uev"]["value"]
        ok &= abs(gdp - gamma_dp_true) / gamma_dp_true <= 0.10
        ok &= abs(vis - v_target) <= v_tol
        ok &= abs(energy - e_target) <= e_tol
        details.append(
            f"{label}: gamma_dp {gdp:.3f} (true {gamma_dp_true:.3f}), "
            f"V {vis:.3f} (target {v_target}+-{v_tol}), "
            f"hbar(g/2+gdp) {energy:.2f} ueV")
    assert report("HOM oracle equivalence", ok, "; ".join(details))


def test_peak_ratio_property():
    emitter = pl.EmitterSpec(gamma_fast=5.0, gamma_slow=0.24,
                             gamma_dp=math.inf, xi_x=1.0)
    schedule = pl.ExcitationSchedule(rep_period=REP, pulses_per_period=2,
                                     intra_delay=DELTA, power_ratio=4.0)
    chain = pl.DetectionChain(eta_first_lens=0.8, eta_setup=1.0,
                              alpha_mix=1.0, irf_sigma=0.05)
    config = SimConfig(emitter, schedule, chain, mode="hom",
                       n_periods=1_000_000, rng_seed=424242)
    stream = simulate(config)
    hist = pl.correlate(stream, 50, 26_000)

    def window_areas(cluster_center_ns):
        offs = np.array([-2 * DELTA, -DELTA, 0.0, DELTA, 2 * DELTA])
        return np.array([hist.window_counts((cluster_center_ns + off) * 1e3,
                                            DELTA * 500.0) for off in offs])

    ok = True
    details = []
    for label, center, weights in (
            ("central", 0.0, np.array([1.0, 2, 2, 2, 1])),
            ("side+", REP, np.array([1.0, 4, 6, 4, 1])),
            ("side-", -REP, np.array([1.0, 4, 6, 4, 1]))):
        areas = window_areas(center)
        frac = weights / weights.sum()
        expected = areas.sum() * frac
        z = (areas - expected) / np.sqrt(expected * (1 - frac))
        ok &= bool(np.all(np.abs(z) < 3.0))
        details.append(f"{label} max|z|={np.abs(z).max():.2f}")
    assert report("cluster peak ratios 1:2:2:2:1 / 1:4:6:4:1 (3 sigma)",
                  ok, "; ".join(details))


def test_g2_background_pipeline():
    ok = True
    details = []
    for i, b in enumerate((0.02, 0.08, 0.25)):
        config = hbt_config(background=b, n_periods=600_000, seed=9000 + i)
        stream = simulate(config)
        hist = pl.correlate(stream, 50, 160_000)
        value, err = pl.g2_zero(hist, config.schedule.rep_period)
        z = (value - 2 * b) / err
        ok &= abs(z) < 3.0
        details.append(f"b={b}: g2={value:.4f}+-{err:.4f} (z={z:+.2f})")
    assert report("g2(0) = 2b pipeline (3 sigma)", ok, "; ".join(details))


def test_correlator_bit_exact_and_partition_invariant():
    rng = np.random.default_rng(20130521)
    ok = True
    worst = 0
    for trial in range(50):
        stream = random_stream(rng, n_records=10_000,
                               span_ps=int(rng.integers(10 ** 7, 10 ** 9)))
        bw = int(rng.integers(2, 400))
        window = int(rng.integers(bw, 2 * 10 ** 6))
        hist = pl.correlate(stream, bw, window)
        oracle = brute_force_histogram(stream, bw, window)
        ok &= np.array_equal(hist.counts, oracle)
        for n_slices in (3, 8):
            sliced = pl.correlate(stream, bw, window, n_slices=n_slices)
            ok &= np.array_equal(sliced.counts, hist.counts)
        worst = max(worst, int(np.abs(hist.counts - oracle).max()))
    assert report("correlator vs all-pairs oracle, 50 streams",
                  ok, f"max deviation {worst} counts; slice counts 1/3/8 identical")


def test_fit_recovery_coverage():
    # nominal 1-sigma coverage is 68.3%; require at least 90% of that
    nominal = 2 * ndtr(1.0) - 1.0
    floor = 0.9 * nominal

    rng = np.random.default_rng(77)
    power = np.geomspace(4.0, 500.0, 14)
    truth_c, truth_p = 2.93e5, 46.7
    model_counts = models.saturation_curve(power, truth_p, truth_c)
    hits_c = hits_p = 0
    for _ in range(200):
        counts = rng.poisson(model_counts)
        rows = np.column_stack([power, counts, np.sqrt(np.maximum(counts, 1))])
        fit = fit_saturation(rows)
        c, dc = fit["c_sat"]
        p, dp = fit["p_sat"]
        hits_c += abs(c - truth_c) <= dc
        hits_p += abs(p - truth_p) <= dp
    cov_sat = min(hits_c, hits_p) / 200

    bin_ps, window_ns = 50, 48.0
    n = int(2 * window_ns * 1000 / bin_ps)
    centers_ns = (-window_ns * 1000 + bin_ps * (np.arange(n) + 0.5)) * 1e-3
    params = HomModelParams(gamma=GAMMA, gamma_dp=GAMMA_DP_LO, amplitude=1500.0,
                            delta=DELTA, rep_period=REP,
                            irf_sigma=IRF * math.sqrt(2))
    expected = hom_binned_model(centers_ns, params)
    hits_g = 0
    for _ in range(200):
        hist = Histogram(bin_ps, int(-window_ns * 1000), rng.poisson(expected))
        fit = fit_hom(hist, gamma=GAMMA, delta=DELTA, rep_period=REP,
                      irf_sigma=IRF * math.sqrt(2))
        g, dg = fit["gamma_dp"]
        hits_g += abs(g - GAMMA_DP_LO) <= dg
    cov_hom = hits_g / 200

    ok = cov_sat >= floor and cov_hom >= floor
    assert report(
        "fit-recovery 1-sigma coverage over 200 trials", ok,
        f"saturation {cov_sat:.3f}, interference {cov_hom:.3f} "
        f"(floor {floor:.3f}, nominal {nominal:.3f})")


def test_irf_convolution_against_exgaussian():
    worst = 0.0
    for gamma in (0.1, 0.62, 2.0):
        for sigma in (0.05, 0.2):
            dt = sigma / 320
            t = np.arange(-12 * sigma - 1.0, 3.0 / gamma + 12 * sigma, dt)
            y = np.where(t > 0, np.exp(-gamma * t), 0.0)
            y[np.isclose(t, 0.0, atol=dt / 4)] = 0.5
            out = convolve_with_irf(y, dt, sigma)
            exact = np.exp(0.5 * (gamma * sigma) ** 2 - gamma * t) \
                * ndtr(t / sigma - gamma * sigma)
            margin = int(round(10 * sigma / dt))
            sel = slice(margin, len(t) - margin)
            err = np.abs(out[sel] - exact[sel]).max() / exact.max()
            worst = max(worst, err)
    ok = worst < 1e-6
    assert report("IRF convolution vs exGaussian closed form", ok,
                  f"peak-normalized max error {worst:.2e} on the 3x2 grid")


def test_visibility_and_coherence_identities():
    _, _, t2_lo = models.coherence_times(1 / 1.61, 1 / 0.49)
    _, _, t2_la = models.coherence_times(1 / 1.61, 1 / 0.77)
    ok = abs(t2_lo - 0.43) <= 0.01 and abs(t2_la - 0.63) <= 0.01
    sweep = [models.visibility(GAMMA, g) for g in np.linspace(0.0, 8.0, 200)]
    ok &= all(a > b for a, b in zip(sweep, sweep[1:]))
    assert report("coherence table and visibility monotonicity", ok,
                  f"T2(LO) {t2_lo:.3f} ns, T2(LA) {t2_la:.3f} ns, "
                  f"sweep strictly decreasing over 200 points")
