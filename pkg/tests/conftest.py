import numpy as np
import pytest

import photonlab as pl

GAMMA = 1.0 / 1.61
GAMMA_DP_LO = 1.0 / 0.49
GAMMA_DP_LA = 1.0 / 0.77
DELTA = 3.04
REP = 13.0
IRF = 0.1


def hom_config(gamma_dp, n_periods, seed, interference="bernoulli", irf=IRF):
    emitter = pl.EmitterSpec(gamma_fast=GAMMA, gamma_slow=0.24,
                             gamma_dp=gamma_dp, xi_x=1.0)
    schedule = pl.ExcitationSchedule(rep_period=REP, pulses_per_period=2,
                                     intra_delay=DELTA, power_ratio=4.0)
    chain = pl.DetectionChain(eta_first_lens=0.8, eta_setup=1.0,
                              alpha_mix=1.0, irf_sigma=irf)
    return pl.SimConfig(emitter, schedule, chain, mode="hom",
                        n_periods=n_periods, rng_seed=seed,
                        interference=interference)


def hbt_config(background=0.0, n_periods=300_000, seed=1, power=2.1,
               rep_period=13.157894736842106, gamma_fast=GAMMA,
               background_mode="thermal", dark_rate=0.0, blink=(0.0, 0.0),
               eta=(0.8, 0.855)):
    emitter = pl.EmitterSpec(gamma_fast=gamma_fast, gamma_slow=0.24,
                             xi_x=1.0, blink_off_rate=blink[0],
                             blink_on_rate=blink[1])
    schedule = pl.ExcitationSchedule(rep_period=rep_period,
                                     pulses_per_period=1, power_ratio=power)
    chain = pl.DetectionChain(eta_first_lens=eta[0], eta_setup=eta[1],
                              alpha_mix=1.0, background_fraction=background,
                              dark_count_rate=dark_rate, irf_sigma=IRF)
    return pl.SimConfig(emitter, schedule, chain, mode="hbt",
                        n_periods=n_periods, rng_seed=seed,
                        background_mode=background_mode)


def run_hom(gamma_dp, n_periods, seed, interference="bernoulli",
            window_ps=48_000):
    config = hom_config(gamma_dp, n_periods, seed, interference)
    stream = pl.simulate(config)
    hist = pl.correlate(stream, bin_width_ps=50, window_ps=window_ps)
    return config, stream, hist


@pytest.fixture(scope="session")
def lo_run():
    return run_hom(GAMMA_DP_LO, 1_000_000, seed=101)


@pytest.fixture(scope="session")
def la_run():
    return run_hom(GAMMA_DP_LA, 1_000_000, seed=102)
