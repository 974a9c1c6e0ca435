"""Time-domain channel construction and frequency-domain structure."""

import numpy as np
import pytest

from ofdm_rsma.waveform import WaveformConfig, build_operators
from ofdm_rsma.channel import (Path, ChannelEnsembleConfig, sample_paths,
                               delay_to_samples, time_domain_channel, cfr,
                               diag_cfr, normalized_doppler)


def small_ops(n=16, c=4):
    cfg = WaveformConfig(n_private=n, n_common=n, cp_len=c,
                         sample_rate=n * 15e3, scs_private=15e3, scs_common=15e3)
    return build_operators(cfg)


def test_delay_to_samples_floor_and_cp_guard():
    assert delay_to_samples(0.0, 1e6) == 0
    assert delay_to_samples(2.9e-6, 1e6) == 2
    assert delay_to_samples(3.0e-6, 1e6) == 3
    with pytest.raises(ValueError):
        delay_to_samples(9e-6, 1e6, cp_len=5)
    with pytest.raises(ValueError):
        delay_to_samples(-1e-9, 1e6)


def test_zero_doppler_cfr_is_diagonal_and_matches_taps():
    # with delays inside the CP the composite F B H A F^H is the DFT of taps
    ops = small_ops()
    fs = ops.config.sample_rate
    rng = np.random.default_rng(3)
    for _ in range(20):
        cfgc = ChannelEnsembleConfig(n_paths=4, max_delay_spread=3.5 / fs)
        paths = sample_paths(cfgc, rng)
        h = time_domain_channel(paths, 16, 4, fs)
        H = cfr(h, ops)
        off = H - np.diag(np.diag(H))
        assert np.abs(off).max() < 1e-10
        taps = np.zeros(16, dtype=complex)
        for p in paths:
            taps[delay_to_samples(p.delay, fs)] += p.gain
        assert np.abs(diag_cfr(H) - np.fft.fft(taps)).max() < 1e-10


def test_doppler_creates_icc_leakage():
    ops = small_ops()
    fs = ops.config.sample_rate
    paths = [Path(1.0 + 0j, 0.0, 0.3 * 15e3)]
    h = time_domain_channel(paths, 16, 4, fs)
    H = cfr(h, ops)
    off = H - np.diag(np.diag(H))
    assert np.abs(off).max() > 1e-3


def test_time_matrix_shift_structure():
    # single path of delay d cyclically shifts rows by d and applies the ramp
    fs = 1e6
    paths = [Path(0.5 - 0.25j, 2.0 / fs, 0.0)]
    h = time_domain_channel(paths, 6, 2, fs)
    expect = np.zeros((8, 8), dtype=complex)
    expect[(np.arange(8) + 2) % 8, np.arange(8)] = 0.5 - 0.25j
    assert np.allclose(h, expect)


def test_sample_paths_normalization_and_offset():
    rng = np.random.default_rng(11)
    cfgc = ChannelEnsembleConfig(n_paths=6, max_delay_spread=2e-6)
    for gain_db in (0.0, -3.0, 5.0):
        paths = sample_paths(cfgc, rng, gain_db=gain_db)
        total = sum(abs(p.gain) ** 2 for p in paths)
        assert total == pytest.approx(10 ** (gain_db / 10.0), rel=1e-12)
    assert paths[0].delay == 0.0


def test_sample_paths_zero_doppler_exact():
    rng = np.random.default_rng(5)
    paths = sample_paths(ChannelEnsembleConfig(max_doppler=0.0), rng)
    assert all(p.doppler == 0.0 for p in paths)


def test_ensemble_reproducible():
    cfgc = ChannelEnsembleConfig(n_paths=5, max_doppler=1e3)
    a = sample_paths(cfgc, np.random.default_rng(42))
    b = sample_paths(cfgc, np.random.default_rng(42))
    assert a == b


def test_normalized_doppler():
    assert normalized_doppler(12e3, 60e3) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        normalized_doppler(1.0, 0.0)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        ChannelEnsembleConfig(n_paths=0)
    with pytest.raises(ValueError):
        ChannelEnsembleConfig(max_doppler=-1.0)
    cfgc = ChannelEnsembleConfig(user_gain_db=(0.0, -6.0))
    assert cfgc.gain_offset_db(1) == -6.0
    assert cfgc.gain_offset_db(7) == 0.0
