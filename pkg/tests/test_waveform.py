"""Operator identities for the two-numerology frame."""

import numpy as np
import pytest

from ofdm_rsma.waveform import (WaveformConfig, dft_matrix, cp_add_matrix,
                                cp_remove_matrix, cp_add_common,
                                cp_remove_common, apply_cp_add,
                                apply_cp_remove, build_operators)


def table1_config():
    return WaveformConfig(n_private=35, n_common=15, cp_len=5,
                          sample_rate=2.1e6, scs_private=60e3, scs_common=140e3)


def test_dft_unitary():
    for n in (1, 2, 7, 35):
        f = dft_matrix(n)
        err = np.abs(f @ f.conj().T - np.eye(n)).max()
        assert err < 1e-12


def test_cp_remove_cancels_add():
    # B A = I: the receiver drops exactly the samples the transmitter added
    for n, c in ((8, 2), (35, 5), (4, 0)):
        prod = cp_remove_matrix(n, c) @ cp_add_matrix(n, c)
        assert np.array_equal(prod, np.eye(n))


def test_cp_add_prepends_tail():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    y = cp_add_matrix(8, 3) @ x
    assert np.allclose(y[:3], x[-3:])
    assert np.allclose(y[3:], x)


def test_apply_helpers_match_matrices():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(10)
    assert np.allclose(apply_cp_add(x, 4), cp_add_matrix(10, 4) @ x)
    y = rng.standard_normal(14)
    assert np.allclose(apply_cp_remove(y, 4), cp_remove_matrix(10, 4) @ y)


def test_common_placement_orthogonal_across_symbols():
    # B_{c,m} A_{c,m'} = I when m == m', 0 otherwise
    cfg = table1_config()
    assert cfg.n_symbols == 2
    for m in range(1, cfg.n_symbols + 1):
        for mp in range(1, cfg.n_symbols + 1):
            prod = cp_remove_common(cfg, m) @ cp_add_common(cfg, mp)
            expect = np.eye(cfg.n_common) if m == mp else np.zeros((15, 15))
            assert np.array_equal(prod, expect)


def test_common_symbols_tile_the_frame():
    cfg = table1_config()
    used = np.zeros(cfg.frame_len)
    for m in range(1, cfg.n_symbols + 1):
        used += np.abs(cp_add_common(cfg, m)).sum(axis=1)
    # Table-1 numerology fills the frame exactly: 2 * (5 + 15) = 40 samples
    assert (used > 0).all()


def test_operator_set_shapes():
    ops = build_operators(table1_config())
    assert ops.f_private.shape == (35, 35)
    assert ops.f_common.shape == (15, 15)
    assert ops.add_private.shape == (40, 35)
    assert ops.remove_private.shape == (35, 40)
    assert len(ops.add_common) == 2
    assert ops.add_common[0].shape == (40, 15)
    assert ops.remove_common[1].shape == (15, 40)


def test_config_validation():
    with pytest.raises(ValueError):
        WaveformConfig(35, 15, 5, 2.0e6, 60e3, 140e3)  # spacing mismatch
    with pytest.raises(ValueError):
        WaveformConfig(15, 35, 5, 2.1e6, 140e3, 60e3)  # common wider than frame
    with pytest.raises(ValueError):
        WaveformConfig(35, 15, -1, 2.1e6, 60e3, 140e3)
    with pytest.raises(ValueError):
        cp_add_common(table1_config(), 3)  # only 2 symbols fit


def test_single_grid_config():
    cfg = WaveformConfig(n_private=35, n_common=35, cp_len=5,
                         sample_rate=2.1e6, scs_private=60e3, scs_common=60e3)
    assert cfg.n_symbols == 1
    ops = build_operators(cfg)
    prod = ops.remove_common[0] @ ops.add_common[0]
    assert np.array_equal(prod, np.eye(35))
