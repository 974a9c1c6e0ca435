"""OFDM matrix operators for a frame shared by two numerologies.

A frame spans ``cp_len + n_private`` samples.  The private (narrow
subcarrier spacing) numerology fills the frame with a single OFDM symbol
of ``n_private`` subcarriers.  The common (wide spacing) numerology fits
``n_symbols`` shorter symbols of ``n_common`` subcarriers each into the
same frame, every one carrying its own cyclic prefix.

All operators are plain dense ndarrays so receive/transmit chains can be
written as matrix products.  DFT matrices are unitary:
``F[a, b] = exp(-2j*pi*a*b/n) / sqrt(n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "WaveformConfig",
    "OperatorSet",
    "dft_matrix",
    "cp_add_matrix",
    "cp_remove_matrix",
    "cp_add_common",
    "cp_remove_common",
    "apply_cp_add",
    "apply_cp_remove",
    "build_operators",
]


@dataclass(frozen=True)
class WaveformConfig:
    """Sampling grid and numerology pair for one frame.

    Parameters
    ----------
    n_private : int
        Subcarriers of the frame-filling (private) numerology.
    n_common : int
        Subcarriers of the short-symbol (common) numerology.
    cp_len : int
        Cyclic prefix length in samples, shared by both numerologies.
    sample_rate : float
        Sampling rate in Hz; equals the occupied bandwidth.
    scs_private : float
        Subcarrier spacing of the private numerology in Hz.
    scs_common : float
        Subcarrier spacing of the common numerology in Hz.
    """

    n_private: int
    n_common: int
    cp_len: int
    sample_rate: float
    scs_private: float
    scs_common: float

    def __post_init__(self):
        if self.n_private < 1 or self.n_common < 1:
            raise ValueError("subcarrier counts must be positive")
        if self.cp_len < 0:
            raise ValueError("cp_len must be nonnegative")
        if self.n_common > self.n_private:
            raise ValueError("n_common cannot exceed n_private")
        if self.cp_len >= self.n_common:
            raise ValueError("cp_len must be smaller than n_common")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        for scs, n in ((self.scs_private, self.n_private), (self.scs_common, self.n_common)):
            if abs(scs * n - self.sample_rate) > 1e-9 * self.sample_rate:
                raise ValueError(
                    f"numerology mismatch: {scs} Hz x {n} subcarriers != {self.sample_rate} Hz"
                )

    @property
    def frame_len(self) -> int:
        """Samples per frame including the private-symbol cyclic prefix."""
        return self.cp_len + self.n_private

    @property
    def n_symbols(self) -> int:
        """Common-numerology symbols that fit into one frame."""
        return (self.cp_len + self.n_private) // (self.cp_len + self.n_common)

    @property
    def frame_duration(self) -> float:
        return self.frame_len / self.sample_rate


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix, entry (a, b) = exp(-2j*pi*a*b/n)/sqrt(n)."""
    if n < 1:
        raise ValueError("DFT size must be positive")
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


def cp_add_matrix(n: int, c: int) -> np.ndarray:
    """(n+c) x n matrix prepending the last ``c`` samples as a cyclic prefix."""
    if n < 1:
        raise ValueError("symbol length must be positive")
    if c < 0 or c > n:
        raise ValueError("cyclic prefix length must satisfy 0 <= c <= n")
    out = np.zeros((n + c, n))
    out[:c, n - c:] = np.eye(c)
    out[c:, :] = np.eye(n)
    return out


def cp_remove_matrix(n: int, c: int) -> np.ndarray:
    """n x (n+c) matrix discarding the first ``c`` samples."""
    if n < 1:
        raise ValueError("symbol length must be positive")
    if c < 0:
        raise ValueError("cyclic prefix length must be nonnegative")
    out = np.zeros((n, n + c))
    out[:, c:] = np.eye(n)
    return out


def apply_cp_add(x: np.ndarray, c: int) -> np.ndarray:
    """Index-shuffling equivalent of ``cp_add_matrix(len(x), c) @ x``."""
    if c == 0:
        return x.copy()
    return np.concatenate([x[-c:], x])


def apply_cp_remove(x: np.ndarray, c: int) -> np.ndarray:
    """Index-shuffling equivalent of ``cp_remove_matrix(len(x)-c, c) @ x``."""
    return x[c:].copy()


def cp_add_common(cfg: WaveformConfig, m: int) -> np.ndarray:
    """Placement matrix for common symbol ``m`` (1-based) inside the frame.

    Shape is (cp_len + n_private) x n_common: the symbol plus its cyclic
    prefix land at sample offset (m-1)*(cp_len + n_common); rows outside
    that span are zero.
    """
    c, nc = cfg.cp_len, cfg.n_common
    if m < 1 or m > cfg.n_symbols:
        raise ValueError(f"symbol index {m} outside 1..{cfg.n_symbols}")
    top = (m - 1) * (c + nc)
    out = np.zeros((cfg.frame_len, nc))
    out[top:top + c + nc, :] = cp_add_matrix(nc, c)
    return out


def cp_remove_common(cfg: WaveformConfig, m: int) -> np.ndarray:
    """Selection matrix picking the ``m``-th common symbol, prefix dropped.

    Shape is n_common x (cp_len + n_private); selects samples
    cp_len + (m-1)*(cp_len + n_common) + 1 .. + n_common (1-based).
    """
    c, nc = cfg.cp_len, cfg.n_common
    if m < 1 or m > cfg.n_symbols:
        raise ValueError(f"symbol index {m} outside 1..{cfg.n_symbols}")
    left = c + (m - 1) * (c + nc)
    out = np.zeros((nc, cfg.frame_len))
    out[:, left:left + nc] = np.eye(nc)
    return out


@dataclass(frozen=True)
class OperatorSet:
    """Dense operator bundle for one :class:`WaveformConfig`.

    Attributes
    ----------
    f_private, f_common : ndarray
        Unitary DFT matrices of the two numerologies.
    add_private, remove_private : ndarray
        Frame-level cyclic prefix insertion/removal.
    add_common, remove_common : tuple of ndarray
        Per-symbol placement/selection matrices, index 0 = first symbol.
    """

    config: WaveformConfig
    f_private: np.ndarray = field(repr=False)
    f_common: np.ndarray = field(repr=False)
    add_private: np.ndarray = field(repr=False)
    remove_private: np.ndarray = field(repr=False)
    add_common: tuple = field(repr=False)
    remove_common: tuple = field(repr=False)


def build_operators(cfg: WaveformConfig) -> OperatorSet:
    """Materialize every operator needed by the transmit/receive chains."""
    return OperatorSet(
        config=cfg,
        f_private=dft_matrix(cfg.n_private),
        f_common=dft_matrix(cfg.n_common),
        add_private=cp_add_matrix(cfg.n_private, cfg.cp_len),
        remove_private=cp_remove_matrix(cfg.n_private, cfg.cp_len),
        add_common=tuple(cp_add_common(cfg, m) for m in range(1, cfg.n_symbols + 1)),
        remove_common=tuple(cp_remove_common(cfg, m) for m in range(1, cfg.n_symbols + 1)),
    )
