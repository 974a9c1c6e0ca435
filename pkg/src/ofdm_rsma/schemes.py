"""Power chains, achievable rates and resource allocation per access scheme.

Every receiver chain reduces to effective link matrices of the form
``F B H A F^H`` (receive DFT + prefix handling, time-domain channel,
placement + transmit DFT).  Received power at one subcarrier is then a
row of squared magnitudes applied to squared transmit amplitudes, which
keeps OFDMA (treat everything as noise), NOMA (successive cancellation
in user order) and RSMA (common stream decoded and removed first) in a
single code path.

Amplitudes are real and nonnegative throughout; transmit power is their
square.  NOMA entry points assume user columns are already sorted in
decoding order (weakest first); :func:`noma_decode_order` provides that
permutation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .waveform import OperatorSet

__all__ = [
    "EffectiveLinks",
    "PrecoderState",
    "RateReport",
    "effective_links",
    "noma_decode_order",
    "noma_power",
    "noma_rates",
    "ofdma_rates",
    "rsma_common_power",
    "rsma_private_power",
    "rsma_rates",
    "mixed_noma_rates",
    "waterfill",
    "initialize",
    "jain_fairness",
]


@dataclass(frozen=True)
class EffectiveLinks:
    """Per-user effective frequency-domain channel matrices.

    psi_private[k]    : (N_p, N_p) private-symbol chain through user k's channel
    psi_common[k, m]  : (N_c, N_c) common-symbol m chain through user k's channel
    psi_cross[k, m]   : (N_c, N_p) private transmit seen by user k's common-symbol
                        receive window, the cross-numerology leakage path
    """

    psi_private: np.ndarray = field(repr=False)
    psi_common: np.ndarray = field(repr=False)
    psi_cross: np.ndarray = field(repr=False)

    @property
    def n_users(self) -> int:
        return self.psi_private.shape[0]

    @property
    def n_private(self) -> int:
        return self.psi_private.shape[1]

    @property
    def n_symbols(self) -> int:
        return self.psi_common.shape[1]

    @property
    def n_common(self) -> int:
        return self.psi_common.shape[2]

    def private_gains(self) -> np.ndarray:
        """|h|^2 on the private grid, shape (N_p, K)."""
        return np.abs(np.diagonal(self.psi_private, axis1=1, axis2=2).T) ** 2

    def common_gains(self) -> np.ndarray:
        """|h|^2 on the common grid, shape (K, M, N_c)."""
        return np.abs(np.diagonal(self.psi_common, axis1=2, axis2=3)) ** 2

    # Composite matrices as used in the per-subcarrier power expressions;
    # kept for verification, the tables below use the psi blocks directly.
    def v_private(self, k: int, q: int, P: np.ndarray) -> np.ndarray:
        e = np.zeros(self.n_private)
        e[q] = P[q, k]
        return self.psi_private[k] @ np.diag(e)

    def v_private_bar(self, k: int, q: int, P: np.ndarray) -> np.ndarray:
        p = P[:, k].copy()
        p[q] = 0.0
        return self.psi_private[k] @ np.diag(p)

    def w_private(self, k: int, i: int, P: np.ndarray) -> np.ndarray:
        return self.psi_private[k] @ np.diag(P[:, i])

    def s_common(self, k: int, m: int, n: int, P_c: np.ndarray) -> np.ndarray:
        e = np.zeros(self.n_common)
        e[n] = P_c[m, n]
        return self.psi_common[k, m] @ np.diag(e)

    def s_common_bar(self, k: int, m: int, n: int, P_c: np.ndarray) -> np.ndarray:
        p = P_c[m].copy()
        p[n] = 0.0
        return self.psi_common[k, m] @ np.diag(p)

    def s_cross(self, k: int, m: int, u: int, P: np.ndarray) -> np.ndarray:
        return self.psi_cross[k, m] @ np.diag(P[:, u])


def effective_links(time_matrices, ops: OperatorSet) -> EffectiveLinks:
    """Build the psi blocks from per-user time-domain channel matrices."""
    hs = [np.asarray(h) for h in time_matrices]
    k_users = len(hs)
    cfg = ops.config
    fp, fph = ops.f_private, ops.f_private.conj().T
    fc, fch = ops.f_common, ops.f_common.conj().T
    psi_p = np.empty((k_users, cfg.n_private, cfg.n_private), dtype=complex)
    psi_c = np.empty((k_users, cfg.n_symbols, cfg.n_common, cfg.n_common), dtype=complex)
    psi_x = np.empty((k_users, cfg.n_symbols, cfg.n_common, cfg.n_private), dtype=complex)
    for k, h in enumerate(hs):
        h_add_p = h @ (ops.add_private @ fph)
        psi_p[k] = fp @ (ops.remove_private @ h_add_p)
        for m in range(cfg.n_symbols):
            rx = fc @ ops.remove_common[m]
            psi_c[k, m] = rx @ (h @ (ops.add_common[m] @ fch))
            psi_x[k, m] = rx @ h_add_p
    return EffectiveLinks(psi_private=psi_p, psi_common=psi_c, psi_cross=psi_x)


@dataclass
class PrecoderState:
    """Transmit amplitudes of one frame.

    private_amp : (N_p, K) per-user private-symbol amplitudes
    common_amp  : (M, N_c) common-symbol amplitudes (zero unless used)
    scheme      : "ofdma" | "noma" | "rsma"
    assignment  : (M, N_c) user indices, only for OFDMA on the common grid
    common_user : index of the first-decoded NOMA user when that user
                  transmits on the common grid (mixed-numerology NOMA)
    """

    private_amp: np.ndarray
    common_amp: np.ndarray
    scheme: str
    assignment: np.ndarray | None = None
    common_user: int | None = None

    def total_power(self) -> float:
        return float((self.private_amp ** 2).sum() + (self.common_amp ** 2).sum())

    def common_power_fraction(self) -> float:
        tot = self.total_power()
        if tot == 0.0:
            return 0.0
        return float((self.common_amp ** 2).sum()) / tot


@dataclass
class RateReport:
    """Achievable rates of one frame, in bit/s/Hz per subcarrier slot.

    ``common_rates[k, m, n]`` is what user k could decode of the common
    slot element; ``common_shares`` is the credit actually granted per
    user (for RSMA the shares sum to at most the weakest user's total
    decodable rate).  ``sum_rate`` equals private rates plus shares.
    """

    private_rates: np.ndarray
    common_rates: np.ndarray
    common_shares: np.ndarray
    per_user_total: np.ndarray
    sum_rate: float


def _abs2(x: np.ndarray) -> np.ndarray:
    return x.real ** 2 + x.imag ** 2


def _private_table(P, links: EffectiveLinks, sigma2: float, sic: bool,
                   n_users: int | None = None):
    """Total and signal power per (user, subcarrier) on the private grid.

    With ``sic`` the receiver of user k has users 0..k-1 already removed;
    otherwise every other user's signal counts as interference.
    Returns (T, sig, v) arrays of shape (K, N_p); v is the complex signal
    coefficient (CFR diagonal times own amplitude).
    """
    k_users = links.n_users if n_users is None else n_users
    p2 = P ** 2
    T = np.empty((k_users, links.n_private))
    v = np.empty((k_users, links.n_private), dtype=complex)
    for k in range(k_users):
        tot = p2[:, k:].sum(axis=1) if sic else p2.sum(axis=1)
        T[k] = _abs2(links.psi_private[k]) @ tot + sigma2
        v[k] = np.diagonal(links.psi_private[k]) * P[:, k]
    sig = _abs2(v)
    return T, sig, v


def _common_table(P, P_c, links: EffectiveLinks, sigma2: float):
    """Total and signal power per (user, symbol, subcarrier) on the common grid.

    Interference includes the common symbol's own off-diagonal leakage and
    every private stream through the cross-numerology path.
    """
    k_users = links.n_users
    m_sym, n_c = links.n_symbols, links.n_common
    tot_priv = (P ** 2).sum(axis=1)
    pc2 = P_c ** 2
    T = np.empty((k_users, m_sym, n_c))
    v = np.empty((k_users, m_sym, n_c), dtype=complex)
    for k in range(k_users):
        for m in range(m_sym):
            T[k, m] = (_abs2(links.psi_common[k, m]) @ pc2[m]
                       + _abs2(links.psi_cross[k, m]) @ tot_priv + sigma2)
            v[k, m] = np.diagonal(links.psi_common[k, m]) * P_c[m]
    sig = _abs2(v)
    return T, sig, v


def _rates(T, sig):
    interference = T - sig
    return np.log2(1.0 + sig / interference)


def noma_decode_order(links: EffectiveLinks) -> np.ndarray:
    """User permutation by ascending average channel gain (weakest first)."""
    return np.argsort(links.private_gains().mean(axis=0), kind="stable")


def noma_power(k: int, q: int, P: np.ndarray, links: EffectiveLinks,
               sigma2: float) -> tuple[float, float]:
    """(T, I) at user k's receiver on subcarrier q under SIC.

    Users 0..k-1 are removed; interference is the own-stream off-diagonal
    leakage, all not-yet-decoded users and noise.
    """
    T, sig, _ = _private_table(P, links, sigma2, sic=True)
    return float(T[k, q]), float(T[k, q] - sig[k, q])


def noma_rates(P: np.ndarray, links: EffectiveLinks, sigma2: float) -> RateReport:
    """Per-user NOMA rates; columns of P must be in decoding order."""
    T, sig, _ = _private_table(P, links, sigma2, sic=True)
    r = _rates(T, sig).T
    m_sym, n_c = links.n_symbols, links.n_common
    zeros = np.zeros((links.n_users, m_sym, n_c))
    totals = r.sum(axis=0)
    return RateReport(r, zeros, zeros.copy(), totals, float(totals.sum()))


def ofdma_rates(P: np.ndarray, links: EffectiveLinks, sigma2: float) -> RateReport:
    """OFDMA on the private grid: no cancellation anywhere.

    With orthogonal assignments and no Doppler this reduces to independent
    single-user subcarriers; under Doppler the off-diagonal leakage of the
    other user is genuine interference.
    """
    T, sig, _ = _private_table(P, links, sigma2, sic=False)
    r = _rates(T, sig).T
    zeros = np.zeros((links.n_users, links.n_symbols, links.n_common))
    totals = r.sum(axis=0)
    return RateReport(r, zeros, zeros.copy(), totals, float(totals.sum()))


def ofdma_common_grid_rates(P_c: np.ndarray, assignment: np.ndarray,
                            links: EffectiveLinks, sigma2: float) -> RateReport:
    """OFDMA carried on the short-symbol grid (wide subcarrier spacing)."""
    k_users = links.n_users
    zero_p = np.zeros((links.n_private, k_users))
    T, sig, _ = _common_table(zero_p, P_c, links, sigma2)
    r = _rates(T, sig)  # (K, M, N_c): element rate if decoded by user k
    shares = np.zeros_like(r)
    for k in range(k_users):
        shares[k][assignment == k] = r[k][assignment == k]
    totals = shares.sum(axis=(1, 2))
    return RateReport(zero_p, r, shares, totals, float(totals.sum()))


def rsma_common_power(k: int, m: int, n: int, P: np.ndarray, P_c: np.ndarray,
                      links: EffectiveLinks, sigma2: float) -> tuple[float, float]:
    """(T, I) for the common stream at user k, symbol m, subcarrier n.

    Nothing is cancelled yet: interference is the common symbol's own
    leakage, every private stream and noise.
    """
    T, sig, _ = _common_table(P, P_c, links, sigma2)
    return float(T[k, m, n]), float(T[k, m, n] - sig[k, m, n])


def rsma_private_power(k: int, q: int, P: np.ndarray, links: EffectiveLinks,
                       sigma2: float) -> tuple[float, float]:
    """(T, I) for user k's private stream after the common part is removed."""
    T, sig, _ = _private_table(P, links, sigma2, sic=False)
    return float(T[k, q]), float(T[k, q] - sig[k, q])


def _equal_split_shares(common_rates: np.ndarray) -> np.ndarray:
    """Largest decodable common credit, split equally across users.

    Every user must decode the whole common stream before removing it, so
    the credit is the weakest user's total rate over the frame; it is
    booked uniformly across users and grid elements.
    """
    total = max(float(common_rates.sum(axis=(1, 2)).min()), 0.0)
    return np.full_like(common_rates, total / common_rates.size)


def rsma_rates(P: np.ndarray, P_c: np.ndarray, links: EffectiveLinks,
               sigma2: float, shares: np.ndarray | None = None) -> RateReport:
    """RSMA rates: common credit is capped by the weakest user's total.

    ``shares`` overrides the default equal split; their sum must stay
    within the weakest user's total common rate over the frame.
    """
    T_c, sig_c, _ = _common_table(P, P_c, links, sigma2)
    common = _rates(T_c, sig_c)
    if shares is None:
        shares = _equal_split_shares(common)
    else:
        shares = np.asarray(shares, dtype=float)
        if shares.shape != common.shape:
            raise ValueError("shares shape mismatch")
        if (shares < -1e-9).any():
            raise ValueError("shares must be nonnegative")
        cap = max(float(common.sum(axis=(1, 2)).min()), 0.0)
        if shares.sum() - cap > 1e-9 * max(1.0, cap):
            raise ValueError("shares exceed the decodable common rate")
    T_p, sig_p, _ = _private_table(P, links, sigma2, sic=False)
    priv = _rates(T_p, sig_p).T
    totals = priv.sum(axis=0) + shares.sum(axis=(1, 2))
    return RateReport(priv, common, shares, totals, float(totals.sum()))


def mixed_noma_rates(P: np.ndarray, P_c: np.ndarray, links: EffectiveLinks,
                     sigma2: float) -> RateReport:
    """NOMA where the first-decoded user transmits on the common grid.

    That user is decoded against all private streams; the remaining users
    cancel it, then apply SIC among themselves in column order.  Column 0
    of P is unused and must be zero.
    """
    if (P[:, 0] != 0).any():
        raise ValueError("mixed NOMA reserves private column 0 (user on common grid)")
    T_c, sig_c, _ = _common_table(P, P_c, links, sigma2)
    common = _rates(T_c, sig_c)
    T_p, sig_p, _ = _private_table(P, links, sigma2, sic=True)
    priv = _rates(T_p, sig_p).T
    shares = np.zeros_like(common)
    shares[0] = common[0]
    totals = priv.sum(axis=0) + shares.sum(axis=(1, 2))
    return RateReport(priv, common, shares, totals, float(totals.sum()))


def waterfill(gains: np.ndarray, p_total: float) -> np.ndarray:
    """Water-filling over parallel channels: p_q = max(mu - 1/g_q, 0).

    ``gains`` are channel power over noise; nonpositive entries get no
    power.  The water level is located by bisection, then polished on the
    active set so the budget matches to machine precision.
    """
    g = np.asarray(gains, dtype=float)
    if p_total < 0:
        raise ValueError("power budget must be nonnegative")
    if p_total == 0:
        return np.zeros_like(g)
    pos = g > 0
    if not pos.any():
        raise ValueError("need at least one positive gain")
    inv = np.full_like(g, np.inf)
    inv[pos] = 1.0 / g[pos]
    lo, hi = inv[pos].min(), inv[pos].min() + p_total
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(mid - inv, 0.0).sum() < p_total:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    active = hi - inv > 0
    mu = (p_total + inv[active].sum()) / active.sum()
    powers = np.maximum(mu - inv, 0.0)
    powers[~active] = 0.0
    return powers


def initialize(scheme: str, links: EffectiveLinks, p_total: float, sigma2: float,
               common_slot: bool = False,
               common_power_fraction: float = 0.1) -> PrecoderState:
    """Starting precoder per scheme.

    OFDMA assigns each subcarrier to the strongest user and water-fills;
    that is also the full OFDMA solution.  NOMA and RSMA give every user
    an equal budget water-filled on the subcarriers it wins, blended with
    a small uniform floor: zero-power streams are fixed points of the
    alternating updates, so nothing may start at exactly zero.  RSMA puts
    ``common_power_fraction`` of the budget uniformly on the common grid.
    ``common_slot`` switches OFDMA/NOMA onto the short-symbol grid
    (wide-spacing variants).
    """
    if p_total < 0:
        raise ValueError("power budget must be nonnegative")
    k_users, n_p = links.n_users, links.n_private
    m_sym, n_c = links.n_symbols, links.n_common
    P = np.zeros((n_p, k_users))
    P_c = np.zeros((m_sym, n_c))

    def orthogonal_private(budget):
        gains = links.private_gains()  # (N_p, K)
        best = np.argmax(gains, axis=1)
        eff = gains[np.arange(n_p), best] / sigma2
        pw = waterfill(eff, budget) if budget > 0 else np.zeros(n_p)
        out = np.zeros((n_p, k_users))
        out[np.arange(n_p), best] = np.sqrt(pw)
        return out

    def spread_private(budget, users=None):
        users = list(range(k_users)) if users is None else users
        out = np.zeros((n_p, k_users))
        if budget <= 0 or not users:
            return out
        gains = links.private_gains()[:, users]  # (N_p, len(users))
        best = np.argmax(gains, axis=1)
        share = budget / len(users)
        for j, u in enumerate(users):
            mine = best == j
            pw = np.full(n_p, 0.1 * share / n_p)
            if mine.any():
                eff = np.where(mine, gains[:, j], 0.0) / sigma2
                pw += waterfill(eff, 0.9 * share)
            else:
                pw += 0.9 * share / n_p
            out[:, u] = np.sqrt(pw)
        return out

    if scheme == "ofdma":
        if common_slot:
            gains = links.common_gains()  # (K, M, N_c)
            best = np.argmax(gains, axis=0)
            eff = np.take_along_axis(gains, best[None], axis=0)[0] / sigma2
            pw = waterfill(eff.ravel(), p_total).reshape(m_sym, n_c) if p_total > 0 \
                else np.zeros((m_sym, n_c))
            return PrecoderState(P, np.sqrt(pw), "ofdma", assignment=best)
        return PrecoderState(orthogonal_private(p_total), P_c, "ofdma")
    if scheme == "noma":
        if common_slot:
            # first-decoded user rides the common grid, the rest split the
            # private grid; equal power split is only a starting point
            gains0 = links.common_gains()[0] / sigma2
            pw0 = 0.9 * waterfill(gains0.ravel(), 0.5 * p_total) \
                + 0.1 * (0.5 * p_total) / (m_sym * n_c) if p_total > 0 \
                else np.zeros(m_sym * n_c)
            P = spread_private(0.5 * p_total, users=list(range(1, k_users)))
            return PrecoderState(P, np.sqrt(pw0.reshape(m_sym, n_c)),
                                 "noma", common_user=0)
        return PrecoderState(spread_private(p_total), P_c, "noma")
    if scheme == "rsma":
        frac = common_power_fraction if p_total > 0 else 0.0
        P_c[:] = np.sqrt(frac * p_total / (m_sym * n_c))
        P = spread_private((1.0 - frac) * p_total)
        return PrecoderState(P, P_c, "rsma")
    raise ValueError(f"unknown scheme {scheme!r}")


def jain_fairness(rates) -> float:
    """Jain index (sum r)^2 / (K * sum r^2); 1 means perfectly even."""
    r = np.asarray(rates, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("rates must be a nonempty vector")
    if (r < 0).any():
        raise ValueError("rates must be nonnegative")
    denom = r.size * (r ** 2).sum()
    if denom == 0.0:
        return 1.0
    return float(r.sum() ** 2 / denom)
