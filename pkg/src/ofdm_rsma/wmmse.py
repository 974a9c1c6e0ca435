"""Rate-WMMSE machinery and the alternating-optimization drivers.

Per stream and subcarrier the achievable rate R relates to the augmented
weighted MSE through zeta = u * mse(g) - log2(u): minimizing zeta over the
equalizer g and weight u gives zeta = 1 - R exactly.  Holding (u, g) fixed
makes the sum of zetas convex quadratic in the transmit amplitudes, which
is the per-iteration QCQP; alternating the two steps never decreases the
sum rate.

Conventions: amplitude matrices follow the schemes module ((N_p, K) private,
(M, N_c) common); equalizer/weight tables are user-major ((K, N_p) and
(K, M, N_c)).  For NOMA the user axis is the decoding order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .schemes import (EffectiveLinks, PrecoderState, RateReport, _abs2,
                      _private_table, _common_table, _rates, noma_rates,
                      ofdma_rates, ofdma_common_grid_rates, rsma_rates,
                      mixed_noma_rates, initialize)
from .qcqp import (InfeasibleProblem, solve, assemble_noma_subproblem,
                   assemble_rsma_subproblem, assemble_mixed_noma_subproblem)

__all__ = [
    "EqualizerWeightState",
    "PrecoderStepParams",
    "mmse_equalizers",
    "mmse_weights",
    "update_weights",
    "awmse",
    "precoder_step_params",
    "AoResult",
    "alternating_optimization",
]


@dataclass
class EqualizerWeightState:
    """Per-stream scalar equalizers g and AWMSE weights u.

    ``g_private``/``u_private`` are (K, N_p); the common-grid fields are
    (K, M, N_c) and None when the precoder state has no common stream.
    Weights are >= 1 whenever they come from :func:`mmse_weights`.
    """

    g_private: np.ndarray
    u_private: np.ndarray
    g_common: np.ndarray | None = None
    u_common: np.ndarray | None = None


def _stream_tables(state: PrecoderState, links: EffectiveLinks, sigma2: float):
    """(T, v) per stream for the interference structure the scheme implies."""
    sic = state.scheme == "noma"
    T_p, _, v_p = _private_table(state.private_amp, links, sigma2, sic=sic)
    needs_common = (state.scheme == "rsma" or state.common_user is not None
                    or state.assignment is not None)
    if needs_common:
        T_c, _, v_c = _common_table(state.private_amp, state.common_amp,
                                    links, sigma2)
    else:
        T_c = v_c = None
    return T_p, v_p, T_c, v_c


def _mse(g, T, v):
    # e(g) = |g|^2 T - 2 Re(g v) + 1, unit-power symbols
    return _abs2(g) * T - 2.0 * np.real(g * v) + 1.0


def mmse_equalizers(state: PrecoderState, links: EffectiveLinks,
                    sigma2: float) -> EqualizerWeightState:
    """Per-subcarrier scalar MMSE equalizers g = conj(v) / T.

    T is the total received power at that stream's receiver (after any
    cancellation the scheme performs) and v the complex coefficient of the
    desired symbol.  Weights are initialized to one.
    """
    T_p, v_p, T_c, v_c = _stream_tables(state, links, sigma2)
    if (T_p <= 0).any() or (T_c is not None and (T_c <= 0).any()):
        raise ValueError("zero received power: needs sigma2 > 0 or signal")
    g_p = v_p.conj() / T_p
    g_c = None if T_c is None else v_c.conj() / T_c
    return EqualizerWeightState(
        g_private=g_p, u_private=np.ones_like(T_p),
        g_common=g_c, u_common=None if T_c is None else np.ones_like(T_c))


def mmse_weights(state: PrecoderState, weights: EqualizerWeightState,
                 links: EffectiveLinks, sigma2: float) -> EqualizerWeightState:
    """Optimal AWMSE weights u = 1 / mse(g) at the given equalizers.

    At the MMSE equalizers mse = I/T <= 1, so u >= 1 and
    log2(u) equals the stream rate.
    """
    T_p, v_p, T_c, v_c = _stream_tables(state, links, sigma2)
    e_p = _mse(weights.g_private, T_p, v_p)
    if (e_p <= 0).any():
        raise ValueError("nonpositive MSE: needs sigma2 > 0")
    u_p = 1.0 / e_p
    u_c = None
    if T_c is not None:
        e_c = _mse(weights.g_common, T_c, v_c)
        if (e_c <= 0).any():
            raise ValueError("nonpositive MSE: needs sigma2 > 0")
        u_c = 1.0 / e_c
    return EqualizerWeightState(weights.g_private, u_p, weights.g_common, u_c)


def update_weights(state: PrecoderState, links: EffectiveLinks,
                   sigma2: float) -> EqualizerWeightState:
    """MMSE equalizers followed by MMSE weights (one AO half-step)."""
    return mmse_weights(state, mmse_equalizers(state, links, sigma2),
                        links, sigma2)


def awmse(weights: EqualizerWeightState, state: PrecoderState,
          links: EffectiveLinks, sigma2: float):
    """zeta = u * mse(g) - log2(u) per stream.

    Returns (zeta_private, zeta_common); the common part is None without a
    common stream.  At MMSE equalizers and weights zeta = 1 - R.
    """
    T_p, v_p, T_c, v_c = _stream_tables(state, links, sigma2)
    z_p = weights.u_private * _mse(weights.g_private, T_p, v_p) \
        - np.log2(weights.u_private)
    z_c = None
    if T_c is not None:
        z_c = weights.u_common * _mse(weights.g_common, T_c, v_c) \
            - np.log2(weights.u_common)
    return z_p, z_c


@dataclass
class PrecoderStepParams:
    """Coefficients of the AWMSE as a quadratic in the transmit amplitudes.

    With (u, g) frozen, stream (k, q) contributes
    ``sum_j |beta_k[q, j]|^2 p_j^2 - 2 Re(f_k[q, q]) p_q + alpha_kq sigma^2
    + u - upsilon`` where the first sum runs over whichever columns
    interfere under the scheme.  ``beta_cp`` carries the private-to-common
    leakage for the cross-numerology terms.
    """

    alpha: np.ndarray  # (K, N_p) u |g|^2
    beta: np.ndarray  # (K, N_p, N_p) diag(sqrt(alpha)) Psi
    f: np.ndarray  # (K, N_p, N_p) diag(u g) Psi
    upsilon: np.ndarray  # (K, N_p) log2 u
    u_private: np.ndarray
    sigma2: float
    n_symbols: int
    n_common: int
    alpha_c: np.ndarray | None = None  # (K, M, N_c)
    beta_c: np.ndarray | None = None  # (K, M, N_c, N_c)
    beta_cp: np.ndarray | None = None  # (K, M, N_c, N_p)
    f_c: np.ndarray | None = None  # (K, M, N_c, N_c)
    upsilon_c: np.ndarray | None = None
    u_common: np.ndarray | None = None

    # Composite products; each scales columns of a beta/f block by the
    # current amplitudes, so tests can reassemble objectives term by term.
    def chi(self, P, k, i):
        """Image of user i's column at receiver k: beta_k diag(p_i)."""
        return self.beta[k] * P[:, i][None, :]

    def kappa(self, P, k, q):
        """Own-symbol column only: beta_k diag(p_k masked to entry q)."""
        out = np.zeros_like(self.beta[k])
        out[:, q] = self.beta[k][:, q] * P[q, k]
        return out

    def kappa_bar(self, P, k, q):
        """Own-stream leakage: beta_k diag(p_k with entry q zeroed)."""
        masked = P[:, k].copy()
        masked[q] = 0.0
        return self.beta[k] * masked[None, :]

    def omega(self, P, k):
        """diag(f_k diag(p_k)): the linear signal pull per subcarrier."""
        return np.diagonal(self.f[k]) * P[:, k]

    def psi(self, P, k, i, m):
        """Private column i leaking onto receiver k's common grid."""
        return self.beta_cp[k, m] * P[:, i][None, :]

    def phi(self, P_c, k, m, n):
        """Common symbol column n alone: beta_{c,k,m} diag(p_c masked)."""
        out = np.zeros_like(self.beta_c[k, m])
        out[:, n] = self.beta_c[k, m][:, n] * P_c[m, n]
        return out

    def phi_bar(self, P_c, k, m, n):
        """Common-stream leakage with column n removed."""
        masked = P_c[m].copy()
        masked[n] = 0.0
        return self.beta_c[k, m] * masked[None, :]

    def omega_common(self, P_c, k, m):
        """diag(f_{c,k,m} diag(p_{c,m}))."""
        return np.diagonal(self.f_c[k, m]) * P_c[m]


def precoder_step_params(weights: EqualizerWeightState, links: EffectiveLinks,
                         sigma2: float) -> PrecoderStepParams:
    """Freeze (u, g) into the quadratic coefficients of the precoder step."""
    u, g = weights.u_private, weights.g_private
    alpha = u * _abs2(g)
    root = np.sqrt(alpha)[..., None]
    beta = root * links.psi_private
    f = (u * g)[..., None] * links.psi_private
    params = PrecoderStepParams(
        alpha=alpha, beta=beta, f=f, upsilon=np.log2(u), u_private=u.copy(),
        sigma2=sigma2, n_symbols=links.n_symbols, n_common=links.n_common)
    if weights.g_common is not None:
        u_c, g_c = weights.u_common, weights.g_common
        alpha_c = u_c * _abs2(g_c)
        root_c = np.sqrt(alpha_c)[..., None]
        params.alpha_c = alpha_c
        params.beta_c = root_c * links.psi_common
        params.beta_cp = root_c * links.psi_cross
        params.f_c = (u_c * g_c)[..., None] * links.psi_common
        params.upsilon_c = np.log2(u_c)
        params.u_common = u_c.copy()
    return params


@dataclass
class AoResult:
    """Outcome of one alternating-optimization run."""

    state: PrecoderState
    report: RateReport
    trace: list
    converged: bool
    n_iter: int
    last_kkt: float


# strictness slack of re-packed warm starts; adapted downward once the
# previous solve's barrier weight shows how tight the active set sits
_WARM_MARGIN = 1e-4


def _interior_amplitudes(state: PrecoderState, p_total: float,
                         margin: float = _WARM_MARGIN):
    """Copy of the amplitudes pushed safely inside the feasible region.

    Solutions returned by the barrier solver hug the power ball and the
    nonnegativity bounds; re-centering from such a point wastes Newton
    steps.  Giving up a sliver of the power budget and flooring near-zero
    amplitudes costs nothing (the next solve reallocates) and keeps every
    warm start strictly interior.  The margin must stay comparable to the
    slacks the solver left behind, or the next centering spends dozens of
    steps walking the displaced coordinates back to the boundary.
    """
    cap = (1.0 - 10.0 * margin) * p_total
    power = state.total_power()
    scale = np.sqrt(cap / power) if power > cap else 1.0
    floor = margin * np.sqrt(p_total / max(state.private_amp.size
                                           + state.common_amp.size, 1))
    P = np.maximum(state.private_amp * scale, floor)
    Pc = np.maximum(state.common_amp * scale, floor)
    return P, Pc


def _qos_shares(common_rates: np.ndarray, priv_totals: np.ndarray,
                r_min: np.ndarray) -> np.ndarray:
    """Split the decodable common credit so minimum rates are covered first.

    The credit (the weakest user's total common rate over the frame,
    clipped at 0) is distributed as per-user totals that cover the QoS
    shortfalls first and share any surplus equally, scaled back
    proportionally when the credit cannot cover every shortfall; each
    user's total is then booked uniformly across the grid elements.
    """
    k_users = common_rates.shape[0]
    cap_total = max(float(common_rates.sum(axis=(1, 2)).min()), 0.0)
    shares = np.zeros_like(common_rates)
    if cap_total <= 0.0:
        return shares
    need = np.maximum(r_min - priv_totals, 0.0)
    surplus = cap_total - need.sum()
    if surplus >= 0.0:
        totals = need + surplus / k_users
    else:
        totals = need * (cap_total / need.sum())
    shares[:] = (totals / common_rates[0].size)[:, None, None]
    return shares


def _evaluate(state: PrecoderState, links: EffectiveLinks, sigma2: float,
              r_min: np.ndarray | None = None) -> RateReport:
    """Achievable rates for any precoder state, scheme-aware."""
    if state.scheme == "ofdma":
        if state.assignment is not None:
            return ofdma_common_grid_rates(state.common_amp, state.assignment,
                                           links, sigma2)
        return ofdma_rates(state.private_amp, links, sigma2)
    if state.scheme == "noma":
        if state.common_user is not None:
            return mixed_noma_rates(state.private_amp, state.common_amp,
                                    links, sigma2)
        return noma_rates(state.private_amp, links, sigma2)
    if state.scheme == "rsma":
        shares = None
        if r_min is not None and (np.asarray(r_min) > 0).any():
            T_c, sig_c, _ = _common_table(state.private_amp, state.common_amp,
                                          links, sigma2)
            T_p, sig_p, _ = _private_table(state.private_amp, links, sigma2,
                                           sic=False)
            priv_totals = _rates(T_p, sig_p).sum(axis=1)
            shares = _qos_shares(_rates(T_c, sig_c), priv_totals,
                                 np.asarray(r_min, dtype=float))
        return rsma_rates(state.private_amp, state.common_amp, links, sigma2,
                          shares=shares)
    raise ValueError(f"unknown scheme {state.scheme!r}")


def alternating_optimization(scheme: str, links: EffectiveLinks,
                             p_total: float, sigma2: float = 1.0,
                             r_min=None, tol: float = 1e-4,
                             max_iter: int = 200,
                             init: PrecoderState | None = None,
                             common_slot: bool = False,
                             kkt_tol: float = 1e-6,
                             rel_tol: float = 0.0) -> AoResult:
    """Maximize the sum rate by alternating (g, u) updates with QCQP steps.

    The iteration trace of sum rates is non-decreasing: each precoder step
    minimizes the convex AWMSE surrogate that touches the current rates
    from below, and a step that fails to improve the surrogate (solver at
    its accuracy floor) leaves the precoders unchanged and stops.  For
    NOMA the user axis of ``links`` must already be the decoding order;
    ``common_slot`` moves the first-decoded user onto the common grid.
    ``rel_tol`` adds a stopping threshold proportional to the current sum
    rate, which trades tail iterations for speed in large sweeps.

    Raises InfeasibleProblem when ``r_min`` cannot be met.
    """
    if scheme not in ("ofdma", "noma", "rsma"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    k_users = links.n_users
    r_vec = None if r_min is None else np.asarray(r_min, dtype=float)
    if r_vec is not None and r_vec.size != k_users:
        raise ValueError("r_min length must match the user count")
    has_qos = r_vec is not None and (r_vec > 0).any()

    state = init if init is not None else initialize(
        scheme, links, p_total, sigma2, common_slot=common_slot)
    report = _evaluate(state, links, sigma2, r_vec)

    if p_total == 0.0:
        if has_qos:
            raise InfeasibleProblem("positive r_min with zero transmit power")
        return AoResult(state, report, [report.sum_rate], True, 0, 0.0)

    if scheme == "ofdma":
        if has_qos and (report.per_user_total < r_vec - 1e-9).any():
            raise InfeasibleProblem("orthogonal assignment misses r_min")
        return AoResult(state, report, [report.sum_rate], True, 0, 0.0)

    kind = "mixed" if scheme == "noma" and state.common_user is not None \
        else scheme
    trace = [report.sum_rate]
    converged = False
    last_kkt = np.inf
    n_iter = 0
    prev_sol = None
    for n_iter in range(1, max_iter + 1):
        weights = update_weights(state, links, sigma2)
        params = precoder_step_params(weights, links, sigma2)
        # a fixed warm margin: tighter margins (say the previous solve's
        # 1/t) leave no room to track the moving AWMSE surfaces and the
        # first centering stalls against the barrier walls
        margin = _WARM_MARGIN
        P_w, Pc_w = _interior_amplitudes(state, p_total, margin)
        if kind == "noma":
            prob, layout = assemble_noma_subproblem(params, p_total, r_vec)
            warm = layout.pack(P_w)
        elif kind == "mixed":
            prob, layout = assemble_mixed_noma_subproblem(params, p_total,
                                                          r_vec)
            warm = layout.pack(P_w, Pc_w)
        else:
            prob, layout = assemble_rsma_subproblem(params, p_total, r_vec)
            shifted = replace(state, private_amp=P_w, common_amp=Pc_w)
            _, zeta_c = awmse(weights, shifted, links, sigma2)
            totals = zeta_c.sum(axis=(1, 2))
            pool = [k for k in range(k_users) if k not in layout.qos_users]
            slots = [totals[k] for k in layout.qos_users]
            if pool:
                slots.append(totals[pool].sum())
            s_warm = np.asarray(slots) + margin
            # every slack row needs sum(s) above each user's total; other
            # users' negative totals (common rate beyond M N_c) can sink
            # the sum, so lift uniformly until the largest row keeps slack
            lift = totals.max() + (s_warm.size + 1) * margin - s_warm.sum()
            if lift > 0.0:
                s_warm += lift / s_warm.size
            warm = layout.pack(P_w, Pc_w, s_warm)
        # enter the barrier schedule near the warm point: from the second
        # step on, the previous multipliers place it via their duality-gap
        # estimate; the first step relies on the warm margins sitting near
        # the central path at t ~ 1/margin
        mults = mask_mults = None
        if prev_sol is not None \
                and prev_sol.multipliers.shape == (len(prob.constraints),):
            mults, mask_mults = prev_sol.multipliers, prev_sol.mask_multipliers
        sol = solve(prob, warm_start=warm, kkt_tol=kkt_tol,
                    t0=1.0 / _WARM_MARGIN, warm_mults=mults,
                    warm_mask_mults=mask_mults)
        if sol.status == "infeasible":
            vals = prob.constraint_values(sol.x)
            worst = prob.names[int(np.argmax(vals))]
            raise InfeasibleProblem(
                f"precoder subproblem infeasible (most violated: {worst})")
        prev_sol = sol
        last_kkt = sol.kkt_residual
        if sol.objective_value > prob.objective.value(warm):
            converged = True  # at the solver's accuracy floor
            break
        P_new, Pc_new = layout.unpack(sol.x)
        candidate = replace(state, private_amp=P_new, common_amp=Pc_new)
        new_report = _evaluate(candidate, links, sigma2, r_vec)
        if new_report.sum_rate < trace[-1]:
            converged = True  # surrogate gain below evaluation noise
            break
        state, report = candidate, new_report
        trace.append(report.sum_rate)
        if trace[-1] - trace[-2] < max(tol, rel_tol * abs(trace[-1])):
            converged = True
            break
    return AoResult(state, report, trace, converged, n_iter, last_kkt)
