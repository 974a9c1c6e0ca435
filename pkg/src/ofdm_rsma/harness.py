"""Monte-Carlo experiment driver: scheme comparison over SNR and Doppler grids.

One trial draws an independent multipath channel per user, shared by every
scheme and SNR point of the grid (paired comparisons cancel most of the
Monte-Carlo noise in ordering tests).  Cells are aggregated into per-cell
mean sum rate, standard error, the Jain fairness index of the
trial-averaged per-user rates, and power-split statistics, and can be
written to CSV and JSON with stable formatting so identical configurations
reproduce identical bytes.

Numerology presets follow the ``<scheme>-<common kHz>[-<private kHz>]``
naming: ``ofdma-60``, ``ofdma-140``, ``noma-60-60``, ``noma-140-60``,
``rsma-60-60``, ``rsma-140-60``.  The ``*-60*`` variants run every stream
on the long-symbol grid; the ``*-140*`` variants put the common (or the
orthogonal / first-decoded) stream on the short-symbol wide-spacing grid.
"""

from __future__ import annotations

import configparser
import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .waveform import WaveformConfig, build_operators
from .channel import ChannelEnsembleConfig, sample_paths, time_domain_channel
from .schemes import (EffectiveLinks, PrecoderState, effective_links,
                      noma_decode_order, initialize, jain_fairness)
from .wmmse import AoResult, alternating_optimization
from .qcqp import InfeasibleProblem

__all__ = [
    "DEFAULT_WAVEFORM",
    "PRESETS",
    "resolve_scheme",
    "preset_waveform",
    "ExperimentConfig",
    "load_config",
    "CellResult",
    "SweepResult",
    "run_sweep",
    "power_ratio_report",
    "jain_jackknife",
    "fairness_report",
    "subcarrier_power_report",
    "convergence_report",
    "write_sweep_csv",
    "write_subcarrier_csv",
    "write_convergence_csv",
    "write_json",
]

SWEEP_HEADER = ["scheme", "snr_db", "delta_d", "mean_sr", "stderr_sr",
                "mean_jain", "common_power_frac"]
SUBCARRIER_HEADER = ["scheme", "snr_db", "subcarrier", "stream", "power",
                     "channel_gain"]
CONVERGENCE_HEADER = ["scheme", "snr_db", "delta_d", "iteration", "sum_rate"]

# default mixed-numerology frame: 35 subcarriers at 60 kHz filling the
# frame, 15 at 140 kHz fitting twice, 5-sample prefix, 2.1 MHz sampling
DEFAULT_WAVEFORM = WaveformConfig(n_private=35, n_common=15, cp_len=5,
                                  sample_rate=2.1e6, scs_private=60e3,
                                  scs_common=140e3)

# preset -> (base scheme, common_slot flag, uses the mixed-numerology grid)
PRESETS = {
    "ofdma-60": ("ofdma", False, False),
    "ofdma-140": ("ofdma", True, True),
    "noma-60-60": ("noma", False, False),
    "noma-140-60": ("noma", True, True),
    "rsma-60-60": ("rsma", False, False),
    "rsma-140-60": ("rsma", False, True),
}
_BARE_SCHEMES = {"ofdma": "ofdma-60", "noma": "noma-60-60", "rsma": "rsma-60-60"}


def resolve_scheme(name: str) -> str:
    """Map a bare scheme name to its default preset; validate presets."""
    preset = _BARE_SCHEMES.get(name, name)
    if preset not in PRESETS:
        raise ValueError(f"unknown scheme or preset {name!r}; "
                         f"choose from {sorted(PRESETS) + sorted(_BARE_SCHEMES)}")
    return preset


def preset_waveform(preset: str, base: WaveformConfig) -> WaveformConfig:
    """Waveform used by a preset: the mixed grid as configured, or the
    single-numerology variant with the common stream on the private grid."""
    if PRESETS[preset][2]:
        return base
    return WaveformConfig(base.n_private, base.n_private, base.cp_len,
                          base.sample_rate, base.scs_private, base.scs_private)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one Monte-Carlo sweep.

    Parameters
    ----------
    schemes : tuple of str
        Scheme names (``ofdma``/``noma``/``rsma``, mapped to their 60 kHz
        presets) or explicit preset names.
    snr_grid_db, delta_d_grid : tuple of float
        SNR points in dB and normalized Doppler spreads (relative to the
        private subcarrier spacing).
    trials : int
        Channel realizations per grid cell; realization i is shared by all
        schemes and SNR points so comparisons are paired.
    seed : int
        Root seed; per-trial streams are derived from
        ``(seed, trial, doppler index, user)`` and never depend on the
        total trial count.
    n_users : int
        Number of receivers.
    waveform : WaveformConfig
        Base (mixed-numerology) grid; single-numerology presets derive
        their variant from it.
    channel : ChannelEnsembleConfig
        Multipath ensemble; its ``max_doppler`` field is overridden per
        Doppler grid point.
    r_min : tuple of float or None
        Per-user minimum rates passed to the optimizer.
    restarts : int
        Alternating-optimization starts per cell (best kept); the first
        uses the deterministic initializer, later ones jitter it.
    ao_tol, ao_rel_tol, ao_max_iter, solver_kkt_tol : float, float, int, float
        Optimizer knobs used for sweep cells; looser than the optimizer
        defaults because Monte-Carlo averaging dominates the error budget.
        ``ao_rel_tol`` stops a cell once the per-iteration gain drops below
        that fraction of the running sum rate.
    threads : int
        Worker threads; trials are independent work items.
    """

    schemes: tuple = ("ofdma", "noma", "rsma")
    snr_grid_db: tuple = (10.0, 20.0, 30.0)
    delta_d_grid: tuple = (0.0, 0.2)
    trials: int = 100
    seed: int = 1
    n_users: int = 2
    waveform: WaveformConfig = DEFAULT_WAVEFORM
    channel: ChannelEnsembleConfig = field(default_factory=ChannelEnsembleConfig)
    r_min: tuple | None = None
    restarts: int = 1
    ao_tol: float = 1e-3
    ao_rel_tol: float = 1e-3
    ao_max_iter: int = 80
    solver_kkt_tol: float = 1e-4
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "snr_grid_db",
                           tuple(float(s) for s in self.snr_grid_db))
        object.__setattr__(self, "delta_d_grid",
                           tuple(float(d) for d in self.delta_d_grid))
        if self.r_min is not None:
            object.__setattr__(self, "r_min",
                               tuple(float(r) for r in self.r_min))
        if not self.schemes or not self.snr_grid_db or not self.delta_d_grid:
            raise ValueError("schemes and both grids must be non-empty")
        for name in self.schemes:
            resolve_scheme(name)
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.n_users < 1:
            raise ValueError("n_users must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if any(d < 0 for d in self.delta_d_grid):
            raise ValueError("delta_d must be nonnegative")
        if self.r_min is not None and len(self.r_min) != self.n_users:
            raise ValueError("r_min length must match n_users")

    @property
    def resolved_schemes(self) -> tuple:
        return tuple(resolve_scheme(s) for s in self.schemes)

    def transmit_power(self, snr_db: float) -> float:
        """Power budget at an SNR point: N_p * sigma^2 * 10^(SNR/10)."""
        return self.waveform.n_private * 10.0 ** (snr_db / 10.0)


# --------------------------------------------------------------------------
# Config files: one INI-style section per nested dataclass, keys mirror the
# field names exactly and unknown keys are rejected.

def _parse_value(text: str, kind):
    text = text.strip()
    if kind == "tuple-str":
        return tuple(s.strip() for s in text.split(",") if s.strip())
    if kind == "tuple-float":
        if not text or text.lower() == "none":
            return None
        return tuple(float(s) for s in text.split(",") if s.strip())
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


_EXPERIMENT_KEYS = {
    "schemes": "tuple-str", "snr_grid_db": "tuple-float",
    "delta_d_grid": "tuple-float", "trials": int, "seed": int,
    "n_users": int, "r_min": "tuple-float", "restarts": int,
    "ao_tol": float, "ao_rel_tol": float, "ao_max_iter": int,
    "solver_kkt_tol": float, "threads": int,
}
_WAVEFORM_KEYS = {"n_private": int, "n_common": int, "cp_len": int,
                  "sample_rate": float, "scs_private": float,
                  "scs_common": float}
_CHANNEL_KEYS = {"n_paths": int, "max_delay_spread": float,
                 "max_doppler": float, "power_decay_db": float,
                 "seed": int, "user_gain_db": "tuple-float"}


def load_config(path) -> ExperimentConfig:
    """Parse an experiment description from an INI file.

    Sections ``[experiment]``, ``[waveform]`` and ``[channel]`` mirror the
    ``ExperimentConfig``, ``WaveformConfig`` and ``ChannelEnsembleConfig``
    field names; unknown sections or keys raise ``ValueError``.
    """
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    known = {"experiment": _EXPERIMENT_KEYS, "waveform": _WAVEFORM_KEYS,
             "channel": _CHANNEL_KEYS}
    for section in parser.sections():
        if section not in known:
            raise ValueError(f"unknown config section [{section}]")
        stray = set(parser[section]) - set(known[section])
        if stray:
            raise ValueError(
                f"unknown keys in [{section}]: {', '.join(sorted(stray))}")

    def section_kwargs(name, keys):
        out = {}
        if parser.has_section(name):
            for key, kind in keys.items():
                if key in parser[name]:
                    out[key] = _parse_value(parser[name][key], kind)
        return out

    kwargs = section_kwargs("experiment", _EXPERIMENT_KEYS)
    wf = section_kwargs("waveform", _WAVEFORM_KEYS)
    ch = section_kwargs("channel", _CHANNEL_KEYS)
    if wf:
        base = {f.name: getattr(DEFAULT_WAVEFORM, f.name)
                for f in fields(WaveformConfig)}
        base.update(wf)
        kwargs["waveform"] = WaveformConfig(**base)
    if ch:
        if ch.get("user_gain_db") is None:
            ch.pop("user_gain_db", None)
        kwargs["channel"] = ChannelEnsembleConfig(**ch)
    return ExperimentConfig(**kwargs)


# --------------------------------------------------------------------------
# Sweep execution

@dataclass
class CellResult:
    """Aggregated outcome of one (scheme, SNR, Doppler) grid cell.

    Per-trial vectors keep NaN at failed trials; means and errors are over
    the successful ones.  Per-user quantities follow each scheme's stream
    order: layered decoding lists the first-decoded (weakest) user first,
    the other schemes keep the receiver order.
    """

    scheme: str
    snr_db: float
    delta_d: float
    sum_rates: np.ndarray
    user_rates: np.ndarray
    jain: np.ndarray
    common_frac: np.ndarray
    user_power: np.ndarray
    private_power: np.ndarray
    common_power: np.ndarray
    n_failed: int = 0

    @property
    def mean_sr(self) -> float:
        return float(np.nanmean(self.sum_rates))

    @property
    def stderr_sr(self) -> float:
        ok = self.sum_rates[~np.isnan(self.sum_rates)]
        if ok.size < 2:
            return 0.0
        return float(ok.std(ddof=1) / np.sqrt(ok.size))

    @property
    def mean_user_rates(self) -> np.ndarray:
        ok = ~np.isnan(self.user_rates).any(axis=1)
        if not ok.any():
            return np.full(self.user_rates.shape[1], np.nan)
        return self.user_rates[ok].mean(axis=0)

    @property
    def mean_jain(self) -> float:
        """Jain index of the trial-averaged per-user rates.

        Averaging first matches how the long-run fairness of a scheme is
        read off a Monte-Carlo run; per-trial indices stay available in
        ``jain`` for dispersion diagnostics.
        """
        means = self.mean_user_rates
        if np.isnan(means).any():
            return float("nan")
        return jain_fairness(np.maximum(means, 0.0))

    @property
    def mean_common_frac(self) -> float:
        # NaN for schemes without a common stream
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return float(np.nanmean(self.common_frac))

    def common_private_ratio_db(self) -> float | None:
        """Common over private mean transmit power in dB; None without
        a common stream (orthogonal and plain superposition presets)."""
        common = float(self.common_power.sum())
        private = float(self.private_power.sum())
        if common <= 0.0 or private <= 0.0:
            return None
        return 10.0 * np.log10(common / private)

    def user_power_ratio_db(self) -> float | None:
        """First over second user mean transmit power in dB."""
        if self.user_power.shape[1] < 2:
            return None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            means = np.nanmean(self.user_power, axis=0)
        if not (means[:2] > 0).all():
            return None
        return float(10.0 * np.log10(means[0] / means[1]))

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "snr_db": self.snr_db,
            "delta_d": self.delta_d,
            "mean_sr": self.mean_sr,
            "stderr_sr": self.stderr_sr,
            "mean_jain": self.mean_jain,
            "mean_common_power_frac": self.mean_common_frac,
            "common_private_ratio_db": self.common_private_ratio_db(),
            "user_power_ratio_db": self.user_power_ratio_db(),
            "n_failed": self.n_failed,
            "sum_rates": self.sum_rates.tolist(),
            "user_rates": self.user_rates.tolist(),
            "jain": self.jain.tolist(),
            "common_power_frac": self.common_frac.tolist(),
            "user_power": self.user_power.tolist(),
            "private_power": self.private_power.tolist(),
            "common_power": self.common_power.tolist(),
        }


@dataclass
class SweepResult:
    """All grid cells of one sweep, in configuration order."""

    config: ExperimentConfig
    cells: list

    def cell(self, scheme: str, snr_db: float, delta_d: float) -> CellResult:
        preset = resolve_scheme(scheme)
        for c in self.cells:
            if (c.scheme == preset and c.snr_db == float(snr_db)
                    and c.delta_d == float(delta_d)):
                return c
        raise KeyError((scheme, snr_db, delta_d))

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "config": {
                "schemes": list(cfg.resolved_schemes),
                "snr_grid_db": list(cfg.snr_grid_db),
                "delta_d_grid": list(cfg.delta_d_grid),
                "trials": cfg.trials,
                "seed": cfg.seed,
                "n_users": cfg.n_users,
                "waveform": {f.name: getattr(cfg.waveform, f.name)
                             for f in fields(WaveformConfig)},
                "channel": {f.name: (list(v) if isinstance(
                    v := getattr(cfg.channel, f.name), tuple) else v)
                    for f in fields(ChannelEnsembleConfig)},
                "r_min": None if cfg.r_min is None else list(cfg.r_min),
                "restarts": cfg.restarts,
                "ao_tol": cfg.ao_tol,
                "ao_rel_tol": cfg.ao_rel_tol,
                "ao_max_iter": cfg.ao_max_iter,
                "solver_kkt_tol": cfg.solver_kkt_tol,
            },
            "cells": [c.to_dict() for c in self.cells],
        }


def _user_rng(cfg: ExperimentConfig, trial: int, dd_idx: int, user: int):
    return np.random.default_rng(
        np.random.SeedSequence([cfg.seed, trial, dd_idx, user]))


def _trial_channels(cfg: ExperimentConfig, dd_idx: int, trial: int):
    """Per-user frame-sized time-domain channel matrices for one trial."""
    dd = cfg.delta_d_grid[dd_idx]
    ensemble = replace(cfg.channel, max_doppler=dd * cfg.waveform.scs_private)
    wf = cfg.waveform
    mats = []
    for user in range(cfg.n_users):
        rng = _user_rng(cfg, trial, dd_idx, user)
        paths = sample_paths(ensemble, rng,
                             gain_db=ensemble.gain_offset_db(user))
        mats.append(time_domain_channel(paths, wf.n_private, wf.cp_len,
                                        wf.sample_rate))
    return mats


def _permute_users(links: EffectiveLinks, perm: np.ndarray) -> EffectiveLinks:
    return EffectiveLinks(psi_private=links.psi_private[perm],
                          psi_common=links.psi_common[perm],
                          psi_cross=links.psi_cross[perm])


def _jittered_init(scheme, links, p_total, sigma2, common_slot, rng):
    """Random multiplicative restart of the deterministic initializer."""
    state = initialize(scheme, links, p_total, sigma2, common_slot=common_slot)
    budget = state.total_power()
    priv = state.private_amp * rng.uniform(0.5, 1.5, state.private_amp.shape)
    com = state.common_amp * rng.uniform(0.5, 1.5, state.common_amp.shape)
    used = (priv ** 2).sum() + (com ** 2).sum()
    if used > 0 and budget > 0:
        scale = np.sqrt(budget / used)
        priv, com = priv * scale, com * scale
    return replace(state, private_amp=priv, common_amp=com)


def _rsma_image_of_noma(state: PrecoderState, perm: np.ndarray,
                        m_sym: int, n_c: int) -> PrecoderState | None:
    """Rate-splitting precoders that reproduce a layered-decoding solution.

    The first-decoded stream is decoded by every receiver before its own,
    which is exactly the role of a common stream that carries only that
    user's data.  Moving it onto the common grid and keeping the remaining
    private columns therefore hands the rate-splitting optimizer a start
    whose sum rate essentially matches the layered outcome.  Returns None
    when the grids are incompatible.
    """
    k_users = perm.size
    n_p = state.private_amp.shape[0]
    P = np.zeros((n_p, k_users))
    for j in range(1, k_users):
        P[:, perm[j]] = state.private_amp[:, j]
    if state.common_user is not None:
        Pc = state.common_amp.copy()
        if Pc.shape != (m_sym, n_c):
            return None
    else:
        if n_p != m_sym * n_c:
            return None
        Pc = state.private_amp[:, 0].reshape(m_sym, n_c).copy()
    return PrecoderState(P, Pc, "rsma")


def _chain_solutions(cfg: ExperimentConfig, preset: str,
                     links: EffectiveLinks, dd_idx: int, trial: int,
                     polish_inits: dict | None = None):
    """Best AO outcome per SNR point for one preset on one realization.

    SNR points run in ascending order so each solve warm-starts from the
    previous solution scaled to the new power budget; each extra restart
    runs its own chain from a jittered initializer.  ``polish_inits`` maps
    an SNR point to a ``(target_sum_rate, state)`` pair: when the chained
    result lands below the target, one more run starts from that state and
    the better outcome is kept.  Returns a dict ``snr -> AoResult | None``
    (None means every attempt was infeasible).
    """
    scheme, common_slot, _ = PRESETS[preset]
    order = sorted(cfg.snr_grid_db)
    best: dict = {snr: None for snr in order}
    n_restarts = 1 if scheme == "ofdma" else cfg.restarts

    def run(p_total, init):
        return alternating_optimization(
            scheme, links, p_total, sigma2=1.0, r_min=cfg.r_min,
            tol=cfg.ao_tol, max_iter=cfg.ao_max_iter, init=init,
            common_slot=common_slot, kkt_tol=cfg.solver_kkt_tol,
            rel_tol=cfg.ao_rel_tol)

    for r in range(n_restarts):
        prev = None
        prev_p = None
        for snr in order:
            p_total = cfg.transmit_power(snr)
            init = None
            if scheme != "ofdma":
                if prev is not None:
                    scale = np.sqrt(p_total / prev_p)
                    init = replace(prev, private_amp=prev.private_amp * scale,
                                   common_amp=prev.common_amp * scale)
                elif r > 0:
                    rng = np.random.default_rng(np.random.SeedSequence(
                        [cfg.seed, trial, dd_idx, 997, r]))
                    init = _jittered_init(scheme, links, p_total, 1.0,
                                          common_slot, rng)
            try:
                res = run(p_total, init)
            except InfeasibleProblem:
                res = None
            hint = polish_inits.get(snr) if r == 0 and polish_inits else None
            if hint is not None:
                target_sr, mapped = hint
                cur_sr = -np.inf if res is None else res.report.sum_rate
                if target_sr > cur_sr:
                    try:
                        res2 = run(p_total, mapped)
                    except InfeasibleProblem:
                        res2 = None
                    if res2 is not None and res2.report.sum_rate > cur_sr:
                        res = res2
            if res is None:
                prev, prev_p = None, None
                continue
            prev, prev_p = res.state, p_total
            if best[snr] is None or res.report.sum_rate > best[snr].report.sum_rate:
                best[snr] = res
    return best


def _cell_record(preset: str, res: AoResult, links: EffectiveLinks,
                 p_total: float) -> dict:
    """Per-trial numbers for one solved cell, in the scheme's stream order."""
    state, report = res.state, res.report
    k_users = links.n_users
    assert state.total_power() <= p_total * (1 + 1e-9) + 1e-6
    totals = np.asarray(report.per_user_total, dtype=float)
    priv_pw = state.private_amp ** 2
    com_pw = state.common_amp ** 2
    user_power = priv_pw.sum(axis=0)
    if state.assignment is not None:
        for k in range(k_users):
            user_power[k] += com_pw[state.assignment == k].sum()
    elif state.common_user is not None:
        user_power[state.common_user] += com_pw.sum()
    scheme = PRESETS[preset][0]
    frac = state.common_power_fraction() if scheme == "rsma" else np.nan
    return {
        "sum_rate": report.sum_rate,
        "user_rates": totals,
        "jain": jain_fairness(np.maximum(totals, 0.0)),
        "common_frac": frac,
        "user_power": user_power,
        "private_power": priv_pw,
        "common_power": com_pw,
    }


def _run_trial(cfg: ExperimentConfig, dd_idx: int, trial: int, ops_cache: dict):
    """All (scheme, SNR) records of one channel realization.

    Presets are processed orthogonal -> layered -> rate-splitting so that
    the rate-splitting chain can fall back to the layered solution mapped
    onto its own grid (same realization, same budget) whenever its chained
    result lands below it.
    """
    mats = _trial_channels(cfg, dd_idx, trial)
    records = {}
    rank = {"ofdma": 0, "noma": 1, "rsma": 2}
    noma_best: dict = {}  # grid family -> (per-SNR results, decode order)
    for preset in sorted(cfg.resolved_schemes,
                         key=lambda p: rank[PRESETS[p][0]]):
        scheme = PRESETS[preset][0]
        links = effective_links(mats, ops_cache[preset])
        perm = None
        links_run = links
        polish = None
        if scheme == "noma":
            perm = noma_decode_order(links)
            links_run = _permute_users(links, perm)
        elif scheme == "rsma":
            polish = _noma_polish_inits(preset, noma_best, links)
        best = _chain_solutions(cfg, preset, links_run, dd_idx, trial, polish)
        if scheme == "noma":
            noma_best[preset.split("-", 1)[1]] = (best, perm)
        for snr in cfg.snr_grid_db:
            res = best[snr]
            if res is None:
                records[preset, snr] = None
            else:
                records[preset, snr] = _cell_record(
                    preset, res, links_run, cfg.transmit_power(snr))
    return records


def _noma_polish_inits(preset: str, noma_best: dict,
                       links: EffectiveLinks) -> dict | None:
    """Per-SNR (target sum rate, mapped state) pairs for an RSMA preset."""
    entry = noma_best.get(preset.split("-", 1)[1])
    if entry is None:
        return None
    best, perm = entry
    out = {}
    for snr, res in best.items():
        if res is None:
            continue
        mapped = _rsma_image_of_noma(res.state, perm,
                                     links.n_symbols, links.n_common)
        if mapped is not None:
            out[snr] = (res.report.sum_rate, mapped)
    return out or None


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Run the full Monte-Carlo grid described by ``cfg``.

    Deterministic for a fixed seed: per-trial random streams depend only
    on (seed, trial, Doppler index, user), so enlarging the trial count
    or reordering grids leaves earlier trials' draws unchanged.  Trials
    whose optimization is infeasible are dropped from the averages and
    counted in ``CellResult.n_failed`` with a warning.
    """
    ops_cache = {preset: build_operators(preset_waveform(preset, cfg.waveform))
                 for preset in cfg.resolved_schemes}
    jobs = [(dd_idx, trial)
            for dd_idx in range(len(cfg.delta_d_grid))
            for trial in range(cfg.trials)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(pool.map(
                lambda job: _run_trial(cfg, job[0], job[1], ops_cache), jobs))
    else:
        outcomes = [_run_trial(cfg, dd_idx, trial, ops_cache)
                    for dd_idx, trial in jobs]
    by_job = dict(zip(jobs, outcomes))

    wf = cfg.waveform
    cells = []
    total_failed = 0
    for preset in cfg.resolved_schemes:
        n_c = preset_waveform(preset, wf).n_common
        m_sym = preset_waveform(preset, wf).n_symbols
        for snr in cfg.snr_grid_db:
            for dd_idx, dd in enumerate(cfg.delta_d_grid):
                sr = np.full(cfg.trials, np.nan)
                ur = np.full((cfg.trials, cfg.n_users), np.nan)
                jn = np.full(cfg.trials, np.nan)
                cf = np.full(cfg.trials, np.nan)
                upw = np.full((cfg.trials, cfg.n_users), np.nan)
                ppw = np.zeros((wf.n_private, cfg.n_users))
                cpw = np.zeros((m_sym, n_c))
                n_ok = 0
                n_failed = 0
                for trial in range(cfg.trials):
                    rec = by_job[dd_idx, trial][preset, snr]
                    if rec is None:
                        n_failed += 1
                        continue
                    sr[trial] = rec["sum_rate"]
                    ur[trial] = rec["user_rates"]
                    jn[trial] = rec["jain"]
                    cf[trial] = rec["common_frac"]
                    upw[trial] = rec["user_power"]
                    ppw += rec["private_power"]
                    cpw += rec["common_power"]
                    n_ok += 1
                if n_ok:
                    ppw /= n_ok
                    cpw /= n_ok
                total_failed += n_failed
                cells.append(CellResult(preset, snr, dd, sr, ur, jn, cf, upw,
                                        ppw, cpw, n_failed))
    if total_failed:
        warnings.warn(f"{total_failed} infeasible cells excluded from means",
                      stacklevel=2)
    return SweepResult(cfg, cells)


# --------------------------------------------------------------------------
# Reports

def power_ratio_report(cfg: ExperimentConfig,
                       result: SweepResult | None = None) -> dict:
    """Common-vs-private and first-vs-second-user power ratios in dB.

    Entries are per (scheme, SNR, Doppler) cell; a missing stream (no
    common power, or a single user) reports ``None``.
    """
    result = run_sweep(cfg) if result is None else result
    rows = []
    for c in result.cells:
        rows.append({
            "scheme": c.scheme,
            "snr_db": c.snr_db,
            "delta_d": c.delta_d,
            "common_private_ratio_db": c.common_private_ratio_db(),
            "common_power_frac": None if np.isnan(c.mean_common_frac)
            else c.mean_common_frac,
            "user_power_ratio_db": c.user_power_ratio_db(),
        })
    return {"ratios": rows}


def jain_jackknife(user_rates: np.ndarray) -> tuple:
    """Jain index of mean rates with its leave-one-trial-out jackknife error.

    ``user_rates`` is (trials, users); trials containing NaN are skipped.
    Returns ``(index, stderr)``; the error is 0 with fewer than two trials.
    """
    ok = user_rates[~np.isnan(user_rates).any(axis=1)]
    n = ok.shape[0]
    if n == 0:
        return float("nan"), 0.0
    index = jain_fairness(np.maximum(ok.mean(axis=0), 0.0))
    if n < 2:
        return index, 0.0
    loo = (ok.sum(axis=0)[None, :] - ok) / (n - 1)
    vals = np.array([jain_fairness(np.maximum(v, 0.0)) for v in loo])
    stderr = float(np.sqrt((n - 1) / n * ((vals - vals.mean()) ** 2).sum()))
    return index, stderr


def fairness_report(cfg: ExperimentConfig,
                    result: SweepResult | None = None) -> dict:
    """Jain fairness index per (scheme, SNR, Doppler) cell.

    ``mean_jain`` is the index of the trial-averaged per-user rates with a
    jackknife standard error; ``mean_trial_jain`` is the average of the
    per-trial indices (a dispersion diagnostic, always the smaller number).
    """
    result = run_sweep(cfg) if result is None else result
    rows = []
    for c in result.cells:
        index, stderr = jain_jackknife(c.user_rates)
        rows.append({
            "scheme": c.scheme,
            "snr_db": c.snr_db,
            "delta_d": c.delta_d,
            "mean_jain": index,
            "stderr_jain": stderr,
            "mean_trial_jain": float(np.nanmean(c.jain)),
        })
    return {"fairness": rows}


def subcarrier_power_report(cfg: ExperimentConfig, snr_list=None,
                            trial: int = 0) -> list:
    """Per-subcarrier allocations and channel gains of one realization.

    Uses the first Doppler grid point and the given trial index.  Rows are
    dicts matching the subcarrier CSV columns; subcarrier indices are
    1-based, per-user streams are named ``user<k>`` and the shared stream
    ``common`` (its channel gain is the weakest user's).
    """
    snrs = cfg.snr_grid_db if snr_list is None else [float(s) for s in snr_list]
    sub_cfg = replace(cfg, snr_grid_db=tuple(snrs))
    ops_cache = {preset: build_operators(preset_waveform(preset, cfg.waveform))
                 for preset in cfg.resolved_schemes}
    mats = _trial_channels(sub_cfg, 0, trial)
    rows = []
    for preset in cfg.resolved_schemes:
        links = effective_links(mats, ops_cache[preset])
        perm = None
        if PRESETS[preset][0] == "noma":
            perm = noma_decode_order(links)
            links_run = _permute_users(links, perm)
        else:
            links_run = links
        best = _chain_solutions(sub_cfg, preset, links_run, 0, trial)
        pgain = links_run.private_gains()
        cgain = links_run.common_gains()
        for snr in snrs:
            res = best[snr]
            if res is None:
                continue
            state = res.state
            for k in range(links.n_users):
                orig = perm[k] if perm is not None else k
                for q in range(links.n_private):
                    power = float(state.private_amp[q, k] ** 2)
                    rows.append({
                        "scheme": preset, "snr_db": snr, "subcarrier": q + 1,
                        "stream": f"user{orig + 1}", "power": power,
                        "channel_gain": float(pgain[q, k]),
                    })
            com_pw = state.common_amp ** 2
            if state.assignment is not None:
                for m in range(links.n_symbols):
                    for n in range(links.n_common):
                        k = int(state.assignment[m, n])
                        orig = perm[k] if perm is not None else k
                        rows.append({
                            "scheme": preset, "snr_db": snr,
                            "subcarrier": m * links.n_common + n + 1,
                            "stream": f"user{orig + 1}",
                            "power": float(com_pw[m, n]),
                            "channel_gain": float(cgain[k, m, n]),
                        })
            elif state.common_user is not None:
                k = state.common_user
                orig = perm[k] if perm is not None else k
                for m in range(links.n_symbols):
                    for n in range(links.n_common):
                        rows.append({
                            "scheme": preset, "snr_db": snr,
                            "subcarrier": m * links.n_common + n + 1,
                            "stream": f"user{orig + 1}",
                            "power": float(com_pw[m, n]),
                            "channel_gain": float(cgain[k, m, n]),
                        })
            elif com_pw.any():
                weakest = cgain.min(axis=0)
                for m in range(links.n_symbols):
                    for n in range(links.n_common):
                        rows.append({
                            "scheme": preset, "snr_db": snr,
                            "subcarrier": m * links.n_common + n + 1,
                            "stream": "common",
                            "power": float(com_pw[m, n]),
                            "channel_gain": float(weakest[m, n]),
                        })
    return rows


def convergence_report(cfg: ExperimentConfig, trial: int = 0) -> list:
    """Sum-rate iteration traces on one realization, per scheme and SNR.

    Every trace starts from the deterministic initializer (no chaining)
    so the rows show full convergence behaviour; iteration 0 is the
    initial point.
    """
    ops_cache = {preset: build_operators(preset_waveform(preset, cfg.waveform))
                 for preset in cfg.resolved_schemes}
    mats = _trial_channels(cfg, 0, trial)
    dd = cfg.delta_d_grid[0]
    rows = []
    for preset in cfg.resolved_schemes:
        scheme, common_slot, _ = PRESETS[preset]
        links = effective_links(mats, ops_cache[preset])
        if scheme == "noma":
            links = _permute_users(links, noma_decode_order(links))
        for snr in cfg.snr_grid_db:
            try:
                res = alternating_optimization(
                    scheme, links, cfg.transmit_power(snr), sigma2=1.0,
                    r_min=cfg.r_min, tol=cfg.ao_tol,
                    max_iter=cfg.ao_max_iter, common_slot=common_slot,
                    kkt_tol=cfg.solver_kkt_tol)
            except InfeasibleProblem:
                continue
            for it, sr in enumerate(res.trace):
                rows.append({"scheme": preset, "snr_db": snr, "delta_d": dd,
                             "iteration": it, "sum_rate": sr})
    return rows


# --------------------------------------------------------------------------
# Writers: stable float formatting (repr of the Python float) and fixed row
# order make outputs byte-reproducible for identical configurations.

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and np.isnan(value):
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_sweep_csv(result: SweepResult, path) -> None:
    """One row per grid cell; ``common_power_frac`` is empty for schemes
    without a common stream."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for c in result.cells:
            frac = c.mean_common_frac
            writer.writerow([
                c.scheme, _fmt(c.snr_db), _fmt(c.delta_d), _fmt(c.mean_sr),
                _fmt(c.stderr_sr), _fmt(c.mean_jain),
                "" if np.isnan(frac) else _fmt(frac),
            ])


def write_subcarrier_csv(rows: list, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUBCARRIER_HEADER)
        for r in rows:
            writer.writerow([r["scheme"], _fmt(r["snr_db"]),
                             str(r["subcarrier"]), r["stream"],
                             _fmt(r["power"]), _fmt(r["channel_gain"])])


def write_convergence_csv(rows: list, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CONVERGENCE_HEADER)
        for r in rows:
            writer.writerow([r["scheme"], _fmt(r["snr_db"]),
                             _fmt(r["delta_d"]), str(r["iteration"]),
                             _fmt(r["sum_rate"])])


def write_json(payload, path) -> None:
    """Serialize a report or ``SweepResult`` to pretty-printed JSON."""
    if isinstance(payload, SweepResult):
        payload = payload.to_dict()

    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, (np.floating, float)):
            v = float(obj)
            return None if np.isnan(v) else v
        if isinstance(obj, np.integer):
            return int(obj)
        return obj

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clean(payload), fh, indent=2)
        fh.write("\n")
