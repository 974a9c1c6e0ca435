"""Link-level simulation and precoder optimization for OFDMA, OFDM-NOMA
and OFDM-RSMA over doubly-selective (delay- and Doppler-spread) channels.

The package splits into five layers: ``waveform`` (DFT / cyclic-prefix
operator algebra for mixed-numerology frames), ``channel`` (multipath
time-domain matrices and their frequency responses), ``schemes``
(per-scheme power chains, achievable rates and initializers), ``qcqp``
(a self-contained log-barrier solver for the convex precoder
subproblems) plus ``wmmse`` (the rate-WMMSE alternating optimizer), and
``harness`` (Monte-Carlo sweeps, reports and file output) with its
command-line front end in ``cli``.
"""

from .waveform import (WaveformConfig, OperatorSet, build_operators,
                       dft_matrix, cp_add_matrix, cp_remove_matrix)
from .channel import (Path, ChannelEnsembleConfig, ChannelRealization,
                      sample_paths, delay_to_samples, time_domain_channel,
                      cfr, diag_cfr, normalized_doppler)
from .schemes import (EffectiveLinks, PrecoderState, RateReport,
                      effective_links, noma_decode_order, noma_rates,
                      ofdma_rates, rsma_rates, mixed_noma_rates, waterfill,
                      initialize, jain_fairness)
from .qcqp import (QuadForm, QcqpProblem, QcqpSolution, SubproblemLayout,
                   InfeasibleProblem, solve, dump_problem, load_problem,
                   assemble_noma_subproblem, assemble_rsma_subproblem,
                   assemble_mixed_noma_subproblem)
from .wmmse import (EqualizerWeightState, PrecoderStepParams, AoResult,
                    mmse_equalizers, mmse_weights, update_weights, awmse,
                    precoder_step_params, alternating_optimization)
from .harness import (ExperimentConfig, SweepResult, CellResult, PRESETS,
                      DEFAULT_WAVEFORM, load_config, run_sweep,
                      power_ratio_report, fairness_report,
                      subcarrier_power_report, convergence_report,
                      write_sweep_csv, write_subcarrier_csv,
                      write_convergence_csv, write_json)

__version__ = "0.1.0"
