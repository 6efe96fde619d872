"""Downlink precoding and fronthaul compression design for C-RANs.

Library layout:

channel      geometry, one-ring statistics, block-fading sampling
rates        achievable-rate / fronthaul / power formulas and their
             concave-convex surrogates
solver       small structured convex solver (log-barrier interior point)
cap          compression-after-precoding design (sample-average + MM)
cbp          compression-before-precoding design (clustering + sample-average)
evaluate     rank reduction and Monte Carlo ergodic-rate evaluation
experiments  sweep runner, result serialization
cli          sweep / validate / replay command line
"""

from .channel import (
    SystemConfig,
    NetworkGeometry,
    ChannelStatistics,
    ChannelRealization,
    FixedChannel,
    place_nodes,
    path_loss,
    one_ring_covariance,
    build_statistics,
    sample_channel,
    sample_channels,
)
from .rates import (
    PrecoderCovariance,
    CbpCovariance,
    QuantizationProfile,
    cap_user_rate,
    cap_fronthaul_rate,
    cbp_user_rate,
    cbp_precoder_fronthaul_rate,
    transmit_power,
)
from .cap import (
    SsumOptions,
    CapSolution,
    init_cap,
    optimize_cap_stochastic,
    optimize_cap_perfect,
)
from .cbp import (
    ClusterAssignment,
    CbpSolution,
    assign_clusters_instantaneous,
    assign_clusters_stochastic,
    optimize_cbp_stochastic,
    optimize_cbp_perfect,
)
from .evaluate import Precoder, ErgodicEstimate, rank_reduce, ergodic_sum_rate
from .experiments import (
    ExperimentSpec,
    ResultRow,
    db_to_linear,
    run_sweep,
    aggregate,
    emit_results,
    read_results,
    replay,
)

__all__ = [
    "SystemConfig",
    "NetworkGeometry",
    "ChannelStatistics",
    "ChannelRealization",
    "FixedChannel",
    "place_nodes",
    "path_loss",
    "one_ring_covariance",
    "build_statistics",
    "sample_channel",
    "sample_channels",
    "PrecoderCovariance",
    "CbpCovariance",
    "QuantizationProfile",
    "cap_user_rate",
    "cap_fronthaul_rate",
    "cbp_user_rate",
    "cbp_precoder_fronthaul_rate",
    "transmit_power",
    "SsumOptions",
    "CapSolution",
    "init_cap",
    "optimize_cap_stochastic",
    "optimize_cap_perfect",
    "ClusterAssignment",
    "CbpSolution",
    "assign_clusters_instantaneous",
    "assign_clusters_stochastic",
    "optimize_cbp_stochastic",
    "optimize_cbp_perfect",
    "Precoder",
    "ErgodicEstimate",
    "rank_reduce",
    "ergodic_sum_rate",
    "ExperimentSpec",
    "ResultRow",
    "db_to_linear",
    "run_sweep",
    "aggregate",
    "emit_results",
    "read_results",
    "replay",
]

__version__ = "0.1.0"
