"""Rank reduction and Monte Carlo ergodic-rate evaluation.

The optimizers return covariances; transmission needs per-MS precoding
matrices.  rank_reduce keeps each covariance's top eigendirections (one
column per stream), then applies one common scale chosen so every RU's
power constraint still holds and at least one is tight.

ergodic_sum_rate estimates the average weighted sum-rate of a finished
design over fresh channel draws.  Each draw owns a spawned child of the
evaluation seed, so the estimate is independent of how draws are batched
or parallelized, and evaluation randomness never overlaps the optimizer's
draw stream (different seed, different spawn tree).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cap import SsumOptions, optimize_cap_perfect
from .cbp import assign_clusters_instantaneous, optimize_cbp_perfect
from .channel import SystemConfig
from .rates import (
    CbpCovariance,
    PrecoderCovariance,
    QuantizationProfile,
    cap_user_rate,
)


@dataclass(frozen=True)
class Precoder:
    """Per-MS precoding matrices W_j (N_t x M_j), already embedded for CBP
    so rows outside the serving cluster are exactly zero."""

    matrices: tuple
    gamma: float          # common power-filling scale applied to all W_j
    all_zero: bool = False

    def covariances(self, tx_counts) -> PrecoderCovariance:
        return PrecoderCovariance(
            matrices=tuple(w @ w.conj().T for w in self.matrices),
            tx_counts=tx_counts)


@dataclass(frozen=True)
class ErgodicEstimate:
    mean: float
    std_error: float
    samples: int
    per_ms: np.ndarray  # delivered per-MS rate means
    # weighted per-draw totals behind std_error; lets callers form paired
    # differences between two estimates that shared evaluation seeds
    per_draw: np.ndarray = None


def _phase_canonical(w, tol=1e-12):
    """Rotate each column so its first significant entry is real positive;
    ties in the eigensolver then cannot flip signs between runs."""
    w = np.array(w, dtype=complex)
    for c in range(w.shape[1]):
        col = w[:, c]
        big = np.abs(col) > tol * max(np.abs(col).max(), 1.0)
        if not big.any():
            continue
        lead = col[np.argmax(big)]
        w[:, c] = col * (np.conj(lead) / abs(lead))
    return w


def _top_columns(v, streams):
    """W with columns sqrt(lambda_k) u_k for the top `streams` eigenpairs."""
    dim = v.shape[0]
    take = min(int(streams), dim)
    if dim == 0 or take == 0:
        return np.zeros((dim, 0), dtype=complex)
    vals, vecs = np.linalg.eigh(0.5 * (v + v.conj().T))
    order = np.argsort(vals)[::-1][:take]
    cols = vecs[:, order] * np.sqrt(np.maximum(vals[order], 0.0))
    return _phase_canonical(cols)


def rank_reduce(covariances, quant: QuantizationProfile,
                config: SystemConfig) -> Precoder:
    """Extract precoders from CAP or CBP covariances.

    Per MS the top-M_j eigenpairs of V_j form W_j; then one common scale
    gamma = min over RUs of the factor that would make that RU's transmit
    power (including the quantization part, which gamma does not touch)
    exactly meet its budget.  All-zero covariances return the flagged zero
    precoder.
    """
    n_ms = config.n_ms
    reduced = isinstance(covariances, CbpCovariance)
    mats = []
    for j in range(n_ms):
        w = _top_columns(covariances.matrices[j], config.streams[j])
        if reduced:
            full = np.zeros((config.n_tx, w.shape[1]), dtype=complex)
            if w.size:
                full = covariances.embedding(j) @ w
            w = full
        mats.append(w)
    if not any(np.any(w) for w in mats):
        return Precoder(matrices=tuple(np.zeros_like(w) for w in mats),
                        gamma=0.0, all_zero=True)

    offs = config.tx_offsets
    gamma2 = np.inf
    for i in range(config.n_ru):
        sl = slice(offs[i], offs[i + 1])
        signal = sum(float(np.linalg.norm(w[sl, :]) ** 2) for w in mats)
        if signal <= 0.0:
            continue
        room = config.power[i] - config.tx_counts[i] * float(quant.variances[i])
        gamma2 = min(gamma2, max(room, 0.0) / signal)
    gamma = float(np.sqrt(gamma2))
    return Precoder(matrices=tuple(gamma * w for w in mats), gamma=gamma)


def _spawned_rngs(seed, samples):
    # one child per draw: batching or worker count cannot change the stream
    return [np.random.default_rng(c)
            for c in np.random.SeedSequence(seed).spawn(samples)]


def _estimate(per_draw, weights, per_ms_cap=None):
    """Combine per-draw per-MS rates into the headline estimate.

    per_ms_cap, when given, holds committed stream rates: an MS delivers
    min(committed, evaluated mean), and MSs pinned by their commitment
    contribute no sampling variance.
    """
    per_draw = np.asarray(per_draw, dtype=float)
    n = per_draw.shape[0]
    means = per_draw.mean(axis=0)
    if per_ms_cap is None:
        delivered = means
        live = np.ones(len(means), dtype=bool)
    else:
        delivered = np.minimum(np.asarray(per_ms_cap, dtype=float), means)
        live = means < per_ms_cap
    sums = per_draw[:, live] @ np.asarray(weights, dtype=float)[live]
    se = float(sums.std(ddof=1) / np.sqrt(n)) if n > 1 and live.any() else 0.0
    mean = float(np.dot(weights, delivered))
    return ErgodicEstimate(mean=mean, std_error=se, samples=n,
                           per_ms=delivered, per_draw=sums)


def ergodic_sum_rate(scheme, csi, artifact, stats, samples, seed,
                     options: SsumOptions = None,
                     cluster_size=None) -> ErgodicEstimate:
    """Monte Carlo weighted ergodic sum-rate of a finished design.

    scheme/csi select the evaluation protocol:

    * ("cap", "stochastic"):  artifact is a CapSolution; its rank-reduced
      precoder and quantization profile are held fixed over fresh draws.
    * ("cbp", "stochastic"):  artifact is a CbpSolution; fixed embedded
      precoder, sigma_w = 0, and per-MS delivered rate capped by the
      committed R_j*.
    * ("cap", "perfect"):     artifact unused; the per-block optimizer runs
      on every draw and its rank-reduced precoder is scored on that block.
    * ("cbp", "perfect"):     artifact unused; clusters are re-derived per
      block from the instantaneous norms (cluster_size required), the
      block design is rank-reduced, and the block's committed rates cap
      the delivered rates.

    Draw l uses the l-th spawned child of `seed`, so estimates reproduce
    bitwise for a given (seed, samples) regardless of batching.
    """
    if samples < 2:
        raise ValueError("need at least 2 evaluation samples")
    if scheme not in ("cap", "cbp") or csi not in ("perfect", "stochastic"):
        raise ValueError(f"unknown scheme/csi combination {scheme!r}/{csi!r}")
    config = stats.config
    opts = options or SsumOptions()
    rngs = _spawned_rngs(seed, samples)
    weights = np.asarray(config.weights, dtype=float)

    if csi == "stochastic":
        covs = artifact.covariances
        quant = artifact.quantization
        wcov = rank_reduce(covs, quant, config).covariances(config.tx_counts)
        per_draw = np.empty((samples, config.n_ms))
        for l, rng in enumerate(rngs):
            h = stats.sample(rng)
            per_draw[l] = [cap_user_rate(h, wcov, quant, j)
                           for j in range(config.n_ms)]
        if scheme == "cap":
            return _estimate(per_draw, weights)
        est = _estimate(per_draw, weights, per_ms_cap=artifact.rates)
        members = [[j for j in range(config.n_ms)
                    if i in covs.serving[j]] for i in range(config.n_ru)]
        for i in range(config.n_ru):
            used = sum(min(artifact.rates[j], est.per_ms[j]) for j in members[i])
            if used > config.fronthaul[i] + 1e-6:
                raise RuntimeError(f"delivered rates overflow fronthaul {i}")
        return est

    per_draw = np.empty((samples, config.n_ms))
    for l, rng in enumerate(rngs):
        h = stats.sample(rng)
        if scheme == "cap":
            sol = optimize_cap_perfect(config, h, opts)
            wcov = rank_reduce(sol.covariances, sol.quantization,
                               config).covariances(config.tx_counts)
            per_draw[l] = [cap_user_rate(h, wcov, sol.quantization, j)
                           for j in range(config.n_ms)]
        else:
            if cluster_size is None:
                raise ValueError("cbp/perfect evaluation needs cluster_size")
            cl = assign_clusters_instantaneous(h, cluster_size)
            sol = optimize_cbp_perfect(config, h, cl, options=opts)
            wcov = rank_reduce(sol.covariances, sol.quantization,
                               config).covariances(config.tx_counts)
            per_draw[l] = [min(sol.rates[j],
                               cap_user_rate(h, wcov, sol.quantization, j))
                           for j in range(config.n_ms)]
    return _estimate(per_draw, weights)
