"""Compress-after-precoding design.

Joint optimization of the per-MS transmit covariances V_j (full N_t x N_t,
all RUs jointly) and the per-RU quantization noise variances sigma_i^2 under
per-RU fronthaul and power budgets.

Two CSI regimes share the same subproblem assembly:

* stochastic CSI: sample-average optimization that accumulates one concave
  rate surrogate per channel draw, each anchored at the iterate that was
  current when the draw arrived, and re-linearizes the convex fronthaul
  upper bounds inside a short inner loop;
* perfect CSI: majorize-minimize on a single realization, re-anchoring
  everything at the current iterate each step.

Every iterate of either loop is feasible for the true constraints because
the fronthaul surrogate upper-bounds the true fronthaul rate everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization, ChannelStatistics, FixedChannel, SystemConfig
from .rates import (
    SIGMA2_FLOOR,
    ExpansionPoint,
    PrecoderCovariance,
    QuantizationProfile,
    _received_cov,
    _tx_slices,
    cap_fronthaul_rate,
    cap_user_rate,
    logdet_taylor,
    transmit_power,
)
from .solver import (
    Constraint,
    ConvexProgram,
    LinExpr,
    LogDetAtom,
    Objective,
    SolverOptions,
    solve,
)


@dataclass(frozen=True)
class SsumOptions:
    """Loop controls shared by both CSI paths.

    outer_iterations  channel draws for the stochastic path
    inner_tolerance   relative objective change that stops an inner loop
    inner_max         hard cap on inner (or MM) iterations
    seed              generator seed for the channel draws
    """

    outer_iterations: int = 100
    inner_tolerance: float = 1e-4
    inner_max: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.outer_iterations < 1 or self.inner_max < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.inner_tolerance <= 0:
            raise ValueError("inner_tolerance must be positive")


@dataclass(frozen=True)
class TraceRecord:
    """One accepted iterate: objective value plus true constraint slacks."""

    outer: int
    inner: int
    surrogate_objective: float
    fronthaul_slack: np.ndarray   # cbar_i - C_i at the iterate
    power_slack: np.ndarray       # pbar_i - P_i at the iterate
    true_objective: float = None  # perfect-CSI path only


@dataclass(frozen=True)
class CapSolution:
    covariances: PrecoderCovariance
    quantization: QuantizationProfile
    surrogate_objective_trace: list
    sample_count: int
    trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def init_cap(config: SystemConfig, stats=None):
    """Isotropic start: V0_j = diag of per-RU levels beta_i, sigma2 by
    bisection so RU i spends 0.9*pbar_i of power and 0.9*cbar_i of fronthaul.

    The statistics argument is unused (reserved for statistics-aware starts).
    Returns (PrecoderCovariance, QuantizationProfile).
    """
    n_ms = config.n_ms
    floor = SIGMA2_FLOOR
    beta = np.empty(config.n_ru)
    sigma2 = np.empty(config.n_ru)
    for i in range(config.n_ru):
        nt = config.tx_counts[i]
        level = 0.9 * config.power[i] / nt  # n_ms*beta_i + sigma_i^2
        target = 0.9 * config.fronthaul[i]
        if 0.9 * config.power[i] <= nt * floor * 1.01:
            raise ValueError(
                f"power budget of RU {i} cannot cover the quantization floor")
        for _ in range(200):
            s = _init_sigma(nt, level, target, floor)
            b = max((level - s) / n_ms, 0.0)
            cap_ok = nt * (np.log2(n_ms * b + s) - np.log2(s)) <= 0.9 * config.fronthaul[i] + 1e-8
            pow_ok = nt * (n_ms * b + s) <= config.power[i] + 1e-9
            if cap_ok and pow_ok:
                beta[i], sigma2[i] = b, s
                break
            level *= 0.5  # shrink the start until it fits
            if level <= floor:
                raise ValueError(f"no feasible start for RU {i}")
        else:
            raise ValueError(f"no feasible start for RU {i}")

    diag = np.zeros(config.n_tx)
    offs = config.tx_offsets
    for i in range(config.n_ru):
        diag[offs[i]:offs[i + 1]] = beta[i]
    v0 = np.diag(diag).astype(complex)
    covs = PrecoderCovariance(matrices=(v0,) * n_ms, tx_counts=config.tx_counts)
    quant = QuantizationProfile(variances=sigma2)
    for i in range(config.n_ru):
        if cap_fronthaul_rate(covs, quant, i) > config.fronthaul[i] + 1e-6 \
                or transmit_power(covs, quant, i) > config.power[i] + 1e-6:
            raise RuntimeError(f"initialization left RU {i} infeasible")
    return covs, quant


def _init_sigma(nt, level, target, floor):
    """Bisect sigma^2 in [floor, level) so that
    nt*log2(level/sigma^2) = target; clamp to the nearest end otherwise."""
    if target <= 0:
        return level  # fronthaul budget zero: all power is noise, C = 0
    lo, hi = floor, level * (1.0 - 1e-12)
    f = lambda s: nt * (np.log2(level) - np.log2(s)) - target
    if f(lo) <= 0:
        # even the floor cannot reach the target; any sigma2 is fine
        return floor * 1.01
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Subproblem assembly
# ---------------------------------------------------------------------------

def _hermitize(m):
    return 0.5 * (m + m.conj().T)


class _CapProgram:
    """Accumulates surrogate pieces and emits ConvexPrograms.

    Objective state grows by add_draw; constraints are rebuilt from the
    current anchor every inner iteration.
    """

    def __init__(self, config: SystemConfig):
        self.config = config
        n_t = config.n_tx
        self.psd_vars = tuple((f"v{j}", n_t) for j in range(config.n_ms))
        self.scalar_vars = tuple((f"s{i}", SIGMA2_FLOOR) for i in range(config.n_ru))
        self.slices = _tx_slices(config.tx_counts)
        self.atoms = []
        self.lin_psd = np.zeros((config.n_ms, n_t, n_t), dtype=complex)
        self.lin_scalar = np.zeros(config.n_ru)
        self.lin_const = 0.0
        self.draws = 0
        self.power_cons = tuple(self._power_constraint(i) for i in range(config.n_ru))

    def _power_constraint(self, i):
        n_t = self.config.n_tx
        e = np.zeros((n_t, n_t))
        sl = self.slices[i]
        e[sl, sl] = np.eye(self.config.tx_counts[i])
        return Constraint(
            lin=LinExpr(psd={f"v{k}": e for k in range(self.config.n_ms)},
                        scalar={f"s{i}": float(self.config.tx_counts[i])}),
            bound=float(self.config.power[i]), name=f"power{i}")

    def add_draw(self, h: ChannelRealization, covs: PrecoderCovariance,
                 quant: QuantizationProfile):
        """Append the concave rate surrogates of one draw, anchored at the
        current iterate (covs, quant)."""
        cfg = self.config
        self.draws += 1
        for j in range(cfg.n_ms):
            w = cfg.weights[j]
            if w == 0.0:
                continue
            rows = h.ms_rows(j)
            nr = rows.shape[0]
            scalar_terms = tuple(
                (f"s{i}", _hermitize(h.block(j, i) @ h.block(j, i).conj().T))
                for i in range(cfg.n_ru))
            self.atoms.append(LogDetAtom(
                weight=w, base=np.eye(nr, dtype=complex),
                psd_terms=tuple((f"v{k}", rows) for k in range(cfg.n_ms)),
                scalar_terms=scalar_terms))
            a = _received_cov(h, covs.total_excluding(j), quant, j)
            const, coef = logdet_taylor(a)
            g = _hermitize(rows.conj().T @ coef @ rows)
            self.lin_const -= w * (const + float(np.real(np.trace(coef))))
            for k in range(cfg.n_ms):
                if k != j:
                    self.lin_psd[k] -= w * g
            for i, sl in enumerate(self.slices):
                self.lin_scalar[i] -= w * float(np.real(np.trace(g[sl, sl])))

    def fronthaul_constraints(self, covs: PrecoderCovariance,
                              quant: QuantizationProfile):
        """Convex upper bounds on the fronthaul rates, tight at the anchor."""
        cfg = self.config
        total = covs.total()
        cons = []
        for i, sl in enumerate(self.slices):
            nt = cfg.tx_counts[i]
            a = _hermitize(total[sl, sl]) + float(quant.variances[i]) * np.eye(nt)
            const, coef = logdet_taylor(a)
            g = np.zeros((cfg.n_tx, cfg.n_tx), dtype=complex)
            g[sl, sl] = _hermitize(coef)
            cons.append(Constraint(
                lin=LinExpr(const=const,
                            psd={f"v{k}": g for k in range(cfg.n_ms)},
                            scalar={f"s{i}": float(np.real(np.trace(coef)))}),
                neglog={f"s{i}": float(nt)},
                bound=float(cfg.fronthaul[i]), name=f"fronthaul{i}"))
        return cons

    def build(self, covs, quant) -> ConvexProgram:
        lin = LinExpr(const=self.lin_const,
                      psd={f"v{j}": self.lin_psd[j] for j in range(self.config.n_ms)
                           if np.any(self.lin_psd[j])},
                      scalar={f"s{i}": self.lin_scalar[i]
                              for i in range(self.config.n_ru)
                              if self.lin_scalar[i] != 0.0})
        return ConvexProgram(
            psd_vars=self.psd_vars,
            scalar_vars=self.scalar_vars,
            objective=Objective(lin=lin, logdets=tuple(self.atoms)),
            constraints=self.power_cons + tuple(self.fronthaul_constraints(covs, quant)),
        )

    def values_of(self, covs, quant):
        vals = {f"v{j}": covs.matrices[j] for j in range(self.config.n_ms)}
        vals.update({f"s{i}": float(quant.variances[i])
                     for i in range(self.config.n_ru)})
        return vals

    def unpack(self, values):
        covs = PrecoderCovariance(
            matrices=tuple(values[f"v{j}"] for j in range(self.config.n_ms)),
            tx_counts=self.config.tx_counts)
        quant = QuantizationProfile(variances=np.array(
            [values[f"s{i}"] for i in range(self.config.n_ru)]))
        return covs, quant


def _true_slacks(config, covs, quant):
    fh = np.array([config.fronthaul[i] - cap_fronthaul_rate(covs, quant, i)
                   for i in range(config.n_ru)])
    pw = np.array([config.power[i] - transmit_power(covs, quant, i)
                   for i in range(config.n_ru)])
    return fh, pw


def _solve_step(builder, covs, quant, context):
    # Cold starts are deliberate: the previous optimum hugs the cone
    # boundary (covariance eigenvalues near 1/t) and Newton recovers from
    # such points only multiplicatively, so warm starting occasionally
    # costs thousands of steps while a fresh solve stays near 80.  The
    # anchor point is kept as a strictly feasible fallback.
    prog = builder.build(covs, quant)
    sol = solve(prog, SolverOptions())
    if sol.status != "optimal":
        sol = solve(prog, SolverOptions(warm_start=builder.values_of(covs, quant)))
    if sol.status == "infeasible":
        raise RuntimeError(f"subproblem infeasible at {context}")
    if sol.status != "optimal" and sol.kkt_residual > 1e-4:
        raise RuntimeError(
            f"solver stalled at {context}: status {sol.status}, "
            f"residual {sol.kkt_residual:.2e}")
    new_covs, new_quant = builder.unpack(sol.values)
    return new_covs, new_quant, float(sol.objective)


# ---------------------------------------------------------------------------
# Zero-fronthaul pruning
# ---------------------------------------------------------------------------

def _dead_rus(config):
    return [i for i in range(config.n_ru) if config.fronthaul[i] <= 0.0]


def _reduced_config(config, keep):
    return SystemConfig(
        tx_counts=tuple(config.tx_counts[i] for i in keep),
        rx_counts=config.rx_counts, streams=config.streams,
        power=tuple(config.power[i] for i in keep),
        fronthaul=tuple(config.fronthaul[i] for i in keep),
        coherence=config.coherence, weights=config.weights,
        cell_size=config.cell_size, ref_distance=config.ref_distance,
        pathloss_exp=config.pathloss_exp, scatter_radius=config.scatter_radius)


def _kept_antennas(config, keep):
    offs = config.tx_offsets
    idx = [t for i in keep for t in range(offs[i], offs[i + 1])]
    return np.asarray(idx, dtype=int)


def _reduce_realization(h: ChannelRealization, config, keep):
    cols = _kept_antennas(config, keep)
    return ChannelRealization(matrix=h.matrix[:, cols],
                              tx_counts=tuple(config.tx_counts[i] for i in keep),
                              rx_counts=h.rx_counts)


def _reduce_sampler(stats, config, reduced_cfg, keep):
    if isinstance(stats, FixedChannel):
        return FixedChannel(config=reduced_cfg,
                            realization=_reduce_realization(stats.realization, config, keep))
    return ChannelStatistics(
        config=reduced_cfg,
        pathloss=stats.pathloss[:, keep], bearing=stats.bearing[:, keep],
        spread=stats.spread[:, keep],
        tx_corr=tuple(tuple(stats.tx_corr[j][i] for i in keep)
                      for j in range(config.n_ms)))


def _inflate_solution(sub: CapSolution, config, keep) -> CapSolution:
    cols = _kept_antennas(config, keep)
    n_t = config.n_tx
    mats = []
    for m in sub.covariances.matrices:
        full = np.zeros((n_t, n_t), dtype=complex)
        full[np.ix_(cols, cols)] = m
        mats.append(full)
    sig = np.full(config.n_ru, SIGMA2_FLOOR)
    for pos, i in enumerate(keep):
        sig[i] = sub.quantization.variances[pos]
    keep_set = set(keep)
    dead = [i for i in range(config.n_ru) if i not in keep_set]
    trace = []
    for r in sub.trace:
        fh = np.zeros(config.n_ru)
        pw = np.empty(config.n_ru)
        for pos, i in enumerate(keep):
            fh[i] = r.fronthaul_slack[pos]
            pw[i] = r.power_slack[pos]
        for i in dead:
            pw[i] = config.power[i] - config.tx_counts[i] * SIGMA2_FLOOR
        trace.append(TraceRecord(outer=r.outer, inner=r.inner,
                                 surrogate_objective=r.surrogate_objective,
                                 fronthaul_slack=fh, power_slack=pw,
                                 true_objective=r.true_objective))
    return CapSolution(
        covariances=PrecoderCovariance(matrices=tuple(mats), tx_counts=config.tx_counts),
        quantization=QuantizationProfile(variances=sig),
        surrogate_objective_trace=sub.surrogate_objective_trace,
        sample_count=sub.sample_count, trace=trace)


def _all_dead_solution(config, sample_count) -> CapSolution:
    zero = np.zeros((config.n_tx, config.n_tx), dtype=complex)
    rec = TraceRecord(
        outer=0, inner=0, surrogate_objective=0.0,
        fronthaul_slack=np.asarray(config.fronthaul, dtype=float),
        power_slack=np.array([config.power[i] - config.tx_counts[i] * SIGMA2_FLOOR
                              for i in range(config.n_ru)]),
        true_objective=0.0)
    return CapSolution(
        covariances=PrecoderCovariance(matrices=(zero,) * config.n_ms,
                                       tx_counts=config.tx_counts),
        quantization=QuantizationProfile(variances=np.full(config.n_ru, SIGMA2_FLOOR)),
        surrogate_objective_trace=[0.0], sample_count=sample_count, trace=[rec])


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

def optimize_cap_stochastic(config: SystemConfig, stats,
                            options: SsumOptions = None) -> CapSolution:
    """Sample-average design from channel statistics.

    Outer iteration n draws one realization and appends its rate surrogates,
    anchored at the current iterate; the inner loop re-linearizes only the
    fronthaul upper bounds and stops on relative objective change below
    inner_tolerance (two inner solves minimum). All accepted iterates are
    feasible for the true fronthaul and power constraints.
    """
    opts = options or SsumOptions()
    dead = _dead_rus(config)
    if dead:
        keep = [i for i in range(config.n_ru) if i not in set(dead)]
        if not keep:
            return _all_dead_solution(config, opts.outer_iterations)
        reduced = _reduced_config(config, keep)
        sub = optimize_cap_stochastic(
            reduced, _reduce_sampler(stats, config, reduced, keep), opts)
        return _inflate_solution(sub, config, keep)

    rng = np.random.default_rng(opts.seed)
    covs, quant = init_cap(config)
    builder = _CapProgram(config)
    trace = []
    for n in range(1, opts.outer_iterations + 1):
        h = stats.sample(rng)
        builder.add_draw(h, covs, quant)
        prev = None
        for k in range(opts.inner_max):
            new_covs, new_quant, obj = _solve_step(
                builder, covs, quant, f"outer {n} inner {k}")
            surr = obj / n
            if prev is not None and surr < prev - 1e-12:
                break  # numerical stall; keep the previous iterate
            covs, quant = new_covs, new_quant
            fh, pw = _true_slacks(config, covs, quant)
            trace.append(TraceRecord(outer=n, inner=k, surrogate_objective=surr,
                                     fronthaul_slack=fh, power_slack=pw))
            done = prev is not None and \
                abs(surr - prev) <= opts.inner_tolerance * max(1.0, abs(surr))
            prev = surr
            if k >= 1 and done:
                break
    return CapSolution(covariances=covs, quantization=quant,
                       surrogate_objective_trace=[r.surrogate_objective for r in trace],
                       sample_count=opts.outer_iterations, trace=trace)


def optimize_cap_perfect(config: SystemConfig, h: ChannelRealization,
                         options: SsumOptions = None) -> CapSolution:
    """Majorize-minimize on one coherence block.

    Re-anchors both the rate surrogates and the fronthaul bounds at the
    current iterate every step, so the true weighted sum-rate is
    nondecreasing; stops on relative true-objective change below
    inner_tolerance or after inner_max steps.
    """
    opts = options or SsumOptions()
    dead = _dead_rus(config)
    if dead:
        keep = [i for i in range(config.n_ru) if i not in set(dead)]
        if not keep:
            return _all_dead_solution(config, 1)
        reduced = _reduced_config(config, keep)
        sub = optimize_cap_perfect(reduced, _reduce_realization(h, config, keep), opts)
        return _inflate_solution(sub, config, keep)

    covs, quant = init_cap(config)

    def true_objective(c, q):
        return sum(config.weights[j] * cap_user_rate(h, c, q, j)
                   for j in range(config.n_ms))

    trace = []
    if not np.any(h.matrix):
        # a vanished channel supports no rate at all; keep the start
        fh, pw = _true_slacks(config, covs, quant)
        trace.append(TraceRecord(outer=1, inner=0, surrogate_objective=0.0,
                                 fronthaul_slack=fh, power_slack=pw,
                                 true_objective=0.0))
        return CapSolution(covariances=covs, quantization=quant,
                           surrogate_objective_trace=[0.0], sample_count=1,
                           trace=trace)

    prev_true = true_objective(covs, quant)
    for k in range(opts.inner_max):
        builder = _CapProgram(config)
        builder.add_draw(h, covs, quant)
        new_covs, new_quant, obj = _solve_step(builder, covs, quant, f"mm step {k}")
        new_true = true_objective(new_covs, new_quant)
        if new_true < prev_true - 1e-9:
            break  # accept-only-if-nondecreasing safeguard
        covs, quant = new_covs, new_quant
        fh, pw = _true_slacks(config, covs, quant)
        trace.append(TraceRecord(outer=1, inner=k, surrogate_objective=obj,
                                 fronthaul_slack=fh, power_slack=pw,
                                 true_objective=new_true))
        done = abs(new_true - prev_true) <= opts.inner_tolerance * max(1.0, abs(new_true))
        prev_true = new_true
        if k >= 1 and done:
            break
    return CapSolution(covariances=covs, quantization=quant,
                       surrogate_objective_trace=[r.surrogate_objective for r in trace],
                       sample_count=1, trace=trace)
