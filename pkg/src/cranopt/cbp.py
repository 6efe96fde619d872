"""Compress-before-precoding design.

The CU compresses each MS's precoder columns and forwards them to the RUs
in that MS's serving cluster, so the transmit covariances live on reduced
cluster dimensions and the fronthaul carries a per-block precoder
description instead of precoded samples.

Two CSI regimes share one subproblem builder:

* stochastic CSI: the description cost amortizes to zero over long fading
  blocks, so the quantization noise is dropped, each MS keeps an explicit
  rate variable R_j, and the per-RU budget couples them through
  sum_{j in M_i} R_j <= cbar_i.  One convex solve per channel draw; every
  draw's rate surrogate stays anchored at the iterate that was current
  when the draw arrived.
* perfect CSI: majorize-minimize over (V~, sigma_w^2, R) on one fading
  block of T channel uses, with the compression cost (1/T) C_i sharing
  the budget with the served rates.

RUs with zero fronthaul cannot receive any precoder description, so they
are removed from every serving cluster up front; an MS whose cluster
becomes empty, or whose in-cluster channel vanishes, is carried at rate
zero and transmits nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cap import SsumOptions, TraceRecord, _hermitize, _init_sigma
from .channel import ChannelRealization, SystemConfig
from .rates import (
    SIGMA2_FLOOR,
    CbpCovariance,
    QuantizationProfile,
    _received_cov,
    _tx_slices,
    build_embedding,
    cbp_precoder_fronthaul_rate,
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


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterAssignment:
    """Which MSs each RU serves (served[i]) and which RUs ship each MS's
    precoder (serving[j]); the two views must agree.

    Every RU serves exactly min(cluster_size, n_ms) MSs.  An MS may end up
    in nobody's list; such MSs appear in `unserved` and any optimizer run
    with this assignment carries them at rate zero.
    """

    served: tuple   # per RU: ascending tuple of MS indices
    serving: tuple  # per MS: ascending tuple of RU indices
    cluster_size: int

    def __post_init__(self):
        served = tuple(tuple(sorted(int(j) for j in m)) for m in self.served)
        serving = tuple(tuple(sorted(int(i) for i in b)) for b in self.serving)
        object.__setattr__(self, "served", served)
        object.__setattr__(self, "serving", serving)
        object.__setattr__(self, "cluster_size", int(self.cluster_size))
        n_ru, n_ms = len(served), len(serving)
        if self.cluster_size < 1:
            raise ValueError("cluster_size must be >= 1")
        want = min(self.cluster_size, n_ms)
        for i, m in enumerate(served):
            if len(m) != want or len(set(m)) != len(m):
                raise ValueError(f"RU {i} must serve exactly {want} distinct MSs")
            if m and (m[0] < 0 or m[-1] >= n_ms):
                raise ValueError("MS index out of range")
        pairs = {(i, j) for i, m in enumerate(served) for j in m}
        dual = {(i, j) for j, b in enumerate(serving) for i in b}
        if pairs != dual:
            raise ValueError("served and serving views disagree")

    @property
    def n_ru(self):
        return len(self.served)

    @property
    def n_ms(self):
        return len(self.serving)

    @property
    def unserved(self) -> tuple:
        return tuple(j for j, b in enumerate(self.serving) if not b)

    def embedding(self, tx_counts, ms) -> np.ndarray:
        return build_embedding(tx_counts, self.serving[ms])


def _clusters_from_scores(scores, cluster_size) -> ClusterAssignment:
    """Each RU picks its cluster_size best MSs by score; ties break toward
    the lower MS index."""
    scores = np.asarray(scores, dtype=float)
    n_ms, n_ru = scores.shape
    if cluster_size < 1:
        raise ValueError("cluster_size must be >= 1")
    take = min(int(cluster_size), n_ms)
    served = []
    for i in range(n_ru):
        order = np.argsort(-scores[:, i], kind="stable")
        served.append(tuple(sorted(int(j) for j in order[:take])))
    serving = [[] for _ in range(n_ms)]
    for i, m in enumerate(served):
        for j in m:
            serving[j].append(i)
    return ClusterAssignment(served=tuple(served),
                             serving=tuple(tuple(b) for b in serving),
                             cluster_size=int(cluster_size))


def assign_clusters_instantaneous(h: ChannelRealization, cluster_size) -> ClusterAssignment:
    """Cluster by the realized per-link channel energy ||H_ji||_F."""
    scores = np.zeros((h.n_ms, h.n_ru))
    for j in range(h.n_ms):
        for i in range(h.n_ru):
            scores[j, i] = np.linalg.norm(h.block(j, i))
    return _clusters_from_scores(scores, cluster_size)


def assign_clusters_stochastic(stats, cluster_size) -> ClusterAssignment:
    """Cluster by the average link energy E||H_ji||_F^2, which the one-ring
    model gives in closed form; fixed across all fading blocks."""
    return _clusters_from_scores(stats.channel_gain_statistic(), cluster_size)


# ---------------------------------------------------------------------------
# Solutions and initialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CbpSolution:
    covariances: CbpCovariance
    rates: np.ndarray                  # delivered rate variable per MS
    quantization: QuantizationProfile  # precoder quantization; zero profile
    surrogate_objective_trace: list    # for the stochastic path
    sample_count: int
    trace: list = field(default_factory=list)


def _live_serving(config: SystemConfig, clusters: ClusterAssignment) -> tuple:
    """Serving clusters with zero-fronthaul RUs removed."""
    if clusters.n_ru != config.n_ru or clusters.n_ms != config.n_ms:
        raise ValueError("cluster assignment does not match the configuration")
    dead = {i for i in range(config.n_ru) if config.fronthaul[i] <= 0.0}
    return tuple(tuple(i for i in b if i not in dead) for b in clusters.serving)


def _members(serving, n_ru):
    """served-MS lists M_i recovered from the (possibly edited) serving view."""
    out = [[] for _ in range(n_ru)]
    for j, b in enumerate(serving):
        for i in b:
            out[i].append(j)
    return tuple(tuple(m) for m in out)


def _init_cbp(config: SystemConfig, serving, coherence=None):
    """Isotropic start on the clusters.

    RU i splits 0.9*pbar_i evenly over the MSs it serves; on the perfect
    path a quantization variance is bisected so the description cost
    (1/T) C_i starts at 10% of cbar_i with all rates at zero.
    Returns (CbpCovariance, QuantizationProfile or None).
    """
    members = _members(serving, config.n_ru)
    floor = SIGMA2_FLOOR
    beta = np.zeros(config.n_ru)
    sigma2 = np.full(config.n_ru, floor)
    for i in range(config.n_ru):
        m = len(members[i])
        if m == 0:
            continue
        nt = config.tx_counts[i]
        if coherence is None:
            beta[i] = 0.9 * config.power[i] / (nt * m)
            continue
        if 0.9 * config.power[i] <= nt * floor * 1.01:
            raise ValueError(
                f"power budget of RU {i} cannot cover the quantization floor")
        level = 0.9 * config.power[i] / nt  # m*beta_i + sigma_w,i^2
        target = 0.1 * config.fronthaul[i] * float(coherence)
        for _ in range(200):
            s = _init_sigma(nt, level, target, floor)
            b = max((level - s) / m, 0.0)
            cap_ok = nt * (np.log2(m * b + s) - np.log2(s)) \
                <= config.fronthaul[i] * float(coherence) + 1e-8
            if cap_ok and nt * (m * b + s) <= config.power[i] + 1e-9:
                beta[i], sigma2[i] = b, s
                break
            level *= 0.5
            if level <= floor:
                raise ValueError(f"no feasible start for RU {i}")
        else:
            raise ValueError(f"no feasible start for RU {i}")

    mats = []
    for j in range(config.n_ms):
        diag = np.concatenate([np.full(config.tx_counts[i], beta[i])
                               for i in serving[j]]) if serving[j] else np.zeros(0)
        mats.append(np.diag(diag).astype(complex))
    covs = CbpCovariance(matrices=tuple(mats), serving=serving,
                         tx_counts=config.tx_counts)
    if coherence is None:
        return covs, None
    quant = QuantizationProfile(variances=sigma2)
    for i in range(config.n_ru):
        if cbp_precoder_fronthaul_rate(covs, quant, i, coherence) > config.fronthaul[i] + 1e-6 \
                or transmit_power(covs.as_cap(), quant, i) > config.power[i] + 1e-6:
            raise RuntimeError(f"initialization left RU {i} infeasible")
    return covs, quant


def _zero_solution(config: SystemConfig, serving, sample_count) -> CbpSolution:
    mats = tuple(np.zeros((sum(config.tx_counts[i] for i in b),) * 2, dtype=complex)
                 for b in serving)
    rec = TraceRecord(
        outer=0, inner=0, surrogate_objective=0.0,
        fronthaul_slack=np.asarray(config.fronthaul, dtype=float),
        power_slack=np.asarray(config.power, dtype=float),
        true_objective=0.0)
    return CbpSolution(
        covariances=CbpCovariance(matrices=mats, serving=serving,
                                  tx_counts=config.tx_counts),
        rates=np.zeros(config.n_ms),
        quantization=QuantizationProfile.zero(config.n_ru),
        surrogate_objective_trace=[0.0], sample_count=sample_count, trace=[rec])


# ---------------------------------------------------------------------------
# Subproblem assembly
# ---------------------------------------------------------------------------

class _CbpProgram:
    """Accumulates per-draw rate surrogates on the cluster variables and
    emits ConvexPrograms.

    Stochastic mode (coherence None): no quantization scalars; the rate
    epigraph of MS j averages all stored surrogates with weight 1/n and the
    fronthaul budgets are linear in the rate variables.  Perfect mode adds
    sigma_w,i scalars and the (1/T)-scaled compression surrogate joins the
    rate sum inside each fronthaul constraint.
    """

    def __init__(self, config: SystemConfig, serving, coherence=None):
        self.config = config
        self.serving = serving
        self.coherence = None if coherence is None else float(coherence)
        self.served_mss = tuple(j for j in range(config.n_ms) if serving[j])
        self.live_rus = sorted({i for b in serving for i in b})
        self.slices = _tx_slices(config.tx_counts)
        self.emb = {j: build_embedding(config.tx_counts, serving[j])
                    for j in self.served_mss}
        self.dims = {j: self.emb[j].shape[1] for j in self.served_mss}
        # position of RU i's antennas inside MS j's cluster coordinates
        self.cluster_slices = {}
        for j in self.served_mss:
            off = 0
            for i in serving[j]:
                nt = config.tx_counts[i]
                self.cluster_slices[j, i] = slice(off, off + nt)
                off += nt
        self.psd_vars = tuple((f"v{j}", self.dims[j]) for j in self.served_mss)
        self.scalar_vars = () if coherence is None else \
            tuple((f"w{i}", SIGMA2_FLOOR) for i in self.live_rus)
        self.members = _members(serving, config.n_ru)
        self.has_signal = {j: False for j in self.served_mss}
        self.draws = 0
        # per served MS: running sums of the linearized interference pieces
        # and one concave atom per draw
        self.atoms = {j: [] for j in self.served_mss}
        self.lin_psd = {j: {k: np.zeros((self.dims[k],) * 2, dtype=complex)
                            for k in self.served_mss if k != j}
                        for j in self.served_mss}
        self.lin_scalar = {j: dict.fromkeys(self.live_rus, 0.0)
                           for j in self.served_mss}
        self.lin_const = dict.fromkeys(self.served_mss, 0.0)
        self.power_cons = tuple(self._power_constraint(i) for i in self.live_rus)

    def _power_constraint(self, i):
        psd = {}
        for j in self.served_mss:
            if i in self.serving[j]:
                e = np.zeros((self.dims[j],) * 2)
                sl = self.cluster_slices[j, i]
                e[sl, sl] = np.eye(self.config.tx_counts[i])
                psd[f"v{j}"] = e
        scalar = {} if self.coherence is None else \
            {f"w{i}": float(self.config.tx_counts[i])}
        return Constraint(lin=LinExpr(psd=psd, scalar=scalar),
                          bound=float(self.config.power[i]), name=f"power{i}")

    def add_draw(self, h: ChannelRealization, covs: CbpCovariance,
                 quant: QuantizationProfile = None):
        """Append one draw's concave rate surrogates, anchored at covs (and
        quant on the perfect path)."""
        cfg = self.config
        self.draws += 1
        total = covs.as_cap()
        for j in self.served_mss:
            rows = h.ms_rows(j)
            nr = rows.shape[0]
            cluster_rows = {k: rows @ self.emb[k] for k in self.served_mss}
            if np.any(cluster_rows[j]):
                self.has_signal[j] = True
            scalar_terms = ()
            if self.coherence is not None:
                scalar_terms = tuple(
                    (f"w{i}", _hermitize(h.block(j, i) @ h.block(j, i).conj().T))
                    for i in self.live_rus)
            self.atoms[j].append(LogDetAtom(
                weight=1.0, base=np.eye(nr, dtype=complex),
                psd_terms=tuple((f"v{k}", cluster_rows[k]) for k in self.served_mss),
                scalar_terms=scalar_terms))
            a = _received_cov(h, total.total_excluding(j), quant, j)
            const, coef = logdet_taylor(a)
            self.lin_const[j] += const + float(np.real(np.trace(coef)))
            for k in self.served_mss:
                if k != j:
                    self.lin_psd[j][k] += _hermitize(
                        cluster_rows[k].conj().T @ coef @ cluster_rows[k])
            if self.coherence is not None:
                for i in self.live_rus:
                    blk = h.block(j, i)
                    self.lin_scalar[j][i] += float(np.real(
                        np.trace(coef @ blk @ blk.conj().T)))

    def _rate_constraints(self):
        """R_j <= average of the stored surrogates, one constraint per MS
        whose in-cluster channel has shown any energy."""
        w = 1.0 / self.draws
        cons = []
        for j in self.served_mss:
            if not self.has_signal[j]:
                continue
            atoms = tuple(LogDetAtom(weight=w, base=a.base, psd_terms=a.psd_terms,
                                     scalar_terms=a.scalar_terms)
                          for a in self.atoms[j])
            psd = {f"v{k}": w * g for k, g in self.lin_psd[j].items() if np.any(g)}
            scalar = {f"w{i}": w * c for i, c in self.lin_scalar[j].items() if c != 0.0} \
                if self.coherence is not None else {}
            cons.append(Constraint(
                lin=LinExpr(psd=psd, scalar=scalar, rate={f"r{j}": 1.0}),
                logdets=atoms, bound=-w * self.lin_const[j], name=f"rate{j}"))
        return cons

    def _fronthaul_constraints(self, covs, quant):
        """Per-RU budget constraints.

        Stochastic: sum of served rate variables only.  Perfect: adds the
        (1/T)-scaled convex upper bound on the precoder description cost,
        tight at the anchor (covs, quant).
        """
        cfg = self.config
        cons = []
        if self.coherence is None:
            for i in self.live_rus:
                rate = {f"r{j}": 1.0 for j in self.members[i] if self.has_signal[j]}
                if not rate:
                    continue
                cons.append(Constraint(lin=LinExpr(rate=rate),
                                       bound=float(cfg.fronthaul[i]),
                                       name=f"fronthaul{i}"))
            return cons
        inv_t = 1.0 / self.coherence
        total = covs.as_cap().total()
        for i in self.live_rus:
            sl = self.slices[i]
            nt = cfg.tx_counts[i]
            a = _hermitize(total[sl, sl]) + float(quant.variances[i]) * np.eye(nt)
            const, coef = logdet_taylor(a)
            psd = {}
            for j in self.members[i]:
                g = np.zeros((self.dims[j],) * 2, dtype=complex)
                csl = self.cluster_slices[j, i]
                g[csl, csl] = _hermitize(coef)
                psd[f"v{j}"] = inv_t * g
            rate = {f"r{j}": 1.0 for j in self.members[i] if self.has_signal[j]}
            cons.append(Constraint(
                lin=LinExpr(const=inv_t * const, psd=psd, rate=rate,
                            scalar={f"w{i}": inv_t * float(np.real(np.trace(coef)))}),
                neglog={f"w{i}": inv_t * float(nt)},
                bound=float(cfg.fronthaul[i]), name=f"fronthaul{i}"))
        return cons

    def build(self, covs, quant=None) -> ConvexProgram:
        rate_vars = tuple(f"r{j}" for j in self.served_mss if self.has_signal[j])
        obj = LinExpr(rate={f"r{j}": float(self.config.weights[j])
                            for j in self.served_mss if self.has_signal[j]})
        return ConvexProgram(
            psd_vars=self.psd_vars, scalar_vars=self.scalar_vars,
            rate_vars=rate_vars,
            objective=Objective(lin=obj),
            constraints=self.power_cons
            + tuple(self._fronthaul_constraints(covs, quant))
            + tuple(self._rate_constraints()),
        )

    def values_of(self, covs, quant=None):
        vals = {f"v{j}": covs.matrices[j] for j in self.served_mss}
        if self.coherence is not None:
            vals.update({f"w{i}": float(quant.variances[i]) for i in self.live_rus})
        # tiny rates keep the anchor usable as a fallback start; if even
        # these are infeasible the solver falls back to phase one
        vals.update({f"r{j}": 1e-6 for j in self.served_mss if self.has_signal[j]})
        return vals

    def unpack(self, values):
        mats = tuple(values[f"v{j}"] if self.serving[j]
                     else np.zeros((0, 0), dtype=complex)
                     for j in range(self.config.n_ms))
        covs = CbpCovariance(matrices=mats, serving=self.serving,
                             tx_counts=self.config.tx_counts)
        sigma = np.full(self.config.n_ru, SIGMA2_FLOOR)
        if self.coherence is not None:
            for i in self.live_rus:
                sigma[i] = values[f"w{i}"]
        quant = QuantizationProfile(variances=sigma) if self.coherence is not None \
            else None
        rates = np.zeros(self.config.n_ms)
        for j in self.served_mss:
            if self.has_signal[j]:
                rates[j] = values[f"r{j}"]
        return covs, quant, rates


def _solve_cbp_step(builder, covs, quant, context):
    # cold start first, anchor point as the strictly feasible fallback;
    # see the corresponding note in the CAP module
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
    new_covs, new_quant, rates = builder.unpack(sol.values)
    return new_covs, new_quant, rates, float(sol.objective)


def _true_slacks_cbp(config, serving, covs, quant, rates, coherence=None):
    """Slacks of the true per-RU budget constraints at an iterate."""
    members = _members(serving, config.n_ru)
    zero = QuantizationProfile.zero(config.n_ru)
    fh = np.empty(config.n_ru)
    pw = np.empty(config.n_ru)
    for i in range(config.n_ru):
        used = sum(rates[j] for j in members[i])
        if coherence is not None and members[i]:
            used += cbp_precoder_fronthaul_rate(covs, quant, i, coherence)
        fh[i] = config.fronthaul[i] - used
        pw[i] = config.power[i] - transmit_power(
            covs.as_cap(), quant if quant is not None else zero, i)
    return fh, pw


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

def optimize_cbp_stochastic(config: SystemConfig, stats,
                            clusters: ClusterAssignment,
                            options: SsumOptions = None) -> CbpSolution:
    """Sample-average design on fixed serving clusters.

    Outer iteration n draws one realization, appends its rate surrogates
    anchored at the current covariances, and solves one convex program in
    (V~, R) with the description cost amortized away (sigma_w = 0).  Every
    iterate satisfies the true budget constraints because the fronthaul
    coupling is linear in the rate variables.
    """
    opts = options or SsumOptions()
    serving = _live_serving(config, clusters)
    if not any(serving):
        return _zero_solution(config, serving, opts.outer_iterations)

    rng = np.random.default_rng(opts.seed)
    covs, _ = _init_cbp(config, serving)
    rates = np.zeros(config.n_ms)
    builder = _CbpProgram(config, serving)
    trace = []
    for n in range(1, opts.outer_iterations + 1):
        h = stats.sample(rng)
        builder.add_draw(h, covs)
        if not any(builder.has_signal.values()):
            continue  # no usable channel energy yet; keep accumulating
        covs, _, rates, obj = _solve_cbp_step(builder, covs, None, f"outer {n}")
        fh, pw = _true_slacks_cbp(config, serving, covs, None, rates)
        trace.append(TraceRecord(outer=n, inner=0, surrogate_objective=obj,
                                 fronthaul_slack=fh, power_slack=pw))
    if not trace:
        return _zero_solution(config, serving, opts.outer_iterations)
    return CbpSolution(
        covariances=covs, rates=rates,
        quantization=QuantizationProfile.zero(config.n_ru),
        surrogate_objective_trace=[r.surrogate_objective for r in trace],
        sample_count=opts.outer_iterations, trace=trace)


def optimize_cbp_perfect(config: SystemConfig, h: ChannelRealization,
                         clusters: ClusterAssignment, coherence=None,
                         options: SsumOptions = None) -> CbpSolution:
    """Majorize-minimize on one fading block of `coherence` channel uses
    (defaults to config.coherence).

    Joint variables (V~, sigma_w^2, R); every surrogate is re-anchored at
    the current iterate each step, the true weighted sum of the rate
    variables is nondecreasing, and each iterate satisfies the true budget
    constraints because the compression surrogate upper-bounds the true
    description cost.
    """
    opts = options or SsumOptions()
    coherence = config.coherence if coherence is None else int(coherence)
    if coherence < 1:
        raise ValueError("coherence must be >= 1")
    serving = _live_serving(config, clusters)
    if not any(serving) or not np.any(h.matrix):
        return _zero_solution(config, serving, 1)

    covs, quant = _init_cbp(config, serving, coherence)
    rates = np.zeros(config.n_ms)

    trace = []
    prev_true = 0.0
    for k in range(opts.inner_max):
        builder = _CbpProgram(config, serving, coherence)
        builder.add_draw(h, covs, quant)
        if not any(builder.has_signal.values()):
            break  # every served MS sees a dead in-cluster channel
        new_covs, new_quant, new_rates, obj = _solve_cbp_step(
            builder, covs, quant, f"mm step {k}")
        new_true = float(np.dot(config.weights, new_rates))
        if new_true < prev_true - 1e-9:
            break  # accept-only-if-nondecreasing safeguard
        covs, quant, rates = new_covs, new_quant, new_rates
        fh, pw = _true_slacks_cbp(config, serving, covs, quant, rates, coherence)
        trace.append(TraceRecord(outer=1, inner=k, surrogate_objective=obj,
                                 fronthaul_slack=fh, power_slack=pw,
                                 true_objective=new_true))
        done = abs(new_true - prev_true) <= opts.inner_tolerance * max(1.0, abs(new_true))
        prev_true = new_true
        if k >= 1 and done:
            break
    if not trace:
        sol = _zero_solution(config, serving, 1)
        return sol
    return CbpSolution(
        covariances=covs, rates=rates, quantization=quant,
        surrogate_objective_trace=[r.surrogate_objective for r in trace],
        sample_count=1, trace=trace)
