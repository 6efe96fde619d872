"""Achievable rates, fronthaul rates, transmit powers, and their surrogates.

Two compression strategies are covered. Compression-after-precoding (CAP):
the central unit precodes across all RUs, then quantizes each RU's baseband
signal with variance sigma_x,i^2. Compression-before-precoding (CBP): each
MS's stream and a quantized precoder (variance sigma_w,i^2) are shipped to a
serving cluster of RUs, so covariances live on the stacked antennas of the
cluster and are embedded into the full transmit dimension.

All rates are in bits per channel use (log base 2). Achievable-rate and
fronthaul expressions are differences of log-dets that are not jointly
concave/convex; the *_surrogate functions give the standard tangent
replacements: rate surrogates are global lower bounds (concave in the live
variables), fronthaul surrogates are global upper bounds (convex), both
tight at the expansion point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization

LN2 = float(np.log(2.0))

# smallest admissible quantization variance in optimization contexts
SIGMA2_FLOOR = 1e-10


def logdet_pd(mat) -> float:
    """log2 det of a Hermitian positive definite matrix, via Cholesky."""
    mat = np.asarray(mat)
    if mat.shape[0] == 0:
        return 0.0
    try:
        chol = np.linalg.cholesky(0.5 * (mat + mat.conj().T))
    except np.linalg.LinAlgError as exc:
        raise ValueError("matrix must be positive definite") from exc
    return 2.0 * float(np.sum(np.log2(np.abs(np.diagonal(chol)))))


def linearize_logdet(a, b) -> float:
    """First-order expansion of log2 det at a, evaluated at b.

    Returns log2 det(a) + trace(a^-1 (b - a)) / ln 2. By concavity this is
    >= log2 det(b) for every Hermitian PSD b, with equality at b = a.
    a must be strictly positive definite.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("a and b must have matching shapes")
    if a.shape[0] == 0:
        return 0.0
    if np.linalg.eigvalsh(0.5 * (a + a.conj().T)).min() <= 1e-12:
        raise ValueError("expansion point must be strictly positive definite")
    const, coef = logdet_taylor(a)
    return const + float(np.real(np.trace(coef @ b)))


def logdet_taylor(a):
    """Coefficients (const, coef) with linearize_logdet(a, b) =
    const + Re trace(coef @ b); coef = a^-1 / ln 2."""
    a = np.asarray(a)
    m = a.shape[0]
    coef = np.linalg.inv(0.5 * (a + a.conj().T)) / LN2
    coef = 0.5 * (coef + coef.conj().T)
    const = logdet_pd(a) - m / LN2
    return const, coef


def tx_selector(tx_counts, i) -> np.ndarray:
    """0/1 matrix D_i (N_t x N_t,i) picking RU i's antennas; D_i^T D_i = I."""
    offs = np.concatenate(([0], np.cumsum(tx_counts)))
    n_t = int(offs[-1])
    d = np.zeros((n_t, int(tx_counts[i])))
    d[int(offs[i]):int(offs[i + 1]), :] = np.eye(int(tx_counts[i]))
    return d


def build_embedding(tx_counts, serving) -> np.ndarray:
    """0/1 embedding E (N_t x N_t,B) stacking the selectors of the serving
    RUs in ascending order; E^T E = I. Empty serving set gives N_t x 0."""
    serving = tuple(sorted(int(i) for i in serving))
    if len(set(serving)) != len(serving):
        raise ValueError("serving set has duplicates")
    offs = np.concatenate(([0], np.cumsum(tx_counts)))
    n_t = int(offs[-1])
    cols = sum(int(tx_counts[i]) for i in serving)
    e = np.zeros((n_t, cols))
    c = 0
    for i in serving:
        w = int(tx_counts[i])
        e[int(offs[i]):int(offs[i + 1]), c:c + w] = np.eye(w)
        c += w
    return e


def _tx_slices(tx_counts):
    offs = np.concatenate(([0], np.cumsum(tx_counts)))
    return [slice(int(offs[i]), int(offs[i + 1])) for i in range(len(tx_counts))]


@dataclass(frozen=True)
class QuantizationProfile:
    """Per-RU quantization noise variances with a common floor."""

    variances: np.ndarray
    floor: float = SIGMA2_FLOOR

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        object.__setattr__(self, "variances", v)
        if self.floor < 0:
            raise ValueError("floor must be nonnegative")
        if np.any(v < self.floor):
            raise ValueError("variances must not fall below the floor")

    @classmethod
    def zero(cls, n_ru):
        return cls(variances=np.zeros(n_ru), floor=0.0)


@dataclass(frozen=True)
class PrecoderCovariance:
    """CAP transmit covariances: one N_t x N_t Hermitian PSD block per MS."""

    matrices: tuple
    tx_counts: tuple

    def __post_init__(self):
        mats = tuple(np.asarray(v, dtype=complex) for v in self.matrices)
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "tx_counts", tuple(int(t) for t in self.tx_counts))
        n_t = sum(self.tx_counts)
        for v in mats:
            if v.shape != (n_t, n_t):
                raise ValueError("each covariance must be N_t x N_t")

    @property
    def n_ms(self):
        return len(self.matrices)

    def total(self) -> np.ndarray:
        """Sum over MSs of the transmit covariances."""
        return np.sum(self.matrices, axis=0)

    def total_excluding(self, ms) -> np.ndarray:
        if self.n_ms == 1:
            n_t = sum(self.tx_counts)
            return np.zeros((n_t, n_t), dtype=complex)
        return self.total() - self.matrices[ms]


@dataclass(frozen=True)
class CbpCovariance:
    """CBP covariances on each MS's serving cluster, plus the embedding data.

    matrices[j] is N_t,B_j x N_t,B_j (0 x 0 for an unserved MS); serving[j]
    is the ascending tuple of serving RU indices B_j.
    """

    matrices: tuple
    serving: tuple
    tx_counts: tuple

    def __post_init__(self):
        mats = tuple(np.asarray(v, dtype=complex) for v in self.matrices)
        serv = tuple(tuple(sorted(int(i) for i in b)) for b in self.serving)
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "serving", serv)
        object.__setattr__(self, "tx_counts", tuple(int(t) for t in self.tx_counts))
        if len(mats) != len(serv):
            raise ValueError("matrices and serving must align")
        for v, b in zip(mats, serv):
            dim = sum(self.tx_counts[i] for i in b)
            if v.shape != (dim, dim):
                raise ValueError("covariance dim must match the serving cluster")

    @property
    def n_ms(self):
        return len(self.matrices)

    def embedding(self, ms) -> np.ndarray:
        return build_embedding(self.tx_counts, self.serving[ms])

    def embedded(self) -> tuple:
        """Full-dimension covariances E_j V_j E_j^T; exact zeros off-cluster."""
        cached = getattr(self, "_embedded", None)
        if cached is None:
            n_t = sum(self.tx_counts)
            out = []
            for j in range(self.n_ms):
                full = np.zeros((n_t, n_t), dtype=complex)
                if self.matrices[j].size:
                    e = self.embedding(j)
                    full = e @ self.matrices[j] @ e.T
                out.append(full)
            cached = tuple(out)
            object.__setattr__(self, "_embedded", cached)
        return cached

    def as_cap(self) -> PrecoderCovariance:
        return PrecoderCovariance(matrices=self.embedded(), tx_counts=self.tx_counts)


@dataclass(frozen=True)
class ExpansionPoint:
    """Snapshot (channel draw, covariances, quantization) a surrogate is
    anchored at. covariances is PrecoderCovariance or CbpCovariance."""

    channel: ChannelRealization
    covariances: object
    quant: QuantizationProfile


def _quant_noise_at_ms(h: ChannelRealization, quant: QuantizationProfile, ms):
    """H_j Omega H_j^dagger with Omega = blockdiag(sigma_i^2 I)."""
    rows = h.ms_rows(ms)
    out = np.zeros((rows.shape[0], rows.shape[0]), dtype=complex)
    for i, sl in enumerate(_tx_slices(h.tx_counts)):
        s2 = float(quant.variances[i])
        if s2 != 0.0:
            hji = rows[:, sl]
            out += s2 * (hji @ hji.conj().T)
    return out


def _received_cov(h, total_cov, quant, ms):
    rows = h.ms_rows(ms)
    m = np.eye(rows.shape[0], dtype=complex)
    m += rows @ total_cov @ rows.conj().T
    if quant is not None:
        m += _quant_noise_at_ms(h, quant, ms)
    return 0.5 * (m + m.conj().T)


def cap_user_rate(h: ChannelRealization, covs: PrecoderCovariance,
                  quant: QuantizationProfile, ms) -> float:
    """Achievable rate of MS ms under CAP for one fading block:
    log2 det(I + H_j (sum_k V_k + Omega) H_j^+)
    - log2 det(I + H_j (sum_{k != j} V_k + Omega) H_j^+)."""
    full = logdet_pd(_received_cov(h, covs.total(), quant, ms))
    interf = logdet_pd(_received_cov(h, covs.total_excluding(ms), quant, ms))
    return full - interf


def cap_fronthaul_rate(covs: PrecoderCovariance, quant: QuantizationProfile,
                       ru) -> float:
    """Fronthaul rate of RU ru under CAP:
    log2 det(D_i^T (sum_k V_k) D_i + sigma_i^2 I) - N_t,i log2 sigma_i^2."""
    s2 = float(quant.variances[ru])
    if s2 <= 0:
        raise ValueError("quantization variance must be positive")
    sl = _tx_slices(covs.tx_counts)[ru]
    n_i = covs.tx_counts[ru]
    block = covs.total()[sl, sl] + s2 * np.eye(n_i)
    return logdet_pd(block) - n_i * float(np.log2(s2))


def transmit_power(covs: PrecoderCovariance, quant: QuantizationProfile,
                   ru) -> float:
    """Per-RU transmit power: trace of RU ru's covariance block plus the
    quantization noise power N_t,i sigma_i^2."""
    sl = _tx_slices(covs.tx_counts)[ru]
    n_i = covs.tx_counts[ru]
    return float(np.real(np.trace(covs.total()[sl, sl]))) + n_i * float(quant.variances[ru])


def cap_rate_surrogate(point: ExpansionPoint, covs: PrecoderCovariance,
                       quant: QuantizationProfile, ms) -> float:
    """Concave lower bound on cap_user_rate, tight at the expansion point.

    The signal term is kept exact in the live (covs, quant); the interference
    log-det is replaced by its tangent at the snapshot."""
    h = point.channel
    full = logdet_pd(_received_cov(h, covs.total(), quant, ms))
    a = _received_cov(h, point.covariances.total_excluding(ms), point.quant, ms)
    b = _received_cov(h, covs.total_excluding(ms), quant, ms)
    return full - linearize_logdet(a, b)


def cap_fronthaul_surrogate(point: ExpansionPoint, covs: PrecoderCovariance,
                            sigma2, ru) -> float:
    """Convex upper bound on cap_fronthaul_rate, tight at the snapshot."""
    s2 = float(sigma2)
    if s2 <= 0:
        raise ValueError("quantization variance must be positive")
    sl = _tx_slices(covs.tx_counts)[ru]
    n_i = covs.tx_counts[ru]
    eye = np.eye(n_i)
    a = point.covariances.total()[sl, sl] + float(point.quant.variances[ru]) * eye
    b = covs.total()[sl, sl] + s2 * eye
    return linearize_logdet(a, b) - n_i * float(np.log2(s2))


def cbp_user_rate(h: ChannelRealization, covs: CbpCovariance,
                  quant: QuantizationProfile, ms) -> float:
    """Achievable rate of MS ms under CBP; covariances embedded on clusters,
    quantization noise from the precoder compression (may be zero)."""
    return cap_user_rate(h, covs.as_cap(), quant, ms)


def cbp_precoder_fronthaul_rate(covs: CbpCovariance, quant: QuantizationProfile,
                                ru, coherence) -> float:
    """Per-channel-use fronthaul cost of shipping RU ru's precoder columns,
    amortized over a fading block of `coherence` uses."""
    if int(coherence) < 1:
        raise ValueError("coherence must be >= 1")
    return cap_fronthaul_rate(covs.as_cap(), quant, ru) / float(coherence)


def cbp_rate_surrogate(point: ExpansionPoint, covs: CbpCovariance,
                       quant: QuantizationProfile, ms) -> float:
    """CBP analogue of cap_rate_surrogate (lower bound, tight at snapshot)."""
    cap_point = ExpansionPoint(channel=point.channel,
                               covariances=point.covariances.as_cap(),
                               quant=point.quant)
    return cap_rate_surrogate(cap_point, covs.as_cap(), quant, ms)


def cbp_fronthaul_surrogate(point: ExpansionPoint, covs: CbpCovariance,
                            sigma2, ru, coherence) -> float:
    """Convex upper bound on cbp_precoder_fronthaul_rate."""
    if int(coherence) < 1:
        raise ValueError("coherence must be >= 1")
    cap_point = ExpansionPoint(channel=point.channel,
                               covariances=point.covariances.as_cap(),
                               quant=point.quant)
    return cap_fronthaul_surrogate(cap_point, covs.as_cap(), sigma2, ru) / float(coherence)
