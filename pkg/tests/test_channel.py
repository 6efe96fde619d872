"""Geometry and channel-statistics layer.

Oracle strategy: the one-ring integral is cross-checked against a dense
trapezoid rule (1e5 nodes) plus two frozen entries computed from that
oracle; placement statistics are checked against the closed-form mean
distance between uniform points in a square, 0.52140543...
"""

import numpy as np
import pytest

from cranopt import (
    ChannelRealization,
    ChannelStatistics,
    FixedChannel,
    NetworkGeometry,
    SystemConfig,
    build_statistics,
    one_ring_covariance,
    path_loss,
    place_nodes,
    sample_channel,
    sample_channels,
)

# mean distance between two i.i.d. uniform points in the unit square
MEAN_DIST_UNIT_SQUARE = 0.5214054331647207


def small_config(**kw):
    args = dict(n_ru=2, n_ms=2, tx_per_ru=2, rx_per_ms=1, power=10.0,
                fronthaul=2.0, coherence=4)
    args.update(kw)
    return SystemConfig.uniform(**args)


def trapezoid_one_ring(theta, spread, alpha, n, nodes=100001):
    phi = np.linspace(theta - spread, theta + spread, nodes)
    out = np.empty((n, n), dtype=complex)
    for m in range(n):
        for q in range(n):
            f = np.exp(-1j * np.pi * (m - q) * np.sin(phi))
            out[m, q] = alpha / (2 * spread) * np.trapezoid(f, phi)
    return out


class TestConfig:
    def test_uniform_factory(self):
        cfg = small_config()
        assert cfg.n_ru == 2 and cfg.n_ms == 2
        assert cfg.n_tx == 4 and cfg.n_rx == 2
        assert cfg.tx_offsets == (0, 2, 4)
        assert cfg.streams == (1, 1)
        assert cfg.weights == (1.0, 1.0)

    def test_round_trip(self):
        cfg = small_config()
        assert SystemConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("bad", [
        dict(tx_counts=(0, 2)),
        dict(streams=(2, 1)),            # M_j > N_r,j
        dict(power=(10.0, -1.0)),
        dict(fronthaul=(-0.5, 2.0)),
        dict(coherence=0),
        dict(weights=(1.0, -0.1)),
    ])
    def test_rejects_invalid(self, bad):
        base = small_config().to_dict()
        base.update(bad)
        with pytest.raises(ValueError):
            SystemConfig.from_dict(base)

    def test_total_streams_bound(self):
        with pytest.raises(ValueError):
            SystemConfig.uniform(n_ru=1, n_ms=3, tx_per_ru=2, rx_per_ms=1,
                                 power=1.0, fronthaul=1.0)


class TestPathLoss:
    def test_reference_points(self):
        cfg = small_config()
        assert path_loss(0.0, cfg) == 1.0
        assert path_loss(cfg.ref_distance, cfg) == pytest.approx(0.5, abs=1e-15)
        # d = 500, d0 = 50, eta = 3
        assert path_loss(500.0, cfg) == pytest.approx(1.0 / 1001.0, rel=1e-12)

    def test_monotone(self):
        cfg = small_config()
        d = np.linspace(0, 2000, 200)
        a = path_loss(d, cfg)
        assert np.all(np.diff(a) < 0)
        assert np.all((0 < a) & (a <= 1))

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            path_loss(-1.0, small_config())


class TestOneRing:
    def test_matches_trapezoid_oracle(self):
        theta, spread, alpha, n = 0.7, np.arctan2(10.0, 120.0), 0.35, 4
        want = trapezoid_one_ring(theta, spread, alpha, n)
        got = one_ring_covariance(theta, spread, alpha, n)
        assert np.abs(got - want).max() < 1e-10

    def test_frozen_entries(self):
        # frozen from the trapezoid oracle above
        got = one_ring_covariance(0.7, np.arctan2(10.0, 120.0), 0.35, 4)
        assert got[0, 1] == pytest.approx(-0.15146465787590646 + 0.3129523432538665j,
                                          abs=1e-10)
        assert got[0, 3] == pytest.approx(0.32162897345267316 - 0.07132265766052784j,
                                          abs=1e-10)

    def test_structure(self):
        got = one_ring_covariance(-1.1, 0.3, 0.8, 5)
        assert np.allclose(got, got.conj().T)
        assert np.diag(got).real == pytest.approx([0.8] * 5, abs=1e-12)
        # Toeplitz: constant diagonals
        for k in range(1, 5):
            d = np.diagonal(got, offset=k)
            assert np.allclose(d, d[0])
        assert np.linalg.eigvalsh(got).min() >= -1e-14

    def test_degenerate_spread_is_rank_one(self):
        got = one_ring_covariance(0.0, 1e-8, 1.0, 4)
        assert np.allclose(got, np.ones((4, 4)), atol=1e-7)
        lam = np.sort(np.linalg.eigvalsh(got))
        assert lam[-1] == pytest.approx(4.0, rel=1e-6)
        assert np.all(lam[:-1] < 1e-6)

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            one_ring_covariance(0.0, 0.0, 0.5, 2)
        with pytest.raises(ValueError):
            one_ring_covariance(0.0, 0.1, 1.5, 2)


class TestPlacement:
    def test_deterministic_and_in_cell(self):
        cfg = small_config()
        g1 = place_nodes(cfg, seed=123)
        g2 = place_nodes(cfg, seed=123)
        assert np.array_equal(g1.ru_xy, g2.ru_xy)
        assert np.array_equal(g1.ms_xy, g2.ms_xy)
        assert g1.ru_xy.shape == (2, 2) and g1.ms_xy.shape == (2, 2)
        for xy in (g1.ru_xy, g1.ms_xy):
            assert np.all((0 <= xy) & (xy <= cfg.cell_size))
        assert not np.array_equal(place_nodes(cfg, 124).ru_xy, g1.ru_xy)

    def test_mean_pair_distance(self):
        cfg = SystemConfig.uniform(n_ru=1, n_ms=1, tx_per_ru=1, rx_per_ms=1,
                                   power=1.0, fronthaul=1.0)
        dists = [place_nodes(cfg, seed=s).distances()[0, 0] for s in range(2000)]
        want = MEAN_DIST_UNIT_SQUARE * cfg.cell_size
        assert np.mean(dists) == pytest.approx(want, rel=0.02)


class TestStatistics:
    def test_bearing_and_spread_conventions(self):
        cfg = small_config()
        geo = NetworkGeometry(ru_xy=np.array([[0.0, 0.0], [100.0, 0.0]]),
                              ms_xy=np.array([[120.0, 0.0], [0.0, 80.0]]))
        st = build_statistics(cfg, geo)
        assert st.bearing[0, 0] == pytest.approx(0.0)          # due east
        assert st.bearing[1, 0] == pytest.approx(np.pi / 2)    # due north
        assert st.spread[0, 1] == pytest.approx(np.arctan(10.0 / 20.0))
        assert st.pathloss[0, 1] == pytest.approx(1.0 / (1.0 + (20.0 / 50.0) ** 3))
        for j in range(2):
            for i in range(2):
                diag = np.diag(st.tx_corr[j][i]).real
                assert diag == pytest.approx([st.pathloss[j, i]] * 2, abs=1e-12)

    def test_colocated_nodes(self):
        cfg = small_config()
        geo = NetworkGeometry(ru_xy=np.array([[5.0, 5.0], [100.0, 0.0]]),
                              ms_xy=np.array([[5.0, 5.0], [0.0, 80.0]]))
        st = build_statistics(cfg, geo)
        assert st.spread[0, 0] == pytest.approx(np.pi / 2)
        assert st.pathloss[0, 0] == 1.0

    def test_serialization_round_trip(self):
        cfg = small_config()
        st = build_statistics(cfg, place_nodes(cfg, 7))
        back = ChannelStatistics.from_json(st.to_json())
        assert back.config == cfg
        assert np.allclose(back.pathloss, st.pathloss)
        for j in range(2):
            for i in range(2):
                assert np.allclose(back.tx_corr[j][i], st.tx_corr[j][i])

    def test_gain_statistic(self):
        cfg = small_config(rx_per_ms=2)
        st = build_statistics(cfg, place_nodes(cfg, 11))
        gain = st.channel_gain_statistic()
        want = 2 * 2 * st.pathloss  # N_r,j * N_t,i * alpha
        assert np.allclose(gain, want, atol=1e-12)


class TestSampling:
    def test_deterministic_given_stream(self):
        cfg = small_config()
        st = build_statistics(cfg, place_nodes(cfg, 3))
        h1 = sample_channel(st, np.random.default_rng(5)).matrix
        h2 = sample_channel(st, np.random.default_rng(5)).matrix
        assert np.array_equal(h1, h2)
        h3 = sample_channel(st, np.random.default_rng(6)).matrix
        assert not np.array_equal(h1, h3)

    def test_block_layout(self):
        cfg = small_config()
        st = build_statistics(cfg, place_nodes(cfg, 3))
        h = sample_channel(st, np.random.default_rng(5))
        assert h.matrix.shape == (2, 4)
        assert np.array_equal(h.block(1, 0), h.matrix[1:2, 0:2])
        assert np.array_equal(h.ms_rows(0), h.matrix[0:1, :])

    def test_kronecker_second_order(self):
        cfg = SystemConfig.uniform(n_ru=1, n_ms=1, tx_per_ru=3, rx_per_ms=2,
                                   power=1.0, fronthaul=1.0)
        st = build_statistics(cfg, place_nodes(cfg, 21))
        cov_t = st.tx_corr[0][0]
        n = 40000
        batch = sample_channels(st, np.random.default_rng(42), n)
        # vec with column-major stacking per draw; E[v v^H]
        vecs = np.stack([batch[t].flatten(order="F") for t in range(n)])
        emp = (vecs.T @ vecs.conj()) / n
        want = np.kron(cov_t.T, np.eye(2))
        rel = np.linalg.norm(emp - want) / np.linalg.norm(want)
        assert rel < 0.05
        # mean Frobenius norm matches N_r * trace(tx_corr)
        en = np.mean(np.abs(batch) ** 2) * batch[0].size
        assert en == pytest.approx(2 * np.trace(cov_t).real, rel=0.02)

    def test_batch_matches_distribution(self):
        cfg = small_config()
        st = build_statistics(cfg, place_nodes(cfg, 3))
        batch = sample_channels(st, np.random.default_rng(0), 8)
        assert batch.shape == (8, 2, 4)

    def test_realization_round_trip(self):
        cfg = small_config()
        st = build_statistics(cfg, place_nodes(cfg, 3))
        h = sample_channel(st, np.random.default_rng(1))
        back = ChannelRealization.from_json(h.to_json())
        assert np.array_equal(back.matrix, h.matrix)
        assert back.tx_counts == h.tx_counts

    def test_fixed_channel_sampler(self):
        cfg = small_config()
        st = build_statistics(cfg, place_nodes(cfg, 3))
        h = sample_channel(st, np.random.default_rng(1))
        fixed = FixedChannel(config=cfg, realization=h)
        rng = np.random.default_rng(99)
        assert np.array_equal(fixed.sample(rng).matrix, h.matrix)
        assert np.array_equal(fixed.sample(rng).matrix, h.matrix)
