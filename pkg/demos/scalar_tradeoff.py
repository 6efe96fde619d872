"""Smallest interesting system: one RU, one user, one antenna each.

With h = 1, unit noise, transmit budget 10 and fronthaul budget 2 bits,
the compress-after-precoding design has a two-variable tradeoff between
signal power v and quantization noise sigma2: spending fronthaul
(smaller sigma2) steals transmit power headroom (v <= 10 - sigma2).
Both budgets bind at the optimum and the split can be worked out by hand:

    C = log2(1 + v/sigma2) = 2  and  v + sigma2 = 10
    => sigma2 = 2.5, v = 7.5, rate = log2(11) - log2(3.5) ~ 1.652 bits

The precoder-shipping alternative pays fronthaul once per coherence
block instead of every symbol, so its rate climbs with the block length.
"""

import numpy as np

from cranopt import (
    ChannelRealization,
    SsumOptions,
    SystemConfig,
    assign_clusters_instantaneous,
    cap_user_rate,
    optimize_cap_perfect,
    optimize_cbp_perfect,
)

cfg = SystemConfig.uniform(n_ru=1, n_ms=1, tx_per_ru=1, rx_per_ms=1,
                           power=10.0, fronthaul=2.0)
h = ChannelRealization(matrix=np.ones((1, 1), dtype=complex),
                       tx_counts=cfg.tx_counts, rx_counts=cfg.rx_counts)

sol = optimize_cap_perfect(cfg, h)
v = sol.covariances.matrices[0][0, 0].real
s2 = sol.quantization.variances[0]
rate = cap_user_rate(h, sol.covariances, sol.quantization, 0)
print("compress-after-precoding (per-symbol fronthaul cost)")
print(f"  signal power v      = {v:.4f}   (hand value 7.5)")
print(f"  quant noise sigma2  = {s2:.4f}   (hand value 2.5)")
print(f"  rate                = {rate:.4f} bits  (hand value 1.6521)")

print()
print("precoder shipping amortizes its fronthaul over the block; the user's")
print("data still crosses the fronthaul every symbol, so the T -> inf limit")
print("is min(cbar, log2(1 + pbar)) = 2 bits here:")
clusters = assign_clusters_instantaneous(h, 1)
for t_coh in (2, 5, 10, 50, 1000):
    sol = optimize_cbp_perfect(cfg, h, clusters, coherence=t_coh,
                               options=SsumOptions(inner_max=30))
    print(f"  T = {t_coh:5d}: rate = {sol.rates[0]:.4f} bits")

print()
print("with a looser budget (cbar = 6) the same limit is power-bound instead:")
roomy = cfg.replace(fronthaul=(6.0,))
sol = optimize_cbp_perfect(roomy, h, clusters, coherence=1000,
                           options=SsumOptions(inner_max=30))
print(f"  T =  1000: rate = {sol.rates[0]:.4f} bits "
      f"(log2(11) = {np.log2(11.0):.4f})")
