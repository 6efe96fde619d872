"""Which fronthaul strategy wins depends on the budget.

A small two-RU downlink, statistical CSI at the central unit.  At tight
fronthaul the precoder-shipping scheme (one cluster RU per user) keeps
the link clean and wins; as the budget grows, compressing the precoded
signal itself catches up and passes it.  This is the desk-size version
of the tradeoff the two designs exist to explore.

Runs in about a minute; bump GEOMETRIES / SAMPLES for smoother numbers.
"""

from cranopt import ExperimentSpec, SystemConfig, aggregate, run_sweep

GEOMETRIES = 3
SAMPLES = 200

cfg = SystemConfig.uniform(n_ru=2, n_ms=2, tx_per_ru=2, rx_per_ms=1,
                           power=10.0, fronthaul=2.0, coherence=20)
spec = ExperimentSpec(config=cfg, schemes=("cap", "cbp"), csi=("stochastic",),
                      cluster_sizes=(1,), sweep_variable="fronthaul_capacity",
                      grid=(0.5, 1.0, 2.0, 4.0, 8.0), geometries=GEOMETRIES,
                      evaluation_samples=SAMPLES, design_iterations=12, seed=1)

rows = run_sweep(spec)
table = aggregate(rows)

print(f"mean ergodic sum-rate over {GEOMETRIES} layouts "
      f"({SAMPLES} channel draws each)")
print(f"{'cbar':>6} | {'signal compression':>20} | {'precoder shipping':>19}")
print("-" * 53)
for cbar in spec.grid:
    cap_m, cap_se = table[("cap", "stochastic", None, cbar)]
    cbp_m, cbp_se = table[("cbp", "stochastic", 1, cbar)]
    lead = "<-- shipping" if cbp_m > cap_m else ""
    print(f"{cbar:>6.1f} | {cap_m:>9.3f} +- {cap_se:<7.3f} | "
          f"{cbp_m:>8.3f} +- {cbp_se:<6.3f} {lead}")
