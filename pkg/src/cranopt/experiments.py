"""Sweep experiments: deterministic grid runner and result files.

A sweep is (base config) x (grid of one swept variable) x (scheme/CSI
variants) x (random geometries).  Every task derives its placement,
design, and evaluation seeds from the experiment seed and its own indices
through separate SeedSequence streams, so results are reproducible
bit-for-bit regardless of worker count or execution order.

Result files: results.csv carries the deterministic outcome fields and is
the replay-comparison target; wall-clock timings go to timings.csv so
replays stay byte-identical; sidecar.json records the fully resolved spec
(including the seed) and is sufficient to reproduce the run.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cap import SsumOptions, optimize_cap_stochastic
from .cbp import assign_clusters_stochastic, optimize_cbp_stochastic
from .channel import SystemConfig, build_statistics, place_nodes
from .evaluate import ergodic_sum_rate

SWEEP_VARIABLES = ("fronthaul_capacity", "power", "coherence",
                   "num_mss", "rx_antennas")
SCHEMES = ("cap", "cbp")
CSI_MODES = ("perfect", "stochastic")

RESULT_FIELDS = ("sweep_variable", "sweep_value", "scheme", "csi",
                 "cluster_size", "geometry", "samples", "mean_sum_rate",
                 "std_error", "status")


def db_to_linear(db):
    """Figure axes quote power budgets in dB; the model wants linear scale
    (unit noise, so dB power doubles as the SNR reference)."""
    return float(10.0 ** (float(db) / 10.0))


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep study: which designs to run, what to vary, how to average.

    power grids are given in dB and converted when applied; all other
    grids are in natural units (bits, channel uses, counts).
    """

    config: SystemConfig
    schemes: tuple
    csi: tuple
    sweep_variable: str
    grid: tuple
    cluster_sizes: tuple = (1,)
    geometries: int = 20
    evaluation_samples: int = 100
    design_iterations: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "csi", tuple(self.csi))
        object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))
        object.__setattr__(self, "cluster_sizes",
                           tuple(int(n) for n in self.cluster_sizes))
        if not self.schemes or any(s not in SCHEMES for s in self.schemes):
            raise ValueError(f"schemes must be a nonempty subset of {SCHEMES}")
        if not self.csi or any(c not in CSI_MODES for c in self.csi):
            raise ValueError(f"csi must be a nonempty subset of {CSI_MODES}")
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {self.sweep_variable!r}")
        if not self.grid:
            raise ValueError("sweep grid must be nonempty")
        if "cbp" in self.schemes and (not self.cluster_sizes
                                      or min(self.cluster_sizes) < 1):
            raise ValueError("cbp sweeps need cluster sizes >= 1")
        for name in ("geometries", "evaluation_samples", "design_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.evaluation_samples < 2:
            raise ValueError("evaluation_samples must be >= 2")

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "schemes": list(self.schemes),
            "csi": list(self.csi),
            "sweep_variable": self.sweep_variable,
            "grid": list(self.grid),
            "cluster_sizes": list(self.cluster_sizes),
            "geometries": self.geometries,
            "evaluation_samples": self.evaluation_samples,
            "design_iterations": self.design_iterations,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        cfg = d.pop("config")
        if "tx_counts" in cfg:
            config = SystemConfig.from_dict(cfg)
        else:
            config = SystemConfig.uniform(**cfg)  # shorthand form
        return cls(config=config, **d)


@dataclass(frozen=True)
class ResultRow:
    sweep_variable: str
    sweep_value: float
    scheme: str
    csi: str
    cluster_size: object   # int for cbp, None for cap
    geometry: int
    samples: int
    mean_sum_rate: float
    std_error: float
    status: str = "ok"
    wall_time: float = 0.0


def _apply_sweep(base: SystemConfig, variable, value) -> SystemConfig:
    if variable == "fronthaul_capacity":
        return base.replace(fronthaul=(float(value),) * base.n_ru)
    if variable == "power":
        return base.replace(power=(db_to_linear(value),) * base.n_ru)
    if variable == "coherence":
        return base.replace(coherence=int(value))
    if variable == "num_mss":
        n = int(value)
        return base.replace(rx_counts=(base.rx_counts[0],) * n,
                            streams=(base.streams[0],) * n,
                            weights=(base.weights[0],) * n)
    if variable == "rx_antennas":
        r = int(value)
        return base.replace(rx_counts=(r,) * base.n_ms,
                            streams=(r,) * base.n_ms)
    raise ValueError(f"unknown sweep variable {variable!r}")


def _variants(spec: ExperimentSpec):
    out = []
    for scheme in spec.schemes:
        for csi in spec.csi:
            if scheme == "cap":
                out.append((scheme, csi, None))
            else:
                out.extend((scheme, csi, nc) for nc in spec.cluster_sizes)
    return out


def _derived_seed(base, *key):
    ss = np.random.SeedSequence([int(base) & (2 ** 63 - 1), *key])
    return int(ss.generate_state(1, np.uint64)[0])


def _run_task(spec: ExperimentSpec, grid_index, variant_index, geometry):
    value = spec.grid[grid_index]
    scheme, csi, nc = _variants(spec)[variant_index]
    start = time.perf_counter()
    status = "ok"
    mean = se = float("nan")
    try:
        cfg = _apply_sweep(spec.config, spec.sweep_variable, value)
        stats = build_statistics(
            cfg, place_nodes(cfg, seed=_derived_seed(spec.seed, 1, geometry)))
        opts = SsumOptions(
            outer_iterations=spec.design_iterations,
            seed=_derived_seed(spec.seed, 2, geometry, grid_index, variant_index))
        eval_seed = _derived_seed(spec.seed, 3, geometry, grid_index, variant_index)
        if csi == "stochastic":
            if scheme == "cap":
                sol = optimize_cap_stochastic(cfg, stats, opts)
            else:
                clusters = assign_clusters_stochastic(stats, nc)
                sol = optimize_cbp_stochastic(cfg, stats, clusters, opts)
            est = ergodic_sum_rate(scheme, csi, sol, stats,
                                   spec.evaluation_samples, eval_seed)
        else:
            est = ergodic_sum_rate(scheme, csi, None, stats,
                                   spec.evaluation_samples, eval_seed,
                                   options=opts, cluster_size=nc)
        mean, se = est.mean, est.std_error
    except Exception as exc:  # failures become rows, the sweep continues
        status = f"failed: {exc}"
    return ResultRow(
        sweep_variable=spec.sweep_variable, sweep_value=value, scheme=scheme,
        csi=csi, cluster_size=nc, geometry=geometry,
        samples=spec.evaluation_samples, mean_sum_rate=mean, std_error=se,
        status=status, wall_time=time.perf_counter() - start)


def run_sweep(spec: ExperimentSpec, workers=1) -> list:
    """All (grid point x variant x geometry) rows, canonically ordered.

    Each task is seeded independently, so the rows are identical for any
    worker count; only wall_time varies.
    """
    tasks = [(gi, vi, g)
             for gi in range(len(spec.grid))
             for vi in range(len(_variants(spec)))
             for g in range(spec.geometries)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_task, [spec] * len(tasks),
                                 *zip(*tasks), chunksize=1))
    else:
        rows = [_run_task(spec, *t) for t in tasks]
    rows.sort(key=lambda r: (r.scheme, r.csi, r.cluster_size or 0,
                             spec.grid.index(r.sweep_value), r.geometry))
    return rows


def aggregate(rows):
    """Mean over geometries per (scheme, csi, cluster_size, sweep value).

    Returns {key: (mean, standard error of the mean)}; the combined SE
    treats per-geometry Monte Carlo errors as independent.
    """
    groups = {}
    for r in rows:
        if r.status != "ok":
            continue
        groups.setdefault(
            (r.scheme, r.csi, r.cluster_size, r.sweep_value), []).append(r)
    out = {}
    for key, grp in groups.items():
        means = np.array([r.mean_sum_rate for r in grp])
        ses = np.array([r.std_error for r in grp])
        out[key] = (float(means.mean()),
                    float(np.sqrt(np.sum(ses ** 2)) / len(grp)))
    return out


def _format(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)  # shortest exact round-trip
    return str(value)


def emit_results(rows, out_dir, spec: ExperimentSpec):
    """Write results.csv (deterministic fields), timings.csv, and the
    sidecar; returns the results.csv path."""
    if not rows:
        raise ValueError("nothing to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [",".join(RESULT_FIELDS)]
    for r in rows:
        lines.append(",".join(_format(getattr(r, f)) for f in RESULT_FIELDS))
    (out / "results.csv").write_text("\n".join(lines) + "\n")
    tlines = ["sweep_value,scheme,csi,cluster_size,geometry,wall_time_s"]
    for r in rows:
        tlines.append(",".join([
            _format(r.sweep_value), r.scheme, r.csi, _format(r.cluster_size),
            str(r.geometry), f"{r.wall_time:.3f}"]))
    (out / "timings.csv").write_text("\n".join(tlines) + "\n")
    sidecar = {"spec": spec.to_dict(), "results": "results.csv"}
    (out / "sidecar.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return out / "results.csv"


def read_results(path):
    """Rows of a results.csv as dicts with floats restored."""
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    out = []
    for line in lines[1:]:
        cells = line.split(",", maxsplit=len(header) - 1)
        row = dict(zip(header, cells))
        for key in ("sweep_value", "mean_sum_rate", "std_error"):
            row[key] = float(row[key])
        row["geometry"] = int(row["geometry"])
        row["samples"] = int(row["samples"])
        row["cluster_size"] = int(row["cluster_size"]) if row["cluster_size"] else None
        out.append(row)
    return out


def load_spec(path) -> ExperimentSpec:
    return ExperimentSpec.from_dict(json.loads(Path(path).read_text()))


def load_sidecar(path) -> ExperimentSpec:
    return ExperimentSpec.from_dict(json.loads(Path(path).read_text())["spec"])


def replay(sidecar_path, out_dir=None, workers=1):
    """Re-run the sweep a sidecar describes and byte-compare results.csv.

    Returns (match, reproduced results.csv path).
    """
    sidecar_path = Path(sidecar_path)
    spec = load_sidecar(sidecar_path)
    out = Path(out_dir) if out_dir is not None else sidecar_path.parent / "replay"
    rows = run_sweep(spec, workers=workers)
    new_path = emit_results(rows, out, spec)
    original = sidecar_path.parent / "results.csv"
    match = original.read_bytes() == new_path.read_bytes()
    return match, new_path
