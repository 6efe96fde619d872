"""Command line front end: run, validate, or replay sweep specs.

Spec files are JSON; the config block is either the full field dict or
the uniform shorthand (n_ru, n_ms, tx_per_ru, rx_per_ms, power,
fronthaul, ...).  See ExperimentSpec for the remaining keys.
"""

import argparse
import sys
from dataclasses import replace

from .experiments import emit_results, load_spec, replay, run_sweep


def _add_common(sub):
    sub.add_argument("--out", default="results",
                     help="output directory (default: results)")
    sub.add_argument("--workers", type=int, default=1,
                     help="parallel worker processes (default: 1)")


def _parser():
    p = argparse.ArgumentParser(
        prog="cranopt",
        description="fronthaul compression / precoding design sweeps")
    sub = p.add_subparsers(dest="verb", required=True)

    sw = sub.add_parser("sweep", help="run a sweep spec and write results")
    sw.add_argument("spec", help="path to a JSON sweep spec")
    sw.add_argument("--seed", type=int, default=None,
                    help="override the spec's experiment seed")
    _add_common(sw)

    va = sub.add_parser("validate", help="parse a sweep spec and report problems")
    va.add_argument("spec", help="path to a JSON sweep spec")

    rp = sub.add_parser("replay", help="re-run a sidecar and byte-compare results")
    rp.add_argument("sidecar", help="path to a sidecar.json from a past sweep")
    _add_common(rp)
    return p


def _sweep(args):
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    rows = run_sweep(spec, workers=args.workers)
    path = emit_results(rows, args.out, spec)
    failed = [r for r in rows if r.status != "ok"]
    print(f"wrote {path} ({len(rows)} rows, {len(failed)} failed)")
    for r in failed:
        print(f"  {r.scheme}/{r.csi}"
              f"{'' if r.cluster_size is None else f'/Nc={r.cluster_size}'}"
              f" value={r.sweep_value} geometry={r.geometry}: {r.status}")
    return 1 if failed else 0


def _validate(args):
    try:
        spec = load_spec(args.spec)
    except Exception as exc:
        print(f"invalid spec: {exc}")
        return 1
    n_tasks = len(spec.grid) * spec.geometries
    print(f"spec ok: {spec.sweep_variable} sweep over {len(spec.grid)} points, "
          f"{spec.geometries} geometries, schemes={list(spec.schemes)}, "
          f"csi={list(spec.csi)}")
    print(f"  {n_tasks} tasks per variant, seed={spec.seed}")
    return 0


def _replay(args):
    match, path = replay(args.sidecar, out_dir=args.out, workers=args.workers)
    if match:
        print(f"replay matched byte-for-byte ({path})")
        return 0
    print(f"replay MISMATCH: {path} differs from the original results.csv")
    return 2


def main(argv=None):
    args = _parser().parse_args(argv)
    handler = {"sweep": _sweep, "validate": _validate, "replay": _replay}
    return handler[args.verb](args)


if __name__ == "__main__":
    sys.exit(main())
