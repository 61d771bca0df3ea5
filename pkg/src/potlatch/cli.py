"""Command-line interface.

Subcommands: spectrum, simulate, renewal, envelope, duality, verify.
Outputs are JSON or CSV on stdout (or --out); exit code 0 iff all
verdicts pass.
"""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager

import numpy as np

from .analysis import EnvelopeParams, compute_G, envelope_global, envelope_torus, renewal_H
from .errors import PotlatchError
from .harness import config_from_json, duality_experiment, write_trajectory_csv
from .kernel import CompleteSpec, TorusSpec, build_kernel, load_kernel_json
from .spectral import decompose, torus_gaps
from .verify import SUITES, run_suite


def _parse_graph_arg(arg: str):
    """torus:d=D,n=N | complete:N | custom:PATH | PATH"""
    if arg.startswith("torus:"):
        fields = dict(kv.split("=") for kv in arg[len("torus:"):].split(","))
        return build_kernel(TorusSpec(d=int(fields["d"]), n=int(fields["n"])))
    if arg.startswith("complete:"):
        return build_kernel(CompleteSpec(n=int(arg[len("complete:"):])))
    if arg.startswith("custom:"):
        return load_kernel_json(arg[len("custom:"):])
    return load_kernel_json(arg)


@contextmanager
def _out_stream(path):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            yield fh
    else:
        yield sys.stdout


def _fmt(x) -> str:
    return repr(float(x))


def cmd_spectrum(args) -> int:
    kernel = _parse_graph_arg(args.graph)
    sd = decompose(kernel)
    doc = {
        "eigenvalues": [float(v) for v in sd.eigenvalues],
        "gap_abs": sd.gap_abs,
        "gap_two_step": sd.gap_two_step,
        "gamma11": None,
        "gamma2d": None,
    }
    if kernel.is_torus:
        d, n = kernel.torus_shape()
        spec = torus_gaps(d, n)
        doc["gamma11"] = spec.gamma11
        doc["gamma2d"] = spec.gamma2d
    with _out_stream(args.out) as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return 0


def cmd_simulate(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = config_from_json(doc)
    with _out_stream(args.out) as fh:
        write_trajectory_csv(fh, cfg)
    return 0


def cmd_renewal(args) -> int:
    g = compute_G(args.d, args.n, horizon=args.horizon, h=args.step)
    grid = g if args.function == "G" else renewal_H(g)
    with _out_stream(args.out) as fh:
        fh.write("t,value\n")
        for t, v in zip(grid.times, grid.values):
            fh.write(f"{_fmt(t)},{_fmt(v)}\n")
    return 0


def cmd_envelope(args) -> int:
    if args.which == "global":
        kernel = _parse_graph_arg(args.graph)
        gamma2 = decompose(kernel).gap_two_step
        grid = envelope_global(gamma2, args.v0, args.horizon, args.step)
    else:
        params = EnvelopeParams(rate=args.rate, amplitude=args.amplitude)
        grid = envelope_torus(
            args.d, args.n, args.which, params,
            t0=args.t0, horizon=args.horizon, h=args.step,
        )
    with _out_stream(args.out) as fh:
        fh.write("t,value\n")
        for t, v in zip(grid.times, grid.values):
            fh.write(f"{_fmt(t)},{_fmt(v)}\n")
    return 0


def cmd_duality(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = config_from_json(doc)
    entry = duality_experiment(cfg, workers=args.workers)
    print(json.dumps({
        "check": entry.name,
        "pass": entry.passed,
        "observed": entry.observed,
        "bound": entry.bound_or_target,
        "tolerance": entry.tolerance,
    }))
    return 0 if entry.passed else 1


def cmd_verify(args) -> int:
    report = run_suite(args.suite, seed=args.seed, workers=args.workers)
    for line in report.verdict_lines():
        print(line)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2)
            fh.write("\n")
    return 0 if report.all_pass else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="potlatch",
        description="Simulator and verification harness for mass-redistribution "
                    "and gossip-averaging dynamics on reversible kernels.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectrum", help="eigenvalues and spectral gaps")
    sp.add_argument("--graph", required=True,
                    help="torus:d=D,n=N | complete:N | custom:kernel.json")
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_spectrum)

    sp = sub.add_parser("simulate", help="trajectory CSV from a config")
    sp.add_argument("--config", required=True, help="ExperimentConfig JSON path")
    sp.add_argument("--seed", type=int, default=None, help="override config seed")
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("renewal", help="G and its renewal solution H")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--horizon", type=float, required=True)
    sp.add_argument("--step", type=float, required=True)
    sp.add_argument("--function", choices=("G", "H"), default="H")
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_renewal)

    sp = sub.add_parser("envelope", help="decay envelopes")
    sp.add_argument("--which", choices=("global", "energy", "variance", "avg"),
                    required=True)
    sp.add_argument("--graph", help="kernel for --which global")
    sp.add_argument("--v0", type=float, default=1.0)
    sp.add_argument("--d", type=int)
    sp.add_argument("--n", type=int)
    sp.add_argument("--rate", type=float, default=None)
    sp.add_argument("--amplitude", type=float, default=1.0)
    sp.add_argument("--t0", type=float, default=1.0)
    sp.add_argument("--horizon", type=float, default=100.0)
    sp.add_argument("--step", type=float, default=1.0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_envelope)

    sp = sub.add_parser("duality", help="distributional duality check")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(fn=cmd_duality)

    sp = sub.add_parser("verify", help="run a named verification suite")
    sp.add_argument("--suite", choices=sorted(SUITES), required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--out", default=None, help="write the full report JSON here")
    sp.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PotlatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
