"""
Command-line front end.

Exit codes: 0 success (every run converged / spectral check passed),
1 configuration or invariant error, 2 a run did not converge within
``max_iters``, 3 the eigen-solver failed to converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ppacdc import analysis, experiment, sim
from ppacdc import graph as graphs
from ppacdc.eigen import EigenConvergenceError
from ppacdc.experiment import ConfigError
from ppacdc.protocol import ProtocolError

log = logging.getLogger("ppacdc")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2
EXIT_EIGEN = 3


def _out_dir(args, exp: experiment.Experiment | None = None) -> Path:
    if getattr(args, "out", None):
        d = Path(args.out)
    elif exp is not None and "dir" in exp.doc.get("output", {}):
        d = Path(exp.doc["output"]["dir"])
    else:
        d = Path(os.environ.get("PPACDC_OUT", "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "override", None) or []:
        key, value = experiment.parse_override(item)
        out[key] = value
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    return out


def _load(args) -> experiment.Experiment:
    return experiment.load(args.config, _overrides(args))


def _warn_gamma(cfg: sim.SimConfig) -> None:
    g = cfg.resolve_graph()
    try:
        report = analysis.spectral_check(analysis.build_augmented(g, cfg.protocol.gamma))
    except EigenConvergenceError:
        log.warning("could not verify gamma=%g: eigen-solver did not converge",
                    cfg.protocol.gamma)
        return
    if not report.passes:
        log.warning("gamma=%g fails the spectral check (second modulus %.6f); "
                    "the unquantized iteration is not convergent",
                    cfg.protocol.gamma, report.second_modulus)


def _summary(name: str, cfg: sim.SimConfig, res: sim.RunResult) -> dict:
    return {
        "name": name,
        "seed": cfg.seed,
        "converged": res.converged,
        "convergence_iter": res.convergence_iter,
        "average_reached": res.average_reached,
        "average_error": res.average_error,
        "final_error": res.final_error,
        "rounds": res.rounds,
        "bits_total": res.bits_total,
        "delta_final": res.delta_final,
        "sigma_final": res.sigma_final,
        "x_ave": sum(res.x0) / len(res.x0),
        "x_final": list(res.x_final),
    }


def run_experiment(exp: experiment.Experiment, out_dir: Path) -> int:
    prefix = exp.doc.get("output", {}).get("prefix", "")
    code = EXIT_OK
    for name, doc in exp.variants():
        cfg = experiment.to_sim_config(doc, exp.base_dir)
        _warn_gamma(cfg)
        res = sim.run(cfg)
        trace_path = out_dir / f"{prefix}{name}_trace.csv"
        result_path = out_dir / f"{prefix}{name}_result.json"
        sim.atomic_write(trace_path, sim.trace_csv(res))
        sim.atomic_write(result_path, json.dumps(_summary(name, cfg, res), indent=2) + "\n")
        status = (f"converged at k={res.convergence_iter}" if res.converged
                  else f"not converged after {res.rounds} rounds")
        print(f"{name}: {status}; final error {res.final_error:.3e}; trace -> {trace_path}")
        if not res.converged:
            code = EXIT_NOT_CONVERGED
    return code


def sweep_experiment(exp: experiment.Experiment, out_dir: Path, workers: int | None = None) -> int:
    spec = exp.doc.get("sweep")
    if spec is None:
        raise ConfigError("experiment has no 'sweep' section")
    cfg = experiment.to_sim_config(exp.doc, exp.base_dir)
    _warn_gamma(cfg)
    rows = sim.sweep(cfg, spec["alphas"], spec["bits"], spec["n_seeds"],
                     resample_topology=spec.get("resample_topology", False),
                     workers=workers or spec.get("workers", 1))
    prefix = exp.doc.get("output", {}).get("prefix", "")
    path = out_dir / f"{prefix}{exp.name}_sweep.csv"
    sim.atomic_write(path, sim.sweep_csv(rows))
    for r in rows:
        mean = f"{r.mean_iters:.1f}" if r.mean_iters is not None else "-"
        flag = "  NOT CONVERGED" if r.flagged else ""
        print(f"alpha={r.alpha:<5g} bits={r.bits:<3d} converged {r.converged_count}/{r.seeds}"
              f"  mean iters {mean}{flag}")
    print(f"summary -> {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    exp = _load(args)
    return run_experiment(exp, _out_dir(args, exp))


def cmd_sweep(args) -> int:
    exp = _load(args)
    return sweep_experiment(exp, _out_dir(args, exp), args.workers)


def cmd_preset(args) -> int:
    if args.list or not args.name:
        print("\n".join(experiment.preset_names()))
        return EXIT_OK
    if args.dump:
        print(experiment.preset_text(args.name), end="")
        return EXIT_OK
    exp = experiment.load_preset(args.name, _overrides(args))
    out = _out_dir(args, exp)
    if exp.has_sweep:
        return sweep_experiment(exp, out, args.workers)
    return run_experiment(exp, out)


def _graph_from_args(args) -> graphs.Digraph:
    if args.graph:
        return graphs.load_edge_list(args.graph)
    name = args.preset
    if name == "ring5":
        return graphs.ring(5)
    kind, _, n = name.partition(":")
    if kind in ("ring", "complete") and n.isdigit():
        return graphs.ring(int(n)) if kind == "ring" else graphs.complete(int(n))
    raise ConfigError(f"unknown graph preset {name!r} (use ring5, ring:N or complete:N)")


def cmd_analyze(args) -> int:
    if not args.gamma > 0:
        raise ConfigError("gamma must be positive")
    g = _graph_from_args(args)
    if not graphs.is_strongly_connected(g):
        raise ConfigError("graph is not strongly connected")
    try:
        report = analysis.spectral_check(analysis.build_augmented(g, args.gamma), args.tol)
    except EigenConvergenceError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_EIGEN
    print(json.dumps(report.as_dict()))
    return EXIT_OK if report.passes else EXIT_ERROR


def cmd_gen_graph(args) -> int:
    g = graphs.random_strongly_connected(args.n, args.prob, args.seed)
    try:
        graphs.save_edge_list(g, args.out)
    except OSError as exc:
        raise ConfigError(f"cannot write {args.out}: {exc.strerror}") from None
    print(f"n={g.node_count} m={g.edge_count} diameter={graphs.diameter(g)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppacdc",
        description="Quantized push-pull average consensus simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--out", help="output directory (default: $PPACDC_OUT or .)")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="dotted-key override, value parsed as JSON when possible")

    p = sub.add_parser("run", help="run one experiment (or each of its variants)")
    add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a seeded (alpha, bits) sweep")
    add_common(p)
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("preset", help="run a built-in experiment")
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true")
    p.add_argument("--dump", action="store_true", help="print the preset JSON")
    p.add_argument("--workers", type=int)
    add_common(p, config=False)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("analyze", help="spectral check of the unquantized iteration")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--graph", help="edge-list file")
    src.add_argument("--preset", help="ring5, ring:N or complete:N")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--tol", type=float, default=analysis.DEFAULT_SPECTRAL_TOL)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen-graph", help="write a seeded strongly connected digraph")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--prob", type=float, default=0.0, help="extra edge probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_graph)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (sim.InvariantViolation, ProtocolError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        # ConfigError, GraphError and parameter validation all land here
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
