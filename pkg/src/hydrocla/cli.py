"""Command-line front end.

Subcommands: simulate, estimate, cla esm, cla em, perturb-check,
dump-topology.  Network/measurement arguments accept either a file path or a
bundled fixture name (``net34``, ``net34_obs``, ``net65``).  Exit status is 0
on success, 1 on usage/parse/validation errors, 2 on solver non-convergence.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import cla as cla_mod
from .errors import HydroclaError, NotConverged, ParseError, ValidationError
from .estimator import estimate
from .fixtures import fixture_path
from .network import LPS_PER_M3S, MeasurementSet, Network, parse_measurements, parse_network
from .reports import RunReport, render_csv, render_human, render_json, state_variable_rows
from .simulator import SolverOptions, simulate
from .topology import build_spanning_tree


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.handler(args)
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except HydroclaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydrocla",
        description="Loop-flows hydraulic simulation, state estimation, and "
        "confidence-limit analysis",
    )
    sub = parser.add_subparsers(dest="subcommand")

    def add_common(p, with_meas=True):
        p.add_argument("network", help="network file or bundled fixture name")
        if with_meas:
            p.add_argument("measurements", help="measurement file or fixture name")
        p.add_argument("--root", default=None, help="spanning-tree root node id")
        p.add_argument("--tol", type=float, default=1e-6, help="loop residual tolerance [m]")
        p.add_argument("--max-iters", type=int, default=100)
        fmt = p.add_mutually_exclusive_group()
        fmt.add_argument("--json", action="store_true", help="machine-readable output")
        fmt.add_argument("--csv", action="store_true", help="flat CSV output")

    p = sub.add_parser("simulate", help="steady-state loop-flows simulation")
    add_common(p, with_meas=False)
    p.add_argument("--demands", default=None, help="demand override file (id value_lps)")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("estimate", help="least-squares loop-flows state estimation")
    add_common(p)
    p.set_defaults(handler=_cmd_estimate)

    p = sub.add_parser("cla", help="confidence-limit analysis")
    cla_sub = p.add_subparsers(dest="method")
    pe = cla_sub.add_parser("esm", help="experimental sensitivity matrix method")
    add_common(pe)
    pe.add_argument("--two-sided", action="store_true", help="central differences")
    pe.set_defaults(handler=_cmd_cla_esm)
    pm = cla_sub.add_parser("em", help="error maximization method")
    add_common(pm)
    pm.add_argument("--bound", choices=["upper", "lower", "both"], default="upper")
    pm.set_defaults(handler=_cmd_cla_em)
    p.set_defaults(handler=lambda args: (_usage_error("cla requires esm or em")))

    p = sub.add_parser("perturb-check", help="random in-box perturbation check of the ESM")
    add_common(p)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument(
        "--seed",
        type=int,
        default=None,
        help="RNG seed (falls back to HYDROCLA_SEED, then 0)",
    )
    p.set_defaults(handler=_cmd_perturb_check)

    p = sub.add_parser("dump-topology", help="spanning tree and loop membership")
    add_common(p, with_meas=False)
    p.set_defaults(handler=_cmd_dump_topology)
    return parser


def _usage_error(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _resolve(arg: str, kind: str) -> Path:
    path = Path(arg)
    if path.is_file():
        return path
    suffix = ".net" if kind == "network" else ".meas"
    try:
        return fixture_path(arg if arg.endswith(suffix) else arg + suffix)
    except FileNotFoundError:
        raise ParseError(0, f"no such {kind} file or fixture: {arg}") from None


def _load_network(args) -> Network:
    return parse_network(_resolve(args.network, "network").read_text())


def _load_measurements(args, net: Network) -> MeasurementSet:
    return parse_measurements(_resolve(args.measurements, "measurements").read_text(), net)


def _options(args) -> SolverOptions:
    return SolverOptions(tol_loop_residual=args.tol, max_iters=args.max_iters)


def _network_summary(net: Network, root) -> dict:
    dec = build_spanning_tree(net, root)
    return {
        "n": net.n_nodes,
        "p": net.n_links,
        "l": dec.n_loops,
        "f": len(net.fixed_heads),
    }


def _emit(args, report: RunReport) -> int:
    if args.json:
        sys.stdout.write(render_json(report))
    elif args.csv:
        sys.stdout.write(render_csv(report))
    else:
        sys.stdout.write(render_human(report))
    for stage, seconds in report.timings.items():
        print(f"timing {stage}: {seconds:.3f} s", file=sys.stderr)
    return 0


def _command_echo(args) -> str:
    parts = [args.subcommand]
    if getattr(args, "method", None):
        parts.append(args.method)
    parts.append(args.network)
    if hasattr(args, "measurements"):
        parts.append(args.measurements)
    return " ".join(parts)


def _read_demand_file(path: Path, net: Network) -> np.ndarray:
    overrides = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise ParseError(lineno, "expected: node_id demand_lps")
        overrides[tokens[0]] = float(tokens[1])
    demands = net.demands_m3s()
    for node_id, value in overrides.items():
        demands[net.node_index(node_id)] = value / LPS_PER_M3S
    return demands


def _cmd_simulate(args) -> int:
    net = _load_network(args)
    demands = None
    if args.demands:
        demands = _read_demand_file(Path(args.demands), net)
    t0 = time.perf_counter()
    state = simulate(net, demands, _options(args), root=args.root)
    elapsed = time.perf_counter() - t0
    report = RunReport(
        command=_command_echo(args),
        network=_network_summary(net, args.root),
        variables=state_variable_rows(net, state),
        diagnostics={
            "iterations": state.iterations,
            "loop_residual_m": state.residual,
        },
        timings={"simulate": elapsed},
    )
    return _emit(args, report)


def _cmd_estimate(args) -> int:
    net = _load_network(args)
    meas = _load_measurements(args, net)
    t0 = time.perf_counter()
    result = estimate(net, meas, opts=_options(args), root=args.root)
    elapsed = time.perf_counter() - t0
    report = RunReport(
        command=_command_echo(args),
        network=_network_summary(net, args.root),
        variables=state_variable_rows(net, result.state),
        diagnostics={
            "iterations": result.estimator.iterations,
            "objective": result.estimator.objective,
            "loop_residual_m": result.loop_residual,
            "max_delta_d_lps": float(np.abs(result.estimator.delta_d).max() * LPS_PER_M3S),
            "clamped_nodes": ",".join(sorted(result.clamped_nodes)) or "none",
            "second_pass": result.second_pass_used,
        },
        timings={"estimate": elapsed},
    )
    return _emit(args, report)


def _cmd_cla_esm(args) -> int:
    net = _load_network(args)
    meas = _load_measurements(args, net)
    opts = _options(args)
    z = cla_mod.bounded_measurements(net, meas)
    t0 = time.perf_counter()
    s = cla_mod.build_esm(net, meas, z, opts, root=args.root, two_sided=args.two_sided)
    limits = cla_mod.cla_from_esm(s)
    elapsed = time.perf_counter() - t0
    report = RunReport(
        command=_command_echo(args),
        network=_network_summary(net, args.root),
        variables=state_variable_rows(net, s.base_state, limits.values),
        diagnostics={"estimator_runs": s.estimator_runs, "method": limits.method},
        timings={"cla_esm": elapsed},
    )
    return _emit(args, report)


def _cmd_cla_em(args) -> int:
    net = _load_network(args)
    meas = _load_measurements(args, net)
    opts = _options(args)
    z = cla_mod.bounded_measurements(net, meas)
    t0 = time.perf_counter()
    result = cla_mod.em_confidence_limits(
        net, meas, z, bound_choice=args.bound, opts=opts, root=args.root
    )
    elapsed = time.perf_counter() - t0
    limits = result.primary
    diagnostics = {"estimator_runs": result.estimator_runs, "method": limits.method}
    if result.p_value is not None:
        diagnostics["upper_lower_p_value"] = result.p_value
    report = RunReport(
        command=_command_echo(args),
        network=_network_summary(net, args.root),
        variables=state_variable_rows(net, result.base.state, limits.values),
        diagnostics=diagnostics,
        timings={"cla_em": elapsed},
    )
    return _emit(args, report)


def _cmd_perturb_check(args) -> int:
    net = _load_network(args)
    meas = _load_measurements(args, net)
    opts = _options(args)
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get("HYDROCLA_SEED", "0"))
    z = cla_mod.bounded_measurements(net, meas)
    t0 = time.perf_counter()
    s = cla_mod.build_esm(net, meas, z, opts, root=args.root)
    check = cla_mod.random_perturbation_check(
        net, meas, z, s, trials=args.trials, seed=seed, opts=opts, root=args.root
    )
    elapsed = time.perf_counter() - t0
    rows = []
    head_ids, boundary_ids = cla_mod.state_labels(net)
    for i, node_id in enumerate(head_ids):
        rows.append(
            {
                "kind": "head_max_diff",
                "id": node_id,
                "estimate": float(check.per_variable_max[i]),
                "unit": "m",
            }
        )
    for k, node_id in enumerate(boundary_ids):
        rows.append(
            {
                "kind": "inflow_max_diff",
                "id": node_id,
                "estimate": float(check.per_variable_max[len(head_ids) + k]),
                "unit": "l/s",
            }
        )
    report = RunReport(
        command=_command_echo(args),
        network=_network_summary(net, args.root),
        variables=rows,
        diagnostics={
            "trials": check.trials,
            "skipped": check.skipped,
            "seed": seed,
            "max_head_diff_m": check.max_head_diff,
            "max_inflow_diff_lps": check.max_flow_diff,
            "estimator_runs": s.estimator_runs + check.estimator_runs,
        },
        timings={"perturb_check": elapsed},
    )
    return _emit(args, report)


def _cmd_dump_topology(args) -> int:
    net = _load_network(args)
    dec = build_spanning_tree(net, args.root)
    links = net.links
    out = [
        f"root: {dec.root}",
        f"tree links: {len(dec.tree_links)}, chords: {len(dec.chord_links)}, "
        f"pseudo-loops: {len(dec.pseudo_loops)}",
    ]

    def link_name(e: int) -> str:
        lk = links[e]
        return f"{lk.from_node}-{lk.to_node}"

    for row in range(dec.n_loops):
        if row < dec.n_physical_loops:
            label = f"loop[{link_name(dec.chord_links[row])}]"
        else:
            label = f"pseudo[{dec.pseudo_loops[row - dec.n_physical_loops]}]"
        members = [
            f"{'+' if dec.loop_incidence[row, e] > 0 else '-'}{link_name(e)}"
            for e in np.flatnonzero(dec.loop_incidence[row])
        ]
        out.append(f"{label}: {' '.join(members)}")
    sys.stdout.write("\n".join(out) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
