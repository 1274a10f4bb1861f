"""Report assembly and rendering for the command-line front end.

Reports are deterministic for fixed inputs: stage timings are kept out of
the rendered report (the CLI prints them to stderr) so repeated runs emit
byte-identical output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .network import LPS_PER_M3S, Network
from .simulator import HydraulicState


@dataclass
class RunReport:
    command: str
    network: dict                      # n, p, l, f
    variables: list                    # dicts: kind, id, estimate, unit[, cl]
    diagnostics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)  # stage -> seconds, stderr only

    def has_cl(self) -> bool:
        return any("cl" in v for v in self.variables)


def state_variable_rows(net: Network, state: HydraulicState, cl_values=None) -> list:
    """One row per state variable: nodal heads then boundary inflows, the
    boundary block ordered by node appearance in the file."""
    rows = []
    for i, node in enumerate(net.nodes):
        row = {"kind": "head", "id": node.id, "estimate": float(state.heads[i]), "unit": "m"}
        if cl_values is not None:
            row["cl"] = float(cl_values[i])
        rows.append(row)
    n = net.n_nodes
    order = sorted(
        range(len(net.fixed_heads)),
        key=lambda k: net.node_index(net.fixed_heads[k].id),
    )
    for k in order:
        fh = net.fixed_heads[k]
        row = {
            "kind": "inflow",
            "id": fh.id,
            "estimate": float(state.boundary_flows[k] * LPS_PER_M3S),
            "unit": "l/s",
        }
        if cl_values is not None:
            row["cl"] = float(cl_values[n + k])
        rows.append(row)
    return rows


def render_human(report: RunReport) -> str:
    lines = [f"command: {report.command}"]
    net = report.network
    lines.append(
        f"network: n={net['n']} nodes, p={net['p']} links, "
        f"l={net['l']} loops, f={net['f']} fixed heads"
    )
    for key, value in report.diagnostics.items():
        lines.append(f"{key}: {_fmt(value)}")
    if report.variables:
        with_cl = report.has_cl()
        header = f"{'variable':<14}{'estimate':>14}"
        if with_cl:
            header += f"{'cl':>14}"
        lines.append(header)
        for row in report.variables:
            label = f"{row['kind']}[{row['id']}]"
            line = f"{label:<14}{row['estimate']:>14.6f}"
            if with_cl:
                line += f"{row.get('cl', float('nan')):>14.6f}"
            line += f"  {row['unit']}"
            lines.append(line)
    return "\n".join(lines) + "\n"


def render_json(report: RunReport) -> str:
    payload = {
        "command": report.command,
        "network": report.network,
        "diagnostics": report.diagnostics,
        "variables": report.variables,
    }
    return json.dumps(payload, indent=2) + "\n"


def render_csv(report: RunReport) -> str:
    with_cl = report.has_cl()
    header = "kind,id,estimate,unit" + (",cl" if with_cl else "")
    lines = [header]
    for row in report.variables:
        line = f"{row['kind']},{row['id']},{row['estimate']!r},{row['unit']}"
        if with_cl:
            line += f",{row.get('cl', float('nan'))!r}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, np.floating):
        return f"{float(value):.6g}"
    return str(value)
