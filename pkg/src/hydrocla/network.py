"""Physical network description, file parsing, and validation.

Internal solver units are SI (m, m**3/s); network files carry demands and
meter flows in l/s, matching common practice for desk-scale networks.  Node
demands are stored as read (l/s) and converted at the solver boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

LPS_PER_M3S = 1000.0


@dataclass(frozen=True)
class Node:
    id: str
    demand_lps: float  # consumption at the node, liters/second, >= 0 in files


@dataclass(frozen=True)
class FixedHeadNode:
    id: str
    head_m: float  # may be negative (pumped sources below datum)


@dataclass(frozen=True)
class Pipe:
    from_node: str
    to_node: str
    length_m: float
    diameter_m: float
    chw: float  # Hazen-Williams roughness coefficient


@dataclass(frozen=True)
class Pump:
    """Directed link adding head ``a_p - b_p * q_lps**c_p`` along from->to.

    The curve coefficients are fitted with the flow in l/s.
    """

    from_node: str
    to_node: str
    a_p: float
    b_p: float
    c_p: float


@dataclass(frozen=True)
class Network:
    """Immutable network: nodes, links (pipes then pumps), fixed-head nodes.

    Link index space is pipes in file order followed by pumps in file order.
    """

    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...]
    pumps: tuple[Pump, ...]
    fixed_heads: tuple[FixedHeadNode, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_links(self) -> int:
        return len(self.pipes) + len(self.pumps)

    @property
    def links(self) -> tuple:
        return self.pipes + self.pumps

    def node_index(self, node_id: str) -> int:
        try:
            return self._node_pos[node_id]
        except KeyError:
            raise KeyError(f"unknown node id {node_id!r}") from None

    @property
    def _node_pos(self) -> dict:
        pos = getattr(self, "_node_pos_cache", None)
        if pos is None:
            pos = {node.id: i for i, node in enumerate(self.nodes)}
            object.__setattr__(self, "_node_pos_cache", pos)
        return pos

    def link_endpoints(self) -> list[tuple[int, int]]:
        """(from, to) node indices for every link, pipes then pumps."""
        return [
            (self.node_index(lk.from_node), self.node_index(lk.to_node))
            for lk in self.links
        ]

    def link_index(self, a: str, b: str) -> int:
        """Index of the link joining nodes ``a`` and ``b`` (either order)."""
        return self.link_index_signed(a, b)[0]

    def link_index_signed(self, a: str, b: str) -> tuple[int, float]:
        """Link index plus +1/-1 telling whether the a->b direction matches
        the link's from->to direction."""
        for i, lk in enumerate(self.links):
            if (lk.from_node, lk.to_node) == (a, b):
                return i, 1.0
            if (lk.from_node, lk.to_node) == (b, a):
                return i, -1.0
        raise KeyError(f"no link between nodes {a!r} and {b!r}")

    def demands_m3s(self) -> np.ndarray:
        return np.array([node.demand_lps for node in self.nodes]) / LPS_PER_M3S

    def fixed_head_values(self) -> np.ndarray:
        return np.array([fh.head_m for fh in self.fixed_heads])

    def fixed_head_indices(self) -> list[int]:
        return [self.node_index(fh.id) for fh in self.fixed_heads]

    def incidence_matrix(self) -> np.ndarray:
        """Node-link incidence: +1 where a link enters the node, -1 where it
        leaves.  With flows positive in the from->to direction, ``A @ q`` is
        the net pipe inflow at each node."""
        a = np.zeros((self.n_nodes, self.n_links))
        for e, (i, j) in enumerate(self.link_endpoints()):
            a[i, e] = -1.0
            a[j, e] = 1.0
        return a

    def with_fixed_heads(self, heads_m: Sequence[float]) -> "Network":
        """Copy of the network with replaced fixed-head values (same nodes)."""
        if len(heads_m) != len(self.fixed_heads):
            raise ValueError("fixed-head value count mismatch")
        new = tuple(
            replace(fh, head_m=float(h)) for fh, h in zip(self.fixed_heads, heads_m)
        )
        return replace(self, fixed_heads=new)

    def with_demands_lps(self, demands_lps: Sequence[float]) -> "Network":
        """Copy of the network with replaced nodal demands (l/s)."""
        if len(demands_lps) != self.n_nodes:
            raise ValueError("demand count mismatch")
        new = tuple(
            replace(node, demand_lps=float(d))
            for node, d in zip(self.nodes, demands_lps)
        )
        return replace(self, nodes=new)


@dataclass(frozen=True)
class HeadMeter:
    node: str
    value_m: float
    rel_precision: float  # relative half-width; 0 marks an exact meter


@dataclass(frozen=True)
class FlowMeter:
    from_node: str
    to_node: str
    value_m3s: float
    rel_precision: float


@dataclass(frozen=True)
class MeasurementSet:
    """Error bounds for pseudo-measurements and optional real meters.

    Demand bounds are relative half-widths (fraction of the observed demand);
    fixed-head bounds are absolute half-widths in meters.  ``default`` applies
    to every target without an explicit override.
    """

    demand_bound_default: float = 0.20
    demand_bound_overrides: dict = field(default_factory=dict)
    fixed_head_bound_default: float = 0.01
    fixed_head_bound_overrides: dict = field(default_factory=dict)
    head_meters: tuple[HeadMeter, ...] = ()
    flow_meters: tuple[FlowMeter, ...] = ()

    def demand_bound(self, node_id: str) -> float:
        return self.demand_bound_overrides.get(node_id, self.demand_bound_default)

    def fixed_head_bound(self, node_id: str) -> float:
        return self.fixed_head_bound_overrides.get(
            node_id, self.fixed_head_bound_default
        )

    def with_meter_values(self, head_values_m, flow_values_m3s) -> "MeasurementSet":
        """Copy with replaced meter readings (same targets and precisions)."""
        hm = tuple(
            replace(m, value_m=float(v)) for m, v in zip(self.head_meters, head_values_m)
        )
        fm = tuple(
            replace(m, value_m3s=float(v))
            for m, v in zip(self.flow_meters, flow_values_m3s)
        )
        return replace(self, head_meters=hm, flow_meters=fm)


# ---------------------------------------------------------------------------
# Parsing


def _tokenize(text: str):
    """Yield (line_number, tokens) for non-empty lines, '#' starts a comment."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


_NETWORK_SECTIONS = ("[NODES]", "[FIXED_HEADS]", "[PIPES]", "[PUMPS]")


def parse_network(text: str) -> Network:
    """Parse the sectioned network format and return a validated Network.

    Sections: ``[NODES] id demand_lps``, ``[FIXED_HEADS] id head_m``,
    ``[PIPES] from to length_m diameter_m chw``, ``[PUMPS] from to Ap Bp Cp``.
    Raises ParseError on malformed lines and ValidationError when the parsed
    data violates network invariants.
    """
    nodes: list[Node] = []
    fixed: list[FixedHeadNode] = []
    pipes: list[Pipe] = []
    pumps: list[Pump] = []
    section = None

    for lineno, tokens in _tokenize(text):
        if tokens[0].startswith("["):
            header = tokens[0]
            if header not in _NETWORK_SECTIONS:
                raise ParseError(lineno, f"unknown section {header}")
            section = header
            continue
        if section is None:
            raise ParseError(lineno, "data before any section header")
        try:
            if section == "[NODES]":
                if len(tokens) != 2:
                    raise ValueError("expected: id demand_lps")
                nodes.append(Node(tokens[0], float(tokens[1])))
            elif section == "[FIXED_HEADS]":
                if len(tokens) != 2:
                    raise ValueError("expected: id head_m")
                fixed.append(FixedHeadNode(tokens[0], float(tokens[1])))
            elif section == "[PIPES]":
                if len(tokens) != 5:
                    raise ValueError("expected: from to length_m diameter_m chw")
                pipes.append(
                    Pipe(tokens[0], tokens[1], float(tokens[2]), float(tokens[3]), float(tokens[4]))
                )
            elif section == "[PUMPS]":
                if len(tokens) != 5:
                    raise ValueError("expected: from to Ap Bp Cp")
                pumps.append(
                    Pump(tokens[0], tokens[1], float(tokens[2]), float(tokens[3]), float(tokens[4]))
                )
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None

    net = Network(tuple(nodes), tuple(pipes), tuple(pumps), tuple(fixed))
    violations = validate(net)
    if violations:
        raise ValidationError(violations)
    return net


def serialize_network(net: Network) -> str:
    """Render a Network back into the sectioned text format (round-trips)."""
    out = ["[NODES]"]
    out += [f"{n.id} {n.demand_lps!r}" for n in net.nodes]
    out.append("[FIXED_HEADS]")
    out += [f"{fh.id} {fh.head_m!r}" for fh in net.fixed_heads]
    out.append("[PIPES]")
    out += [
        f"{p.from_node} {p.to_node} {p.length_m!r} {p.diameter_m!r} {p.chw!r}"
        for p in net.pipes
    ]
    out.append("[PUMPS]")
    out += [
        f"{p.from_node} {p.to_node} {p.a_p!r} {p.b_p!r} {p.c_p!r}" for p in net.pumps
    ]
    return "\n".join(out) + "\n"


def validate(net: Network) -> list[str]:
    """All structural violations in the network; empty when it is valid."""
    violations: list[str] = []
    seen = set()
    for node in net.nodes:
        if node.id in seen:
            violations.append(f"duplicate node id {node.id!r}")
        seen.add(node.id)
        if not np.isfinite(node.demand_lps):
            violations.append(f"non-finite demand at node {node.id!r}")
        elif node.demand_lps < 0:
            violations.append(f"negative demand at node {node.id!r}")

    ids = {node.id for node in net.nodes}
    seen_fixed = set()
    for fh in net.fixed_heads:
        if fh.id not in ids:
            violations.append(f"fixed head references unknown node {fh.id!r}")
        if fh.id in seen_fixed:
            violations.append(f"duplicate fixed head at node {fh.id!r}")
        seen_fixed.add(fh.id)
        if not np.isfinite(fh.head_m):
            violations.append(f"non-finite fixed head at node {fh.id!r}")
    if not net.fixed_heads:
        violations.append("network has no fixed-head node")

    for kind, links in (("pipe", net.pipes), ("pump", net.pumps)):
        for lk in links:
            name = f"{kind} {lk.from_node}->{lk.to_node}"
            for end in (lk.from_node, lk.to_node):
                if end not in ids:
                    violations.append(f"{name} references unknown node {end!r}")
            if lk.from_node == lk.to_node:
                violations.append(f"{name} is a self-loop")
            if kind == "pipe":
                if not lk.length_m > 0:
                    violations.append(f"{name} has non-positive length")
                if not lk.diameter_m > 0:
                    violations.append(f"{name} has non-positive diameter")
                if not lk.chw > 0:
                    violations.append(f"{name} has non-positive roughness coefficient")
            else:
                if not lk.a_p > 0:
                    violations.append(f"{name} has non-positive shutoff head")
                if lk.b_p < 0:
                    violations.append(f"{name} has negative curve coefficient")
                if not lk.c_p > 0:
                    violations.append(f"{name} has non-positive curve exponent")

    if not violations:
        smaller = _smaller_disconnected_component(net)
        if smaller is not None:
            violations.append(
                "graph is disconnected; unreachable component: "
                + ", ".join(sorted(smaller))
            )
    return violations


def _smaller_disconnected_component(net: Network) -> set | None:
    if net.n_nodes == 0:
        return None
    adjacency: dict[int, list[int]] = {i: [] for i in range(net.n_nodes)}
    for i, j in net.link_endpoints():
        adjacency[i].append(j)
        adjacency[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for w in adjacency[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    if len(seen) == net.n_nodes:
        return None
    unreachable = {net.nodes[i].id for i in range(net.n_nodes) if i not in seen}
    reachable = {net.nodes[i].id for i in seen}
    return unreachable if len(unreachable) <= len(reachable) else reachable


_MEAS_SECTIONS = ("[DEMAND_BOUNDS]", "[FIXED_HEAD_BOUNDS]", "[HEAD_METERS]", "[FLOW_METERS]")


def parse_measurements(text: str, net: Network) -> MeasurementSet:
    """Parse a measurement file against ``net`` (meter targets must exist).

    Sections: ``[DEMAND_BOUNDS] default 0.20`` with per-node overrides,
    ``[FIXED_HEAD_BOUNDS] default 0.01``, ``[HEAD_METERS] node value_m
    rel_precision``, ``[FLOW_METERS] from to value_lps rel_precision``.
    """
    demand_default = 0.20
    demand_overrides: dict[str, float] = {}
    fh_default = 0.01
    fh_overrides: dict[str, float] = {}
    head_meters: list[HeadMeter] = []
    flow_meters: list[FlowMeter] = []
    section = None
    violations: list[str] = []
    fixed_ids = {fh.id for fh in net.fixed_heads}

    for lineno, tokens in _tokenize(text):
        if tokens[0].startswith("["):
            if tokens[0] not in _MEAS_SECTIONS:
                raise ParseError(lineno, f"unknown section {tokens[0]}")
            section = tokens[0]
            continue
        if section is None:
            raise ParseError(lineno, "data before any section header")
        try:
            if section in ("[DEMAND_BOUNDS]", "[FIXED_HEAD_BOUNDS]"):
                if len(tokens) != 2:
                    raise ValueError("expected: target half_width")
                target, value = tokens[0], float(tokens[1])
                if value < 0:
                    raise ValueError("half-width must be >= 0")
                if section == "[DEMAND_BOUNDS]":
                    if target == "default":
                        demand_default = value
                    else:
                        demand_overrides[target] = value
                else:
                    if target == "default":
                        fh_default = value
                    else:
                        fh_overrides[target] = value
            elif section == "[HEAD_METERS]":
                if len(tokens) != 3:
                    raise ValueError("expected: node value_m rel_precision")
                head_meters.append(HeadMeter(tokens[0], float(tokens[1]), float(tokens[2])))
            elif section == "[FLOW_METERS]":
                if len(tokens) != 4:
                    raise ValueError("expected: from to value_lps rel_precision")
                flow_meters.append(
                    FlowMeter(tokens[0], tokens[1], float(tokens[2]) / LPS_PER_M3S, float(tokens[3]))
                )
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None

    node_ids = {node.id for node in net.nodes}
    for target in demand_overrides:
        if target not in node_ids:
            violations.append(f"demand bound for unknown node {target!r}")
    for target in fh_overrides:
        if target not in fixed_ids:
            violations.append(f"fixed-head bound for non-fixed-head node {target!r}")
    for m in head_meters:
        if m.node not in node_ids:
            violations.append(f"head meter at unknown node {m.node!r}")
        if m.rel_precision < 0:
            violations.append(f"negative precision for head meter at {m.node!r}")
    for m in flow_meters:
        try:
            net.link_index(m.from_node, m.to_node)
        except KeyError:
            violations.append(f"flow meter on missing link {m.from_node}-{m.to_node}")
        if m.rel_precision < 0:
            violations.append(
                f"negative precision for flow meter {m.from_node}-{m.to_node}"
            )
    if violations:
        raise ValidationError(violations)

    return MeasurementSet(
        demand_bound_default=demand_default,
        demand_bound_overrides=demand_overrides,
        fixed_head_bound_default=fh_default,
        fixed_head_bound_overrides=fh_overrides,
        head_meters=tuple(head_meters),
        flow_meters=tuple(flow_meters),
    )
