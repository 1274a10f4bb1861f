"""Steady-state solution by damped Newton iteration on loop corrective flows.

Starting from tree flows that satisfy continuity exactly, every Newton update
adds circulations (chord loops) and source-to-source transfers (pseudo
loops), so mass balance is preserved by construction and the iteration only
has to close the loop head residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotConverged
from .hydraulics import LinkHydraulics, loop_jacobian, loop_residuals
from .linalg import solve_dense_linear
from .network import LPS_PER_M3S, Network
from .topology import TreeDecomposition, build_spanning_tree, initial_tree_flows


@dataclass(frozen=True)
class SolverOptions:
    tol_loop_residual: float = 1e-6   # m, convergence on the loop residuals
    max_iters: int = 100
    damping: int = 10                 # max step halvings per iteration
    tol_step: float = 1e-12           # m**3/s, estimator step-size stop
    flow_eps: float = 1e-6            # m**3/s, derivative regularization
    max_step_m3s: float = 0.5         # trust cap on one loop-flow update


@dataclass
class HydraulicState:
    """Converged network state.

    ``flows`` (m**3/s) follow the network link order; ``heads`` (m) the node
    order, with fixed-head nodes pinned to their boundary values exactly;
    ``boundary_flows`` (m**3/s, inflow positive) follow ``net.fixed_heads``
    order and sum to the total demand.
    """

    flows: np.ndarray
    heads: np.ndarray
    boundary_flows: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    @property
    def boundary_flows_lps(self) -> np.ndarray:
        return self.boundary_flows * LPS_PER_M3S


def heads_from_flows(
    dec: TreeDecomposition,
    hyd: LinkHydraulics,
    flows_m3s: np.ndarray,
    fixed_heads_m: np.ndarray,
) -> np.ndarray:
    """Propagate heads from the root down the tree: child head = parent head
    minus the signed head change of the connecting link.

    At convergence the propagated head at every non-root fixed-head node
    reproduces its boundary value to within the loop tolerance.
    """
    net = dec.net
    h = hyd.head_change(np.asarray(flows_m3s, dtype=float))
    endpoints = net.link_endpoints()
    heads = np.zeros(net.n_nodes)
    root_idx = net.node_index(dec.root)
    fixed_by_id = {fh.id: float(v) for fh, v in zip(net.fixed_heads, fixed_heads_m)}
    heads[root_idx] = fixed_by_id[dec.root]
    for k, v in enumerate(dec.node_order[1:]):
        link = dec.tree_links[k]
        u = dec.parent[v]
        i, _ = endpoints[link]
        sign = 1.0 if i == u else -1.0  # +1 when the link runs parent -> child
        heads[v] = heads[u] - sign * h[link]
    return heads


def simulate(
    net: Network,
    demands_m3s: np.ndarray | None = None,
    opts: SolverOptions = SolverOptions(),
    root: str | None = None,
    dec: TreeDecomposition | None = None,
) -> HydraulicState:
    """Solve the network for the given demands (default: the file demands).

    Newton iteration on the loop corrective flows with step halving whenever
    the residual norm fails to decrease; converged when the max loop residual
    drops below ``opts.tol_loop_residual`` meters.
    """
    if dec is None:
        dec = build_spanning_tree(net, root)
    if demands_m3s is None:
        demands_m3s = net.demands_m3s()
    demands_m3s = np.asarray(demands_m3s, dtype=float)
    hyd = LinkHydraulics.from_network(net, flow_eps=opts.flow_eps)
    fixed_heads = net.fixed_head_values()

    q_init = initial_tree_flows(dec, demands_m3s)
    loop_flows, flows, iterations, res_norm = newton_loop_flows(
        dec, hyd, q_init, fixed_heads, opts
    )
    return _assemble_state(dec, hyd, demands_m3s, flows, loop_flows,
                           fixed_heads, iterations, res_norm)


def newton_loop_flows(
    dec: TreeDecomposition,
    hyd: LinkHydraulics,
    q_init: np.ndarray,
    fixed_heads_m: np.ndarray,
    opts: SolverOptions,
    loop_flows0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Damped Newton on the loop corrective flows from the given tree flows.

    The update is capped at a trust radius (far from the solution the
    Jacobian can be nearly flat along pump-dominated loops, making raw Newton
    steps enormous) and accepted when the l2 residual norm decreases, halving
    up to the damping limit; convergence is judged on the max loop residual.
    Returns ``(loop_flows, flows, iterations, residual_norm)``.
    """
    if loop_flows0 is None:
        loop_flows = np.zeros(dec.n_loops)
    else:
        loop_flows = np.asarray(loop_flows0, dtype=float).copy()
    flows = q_init + dec.loop_incidence.T @ loop_flows
    res = loop_residuals(dec, hyd, flows, fixed_heads_m)
    res_max = float(np.abs(res).max()) if res.size else 0.0
    res_two = float(np.linalg.norm(res))
    cap = max(opts.max_step_m3s, 2.0 * float(np.abs(q_init).sum()))

    iterations = 0
    while res_max > opts.tol_loop_residual:
        if iterations >= opts.max_iters:
            raise NotConverged(iterations, res_max, "loop simulation")
        jac = loop_jacobian(dec, hyd, flows)
        step = solve_dense_linear(jac, res)
        step_max = float(np.abs(step).max())
        if step_max > cap:
            step *= cap / step_max
        accepted = False
        for _ in range(opts.damping + 1):
            trial = loop_flows - step
            trial_flows = q_init + dec.loop_incidence.T @ trial
            trial_res = loop_residuals(dec, hyd, trial_flows, fixed_heads_m)
            trial_two = float(np.linalg.norm(trial_res))
            if trial_two < res_two:
                accepted = True
                break
            step = step / 2.0
        if not accepted:
            raise NotConverged(iterations, res_max, "loop simulation (stalled)")
        loop_flows, flows, res = trial, trial_flows, trial_res
        res_two = trial_two
        res_max = float(np.abs(res).max())
        iterations += 1
    return loop_flows, flows, iterations, res_max


def _assemble_state(dec, hyd, demands_m3s, flows, loop_flows, fixed_heads,
                    iterations, res_norm) -> HydraulicState:
    net = dec.net
    heads = heads_from_flows(dec, hyd, flows, fixed_heads)
    for fh, value in zip(net.fixed_heads, fixed_heads):
        heads[net.node_index(fh.id)] = value

    # a positive pseudo-loop flow moves water from its fixed-head node toward
    # the root, i.e. it is that node's boundary inflow; the root closes the
    # global balance
    boundary = np.zeros(len(net.fixed_heads))
    pseudo_by_id = {
        fh_id: loop_flows[dec.n_physical_loops + k]
        for k, fh_id in enumerate(dec.pseudo_loops)
    }
    net_inflow = net.incidence_matrix() @ flows
    for k, fh in enumerate(net.fixed_heads):
        if fh.id == dec.root:
            idx = net.node_index(fh.id)
            boundary[k] = demands_m3s[idx] - net_inflow[idx]
        else:
            boundary[k] = pseudo_by_id[fh.id]
    return HydraulicState(
        flows=flows,
        heads=heads,
        boundary_flows=boundary,
        iterations=iterations,
        residual=res_norm,
    )
