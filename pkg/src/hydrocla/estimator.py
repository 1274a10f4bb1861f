"""Least-squares state estimation on loop corrective flows and demand
variations.

The independent variables are the loop corrective flows and, per node, the
variation of its demand away from the observed value.  Flows are always
parameterized as

    Q = Q_tree(observed demands) - R @ delta_d + M^T @ loop_flows

where R routes a demand variation through the tree to the node that consumes
it, so nodal continuity holds for the adjusted demands at every step and the
Gauss-Newton iteration only trades off loop closure, demand priors, and meter
mismatches.  Demand variations at fixed-head nodes are not routed anywhere:
the local reservoir absorbs them, which is why the boundary inflow at a
fixed-head node is its pseudo-loop corrective flow minus its demand
variation.

Weights make the stated error bounds act as standard deviations: demand rows
carry 1/(bound in m**3/s), meter rows 1/(half-width in natural units), and a
zero-half-width meter gets weight 1e8, which pins the estimate to the reading
within ~1e-6 of its unit.  Loop-closure rows are weighted heavily so that
hydraulics acts as a near-hard constraint (a meter can only be honored by
adjusting demands, never by leaving the feasible manifold), and after the
iteration the loop flows are re-solved exactly at the estimated demand
adjustments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotConverged
from .hydraulics import LinkHydraulics, loop_residuals
from .linalg import solve_linear_least_squares
from .network import LPS_PER_M3S, MeasurementSet, Network
from .simulator import (
    HydraulicState,
    SolverOptions,
    heads_from_flows,
    newton_loop_flows,
)
from .topology import TreeDecomposition, build_spanning_tree, initial_tree_flows

EXACT_METER_WEIGHT = 1e8

# Hydraulics is a constraint, not a preference: loop-closure rows enter the
# stacked residual at this weight (heavier makes Gauss-Newton needlessly
# stiff), and the converged loop flows are then re-solved exactly at the
# estimated demand adjustments, so final closure is at solver tolerance no
# matter how the soft trade-off settled.
LOOP_CONSTRAINT_WEIGHT = 1e4


@dataclass
class EstimatorState:
    delta_q: np.ndarray      # loop corrective flows, m**3/s
    delta_d: np.ndarray      # demand variations for all nodes, m**3/s
    converged: bool
    iterations: int
    objective: float         # final 2-norm of the stacked residual


@dataclass
class EstimateResult:
    """Estimation output: the hydraulic state plus demand adjustments.

    ``adjusted_demands_lps`` holds the clamped demands d - delta_d in l/s;
    ``clamped_nodes`` lists nodes whose adjustment went negative, which
    triggers the second-pass simulation.
    """

    state: HydraulicState
    estimator: EstimatorState
    adjusted_demands_lps: np.ndarray
    clamped_nodes: frozenset
    second_pass_used: bool
    loop_residual: float     # m, loop closure of the first-pass solution

    @property
    def adjusted_demands_m3s(self) -> np.ndarray:
        return self.adjusted_demands_lps / LPS_PER_M3S


def adjust_demands(observed_m3s: np.ndarray, delta_d_m3s: np.ndarray):
    """Clamped demand update: ``max(observed - delta_d, 0)`` plus the index
    set of entries that went negative."""
    observed_m3s = np.asarray(observed_m3s, dtype=float)
    delta_d_m3s = np.asarray(delta_d_m3s, dtype=float)
    raw = observed_m3s - delta_d_m3s
    clamped = np.flatnonzero(raw < 0.0)
    return np.maximum(raw, 0.0), clamped


def extract_boundary_flows(
    dec: TreeDecomposition,
    est: EstimatorState,
    flows_m3s: np.ndarray,
    observed_demands_m3s: np.ndarray,
) -> np.ndarray:
    """Boundary in/out flow (m**3/s, inflow positive) at each fixed-head node.

    Non-root nodes: pseudo-loop corrective flow minus the local demand
    variation.  The root closes the global mass balance.
    """
    net = dec.net
    pseudo = {
        fh_id: est.delta_q[dec.n_physical_loops + k]
        for k, fh_id in enumerate(dec.pseudo_loops)
    }
    net_inflow = net.incidence_matrix() @ flows_m3s
    boundary = np.zeros(len(net.fixed_heads))
    for k, fh in enumerate(net.fixed_heads):
        idx = net.node_index(fh.id)
        if fh.id == dec.root:
            d_f = observed_demands_m3s[idx] - est.delta_d[idx]
            boundary[k] = d_f - net_inflow[idx]
        else:
            boundary[k] = pseudo[fh.id] - est.delta_d[idx]
    return boundary


def estimate(
    net: Network,
    meas: MeasurementSet,
    observed_demands_m3s: np.ndarray | None = None,
    opts: SolverOptions = SolverOptions(),
    root: str | None = None,
    dec: TreeDecomposition | None = None,
) -> EstimateResult:
    """Gauss-Newton estimation of the network state from observed demands,
    fixed heads, and any mix of head/flow meters.

    The stacked residual is [loop residuals; weighted demand variations;
    weighted meter mismatches].  Nodes whose demand bound works out to zero
    keep their variation frozen at zero.  When the adjusted demands go
    negative anywhere they are clamped and a second-pass loop simulation with
    the clamped demands produces the reported state.
    """
    if dec is None:
        dec = build_spanning_tree(net, root)
    if observed_demands_m3s is None:
        observed_demands_m3s = net.demands_m3s()
    observed = np.asarray(observed_demands_m3s, dtype=float)
    if observed.shape != (net.n_nodes,):
        raise ValueError("observed demand vector length mismatch")
    if np.any(observed < 0):
        raise ValueError("observed demands must be nonnegative")

    hyd = LinkHydraulics.from_network(net, flow_eps=opts.flow_eps)
    fixed_heads = net.fixed_head_values()
    n, n_loops = net.n_nodes, dec.n_loops

    # free demand-variation variables and their prior weights
    bounds = np.array(
        [meas.demand_bound(node.id) for node in net.nodes]
    ) * observed
    free = np.flatnonzero(bounds > 0.0)
    w_d = 1.0 / bounds[free]

    # flow response of the variables: columns are [-routing of delta_d, M^T];
    # fixed-head nodes get a zero routing column (the reservoir absorbs their
    # demand variation)
    fixed_idx = set(net.fixed_head_indices())
    pos = {v: k for k, v in enumerate(dec.node_order)}
    route = np.zeros((net.n_links, len(free)))
    for col, v in enumerate(free):
        if v not in fixed_idx:
            route[:, col] = dec.a_star[:, pos[v] - 1]
    flow_jac = np.hstack([-route, dec.loop_incidence.T])  # p x (nf + l)

    head_meters = []
    for m in meas.head_meters:
        half = m.rel_precision * abs(m.value_m)
        w = EXACT_METER_WEIGHT if half == 0.0 else 1.0 / half
        head_meters.append((net.node_index(m.node), m.value_m, w))
    flow_meters = []
    for m in meas.flow_meters:
        link = net.link_index(m.from_node, m.to_node)
        half = m.rel_precision * abs(m.value_m3s)
        w = EXACT_METER_WEIGHT if half == 0.0 else 1.0 / half
        flow_meters.append((link, m.value_m3s, w))
    # signed tree-path indicators: head at node v is the root head plus the
    # path row dotted with the link head changes
    meter_paths = [dec.tree_path_row(idx) for idx, _, _ in head_meters]

    q_init = initial_tree_flows(dec, observed)
    nf = len(free)

    def flows_of(theta: np.ndarray) -> np.ndarray:
        return q_init + flow_jac @ theta

    w_loop = LOOP_CONSTRAINT_WEIGHT

    def residual(theta: np.ndarray) -> np.ndarray:
        q = flows_of(theta)
        parts = [w_loop * loop_residuals(dec, hyd, q, fixed_heads), w_d * theta[:nf]]
        if head_meters:
            heads = heads_from_flows(dec, hyd, q, fixed_heads)
            parts.append(
                np.array([w * (heads[idx] - z) for idx, z, w in head_meters])
            )
        if flow_meters:
            parts.append(np.array([w * (q[link] - z) for link, z, w in flow_meters]))
        return np.concatenate(parts)

    def jacobian(theta: np.ndarray) -> np.ndarray:
        q = flows_of(theta)
        dh = hyd.derivative(q)
        rows = [
            w_loop * (dec.loop_incidence * dh) @ flow_jac,
            np.hstack([np.diag(w_d), np.zeros((nf, n_loops))]),
        ]
        for (idx, _, w), path in zip(head_meters, meter_paths):
            rows.append((w * (path * dh) @ flow_jac)[None, :])
        for link, _, w in flow_meters:
            rows.append((w * flow_jac[link])[None, :])
        return np.vstack(rows)

    # warm start on the loop-simulation solution for the observed demands;
    # with no meters this is already the optimum
    warm_loops, _, _, _ = newton_loop_flows(dec, hyd, q_init, fixed_heads, opts)
    theta = np.concatenate([np.zeros(nf), warm_loops])

    res = residual(theta)
    objective = float(np.linalg.norm(res))
    converged = False
    iterations = 0
    while True:
        jac = jacobian(theta)
        # exact meters put 1e8-weighted rows into the system; the resulting
        # singular-value spread (~1e-11 of max) is still far above genuine
        # rank deficiency, so the step solve uses a tighter cutoff than the
        # default 1e-10
        step = solve_linear_least_squares(jac, -res, rank_rtol=1e-14)
        step_size = float(np.abs(step).max(initial=0.0))
        if step_size <= opts.tol_step:
            converged = True
            break
        if iterations >= opts.max_iters:
            raise NotConverged(iterations, objective, "state estimation")
        accepted = False
        for _ in range(opts.damping + 1):
            trial = theta + step
            trial_res = residual(trial)
            trial_obj = float(np.linalg.norm(trial_res))
            if trial_obj < objective:
                accepted = True
                break
            step = step / 2.0
        if not accepted:
            # stalled at the numerical floor: fine if the proposed step was
            # already negligible, an error otherwise
            if step_size <= 1e3 * opts.tol_step:
                converged = True
                break
            raise NotConverged(iterations, objective, "state estimation (stalled)")
        theta, res, objective = trial, trial_res, trial_obj
        iterations += 1

    # feasibility polish: hold the demand adjustments and close the loops
    # exactly, so every reported state is hydraulically consistent
    q_base = q_init - route @ theta[:nf]
    delta_q, flows, _, _ = newton_loop_flows(
        dec, hyd, q_base, fixed_heads, opts, loop_flows0=theta[nf:]
    )
    theta = np.concatenate([theta[:nf], delta_q])

    delta_d = np.zeros(n)
    delta_d[free] = theta[:nf]
    est = EstimatorState(
        delta_q=delta_q,
        delta_d=delta_d,
        converged=converged,
        iterations=iterations,
        objective=objective,
    )

    loop_res = loop_residuals(dec, hyd, flows, fixed_heads)
    loop_res_norm = float(np.abs(loop_res).max()) if loop_res.size else 0.0
    adjusted, clamped_idx = adjust_demands(observed, delta_d)
    clamped_nodes = frozenset(net.nodes[i].id for i in clamped_idx)

    if clamped_nodes:
        # negative adjusted demands are residuals of the estimation; rerun a
        # plain simulation with them zeroed
        from .simulator import simulate

        state = simulate(net, adjusted, opts, dec=dec)
        second_pass = True
    else:
        heads = heads_from_flows(dec, hyd, flows, fixed_heads)
        for fh, value in zip(net.fixed_heads, fixed_heads):
            heads[net.node_index(fh.id)] = value
        boundary = extract_boundary_flows(dec, est, flows, observed)
        state = HydraulicState(
            flows=flows,
            heads=heads,
            boundary_flows=boundary,
            iterations=iterations,
            residual=loop_res_norm,
        )
        second_pass = False

    return EstimateResult(
        state=state,
        estimator=est,
        adjusted_demands_lps=adjusted * LPS_PER_M3S,
        clamped_nodes=clamped_nodes,
        second_pass_used=second_pass,
        loop_residual=loop_res_norm,
    )
