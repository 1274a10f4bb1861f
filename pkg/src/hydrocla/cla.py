"""Confidence-limit analysis under unknown-but-bounded measurement errors.

The measurement vector stacks nodal demands, fixed-head values, and any real
head/flow meters, each with a symmetric half-width.  The state vector stacks
the nodal heads (m) and the fixed-head boundary flows (l/s).

Two methods bound the state variables over the measurement error box:

* the experimental sensitivity matrix (ESM): re-estimate once per measurement
  with that entry moved to its upper bound, assemble the finite-difference
  sensitivities, and take the worst case of the linearized response, which is
  the half-width-weighted L1 norm of each sensitivity row (1 + m estimator
  runs);

* error maximization (EM): rebuild the measurement vector from the base
  estimate, shift every entry to one bound at once, re-estimate, and take the
  absolute state difference (2 runs, 3 when both bounds are requested).

A state variable observed by a zero-half-width meter has no uncertainty by
the error model, so its confidence limit is pinned to exactly zero in both
methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.stats

from .errors import NotConverged
from .estimator import EstimateResult, estimate
from .network import LPS_PER_M3S, MeasurementSet, Network
from .simulator import HydraulicState, SolverOptions

KIND_DEMAND = "demand"
KIND_FIXED_HEAD = "fixed_head"
KIND_HEAD_METER = "head_meter"
KIND_FLOW_METER = "flow_meter"


@dataclass(frozen=True)
class BoundedMeasurementVector:
    """Measurement values with symmetric error half-widths.

    Layout: one demand entry per node (m**3/s), one entry per fixed-head node
    (m), then head meters (m) and flow meters (m**3/s).  ``targets`` carries
    the node id (or link index for flow meters) behind each entry.
    """

    values: np.ndarray
    half_widths: np.ndarray
    kinds: tuple[str, ...]
    targets: tuple

    def __post_init__(self):
        if np.any(self.half_widths < 0):
            raise ValueError("half-widths must be nonnegative")

    @property
    def size(self) -> int:
        return len(self.values)

    def shifted(self, delta: np.ndarray) -> "BoundedMeasurementVector":
        return replace(self, values=self.values + delta)

    def at_bound(self, which: str) -> "BoundedMeasurementVector":
        if which == "upper":
            return self.shifted(self.half_widths)
        if which == "lower":
            return self.shifted(-self.half_widths)
        raise ValueError(f"bound must be 'upper' or 'lower', got {which!r}")


@dataclass(frozen=True)
class SensitivityMatrix:
    """Finite-difference sensitivities of the state to each measurement.

    ``entries[i, j]`` is the change of state variable i per unit change of
    measurement j; rows follow the state vector (heads then boundary flows),
    columns the measurement vector.
    """

    entries: np.ndarray
    base_state: HydraulicState
    base_x: np.ndarray
    measurements: BoundedMeasurementVector
    net: Network
    estimator_runs: int


@dataclass(frozen=True)
class ConfidenceLimits:
    """Nonnegative half-width per state variable: heads in m, boundary flows
    in l/s."""

    values: np.ndarray
    method: str
    head_ids: tuple[str, ...]
    boundary_ids: tuple[str, ...]

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("confidence limits must be nonnegative")

    @property
    def heads(self) -> np.ndarray:
        return self.values[: len(self.head_ids)]

    @property
    def boundary_flows(self) -> np.ndarray:
        return self.values[len(self.head_ids):]

    def head(self, node_id: str) -> float:
        return float(self.heads[self.head_ids.index(node_id)])

    def boundary(self, node_id: str) -> float:
        return float(self.boundary_flows[self.boundary_ids.index(node_id)])


def bounded_measurements(
    net: Network,
    meas: MeasurementSet,
    observed_demands_m3s: np.ndarray | None = None,
) -> BoundedMeasurementVector:
    """Assemble the measurement vector for a network and its error bounds."""
    if observed_demands_m3s is None:
        observed_demands_m3s = net.demands_m3s()
    observed = np.asarray(observed_demands_m3s, dtype=float)

    values, half, kinds, targets = [], [], [], []
    for node, d in zip(net.nodes, observed):
        values.append(d)
        half.append(meas.demand_bound(node.id) * d)
        kinds.append(KIND_DEMAND)
        targets.append(node.id)
    for fh in net.fixed_heads:
        values.append(fh.head_m)
        half.append(meas.fixed_head_bound(fh.id))
        kinds.append(KIND_FIXED_HEAD)
        targets.append(fh.id)
    for m in meas.head_meters:
        values.append(m.value_m)
        half.append(m.rel_precision * abs(m.value_m))
        kinds.append(KIND_HEAD_METER)
        targets.append(m.node)
    for m in meas.flow_meters:
        values.append(m.value_m3s)
        half.append(m.rel_precision * abs(m.value_m3s))
        kinds.append(KIND_FLOW_METER)
        targets.append((m.from_node, m.to_node))
    return BoundedMeasurementVector(
        values=np.array(values),
        half_widths=np.array(half),
        kinds=tuple(kinds),
        targets=tuple(targets),
    )


def state_vector(net: Network, state: HydraulicState) -> np.ndarray:
    """Stacked state variables: nodal heads (m) then boundary flows (l/s)."""
    return np.concatenate([state.heads, state.boundary_flows * LPS_PER_M3S])


def state_labels(net: Network) -> tuple[tuple[str, ...], tuple[str, ...]]:
    return (
        tuple(node.id for node in net.nodes),
        tuple(fh.id for fh in net.fixed_heads),
    )


def _apply_measurements(
    net: Network, meas: MeasurementSet, z: BoundedMeasurementVector
):
    """Split a measurement vector back into estimator inputs."""
    n, f = net.n_nodes, len(net.fixed_heads)
    demands = z.values[:n]
    net2 = net.with_fixed_heads(z.values[n : n + f])
    nh = len(meas.head_meters)
    head_vals = z.values[n + f : n + f + nh]
    flow_vals = z.values[n + f + nh :]
    meas2 = meas.with_meter_values(head_vals, flow_vals)
    return net2, meas2, demands


def _run_estimate(net, meas, z, opts, root, on_run) -> EstimateResult:
    net2, meas2, demands = _apply_measurements(net, meas, z)
    if on_run is not None:
        on_run()
    return estimate(net2, meas2, demands, opts, root=root)


def _pin_exact_meter_rows(
    cl: np.ndarray, net: Network, z: BoundedMeasurementVector
) -> np.ndarray:
    """Zero the head rows observed by an exact (zero-half-width) head meter."""
    out = cl.copy()
    for kind, target, hw in zip(z.kinds, z.targets, z.half_widths):
        if kind == KIND_HEAD_METER and hw == 0.0:
            out[net.node_index(target)] = 0.0
    return out


def build_esm(
    net: Network,
    meas: MeasurementSet,
    observed_z: BoundedMeasurementVector,
    opts: SolverOptions = SolverOptions(),
    *,
    root: str | None = None,
    two_sided: bool = False,
    on_run=None,
) -> SensitivityMatrix:
    """Experimental sensitivity matrix around the observed measurements.

    Column j is the state response to moving measurement j to its upper
    bound, divided by the half-width; zero-half-width columns stay zero.
    ``two_sided=True`` switches to central differences (validation only, at
    twice the cost).  Total estimator runs: 1 + count of perturbable
    measurements (doubled when two-sided).
    """
    base = _run_estimate(net, meas, observed_z, opts, root, on_run)
    x_base = state_vector(net, base.state)
    runs = 1

    entries = np.zeros((x_base.size, observed_z.size))
    for j in range(observed_z.size):
        hw = observed_z.half_widths[j]
        if hw == 0.0:
            continue
        delta = np.zeros(observed_z.size)
        delta[j] = hw
        try:
            up = _run_estimate(net, meas, observed_z.shifted(delta), opts, root, on_run)
            runs += 1
            if two_sided:
                down = _run_estimate(
                    net, meas, observed_z.shifted(-delta), opts, root, on_run
                )
                runs += 1
                diff = state_vector(net, up.state) - state_vector(net, down.state)
                entries[:, j] = diff / (2.0 * hw)
            else:
                entries[:, j] = (state_vector(net, up.state) - x_base) / hw
        except NotConverged as exc:
            raise NotConverged(
                exc.iterations,
                exc.residual,
                f"ESM perturbation of measurement {j} ({observed_z.kinds[j]} "
                f"{observed_z.targets[j]})",
            ) from exc

    return SensitivityMatrix(
        entries=entries,
        base_state=base.state,
        base_x=x_base,
        measurements=observed_z,
        net=net,
        estimator_runs=runs,
    )


def cla_from_esm(
    s: SensitivityMatrix, half_widths: np.ndarray | None = None
) -> ConfidenceLimits:
    """Worst-case linearized state deviation over the measurement error box.

    The maximum of ``row . delta`` over ``|delta_j| <= half_width_j`` is the
    L1 aggregation ``sum_j |s_ij| * half_width_j``, so the limits scale
    exactly linearly with the half-widths.
    """
    if half_widths is None:
        half_widths = s.measurements.half_widths
    half_widths = np.asarray(half_widths, dtype=float)
    if half_widths.shape != (s.entries.shape[1],):
        raise ValueError("half-width vector length mismatch")
    cl = np.abs(s.entries) @ half_widths
    boxed = replace(s.measurements, half_widths=half_widths)
    cl = _pin_exact_meter_rows(cl, s.net, boxed)
    head_ids, boundary_ids = state_labels(s.net)
    return ConfidenceLimits(
        values=cl, method="esm", head_ids=head_ids, boundary_ids=boundary_ids
    )


@dataclass(frozen=True)
class PerturbationCheck:
    """Comparison of estimator responses with ESM linear predictions over
    random in-box measurement perturbations."""

    trials: int
    skipped: int
    per_variable_max: np.ndarray     # max |estimator - linear| per state row
    max_head_diff: float             # m
    max_flow_diff: float             # l/s
    estimator_runs: int


def random_perturbation_check(
    net: Network,
    meas: MeasurementSet,
    observed_z: BoundedMeasurementVector,
    s: SensitivityMatrix,
    trials: int,
    seed: int,
    opts: SolverOptions = SolverOptions(),
    *,
    root: str | None = None,
    on_run=None,
) -> PerturbationCheck:
    """Draw uniform perturbations inside the error box and compare the
    re-estimated state change against the ESM prediction ``S @ delta``.

    The generator is counter-based (Philox, 64-bit), so a seed fixes the
    whole experiment.  Trials whose estimation fails to converge are skipped
    and counted.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    n = net.n_nodes
    per_var = np.zeros(s.entries.shape[0])
    skipped = 0
    runs = 0
    for _ in range(trials):
        delta = rng.uniform(-s.measurements.half_widths, s.measurements.half_widths)
        try:
            result = _run_estimate(net, meas, observed_z.shifted(delta), opts, root, on_run)
            runs += 1
        except NotConverged:
            skipped += 1
            continue
        dx_estimator = state_vector(net, result.state) - s.base_x
        dx_linear = s.entries @ delta
        per_var = np.maximum(per_var, np.abs(dx_estimator - dx_linear))
    return PerturbationCheck(
        trials=trials,
        skipped=skipped,
        per_variable_max=per_var,
        max_head_diff=float(per_var[:n].max(initial=0.0)),
        max_flow_diff=float(per_var[n:].max(initial=0.0)),
        estimator_runs=runs,
    )


@dataclass(frozen=True)
class EmResult:
    """Error-maximization output: one or two confidence-limit sets."""

    upper: ConfidenceLimits | None
    lower: ConfidenceLimits | None
    base: EstimateResult
    p_value: float | None            # paired t-test between the two sets
    estimator_runs: int

    @property
    def primary(self) -> ConfidenceLimits:
        cl = self.upper if self.upper is not None else self.lower
        assert cl is not None
        return cl


def em_confidence_limits(
    net: Network,
    meas: MeasurementSet,
    observed_z: BoundedMeasurementVector,
    bound_choice: str = "upper",
    opts: SolverOptions = SolverOptions(),
    *,
    root: str | None = None,
    on_run=None,
) -> EmResult:
    """Error-maximization confidence limits.

    The estimated measurement vector is rebuilt from the base estimate
    (adjusted demands, fixed heads, and meter readings re-predicted from the
    estimated state), shifted entirely to one error bound, and re-estimated;
    the confidence limits are the absolute state differences.  Relative
    bounds are converted to half-widths at the estimated values.
    """
    if bound_choice not in ("upper", "lower", "both"):
        raise ValueError(f"bound_choice must be upper|lower|both, got {bound_choice!r}")
    base = _run_estimate(net, meas, observed_z, opts, root, on_run)
    x_base = state_vector(net, base.state)
    runs = 1

    z_hat = _estimated_measurements(net, meas, base)

    def one_side(which: str) -> ConfidenceLimits:
        shifted = z_hat.at_bound(which)
        result = _run_estimate(net, meas, shifted, opts, root, on_run)
        cl = np.abs(state_vector(net, result.state) - x_base)
        cl = _pin_exact_meter_rows(cl, net, z_hat)
        head_ids, boundary_ids = state_labels(net)
        return ConfidenceLimits(
            values=cl,
            method=f"em_{which}",
            head_ids=head_ids,
            boundary_ids=boundary_ids,
        )

    upper = lower = None
    if bound_choice in ("upper", "both"):
        upper = one_side("upper")
        runs += 1
    if bound_choice in ("lower", "both"):
        lower = one_side("lower")
        runs += 1
    p_value = None
    if bound_choice == "both":
        p_value = paired_symmetry_test(upper.values, lower.values)
    return EmResult(
        upper=upper, lower=lower, base=base, p_value=p_value, estimator_runs=runs
    )


def _estimated_measurements(
    net: Network, meas: MeasurementSet, base: EstimateResult
) -> BoundedMeasurementVector:
    """Measurement vector predicted by the estimated state, with half-widths
    re-evaluated at the predicted values."""
    values, half, kinds, targets = [], [], [], []
    d_hat = base.adjusted_demands_m3s
    for node, d in zip(net.nodes, d_hat):
        values.append(d)
        half.append(meas.demand_bound(node.id) * d)
        kinds.append(KIND_DEMAND)
        targets.append(node.id)
    for fh in net.fixed_heads:
        values.append(base.state.heads[net.node_index(fh.id)])
        half.append(meas.fixed_head_bound(fh.id))
        kinds.append(KIND_FIXED_HEAD)
        targets.append(fh.id)
    for m in meas.head_meters:
        pred = base.state.heads[net.node_index(m.node)]
        values.append(pred)
        half.append(m.rel_precision * abs(pred))
        kinds.append(KIND_HEAD_METER)
        targets.append(m.node)
    for m in meas.flow_meters:
        pred = base.state.flows[net.link_index(m.from_node, m.to_node)]
        values.append(pred)
        half.append(m.rel_precision * abs(pred))
        kinds.append(KIND_FLOW_METER)
        targets.append((m.from_node, m.to_node))
    return BoundedMeasurementVector(
        values=np.array(values),
        half_widths=np.array(half),
        kinds=tuple(kinds),
        targets=tuple(targets),
    )


def paired_symmetry_test(cl_a: np.ndarray, cl_b: np.ndarray) -> float:
    """Two-sided paired t-test p-value between two confidence-limit sets.

    Identical sets (zero-variance differences) count as perfectly symmetric
    and return p = 1.0.
    """
    diff = np.asarray(cl_a, dtype=float) - np.asarray(cl_b, dtype=float)
    if diff.size < 2 or float(np.std(diff)) == 0.0:
        return 1.0
    stat = scipy.stats.ttest_rel(cl_a, cl_b)
    p = float(stat.pvalue)
    return 1.0 if math.isnan(p) else p


@dataclass(frozen=True)
class MeterPlacementReport:
    """Per-variable confidence-limit change after adding meters."""

    tightening: np.ndarray           # baseline - with_meter, per state row
    worsened: tuple[str, ...]        # variables whose limit grew beyond tol
    head_ids: tuple[str, ...]
    boundary_ids: tuple[str, ...]


def meter_placement_report(
    baseline: ConfidenceLimits,
    with_meter: ConfidenceLimits,
    tol: float = 1e-9,
) -> MeterPlacementReport:
    """Elementwise tightening of confidence limits after a meter placement,
    flagging any variable whose limit increased by more than ``tol``."""
    if baseline.head_ids != with_meter.head_ids or baseline.boundary_ids != with_meter.boundary_ids:
        raise ValueError("confidence-limit sets describe different networks")
    deltas = baseline.values - with_meter.values
    labels = [f"head[{i}]" for i in baseline.head_ids] + [
        f"inflow[{i}]" for i in baseline.boundary_ids
    ]
    worsened = tuple(
        label for label, d in zip(labels, deltas) if d < -tol
    )
    return MeterPlacementReport(
        tightening=deltas,
        worsened=worsened,
        head_ids=baseline.head_ids,
        boundary_ids=baseline.boundary_ids,
    )
