"""Link head-loss laws, pump curves, derivatives, and loop residuals.

Pipes follow the Hazen-Williams law in SI form,

    h = k * |q|**(s-1) * q,    k = 10.67 * L / (C**1.852 * D**4.8704),

with q in m**3/s, h in m and s = 1.852.  Pump curves are fitted with the
flow in l/s (their coefficient magnitudes only make sense on that scale), so
the gain is evaluated at 1000*q.  A pump contributes a negative head change
(a gain) along its from->to direction; reverse flow is clamped at zero flow
with the gain held at the shutoff head.

The |q|**(s-1) derivative vanishes at q = 0, which would make the loop
Jacobian singular; derivatives are floored at their value for
|q| = FLOW_EPS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network, Pipe, Pump
from .topology import TreeDecomposition

HW_EXPONENT = 1.852
HW_CONSTANT = 10.67
HW_DIAMETER_EXPONENT = 4.8704
FLOW_EPS = 1e-6  # m**3/s, regularization scale for the q -> 0 singularity
PUMP_DERIV_FLOOR = 1e-8  # m/(m**3/s), keeps flat pump curves off exact zero


def pipe_resistance(pipe: Pipe) -> float:
    """Hazen-Williams resistance coefficient k in SI units."""
    return (
        HW_CONSTANT
        * pipe.length_m
        / (pipe.chw**HW_EXPONENT * pipe.diameter_m**HW_DIAMETER_EXPONENT)
    )


def pipe_head_loss(pipe: Pipe, q_m3s: float) -> float:
    """Signed head loss across a pipe; odd in the flow."""
    k = pipe_resistance(pipe)
    return k * abs(q_m3s) ** (HW_EXPONENT - 1.0) * q_m3s


def head_loss_derivative(pipe: Pipe, q_m3s: float, flow_eps: float = FLOW_EPS) -> float:
    """d(head loss)/d(flow); even in the flow and floored near q = 0."""
    k = pipe_resistance(pipe)
    q_eff = max(abs(q_m3s), flow_eps)
    return HW_EXPONENT * k * q_eff ** (HW_EXPONENT - 1.0)


def pump_head_gain(pump: Pump, q_m3s: float) -> float:
    """Head added by a pump at flow q (m**3/s); the curve is fitted in l/s.

    Zero flow returns the shutoff head a_p exactly; negative flow is clamped
    to the zero-flow point (check valves are out of scope).
    """
    q_lps = 1000.0 * max(q_m3s, 0.0)
    return pump.a_p - pump.b_p * q_lps**pump.c_p


def pump_gain_derivative(pump: Pump, q_m3s: float, flow_eps: float = FLOW_EPS) -> float:
    """d(gain)/d(flow), evaluated at |q| floored to ``flow_eps``; <= 0."""
    q_lps = 1000.0 * max(q_m3s, flow_eps)
    return -pump.b_p * pump.c_p * 1000.0 * q_lps ** (pump.c_p - 1.0)


@dataclass(frozen=True)
class LinkHydraulics:
    """Vectorized head-change law for all links of one network.

    ``head_change(q)`` is the signed head drop along each link's from->to
    direction (pumps contribute a negative drop); ``derivative(q)`` is its
    flow derivative, strictly positive after regularization.
    """

    is_pump: np.ndarray
    k: np.ndarray      # pipe resistance, zero on pump entries
    a_p: np.ndarray
    b_p: np.ndarray
    c_p: np.ndarray
    flow_eps: float = FLOW_EPS

    @classmethod
    def from_network(cls, net: Network, flow_eps: float = FLOW_EPS) -> "LinkHydraulics":
        p = net.n_links
        is_pump = np.zeros(p, dtype=bool)
        k = np.zeros(p)
        a_p = np.zeros(p)
        b_p = np.zeros(p)
        c_p = np.ones(p)
        for e, pipe in enumerate(net.pipes):
            k[e] = pipe_resistance(pipe)
        for m, pump in enumerate(net.pumps):
            e = len(net.pipes) + m
            is_pump[e] = True
            a_p[e] = pump.a_p
            b_p[e] = pump.b_p
            c_p[e] = pump.c_p
        return cls(is_pump=is_pump, k=k, a_p=a_p, b_p=b_p, c_p=c_p, flow_eps=flow_eps)

    def head_change(self, flows_m3s: np.ndarray) -> np.ndarray:
        q = np.asarray(flows_m3s, dtype=float)
        h = self.k * np.abs(q) ** (HW_EXPONENT - 1.0) * q
        if self.is_pump.any():
            q_lps = 1000.0 * np.maximum(q[self.is_pump], 0.0)
            gain = self.a_p[self.is_pump] - self.b_p[self.is_pump] * q_lps ** self.c_p[self.is_pump]
            h[self.is_pump] = -gain
        return h

    def derivative(self, flows_m3s: np.ndarray) -> np.ndarray:
        q = np.asarray(flows_m3s, dtype=float)
        q_eff = np.maximum(np.abs(q), self.flow_eps)
        d = HW_EXPONENT * self.k * q_eff ** (HW_EXPONENT - 1.0)
        if self.is_pump.any():
            pumps = self.is_pump
            q_lps = 1000.0 * np.maximum(q[pumps], self.flow_eps)
            d_pump = self.b_p[pumps] * self.c_p[pumps] * 1000.0 * q_lps ** (self.c_p[pumps] - 1.0)
            d[pumps] = np.maximum(d_pump, PUMP_DERIV_FLOOR)
        return d


def loop_residuals(
    dec: TreeDecomposition,
    hyd: LinkHydraulics,
    flows_m3s: np.ndarray,
    fixed_heads_m: np.ndarray,
) -> np.ndarray:
    """Head-closure residual of every loop at the given flows.

    Physical-loop rows sum the signed link head changes around the cycle and
    vanish at equilibrium.  A pseudo-loop row sums the head changes along the
    tree path from its fixed-head node to the root and subtracts the known
    drop ``H_fixed - H_root``, so it too vanishes when the propagated head at
    the fixed-head node matches its boundary value.

    ``fixed_heads_m`` follows ``dec.net.fixed_heads`` order.
    """
    h = hyd.head_change(np.asarray(flows_m3s, dtype=float))
    res = dec.loop_incidence @ h
    fixed_by_id = {
        fh.id: float(v) for fh, v in zip(dec.net.fixed_heads, fixed_heads_m)
    }
    root_head = fixed_by_id[dec.root]
    for k, fh_id in enumerate(dec.pseudo_loops):
        res[dec.n_physical_loops + k] -= fixed_by_id[fh_id] - root_head
    return res


def loop_jacobian(
    dec: TreeDecomposition, hyd: LinkHydraulics, flows_m3s: np.ndarray
) -> np.ndarray:
    """Jacobian of the loop residuals w.r.t. the loop corrective flows:
    M diag(h') M^T, symmetric with positive diagonal."""
    d = hyd.derivative(np.asarray(flows_m3s, dtype=float))
    m = dec.loop_incidence
    return (m * d) @ m.T
