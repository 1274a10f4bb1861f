"""Spanning-tree decomposition and the loop incidence machinery.

A depth-first spanning tree rooted at a fixed-head node splits the links into
tree links and chords.  Each chord closes one physical loop; each non-root
fixed-head node contributes one pseudo-loop along its tree path to the root,
so the loop count is ``l = (p - n + 1) + (f - 1)``.

Renumbering nodes in DFS preorder (root first) and pairing the i-th non-root
node with its parent link makes the reduced tree incidence matrix upper
triangular, which turns the initial tree-flow solve into back-substitution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NotConnected, RootNotFixedHead
from .network import Network


@dataclass(frozen=True)
class TreeDecomposition:
    """Spanning tree, loop rows, and index bookkeeping for one network.

    Loop-incidence columns use the network's link order (pipes then pumps);
    only ``t_matrix`` and ``a_star`` live in the renumbered preorder space.
    Physical-loop rows come first, one per chord with entry +1 at the chord;
    pseudo-loop rows follow, one per non-root fixed-head node, oriented from
    the fixed-head node toward the root (so a positive corrective flow on a
    pseudo-loop is an inflow at its fixed-head node).
    """

    net: Network
    root: str
    node_order: tuple[int, ...]        # node indices in DFS preorder, root first
    link_order: tuple[int, ...]        # tree links (preorder) then chords
    tree_links: tuple[int, ...]        # tree_links[i] attaches node_order[i+1]
    chord_links: tuple[int, ...]
    pseudo_loops: tuple[str, ...]      # non-root fixed-head node ids
    parent: tuple[int, ...]            # parent node index per node (-1 at root)
    t_matrix: np.ndarray               # (n-1) x (n-1), upper triangular
    loop_incidence: np.ndarray         # l x p, entries in {-1, 0, +1}
    a_star: np.ndarray                 # p x (n-1), tree block = inv(t_matrix)

    @property
    def n_loops(self) -> int:
        return self.loop_incidence.shape[0]

    @property
    def n_physical_loops(self) -> int:
        return len(self.chord_links)

    def pseudo_loop_rows(self) -> range:
        return range(len(self.chord_links), self.n_loops)

    def tree_path_row(self, node_index: int) -> np.ndarray:
        """Signed link indicator of the tree path from ``node_index`` to the
        root: +1 where the path runs along the link's from->to direction."""
        row = np.zeros(self.net.n_links)
        endpoints = self.net.link_endpoints()
        v = node_index
        pos = {idx: k for k, idx in enumerate(self.node_order)}
        while self.parent[v] != -1:
            link = self.tree_links[pos[v] - 1]
            i, j = endpoints[link]
            # walking v -> parent(v); +1 when that matches from->to
            row[link] = 1.0 if i == v else -1.0
            v = self.parent[v]
        return row


def build_spanning_tree(net: Network, root: str | None = None) -> TreeDecomposition:
    """Depth-first spanning tree from ``root`` (default: first fixed head).

    Neighbors are explored in link file order, which fixes the tree, the
    preorder numbering, and the loop rows deterministically.
    """
    if root is None:
        if not net.fixed_heads:
            raise RootNotFixedHead("network has no fixed-head node")
        root = net.fixed_heads[0].id
    if root not in {fh.id for fh in net.fixed_heads}:
        raise RootNotFixedHead(f"node {root!r} is not a fixed-head node")

    n, p = net.n_nodes, net.n_links
    endpoints = net.link_endpoints()
    incident: list[list[int]] = [[] for _ in range(n)]
    for e, (i, j) in enumerate(endpoints):
        incident[i].append(e)
        incident[j].append(e)

    root_idx = net.node_index(root)
    parent = [-1] * n
    parent_link = [-1] * n
    order = [root_idx]
    visited = {root_idx}
    tree_link_set = set()
    # iterative DFS keeping per-node iterators so links are tried in file order
    stack = [(root_idx, iter(incident[root_idx]))]
    while stack:
        v, links = stack[-1]
        advanced = False
        for e in links:
            i, j = endpoints[e]
            w = j if i == v else i
            if w in visited:
                continue
            visited.add(w)
            parent[w] = v
            parent_link[w] = e
            tree_link_set.add(e)
            order.append(w)
            stack.append((w, iter(incident[w])))
            advanced = True
            break
        if not advanced:
            stack.pop()
    if len(visited) != n:
        missing = [net.nodes[i].id for i in range(n) if i not in visited]
        raise NotConnected(f"unreachable nodes: {', '.join(missing)}")

    tree_links = tuple(parent_link[v] for v in order[1:])
    chords = tuple(e for e in range(p) if e not in tree_link_set)
    pos = {v: k for k, v in enumerate(order)}

    # reduced tree incidence in preorder space: row k-1 is node order[k],
    # column k-1 its parent link; parents precede children, hence upper
    # triangular with +-1 diagonal
    nt = n - 1
    t_matrix = np.zeros((nt, nt))
    for col, e in enumerate(tree_links):
        i, j = endpoints[e]
        for v in (i, j):
            if v != root_idx:
                t_matrix[pos[v] - 1, col] = 1.0 if endpoints[e][1] == v else -1.0

    pseudo = tuple(fh.id for fh in net.fixed_heads if fh.id != root)
    depth = [0] * n
    for v in order[1:]:
        depth[v] = depth[parent[v]] + 1

    loops = np.zeros((len(chords) + len(pseudo), p))
    for row, c in enumerate(chords):
        loops[row] = _chord_cycle_row(c, endpoints, parent, parent_link, depth)
    for k, fh_id in enumerate(pseudo):
        loops[len(chords) + k] = _path_to_root_row(
            net.node_index(fh_id), endpoints, parent, parent_link
        )

    # nodal-injection routing: column v solves T q = e_v, i.e. the tree flows
    # delivering a unit demand at non-root node v; chord block is zero
    a_star = np.zeros((p, nt))
    t_inv = scipy.linalg.solve_triangular(t_matrix, np.eye(nt))
    for col in range(nt):
        for k, e in enumerate(tree_links):
            a_star[e, col] = t_inv[k, col]

    return TreeDecomposition(
        net=net,
        root=root,
        node_order=tuple(order),
        link_order=tuple(tree_links) + chords,
        tree_links=tree_links,
        chord_links=chords,
        pseudo_loops=pseudo,
        parent=tuple(parent),
        t_matrix=t_matrix,
        loop_incidence=loops,
        a_star=a_star,
    )


def _path_to_root_row(v: int, endpoints, parent, parent_link) -> np.ndarray:
    row = np.zeros(len(endpoints))
    while parent[v] != -1:
        e = parent_link[v]
        i, j = endpoints[e]
        row[e] = 1.0 if i == v else -1.0
        v = parent[v]
    return row


def _chord_cycle_row(chord: int, endpoints, parent, parent_link, depth) -> np.ndarray:
    """Fundamental cycle of a chord (a, b): the chord at +1 plus the tree path
    b -> a, signed along the traversal direction."""
    row = np.zeros(len(endpoints))
    a, b = endpoints[chord]
    row[chord] = 1.0
    ua, ub = a, b
    # climb to the common ancestor; signs follow traversal b->...->a
    while depth[ub] > depth[ua]:
        e = parent_link[ub]
        i, j = endpoints[e]
        row[e] = 1.0 if i == ub else -1.0
        ub = parent[ub]
    rev: list[tuple[int, int]] = []
    while depth[ua] > depth[ub]:
        e = parent_link[ua]
        rev.append((e, ua))
        ua = parent[ua]
    while ua != ub:
        e = parent_link[ub]
        i, j = endpoints[e]
        row[e] = 1.0 if i == ub else -1.0
        ub = parent[ub]
        e = parent_link[ua]
        rev.append((e, ua))
        ua = parent[ua]
    # segment ancestor->a is walked against the climb direction
    for e, child in rev:
        i, j = endpoints[e]
        row[e] = -1.0 if i == child else 1.0
    return row


def initial_tree_flows(dec: TreeDecomposition, demands_m3s: np.ndarray) -> np.ndarray:
    """Tree flows carrying every non-root demand, chords at zero.

    ``demands_m3s`` is the full n-vector in network node order; the root entry
    is absorbed by the root's boundary flow.  The result satisfies the nodal
    continuity equation exactly at every non-root node.
    """
    demands_m3s = np.asarray(demands_m3s, dtype=float)
    if demands_m3s.shape != (dec.net.n_nodes,):
        raise ValueError("demand vector length mismatch")
    rhs = demands_m3s[list(dec.node_order[1:])]
    q_tree = scipy.linalg.solve_triangular(dec.t_matrix, rhs)
    flows = np.zeros(dec.net.n_links)
    flows[list(dec.tree_links)] = q_tree
    return flows


def a_star_matrix(dec: TreeDecomposition) -> np.ndarray:
    """p x (n-1) routing matrix: tree rows invert the reduced tree incidence,
    chord rows are zero.  Column v gives the tree flows delivering a unit
    injection at the v-th non-root node (preorder)."""
    return dec.a_star.copy()
