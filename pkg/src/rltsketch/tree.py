"""Relative location tree construction.

Pipeline: build the level hierarchy by transitive merging, compress
non-branching paths into annotated long edges, then annotate the compressed
tree with centers, ingresses, quantized displacements (coarse and fine), and
landmark shortcuts. The finished tree is immutable and safe to share.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .metric import PointSet, lp_norm, norm_root, round_to_net

# Quantized eps denominators: eps is a dyadic rational num/2^32 so encoder and
# decoder reproduce fine-net cell widths exactly.
EPS_EXPONENT = 32


def quantize_eps(eps: float) -> float:
    """Round eps down to a dyadic rational num/2^32 (num >= 1).

    Rounding down nests the effective guarantee band inside the requested one.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    num = int(math.floor(eps * (1 << EPS_EXPONENT)))
    if num < 1:
        raise ValueError(f"eps too small to quantize: {eps}")
    return num / float(1 << EPS_EXPONENT)


@dataclass(eq=False)
class RawHierarchy:
    """The uncompressed level hierarchy (one node per cluster per level)."""

    level: list[int]
    parent: list[int]
    children: list[list[int]]
    members: list[np.ndarray]  # sorted point indices
    delta: list[float]  # exact cluster diameter
    root: int
    leaf_of_point: np.ndarray
    # per level >= 1: min distance between distinct clusters of the level-(l-1)
    # partition (inf when a single cluster remains); used by separation checks
    min_cross_at_level: list[float]

    @property
    def node_count(self) -> int:
        return len(self.level)


@dataclass(eq=False)
class Augmentations:
    """Euclidean sketch augmentations: two independently shifted grid corners
    per subtree leaf (surrogate displacement), plus corners for the long-edge
    displacement where the leaf's subtree hangs under a long edge.

    The shift vectors sigma1/sigma2 are transient and never serialized.
    """

    a1: np.ndarray  # (|L|, d) int64 corner coords, copy 1, L(T) preorder
    a2: np.ndarray
    b_nodes: np.ndarray  # node ids (preorder-sorted) having long-edge corners
    b1: np.ndarray  # (|b_nodes|, d) int64
    b2: np.ndarray
    sigma1: np.ndarray | None = None
    sigma2: np.ndarray | None = None


@dataclass(eq=False)
class RelativeLocationTree:
    """Compressed, annotated tree. Nodes are indexed in preorder (root = 0);
    children keep construction order (ascending center index).

    Decoded trees carry the same annotation fields but no point-side data
    (members, delta, surrogates are None).
    """

    n: int
    d: int
    p: object
    eps: float  # dyadic
    scale_exponent: int
    phi: float | None
    phi_exponent: int

    level: np.ndarray  # int64
    parent: np.ndarray  # int64, -1 at root
    children: list[list[int]]
    edge_long: np.ndarray  # bool: the edge above this node is long
    edge_len: np.ndarray  # int64: annotated original path length k (0 if short)

    center: np.ndarray  # int64 point index
    ingress: np.ndarray  # int64 node id (self for subtree roots)
    g: np.ndarray  # int64, 5 + ceil(delta/2^level); 0 for subtree roots
    eta: list[np.ndarray | None]  # int64[d] per non-subtree-root node
    eta_eps: list[np.ndarray | None]  # int64[d] per non-root L(T) node

    subtree_root: np.ndarray  # int64
    is_subtree_leaf: np.ndarray  # bool, membership in L(T)

    landmarks: dict[int, np.ndarray]  # node -> integer-valued float64 s(v) units
    K: int

    flags_euclidean: bool = False
    augmentations: Augmentations | None = None
    # query-time eps from the header; equals eps for the lp flavor, the user's
    # eps (not the fixed tree constant) for the Euclidean flavor
    header_eps: float | None = None

    # builder-side only (None on decoded trees)
    members: list[np.ndarray] | None = None
    delta: np.ndarray | None = None
    s_units: list[np.ndarray] | None = None  # shifted surrogate, d^(-1/p) units
    child_order: list[list[int]] | None = None  # tau-DFS order of children
    tstar_level: np.ndarray | None = None
    tstar_delta: np.ndarray | None = None
    min_cross_at_level: list[float] | None = None

    @property
    def node_count(self) -> int:
        return len(self.level)

    def subtree_leaves(self) -> np.ndarray:
        return np.flatnonzero(self.is_subtree_leaf)

    def subtree_roots(self) -> np.ndarray:
        mask = np.zeros(self.node_count, dtype=bool)
        mask[self.subtree_root] = True
        return np.flatnonzero(mask)

    def leaf_of_point(self) -> np.ndarray:
        """Map point index -> leaf node (leaves carry their point as center)."""
        out = np.full(self.n, -1, dtype=np.int64)
        for v in range(self.node_count):
            if not self.children[v]:
                out[self.center[v]] = v
        return out

    def unit(self) -> float:
        """Grid unit d^(-1/p): every shifted surrogate is an integer multiple."""
        return 1.0 / norm_root(self.d, self.p)

    def increment_units(self, v: int) -> np.ndarray:
        """Surrogate increment 2^level * eta for node v, in grid units."""
        return math.pow(2.0, int(self.level[v])) * self.eta[v].astype(np.float64)

    def surrogate(self, v: int, x_root: np.ndarray) -> np.ndarray:
        """Builder-side coarse surrogate value s*(v) = x_c(r) + s(v)."""
        return x_root + self.s_units[v] * self.unit()


def _cluster_min_matrix(dm: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-cluster-pair minimum point distance (diagonal holds in-cluster mins)."""
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    starts = np.flatnonzero(np.r_[True, sorted_labels[1:] != sorted_labels[:-1]])
    sub = dm[np.ix_(order, order)]
    red = np.minimum.reduceat(sub, starts, axis=0)
    red = np.minimum.reduceat(red, starts, axis=1)
    return red


def build_hierarchy(ps: PointSet) -> RawHierarchy:
    """Bottom-up hierarchy: level 0 singletons; level l transitively merges
    clusters at distance < 2^l; stops when one cluster remains.
    """
    n = ps.n
    dm = ps.distance_matrix()
    if n > 1:
        off = dm[~np.eye(n, dtype=bool)]
        if off.min() <= 0.0:
            raise ValueError("duplicate points (pairwise distance 0) are not supported")

    level = [0] * n
    parent = [-1] * n
    children: list[list[int]] = [[] for _ in range(n)]
    members: list[np.ndarray] = [np.array([i], dtype=np.int64) for i in range(n)]
    delta: list[float] = [0.0] * n
    leaf_of_point = np.arange(n, dtype=np.int64)
    min_cross: list[float] = []

    current = list(range(n))  # node ids of the current level's clusters
    lvl = 0
    while len(current) > 1:
        lvl += 1
        k = len(current)
        labels = np.empty(n, dtype=np.int64)
        for ci, node in enumerate(current):
            labels[members[node]] = ci
        cm = _cluster_min_matrix(dm, labels)
        off_mask = ~np.eye(k, dtype=bool)
        min_cross.append(float(cm[off_mask].min()))

        adj = (cm < math.pow(2.0, lvl)) & off_mask
        ncomp, comp = connected_components(csr_matrix(adj), directed=False)

        # canonical component order: ascending min member index
        groups: list[list[int]] = [[] for _ in range(ncomp)]
        for ci, node in enumerate(current):
            groups[comp[ci]].append(node)
        groups.sort(key=lambda grp: min(int(members[x][0]) for x in grp))

        nxt = []
        for grp in groups:
            grp.sort(key=lambda x: int(members[x][0]))
            node = len(level)
            level.append(lvl)
            parent.append(-1)
            children.append(list(grp))
            for ch in grp:
                parent[ch] = node
            if len(grp) == 1:
                members.append(members[grp[0]])
                delta.append(delta[grp[0]])
            else:
                mem = np.sort(np.concatenate([members[ch] for ch in grp]))
                members.append(mem)
                delta.append(float(dm[np.ix_(mem, mem)].max()))
            nxt.append(node)
        current = nxt

    root = current[0]
    return RawHierarchy(level, parent, children, members, delta, root, leaf_of_point, min_cross)


def compress_paths(raw: RawHierarchy, eps: float) -> RelativeLocationTree:
    """Replace qualifying maximal non-branching paths v_0..v_k (interior nodes
    degree 1) with a long edge v_1 -> v_k annotated with the original length k.

    Compression requires k >= 2 and delta(v_k) <= 2^level(v_1) * eps, so the
    resulting subtree-leaf diameter bound holds with no slack. delta = 0 always
    compresses (threshold -inf).
    """
    # preorder construction of the compressed tree
    level: list[int] = []
    parent: list[int] = []
    children: list[list[int]] = []
    edge_long: list[bool] = []
    edge_len: list[int] = []
    members: list[np.ndarray] = []
    delta: list[float] = []

    def new_node(raw_id: int, par: int, long: bool, length: int) -> int:
        nid = len(level)
        level.append(raw.level[raw_id])
        parent.append(par)
        children.append([])
        edge_long.append(long)
        edge_len.append(length)
        members.append(raw.members[raw_id])
        delta.append(raw.delta[raw_id])
        if par >= 0:
            children[par].append(nid)
        return nid

    # iterative DFS: (raw child id, new parent id)
    root_new = new_node(raw.root, -1, False, 0)
    stack = [(ch, root_new) for ch in reversed(raw.children[raw.root])]
    while stack:
        raw_top, par = stack.pop()
        # walk the chain of degree-1 nodes below raw_top
        chain = [raw_top]
        cur = raw_top
        while len(raw.children[cur]) == 1:
            cur = raw.children[cur][0]
            chain.append(cur)
        k = len(chain)  # edge count of the maximal path v_0..v_k
        bottom = chain[-1]
        if k >= 2 and raw.delta[bottom] <= math.pow(2.0, raw.level[chain[0]]) * eps:
            top_new = new_node(chain[0], par, False, 0)
            bot_new = new_node(bottom, top_new, True, k)
        else:
            cur_par = par
            for node in chain:
                cur_par = new_node(node, cur_par, False, 0)
            bot_new = cur_par
        for ch in reversed(raw.children[bottom]):
            stack.append((ch, bot_new))

    m = len(level)
    level_a = np.array(level, dtype=np.int64)
    parent_a = np.array(parent, dtype=np.int64)
    edge_long_a = np.array(edge_long, dtype=bool)
    edge_len_a = np.array(edge_len, dtype=np.int64)

    # subtree decomposition: long-edge bottoms and the root start subtrees
    subtree_root = np.empty(m, dtype=np.int64)
    for v in range(m):  # preorder: parent precedes child
        if parent_a[v] < 0 or edge_long_a[v]:
            subtree_root[v] = v
        else:
            subtree_root[v] = subtree_root[parent_a[v]]

    # L(T): no short-edge children (tree leaves and long-edge tops)
    is_leaf_sub = np.empty(m, dtype=bool)
    for v in range(m):
        is_leaf_sub[v] = not any(not edge_long_a[c] for c in children[v])

    return RelativeLocationTree(
        n=raw.leaf_of_point.shape[0],
        d=0,
        p=None,
        eps=eps,
        scale_exponent=0,
        phi=None,
        phi_exponent=int(raw.level[raw.root]),
        level=level_a,
        parent=parent_a,
        children=children,
        edge_long=edge_long_a,
        edge_len=edge_len_a,
        center=np.full(m, -1, dtype=np.int64),
        ingress=np.full(m, -1, dtype=np.int64),
        g=np.zeros(m, dtype=np.int64),
        eta=[None] * m,
        eta_eps=[None] * m,
        subtree_root=subtree_root,
        is_subtree_leaf=is_leaf_sub,
        landmarks={},
        K=0,
        members=members,
        delta=np.array(delta, dtype=np.float64),
        s_units=[None] * m,
        child_order=[[] for _ in range(m)],
        tstar_level=np.array(raw.level, dtype=np.int64),
        tstar_delta=np.array(raw.delta, dtype=np.float64),
        min_cross_at_level=raw.min_cross_at_level,
    )


def assign_centers(t: RelativeLocationTree):
    """Leaf of x_i gets center i; internal nodes the min of children's centers."""
    for v in range(t.node_count - 1, -1, -1):  # preorder reversed: children first
        if not t.children[v]:
            t.center[v] = int(t.members[v][0])
        else:
            t.center[v] = min(int(t.center[c]) for c in t.children[v])
    # consequence of construction order: center = min member index
    for v in range(t.node_count):
        assert t.center[v] == t.members[v][0]


def assign_ingresses(t: RelativeLocationTree, ps: PointSet):
    """Per subtree: the root is its own ingress; each child holding its
    parent's center points to the parent; every other child points to the
    entry leaf (in this subtree) of the nearest point in its spanning-tree
    parent's cluster.
    """
    dm = ps.distance_matrix()
    leaf_of = t.leaf_of_point()

    for v in range(t.node_count):
        if t.parent[v] < 0 or t.edge_long[v]:
            t.ingress[v] = v  # subtree root

    for v in range(t.node_count):
        us = [c for c in t.children[v] if not t.edge_long[c]]
        if not us:
            continue
        if t.center[us[0]] != t.center[v]:
            raise AssertionError("first child must hold the parent's center")
        k = len(us)
        if k == 1:
            t.ingress[us[0]] = v
            t.child_order[v] = [us[0]]
            continue

        # neighbor graph on the children: clusters within 2^level(v)
        thr = math.pow(2.0, int(t.level[v]))
        blocks = [t.members[u] for u in us]
        sizes = [len(b) for b in blocks]
        order_pts = np.concatenate(blocks)
        starts = np.cumsum([0] + sizes)
        sub = dm[np.ix_(order_pts, order_pts)]
        cm = np.minimum.reduceat(sub, starts[:-1], axis=0)
        cm = np.minimum.reduceat(cm, starts[:-1], axis=1)
        adj = cm <= thr
        np.fill_diagonal(adj, False)

        # BFS spanning tree rooted at the center-holding child, neighbors in
        # ascending child index for determinism
        tau_parent = np.full(k, -1, dtype=np.int64)
        seen = np.zeros(k, dtype=bool)
        seen[0] = True
        queue = [0]
        head = 0
        tau_children: list[list[int]] = [[] for _ in range(k)]
        while head < len(queue):
            a = queue[head]
            head += 1
            for b in np.flatnonzero(adj[a]):
                b = int(b)
                if not seen[b]:
                    seen[b] = True
                    tau_parent[b] = a
                    tau_children[a].append(b)
                    queue.append(b)
        if not seen.all():
            raise AssertionError("child neighbor graph is disconnected (construction bug)")

        t.ingress[us[0]] = v
        for i in range(1, k):
            j = int(tau_parent[i])
            block = sub[starts[j]:starts[j + 1], starts[i]:starts[i + 1]]
            row_min = block.min(axis=1)
            x = int(blocks[j][int(np.argmin(row_min))])  # ties: smallest point index
            # entry leaf of this subtree over x: first ancestor of leaf(x)
            # inside the subtree of v
            target = t.subtree_root[v]
            u_x = int(leaf_of[x])
            while t.subtree_root[u_x] != target:
                u_x = int(t.parent[t.subtree_root[u_x]])
            if not t.is_subtree_leaf[u_x]:
                raise AssertionError("ingress target is not a subtree leaf")
            t.ingress[us[i]] = u_x

        # children traversed in DFS order of the spanning tree
        order: list[int] = []
        stack = [0]
        while stack:
            a = stack.pop()
            order.append(us[a])
            for b in reversed(tau_children[a]):
                stack.append(b)
        t.child_order[v] = order


def ingress_order(t: RelativeLocationTree, root: int) -> list[int]:
    """DFS of one subtree with children visited in spanning-tree DFS order;
    places every non-root strictly after its ingress."""
    order: list[int] = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        for c in reversed(t.child_order[v]):
            stack.append(c)
    pos = {v: i for i, v in enumerate(order)}
    for v in order:
        if v != root and pos[int(t.ingress[v])] >= pos[v]:
            raise AssertionError("node precedes its ingress (cycle in ingress order)")
    return order


def compute_surrogates(t: RelativeLocationTree, ps: PointSet, eps: float):
    """Per subtree in ingress order: quantize each center's displacement from
    its ingress surrogate onto the grid net (coarse everywhere, fine at
    subtree leaves) and accumulate shifted surrogates in exact grid units.
    """
    x = ps.points
    dp = norm_root(t.d, t.p)
    unit = 1.0 / dp

    for r in t.subtree_roots():
        order = ingress_order(t, int(r))
        x_root = x[t.center[r]]
        for v in order:
            if v == r:
                t.s_units[v] = np.zeros(t.d, dtype=np.float64)
                continue
            lv = int(t.level[v])
            two_l = math.pow(2.0, lv)
            g = 5 + int(math.ceil(t.delta[v] / two_l))
            t.g[v] = g
            gamma = 1.0 / g
            inn = int(t.ingress[v])
            s_in = x_root + t.s_units[inn] * unit
            eta_star = (x[t.center[v]] - s_in) * (gamma / two_l)
            nrm = lp_norm(eta_star, t.p)
            if nrm > 1.0 + 1e-9:
                raise AssertionError(
                    f"displacement norm {nrm} > 1 at node {v} (ingress/level bug)")
            eta = round_to_net(eta_star, gamma, t.p).grid_coords
            t.eta[v] = eta
            t.s_units[v] = t.s_units[inn] + two_l * eta.astype(np.float64)
            if t.is_subtree_leaf[v]:
                t.eta_eps[v] = round_to_net(eta_star, gamma * eps, t.p).grid_coords

    bound = math.pow(2.0, 53)
    for v in range(t.node_count):
        if np.abs(t.s_units[v]).max(initial=0.0) >= bound:
            raise OverflowError("surrogate units exceed exact float64 integer range")


def fine_surrogate_units(t: RelativeLocationTree, v: int) -> np.ndarray:
    """Shifted fine surrogate in grid units: one fine increment on the coarse
    prefix (the fine net is not accumulated inductively)."""
    inn = int(t.ingress[v])
    return t.s_units[inn] + (math.pow(2.0, int(t.level[v])) * t.eps) * t.eta_eps[v]


def select_landmarks(t: RelativeLocationTree, K: int):
    """Per subtree: repeatedly take a lowest node of the ingress tree, climb K
    ingress steps (or to the root), store that node's shifted surrogate, and
    drop it with its ingress descendants. Every node then reaches a stored
    surrogate or its subtree root within K ingress hops.
    """
    t.K = K
    t.landmarks = {}
    for r in t.subtree_roots():
        order = ingress_order(t, int(r))
        depth = {int(r): 0}
        in_children: dict[int, list[int]] = {v: [] for v in order}
        for v in order:
            if v == r:
                continue
            inn = int(t.ingress[v])
            depth[v] = depth[inn] + 1
            in_children[inn].append(v)
        removed = set()
        by_depth = sorted(order, key=lambda v: (-depth[v], v))
        for v in by_depth:
            if v in removed:
                continue
            cur = v
            for _ in range(K):
                if cur == r:
                    break
                cur = int(t.ingress[cur])
            t.landmarks[cur] = t.s_units[cur].copy()
            # drop cur and its ingress descendants
            stack = [cur]
            while stack:
                w = stack.pop()
                if w in removed:
                    continue
                removed.add(w)
                stack.extend(in_children[w])
        assert len(removed) == len(order)


def landmark_step_budget(phi: float, d: int, p) -> int:
    """K = ceil(log2(2 * phi * d^(1/p))), at least 1."""
    return max(1, int(math.ceil(math.log2(2.0 * phi * norm_root(d, p)))))


def build_tree(ps: PointSet, eps: float) -> RelativeLocationTree:
    """Full construction over a scaled point set; eps is quantized to dyadic."""
    eps_d = quantize_eps(eps)
    raw = build_hierarchy(ps)
    t = compress_paths(raw, eps_d)
    t.n, t.d, t.p = ps.n, ps.d, ps.p
    t.eps = eps_d
    t.scale_exponent = ps.scale_exponent
    t.phi = ps.phi
    assign_centers(t)
    assign_ingresses(t, ps)
    compute_surrogates(t, ps, eps_d)
    select_landmarks(t, landmark_step_budget(ps.phi, ps.d, ps.p))
    return t
