"""Leaf-labeled binary trees: unrooted and rooted views.

Leaves carry dense integer ids ``0..n_leaves-1``; internal vertices follow.
The rooted view stores parallel numpy arrays plus an Euler-tour sparse table,
so lowest-common-ancestor and quartet-topology queries are O(1) and fully
vectorizable -- the reconstruction pipeline and the exact quartet distance
issue millions of them.

Quartet topology convention: for an ordered 4-tuple ``(a, b, c, d)`` the
topology is encoded as the index of ``a``'s partner within ``(b, c, d)``:

    code 0  <->  ab|cd
    code 1  <->  ac|bd
    code 2  <->  ad|bc

The code of a 4-tuple is independent of the choice of root.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import as_generator


class TreeError(ValueError):
    """Structural problem with a tree or a tree query."""


# ====================================================================== #
# Unrooted tree                                                          #
# ====================================================================== #


class PhyloTree:
    """Unrooted binary tree on ``n_leaves`` labeled leaves.

    Invariants (checked by :meth:`validate`): leaves have degree 1, every
    internal vertex has degree exactly 3, the graph is a single tree.
    Immutable after construction; all queries are read-only.
    """

    def __init__(self, n_leaves, edges, labels=None, validate=True):
        self.n_leaves = int(n_leaves)
        if self.n_leaves < 3:
            raise TreeError(f"need at least 3 leaves, got {self.n_leaves}")
        self.n_vertices = 2 * self.n_leaves - 2
        if labels is None:
            labels = [f"L{i}" for i in range(self.n_leaves)]
        self.labels = list(labels)
        if len(self.labels) != self.n_leaves:
            raise TreeError("labels length != n_leaves")

        nbrs = [[] for _ in range(self.n_vertices)]
        for u, v in edges:
            u, v = int(u), int(v)
            nbrs[u].append(v)
            nbrs[v].append(u)
        self.neighbors = [sorted(a) for a in nbrs]
        self._rooted_cache = None
        if validate:
            self.validate()

    # -------------------------------------------------------------- #

    def validate(self):
        """Raise TreeError unless all PhyloTree invariants hold."""
        n, nv = self.n_leaves, self.n_vertices
        n_edges = sum(len(a) for a in self.neighbors) // 2
        if n_edges != nv - 1:
            raise TreeError(f"edge count {n_edges} != {nv - 1}")
        for v in range(n):
            if len(self.neighbors[v]) != 1:
                raise TreeError(f"leaf {v} has degree {len(self.neighbors[v])}")
        for v in range(n, nv):
            if len(self.neighbors[v]) != 3:
                raise TreeError(f"internal {v} has degree {len(self.neighbors[v])}")
        # connectivity
        seen = np.zeros(nv, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for w in self.neighbors[u]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        if not seen.all():
            raise TreeError("tree is not connected")
        if len(set(self.labels)) != n:
            raise TreeError("duplicate leaf labels")

    def edges(self):
        """All edges as (u, v) with u < v, sorted."""
        out = []
        for u in range(self.n_vertices):
            for v in self.neighbors[u]:
                if u < v:
                    out.append((u, v))
        return out

    # -------------------------------------------------------------- #
    # Quartet queries (delegated to a cached balanced rooting)        #
    # -------------------------------------------------------------- #

    def rooted(self) -> "RootedTree":
        """Cached balanced rooting; used for all quartet queries."""
        if self._rooted_cache is None:
            self._rooted_cache = balanced_root(self)
        return self._rooted_cache

    def quartet_topology(self, a, b, c, d):
        """Return the unique split of 4 distinct leaves as a Split."""
        return self.rooted().quartet_topology(a, b, c, d)

    def topology_codes(self, quads: np.ndarray) -> np.ndarray:
        """Vectorized topology codes for an (m, 4) array of leaf ids."""
        return self.rooted().topology_codes(quads)

    def same_topology(self, other: "PhyloTree") -> bool:
        """True when both trees induce identical quartet sets.

        Leaves are matched by label, so the two trees may use different
        internal ids.
        """
        from .newick import serialize_newick

        if sorted(self.labels) != sorted(other.labels):
            return False
        return serialize_newick(self) == serialize_newick(other)


@dataclass(frozen=True)
class Split:
    """One quartet topology over four leaves: ``pairs`` holds the two sides."""

    pairs: tuple
    code: int

    @staticmethod
    def from_code(a, b, c, d, code):
        rest = (b, c, d)
        partner = rest[code]
        others = tuple(x for x in rest if x != partner)
        p1 = (min(a, partner), max(a, partner))
        p2 = (min(others), max(others))
        if p1[0] > p2[0]:
            p1, p2 = p2, p1
        return Split(pairs=(p1, p2), code=int(code))

    def __str__(self):
        (x, y), (z, w) = self.pairs
        return f"{x}{','}{y}|{z},{w}"


# ====================================================================== #
# Rooted view                                                            #
# ====================================================================== #


class RootedTree:
    """Rooted binary view of a PhyloTree with O(1) LCA queries.

    The root is a fresh vertex subdividing one edge of the unrooted tree,
    so the rooted vertex set is ``0..2*n_leaves-2`` (one more than the
    PhyloTree).  Every internal vertex, including the root, has exactly two
    children.

    Arrays
    ------
    parent        int32[nv]   parent id, -1 at root
    depth         int32[nv]   edge depth from root
    subtree_leaves int32[nv]  number of leaves at or below each vertex
    leaf_order    int32[n]    leaves in DFS order
    leaf_lo/hi    int32[nv]   each vertex's contiguous leaf range in leaf_order
    """

    def __init__(self, tree: PhyloTree, edge):
        self.unrooted = tree
        self.n_leaves = tree.n_leaves
        u, v = int(edge[0]), int(edge[1])
        if v not in tree.neighbors[u]:
            raise TreeError(f"({u},{v}) is not an edge")
        self.root = tree.n_vertices
        self.root_edge = (u, v)
        nv = tree.n_vertices + 1
        self.n_vertices = nv

        parent = np.full(nv, -1, dtype=np.int32)
        depth = np.zeros(nv, dtype=np.int32)
        children = [[] for _ in range(nv)]
        children[self.root] = [u, v]
        parent[u] = self.root
        parent[v] = self.root
        depth[u] = depth[v] = 1
        # iterative DFS from the two root children
        stack = [u, v]
        while stack:
            x = stack.pop()
            for w in tree.neighbors[x]:
                if w != parent[x] and not (x in self.root_edge and w in self.root_edge):
                    parent[w] = x
                    depth[w] = depth[x] + 1
                    children[x].append(w)
                    stack.append(w)
        self.parent = parent
        self.depth = depth
        self.children = children
        self._build_orders()
        self._build_sparse_table()

    # -------------------------------------------------------------- #

    def _build_orders(self):
        nv, n = self.n_vertices, self.n_leaves
        sub = np.zeros(nv, dtype=np.int32)
        leaf_lo = np.zeros(nv, dtype=np.int32)
        leaf_hi = np.zeros(nv, dtype=np.int32)
        leaf_order = np.empty(n, dtype=np.int32)
        # single-pass iterative post/pre order
        k = 0
        stack = [(self.root, False)]
        order_stack = []
        while stack:
            v, done = stack.pop()
            if done:
                order_stack.append(v)
                continue
            leaf_lo[v] = k
            if not self.children[v]:
                leaf_order[k] = v
                k += 1
                leaf_hi[v] = k
                sub[v] = 1
                continue
            stack.append((v, True))
            for w in reversed(self.children[v]):
                stack.append((w, False))
        for v in order_stack:
            sub[v] = int(np.sum([sub[w] for w in self.children[v]]))
            leaf_hi[v] = leaf_lo[v] + sub[v]
        self.subtree_leaves = sub
        self.leaf_order = leaf_order
        self.leaf_lo = leaf_lo
        self.leaf_hi = leaf_hi
        pos = np.empty(n, dtype=np.int32)
        pos[leaf_order] = np.arange(n, dtype=np.int32)
        self.leaf_pos = pos  # position of each leaf in DFS leaf order

    def _build_sparse_table(self):
        # Euler tour (iterative), then sparse table of argmin-depth indices.
        nv = self.n_vertices
        tour = np.empty(2 * nv - 1, dtype=np.int32)
        first = np.full(nv, -1, dtype=np.int32)
        i = 0
        stack = [(self.root, 0)]
        while stack:
            v, ci = stack.pop()
            tour[i] = v
            if first[v] < 0:
                first[v] = i
            i += 1
            if ci < len(self.children[v]):
                stack.append((v, ci + 1))
                stack.append((self.children[v][ci], 0))
        assert i == 2 * nv - 1
        self.euler = tour
        self.first_occ = first
        tdepth = self.depth[tour]
        m = len(tour)
        levels = max(1, int(np.floor(np.log2(m))) + 1)
        table = np.empty((levels, m), dtype=np.int32)
        table[0] = np.arange(m, dtype=np.int32)
        for k in range(1, levels):
            half = 1 << (k - 1)
            span = 1 << k
            left = table[k - 1, : m - span + 1]
            right = table[k - 1, half : m - span + 1 + half]
            take_left = tdepth[left] <= tdepth[right]
            table[k, : m - span + 1] = np.where(take_left, left, right)
            table[k, m - span + 1 :] = table[k - 1, m - span + 1 :]
        self._table = table
        self._tdepth = tdepth
        log2 = np.zeros(m + 1, dtype=np.int32)
        for j in range(2, m + 1):
            log2[j] = log2[j >> 1] + 1
        self._log2 = log2

    # -------------------------------------------------------------- #
    # LCA                                                             #
    # -------------------------------------------------------------- #

    def lca(self, u, v) -> int:
        """Lowest common ancestor of two vertices; lca(u, u) == u."""
        return int(self.lca_many(np.asarray([u]), np.asarray([v]))[0])

    def lca_many(self, us, vs) -> np.ndarray:
        """Vectorized LCA over parallel vertex-id arrays."""
        us = np.asarray(us, dtype=np.int64)
        vs = np.asarray(vs, dtype=np.int64)
        if us.size and (us.max() >= self.n_vertices or us.min() < 0):
            raise TreeError("vertex id out of range")
        if vs.size and (vs.max() >= self.n_vertices or vs.min() < 0):
            raise TreeError("vertex id out of range")
        lo = self.first_occ[us]
        hi = self.first_occ[vs]
        swap = lo > hi
        lo2 = np.where(swap, hi, lo)
        hi2 = np.where(swap, lo, hi)
        k = self._log2[hi2 - lo2 + 1]
        a = self._table[k, lo2]
        b = self._table[k, hi2 - (1 << k.astype(np.int64)) + 1]
        idx = np.where(self._tdepth[a] <= self._tdepth[b], a, b)
        return self.euler[idx]

    def lca_depth_many(self, us, vs) -> np.ndarray:
        return self.depth[self.lca_many(us, vs)]

    # -------------------------------------------------------------- #
    # Quartets                                                        #
    # -------------------------------------------------------------- #

    def topology_codes(self, quads) -> np.ndarray:
        """Topology codes for an (m, 4) array of distinct leaf ids.

        The correct split is the pairing maximizing the summed LCA depth
        of its two pairs (four-point condition with unit edge lengths);
        the maximum is strict for binary trees.
        """
        q = np.asarray(quads, dtype=np.int64)
        if q.ndim == 1:
            q = q[None, :]
        d01 = self.lca_depth_many(q[:, 0], q[:, 1])
        d23 = self.lca_depth_many(q[:, 2], q[:, 3])
        d02 = self.lca_depth_many(q[:, 0], q[:, 2])
        d13 = self.lca_depth_many(q[:, 1], q[:, 3])
        d03 = self.lca_depth_many(q[:, 0], q[:, 3])
        d12 = self.lca_depth_many(q[:, 1], q[:, 2])
        sums = np.stack([d01 + d23, d02 + d13, d03 + d12])
        return np.argmax(sums, axis=0).astype(np.int8)

    def quartet_topology(self, a, b, c, d) -> Split:
        ids = (int(a), int(b), int(c), int(d))
        if len(set(ids)) != 4:
            raise TreeError(f"leaves must be distinct: {ids}")
        if max(ids) >= self.n_leaves or min(ids) < 0:
            raise TreeError(f"not a leaf id: {ids}")
        code = int(self.topology_codes(np.asarray([ids]))[0])
        return Split.from_code(*ids, code)

    # -------------------------------------------------------------- #
    # Subtree queries                                                 #
    # -------------------------------------------------------------- #

    def leaves_below(self, v) -> np.ndarray:
        """Leaf ids in the subtree rooted at v."""
        return self.leaf_order[self.leaf_lo[v] : self.leaf_hi[v]]

    def subtree_fraction(self, u, v, active) -> float:
        """|leaves(T_lca(u,v)) ∩ active| / |active| for a nonempty active set."""
        active = np.asarray(active, dtype=np.int64)
        if active.size == 0:
            raise TreeError("active set is empty")
        return float(self.subtree_fraction_many([u], [v], active)[0])

    def subtree_fraction_many(self, us, vs, active) -> np.ndarray:
        """Vectorized subtree_fraction over parallel vertex arrays."""
        active = np.asarray(active, dtype=np.int64)
        if active.size == 0:
            raise TreeError("active set is empty")
        mask = np.zeros(self.n_leaves, dtype=np.int64)
        mask[active] = 1
        pref = np.concatenate([[0], np.cumsum(mask[self.leaf_order])])
        w = self.lca_many(np.asarray(us), np.asarray(vs))
        inter = pref[self.leaf_hi[w]] - pref[self.leaf_lo[w]]
        return inter / active.size

    def is_ancestor(self, anc, v) -> bool:
        return bool(
            self.leaf_lo[anc] <= self.leaf_lo[v] and self.leaf_hi[v] <= self.leaf_hi[anc]
        )


def balanced_root(tree: PhyloTree) -> RootedTree:
    """Root ``tree`` by subdividing an edge so both sides hold >= ceil(n/3) leaves.

    Such an edge always exists; the first qualifying edge in DFS discovery
    order from vertex n_leaves (the first internal vertex) is chosen, making
    the rooting deterministic.  Rooting never changes quartet topologies.
    """
    n = tree.n_leaves
    need = -(-n // 3)  # ceil
    start = n  # first internal vertex
    parent = np.full(tree.n_vertices, -2, dtype=np.int64)
    parent[start] = -1
    order = []
    stack = [start]
    while stack:
        x = stack.pop()
        order.append(x)
        for w in tree.neighbors[x]:
            if parent[w] == -2:
                parent[w] = x
                stack.append(w)
    cnt = np.zeros(tree.n_vertices, dtype=np.int64)
    for x in reversed(order):
        if x < n:
            cnt[x] = 1
        if parent[x] >= 0:
            cnt[parent[x]] += cnt[x]
    # edges in DFS discovery order: (parent[w], w) as w was discovered
    for w in order[1:]:
        below = cnt[w]
        if min(below, n - below) >= need:
            return RootedTree(tree, (int(parent[w]), int(w)))
    raise TreeError("no balanced edge found (invariant violation)")  # pragma: no cover


# ====================================================================== #
# Skeletons and the anchor partition                                     #
# ====================================================================== #


@dataclass
class SkeletonNode:
    """One vertex of a skeleton: ``label`` is None for Steiner vertices."""

    label: object
    children: list = field(default_factory=list)

    def canonical_key(self):
        kids = tuple(sorted(c.canonical_key() for c in self.children))
        tag = ("S",) if self.label is None else ("A", self.label)
        return (tag, kids)


class SkeletonTree:
    """Rooted skeleton: anchors (labeled) plus Steiner branching vertices.

    Every leaf is an anchor, every Steiner vertex has exactly two children,
    and the vertex count is at most twice the anchor count.
    """

    def __init__(self, root: SkeletonNode):
        self.root = root

    def nodes(self):
        out, stack = [], [self.root]
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(v.children)
        return out

    @property
    def n_vertices(self):
        return len(self.nodes())

    def anchor_labels(self):
        return [v.label for v in self.nodes() if v.label is not None]

    def canonical_key(self):
        return self.root.canonical_key()

    def validate(self):
        nodes = self.nodes()
        n_anchor = sum(1 for v in nodes if v.label is not None)
        if len(nodes) > 2 * n_anchor:
            raise TreeError("skeleton has more than 2|U| vertices")
        for v in nodes:
            if v.label is None and len(v.children) < 2:
                raise TreeError("Steiner vertex with < 2 children")
            if not v.children and v.label is None:
                raise TreeError("Steiner leaf")
        labels = self.anchor_labels()
        if len(set(labels)) != len(labels):
            raise TreeError("duplicate anchor labels")


def skeleton(rooted: RootedTree, U) -> SkeletonTree:
    """Skeleton of ``rooted`` induced by anchor set ``U`` (must contain the root).

    Implements the iterative rule: delete leaves not in U, splice out non-U
    vertices left with exactly one child.  Anchor labels are the original
    vertex ids.
    """
    U = set(int(u) for u in U)
    if rooted.root not in U:
        raise TreeError("anchor set must contain the root")
    # post-order contraction without recursion
    built = {}
    stack = [(rooted.root, False)]
    while stack:
        v, done = stack.pop()
        if not done:
            stack.append((v, True))
            for w in rooted.children[v]:
                stack.append((w, False))
            continue
        kids = [built[w] for w in rooted.children[v] if built[w] is not None]
        if v in U:
            built[v] = SkeletonNode(label=v, children=kids)
        elif len(kids) == 0:
            built[v] = None
        elif len(kids) == 1:
            built[v] = kids[0]
        else:
            built[v] = SkeletonNode(label=None, children=kids)
    out = SkeletonTree(built[rooted.root])
    out.validate()
    return out


def phi_map(rooted: RootedTree, U) -> np.ndarray:
    """For every vertex, the first anchor on its path to the root (itself if in U)."""
    U = set(int(u) for u in U)
    if rooted.root not in U:
        raise TreeError("anchor set must contain the root")
    phi = np.full(rooted.n_vertices, -1, dtype=np.int64)
    stack = [rooted.root]
    while stack:
        v = stack.pop()
        phi[v] = v if v in U else phi[rooted.parent[v]]
        stack.extend(rooted.children[v])
    return phi


def phi_partition(rooted: RootedTree, U) -> dict:
    """Partition of the leaves by their phi image: anchor id -> leaf id array."""
    phi = phi_map(rooted, U)
    out = {int(u): [] for u in U}
    for leaf in range(rooted.n_leaves):
        out[int(phi[leaf])].append(leaf)
    return {u: np.asarray(v, dtype=np.int64) for u, v in out.items()}


def find_subtree_in_band(rooted: RootedTree, alpha: float) -> int:
    """A vertex whose subtree holds between alpha*n and 2*alpha*n leaves.

    Exists whenever alpha >= 1/n: take a deepest vertex with at least
    alpha*n leaves below it.
    """
    n = rooted.n_leaves
    if alpha * n < 1:
        raise TreeError("alpha below 1/n")
    best, best_depth = rooted.root, -1
    for v in range(rooted.n_vertices):
        if rooted.subtree_leaves[v] >= alpha * n and rooted.depth[v] > best_depth:
            best, best_depth = v, int(rooted.depth[v])
    return int(best)


# ====================================================================== #
# Random trees                                                           #
# ====================================================================== #


def random_tree(n: int, seed, labels=None) -> PhyloTree:
    """Uniform random unrooted binary topology on n >= 4 leaves.

    Grown by inserting leaves 3..n-1 on a uniformly random edge of the
    current tree; with the leaf order fixed, each of the (2n-5)!! topologies
    arises from exactly one insertion sequence, so the draw is uniform.
    """
    if n < 4:
        raise TreeError(f"random_tree needs n >= 4, got {n}")
    rng = as_generator(seed)
    edges = [(0, n), (1, n), (2, n)]
    for k in range(3, n):
        w = n + k - 2
        i = int(rng.integers(len(edges)))
        a, b = edges[i]
        edges[i] = (a, w)
        edges.append((w, b))
        edges.append((w, k))
    return PhyloTree(n, edges, labels=labels)


def caterpillar_tree(n: int, labels=None) -> PhyloTree:
    """Caterpillar: leaves 0..n-1 hang in order along a single spine."""
    if n < 3:
        raise TreeError("need n >= 3")
    if n == 3:
        return PhyloTree(3, [(0, 3), (1, 3), (2, 3)], labels=labels)
    edges = [(0, n), (1, n)]
    for k in range(2, n - 1):
        spine = n + k - 1
        edges.append((spine - 1, spine))
        edges.append((k, spine))
    edges.append((n - 1, 2 * n - 3))
    return PhyloTree(n, edges, labels=labels)


def balanced_tree(n: int, labels=None) -> PhyloTree:
    """Deterministic balanced topology on n >= 3 leaves."""
    if n < 3:
        raise TreeError("need n >= 3")
    counter = [n]
    edges = []

    def build(ids):
        # returns vertex representing this group
        if len(ids) == 1:
            return ids[0]
        mid = len(ids) // 2
        left = build(ids[:mid])
        right = build(ids[mid:])
        v = counter[0]
        counter[0] += 1
        edges.append((v, left))
        edges.append((v, right))
        return v

    half = n // 2
    a = build(list(range(half)))
    b = build(list(range(half, n)))
    # a and b are the two top groups; join them: the last created vertices
    # give a rooted pair -- connect directly for the unrooted form
    edges.append((a, b))
    tree = PhyloTree(n, edges, labels=labels, validate=False)
    # the join above makes both top vertices degree 3 already when n >= 4
    tree.validate()
    return tree


def join_trees(left: PhyloTree, right: PhyloTree, labels=None,
               left_edge=None, right_edge=None) -> PhyloTree:
    """Join two trees below a fresh top edge: leaves of ``left`` keep ids
    0..nl-1, leaves of ``right`` are shifted to nl..nl+nr-1.

    The bridge subdivides one edge on each side (the first listed edge by
    default; pass ``left_edge``/``right_edge`` in each tree's own vertex
    ids to control the attachment point).  Used to plant a subtree with an
    exactly known leaf set.
    """
    nl, nr = left.n_leaves, right.n_leaves
    n = nl + nr

    def lift_one(tree, e, leaf_shift, internal_shift):
        u, v = e
        uu = u + leaf_shift if u < tree.n_leaves else u - tree.n_leaves + internal_shift
        vv = v + leaf_shift if v < tree.n_leaves else v - tree.n_leaves + internal_shift
        return (uu, vv)

    def lift(tree, leaf_shift, internal_shift):
        return [lift_one(tree, e, leaf_shift, internal_shift) for e in tree.edges()]

    # internal ids: left block then right block, then two bridge vertices
    li = n
    ri = n + (nl - 2)
    edges = lift(left, 0, li) + lift(right, nl, ri)
    b1 = n + (nl - 2) + (nr - 2)
    b2 = b1 + 1
    (u1, v1) = lift_one(left, left_edge or left.edges()[0], 0, li)
    (u2, v2) = lift_one(right, right_edge or right.edges()[0], nl, ri)
    edges.remove((u1, v1))
    edges.extend([(u1, b1), (b1, v1)])
    edges.remove((u2, v2))
    edges.extend([(u2, b2), (b2, v2)])
    edges.append((b1, b2))
    if labels is None:
        labels = [f"L{i}" for i in range(n)]
    return PhyloTree(n, edges, labels=labels)
