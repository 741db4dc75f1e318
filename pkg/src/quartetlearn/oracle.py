"""Interactive quartet oracle and adaptive exact reconstruction.

The oracle answers topology queries about a hidden tree, each answer
independently correct with probability p.  Reconstruction inserts leaves
one by one: rooting the current tree at a fixed pivot leaf r lets a single
quartet query (a, b, x, r) act as a rooted three-way test (x under a's
subtree / under b's / outside), and a centroid-style descent over the set
of candidate attachment edges pins the new leaf's edge in O(log n) queries,
O(n log n) total.  Under noise every query point is repeated and
majority-voted, with the repetition count chosen so a union bound over all
comparisons leaves failure probability below delta_conf.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log

import numpy as np

from .rng import as_generator
from .trees import PhyloTree, TreeError


class OracleBudgetError(RuntimeError):
    pass


@dataclass
class QuartetOracle:
    """Stateful oracle over a hidden tree.

    Each query returns the true topology code with probability p and one of
    the two wrong codes (chosen uniformly) otherwise.  The counter is
    monotone; ``budget`` caps total queries when set.
    """

    hidden: PhyloTree
    p: float = 1.0
    seed: int = 0
    budget: int | None = None
    query_count: int = field(default=0, init=False)
    pivot_only: list = field(default_factory=list, init=False)

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        self._rng = as_generator(self.seed)

    def query(self, a: int, b: int, c: int, d: int) -> int:
        """Topology code of (a, b, c, d): index of a's partner in (b, c, d)."""
        if self.budget is not None and self.query_count >= self.budget:
            raise OracleBudgetError(f"query budget {self.budget} exhausted")
        self.query_count += 1
        self.pivot_only.append((a, b, c, d))
        ids = np.asarray([[a, b, c, d]])
        true = int(self.hidden.topology_codes(ids)[0])
        if self.p >= 1.0 or self._rng.random() < self.p:
            return true
        return int((true + 1 + self._rng.integers(2)) % 3)


def repetitions_for(n: int, p: float, delta_conf: float) -> int:
    """Majority-vote repetition count per query point.

    Chosen as ceil(8 * ln(n / delta_conf)), rounded up to odd: a Chernoff
    bound gives per-comparison failure <= exp(-reps/8) at p = 3/4, and the
    union bound over the O(n log n) comparisons then stays below
    delta_conf with room to spare (larger p only helps).
    """
    if p >= 1.0:
        return 1
    reps = ceil(8.0 * log(max(2.0, n / delta_conf)))
    return reps + 1 if reps % 2 == 0 else reps


class _GrowingTree:
    """Adjacency of the partial reconstruction, rooted at the pivot leaf."""

    def __init__(self, n: int, pivot: int, first: int, second: int):
        self.n = n
        self.next_internal = n
        self.nbrs: dict[int, set] = {}
        center = self._fresh()
        for x in (pivot, first, second):
            self._link(center, x)
        self.pivot = pivot

    def _fresh(self) -> int:
        v = self.next_internal
        self.next_internal += 1
        self.nbrs[v] = set()
        return v

    def _link(self, u, v):
        self.nbrs.setdefault(u, set()).add(v)
        self.nbrs.setdefault(v, set()).add(u)

    def attach(self, above: int, below: int, leaf: int):
        """Subdivide edge (above, below) and hang ``leaf`` off the new vertex."""
        self.nbrs[above].discard(below)
        self.nbrs[below].discard(above)
        w = self._fresh()
        self._link(above, w)
        self._link(w, below)
        self._link(w, leaf)

    def rooted_arrays(self):
        """parent map, preorder intervals, a representative leaf per vertex,
        and children lists, rooted at the pivot's unique neighbor."""
        root = next(iter(self.nbrs[self.pivot]))
        parent = {root: self.pivot}
        tin, tout, rep = {}, {}, {}
        children = {}
        order = []
        t = 0
        stack = [(root, False)]
        while stack:
            v, done = stack.pop()
            if done:
                tout[v] = t
                kids = children.get(v, [])
                rep[v] = v if v < self.n else rep[kids[0]]
                continue
            tin[v] = t
            t += 1
            order.append(v)
            stack.append((v, True))
            kids = sorted(w for w in self.nbrs[v] if w != parent.get(v))
            children[v] = kids
            for w in kids:
                parent[w] = v
                stack.append((w, False))
        return root, parent, children, tin, tout, rep

    def to_phylo(self, labels=None) -> PhyloTree:
        remap = {}
        internals = sorted(v for v in self.nbrs if v >= self.n)
        for v in self.nbrs:
            remap[v] = v if v < self.n else self.n + internals.index(v)
        edges = set()
        for u, adj in self.nbrs.items():
            for v in adj:
                a, b = remap[u], remap[v]
                edges.add((min(a, b), max(a, b)))
        return PhyloTree(self.n, sorted(edges), labels=labels)


def adaptive_reconstruct(
    oracle: QuartetOracle,
    n: int,
    delta_conf: float = 0.05,
    seed: int = 0,
    labels=None,
) -> PhyloTree:
    """Exact reconstruction of the oracle's hidden tree from quartet queries.

    Noiseless (p = 1): always exact, O(n log n) queries.  Noisy: correct
    with probability at least 1 - delta_conf via repeated majority-voted
    queries.  Insertion order is randomized by ``seed``; every query
    contains the pivot leaf.
    """
    if n < 4:
        raise TreeError("need n >= 4")
    rng = as_generator(seed)
    order = rng.permutation(n)
    pivot = int(order[0])
    reps = repetitions_for(n, oracle.p, delta_conf)

    def vote(a, b, x):
        counts = [0, 0, 0]
        for _ in range(reps):
            counts[oracle.query(a, b, x, pivot)] += 1
        return int(np.argmax(counts))

    tree = _GrowingTree(n, pivot, int(order[1]), int(order[2]))
    for x in order[3:]:
        x = int(x)
        root, parent, children, tin, tout, rep = tree.rooted_arrays()
        # candidate attachment edges, keyed by their lower endpoint
        region = {v for v in tree.nbrs if v != pivot}
        internal = np.asarray(sorted(v for v in tree.nbrs if v >= tree.n))
        c1s = np.asarray([children[v][0] for v in internal])
        c2s = np.asarray([children[v][1] for v in internal])
        tin_a = {v: tin[v] for v in tree.nbrs if v != pivot}
        c1_lo = np.asarray([tin[c] for c in c1s])
        c1_hi = np.asarray([tout[c] for c in c1s])
        c2_lo = np.asarray([tin[c] for c in c2s])
        c2_hi = np.asarray([tout[c] for c in c2s])
        while len(region) > 1:
            reg_tins = np.sort([tin_a[v] for v in region])
            in1 = np.searchsorted(reg_tins, c1_hi) - np.searchsorted(reg_tins, c1_lo)
            in2 = np.searchsorted(reg_tins, c2_hi) - np.searchsorted(reg_tins, c2_lo)
            out = len(region) - in1 - in2
            scores = np.maximum(np.maximum(in1, in2), out)
            best = int(np.lexsort((internal, scores))[0])
            c1, c2 = int(c1s[best]), int(c2s[best])
            ans = vote(rep[c1], rep[c2], x)
            if ans == 1:  # x under c1's side (incl. the edge into c1)
                region = {
                    v for v in region if tin[c1] <= tin_a[v] and tout[v] <= tout[c1]
                }
            elif ans == 2:  # under c2
                region = {
                    v for v in region if tin[c2] <= tin_a[v] and tout[v] <= tout[c2]
                }
            else:  # outside that subtree (the edge above it stays possible)
                region = {
                    v
                    for v in region
                    if not (tin[c1] <= tin_a[v] and tout[v] <= tout[c1])
                    and not (tin[c2] <= tin_a[v] and tout[v] <= tout[c2])
                }
            if not region:
                raise TreeError("inconsistent oracle answers emptied the region")
        below = region.pop()
        tree.attach(parent[below], below, x)
    return tree.to_phylo(labels=labels)
