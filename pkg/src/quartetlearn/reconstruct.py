"""Candidate-tree assembly: skeleton enumeration and cluster attachment.

The clustering step yields one anchor per recovered cluster (its position in
the hidden tree is unknown) plus a leftover set belonging near the root.
Reconstruction enumerates the possible rooted skeletons over the anchors --
left-side anchors under the root's left branch, right-side anchors under the
right -- then attaches each cluster below its anchor as a balanced subtree
and rebinarizes.  Exhaustive guessing is replaced by deterministic bounded
enumeration ordered by skeleton size.
"""
from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .clustering import SIDES, ClusterOutput
from .trees import PhyloTree, SkeletonNode, SkeletonTree, TreeError


class ReconstructionError(ValueError):
    pass


ROOT_ANCHOR = "r"


def anchor_name(side: str, i: int) -> str:
    return f"{side}{i}"


# ====================================================================== #
# Side-shape enumeration                                                 #
# ====================================================================== #
#
# A side shape is a rooted tree over a set of labeled anchors plus
# unlabeled branching vertices: anchors may have 0..2 children, branching
# vertices exactly 2, every leaf is an anchor.  These are exactly the
# shapes a skeleton can induce on one side of the root.  Shapes are nested
# tuples:  ("A", label, children)  |  ("S", children).


def _shape_size(shape) -> int:
    kids = shape[2] if shape[0] == "A" else shape[1]
    return 1 + sum(_shape_size(c) for c in kids)


def _shape_key(shape) -> str:
    return repr(shape)


def _two_block_partitions(items: tuple):
    """Unordered partitions of ``items`` into exactly two nonempty blocks."""
    first = items[0]
    rest = items[1:]
    for r in range(len(rest) + 1):
        for pick in combinations(rest, r):
            block1 = (first,) + pick
            block2 = tuple(x for x in rest if x not in pick)
            if block2:
                yield block1, block2


def side_shapes(anchors: tuple, cap: int | None = None, _memo=None) -> list:
    """All side shapes over ``anchors`` (deterministic order, capped).

    The cap bounds the returned list length per recursive subset; when it
    binds, enumeration is truncated deterministically (smallest-first
    recursion order), never randomly.
    """
    if _memo is None:
        _memo = {}
    anchors = tuple(sorted(anchors))
    if anchors in _memo:
        return _memo[anchors]
    if len(anchors) == 0:
        return []
    out = []
    if len(anchors) == 1:
        out = [("A", anchors[0], ())]
        _memo[anchors] = out
        return out

    def room():
        return cap is None or len(out) < cap

    # anchor-rooted shapes
    for root_label in anchors:
        rest = tuple(a for a in anchors if a != root_label)
        for sub in side_shapes(rest, cap, _memo):
            if not room():
                break
            out.append(("A", root_label, (sub,)))
        for b1, b2 in _two_block_partitions(rest):
            for s1 in side_shapes(b1, cap, _memo):
                for s2 in side_shapes(b2, cap, _memo):
                    if not room():
                        break
                    kids = tuple(sorted((s1, s2), key=_shape_key))
                    out.append(("A", root_label, kids))
    # branching-vertex-rooted shapes
    for b1, b2 in _two_block_partitions(anchors):
        for s1 in side_shapes(b1, cap, _memo):
            for s2 in side_shapes(b2, cap, _memo):
                if not room():
                    break
                kids = tuple(sorted((s1, s2), key=_shape_key))
                out.append(("S", kids))
    # dedupe (unordered children can coincide), stable order
    seen = set()
    uniq = []
    for s in out:
        if s not in seen:
            seen.add(s)
            uniq.append(s)
    if cap is not None:
        uniq = uniq[:cap]
    _memo[anchors] = uniq
    return uniq


def _shape_to_node(shape) -> SkeletonNode:
    if shape[0] == "A":
        return SkeletonNode(
            label=shape[1], children=[_shape_to_node(c) for c in shape[2]]
        )
    return SkeletonNode(label=None, children=[_shape_to_node(c) for c in shape[1]])


def _stable_hash(key: str) -> str:
    return hashlib.sha1(key.encode("utf-8")).hexdigest()


def enumerate_skeletons(k_left: int, k_right: int, budget: int, seed=0):
    """Yield up to ``budget`` candidate skeletons over the anchor sets.

    The root anchor is fixed; each candidate combines one left-side shape
    with one right-side shape.  Candidates stream in non-decreasing vertex
    count, ties broken by a stable content hash, and are exhaustive within
    the budget for small anchor sets.  ``seed`` is accepted for interface
    symmetry; enumeration is deterministic.
    """
    if budget <= 0:
        raise ReconstructionError("skeleton budget must be positive")
    cap = max(64, 4 * budget)
    left = side_shapes(tuple(anchor_name("L", i) for i in range(k_left)), cap)
    right = side_shapes(tuple(anchor_name("R", i) for i in range(k_right)), cap)
    left_opts = left if left else [None]
    right_opts = right if right else [None]

    def vcount(s):
        return 0 if s is None else _shape_size(s)

    left_opts = sorted(left_opts, key=lambda s: (vcount(s), _shape_key(s)))
    right_opts = sorted(right_opts, key=lambda s: (vcount(s), _shape_key(s)))

    # lazy merge of the product by total vertex count
    heap = []
    for i, ls in enumerate(left_opts):
        key = 1 + vcount(ls) + vcount(right_opts[0])
        heapq.heappush(heap, (key, _stable_hash(f"{_shape_key(ls)}|{_shape_key(right_opts[0])}"), i, 0))
    emitted = 0
    while heap and emitted < budget:
        _, _, i, j = heapq.heappop(heap)
        ls, rs = left_opts[i], right_opts[j]
        kids = []
        if ls is not None:
            kids.append(_shape_to_node(ls))
        if rs is not None:
            kids.append(_shape_to_node(rs))
        tree = SkeletonTree(SkeletonNode(label=ROOT_ANCHOR, children=kids))
        yield tree
        emitted += 1
        if j + 1 < len(right_opts):
            nxt = right_opts[j + 1]
            key = 1 + vcount(ls) + vcount(nxt)
            heapq.heappush(
                heap, (key, _stable_hash(f"{_shape_key(ls)}|{_shape_key(nxt)}"), i, j + 1)
            )


def count_skeletons(k_left: int, k_right: int, cap: int = 100000) -> int:
    left = side_shapes(tuple(anchor_name("L", i) for i in range(k_left)), cap)
    right = side_shapes(tuple(anchor_name("R", i) for i in range(k_right)), cap)
    return max(1, len(left)) * max(1, len(right))


# ---------------------------------------------------------------------- #
# Incremental screen scoring                                              #
# ---------------------------------------------------------------------- #
#
# The screening risk of an assembled candidate splits by how a quartet's
# four leaves fall into the attached blobs (clusters plus the root blob):
# any quartet with two leaves sharing a blob has a candidate label fixed by
# blob membership and the blobs' internal balanced trees alone -- blobs
# hang as disjoint subtrees -- so only quartets touching four distinct
# blobs depend on the skeleton.  Classifying the screen sample once per
# insertion stage reduces each skeleton evaluation to topology codes on a
# stub tree with one leaf per blob.


def _balanced_lca_depth(pos_a, pos_b, size):
    """Vectorized depth of the lca of two positions in the balanced tree
    over [0, size) built by repeated (lo+hi)//2 splits."""
    lo = np.zeros_like(pos_a)
    hi = np.asarray(size, dtype=np.int64).copy()
    depth = np.zeros_like(pos_a)
    active = pos_a != pos_b
    while active.any():
        mid = (lo + hi) // 2
        a_left = pos_a < mid
        b_left = pos_b < mid
        same = (a_left == b_left) & active
        hi = np.where(same & a_left, mid, hi)
        lo = np.where(same & ~a_left, mid, lo)
        depth = np.where(same, depth + 1, depth)
        active = same
    return depth


class ScreenScorer:
    """Screen-risk evaluator for skeletons over a fixed cluster output.

    ``stage(placed)`` fixes which anchors the partial skeleton contains
    (everything else folds into the root blob) and reclassifies the screen
    quartets; ``score(left_shape, right_shape)`` then prices one skeleton
    via its stub tree only.
    """

    def __init__(self, clusters: ClusterOutput, quads, codes, labels=None):
        self.clusters = clusters
        self.quads = np.asarray(quads, dtype=np.int64)
        self.claimed = np.asarray(codes, dtype=np.int64)
        self.labels = labels
        self.assigned = resolve_duplicates(clusters)
        self.names = []
        self.name_leaves = {}
        for side, i, _ in clusters.all_clusters():
            nm = anchor_name(side, i)
            self.names.append(nm)
            self.name_leaves[nm] = self.assigned.get((side, i), np.empty(0, np.int64))
        self._n = 1 + (
            int(
                max(
                    [v.max() for v in self.assigned.values() if len(v)]
                    + [self.quads.max()]
                )
            )
        )
        self._stage_key = None

    def stage(self, placed):
        key = frozenset(placed)
        if key == self._stage_key:
            return
        self._stage_key = key
        blob = np.zeros(self._n, dtype=np.int64)  # 0 = root blob
        self.blob_names = [None]
        for nm in self.names:
            if nm in key:
                bid = len(self.blob_names)
                self.blob_names.append(nm)
                blob[self.name_leaves[nm]] = bid
        # blob-internal positions in each blob's sorted member list
        pos = np.zeros(self._n, dtype=np.int64)
        size = np.zeros(self._n, dtype=np.int64)
        for bid in range(len(self.blob_names)):
            members = np.where(blob == bid)[0]
            pos[members] = np.arange(len(members))
            size[members] = len(members)
        b = blob[self.quads]
        q = self.quads
        m = len(q)
        cand = np.full(m, -1, dtype=np.int64)
        pair_eq = [
            (0, 1, 2, 3),
            (0, 2, 1, 3),
            (0, 3, 1, 2),
        ]
        n_distinct = np.array(
            [len(set(row)) for row in b.tolist()], dtype=np.int64
        )
        # distinct pairs pattern: one or two same-blob pairs decide the code
        for code, (i, j, k, l) in enumerate(pair_eq):
            same_ij = b[:, i] == b[:, j]
            same_kl = b[:, k] == b[:, l]
            cross = (
                (b[:, i] == b[:, k])
                | (b[:, i] == b[:, l])
                | (b[:, j] == b[:, k])
                | (b[:, j] == b[:, l])
            )
            hit = (same_ij | same_kl) & ~cross & (cand < 0)
            cand[hit] = code
        # three or four leaves in one blob: the blob's balanced tree decides
        heavy = (cand < 0) & (n_distinct <= 2)
        if heavy.any():
            hq = q[heavy]
            sums = []
            for (i, j, k, l) in pair_eq:
                d1 = np.where(
                    b[heavy][:, i] == b[heavy][:, j],
                    _balanced_lca_depth(pos[hq[:, i]], pos[hq[:, j]], size[hq[:, i]]),
                    -1,
                )
                d2 = np.where(
                    b[heavy][:, k] == b[heavy][:, l],
                    _balanced_lca_depth(pos[hq[:, k]], pos[hq[:, l]], size[hq[:, k]]),
                    -1,
                )
                sums.append(d1 + d2)
            cand[heavy] = np.argmax(np.stack(sums), axis=0)
        distinct4 = n_distinct == 4
        known = ~distinct4
        self.const_mismatch = int(np.sum(cand[known] != self.claimed[known]))
        rows = b[distinct4]
        claimed4 = self.claimed[distinct4]
        if len(rows):
            uniq, inv = np.unique(rows, axis=0, return_inverse=True)
            hist = np.zeros((len(uniq), 3), dtype=np.int64)
            np.add.at(hist, (inv, claimed4), 1)
            self.class_rows = uniq
            self.class_hist = hist
        else:
            self.class_rows = np.empty((0, 4), dtype=np.int64)
            self.class_hist = np.empty((0, 3), dtype=np.int64)
        self.m = m

    def _stub_tree(self):
        p = len(self.blob_names)
        stub_clusters = {s: [] for s in SIDES}
        for nm in self.names:
            side, i = nm[0], int(nm[1:])
            while len(stub_clusters[side]) <= i:
                stub_clusters[side].append(np.empty(0, np.int64))
        for bid, nm in enumerate(self.blob_names):
            if nm is None:
                continue
            side, i = nm[0], int(nm[1:])
            stub_clusters[side][i] = np.asarray([bid], dtype=np.int64)
        return ClusterOutput(
            clusters=stub_clusters,
            leftover=np.asarray([0], dtype=np.int64),
            diagnostics=[],
        )

    def score(self, skel: SkeletonTree) -> float:
        placed = set(skel.anchor_labels()) - {ROOT_ANCHOR}
        self.stage(placed)
        mism = self.const_mismatch
        if len(self.class_rows) and len(self.blob_names) >= 4:
            stub = attach_clusters(skel, self._stub_tree(), partial_ok=True)
            got = stub.tree.topology_codes(self.class_rows)
            miss = self.class_hist.sum(axis=1) - self.class_hist[
                np.arange(len(got)), got
            ]
            mism += int(miss.sum())
        return mism / self.m


# ---------------------------------------------------------------------- #
# Guided skeleton search                                                  #
# ---------------------------------------------------------------------- #
#
# Exhaustive shape enumeration explodes past three anchors per side, and a
# budget-truncated canonical stream almost never contains the true shape.
# The beam search below grows each side's shape anchor by anchor, keeping
# the few partial skeletons whose assembled candidate scores best on a
# fixed quartet subsample; scoring is the same empirical risk that
# verification ultimately applies, so the search optimizes the accepted
# quantity directly and the full enumeration remains available as a
# fallback for small anchor counts.


def _insertions(shape, label):
    """All shapes obtained by adding ``label`` to ``shape``."""
    out = []
    if shape is None:
        return [("A", label, ())]

    def rec(node, wrap):
        # join: fresh branching vertex above this subtree
        out.append(wrap(("S", tuple(sorted((node, ("A", label, ())), key=_shape_key)))))
        # chain: new anchor above this subtree
        out.append(wrap(("A", label, (node,))))
        if node[0] == "A":
            kids = node[2]
            if len(kids) < 2:
                new_kids = tuple(sorted(kids + (("A", label, ()),), key=_shape_key))
                out.append(wrap(("A", node[1], new_kids)))
            for i, ch in enumerate(kids):
                rest = kids[:i] + kids[i + 1 :]
                rec(ch, lambda s, r=rest, nd=node: wrap(
                    ("A", nd[1], tuple(sorted(r + (s,), key=_shape_key)))
                ))
        else:
            kids = node[1]
            for i, ch in enumerate(kids):
                rest = kids[:i] + kids[i + 1 :]
                rec(ch, lambda s, r=rest: wrap(
                    ("S", tuple(sorted(r + (s,), key=_shape_key)))
                ))

    rec(shape, lambda s: s)
    seen, uniq = set(), []
    for s in out:
        if s not in seen:
            seen.add(s)
            uniq.append(s)
    return uniq


def _removals(shape, label):
    """The shape with anchor ``label`` spliced out (None if it was alone)."""
    if shape is None:
        return None, False
    if shape[0] == "A" and shape[1] == label:
        kids = shape[2]
        if len(kids) == 0:
            return None, True
        if len(kids) == 1:
            return kids[0], True
        return ("S", kids), True
    kids = shape[2] if shape[0] == "A" else shape[1]
    for i, ch in enumerate(kids):
        new_ch, found = _removals(ch, label)
        if not found:
            continue
        rest = kids[:i] + kids[i + 1 :]
        new_kids = rest if new_ch is None else tuple(
            sorted(rest + (new_ch,), key=_shape_key)
        )
        if shape[0] == "A":
            return ("A", shape[1], new_kids), True
        # branching vertex: needs two children to survive
        if len(new_kids) >= 2:
            return ("S", new_kids), True
        if len(new_kids) == 1:
            return new_kids[0], True
        return None, True
    return shape, False


def guided_skeletons(
    clusters: ClusterOutput,
    score_fn,
    beam_width: int = 4,
    labels=None,
    orders: int = 3,
    polish_rounds: int = 2,
    seed: int = 0,
):
    """Beam search over skeletons; yields finished SkeletonTrees, best first.

    ``score_fn(candidate_tree) -> float`` must be cheap (a subsampled
    empirical risk); lower is better.  Which extraction loop produced a
    cluster carries no information about its true side of the root, so
    every anchor may be inserted into either root branch; partially built
    skeletons score with the not-yet-placed clusters folded into the root
    blob.  Several insertion orders run (largest-first plus seeded
    shuffles) and the winner gets a remove-and-reinsert hill climb, which
    undoes greedy lock-ins.
    """
    from .rng import as_generator

    anchors = []
    for side, i, r in clusters.all_clusters():
        anchors.append((len(r), anchor_name(side, i)))
    anchors.sort(key=lambda t: (-t[0], t[1]))
    base_order = [a[1] for a in anchors]
    rng = as_generator(seed)

    def assemble(left_shape, right_shape):
        kids = []
        if left_shape is not None:
            kids.append(_shape_to_node(left_shape))
        if right_shape is not None:
            kids.append(_shape_to_node(right_shape))
        return SkeletonTree(SkeletonNode(label=ROOT_ANCHOR, children=kids))

    cache = {}

    def score_pair(ls, rs):
        key = (_shape_key(ls), _shape_key(rs))
        if key in cache:
            return cache[key]
        try:
            cand = attach_clusters(
                assemble(ls, rs), clusters, labels=labels, partial_ok=True
            )
            s = score_fn(cand)
        except ReconstructionError:
            s = None
        cache[key] = s
        return s

    def run_beam(order):
        beam = [(None, None)]
        for label in order:
            scored = []
            seen_pairs = set()
            for ls, rs in beam:
                options = [(new, rs) for new in _insertions(ls, label)]
                options += [(ls, new) for new in _insertions(rs, label)]
                for pair in options:
                    key = _shape_key(pair[0]) + "|" + _shape_key(pair[1])
                    if key in seen_pairs:
                        continue
                    seen_pairs.add(key)
                    s = score_pair(*pair)
                    if s is not None:
                        scored.append((s, key, pair))
            scored.sort(key=lambda t: (t[0], t[1]))
            beam = [p for _, _, p in scored[:beam_width]]
            if not beam:
                return []
        return beam

    finals = []
    for o in range(max(1, orders)):
        order = list(base_order)
        if o > 0:
            rng.shuffle(order)
        finals.extend(run_beam(order))

    # remove-and-reinsert hill climb on the current best
    def polish(pair):
        cur = pair
        cur_s = score_pair(*cur)
        for _ in range(polish_rounds):
            improved = False
            for label in base_order:
                ls0, f0 = _removals(cur[0], label)
                rs0, f1 = _removals(cur[1], label)
                stripped = (ls0 if f0 else cur[0], rs0 if f1 else cur[1])
                if not (f0 or f1):
                    continue
                options = [(new, stripped[1]) for new in _insertions(stripped[0], label)]
                options += [(stripped[0], new) for new in _insertions(stripped[1], label)]
                for cand_pair in options:
                    s = score_pair(*cand_pair)
                    if s is not None and s < cur_s - 1e-12:
                        cur, cur_s = cand_pair, s
                        improved = True
            if not improved:
                break
        return cur

    scored_finals = [(score_pair(*p), _shape_key(p[0]) + _shape_key(p[1]), p) for p in finals]
    scored_finals = [t for t in scored_finals if t[0] is not None]
    scored_finals.sort(key=lambda t: (t[0], t[1]))
    emit = []
    if scored_finals:
        emit.append(polish(scored_finals[0][2]))
        emit.extend(p for _, _, p in scored_finals[: 2 * beam_width])
    seen = set()
    for ls, rs in emit:
        sk = assemble(ls, rs)
        key = sk.canonical_key()
        if key not in seen:
            seen.add(key)
            yield sk


# ====================================================================== #
# Attachment                                                             #
# ====================================================================== #


@dataclass
class CandidateTree:
    """A reconstructed tree plus the choices that produced it."""

    tree: PhyloTree
    provenance: dict
    risk: float | None = None

    def provenance_hash(self) -> str:
        parts = sorted(f"{k}={v}" for k, v in self.provenance.items())
        return _stable_hash("|".join(parts))


class _Builder:
    """Accumulates rooted edges, then emits the unrooted normalized tree."""

    def __init__(self, n_leaves: int):
        self.n_leaves = n_leaves
        self.next_id = n_leaves
        self.edges = []

    def fresh(self) -> int:
        v = self.next_id
        self.next_id += 1
        return v

    def balanced(self, ids) -> int:
        """Balanced binary subtree over sorted leaf ids; returns its root."""
        ids = sorted(int(x) for x in ids)

        def build(lo, hi):
            if hi - lo == 1:
                return ids[lo]
            mid = (lo + hi) // 2
            v = self.fresh()
            self.edges.append((v, build(lo, mid)))
            self.edges.append((v, build(mid, hi)))
            return v

        return build(0, len(ids))

    def finish(self, labels) -> PhyloTree:
        """Suppress degree-2 vertices / drop degree-1 internals, renumber."""
        nbrs = {}
        for u, v in self.edges:
            nbrs.setdefault(u, set()).add(v)
            nbrs.setdefault(v, set()).add(u)
        changed = True
        while changed:
            changed = False
            for v in list(nbrs):
                if v < self.n_leaves:
                    continue
                deg = len(nbrs[v])
                if deg == 2:
                    a, b = sorted(nbrs[v])
                    nbrs[a].discard(v)
                    nbrs[b].discard(v)
                    nbrs[a].add(b)
                    nbrs[b].add(a)
                    del nbrs[v]
                    changed = True
                elif deg <= 1:
                    for w in nbrs[v]:
                        nbrs[w].discard(v)
                    del nbrs[v]
                    changed = True
        internals = sorted(v for v in nbrs if v >= self.n_leaves)
        remap = {v: self.n_leaves + i for i, v in enumerate(internals)}
        for v in range(self.n_leaves):
            if v in nbrs:
                remap[v] = v
        out_edges = set()
        for u, adj in nbrs.items():
            for v in adj:
                a, b = remap[u], remap[v]
                out_edges.add((min(a, b), max(a, b)))
        return PhyloTree(self.n_leaves, sorted(out_edges), labels=labels)


def resolve_duplicates(clusters: ClusterOutput) -> dict:
    """Assign each leaf to exactly one cluster.

    Leaves claimed by one left and one right cluster go to the smaller
    cluster (ties to the left), shrinking the larger error set.  Returns
    {(side, i): leaf array} plus ("o", 0) for the leftover.
    """
    sizes = {}
    owner = {}
    for side, i, r in clusters.all_clusters():
        sizes[(side, i)] = len(r)
        for leaf in r.tolist():
            if leaf not in owner:
                owner[leaf] = (side, i)
            else:
                prev = owner[leaf]
                cur = (side, i)
                if sizes[cur] < sizes[prev]:
                    owner[leaf] = cur
                elif sizes[cur] == sizes[prev] and cur[0] == "L" and prev[0] == "R":
                    owner[leaf] = cur
    assigned = {}
    for leaf, key in owner.items():
        assigned.setdefault(key, []).append(leaf)
    out = {k: np.asarray(sorted(v), dtype=np.int64) for k, v in assigned.items()}
    out[("o", 0)] = clusters.leftover
    return out


def attach_clusters(
    skel: SkeletonTree,
    clusters: ClusterOutput,
    seed=0,
    provenance: dict | None = None,
    labels=None,
    partial_ok: bool = False,
) -> CandidateTree:
    """Attach every cluster below its anchor and emit the binary tree.

    Each cluster becomes a balanced subtree over its sorted leaf ids, added
    as the rightmost child of its anchor; an anchor left with three
    children gets a fresh vertex holding its two inherited children.  The
    leftover set attaches at the root anchor.  Duplicate leaves are
    resolved by :func:`resolve_duplicates`.  ``seed`` is accepted for
    interface symmetry; assembly is deterministic.

    With ``partial_ok`` (used while a guided search grows the skeleton),
    clusters whose anchor the skeleton does not contain yet fold into the
    leftover blob instead of failing.
    """
    anchors = set(skel.anchor_labels())
    expected = {ROOT_ANCHOR}
    for side in SIDES:
        expected.update(anchor_name(side, i) for i in range(len(clusters.clusters[side])))
    if anchors != expected and not (partial_ok and anchors <= expected):
        raise ReconstructionError(
            f"skeleton anchors {sorted(anchors)} do not match clusters {sorted(expected)}"
        )
    assigned = resolve_duplicates(clusters)
    n_dupes = sum(len(r) for _, _, r in clusters.all_clusters()) + len(
        clusters.leftover
    ) - sum(len(v) for v in assigned.values())

    leaf_sets = {}
    spare = [assigned[("o", 0)]]
    for side, i, _ in clusters.all_clusters():
        leaves_i = assigned.get((side, i), np.empty(0, np.int64))
        if anchor_name(side, i) in anchors:
            leaf_sets[anchor_name(side, i)] = leaves_i
        else:
            spare.append(leaves_i)
    leaf_sets[ROOT_ANCHOR] = np.sort(np.concatenate(spare)) if len(spare) > 1 else spare[0]

    all_leaves = np.concatenate([v for v in leaf_sets.values() if len(v)])
    if len(all_leaves) == 0:
        raise ReconstructionError("no leaves to attach")
    n_universe = int(all_leaves.max()) + 1
    builder = _Builder(n_universe)

    def assemble(node: SkeletonNode) -> int:
        kids = [assemble(c) for c in node.children]
        if node.label is not None:
            mine = leaf_sets.get(node.label, np.empty(0, np.int64))
            if len(mine):
                kids = kids + [builder.balanced(mine)]
        if len(kids) == 0:
            return -1
        kids = [k for k in kids if k >= 0]
        if len(kids) == 0:
            return -1
        if len(kids) == 1:
            return kids[0]
        if len(kids) == 2:
            v = builder.fresh()
            builder.edges.append((v, kids[0]))
            builder.edges.append((v, kids[1]))
            return v
        # three children: fresh left vertex takes the two inherited ones
        v = builder.fresh()
        w = builder.fresh()
        builder.edges.append((w, kids[0]))
        builder.edges.append((w, kids[1]))
        builder.edges.append((v, w))
        builder.edges.append((v, kids[2]))
        return v

    top = assemble(skel.root)
    if top < 0:
        raise ReconstructionError("empty reconstruction")
    if labels is None:
        labels = [f"L{i}" for i in range(n_universe)]
    try:
        tree = builder.finish(labels)
    except TreeError as exc:
        raise ReconstructionError(f"assembled tree invalid: {exc}") from exc
    prov = dict(provenance or {})
    prov.update(
        {"skeleton": _stable_hash(repr(skel.canonical_key())), "duplicates": n_dupes}
    )
    return CandidateTree(tree=tree, provenance=prov)
