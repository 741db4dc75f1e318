"""Tree-distance and dimension tooling.

quartet_distance_exact enumerates all C(n,4) leaf quadruples (chunked,
vectorized over pairwise LCA depths); the sampled variant is its unbiased
Monte Carlo estimator.  embed_tree / quartet_sign realize the contractive
interval embedding whose degree-8 sign polynomial re-derives quartet
topology from leaf coordinates alone -- a fully independent second
implementation used for differential testing.  shatter_family builds the
explicit family of n-3 jointly realizable label pairs witnessing that tree
learning needs a linear number of samples.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, log

import numpy as np

from .rng import as_generator
from .sampling import uniform_four_subsets
from .trees import PhyloTree, RootedTree, TreeError


class MetricsError(ValueError):
    pass


# ====================================================================== #
# Quartet distance                                                       #
# ====================================================================== #


def _label_permutation(t1: PhyloTree, t2: PhyloTree) -> np.ndarray:
    if sorted(t1.labels) != sorted(t2.labels):
        raise MetricsError("trees have different leaf label sets")
    to_id2 = {lab: i for i, lab in enumerate(t2.labels)}
    return np.asarray([to_id2[lab] for lab in t1.labels], dtype=np.int64)


def _pair_lca_depth(rooted: RootedTree) -> np.ndarray:
    n = rooted.n_leaves
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return rooted.lca_depth_many(ii.ravel(), jj.ravel()).reshape(n, n)


def _codes_from_depths(d: np.ndarray, quads: np.ndarray) -> np.ndarray:
    q = quads
    s0 = d[q[:, 0], q[:, 1]] + d[q[:, 2], q[:, 3]]
    s1 = d[q[:, 0], q[:, 2]] + d[q[:, 1], q[:, 3]]
    s2 = d[q[:, 0], q[:, 3]] + d[q[:, 1], q[:, 2]]
    return np.argmax(np.stack([s0, s1, s2]), axis=0).astype(np.int8)


def _all_quads_chunks(n: int, chunk_pairs: int = 2048):
    """Yield all sorted quadruples (i<j<k<l) in blocks, without materializing
    the full C(n,4) table."""
    kl = []
    for k in range(n):
        for l in range(k + 1, n):
            kl.append((k, l))
    kl = np.asarray(kl, dtype=np.int32)  # all k<l pairs
    buf = []
    size = 0
    for i in range(n):
        for j in range(i + 1, n):
            tail = kl[kl[:, 0] > j]
            if not len(tail):
                continue
            block = np.empty((len(tail), 4), dtype=np.int32)
            block[:, 0] = i
            block[:, 1] = j
            block[:, 2:] = tail
            buf.append(block)
            size += len(tail)
            if size >= chunk_pairs * 256:
                yield np.concatenate(buf)
                buf, size = [], 0
    if buf:
        yield np.concatenate(buf)


def quartet_distance_exact(t1: PhyloTree, t2: PhyloTree) -> float:
    """Fraction of the C(n,4) quadruples on which the trees disagree."""
    n = t1.n_leaves
    if n < 4:
        raise MetricsError("need at least 4 leaves")
    perm = _label_permutation(t1, t2)
    d1 = _pair_lca_depth(t1.rooted())
    d2 = _pair_lca_depth(t2.rooted())
    disagreements = 0
    for quads in _all_quads_chunks(n):
        c1 = _codes_from_depths(d1, quads)
        c2 = _codes_from_depths(d2, perm[quads])
        disagreements += int(np.sum(c1 != c2))
    return disagreements / comb(n, 4)


def quartet_distance_sampled(t1: PhyloTree, t2: PhyloTree, samples: int, seed):
    """Unbiased Monte Carlo estimate of the quartet distance, with its
    binomial standard error."""
    if samples < 1:
        raise MetricsError("need at least one sample")
    n = t1.n_leaves
    perm = _label_permutation(t1, t2)
    rng = as_generator(seed)
    quads = uniform_four_subsets(n, samples, rng)
    c1 = t1.topology_codes(quads)
    c2 = t2.topology_codes(perm[quads])
    p = float(np.mean(c1 != c2))
    stderr = float(np.sqrt(p * (1.0 - p) / samples))
    return p, stderr


# ====================================================================== #
# Interval embedding and the sign oracle                                 #
# ====================================================================== #

MAX_EMBED_DEPTH = 50


@dataclass(frozen=True)
class EmbeddingParams:
    """Contraction factor for the interval embedding (default 1/16).

    Requires (1-2g)^8 > max(g^2, g^4, g^8), which holds for g <= 1/16.
    """

    gamma: float = 1.0 / 16.0

    def __post_init__(self):
        g = self.gamma
        if not 0.0 < g < 0.5:
            raise MetricsError(f"gamma must lie in (0, 1/2), got {g}")
        if (1.0 - 2.0 * g) ** 8 <= max(g**2, g**4, g**8):
            raise MetricsError(f"gamma={g} violates (1-2g)^8 > max(g^2,g^4,g^8)")


class EmbedDepthError(MetricsError):
    """Tree deeper than binary64 can resolve at this contraction factor."""


def embed_tree(rooted: RootedTree, params: EmbeddingParams | None = None) -> np.ndarray:
    """Map leaves to [0,1]: each subtree recursively claims the left/right
    gamma-fraction of its interval; single leaves sit at interval midpoints.

    Leaves whose lowest common ancestor has depth lam end up at distance
    within [(1-2*gamma)*gamma^lam, gamma^lam].
    """
    params = params or EmbeddingParams()
    g = params.gamma
    if int(rooted.depth.max()) > MAX_EMBED_DEPTH:
        raise EmbedDepthError(
            f"depth {int(rooted.depth.max())} exceeds {MAX_EMBED_DEPTH}"
        )
    coords = np.empty(rooted.n_leaves, dtype=np.float64)
    stack = [(rooted.root, 0.0, 1.0)]
    while stack:
        v, a, b = stack.pop()
        kids = rooted.children[v]
        if not kids:
            coords[v] = (a + b) / 2.0
            continue
        if len(kids) != 2:
            raise MetricsError("embedding needs a binary rooted tree")
        w = b - a
        stack.append((kids[0], a, a + g * w))
        stack.append((kids[1], b - g * w, b))
    return coords


def quartet_sign(xi: float, xj: float, xk: float, xl: float) -> int:
    """Sign of ((xi-xk)(xi-xl)(xj-xk)(xj-xl))^2 - ((xi-xj)(xk-xl))^4.

    Positive iff the split ij|kl is the tree topology of the embedded
    leaves.  Evaluated in log magnitude so deep embeddings cannot
    underflow; coincident coordinates or an exact zero are reported as
    violations.
    """
    cross = (xi - xk, xi - xl, xj - xk, xj - xl)
    within = (xi - xj, xk - xl)
    if any(t == 0.0 for t in cross + within):
        raise MetricsError("degenerate embedding: coincident coordinates")
    lhs = 2.0 * sum(log(abs(t)) for t in cross)
    rhs = 4.0 * sum(log(abs(t)) for t in within)
    if lhs == rhs:
        raise MetricsError("sign polynomial vanished (invalid embedding)")
    return 1 if lhs > rhs else -1


def topology_code_from_embedding(coords: np.ndarray, quad) -> int:
    """Re-derive the topology code of a sorted quadruple from coordinates
    alone: the unique pairing whose sign polynomial is positive."""
    q0, q1, q2, q3 = (int(x) for x in quad)
    x = coords
    candidates = (
        (x[q0], x[q1], x[q2], x[q3]),
        (x[q0], x[q2], x[q1], x[q3]),
        (x[q0], x[q3], x[q1], x[q2]),
    )
    signs = [quartet_sign(*c) for c in candidates]
    positives = [i for i, s in enumerate(signs) if s > 0]
    if len(positives) != 1:
        raise MetricsError(f"sign oracle ambiguous on {quad}: {signs}")
    return positives[0]


# ====================================================================== #
# Shattering family                                                      #
# ====================================================================== #


def shatter_family(n: int):
    """The n-3 four-sets {a1,a2,a3,b} with two jointly realizable labels.

    Returns (four_sets, label_pairs, build) where label_pairs[i] holds the
    two topology codes (a1 b | a2 a3) and (a2 b | a1 a3) for four_sets[i],
    and build(g) realizes any 0/1 labeling g as an explicit tree: b becomes
    a sibling of a1 when g[b]=0, of a2 when g[b]=1.  Every one of the
    2^(n-3) labelings is realizable, so these sets are jointly shattered.
    """
    if n < 5:
        raise MetricsError("need n >= 5 for a nonempty shattering family")
    base = (0, 1, 2)
    others = list(range(3, n))
    four_sets = [tuple(sorted(base + (b,))) for b in others]
    # sorted 4-set is (0, 1, 2, b): code = index of 0's partner in (1, 2, b)
    #   a1 b | a2 a3  = (0,b),(1,2)  -> code 2
    #   a2 b | a1 a3  = (1,b),(0,2)  -> code 1
    label_pairs = [(2, 1) for _ in others]

    def build(g) -> PhyloTree:
        gv = list(g)
        if len(gv) != n - 3 or any(x not in (0, 1) for x in gv):
            raise MetricsError("labeling must be 0/1 of length n-3")
        center = n
        edges = [(0, n), (1, n), (2, n)]
        next_internal = n + 1
        pendant = {0: (0, n), 1: (1, n)}  # current edge incident to a1 / a2
        for b, bit in zip(others, gv):
            target = 0 if bit == 0 else 1
            u, v = pendant[target]
            edges.remove((u, v))
            w = next_internal
            next_internal += 1
            edges.extend([(u, w), (w, v), (w, b)])
            pendant[target] = (target, w)
        return PhyloTree(n, sorted(edges), validate=True)

    return four_sets, label_pairs, build
