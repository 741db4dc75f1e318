"""Random leaf graphs built from quartet samples.

Each quartet contributes exactly one edge: one of its two claimed pairs,
chosen by a fair coin.  Per-edge provenance (the full 4-subset) is kept so
that restricting the graph to an active leaf set can drop exactly the edges
whose quartet touches an inactive leaf.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import as_generator
from .sampling import QuartetSample


class GraphError(ValueError):
    pass


@dataclass
class LeafGraph:
    """Multigraph on an active leaf subset with quartet provenance.

    ``edge_u``/``edge_v`` are the chosen pair of each surviving quartet;
    ``edge_quads`` holds the originating 4-subsets (rows sorted).  Parallel
    edges are kept; the SDP consumes only the presence indicator.
    """

    n_leaves: int
    vertices: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    edge_quads: np.ndarray

    @property
    def gamma(self) -> float:
        return len(self.vertices) / self.n_leaves

    @property
    def n_edges(self) -> int:
        return len(self.edge_u)

    def restrict(self, active) -> "LeafGraph":
        """Subgraph on ``active``: drops every edge whose quartet uses a leaf
        outside ``active``.  Idempotent; restricting to all leaves is the
        identity."""
        active = np.unique(np.asarray(active, dtype=np.int64))
        if active.size == 0:
            raise GraphError("active set is empty")
        if active.min() < 0 or active.max() >= self.n_leaves:
            raise GraphError("active ids out of range")
        mask = np.zeros(self.n_leaves, dtype=bool)
        mask[active] = True
        keep = mask[self.edge_quads].all(axis=1)
        return LeafGraph(
            n_leaves=self.n_leaves,
            vertices=active.astype(np.int32),
            edge_u=self.edge_u[keep],
            edge_v=self.edge_v[keep],
            edge_quads=self.edge_quads[keep],
        )

    def indicator_matrix(self) -> np.ndarray:
        """Dense 0/1 presence matrix over the active vertices (zero diagonal).

        Row/column order follows ``self.vertices``; parallel edges collapse.
        """
        m = len(self.vertices)
        index = np.full(self.n_leaves, -1, dtype=np.int64)
        index[self.vertices] = np.arange(m)
        a = np.zeros((m, m), dtype=np.float64)
        iu = index[self.edge_u]
        iv = index[self.edge_v]
        a[iu, iv] = 1.0
        a[iv, iu] = 1.0
        np.fill_diagonal(a, 0.0)
        return a

    def multiplicity_matrix(self) -> np.ndarray:
        """Edge multiplicities over the active vertices (diagnostics only)."""
        m = len(self.vertices)
        index = np.full(self.n_leaves, -1, dtype=np.int64)
        index[self.vertices] = np.arange(m)
        a = np.zeros((m, m), dtype=np.int64)
        np.add.at(a, (index[self.edge_u], index[self.edge_v]), 1)
        np.add.at(a, (index[self.edge_v], index[self.edge_u]), 1)
        return a

    def dump_edges(self, path):
        """Debug TSV: ``u v qa qb qc qd`` per edge."""
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(self.n_edges):
                qa, qb, qc, qd = self.edge_quads[i]
                fh.write(
                    f"{self.edge_u[i]}\t{self.edge_v[i]}\t{qa}\t{qb}\t{qc}\t{qd}\n"
                )


def build_graph(sample: QuartetSample, seed) -> LeafGraph:
    """One edge per quartet: the first or second claimed pair, each w.p. 1/2."""
    rng = as_generator(seed)
    m = sample.m
    n = sample.n_leaves
    if n < 1:
        raise GraphError("empty leaf set")
    coins = rng.integers(0, 2, size=m).astype(bool)
    q = sample.quads.astype(np.int32)
    codes = sample.codes.astype(np.int64)
    rest = q[:, 1:]
    partner = rest[np.arange(m), codes] if m else np.empty(0, dtype=np.int32)
    # other two leaves of each quartet
    sel = np.ones((m, 3), dtype=bool)
    if m:
        sel[np.arange(m), codes] = False
    others = rest[sel].reshape(m, 2)
    pair1 = np.stack([q[:, 0], partner], axis=1) if m else np.empty((0, 2), np.int32)
    pair2 = others
    chosen = np.where(coins[:, None], pair1, pair2) if m else pair1
    return LeafGraph(
        n_leaves=n,
        vertices=np.arange(n, dtype=np.int32),
        edge_u=chosen[:, 0].astype(np.int32),
        edge_v=chosen[:, 1].astype(np.int32),
        edge_quads=q,
    )


def rho_bounds(x, c: float, n: int, eta: float, err: float = 0.0):
    """Edge-probability envelope (lower, upper) at subtree fraction x.

    lower = (c/n) * ((1 - 2x + x^2)(1 - 3 eta/2) + eta/2 - err)
    upper = (c/n) * ((1 - 2x + 2 x^2)(1 - 3 eta/2) + eta/2 + err)

    Accepts scalars or arrays for x.
    """
    x = np.asarray(x, dtype=np.float64)
    s = 1.0 - 1.5 * eta
    lo = (c / n) * ((1.0 - 2.0 * x + x**2) * s + eta / 2.0 - err)
    hi = (c / n) * ((1.0 - 2.0 * x + 2.0 * x**2) * s + eta / 2.0 + err)
    if x.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


def rho_cross_root_upper(alpha: float, beta: float, c: float, n: int, eta: float,
                         err: float = 0.0) -> float:
    """Upper edge-probability bound for pairs straddling the root:
    (c/n) * ((1 - 2 alpha beta)(1 - 3 eta/2) + eta/2 + err)."""
    s = 1.0 - 1.5 * eta
    return (c / n) * ((1.0 - 2.0 * alpha * beta) * s + eta / 2.0 + err)
