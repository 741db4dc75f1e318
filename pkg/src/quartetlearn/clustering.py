"""Iterative per-side cluster extraction.

For each side guess (rho_left, rho_right) of the root split, the loop keeps
an active leaf set per side, repeatedly recovers one cluster of size in
[delta*n, 2*delta*n] from the quartet graph restricted to the active
leaves, and removes it, stopping once the recovered mass approaches the
guessed side size.  Unassigned leaves form the leftover set.

The two sides run against the same leaf universe -- the algorithm never
consults the true rooting -- so clusters from opposite sides may overlap;
reconstruction resolves duplicates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, floor

import numpy as np

from .leafgraph import LeafGraph, build_graph
from .rng import as_generator, substream
from .sampling import QuartetSample, SamplingError, per_draw_to_poisson
from .sdp import ClusterRecoveryError, RecoveryConfig, SdpError, recover_cluster

SIDES = ("L", "R")


@dataclass(frozen=True)
class SideGuess:
    """Guessed left/right leaf counts of the hidden balanced rooting."""

    rho_left: int
    rho_right: int

    def rho(self, side: str) -> int:
        return self.rho_left if side == "L" else self.rho_right


def guess_grid(n: int, delta: float) -> list[SideGuess]:
    """Deterministic grid of side-size guesses, step delta*n over [n/3, 2n/3].

    Enumerating the grid replaces the probability-delta random guess: some
    grid value is always within delta*n of the true left size.
    """
    step = int(round(delta * n))
    if step < 1:
        raise ValueError(f"delta*n = {delta * n:.3f} < 1: grid step must be >= 1")
    lo = floor(n / 3)
    hi = ceil(2 * n / 3)
    out = []
    rho = lo
    while rho <= hi:
        out.append(SideGuess(rho_left=rho, rho_right=n - rho))
        rho += step
    return out


def delta_hat_grid(delta: float) -> np.ndarray:
    """Cluster-size-estimate grid: delta * (1 + k*delta^2) up to 8*delta,
    clipped below 1 (a relative size estimate cannot reach 1)."""
    ratios = np.arange(0.0, 7.0 / delta**2 + 2.0)
    vals = delta * (1.0 + ratios * delta**2)
    return vals[(vals <= 8.0 * delta) & (vals < 0.999)]


@dataclass
class ClusteringConfig:
    """Knobs for one clustering run.

    ``stop_margin`` is the per-side stopping slack in units of delta*n (the
    analysis constant is 49; desk-scale runs shrink it so more of each side
    gets clustered).  ``delta_hat`` fixes the cluster-size estimate; when
    None, each recovery call samples one value from delta_hat_grid,
    restricted to estimates that put the target size within reach of the
    current active set.

    ``per_call_resample``: by default one edge-coin graph is built per run
    and only restricted as leaves are removed, which starves late calls of
    edges at desk scale (the surviving quartet count falls like the fourth
    power of the active fraction).  When set, every recovery call draws a
    fresh sparse sample from the quartets internal to its active set, with
    the rate scaled by 1/gamma^2 so the working density stays constant.
    """

    c_prime: float
    eta: float
    stop_margin: float = 49.0
    delta_hat: float | None = None
    max_rounds_factor: float = 1.0
    per_call_resample: bool = False
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)


@dataclass
class ClusterOutput:
    clusters: dict
    leftover: np.ndarray
    diagnostics: list
    partial: bool = False

    @property
    def k(self) -> dict:
        return {s: len(self.clusters[s]) for s in SIDES}

    def all_clusters(self):
        for side in SIDES:
            for i, r in enumerate(self.clusters[side]):
                yield side, i, r


def _call_graphs(sample, active, n, cfg, rng):
    """Fresh density-compensated graph(s) on the quartets internal to active."""
    mask = np.zeros(n, dtype=bool)
    mask[active] = True
    keep = mask[sample.quads].all(axis=1)
    pool = QuartetSample(
        quads=sample.quads[keep],
        codes=sample.codes[keep],
        n_leaves=n,
        model=sample.model,
        eta=sample.eta,
    )
    gamma = len(active) / n
    lam = cfg.c_prime / (gamma * gamma * n**3)
    from math import comb

    cap = pool.m / (2.0 * comb(len(active), 4)) if len(active) >= 4 else 0.0
    lam = min(lam, cap) if cap > 0 else lam
    graphs = []
    for _ in range(max(1, cfg.recovery.graph_ensemble)):
        sub_seed = int(rng.integers(2**63))
        coin_seed = int(rng.integers(2**63))
        try:
            draw = per_draw_to_poisson(pool, lam, sub_seed) if lam > 0 else pool
        except SamplingError:
            draw = pool
        graphs.append(build_graph(draw, coin_seed).restrict(active))
    # the 1/gamma^2 rate boost means the working density corresponds to
    # c_prime / gamma^2 at this restriction level
    return graphs, cfg.c_prime / (gamma * gamma)


def clustering_step(
    sample: QuartetSample,
    leaves,
    guess: SideGuess,
    delta: float,
    cfg: ClusteringConfig,
    seed,
    graph: LeafGraph | None = None,
) -> ClusterOutput:
    """Run both side loops for one guess; returns clusters and leftover.

    A fresh edge-coin graph is built from ``sample`` unless ``graph`` is
    supplied (one coin per quartet per run).
    """
    leaves = np.asarray(sorted(leaves), dtype=np.int64)
    n = sample.n_leaves
    if graph is None and not cfg.per_call_resample:
        graph = build_graph(sample, substream(_seed_int(seed), "edge-coins"))
    rng = as_generator(seed)
    dgrid = delta_hat_grid(delta)
    clusters = {s: [] for s in SIDES}
    diagnostics = []
    partial = False
    max_rounds = int(ceil(cfg.max_rounds_factor / delta)) + 1

    for side in SIDES:
        active = leaves.copy()
        assigned = 0
        rho = guess.rho(side)
        for i in range(max_rounds):
            if assigned > rho - cfg.stop_margin * delta * n:
                break
            if cfg.delta_hat is not None:
                dh = cfg.delta_hat
            else:
                # keep only estimates near the low end of the target band:
                # the estimate should sit just above the true relative size
                feas = dgrid[
                    (dgrid * len(active) >= delta * n)
                    & (dgrid * len(active) <= 1.6 * delta * n)
                ]
                pool_grid = feas if len(feas) else dgrid[:1]
                dh = float(pool_grid[rng.integers(len(pool_grid))])
            call_seed = int(rng.integers(2**63))
            try:
                if cfg.per_call_resample:
                    call_g, c_eff = _call_graphs(sample, active, n, cfg, rng)
                else:
                    call_g, c_eff = graph, cfg.c_prime
                r, diag = recover_cluster(
                    call_g, active, delta, dh, c_eff, cfg.eta,
                    call_seed, cfg.recovery,
                )
            except (ClusterRecoveryError, SdpError) as exc:
                diagnostics.append({"side": side, "round": i, "error": str(exc)})
                partial = True
                break
            diag.update({"side": side, "round": i})
            diagnostics.append(diag)
            clusters[side].append(np.asarray(r, dtype=np.int64))
            assigned += len(r)
            mask = np.isin(active, r, invert=True)
            active = active[mask]

    taken = np.zeros(n, dtype=bool)
    for side in SIDES:
        for r in clusters[side]:
            taken[r] = True
    leftover = leaves[~taken[leaves]]
    return ClusterOutput(
        clusters=clusters, leftover=leftover, diagnostics=diagnostics, partial=partial
    )


def _seed_int(seed) -> int:
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2**63))
    return int(seed)
