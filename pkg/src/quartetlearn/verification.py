"""Empirical risk, the acceptance rule, and the repeat-until-accept driver.

A candidate is accepted when the fraction of sample quartets it violates is
at most eta + (3/4) * eps * (1 - 3*eta/2).  Under random classification
noise the expected violated fraction of a tree at quartet distance d from
the truth is eta + (1 - 3*eta/2) * d, so with enough samples acceptance
certifies closeness.

The driver replaces pure rejection sampling: it deterministically cycles
side-size guesses and skeleton candidates, spending its stochastic budget
on graph coins, cluster-size estimates and rounding picks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .clustering import ClusteringConfig, clustering_step, guess_grid
from .newick import serialize_newick
from .reconstruct import (
    CandidateTree,
    ReconstructionError,
    attach_clusters,
    count_skeletons,
    enumerate_skeletons,
    guided_skeletons,
)
from .rng import substream
from .sampling import QuartetSample, SamplingError, per_draw_to_poisson
from .sdp import RecoveryConfig
from .trees import PhyloTree


class VerificationError(ValueError):
    pass


def empirical_risk(tree, sample: QuartetSample) -> float:
    """Fraction of sample quartets whose claimed split the tree violates."""
    if sample.m == 0:
        raise VerificationError("empty sample")
    t = tree.tree if isinstance(tree, CandidateTree) else tree
    got = t.topology_codes(sample.quads)
    return float(np.mean(got != sample.codes))


def accept_threshold(eta: float, eps: float) -> float:
    return eta + 0.75 * eps * (1.0 - 1.5 * eta)


def accept(risk: float, eta: float, eps: float) -> bool:
    """Accept iff risk <= eta + (3/4) eps (1 - 3 eta / 2)."""
    if not 0.0 <= eta < 2.0 / 3.0 or eps <= 0:
        raise VerificationError(f"bad parameters eta={eta}, eps={eps}")
    return risk <= accept_threshold(eta, eps)


@dataclass
class PipelineConfig:
    """Everything one reconstruction run depends on, bar the sample."""

    eps: float
    eta: float
    delta: float
    repetitions: int = 200
    root_seed: int = 0
    c_prime: float = 400.0
    stop_margin: float = 1.0
    skeleton_budget: int = 64
    subsample: bool = True
    fresh_graph: bool = True
    per_call_resample: bool = True
    guided_search: bool = True
    beam_width: int = 4
    screen_size: int = 1000
    recovery: RecoveryConfig = field(default_factory=lambda: RecoveryConfig(
        attempts=10, restarts=2, max_iters=600, graph_ensemble=5))
    stop_at_first_accept: bool = True

    def validate(self, n: int):
        if not 0 < self.eps:
            raise VerificationError("eps must be positive")
        if not 0 <= self.eta < 2 / 3:
            raise VerificationError("eta must lie in [0, 2/3)")
        if self.delta * n < 1:
            raise VerificationError(f"delta*n = {self.delta * n:.3f} < 1")
        if self.repetitions < 0:
            raise VerificationError("repetitions must be >= 0")


@dataclass
class PipelineResult:
    accepted: bool
    risk: float | None
    threshold: float
    candidate: CandidateTree | None
    repetitions_run: int
    candidates_checked: int
    best_risk: float | None
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out = {
            "accepted": self.accepted,
            "risk": self.risk,
            "threshold": self.threshold,
            "tree_newick": None,
            "provenance": None,
            "repetitions_run": self.repetitions_run,
            "candidates_checked": self.candidates_checked,
            "best_risk": self.best_risk,
        }
        if self.candidate is not None:
            out["tree_newick"] = serialize_newick(self.candidate.tree)
            out["provenance"] = {
                str(k): str(v) for k, v in sorted(self.candidate.provenance.items())
            }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


def run_pipeline(sample: QuartetSample, config: PipelineConfig) -> PipelineResult:
    """Cluster / reconstruct / verify until a candidate passes, or fail.

    Each repetition takes the next side-size guess from the deterministic
    grid, redraws the sparse graph sample and edge coins from its own
    substream, clusters, enumerates skeletons within budget, and verifies
    every assembled candidate on the full sample.  Returns the first
    accepted candidate (lowest risk within its repetition, provenance-hash
    ties broken low); on exhaustion, a failure report carrying the best
    candidate seen.
    """
    n = sample.n_leaves
    config.validate(n)
    tau = accept_threshold(config.eta, config.eps)
    grid = guess_grid(n, config.delta)
    lam = config.c_prime / n**3
    use_rep_subsample = config.subsample and not config.per_call_resample
    if use_rep_subsample:
        required = int(np.ceil(2 * lam * comb(n, 4)))
        if sample.m < required:
            raise VerificationError(
                f"sample of {sample.m} quartets too small to draw the sparse "
                f"graph instance: need >= {required} for c'={config.c_prime}"
            )
    if sample.m == 0:
        raise VerificationError("empty sample")

    ccfg = ClusteringConfig(
        c_prime=config.c_prime,
        eta=config.eta,
        stop_margin=config.stop_margin,
        per_call_resample=config.per_call_resample,
        recovery=config.recovery,
    )

    best: CandidateTree | None = None
    best_risk = np.inf
    accepted: list[CandidateTree] = []
    checked = 0
    rep = -1
    for rep in range(config.repetitions):
        guess = grid[rep % len(grid)]
        if use_rep_subsample:
            try:
                graph_sample = per_draw_to_poisson(
                    sample, lam, substream(config.root_seed, "subsample", rep)
                )
            except SamplingError:
                graph_sample = sample
        else:
            graph_sample = sample
        coin_rep = rep if config.fresh_graph else 0
        out = clustering_step(
            graph_sample,
            np.arange(n),
            guess,
            config.delta,
            ccfg,
            substream(config.root_seed, "clustering", coin_rep, rep),
        )
        k_l, k_r = out.k["L"], out.k["R"]
        labels = _sample_labels(sample, n)
        skels = []
        if config.guided_search and k_l + k_r > 0:
            idx = substream(config.root_seed, "screen").choice(
                sample.m, size=min(sample.m, config.screen_size), replace=False
            )
            screen = QuartetSample(
                quads=sample.quads[idx], codes=sample.codes[idx],
                n_leaves=n, model=sample.model, eta=sample.eta,
            )
            skels.extend(
                guided_skeletons(
                    out,
                    lambda cand: empirical_risk(cand, screen),
                    beam_width=config.beam_width,
                    labels=labels,
                )
            )
        if count_skeletons(k_l, k_r, cap=config.skeleton_budget + 1) <= config.skeleton_budget:
            skels.extend(enumerate_skeletons(k_l, k_r, config.skeleton_budget))
        for skel in skels:
            try:
                cand = attach_clusters(
                    skel,
                    out,
                    provenance={"rep": rep, "guess": guess.rho_left, "seed": config.root_seed},
                    labels=labels,
                )
            except ReconstructionError:
                continue
            cand.risk = empirical_risk(cand, sample)
            checked += 1
            if cand.risk < best_risk:
                best_risk = cand.risk
                best = cand
            if cand.risk <= tau:
                accepted.append(cand)
        if accepted and config.stop_at_first_accept:
            break

    reps_run = min(rep + 1, config.repetitions)
    if accepted:
        accepted.sort(key=lambda c: (c.risk, c.provenance_hash()))
        winner = accepted[0]
        return PipelineResult(
            accepted=True,
            risk=winner.risk,
            threshold=tau,
            candidate=winner,
            repetitions_run=reps_run,
            candidates_checked=checked,
            best_risk=float(best_risk),
        )
    return PipelineResult(
        accepted=False,
        risk=None,
        threshold=tau,
        candidate=best,
        repetitions_run=reps_run,
        candidates_checked=checked,
        best_risk=None if best is None else float(best_risk),
        diagnostics={"note": "no candidate passed verification"},
    )


def _sample_labels(sample: QuartetSample, n: int):
    labels = getattr(sample, "labels", None)
    return labels if labels is not None else [f"L{i}" for i in range(n)]
