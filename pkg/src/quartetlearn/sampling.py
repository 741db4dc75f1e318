"""Quartet sample generation under the two noise models, plus quartet files.

Per-draw model: each of m quartets picks a uniform 4-subset of leaves and is
labeled with the true topology with probability 1-eta, otherwise with one of
the two wrong splits (each with probability eta/2).

Poissonized model: every 4-subset independently contributes Poisson(lam)
quartets.  A label is kept clean with probability 1-q and replaced by a
uniformly random one of the three splits with probability q = 3*eta/2 --
distributionally identical to the per-draw rule (the uniform relabel lands
on the correct split a third of the time), but exposing the latent
clean/random marker that the thinning diagnostics need.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .rng import as_generator
from .trees import PhyloTree


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class Quartet:
    """One labeled quartet: sorted leaf 4-tuple plus topology code."""

    leaves: tuple
    code: int

    def pairs(self):
        q0, q1, q2, q3 = self.leaves
        rest = (q1, q2, q3)
        partner = rest[self.code]
        others = tuple(x for x in rest if x != partner)
        return ((q0, partner), others)


@dataclass
class QuartetSample:
    """A multiset of labeled quartets with noise metadata.

    ``quads`` rows are sorted ascending; ``codes[i]`` gives the claimed
    partner of ``quads[i, 0]`` (0 -> quads[i,1], 1 -> quads[i,2],
    2 -> quads[i,3]).  ``is_random`` marks quartets whose label was drawn
    uniformly at random (Poisson model only; diagnostics, not algorithm
    input).
    """

    quads: np.ndarray
    codes: np.ndarray
    n_leaves: int
    model: str
    eta: float
    seed: int | None = None
    lam: float | None = None
    is_random: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.codes)

    def __len__(self) -> int:
        return len(self.codes)

    def quartet(self, i: int) -> Quartet:
        return Quartet(tuple(int(x) for x in self.quads[i]), int(self.codes[i]))


def _check_eta(eta: float):
    if not 0.0 <= eta < 2.0 / 3.0:
        raise SamplingError(f"eta must lie in [0, 2/3), got {eta}")


def uniform_four_subsets(n: int, m: int, rng) -> np.ndarray:
    """m uniform unordered 4-subsets of range(n), rows sorted ascending.

    Rejection-free: each coordinate is drawn from the shrunken range and
    shifted past the already chosen values.
    """
    if n < 4:
        raise SamplingError("need n >= 4")
    out = np.empty((m, 4), dtype=np.int32)
    chosen = np.empty((m, 4), dtype=np.int32)
    for j in range(4):
        draw = rng.integers(0, n - j, size=m).astype(np.int32)
        prev = np.sort(chosen[:, :j], axis=1)
        for k in range(j):
            draw += draw >= prev[:, k]
        chosen[:, j] = draw
    out[:] = np.sort(chosen, axis=1)
    return out


def _apply_rcn_noise(true_codes, eta, rng):
    m = len(true_codes)
    flip = rng.random(m) < eta
    shift = rng.integers(1, 3, size=m)
    codes = np.where(flip, (true_codes + shift) % 3, true_codes)
    return codes.astype(np.int8), flip


def sample_per_draw(tree: PhyloTree, m: int, eta: float, seed) -> QuartetSample:
    """m i.i.d. noisy quartets from uniform 4-subsets of the leaves."""
    _check_eta(eta)
    if m < 0:
        raise SamplingError("m must be nonnegative")
    rng = as_generator(seed)
    n = tree.n_leaves
    quads = uniform_four_subsets(n, m, rng)
    true_codes = tree.topology_codes(quads) if m else np.empty(0, dtype=np.int8)
    codes, _ = _apply_rcn_noise(true_codes, eta, rng)
    return QuartetSample(
        quads=quads,
        codes=codes,
        n_leaves=n,
        model="rcn",
        eta=float(eta),
        seed=seed if isinstance(seed, int) else None,
    )


# the per-draw model is the classical random-classification-noise sampler
sample_rcn = sample_per_draw


def sample_poisson(tree: PhyloTree, lam: float, eta: float, seed) -> QuartetSample:
    """Poissonized sample: Poisson(lam) quartets per 4-subset.

    Drawn by superposition: total count ~ Poisson(lam * C(n,4)), placed
    uniformly, which is exact and avoids iterating all 4-subsets.
    """
    _check_eta(eta)
    if lam <= 0:
        raise SamplingError(f"lam must be positive, got {lam}")
    rng = as_generator(seed)
    n = tree.n_leaves
    total_rate = lam * comb(n, 4)
    m = int(rng.poisson(total_rate))
    quads = uniform_four_subsets(n, m, rng)
    true_codes = tree.topology_codes(quads) if m else np.empty(0, dtype=np.int8)
    q = 1.5 * eta
    is_random = rng.random(m) < q
    uniform_codes = rng.integers(0, 3, size=m).astype(np.int8)
    codes = np.where(is_random, uniform_codes, true_codes).astype(np.int8)
    return QuartetSample(
        quads=quads,
        codes=codes,
        n_leaves=n,
        model="poisson",
        eta=float(eta),
        seed=seed if isinstance(seed, int) else None,
        lam=float(lam),
        is_random=is_random,
    )


def per_draw_to_poisson(sample: QuartetSample, lam: float, seed) -> QuartetSample:
    """Simulate a Poisson-model instance from a per-draw sample pool.

    Draws X ~ Poisson(lam * C(n,4)) and returns X quartets subsampled
    uniformly without replacement (all of them if X exceeds the pool).
    The pool must hold at least twice the Poisson mean so the truncation
    event is negligible.
    """
    if lam <= 0:
        raise SamplingError(f"lam must be positive, got {lam}")
    rng = as_generator(seed)
    mean = lam * comb(sample.n_leaves, 4)
    required = int(np.ceil(2 * mean))
    if sample.m < required:
        raise SamplingError(
            f"pool of {sample.m} quartets too small: need >= {required} "
            f"(= 2 * lam * C(n,4)) for lam={lam}"
        )
    x = int(rng.poisson(mean))
    take = min(x, sample.m)
    idx = rng.choice(sample.m, size=take, replace=False)
    idx.sort()
    return QuartetSample(
        quads=sample.quads[idx],
        codes=sample.codes[idx],
        n_leaves=sample.n_leaves,
        model="poisson",
        eta=sample.eta,
        seed=sample.seed,
        lam=float(lam),
        is_random=None if sample.is_random is None else sample.is_random[idx],
    )


rcn_to_poisson = per_draw_to_poisson


# ====================================================================== #
# Quartet files                                                          #
# ====================================================================== #


def write_quartets(path, sample: QuartetSample, labels):
    """One quartet per line, ``a b | c d`` using leaf labels.

    The header records the noise metadata; '#' lines are comments.
    """
    with open(path, "w", encoding="utf-8") as fh:
        seed = sample.seed if sample.seed is not None else 0
        fh.write(f"eta={sample.eta} model={sample.model} seed={seed}\n")
        if sample.lam is not None:
            fh.write(f"# lambda={sample.lam}\n")
        for i in range(sample.m):
            (a, b), (c, d) = sample.quartet(i).pairs()
            fh.write(f"{labels[a]} {labels[b]} | {labels[c]} {labels[d]}\n")


def read_quartets(path, labels) -> QuartetSample:
    """Parse a quartet file; ``labels`` maps dense ids to label strings."""
    label_to_id = {lab: i for i, lab in enumerate(labels)}
    quads, codes = [], []
    header = None
    lam = None
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "lambda=" in line:
                    lam = float(line.split("lambda=")[1].split()[0])
                continue
            if header is None:
                header = dict(part.split("=", 1) for part in line.split())
                continue
            left, right = line.split("|")
            a, b = (label_to_id[x] for x in left.split())
            c, d = (label_to_id[x] for x in right.split())
            four = sorted((a, b, c, d))
            if len(set(four)) != 4:
                raise SamplingError(f"repeated leaf in quartet line: {line!r}")
            q0 = four[0]
            partner = b if q0 == a else a if q0 == b else d if q0 == c else c
            code = four[1:].index(partner)
            quads.append(four)
            codes.append(code)
    if header is None:
        raise SamplingError("missing header line")
    return QuartetSample(
        quads=np.asarray(quads, dtype=np.int32).reshape(-1, 4),
        codes=np.asarray(codes, dtype=np.int8),
        n_leaves=len(labels),
        model=header["model"],
        eta=float(header["eta"]),
        seed=int(header["seed"]),
        lam=lam,
    )
