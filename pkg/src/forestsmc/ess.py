"""Effective sample size (ESS) of weighted particles under grouped interaction.

The central quantity is the ESS functional

    ess(a, c) = (sum_i sum_j a[i, j] * c[j])^2 / sum_i (sum_j a[i, j] * c[j])^2

where ``c`` is a vector of strictly positive particle masses and ``a`` is an
interaction matrix that is doubly stochastic over a support set ``V`` of
particle indices and zero elsewhere.  ``ess(a, c)`` lies in ``[1, |V|]`` and
measures how evenly mass is spread after one application of ``a``.

When the interaction graph behind ``a`` is a disjoint union of cliques, ``a``
is fully determined by a partition ``P`` of ``V`` and the ESS collapses to a
function of per-block mass totals:

    ess(P, c) = (sum_S t_S)^2 / sum_S (t_S^2 / |S|),    t_S = sum(c[j], j in S)

which never requires materializing a matrix.  The normalized variant
``rho(P, c) = ess(P, c) / |V|`` is the fraction of the attainable maximum and
is the quantity thresholded by the recursive selector `choose_a_reference`.

Dense matrices (`DenseAlpha`) exist as a small-scale cross-check oracle;
partitions are the production representation.  Particle indices are 0-based
throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "IndexSet",
    "Partition",
    "DenseAlpha",
    "as_weights",
    "ess_weights",
    "ess_dense",
    "ess_partition",
    "rho",
    "partition_to_matrix",
    "is_coarsening",
    "singletons",
    "one_block",
    "choose_a_reference",
]

# A sorted tuple of 0-based particle indices.
IndexSet = tuple[int, ...]

# Splitter contract for choose_a_reference: given (V, threshold, c), return a
# partition P of V with rho(P, c) >= threshold.  The single-block partition
# always qualifies, so a splitter can always succeed.
Splitter = Callable[[IndexSet, float, np.ndarray], "Partition"]


def as_weights(values, n: int | None = None) -> np.ndarray:
    """Validate and return a mass vector as a float64 array.

    Every entry must be finite and strictly positive; ``n``, when given,
    pins the expected length.
    """
    c = np.asarray(values, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("weights must be a nonempty 1-d sequence")
    if n is not None and c.size != n:
        raise ValueError(f"expected {n} weights, got {c.size}")
    if not np.all(np.isfinite(c)) or np.any(c <= 0.0):
        raise ValueError("weights must be finite and strictly positive")
    return c


def _as_index_set(members: Iterable[int]) -> IndexSet:
    out = tuple(sorted(int(i) for i in members))
    if any(i < 0 for i in out):
        raise ValueError("particle indices must be nonnegative")
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate particle index in {out}")
    return out


@dataclass(frozen=True)
class Partition:
    """Pairwise-disjoint, nonempty index blocks covering their union.

    Block order is preserved as given (some callers address blocks by
    position); each block is stored sorted.  Functions in this package that
    *return* partitions order blocks by smallest member, so equal partitions
    compare equal when produced by this package.
    """

    blocks: tuple[IndexSet, ...]

    def __post_init__(self):
        norm = tuple(_as_index_set(b) for b in self.blocks)
        seen: set[int] = set()
        for b in norm:
            if not b:
                raise ValueError("partition blocks must be nonempty")
            if seen.intersection(b):
                raise ValueError("partition blocks must be pairwise disjoint")
            seen.update(b)
        object.__setattr__(self, "blocks", norm)

    @property
    def ground(self) -> IndexSet:
        """Union of all blocks, sorted."""
        return tuple(sorted(i for b in self.blocks for i in b))

    @property
    def size(self) -> int:
        """Number of covered indices."""
        return sum(len(b) for b in self.blocks)

    def block_sets(self) -> frozenset[IndexSet]:
        """Order-free view, convenient for equality checks."""
        return frozenset(self.blocks)


def singletons(members: Iterable[int]) -> Partition:
    """The finest partition of an index set."""
    return Partition(tuple((i,) for i in _as_index_set(members)))


def one_block(members: Iterable[int]) -> Partition:
    """The coarsest partition of an index set."""
    return Partition((_as_index_set(members),))


@dataclass(frozen=True)
class DenseAlpha:
    """A dense interaction matrix, doubly stochastic over its support.

    Entries outside ``support x support`` must be zero, and row and column
    sums over the support must equal 1.  Intended as a test oracle for small
    particle counts; the production path works with partitions only.
    """

    entries: np.ndarray
    support: IndexSet

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("entries must be a square matrix")
        sup = _as_index_set(self.support)
        n = a.shape[0]
        if sup and sup[-1] >= n:
            raise ValueError("support index outside matrix dimension")
        if np.any(a < 0):
            raise ValueError("entries must be nonnegative")
        mask = np.zeros(n, dtype=bool)
        mask[list(sup)] = True
        off = a[~mask, :].any() or a[:, ~mask].any()
        if off:
            raise ValueError("nonzero entry outside support")
        if sup:
            rows = a[np.ix_(mask, mask)].sum(axis=1)
            cols = a[np.ix_(mask, mask)].sum(axis=0)
            if not (np.allclose(rows, 1.0, atol=1e-8) and np.allclose(cols, 1.0, atol=1e-8)):
                raise ValueError("rows and columns over the support must sum to 1")
        elif a.any():
            raise ValueError("empty support requires the zero matrix")
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "support", sup)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def ess_weights(c) -> float:
    """ESS of a bare weight vector: ``(sum c)^2 / sum c^2``.

    Equals ``ess_dense(identity, c)`` and is the quantity tracked per step by
    the particle filter driver.
    """
    c = as_weights(c)
    s = float(c.sum())
    return s * s / float(np.dot(c, c))


def ess_dense(a: DenseAlpha, c) -> float:
    """ESS of an interaction matrix acting on masses ``c``.

    Returns 0 for an empty support, otherwise a value in ``[1, |support|]``.
    """
    c = as_weights(c, n=a.n)
    if not a.support:
        return 0.0
    y = a.entries @ c
    s = float(y.sum())
    return s * s / float(np.dot(y, y))


def ess_partition(p: Partition, c) -> float:
    """ESS of the clique-union interaction described by a partition.

    Computed from block mass totals only.  A single block yields exactly the
    number of covered indices (the attainable maximum), and an empty
    partition yields 0.
    """
    c = as_weights(c)
    if not p.blocks:
        return 0.0
    hi = max(b[-1] for b in p.blocks)
    if hi >= c.size:
        raise IndexError("partition index out of range for the weight vector")
    if len(p.blocks) == 1:
        return float(len(p.blocks[0]))
    num = 0.0
    den = 0.0
    for b in p.blocks:
        t = float(c[list(b)].sum())
        num += t
        den += t * t / len(b)
    return num * num / den


def rho(p: Partition, c) -> float:
    """Fraction of the attainable ESS: ``ess_partition(p, c) / |ground|``.

    Always exactly 1.0 for a single-block partition.
    """
    if not p.blocks:
        raise ValueError("rho is undefined for an empty partition")
    return ess_partition(p, c) / p.size


def partition_to_matrix(p: Partition, n: int | None = None) -> DenseAlpha:
    """Dense interaction matrix of a partition: ``1/|S|`` within each block.

    ``n`` fixes the matrix dimension (default: one past the largest index).
    Small-scale oracle only; never used on the production path.
    """
    ground = p.ground
    if n is None:
        n = (ground[-1] + 1) if ground else 0
    elif ground and ground[-1] >= n:
        raise ValueError("matrix dimension too small for partition indices")
    a = np.zeros((n, n))
    for b in p.blocks:
        idx = list(b)
        a[np.ix_(idx, idx)] = 1.0 / len(b)
    return DenseAlpha(a, ground)


def is_coarsening(fine: Partition, coarse: Partition) -> bool:
    """True when every block of ``fine`` sits inside some block of ``coarse``.

    Both partitions must cover the same ground set.
    """
    if fine.ground != coarse.ground:
        raise ValueError("partitions cover different ground sets")
    owner: dict[int, int] = {}
    for k, b in enumerate(coarse.blocks):
        for i in b:
            owner[i] = k
    for b in fine.blocks:
        k = owner[b[0]]
        if any(owner[i] != k for i in b):
            return False
    return True


def choose_a_reference(v: Iterable[int], tau: float, c, splitter: Splitter) -> Partition:
    """Recursively pick a partition of ``v`` whose ESS is at least ``tau * |v|``.

    One round asks ``splitter`` for a partition ``P`` of ``v`` with
    ``rho(P, c) >= tau``; a single-block proposal is accepted as-is, and any
    other proposal triggers recursion into each block with the inflated
    threshold ``tau / rho(P, c)``.  The returned partition ``P*`` satisfies
    ``ess_partition(P*, c) >= tau * |v|``.

    Reference implementation at index-set level, mirrored at scale by the
    tree-based forest selector.
    """
    v = _as_index_set(v)
    if not v:
        raise ValueError("cannot choose a partition of an empty index set")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    c = as_weights(c)
    p = splitter(v, tau, c)
    if p.ground != v:
        raise ValueError("splitter returned a partition of the wrong index set")
    r = rho(p, c)
    if r < tau:
        raise ValueError(f"splitter proposal has rho={r} below threshold {tau}")
    if len(p.blocks) == 1:
        return p
    merged: list[IndexSet] = []
    for b in p.blocks:
        sub = choose_a_reference(b, tau / r, c, splitter)
        merged.extend(sub.blocks)
    merged.sort(key=lambda blk: blk[0])
    return Partition(tuple(merged))
