"""Shared generators and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np

from forestsmc import BranchingSpec, DenseAlpha, Partition, build_tree, rng_for
from forestsmc.engine import CH_INIT, CH_STEP


def random_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    """Positive masses spanning a few orders of magnitude."""
    return np.exp(rng.uniform(-3.0, 3.0, size=n))


def random_subset(rng: np.random.Generator, n: int, k: int | None = None) -> tuple[int, ...]:
    if k is None:
        k = int(rng.integers(1, n + 1))
    return tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))


def random_partition(rng: np.random.Generator, members) -> Partition:
    """Uniformly scrambled split of an index set into 1..len blocks."""
    members = list(members)
    rng.shuffle(members)
    k = int(rng.integers(1, len(members) + 1))
    cuts = sorted(rng.choice(len(members) - 1, size=k - 1, replace=False).tolist()) if k > 1 else []
    bounds = [0] + [c + 1 for c in cuts] + [len(members)]
    blocks = [tuple(sorted(members[a:b])) for a, b in zip(bounds[:-1], bounds[1:])]
    blocks.sort(key=lambda b: b[0])
    return Partition(tuple(blocks))


def random_doubly_stochastic(rng: np.random.Generator, n: int, support) -> DenseAlpha:
    """Convex combination of permutation matrices over the support set."""
    support = tuple(sorted(support))
    a = np.zeros((n, n))
    k = len(support)
    if k:
        coeffs = rng.dirichlet(np.ones(int(rng.integers(2, 6))))
        idx = np.asarray(support)
        for lam in coeffs:
            perm = rng.permutation(k)
            a[idx, idx[perm]] += lam
    return DenseAlpha(a, support)


def combine(a: DenseAlpha, b: DenseAlpha) -> DenseAlpha:
    """Sum of two interaction matrices with disjoint supports."""
    assert not set(a.support) & set(b.support)
    return DenseAlpha(a.entries + b.entries, tuple(sorted(a.support + b.support)))


def random_shape(rng: np.random.Generator, n_leaves: int, max_children: int = 4):
    """Random nested tree shape with the given number of leaves."""
    if n_leaves == 1:
        return None
    k = int(rng.integers(2, min(max_children, n_leaves) + 1))
    sizes = np.ones(k, dtype=int)
    for _ in range(n_leaves - k):
        sizes[rng.integers(0, k)] += 1
    return tuple(random_shape(rng, int(s), max_children) for s in sizes)


def random_tree(rng: np.random.Generator, n_leaves: int, permute: bool = False):
    """Random-shape tree; leaf order stays index-ordered unless permuted."""
    perm = tuple(int(i) for i in rng.permutation(n_leaves)) if permute else None
    if n_leaves == 1:
        spec = BranchingSpec(levels=(), permutation=perm)
    else:
        spec = BranchingSpec(shape=random_shape(rng, n_leaves), permutation=perm)
    return build_tree(spec)


def random_power_of_two_tree(rng: np.random.Generator, max_levels: int = 3):
    """Uniform tree whose node arities are powers of two (pairing-friendly)."""
    n_levels = int(rng.integers(1, max_levels + 1))
    levels = tuple(int(2 ** rng.integers(1, 4)) for _ in range(n_levels))
    return build_tree(BranchingSpec(levels=levels))


def flat_select_oracle(c: np.ndarray, u: float) -> int:
    """First index where the running mass total reaches u * (total mass)."""
    cum = np.cumsum(c)
    return int(np.searchsorted(cum, u * cum[-1], side="left"))


def enumerate_pairings(items: list) -> list[list[tuple]]:
    """All perfect matchings of an even-length list."""
    if not items:
        return [[]]
    first, rest = items[0], items[1:]
    out = []
    for i, other in enumerate(rest):
        remaining = rest[:i] + rest[i + 1 :]
        for sub in enumerate_pairings(remaining):
            out.append([(first, other)] + sub)
    return out


def reference_bootstrap(sigma, n, steps, seed, stream=(0,)):
    """Flat-array bootstrap filter sharing only the stream derivation scheme.

    Ancestors come from a plain inverse-CDF over the cumulative weight sum,
    weights from the arithmetic mean; no tree machinery anywhere.
    """
    x = rng_for(seed, *stream, 0, CH_INIT).standard_normal(n)
    w = np.ones(n)
    ancestors, zs, states = [], [], []
    for m in range(1, steps + 1):
        a_rng, p_rng = rng_for(seed, *stream, m, CH_STEP).spawn(2)
        g = np.exp(sigma * x - 0.5 * sigma * sigma)
        c = w * g
        u = a_rng.random(n)
        cum = np.cumsum(c)
        anc = np.searchsorted(cum, u * cum[-1], side="left")
        w = np.full(n, c.sum() / n)
        x = p_rng.standard_normal(n)
        ancestors.append(anc)
        zs.append(w.mean())
        states.append(x.copy())
    return ancestors, zs, states


def refinement_chain(rng: np.random.Generator, members) -> list[Partition]:
    """Random chain from the all-singleton partition up to one block."""
    blocks = [(int(i),) for i in sorted(members)]
    chain = [Partition(tuple(blocks))]
    while len(blocks) > 1:
        i, j = sorted(rng.choice(len(blocks), size=2, replace=False).tolist())
        merged = tuple(sorted(blocks[i] + blocks[j]))
        blocks = [b for k, b in enumerate(blocks) if k not in (i, j)] + [merged]
        blocks.sort(key=lambda b: b[0])
        chain.append(Partition(tuple(blocks)))
    return chain
