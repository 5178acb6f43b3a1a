"""Ancestor sampling over populated trees and forests.

Two mechanisms draw a particle index proportionally to the leaf masses under
a node:

* `sample` descends the tree, drawing one categorical step per level with
  probabilities proportional to child masses.  Cost per draw is the tree
  depth times the branching factor, independently of the total particle
  count.
* `select` makes the same descent deterministic in a single uniform
  ``u in [0, 1]``, rescaling ``u`` at every level.  On an index-ordered tree
  it returns exactly the flat inverse-CDF index
  ``min{k : cumsum(c)[k] >= u * sum(c)}``, so feeding it i.i.d., systematic
  or stratified u-sequences reproduces the classical resampling schemes.

`assign_ancestors` applies either mechanism particle-by-particle over the
trees of a forest, and `weight_update` returns the post-interaction weight
(the mass mean over the particle's own tree).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import Forest, Tree

__all__ = [
    "USequence",
    "U_SCHEMES",
    "sample",
    "node_pmf",
    "select",
    "generate_u",
    "assign_ancestors",
    "weight_update",
    "weight_update_all",
]

U_SCHEMES = ("iid", "systematic", "stratified")


@dataclass(frozen=True)
class USequence:
    """A length-N vector of inverse-transform inputs in [0, 1].

    For the systematic and stratified schemes the entries are dependent, but
    an entry picked uniformly at random is still marginally Uniform[0, 1].
    """

    values: np.ndarray
    scheme: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("u-sequence must be a nonempty 1-d vector")
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("u-sequence entries must lie in [0, 1]")
        if self.scheme not in U_SCHEMES:
            raise ValueError(f"unknown u scheme {self.scheme!r}")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def generate_u(scheme: str, n: int, rng: np.random.Generator) -> USequence:
    """Draw a u-sequence of length ``n``.

    iid:         n independent Uniform[0, 1] draws (one ``rng.random(n)`` call).
    systematic:  ``(i + U) / n`` with a single shared Uniform ``U``.
    stratified:  ``(i + U_i) / n`` with independent ``U_i``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if scheme == "iid":
        vals = rng.random(n)
    elif scheme == "systematic":
        vals = (np.arange(n) + rng.random()) / n
    elif scheme == "stratified":
        vals = (np.arange(n) + rng.random(n)) / n
    else:
        raise ValueError(f"unknown u scheme {scheme!r}")
    return USequence(vals, scheme)


def sample(tree: Tree, node: int, rng: np.random.Generator) -> int:
    """Draw a particle index under ``node`` with probability mass ``c/sum(c)``.

    The subtree must be populated.  One uniform is consumed per level.
    """
    children = tree.children
    masses = tree.masses
    if tree.counts[node] == 0:
        raise ValueError(f"subtree at node {node} is not populated")
    h = node
    while True:
        kids = children[h]
        if not kids:
            return tree.leaf_particle[h]
        u = rng.random() * masses[h]
        acc = 0.0
        nxt = kids[-1]
        for ch in kids:
            acc += masses[ch]
            if u < acc:
                nxt = ch
                break
        h = nxt


def node_pmf(tree: Tree, node: int) -> tuple[tuple[int, ...], np.ndarray]:
    """Exact sampling distribution of `sample` at a node.

    Computed by multiplying the per-level categorical step probabilities
    along every root-to-leaf path, *not* by normalizing the leaf masses;
    the two agreeing is the correctness property of the descent sampler.
    Returns ``(particle indices ascending, probabilities)``.
    """
    if tree.counts[node] == 0:
        raise ValueError(f"subtree at node {node} is not populated")
    probs: dict[int, float] = {}
    stack: list[tuple[int, float]] = [(node, 1.0)]
    while stack:
        h, p = stack.pop()
        kids = tree.children[h]
        if not kids:
            probs[tree.leaf_particle[h]] = p
        else:
            total = tree.masses[h]
            for ch in kids:
                stack.append((ch, p * (tree.masses[ch] / total)))
    idx = tuple(sorted(probs))
    return idx, np.array([probs[i] for i in idx])


def select(tree: Tree, node: int, u: float) -> int:
    """Deterministic inverse-transform pick of a particle index under ``node``.

    At each level the child with the smallest index ``k`` such that the
    running mass total reaches ``u * (total mass)`` is entered, and ``u`` is
    rescaled to ``(u * total - mass before k) / mass of k`` before descending.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError("u must lie in [0, 1]")
    if tree.counts[node] == 0:
        raise ValueError(f"subtree at node {node} is not populated")
    children = tree.children
    masses = tree.masses
    h = node
    while True:
        kids = children[h]
        if not kids:
            return tree.leaf_particle[h]
        target = u * masses[h]
        acc = 0.0
        nxt = kids[-1]
        u = 1.0
        for ch in kids:
            new_acc = acc + masses[ch]
            if new_acc >= target:
                nxt = ch
                u = (target - acc) / masses[ch]
                break
            acc = new_acc
        h = nxt


def assign_ancestors(
    forest: Forest,
    *,
    rng: np.random.Generator | None = None,
    u: USequence | np.ndarray | None = None,
) -> np.ndarray:
    """Draw one ancestor index per particle from its own forest tree.

    Pass ``rng`` for independent categorical draws (`sample`, consumed in
    particle-index order) or ``u`` for inverse-transform selection with one
    entry per particle (`select`; entry ``i`` is used for particle ``i``).
    The forest must cover every particle, and ``ancestors[i]`` always lies in
    the leaf set of particle ``i``'s tree.
    """
    if (rng is None) == (u is None):
        raise ValueError("pass exactly one of rng or u")
    tree = forest.tree
    n = tree.n_leaves
    root_of = forest.root_of_particle()
    if int((root_of >= 0).sum()) != n:
        raise ValueError("ancestor assignment requires a forest covering all particles")
    out = np.empty(n, dtype=np.int64)
    if u is not None:
        vals = u.values if isinstance(u, USequence) else np.asarray(u, dtype=np.float64)
        if vals.shape != (n,):
            raise ValueError(f"need one u per particle ({n}), got shape {vals.shape}")
        for i in range(n):
            out[i] = select(tree, int(root_of[i]), float(vals[i]))
    else:
        for i in range(n):
            out[i] = sample(tree, int(root_of[i]), rng)
    return out


def weight_update(forest: Forest, i: int) -> float:
    """Post-interaction weight of particle ``i``: mean mass over its tree."""
    r = forest.tree_of(i)
    count, mass = forest.tree.value(r)
    return mass / count


def weight_update_all(forest: Forest) -> np.ndarray:
    """Vector of `weight_update` over all particles of a covering forest."""
    tree = forest.tree
    root_of = forest.root_of_particle()
    n = tree.n_leaves
    if int((root_of >= 0).sum()) != n:
        raise ValueError("weight update requires a forest covering all particles")
    counts = np.asarray(tree.counts, dtype=np.float64)
    masses = np.asarray(tree.masses, dtype=np.float64)
    return masses[root_of] / counts[root_of]
