"""Adaptive forest selection with a guaranteed effective-sample-size floor.

`choose_forest` walks a populated topology tree top-down.  At each node it
searches a short sequence of successively coarser candidate partitions of the
node's children, accepting the first one whose normalized ESS ``rho`` reaches
the current threshold ``tau``.  Blocks of more than one child become merged
subtrees (via transient nodes); singleton blocks recurse with the inflated
threshold ``tau / rho``.  The returned forest ``F`` always satisfies

    ess_partition(F.partition(), c) >= tau * (number of leaves under the node)

while touching only the aggregated child values at every node, never the
individual particle masses.

Candidate coarsening strategies:

* ``pairing``       sort blocks by mass total and merge first with last;
                    needs a node arity that is a power of two and children
                    with equal leaf counts.
* ``matching``      merge the blocks with the smallest and largest mass mean.
* ``matching-exact`` merge the pair with the largest exact ESS gain
                    (quadratic in the block count, for comparison and tests).
* ``two-level``     consider only the finest and the one-block partitions.
* ``arpf``          classical adaptive resampling: keep every particle
                    separate when the plain weight ESS clears the floor,
                    otherwise merge everything.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .ess import IndexSet, Partition, as_weights, one_block
from .tree import Forest, Tree

__all__ = [
    "STRATEGIES",
    "Strategy",
    "CoarseningTrace",
    "TraceRecorder",
    "choose_forest",
    "arpf_select",
    "pairing_step",
    "matching_step",
    "matching_exact_step",
    "merge_gain",
    "coarsening_splitter",
    "pairing_splitter",
    "blocks_to_partition",
]

STRATEGIES = ("pairing", "matching", "matching-exact", "arpf", "two-level")


@dataclass(frozen=True)
class Strategy:
    """A named coarsening strategy (no tunable parameters at present)."""

    kind: str

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {STRATEGIES}")


def _kind_of(strategy) -> str:
    if isinstance(strategy, Strategy):
        return strategy.kind
    return Strategy(str(strategy)).kind


class _Block(NamedTuple):
    """Aggregate view of one candidate-partition block.

    ``items`` holds child handles (tree search) or particle indices
    (partition-level operations); ``low`` is the smallest particle index
    contained, used for deterministic tie-breaking.
    """

    size: int
    total: float
    low: int
    items: tuple

    @property
    def mean(self) -> float:
        return self.total / self.size


def _merge(a: _Block, b: _Block) -> _Block:
    if a.low > b.low:
        a, b = b, a
    return _Block(a.size + b.size, a.total + b.total, a.low, a.items + b.items)


def _rho_blocks(blocks: list[_Block], n_total: int) -> float:
    # A single block always realizes the maximum ESS, exactly.
    if len(blocks) == 1:
        return 1.0
    num = 0.0
    den = 0.0
    for b in blocks:
        num += b.total
        den += b.total * b.total / b.size
    return (num * num / den) / n_total


def _pair_all(blocks: list[_Block]) -> list[_Block]:
    k = len(blocks)
    if k % 2:
        raise ValueError("pairing needs an even number of blocks")
    if any(b.size != blocks[0].size for b in blocks):
        raise ValueError("pairing needs blocks of equal size")
    order = sorted(blocks, key=lambda b: (b.total, b.low))
    merged = [_merge(order[i], order[k - 1 - i]) for i in range(k // 2)]
    merged.sort(key=lambda b: b.low)
    return merged


def _match_minmax(blocks: list[_Block]) -> list[_Block]:
    k = len(blocks)
    if k < 2:
        raise ValueError("matching needs at least two blocks")
    imin = imax = 0
    lo_key = hi_key = (blocks[0].total / blocks[0].size, blocks[0].low)
    for i in range(1, k):
        b = blocks[i]
        key = (b.total / b.size, b.low)
        if key < lo_key:
            lo_key, imin = key, i
        if key > hi_key:
            hi_key, imax = key, i
    rest = [blocks[i] for i in range(k) if i not in (imin, imax)]
    rest.append(_merge(blocks[imin], blocks[imax]))
    rest.sort(key=lambda b: b.low)
    return rest


def _gain(a: _Block, b: _Block) -> float:
    d = a.mean - b.mean
    return (a.size * b.size / (a.size + b.size)) * d * d


def _match_exact(blocks: list[_Block]) -> list[_Block]:
    k = len(blocks)
    if k < 2:
        raise ValueError("matching needs at least two blocks")
    best = None
    best_key = None
    for i in range(k):
        for j in range(i + 1, k):
            lo, hi = sorted((blocks[i].low, blocks[j].low))
            cand = (-_gain(blocks[i], blocks[j]), lo, hi)
            if best_key is None or cand < best_key:
                best_key = cand
                best = (i, j)
    i, j = best
    rest = [blocks[m] for m in range(k) if m not in (i, j)]
    rest.append(_merge(blocks[i], blocks[j]))
    rest.sort(key=lambda b: b.low)
    return rest


def _merge_everything(blocks: list[_Block]) -> list[_Block]:
    out = blocks[0]
    for b in blocks[1:]:
        out = _merge(out, b)
    return [out]


_STEP_FN: dict[str, Callable[[list[_Block]], list[_Block]]] = {
    "pairing": _pair_all,
    "matching": _match_minmax,
    "matching-exact": _match_exact,
    "two-level": _merge_everything,
}


def _trace(kind: str, blocks: list[_Block], n_total: int, tau: float):
    """Successively coarser candidates until rho reaches tau.

    Block counts drop by at least one per step and a lone block has rho 1,
    so at most ``len(blocks)`` candidates are ever evaluated.
    """
    step = _STEP_FN[kind]
    cands = [blocks]
    rhos = [_rho_blocks(blocks, n_total)]
    while rhos[-1] < tau and len(cands[-1]) > 1:
        nxt = step(cands[-1])
        cands.append(nxt)
        rhos.append(_rho_blocks(nxt, n_total))
    return cands, rhos


@dataclass(frozen=True)
class CoarseningTrace:
    """Record of one node's candidate-partition search.

    ``partitions[i]`` lists the blocks of the i-th candidate as tuples of
    child handles; ``accepted`` indexes the first candidate whose rho met
    the node's threshold ``tau`` (always the last one recorded).
    """

    node: int
    tau: float
    n_children: int
    partitions: tuple[tuple[tuple[int, ...], ...], ...]
    rhos: tuple[float, ...]
    accepted: int

    @property
    def n_candidates(self) -> int:
        return len(self.partitions)


class TraceRecorder:
    """Instrumentation hook collecting one `CoarseningTrace` per visited node."""

    def __init__(self):
        self.traces: list[CoarseningTrace] = []

    def __call__(self, trace: CoarseningTrace) -> None:
        self.traces.append(trace)


def blocks_to_partition(tree: Tree, handle_blocks) -> Partition:
    """Leaf-index partition spanned by blocks of node handles."""
    out = []
    for blk in handle_blocks:
        members: list[int] = []
        for h in blk:
            members.extend(i for _, i in tree.leaf_items(h))
        out.append(tuple(sorted(members)))
    out.sort(key=lambda b: b[0])
    return Partition(tuple(out))


def _check_pairing_node(n_children: int, uniform: bool) -> None:
    if n_children & (n_children - 1):
        raise ValueError(
            f"pairing strategy needs a power-of-2 child count, found {n_children}"
        )
    if not uniform:
        raise ValueError("pairing strategy needs equal leaf counts per child")


def _choose_roots(tree: Tree, node: int, tau: float, kind: str, instrument) -> list[int]:
    kids = tree.children[node]
    if not kids:
        return [node]
    if instrument is None and len(kids) > 1:
        # fast path: accept the finest child partition without building the
        # candidate machinery (identical arithmetic to the traced branch)
        num = 0.0
        den = 0.0
        n_total = 0
        first_count = -1
        uniform = True
        for ch in kids:
            cnt, mass = tree.value(ch)
            num += mass
            den += mass * mass / cnt
            n_total += cnt
            if first_count < 0:
                first_count = cnt
            elif cnt != first_count:
                uniform = False
        if kind == "pairing":
            _check_pairing_node(len(kids), uniform)
        rho0 = (num * num / den) / n_total
        if rho0 >= tau:
            sub_tau = min(1.0, tau / rho0)
            roots: list[int] = []
            for ch in kids:
                roots.extend(_choose_roots(tree, ch, sub_tau, kind, instrument))
            return roots
    blocks = []
    for ch in kids:
        cnt, mass = tree.value(ch)
        blocks.append(_Block(cnt, mass, tree.min_leaf_index(ch), (ch,)))
    if kind == "pairing":
        _check_pairing_node(len(kids), all(b.size == blocks[0].size for b in blocks))
    n_total = sum(b.size for b in blocks)
    cands, rhos = _trace(kind, blocks, n_total, tau)
    if instrument is not None:
        instrument(
            CoarseningTrace(
                node=node,
                tau=tau,
                n_children=len(kids),
                partitions=tuple(tuple(b.items for b in cand) for cand in cands),
                rhos=tuple(rhos),
                accepted=len(cands) - 1,
            )
        )
    accepted = cands[-1]
    if len(accepted) == 1:
        return [node]
    # Mathematically tau/rho <= 1 once accepted; clamp guards rounding.
    sub_tau = min(1.0, tau / rhos[-1])
    roots: list[int] = []
    for b in accepted:
        if len(b.items) > 1:
            roots.append(tree.new_internal(b.items))
        else:
            roots.extend(_choose_roots(tree, b.items[0], sub_tau, kind, instrument))
    return roots


def choose_forest(
    tree: Tree,
    node: int,
    tau: float,
    strategy,
    c=None,
    instrument=None,
) -> Forest:
    """Pick a forest covering the leaves under ``node`` with an ESS floor.

    The forest ``F`` satisfies ``ess_partition(F.partition(), c) >= tau * L``
    where ``L`` is the number of leaves under ``node``.  The subtree must be
    populated.  ``c`` (the full mass vector) is only required by the
    ``arpf`` strategy; the coarsening strategies read nothing but the child
    values of visited nodes.  ``instrument``, if given, is called with a
    `CoarseningTrace` per visited internal node.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    kind = _kind_of(strategy)
    if kind == "arpf":
        if c is None:
            raise ValueError("the arpf strategy needs the mass vector c")
        return _arpf_forest(tree, node, c, tau)
    return Forest(tree, _choose_roots(tree, node, tau, kind, instrument))


def _arpf_forest(tree: Tree, node: int, c, tau: float) -> Forest:
    c = as_weights(c, n=tree.n_leaves)
    items = tree.leaf_items(node)
    sub = c[[i for _, i in items]]
    s = float(sub.sum())
    ess_id = s * s / float(np.dot(sub, sub))
    if ess_id >= tau * len(items):
        return Forest(tree, [h for h, _ in items])
    return Forest(tree, [node])


def arpf_select(tree: Tree, c, tau: float) -> Forest:
    """Adaptive resampling over the whole tree: all leaves, or the root.

    Keeps every particle separate when the plain weight ESS
    ``(sum c)^2 / sum c^2`` is at least ``tau * N``, and resamples the whole
    population otherwise.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return _arpf_forest(tree, tree.root, c, tau)


# -- partition-level operations (used by tests, reference splitters and the
#    index-set selector in the ess module) --------------------------------


def _partition_blocks(p: Partition, c) -> list[_Block]:
    c = as_weights(c)
    if p.blocks and max(b[-1] for b in p.blocks) >= c.size:
        raise IndexError("partition index out of range for the weight vector")
    return [_Block(len(b), float(c[list(b)].sum()), b[0], b) for b in p.blocks]


def _blocks_as_partition(blocks: list[_Block]) -> Partition:
    out = sorted((tuple(sorted(b.items)) for b in blocks), key=lambda t: t[0])
    return Partition(tuple(out))


def pairing_step(p: Partition, c) -> Partition:
    """Optimal pairing of equally sized blocks.

    Blocks sorted by mass total are merged first-with-last, which maximizes
    rho among all pairings.  Requires an even number of equally sized blocks.
    """
    return _blocks_as_partition(_pair_all(_partition_blocks(p, c)))


def matching_step(p: Partition, c) -> Partition:
    """Merge the blocks whose mass means are smallest and largest.

    Ties on the mean resolve to the block with the smallest contained index
    on the min side and the largest contained index on the max side, so the
    two ends never collide.
    """
    return _blocks_as_partition(_match_minmax(_partition_blocks(p, c)))


def matching_exact_step(p: Partition, c) -> Partition:
    """Merge the pair of blocks with the largest `merge_gain`."""
    return _blocks_as_partition(_match_exact(_partition_blocks(p, c)))


def merge_gain(p: Partition, k: int, l: int, c) -> float:
    """Scaled squared mean gap ``|Vk||Vl|/(|Vk|+|Vl|) * (mean_k - mean_l)^2``.

    Merging the pair of blocks that maximizes this quantity maximizes the
    rho of the resulting one-merge coarsening.
    """
    if k == l:
        raise ValueError("merge gain needs two distinct blocks")
    blocks = _partition_blocks(p, c)
    return _gain(blocks[k], blocks[l])


def coarsening_splitter(kind: str):
    """Splitter for `forestsmc.ess.choose_a_reference`.

    Proposes the all-singleton partition first and coarsens with the named
    strategy step until rho reaches the threshold.
    """
    if kind not in _STEP_FN:
        raise ValueError(f"no coarsening step for strategy {kind!r}")

    def split(v: IndexSet, tau: float, c) -> Partition:
        blocks = [_Block(1, float(c[i]), i, (i,)) for i in v]
        cands, _ = _trace(kind, blocks, len(v), tau)
        return _blocks_as_partition(cands[-1])

    return split


def pairing_splitter(v: IndexSet, tau: float, c) -> Partition:
    """Splitter proposing successive pairings of the singleton partition.

    The first candidate is already the optimal pairing (singletons are never
    proposed), so the index-set size must be a power of two.
    """
    blocks = [_Block(1, float(c[i]), i, (i,)) for i in v]
    if len(blocks) == 1:
        return one_block(v)
    while True:
        blocks = _pair_all(blocks)
        if len(blocks) == 1 or _rho_blocks(blocks, len(v)) >= tau:
            return _blocks_as_partition(blocks)
