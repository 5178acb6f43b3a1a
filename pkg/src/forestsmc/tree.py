"""Arena-allocated trees modeling a logical device topology, and forests.

A `Tree` is a flat arena of nodes addressed by integer handles.  Leaves carry
particle indices; every node carries a value ``(count, mass)`` where
``count`` is the number of descendant leaves and ``mass`` the sum of their
per-particle masses.  Values are filled bottom-up by `Tree.populate` after
`Tree.set_leaf_values`, so any node answers aggregate queries about its leaf
set in O(1).

A `Forest` is a set of pairwise leaf-disjoint subtree roots.  It stands in
for a block-structured interaction matrix: its leaf-set partition is exactly
the clique partition whose ESS the selection machinery controls.

Transient nodes (created while grouping sibling subtrees during forest
selection) are appended to the same arena and can be dropped again with
`Tree.truncate_transient`; the base topology is never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ess import IndexSet, Partition, as_weights

__all__ = [
    "BranchingSpec",
    "Tree",
    "Forest",
    "build_tree",
    "default_branching",
]

#: Nested tree shape: ``None`` is a leaf, a tuple lists child shapes.
Shape = object


def _shape_leaves(shape) -> int:
    if shape is None:
        return 1
    if not isinstance(shape, (tuple, list)) or len(shape) == 0:
        raise ValueError("shape nodes must be None (leaf) or nonempty tuples")
    return sum(_shape_leaves(s) for s in shape)


@dataclass(frozen=True)
class BranchingSpec:
    """Recipe for a topology tree.

    Exactly one of ``levels`` (uniform per-level child counts, e.g.
    ``(16, 16, 16)`` for 4096 leaves; ``()`` for a single-leaf tree) or
    ``shape`` (explicit nested tuples, ``None`` marking a leaf) must be
    given.  ``permutation`` maps leaf position to particle index (identity
    when omitted); ``device_level`` tags which level plays the role of the
    device layer and defaults to the parents of the leaves.
    """

    levels: tuple[int, ...] | None = None
    shape: Shape = None
    permutation: tuple[int, ...] | None = None
    device_level: int | None = None

    def __post_init__(self):
        if (self.levels is None) == (self.shape is None):
            raise ValueError("specify exactly one of levels or shape")
        if self.levels is not None:
            lv = tuple(int(b) for b in self.levels)
            if any(b < 1 for b in lv):
                raise ValueError("branching factors must be >= 1")
            object.__setattr__(self, "levels", lv)
            n = math.prod(lv)
            dl = self.device_level
            if dl is None:
                dl = max(len(lv) - 1, 0)
            if not 0 <= dl <= len(lv):
                raise ValueError("device_level outside tree depth")
            object.__setattr__(self, "device_level", dl)
        else:
            n = _shape_leaves(self.shape)
        if self.permutation is not None:
            perm = tuple(int(i) for i in self.permutation)
            if sorted(perm) != list(range(n)):
                raise ValueError("permutation must be a bijection on leaf positions")
            object.__setattr__(self, "permutation", perm)
        object.__setattr__(self, "_n_leaves", n)

    @property
    def n_leaves(self) -> int:
        return self._n_leaves

    def particle_at(self, position: int) -> int:
        """Particle index assigned to a leaf position."""
        if self.permutation is None:
            return position
        return self.permutation[position]


def default_branching(n: int) -> tuple[int, ...]:
    """Factor a particle count into per-level child counts of at most 16.

    Greedy largest-divisor-first; a prime above 16 becomes its own level.
    Used when a run specifies a particle count without a topology.
    """
    if n < 1:
        raise ValueError("particle count must be positive")
    out: list[int] = []
    rem = n
    while rem > 1:
        for f in range(min(16, rem), 1, -1):
            if rem % f == 0:
                out.append(f)
                rem //= f
                break
        else:
            out.append(rem)
            rem = 1
    return tuple(out)


class Tree:
    """Arena of tree nodes with integer handles.

    Attributes are parallel arrays indexed by handle: ``children`` (tuple of
    child handles, empty for leaves), ``parent`` (-1 for roots and transient
    nodes), ``counts`` / ``masses`` (the node value; a count of 0 means the
    value is unset), ``min_leaf`` (smallest particle index underneath, kept
    for deterministic tie-breaking) and ``leaf_particle`` (-1 for internal
    nodes).  Use `build_tree` to construct one.
    """

    def __init__(self):
        self.children: list[tuple[int, ...]] = []
        self.parent: list[int] = []
        self.counts: list[int] = []
        self.masses: list[float] = []
        self.min_leaf: list[int] = []
        self.leaf_particle: list[int] = []
        self.root: int = -1
        self.leaf_of_particle: list[int] = []
        self.n_leaves: int = 0
        self.base_size: int = 0
        self._internal: tuple[int, ...] = ()

    # -- construction ----------------------------------------------------

    def _new_node(self, parent: int) -> int:
        h = len(self.children)
        self.children.append(())
        self.parent.append(parent)
        self.counts.append(0)
        self.masses.append(0.0)
        self.min_leaf.append(-1)
        self.leaf_particle.append(-1)
        return h

    def new_internal(self, children: tuple[int, ...]) -> int:
        """Append a transient node over existing subtrees.

        The value is the componentwise sum of the children's values, which
        must already be set.  The new node has no parent and does not alter
        the parents of its children.
        """
        if not children:
            raise ValueError("a transient node needs at least one child")
        h = self._new_node(-1)
        count = 0
        mass = 0.0
        low = self.n_leaves
        for ch in children:
            if self.counts[ch] == 0:
                raise ValueError(f"child node {ch} has no value set")
            count += self.counts[ch]
            mass += self.masses[ch]
            low = min(low, self.min_leaf[ch])
        self.children[h] = tuple(children)
        self.counts[h] = count
        self.masses[h] = mass
        self.min_leaf[h] = low
        return h

    def truncate_transient(self) -> None:
        """Drop every node created after construction."""
        b = self.base_size
        del self.children[b:]
        del self.parent[b:]
        del self.counts[b:]
        del self.masses[b:]
        del self.min_leaf[b:]
        del self.leaf_particle[b:]

    # -- values -----------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.children)

    def value(self, h: int) -> tuple[int, float]:
        """The node value ``(count, mass)``; raises while unset."""
        c = self.counts[h]
        if c == 0:
            raise ValueError(f"value of node {h} is unset; populate first")
        return c, self.masses[h]

    def min_leaf_index(self, h: int) -> int:
        """Smallest particle index in the subtree of ``h``."""
        if self.counts[h] == 0:
            raise ValueError(f"value of node {h} is unset; populate first")
        return self.min_leaf[h]

    def set_leaf_values(self, c) -> None:
        """Store per-particle masses on the leaves and unset internal values.

        Leaf ``i`` (by particle index) receives the value ``(1, c[i])``.
        """
        c = as_weights(c, n=self.n_leaves)
        lp = self.leaf_particle
        for h in self.leaf_of_particle:
            i = lp[h]
            self.counts[h] = 1
            self.masses[h] = float(c[i])
            self.min_leaf[h] = i
        for h in self._internal:
            self.counts[h] = 0

    def populate(self, node: int | None = None) -> tuple[int, float]:
        """Fill values bottom-up over a subtree and return its root value.

        Every internal node ends up with the componentwise sum of its
        children's values; each node costs time proportional to its child
        count.  Leaf values must have been set beforehand.
        """
        if node is None:
            node = self.root
        children = self.children
        counts = self.counts
        masses = self.masses
        min_leaf = self.min_leaf
        if node == self.root and self.n_nodes == self.base_size:
            # fresh tree: handles are in parent-before-child order, so one
            # reverse sweep visits every subtree bottom-up
            for h in range(self.base_size - 1, -1, -1):
                kids = children[h]
                if not kids:
                    if counts[h] == 0:
                        raise ValueError(f"leaf {h} has no value; call set_leaf_values first")
                    continue
                cnt = 0
                mass = 0.0
                low = self.n_leaves
                for ch in kids:
                    cnt += counts[ch]
                    mass += masses[ch]
                    if min_leaf[ch] < low:
                        low = min_leaf[ch]
                counts[h] = cnt
                masses[h] = mass
                min_leaf[h] = low
            return counts[node], masses[node]
        stack = [(node, False)]
        while stack:
            h, expanded = stack.pop()
            kids = children[h]
            if not kids:
                if counts[h] == 0:
                    raise ValueError(f"leaf {h} has no value; call set_leaf_values first")
                continue
            if not expanded:
                stack.append((h, True))
                stack.extend((ch, False) for ch in kids)
                continue
            cnt = 0
            mass = 0.0
            low = self.n_leaves
            for ch in kids:
                cnt += counts[ch]
                mass += masses[ch]
                if min_leaf[ch] < low:
                    low = min_leaf[ch]
            counts[h] = cnt
            masses[h] = mass
            min_leaf[h] = low
        return counts[node], masses[node]

    # -- structure queries -------------------------------------------------

    def leaves(self, h: int) -> IndexSet:
        """Sorted particle indices below (and including) a node."""
        return tuple(sorted(i for _, i in self.leaf_items(h)))

    def leaf_items(self, h: int) -> list[tuple[int, int]]:
        """All ``(leaf handle, particle index)`` pairs below a node."""
        out: list[tuple[int, int]] = []
        stack = [h]
        children = self.children
        lp = self.leaf_particle
        while stack:
            v = stack.pop()
            kids = children[v]
            if kids:
                stack.extend(reversed(kids))
            else:
                out.append((v, lp[v]))
        return out

    def dump(self) -> str:
        """One node per line: ``id parent count mass``."""
        lines = [
            f"{h} {self.parent[h]} {self.counts[h]} {self.masses[h]!r}"
            for h in range(self.n_nodes)
        ]
        return "\n".join(lines)


def build_tree(spec: BranchingSpec) -> Tree:
    """Construct the topology tree described by a `BranchingSpec`.

    Leaf positions run left to right; position ``j`` is assigned particle
    index ``spec.particle_at(j)``.  Values are unset until
    `Tree.set_leaf_values` and `Tree.populate` run.
    """
    t = Tree()
    n = spec.n_leaves
    t.n_leaves = n
    t.leaf_of_particle = [-1] * n
    position = 0
    internal: list[int] = []

    if spec.levels is not None:
        # breadth-first numbering, whole levels at a time
        level_sizes = [1]
        for width in spec.levels:
            level_sizes.append(level_sizes[-1] * width)
        total = sum(level_sizes)
        t.children = [()] * total
        t.parent = [-1] * total
        t.counts = [0] * total
        t.masses = [0.0] * total
        t.min_leaf = [-1] * total
        t.leaf_particle = [-1] * total
        t.root = 0
        offset = 0
        child_offset = 1
        for width, size in zip(spec.levels, level_sizes):
            for j in range(size):
                first = child_offset + j * width
                t.children[offset + j] = tuple(range(first, first + width))
            parent_row = t.parent
            for j in range(size * width):
                parent_row[child_offset + j] = offset + j // width
            offset = child_offset
            child_offset += size * width
        internal = list(range(total - n))
        perm = spec.permutation
        lp = t.leaf_particle
        lop = t.leaf_of_particle
        for position in range(n):
            h = total - n + position
            i = perm[position] if perm is not None else position
            lp[h] = i
            lop[i] = h
    else:

        def rec(shape, parent: int) -> int:
            nonlocal position
            h = t._new_node(parent)
            if shape is None:
                i = spec.particle_at(position)
                t.leaf_particle[h] = i
                t.leaf_of_particle[i] = h
                position += 1
            else:
                internal.append(h)
                t.children[h] = tuple(rec(s, h) for s in shape)
            return h

        t.root = rec(spec.shape, -1)

    t._internal = tuple(internal)
    t.base_size = t.n_nodes
    return t


class Forest:
    """A set of pairwise leaf-disjoint subtree roots of one arena.

    Construction indexes which root owns each particle, so `tree_of` is an
    O(1) lookup afterwards.  Overlapping leaf sets are rejected.
    """

    def __init__(self, tree: Tree, roots):
        self.tree = tree
        self.roots: tuple[int, ...] = tuple(int(r) for r in roots)
        n = tree.n_leaves
        root_of = np.full(n, -1, dtype=np.int64)
        by_root: dict[int, list[int]] = {}
        for r in self.roots:
            if r in by_root:
                raise ValueError(f"node {r} listed twice in forest")
            members: list[int] = []
            for _, i in tree.leaf_items(r):
                if root_of[i] != -1:
                    raise ValueError(f"particle {i} covered by two forest trees")
                root_of[i] = r
                members.append(i)
            members.sort()
            by_root[r] = members
        self._root_of = root_of
        self._by_root = by_root
        self._covered = sum(len(m) for m in by_root.values())

    @property
    def leaf_indices(self) -> IndexSet:
        """Sorted union of leaf indices over all member trees."""
        return tuple(sorted(i for m in self._by_root.values() for i in m))

    def tree_of(self, i: int) -> int:
        """Root handle of the unique member tree covering particle ``i``."""
        if not 0 <= i < self._root_of.size:
            raise IndexError(f"particle index {i} out of range")
        r = int(self._root_of[i])
        if r < 0:
            raise ValueError(f"particle {i} is not covered by the forest")
        return r

    def root_of_particle(self) -> np.ndarray:
        """Array view: particle index -> root handle (-1 where uncovered)."""
        return self._root_of

    def partition(self) -> Partition:
        """Leaf-set partition induced by the member trees."""
        blocks = sorted((tuple(m) for m in self._by_root.values()), key=lambda b: b[0])
        return Partition(tuple(blocks))

    def avg_degree(self) -> float:
        """Mean vertex degree of the induced clique union, self-loops included.

        Requires the forest to cover every particle; each particle in a tree
        with ``k`` leaves has degree ``k``, so the mean is ``sum(k^2) / N``.
        """
        n = self.tree.n_leaves
        if self._covered != n:
            raise ValueError("average degree requires a forest covering all particles")
        return sum(len(m) ** 2 for m in self._by_root.values()) / n

    def dump(self) -> str:
        """Member subtrees, one node per line: ``id parent count mass``."""
        t = self.tree
        lines = []
        for r in self.roots:
            stack = [r]
            while stack:
                h = stack.pop()
                parent = t.parent[h] if h != r else -1
                lines.append(f"{h} {parent} {t.counts[h]} {t.masses[h]!r}")
                stack.extend(reversed(t.children[h]))
        return "\n".join(lines)
