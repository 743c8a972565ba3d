"""Dyadic cubes in [0,1]^d and the finite weighted trees they generate.

Cubes are half-open: the cube at level n with index (j_1, ..., j_d) is
prod_k [j_k 2^-n, (j_k+1) 2^-n).  Every point of [0,1)^d therefore lies in
exactly one cube per level, so no mass ever sits on a shared boundary.

``WeightedTree`` abstracts the two hierarchies the package runs on (dyadic
cubes and Christ cells): a finite rooted tree whose positive rational node
weights are exactly additive across children and contract by a factor
theta < 1 along every edge.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Iterator, Mapping, Sequence

from .exact import as_fraction

Point = tuple[Fraction, ...]

_MAX_DYADIC_NODES = 1_000_000


@dataclass(frozen=True)
class CubeId:
    """Address of a half-open dyadic cube: level plus integer multi-index."""

    level: int
    index: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(self.index))
        if self.level < 0:
            raise ValueError(f"cube level must be >= 0, got {self.level}")
        if not self.index:
            raise ValueError("cube index must have at least one coordinate")
        bound = 1 << self.level
        for j in self.index:
            if not isinstance(j, int) or not 0 <= j < bound:
                raise ValueError(
                    f"index entry {j!r} out of range [0, {bound}) at level {self.level}"
                )

    @property
    def d(self) -> int:
        return len(self.index)

    @property
    def side(self) -> Fraction:
        return Fraction(1, 1 << self.level)

    @property
    def volume(self) -> Fraction:
        return Fraction(1, 1 << (self.level * self.d))

    def bounds(self) -> tuple[tuple[Fraction, Fraction], ...]:
        """Per-coordinate [a_k, b_k) intervals."""
        s = self.side
        return tuple((j * s, (j + 1) * s) for j in self.index)

    def children(self) -> list["CubeId"]:
        """The 2^d cubes one level down, in lexicographic index order."""
        return [
            CubeId(self.level + 1, tuple(2 * j + o for j, o in zip(self.index, off)))
            for off in itertools.product((0, 1), repeat=self.d)
        ]

    def parent(self) -> "CubeId | None":
        if self.level == 0:
            return None
        return CubeId(self.level - 1, tuple(j >> 1 for j in self.index))

    def contains_point(self, x: Sequence) -> bool:
        """Half-open membership test; x must have matching dimension."""
        if len(x) != self.d:
            raise ValueError(f"point has dimension {len(x)}, cube has {self.d}")
        for xk, (a, b) in zip(x, self.bounds()):
            v = as_fraction(xk, what="coordinate")
            if not a <= v < b:
                return False
        return True

    def __str__(self) -> str:
        return f"{self.level}:[{','.join(str(j) for j in self.index)}]"


def child_cubes(cube: CubeId) -> list[CubeId]:
    """Children of a cube, lexicographic by index."""
    return cube.children()


def is_subcube(inner: CubeId, outer: CubeId) -> bool:
    """True iff the half-open cube ``inner`` is contained in ``outer``."""
    if inner.d != outer.d:
        raise ValueError(f"dimension mismatch: {inner.d} vs {outer.d}")
    shift = inner.level - outer.level
    if shift < 0:
        return False
    return all(j >> shift == k for j, k in zip(inner.index, outer.index))


def locate(x: Sequence, level: int) -> CubeId:
    """The unique level-``level`` cube containing x in [0,1)^d."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    coords = [as_fraction(v, what="coordinate") for v in x]
    if not coords:
        raise ValueError("point must have at least one coordinate")
    index = []
    for v in coords:
        if not 0 <= v < 1:
            raise ValueError(f"coordinate {v} outside [0, 1)")
        index.append((v.numerator << level) // v.denominator)
    return CubeId(level, tuple(index))


class WeightedTree:
    """Finite rooted tree with exactly additive positive rational weights.

    Children of each node are kept in the order induced by ``tie_key``; the
    canonical node order used everywhere for tie-breaks and reports is
    (level, tie_key), i.e. shallowest first, then lexicographic.
    """

    def __init__(
        self,
        root: Hashable,
        children: Mapping[Hashable, Sequence[Hashable]],
        sigma: Mapping[Hashable, object],
        theta,
        tie_key: Callable[[Hashable], object] | None = None,
    ):
        self.root = root
        self.theta = as_fraction(theta, what="theta")
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must lie strictly in (0,1), got {self.theta}")
        tie = tie_key if tie_key is not None else (lambda node: node)
        self._tie = tie

        # Breadth-first discovery; rejects repeated nodes (one parent each).
        kids: dict[Hashable, tuple] = {}
        level_of: dict[Hashable, int] = {root: 0}
        queue = [root]
        while queue:
            nxt = []
            for node in queue:
                cs = tuple(sorted(children.get(node, ()), key=tie))
                kids[node] = cs
                for c in cs:
                    if c in level_of:
                        raise ValueError(f"node {c} reached twice; not a tree")
                    level_of[c] = level_of[node] + 1
                    nxt.append(c)
            queue = nxt
        for node in children:
            if node not in level_of:
                raise ValueError(f"children map mentions unreachable node {node}")

        sig: dict[Hashable, Fraction] = {}
        for node in level_of:
            if node not in sigma:
                raise ValueError(f"missing sigma for node {node}")
            value = as_fraction(sigma[node], what=f"sigma({node})")
            if value <= 0:
                raise ValueError(f"sigma({node}) must be positive, got {value}")
            sig[node] = value
        for node, cs in kids.items():
            if not cs:
                continue
            if sum(sig[c] for c in cs) != sig[node]:
                raise ValueError(f"children weights do not sum to sigma({node})")
            for c in cs:
                if sig[c] > self.theta * sig[node]:
                    raise ValueError(
                        f"sigma({c})/sigma({node}) exceeds theta={self.theta}"
                    )

        # Depth-first preorder: subtree of a node is a contiguous index range.
        idx: dict[Hashable, int] = {}
        dfs_nodes: list[Hashable] = []
        parent_idx: list[int] = []
        stack: list[tuple[Hashable, int]] = [(root, -1)]
        while stack:
            node, pidx = stack.pop()
            i = len(dfs_nodes)
            idx[node] = i
            dfs_nodes.append(node)
            parent_idx.append(pidx)
            for c in reversed(kids[node]):
                stack.append((c, i))
        n = len(dfs_nodes)
        tout = [0] * n
        for i in range(n - 1, -1, -1):
            tout[i] = max(tout[i], i + 1)
            p = parent_idx[i]
            if p >= 0:
                tout[p] = max(tout[p], tout[i])

        self._idx = idx
        self._dfs_nodes = dfs_nodes
        self._parent_idx = parent_idx
        self._tout = tout
        self._children_idx = [
            tuple(idx[c] for c in kids[dfs_nodes[i]]) for i in range(n)
        ]
        self._level_arr = [level_of[node] for node in dfs_nodes]
        self._sigma_arr = [sig[node] for node in dfs_nodes]
        self.depth = max(self._level_arr)
        self.node_count = n

        order = sorted(range(n), key=lambda i: (self._level_arr[i], tie(dfs_nodes[i])))
        self._rank = [0] * n
        for pos, i in enumerate(order):
            self._rank[i] = pos
        self.nodes: tuple = tuple(dfs_nodes[i] for i in order)

        self._sigma_int_cache: tuple[int, list[int]] | None = None

    # -- structure queries ---------------------------------------------------

    def has_node(self, node) -> bool:
        return node in self._idx

    def _require(self, node) -> int:
        try:
            return self._idx[node]
        except KeyError:
            raise ValueError(f"node {node} is not in this tree") from None

    def level(self, node) -> int:
        return self._level_arr[self._require(node)]

    def parent(self, node):
        p = self._parent_idx[self._require(node)]
        return None if p < 0 else self._dfs_nodes[p]

    def children(self, node) -> tuple:
        return tuple(self._dfs_nodes[i] for i in self._children_idx[self._require(node)])

    def sigma(self, node) -> Fraction:
        return self._sigma_arr[self._require(node)]

    def is_ancestor(self, outer, inner) -> bool:
        """Weak containment: True iff inner lies in the subtree of outer."""
        a = self._require(outer)
        b = self._require(inner)
        return a <= b < self._tout[a]

    def descendants(self, node) -> Iterator:
        """Preorder iterator over the subtree of ``node``, including it."""
        i = self._require(node)
        for j in range(i, self._tout[i]):
            yield self._dfs_nodes[j]

    def subtree_size(self, node) -> int:
        i = self._require(node)
        return self._tout[i] - i

    def canonical_sorted(self, nodes: Iterable) -> list:
        return sorted(nodes, key=lambda nd: self._rank[self._require(nd)])

    def _sigma_ints(self) -> tuple[int, list[int]]:
        """(common denominator T, node weights as integers over T)."""
        if self._sigma_int_cache is None:
            denom = math.lcm(*(s.denominator for s in self._sigma_arr))
            ints = [s.numerator * (denom // s.denominator) for s in self._sigma_arr]
            self._sigma_int_cache = (denom, ints)
        return self._sigma_int_cache


def dyadic_tree(d: int, depth: int) -> WeightedTree:
    """The full dyadic cube tree on [0,1]^d down to ``depth`` levels."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    count = ((1 << (d * (depth + 1))) - 1) // ((1 << d) - 1)
    if count > _MAX_DYADIC_NODES:
        raise ValueError(f"dyadic tree with {count} nodes exceeds the supported size")
    root = CubeId(0, (0,) * d)
    children: dict[CubeId, list[CubeId]] = {}
    sigma: dict[CubeId, Fraction] = {root: root.volume}
    frontier = [root]
    for _ in range(depth):
        nxt = []
        for cube in frontier:
            cs = cube.children()
            children[cube] = cs
            for c in cs:
                sigma[c] = c.volume
            nxt.extend(cs)
        frontier = nxt
    return WeightedTree(
        root, children, sigma, Fraction(1, 1 << d), tie_key=lambda q: q.index
    )
