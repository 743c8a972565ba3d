"""Measures on tree nodes and atomic measures on the half-space over [0,1)^d.

A ``TreeMeasure`` assigns a nonnegative rational mass to every node; the mass
of a Carleson box is the subtree sum.  Subtree sums are answered from a
prefix-sum array over the preorder, built once at construction, so querying
every node costs time linear in the tree.

An ``AtomicMeasure`` is a finite list of weighted points (x, t) with
x in [0,1)^d and t in (0,1]; it stands in for a Borel measure on the box
[0,1)^d x (0,1].  Binning an atom sends it to the unique node whose top layer
Q x (side/2, side] contains it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, NamedTuple

from .exact import as_fraction
from .tree import CubeId, WeightedTree, dyadic_tree, locate


class DepthInsufficientError(ValueError):
    """An atom sits below the deepest top layer of the requested tree."""


class ConstantReport(NamedTuple):
    value: Fraction
    argmax: object


class TreeMeasure:
    """Nonnegative rational mass per tree node, with cached subtree sums."""

    def __init__(self, tree: WeightedTree, masses: Mapping | None = None):
        self.tree = tree
        arr = [Fraction(0)] * tree.node_count
        if masses:
            for node, raw in masses.items():
                value = as_fraction(raw, what=f"mass({node})")
                if value < 0:
                    raise ValueError(f"mass({node}) must be >= 0, got {value}")
                arr[tree._require(node)] = value
        self._mass = arr
        prefix = [Fraction(0)] * (tree.node_count + 1)
        for i, v in enumerate(arr):
            prefix[i + 1] = prefix[i] + v
        self._prefix = prefix
        self._int_cache: tuple[int, list[int], list[int]] | None = None

    # -- queries ---------------------------------------------------------

    def mass(self, node) -> Fraction:
        return self._mass[self.tree._require(node)]

    def subtree_mass(self, node) -> Fraction:
        """Exact mass of the Carleson box of ``node`` (its full subtree)."""
        i = self.tree._require(node)
        return self._prefix[self.tree._tout[i]] - self._prefix[i]

    def total(self) -> Fraction:
        return self._prefix[-1]

    def items_nonzero(self) -> Iterator[tuple[object, Fraction]]:
        for node in self.tree.nodes:
            v = self._mass[self.tree._idx[node]]
            if v:
                yield node, v

    def carleson(self) -> ConstantReport:
        """sup over nodes of box mass / sigma, with its canonical argmax.

        Ties resolve to the shallowest node, then lexicographic.
        """
        best = None
        arg = None
        for node in self.tree.nodes:
            ratio = self.subtree_mass(node) / self.tree.sigma(node)
            if best is None or ratio > best:
                best, arg = ratio, node
        return ConstantReport(best, arg)

    def top(self) -> ConstantReport:
        """sup over nodes of node mass / sigma, with its canonical argmax."""
        best = None
        arg = None
        for node in self.tree.nodes:
            ratio = self.mass(node) / self.tree.sigma(node)
            if best is None or ratio > best:
                best, arg = ratio, node
        return ConstantReport(best, arg)

    def scaled(self, factor) -> "TreeMeasure":
        c = as_fraction(factor, what="scale factor")
        if c < 0:
            raise ValueError(f"scale factor must be >= 0, got {c}")
        return TreeMeasure(self.tree, {nd: c * v for nd, v in self.items_nonzero()})

    def _ints(self) -> tuple[int, list[int], list[int]]:
        """(denominator M, node masses over M, subtree masses over M)."""
        if self._int_cache is None:
            denom = math.lcm(*(v.denominator for v in self._mass)) if self._mass else 1
            a = [v.numerator * (denom // v.denominator) for v in self._mass]
            pre = [0] * (len(a) + 1)
            for i, v in enumerate(a):
                pre[i + 1] = pre[i] + v
            tout = self.tree._tout
            asub = [pre[tout[i]] - pre[i] for i in range(len(a))]
            self._int_cache = (denom, a, asub)
        return self._int_cache


def subtree_mass(measure: TreeMeasure, node) -> Fraction:
    return measure.subtree_mass(node)


def carleson_constant(measure: TreeMeasure) -> ConstantReport:
    return measure.carleson()


def top_constant(measure: TreeMeasure) -> ConstantReport:
    return measure.top()


@dataclass(frozen=True)
class Atom:
    x: tuple[Fraction, ...]
    t: Fraction
    w: Fraction

    def __str__(self) -> str:
        coords = ",".join(str(v) for v in self.x)
        return f"(x=({coords}), t={self.t}, w={self.w})"


class AtomicMeasure:
    """Finite list of weighted points in [0,1)^d x (0,1]."""

    def __init__(self, atoms: Iterable):
        out = []
        for i, raw in enumerate(atoms):
            if isinstance(raw, Atom):
                xs, t, w = raw.x, raw.t, raw.w
            else:
                xs, t, w = raw
            x = tuple(as_fraction(v, what=f"atom #{i} coordinate") for v in xs)
            t = as_fraction(t, what=f"atom #{i} height")
            w = as_fraction(w, what=f"atom #{i} weight")
            if not x:
                raise ValueError(f"atom #{i} has no coordinates")
            for v in x:
                if not 0 <= v < 1:
                    raise ValueError(f"atom #{i} coordinate {v} outside [0, 1)")
            if not 0 < t <= 1:
                raise ValueError(f"atom #{i} height {t} outside (0, 1]")
            if w < 0:
                raise ValueError(f"atom #{i} weight {w} is negative")
            out.append(Atom(x, t, w))
        self.atoms: tuple[Atom, ...] = tuple(out)
        dims = {len(a.x) for a in self.atoms}
        if len(dims) > 1:
            raise ValueError(f"atoms mix dimensions {sorted(dims)}")
        self._d = dims.pop() if dims else None

    @property
    def d(self) -> int | None:
        return self._d

    def total(self) -> Fraction:
        return sum((a.w for a in self.atoms), Fraction(0))

    def __len__(self) -> int:
        return len(self.atoms)

    def __iter__(self) -> Iterator[Atom]:
        return iter(self.atoms)


def _top_layer_level(t: Fraction) -> int:
    # The unique n with 2^-(n+1) < t <= 2^-n, i.e. n = floor(log2(1/t)).
    return (t.denominator // t.numerator).bit_length() - 1


def tree_measure_from_atoms(
    measure: AtomicMeasure,
    depth: int,
    d: int | None = None,
    tree: WeightedTree | None = None,
) -> TreeMeasure:
    """Bin atoms into top layers: node mass = atomic mass of Q x (side/2, side].

    Total mass is preserved exactly.  Atoms with t <= 2^-(depth+1) would fall
    below the deepest layer and raise ``DepthInsufficientError``.
    """
    if tree is not None:
        if not isinstance(tree.root, CubeId) or tree.root.level != 0:
            raise ValueError("tree must be a dyadic cube tree rooted at [0,1)^d")
        if tree.depth != depth:
            raise ValueError(f"tree depth {tree.depth} does not match depth={depth}")
        dim = tree.root.d
    else:
        dim = measure.d if measure.d is not None else d
        if dim is None:
            raise ValueError("dimension is required for an empty atom list")
    if measure.d is not None and measure.d != dim:
        raise ValueError(f"atoms have dimension {measure.d}, expected {dim}")
    if tree is None:
        tree = dyadic_tree(dim, depth)

    masses: dict[CubeId, Fraction] = {}
    for i, atom in enumerate(measure):
        level = _top_layer_level(atom.t)
        if level > depth:
            raise DepthInsufficientError(
                f"atom #{i} {atom} has top-layer level {level} deeper than depth {depth}"
            )
        cube = locate(atom.x, level)
        masses[cube] = masses.get(cube, Fraction(0)) + atom.w
    return TreeMeasure(tree, masses)
