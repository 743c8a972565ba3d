"""Tents, sawtooth graphs, and the reduction of atomic measures to trees.

All distances are sup-norm, which keeps every computation rational: the
distance from an interior point to the boundary of a half-open cube is the
smallest per-coordinate margin.  The tent over a cube is the cone of points
(x, t) with x in the cube and t at most that margin; the sawtooth function of
a disjoint cube family is the margin inside each member and zero elsewhere,
and its super-graph region uses the closed condition t >= psi(x).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

from .exact import as_fraction
from .extrapolation import InternalInvariantError, StoppingFamily
from .measures import AtomicMeasure, TreeMeasure, tree_measure_from_atoms
from .tree import CubeId, is_subcube


def _margin(cube: CubeId, x: Sequence[Fraction]) -> Fraction:
    """Sup-norm distance from x (inside cube) to the cube's complement."""
    out = None
    for xk, (a, b) in zip(x, cube.bounds()):
        m = min(xk - a, b - xk)
        out = m if out is None else min(out, m)
    return out


def tent_contains(cube: CubeId, x: Sequence, t) -> bool:
    """Closed tent membership: x in cube and 0 <= t <= margin(x)."""
    xs = tuple(as_fraction(v, what="coordinate") for v in x)
    t = as_fraction(t, what="height")
    if t < 0 or not cube.contains_point(xs):
        return False
    return t <= _margin(cube, xs)


@dataclass(frozen=True)
class TentRegion:
    """The cone tent over a cube (distinct from the cube's top layer)."""

    base: CubeId

    def contains(self, x: Sequence, t) -> bool:
        return tent_contains(self.base, x, t)


@dataclass(frozen=True)
class SawtoothFunction:
    """The margin function of a disjoint cube family inside a base cube.

    The value at x is the sup-norm distance to the boundary of the member
    containing x, or zero outside every member; this makes the function
    1-Lipschitz in the sup norm and zero on all member boundaries.
    """

    family: StoppingFamily
    base: CubeId

    def __post_init__(self):
        cubes = self.family.cubes
        for q in cubes:
            if q == self.base or not is_subcube(q, self.base):
                raise ValueError(f"family member {q} is not a strict subcube of {self.base}")
        for i, a in enumerate(cubes):
            for b in cubes[i + 1 :]:
                if is_subcube(a, b) or is_subcube(b, a):
                    raise ValueError(f"family members {a} and {b} overlap")

    def value(self, x: Sequence) -> Fraction:
        xs = tuple(as_fraction(v, what="coordinate") for v in x)
        if not self.base.contains_point(xs):
            raise ValueError(f"point outside the base cube {self.base}")
        for q in self.family.cubes:
            if q.contains_point(xs):
                return _margin(q, xs)
        return Fraction(0)


def sawtooth_value(psi: SawtoothFunction, x: Sequence) -> Fraction:
    return psi.value(x)


def region_contains(psi: SawtoothFunction, x: Sequence, t) -> bool:
    """Super-graph membership: t >= psi(x); psi extends by zero off the base."""
    xs = tuple(as_fraction(v, what="coordinate") for v in x)
    t = as_fraction(t, what="height")
    v = psi.value(xs) if psi.base.contains_point(xs) else Fraction(0)
    return t >= v


class VerifyResult(NamedTuple):
    ok: bool
    mismatches: tuple  # (atom position, atom, left-side bool, right-side bool)


def verify_set_identity(
    base: CubeId, family: StoppingFamily, measure: AtomicMeasure
) -> VerifyResult:
    """Check, atom by atom, that the box cut by the sawtooth region equals the
    uncovered part of the box plus the members' boxes minus their tents.

    Atoms exactly on the frontier t = psi(x) land on different sides (both
    conventions are closed), so callers generate test atoms off the frontier.
    """
    psi = SawtoothFunction(family=family, base=base)
    side = base.side
    mism = []
    for pos, atom in enumerate(measure):
        in_box = base.contains_point(atom.x) and atom.t <= side
        left = in_box and atom.t >= psi.value(atom.x)
        if not in_box:
            right = False
        else:
            holder = None
            for q in family.cubes:
                if q.contains_point(atom.x) and atom.t <= q.side:
                    holder = q
                    break
            if holder is None:
                right = True
            else:
                right = not tent_contains(holder, atom.x, atom.t)
        if left != right:
            mism.append((pos, atom, left, right))
    return VerifyResult(ok=not mism, mismatches=tuple(mism))


def truncate_outside_tent(
    measure: AtomicMeasure, cube: CubeId
) -> tuple[AtomicMeasure, Fraction]:
    """Drop the atoms of the cube's box that escape its tent.

    Returns the surviving measure and the dropped mass; atoms outside the box
    are untouched.
    """
    keep = []
    dropped = Fraction(0)
    for atom in measure:
        in_box = cube.contains_point(atom.x) and atom.t <= cube.side
        if in_box and not tent_contains(cube, atom.x, atom.t):
            dropped += atom.w
        else:
            keep.append(atom)
    return AtomicMeasure(keep), dropped


def _box_mass(measure: AtomicMeasure, cube: CubeId) -> Fraction:
    total = Fraction(0)
    for atom in measure:
        if cube.contains_point(atom.x) and atom.t <= cube.side:
            total += atom.w
    return total


def reduce_to_dyadic(
    mu_atoms: AtomicMeasure,
    nu_atoms: AtomicMeasure,
    cube: CubeId,
    depth: int,
) -> tuple[TreeMeasure, TreeMeasure]:
    """Truncate nu outside the tent of the unit cube, then bin both measures.

    After binning, every node's subtree sum equals the atomic mass of the
    node's box exactly (checked here for both measures); this is what lets
    tree-level audits speak for the atomic measures.
    """
    if cube.level != 0:
        raise ValueError("the reduction runs on the unit cube [0,1)^d")
    nu_trunc, _ = truncate_outside_tent(nu_atoms, cube)
    d = cube.d
    mu_tree = tree_measure_from_atoms(mu_atoms, depth, d=d)
    nu_tree = tree_measure_from_atoms(nu_trunc, depth, d=d)
    for tree_measure, atoms in ((mu_tree, mu_atoms), (nu_tree, nu_trunc)):
        for node in tree_measure.tree.nodes:
            if tree_measure.subtree_mass(node) != _box_mass(atoms, node):
                raise InternalInvariantError(
                    f"box mass mismatch at {node} after discretization"
                )
    return mu_tree, nu_tree
