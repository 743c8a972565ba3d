"""Stopping-time decomposition and the quantitative extrapolation audit.

Given a tree measure mu and a threshold delta, a node is *bad* when its own
mass is at least delta times its weight.  For a good node Q the construction
refines level by level: at each step it force-includes the bad cubes of the
uncovered frontier and keeps an inclusion-minimal set of good frontier cubes
so that every node of Q's subtree has uncovered mass at most delta times its
weight (the *smallness* condition).  Iterating the resulting families
generation by generation partitions the Carleson box of the root into
sawtooth regions, and the audit checks every inequality of the resulting
bound on the Carleson norm of a second measure nu with exact arithmetic.

All branch decisions run on integers: masses and weights are rescaled by
common denominators once per run, so a comparison is a multiply and a
compare, never a gcd.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Mapping

from .exact import as_fraction
from .measures import TreeMeasure
from .tree import WeightedTree


class PreconditionError(ValueError):
    """An operation was invoked on arguments its contract excludes."""


class InternalInvariantError(RuntimeError):
    """A certified-by-construction property failed; signals a caller or engine bug."""


class TheoremViolationError(RuntimeError):
    """A guaranteed witness or cover is missing; signals an implementation bug."""


@dataclass(frozen=True)
class StoppingFamily:
    """A pairwise-incomparable set of nodes inside the subtree of ``scope``."""

    scope: object
    cubes: tuple

    def __iter__(self) -> Iterator:
        return iter(self.cubes)

    def __len__(self) -> int:
        return len(self.cubes)

    def __contains__(self, node) -> bool:
        return node in self.cubes

    @classmethod
    def make(cls, tree: WeightedTree, scope, cubes) -> "StoppingFamily":
        """Validated constructor: members must be strict descendants of scope,
        pairwise incomparable."""
        members = tree.canonical_sorted(set(cubes))
        for m in members:
            if m == scope or not tree.is_ancestor(scope, m):
                raise ValueError(f"member {m} is not a strict descendant of {scope}")
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                if tree.is_ancestor(a, b) or tree.is_ancestor(b, a):
                    raise ValueError(f"members {a} and {b} are comparable")
        return cls(scope=scope, cubes=tuple(members))


@dataclass
class _TraceRow:
    level: int          # level relative to the scope node
    frontier: int       # uncovered cubes entering this step
    forced_bad: int     # bad frontier cubes, always included
    kept: int           # good frontier cubes the minimization could not drop
    violators: dict     # kept candidate -> node where dropping it failed


@dataclass
class _FamilyBuild:
    qi: int
    members: list[int]          # dfs indices, canonical order
    unc: list[int]              # uncovered mass (mu units) per dfs index
    rows: list[_TraceRow]
    members_by_level: dict[int, list[int]]  # relative level -> dfs indices


class _Engine:
    """Integer-normalized view of (tree, mu, delta) shared by all operations."""

    def __init__(self, mu: TreeMeasure, delta: Fraction):
        delta = as_fraction(delta, what="delta")
        if delta <= 0:
            raise ValueError(f"delta must be positive, got {delta}")
        tree = mu.tree
        self.mu = mu
        self.tree = tree
        self.delta = delta
        self.n = tree.node_count
        self.parent = tree._parent_idx
        self.tout = tree._tout
        self.level = tree._level_arr
        self.children = tree._children_idx
        self.rank = tree._rank
        self.mass_denom, self.a, self.asub = mu._ints()
        sigma_denom, self.s = tree._sigma_ints()
        p, q = delta.numerator, delta.denominator
        # unc/M <= delta*s/T  <=>  unc * (q*T) <= (p*M) * s
        self.lhs = q * sigma_denom
        pm = p * self.mass_denom
        self.thresh = [pm * si for si in self.s]
        self.bad = [self.a[i] * self.lhs >= self.thresh[i] for i in range(self.n)]
        th = tree.theta
        # witness bound: unc/M >= (1-theta)*delta*s/T
        self.wlhs = q * th.denominator * sigma_denom
        wn = p * (th.denominator - th.numerator) * self.mass_denom
        self.wthresh = [wn * si for si in self.s]

    def node(self, i: int):
        return self.tree._dfs_nodes[i]

    def idx(self, node) -> int:
        return self.tree._require(node)

    # -- family state ------------------------------------------------------

    def family_state(self, qi: int, member_idx) -> tuple[list[int], bytearray]:
        """Uncovered mass and coverage flags for a family inside subtree(qi).

        covered[i] is set when i lies weakly inside a member; for uncovered i,
        unc[i] is the mass of i's box minus the boxes of members below i.
        """
        end = self.tout[qi]
        memflag = bytearray(self.n)
        for i in member_idx:
            memflag[i] = 1
        covered = bytearray(self.n)
        for i in range(qi, end):
            if memflag[i] or (i != qi and covered[self.parent[i]]):
                covered[i] = 1
        contrib = [0] * self.n
        unc = [0] * self.n
        for i in range(end - 1, qi - 1, -1):
            if memflag[i]:
                contrib[i] = self.asub[i]
            p = self.parent[i]
            if i != qi and p >= 0:
                contrib[p] += contrib[i]
        for i in range(qi, end):
            if not covered[i]:
                unc[i] = self.asub[i] - contrib[i]
        return unc, covered

    def first_violation(self, qi: int, unc, covered) -> int | None:
        """Canonically first uncovered node breaking the smallness bound."""
        worst = None
        for i in range(qi, self.tout[qi]):
            if not covered[i] and unc[i] * self.lhs > self.thresh[i]:
                if worst is None or self.rank[i] < self.rank[worst]:
                    worst = i
        return worst

    def attempt_removals(self, qi: int, unc, cands) -> tuple[list[int], dict]:
        """One pass of drop attempts in canonical order.

        Dropping a frontier cube exposes exactly its own node mass, and only
        along its ancestor chain up to qi; a drop is kept iff the whole chain
        still satisfies the smallness bound.
        """
        kept: list[int] = []
        violators: dict[int, int] = {}
        for c in cands:
            ac = self.a[c]
            viol = None
            j = c
            while True:
                if (unc[j] + ac) * self.lhs > self.thresh[j]:
                    viol = j
                    break
                if j == qi:
                    break
                j = self.parent[j]
            if viol is None:
                j = c
                while True:
                    unc[j] += ac
                    if j == qi:
                        break
                    j = self.parent[j]
            else:
                kept.append(c)
                violators[c] = viol
        return kept, violators

    def build_family(self, qi: int) -> _FamilyBuild:
        """Run the full level-by-level construction below a good node."""
        if self.bad[qi]:
            raise PreconditionError(
                f"cannot build a stopping family at bad node {self.node(qi)}"
            )
        end = self.tout[qi]
        base = self.level[qi]
        by_rel: dict[int, list[int]] = {}
        for i in range(qi, end):
            by_rel.setdefault(self.level[i] - base, []).append(i)
        for v in by_rel.values():
            v.sort(key=lambda i: self.rank[i])

        # Start state: the virtual family is the full first frontier, so only
        # the scope's own mass is uncovered.
        unc, cov0 = self.family_state(qi, self.children[qi])
        if self.first_violation(qi, unc, cov0) is not None:
            raise InternalInvariantError(
                f"initial smallness fails at good node {self.node(qi)}"
            )

        members: list[int] = []
        members_by_level: dict[int, list[int]] = {}
        real_cov = bytearray(self.n)
        cov_sigma = 0
        rows: list[_TraceRow] = []
        maxrel = max(by_rel)
        m = 1
        while m <= maxrel and cov_sigma != self.s[qi]:
            frontier = [i for i in by_rel.get(m, ()) if not real_cov[i]]
            if not frontier:
                break
            forced = [i for i in frontier if self.bad[i]]
            cands = [i for i in frontier if not self.bad[i]]
            kept, violators = self.attempt_removals(qi, unc, cands)
            added = sorted(forced + kept, key=lambda i: self.rank[i])
            for i in added:
                members.append(i)
                cov_sigma += self.s[i]
                for j in range(i, self.tout[i]):
                    real_cov[j] = 1
            if added:
                members_by_level[m] = added
            rows.append(_TraceRow(m, len(frontier), len(forced), len(kept), violators))
            m += 1

        if self.first_violation(qi, unc, real_cov) is not None:
            raise InternalInvariantError(
                f"final smallness fails below {self.node(qi)}"
            )
        members.sort(key=lambda i: self.rank[i])
        return _FamilyBuild(qi, members, unc, rows, members_by_level)

    # -- witnesses ----------------------------------------------------------

    def find_witness(self, build: _FamilyBuild, ci: int) -> int | None:
        """First ancestor of a kept good member whose final uncovered mass
        reaches (1-theta)*delta times its weight."""
        j = ci
        while True:
            if build.unc[j] * self.wlhs >= self.wthresh[j]:
                return j
            if j == build.qi:
                return None
            j = self.parent[j]

    def maximal_witness_cover(self, build: _FamilyBuild) -> list[int]:
        """Maximal nodes in subtree(scope) meeting the witness bound; they are
        pairwise disjoint by maximality."""
        out = []
        i = build.qi
        end = self.tout[build.qi]
        while i < end:
            if build.unc[i] * self.wlhs >= self.wthresh[i]:
                out.append(i)
                i = self.tout[i]
            else:
                i += 1
        return out


class Decomposition:
    """Everything the generation-by-generation construction produces."""

    def __init__(self, root, bad, families, generations, region_mass, witnesses):
        self.root = root
        self.bad = bad                      # all bad nodes in the subtree
        self.families = families           # good processed node -> StoppingFamily
        self.generations = generations     # list of tuples of nodes
        self.region_mass = region_mass     # processed node -> nu-mass of its region
        self.witnesses = witnesses         # good family member -> witness ancestor
        self._mu = None
        self._nu = None
        self._delta = None
        self._engine: _Engine | None = None
        self._builds: dict = {}

    def processed(self) -> Iterator:
        for gen in self.generations:
            yield from gen

    def trace_lines(self) -> list[str]:
        """Deterministic one-line-per-step record of the minimization."""
        eng = self._engine
        lines = []
        for scope in eng.tree.canonical_sorted(self._builds):
            build = self._builds[scope]
            for row in build.rows:
                certs = ";".join(
                    f"{eng.node(c)}->{eng.node(v)}"
                    for c, v in sorted(
                        row.violators.items(), key=lambda cv: eng.rank[cv[0]]
                    )
                )
                lines.append(
                    f"scope={scope} level={row.level} frontier={row.frontier} "
                    f"forced_bad={row.forced_bad} kept={row.kept} certificates=[{certs}]"
                )
        return lines


@dataclass(frozen=True)
class AuditReport:
    """Exact numbers and verdicts for one extrapolation audit."""

    delta: Fraction
    cap_c: Fraction
    c1_mu: Fraction
    c2_nu: Fraction
    theta: Fraction
    bad_part: Fraction
    good_part: Fraction
    witness_cover_mass: Fraction
    predicted_bound: Fraction
    measured_c1_nu: Fraction
    passed: bool
    hypothesis_violation: object = None
    checks: dict = field(default_factory=dict)


# -- public operations -------------------------------------------------------


def bad_set(mu: TreeMeasure, delta) -> frozenset:
    """Nodes whose own mass is at least delta times their weight (ties bad)."""
    eng = _Engine(mu, as_fraction(delta, what="delta"))
    return frozenset(eng.node(i) for i in range(eng.n) if eng.bad[i])


def local_excess(mu: TreeMeasure, node, family: StoppingFamily) -> Fraction:
    """Uncovered box mass at ``node`` relative to the family, over its weight.

    Zero when some member weakly contains the node (its box is fully covered).
    """
    tree = mu.tree
    if not tree.is_ancestor(family.scope, node):
        raise ValueError(f"{node} is not inside the scope {family.scope}")
    for m in family.cubes:
        if tree.is_ancestor(m, node):
            return Fraction(0)
    covered = sum(
        (mu.subtree_mass(m) for m in family.cubes if tree.is_ancestor(node, m)),
        Fraction(0),
    )
    return (mu.subtree_mass(node) - covered) / tree.sigma(node)


def smallness_holds(
    mu: TreeMeasure, node, family: StoppingFamily, delta
) -> tuple[bool, object]:
    """Whether every node of the subtree has local excess at most delta.

    Returns (True, None) or (False, violator) with the canonically first
    violating node (shallowest, then lexicographic).
    """
    eng = _Engine(mu, as_fraction(delta, what="delta"))
    qi = eng.idx(node)
    midx = [eng.idx(m) for m in family.cubes]
    for i in midx:
        if not (qi <= i < eng.tout[qi]):
            raise ValueError(f"family member {eng.node(i)} is outside {node}")
    unc, covered = eng.family_state(qi, midx)
    viol = eng.first_violation(qi, unc, covered)
    return (True, None) if viol is None else (False, eng.node(viol))


def minimal_augmentation(
    mu: TreeMeasure, node, family: StoppingFamily, n: int, delta
) -> StoppingFamily:
    """One refinement step: extend a level-n family by the next frontier.

    The uncovered frontier one level deeper contributes its bad cubes
    unconditionally plus an inclusion-minimal set of good cubes keeping the
    smallness condition (tested with the still-deeper frontier closing off the
    remainder).  Minimality comes from a single drop pass in canonical order;
    a kept cube is one whose removal broke the bound at some ancestor.
    """
    eng = _Engine(mu, as_fraction(delta, what="delta"))
    qi = eng.idx(node)
    if eng.bad[qi]:
        raise PreconditionError(f"{node} is bad; the construction skips it")
    if n < 0:
        raise ValueError(f"step index must be >= 0, got {n}")
    midx = []
    for m in family.cubes:
        i = eng.idx(m)
        rel = eng.level[i] - eng.level[qi]
        if not (qi < i < eng.tout[qi]) or not 1 <= rel <= n:
            raise ValueError(
                f"family member {m} is not within levels 1..{n} below {node}"
            )
        midx.append(i)

    end = eng.tout[qi]
    base = eng.level[qi]
    covered_by_family = bytearray(eng.n)
    for i in midx:
        for j in range(i, eng.tout[i]):
            covered_by_family[j] = 1
    frontier = [
        i
        for i in range(qi, end)
        if eng.level[i] - base == n + 1 and not covered_by_family[i]
    ]
    frontier.sort(key=lambda i: eng.rank[i])

    unc, cov_eff = eng.family_state(qi, midx + frontier)
    if eng.first_violation(qi, unc, cov_eff) is not None:
        raise InternalInvariantError(
            f"inductive smallness fails for the given family at {node}"
        )
    forced = [i for i in frontier if eng.bad[i]]
    cands = [i for i in frontier if not eng.bad[i]]
    kept, _ = eng.attempt_removals(qi, unc, cands)
    members = sorted(midx + forced + kept, key=lambda i: eng.rank[i])
    return StoppingFamily(scope=node, cubes=tuple(eng.node(i) for i in members))


def build_stopping_family(mu: TreeMeasure, node, delta) -> StoppingFamily:
    """Run the refinement to the bottom of the tree below a good node."""
    eng = _Engine(mu, as_fraction(delta, what="delta"))
    build = eng.build_family(eng.idx(node))
    return StoppingFamily(
        scope=node, cubes=tuple(eng.node(i) for i in build.members)
    )


def build_decomposition(
    mu: TreeMeasure, nu: TreeMeasure, node, delta
) -> Decomposition:
    """Iterate stopping families generation by generation below ``node``.

    Bad nodes contribute their children as the next generation and keep only
    their top layer as region; good nodes contribute their stopping family and
    keep the uncovered part of their box.  The region masses of all processed
    nodes add up exactly to nu's box mass at ``node``.
    """
    if nu.tree is not mu.tree:
        raise ValueError("mu and nu must live on the same tree")
    eng = _Engine(mu, as_fraction(delta, what="delta"))
    tree = eng.tree
    ri = eng.idx(node)
    nu_denom, nu_a, nu_asub = nu._ints()

    generations: list[tuple] = []
    families: dict = {}
    builds: dict = {}
    region_int: dict[int, int] = {}
    current = [ri]
    while current:
        generations.append(tuple(eng.node(i) for i in current))
        nxt: list[int] = []
        for i in current:
            if eng.bad[i]:
                region_int[i] = nu_a[i]
                nxt.extend(eng.children[i])
            else:
                build = eng.build_family(i)
                scope = eng.node(i)
                families[scope] = StoppingFamily(
                    scope=scope,
                    cubes=tuple(eng.node(j) for j in build.members),
                )
                builds[scope] = build
                region_int[i] = nu_asub[i] - sum(nu_asub[j] for j in build.members)
                nxt.extend(build.members)
        nxt.sort(key=lambda i: eng.rank[i])
        current = nxt

    if sum(region_int.values()) != nu_asub[ri]:
        raise InternalInvariantError("region masses do not partition the box mass")

    witnesses: dict = {}
    for scope, build in builds.items():
        for ci in build.members:
            if eng.bad[ci]:
                continue
            wi = eng.find_witness(build, ci)
            if wi is None:
                raise TheoremViolationError(
                    f"no witness ancestor for kept member {eng.node(ci)} below {scope}"
                )
            witnesses[eng.node(ci)] = eng.node(wi)

    bad_nodes = frozenset(
        eng.node(i) for i in range(ri, eng.tout[ri]) if eng.bad[i]
    )
    dec = Decomposition(
        root=node,
        bad=bad_nodes,
        families=families,
        generations=generations,
        region_mass={
            eng.node(i): Fraction(v, nu_denom) for i, v in region_int.items()
        },
        witnesses=witnesses,
    )
    dec._mu = mu
    dec._nu = nu
    dec._delta = eng.delta
    dec._engine = eng
    dec._builds = builds
    return dec


def lemma_witnesses(mu: TreeMeasure, dec: Decomposition, delta) -> dict:
    """Witness ancestors for every good stopping cube of the decomposition.

    For each good member of a family at scope Q, walking ancestors upward
    finds a node whose uncovered mass relative to the final family is at
    least (1-theta)*delta times its weight; the first hit is returned.
    """
    delta = as_fraction(delta, what="delta")
    if dec._mu is not mu or dec._delta != delta:
        raise ValueError("decomposition was built with different mu or delta")
    eng = dec._engine
    out: dict = {}
    for scope, build in dec._builds.items():
        for ci in build.members:
            if eng.bad[ci]:
                continue
            wi = eng.find_witness(build, ci)
            if wi is None:
                raise TheoremViolationError(
                    f"no witness ancestor for {eng.node(ci)} below {scope}"
                )
            out[eng.node(ci)] = eng.node(wi)
    return out


def audit_bound(mu: TreeMeasure, nu: TreeMeasure, delta, cap_c) -> AuditReport:
    """Build the decomposition at the root and audit the extrapolation bound.

    ``cap_c`` is the hypothesis constant: every good region must carry nu-mass
    at most cap_c times its scope's weight.  If some constructed family breaks
    that, the report names the first offending scope and fails; the remaining
    inequalities (bad-part, witness-cover, good-part, final bound) are always
    evaluated and reported exactly.
    """
    delta = as_fraction(delta, what="delta")
    cap_c = as_fraction(cap_c, what="cap_c")
    if cap_c < 0:
        raise ValueError(f"cap_c must be >= 0, got {cap_c}")
    if nu.tree is not mu.tree:
        raise ValueError("mu and nu must live on the same tree")
    tree = mu.tree
    root = tree.root
    dec = build_decomposition(mu, nu, root, delta)
    eng = dec._engine

    c1_mu = mu.carleson().value
    c2_nu = nu.top().value
    theta = tree.theta
    one_minus = 1 - theta
    predicted = (c2_nu + cap_c / one_minus) * c1_mu / delta
    measured = nu.carleson().value
    sigma_root = tree.sigma(root)
    checks: dict[str, bool] = {}

    # Hypothesis on every constructed family: region mass <= cap_c * weight.
    violation = None
    for scope in tree.canonical_sorted(dec.families):
        if dec.region_mass[scope] > cap_c * tree.sigma(scope):
            violation = scope
            break
    checks["hypothesis_families"] = violation is None

    # Bad part: regions of bad nodes are controlled through their own mass.
    processed_bad = [nd for nd in dec.processed() if nd in dec.bad]
    bad_part = sum((dec.region_mass[nd] for nd in processed_bad), Fraction(0))
    mu_bad_processed = sum((mu.mass(nd) for nd in processed_bad), Fraction(0))
    mu_bad_all = sum((mu.mass(nd) for nd in dec.bad), Fraction(0))
    checks["bad_part_bound"] = (
        bad_part <= (c2_nu / delta) * mu_bad_processed
        and (c2_nu / delta) * mu_bad_all <= c1_mu * c2_nu * sigma_root / delta
    )

    # Witness cover, per scope: the good members are covered by the disjoint
    # maximal witness nodes, whose total weight the uncovered mass controls.
    sigma_denom, sigma_int = tree._sigma_ints()
    cover_ok = True
    witness_cover = Fraction(0)
    for scope in tree.canonical_sorted(dec.families):
        build = dec._builds[scope]
        good_members = [ci for ci in build.members if not eng.bad[ci]]
        cover = eng.maximal_witness_cover(build)
        for ci in good_members:
            if not any(h <= ci < eng.tout[h] for h in cover):
                raise TheoremViolationError(
                    f"witness cover misses member {eng.node(ci)} below {scope}"
                )
        left = Fraction(sum(sigma_int[ci] for ci in good_members), sigma_denom)
        mid = Fraction(sum(sigma_int[h] for h in cover), sigma_denom)
        scope_unc = Fraction(build.unc[build.qi], eng.mass_denom)
        right = scope_unc / (one_minus * delta)
        cover_ok = cover_ok and left <= mid <= right
        witness_cover += mid
    checks["witness_cover_bound"] = cover_ok

    # Good part: all good regions together, against the hypothesis constant.
    good_nodes = list(dec.families)
    good_part = sum((dec.region_mass[nd] for nd in good_nodes), Fraction(0))
    sigma_good = sum((tree.sigma(nd) for nd in good_nodes), Fraction(0))
    checks["good_part_bound"] = good_part <= cap_c * sigma_good

    # Deeper generations: good regions strictly below the root are controlled
    # by the witness-cover mechanism through mu's Carleson norm.
    deep = good_part - (dec.region_mass[root] if root not in dec.bad else 0)
    checks["deep_good_part_bound"] = deep <= cap_c * c1_mu * sigma_root / (
        one_minus * delta
    )

    checks["final_bound"] = measured <= predicted
    passed = violation is None and all(checks.values())
    report = AuditReport(
        delta=delta,
        cap_c=cap_c,
        c1_mu=c1_mu,
        c2_nu=c2_nu,
        theta=theta,
        bad_part=bad_part,
        good_part=good_part,
        witness_cover_mass=witness_cover,
        predicted_bound=predicted,
        measured_c1_nu=measured,
        passed=passed,
        hypothesis_violation=violation,
        checks=checks,
    )
    return report
