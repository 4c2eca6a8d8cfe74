"""Contextual-privacy checks, inseparability classes, synthesis, witnesses.

A protocol for a rule is contextually private when any two profiles that
differ in one agent's type and reach *distinct* terminals map to distinct
outcomes.  Two types of an agent are directly inseparable on a product
set when some fixed opponent profile gives them equal outcomes; the
transitive closure partitions the agent's types into inseparability
classes.  A product set on which the rule is non-constant while every
agent's types fall in a single class is a machine-checkable witness that
no contextually private sequential-elicitation protocol exists.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass
from typing import Optional

from cpv.core import (
    ChoiceRule,
    InputError,
    PreconditionError,
    Profile,
    ProfileSet,
    ResourceError,
    TypeSpace,
    Witness,
    product_factorization,
)
from cpv.protocol import (
    ElicitQuery,
    Protocol,
    build_protocol,
    implements,
    validate_protocol,
)


class UnionFind:
    """Array union-find with path compression."""

    def __init__(self, size: int) -> None:
        self.parent = list(range(size))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _as_factors(rule: ChoiceRule, region) -> tuple[tuple[int, ...], ...]:
    if isinstance(region, ProfileSet):
        factors = product_factorization(rule.space, region)
        if factors is None:
            raise InputError("inseparability needs a product profile set")
        return factors
    return tuple(tuple(sorted(set(f))) for f in region)


@dataclass(frozen=True)
class InseparabilityPartition:
    agent: int
    factors: tuple[tuple[int, ...], ...]
    classes: tuple[tuple[int, ...], ...]

    def class_of(self, type_index: int) -> tuple[int, ...]:
        for cls in self.classes:
            if type_index in cls:
                return cls
        raise InputError(f"type index {type_index} not in the base set")


def inseparability_classes(rule: ChoiceRule, region, agent: int) -> InseparabilityPartition:
    """Equivalence classes of agent's types on a product set.

    Direct edges come from scanning outcome fibers per opponent profile:
    types sharing an outcome against some fixed opponents are joined, and
    the union-find closure yields the partition.
    """
    factors = _as_factors(rule, region)
    space = rule.space
    if not 0 <= agent < space.n:
        raise InputError(f"unknown agent {agent}")
    types = factors[agent]
    pos = {t: k for k, t in enumerate(types)}
    uf = UnionFind(len(types))
    others = [factors[i] for i in range(space.n) if i != agent]
    other_agents = [i for i in range(space.n) if i != agent]
    base = [0] * space.n
    for combo in itertools.product(*others):
        for i, t in zip(other_agents, combo):
            base[i] = t
        fiber: dict[int, int] = {}
        for t in types:
            base[agent] = t
            x = rule.table[space.index(tuple(base))]
            if x in fiber:
                uf.union(fiber[x], pos[t])
            else:
                fiber[x] = pos[t]
    groups: dict[int, list[int]] = {}
    for t in types:
        groups.setdefault(uf.find(pos[t]), []).append(t)
    classes = tuple(tuple(sorted(g)) for g in sorted(groups.values()))
    return InseparabilityPartition(agent, factors, classes)


# ---------------------------------------------------------------------------
# protocol-level checks


@dataclass(frozen=True)
class CpViolation:
    agent: int
    type_a: int
    type_b: int
    profile_a: Profile  # carries type_a for the agent
    profile_b: Profile
    leaf_a: int
    leaf_b: int
    detail: str  # the shared outcome (or component) that should have differed


@dataclass(frozen=True)
class CpVerdict:
    holds: bool
    violation: Optional[CpViolation] = None

    def __bool__(self) -> bool:
        return self.holds


def _require_implements(protocol: Protocol, rule: ChoiceRule) -> None:
    res = implements(protocol, rule)
    if not res:
        raise PreconditionError(
            f"protocol does not implement the rule (leaf {res.leaf} is non-constant)"
        )


def _unilateral_scan(protocol: Protocol, rule: ChoiceRule, value_of) -> Optional[CpViolation]:
    """First unilateral pair reaching distinct leaves with equal value.

    Scan order: base profile index ascending, agent ascending, partner
    type ascending.  The first hit is the reported violation, which makes
    reports deterministic and independent of parallel evaluation order.
    """
    space = protocol.space
    leaf_of = protocol.leaf_map()
    for k in sorted(leaf_of):
        profile = space.profile(k)
        for agent in range(space.n):
            t = profile[agent]
            stride = space.strides[agent]
            for t2 in range(t + 1, space.sizes[agent]):
                k2 = k + (t2 - t) * stride
                leaf2 = leaf_of.get(k2)
                if leaf2 is None or leaf2 == leaf_of[k]:
                    continue
                va, vb = value_of(k, agent), value_of(k2, agent)
                if va == vb:
                    other = list(profile)
                    other[agent] = t2
                    return CpViolation(
                        agent, t, t2, profile, tuple(other), leaf_of[k], leaf2, va
                    )
    return None


def check_protocol_cp(protocol: Protocol, rule: ChoiceRule) -> CpVerdict:
    """Separated unilateral pairs must change the outcome."""
    _require_implements(protocol, rule)
    violation = _unilateral_scan(
        protocol, rule, lambda k, agent: rule.outcomes[rule.table[k]]
    )
    return CpVerdict(violation is None, violation)


def check_protocol_icp(protocol: Protocol, rule: ChoiceRule) -> CpVerdict:
    """Separated unilateral pairs must change the deviator's own component."""
    if not rule.has_components:
        raise InputError("individual check needs per-agent outcome components")
    _require_implements(protocol, rule)
    violation = _unilateral_scan(
        protocol, rule, lambda k, agent: rule.components[rule.table[k]][agent]
    )
    return CpVerdict(violation is None, violation)


@dataclass(frozen=True)
class GcpVerdict:
    holds: bool
    node: Optional[int] = None  # query whose children reach overlapping outcomes
    profiles: Optional[tuple[Profile, Profile]] = None

    def __bool__(self) -> bool:
        return self.holds


def check_protocol_gcp(protocol: Protocol, rule: ChoiceRule) -> GcpVerdict:
    """Separated profiles must change the outcome.

    Evaluated both ways: directly over terminal pairs, and through the
    characterization that every query's children reach pairwise-disjoint
    outcome sets.  The two must agree; disagreement is an internal bug.
    """
    _require_implements(protocol, rule)
    space = protocol.space

    by_definition = None  # first leaf pair sharing an outcome
    leaf_outcome: dict[int, int] = {}
    leaf_rep: dict[int, int] = {}
    for v in protocol.nodes:
        if v.is_leaf:
            k = next(ProfileSet(space, v.label).indices())
            leaf_outcome[v.id] = rule.table[k]
            leaf_rep[v.id] = k
    seen: dict[int, int] = {}
    for leaf_id in sorted(leaf_outcome):
        x = leaf_outcome[leaf_id]
        if x in seen and by_definition is None:
            by_definition = (
                space.profile(leaf_rep[seen[x]]),
                space.profile(leaf_rep[leaf_id]),
            )
        seen.setdefault(x, leaf_id)

    reach: dict[int, frozenset[int]] = {}
    for v in reversed(protocol.nodes):  # children have larger preorder ids
        if v.is_leaf:
            reach[v.id] = frozenset({leaf_outcome[v.id]})
        else:
            reach[v.id] = frozenset().union(*(reach[c] for c in v.children))
    by_characterization = None
    for v in protocol.nodes:
        if v.is_leaf:
            continue
        total = 0
        for c in v.children:
            total += len(reach[c])
        if total != len(reach[v.id]):
            by_characterization = v.id
            break

    if (by_definition is None) != (by_characterization is None):
        raise AssertionError(
            "group-privacy definition and characterization disagree (bug)"
        )
    return GcpVerdict(by_definition is None, by_characterization, by_definition)


# ---------------------------------------------------------------------------
# corners scan


@dataclass(frozen=True)
class CornersViolation:
    agent_i: int
    agent_j: int
    types_i: tuple[int, int]
    types_j: tuple[int, int]
    rest: Profile  # full profile; positions i and j give the (type_i, type_j) corner
    shared_outcome: str
    fourth_outcome: str


@dataclass(frozen=True)
class CornersResult:
    ok: bool
    violation: Optional[CornersViolation] = None

    def __bool__(self) -> bool:
        return self.ok


def corners_scan(rule: ChoiceRule, region: ProfileSet | None = None) -> CornersResult:
    """Two-agent square test: three equal corners force the fourth.

    A fast necessary condition for contextual privacy; the first failing
    square in scan order is reported.
    """
    space = rule.space
    if space.n < 2:
        return CornersResult(True)
    universe = region.mask if region is not None else (1 << space.total) - 1
    for k in range(space.total):
        if not (universe >> k) & 1:
            continue
        profile = space.profile(k)
        for i in range(space.n):
            si = space.strides[i]
            for ti2 in range(profile[i] + 1, space.sizes[i]):
                ki = k + (ti2 - profile[i]) * si
                if not (universe >> ki) & 1:
                    continue
                for j in range(i + 1, space.n):
                    sj = space.strides[j]
                    for tj2 in range(profile[j] + 1, space.sizes[j]):
                        d = (tj2 - profile[j]) * sj
                        if not (universe >> (k + d)) & 1 or not (universe >> (ki + d)) & 1:
                            continue
                        o00 = rule.table[k]
                        o10 = rule.table[ki]
                        o01 = rule.table[k + d]
                        o11 = rule.table[ki + d]
                        bad = _corner_defect(o00, o10, o01, o11)
                        if bad is not None:
                            x, y = bad
                            return CornersResult(
                                False,
                                CornersViolation(
                                    i,
                                    j,
                                    (profile[i], ti2),
                                    (profile[j], tj2),
                                    profile,
                                    rule.outcomes[x],
                                    rule.outcomes[y],
                                ),
                            )
    return CornersResult(True)


def _corner_defect(o00, o10, o01, o11):
    for three, fourth in (
        ((o00, o10, o01), o11),
        ((o00, o10, o11), o01),
        ((o00, o01, o11), o10),
        ((o10, o01, o11), o00),
    ):
        if three[0] == three[1] == three[2] != fourth:
            return three[0], fourth
    return None


# ---------------------------------------------------------------------------
# synthesis and witnesses


@dataclass(frozen=True)
class SynthesisResult:
    protocol: Optional[Protocol] = None
    witness: Optional[Witness] = None

    @property
    def is_protocol(self) -> bool:
        return self.protocol is not None


class _WitnessFound(Exception):
    def __init__(self, factors) -> None:
        self.factors = factors


def synthesize_or_witness(
    rule: ChoiceRule, root_factors=None, check: bool = True
) -> SynthesisResult:
    """Greedy construction of a contextually private protocol, or a witness.

    At each node (a product set), either the rule is constant (terminal),
    or some agent has separable types, in which case the class of the
    smallest separable type is queried against its complement; if neither
    holds, the node's factors certify impossibility.  Agent and class
    choices are deterministic but correctness is order-independent.
    """
    space = rule.space
    if root_factors is None:
        root_factors = tuple(tuple(range(s)) for s in space.sizes)
    else:
        root_factors = tuple(tuple(sorted(set(f))) for f in root_factors)
    universe = ProfileSet.from_factors(space, root_factors)

    def step(label: int, factors):
        outcomes = set()
        for combo in itertools.product(*factors):
            outcomes.add(rule.table[space.index(combo)])
            if len(outcomes) > 1:
                break
        if len(outcomes) <= 1:
            return None
        for agent in range(space.n):
            part = inseparability_classes(rule, factors, agent)
            if len(part.classes) < 2:
                continue
            cls = part.class_of(min(factors[agent]))
            rest_all = tuple(
                t for t in range(space.sizes[agent]) if t not in cls
            )
            query = ElicitQuery(agent, (tuple(cls), rest_all))

            def child_state(cell_index: int, _mask: int, agent=agent, cls=cls, factors=factors):
                keep = cls if cell_index == 0 else tuple(
                    t for t in factors[agent] if t not in cls
                )
                return tuple(
                    keep if i == agent else f for i, f in enumerate(factors)
                )

            return query, child_state
        raise _WitnessFound(factors)

    try:
        protocol = build_protocol(space, step, root_factors, universe)
    except _WitnessFound as found:
        return SynthesisResult(witness=Witness(tuple(found.factors)))
    if check:
        assert validate_protocol(protocol).ok
        assert implements(protocol, rule)
        assert check_protocol_cp(protocol, rule).holds
    return SynthesisResult(protocol=protocol)


def witness_verify(rule: ChoiceRule, witness: Witness) -> bool:
    """Re-derivation of the certificate: non-constant on the product set,
    and every agent's factor lies inside one inseparability class."""
    space = rule.space
    if len(witness.factors) != space.n:
        raise InputError("witness factor count differs from agent count")
    for i, f in enumerate(witness.factors):
        if not f:
            raise InputError(f"agent {i}: empty witness factor")
        for t in f:
            if not 0 <= t < space.sizes[i]:
                raise InputError(f"agent {i}: witness type index {t} out of range")
    outcomes = set()
    for combo in itertools.product(*witness.factors):
        outcomes.add(rule.table[space.index(combo)])
        if len(outcomes) > 1:
            break
    if len(outcomes) <= 1:
        return False
    for agent in range(space.n):
        part = inseparability_classes(rule, witness.factors, agent)
        if len(part.classes) != 1:
            return False
    return True


def witness_minimize(rule: ChoiceRule, witness: Witness) -> Witness:
    """Greedy shrink of each factor while the certificate keeps verifying;
    the result is locally minimal and human-checkable."""
    if not witness_verify(rule, witness):
        raise InputError("cannot minimize: not a valid witness")
    factors = [list(f) for f in witness.factors]
    changed = True
    while changed:
        changed = False
        for agent in range(len(factors)):
            for t in list(factors[agent]):
                if len(factors[agent]) == 1:
                    break
                trial = [tuple(f) for f in factors]
                trial[agent] = tuple(x for x in factors[agent] if x != t)
                if witness_verify(rule, Witness(tuple(trial))):
                    factors[agent] = [x for x in factors[agent] if x != t]
                    changed = True
    return Witness(tuple(tuple(f) for f in factors))


def witness_oracle(
    rule: ChoiceRule,
    cap: int = 1 << 20,
    samples: int | None = None,
    seed: int = 0,
) -> Optional[Witness]:
    """Brute-force witness search over all product sets.

    Independent of the synthesis path: enumerates nonempty per-agent
    factors in ascending bitmask order and returns the first product set
    that verifies.  With ``samples`` set, draws seeded random product
    sets instead of enumerating (for spaces beyond the cap).
    """
    space = rule.space
    total = math.prod((1 << s) - 1 for s in space.sizes)
    if samples is None and total > cap:
        raise ResourceError(
            f"{total} product sets exceed the cap {cap}; enable sampling"
        )

    def bits_to_types(bits: int, size: int) -> tuple[int, ...]:
        return tuple(t for t in range(size) if bits >> t & 1)

    if samples is None:
        ranges = [range(1, 1 << s) for s in space.sizes]
        for combo in itertools.product(*ranges):
            factors = tuple(
                bits_to_types(b, s) for b, s in zip(combo, space.sizes)
            )
            w = Witness(factors)
            if witness_verify(rule, w):
                return w
        return None
    rng = random.Random(seed)
    for _ in range(samples):
        factors = tuple(
            bits_to_types(rng.randrange(1, 1 << s), s) for s in space.sizes
        )
        w = Witness(factors)
        if witness_verify(rule, w):
            return w
    return None


# ---------------------------------------------------------------------------
# non-bossiness


@dataclass(frozen=True)
class NonbossyResult:
    ok: bool
    violation: Optional[tuple[int, int, int, Profile, int]] = None
    # (agent i, type, alternative type, base profile, affected agent j)

    def __bool__(self) -> bool:
        return self.ok


def check_nonbossy(rule: ChoiceRule) -> NonbossyResult:
    """No agent changes another's component while keeping her own."""
    if not rule.has_components:
        raise InputError("non-bossiness needs per-agent outcome components")
    space = rule.space
    for k in range(space.total):
        profile = space.profile(k)
        for i in range(space.n):
            stride = space.strides[i]
            for t2 in range(profile[i] + 1, space.sizes[i]):
                k2 = k + (t2 - profile[i]) * stride
                ca = rule.components[rule.table[k]]
                cb = rule.components[rule.table[k2]]
                if ca[i] != cb[i]:
                    continue
                for j in range(space.n):
                    if j != i and ca[j] != cb[j]:
                        return NonbossyResult(
                            False, (i, profile[i], t2, profile, j)
                        )
    return NonbossyResult(True)
