"""Query protocols: rooted trees whose node labels partition the type space.

Node labels are always derived from the root label and the query
descriptors, never stored independently, so label/query inconsistencies
cannot arise.  Cells that are empty on a node's label are pruned during
construction and recorded; queries left with a single nonempty cell are
contracted away (they transmit nothing).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

from cpv.core import (
    ChoiceRule,
    InputError,
    PreconditionError,
    Profile,
    ProfileSet,
    TypeSpace,
)


class ProtocolDefect(InputError):
    """A structural defect found while building or validating a protocol."""

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        self.message = message
        super().__init__(f"{message} at node {path}")


# ---------------------------------------------------------------------------
# queries


@dataclass(frozen=True)
class ElicitQuery:
    """Individual elicitation: cells partition agent ``agent``'s alphabet."""

    agent: int
    cells: tuple[tuple[int, ...], ...]

    def validate(self, space: TypeSpace, path: str = "?") -> None:
        if not 0 <= self.agent < space.n:
            raise ProtocolDefect(path, f"unknown agent {self.agent}")
        _check_partition(self.cells, range(space.sizes[self.agent]), path, "type")

    def cell_of(self, space: TypeSpace, index: int) -> int:
        t = (index // space.strides[self.agent]) % space.sizes[self.agent]
        for c, cell in enumerate(self.cells):
            if t in cell:
                return c
        raise AssertionError("partition is exhaustive")


@dataclass(frozen=True)
class CountQuery:
    """Cells partition {0..n}; a profile falls in the cell holding the
    number of agents whose type lies in ``subset``."""

    subset: tuple[int, ...]
    cells: tuple[tuple[int, ...], ...]

    def validate(self, space: TypeSpace, path: str = "?") -> None:
        if not space.common_alphabet:
            raise ProtocolDefect(path, "count query requires a common alphabet")
        for t in self.subset:
            if not 0 <= t < space.sizes[0]:
                raise ProtocolDefect(path, f"count subset type index {t} out of range")
        _check_partition(self.cells, range(space.n + 1), path, "count")

    def count(self, space: TypeSpace, index: int) -> int:
        sub = set(self.subset)
        c = 0
        for i in range(space.n):
            if (index // space.strides[i]) % space.sizes[i] in sub:
                c += 1
        return c

    def cell_of(self, space: TypeSpace, index: int) -> int:
        c = self.count(space, index)
        for k, cell in enumerate(self.cells):
            if c in cell:
                return k
        raise AssertionError("partition is exhaustive")


@dataclass(frozen=True)
class MultiCountQuery:
    """Cells partition {0..n}^l over the joint counts of ``subsets``."""

    subsets: tuple[tuple[int, ...], ...]
    cells: tuple[tuple[tuple[int, ...], ...], ...]

    def validate(self, space: TypeSpace, path: str = "?") -> None:
        if not space.common_alphabet:
            raise ProtocolDefect(path, "multi-count query requires a common alphabet")
        for sub in self.subsets:
            for t in sub:
                if not 0 <= t < space.sizes[0]:
                    raise ProtocolDefect(path, f"count subset type index {t} out of range")
        domain = itertools.product(range(space.n + 1), repeat=len(self.subsets))
        _check_partition(self.cells, domain, path, "count vector")

    def vector(self, space: TypeSpace, index: int) -> tuple[int, ...]:
        types = [(index // space.strides[i]) % space.sizes[i] for i in range(space.n)]
        return tuple(
            sum(1 for t in types if t in set(sub)) for sub in self.subsets
        )

    def cell_of(self, space: TypeSpace, index: int) -> int:
        v = self.vector(space, index)
        for k, cell in enumerate(self.cells):
            if v in cell:
                return k
        raise AssertionError("partition is exhaustive")


@dataclass(frozen=True)
class ExtensionalQuery:
    """Children given outright as profile-set masks over the full space."""

    cells: tuple[int, ...]

    def validate(self, space: TypeSpace, path: str = "?") -> None:
        for mask in self.cells:
            if mask < 0 or mask >> space.total:
                raise ProtocolDefect(path, "extensional cell outside profile space")


Query = ElicitQuery | CountQuery | MultiCountQuery | ExtensionalQuery


def _check_partition(cells, domain, path: str, what: str) -> None:
    if len(cells) < 2:
        raise ProtocolDefect(path, f"query needs at least 2 cells")
    seen: set = set()
    for cell in cells:
        if not cell:
            raise ProtocolDefect(path, f"empty {what} cell")
        for v in cell:
            if v in seen:
                raise ProtocolDefect(path, f"overlap: {what} {v} in two cells")
            seen.add(v)
    missing = [v for v in domain if v not in seen]
    if missing:
        raise ProtocolDefect(path, f"non-exhaustive: {what} {missing[0]} in no cell")


def query_cell_masks(space: TypeSpace, query: Query, label: int) -> list[int]:
    """Masks of ``label`` split by the query's cells, aligned to cell order."""
    if isinstance(query, ExtensionalQuery):
        out = [label & mask for mask in query.cells]
        covered = 0
        for i, m in enumerate(out):
            if covered & m:
                k = (covered & m).bit_length() - 1
                raise ProtocolDefect("?", f"overlap: profile {space.labels(space.profile(k))}")
            covered |= m
        if covered != label:
            k = (label & ~covered).bit_length() - 1
            raise ProtocolDefect(
                "?", f"non-exhaustive: profile {space.labels(space.profile(k))} in no cell"
            )
        return out
    out = [0] * len(query.cells)
    mask = label
    while mask:
        low = mask & -mask
        k = low.bit_length() - 1
        out[query.cell_of(space, k)] |= low
        mask ^= low
    return out


# ---------------------------------------------------------------------------
# protocol trees


@dataclass(frozen=True)
class Node:
    id: int
    parent: int  # -1 for the root
    depth: int
    label: int  # profile-set mask, derived
    query: Optional[Query]  # None at leaves
    children: tuple[int, ...]
    cell_of_child: tuple[int, ...]  # original cell index per child

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class Protocol:
    space: TypeSpace
    universe: int  # root label mask; full space unless restricted
    nodes: tuple[Node, ...]
    notes: tuple[str, ...] = ()

    @property
    def root(self) -> Node:
        return self.nodes[0]

    def label_set(self, node_id: int) -> ProfileSet:
        return ProfileSet(self.space, self.nodes[node_id].label)

    def leaves(self) -> list[Node]:
        return [v for v in self.nodes if v.is_leaf]

    def leaf_of_index(self, index: int) -> int:
        """Leaf node id reached by profile ``index``; -1 outside the universe."""
        if not (self.universe >> index) & 1:
            return -1
        v = self.nodes[0]
        while not v.is_leaf:
            for child in v.children:
                if (self.nodes[child].label >> index) & 1:
                    v = self.nodes[child]
                    break
            else:
                raise AssertionError("children partition the label")
        return v.id

    def leaf_map(self) -> dict[int, int]:
        """profile index -> leaf node id, for every profile in the universe."""
        out: dict[int, int] = {}
        for v in self.nodes:
            if v.is_leaf:
                mask = v.label
                while mask:
                    low = mask & -mask
                    out[low.bit_length() - 1] = v.id
                    mask ^= low
        return out

    def ancestors(self, node_id: int) -> list[int]:
        out = []
        v = node_id
        while v != -1:
            out.append(v)
            v = self.nodes[v].parent
        return out


# --- construction ----------------------------------------------------------

# A step function drives adaptive construction: given the current label mask
# and an opaque state, return None to stop (leaf) or a (query, child_state)
# pair, where child_state(cell_index, child_mask) produces the state passed
# to that child.  Degenerate queries recurse in place with advanced state.
StepFn = Callable[[int, object], Optional[tuple[Query, Callable[[int, int], object]]]]


class _Builder:
    def __init__(self, space: TypeSpace, universe: int) -> None:
        self.space = space
        self.universe = universe
        self.rows: list[list] = []  # [parent, depth, label, query, children, cells]
        self.notes: list[str] = []

    def grow(self, label: int, state: object, step: StepFn, parent: int, depth: int, path: str) -> int:
        while True:
            decision = step(label, state)
            if decision is None:
                return self._emit(parent, depth, label, None, [], [])
            query, child_state = decision
            query.validate(self.space, path)
            masks = query_cell_masks(self.space, query, label)
            kept = [(c, m) for c, m in enumerate(masks) if m]
            for c, m in enumerate(masks):
                if not m:
                    self.notes.append(f"pruned empty cell {c} at {path}")
            if len(kept) == 1:
                self.notes.append(f"contracted degenerate query at {path}")
                state = child_state(kept[0][0], kept[0][1])
                continue
            node_id = self._emit(parent, depth, label, query, [], [])
            for c, m in kept:
                child = self.grow(
                    m, child_state(c, m), step, node_id, depth + 1, f"{path}/{c}"
                )
                self.rows[node_id][4].append(child)
                self.rows[node_id][5].append(c)
            return node_id

    def _emit(self, parent, depth, label, query, children, cells) -> int:
        self.rows.append([parent, depth, label, query, children, cells])
        return len(self.rows) - 1

    def freeze(self) -> Protocol:
        nodes = tuple(
            Node(i, r[0], r[1], r[2], r[3], tuple(r[4]), tuple(r[5]))
            for i, r in enumerate(self.rows)
        )
        return Protocol(self.space, self.universe, nodes, tuple(self.notes))


def build_protocol(
    space: TypeSpace,
    step: StepFn,
    state: object = None,
    universe: ProfileSet | None = None,
) -> Protocol:
    root = ProfileSet.full(space).mask if universe is None else universe.mask
    if not root:
        raise InputError("universe is empty")
    b = _Builder(space, root)
    b.grow(root, state, step, -1, 0, "/tree")
    return b.freeze()


@dataclass(frozen=True)
class NodeSpec:
    """Explicit nested description of a protocol (what files deserialize to).

    ``children`` aligns with the query's cells; positions whose cell is
    empty on the node's label must be ``None``.
    """

    query: Optional[Query] = None
    children: tuple[Optional["NodeSpec"], ...] = ()


def build_from_spec(
    space: TypeSpace, spec: NodeSpec, universe: ProfileSet | None = None
) -> Protocol:
    def step(label: int, state: object):
        node, path = state
        assert isinstance(node, NodeSpec)
        if node.query is None:
            if node.children:
                raise ProtocolDefect(path, "children without a query")
            return None
        node.query.validate(space, path)
        masks = query_cell_masks(space, node.query, label)
        if len(node.children) != len(masks):
            raise ProtocolDefect(
                path,
                f"{len(node.children)} children for {len(masks)} cells",
            )
        for c, m in enumerate(masks):
            child = node.children[c]
            if m and child is None:
                raise ProtocolDefect(f"{path}/{c}", "missing subtree for nonempty cell")
            if not m and child is not None:
                raise ProtocolDefect(f"{path}/{c}", "subtree attached to an empty cell")

        def child_state(cell_index: int, _mask: int):
            return (node.children[cell_index], f"{path}/{cell_index}")

        return node.query, child_state

    def wrapped(label: int, state: object):
        # re-raise extensional partition defects with the node's path
        node, path = state
        try:
            return step(label, state)
        except ProtocolDefect as exc:
            if exc.path == "?":
                raise ProtocolDefect(path, exc.message) from None
            raise

    return build_protocol(space, wrapped, (spec, "/tree"), universe)


# --- validation -------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    defects: tuple[str, ...]
    notes: tuple[str, ...]


def validate_protocol(protocol: Protocol) -> ValidationReport:
    """Re-check the derived invariants: root label, partitions, nonempty
    labels, branching.  Construction enforces these, so defects indicate a
    hand-assembled or corrupted value."""
    defects: list[str] = []
    if protocol.nodes[0].label != protocol.universe:
        defects.append("root label differs from the universe")
    for v in protocol.nodes:
        if not v.label:
            defects.append(f"empty label at node {v.id}")
        if v.is_leaf:
            continue
        if len(v.children) < 2:
            defects.append(f"interior node {v.id} has fewer than 2 children")
        union = 0
        for c in v.children:
            child = protocol.nodes[c]
            if union & child.label:
                defects.append(f"overlap at node {v.id}")
            union |= child.label
        if union != v.label:
            defects.append(f"non-exhaustive at node {v.id}")
    return ValidationReport(not defects, tuple(defects), protocol.notes)


# --- execution ---------------------------------------------------------------


@dataclass(frozen=True)
class TranscriptStep:
    node: int
    query: str
    answer: int  # position among the node's children


@dataclass(frozen=True)
class Transcript:
    steps: tuple[TranscriptStep, ...]
    leaf: int
    leaf_label: ProfileSet
    outcome: Optional[str] = None


def describe_query(query: Query) -> str:
    if isinstance(query, ElicitQuery):
        return f"elicit(agent {query.agent + 1})"
    if isinstance(query, CountQuery):
        return f"count(subset size {len(query.subset)})"
    if isinstance(query, MultiCountQuery):
        return f"multicount(l={len(query.subsets)})"
    return "extensional"


def run_protocol(
    protocol: Protocol, profile: Profile, rule: ChoiceRule | None = None
) -> Transcript:
    space = protocol.space
    index = space.index(profile)
    if not (protocol.universe >> index) & 1:
        raise InputError("profile lies outside the protocol's universe")
    steps: list[TranscriptStep] = []
    v = protocol.nodes[0]
    while not v.is_leaf:
        for pos, c in enumerate(v.children):
            if (protocol.nodes[c].label >> index) & 1:
                steps.append(TranscriptStep(v.id, describe_query(v.query), pos))
                v = protocol.nodes[c]
                break
        else:
            raise AssertionError("children partition the label")
    outcome = None
    if rule is not None:
        seen = {rule.table[k] for k in ProfileSet(space, v.label).indices()}
        if len(seen) != 1:
            raise PreconditionError(
                f"protocol does not implement rule: leaf {v.id} is non-constant"
            )
        outcome = rule.outcomes[next(iter(seen))]
    return Transcript(tuple(steps), v.id, ProfileSet(space, v.label), outcome)


# --- semantic relations -------------------------------------------------------


@dataclass(frozen=True)
class ImplementsResult:
    ok: bool
    leaf: Optional[int] = None
    profiles: Optional[tuple[Profile, Profile]] = None

    def __bool__(self) -> bool:
        return self.ok


def implements(protocol: Protocol, rule: ChoiceRule) -> ImplementsResult:
    """True iff the rule is constant on every terminal label; otherwise a
    leaf together with two member profiles mapped to different outcomes."""
    if rule.space != protocol.space:
        raise InputError("protocol and rule live on different type spaces")
    for v in protocol.nodes:
        if not v.is_leaf:
            continue
        first_idx = None
        first_out = None
        for k in ProfileSet(protocol.space, v.label).indices():
            if first_idx is None:
                first_idx, first_out = k, rule.table[k]
            elif rule.table[k] != first_out:
                return ImplementsResult(
                    False,
                    v.id,
                    (protocol.space.profile(first_idx), protocol.space.profile(k)),
                )
    return ImplementsResult(True)


def earliest_departure(protocol: Protocol, p: Profile, q: Profile) -> int:
    """The deepest common ancestor whose children separate ``p`` from ``q``."""
    space = protocol.space
    pi, qi = space.index(p), space.index(q)
    for k in (pi, qi):
        if not (protocol.universe >> k) & 1:
            raise InputError("profile lies outside the protocol's universe")
    v = protocol.nodes[0]
    while not v.is_leaf:
        holding = [
            c
            for c in v.children
            if (protocol.nodes[c].label >> pi) & 1 or (protocol.nodes[c].label >> qi) & 1
        ]
        if len(holding) == 2:
            return v.id
        v = protocol.nodes[holding[0]]
    raise InputError("not separated: the profiles share a terminal node")


# --- classification -----------------------------------------------------------


@dataclass(frozen=True)
class QueryClass:
    kind: str  # elicit | count | multicount | extensional
    agent: Optional[int] = None
    subsets: Optional[tuple[tuple[int, ...], ...]] = None
    cells: Optional[tuple] = None
    arity: Optional[int] = None
    cap_reached: bool = False


def _canonical_subsets(size: int) -> list[tuple[int, ...]]:
    """Nonempty proper subsets of range(size), one per complement pair."""
    out = []
    for bits in range(1, 1 << size):
        if bits == (1 << size) - 1:
            continue
        if not bits & 1:  # keep the representative containing element 0
            continue
        out.append(tuple(i for i in range(size) if bits >> i & 1))
    return out


def classify_query(protocol: Protocol, node_id: int, multicount_cap: int = 2) -> QueryClass:
    """Most specific query class the node's partition admits.

    Tries individual elicitation first, then a single count, then
    multi-counts of growing arity up to the cap; falls back to
    extensional.  Classification is a diagnostic: the stored descriptor
    may already be finer than what the partition reveals.
    """
    space = protocol.space
    node = protocol.nodes[node_id]
    if node.is_leaf:
        raise InputError(f"node {node_id} is a leaf")
    child_masks = [protocol.nodes[c].label for c in node.children]

    for agent in range(space.n):
        projections = [ProfileSet(space, m).projection(agent) for m in child_masks]
        flat = [t for pr in projections for t in pr]
        if len(flat) != len(set(flat)):
            continue
        if all(
            m == _types_mask(space, agent, pr, node.label)
            for m, pr in zip(child_masks, projections)
        ):
            return QueryClass("elicit", agent=agent, cells=tuple(projections))

    if space.common_alphabet:
        found = _match_counts(space, node.label, child_masks, arity=1)
        if found:
            subsets, cells = found
            return QueryClass("count", subsets=subsets, cells=cells, arity=1)
        cap_hit = False
        max_arity = min(multicount_cap, space.sizes[0])
        if (1 << space.sizes[0]) > 4096:
            cap_hit = True  # subset enumeration would be unreasonable
        else:
            for arity in range(2, max_arity + 1):
                found = _match_counts(space, node.label, child_masks, arity)
                if found:
                    subsets, cells = found
                    return QueryClass(
                        "multicount", subsets=subsets, cells=cells, arity=arity
                    )
            cap_hit = multicount_cap < space.sizes[0]
        return QueryClass("extensional", cap_reached=cap_hit)
    return QueryClass("extensional")


def _types_mask(space: TypeSpace, agent: int, types: tuple[int, ...], label: int) -> int:
    tset = set(types)
    out = 0
    mask = label
    while mask:
        low = mask & -mask
        k = low.bit_length() - 1
        if (k // space.strides[agent]) % space.sizes[agent] in tset:
            out |= low
        mask ^= low
    return out


def _match_counts(space: TypeSpace, label: int, child_masks: list[int], arity: int):
    indices = list(ProfileSet(space, label).indices())
    child_of = {}
    for c, m in enumerate(child_masks):
        for k in ProfileSet(space, m).indices():
            child_of[k] = c
    candidates = _canonical_subsets(space.sizes[0])
    for subs in itertools.combinations(candidates, arity):
        probe = (
            CountQuery(subs[0], ((0,), tuple(range(1, space.n + 1))))
            if arity == 1
            else MultiCountQuery(subs, _trivial_vector_cells(space, arity))
        )
        cell_values: dict[int, set] = {}
        ok = True
        for k in indices:
            v = probe.count(space, k) if arity == 1 else probe.vector(space, k)
            c = child_of[k]
            cell_values.setdefault(c, set()).add(v)
        seen: set = set()
        for values in cell_values.values():
            if values & seen:
                ok = False
                break
            seen |= values
        if ok:
            cells = tuple(
                tuple(sorted(cell_values.get(c, set())))
                for c in range(len(child_masks))
            )
            return subs, cells
    return None


def _trivial_vector_cells(space: TypeSpace, arity: int):
    domain = list(itertools.product(range(space.n + 1), repeat=arity))
    return (tuple(domain[:1]), tuple(domain[1:]))


# --- small constructors used across the package -------------------------------


def elicit_cells_from_subset(space: TypeSpace, agent: int, subset) -> ElicitQuery:
    """Binary elicitation query: is agent's type in ``subset``?"""
    subset = tuple(sorted(set(subset)))
    rest = tuple(t for t in range(space.sizes[agent]) if t not in subset)
    if not subset or not rest:
        raise InputError("binary elicitation needs a proper nonempty subset")
    return ElicitQuery(agent, (subset, rest))


def count_equals_query(space: TypeSpace, subset, value: int) -> CountQuery:
    """Binary count query: is |{i : type_i in subset}| equal to ``value``?"""
    others = tuple(c for c in range(space.n + 1) if c != value)
    return CountQuery(tuple(sorted(set(subset))), ((value,), others))
