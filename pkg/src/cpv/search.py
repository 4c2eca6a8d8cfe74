"""Exhaustive oracles over protocol space for tiny instances.

The searches decide implementability exactly: a state (reachable profile
set) is winnable iff the rule is constant on it or some admissible query
splits it into winnable children.  Contextual privacy is enforced
incrementally: a query is admissible only if it separates no equal-outcome
unilateral pair inside the state, which is equivalent to privacy of the
finished protocol (the earliest point of departure of any violating pair
contains both profiles).

Count queries here answer with the exact count: a query for a type subset
splits a state into its count fibers.  Coarser groupings of counts are
expressible at the protocol level but are deliberately not enumerated;
the search result is labeled with the family it decided.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from cpv.core import ChoiceRule, InputError, ProfileSet, TypeSpace
from cpv.mechanisms import DomainModel, outcome_rank_fn
from cpv.privacy import check_protocol_cp
from cpv.protocol import (
    CountQuery,
    ElicitQuery,
    MultiCountQuery,
    Protocol,
    Query,
    build_protocol,
    implements,
)


@dataclass(frozen=True)
class QueryFamily:
    allow_elicit: bool = True
    allow_count: bool = False
    multicount_arity: int = 0  # 0 disables multi-count queries
    max_cells: int | None = None  # cap on children per query

    def __post_init__(self) -> None:
        if not (self.allow_elicit or self.allow_count or self.multicount_arity):
            raise InputError("at least one query family must be enabled")

    @classmethod
    def parse(cls, spec: str) -> QueryFamily:
        names = [s.strip() for s in spec.split(",") if s.strip()]
        allowed = {"elicit", "count", "multicount"}
        for name in names:
            if name not in allowed:
                raise InputError(f"unknown query family {name!r}")
        return cls(
            allow_elicit="elicit" in names,
            allow_count="count" in names,
            multicount_arity=2 if "multicount" in names else 0,
        )


@dataclass(frozen=True)
class SearchBudget:
    max_states: int = 100_000
    max_depth: int | None = None
    max_seconds: float | None = None

    def __post_init__(self) -> None:
        if self.max_states < 1 or (self.max_depth is not None and self.max_depth < 1):
            raise InputError("budget bounds must be positive")
        if self.max_seconds is not None and self.max_seconds <= 0:
            raise InputError("budget bounds must be positive")

    def deadline(self) -> float | None:
        if self.max_seconds is None:
            return None
        return time.monotonic() + self.max_seconds


@dataclass(frozen=True)
class SearchResult:
    status: str  # found | nonexistent | budget_exhausted
    protocol: Optional[Protocol] = None
    states: int = 0

    @property
    def found(self) -> bool:
        return self.status == "found"


class _BudgetExhausted(Exception):
    pass


# ---------------------------------------------------------------------------
# candidate queries


@dataclass(frozen=True)
class _Candidate:
    query: Query
    cell_masks: tuple[int, ...]  # nonempty cells on the state


def _canonical_subsets(values: tuple[int, ...]):
    """Nonempty proper subsets of ``values``, one per complement pair."""
    rest = values[1:]
    anchor = values[0]
    for r in range(len(rest) + 1):
        for combo in itertools.combinations(rest, r):
            subset = (anchor,) + combo
            if len(subset) < len(values):
                yield subset


def _elicit_candidates(space: TypeSpace, state: int):
    for agent in range(space.n):
        present = ProfileSet(space, state).projection(agent)
        if len(present) < 2:
            continue
        for subset in _canonical_subsets(present):
            rest = tuple(t for t in range(space.sizes[agent]) if t not in subset)
            query = ElicitQuery(agent, (subset, rest))
            masks = _split(space, state, lambda k, q=query: q.cell_of(space, k))
            if len(masks) >= 2:
                yield _Candidate(query, masks)


def _count_candidates(space: TypeSpace, state: int):
    if not space.common_alphabet:
        return
    singleton_cells = tuple((c,) for c in range(space.n + 1))
    for subset in _canonical_subsets(tuple(range(space.sizes[0]))):
        query = CountQuery(subset, singleton_cells)
        masks = _split(space, state, lambda k, q=query: q.count(space, k))
        if len(masks) >= 2:
            yield _Candidate(query, masks)


def _multicount_candidates(space: TypeSpace, state: int, arity: int):
    if not space.common_alphabet:
        return
    domain = tuple(itertools.product(range(space.n + 1), repeat=arity))
    cells = tuple((v,) for v in domain)
    subsets = list(_canonical_subsets(tuple(range(space.sizes[0]))))
    for combo in itertools.combinations(subsets, arity):
        query = MultiCountQuery(combo, cells)
        masks = _split(space, state, lambda k, q=query: q.vector(space, k))
        if len(masks) >= 2:
            yield _Candidate(query, masks)


def _split(space: TypeSpace, state: int, key: Callable[[int], object]) -> tuple[int, ...]:
    groups: dict = {}
    mask = state
    while mask:
        low = mask & -mask
        k = low.bit_length() - 1
        groups.setdefault(key(k), 0)
        groups[key(k)] |= low
        mask ^= low
    return tuple(groups[g] for g in sorted(groups))


def _candidates(
    space: TypeSpace, state: int, family: QueryFamily, per_kind: bool = False
):
    """Deterministic, deduplicated stream of candidate splits of a state.

    Search dedupes by the induced partition alone (identical children give
    identical subtrees); scans that must report every query kind dedupe
    per kind instead.
    """
    seen: set = set()
    streams = []
    if family.allow_elicit:
        streams.append(_elicit_candidates(space, state))
    if family.allow_count:
        streams.append(_count_candidates(space, state))
    for arity in range(2, family.multicount_arity + 1):
        streams.append(_multicount_candidates(space, state, arity))
    for cand in itertools.chain(*streams):
        if family.max_cells is not None and len(cand.cell_masks) > family.max_cells:
            continue
        signature = frozenset(cand.cell_masks)
        if per_kind:
            signature = (type(cand.query).__name__, signature)
        if signature in seen:
            continue
        seen.add(signature)
        yield cand


# ---------------------------------------------------------------------------
# contextually private implementation search


def _same_outcome_pairs(rule: ChoiceRule, universe: int) -> list[tuple[int, int]]:
    space = rule.space
    pairs = []
    for k in range(space.total):
        if not (universe >> k) & 1:
            continue
        profile = space.profile(k)
        for i in range(space.n):
            stride = space.strides[i]
            for t2 in range(profile[i] + 1, space.sizes[i]):
                k2 = k + (t2 - profile[i]) * stride
                if (universe >> k2) & 1 and rule.table[k] == rule.table[k2]:
                    pairs.append((k, k2))
    return pairs


def _separates_protected_pair(cand: _Candidate, pairs: list[tuple[int, int]], state: int):
    for a, b in pairs:
        if not ((state >> a) & 1 and (state >> b) & 1):
            continue
        for m in cand.cell_masks:
            in_a, in_b = (m >> a) & 1, (m >> b) & 1
            if in_a != in_b:
                return (a, b)
            if in_a:
                break
    return None


def exhaustive_cp_search(
    rule: ChoiceRule,
    family: QueryFamily,
    budget: SearchBudget = SearchBudget(),
    universe: ProfileSet | None = None,
    memoize: bool = True,
) -> SearchResult:
    """Decide whether a contextually private protocol exists for the rule
    over the given query family; three-valued, never silently wrong."""
    space = rule.space
    root = (1 << space.total) - 1 if universe is None else universe.mask
    if not root:
        raise InputError("universe is empty")
    pairs = _same_outcome_pairs(rule, root)
    memo: dict[int, Optional[_Candidate]] = {}
    states_seen = 0
    deadline = budget.deadline()

    def constant(state: int) -> bool:
        seen = -1
        mask = state
        while mask:
            low = mask & -mask
            x = rule.table[low.bit_length() - 1]
            if seen == -1:
                seen = x
            elif x != seen:
                return False
            mask ^= low
        return True

    def winnable(state: int, depth: int) -> bool:
        nonlocal states_seen
        if memoize and state in memo:
            return memo[state] is not None or constant(state)
        states_seen += 1
        if states_seen > budget.max_states:
            raise _BudgetExhausted
        if deadline is not None and time.monotonic() > deadline:
            raise _BudgetExhausted
        if constant(state):
            if memoize:
                memo[state] = None
            return True
        if budget.max_depth is not None and depth >= budget.max_depth:
            raise _BudgetExhausted
        for cand in _candidates(space, state, family):
            if _separates_protected_pair(cand, pairs, state) is not None:
                continue
            if all(winnable(m, depth + 1) for m in cand.cell_masks):
                if memoize:
                    memo[state] = cand
                return True
        if memoize:
            memo[state] = None
        return False

    try:
        ok = winnable(root, 0)
    except _BudgetExhausted:
        return SearchResult("budget_exhausted", states=states_seen)
    if not ok:
        return SearchResult("nonexistent", states=states_seen)

    choices: dict[int, _Candidate] = {}

    def chosen(state: int) -> Optional[_Candidate]:
        if constant(state):
            return None
        if memoize and memo.get(state) is not None:
            return memo[state]
        if state in choices:
            return choices[state]
        for cand in _candidates(space, state, family):
            if _separates_protected_pair(cand, pairs, state) is not None:
                continue
            if all(winnable(m, 0) for m in cand.cell_masks):
                choices[state] = cand
                return cand
        raise AssertionError("winnable state lost its winning query")

    def step(label: int, _state):
        cand = chosen(label)
        if cand is None:
            return None
        return cand.query, lambda c, m: None

    protocol = build_protocol(space, step, None, ProfileSet(space, root))
    assert implements(protocol, rule)
    assert check_protocol_cp(protocol, rule).holds
    return SearchResult("found", protocol, states_seen)


# ---------------------------------------------------------------------------
# obviously strategyproof implementation search


def _set_partitions(items: tuple[int, ...]):
    """All partitions of ``items`` into at least two blocks."""
    if len(items) < 2:
        return
    first, rest = items[0], items[1:]
    for blocks in _all_partitions(rest):
        yield ((first,),) + blocks
        for i in range(len(blocks)):
            grown = tuple(
                ((first,) + blocks[j] if j == i else blocks[j])
                for j in range(len(blocks))
            )
            if len(grown) >= 2:
                yield grown


def _all_partitions(items: tuple[int, ...]):
    if not items:
        yield ()
        return
    first, rest = items[0], items[1:]
    for blocks in _all_partitions(rest):
        yield ((first,),) + blocks
        for i in range(len(blocks)):
            yield tuple(
                ((first,) + blocks[j] if j == i else blocks[j])
                for j in range(len(blocks))
            )


def _osp_node_ok(
    space: TypeSpace,
    rule: ChoiceRule,
    rank: Callable,
    state: int,
    agent: int,
    blocks: tuple[tuple[int, ...], ...],
    cell_masks: tuple[int, ...],
) -> bool:
    stride, size = space.strides[agent], space.sizes[agent]
    for pos, block in enumerate(blocks):
        for true_t in block:
            worst = None
            for k in ProfileSet(space, cell_masks[pos]).indices():
                if (k // stride) % size != true_t:
                    continue
                r = rank(agent, true_t, rule.table[k])
                if worst is None or r > worst:
                    worst = r
            if worst is None:
                continue
            for other in range(len(blocks)):
                if other == pos:
                    continue
                for k in ProfileSet(space, cell_masks[other]).indices():
                    if rank(agent, true_t, rule.table[k]) < worst:
                        return False
    return True


def exhaustive_osp_search(
    rule: ChoiceRule,
    model: DomainModel,
    budget: SearchBudget = SearchBudget(),
    universe: ProfileSet | None = None,
) -> SearchResult:
    """Decide whether an obviously strategyproof elicitation protocol
    implements the rule.  The node criterion depends only on the current
    state, so memoization over states is exact."""
    from cpv.mechanisms import check_protocol_osp  # cycle-free at runtime

    space = rule.space
    rank = outcome_rank_fn(rule, model)
    root = (1 << space.total) - 1 if universe is None else universe.mask
    memo: dict[int, Optional[_Candidate]] = {}
    states_seen = 0
    deadline = budget.deadline()

    def constant(state: int) -> bool:
        outs = {rule.table[k] for k in ProfileSet(space, state).indices()}
        return len(outs) <= 1

    def node_candidates(state: int):
        seen: set[frozenset[int]] = set()
        for agent in range(space.n):
            present = ProfileSet(space, state).projection(agent)
            if len(present) < 2:
                continue
            for blocks in _set_partitions(present):
                blocks = tuple(tuple(sorted(b)) for b in blocks)
                cells = []
                leftovers = tuple(
                    t for t in range(space.sizes[agent]) if t not in present
                )
                for i, b in enumerate(blocks):
                    cells.append(b + leftovers if i == 0 else b)
                query = ElicitQuery(agent, tuple(tuple(sorted(c)) for c in cells))
                masks = tuple(
                    m
                    for m in (
                        _types_mask(space, agent, set(c), state) for c in cells
                    )
                    if m
                )
                signature = frozenset(masks)
                if len(masks) < 2 or signature in seen:
                    continue
                seen.add(signature)
                if _osp_node_ok(space, rule, rank, state, agent, blocks, masks):
                    yield _Candidate(query, masks)

    def winnable(state: int, depth: int) -> bool:
        nonlocal states_seen
        if state in memo:
            return memo[state] is not None or constant(state)
        states_seen += 1
        if states_seen > budget.max_states:
            raise _BudgetExhausted
        if deadline is not None and time.monotonic() > deadline:
            raise _BudgetExhausted
        if constant(state):
            memo[state] = None
            return True
        if budget.max_depth is not None and depth >= budget.max_depth:
            raise _BudgetExhausted
        for cand in node_candidates(state):
            if all(winnable(m, depth + 1) for m in cand.cell_masks):
                memo[state] = cand
                return True
        memo[state] = None
        return False

    try:
        ok = winnable(root, 0)
    except _BudgetExhausted:
        return SearchResult("budget_exhausted", states=states_seen)
    if not ok:
        return SearchResult("nonexistent", states=states_seen)

    def step(label: int, _state):
        if constant(label):
            return None
        cand = memo[label]
        assert cand is not None
        return cand.query, lambda c, m: None

    protocol = build_protocol(space, step, None, ProfileSet(space, root))
    assert implements(protocol, rule)
    assert check_protocol_osp(protocol, rule, model).ok
    return SearchResult("found", protocol, states_seen)


def _types_mask(space: TypeSpace, agent: int, types: set[int], label: int) -> int:
    out = 0
    mask = label
    stride, size = space.strides[agent], space.sizes[agent]
    while mask:
        low = mask & -mask
        k = low.bit_length() - 1
        if (k // stride) % size in types:
            out |= low
        mask ^= low
    return out


# ---------------------------------------------------------------------------
# obstruction scan


@dataclass(frozen=True)
class ObstructionEntry:
    kind: str  # elicit | count | multicount
    detail: str
    partition: tuple[tuple[int, ...], ...]  # profile indices of the scanned set
    violation: Optional[tuple[int, int]]  # separated equal-outcome unilateral pair

    @property
    def safe(self) -> bool:
        return self.violation is None


@dataclass(frozen=True)
class ObstructionReport:
    entries: tuple[ObstructionEntry, ...]
    nonconstant: bool

    @property
    def holds(self) -> bool:
        """True when the set genuinely obstructs: the rule must be computed
        on it, yet every query separating any of its members leaks."""
        return self.nonconstant and all(not e.safe for e in self.entries)


def obstruction_scan(
    rule: ChoiceRule, region: ProfileSet, family: QueryFamily
) -> ObstructionReport:
    """Enumerate every family query that separates members of ``region``
    and return, per query, an equal-outcome unilateral pair it separates
    (or mark it safe)."""
    space = rule.space
    state = region.mask
    pairs = _same_outcome_pairs(rule, state)
    entries = []
    for cand in _candidates(space, state, family, per_kind=True):
        violation = _separates_protected_pair(cand, pairs, state)
        partition = tuple(
            tuple(ProfileSet(space, m).indices()) for m in cand.cell_masks
        )
        if isinstance(cand.query, ElicitQuery):
            kind, detail = "elicit", f"agent {cand.query.agent + 1}"
        elif isinstance(cand.query, CountQuery):
            labels = ",".join(space.alphabets[0][t] for t in cand.query.subset)
            kind, detail = "count", "{" + labels + "}"
        else:
            kind, detail = "multicount", f"l={len(cand.query.subsets)}"
        entries.append(ObstructionEntry(kind, detail, partition, violation))
    outs = {rule.table[k] for k in region.indices()}
    return ObstructionReport(tuple(entries), len(outs) > 1)
