from __future__ import annotations

import itertools

import pytest
from hypothesis import given, strategies as st

from cpv.core import InputError, ProfileSet, TypeSpace
from cpv.mechanisms import (
    descending_first_price,
    fair_tiebreak_2x2,
    fair_two_query_protocol,
)
from cpv.protocol import (
    CountQuery,
    ElicitQuery,
    ExtensionalQuery,
    MultiCountQuery,
    NodeSpec,
    ProtocolDefect,
    build_from_spec,
    build_protocol,
    classify_query,
    earliest_departure,
    implements,
    run_protocol,
    validate_protocol,
)

from corpus import corpus_seeds, random_implementing_protocol, random_rule


def fair():
    return fair_tiebreak_2x2()


def two_query():
    return fair_two_query_protocol(fair()).protocol


def one_query():
    """The first query alone: is agent 1's type A?"""
    inst = fair()
    spec = NodeSpec(
        ElicitQuery(0, ((0,), (1,))),
        (NodeSpec(), NodeSpec()),
    )
    return build_from_spec(inst.space, spec)


class TestValidation:
    def test_two_query_protocol_ok(self):
        report = validate_protocol(two_query())
        assert report.ok

    def test_overlapping_extensional_cells(self):
        inst = fair()
        aa = [["A", "A"]]
        cells = (
            ProfileSet.from_profiles(inst.space, [(0, 0), (0, 1)]).mask,
            ProfileSet.from_profiles(inst.space, [(0, 0), (1, 0), (1, 1)]).mask,
        )
        spec = NodeSpec(ExtensionalQuery(cells), (NodeSpec(), NodeSpec()))
        with pytest.raises(ProtocolDefect, match="overlap"):
            build_from_spec(inst.space, spec)

    def test_nonexhaustive_extensional_cells(self):
        inst = fair()
        cells = (
            ProfileSet.from_profiles(inst.space, [(0, 0), (0, 1)]).mask,
            ProfileSet.from_profiles(inst.space, [(1, 0)]).mask,
        )
        spec = NodeSpec(ExtensionalQuery(cells), (NodeSpec(), NodeSpec()))
        with pytest.raises(ProtocolDefect, match="non-exhaustive"):
            build_from_spec(inst.space, spec)

    def test_empty_cells_pruned_and_recorded(self):
        space = TypeSpace.shared(2, ("A", "B"))
        universe = ProfileSet.from_profiles(space, [(0, 0), (0, 1)])
        spec = NodeSpec(
            ElicitQuery(1, ((0,), (1,))),
            (NodeSpec(), NodeSpec()),
        )
        outer = NodeSpec(
            ElicitQuery(0, ((0,), (1,))),
            (spec, None),
        )
        protocol = build_from_spec(space, outer, universe)
        assert any("pruned" in note or "contracted" in note for note in protocol.notes)

    def test_partition_invariants_by_popcount(self):
        protocol = two_query()
        for node in protocol.nodes:
            if node.is_leaf:
                continue
            total = sum(protocol.nodes[c].label.bit_count() for c in node.children)
            assert total == node.label.bit_count()


class TestRun:
    def test_fig_profile_walk(self):
        inst = fair()
        t = run_protocol(two_query(), (1, 0), inst.rule)
        assert [s.answer for s in t.steps] == [1, 0]
        assert list(t.leaf_label.profiles()) == [(1, 0)]
        assert t.outcome == "1:B,2:A"

    def test_descending_trace(self):
        bundle = descending_first_price(2, [1, 2, 3])
        space = bundle.instance.space
        t = run_protocol(bundle.protocol, space.profile_of_labels(["2", "3"]), bundle.instance.rule)
        # agent 1 "is 3?" no, agent 2 "is 3?" yes
        assert [s.answer for s in t.steps] == [1, 0]
        assert t.outcome == "winner=2,price=3"

    def test_single_node_protocol(self):
        space = TypeSpace.shared(2, ("A", "B"))
        protocol = build_from_spec(space, NodeSpec())
        t = run_protocol(protocol, (1, 1))
        assert t.steps == ()
        assert t.leaf == 0

    def test_nonimplementing_rule_raises(self):
        inst = fair()
        with pytest.raises(InputError, match="does not implement"):
            run_protocol(one_query(), (1, 0), inst.rule)


class TestImplements:
    def test_two_query_implements(self):
        assert implements(two_query(), fair().rule).ok

    def test_truncated_counterexample_leaf(self):
        inst = fair()
        res = implements(one_query(), inst.rule)
        assert not res.ok
        leaf_profiles = set((1, 0) for _ in [0])
        assert set(res.profiles) == {(1, 0), (1, 1)}

    def test_root_only_constant_rule(self):
        space = TypeSpace.shared(2, ("A", "B"))
        from cpv.core import ChoiceRule

        rule = ChoiceRule(space, ("x",), (0, 0, 0, 0))
        protocol = build_from_spec(space, NodeSpec())
        assert implements(protocol, rule).ok

    @given(st.sampled_from(corpus_seeds(25)))
    def test_leaf_partition_refines_fibers(self, seed):
        rule = random_rule(seed)
        protocol = random_implementing_protocol(rule, seed + 1)
        assert implements(protocol, rule).ok
        # every profile lands in a leaf where the rule is constant
        leaf_of = protocol.leaf_map()
        assert sorted(leaf_of) == list(range(rule.space.total))


class TestEarliestDeparture:
    def test_at_root(self):
        assert earliest_departure(two_query(), (0, 0), (1, 0)) == 0

    def test_at_second_query(self):
        protocol = two_query()
        v = earliest_departure(protocol, (1, 0), (1, 1))
        assert protocol.nodes[v].depth == 1

    def test_not_separated(self):
        with pytest.raises(InputError, match="not separated"):
            earliest_departure(one_query(), (0, 0), (0, 1))


class TestClassify:
    def test_elicit_round_trip(self):
        protocol = two_query()
        got = classify_query(protocol, 0)
        assert got.kind == "elicit" and got.agent == 0

    def test_count_from_extensional(self):
        # independent oracle: brute-force all subsets and count partitions
        space = TypeSpace.shared(2, ("A", "B"))
        cells = (
            ProfileSet.from_profiles(space, [(0, 0), (1, 1)]).mask,
            ProfileSet.from_profiles(space, [(0, 1), (1, 0)]).mask,
        )
        spec = NodeSpec(ExtensionalQuery(cells), (NodeSpec(), NodeSpec()))
        protocol = build_from_spec(space, spec)

        def brute_force_count_match():
            for bits in range(1, 1 << 2):
                subset = {t for t in range(2) if bits >> t & 1}
                groups = {}
                for p in itertools.product(range(2), repeat=2):
                    c = sum(1 for t in p if t in subset)
                    groups.setdefault(c, set()).add(p)
                fibers = set(frozenset(g) for g in groups.values())
                want = {frozenset({(0, 0), (1, 1)}), frozenset({(0, 1), (1, 0)})}
                union_ok = all(
                    any(f <= w for w in want) for f in fibers
                )
                if union_ok:
                    return sorted(subset)
            return None

        assert brute_force_count_match() == [0]  # subset {A} works
        got = classify_query(protocol, 0)
        assert got.kind == "count"
        assert got.subsets == ((0,),)
        assert set(got.cells) == {(0, 2), (1,)}

    def test_multicount_classification(self):
        space = TypeSpace.shared(2, ("A", "B", "C"))
        vectors = list(itertools.product(range(3), repeat=2))
        probe = MultiCountQuery(
            ((0,), (1,)),
            (tuple(v for v in vectors if v == (1, 1)), tuple(v for v in vectors if v != (1, 1))),
        )
        spec = NodeSpec(probe, (NodeSpec(), NodeSpec()))
        protocol = build_from_spec(space, spec)
        got = classify_query(protocol, 0)
        # a single-subset count cannot express this split, two can
        assert got.kind == "multicount" and got.arity == 2


class TestQueryValidation:
    def test_count_needs_common_alphabet(self):
        space = TypeSpace((("a", "b"), ("x", "y")))
        q = CountQuery((0,), ((0,), (1, 2)))
        with pytest.raises(ProtocolDefect, match="common alphabet"):
            q.validate(space)

    def test_degenerate_spec_contracted(self):
        space = TypeSpace.shared(1, ("A", "B"))
        spec = NodeSpec(ElicitQuery(0, ((0,), (1,))), (NodeSpec(), NodeSpec()))
        protocol = build_from_spec(space, spec)
        assert len(protocol.leaves()) == 2
