"""Tests for activity-variant combinatorics against a subset-enumeration oracle."""

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from indoorloc.activity import (
    AtomicUnit,
    UnitKind,
    count_all_ways,
    count_goal_reaching,
    count_never_reaching,
    derive_profile,
    load_units,
)


def enumerate_subsets(eta):
    """All subsets of an eta-element ground set, as tuples."""
    items = range(eta)
    for r in range(eta + 1):
        yield from itertools.combinations(items, r)


def oracle_all_ways(eta):
    return sum(1 for _ in enumerate_subsets(eta))


def oracle_goal_reaching(eta, q):
    core = set(range(q))
    return sum(1 for s in enumerate_subsets(eta) if core <= set(s))


def oracle_never_reaching(eta, q):
    core = set(range(q))
    return sum(1 for s in enumerate_subsets(eta) if not core <= set(s))


def atomic_units(weights, kind=UnitKind.ATOMIC_ACTIVITY):
    return [
        AtomicUnit(label=f"u{i}", weight=w, sequence_index=i, kind=kind)
        for i, w in enumerate(weights)
    ]


class TestCounts:
    def test_all_ways_reference_values(self):
        assert count_all_ways(6) == 64
        assert count_all_ways(0) == 1
        assert count_all_ways(10) == oracle_all_ways(10) == 1024

    def test_goal_reaching_reference_values(self):
        assert count_goal_reaching(6, 4) == 4
        assert count_goal_reaching(5, 0) == 32 == count_all_ways(5)
        assert count_goal_reaching(8, 3) == oracle_goal_reaching(8, 3) == 32

    def test_never_reaching_reference_values(self):
        assert count_never_reaching(6, 4) == 60
        assert count_never_reaching(7, 0) == 0
        assert count_never_reaching(8, 3) == oracle_never_reaching(8, 3) == 224

    def test_matches_enumeration_up_to_eta_12(self):
        for eta in range(13):
            assert count_all_ways(eta) == oracle_all_ways(eta)
            for q in range(eta + 1):
                assert count_goal_reaching(eta, q) == oracle_goal_reaching(eta, q)
                assert count_never_reaching(eta, q) == oracle_never_reaching(eta, q)

    def test_eta_bounds(self):
        assert count_all_ways(62) == 2**62
        with pytest.raises(OverflowError):
            count_all_ways(63)
        with pytest.raises(ValueError):
            count_all_ways(-1)
        with pytest.raises(OverflowError):
            count_goal_reaching(63, 2)

    def test_q_exceeding_eta_rejected(self):
        with pytest.raises(ValueError):
            count_goal_reaching(3, 4)
        with pytest.raises(ValueError):
            count_never_reaching(3, 4)

    @given(st.integers(0, 62), st.data())
    def test_closed_forms_and_partition_law(self, eta, data):
        q = data.draw(st.integers(0, eta))
        zeta = count_all_ways(eta)
        theta = count_goal_reaching(eta, q)
        psi = count_never_reaching(eta, q)
        assert zeta == theta + psi
        assert psi == (2 ** (eta - q)) * (2**q - 1)


class TestDeriveProfile:
    # Weighted six-step lunch activity; two-step start/end boundaries, core
    # selected at weight >= 0.20 (ties included).
    LUNCH_ATOMIC_WEIGHTS = [0.08, 0.20, 0.25, 0.20, 0.08, 0.19]
    LUNCH_CONTEXT_WEIGHTS = [0.08, 0.20, 0.25, 0.20, 0.08, 0.19]

    def lunch_profile(self):
        return derive_profile(
            atomic=atomic_units(self.LUNCH_ATOMIC_WEIGHTS),
            context=atomic_units(
                self.LUNCH_CONTEXT_WEIGHTS, kind=UnitKind.CONTEXT_ATTRIBUTE
            ),
            core_weight_threshold=0.20,
            boundary_width=2,
        )

    def test_lunch_sets(self):
        profile = self.lunch_profile()
        assert profile.core_atomic == {1, 2, 3}
        assert profile.core_context == {1, 2, 3}
        assert profile.start_atomic == {0, 1}
        assert profile.end_atomic == {4, 5}
        assert profile.start_context == {0, 1}
        assert profile.end_context == {4, 5}

    def test_lunch_counts_match_enumeration(self):
        # A 3-element core among 6 steps leaves 2**3 goal-reaching subsets.
        profile = self.lunch_profile()
        assert profile.zeta == oracle_all_ways(6) == 64
        assert profile.theta == oracle_goal_reaching(6, 3) == 8
        assert profile.psi == oracle_never_reaching(6, 3) == 56

    def test_single_unit_activity(self):
        unit = atomic_units([1.0])
        ctx = atomic_units([1.0], kind=UnitKind.CONTEXT_ATTRIBUTE)
        profile = derive_profile(unit, ctx, core_weight_threshold=0.5, boundary_width=1)
        assert profile.core_atomic == profile.start_atomic == profile.end_atomic == {0}
        assert (profile.zeta, profile.theta, profile.psi) == (2, 1, 1)

    def test_empty_core_when_all_below_threshold(self):
        units = atomic_units([0.1, 0.1, 0.1, 0.1])
        ctx = atomic_units([0.1, 0.1, 0.1, 0.1], kind=UnitKind.CONTEXT_ATTRIBUTE)
        profile = derive_profile(units, ctx, core_weight_threshold=0.2, boundary_width=2)
        assert profile.core_atomic == frozenset()
        assert profile.theta == profile.zeta == oracle_all_ways(4) == 16
        assert profile.psi == 0

    def test_partition_law_holds(self):
        profile = self.lunch_profile()
        assert profile.zeta == profile.theta + profile.psi

    def test_deterministic(self):
        assert self.lunch_profile() == self.lunch_profile()

    def test_invalid_arguments(self):
        units = atomic_units([0.5])
        ctx = atomic_units([0.5], kind=UnitKind.CONTEXT_ATTRIBUTE)
        with pytest.raises(ValueError):
            derive_profile([], ctx, 0.5, 1)
        with pytest.raises(ValueError):
            derive_profile(units, [], 0.5, 1)
        with pytest.raises(ValueError):
            derive_profile(units, ctx, 1.5, 1)
        with pytest.raises(ValueError):
            derive_profile(units, ctx, 0.5, 2)
        with pytest.raises(ValueError):
            derive_profile(units, ctx, 0.5, 0)

    def test_duplicate_sequence_index_rejected(self):
        dup = [
            AtomicUnit("a", 0.5, 0, UnitKind.ATOMIC_ACTIVITY),
            AtomicUnit("b", 0.5, 0, UnitKind.ATOMIC_ACTIVITY),
        ]
        ctx = atomic_units([0.5], kind=UnitKind.CONTEXT_ATTRIBUTE)
        with pytest.raises(ValueError, match="duplicate sequence_index"):
            derive_profile(dup, ctx, 0.5, 1)

    @given(
        st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=10),
        st.floats(0.0, 1.0, allow_nan=False),
    )
    @settings(max_examples=100)
    def test_counts_always_match_enumeration(self, weights, threshold):
        units = atomic_units(weights)
        ctx = atomic_units(weights, kind=UnitKind.CONTEXT_ATTRIBUTE)
        profile = derive_profile(units, ctx, threshold, boundary_width=1)
        eta = len(weights)
        core = {i for i, w in enumerate(weights) if w >= threshold}
        reaching = sum(1 for s in enumerate_subsets(eta) if core <= set(s))
        assert profile.zeta == oracle_all_ways(eta)
        assert profile.theta == reaching
        assert profile.psi == profile.zeta - reaching


class TestLoadUnits:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "units.csv"
        path.write_text(
            "kind,label,weight,sequence_index\n"
            "atomic_activity,standing,0.08,0\n"
            "atomic_activity,walking to table,0.20,1\n"
            "context_attribute,lights on,0.08,0\n"
        )
        atomic, context = load_units(path)
        assert [u.label for u in atomic] == ["standing", "walking to table"]
        assert [u.weight for u in atomic] == [0.08, 0.20]
        assert len(context) == 1
        assert context[0].kind is UnitKind.CONTEXT_ATTRIBUTE

    def test_bad_header(self, tmp_path):
        path = tmp_path / "units.csv"
        path.write_text("kind,label,wt,sequence_index\n")
        with pytest.raises(ValueError, match="expected header"):
            load_units(path)

    def test_bad_kind_and_weight(self, tmp_path):
        path = tmp_path / "units.csv"
        path.write_text(
            "kind,label,weight,sequence_index\nmystery,step,0.5,0\n"
        )
        with pytest.raises(ValueError, match="unknown unit kind"):
            load_units(path)
        path.write_text(
            "kind,label,weight,sequence_index\natomic_activity,step,1.5,0\n"
        )
        with pytest.raises(ValueError, match="weight"):
            load_units(path)
