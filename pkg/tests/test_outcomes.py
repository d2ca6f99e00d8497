import itertools

import numpy as np
import pytest

from mechlearn import (
    CapacityError,
    GridSpec,
    UsageError,
    ValuationModel,
    bidder_value,
    check_weakly_downward_closed,
    enumerate_multi_item,
    single_parameter_space,
)
from mechlearn.outcomes import OutcomeSpace, grid_type_indices


class TestEnumeration:
    def test_smallest_case(self):
        space = enumerate_multi_item(1, 1)
        assert space.num_outcomes == 2
        assert np.array_equal(space.alloc[0], [[0.0]])
        assert np.array_equal(space.alloc[1], [[1.0]])

    def test_two_by_two_count_matches_brute_force(self):
        # oracle: count assignments of each item to {nobody, 1, 2} directly
        combos = [
            c
            for c in itertools.product(range(3), repeat=2)
        ]
        assert len(combos) == 9
        assert enumerate_multi_item(2, 2).num_outcomes == 9

    def test_per_item_feasibility(self):
        space = enumerate_multi_item(3, 2)
        sums = space.alloc.sum(axis=1)  # (K, m)
        assert sums.max() <= 1.0

    def test_enumeration_bijection(self):
        space = enumerate_multi_item(2, 3)
        seen = {space.alloc[o].tobytes() for o in range(space.num_outcomes)}
        assert len(seen) == space.num_outcomes

    def test_budget_guard(self):
        with pytest.raises(CapacityError, match="10000000"):
            enumerate_multi_item(9, 7)


class TestValues:
    def test_additive_sum(self):
        space = enumerate_multi_item(1, 2)
        model = ValuationModel(tag="additive")
        both = space.num_outcomes - 1
        assert bidder_value(model, space, 0, [1.0, 2.0], both) == 3.0

    def test_empty_allocation_is_worthless(self):
        space = enumerate_multi_item(2, 2)
        model = ValuationModel(tag="additive")
        assert bidder_value(model, space, 0, [5.0, 7.0], 0) == 0.0

    def test_dimension_mismatch(self):
        space = enumerate_multi_item(1, 2)
        model = ValuationModel(tag="additive")
        with pytest.raises(UsageError):
            bidder_value(model, space, 0, [1.0], 1)

    def test_paired_complements_needs_partner(self):
        space = enumerate_multi_item(1, 2)
        model = ValuationModel(tag="paired_complements")
        only_first = None
        both = None
        for o in range(space.num_outcomes):
            row = space.alloc[o, 0]
            if row[0] == 1.0 and row[1] == 0.0:
                only_first = o
            if row[0] == 1.0 and row[1] == 1.0:
                both = o
        assert bidder_value(model, space, 0, [5.0, 0.0], only_first) == 0.0
        assert bidder_value(model, space, 0, [5.0, 0.0], both) == 5.0

    def test_unit_demand_takes_best(self):
        space = enumerate_multi_item(1, 2)
        model = ValuationModel(tag="unit_demand")
        both = space.num_outcomes - 1
        assert bidder_value(model, space, 0, [1.0, 2.0], both) == 2.0

    def test_additive_up_to_k(self):
        space = enumerate_multi_item(1, 2)
        model = ValuationModel(tag="additive_up_to_k", cap=1)
        both = space.num_outcomes - 1
        assert bidder_value(model, space, 0, [1.0, 2.0], both) == 2.0

    def test_monotone_in_parameters_additive(self):
        space = enumerate_multi_item(2, 2)
        model = ValuationModel(tag="additive")
        rng = np.random.default_rng(0)
        for _ in range(200):
            v = rng.uniform(0, 2, size=2)
            o = int(rng.integers(space.num_outcomes))
            j = int(rng.integers(2))
            up = v.copy()
            up[j] += rng.uniform(0, 0.5)
            assert bidder_value(model, space, 0, up, o) >= bidder_value(
                model, space, 0, v, o
            )

    @pytest.mark.parametrize(
        "tag,kwargs",
        [
            ("additive", {}),
            ("unit_demand", {}),
            ("additive_up_to_k", {"cap": 1}),
            ("paired_complements", {}),
        ],
    )
    def test_lipschitz_audit(self, tag, kwargs):
        space = enumerate_multi_item(2, 2)
        model = ValuationModel(tag=tag, **kwargs)
        rng = np.random.default_rng(7)
        h, eps = 2.0, 0.25
        for _ in range(2500):
            v = rng.uniform(0, h, size=2)
            j = int(rng.integers(2))
            delta = rng.uniform(0, eps)
            o = int(rng.integers(space.num_outcomes))
            i = int(rng.integers(2))
            shifted = v.copy()
            shifted[j] = min(shifted[j] + delta, h)
            a = bidder_value(model, space, i, v, o)
            b = bidder_value(model, space, i, shifted, o)
            assert abs(b - a) <= model.lipschitz_l * (shifted[j] - v[j]) + 1e-12
            assert 0.0 <= a <= space.m * model.lipschitz_l * h

    def test_custom_table_round_trip_and_audit(self):
        spec = GridSpec(epsilon=0.5, h=1.0)
        space = enumerate_multi_item(1, 1)
        types = grid_type_indices(spec, 1)
        table = (types * spec.epsilon) @ space.alloc[:, 0, :].T  # additive clone
        model = ValuationModel(tag="custom", table=table, table_spec=spec)
        model.audit_custom_table(space)
        assert bidder_value(model, space, 0, [0.5], 1) == 0.5

    def test_custom_table_audit_rejects_violation(self):
        spec = GridSpec(epsilon=0.5, h=1.0)
        space = enumerate_multi_item(1, 1)
        table = np.array([[0.0, 0.0], [0.0, 0.9], [0.0, 1.0]])  # jump 0.9 > L*eps
        model = ValuationModel(tag="custom", table=table, table_spec=spec)
        with pytest.raises(UsageError, match="Lipschitz"):
            model.audit_custom_table(space)


class TestWeakDownwardClosure:
    def test_multi_item_additive_closed_with_row_witness(self):
        spec = GridSpec(epsilon=0.5, h=1.0)
        space = enumerate_multi_item(2, 2)
        model = ValuationModel(tag="additive")
        result = check_weakly_downward_closed(space, model, spec)
        assert result.closed
        assert result.zero_outcome == 0
        tables = [model.value_table(space, spec, i) for i in range(2)]
        for x in range(space.num_outcomes):
            for k in range(2):
                w = int(result.witness[x, k])
                assert np.array_equal(tables[k][:, w], tables[k][:, x])
                other = 1 - k
                assert np.all(tables[other][:, w] == 0.0)

    def test_shared_outcome_space_not_closed(self):
        # single outcome granting both bidders value: nothing can zero one out
        spec = GridSpec(epsilon=0.5, h=1.0)
        space = OutcomeSpace(
            kind="custom", n=2, m=1, alloc=np.ones((1, 2, 1))
        )
        model = ValuationModel(tag="additive")
        result = check_weakly_downward_closed(space, model, spec)
        assert not result.closed
        assert result.counterexample == (0, 0)

    def test_single_parameter_with_axis_restrictions(self):
        spec = GridSpec(epsilon=0.5, h=1.0)
        space = single_parameter_space([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        model = ValuationModel(tag="additive")
        result = check_weakly_downward_closed(space, model, spec)
        assert result.closed
        # direct search oracle on the 3-outcome instance
        assert int(result.witness[1, 0]) == 1
        assert int(result.witness[2, 0]) == 0
        assert int(result.witness[2, 1]) == 2
