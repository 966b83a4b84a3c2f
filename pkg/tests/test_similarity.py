"""Document-level distance functions and aspect restriction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aspectsim.errors import InvalidInputError
from aspectsim.ot import DistanceMatrix, TransportPlan, pairwise_l2
from aspectsim.similarity import AspectSelection, f_att, f_ot, f_ts, restrict


def dm(values) -> DistanceMatrix:
    return DistanceMatrix(values=np.asarray(values, dtype=np.float64))


class TestSingleMatch:
    def test_global_minimum_with_alignment(self):
        result = f_ts(dm([[3.0, 1.0], [0.5, 2.0]]))
        assert result.distance == 0.5
        assert result.alignment == (1, 0)

    def test_tie_breaks_row_major(self):
        result = f_ts(dm([[2.0, 1.0], [1.0, 3.0]]))
        assert result.alignment == (0, 1)

    def test_single_entry(self):
        result = f_ts(dm([[4.25]]))
        assert (result.distance, result.alignment) == (4.25, (0, 0))


class TestTransportScore:
    def test_identical_documents_score_near_zero(self, rng):
        a = rng.normal(size=(4, 8))
        d = pairwise_l2(a, a.copy())
        result = f_ot(d, tau=0.5, lam=200.0, tol=1e-10)
        assert result.distance < 1e-6
        assert isinstance(result.alignment, TransportPlan)

    def test_alignment_is_the_plan_used_for_the_cost(self, rng):
        d = dm(3.0 * rng.random((3, 5)))
        result = f_ot(d, tau=0.5)
        plan = result.alignment
        assert result.distance == pytest.approx(
            float(np.sum(d.values * plan.values)), abs=1e-15
        )

    def test_bounded_by_matrix_range(self, rng):
        d = dm(1.0 + 2.0 * rng.random((4, 4)))
        result = f_ot(d, tau=1.0)
        assert d.values.min() - 1e-9 <= result.distance <= d.values.max() + 1e-9


class TestAttentionScore:
    def test_single_row_hand_value(self):
        # joint softmax over [-0, -2]: weights [0.880797, 0.119203],
        # expectation 2 * 0.119203 = 0.238406
        result = f_att(dm([[0.0, 2.0]]), tau=1.0)
        assert result.distance == pytest.approx(0.2384058440442351, abs=1e-12)

    def test_constant_matrix_returns_the_constant(self):
        result = f_att(dm(np.full((3, 4), 1.7)), tau=0.5)
        assert result.distance == pytest.approx(1.7, abs=1e-12)
        np.testing.assert_allclose(result.alignment, np.full((3, 4), 1.0 / 12.0))

    def test_small_tau_approaches_single_match(self, rng):
        d = dm(rng.random((4, 5)))
        att = f_att(d, tau=1e-4)
        assert att.distance == pytest.approx(f_ts(d).distance, abs=1e-8)

    def test_per_row_variant_averages_rows(self):
        d = dm([[0.0, 100.0], [100.0, 100.0]])
        joint = f_att(d, tau=1.0).distance
        per_row = f_att(d, tau=1.0, per_row=True).distance
        assert joint == pytest.approx(0.0, abs=1e-12)
        # second row contributes its own expectation (100) to the mean
        assert per_row == pytest.approx(50.0, abs=1e-9)

    def test_attention_sums_to_one(self, rng):
        d = dm(rng.random((3, 3)))
        att = f_att(d, tau=0.7).alignment
        assert att.sum() == pytest.approx(1.0, abs=1e-12)
        per_row = f_att(d, tau=0.7, per_row=True).alignment
        np.testing.assert_allclose(per_row.sum(axis=1), np.ones(3), atol=1e-12)

    def test_tau_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            f_att(dm([[1.0]]), tau=0.0)


class TestAspectRestriction:
    def test_selection_normalizes_indices(self):
        sel = AspectSelection(indices=(2, 0, 2))
        assert sel.indices == (0, 2)

    def test_selection_rejects_empty_and_negative(self):
        with pytest.raises(InvalidInputError):
            AspectSelection(indices=())
        with pytest.raises(InvalidInputError):
            AspectSelection(indices=(-1, 0))

    def test_restrict_keeps_selected_rows(self):
        d = dm([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        out = restrict(d, AspectSelection(indices=(0, 2)))
        np.testing.assert_array_equal(out.values, [[1.0, 2.0], [5.0, 6.0]])

    def test_restrict_out_of_range(self):
        d = dm([[1.0, 2.0]])
        with pytest.raises(InvalidInputError):
            restrict(d, AspectSelection(indices=(1,)))

    def test_restriction_changes_single_match(self):
        d = dm([[5.0, 6.0], [0.1, 7.0]])
        assert f_ts(d).distance == pytest.approx(0.1)
        restricted = restrict(d, AspectSelection(indices=(0,)))
        assert f_ts(restricted).distance == pytest.approx(5.0)


@given(
    st.integers(min_value=1, max_value=5),
    st.integers(min_value=1, max_value=5),
    st.integers(min_value=0, max_value=2**31),
)
@settings(max_examples=50, deadline=None)
def test_orderings_between_scores(n, m, seed):
    rng = np.random.default_rng(seed)
    d = dm(5.0 * rng.random((n, m)))
    ts = f_ts(d).distance
    att = f_att(d, tau=0.5).distance
    ot = f_ot(d, tau=0.5).distance
    # the single best pair lower-bounds any weighted average of entries
    assert ts <= att + 1e-12
    assert ts <= ot + 1e-6
    assert att <= d.values.max() + 1e-12
