"""Feature maps: Taylor identity, orthogonality constructions, concentration."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefixla.featmaps import (
    DataDependentMap,
    ExponentialMap,
    RandomizedMap,
    Taylor2Map,
    cross_roster_epsilon,
    describe,
    measure_epsilon,
)


class TestTaylor2:
    def test_dimension_273_at_16(self):
        assert Taylor2Map(16).feature_dim == 273

    def test_orthogonal_inputs_give_unit_product(self):
        fm = Taylor2Map(3)
        q, k = np.array([1.0, 0.0, 0.0]), np.array([0.0, 2.0, 0.0])
        assert fm(q) @ fm(k) == pytest.approx(1.0, abs=0)

    def test_matches_scalar_formula(self):
        rng = np.random.default_rng(0)
        fm = Taylor2Map(6)
        for _ in range(50):
            q, k = rng.standard_normal(6), rng.standard_normal(6)
            s = q @ k
            want = 1.0 + s + s * s / 2.0
            got = fm(q) @ fm(k)
            assert abs(got - want) / abs(want) <= 1e-12

    def test_rowwise_application(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 3))
        fm = Taylor2Map(3)
        batched = fm(x)
        for i in range(4):
            assert np.array_equal(batched[i], fm(x[i]))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(min_value=-30, max_value=30), min_size=8, max_size=8))
    def test_inner_products_at_least_half(self, values):
        # 1 + s + s^2/2 = ((s+1)^2 + 1)/2 >= 1/2 for any real s
        q = np.array(values[:4])
        k = np.array(values[4:])
        fm = Taylor2Map(4)
        assert fm(q) @ fm(k) >= 0.5 - 1e-9

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            Taylor2Map(3)(np.zeros(4))
        with pytest.raises(ValueError):
            Taylor2Map(0)


class TestDataDependent:
    def test_roster_one_hot_layout(self):
        fm = DataDependentMap([5, 9, 2], vocab=16)
        v = fm(np.array([9]))[0]
        assert np.array_equal(v[:3], [0.0, 1.0, 0.0])
        assert np.array_equal(v[3:], np.zeros(fm.feature_dim - 3))

    def test_self_product_on_roster(self):
        fm = DataDependentMap([5, 9, 2], vocab=16)
        assert fm(np.array([5]))[0] @ fm(np.array([5]))[0] == 1.0

    def test_roster_vs_outside_orthogonal(self):
        fm = DataDependentMap([5, 9, 2], vocab=16)
        for a in (5, 9, 2):
            for b in (0, 1, 3, 7, 15):
                assert fm(np.array([a]))[0] @ fm(np.array([b]))[0] == 0.0

    def test_feature_dim_is_roster_plus_log(self):
        fm = DataDependentMap(list(range(8)), vocab=256)
        assert fm.feature_dim == 8 + math.ceil(math.log2(256))

    def test_rejects_out_of_vocab(self):
        fm = DataDependentMap([1, 2], vocab=8)
        with pytest.raises(ValueError):
            fm(np.array([8]))
        with pytest.raises(ValueError):
            DataDependentMap([9], vocab=8)
        with pytest.raises(ValueError):
            DataDependentMap([1, 1], vocab=8)

    def test_epsilon_zero_over_roster_and_matches(self):
        fm = DataDependentMap([5, 9, 2], vocab=16)
        # queries that match land inside the roster, so all pairs involve A
        assert measure_epsilon(fm, [5, 9, 2]) == 0.0
        assert cross_roster_epsilon(fm, [5, 9, 2], [9, 1, 14]) == 0.0


class TestRandomized:
    def test_self_product_exactly_one(self):
        fm = RandomizedMap(vocab=32, feature_dim=64, seed=0)
        feats = fm(np.arange(32))
        assert np.allclose((feats * feats).sum(axis=1), 1.0, atol=0)

    def test_degenerate_single_feature_collides(self):
        # f=1, c=2: the two sign vectors always have |inner product| 1
        fm = RandomizedMap(vocab=2, feature_dim=1, seed=3)
        assert measure_epsilon(fm, [0, 1]) == 1.0

    def test_epsilon_concentration_at_spec_sizing(self):
        # f = ceil(9 |A|^2 ln c): every pairwise inner product over 16
        # elements stays below 4.5 sqrt(ln c / f) for seeds 0..99
        # (deterministic; worst observed 0.0698)
        c, na = 256, 8
        f = math.ceil(9 * na * na * math.log(c))
        bound = 4.5 * math.sqrt(math.log(c) / f)
        worst = 0.0
        for seed in range(100):
            fmap = RandomizedMap(c, f, seed)
            elems = np.random.default_rng([seed, 17]).choice(c, 16, replace=False)
            worst = max(worst, measure_epsilon(fmap, list(elems)))
        assert worst < bound

    def test_epsilon_vanishes_at_huge_feature_dim(self):
        c, na = 256, 8
        f = math.ceil(200 * na * na * math.log(c))
        worst = 0.0
        for seed in range(20):
            fmap = RandomizedMap(c, f, seed)
            elems = np.random.default_rng([seed, 17]).choice(c, 16, replace=False)
            worst = max(worst, measure_epsilon(fmap, list(elems)))
        assert worst < 0.02

    def test_rejects_bad_feature_dim(self):
        with pytest.raises(ValueError):
            RandomizedMap(4, 0, 0)


class TestExponential:
    def test_unit_diagonal_and_relative_gap(self):
        for c in (16, 64):
            fm = ExponentialMap(vocab=c, seed=0)
            feats = fm(np.arange(c))
            gram = feats @ feats.T
            assert np.allclose(np.diag(gram), 1.0, atol=1e-8)
            assert fm.relative_gap > 100 * c

    def test_epsilon_below_inverse_gap(self):
        c = 32
        fm = ExponentialMap(vocab=c, seed=1)
        eps = measure_epsilon(fm, list(range(c)))
        assert eps <= 1.0 / fm.relative_gap + 1e-8


class TestMeasureEpsilon:
    def test_requires_two_elements(self):
        fm = RandomizedMap(4, 8, 0)
        with pytest.raises(ValueError):
            measure_epsilon(fm, [1])

    def test_taylor2_orthonormal_inputs(self):
        # cross products are exactly the constant term 1; the diagonal is
        # 1 + 1 + 1/2, so relative to it the off-diagonal mass is 1/2.5
        fm = Taylor2Map(4)
        basis = list(np.eye(4))
        eps = measure_epsilon(fm, basis)
        assert eps == pytest.approx(1.0, abs=1e-12)
        diag = fm(basis[0]) @ fm(basis[0])
        assert diag == pytest.approx(2.5, abs=1e-12)
        assert eps / diag == pytest.approx(1.0 / 2.5, abs=1e-12)


def test_describe_records_kind_and_dims():
    spec = describe(Taylor2Map(4))
    assert spec.kind == "taylor2" and spec.feature_dim == 21
    spec = describe(DataDependentMap([1, 2], vocab=8))
    assert spec.kind == "ip_data_dependent" and spec.data["roster"] == [1, 2]
