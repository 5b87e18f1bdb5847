import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossaug.core import DimMismatch, InvalidConfig, InvalidInput
from crossaug.losses import (NO_NEGATIVES, InvalidCounts, InvalidLabel, LossValue, Mining, TripletBatch,
                             balanced_softmax_batch, balanced_softmax_loss, cross_entropy_batch,
                             total_loss, triplet_alignment_loss, triplet_hinge, triplet_term)

import oracles

KINK = 1e-4


def random_triplet_instance(g):
    n = int(g.integers(2, 7))
    d = int(g.integers(2, 9))
    labels = g.integers(0, 3, n)
    return g.standard_normal((n, d)), g.standard_normal((n, d)), labels


def unit_at(angle_cos):
    return np.array([angle_cos, math.sqrt(1 - angle_cos ** 2)])


class TestTripletValues:
    def test_worked_example(self):
        assert triplet_hinge(0.9, 0.5, 0.7, 0.8, 0.3) == pytest.approx(0.4, abs=1e-12)

    def test_worked_example_from_vectors(self):
        anchor = np.array([1.0, 0.0])
        value = triplet_term(anchor, unit_at(0.9), unit_at(0.5), anchor, unit_at(0.7), unit_at(0.8), 0.3)
        assert value == pytest.approx(0.4, abs=1e-12)

    def test_margin_satisfied(self):
        assert triplet_hinge(1.0, 0.0, 1.0, 0.0, 0.3) == 0.0

    def test_badly_violated(self):
        assert triplet_hinge(0.1, 0.9, 0.1, 0.9, 0.3) == pytest.approx(2.2, abs=1e-12)

    @pytest.mark.parametrize("mining", ["hardest", "all"])
    def test_matches_oracle(self, backend, mining):
        g = np.random.default_rng(11)
        m = Mining.HARDEST_IN_BATCH if mining == "hardest" else Mining.ALL_PAIRS_MEAN
        for _ in range(50):
            img, txt, y = random_triplet_instance(g)
            got = triplet_alignment_loss(TripletBatch(img, txt, y), 0.3, m).value
            assert got == pytest.approx(oracles.triplet_loss(img, txt, y, 0.3, mining), abs=1e-12)

    def test_paired_batch(self, backend):
        img = np.array([[1.0, 0.0], [0.0, 1.0]])
        txt = np.array([[1.0, 0.0], [0.0, 1.0]])
        lv = triplet_alignment_loss(TripletBatch(img, txt, [0, 1]), 0.3)
        assert lv.value == 0.0
        # swapped texts: positive sim 0, negative sim 1 in both directions
        lv = triplet_alignment_loss(TripletBatch(img, txt[::-1], [0, 1]), 0.3)
        assert lv.value == pytest.approx(2.6, abs=1e-12)

    def test_all_labels_identical(self, backend):
        g = np.random.default_rng(0)
        lv = triplet_alignment_loss(TripletBatch(g.standard_normal((4, 3)), g.standard_normal((4, 3)),
                                                 [2, 2, 2, 2]))
        assert lv.value == 0.0 and NO_NEGATIVES in lv.flags
        assert not lv.grads["image"].any() and not lv.grads["text"].any()

    def test_errors(self):
        b = TripletBatch(np.eye(2), np.eye(2), [0, 1])
        with pytest.raises(InvalidConfig):
            triplet_alignment_loss(b, -0.1)
        with pytest.raises(InvalidInput):
            triplet_alignment_loss(TripletBatch(np.eye(2)[:1], np.eye(2)[:1], [0]))
        with pytest.raises(DimMismatch):
            TripletBatch(np.eye(2), np.eye(3)[:2], [0, 1])
        with pytest.raises(InvalidConfig):
            Mining.parse("random")

    def test_mining_parse(self):
        assert Mining.parse("hardest_in_batch") is Mining.HARDEST_IN_BATCH
        assert Mining.parse("AllPairsMean") is Mining.ALL_PAIRS_MEAN

    def test_boundary_subgradient_is_zero(self, backend):
        # margin 0 and a negative exactly as similar as the positive: hinge value 0
        e = np.array([[1.0, 0.0], [1.0, 0.0]])
        lv = triplet_alignment_loss(TripletBatch(e, e, [0, 1]), 0.0)
        assert lv.value == 0.0
        assert not lv.grads["image"].any() and not lv.grads["text"].any()

    def test_hardest_tie_picks_lowest_index(self, backend):
        # rows 1 and 2 are identical negatives for anchor 0
        img = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        txt = np.array([[0.6, 0.8], [0.6, 0.8], [0.6, 0.8]])
        lv = triplet_alignment_loss(TripletBatch(img, txt, [0, 1, 1]), 0.3)
        assert lv.grads["text"][1].any()
        assert lv.value == pytest.approx(oracles.triplet_loss(img, txt, [0, 1, 1], 0.3), abs=1e-12)


class TestTripletProperties:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_non_negative_and_scale_invariant(self, seed):
        g = np.random.default_rng(seed)
        img, txt, y = random_triplet_instance(g)
        n = len(y)
        base = triplet_alignment_loss(TripletBatch(img, txt, y)).value
        assert base >= 0
        s = g.uniform(0.01, 100, (n, 1))
        t = g.uniform(0.01, 100, (n, 1))
        scaled = triplet_alignment_loss(TripletBatch(img * s, txt * t, y)).value
        assert scaled == pytest.approx(base, abs=1e-9)

    @pytest.mark.parametrize("mining", [Mining.HARDEST_IN_BATCH, Mining.ALL_PAIRS_MEAN])
    def test_gradients_match_finite_differences(self, backend, mining):
        g = np.random.default_rng(5)
        checked = 0
        while checked < 100:
            img, txt, y = random_triplet_instance(g)
            hinge, gap = oracles.triplet_margins(img, txt, y, 0.3)
            if hinge < KINK or (mining == Mining.HARDEST_IN_BATCH and gap < KINK):
                continue
            lv = triplet_alignment_loss(TripletBatch(img, txt, y), 0.3, mining)
            f_img = lambda x: triplet_alignment_loss(TripletBatch(x, txt, y), 0.3, mining).value
            f_txt = lambda x: triplet_alignment_loss(TripletBatch(img, x, y), 0.3, mining).value
            assert oracles.rel_err(lv.grads["image"], oracles.central_diff(f_img, img)) <= 1e-6
            assert oracles.rel_err(lv.grads["text"], oracles.central_diff(f_txt, txt)) <= 1e-6
            checked += 1


class TestBalancedSoftmax:
    def test_spot_values(self):
        assert balanced_softmax_loss([0, 0], 0, [1, 1]).value == pytest.approx(math.log(2), abs=1e-12)
        assert balanced_softmax_loss([0, 0], 1, [9, 1]).value == pytest.approx(math.log(10), abs=1e-12)

    def test_matches_oracle(self, backend):
        g = np.random.default_rng(2)
        for _ in range(200):
            C = int(g.integers(2, 9))
            l = g.standard_normal(C) * 5
            n = g.integers(1, 500, C)
            y = int(g.integers(0, C))
            got = balanced_softmax_loss(l, y, n).value
            assert got == pytest.approx(oracles.balanced_softmax(l, y, n), abs=1e-12)

    def test_uniform_counts_equal_cross_entropy(self, backend):
        g = np.random.default_rng(3)
        for _ in range(1000):
            C = int(g.integers(2, 12))
            l = g.standard_normal(C) * 3
            y = int(g.integers(0, C))
            k = int(g.integers(1, 100))
            assert abs(balanced_softmax_loss(l, y, np.full(C, k)).value
                       - oracles.cross_entropy(l, y)) <= 1e-12

    def test_shift_invariance_and_grad_sum(self, backend):
        g = np.random.default_rng(4)
        for _ in range(200):
            C = int(g.integers(2, 10))
            l, n, y = g.standard_normal(C), g.integers(1, 300, C), int(g.integers(0, C))
            a = balanced_softmax_loss(l, y, n)
            b = balanced_softmax_loss(l + g.uniform(-50, 50), y, n)
            assert abs(a.value - b.value) <= 1e-9
            assert a.value >= 0
            assert abs(a.grads["logits"].sum()) <= 1e-12

    def test_large_logits_stable(self):
        lv = balanced_softmax_loss([1000.0, -1000.0], 0, [1, 1])
        assert lv.value == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(lv.grads["logits"]).all()

    def test_gradients_match_finite_differences(self, backend):
        g = np.random.default_rng(6)
        for _ in range(100):
            C = int(g.integers(2, 9))
            l, n, y = g.standard_normal(C), g.integers(1, 300, C), int(g.integers(0, C))
            lv = balanced_softmax_loss(l, y, n)
            num = oracles.central_diff(lambda x: balanced_softmax_loss(x, y, n).value, l)
            assert oracles.rel_err(lv.grads["logits"], num) <= 1e-6

    def test_batch_is_mean_of_rows(self, backend):
        g = np.random.default_rng(7)
        L, y, n = g.standard_normal((5, 4)), g.integers(0, 4, 5), g.integers(1, 50, 4)
        batch = balanced_softmax_batch(L, y, n)
        rows = [balanced_softmax_loss(L[i], y[i], n) for i in range(5)]
        assert batch.value == pytest.approx(np.mean([r.value for r in rows]), abs=1e-12)
        np.testing.assert_allclose(batch.grads["logits"], np.stack([r.grads["logits"] for r in rows]) / 5,
                                   atol=1e-15)
        ce = cross_entropy_batch(L, y).value
        assert ce == pytest.approx(np.mean([oracles.cross_entropy(L[i], y[i]) for i in range(5)]), abs=1e-12)

    def test_errors(self):
        with pytest.raises(InvalidCounts):
            balanced_softmax_loss([0, 0], 0, [0, 1])
        with pytest.raises(InvalidLabel):
            balanced_softmax_loss([0, 0], 2, [1, 1])
        with pytest.raises(DimMismatch):
            balanced_softmax_loss([0, 0, 0], 0, [1, 1])


class TestTotal:
    def test_sum(self):
        t = total_loss(LossValue(0.4), LossValue(0.693147), 1, 1)
        assert t.value == pytest.approx(1.093147, abs=1e-12)

    def test_weights(self):
        a = LossValue(0.4, {"x": np.ones(2)})
        c = LossValue(0.7, {"x": np.full(2, 2.0)})
        assert total_loss(a, c, 0, 1).value == 0.7
        np.testing.assert_array_equal(total_loss(a, c, 0, 1).grads["x"], [2.0, 2.0])
        np.testing.assert_array_equal(total_loss(a, c, 1, 2).grads["x"], [5.0, 5.0])
        assert total_loss(LossValue(0.0), LossValue(0.0)).value == 0.0
        with pytest.raises(InvalidConfig):
            total_loss(a, c, -1, 1)
