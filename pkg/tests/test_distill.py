import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdrec.autodiff import Tensor
from kdrec.distill import (DisentangledLogits, LossWeights, bpr_loss,
                           disentangled_list_kd, emb_kd_loss, joint_loss,
                           list_kd_loss, list_logits, pair_kd_loss,
                           pair_margins, soften_list, softened_probs,
                           vanilla_list_kd)
from kdrec.numerics import Param, gradient_check, param_leaves


class TestBprLoss:
    def test_equal_scores_give_ln2(self):
        s = np.ones((5, 1))
        assert bpr_loss(Tensor(s), Tensor(s)).item() == pytest.approx(math.log(2.0))

    def test_large_margin_drives_loss_to_zero(self):
        pos = np.full((3, 1), 50.0)
        neg = np.zeros((3, 1))
        assert bpr_loss(Tensor(pos), Tensor(neg)).item() < 1e-12

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(0)
        pos, neg = rng.normal(size=(8, 1)), rng.normal(size=(8, 1))
        expected = np.mean([-math.log(1.0 / (1.0 + math.exp(-(p - n))))
                            for p, n in zip(pos[:, 0], neg[:, 0])])
        assert bpr_loss(Tensor(pos), Tensor(neg)).item() == pytest.approx(
            expected, abs=1e-12)

    def test_nonfinite_scores_rejected(self):
        with pytest.raises(ValueError):
            bpr_loss(Tensor(np.array([[np.nan]])), Tensor(np.array([[0.0]])))


class TestPairKdLoss:
    def test_matched_logits_zero(self):
        m = np.random.default_rng(1).normal(size=(6, 1))
        assert pair_kd_loss(Tensor(m), Tensor(m)).item() == pytest.approx(0.0, abs=1e-12)

    def test_matches_binary_kl_oracle(self):
        rng = np.random.default_rng(2)
        mt, ms = rng.normal(size=(7, 1)), rng.normal(size=(7, 1))
        total = 0.0
        for a, b in zip(mt[:, 0], ms[:, 0]):
            st_, ss = 1 / (1 + math.exp(-a)), 1 / (1 + math.exp(-b))
            total += st_ * (math.log(st_) - math.log(ss)) \
                + (1 - st_) * (math.log(1 - st_) - math.log(1 - ss))
        assert pair_kd_loss(Tensor(mt), Tensor(ms)).item() == pytest.approx(
            total / 7, abs=1e-12)

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            mt, ms = rng.normal(size=(4, 1)), rng.normal(size=(4, 1))
            v = pair_kd_loss(Tensor(mt), Tensor(ms)).item()
            assert v >= 0.0
            if not np.allclose(mt, ms):
                assert v > 0.0

    def test_confident_teacher_with_matching_student_vanishes(self):
        big = np.full((3, 1), 30.0)
        assert pair_kd_loss(Tensor(big), Tensor(big)).item() == pytest.approx(
            0.0, abs=1e-9)


class TestSoftenList:
    def test_worked_example(self):
        d = soften_list(np.array([2.0, 1.0, 0.0]), tau=1.0)
        assert d.b_pos == pytest.approx(0.665241, abs=1e-6)
        assert d.b_neg == pytest.approx(0.334759, abs=1e-6)
        np.testing.assert_allclose(d.q, [0.731059, 0.268941], atol=1e-6)

    def test_all_equal_logits_are_uniform(self):
        d = soften_list(np.zeros(5), tau=1.0)
        assert d.b_pos == pytest.approx(1 / 5, abs=1e-12)
        np.testing.assert_allclose(d.q, np.full(4, 0.25), atol=1e-12)

    def test_high_temperature_flattens(self):
        d = soften_list(np.array([4.0, 1.0, -2.0]), tau=1e9)
        assert d.b_pos == pytest.approx(1 / 3, abs=1e-6)

    def test_q_equals_probs_over_negative_mass(self):
        y = np.random.default_rng(4).normal(size=6)
        d = soften_list(y, tau=0.7)
        p = softened_probs(y, tau=0.7)
        np.testing.assert_allclose(d.q, p[1:] / d.b_neg, atol=1e-12)

    def test_k_below_two_rejected(self):
        with pytest.raises(ValueError):
            soften_list(np.array([1.0]))

    def test_invariant_validation(self):
        with pytest.raises(ValueError):
            DisentangledLogits(0.9, 0.2, np.array([0.5, 0.5]), 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=10),
           st.floats(0.1, 10.0))
    def test_shift_invariance(self, logits, shift):
        y = np.array(logits)
        a = soften_list(y)
        b = soften_list(y + shift)
        assert abs(a.b_pos - b.b_pos) < 1e-12
        np.testing.assert_allclose(a.q, b.q, atol=1e-12)


class TestListKdLoss:
    def test_identical_lists_zero(self):
        y = np.random.default_rng(5).normal(size=(4, 6))
        assert disentangled_list_kd(y, y).item() == pytest.approx(0.0, abs=1e-12)
        assert vanilla_list_kd(y, y).item() == pytest.approx(0.0, abs=1e-12)

    def test_worked_example_and_identity(self):
        yt = np.array([[2.0, 1.0, 0.0]])
        ys = np.array([[1.0, 1.0, 1.0]])
        dis = disentangled_list_kd(yt, ys).item()
        van = vanilla_list_kd(yt, ys).item()
        assert dis == pytest.approx(0.26621, abs=1e-4)
        assert abs(dis - van) < 1e-10

    def test_reweighting_vanishes_for_confident_teacher(self):
        # teacher mass concentrates on the positive -> (1 - b+) -> 0,
        # so a student mismatch inside the negatives stops mattering
        yt = np.array([[40.0, 0.0, 0.0]])
        ys_a = np.array([[0.0, 5.0, -5.0]])
        ys_b = np.array([[0.0, -5.0, 5.0]])
        d = soften_list(yt[0])
        assert 1.0 - d.b_pos < 1e-12
        la = disentangled_list_kd(yt, ys_a).item()
        lb = disentangled_list_kd(yt, ys_b).item()
        # both reduce to the binary term alone
        assert la == pytest.approx(lb, abs=1e-8)

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            yt = rng.normal(size=(3, 5))
            ys = rng.normal(size=(3, 5))
            v = disentangled_list_kd(yt, ys).item()
            assert v >= 0.0
            assert v > 0.0  # random draws never coincide

    def test_sums_over_modalities(self):
        rng = np.random.default_rng(7)
        ys = rng.normal(size=(2, 4))
        yts = [rng.normal(size=(2, 4)) for _ in range(3)]
        total = list_kd_loss(yts, ys).item()
        parts = sum(disentangled_list_kd(yt, ys).item() for yt in yts)
        assert total == pytest.approx(parts, abs=1e-12)

    def test_detached_reweight_changes_gradient_not_value(self):
        rng = np.random.default_rng(8)
        yt_val = rng.normal(size=(2, 4))
        ys_val = rng.normal(size=(2, 4))

        def value(detach):
            return disentangled_list_kd(Tensor(yt_val), Tensor(ys_val),
                                        detach_reweight=detach).item()

        assert value(True) == pytest.approx(value(False), abs=1e-12)

        def grads(detach):
            yt = Tensor(yt_val, requires_grad=True)
            loss = disentangled_list_kd(yt, Tensor(ys_val), detach_reweight=detach)
            loss.backward()
            return yt.grad

        assert not np.allclose(grads(True), grads(False))

    @settings(max_examples=150, deadline=None)
    @given(st.integers(2, 10), st.sampled_from([0.5, 1.0, 2.0]),
           st.integers(0, 2**31 - 1))
    def test_decomposition_identity_property(self, k, tau, seed):
        # standard-normal logits keep all probabilities above the 1e-12
        # floor, where the rewrite is exact; floored tails may diverge
        rng = np.random.default_rng(seed)
        yt = rng.normal(size=(1, k))
        ys = rng.normal(size=(1, k))
        dis = disentangled_list_kd(yt, ys, tau=tau).item()
        van = vanilla_list_kd(yt, ys, tau=tau).item()
        assert abs(dis - van) < 1e-10


class TestEmbKdLoss:
    def test_parallel_vectors_zero(self):
        e = np.random.default_rng(9).normal(size=(5, 4))
        assert emb_kd_loss(Tensor(e), [Tensor(3.0 * e)]).item() == pytest.approx(
            0.0, abs=1e-12)

    def test_antiparallel_gamma_one_gives_two(self):
        e = np.random.default_rng(10).normal(size=(5, 4))
        loss = emb_kd_loss(Tensor(e), [Tensor(-e)], gamma=1.0)
        assert loss.item() == pytest.approx(2.0, abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(11)
        e = rng.normal(size=(6, 4))
        f = rng.normal(size=(6, 4))
        expected = 0.0
        for i in range(6):
            c = float(e[i] @ f[i]) / (np.linalg.norm(e[i]) * np.linalg.norm(f[i]))
            expected += (1.0 - c) ** 2
        expected /= 6
        assert emb_kd_loss(Tensor(e), [Tensor(f)], gamma=2.0).item() == \
            pytest.approx(expected, abs=1e-12)

    def test_gamma_below_one_rejected(self):
        with pytest.raises(ValueError):
            emb_kd_loss(Tensor(np.ones((2, 2))), [Tensor(np.ones((2, 2)))], gamma=0.5)


class TestJointLoss:
    def test_zero_weights_reduce_to_bpr(self):
        rng = np.random.default_rng(12)
        l_bpr = bpr_loss(Tensor(rng.normal(size=(4, 1))),
                         Tensor(rng.normal(size=(4, 1))))
        total = joint_loss(l_bpr, None, None, None, LossWeights(0.0, 0.0, 0.0))
        assert total.item() == l_bpr.item()

    def test_weighted_sum_of_component_oracles(self):
        rng = np.random.default_rng(13)
        l_bpr = bpr_loss(Tensor(rng.normal(size=(4, 1))),
                         Tensor(rng.normal(size=(4, 1))))
        l_pair = pair_kd_loss(Tensor(rng.normal(size=(4, 1))),
                              Tensor(rng.normal(size=(4, 1))))
        l_list = disentangled_list_kd(rng.normal(size=(4, 5)),
                                      rng.normal(size=(4, 5)))
        l_emb = emb_kd_loss(Tensor(rng.normal(size=(4, 3))),
                            [Tensor(rng.normal(size=(4, 3)))])
        w = LossWeights(0.3, 0.7, 0.05)
        total = joint_loss(l_bpr, l_pair, l_list, l_emb, w)
        expected = (l_bpr.item() + 0.3 * l_pair.item() + 0.7 * l_list.item()
                    + 0.05 * l_emb.item())
        assert total.item() == pytest.approx(expected, abs=1e-12)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-0.1, 0.0, 0.0)


class TestLossGradients:
    """Central finite differences against the tape, loss by loss."""

    def _embedding_params(self, rng, n_u=5, n_i=7, d=3):
        eu = Param("eu", rng.normal(size=(n_u, d)) * 0.5)
        ei = Param("ei", rng.normal(size=(n_i, d)) * 0.5)
        return eu, ei

    def test_bpr_gradients(self):
        rng = np.random.default_rng(20)
        eu, ei = self._embedding_params(rng)
        users = rng.integers(0, 5, size=12)
        pos = rng.integers(0, 7, size=12)
        neg = rng.integers(0, 7, size=12)

        def build():
            leaves = param_leaves([eu, ei])
            from kdrec.autodiff import rows, rowwise_dot
            s_pos = rowwise_dot(rows(leaves["eu"], users), rows(leaves["ei"], pos))
            s_neg = rowwise_dot(rows(leaves["eu"], users), rows(leaves["ei"], neg))
            return bpr_loss(s_pos, s_neg), leaves

        res = gradient_check(build, [eu, ei], n_coords=15,
                             rng=np.random.default_rng(0))
        assert res.max_rel_error < 1e-4

    def test_pair_kd_gradients_flow_both_sides(self):
        rng = np.random.default_rng(21)
        tu, ti = Param("tu", rng.normal(size=(5, 3))), Param("ti", rng.normal(size=(7, 3)))
        su, si = Param("su", rng.normal(size=(5, 3))), Param("si", rng.normal(size=(7, 3)))
        users = rng.integers(0, 5, size=10)
        pos = rng.integers(0, 7, size=10)
        neg = rng.integers(0, 7, size=10)

        def build():
            leaves = param_leaves([tu, ti, su, si])
            mt = pair_margins(leaves["tu"], leaves["ti"], users, pos, neg)
            ms = pair_margins(leaves["su"], leaves["si"], users, pos, neg)
            return pair_kd_loss(mt, ms), leaves

        res = gradient_check(build, [tu, ti, su, si], n_coords=12,
                             rng=np.random.default_rng(1))
        assert res.max_rel_error < 1e-4

    def test_list_kd_gradients_flow_both_sides(self):
        rng = np.random.default_rng(22)
        tu, ti = Param("tu", rng.normal(size=(4, 3))), Param("ti", rng.normal(size=(8, 3)))
        su, si = Param("su", rng.normal(size=(4, 3))), Param("si", rng.normal(size=(8, 3)))
        users = rng.integers(0, 4, size=6)
        lists = np.stack([rng.choice(8, size=4, replace=False) for _ in range(6)])

        def build():
            leaves = param_leaves([tu, ti, su, si])
            yt = list_logits(leaves["tu"], leaves["ti"], users, lists)
            ys = list_logits(leaves["su"], leaves["si"], users, lists)
            return disentangled_list_kd(yt, ys, tau=1.0), leaves

        res = gradient_check(build, [tu, ti, su, si], n_coords=12,
                             rng=np.random.default_rng(2))
        assert res.max_rel_error < 1e-4

    def test_emb_kd_gradients(self):
        rng = np.random.default_rng(23)
        si = Param("si", rng.normal(size=(6, 4)))
        fi = Param("fi", rng.normal(size=(6, 4)))

        def build():
            leaves = param_leaves([si, fi])
            return emb_kd_loss(leaves["si"], [leaves["fi"]], gamma=2.0), leaves

        res = gradient_check(build, [si, fi], n_coords=20,
                             rng=np.random.default_rng(3))
        assert res.max_rel_error < 1e-4
