"""Graph attention, classifier head, gradient reversal, and losses."""

import numpy as np
import pytest

from ltsgat import autodiff as ad
from ltsgat.autodiff import backward
from ltsgat.errors import ConfigError, DataFormatError, ShapeError
from ltsgat.graph import (ClassifierParams, DiscriminatorParams,
                          GATHeadParams, GATLayerParams, GraphTopology,
                          classification_loss, classify, distance_topology,
                          domain_discriminate, full_topology, gat_coeffs,
                          gat_layer, gat_stack, grad_reverse, mean_pool,
                          topology_from_spec, total_loss)


def head(rng, f_in, f_out, zero_attention=False):
    w = ad.parameter(rng.standard_normal((f_out, f_in)) * 0.5)
    if zero_attention:
        a = ad.parameter(np.zeros((2 * f_out, 1)))
    else:
        a = ad.parameter(rng.standard_normal((2 * f_out, 1)) * 0.5)
    return GATHeadParams(w, a)


class TestTopology:
    def test_full_has_all_edges(self):
        topo = full_topology(4)
        assert topo.mask.sum() == 16
        assert topo.neighbors(2) == [0, 1, 2, 3]

    def test_distance_threshold(self):
        coords = np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0]])
        topo = distance_topology(coords, 1.5)
        assert topo.neighbors(0) == [0, 1]
        assert topo.neighbors(2) == [2]

    def test_missing_self_loop_rejected(self):
        mask = np.ones((3, 3))
        mask[1, 1] = 0.0
        with pytest.raises(DataFormatError):
            GraphTopology(3, mask)

    def test_asymmetric_rejected(self):
        mask = np.eye(3)
        mask[0, 1] = 1.0
        with pytest.raises(DataFormatError):
            GraphTopology(3, mask)

    def test_spec_modes(self):
        assert topology_from_spec({"mode": "full"}, 5).mask.sum() == 25
        topo = topology_from_spec({"mode": "distance", "threshold": 0.9}, 32)
        assert topo.n == 32
        with pytest.raises(ConfigError):
            topology_from_spec({"mode": "distance"}, 32)
        with pytest.raises(ConfigError):
            topology_from_spec({"mode": "ring"}, 32)


class TestGATCoeffs:
    def test_isolated_node_attends_to_itself(self):
        rng = np.random.default_rng(0)
        mask = np.ones((3, 3))
        mask[0, 1:] = 0.0
        mask[1:, 0] = 0.0
        topo = GraphTopology(3, mask)
        att, _ = gat_coeffs(ad.constant(rng.standard_normal((3, 2))), topo,
                            head(rng, 2, 2))
        assert att.value[0, 0] == pytest.approx(1.0)
        np.testing.assert_allclose(att.value[0, 1:], 0.0)

    def test_zero_attention_vector_gives_uniform(self):
        rng = np.random.default_rng(1)
        topo = full_topology(4)
        att, _ = gat_coeffs(ad.constant(rng.standard_normal((4, 3))), topo,
                            head(rng, 3, 2, zero_attention=True))
        np.testing.assert_allclose(att.value, 0.25, atol=1e-12)

    def test_two_node_hand_case(self):
        # z = [[0], [ln4]], W = I, a_v = [0, 1]: row 0 scores [0, ln4]
        params = GATHeadParams(ad.parameter(np.eye(1)),
                               ad.parameter(np.array([[0.0], [1.0]])))
        z = ad.constant(np.array([[0.0], [np.log(4.0)]]))
        att, _ = gat_coeffs(z, full_topology(2), params)
        np.testing.assert_allclose(att.value[0], [0.2, 0.8], atol=1e-12)

    def test_rows_sum_to_one_over_neighborhoods(self):
        rng = np.random.default_rng(2)
        mask = (rng.uniform(size=(6, 6)) < 0.4)
        mask = (mask | mask.T).astype(float)
        np.fill_diagonal(mask, 1.0)
        topo = GraphTopology(6, mask)
        for _ in range(20):
            att, _ = gat_coeffs(ad.constant(rng.standard_normal((6, 4))),
                                topo, head(rng, 4, 3))
            np.testing.assert_allclose(att.value.sum(axis=1), 1.0, atol=1e-6)
            assert np.all(att.value[mask == 0] == 0.0)


def brute_force_gat_layer(zv, mask, heads, slope):
    """Per-edge transcription of the attention layer for cross-checking."""
    n = zv.shape[0]
    lrelu = lambda v: np.where(v >= 0, v, slope * v)
    acc = None
    for h in heads:
        w = h.w_s.value
        a = h.a_v.value[:, 0]
        f_out = w.shape[0]
        proj = zv @ w.T
        out = np.zeros((n, f_out))
        for i in range(n):
            neigh = [j for j in range(n) if mask[i, j] > 0]
            scores = [lrelu(np.dot(a, np.concatenate([proj[i], proj[j]])))
                      for j in neigh]
            e = np.exp(scores - np.max(scores))
            alpha = e / e.sum()
            for alpha_j, j in zip(alpha, neigh):
                out[i] += alpha_j * proj[j]
        acc = out if acc is None else acc + out
    return lrelu(acc / len(heads))


class TestGATLayer:
    def test_uniform_attention_averages_projections(self):
        rng = np.random.default_rng(3)
        topo = full_topology(4)
        h = head(rng, 3, 2, zero_attention=True)
        zv = rng.standard_normal((4, 3))
        out = gat_layer(ad.constant(zv), topo, GATLayerParams([h]), 0.2).value
        proj = zv @ h.w_s.value.T
        expected = np.where(proj.mean(axis=0) >= 0, proj.mean(axis=0),
                            0.2 * proj.mean(axis=0))
        for i in range(4):
            np.testing.assert_allclose(out[i], expected, atol=1e-12)

    def test_single_node_identity(self):
        params = GATLayerParams([GATHeadParams(
            ad.parameter(np.eye(2)), ad.parameter(np.zeros((4, 1))))])
        z = ad.constant(np.array([[0.7, 2.0]]))
        out = gat_layer(z, full_topology(1), params, 0.2).value
        np.testing.assert_allclose(out, [[0.7, 2.0]])

    def test_matches_per_edge_oracle(self):
        rng = np.random.default_rng(4)
        mask = (rng.uniform(size=(4, 4)) < 0.6)
        mask = (mask | mask.T).astype(float)
        np.fill_diagonal(mask, 1.0)
        topo = GraphTopology(4, mask)
        heads = [head(rng, 3, 2), head(rng, 3, 2)]
        zv = rng.standard_normal((4, 3))
        out = gat_layer(ad.constant(zv), topo, GATLayerParams(heads), 0.2).value
        expected = brute_force_gat_layer(zv, mask, heads, 0.2)
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_node_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        mask = (rng.uniform(size=(5, 5)) < 0.5)
        mask = (mask | mask.T).astype(float)
        np.fill_diagonal(mask, 1.0)
        heads = [head(rng, 3, 3)]
        zv = rng.standard_normal((5, 3))
        perm = np.array([3, 0, 4, 1, 2])
        out = gat_layer(ad.constant(zv), GraphTopology(5, mask),
                        GATLayerParams(heads), 0.2).value
        out_p = gat_layer(ad.constant(zv[perm]),
                          GraphTopology(5, mask[np.ix_(perm, perm)]),
                          GATLayerParams(heads), 0.2).value
        np.testing.assert_allclose(out_p, out[perm], atol=1e-10)

    def test_empty_heads_rejected(self):
        with pytest.raises(ConfigError):
            gat_layer(ad.constant(np.ones((2, 2))), full_topology(2),
                      GATLayerParams([]), 0.2)


class TestGATStack:
    def test_single_layer_equals_gat_layer(self):
        rng = np.random.default_rng(6)
        topo = full_topology(3)
        layer = GATLayerParams([head(rng, 2, 2)])
        zv = rng.standard_normal((3, 2))
        a = gat_stack(ad.constant(zv), topo, [layer], 0.2).value
        b = gat_layer(ad.constant(zv), topo, layer, 0.2).value
        np.testing.assert_array_equal(a, b)

    def test_stack_matches_manual_composition(self):
        rng = np.random.default_rng(7)
        topo = full_topology(3)
        layers = [GATLayerParams([head(rng, 2, 2)]) for _ in range(3)]
        zv = rng.standard_normal((3, 2))
        stacked = gat_stack(ad.constant(zv), topo, layers, 0.2).value
        out = ad.constant(zv)
        for layer in layers:
            out = gat_layer(out, topo, layer, 0.2)
        np.testing.assert_array_equal(stacked, out.value)

    def test_dimension_chain_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        layers = [GATLayerParams([head(rng, 2, 3)]),
                  GATLayerParams([head(rng, 4, 3)])]
        with pytest.raises(ConfigError):
            gat_stack(ad.constant(np.ones((3, 2))), full_topology(3),
                      layers, 0.2)

    def test_table_dims_give_expected_shape(self):
        rng = np.random.default_rng(9)
        topo = full_topology(32)
        layers = [GATLayerParams([head(rng, 28, 28) for _ in range(2)])
                  for _ in range(4)]
        out = gat_stack(ad.constant(rng.standard_normal((32, 28))), topo,
                        layers, 0.2)
        assert out.value.shape == (32, 28)


class TestClassifier:
    def test_zero_parameters_give_even_split(self):
        params = ClassifierParams(ad.parameter(np.zeros((2, 3))),
                                  ad.parameter(np.zeros((2, 1))))
        rng = np.random.default_rng(10)
        p = classify(ad.constant(rng.standard_normal((4, 3))), params).value
        np.testing.assert_allclose(p, [[0.5], [0.5]])

    def test_hand_logits(self):
        # zero weights, bias [ln3, 0] -> probabilities [0.75, 0.25]
        params = ClassifierParams(
            ad.parameter(np.zeros((2, 3))),
            ad.parameter(np.array([[np.log(3.0)], [0.0]])))
        p = classify(ad.constant(np.ones((4, 3))), params).value
        np.testing.assert_allclose(p, [[0.75], [0.25]], atol=1e-12)

    def test_matches_scripted_pool_affine_softmax(self):
        rng = np.random.default_rng(11)
        w = rng.standard_normal((2, 3))
        b = rng.standard_normal((2, 1))
        params = ClassifierParams(ad.parameter(w), ad.parameter(b))
        zv = rng.standard_normal((5, 3))
        p = classify(ad.constant(zv), params).value
        logits = w @ zv.mean(axis=0, keepdims=True).T + b
        e = np.exp(logits - logits.max())
        np.testing.assert_allclose(p, e / e.sum(), atol=1e-12)

    def test_probabilities_normalized(self):
        rng = np.random.default_rng(12)
        params = ClassifierParams(ad.parameter(rng.standard_normal((2, 4))),
                                  ad.parameter(rng.standard_normal((2, 1))))
        for _ in range(20):
            p = classify(ad.constant(rng.standard_normal((6, 4))), params).value
            assert p.min() >= 0
            assert abs(p.sum() - 1.0) < 1e-9

    def test_finite_difference_through_head(self):
        from ltsgat.autodiff import grad_check
        from ltsgat.verification import classifier_head_builder
        for seed in (0, 1, 2):
            report = grad_check(classifier_head_builder, seed, tol=1e-4)
            assert report.passed, (seed, report.max_relative_error)


class TestClassificationLoss:
    def test_even_probabilities_give_ln2(self):
        p = ad.constant(np.array([[0.5], [0.5]]))
        loss = classification_loss([p], [0]).value[0, 0]
        assert loss == pytest.approx(np.log(2.0))

    def test_certain_correct_prediction_is_free(self):
        p = ad.constant(np.array([[1.0], [0.0]]))
        assert classification_loss([p], [0]).value[0, 0] == 0.0

    def test_two_sample_batch_mean(self):
        pa = ad.constant(np.array([[0.9], [0.1]]))
        pb = ad.constant(np.array([[0.2], [0.8]]))
        loss = classification_loss([pa, pb], [0, 1]).value[0, 0]
        expected = (-np.log(0.9) - np.log(0.8)) / 2.0
        assert loss == pytest.approx(expected, abs=1e-12)
        assert loss == pytest.approx(0.16425, abs=1e-4)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            raw = rng.uniform(0.05, 0.95)
            p = ad.constant(np.array([[raw], [1 - raw]]))
            assert classification_loss([p], [int(rng.integers(2))]).value[0, 0] > 0

    def test_empty_batch_rejected(self):
        with pytest.raises(ShapeError):
            classification_loss([], [])


class TestGradReverse:
    def test_forward_is_bit_identical(self):
        x = ad.parameter(np.array([[1.1, -2.2], [0.0, 3.3]]))
        out = grad_reverse(x, 0.7)
        assert out.value is x.value

    def test_lambda_zero_blocks_gradient(self):
        x = ad.parameter(np.ones((2, 2)))
        backward(ad.sum_all(grad_reverse(x, 0.0)))
        np.testing.assert_array_equal(x.grad, np.zeros((2, 2)))

    def test_half_lambda_negates_half_gradient(self):
        x = ad.parameter(np.ones((2, 3)))
        backward(ad.sum_all(grad_reverse(x, 0.5)))
        np.testing.assert_allclose(x.grad, -0.5)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigError):
            grad_reverse(ad.parameter(np.ones((1, 1))), -0.1)


class TestDiscriminator:
    def make_params(self, rng, f_dim=3, hidden=4, zero=False):
        if zero:
            mk = lambda r, c: ad.parameter(np.zeros((r, c)))
        else:
            mk = lambda r, c: ad.parameter(rng.standard_normal((r, c)) * 0.5)
        return DiscriminatorParams(mk(hidden, f_dim), mk(hidden, 1),
                                   mk(2, hidden), mk(2, 1))

    def test_zero_parameters_give_even_split(self):
        rng = np.random.default_rng(14)
        params = self.make_params(rng, zero=True)
        p = domain_discriminate(ad.constant(rng.standard_normal((5, 3))),
                                params, 0.5).value
        np.testing.assert_allclose(p, [[0.5], [0.5]])

    def test_forward_independent_of_lambda(self):
        rng = np.random.default_rng(15)
        params = self.make_params(rng)
        z = ad.constant(rng.standard_normal((5, 3)))
        a = domain_discriminate(z, params, 0.0).value
        b = domain_discriminate(z, params, 0.9999).value
        np.testing.assert_array_equal(a, b)

    def test_matches_scripted_composition(self):
        rng = np.random.default_rng(16)
        params = self.make_params(rng)
        zv = rng.standard_normal((5, 3))
        p = domain_discriminate(ad.constant(zv), params, 0.3).value
        pooled = zv.mean(axis=0, keepdims=True).T
        h = params.w1.value @ pooled + params.b1.value
        h = np.where(h >= 0, h, 0.2 * h)
        logits = params.w2.value @ h + params.b2.value
        e = np.exp(logits - logits.max())
        np.testing.assert_allclose(p, e / e.sum(), atol=1e-12)


class TestTotalLoss:
    def _setup(self, rng, lam):
        from ltsgat.verification import tiny_model
        model = tiny_model(seed=17, with_discriminator=True)
        xs = rng.standard_normal((2, 4, 3, 2))
        xt = rng.standard_normal((2, 4, 3, 2))
        return model, xs, xt

    def _grads(self, model):
        return {n: (p.grad.copy() if p.grad is not None
                    else np.zeros_like(p.value))
                for n, p in model.registry.items()}

    def _disc_no_grl(self, model, z):
        d = model.discriminator
        hidden = ad.leaky_relu(ad.affine(d.w1, mean_pool(z), d.b1), 0.2)
        return ad.softmax(ad.affine(d.w2, hidden, d.b2), axis=0)

    def _single_pass(self, model, xs, xt, lam):
        fwd_s = model.forward_batch(xs)
        fwd_t = model.forward_batch(xt)
        probs = [model.class_probabilities(z) for z in fwd_s.z_prime]
        dom = ([model.domain_probabilities(z, lam) for z in fwd_s.z_prime]
               + [model.domain_probabilities(z, lam) for z in fwd_t.z_prime])
        return total_loss(probs, [0, 1], dom, [0, 0, 1, 1])

    def _two_pass(self, model, xs, xt):
        """Independent oracle: separate backward passes without any GRL."""
        model.registry.zero_grads()
        fwd_s = model.forward_batch(xs)
        probs = [model.class_probabilities(z) for z in fwd_s.z_prime]
        backward(classification_loss(probs, [0, 1]))
        g_c = self._grads(model)
        model.registry.zero_grads()
        fwd_s = model.forward_batch(xs)
        fwd_t = model.forward_batch(xt)
        dom = ([self._disc_no_grl(model, z) for z in fwd_s.z_prime]
               + [self._disc_no_grl(model, z) for z in fwd_t.z_prime])
        backward(classification_loss(dom, [0, 0, 1, 1]))
        g_d = self._grads(model)
        model.registry.zero_grads()
        return g_c, g_d

    @pytest.mark.parametrize("lam", [0.0, 0.5, 0.9999])
    def test_grl_equivalence_two_pass_oracle(self, lam):
        rng = np.random.default_rng(18)
        model, xs, xt = self._setup(rng, lam)
        model.registry.zero_grads()
        loss, l_c, l_d = self._single_pass(model, xs, xt, lam)
        assert loss.value[0, 0] == pytest.approx(
            l_c.value[0, 0] + l_d.value[0, 0])
        backward(loss)
        single = self._grads(model)
        g_c, g_d = self._two_pass(model, xs, xt)
        for name in single:
            if name.startswith("discriminator/"):
                expected = g_d[name]
            elif name.startswith("classifier/"):
                expected = g_c[name]
            else:
                expected = g_c[name] - lam * g_d[name]
            np.testing.assert_allclose(single[name], expected, atol=1e-10)

    def test_lambda_zero_matches_classification_only(self):
        rng = np.random.default_rng(19)
        model, xs, xt = self._setup(rng, 0.0)
        model.registry.zero_grads()
        loss, _, _ = self._single_pass(model, xs, xt, 0.0)
        backward(loss)
        single = self._grads(model)
        g_c, _ = self._two_pass(model, xs, xt)
        for name in single:
            if name.startswith("discriminator/"):
                continue
            np.testing.assert_allclose(single[name], g_c[name], atol=1e-12)

    def test_uncertain_discriminator_costs_ln2(self):
        rng = np.random.default_rng(20)
        model, xs, xt = self._setup(rng, 0.5)
        for node in (model.discriminator.w1, model.discriminator.b1,
                     model.discriminator.w2, model.discriminator.b2):
            node.value[:] = 0.0
        _, _, l_d = self._single_pass(model, xs, xt, 0.5)
        assert l_d.value[0, 0] == pytest.approx(np.log(2.0), abs=1e-12)

    def test_classify_invariant_under_node_permutation(self):
        rng = np.random.default_rng(21)
        params = ClassifierParams(ad.parameter(rng.standard_normal((2, 3))),
                                  ad.parameter(rng.standard_normal((2, 1))))
        zv = rng.standard_normal((6, 3))
        perm = rng.permutation(6)
        a = classify(ad.constant(zv), params).value
        b = classify(ad.constant(zv[perm]), params).value
        np.testing.assert_allclose(a, b, atol=1e-12)
