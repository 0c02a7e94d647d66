import numpy as np
import pytest

from kdrec.data_io import ModalityFeatureSet, fit_pca, gen_synthetic
from kdrec.graph import build_graph, normalized_adjacency, user_item_mean
from kdrec.numerics import component_rng, param_leaves
from kdrec.teacher import (ReductionLayer, TeacherModel, build_prompt_input,
                           modality_prompt, reduce_features)


def make_teacher(n_users=6, n_items=8, d=4, n_layers=2, dims=(10, 7),
                 lambda1=0.1, dropout=0.0, seed=0, n_obs=3):
    rng = np.random.default_rng(seed)
    feats = ModalityFeatureSet({f"m{k}": rng.normal(size=(n_items, dm))
                                for k, dm in enumerate(dims)})
    pairs = []
    for u in range(n_users):
        items = rng.choice(n_items, size=n_obs, replace=False)
        pairs.extend((u, int(i)) for i in items)
    graph = build_graph(pairs, n_users=n_users, n_items=n_items)
    reducers = {name: fit_pca(feats[name], d, name=name) for name in feats.names}
    teacher = TeacherModel(n_users, n_items, d, n_layers, feats, reducers,
                           dropout_rate=dropout, lambda1=lambda1, seed=seed)
    return teacher, graph


class TestBuildPrompt:
    def test_reduced_features_are_centered(self):
        teacher, _ = make_teacher()
        # h averages PCA-reduced features of the fit data itself -> ~0,
        # so with identity weights the prompt collapses to the bias
        assert np.abs(teacher._prompt_input).max() < 1e-12
        teacher.prompt.weight.value[:] = np.eye(4)
        teacher.prompt.bias.value[:] = 0.0
        p = teacher.build_prompt()
        np.testing.assert_allclose(p.value, np.zeros((1, 4)), atol=1e-12)

    def test_single_modality_single_item_degenerate_average(self):
        feats = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        pca = fit_pca(feats, 1)
        h = build_prompt_input({"m": pca}, ModalityFeatureSet({"m": feats}))
        np.testing.assert_allclose(h[0], pca.reduce(feats).mean(axis=0), atol=1e-12)

    def test_matches_scalar_loop_oracle(self):
        teacher, _ = make_teacher(n_items=2, dims=(5, 4), d=2, seed=3, n_obs=1)
        p = teacher.build_prompt().value[0]
        # direct evaluation: h = mean_m mean_i reduce_m(x_i); p = W^T h + b
        hs = []
        for name in teacher.features.names:
            rows = [teacher.pca[name].reduce(teacher.features[name][i])
                    for i in range(2)]
            hs.append(np.mean(rows, axis=0))
        h = np.mean(hs, axis=0)
        expected = teacher.prompt.weight.value.T @ h + teacher.prompt.bias.value[0]
        np.testing.assert_allclose(p, expected, atol=1e-12)


class TestModalityPrompt:
    def test_zero_prompt_gives_zero(self):
        x = np.random.default_rng(0).normal(size=(9, 6))
        pca = fit_pca(x, 3)
        out = modality_prompt(np.zeros(3), pca, x)
        np.testing.assert_array_equal(out, np.zeros((9, 6)))

    def test_orthogonal_reduction_gives_zero(self):
        x = np.random.default_rng(1).normal(size=(9, 6))
        pca = fit_pca(x, 2)
        v = x[4]
        red = pca.reduce(v)
        p = np.array([-red[1], red[0]])  # orthogonal to reduce(v)
        out = modality_prompt(p, pca, v)
        np.testing.assert_allclose(out, np.zeros(6), atol=1e-9)

    def test_one_dimensional_pca_hand_values(self):
        x = np.random.default_rng(2).normal(size=(12, 4))
        pca = fit_pca(x, 1)
        p = np.array([0.7])
        v = x[2]
        s = float(p @ pca.reduce(v))
        expected = pca.lift(s * p) - pca.mean
        np.testing.assert_allclose(modality_prompt(p, pca, v), expected, atol=1e-12)


class TestReduceFeatures:
    def _layer(self, d_m=10, d=4, lambda1=0.5, dropout=0.0, seed=0):
        rng = component_rng(seed, "test-layer")
        return ReductionLayer("m", d_m, d, dropout, lambda1, rng)

    def test_lambda1_zero_is_plain_affine(self):
        layer = self._layer(lambda1=0.0)
        x = np.random.default_rng(3).normal(size=(6, 10))
        p_m = np.random.default_rng(4).normal(size=(6, 10))
        out = reduce_features(layer, x, p_m, training=False)
        np.testing.assert_allclose(
            out, x @ layer.weight.value + layer.bias.value, atol=1e-12)

    def test_zero_weight_constant_bias(self):
        layer = self._layer()
        layer.weight.value[:] = 0.0
        layer.bias.value[:] = 7.5
        out = reduce_features(layer, np.ones((3, 10)), np.zeros((3, 10)))
        np.testing.assert_array_equal(out, np.full((3, 4), 7.5))

    def test_matches_scalar_loop_oracle(self):
        layer = self._layer(d_m=10, d=4, lambda1=0.3)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 10))
        p_m = rng.normal(size=(2, 10))
        out = reduce_features(layer, x, p_m)
        for r in range(2):
            for c in range(4):
                acc = layer.bias.value[0, c]
                for k in range(10):
                    acc += (x[r, k] + 0.3 * p_m[r, k]) * layer.weight.value[k, c]
                assert out[r, c] == pytest.approx(acc, abs=1e-12)

    def test_nonfinite_input_rejected(self):
        layer = self._layer()
        with pytest.raises(ValueError):
            reduce_features(layer, np.full((2, 10), np.inf), np.zeros((2, 10)))


class TestTeacherForward:
    def test_zero_layers_contract(self):
        teacher, graph = make_teacher(n_layers=0, lambda1=0.2)
        adj = normalized_adjacency(graph)
        uagg = user_item_mean(graph)
        out = teacher.forward(adj, uagg, training=False)
        for name in teacher.features.names:
            p = teacher.build_prompt().value[0]
            p_m = modality_prompt(p, teacher.pca[name], teacher.features[name])
            expected_items = reduce_features(teacher.reducers[name],
                                             teacher.features[name], p_m)
            fu, fi = out.modal[name]
            np.testing.assert_allclose(fi.value, expected_items, atol=1e-10)
            np.testing.assert_allclose(fu.value, uagg @ expected_items, atol=1e-10)

    def test_matches_dense_propagation_oracle(self):
        teacher, graph = make_teacher(n_users=3, n_items=5, n_layers=2, n_obs=2)
        adj = normalized_adjacency(graph)
        uagg = user_item_mean(graph)
        out = teacher.forward(adj, uagg, training=False)
        dense = adj.toarray()
        z0 = np.vstack([teacher.user_emb.value, teacher.item_emb.value])
        acc, z = z0.copy(), z0.copy()
        for _ in range(2):
            z = dense @ z
            acc += z
        acc /= 3
        np.testing.assert_allclose(np.vstack([out.user.value, out.item.value]),
                                   acc, atol=1e-10)

    def test_modality_path_linear_without_prompt_and_bias(self):
        teacher, graph = make_teacher(lambda1=0.0)
        for layer in teacher.reducers.values():
            layer.bias.value[:] = 0.0
        adj = normalized_adjacency(graph)
        uagg = user_item_mean(graph)
        out1 = teacher.forward(adj, uagg, training=False)
        for name in teacher.features.names:
            teacher.features.features[name] *= 2.0
        teacher2 = TeacherModel(teacher.n_users, teacher.n_items, teacher.d,
                                teacher.n_layers, teacher.features, teacher.pca,
                                dropout_rate=0.0, lambda1=0.0, seed=teacher.seed)
        for layer in teacher2.reducers.values():
            layer.bias.value[:] = 0.0
        out2 = teacher2.forward(adj, uagg, training=False)
        for name in teacher.features.names:
            np.testing.assert_allclose(out2.modal[name][1].value,
                                       2.0 * out1.modal[name][1].value, atol=1e-10)

    def test_dropout_requires_rng_in_training(self):
        teacher, graph = make_teacher(dropout=0.5)
        adj = normalized_adjacency(graph)
        uagg = user_item_mean(graph)
        with pytest.raises(ValueError):
            teacher.forward(adj, uagg, training=True)


class TestTeacherScore:
    def test_zero_modalities_reduce_to_id_product(self):
        teacher, graph = make_teacher(n_layers=0)
        adj = normalized_adjacency(graph)
        uagg = user_item_mean(graph)
        for layer in teacher.reducers.values():
            layer.weight.value[:] = 0.0
            layer.bias.value[:] = 0.0
        teacher.prompt.bias.value[:] = 0.0
        teacher.prompt.weight.value[:] = 0.0
        expected = teacher.user_emb.value @ teacher.item_emb.value.T
        np.testing.assert_allclose(teacher.score_matrix(adj, uagg), expected,
                                   atol=1e-10)

    def test_matches_scalar_loop_oracle(self):
        teacher, graph = make_teacher(seed=8)
        adj = normalized_adjacency(graph)
        uagg = user_item_mean(graph)
        state = teacher.final_state(adj, uagg)
        u, i = 2, 5
        expected = float(state["user"][u] @ state["item"][i])
        n_m = len(state["modal"])
        for fu, fi in state["modal"].values():
            expected += float(fu[u] @ fi[i]) / n_m
        assert teacher.score(adj, uagg, u, i) == pytest.approx(expected, abs=1e-12)
        np.testing.assert_allclose(teacher.score_matrix(adj, uagg)[u, i],
                                   expected, atol=1e-12)


class TestPromptFreeInvariant:
    def test_lambda1_zero_matches_promptless_model_and_kills_gradients(self):
        teacher, graph = make_teacher(lambda1=0.0, seed=11)
        adj = normalized_adjacency(graph)
        uagg = user_item_mean(graph)
        leaves = param_leaves(teacher.params())
        out = teacher.forward(adj, uagg, training=False, leaves=leaves)
        loss = None
        for fu, fi in out.modal.values():
            term = (fu.sum() + fi.sum())
            loss = term if loss is None else loss + term
        loss.backward()
        assert leaves["teacher.prompt.weight"].grad is None or \
            np.abs(leaves["teacher.prompt.weight"].grad).max() == 0.0
        assert leaves["teacher.prompt.bias"].grad is None or \
            np.abs(leaves["teacher.prompt.bias"].grad).max() == 0.0

        # outputs equal a direct reduction with the prompt path deleted
        for name in teacher.features.names:
            layer = teacher.reducers[name]
            plain = teacher.features[name] @ layer.weight.value + layer.bias.value
            expected_i = plain
            if teacher.n_layers == 0:
                np.testing.assert_allclose(out.modal[name][1].value, expected_i,
                                           atol=1e-12)


class TestFreezingAndCounts:
    def test_freeze_backbone_leaves_prompt_trainable(self):
        teacher, _ = make_teacher()
        teacher.freeze_backbone()
        frozen = {p.name for p in teacher.params() if p.frozen}
        live = {p.name for p in teacher.params() if not p.frozen}
        assert live == {"teacher.prompt.weight", "teacher.prompt.bias"}
        assert "teacher.user_emb" in frozen
        assert all(name.startswith("teacher.reduce.") or "emb" in name
                   for name in frozen)

    def test_param_count_with_feature_storage(self):
        teacher, _ = make_teacher(n_users=6, n_items=8, d=4, dims=(10, 7))
        base = (6 * 4 + 8 * 4          # ID tables
                + 4 * 4 + 4            # prompt weight + bias
                + 10 * 4 + 4           # reduction m0
                + 7 * 4 + 4)           # reduction m1
        assert teacher.param_count() == base
        assert teacher.param_count(include_feature_storage=True) == \
            base + 8 * 10 + 8 * 7
