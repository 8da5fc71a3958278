import math

import numpy as np
import pytest

from attnpool import autodiff as ad
from attnpool import training as tr
from attnpool.autodiff import Tensor
from attnpool.datasets import ColorsConfig, gen_colors
from attnpool.graphs import DatasetSplit, Graph
from attnpool.models import Model, ModelConfig
from attnpool.training import Adam, TrainConfig, kl_attention_loss, mse_loss

from conftest import assert_grad_close, finite_difference


def tiny_colors(seed=0, n_train=60, n_val=40):
    cfg = ColorsConfig(n_train=n_train, n_val=n_val, n_test=10,
                       node_range_large=(26, 30), seed=seed)
    splits, _ = gen_colors(cfg)
    return splits


def gin_cfg(pool_mode="none", hidden=(16, 16), mlp_hidden=32, **kw):
    extra = dict(pool_threshold=0.05, pool_after=(0,), attn_kind="linear") \
        if pool_mode == "threshold" else {}
    extra.update(kw)
    return ModelConfig(task="colors", kind="gin", in_dim=4, hidden=hidden,
                       mlp_hidden=mlp_hidden, readout="sum",
                       pool_mode=pool_mode, **extra)


class TestMseLoss:
    def test_zero_at_match(self):
        assert mse_loss(Tensor([[5.0]]), 5.0).item() == 0.0

    def test_squared_error(self):
        assert mse_loss(Tensor([[3.0]]), 5.0).item() == 4.0

    def test_gradient(self):
        p = Tensor([[3.0]], requires_grad=True)
        ad.backward(mse_loss(p, 5.0))
        np.testing.assert_allclose(p.grad, [[2 * (3.0 - 5.0)]], atol=1e-12)
        fd = finite_difference(lambda: (p.data[0, 0] - 5.0) ** 2, p)
        assert_grad_close(p.grad, fd)


class TestKlLoss:
    def test_zero_when_equal(self):
        gt = np.array([0.5, 0.25, 0.25])
        assert kl_attention_loss(gt, Tensor.column(gt), 100.0, 3).item() == 0.0

    def test_all_zero_target_skipped(self):
        alpha = Tensor.column([0.5, 0.5])
        out = kl_attention_loss(np.zeros(2), alpha, 100.0, 2)
        assert out.item() == 0.0
        assert out._rec is None  # truly skipped, not just numerically zero

    def test_reference_value(self):
        # 100/2 * (1 * log(1 / 0.5)) = 50 log 2
        out = kl_attention_loss(np.array([1.0, 0.0]), Tensor.column([0.5, 0.5]),
                                100.0, 2)
        assert out.item() == pytest.approx(50 * math.log(2), abs=1e-9)

    def test_negative_target_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            kl_attention_loss(np.array([1.2, -0.2]), Tensor.column([0.5, 0.5]), 1.0, 2)

    def test_nonnegative_and_beta_linear(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 12))
            gt = rng.dirichlet(np.ones(n))
            alpha = rng.dirichlet(np.ones(n))
            l1 = kl_attention_loss(gt, Tensor.column(alpha), 1.0, n).item()
            l2 = kl_attention_loss(gt, Tensor.column(alpha), 2.0, n).item()
            assert l1 >= -1e-12
            assert l2 == 2 * l1

    def test_gradient_wrt_preactivations(self):
        rng = np.random.default_rng(1)
        gt = rng.dirichlet(np.ones(5))
        pre = Tensor(rng.standard_normal((5, 1)), requires_grad=True)

        def run():
            return kl_attention_loss(gt, ad.softmax_vector(pre), 100.0, 5)

        def numeric():
            e = np.exp(pre.data - pre.data.max())
            a = (e / e.sum()).ravel()
            return float(100.0 / 5 * (gt * np.log(gt / np.maximum(a, 1e-15))).sum())

        ad.backward(run())
        assert_grad_close(pre.grad, finite_difference(numeric, pre))


class TestAdam:
    def test_zero_grad_drifts_only_by_weight_decay(self):
        p = Tensor([[1.0]], requires_grad=True)
        opt = Adam({"p": p}, lr=0.1, weight_decay=0.0)
        p.grad = np.zeros((1, 1))
        opt.step()
        assert p.data[0, 0] == 1.0

        opt_wd = Adam({"p": p}, lr=0.1, weight_decay=1e-2)
        p.grad = np.zeros((1, 1))
        opt_wd.step()
        assert p.data[0, 0] != 1.0

    def test_first_step_on_quadratic(self):
        # f(w) = w^2 at w=1: g=2; by hand m=0.2, v=0.004, m_hat=2, v_hat=4
        p = Tensor([[1.0]], requires_grad=True)
        opt = Adam({"p": p}, lr=1e-3, weight_decay=0.0)
        p.grad = np.array([[2.0]])
        opt.step()
        expected = 1.0 - 1e-3 * 2.0 / (math.sqrt(4.0) + 1e-8)
        assert p.data[0, 0] == pytest.approx(expected, abs=1e-15)

    def test_zero_lr_keeps_params(self):
        rng = np.random.default_rng(2)
        p = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        before = p.data.copy()
        opt = Adam({"p": p}, lr=0.0, weight_decay=0.0)
        p.grad = rng.standard_normal((3, 3))
        opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_deterministic_trajectory(self):
        def run():
            p = Tensor([[1.0, -2.0]], requires_grad=True)
            opt = Adam({"p": p}, lr=1e-2, weight_decay=1e-4)
            for t in range(10):
                p.grad = np.array([[math.sin(t), math.cos(t)]])
                opt.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())


class TestTrainConfig:
    def test_decay_must_precede_end(self):
        with pytest.raises(ValueError, match="decay"):
            TrainConfig(epochs=10, lr_decay_epochs=(10,))

    def test_decay_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            TrainConfig(epochs=100, lr_decay_epochs=(90, 85))


class TestRestrictTarget:
    def test_renormalizes_survivors(self):
        t = tr.restrict_target(np.array([0.5, 0.3, 0.2]), [0, 2])
        np.testing.assert_allclose(t, [0.5 / 0.7, 0.2 / 0.7], atol=1e-12)

    def test_zero_mass_stays_zero(self):
        t = tr.restrict_target(np.array([0.0, 1.0, 0.0]), [0, 2])
        np.testing.assert_array_equal(t, [0.0, 0.0])


class TestTrainLoop:
    def test_history_and_decay_schedule(self):
        splits = tiny_colors()
        cfg = TrainConfig(epochs=4, lr_decay_epochs=(2,), batch_size=16, seed=1)
        model, history = tr.train(gin_cfg(), splits["train"], splits["val"], cfg)
        assert [h["epoch"] for h in history] == [1, 2, 3, 4]
        assert history[0]["lr"] == pytest.approx(1e-3)
        assert history[-1]["lr"] == pytest.approx(1e-4)
        assert all(np.isfinite(h["train_loss"]) for h in history)

    def test_gt_supervision_requires_targets(self):
        splits = tiny_colors()
        bare = [Graph(n=g.n, edges=g.edges, features=g.features, label=g.label)
                for g in splits["train"].graphs[:8]]
        split = DatasetSplit(name="train", graphs=bare, feature_dim=4)
        cfg = TrainConfig(epochs=1, lr_decay_epochs=(), supervision="gt")
        with pytest.raises(ValueError, match="gt attention"):
            tr.train(gin_cfg("threshold"), split, splits["val"], cfg)

    def test_weak_supervision_requires_labels(self):
        splits = tiny_colors()
        cfg = TrainConfig(epochs=1, lr_decay_epochs=(), supervision="weak")
        with pytest.raises(ValueError, match="weak label"):
            tr.train(gin_cfg("threshold"), splits["train"], splits["val"], cfg)

    def test_beta_zero_matches_unsupervised_exactly(self):
        splits = tiny_colors(seed=4)
        base = dict(epochs=3, lr_decay_epochs=(), batch_size=16, seed=7)
        _, hist_unsup = tr.train(gin_cfg("threshold"), splits["train"],
                                 splits["val"], TrainConfig(supervision="none", **base))
        _, hist_b0 = tr.train(gin_cfg("threshold"), splits["train"],
                              splits["val"], TrainConfig(supervision="gt", beta=0.0, **base))
        for a, b in zip(hist_unsup, hist_b0):
            assert a["train_loss"] == b["train_loss"]
            assert a["val_acc"] == b["val_acc"]

    def test_training_is_deterministic(self):
        splits = tiny_colors(seed=5)
        cfg = TrainConfig(epochs=2, lr_decay_epochs=(), batch_size=16, seed=3,
                          supervision="gt")
        runs = [tr.train(gin_cfg("threshold"), splits["train"], splits["val"], cfg)
                for _ in range(2)]
        assert runs[0][1] == runs[1][1]
        for name, p in runs[0][0].parameters().items():
            np.testing.assert_array_equal(p.data, runs[1][0].parameters()[name].data)

    def test_frozen_optimal_projection_reaches_99_val(self):
        # with the counting projection planted and frozen, the rest of the
        # network only has to map pooled color mass to the count
        cfg = ColorsConfig(n_train=500, n_val=500, n_test=10,
                           node_range_large=(26, 30), seed=21)
        splits, _ = gen_colors(cfg)
        model_cfg = gin_cfg("threshold", hidden=(64, 64), mlp_hidden=256,
                            attn_frozen=True)
        train_cfg = TrainConfig(epochs=100, lr_decay_epochs=(90,),
                                supervision="none", seed=0)
        from attnpool.models import Model
        from attnpool.rng import substream

        planted = Model(model_cfg, substream(train_cfg.seed, "init"))
        planted.set_projection([0.0, 1.0, 0.0, 0.0])
        _, history = tr.train(model_cfg, splits["train"], splits["val"],
                              train_cfg, initial_model=planted)
        best = max(h["val_acc"] for h in history)
        np.testing.assert_array_equal(
            planted.attention[0].p.data.ravel(), [0.0, 1.0, 0.0, 0.0])
        assert best >= 99.0

    def test_loss_trends_down_early(self):
        splits = tiny_colors(seed=6)
        ok = 0
        for seed in range(10):
            cfg = TrainConfig(epochs=5, lr_decay_epochs=(), batch_size=16, seed=seed)
            _, history = tr.train(gin_cfg(), splits["train"], splits["val"], cfg)
            losses = [h["train_loss"] for h in history]
            if all(b <= a + 1e-9 for a, b in zip(losses, losses[1:])):
                ok += 1
        assert ok >= 8

    def test_full_loop_gradient_matches_finite_differences(self):
        # one small graph, whole-model loss, every parameter
        splits = tiny_colors(seed=8)
        g = splits["train"].graphs[0]
        model = Model(gin_cfg("threshold", hidden=(6, 6), mlp_hidden=8),
                      np.random.default_rng(9))
        cfg = TrainConfig(supervision="gt", beta=10.0, epochs=1, lr_decay_epochs=())

        def run():
            return tr.graph_loss(model, g, cfg)

        ad.backward(run())
        grads = {k: p.grad.copy() for k, p in model.parameters().items()
                 if p.grad is not None}

        for name, p in model.parameters().items():
            if name not in grads:
                continue

            def numeric():
                with ad.no_grad():
                    return run().item()

            assert_grad_close(grads[name], finite_difference(numeric, p),
                              rel_tol=1e-3, abs_tol=1e-7)


class TestOcclusion:
    class _Stub:
        """Prediction table keyed by node count paths."""

        def __init__(self, full, removed):
            self.config = ModelConfig(task="colors", kind="gin", in_dim=1,
                                      hidden=(2,), mlp_hidden=2)
            self.full = full
            self.removed = removed

        def predict(self, graph):
            if graph.n == self.base_n:
                return self.full
            return self.removed[self.missing_node(graph)]

        def missing_node(self, graph):
            # stub graphs carry node ids in their single feature column
            present = set(graph.features[:, 0].astype(int))
            return next(i for i in range(self.base_n) if i not in present)

    def _graph(self, n):
        return Graph(n=n, edges=[], features=np.arange(n, dtype=float)[:, None], label=0)

    def test_direct_arithmetic(self):
        stub = self._Stub(5.0, {0: 5.0, 1: 4.0, 2: 5.0})
        stub.base_n = 3
        out = tr.occlusion_attention(stub, self._graph(3))
        np.testing.assert_allclose(out, [0.0, 1.0, 0.0], atol=1e-12)

    def test_insensitive_model_gives_uniform(self):
        stub = self._Stub(5.0, {0: 5.0, 1: 5.0, 2: 5.0, 3: 5.0})
        stub.base_n = 4
        out = tr.occlusion_attention(stub, self._graph(4))
        np.testing.assert_allclose(out, [0.25] * 4, atol=1e-12)

    def test_single_node_shortcut(self):
        stub = self._Stub(1.0, {})
        stub.base_n = 1
        np.testing.assert_array_equal(tr.occlusion_attention(stub, self._graph(1)), [1.0])

    def test_probability_vector_and_permutation_consistency(self):
        splits = tiny_colors(seed=10)
        model = Model(gin_cfg(hidden=(8, 8), mlp_hidden=8), np.random.default_rng(11))
        rng = np.random.default_rng(12)
        for g in splits["train"].graphs[:5]:
            alpha = tr.occlusion_attention(model, g)
            assert alpha.sum() == pytest.approx(1.0, abs=1e-9)
            assert (alpha >= 0).all()
            perm = rng.permutation(g.n)
            inv = np.argsort(perm)
            edges = sorted(tuple(sorted((int(inv[i]), int(inv[j])))) for i, j in g.edges)
            gp = Graph(n=g.n, edges=edges, features=g.features[perm], label=g.label)
            alpha_p = tr.occlusion_attention(model, gp)
            np.testing.assert_allclose(alpha_p, alpha[perm], atol=1e-9)

    def test_pooling_model_rejected(self):
        model = Model(gin_cfg("threshold"), np.random.default_rng(13))
        with pytest.raises(ValueError, match="global-pooling"):
            tr.occlusion_attention(model, self._graph(3))


class TestWeakLabels:
    def test_round_trip(self, tmp_path):
        labels = [np.array([0.25, 0.75]), np.array([1.0]), np.array([0.2, 0.3, 0.5])]
        path = tmp_path / "weak.jsonl"
        tr.save_weak_labels(labels, path)
        back = tr.load_weak_labels(path)
        assert len(back) == 3
        for a, b in zip(labels, back):
            np.testing.assert_array_equal(a, b)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "weak.jsonl"
        path.write_text('{"index": 0, "alpha_ws": [1.0]}\nnot json\n')
        with pytest.raises(ValueError, match="line 2"):
            tr.load_weak_labels(path)


class TestWeaksupPipeline:
    def test_architecture_mismatch_rejected(self):
        splits = tiny_colors(seed=14)
        cfg_a = gin_cfg("threshold", hidden=(16, 16))
        cfg_b = gin_cfg("none", hidden=(8, 8))
        with pytest.raises(ValueError, match="share the conv architecture"):
            tr.weaksup_pipeline(cfg_a, cfg_b, splits["train"], splits["val"],
                                TrainConfig(supervision="weak", epochs=1, lr_decay_epochs=()),
                                TrainConfig(supervision="none", epochs=1, lr_decay_epochs=()))

    def test_pipeline_runs_and_is_deterministic(self, tmp_path):
        splits = tiny_colors(seed=15, n_train=30, n_val=20)
        cfg_a = gin_cfg("threshold", hidden=(8, 8), mlp_hidden=8)
        cfg_b = gin_cfg("none", hidden=(8, 8), mlp_hidden=8)
        t_a = TrainConfig(supervision="weak", epochs=2, lr_decay_epochs=(), seed=5)
        t_b = TrainConfig(supervision="none", epochs=2, lr_decay_epochs=(), seed=5)
        files = []
        for run in ("a", "b"):
            out = tr.weaksup_pipeline(cfg_a, cfg_b, splits["train"], splits["val"], t_a, t_b)
            assert len(out["weak_labels"]) == len(splits["train"].graphs)
            for alpha in out["weak_labels"]:
                assert alpha.sum() == pytest.approx(1.0, abs=1e-9)
            path = tmp_path / f"weak_{run}.jsonl"
            tr.save_weak_labels(out["weak_labels"], path)
            files.append(path.read_bytes())
        assert files[0] == files[1]


class TestRunDir:
    def test_layout(self, tmp_path):
        splits = tiny_colors(seed=16, n_train=20, n_val=10)
        cfg = TrainConfig(epochs=2, lr_decay_epochs=(), seed=0)
        model_cfg = gin_cfg(hidden=(8, 8), mlp_hidden=8)
        model, history = tr.train(model_cfg, splits["train"], splits["val"], cfg)
        tr.write_run_dir(tmp_path / "run", model, history, model_cfg, cfg)
        assert (tmp_path / "run" / "config.json").exists()
        assert (tmp_path / "run" / "checkpoint.json").exists()
        lines = (tmp_path / "run" / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_acc,lr"
        assert len(lines) == 3
