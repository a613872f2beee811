import math
import re

import numpy as np
import pytest
from helpers import check_gradients

from ames import autodiff as ad
from ames.autodiff import Parameter, Tape
from ames.config import RunConfig
from ames.data import Dataset, synth_sphere_communities, synth_tree
from ames.dgm import NodeRewardState, graph_loss
from ames.errors import ContractError, DivergenceError
from ames.gnn import build_model
from ames.manifolds import parse_spaces
from ames.trainer import (
    Adam,
    TrainData,
    accuracy,
    cross_entropy,
    format_accuracy,
    make_folds,
    run_cross_validation,
    sampling_rngs,
    train_step,
)

RESULT = re.compile(r"^[0-9]+\.[0-9]{2} ± [0-9]+\.[0-9]{2}$")


class TestAdam:
    def test_zero_gradient_no_decay(self):
        p = Parameter("p", [[1.5, -2.0]])
        Adam(0.1).step([p], [np.zeros((1, 2))])
        assert p.value.tolist() == [[1.5, -2.0]]

    def test_first_step(self):
        p = Parameter("p", [[0.0]])
        Adam(0.1).step([p], [np.ones((1, 1))])
        assert p.value[0, 0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)

    def test_sign_follows_gradient(self, rng):
        g = rng.normal(size=(3, 3))
        p = Parameter("p", np.zeros((3, 3)))
        Adam(0.01).step([p], [g])
        assert (np.sign(p.value) == -np.sign(g)).all()

    def test_identical_grads_identical_moments(self, rng):
        a, b = Parameter("a", np.ones((2, 2))), Parameter("b", np.ones((2, 2)))
        opt = Adam(0.05, 1e-3)
        for _ in range(5):
            g = rng.normal(size=(2, 2))
            opt.step([a, b], [g, g.copy()])
        assert np.array_equal(opt.m["a"], opt.m["b"]) and np.array_equal(opt.v["a"], opt.v["b"])
        assert np.array_equal(a.value, b.value)

    def test_weight_decay_is_l2(self):
        p = Parameter("p", [[2.0]])
        opt = Adam(0.1, weight_decay=0.5)
        opt.step([p], [np.zeros((1, 1))])
        # gradient seen by Adam is wd * p = 1, so the first step is -lr
        assert p.value[0, 0] == pytest.approx(2.0 - 0.1, abs=1e-8)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            Adam(0.1).step([Parameter("p", [[1.0]])], [np.zeros((2, 1))])


class TestCrossEntropy:
    def test_uniform_logits(self):
        t = Tape()
        loss = cross_entropy(t.constant(np.zeros((4, 5))), [0, 1, 2, 3], np.ones(4, dtype=bool))
        assert loss.value[0, 0] == pytest.approx(math.log(5), abs=1e-12)

    def test_saturated(self):
        t = Tape()
        logits = np.array([[200.0, 0.0], [0.0, 200.0]])
        assert cross_entropy(t.constant(logits), [0, 1], [True, True]).value[0, 0] < 1e-12

    def test_mask_selects_rows(self):
        t = Tape()
        logits = np.array([[0.0, 0.0], [100.0, -100.0]])
        # only the uniform row counts
        assert cross_entropy(t.constant(logits), [0, 1], [True, False]).value[0, 0] == pytest.approx(math.log(2))

    def test_gradient(self, rng):
        for _ in range(20):
            logits = rng.normal(scale=2, size=(6, 4))
            labels = rng.integers(0, 4, size=6)
            mask = rng.uniform(size=6) < 0.7
            mask[0] = True
            assert check_gradients(lambda t, n: cross_entropy(n[0], labels, mask), [logits]) < 1e-4

    def test_empty_mask(self):
        with pytest.raises(ContractError):
            cross_entropy(Tape().constant(np.zeros((2, 2))), [0, 1], [False, False])

    def test_accuracy(self):
        logits = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        assert accuracy(logits, [0, 0, 0], [True, True, True]) == pytest.approx(2 / 3)


class TestFolds:
    def test_partition(self):
        plans = make_folds(103, 10, seed=5)
        tests = np.concatenate([p.test_idx for p in plans])
        assert sorted(tests.tolist()) == list(range(103))
        for p in plans:
            assert not set(p.train_idx) & set(p.test_idx)
            assert len(p.train_idx) + len(p.test_idx) == 103

    def test_seeded(self):
        a = make_folds(50, 5, seed=1)
        b = make_folds(50, 5, seed=1)
        assert all(np.array_equal(x.test_idx, y.test_idx) for x, y in zip(a, b))
        assert not np.array_equal(a[0].test_idx, make_folds(50, 5, seed=2)[0].test_idx)

    def test_too_many_folds(self):
        with pytest.raises(ContractError):
            make_folds(3, 10)


class TestFormat:
    def test_identical_accuracies(self):
        assert format_accuracy([0.5, 0.5, 0.5]) == "50.00 ± 0.00"

    def test_regex(self):
        assert RESULT.match(format_accuracy([0.8378, 0.80, 0.86]))


def tiny_data(rng, n=24):
    ds = synth_sphere_communities(3, n // 3, feature_dim=4, kappa=20.0, seed=int(rng.integers(1000)))
    return ds, TrainData.from_dataset(ds)


class TestTrainStep:
    def test_zero_reward_leaves_graph_module_untouched(self, rng):
        _, data = tiny_data(rng)
        model = build_model("pointcloud", 4, 3, parse_spaces("E+H"), k=2)
        t = Tape()
        out = model.forward(t, data.features, None, "train", sampling_rngs(model, 0, 0, 1))
        task = cross_entropy(out.logits, data.labels, np.ones(24, dtype=bool))
        total = task
        for g in out.graphs:
            total = ad.add(total, graph_loss(g, np.zeros(24)))
        t.backward(total)
        assert task.value[0, 0] > 0
        for dgm in model.dgms:
            for p in dgm.parameters():
                assert not t.param_grad(p).any()

    def test_replicas_equal_after_step(self, rng):
        _, data = tiny_data(rng)
        model = build_model("pointcloud", 4, 3, parse_spaces("E+H+S"), k=2)
        opt, rewards = Adam(1e-2), NodeRewardState.fresh(24)
        for epoch in range(1, 4):
            train_step(model, data, np.ones(24, dtype=bool), opt, rewards, sampling_rngs(model, 0, 0, epoch))
        assert model.replicas.max_difference() == 0.0

    def test_record_contents(self, rng):
        _, data = tiny_data(rng)
        model = build_model("pointcloud", 4, 3, parse_spaces("E+S"), k=2)
        out = train_step(model, data, np.ones(24, dtype=bool), Adam(1e-2), NodeRewardState.fresh(24), sampling_rngs(model, 0, 0, 1))
        assert out.record.alpha.shape == (2,) and out.record.fro.shape == (2,)
        assert abs(out.record.alpha.sum() - 1) < 1e-9

    def test_non_finite_input_is_divergence(self, rng):
        _, data = tiny_data(rng)
        data.features[0, 0] = np.inf
        model = build_model("pointcloud", 4, 3, [], k=2, variant="mlp")
        with pytest.raises(DivergenceError):
            train_step(model, data, np.ones(24, dtype=bool), Adam(1e-2), NodeRewardState.fresh(24))

    def run_losses(self, variant, spaces, lr, epochs=50):
        ds = synth_sphere_communities(3, 20, feature_dim=4, kappa=400.0, seed=0)
        data = TrainData.from_dataset(ds)
        model = build_model("pointcloud", 4, 3, parse_spaces(spaces) if spaces else [], k=3, seed=0, variant=variant)
        opt, rewards = Adam(lr, 1e-4), NodeRewardState.fresh(60)
        mask = np.ones(60, dtype=bool)
        losses = []
        for epoch in range(1, epochs + 1):
            rngs = sampling_rngs(model, 0, 0, epoch) if spaces else None
            losses.append(train_step(model, data, mask, opt, rewards, rngs, epoch=epoch).record.loss_task)
        return np.array(losses)

    def test_loss_non_increasing_on_separable_data(self):
        # fixed objective: the trainer without a resampled graph
        losses = self.run_losses("mlp", None, 1e-2)
        assert int(np.sum(np.diff(losses) > 0)) <= 5

    def test_loss_trend_with_resampled_graphs(self):
        losses = self.run_losses("ames", "E+H+S", 1e-2)
        assert losses[-10:].mean() < 0.5 * losses[:10].mean()


class TestCrossValidation:
    def config(self, **kw):
        base = dict(variant="ames", spaces="E+H", k=2, epochs=3, folds=3, kind="pointcloud", seed=11)
        base.update(kw)
        return RunConfig(**base)

    def test_deterministic(self):
        ds = synth_tree(3, 3, feature_dim=4, seed=1)
        a = run_cross_validation(self.config(), ds)
        b = run_cross_validation(self.config(), ds)
        assert a.formatted() == b.formatted()
        for fa, fb in zip(a.folds, b.folds):
            for ra, rb in zip(fa.records, fb.records):
                assert ra.loss_task == rb.loss_task and np.array_equal(ra.fro, rb.fro)

    def test_parallel_matches_sequential(self):
        ds = synth_tree(3, 3, feature_dim=4, seed=1)
        seq = run_cross_validation(self.config(), ds)
        par = run_cross_validation(self.config(), ds, parallel_folds=2)
        assert np.array_equal(seq.final_accuracies, par.final_accuracies)
        assert all(np.array_equal(a.records[-1].fro, b.records[-1].fro) for a, b in zip(seq.folds, par.folds))

    def test_variants_share_splits(self):
        ds = synth_tree(3, 3, feature_dim=4, seed=1)
        mlp = run_cross_validation(self.config(variant="mlp"), ds)
        assert len(mlp.folds) == 3 and mlp.space_labels == []
        assert RESULT.match(mlp.formatted())

    def test_epoch_override_and_fold_subset(self):
        ds = synth_tree(3, 3, feature_dim=4, seed=1)
        out = run_cross_validation(self.config(), ds, fold_ids=[1], epochs=2)
        assert [f.fold for f in out.folds] == [1]
        assert len(out.folds[0].records) == 2

    def test_identical_fold_accuracies_give_zero_stdev(self):
        ds = Dataset("const", np.ones((12, 2)), [0] * 12, 1)
        out = run_cross_validation(self.config(variant="mlp"), ds)
        assert out.std == 0.0 and out.formatted() == "100.00 ± 0.00"
