"""Scores, swapped loss, step gradients, mode equivalences, training loop."""

import math

import numpy as np
import pytest

from goca.oracle import finite_diff_grad
from goca.ot_core import SolverConfig
from goca.prototypes import ProtoOptConfig
from goca.ssl_engine import (
    AugmentedBatch,
    TrainConfig,
    baseline_step,
    encode,
    encode_avg,
    extract_features,
    goca_step,
    init_params,
    prototype_scores,
    swapped_loss,
    train,
)
from goca.synth_data import SynthConfig, generate

from _util import random_unit_rows


def _params_to_vec(params):
    keys = sorted(params)
    return np.concatenate([params[k].ravel() for k in keys]), keys


def _vec_to_params(vec, keys, template):
    out = {}
    offset = 0
    for k in keys:
        size = template[k].size
        out[k] = vec[offset : offset + size].reshape(template[k].shape)
        offset += size
    return out


def _grad_vec(grads, keys):
    return np.concatenate([grads[k].ravel() for k in keys])


def _fast_cfg(mode, **kwargs):
    defaults = dict(
        mode=mode,
        temperature=0.5,
        solver=SolverConfig(lambda1=0.5, lambda2=0.1, tolerance=1e-10, max_iters=20_000),
    )
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def _tiny_batch(rng, m=8, in_a=7, in_b=6):
    return AugmentedBatch(
        a_t=rng.standard_normal((m, in_a)),
        a_s=rng.standard_normal((m, in_a)),
        b_t=rng.standard_normal((m, in_b)),
        b_s=rng.standard_normal((m, in_b)),
    )


def _tiny_setup(mode, seed=0):
    rng = np.random.default_rng(seed)
    params = init_params(mode, 7, 6, 5, 8, rng)
    protos = random_unit_rows(rng, 4, 8)
    if mode == "sview":
        protos = (protos, random_unit_rows(rng, 4, 8))
    batch = _tiny_batch(rng)
    return params, protos, batch


class TestPrototypeScores:
    def test_sharp_softmax_picks_aligned_prototype(self):
        protos = np.eye(2)
        feats = np.array([[1.0, 0.0]])
        row = prototype_scores(feats, protos, temperature=0.01)
        assert row[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_equidistant_gives_uniform(self):
        protos = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        feats = np.array([[0.0, 0.0, 1.0]])
        row = prototype_scores(feats, protos, temperature=0.3)
        assert np.allclose(row, 0.5, atol=1e-12)

    def test_matches_direct_softmax(self):
        rng = np.random.default_rng(0)
        feats = random_unit_rows(rng, 5, 6)
        protos = random_unit_rows(rng, 4, 6)
        scores = prototype_scores(feats, protos, temperature=1.0)
        sims = feats @ protos.T
        for i in range(5):
            denom = math.fsum(math.exp(s) for s in sims[i])
            for n in range(4):
                assert scores[i, n] == pytest.approx(math.exp(sims[i, n]) / denom, rel=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        scores = prototype_scores(random_unit_rows(rng, 50, 8), random_unit_rows(rng, 16, 8), 0.1)
        assert np.max(np.abs(scores.sum(axis=1) - 1.0)) <= 1e-12


class TestSwappedLoss:
    def test_one_hot_perfect_prediction(self):
        targets = np.array([[1.0, 0.0], [0.0, 1.0]])
        nearly = np.array([[1.0 - 1e-12, 1e-12], [1e-12, 1.0 - 1e-12]])
        assert swapped_loss(targets, nearly, targets, nearly) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_rows(self):
        uniform = np.full((3, 4), 0.25)
        assert swapped_loss(uniform, uniform, uniform, uniform) == pytest.approx(
            2.0 * math.log(4.0), abs=1e-12
        )

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(2)
        targets_t = rng.dirichlet(np.ones(4), size=5)
        targets_s = rng.dirichlet(np.ones(4), size=5)
        scores_t = rng.dirichlet(np.ones(4), size=5)
        scores_s = rng.dirichlet(np.ones(4), size=5)
        expected = math.fsum(
            -targets_t[i, n] * math.log(scores_s[i, n])
            - targets_s[i, n] * math.log(scores_t[i, n])
            for i in range(5)
            for n in range(4)
        ) / 5.0
        value = swapped_loss(targets_t, scores_s, targets_s, scores_t)
        assert value == pytest.approx(expected, abs=1e-12)

    def test_floor_is_twice_mean_row_entropy(self):
        rng = np.random.default_rng(3)
        targets = rng.dirichlet(np.ones(5), size=6)
        entropy = -np.sum(targets * np.log(targets), axis=1).mean()
        value = swapped_loss(targets, targets, targets, targets)
        assert value == pytest.approx(2.0 * entropy, abs=1e-12)
        # any other prediction is worse
        other = rng.dirichlet(np.ones(5), size=6)
        assert swapped_loss(targets, other, targets, other) >= value - 1e-12

    def test_swapped_symmetry(self):
        rng = np.random.default_rng(4)
        t1, t2 = rng.dirichlet(np.ones(3), size=(2, 4))
        g1, g2 = rng.dirichlet(np.ones(3), size=(2, 4))
        assert swapped_loss(t1, g1, t2, g2) == swapped_loss(t2, g2, t1, g1)

    def test_rejects_unscaled_plans(self):
        plan = np.full((4, 4), 1.0 / 16.0)  # rows sum to 1/4
        with pytest.raises(ValueError, match="rescale"):
            swapped_loss(plan, plan * 4.0, plan, plan * 4.0)


class TestEncoders:
    def test_encode_outputs_unit_rows(self):
        rng = np.random.default_rng(5)
        params = init_params("sep", 7, 6, 5, 8, rng)
        feats, _ = encode(params, "a", rng.standard_normal((10, 7)))
        assert np.max(np.abs(np.linalg.norm(feats, axis=1) - 1.0)) <= 1e-12

    def test_avg_with_identical_backbones_is_single_branch(self):
        rng = np.random.default_rng(6)
        params = init_params("avg", 7, 7, 5, 8, rng)
        params["b.w1"] = params["a.w1"].copy()
        params["b.b1"] = params["a.b1"].copy()
        x = rng.standard_normal((9, 7))
        fused, _ = encode_avg(params, x, x)
        single, _ = encode(params, "a", x)
        assert np.max(np.abs(fused - single)) <= 1e-12


class TestSelfConsistentFixedPoint:
    """Features equidistant from all prototypes with uniform assignments:
    the loss sits at its entropy floor and gradients vanish."""

    @staticmethod
    def _setup(mode):
        rng = np.random.default_rng(7)
        params = init_params(mode, 7, 6, 5, 3, rng)
        heads = ("a", "b") if mode == "sview" else ("shared",)
        for head in heads:
            params[f"{head}.w2"] = np.zeros_like(params[f"{head}.w2"])
            params[f"{head}.b2"] = np.array([0.0, 0.0, 1.0])
        angles = 2.0 * np.pi * np.arange(4) / 4.0
        r = math.sqrt(0.75)
        protos = np.stack([r * np.cos(angles), r * np.sin(angles), np.full(4, 0.5)], axis=1)
        batch = _tiny_batch(rng)
        return params, protos, batch

    def test_goca_loss_at_floor(self):
        params, protos, batch = self._setup("goca")
        cfg = _fast_cfg("goca")
        result = goca_step(batch, params, protos, cfg)
        assert result.loss == pytest.approx(4.0 * math.log(4.0), abs=1e-6)
        for grad in result.grads.values():
            assert np.max(np.abs(grad)) <= 1e-9

    def test_sview_loss_at_floor(self):
        params, protos, batch = self._setup("sview")
        cfg = _fast_cfg("sview")
        result = baseline_step(batch, params, (protos, protos), cfg)
        assert result.loss == pytest.approx(4.0 * math.log(4.0), abs=1e-6)

    def test_avg_loss_at_floor(self):
        params, protos, batch = self._setup("avg")
        cfg = _fast_cfg("avg")
        result = baseline_step(batch, params, protos, cfg)
        assert result.loss == pytest.approx(2.0 * math.log(4.0), abs=1e-6)


class TestStepGradients:
    @pytest.mark.parametrize("mode", ["sview", "avg", "sep", "goca"])
    def test_matches_finite_differences(self, mode):
        params, protos, batch = _tiny_setup(mode, seed=8)
        cfg = _fast_cfg(mode)
        step = goca_step if mode == "goca" else baseline_step
        base = step(batch, params, protos, cfg)
        vec, keys = _params_to_vec(params)
        analytic = _grad_vec(base.grads, keys)

        def loss_at(theta):
            candidate = _vec_to_params(theta, keys, params)
            return step(batch, candidate, protos, cfg, targets=base.targets).loss

        fd = finite_diff_grad(loss_at, vec, step=1e-5)
        scale = max(float(np.max(np.abs(fd))), 1e-12)
        assert float(np.max(np.abs(analytic - fd))) / scale <= 1e-4

    def test_stop_gradient_contract(self):
        params, protos, batch = _tiny_setup("goca", seed=9)
        results = []
        for tolerance in (1e-11, 1e-13):
            cfg = _fast_cfg(
                "goca",
                solver=SolverConfig(lambda1=0.5, lambda2=0.1, tolerance=tolerance, max_iters=200_000),
            )
            results.append(goca_step(batch, params, protos, cfg))
        first, second = results
        assert abs(first.loss - second.loss) < 1e-8
        _, keys = _params_to_vec(params)
        drift = np.max(np.abs(_grad_vec(first.grads, keys) - _grad_vec(second.grads, keys)))
        assert drift < 1e-7


class TestModeCollapse:
    def test_goca_with_zero_lambda2_is_bitwise_sep_step(self):
        params, protos, batch = _tiny_setup("sep", seed=10)
        solver = SolverConfig(lambda1=0.1, lambda2=0.0, tolerance=1e-9, max_iters=50_000)
        goca_res = goca_step(batch, dict(params), protos, _fast_cfg("goca", solver=solver))
        sep_res = baseline_step(batch, dict(params), protos, _fast_cfg("sep", solver=solver))
        assert goca_res.loss == sep_res.loss
        for key in params:
            assert np.array_equal(goca_res.grads[key], sep_res.grads[key])

    def test_goca_with_zero_lambda2_reproduces_sep_training_trace(self):
        data = generate(SynthConfig(num_classes=2, samples_per_class=40, signal_dim=4,
                                    distractor_dim=3, num_distractor_modes=4, seed=3))
        solver = SolverConfig(lambda1=0.1, lambda2=0.0, tolerance=1e-6, max_iters=500)
        proto = ProtoOptConfig(steps=200, restarts=1)
        common = dict(
            epochs=25, batch_size=20, hidden_dim=6, feature_dim=8, num_prototypes=4,
            solver=solver, proto=proto, seed=11,
        )
        res_goca = train(data, TrainConfig(mode="goca", **common))
        res_sep = train(data, TrainConfig(mode="sep", **common))
        assert len(res_goca.trace) == 100
        assert res_goca.trace == res_sep.trace
        for key in res_goca.params:
            assert np.array_equal(res_goca.params[key], res_sep.params[key])


class TestTrain:
    def test_zero_epochs_leaves_encoders_at_initialization(self):
        data = generate(SynthConfig(num_classes=2, samples_per_class=20, signal_dim=4,
                                    distractor_dim=3, num_distractor_modes=4, seed=4))
        cfg = TrainConfig(mode="sep", epochs=0, batch_size=10, hidden_dim=6,
                          feature_dim=8, num_prototypes=4,
                          proto=ProtoOptConfig(steps=100, restarts=1), seed=12)
        result = train(data, cfg)
        assert result.trace == []
        rng = np.random.default_rng(cfg.seed)
        expected = init_params("sep", data.view_a.shape[1], data.view_b.shape[1],
                               cfg.hidden_dim, cfg.feature_dim, rng)
        for key, value in expected.items():
            assert np.array_equal(result.params[key], value)

    def test_descent_sanity_on_separable_data(self):
        data = generate(SynthConfig(num_classes=2, samples_per_class=20, signal_dim=4,
                                    distractor_dim=3, num_distractor_modes=4,
                                    distractor_strength=0.5, view_b_noise=0.2, seed=5))
        cfg = TrainConfig(mode="goca", epochs=50, batch_size=20, hidden_dim=6,
                          feature_dim=8, num_prototypes=4,
                          solver=SolverConfig(lambda1=0.1, lambda2=0.03,
                                              tolerance=1e-6, max_iters=500),
                          proto=ProtoOptConfig(steps=200, restarts=1), seed=13)
        result = train(data, cfg)
        steps_per_epoch = len(result.trace) // cfg.epochs
        first = float(np.mean(result.trace[:steps_per_epoch]))
        last = float(np.mean(result.trace[-steps_per_epoch:]))
        assert last < first

    def test_dimension_mismatch_rejected(self):
        data = generate(SynthConfig(num_classes=2, samples_per_class=20, signal_dim=4,
                                    distractor_dim=3, num_distractor_modes=4, seed=6))
        cfg = TrainConfig(mode="sep", epochs=1, batch_size=10, feature_dim=8,
                          num_prototypes=4, proto=ProtoOptConfig(steps=50, restarts=1))
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="feature_dim"):
            train(data, cfg, prototypes=random_unit_rows(rng, 4, 5))

    def test_extract_features_conditions(self):
        data = generate(SynthConfig(num_classes=2, samples_per_class=15, signal_dim=4,
                                    distractor_dim=3, num_distractor_modes=4, seed=7))
        for mode, expected in (("sep", {"a", "b", "fused"}), ("avg", {"fused"})):
            cfg = TrainConfig(mode=mode, epochs=1, batch_size=10, hidden_dim=6,
                              feature_dim=8, num_prototypes=4,
                              solver=SolverConfig(lambda1=0.1, tolerance=1e-6, max_iters=500),
                              proto=ProtoOptConfig(steps=50, restarts=1), seed=14)
            result = train(data, cfg)
            feats = extract_features(result.params, mode, data)
            assert set(feats) == expected
            for f in feats.values():
                assert np.max(np.abs(np.linalg.norm(f, axis=1) - 1.0)) <= 1e-9
