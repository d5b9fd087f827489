"""Margin losses, the toy recognizer and the budget learner.

All analytic gradients are checked against central finite differences;
the losses are additionally checked against direct closed-form
evaluation of the margin formulas.
"""

import numpy as np
import pytest

from freqdp.dp import SensitivityMap, laplace_sample
from freqdp.recognizer import (
    ToyRecognizer,
    TrainConfig,
    arcface_loss,
    cosface_loss,
    evaluate,
    evaluate_pairs,
    forward_backward,
    margin_loss,
    reparam_noise_scales,
    reparam_perturb_forward,
    train_budgets,
)
from freqdp.synthetic import make_informative_dataset


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def reference_margin_loss(e, labels, w, s, m, kind):
    """Plain softmax cross-entropy over margin-adjusted cosine logits."""
    cos = e @ w.T
    logits = s * cos
    for i, y in enumerate(labels):
        if kind == "arcface":
            adj = np.cos(np.arccos(np.clip(cos[i, y], -1 + 1e-7, 1 - 1e-7)) + m)
        else:
            adj = cos[i, y] - m
        logits[i, y] = s * adj
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return -np.mean(np.log(p[np.arange(len(labels)), labels]))


class TestMarginLoss:
    @pytest.mark.parametrize("kind", ["arcface", "cosface"])
    def test_matches_reference_value(self, rng, kind):
        e = unit_rows(rng, 6, 4)
        w = unit_rows(rng, 3, 4)
        y = np.array([0, 1, 2, 0, 1, 2])
        loss, _, _ = margin_loss(e, y, w, 30.0, 0.3, kind=kind)
        ref = reference_margin_loss(e, y, w, 30.0, 0.3, kind)
        assert loss == pytest.approx(ref, rel=1e-9)

    @pytest.mark.parametrize("kind", ["arcface", "cosface"])
    def test_gradients_match_finite_differences(self, rng, kind):
        e = unit_rows(rng, 5, 4)
        w = unit_rows(rng, 3, 4)
        y = np.array([0, 1, 2, 0, 1])
        _, d_e, d_w = margin_loss(e, y, w, 20.0, 0.25, kind=kind)
        h = 1e-7
        for arr, grad in ((e, d_e), (w, d_w)):
            fd = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                lp = margin_loss(e, y, w, 20.0, 0.25, kind=kind)[0]
                arr[idx] = orig - h
                lm = margin_loss(e, y, w, 20.0, 0.25, kind=kind)[0]
                arr[idx] = orig
                fd[idx] = (lp - lm) / (2 * h)
            rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
            assert rel < 1e-5

    def test_margin_penalizes_target(self, rng):
        """With a margin the loss must exceed the plain softmax loss."""
        e = unit_rows(rng, 6, 4)
        w = unit_rows(rng, 3, 4)
        y = np.array([0, 1, 2, 0, 1, 2])
        with_m, _, _ = margin_loss(e, y, w, 30.0, 0.3, kind="cosface")
        without, _, _ = margin_loss(e, y, w, 30.0, 0.0, kind="cosface")
        assert with_m > without

    def test_named_wrappers(self, rng):
        e, w = unit_rows(rng, 4, 3), unit_rows(rng, 2, 3)
        y = np.array([0, 1, 0, 1])
        assert arcface_loss(e, y, w)[0] == margin_loss(e, y, w, 64.0, 0.4)[0]
        assert (
            cosface_loss(e, y, w)[0]
            == margin_loss(e, y, w, 64.0, 0.35, kind="cosface")[0]
        )

    def test_unknown_kind(self, rng):
        with pytest.raises(ValueError):
            margin_loss(unit_rows(rng, 2, 3), [0, 1], unit_rows(rng, 2, 3),
                        64.0, 0.4, kind="sphereface")


class TestToyRecognizer:
    def test_embeddings_are_unit_norm(self, rng):
        model = ToyRecognizer.init(-np.ones(6), np.ones(6), 8, 4, 3, rng)
        e, _ = model.embed(rng.uniform(-1, 1, (10, 6)))
        assert np.allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-5)

    def test_input_layer_rescales_to_unit_interval(self, rng):
        lo, hi = np.full(4, -3.0), np.full(4, 5.0)
        model = ToyRecognizer.init(lo, hi, 8, 4, 2, rng)
        _, (xn, _, _, _, _, _) = model.embed(np.array([lo, hi, (lo + hi) / 2]))
        assert np.allclose(xn[0], -1.0) and np.allclose(xn[1], 1.0)
        assert np.allclose(xn[2], 0.0, atol=1e-7)

    def test_extreme_inputs_stay_finite(self, rng):
        """Clipping makes the embedder immune to huge noise values."""
        model = ToyRecognizer.init(-np.ones(6), np.ones(6), 8, 4, 3, rng)
        e, _ = model.embed(rng.uniform(-1e9, 1e9, (5, 6)))
        assert np.isfinite(e).all()

    def test_constant_coordinate_maps_to_zero(self, rng):
        lo = np.array([0.0, 2.0])
        hi = np.array([1.0, 2.0])  # second coordinate degenerate
        model = ToyRecognizer.init(lo, hi, 4, 3, 2, rng)
        _, (xn, _, _, _, _, _) = model.embed(np.array([[0.5, 2.0]]))
        assert xn[0, 1] == pytest.approx(0.0)


class TestReparam:
    def test_scales_formula(self, rng):
        s = SensitivityMap(rng.uniform(-2, 0, 8), rng.uniform(0.1, 2, 8))
        theta = rng.normal(size=8)
        scales, p, sup = reparam_noise_scales(theta, s, 4.0)
        assert np.allclose(scales[sup], s.sensitivity[sup] / (4.0 * p[sup]))

    def test_forward_caches_unit_noise(self, rng):
        s = SensitivityMap(-np.ones(8), np.ones(8))
        t = rng.uniform(-1, 1, (3, 8))
        noisy, unit = reparam_perturb_forward(t, s, np.zeros(8), 10.0, rng)
        scales, _, _ = reparam_noise_scales(np.zeros(8), s, 10.0)
        assert np.allclose(noisy, t + scales * unit)


class TestGradients:
    def test_full_pipeline_finite_differences(self, rng):
        """Analytic theta + model gradients vs central differences on a
        small all-float64 instance with frozen unit noise."""
        n, dim, hid, emb, classes = 10, 8, 6, 5, 3
        x = rng.uniform(-1, 1, (n, dim))
        y = rng.integers(0, classes, n)
        s = SensitivityMap(x.min(0) - 5.0, x.max(0) + 5.0)
        model = ToyRecognizer.init(s.r_min, s.r_max, hid, emb, classes, rng,
                                   dtype=np.float64)
        theta = rng.normal(0, 0.3, dim)
        cfg = TrainConfig(epsilon_total=50.0, hidden_dim=hid, embed_dim=emb)
        unit = laplace_sample(np.ones(x.shape), rng)

        def loss_only():
            return forward_backward(model, theta, x, y, s, 50.0, cfg, unit)[0]

        _, grads, _ = forward_backward(model, theta, x, y, s, 50.0, cfg, unit)
        h = 1e-6
        for name in list(ToyRecognizer.PARAM_NAMES) + ["theta"]:
            arr = theta if name == "theta" else getattr(model, name)
            fd = np.zeros(arr.shape)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                lp = loss_only()
                arr[idx] = orig - h
                lm = loss_only()
                arr[idx] = orig
                fd[idx] = (lp - lm) / (2 * h)
            rel = np.linalg.norm(grads[name] - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-3, f"{name}: relative gradient error {rel}"

    def test_noiseless_mode_zero_theta_gradient(self, rng):
        x = rng.uniform(-1, 1, (4, 6))
        s = SensitivityMap(x.min(0) - 1, x.max(0) + 1)
        model = ToyRecognizer.init(s.r_min, s.r_max, 4, 3, 2, rng)
        cfg = TrainConfig(epsilon_total=None)
        unit = laplace_sample(np.ones(x.shape), rng)
        _, grads, _ = forward_backward(
            model, np.zeros(6), x, np.array([0, 1, 0, 1]), s, None, cfg, unit
        )
        assert np.all(grads["theta"] == 0)


class TestTraining:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(loss="triplet")
        with pytest.raises(ValueError):
            TrainConfig(epsilon_total=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(m=2.0)
        TrainConfig(epsilon_total=None)  # noiseless mode allowed

    def test_loss_decreases_and_learns(self, rng):
        x, y = make_informative_dataset(60, n_coords=12, seed=2)
        s = SensitivityMap(x.min(0), x.max(0))
        cfg = TrainConfig(epsilon_total=None, epochs=25, hidden_dim=12,
                          embed_dim=8, lr_model=0.05, seed=2)
        result = train_budgets(x[:80], y[:80], s, cfg)
        assert not result.diverged
        assert result.history[-1]["loss"] < result.history[0]["loss"]
        acc = evaluate(result.model, x[80:], y[80:], s, result.theta, None,
                       np.random.default_rng(0))
        assert acc > 0.9

    def test_learned_budgets_favor_informative_coordinates(self, rng):
        """Budget should concentrate on the signal-carrying coordinates."""
        x, y = make_informative_dataset(150, n_coords=16, n_informative=2, seed=4)
        s = SensitivityMap(x.min(0), x.max(0))
        cfg = TrainConfig(epsilon_total=0.5 * 16, epochs=40, hidden_dim=12,
                          embed_dim=8, lr_model=0.05, lr_theta=0.2, seed=4)
        result = train_budgets(x, y, s, cfg)
        from freqdp.dp import softmax_over_support

        p = softmax_over_support(result.theta, s.support)
        # the two informative coordinates are indices 0 and 1
        assert p[:2].sum() > 2.0 / 16.0

    def test_theta_init_respected(self, rng):
        x, y = make_informative_dataset(20, n_coords=8, seed=1)
        s = SensitivityMap(x.min(0), x.max(0))
        theta0 = rng.normal(size=8)
        cfg = TrainConfig(epsilon_total=8.0, epochs=1, learn_theta=False, seed=0)
        result = train_budgets(x, y, s, cfg, theta_init=theta0)
        assert np.array_equal(result.theta, theta0)

    def test_rejects_single_class(self, rng):
        x = rng.uniform(-1, 1, (10, 4))
        s = SensitivityMap(x.min(0), x.max(0))
        with pytest.raises(ValueError):
            train_budgets(x, np.zeros(10, dtype=int), s, TrainConfig(epochs=1))

    def test_evaluate_pairs_perfect_on_separated(self, rng):
        x, y = make_informative_dataset(40, n_coords=12, seed=6)
        s = SensitivityMap(x.min(0), x.max(0))
        cfg = TrainConfig(epsilon_total=None, epochs=25, hidden_dim=12,
                          embed_dim=8, lr_model=0.05, seed=6)
        result = train_budgets(x, y, s, cfg)
        idx = np.arange(0, 30, 2)
        acc = evaluate_pairs(result.model, x[idx], x[idx + 1],
                             y[idx] == y[idx + 1], s, result.theta, None,
                             np.random.default_rng(0))
        assert acc > 0.9
