import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unlearnlab.datasets import Dataset, UnlearnTask, split_unlearn, without_forget
from unlearnlab.errors import ConfigError, NumericWarning
from unlearnlab.evaluate import accuracy
from unlearnlab.nn import MlpModel, cross_entropy, forward, hidden_features, init_params
from unlearnlab.trainer import TrainConfig, train
from unlearnlab.unlearn import (
    FINETUNE_METHODS,
    MethodHyper,
    RurkHyper,
    cr_unlearn,
    diag_fisher,
    finetune_unlearn,
    fisher_noise,
    fisher_noise_unlearn,
    fit_heads,
    logistic_grad_hess,
    newton_removal,
    newton_step,
    ntk_parts,
    ntk_removal,
    project_out,
    retrain_oracle,
    rurk_unlearn,
    ssd_dampen,
    ssd_scale,
    unlearn,
)

from conftest import linear_task, logistic_model, min_norm_interpolant

CFG = TrainConfig(lr0=0.05, epochs=20, batch_size=16, seed=1)


@pytest.fixture(scope="module")
def trained(blobs_task):
    m, _ = train(init_params([4, 12, 3], seed=0), blobs_task.dataset, blobs_task.train_idx, CFG)
    return m


def hyper(method, **kw):
    base = dict(method=method, lr=0.05, epochs=2, batch_size=16, seed=3)
    base.update(kw)
    return MethodHyper(**base)


class TestHyper:
    @pytest.mark.parametrize(
        "kw",
        [{"method": "bogus"}, {"sigma": -1.0}, {"k_layers": 0}, {"ssd_alpha": 0.0}, {"epochs": -1},
         {"rurk": RurkHyper(v=0)}, {"rurk": RurkHyper(lambda_f=-0.1)}],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            MethodHyper(**kw)

    def test_reference_defaults(self):
        r = RurkHyper()
        assert (r.tau, r.v, r.attack_method, r.epochs, r.lambda_f, r.lambda_a) == (0.03, 1, "ball", 2, 0.03, 0.03)
        assert MethodHyper().cr_lambda == 0.1


class TestRetrain:
    def test_empty_forget_equals_full_training(self, blobs_task):
        t = without_forget(blobs_task)
        a = retrain_oracle(t, 0, CFG, [4, 12, 3])
        b, _ = train(init_params([4, 12, 3], seed=0), t.dataset, t.train_idx, CFG)
        assert a.same_params(b)

    def test_deterministic(self, blobs_task):
        assert retrain_oracle(blobs_task, 0, CFG, [4, 12, 3]).same_params(retrain_oracle(blobs_task, 0, CFG, [4, 12, 3]))

    def test_class_mode_forgets(self, blobs):
        t = split_unlearn(blobs, "class", 1, 1.0, 0.2, seed=0)
        m = retrain_oracle(t, 0, CFG, [4, 12, 3])
        assert accuracy(m, t.dataset, t.forget_idx) <= 1 / 2


class TestFinetune:
    @pytest.mark.parametrize("method", [m for m in FINETUNE_METHODS if m != "eu_k"])
    def test_zero_epochs_identity(self, trained, blobs_task, method):
        assert finetune_unlearn(trained, blobs_task, hyper(method, epochs=0)).same_params(trained)

    def test_eu_k_zero_epochs_reinitializes(self, trained, blobs_task):
        out = finetune_unlearn(trained, blobs_task, hyper("eu_k", epochs=0))
        fresh = init_params([4, 12, 3], seed=3)
        assert out.weights[1].tobytes() == fresh.weights[1].tobytes()
        assert out.weights[0].tobytes() == trained.weights[0].tobytes()

    def test_neggrad_plus_beta_zero_is_gd(self, trained, blobs_task):
        a = finetune_unlearn(trained, blobs_task, hyper("neggrad_plus", beta=0.0))
        assert a.same_params(finetune_unlearn(trained, blobs_task, hyper("gd")))

    def test_ngd_sigma_zero_is_gd(self, trained, blobs_task):
        a = finetune_unlearn(trained, blobs_task, hyper("ngd", sigma=0.0))
        assert a.same_params(finetune_unlearn(trained, blobs_task, hyper("gd")))

    def test_ngd_noise_moves_model(self, trained, blobs_task):
        a = finetune_unlearn(trained, blobs_task, hyper("ngd", sigma=0.03))
        assert not a.same_params(finetune_unlearn(trained, blobs_task, hyper("gd")))

    def test_cf_k_moves_only_last_groups(self, trained, blobs_task):
        out = finetune_unlearn(trained, blobs_task, hyper("cf_k", k_layers=1))
        assert out.weights[0].tobytes() == trained.weights[0].tobytes()
        assert out.weights[1].tobytes() != trained.weights[1].tobytes()

    def test_scrub_alpha_gamma_zero_only_forget_term(self, trained, blobs_task):
        out = finetune_unlearn(trained, blobs_task, hyper("scrub", scrub_alpha=0.0, scrub_gamma=0.0, epochs=1))
        # the student starts equal to the teacher, so the forget KL gradient is zero on the first step
        assert np.abs(out.flat() - trained.flat()).max() < np.abs(trained.flat()).max()

    def test_ga_increases_forget_loss_on_convex_toy(self):
        rng = np.random.default_rng(0)
        x = rng.random((40, 2))
        d = Dataset(x, (x[:, 0] > 0.5).astype(int), 2)
        t = split_unlearn(d, "sample", 1, 0.5, 0.25, seed=0)
        m, _ = train(logistic_model([1.0, -1.0]), d, t.train_idx, TrainConfig(lr0=0.1, epochs=30, batch_size=8))
        before = cross_entropy(forward(m, t.xy("forget")[0])[1], t.xy("forget")[1])
        out = finetune_unlearn(m, t, hyper("ga", lr=1e-3, epochs=1, momentum=0.0, weight_decay=0.0, batch_size=100))
        assert cross_entropy(forward(out, t.xy("forget")[0])[1], t.xy("forget")[1]) >= before

    def test_not_finetune(self, trained, blobs_task):
        with pytest.raises(ConfigError):
            finetune_unlearn(trained, blobs_task, hyper("ssd"))

    @pytest.mark.parametrize("method", FINETUNE_METHODS)
    def test_deterministic(self, trained, blobs_task, method):
        h = hyper(method, epochs=1)
        assert finetune_unlearn(trained, blobs_task, h).same_params(finetune_unlearn(trained, blobs_task, h))


class TestCertifiedRemoval:
    def test_quadratic_lands_on_minimizer(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 4))
        A = a @ a.T + 4 * np.eye(4)
        opt = rng.normal(size=4)
        w = rng.normal(size=4)
        np.testing.assert_allclose(newton_step(w, A @ (w - opt), A, 1.0), opt, atol=1e-12)

    def test_logistic_grad_hess_finite_differences(self):
        rng = np.random.default_rng(1)
        phi, s, w = rng.normal(size=(20, 3)), rng.choice([-1.0, 1.0], 20), rng.normal(size=3)

        def loss(v):
            return np.mean(np.log1p(np.exp(-s * (phi @ v)))) + 0.05 * v @ v

        g, h = logistic_grad_hess(w, phi, s, 0.1)
        eps = 1e-6
        fd = np.array([(loss(w + eps * e) - loss(w - eps * e)) / (2 * eps) for e in np.eye(3)])
        np.testing.assert_allclose(g, fd, atol=1e-8)
        fdh = np.array([(logistic_grad_hess(w + eps * e, phi, s, 0.1)[0] - logistic_grad_hess(w - eps * e, phi, s, 0.1)[0]) / (2 * eps) for e in np.eye(3)])
        np.testing.assert_allclose(h, fdh, atol=1e-7)

    def test_fixed_point(self, trained, blobs_task):
        feats = hidden_features(trained, blobs_task.dataset.features)
        r = blobs_task.retain_idx
        heads = fit_heads(feats[r], blobs_task.dataset.labels[r], 3, 1e-3)
        out = newton_removal(heads, feats, blobs_task, 0.1, 1e-3)
        np.testing.assert_allclose(out, heads, atol=1e-10)

    def test_full_step_reaches_retain_optimum_region(self, trained, blobs_task):
        feats = hidden_features(trained, blobs_task.dataset.features)
        r = blobs_task.retain_idx
        full = fit_heads(feats[blobs_task.train_idx], blobs_task.dataset.labels[blobs_task.train_idx], 3, 1e-3)
        target = fit_heads(feats[r], blobs_task.dataset.labels[r], 3, 1e-3)
        stepped = newton_removal(full, feats, blobs_task, 1.0, 1e-3)
        assert np.linalg.norm(stepped - target) < np.linalg.norm(full - target)

    def test_lambda_zero_keeps_full_data_heads(self, trained, blobs_task):
        out = cr_unlearn(trained, blobs_task, 0.0, 1e-3)
        feats = hidden_features(trained, blobs_task.dataset.features)
        t = blobs_task.train_idx
        full = fit_heads(feats[t], blobs_task.dataset.labels[t], 3, 1e-3)
        np.testing.assert_array_equal(out.weights[-1], full[:, :-1])
        assert out.weights[0].tobytes() == trained.weights[0].tobytes()

    def test_positive_regularization_required(self, trained, blobs_task):
        with pytest.raises(ConfigError):
            newton_removal(np.zeros((3, 13)), np.zeros((blobs_task.dataset.n, 12)), blobs_task, 0.1, 0.0)


class TestFisher:
    def test_alpha_zero_identity(self, trained, blobs_task):
        out = fisher_noise_unlearn(trained, blobs_task, 0.0, np.random.default_rng(0))
        assert out.same_params(trained)

    def test_std_ratio(self):
        f = 0.01
        draws = np.array([fisher_noise(np.zeros(2), np.array([f, 4 * f]), 1e-4, np.random.default_rng(s)) for s in range(10_000)])
        ratio = draws[:, 0].std() / draws[:, 1].std()
        assert abs(ratio - 2.0) / 2.0 < 0.05

    def test_floor(self):
        out = fisher_noise(np.zeros(3), np.zeros(3), 1e-6, np.random.default_rng(0))
        assert np.all(np.isfinite(out)) and np.any(out != 0)

    def test_diag_fisher_matches_loop(self, trained, blobs_task):
        from unlearnlab.nn import grad_params

        X, Y = blobs_task.xy("forget")
        loop = np.mean([grad_params(trained, X[i:i + 1], Y[i:i + 1])[1].flat() ** 2 for i in range(len(Y))], axis=0)
        np.testing.assert_allclose(diag_fisher(trained, X, Y), loop, rtol=1e-10, atol=1e-18)


class TestSsd:
    def test_formula(self):
        np.testing.assert_allclose(ssd_scale(np.array([2.0]), np.array([1.0]), np.array([100.0]), 10.0, 1.0), [0.02])

    def test_large_lambda_clamps(self):
        assert ssd_scale(np.array([2.0]), np.array([1.0]), np.array([100.0]), 10.0, 1000.0)[0] == 2.0

    def test_empty_selection(self, trained, blobs_task):
        assert ssd_dampen(trained, blobs_task, 1e12, 1.0).same_params(trained)

    @given(st.integers(0, 2**32 - 1))
    def test_never_grows(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.normal(size=20)
        out = ssd_scale(p, rng.random(20), rng.random(20), rng.uniform(0.1, 5), rng.uniform(0.1, 5))
        assert np.all(np.abs(out) <= np.abs(p))


class TestNtk:
    def test_linear_model_matches_exact_retraining(self):
        t = linear_task()
        w0 = init_params([9, 2], seed=4)
        full = w0.with_flat(min_norm_interpolant(w0, *t.xy("train"), 2))
        retrained = min_norm_interpolant(w0, *t.xy("retain"), 2)
        out = ntk_removal(full, t, base=w0)
        assert np.linalg.norm(out.flat() - retrained) < 1e-6

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_linear_oracle_property(self, seed):
        t = linear_task(n_retain=3, n_forget=2, d=11, k=3, seed=seed)
        w0 = init_params([11, 3], seed=seed)
        full = w0.with_flat(min_norm_interpolant(w0, *t.xy("train"), 3))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NumericWarning)
            out = ntk_removal(full, t, base=w0)
        assert np.linalg.norm(out.flat() - min_norm_interpolant(w0, *t.xy("retain"), 3)) < 1e-6

    def test_projection_annihilates_retain(self, trained, blobs_task):
        parts = ntk_parts(trained, blobs_task)
        assert np.abs(project_out(parts.jac_retain, parts.jac_retain.T)).max() < 1e-8
        assert np.abs(parts.jac_retain @ parts.update).max() < 1e-8

    def test_empty_forget(self, trained, blobs_task):
        assert ntk_removal(trained, without_forget(blobs_task)) is trained

    def test_ill_conditioned_warns(self):
        t = linear_task(n_retain=4, n_forget=1, d=3)
        ds = t.dataset
        x = ds.features.copy()
        x[1] = x[0]
        t = UnlearnTask(Dataset(x, ds.labels, 2), t.retain_idx, t.forget_idx, t.test_idx)
        with pytest.warns(NumericWarning):
            ntk_removal(init_params([3, 2], seed=0), t)


class TestRurk:
    def test_zero_lambdas_match_gd_bytewise(self, trained, blobs_task):
        h = hyper("rurk", rurk=RurkHyper(lambda_f=0.0, lambda_a=0.0, epochs=2))
        assert rurk_unlearn(trained, blobs_task, h).same_params(finetune_unlearn(trained, blobs_task, hyper("gd", epochs=2)))

    def test_zero_epochs(self, trained, blobs_task):
        assert rurk_unlearn(trained, blobs_task, hyper("rurk", rurk=RurkHyper(epochs=0))).same_params(trained)

    @pytest.mark.parametrize("method", ["ball", "targeted_attack"])
    def test_deterministic(self, trained, blobs_task, method):
        h = hyper("rurk", rurk=RurkHyper(attack_method=method))
        assert rurk_unlearn(trained, blobs_task, h).same_params(rurk_unlearn(trained, blobs_task, h))

    def test_raises_forget_loss_over_gd(self, trained, blobs_task):
        xf, yf = blobs_task.xy("forget")
        g = finetune_unlearn(trained, blobs_task, hyper("gd"))
        r = rurk_unlearn(trained, blobs_task, hyper("rurk", rurk=RurkHyper(lambda_f=0.5, lambda_a=0.5)))
        assert cross_entropy(forward(r, xf)[1], yf) > cross_entropy(forward(g, xf)[1], yf)


@pytest.mark.parametrize("method", ["retrain", "gd", "fisher", "ssd", "cr", "ntk", "rurk"])
def test_dispatch(trained, blobs_task, method):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NumericWarning)
        out = unlearn(trained, blobs_task, hyper(method), CFG.updated(epochs=2))
    assert isinstance(out, MlpModel) and out.layer_dims == trained.layer_dims
    assert np.all(np.isfinite(out.flat()))
