"""Unlearning mechanisms: re-training, fine-tuning variants, closed-form updates and RURK."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import vulnerable_batch
from .datasets import UnlearnTask
from .errors import ConfigError, NumericError, NumericWarning
from .nn import (
    Gradient,
    MlpModel,
    backward,
    forward,
    grad_params,
    hidden_features,
    init_params,
    logit_jacobian,
    per_sample_grads,
)
from .trainer import SGD, CyclicBatches, TrainConfig, epoch_batches, n_batches, train

FINETUNE_METHODS = ("gd", "ngd", "ga", "neggrad_plus", "eu_k", "cf_k", "scrub")
METHODS = ("retrain",) + FINETUNE_METHODS + ("fisher", "ssd", "cr", "ntk", "rurk")

FISHER_FLOOR = 1e-8
SSD_FLOOR = 1e-12
KERNEL_FLOOR = 1e-6
COND_LIMIT = 1e12

# independent random streams derived from one seed
_NOISE_STREAM = 7
_ATTACK_STREAM = 11
_FORGET_STREAM = 1


@dataclass(frozen=True)
class RurkHyper:
    tau: float = 0.03
    lambda_f: float = 0.03
    lambda_a: float = 0.03
    v: int = 1
    attack_method: str = "ball"
    epochs: int = 2
    # only used with attack_method="targeted_attack"
    attack: str = "fgsm"
    pgd_steps: int = 10
    pgd_step_size: float = 2.0 / 255.0


@dataclass(frozen=True)
class MethodHyper:
    method: str = "gd"
    lr: float = 0.01
    epochs: int = 10
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_norm: float | None = 1.0
    seed: int = 0
    sigma: float = 0.03
    beta: float = 0.001
    k_layers: int = 1
    scrub_alpha: float = 0.001
    scrub_gamma: float = 1.0
    fisher_alpha: float = 1e-6
    ssd_alpha: float = 10.0
    ssd_lambda: float = 1.0
    cr_lambda: float = 0.1
    cr_l2: float = 1e-3
    rurk: RurkHyper = field(default_factory=RurkHyper)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown unlearning method {self.method!r}")
        for name in ("sigma", "beta", "scrub_alpha", "scrub_gamma", "fisher_alpha", "cr_lambda"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.ssd_alpha <= 0 or self.ssd_lambda <= 0:
            raise ConfigError("ssd_alpha and ssd_lambda must be positive")
        if self.k_layers < 1:
            raise ConfigError("k_layers must be positive")
        if self.epochs < 0 or self.rurk.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.rurk.v < 1:
            raise ConfigError("rurk.v must be at least 1")
        if self.rurk.lambda_f < 0 or self.rurk.lambda_a < 0 or self.rurk.tau < 0:
            raise ConfigError("rurk tau and lambdas must be non-negative")

    def train_config(self, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(
            lr0=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs if epochs is None else epochs,
            clip_norm=self.clip_norm,
            seed=self.seed,
        )

    def updated(self, **changes) -> "MethodHyper":
        return replace(self, **changes)


# ---------------------------------------------------------------- re-training


def retrain_oracle(task: UnlearnTask, init_seed: int, config: TrainConfig, layer_dims, activation: str = "relu") -> MlpModel:
    """Fresh initialization trained on the retain set only."""
    model = init_params(layer_dims, activation, init_seed)
    model, _ = train(model, task.dataset, task.retain_idx, config)
    return model


# ----------------------------------------------------------- fine-tuning family


def _last_groups(model: MlpModel, k: int) -> list:
    n = len(model.weights)
    return list(range(max(0, n - k), n))


def _kl_dlogits(student_probs, teacher_probs):
    # d/dlogits of mean KL(teacher || student)
    return (student_probs - teacher_probs) / student_probs.shape[0]


def _ce_dlogits(probs, labels):
    d = probs.copy()
    d[np.arange(len(labels)), labels] -= 1.0
    return d / len(labels)


def finetune_unlearn(original: MlpModel, task: UnlearnTask, hyper: MethodHyper) -> MlpModel:
    """Run ``hyper.epochs`` of the chosen fine-tuning objective starting at ``original``."""
    method = hyper.method
    if method not in FINETUNE_METHODS:
        raise ConfigError(f"{method!r} is not a fine-tuning method")
    ds = task.dataset
    X, Y = ds.features, ds.labels
    model = original
    trainable = None
    if method == "eu_k":
        groups = _last_groups(model, hyper.k_layers)
        fresh = init_params(model.layer_dims, model.activation, hyper.seed)
        weights = [fresh.weights[i] if i in groups else w for i, w in enumerate(model.weights)]
        biases = [fresh.biases[i] if i in groups else b for i, b in enumerate(model.biases)]
        model = model.with_params(weights, biases)
        trainable = groups
    elif method == "cf_k":
        trainable = _last_groups(model, hyper.k_layers)

    loop_idx = task.forget_idx if method == "ga" else task.retain_idx
    if hyper.epochs == 0 or loop_idx.size == 0:
        return model
    cfg = hyper.train_config()
    opt = SGD(model, cfg, cfg.epochs * n_batches(loop_idx.size, cfg.batch_size), trainable)
    forget_iter = None
    if method in ("neggrad_plus", "scrub") and task.forget_idx.size:
        forget_iter = CyclicBatches(task.forget_idx, cfg.batch_size, cfg.seed, _FORGET_STREAM)
    noise_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _NOISE_STREAM]))

    for epoch in range(cfg.epochs):
        for batch in epoch_batches(loop_idx, cfg.batch_size, cfg.seed, epoch):
            noise = None
            if method == "ga":
                _, g = grad_params(model, X[batch], Y[batch])
                grad = g.scale(-1.0)
            elif method == "neggrad_plus":
                _, grad = grad_params(model, X[batch], Y[batch])
                if forget_iter is not None:
                    fb = forget_iter.next()
                    _, gf = grad_params(model, X[fb], Y[fb])
                    grad = grad - gf.scale(hyper.beta)
            elif method == "scrub":
                grad = _scrub_grad(model, original, X, Y, batch, forget_iter, hyper)
            else:
                _, grad = grad_params(model, X[batch], Y[batch])
                if method == "ngd":
                    noise = Gradient(
                        tuple(hyper.sigma * noise_rng.standard_normal(w.shape) for w in model.weights),
                        tuple(hyper.sigma * noise_rng.standard_normal(b.shape) for b in model.biases),
                    )
            model = opt.step(model, grad, noise)
    return model


def _scrub_grad(model, teacher, X, Y, batch, forget_iter, hyper):
    xr, yr = X[batch], Y[batch]
    _, s = forward(model, xr)
    _, t = forward(teacher, xr)
    d = hyper.scrub_alpha * _kl_dlogits(s, t) + hyper.scrub_gamma * _ce_dlogits(s, yr)
    grad, _ = backward(model, xr, d)
    if forget_iter is not None:
        fb = forget_iter.next()
        _, sf = forward(model, X[fb])
        _, tf = forward(teacher, X[fb])
        gf, _ = backward(model, X[fb], _kl_dlogits(sf, tf))
        grad = grad - gf
    return grad


# ------------------------------------------------------------ certified removal


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logistic_grad_hess(w, features, signs, l2_reg):
    """Gradient and Hessian of mean logistic loss plus ``l2_reg/2 * |w|^2``.

    ``signs`` holds +1/-1 targets; ``features`` already carries a bias column.
    """
    z = features @ w
    n = features.shape[0]
    grad = -(features.T @ (signs * _sigmoid(-signs * z))) / n + l2_reg * w
    curv = _sigmoid(z) * _sigmoid(-z)
    hess = (features.T * curv) @ features / n + l2_reg * np.eye(w.size)
    return grad, hess


def newton_step(w, grad, hess, step: float = 1.0):
    """``w - step * H^{-1} g``."""
    try:
        delta = np.linalg.solve(hess, grad)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular Hessian in Newton step ({exc})") from exc
    if not np.all(np.isfinite(delta)):
        raise NumericError("non-finite Newton step")
    return w - step * delta


def _with_bias(features):
    return np.column_stack([features, np.ones(features.shape[0])])


def newton_removal(head_weights, frozen_features, task: UnlearnTask, cr_lambda: float, l2_reg: float):
    """One damped Newton step per one-vs-rest head on the retain-set features.

    ``head_weights`` is (K, F+1) with the bias in the last column and
    ``frozen_features`` holds the (n, F) features of every dataset row.
    """
    if not l2_reg > 0:
        raise ConfigError("l2_reg must be positive")
    phi = _with_bias(frozen_features[task.retain_idx])
    labels = task.dataset.labels[task.retain_idx]
    heads = np.array(head_weights, dtype=np.float64)
    for k in range(heads.shape[0]):
        signs = np.where(labels == k, 1.0, -1.0)
        g, h = logistic_grad_hess(heads[k], phi, signs, l2_reg)
        heads[k] = newton_step(heads[k], g, h, cr_lambda)
    return heads


def fit_heads(features, labels, num_classes: int, l2_reg: float, iters: int = 50, tol: float = 1e-12):
    """Regularized one-vs-rest logistic heads by full Newton iterations."""
    phi = _with_bias(features)
    heads = np.zeros((num_classes, phi.shape[1]))
    for k in range(num_classes):
        signs = np.where(labels == k, 1.0, -1.0)
        for _ in range(iters):
            g, h = logistic_grad_hess(heads[k], phi, signs, l2_reg)
            heads[k] = newton_step(heads[k], g, h)
            if np.linalg.norm(g) < tol:
                break
    return heads


def _replace_head(model: MlpModel, heads) -> MlpModel:
    weights = list(model.weights[:-1]) + [heads[:, :-1].copy()]
    biases = list(model.biases[:-1]) + [heads[:, -1].copy()]
    return model.with_params(weights, biases)


def cr_unlearn(original: MlpModel, task: UnlearnTask, cr_lambda: float = 0.1, l2_reg: float = 1e-3) -> MlpModel:
    """Certified-removal style update on logistic heads over frozen hidden features."""
    if len(original.weights) < 2:
        raise ConfigError("certified removal needs a hidden layer to act as feature extractor")
    feats = hidden_features(original, task.dataset.features)
    train_idx = task.train_idx
    heads = fit_heads(feats[train_idx], task.dataset.labels[train_idx], original.num_classes, l2_reg)
    heads = newton_removal(heads, feats, task, cr_lambda, l2_reg)
    return _replace_head(original, heads)


# ------------------------------------------------------------- Fisher and SSD


def diag_fisher(model: MlpModel, X, Y) -> np.ndarray:
    """Mean squared per-sample loss gradient for every flat parameter (no floor)."""
    if len(Y) == 0:
        return np.zeros(model.n_params)
    _, p = forward(model, X)
    d = p.copy()
    d[np.arange(len(Y)), Y] -= 1.0
    g = per_sample_grads(model, X, d)
    return np.mean(g * g, axis=0)


def fisher_noise(params, fisher, alpha: float, rng: np.random.Generator):
    """``params + N(0, alpha / max(fisher, floor))`` elementwise."""
    var = alpha / np.maximum(fisher, FISHER_FLOOR)
    return params + np.sqrt(var) * rng.standard_normal(params.shape)


def fisher_noise_unlearn(original: MlpModel, task: UnlearnTask, fisher_alpha: float, rng: np.random.Generator) -> MlpModel:
    if fisher_alpha < 0:
        raise ConfigError("fisher_alpha must be non-negative")
    X, Y = task.xy("retain")
    fisher = diag_fisher(original, X, Y)
    return original.with_flat(fisher_noise(original.flat(), fisher, fisher_alpha, rng))


def ssd_scale(params, fisher_retain, fisher_forget, alpha: float, lam: float):
    """Dampen parameters whose forget importance exceeds ``alpha`` times retain importance."""
    ff = np.maximum(fisher_forget, SSD_FLOOR)
    selected = fisher_forget > alpha * fisher_retain
    beta = np.minimum(lam * fisher_retain / ff, 1.0)
    return np.where(selected, params * beta, params)


def ssd_dampen(original: MlpModel, task: UnlearnTask, ssd_alpha: float, ssd_lambda: float) -> MlpModel:
    if ssd_alpha <= 0 or ssd_lambda <= 0:
        raise ConfigError("ssd_alpha and ssd_lambda must be positive")
    fr = diag_fisher(original, *task.xy("retain"))
    ff = diag_fisher(original, *task.xy("forget"))
    return original.with_flat(ssd_scale(original.flat(), fr, ff, ssd_alpha, ssd_lambda))


# ---------------------------------------------------------------------- NTK


@dataclass
class NtkParts:
    """Intermediate quantities of the kernel update (exposed for checks)."""

    jac_retain: np.ndarray
    projected_forget: np.ndarray
    update: np.ndarray
    condition: float


def _onehot(labels, k):
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def project_out(jac_retain: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Apply ``I - J_r^T K_rr^+ J_r`` to the columns of ``vectors`` (P x n)."""
    _, s, vt = np.linalg.svd(jac_retain, full_matrices=False)
    tol = s.max(initial=0.0) * max(jac_retain.shape) * np.finfo(float).eps
    basis = vt[s > tol]
    return vectors - basis.T @ (basis @ vectors)


def ntk_parts(model: MlpModel, task: UnlearnTask, base: MlpModel | None = None, output=None) -> NtkParts:
    """Kernel-linearized removal update.

    The network is linearized at ``base`` (default: ``model`` itself). With
    residuals ``e = y - h_base(S)`` the exact linear-model relation is
    ``w_retain = w_full + P J_f^T M V`` where
    ``V = K_fr K_rr^{-1} e_r - e_f`` and ``M`` is the inverse Schur
    complement ``[K_ff - K_fr K_rr^{-1} K_rf]^{-1}``, applied as a
    pseudo-inverse with eigenvalues below ``KERNEL_FLOOR`` dropped.
    """
    base = model if base is None else base
    k = model.num_classes
    xr, yr = task.xy("retain")
    xf, yf = task.xy("forget")
    out = output or (lambda m, x: forward(m, x)[0])
    jr = logit_jacobian(base, xr)
    jf = logit_jacobian(base, xf)
    er = (_onehot(yr, k) - out(base, xr)).ravel()
    ef = (_onehot(yf, k) - out(base, xf)).ravel()
    krr = jr @ jr.T
    cond = float(np.linalg.cond(krr)) if krr.size else 0.0
    # K_rr^+ e_r via least squares keeps the retain-span solve exact
    alpha_r = np.linalg.lstsq(krr, er, rcond=None)[0] if krr.size else np.zeros(0)
    v = jf @ (jr.T @ alpha_r) - ef
    z = project_out(jr, jf.T)
    schur = z.T @ z
    cond = max(cond, float(np.linalg.cond(schur)))
    # spectral floor at the ridge scale: directions below it are dropped, the rest inverted
    # exactly, so well-posed (e.g. linear) cases are not biased by the regularizer
    evals, evecs = np.linalg.eigh(schur)
    keep = evals > KERNEL_FLOOR
    coef = evecs[:, keep] @ ((evecs[:, keep].T @ v) / evals[keep])
    update = project_out(jr, z @ coef)
    return NtkParts(jr, z, update, cond)


def ntk_removal(original: MlpModel, task: UnlearnTask, base: MlpModel | None = None) -> MlpModel:
    if task.forget_idx.size == 0:
        return original
    parts = ntk_parts(original, task, base)
    if parts.condition > COND_LIMIT:
        warnings.warn(f"kernel condition number {parts.condition:.3g} exceeds {COND_LIMIT:.0e}", NumericWarning, stacklevel=2)
    return original.with_flat(original.flat() + parts.update)


# --------------------------------------------------------------------- RURK


def rurk_unlearn(original: MlpModel, task: UnlearnTask, hyper: MethodHyper, rng: np.random.Generator | None = None) -> MlpModel:
    """Retain loss minus weighted forget and vulnerable-perturbation losses.

    With ``attack_method="targeted_attack"`` the candidates are pushed toward
    random wrong labels and the model is trained to output those labels, so
    the adversarial term enters with a positive sign.
    """
    rh = hyper.rurk
    ds = task.dataset
    X, Y = ds.features, ds.labels
    model = original
    if rh.epochs == 0 or task.retain_idx.size == 0:
        return model
    cfg = hyper.train_config(rh.epochs)
    rng = rng if rng is not None else np.random.default_rng(np.random.SeedSequence([cfg.seed, _ATTACK_STREAM]))
    opt = SGD(model, cfg, cfg.epochs * n_batches(task.retain_idx.size, cfg.batch_size))
    forget_iter = CyclicBatches(task.forget_idx, cfg.batch_size, cfg.seed, _FORGET_STREAM) if task.forget_idx.size else None
    adv_sign = 1.0 if rh.attack_method == "targeted_attack" else -1.0
    for epoch in range(cfg.epochs):
        for batch in epoch_batches(task.retain_idx, cfg.batch_size, cfg.seed, epoch):
            _, grad = grad_params(model, X[batch], Y[batch])
            if forget_iter is not None:
                fb = forget_iter.next()
                _, gf = grad_params(model, X[fb], Y[fb])
                adv_x, adv_y = vulnerable_batch(
                    model, X[fb], Y[fb], rh.tau, rh.v, rh.attack_method, rng,
                    attack=rh.attack, step_size=rh.pgd_step_size, steps=rh.pgd_steps,
                )
                _, ga = grad_params(model, adv_x, adv_y)
                grad = grad - gf.scale(rh.lambda_f) + ga.scale(adv_sign * rh.lambda_a)
            model = opt.step(model, grad)
    return model


# ----------------------------------------------------------------- dispatch


def unlearn(original: MlpModel, task: UnlearnTask, hyper: MethodHyper, retrain_config: TrainConfig | None = None) -> MlpModel:
    """Apply ``hyper.method`` to ``original``; deterministic in ``hyper.seed``."""
    m = hyper.method
    if m == "retrain":
        cfg = retrain_config or hyper.train_config()
        return retrain_oracle(task, hyper.seed, cfg, original.layer_dims, original.activation)
    if m in FINETUNE_METHODS:
        return finetune_unlearn(original, task, hyper)
    if m == "fisher":
        rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, _NOISE_STREAM]))
        return fisher_noise_unlearn(original, task, hyper.fisher_alpha, rng)
    if m == "ssd":
        return ssd_dampen(original, task, hyper.ssd_alpha, hyper.ssd_lambda)
    if m == "cr":
        return cr_unlearn(original, task, hyper.cr_lambda, hyper.cr_l2)
    if m == "ntk":
        return ntk_removal(original, task)
    return rurk_unlearn(original, task, hyper)
