"""Unlearning metrics and the residual-knowledge estimator.

Every Monte-Carlo quantity comparing two models evaluates both on the same
perturbation draws. Per-sample draws come from substreams keyed by
``(seed, sample index, tau index)`` so results do not depend on evaluation
order or thread scheduling.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attacks import PerturbationSpec, perturb
from .datasets import UnlearnTask
from .errors import ConfigError
from .nn import MlpModel, cross_entropy, forward
from .nn import predict as nn_predict
from .trainer import TrainConfig, train
from .unlearn import logistic_grad_hess, newton_step

log = logging.getLogger(__name__)

EXCEEDED = "exceeded"
MIA_L2 = 1e-2


def predict(model, X) -> np.ndarray:
    """Labels from an ``MlpModel`` or from any callable mapping inputs to labels."""
    if isinstance(model, MlpModel):
        return nn_predict(model, X)
    return np.asarray(model(np.asarray(X)), dtype=np.int64)


@dataclass
class EvalReport:
    retain_acc: float
    unlearn_acc: float
    test_acc: float
    mia_acc: float
    avg_gap: float = 0.0
    relearn_epochs: int | str | None = None
    rk_curve: dict = field(default_factory=dict)
    disagreement_curve: dict = field(default_factory=dict)
    prevalence_curve: dict = field(default_factory=dict)

    def accuracies(self) -> np.ndarray:
        return np.array([self.retain_acc, self.unlearn_acc, self.test_acc, self.mia_acc])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RkBounds:
    lower: float
    upper: float
    r_hat: float
    p_a: float


@dataclass(frozen=True)
class RkEstimate:
    """Shared-draw Monte-Carlo counts for one sample at one radius."""

    m_hits: int
    a_hits: int
    disagreements: int
    c: int

    @property
    def denominator_zero(self) -> bool:
        return self.a_hits == 0

    @property
    def r_hat(self) -> float:
        return float("inf") if self.a_hits == 0 else self.m_hits / self.a_hits

    @property
    def k_hat(self) -> float:
        return self.disagreements / self.c

    @property
    def p_a(self) -> float:
        return self.a_hits / self.c


# ----------------------------------------------------------------- accuracies


def accuracy(model, dataset, indices) -> float:
    idx = np.asarray(indices)
    if idx.size == 0:
        raise ConfigError("accuracy needs at least one index")
    return float(np.mean(predict(model, dataset.features[idx]) == dataset.labels[idx]))


def avg_gap(report: EvalReport, retrain_report: EvalReport) -> float:
    """Mean absolute accuracy difference, in percentage points."""
    return float(100.0 * np.mean(np.abs(report.accuracies() - retrain_report.accuracies())))


# ------------------------------------------------------------------------ MIA


def _fit_threshold_classifier(feature, labels):
    phi = np.column_stack([feature, np.ones_like(feature)])
    signs = np.where(labels == 1, 1.0, -1.0)
    w = np.zeros(2)
    for _ in range(100):
        g, h = logistic_grad_hess(w, phi, signs, MIA_L2)
        w = newton_step(w, g, h)
        if np.linalg.norm(g) < 1e-12:
            break
    return w


def _balanced(pos, neg, rng):
    n = min(pos.size, neg.size)
    return np.sort(rng.choice(pos, n, replace=False)), np.sort(rng.choice(neg, n, replace=False))


def correct_class_confidence(model: MlpModel, dataset, indices) -> np.ndarray:
    _, p = forward(model, dataset.features[indices])
    return p[np.arange(len(indices)), dataset.labels[indices]]


def mia_from_confidences(seen, unseen, evaluated, attacker_seed: int = 0) -> float:
    """Fraction of ``evaluated`` confidences the attacker labels unseen (0).

    The attacker is a regularized 1-D logistic classifier trained on equally
    many seen (label 1) and unseen (label 0) confidences.
    """
    seen, unseen, evaluated = (np.asarray(a, dtype=np.float64) for a in (seen, unseen, evaluated))
    if seen.size == 0 or unseen.size == 0:
        raise ConfigError("membership attacker needs both seen and unseen samples")
    if evaluated.size == 0:
        raise ConfigError("no samples to evaluate the membership attacker on")
    rng = np.random.default_rng(attacker_seed)
    pos, neg = _balanced(np.arange(seen.size), np.arange(unseen.size), rng)
    feature = np.concatenate([seen[pos], unseen[neg]])
    labels = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    w = _fit_threshold_classifier(feature, labels)
    guess_seen = w[0] * evaluated + w[1] > 0
    return float(np.mean(~guess_seen))


def mia_accuracy(model: MlpModel, task: UnlearnTask, attacker_seed: int = 0) -> float:
    """Attack failure rate on the forget set (class mode: held-out forget-class rows)."""
    ds = task.dataset
    if task.retain_idx.size == 0 or task.forget_idx.size == 0 or task.test_idx.size == 0:
        raise ConfigError("membership inference needs non-empty retain, forget and test sets")
    seen = correct_class_confidence(model, ds, task.retain_idx)
    if task.mode == "class":
        unseen = correct_class_confidence(model, ds, task.forget_idx)
        held_out = task.test_idx[ds.labels[task.test_idx] == task.forget_class]
        evaluated = correct_class_confidence(model, ds, held_out)
    else:
        unseen = correct_class_confidence(model, ds, task.test_idx)
        evaluated = correct_class_confidence(model, ds, task.forget_idx)
    return mia_from_confidences(seen, unseen, evaluated, attacker_seed)


# ------------------------------------------------------------- re-learn time


def forget_loss(model: MlpModel, task: UnlearnTask) -> float:
    x, y = task.xy("forget")
    _, p = forward(model, x)
    return cross_entropy(p, y)


def relearn_time(model: MlpModel, original: MlpModel, task: UnlearnTask, eta: float, finetune_config: TrainConfig, max_epochs: int):
    """Epochs of fine-tuning on the full training set until the forget loss is
    within ``(1 + eta)`` of the original's; ``"exceeded"`` past ``max_epochs``."""
    if max_epochs < 0:
        raise ConfigError("max_epochs must be non-negative")
    threshold = (1.0 + eta) * forget_loss(original, task)
    if forget_loss(model, task) <= threshold:
        return 0
    if max_epochs == 0:
        return EXCEEDED
    hit = []

    def check(epoch, m):
        if forget_loss(m, task) <= threshold:
            hit.append(epoch)
            return True
        return False

    train(model, task.dataset, task.train_idx, finetune_config.updated(epochs=max_epochs), callback=check)
    return hit[0] if hit else EXCEEDED


# ---------------------------------------------------------- residual knowledge


def _substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def _seed_of(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63 - 1))
    return int(rng)


def shared_draw_estimate(m, a, sample, spec: PerturbationSpec, rng: np.random.Generator, num_classes: int | None = None) -> RkEstimate:
    """Draw ``spec.mc_count`` perturbations once and score both models on them."""
    x, y = sample
    attacker = m if isinstance(m, MlpModel) else None
    needs_grad = spec.kind == "fgsm" or (spec.kind == "pgd" and spec.steps > 0)
    if needs_grad and attacker is None:
        raise ConfigError("gradient attacks need an MlpModel as the unlearned model")
    draws = perturb(attacker, x, y, spec, rng, num_classes)
    pm, pa = predict(m, draws), predict(a, draws)
    return RkEstimate(int(np.sum(pm == y)), int(np.sum(pa == y)), int(np.sum(pm != pa)), spec.mc_count)


def residual_knowledge(m, a, sample, spec: PerturbationSpec, rng: np.random.Generator) -> RkEstimate:
    """Ratio of correct hits of ``m`` over those of ``a`` (``.r_hat``; +inf flags a zero denominator)."""
    return shared_draw_estimate(m, a, sample, spec, rng)


def adversarial_disagreement(m, a, sample, spec: PerturbationSpec, rng: np.random.Generator) -> float:
    return shared_draw_estimate(m, a, sample, spec, rng).k_hat


def rk_bounds(r_hat: float, p_a: float) -> RkBounds:
    return RkBounds(r_hat * p_a * (1.0 - p_a), 1.0 - r_hat * p_a * p_a, r_hat, p_a)


def rk_bounds_check(r_hat: float, p_a_hat: float, k_hat: float, slack: float = 0.0) -> tuple:
    """Whether ``k_hat`` lies in the disagreement band implied by ``r_hat`` and ``p_a_hat``."""
    if r_hat < 0 or not 0 <= p_a_hat <= 1 or not 0 <= k_hat <= 1:
        raise ConfigError("r_hat must be >= 0 and p_a_hat, k_hat must lie in [0, 1]")
    b = rk_bounds(r_hat, p_a_hat)
    return (b.lower - slack <= k_hat <= b.upper + slack), b


@dataclass
class RkCurve:
    taus: list
    r_hat: list
    k_hat: list
    prevalence: list
    denominator_zero: list
    per_sample: np.ndarray  # (len(taus), n_forget) per-sample ratios, inf where flagged

    def rows(self):
        return zip(self.taus, self.r_hat, self.k_hat, self.prevalence, self.denominator_zero)


def _threads() -> int:
    try:
        return max(0, int(os.environ.get("UNLEARN_LAB_THREADS", "0")))
    except ValueError:
        return 0


def rk_curve(m, a, task: UnlearnTask, tau_grid, spec_template: PerturbationSpec, rng=0) -> RkCurve:
    """Per-radius aggregates over the forget set.

    ``rng`` may be a Generator (one seed is drawn from it) or an integer seed.
    Samples whose re-trained hit count is zero are excluded from the mean
    ratio and the prevalence, and counted in ``denominator_zero``.
    """
    taus = [float(t) for t in tau_grid]
    if not taus:
        raise ConfigError("tau grid must be non-empty")
    seed = _seed_of(rng)
    ds = task.dataset
    idx = task.forget_idx
    k = ds.num_classes

    def one(job):
        ti, si = job
        spec = spec_template.with_tau(taus[ti])
        return shared_draw_estimate(m, a, (ds.features[idx[si]], int(ds.labels[idx[si]])), spec, _substream(seed, si, ti), k)

    jobs = [(ti, si) for ti in range(len(taus)) for si in range(idx.size)]
    workers = _threads()
    if workers:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    per = np.array([e.r_hat for e in results], dtype=np.float64).reshape(len(taus), idx.size)
    kk = np.array([e.k_hat for e in results]).reshape(len(taus), idx.size)
    r_mean, prev, zeros = [], [], []
    for ti in range(len(taus)):
        ok = np.isfinite(per[ti]) & ~np.isnan(per[ti])
        n_zero = int(np.sum(~ok))
        if n_zero:
            log.info("tau=%g: %d forget samples with zero re-trained hits excluded", taus[ti], n_zero)
        zeros.append(n_zero)
        r_mean.append(float(np.mean(per[ti][ok])) if ok.any() else float("nan"))
        prev.append(float(np.mean(per[ti][ok] > 1.0)) if ok.any() else float("nan"))
    k_mean = [float(np.mean(row)) if row.size else float("nan") for row in kk]
    return RkCurve(taus, r_mean, k_mean, prev, zeros, per)


def write_rk_csv(curve: RkCurve, path) -> None:
    lines = ["tau,r_hat,k_hat,prevalence,denominator_zero_count"]
    for tau, r, kh, pv, z in curve.rows():
        lines.append(f"{tau:.6g},{r:.6g},{kh:.6g},{pv:.6g},{z}")
    Path(path).write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------------- reports


def evaluate_model(model: MlpModel, task: UnlearnTask, attacker_seed: int = 0) -> EvalReport:
    ds = task.dataset
    return EvalReport(
        retain_acc=accuracy(model, ds, task.retain_idx),
        unlearn_acc=1.0 - accuracy(model, ds, task.forget_idx),
        test_acc=accuracy(model, ds, task.test_idx),
        mia_acc=mia_accuracy(model, task, attacker_seed),
    )


def _round6(obj):
    if isinstance(obj, float):
        return float(f"{obj:.6g}") if np.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {str(k): _round6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round6(v) for v in obj]
    return obj


def write_report_json(payload: dict, path) -> None:
    Path(path).write_text(json.dumps(_round6(payload), indent=2, sort_keys=True) + "\n")
