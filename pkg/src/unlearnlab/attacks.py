"""Perturbations inside a norm ball around an input: Gaussian noise, FGSM and PGD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import MlpModel, grad_input

PGD_STEP = 2.0 / 255.0


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str = "gaussian"
    p: str | None = None
    tau: float = 0.03
    step_size: float = PGD_STEP
    steps: int = 10
    targeted: bool = True
    # "random_wrong_label" or an int naming a fixed target class
    target_rule: str | int = "random_wrong_label"
    mc_count: int = 100
    clamp: bool = True

    def __post_init__(self):
        if self.kind not in ("gaussian", "fgsm", "pgd"):
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        expected = "l2" if self.kind == "gaussian" else "linf"
        if self.p is None:
            object.__setattr__(self, "p", expected)
        elif self.p != expected:
            raise ConfigError(f"{self.kind} perturbations use p={expected}, got {self.p}")
        if self.tau < 0:
            raise ConfigError("tau must be non-negative")
        if self.kind == "pgd" and not self.step_size > 0:
            raise ConfigError("pgd step_size must be positive")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.mc_count < 1:
            raise ConfigError("mc_count must be at least 1")
        if not (self.target_rule == "random_wrong_label" or isinstance(self.target_rule, int)):
            raise ConfigError(f"unknown target rule {self.target_rule!r}")

    def with_tau(self, tau: float) -> "PerturbationSpec":
        return PerturbationSpec(self.kind, self.p, tau, self.step_size, self.steps, self.targeted,
                                self.target_rule, self.mc_count, self.clamp)


def _clamp(x, clamp: bool):
    return np.clip(x, 0.0, 1.0) if clamp else x


def sample_gaussian(x, tau: float, clamp: bool, rng: np.random.Generator) -> np.ndarray:
    """``x`` plus i.i.d. N(0, tau^2) noise per coordinate."""
    x = np.asarray(x, dtype=np.float64)
    if tau < 0:
        raise ConfigError("tau must be non-negative")
    if tau == 0:
        return x.copy()
    return _clamp(x + tau * rng.standard_normal(x.shape), clamp)


def random_wrong_labels(y, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """One label per entry of ``y``, uniform over the other classes."""
    if num_classes < 2:
        raise ConfigError("no wrong label exists with a single class")
    y = np.asarray(y, dtype=np.int64)
    shift = rng.integers(1, num_classes, size=y.shape)
    return (y + shift) % num_classes


def _direction(model, x, y, targeted, target_label):
    if targeted:
        t = np.broadcast_to(np.asarray(target_label), np.shape(y))
        if np.any(t == np.asarray(y)):
            raise ConfigError("target label must differ from the true label")
        return -np.sign(grad_input(model, x, t))
    return np.sign(grad_input(model, x, y))


def fgsm(model: MlpModel, x, y, tau: float, targeted: bool = False, target_label=None, clamp: bool = True) -> np.ndarray:
    """Single signed-gradient step of size ``tau``.

    Untargeted ascends the loss at ``y``; targeted descends the loss at
    ``target_label``. Works on one sample or a batch.
    """
    if tau < 0:
        raise ConfigError("tau must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if tau == 0:
        return x.copy()
    return _clamp(x + tau * _direction(model, x, y, targeted, target_label), clamp)


def pgd(
    model: MlpModel | None,
    x,
    y,
    tau: float,
    step_size: float = PGD_STEP,
    steps: int = 10,
    targeted: bool = False,
    target_label=None,
    rng: np.random.Generator | None = None,
    clamp: bool = True,
) -> np.ndarray:
    """Projected signed-gradient iterations from a uniform random start in the l-inf ball."""
    if steps < 0:
        raise ConfigError("steps must be non-negative")
    if tau < 0:
        raise ConfigError("tau must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if tau == 0:
        return x.copy()
    rng = rng if rng is not None else np.random.default_rng()
    lo, hi = x - tau, x + tau
    z = _clamp(x + rng.uniform(-tau, tau, size=x.shape), clamp)
    for _ in range(steps):
        z = z + step_size * _direction(model, z, y, targeted, target_label)
        z = _clamp(np.clip(z, lo, hi), clamp)
    return z


def _targets(spec_rule, y, num_classes, rng):
    if spec_rule == "random_wrong_label":
        return random_wrong_labels(y, num_classes, rng)
    return np.full(np.shape(y), int(spec_rule), dtype=np.int64)


def vulnerable_batch(
    model: MlpModel,
    X,
    Y,
    tau: float,
    v: int,
    method: str,
    rng: np.random.Generator,
    attack: str = "fgsm",
    step_size: float = PGD_STEP,
    steps: int = 10,
    clamp: bool = True,
) -> tuple:
    """``v`` candidates per row of ``X``; returns ``(points, labels)`` stacked draw-major.

    For ``ball`` the labels are the true labels. For ``targeted_attack`` each
    candidate is pushed toward a random wrong label, which is returned as its
    label.
    """
    if v < 1:
        raise ConfigError("v must be at least 1")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.int64)
    points, labels = [], []
    for _ in range(v):
        if method == "ball":
            points.append(sample_gaussian(X, tau, clamp, rng))
            labels.append(Y)
        elif method == "targeted_attack":
            t = random_wrong_labels(Y, model.num_classes, rng)
            if attack == "fgsm":
                points.append(fgsm(model, X, Y, tau, True, t, clamp))
            elif attack == "pgd":
                points.append(pgd(model, X, Y, tau, step_size, steps, True, t, rng, clamp))
            else:
                raise ConfigError(f"unknown attack {attack!r}")
            labels.append(t)
        else:
            raise ConfigError(f"unknown vulnerable-set method {method!r}")
    return np.concatenate(points), np.concatenate(labels)


def find_vulnerable(model: MlpModel, x, y, tau: float, v: int, method: str, rng: np.random.Generator, **attack_kw) -> np.ndarray:
    """``v`` perturbed copies of a single input ``x`` (shape (v, d))."""
    if method == "targeted_attack" and model.num_classes < 2:
        raise ConfigError("targeted search needs at least two classes")
    points, _ = vulnerable_batch(model, np.asarray(x)[None, :], np.atleast_1d(y), tau, v, method, rng, **attack_kw)
    return points


def perturb(model, x, y, spec: PerturbationSpec, rng: np.random.Generator, num_classes: int | None = None) -> np.ndarray:
    """``spec.mc_count`` i.i.d. perturbations of one sample, shape (c, d).

    Attacks are computed against ``model``; Gaussian draws ignore it.
    """
    c = spec.mc_count
    xs = np.repeat(np.asarray(x, dtype=np.float64)[None, :], c, axis=0)
    ys = np.full(c, int(y), dtype=np.int64)
    if spec.kind == "gaussian":
        return sample_gaussian(xs, spec.tau, spec.clamp, rng)
    k = num_classes if num_classes is not None else getattr(model, "num_classes", 2)
    targets = _targets(spec.target_rule, ys, k, rng) if spec.targeted else None
    if spec.kind == "fgsm":
        return fgsm(model, xs, ys, spec.tau, spec.targeted, targets, spec.clamp)
    return pgd(model, xs, ys, spec.tau, spec.step_size, spec.steps, spec.targeted, targets, rng, spec.clamp)
