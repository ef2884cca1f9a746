"""Numerical checks of indistinguishability, sphere concentration and disagreement bounds.

Finite-distribution routines work on plain Python numbers, so passing
``fractions.Fraction`` probabilities together with a rational ``exp_eps``
(the value of e^epsilon) gives exact arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericError

SQRT_PI_OVER_8 = math.sqrt(math.pi / 8.0)


@dataclass(frozen=True)
class FiniteDist:
    support: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.support) != len(self.probs):
            raise ConfigError("support and probs differ in length")
        if len(set(self.support)) != len(self.support):
            raise ConfigError("support has duplicate outcomes")
        if any(p < 0 for p in self.probs):
            raise ConfigError("negative probability mass")
        total = sum(self.probs)
        exact = all(isinstance(p, (int, Fraction)) for p in self.probs)
        if (total != 1) if exact else abs(total - 1) > 1e-12:
            raise ConfigError(f"probabilities sum to {total}, not 1")

    @classmethod
    def of(cls, mapping: dict) -> "FiniteDist":
        return cls(tuple(mapping), tuple(mapping.values()))

    def mass(self, outcome):
        try:
            return self.probs[self.support.index(outcome)]
        except ValueError:
            return 0


@dataclass(frozen=True)
class IndistParams:
    epsilon: float
    delta: float
    # Renyi order; kept for completeness, no routine consumes it
    alpha: float = 2.0

    def __post_init__(self):
        if self.epsilon < 0 or not 0 <= self.delta <= 1 or not self.alpha > 1:
            raise ConfigError("need epsilon >= 0, delta in [0, 1], alpha > 1")


def _aligned(P: FiniteDist, Q: FiniteDist):
    outcomes = list(P.support) + [z for z in Q.support if z not in P.support]
    return outcomes, [P.mass(z) for z in outcomes], [Q.mass(z) for z in outcomes]


def _exp(epsilon, exp_eps):
    if exp_eps is not None:
        return exp_eps
    # keep epsilon = 0 exact so rational inputs stay rational
    return 1 if epsilon == 0 else math.exp(epsilon)


@dataclass(frozen=True)
class IndistResult:
    holds: bool
    witness: tuple  # violating event, empty when the check holds
    direction: str  # "P<=e^eps Q+delta", "Q<=e^eps P+delta" or ""
    excess: float   # largest event-level violation (<= delta when holds)


def indist_check(P: FiniteDist, Q: FiniteDist, epsilon, delta, exp_eps=None) -> IndistResult:
    """(epsilon, delta)-indistinguishability of two finite distributions.

    For each direction the worst event is ``{z : P(z) > e^eps Q(z)}`` (and its
    mirror), so checking those two sets covers every subset.
    """
    b = _exp(epsilon, exp_eps)
    outcomes, p, q = _aligned(P, Q)
    worst = []
    for name, a, c in (("P<=e^eps Q+delta", p, q), ("Q<=e^eps P+delta", q, p)):
        event = tuple(z for z, ai, ci in zip(outcomes, a, c) if ai > b * ci)
        excess = sum(ai - b * ci for ai, ci in zip(a, c) if ai > b * ci)
        worst.append((excess, event, name))
    excess, event, name = max(worst, key=lambda t: t[0])
    if excess > delta:
        return IndistResult(False, event, name, excess)
    return IndistResult(True, (), "", excess)


def brute_force_indist(P: FiniteDist, Q: FiniteDist, epsilon, delta, exp_eps=None) -> bool:
    """Definition check over every subset of the joint support (small supports only)."""
    b = _exp(epsilon, exp_eps)
    outcomes, p, q = _aligned(P, Q)
    n = len(outcomes)
    for mask in range(1 << n):
        pt = sum(p[i] for i in range(n) if mask >> i & 1)
        qt = sum(q[i] for i in range(n) if mask >> i & 1)
        if pt > b * qt + delta or qt > b * pt + delta:
            return False
    return True


def minimal_delta(P: FiniteDist, Q: FiniteDist, epsilon, exp_eps=None):
    """Smallest delta for which ``indist_check`` holds at ``epsilon``."""
    return max(indist_check(P, Q, epsilon, 0, exp_eps).excess, 0)


@dataclass(frozen=True)
class ViolationMass:
    mass_p: float
    mass_q: float
    outcomes: tuple


def ratio_violation_mass(P: FiniteDist, Q: FiniteDist, epsilon, exp_eps=None) -> ViolationMass:
    """Mass of outcomes whose likelihood ratio P/Q leaves ``[e^-2eps, e^2eps]``."""
    if exp_eps is None and not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    b = _exp(epsilon, exp_eps)
    if not b > 1:
        raise ConfigError("e^epsilon must exceed 1")
    b2 = b * b
    outcomes, p, q = _aligned(P, Q)
    bad = [i for i in range(len(outcomes)) if p[i] > b2 * q[i] or b2 * p[i] < q[i]]
    return ViolationMass(sum(p[i] for i in bad), sum(q[i] for i in bad), tuple(outcomes[i] for i in bad))


def violation_bound(epsilon, delta, exp_eps=None):
    """``2 delta / (1 - e^-eps)``."""
    b = _exp(epsilon, exp_eps)
    return 2 * delta / (1 - 1 / b)


# --------------------------------------------------------------- sphere


@dataclass(frozen=True)
class ExpansionResult:
    d: int
    tau: float
    empirical: float
    bound: float
    std_err: float
    n_samples: int

    @property
    def passes(self) -> bool:
        return self.empirical >= self.bound - 3 * self.std_err


def hemisphere_bound(d: int, tau: float) -> float:
    return 1.0 - SQRT_PI_OVER_8 * math.exp(-(d - 1) * tau * tau / 2.0)


def uniform_sphere(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def hemisphere_expansion(d: int, tau: float, n_samples: int = 100_000, seed: int = 0) -> ExpansionResult:
    """Monte-Carlo measure of the chordal tau-expansion of ``{x_1 >= 0}`` on the sphere."""
    if d < 3 or tau < 0 or n_samples < 10_000:
        raise ConfigError("need d >= 3, tau >= 0 and at least 1e4 samples")
    x1 = uniform_sphere(d, n_samples, np.random.default_rng(seed))[:, 0]
    # chord length tau corresponds to polar angle 2*arcsin(tau/2)
    angle = 2.0 * math.asin(min(tau / 2.0, 1.0))
    # beyond a quarter turn every point is within reach of the hemisphere
    frac = float(np.mean(x1 >= -math.sin(angle))) if angle < math.pi / 2 else 1.0
    se = math.sqrt(max(frac * (1 - frac), 1e-300) / n_samples)
    return ExpansionResult(d, tau, frac, hemisphere_bound(d, tau), se, n_samples)


def prop2_bound(epsilon: float, delta: float, tau: float, d: int) -> float:
    """Lower bound on the probability of (perturbed) disagreement, O-constant 1, clamped to [0, 1]."""
    if delta == 0:
        return 0.0
    if epsilon == 0:
        return 1.0
    lead = 2.0 * delta / (-math.expm1(-epsilon))
    tail = 1.0 - SQRT_PI_OVER_8 * math.exp(-2.0 * epsilon - (d - 1) * tau * tau / 2.0)
    return float(min(max(lead * tail, 0.0), 1.0))


# ------------------------------------------------------- readout amplification


def min_norm_readout(w, x) -> np.ndarray:
    """Closest point to ``x`` rescaled along ``w`` for a binary linear classifier."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return x - (x @ x) * w / (w @ w)


@dataclass
class Prop1Table:
    readout_ratios: dict   # bin index -> P_M / P_A of readouts
    model_ratios: dict     # bin index -> P_M / P_A of normalized weights
    eps_hat: float         # max |log ratio| over model bins
    outside: list = field(default_factory=list)  # readout bins beyond e^(+-2 eps_hat)


def _bin_counts(points, edges):
    idx = tuple(np.clip(np.searchsorted(e, points[:, j], side="right") - 1, 0, len(e) - 2) for j, e in enumerate(edges))
    counts = {}
    for key in zip(*idx):
        counts[key] = counts.get(key, 0) + 1
    return counts


def _ratios(pm, pa, bins):
    both = np.vstack([pm, pa])
    edges = [np.linspace(both[:, j].min(), both[:, j].max() + 1e-12, bins + 1) for j in range(both.shape[1])]
    cm, ca = _bin_counts(pm, edges), _bin_counts(pa, edges)
    nm, na = len(pm), len(pa)
    return {k: (cm[k] / nm) / (ca[k] / na) for k in cm if k in ca}


def prop1_experiment(ensemble_m: Sequence, ensemble_a: Sequence, x, bins: int = 4) -> Prop1Table:
    """Compare binned readout frequencies with binned model frequencies for two ensembles."""
    if len(ensemble_m) < 100 or len(ensemble_a) < 100:
        raise ConfigError("each ensemble needs at least 100 models")
    wm = np.array([np.asarray(w, dtype=np.float64) for w in ensemble_m])
    wa = np.array([np.asarray(w, dtype=np.float64) for w in ensemble_a])
    gm = np.array([min_norm_readout(w, x) for w in wm])
    ga = np.array([min_norm_readout(w, x) for w in wa])
    model_r = _ratios(wm / np.linalg.norm(wm, axis=1, keepdims=True), wa / np.linalg.norm(wa, axis=1, keepdims=True), bins)
    read_r = _ratios(gm, ga, bins)
    eps_hat = max((abs(math.log(r)) for r in model_r.values()), default=0.0)
    lo, hi = math.exp(-2 * eps_hat), math.exp(2 * eps_hat)
    outside = sorted(k for k, r in read_r.items() if not lo <= r <= hi)
    return Prop1Table(read_r, model_r, eps_hat, outside)


# ----------------------------------------------------------------- report


@dataclass(frozen=True)
class TheoryRow:
    name: str
    params: str
    bound: float
    empirical: float
    verdict: bool


def write_theory_csv(rows, path) -> None:
    lines = ["name,params,bound,empirical,verdict"]
    for r in rows:
        lines.append(f"{r.name},{r.params},{r.bound:.6g},{r.empirical:.6g},{'pass' if r.verdict else 'fail'}")
    Path(path).write_text("\n".join(lines) + "\n")


def random_pair(rng: np.random.Generator, max_support: int = 6, denom: int = 60):
    """Random pair of rational distributions on a shared support of size 2..max_support."""
    n = int(rng.integers(2, max_support + 1))

    def one():
        w = rng.integers(0, 10, size=n) + (rng.random(n) < 0.7)
        if w.sum() == 0:
            w[0] = 1
        total = int(w.sum())
        return FiniteDist(tuple(range(n)), tuple(Fraction(int(v), total) for v in w))

    return one(), one()


def violation_mass_sweep(n_pairs: int = 10_000, seed: int = 0) -> tuple:
    """Exact sweep: certified pairs never exceed the violation-mass bound.

    Returns ``(n_checked, n_violations, worst_ratio)`` where ``worst_ratio`` is
    the largest observed violation mass over its bound.
    """
    rng = np.random.default_rng(seed)
    violations, worst = 0, Fraction(0)
    for _ in range(n_pairs):
        P, Q = random_pair(rng)
        b = Fraction(int(rng.integers(101, 400)), 100)
        delta = minimal_delta(P, Q, None, exp_eps=b) + Fraction(int(rng.integers(0, 5)), 100)
        if delta > 1:
            delta = Fraction(1)
        if not indist_check(P, Q, None, delta, exp_eps=b).holds:
            raise NumericError("minimal delta failed to certify its own pair")
        bound = violation_bound(None, delta, exp_eps=b)
        vm = ratio_violation_mass(P, Q, None, exp_eps=b)
        for mass in (vm.mass_p, vm.mass_q):
            if mass > bound:
                violations += 1
            if bound > 0:
                worst = max(worst, Fraction(mass) / bound)
            elif mass > 0:
                violations += 1
    return n_pairs, violations, worst
