import numpy as np
import pytest

from unlearnlab.datasets import Dataset, UnlearnTask, gen_blobs, load_iris, split_unlearn
from unlearnlab.nn import MlpModel, cross_entropy, forward, init_params, logit_jacobian


def fd_param_grad(model, x, y, h=1e-5):
    """Central finite differences of the mean cross-entropy over flat parameters."""
    theta = model.flat()
    out = np.empty_like(theta)
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        lu = cross_entropy(forward(model.with_flat(up), x)[1], y)
        ld = cross_entropy(forward(model.with_flat(dn), x)[1], y)
        out[i] = (lu - ld) / (2 * h)
    return out


def jitter_biases(model, seed):
    """Random nonzero biases keep finite differences away from ReLU kinks at zero."""
    rng = np.random.default_rng(seed)
    return model.with_params(model.weights, [rng.uniform(-0.5, 0.5, b.shape) for b in model.biases])


def fd_input_grad(model, x, y, h=1e-5):
    out = np.empty_like(x)
    for i in range(x.size):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (cross_entropy(forward(model, up)[1], [y]) - cross_entropy(forward(model, dn)[1], [y])) / (2 * h)
    return out


def rel_err(a, b):
    # relative error with an absolute floor for near-zero coordinates
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-4)


def logistic_model(w):
    """Two-logit linear model whose class-1 margin is ``w @ x``."""
    w = np.asarray(w, dtype=np.float64)
    weights = np.vstack([np.zeros_like(w), w])
    return MlpModel((weights,), (np.zeros(2),), "relu")


@pytest.fixture(scope="session")
def iris():
    return load_iris()


@pytest.fixture(scope="session")
def iris_task(iris):
    return split_unlearn(iris, "sample", 1, 0.5, 0.2, seed=7)


@pytest.fixture(scope="session")
def blobs():
    return gen_blobs(3, 50, 4, 0.2, seed=7)


@pytest.fixture(scope="session")
def blobs_task(blobs):
    return split_unlearn(blobs, "sample", 0, 0.5, 0.2, seed=3)


@pytest.fixture
def small_model():
    return init_params([4, 8, 3], "relu", seed=5)


def threshold_classifier(t):
    """1-D rule: class 1 iff x > t."""
    return lambda X: (np.asarray(X)[:, 0] > t).astype(np.int64)


def interval_oracle(x, tau, t_m, t_a, y=1):
    """Exact hit and disagreement probabilities of two threshold rules under
    x' ~ Uniform[x - tau, x + tau], by enumerating the sub-intervals between
    breakpoints (exact rational arithmetic)."""
    from fractions import Fraction as F

    lo, hi = F(x) - F(tau), F(x) + F(tau)
    cuts = sorted({lo, hi} | {F(t) for t in (t_m, t_a) if lo < F(t) < hi})
    p_m = p_a = k = F(0)
    for a, b in zip(cuts, cuts[1:]):
        w = (b - a) / (hi - lo)
        mid = (a + b) / 2
        lm, la = int(mid > F(t_m)), int(mid > F(t_a))
        p_m += w * (lm == y)
        p_a += w * (la == y)
        k += w * (lm != la)
    return p_m, p_a, p_m / p_a if p_a else None, k


def linear_task(n_retain=4, n_forget=2, d=9, k=2, seed=0):
    rng = np.random.default_rng(seed)
    n = n_retain + n_forget + 1
    x = rng.random((n, d))
    y = rng.integers(0, k, n)
    y[:k] = np.arange(k)
    ds = Dataset(x, y, k)
    idx = np.arange(n)
    return UnlearnTask(ds, idx[:n_retain], idx[n_retain:n_retain + n_forget], idx[-1:])


def min_norm_interpolant(w0_model, x, y, k):
    """Closest parameters to ``w0`` whose logits equal one-hot ``y`` on ``x`` (exact for linear models)."""
    j = logit_jacobian(w0_model, x)
    target = np.eye(k)[y].ravel() - forward(w0_model, x)[0].ravel()
    return w0_model.flat() + np.linalg.lstsq(j, target, rcond=None)[0]


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict line, then assert it."""
    def check(n, title, ok, detail, seconds=None, limit=None):
        timed = seconds is not None and limit is not None
        ok = bool(ok) and (not timed or seconds < limit)
        extra = f" [{seconds:.1f}s / limit {limit:g}s]" if timed else ""
        line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {title}: {detail}{extra}"
        request.config.stash.setdefault(ACCEPTANCE, {})[n] = line
        print(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
