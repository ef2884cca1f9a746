# # The estimator against an exact answer
#
# Two 1-D threshold rules make every quantity computable by hand:
# m predicts class 1 when x > 0.5, the reference a when x > 0.6.
# Perturb x = 0.55 uniformly in [0.45, 0.65] and count hits.

# In[1]:

from fractions import Fraction

import numpy as np

from unlearnlab.attacks import PerturbationSpec
from unlearnlab.evaluate import adversarial_disagreement, residual_knowledge


def rule(t):
    return lambda X: (np.asarray(X)[:, 0] > t).astype(np.int64)


m, a = rule(0.5), rule(0.6)
x = (np.array([0.55]), 1)

# In[2]:

# exact values: the interval has width 1/5; m is right on [0.5, 0.65] (3/4 of it),
# a on [0.6, 0.65] (1/4), and they disagree on [0.5, 0.6] (1/2)
p_m, p_a = Fraction(3, 4), Fraction(1, 4)
print("r =", p_m / p_a, " k =", Fraction(1, 2))

# In[3]:

# a zero-step PGD is its uniform random start in the l-inf ball
for c in (100, 10_000, 100_000):
    spec = PerturbationSpec("pgd", tau=0.1, steps=0, mc_count=c)
    est = residual_knowledge(m, a, x, spec, np.random.default_rng(0))
    k = adversarial_disagreement(m, a, x, spec, np.random.default_rng(1))
    print(f"c={c:>6}: r_hat={est.r_hat:.4f}  k_hat={k:.4f}")

# Both estimates settle on the enumerated values as the draw count grows.
