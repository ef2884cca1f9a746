# # Numerical checks of the theory
#
# Indistinguishability of two finite distributions, the mass that can sit
# where their likelihood ratio is extreme, and concentration on the sphere.

# In[1]:

from fractions import Fraction as F

from unlearnlab.theory import (
    FiniteDist,
    hemisphere_bound,
    hemisphere_expansion,
    indist_check,
    violation_mass_sweep,
    minimal_delta,
    prop2_bound,
)

# In[2]:

# Bernoulli(0.6) against Bernoulli(0.5), exact rational arithmetic
P = FiniteDist((0, 1), (F(2, 5), F(3, 5)))
Q = FiniteDist((0, 1), (F(1, 2), F(1, 2)))
print(indist_check(P, Q, 0, F(1, 10)))
print(indist_check(P, Q, 0, F(1, 20)))
# a multiplicative slack of 6/5 is not enough: Q(0)/P(0) = 5/4
print("smallest delta at e^eps = 6/5:", minimal_delta(P, Q, None, exp_eps=F(6, 5)))
print(indist_check(P, Q, None, 0, exp_eps=F(5, 4)))

# In[3]:

# random pairs, each certified at its own minimal delta, never put more than
# 2 delta / (1 - e^-eps) mass on outcomes whose likelihood ratio exceeds e^eps
n, violations, worst = violation_mass_sweep(2000, seed=0)
print(n, "pairs,", violations, "violations, worst mass / bound =", float(worst))

# In[4]:

# the tau-expansion of a hemisphere covers most of the sphere in high dimension
for d in (20, 100):
    r = hemisphere_expansion(d, 0.3, 100_000, seed=0)
    print(f"d={d}: empirical {r.empirical:.4f} >= bound {r.bound:.4f}")
print("bound at d=100, tau=0.3:", round(hemisphere_bound(100, 0.3), 6))

# In[5]:

# the disagreement lower bound falls toward 2 delta as eps grows and vanishes at delta = 0
for eps in (0.1, 1.0, 10.0, 1000.0):
    print(eps, round(prop2_bound(eps, 0.05, 0.1, 100), 6))
print(prop2_bound(0.0, 0.0, 0.1, 100))
