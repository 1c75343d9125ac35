"""Separation rates over ellipsoids and the eigenvalue condition check.

Run with ``python tutorials/07_separation_rates.py``.
"""
# %%
import numpy as np

from flmtest import EllipsoidSpec, adaptive_rate, check_assumption_B2, separation_rate

# %% [markdown]
# For a_k^2 lambda_k = k^-s the rate decays like n^(-2s/(1+2s)); the slope
# of log rate against log n shows it.

# %%
ns = np.array([1e3, 1e4, 1e5, 1e6])
for s in (2, 4, 6):
    spec = EllipsoidSpec("polynomial", 1.0, s=s)
    reps = [separation_rate(spec, int(n)) for n in ns]
    slope = np.polyfit(np.log(ns), np.log([r.rho_sq for r in reps]), 1)[0]
    print(f"s={s}: fitted slope {slope:.3f}, theory {-2 * s / (1 + 2 * s):.3f}, "
          f"k* = {[r.k_star for r in reps]}, outside guarantee: {spec.outside_guarantee}")

# %% [markdown]
# For a_k^2 lambda_k = exp(-s k) the optimal dimension grows like log(n)/s.

# %%
spec = EllipsoidSpec("exponential", 1.0, s=1)
for n in (10**2, 10**4, 10**6):
    r = separation_rate(spec, n)
    print(f"n={n:>7}: k* = {r.k_star:>2}, log n = {np.log(n):.1f}, rho^2 n / sqrt(log n) = "
          f"{r.rho_sq * n / np.sqrt(np.log(n)):.3f}")

# %% [markdown]
# Adapting to unknown smoothness costs a log log factor, visible once the
# optimal dimension is large enough.

# %%
spec = EllipsoidSpec("polynomial", 1.0, s=1)
for n in (10**3, 10**5):
    print(f"n={n}: adaptive / plain = {adaptive_rate(spec, n) / separation_rate(spec, n).rho_sq:.3f}")

# %% [markdown]
# The decay condition j lambda_j max(log(j)^(1+gamma), 1) decreasing holds
# for Brownian motion and fails for lambda_j = 1/j.

# %%
print(check_assumption_B2(lambda j: ((j - 0.5) * np.pi) ** -2.0, 0.5, k_max=10**4))
print(check_assumption_B2(1.0 / np.arange(1, 100), 0.5))
