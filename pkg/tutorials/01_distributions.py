"""Fisher and chi-square tails, quantiles, and seeded Gaussian streams.

Run with ``python tutorials/01_distributions.py``.
"""
# %%
import math

import numpy as np

from flmtest import (
    RngStream,
    chi2_upper_tail,
    fisher_upper_quantile,
    fisher_upper_tail,
    sample_standard_normal,
)

# %% [markdown]
# An F(1, 1) variable is the square of a standard Cauchy variable, so its
# upper 5% point is tan(0.475 pi)^2. The quantile function recovers it.

# %%
exact = math.tan(0.475 * math.pi) ** 2
q = fisher_upper_quantile(0.05, 1, 1)
print(f"F(1,1) upper 5% point: {q:.10f} (Cauchy-square value {exact:.10f})")
print(f"tail at that point:     {fisher_upper_tail(q, 1, 1):.3e}")

# %% [markdown]
# With a huge denominator the Fisher law collapses onto chi2(k) / k.

# %%
for m in (10, 100, 10**4, 10**6):
    print(f"m = {m:>7}: F(1, m) upper 5% point = {fisher_upper_quantile(0.05, 1, m):.5f}")
print("chi2(1) tail at 3.8415:", chi2_upper_tail(3.8415, 1))

# %% [markdown]
# Tails work on arrays and stay accurate far out.

# %%
x = np.array([0.5, 1.0, 2.0, 5.0, 20.0])
print("P(F(4, 40) >= x):", fisher_upper_tail(x, 4, 40))

# %% [markdown]
# Random numbers come from streams addressed by a seed and a path of stream
# ids. The same address always yields the same numbers, and any slice can
# be regenerated from its offset.

# %%
s = RngStream(2024, (3,))
z = sample_standard_normal(s, 10**5)
print(f"mean {z.mean():+.4f}, variance {z.var():.4f}")
print("offset slice matches:", np.array_equal(sample_standard_normal(s, 5, offset=100), z[100:105]))
print("child stream:", s.child(1))
