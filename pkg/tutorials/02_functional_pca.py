"""Functional principal components of simulated Brownian paths.

Run with ``python tutorials/02_functional_pca.py``.
"""
# %%
import numpy as np

from flmtest import FunctionalSample, ProcessSpec, RngStream, fpca, inner_product, simulate_design

# %% [markdown]
# Brownian motion on [0, 1] has eigenvalues ((j - 1/2) pi)^-2 and
# eigenfunctions sqrt(2) sin((j - 1/2) pi t). We simulate 300 paths from
# 100 terms of that expansion on a 1000-point grid.

# %%
proc = ProcessSpec.brownian()
X = simulate_design(proc, 300, RngStream(1))
sample = FunctionalSample(proc.grid, X, np.zeros(300))
print("curves:", X.shape, "first value of each path is 0:", bool(np.all(X[:, 0] == 0)))

# %% [markdown]
# With more grid points than curves the decomposition diagonalizes the
# 300 x 300 Gram matrix of the curves instead of the 1000 x 1000 covariance.

# %%
res = fpca(sample, max_components=6)
print("rank:", res.rank)
print("empirical eigenvalues:", np.round(res.eigenvalues, 4))
print("true eigenvalues:     ", np.round(proc.eigenvalues[:6], 4))

# %% [markdown]
# Eigenfunctions are orthonormal for the trapezoid inner product. They match
# the true ones up to sampling error (and sign, which is fixed by a
# convention: the largest weighted coordinate is positive).

# %%
G = inner_product(res.eigenfunctions[:, None, :], res.eigenfunctions[None, :, :], proc.grid)
print("max deviation from identity:", np.abs(G - np.eye(6)).max())
overlap = np.abs(inner_product(res.eigenfunctions[:3], proc.eigenfunctions[:3], proc.grid))
print("|<estimated, true>| for the first three:", np.round(overlap, 3))

# %% [markdown]
# Both routes give the same answer; the covariance route is used when the
# grid is coarser than the sample.

# %%
a = fpca(sample, method="gram", max_components=3)
b = fpca(sample, method="covariance", max_components=3)
print("route agreement:", np.abs(a.eigenvalues - b.eigenvalues).max())
