"""Grids, quadrature inner products and functional PCA.

Curves are stored as rows of an ``n x p`` matrix sampled on a common
:class:`Grid`. The Hilbert-space inner product is replaced by trapezoidal
quadrature, and functional PCA diagonalizes the empirical covariance
operator ``h -> (1/n) sum_i <X_i, h> X_i`` under that inner product.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

__all__ = [
    "FpcaError",
    "Grid",
    "FunctionalSample",
    "FpcaResult",
    "inner_product",
    "center_sample",
    "fpca",
    "RANK_TOL",
]

# eigenvalues below RANK_TOL * largest eigenvalue count as zero
RANK_TOL = 1e-12


class FpcaError(RuntimeError):
    """Raised when the eigen-solver fails or the input is degenerate."""


@dataclass(frozen=True)
class Grid:
    """Observation points and trapezoidal quadrature weights.

    Parameters
    ----------
    points : array_like
        Strictly increasing evaluation points ``t_1 < ... < t_p``.
    """

    points: np.ndarray
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).copy()
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("a grid needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        steps = np.diff(pts)
        if np.any(steps <= 0):
            raise ValueError("grid points must be strictly increasing")
        w = np.empty_like(pts)
        w[0] = steps[0] / 2
        w[-1] = steps[-1] / 2
        w[1:-1] = (steps[:-1] + steps[1:]) / 2
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, size: int, start: float = 0.0, stop: float = 1.0) -> "Grid":
        """Evenly spaced grid including both endpoints, mirror-symmetric about its midpoint."""
        if size < 2:
            raise ValueError("a grid needs at least two points")
        mid = 0.5 * (start + stop)
        half = 0.5 * (stop - start)
        offsets = (2.0 * np.arange(size) - (size - 1)) / (size - 1)
        pts = mid + half * offsets
        # mirror the upper half; on [0, 1] this makes t - 1/2 exactly antisymmetric
        upper = pts[size // 2 :]
        pts[: (size + 1) // 2] = (start + stop) - upper[::-1]
        pts[0], pts[-1] = start, stop
        return cls(pts)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def length(self) -> float:
        return float(self.points[-1] - self.points[0])

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(
            np.all(self.points == other.points)
        )

    def __hash__(self):
        return hash(self.points.tobytes())


@dataclass(frozen=True)
class FunctionalSample:
    """``n`` curves on a shared grid together with their scalar responses."""

    grid: Grid
    curves: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        curves = np.asarray(self.curves, dtype=float)
        responses = np.asarray(self.responses, dtype=float)
        if curves.ndim != 2:
            raise ValueError("curves must be an n x p matrix")
        n, p = curves.shape
        if p != self.grid.size:
            raise ValueError(f"curves have {p} columns but the grid has {self.grid.size} points")
        if responses.shape != (n,):
            raise ValueError(f"expected {n} responses, got shape {responses.shape}")
        if n < 4:
            raise ValueError(f"at least 4 observations are required, got {n}")
        if not (np.all(np.isfinite(curves)) and np.all(np.isfinite(responses))):
            raise ValueError("sample contains non-finite values")
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "responses", responses)

    @property
    def n(self) -> int:
        return self.curves.shape[0]

    def with_responses(self, responses) -> "FunctionalSample":
        return replace(self, responses=np.asarray(responses, dtype=float))


@dataclass(frozen=True)
class FpcaResult:
    """Empirical Karhunen-Loeve decomposition of a sample.

    Attributes
    ----------
    eigenvalues : ndarray, shape (r,)
        Nonincreasing nonnegative eigenvalues of the empirical covariance.
    eigenfunctions : ndarray, shape (r, p)
        Eigenfunctions on the grid, orthonormal under the quadrature.
    rank : int
        Numerical rank of the empirical covariance operator; may exceed
        ``r`` when fewer components were requested.
    scores : ndarray, shape (n, r)
        ``scores[i, j] = <X_i, V_j>``.
    total_variance : float
        ``(1/n) sum_i ||X_i||^2``, the trace of the empirical covariance.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    rank: int
    scores: np.ndarray
    grid: Grid
    total_variance: float

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size


def inner_product(f, g, grid: Grid):
    """Quadrature inner product ``sum_i w_i f(t_i) g(t_i)``.

    ``f`` and ``g`` may be stacks of functions (last axis on the grid);
    the result then broadcasts over the leading axes.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape[-1] != grid.size or g.shape[-1] != grid.size:
        raise ValueError("function length does not match the grid")
    out = np.sum(f * g * grid.weights, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def center_sample(sample: FunctionalSample) -> FunctionalSample:
    """Subtract the empirical mean curve and the mean response."""
    curves = sample.curves - sample.curves.mean(axis=0)
    responses = sample.responses - sample.responses.mean()
    return FunctionalSample(sample.grid, curves, responses)


def _fix_signs(vectors: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # largest |v_i| * sqrt(w_i) made positive; argmax keeps the smallest index on ties
    idx = np.argmax(np.abs(vectors) * np.sqrt(weights), axis=1)
    signs = np.sign(vectors[np.arange(vectors.shape[0]), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def _eigh_desc(matrix: np.ndarray):
    try:
        vals, vecs = scipy.linalg.eigh(matrix)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise FpcaError(f"eigen-solver failed: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise FpcaError("eigen-solver returned non-finite eigenvalues")
    return vals[::-1].copy(), np.ascontiguousarray(vecs[:, ::-1])


def _numerical_rank(vals: np.ndarray) -> int:
    if vals.size == 0 or vals[0] <= 0:
        return 0
    return int(np.count_nonzero(vals > vals[0] * RANK_TOL))


def fpca(
    sample: FunctionalSample,
    max_components: Optional[int] = None,
    method: str = "auto",
) -> FpcaResult:
    """Functional PCA of the (uncentered) sample curves.

    Parameters
    ----------
    sample : FunctionalSample
        Data; curves are used as given, call :func:`center_sample` first if
        needed.
    max_components : int, optional
        Keep at most this many leading components (default: all up to the
        numerical rank). Must not exceed ``n``.
    method : {"auto", "gram", "covariance"}
        ``"gram"`` diagonalizes the ``n x n`` matrix ``<X_i, X_l> / n``;
        ``"covariance"`` diagonalizes the symmetrized weighted ``p x p``
        covariance. ``"auto"`` picks the smaller problem.

    Returns
    -------
    FpcaResult
    """
    X = sample.curves
    grid = sample.grid
    n, p = X.shape
    if max_components is None:
        max_components = min(n, p)
    if not 1 <= max_components <= n:
        raise ValueError(f"max_components must lie in [1, n={n}], got {max_components}")
    if method == "auto":
        method = "gram" if p > n else "covariance"
    w = grid.weights
    total_variance = float(np.sum(X * X * w) / n)

    if method == "gram":
        Xs = X * np.sqrt(w)
        gram = Xs @ Xs.T / n
        vals, vecs = _eigh_desc(gram)
        rank = _numerical_rank(vals)
        r = min(max_components, rank)
        funcs = vecs[:, :r].T @ X
        norms = np.sqrt(np.sum(funcs * funcs * w, axis=1))
        funcs = funcs / norms[:, None]
    elif method == "covariance":
        root_w = np.sqrt(w)
        Xs = X * root_w
        cov = Xs.T @ Xs / n
        cov = 0.5 * (cov + cov.T)
        vals, vecs = _eigh_desc(cov)
        rank = min(_numerical_rank(vals), n)
        r = min(max_components, rank)
        funcs = vecs[:, :r].T / root_w
    else:
        raise ValueError(f"unknown method {method!r}")

    vals = np.clip(vals[:r], 0.0, None)
    funcs = _fix_signs(funcs, w) if r else funcs.reshape(0, p)
    scores = (X * w) @ funcs.T
    for arr in (vals, funcs, scores):
        arr.setflags(write=False)
    return FpcaResult(
        eigenvalues=vals,
        eigenfunctions=funcs,
        rank=rank,
        scores=scores,
        grid=grid,
        total_variance=total_variance,
    )
