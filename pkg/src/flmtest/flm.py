"""Fisher-type test of a null slope on a fixed number of principal directions.

The response vector is projected on the span of the first ``k`` score
columns ``W[:, j] = (<X_i, V_j>)_i``. The statistic compares the projected
energy with the residual mean square; divided by the projection dimension
it is Fisher distributed under the null with Gaussian noise and fixed
curves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .fda import FpcaResult, FunctionalSample, inner_product
from .numerics import fisher_upper_quantile, fisher_upper_tail

__all__ = [
    "COLUMN_TOL",
    "ProjectionContext",
    "ParametricTestResult",
    "orthonormal_basis",
    "build_projection",
    "phi_statistic",
    "parametric_test",
    "akdelta_norm",
]

# pivoted-QR columns with |R_jj| <= COLUMN_TOL * |R_11| are dropped
COLUMN_TOL = 1e-10

# residual energy below this fraction of ||Y||^2 is treated as an exact fit
_DEGENERATE_TOL = 1e-20


def orthonormal_basis(matrix: np.ndarray, tol: float = COLUMN_TOL) -> np.ndarray:
    """Orthonormal basis of the column span, by pivoted QR with a relative cutoff."""
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    if matrix.ndim != 2 or matrix.shape[1] == 0:
        return np.zeros((n, 0))
    q, r, _ = scipy.linalg.qr(matrix, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return np.zeros((n, 0))
    keep = int(np.count_nonzero(diag > tol * diag[0]))
    return q[:, :keep]


@dataclass(frozen=True)
class ProjectionContext:
    """Projector data shared by every response vector tested against one design.

    ``basis_Q`` spans the tested directions. ``null_basis`` spans directions
    allowed under the null (empty for the plain null slope); the residual
    is taken orthogonally to both.

    Attributes
    ----------
    k_requested : int
        Dimension asked for.
    k_effective : int
        ``min(k_requested, rank)``, further reduced if score columns are
        numerically dependent.
    df_num, df_den : int
        Fisher degrees of freedom of the statistic.
    """

    k_requested: int
    k_effective: int
    basis_Q: np.ndarray
    null_basis: np.ndarray
    n: int
    df_num: int
    df_den: int
    fpca: Optional[FpcaResult] = None

    @property
    def scale(self) -> int:
        """Divisor turning the statistic into a Fisher variable."""
        return self.df_num

    def project(self, y: np.ndarray) -> np.ndarray:
        Q = self.basis_Q
        return Q @ (Q.T @ y)


def build_projection(fpca: FpcaResult, k: int, n: Optional[int] = None) -> ProjectionContext:
    """Orthonormal basis for the first ``min(k, rank)`` score columns.

    Raises
    ------
    ValueError
        If ``k`` exceeds ``n / 2`` or fewer components than needed were kept.
    """
    if n is None:
        n = fpca.scores.shape[0]
    if k < 1:
        raise ValueError("k must be a positive integer")
    if 2 * k > n:
        raise ValueError(f"k={k} exceeds n/2 for n={n}")
    k_hat = min(k, fpca.rank)
    if k_hat > fpca.n_components:
        raise ValueError(
            f"need {k_hat} components but the decomposition kept {fpca.n_components}"
        )
    Q = orthonormal_basis(fpca.scores[:, :k_hat])
    d = Q.shape[1]
    return ProjectionContext(
        k_requested=k,
        k_effective=d,
        basis_Q=Q,
        null_basis=np.zeros((n, 0)),
        n=n,
        df_num=d,
        df_den=n - d,
        fpca=fpca,
    )


def _energies(ctx: ProjectionContext, responses: np.ndarray):
    y = np.asarray(responses, dtype=float)
    if y.shape[0] != ctx.n:
        raise ValueError(f"expected {ctx.n} responses, got {y.shape[0]}")
    coef = ctx.basis_Q.T @ y
    numerator = np.sum(coef * coef, axis=0)
    total = np.sum(y * y, axis=0)
    explained = numerator
    if ctx.null_basis.shape[1]:
        null_coef = ctx.null_basis.T @ y
        explained = explained + np.sum(null_coef * null_coef, axis=0)
    residual = total - explained
    # recompute explicitly where the subtraction may have lost precision
    unsure = residual <= 1e-6 * total
    if np.any(unsure):
        cols = np.nonzero(np.atleast_1d(unsure))[0]
        yy = y.reshape(ctx.n, -1)[:, cols]
        resid = yy - ctx.basis_Q @ (ctx.basis_Q.T @ yy)
        if ctx.null_basis.shape[1]:
            resid = resid - ctx.null_basis @ (ctx.null_basis.T @ yy)
        exact = np.sum(resid * resid, axis=0)
        if np.ndim(residual) == 0:
            residual = exact[0]
        else:
            residual[cols] = exact
    return numerator, residual, total


def _phi_from_energies(numerator, residual, total, df_den):
    numerator = np.asarray(numerator, dtype=float)
    residual = np.asarray(residual, dtype=float)
    exact = residual <= _DEGENERATE_TOL * np.maximum(total, np.finfo(float).tiny)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = numerator / (residual / df_den)
    # a vanishing numerator means no signal at all; otherwise an exact fit is infinite
    phi = np.where(exact, np.where(numerator > 0, np.inf, 0.0), phi)
    degenerate = exact & (numerator > 0)
    return phi, degenerate


def phi_statistic(ctx: ProjectionContext, responses) -> float:
    """Projected energy over residual mean square.

    ``responses`` may be a vector of length ``n`` or an ``n x B`` matrix of
    response vectors (one statistic per column). An exact fit of a nonzero
    response gives ``inf``; an all-zero response gives ``0``.
    """
    if ctx.df_den < 1:
        raise ValueError("no residual degrees of freedom left")
    numerator, residual, total = _energies(ctx, responses)
    phi, _ = _phi_from_energies(numerator, residual, total, ctx.df_den)
    return float(phi) if np.ndim(phi) == 0 else phi


@dataclass(frozen=True)
class ParametricTestResult:
    k_requested: int
    k_effective: int
    statistic: float
    threshold: float
    p_value: float
    reject: bool
    degenerate: bool
    alpha: float


def parametric_test(
    sample: FunctionalSample, fpca: FpcaResult, k: int, alpha: float = 0.05
) -> ParametricTestResult:
    """Reject the null slope when the statistic exceeds ``k * F^{-1}(alpha)``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    ctx = build_projection(fpca, k, sample.n)
    return _parametric_from_context(ctx, sample.responses, alpha)


def _parametric_from_context(ctx, responses, alpha) -> ParametricTestResult:
    d = ctx.df_num
    if d == 0:
        return ParametricTestResult(ctx.k_requested, 0, 0.0, np.inf, 1.0, False, True, alpha)
    numerator, residual, total = _energies(ctx, responses)
    phi, degenerate = _phi_from_energies(numerator, residual, total, ctx.df_den)
    phi, degenerate = float(phi), bool(degenerate)
    threshold = d * fisher_upper_quantile(alpha, d, ctx.df_den)
    if degenerate:
        p_value, reject = 0.0, True
    else:
        p_value = fisher_upper_tail(phi / d, d, ctx.df_den)
        reject = phi - threshold > 0
    return ParametricTestResult(
        k_requested=ctx.k_requested,
        k_effective=ctx.k_effective,
        statistic=phi,
        threshold=threshold,
        p_value=p_value,
        reject=bool(reject),
        degenerate=degenerate,
        alpha=alpha,
    )


def akdelta_norm(fpca: FpcaResult, sample: FunctionalSample, k: int) -> float:
    """``n * ||A_k Delta_n||^2`` with ``Delta_n = (1/n) sum_i Y_i X_i``.

    ``A_k`` rescales the first ``min(k, rank)`` empirical directions by
    ``lambda_j^{-1/2}``. This equals the numerator of the statistic; it is
    computed here through the eigenfunctions only, without the scores.
    """
    n = sample.n
    k_hat = min(k, fpca.rank, fpca.n_components)
    if k_hat == 0:
        return 0.0
    delta = sample.responses @ sample.curves / n
    coef = inner_product(fpca.eigenfunctions[:k_hat], delta, sample.grid)
    return float(n * np.sum(coef**2 / fpca.eigenvalues[:k_hat]))
