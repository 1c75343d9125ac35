"""Adaptive multiple tests over a dyadic collection of dimensions.

The statistic is evaluated for every ``k`` in ``{1, 2, 4, ..., kbar}`` not
exceeding the rank of the empirical covariance, each compared with a
Fisher quantile at a common weight. The weight is either the Bonferroni
share ``alpha / |K|`` (``"P1"``) or the Monte-Carlo ``alpha``-quantile of
the smallest Fisher p-value obtained by replacing the responses with pure
Gaussian noise, conditionally on the curves (``"P2"``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from .fda import FpcaResult, FunctionalSample, inner_product
from .flm import (
    ProjectionContext,
    _energies,
    _phi_from_energies,
    build_projection,
    orthonormal_basis,
)
from .numerics import RngStream, fisher_upper_quantile, fisher_upper_tail, standard_normal_blocks

__all__ = [
    "DEFAULT_MC_REPLICATES",
    "DimensionCollection",
    "CalibrationWeight",
    "DimensionResult",
    "AdaptiveTestResult",
    "dimension_collection",
    "bonferroni_weight",
    "monte_carlo_weight",
    "adaptive_test",
    "subspace_test",
    "subspace_contexts",
]

DEFAULT_MC_REPLICATES = 1000
MIN_MC_REPLICATES = 100


@dataclass(frozen=True)
class DimensionCollection:
    dims: Tuple[int, ...]

    @property
    def kbar(self) -> int:
        return self.dims[-1]

    def __len__(self):
        return len(self.dims)

    def __iter__(self):
        return iter(self.dims)


def _is_power_of_two(k: int) -> bool:
    return k >= 1 and k & (k - 1) == 0


def dimension_collection(n: int, kbar_override: Optional[int] = None) -> DimensionCollection:
    """Dyadic dimensions ``{1, 2, ..., kbar}`` with ``kbar = 2**(floor(log2 n) - 1)`` by default."""
    if n < 4:
        raise ValueError(f"need n >= 4, got {n}")
    if kbar_override is None:
        kbar = 1 << (n.bit_length() - 2)
    else:
        kbar = int(kbar_override)
        if not _is_power_of_two(kbar) or 2 * kbar > n:
            raise ValueError(f"kbar must be a power of two not exceeding n/2, got {kbar_override}")
    return DimensionCollection(tuple(1 << j for j in range(kbar.bit_length())))


@dataclass(frozen=True)
class CalibrationWeight:
    """Common level at which every dimension is tested.

    ``mc_replicates`` and ``mc_seed`` are only set for the Monte-Carlo
    procedure; ``mc_seed`` echoes ``(seed, stream_id)`` of the stream used.
    """

    method: str
    alpha: float
    weight: float
    mc_replicates: Optional[int] = None
    mc_seed: Optional[Tuple[int, Tuple[int, ...]]] = None


def bonferroni_weight(alpha: float, collection: DimensionCollection) -> CalibrationWeight:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return CalibrationWeight("P1", alpha, alpha / len(collection))


def _min_pvalues(contexts: Sequence[ProjectionContext], noise: np.ndarray) -> np.ndarray:
    smallest = np.ones(noise.shape[1])
    for ctx in contexts:
        numerator, residual, total = _energies(ctx, noise)
        phi, _ = _phi_from_energies(numerator, residual, total, ctx.df_den)
        pvals = fisher_upper_tail(phi / ctx.scale, ctx.df_num, ctx.df_den)
        np.minimum(smallest, pvals, out=smallest)
    return smallest


def monte_carlo_weight(
    contexts: Sequence[ProjectionContext],
    alpha: float,
    B: int = DEFAULT_MC_REPLICATES,
    stream: Union[RngStream, int, None] = None,
) -> CalibrationWeight:
    """Monte-Carlo ``alpha``-quantile of the smallest Fisher p-value under pure noise.

    Replicate ``b`` uses block ``b`` of ``stream`` as its Gaussian vector, so
    the weight depends only on the curves, ``B`` and the stream identity.
    The quantile is the ``max(floor(alpha * B), 1)``-th order statistic.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if B < MIN_MC_REPLICATES:
        raise ValueError(f"need at least {MIN_MC_REPLICATES} Monte-Carlo replicates, got {B}")
    contexts = [c for c in contexts if c.df_num > 0]
    if not contexts:
        raise ValueError("no testable dimension")
    n = contexts[0].n
    if any(c.n != n for c in contexts):
        raise ValueError("contexts come from samples of different sizes")
    if any(c.fpca is not contexts[0].fpca for c in contexts):
        raise ValueError("contexts must share one functional PCA")
    stream = _as_stream(stream)
    noise = standard_normal_blocks(stream, B, n)
    smallest = _min_pvalues(contexts, noise)
    order = max(int(np.floor(alpha * B)), 1)
    weight = float(np.partition(smallest, order - 1)[order - 1])
    return CalibrationWeight("P2", alpha, weight, B, (stream.seed, stream.stream_id))


def _as_stream(stream) -> RngStream:
    if stream is None:
        return RngStream(0)
    if isinstance(stream, RngStream):
        return stream
    return RngStream(int(stream))


@dataclass(frozen=True)
class DimensionResult:
    k: int
    k_effective: int
    statistic: float
    threshold: float
    margin: float
    p_value: float
    df_num: int
    df_den: int


@dataclass(frozen=True)
class AdaptiveTestResult:
    """Outcome of the adaptive test with the audit trail of every dimension."""

    per_k: Tuple[DimensionResult, ...]
    supremum_margin: float
    reject: bool
    selected_k: Optional[int]
    weight_used: CalibrationWeight
    collection: DimensionCollection

    def as_dict(self) -> dict:
        w = self.weight_used
        return {
            "reject": self.reject,
            "supremum_margin": self.supremum_margin,
            "selected_k": self.selected_k,
            "weight": {
                "method": w.method,
                "alpha": w.alpha,
                "weight": w.weight,
                "mc_replicates": w.mc_replicates,
                "mc_seed": None if w.mc_seed is None else [w.mc_seed[0], list(w.mc_seed[1])],
            },
            "collection": list(self.collection.dims),
            "per_k": [vars(d).copy() for d in self.per_k],
        }


def _quantile_at(weight: float, d1: int, d2: int) -> float:
    # a Monte-Carlo weight can hit 0 (exact fits among replicates) or 1
    if weight <= 0.0:
        return np.inf
    if weight >= 1.0:
        return 0.0
    return fisher_upper_quantile(weight, d1, d2)


def _tested_dims(fpca: FpcaResult, collection: DimensionCollection) -> List[int]:
    return [k for k in collection if k <= fpca.rank]


def _run(contexts, responses, collection, alpha, method, B, stream) -> AdaptiveTestResult:
    method = method.upper()
    if method == "P1":
        weight = bonferroni_weight(alpha, collection)
    elif method == "P2":
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        live = [c for c in contexts if c.df_num > 0]
        if live:
            weight = monte_carlo_weight(live, alpha, B, stream)
        else:
            weight = CalibrationWeight("P2", alpha, alpha / len(collection), B, None)
    else:
        raise ValueError(f"unknown calibration method {method!r}")

    rows = []
    for ctx in contexts:
        if ctx.df_num == 0:
            continue
        numerator, residual, total = _energies(ctx, responses)
        phi, degenerate = _phi_from_energies(numerator, residual, total, ctx.df_den)
        phi = float(phi)
        threshold = ctx.scale * _quantile_at(weight.weight, ctx.df_num, ctx.df_den)
        pval = 0.0 if degenerate else fisher_upper_tail(phi / ctx.scale, ctx.df_num, ctx.df_den)
        rows.append(
            DimensionResult(
                k=ctx.k_requested,
                k_effective=ctx.k_effective,
                statistic=phi,
                threshold=threshold,
                margin=phi - threshold,
                p_value=pval,
                df_num=ctx.df_num,
                df_den=ctx.df_den,
            )
        )
    if rows:
        best = max(range(len(rows)), key=lambda i: rows[i].margin)
        sup, selected = rows[best].margin, rows[best].k
    else:
        sup, selected = -np.inf, None
    return AdaptiveTestResult(tuple(rows), sup, bool(sup > 0), selected, weight, collection)


def adaptive_test(
    sample: FunctionalSample,
    fpca: FpcaResult,
    alpha: float = 0.05,
    method: str = "P2",
    B: int = DEFAULT_MC_REPLICATES,
    stream: Union[RngStream, int, None] = None,
    collection: Optional[DimensionCollection] = None,
) -> AdaptiveTestResult:
    """Adaptive test of a null slope, calibrated by ``"P1"`` or ``"P2"``.

    Parameters
    ----------
    sample, fpca : FunctionalSample, FpcaResult
        Data and its functional PCA (with at least ``min(kbar, rank)``
        components).
    alpha : float
        Level.
    method : {"P1", "P2"}
        Bonferroni or Monte-Carlo calibration.
    B : int
        Monte-Carlo replicates for ``"P2"``.
    stream : RngStream or int, optional
        Random stream (or seed) for ``"P2"``.
    collection : DimensionCollection, optional
        Defaults to :func:`dimension_collection` of ``n``.
    """
    n = sample.n
    if collection is None:
        collection = dimension_collection(n)
    contexts = [build_projection(fpca, k, n) for k in _tested_dims(fpca, collection)]
    return _run(contexts, sample.responses, collection, alpha, method, B, stream)


def subspace_contexts(
    sample: FunctionalSample,
    fpca: FpcaResult,
    basis_V,
    collection: DimensionCollection,
) -> List[ProjectionContext]:
    """Projection contexts for testing that the slope lies in ``span(basis_V)``.

    The null directions are the columns ``<X_i, xi_j>``. For each ``k`` the
    tested directions are those of ``span(null) + span(W_k)`` orthogonal to
    the null directions; the residual is taken orthogonally to the sum.
    """
    n = sample.n
    grid = sample.grid
    basis_V = np.atleast_2d(np.asarray(basis_V, dtype=float))
    if basis_V.size == 0:
        basis_V = np.zeros((0, grid.size))
    p_v = basis_V.shape[0]
    if basis_V.shape[1] != grid.size:
        raise ValueError("basis functions must be sampled on the sample grid")
    if 2 * p_v >= n:
        raise ValueError(f"subspace dimension {p_v} must be below n/2")
    if p_v:
        gram = inner_product(basis_V[:, None, :], basis_V[None, :, :], grid)
        eig = np.linalg.eigvalsh(gram)
        if eig[0] <= 1e-10 * eig[-1]:
            raise ValueError("basis functions are linearly dependent on the grid")
    design_V = (sample.curves * grid.weights) @ basis_V.T
    null_Q = orthonormal_basis(design_V)
    dim_v = null_Q.shape[1]

    contexts = []
    for k in _tested_dims(fpca, collection):
        base = build_projection(fpca, k, n)
        W = fpca.scores[:, : min(k, fpca.rank)]
        dim_sum = orthonormal_basis(np.hstack([design_V, W])).shape[1]
        resid_W = W - null_Q @ (null_Q.T @ W)
        # rank of the part of W orthogonal to the null span, measured against W's scale
        q, r, _ = _pivoted(resid_W)
        scale = max(np.abs(np.diag(_pivoted(W)[1])).max(initial=0.0), np.finfo(float).tiny)
        keep = int(np.count_nonzero(np.abs(np.diag(r)) > 1e-10 * scale))
        d1 = min(keep, dim_sum - dim_v)
        contexts.append(
            ProjectionContext(
                k_requested=k,
                k_effective=base.k_effective,
                basis_Q=q[:, :d1],
                null_basis=null_Q,
                n=n,
                df_num=d1,
                df_den=n - dim_sum,
                fpca=fpca,
            )
        )
    return contexts


def _pivoted(matrix):
    if matrix.shape[1] == 0:
        return np.zeros((matrix.shape[0], 0)), np.zeros((0, 0)), np.zeros(0, dtype=int)
    return scipy.linalg.qr(matrix, mode="economic", pivoting=True)


def subspace_test(
    sample: FunctionalSample,
    fpca: FpcaResult,
    basis_V,
    alpha: float = 0.05,
    method: str = "P2",
    B: int = DEFAULT_MC_REPLICATES,
    stream: Union[RngStream, int, None] = None,
    collection: Optional[DimensionCollection] = None,
) -> AdaptiveTestResult:
    """Adaptive test of ``theta in span(basis_V)`` (rows of ``basis_V`` on the grid).

    An empty basis reproduces :func:`adaptive_test`. Under ``"P2"`` the
    Gaussian replicates go through the same projectors as the data.
    """
    if collection is None:
        collection = dimension_collection(sample.n)
    contexts = subspace_contexts(sample, fpca, basis_V, collection)
    return _run(contexts, sample.responses, collection, alpha, method, B, stream)
