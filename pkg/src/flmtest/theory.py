"""Separation rates over ellipsoids of slope functions.

An ellipsoid is described through the products ``a_k^2 lambda_k`` of its
semi-axes with the covariance eigenvalues. The separation rate is

    rho^2 = sup_k min(C sqrt(k) / n, R^2 a_k^2 lambda_k),

evaluated by a direct scan over ``1 <= k <= k_max``. The adaptive version
inflates the first branch by ``sqrt(max(1, log log max(k, 3)))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

__all__ = [
    "EllipsoidSpec",
    "RateReport",
    "ScanBoundError",
    "B2Check",
    "separation_rate",
    "optimal_dimension",
    "adaptive_rate",
    "check_assumption_B2",
    "default_scan_bound",
]

REGIMES = ("polynomial", "exponential", "tabulated")

# the polynomial-regime guarantees of the theory need s > 7/2
GUARANTEE_THRESHOLD = 3.5

_CHUNK = 1 << 20


class ScanBoundError(ValueError):
    """The scan stopped before the two branches of the rate crossed."""


@dataclass(frozen=True)
class EllipsoidSpec:
    """Smoothness class ``sum_k <theta, V_k>^2 / a_k^2 <= R^2 sigma^2``.

    Parameters
    ----------
    regime : {"polynomial", "exponential", "tabulated"}
        ``a_k^2 lambda_k = k^-s``, ``exp(-s k)``, or given by ``a`` and
        ``eigenvalues`` explicitly.
    R : float
        Radius, positive.
    s : float, optional
        Smoothness for the parametric regimes.
    eigenvalues : sequence of float, optional
        ``lambda_k``. Required for ``"tabulated"``; for the parametric
        regimes it only serves to check that the implied ``a_k`` is
        nonincreasing.
    a : sequence of float, optional
        Semi-axes for ``"tabulated"``.
    """

    regime: str
    R: float
    s: Optional[float] = None
    eigenvalues: Optional[Sequence[float]] = None
    a: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not self.R > 0:
            raise ValueError("R must be positive")
        lam = None
        if self.eigenvalues is not None:
            lam = np.asarray(self.eigenvalues, dtype=float)
            if lam.ndim != 1 or lam.size == 0 or np.any(lam <= 0):
                raise ValueError("eigenvalues must be a nonempty positive sequence")
            object.__setattr__(self, "eigenvalues", lam)
        if self.regime == "tabulated":
            if lam is None or self.a is None:
                raise ValueError("a tabulated ellipsoid needs both a and eigenvalues")
            a = np.asarray(self.a, dtype=float)
            if a.shape != lam.shape or np.any(a <= 0):
                raise ValueError("a must be positive with the same length as eigenvalues")
            if np.any(np.diff(a) > 0):
                raise ValueError("a must be nonincreasing")
            object.__setattr__(self, "a", a)
            if np.any(np.diff(a * a * lam) > 0):
                raise ValueError("a_k^2 lambda_k must be nonincreasing")
        else:
            if self.s is None or not self.s > 0:
                raise ValueError(f"the {self.regime} regime needs s > 0")
            if self.a is not None:
                raise ValueError("a is implied by s for the parametric regimes")
            if lam is not None:
                prod = self.products(lam.size)
                if np.any(np.diff(prod / lam) > 0):
                    raise ValueError("the implied a_k is not nonincreasing for these eigenvalues")

    @property
    def length(self) -> Optional[int]:
        """Number of available terms (``None`` when unbounded)."""
        return self.a.size if self.regime == "tabulated" else None

    def products(self, k_max: int, start: int = 1) -> np.ndarray:
        """``a_k^2 lambda_k`` for ``k = start, ..., k_max``."""
        k = np.arange(start, k_max + 1, dtype=float)
        if self.regime == "polynomial":
            return k ** (-self.s)
        if self.regime == "exponential":
            return np.exp(-self.s * k)
        if k_max > self.length:
            raise ScanBoundError(f"the table has {self.length} terms, {k_max} requested")
        return (self.a * self.a * self.eigenvalues)[start - 1 : k_max]

    @property
    def outside_guarantee(self) -> bool:
        return self.regime == "polynomial" and self.s <= GUARANTEE_THRESHOLD


@dataclass(frozen=True)
class RateReport:
    """Separation rate and related quantities at one sample size.

    Attributes
    ----------
    rho_sq : float
        Supremum of the two-branch minimum.
    argmax_k : int
        Smallest dimension attaining it.
    k_star : int
        Smallest ``k`` with ``R^2 a_k^2 lambda_k <= sqrt(k) / n``.
    rho_tilde_sq : float
        Same supremum with the adaptation penalty.
    constant_C : float
        Constant multiplying ``sqrt(k) / n``.
    outside_guarantee : bool
        Polynomial regime with ``s <= 7/2``.
    """

    n: int
    rho_sq: float
    argmax_k: int
    k_star: int
    rho_tilde_sq: float
    constant_C: float
    regime: str
    k_max: int
    outside_guarantee: bool


def default_scan_bound(n: int, spec: Optional[EllipsoidSpec] = None) -> int:
    k_max = max(10_000, 10 * int(n))
    if spec is not None and spec.length is not None:
        k_max = min(k_max, spec.length)
    return k_max


def _penalty(k: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(1.0, np.log(np.log(np.maximum(k, 3.0)))))


def _scan(spec: EllipsoidSpec, n: int, C: float, k_max: int, adaptive: bool):
    if n < 1:
        raise ValueError("n must be positive")
    if C < 0:
        raise ValueError("C must be nonnegative")
    if k_max < 10:
        raise ScanBoundError("the scan bound must be at least 10")
    best, best_k = -np.inf, 1
    tail_start = k_max - k_max // 10
    tail_prev = np.inf
    tail_ok = True
    for start in range(1, k_max + 1, _CHUNK):
        stop = min(start + _CHUNK - 1, k_max)
        k = np.arange(start, stop + 1, dtype=float)
        first = C * np.sqrt(k) / n
        if adaptive:
            first = first * _penalty(k)
        branch = np.minimum(first, spec.R**2 * spec.products(stop, start))
        i = int(np.argmax(branch))
        if branch[i] > best:
            best, best_k = float(branch[i]), start + i
        if stop >= tail_start:
            tail = branch[max(tail_start - start, 0) :]
            if np.any(np.diff(tail) > 0) or tail[0] > tail_prev:
                tail_ok = False
            tail_prev = tail[-1]
    if not tail_ok:
        raise ScanBoundError(
            f"the rate is still increasing near k_max={k_max}; raise the scan bound"
        )
    return best, best_k


def _resolve_bound(spec, n, k_max):
    if k_max is None:
        return default_scan_bound(n, spec)
    k_max = int(k_max)
    if spec.length is not None and k_max > spec.length:
        raise ScanBoundError(f"the table has {spec.length} terms, k_max={k_max} requested")
    return k_max


def adaptive_rate(
    spec: EllipsoidSpec, n: int, C: float = 1.0, k_max: Optional[int] = None
) -> float:
    """Separation rate with ``sqrt(k)`` replaced by ``sqrt(max(1, log log max(k, 3))) sqrt(k)``."""
    k_max = _resolve_bound(spec, n, k_max)
    if C == 0:
        return 0.0
    return _scan(spec, n, C, k_max, adaptive=True)[0]


def optimal_dimension(spec: EllipsoidSpec, n: int, k_max: Optional[int] = None) -> int:
    """Smallest ``k >= 1`` with ``R^2 a_k^2 lambda_k <= sqrt(k) / n``.

    Raises
    ------
    ScanBoundError
        If no such ``k`` exists up to the scan bound.
    """
    if n < 1:
        raise ValueError("n must be positive")
    k_max = _resolve_bound(spec, n, k_max)
    for start in range(1, k_max + 1, _CHUNK):
        stop = min(start + _CHUNK - 1, k_max)
        k = np.arange(start, stop + 1, dtype=float)
        hit = np.nonzero(spec.R**2 * spec.products(stop, start) <= np.sqrt(k) / n)[0]
        if hit.size:
            return start + int(hit[0])
    raise ScanBoundError(f"no crossing found up to k={k_max}")


def separation_rate(
    spec: EllipsoidSpec, n: int, C: float = 1.0, k_max: Optional[int] = None
) -> RateReport:
    """Separation rate ``sup_k min(C sqrt(k) / n, R^2 a_k^2 lambda_k)`` by direct scan.

    Parameters
    ----------
    spec : EllipsoidSpec
    n : int
        Sample size.
    C : float
        Constant of the first branch; the theory leaves it unspecified.
    k_max : int, optional
        Scan bound, default ``max(10**4, 10 n)`` (capped by a table's length).

    Raises
    ------
    ScanBoundError
        If the minimum of the two branches is not nonincreasing over the
        last tenth of the scanned range.
    """
    k_max = _resolve_bound(spec, n, k_max)
    rho, arg = _scan(spec, n, C, k_max, adaptive=False)
    rho_tilde = _scan(spec, n, C, k_max, adaptive=True)[0] if C > 0 else 0.0
    return RateReport(
        n=int(n),
        rho_sq=rho,
        argmax_k=arg,
        k_star=optimal_dimension(spec, n, k_max),
        rho_tilde_sq=rho_tilde,
        constant_C=float(C),
        regime=spec.regime,
        k_max=k_max,
        outside_guarantee=spec.outside_guarantee,
    )


class B2Check(NamedTuple):
    holds: bool
    first_violation: Optional[int]


def check_assumption_B2(
    eigenvalues: Union[Sequence[float], Callable[[np.ndarray], np.ndarray]],
    gamma: float,
    k_max: Optional[int] = None,
) -> B2Check:
    """Check that ``j lambda_j max(log(j)^(1 + gamma), 1)`` strictly decreases for ``j <= k_max``.

    Parameters
    ----------
    eigenvalues : sequence or callable
        ``lambda_1, lambda_2, ...`` or a function of the 1-based index array.
    gamma : float
        Positive exponent.
    k_max : int, optional
        Last index checked; defaults to the sequence length and is required
        for a callable.

    Returns
    -------
    B2Check
        ``first_violation`` is the 1-based index ``j`` of the first term not
        below its predecessor, or ``None``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if callable(eigenvalues):
        if k_max is None:
            raise ValueError("k_max is required when the eigenvalues are a function")
        lam = np.asarray(eigenvalues(np.arange(1, k_max + 1, dtype=float)), dtype=float)
    else:
        lam = np.asarray(eigenvalues, dtype=float)
        if k_max is not None:
            if k_max > lam.size:
                raise ValueError(f"only {lam.size} eigenvalues for k_max={k_max}")
            lam = lam[:k_max]
    if lam.ndim != 1 or np.any(~(lam > 0)):
        raise ValueError("eigenvalues must be positive (underflow included)")
    j = np.arange(1, lam.size + 1, dtype=float)
    seq = j * lam * np.maximum(np.log(j) ** (1 + gamma), 1.0)
    bad = np.nonzero(np.diff(seq) >= 0)[0]
    if bad.size:
        return B2Check(False, int(bad[0]) + 2)
    return B2Check(True, None)
