"""Distribution tails, quantiles and seeded random streams.

The Fisher and chi-square tails are evaluated through the regularized
incomplete beta and gamma functions, both computed with modified Lentz
continued fractions (plus a power series for the lower gamma branch).
Every routine accepts scalars or numpy arrays and broadcasts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.special import gammaln, ndtri

__all__ = [
    "RngStream",
    "regularized_beta",
    "regularized_gamma",
    "fisher_upper_tail",
    "fisher_upper_quantile",
    "fisher_density",
    "chi2_upper_tail",
    "sample_standard_normal",
    "standard_normal_blocks",
]

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 100_000

ArrayLike = Union[float, np.ndarray]


def _beta_cf(a, b, x):
    """Continued fraction for the incomplete beta function (vectorized)."""
    a, b, x = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, x)))
    a, b, x = a.ravel(), b.ravel(), x.ravel()
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.arange(x.size)
    for m in range(1, _MAX_ITER + 1):
        if active.size == 0:
            break
        aa_, bb_, xx = a[active], b[active], x[active]
        cc, dd, hh = c[active], d[active], h[active]
        m2 = 2 * m
        num = m * (bb_ - m) * xx / ((qam[active] + m2) * (aa_ + m2))
        dd = 1.0 + num * dd
        dd = np.where(np.abs(dd) < _TINY, _TINY, dd)
        cc = 1.0 + num / cc
        cc = np.where(np.abs(cc) < _TINY, _TINY, cc)
        dd = 1.0 / dd
        hh = hh * dd * cc
        num = -(aa_ + m) * (qab[active] + m) * xx / ((aa_ + m2) * (qap[active] + m2))
        dd = 1.0 + num * dd
        dd = np.where(np.abs(dd) < _TINY, _TINY, dd)
        cc = 1.0 + num / cc
        cc = np.where(np.abs(cc) < _TINY, _TINY, cc)
        dd = 1.0 / dd
        delta = dd * cc
        hh = hh * delta
        c[active], d[active], h[active] = cc, dd, hh
        active = active[np.abs(delta - 1.0) > _EPS]
    else:
        raise ArithmeticError("incomplete beta continued fraction did not converge")
    return h


def _beta_cf_scalar(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) >= _TINY else _TINY)
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        for num in (
            m * (b - m) * x / ((qam + m2) * (a + m2)),
            -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2)),
        ):
            d = 1.0 + num * d
            d = 1.0 / (d if abs(d) >= _TINY else _TINY)
            c = 1.0 + num / c
            if abs(c) < _TINY:
                c = _TINY
            delta = d * c
            h *= delta
        if abs(delta - 1.0) <= _EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _stirling_tail(x):
    # lgamma(x) - [(x - 1/2) log x - x + log(2 pi) / 2], accurate for x >= 10
    r = 1.0 / (x * x)
    return (1.0 / 12 - r * (1.0 / 360 - r * (1.0 / 1260 - r * (1.0 / 1680 - r / 1188)))) / x


def _log_beta_scalar(a: float, b: float) -> float:
    if a > b:
        a, b = b, a
    if b < 10.0:
        return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    # lgamma(b) - lgamma(a + b) without cancelling two huge numbers
    diff = (
        -(b - 0.5) * math.log1p(a / b)
        - a * math.log(a + b)
        + a
        + _stirling_tail(b)
        - _stirling_tail(a + b)
    )
    return math.lgamma(a) + diff


def _log_beta(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``log B(a, b)``, avoiding the cancellation of ``lgamma`` differences for large arguments."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shape = a.shape
    lo = np.minimum(a, b).ravel()
    hi = np.maximum(a, b).ravel()
    out = gammaln(lo) + gammaln(hi) - gammaln(lo + hi)
    big = hi >= 10.0
    if np.any(big):
        x, y = lo[big], hi[big]
        diff = -(y - 0.5) * np.log1p(x / y) - x * np.log(x + y) + x + _stirling_tail(y) - _stirling_tail(x + y)
        out[big] = gammaln(x) + diff
    return out.reshape(shape)


def _log_complement(x, xc):
    # log(1 - x), using log1p when x is small so that values near 1 keep their precision
    return np.where(x < 0.5, np.log1p(-np.minimum(x, 0.5)), np.log(np.maximum(xc, _TINY)))


def _regularized_beta_scalar(a: float, b: float, x: float, xc: float) -> Tuple[float, float]:
    if x <= 0.0:
        return 0.0, 1.0
    if x >= 1.0:
        return 1.0, 0.0
    log_xc = math.log1p(-x) if x < 0.5 else math.log(xc)
    front = math.exp(a * math.log(x) + b * log_xc - _log_beta_scalar(a, b))
    if x < (a + 1.0) / (a + b + 2.0):
        val = min(max(front * _beta_cf_scalar(a, b, x) / a, 0.0), 1.0)
        return val, 1.0 - val
    val = min(max(front * _beta_cf_scalar(b, a, xc) / b, 0.0), 1.0)
    return 1.0 - val, val


def regularized_beta(
    a: ArrayLike, b: ArrayLike, x: ArrayLike, xc: ArrayLike = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Regularized incomplete beta ``I_x(a, b)`` and its complement.

    Both values are computed directly (not by subtraction) on the side
    where the continued fraction converges fast, so small tails keep
    their relative accuracy. ``xc`` optionally supplies ``1 - x`` when
    the caller knows it more accurately than the subtraction would.

    Returns
    -------
    lower, upper : ndarray
        ``I_x(a, b)`` and ``1 - I_x(a, b)``.
    """
    if xc is None:
        xc = 1.0 - np.asarray(x, dtype=float)
    if all(np.ndim(v) == 0 for v in (a, b, x, xc)):
        a, b, x, xc = float(a), float(b), float(x), float(xc)
        if a <= 0 or b <= 0:
            raise ValueError("shape parameters must be positive")
        if not 0.0 <= x <= 1.0:
            raise ValueError("x must lie in [0, 1]")
        lo, up = _regularized_beta_scalar(a, b, x, xc)
        return np.float64(lo), np.float64(up)
    a, b, x, xc = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, x, xc)))
    shape = x.shape
    a, b, x, xc = a.ravel(), b.ravel(), x.ravel(), xc.ravel()
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("shape parameters must be positive")
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise ValueError("x must lie in [0, 1]")

    lower = np.zeros_like(x)
    upper = np.ones_like(x)
    at_one = x >= 1.0
    lower[at_one], upper[at_one] = 1.0, 0.0
    inner = (x > 0.0) & ~at_one
    if np.any(inner):
        ai, bi, xi, xci = a[inner], b[inner], x[inner], xc[inner]
        log_front = ai * np.log(xi) + bi * _log_complement(xi, xci) - _log_beta(ai, bi)
        front = np.exp(log_front)
        direct = xi < (ai + 1.0) / (ai + bi + 2.0)
        lo = np.empty_like(xi)
        up = np.empty_like(xi)
        if np.any(direct):
            val = front[direct] * _beta_cf(ai[direct], bi[direct], xi[direct]) / ai[direct]
            lo[direct], up[direct] = val, 1.0 - val
        flip = ~direct
        if np.any(flip):
            val = front[flip] * _beta_cf(bi[flip], ai[flip], xci[flip]) / bi[flip]
            up[flip], lo[flip] = val, 1.0 - val
        lower[inner] = np.clip(lo, 0.0, 1.0)
        upper[inner] = np.clip(up, 0.0, 1.0)
    return lower.reshape(shape), upper.reshape(shape)


def _gamma_series(a, x):
    total = 1.0 / a
    term = total.copy()
    ap = a.copy()
    active = np.arange(x.size)
    for _ in range(_MAX_ITER):
        if active.size == 0:
            return total
        ap[active] += 1.0
        term[active] *= x[active] / ap[active]
        total[active] += term[active]
        active = active[np.abs(term[active]) > np.abs(total[active]) * _EPS]
    raise ArithmeticError("incomplete gamma series did not converge")


def _gamma_cf(a, x):
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    active = np.arange(x.size)
    for i in range(1, _MAX_ITER + 1):
        if active.size == 0:
            return h
        an = -i * (i - a[active])
        b[active] += 2.0
        dd = an * d[active] + b[active]
        dd = np.where(np.abs(dd) < _TINY, _TINY, dd)
        cc = b[active] + an / c[active]
        cc = np.where(np.abs(cc) < _TINY, _TINY, cc)
        dd = 1.0 / dd
        delta = dd * cc
        h[active] *= delta
        c[active], d[active] = cc, dd
        active = active[np.abs(delta - 1.0) > _EPS]
    raise ArithmeticError("incomplete gamma continued fraction did not converge")


def regularized_gamma(a: ArrayLike, x: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Regularized lower and upper incomplete gamma functions ``P(a, x)``, ``Q(a, x)``."""
    a, x = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(x, dtype=float))
    shape = x.shape
    a, x = a.ravel().copy(), x.ravel().copy()
    if np.any(a <= 0):
        raise ValueError("shape parameter must be positive")
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("x must be nonnegative")
    lower = np.zeros_like(x)
    upper = np.ones_like(x)
    inner = x > 0
    if np.any(inner):
        ai, xi = a[inner], x[inner]
        front = np.exp(-xi + ai * np.log(xi) - gammaln(ai))
        series = xi < ai + 1.0
        lo = np.empty_like(xi)
        up = np.empty_like(xi)
        if np.any(series):
            val = front[series] * _gamma_series(ai[series], xi[series])
            lo[series], up[series] = val, 1.0 - val
        frac = ~series
        if np.any(frac):
            val = front[frac] * _gamma_cf(ai[frac], xi[frac])
            up[frac], lo[frac] = val, 1.0 - val
        lower[inner] = np.clip(lo, 0.0, 1.0)
        upper[inner] = np.clip(up, 0.0, 1.0)
    return lower.reshape(shape), upper.reshape(shape)


def _check_dof(*dofs):
    for v in dofs:
        if np.any(np.asarray(v) < 1):
            raise ValueError(f"degrees of freedom must be positive, got {v}")


def _scalar_or_array(value):
    return float(value) if np.ndim(value) == 0 else value


def fisher_upper_tail(x: ArrayLike, k: ArrayLike, m: ArrayLike) -> ArrayLike:
    """``P(F(k, m) >= x)`` for a Fisher variable with ``(k, m)`` degrees of freedom."""
    x = np.asarray(x, dtype=float)
    _check_dof(k, m)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("x must be nonnegative")
    k = np.asarray(k, dtype=float)
    m = np.asarray(m, dtype=float)
    kx = k * x
    # y = kx / (m + kx) is Beta(k/2, m/2); an infinite statistic maps to y = 1
    with np.errstate(invalid="ignore", divide="ignore"):
        inf = np.isinf(kx)
        y = np.where(inf, 1.0, kx / (m + kx))
        yc = np.where(inf, 0.0, m / (m + kx))
    _, upper_in_y = regularized_beta(k / 2.0, m / 2.0, y, yc)
    return _scalar_or_array(upper_in_y)


def fisher_density(x: ArrayLike, k: int, m: int) -> ArrayLike:
    """Density of the Fisher distribution with ``(k, m)`` degrees of freedom."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        log_pdf = (
            0.5 * k * np.log(k / m)
            + (0.5 * k - 1.0) * np.log(x)
            - 0.5 * (k + m) * np.log1p(k * x / m)
            - _log_beta(0.5 * k, 0.5 * m)
        )
    return _scalar_or_array(np.exp(log_pdf))


def _beta_pair(z: float) -> Tuple[float, float]:
    # y = 1 / (1 + exp(-z)) and 1 - y, both without cancellation
    if z >= 0:
        e = math.exp(-z)
        return 1.0 / (1.0 + e), e / (1.0 + e)
    e = math.exp(z)
    return e / (1.0 + e), 1.0 / (1.0 + e)


def fisher_upper_quantile(alpha: float, k: int, m: int) -> float:
    """Value ``x`` with ``fisher_upper_tail(x, k, m) == alpha``.

    The root is bracketed and bisected on ``z = log(k x / m)``, the
    log-odds of the beta variable ``y = kx / (m + kx)``, so that both
    ``y`` and ``1 - y`` stay accurate in the far tails. Safeguarded
    Newton steps on ``x`` then polish it.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    _check_dof(k, m)
    k, m = float(k), float(m)
    a, b = k / 2.0, m / 2.0

    def tail_z(z):
        y, yc = _beta_pair(z)
        return _regularized_beta_scalar(a, b, y, yc)[1]

    lo, hi = -1.0, 1.0
    while tail_z(lo) <= alpha:
        lo, hi = 2.0 * lo, lo
        if lo < -1500.0:
            return 0.0
    while tail_z(hi) > alpha:
        lo, hi = hi, 2.0 * hi
        if hi > 1500.0:
            return math.inf
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        if tail_z(mid) > alpha:
            lo = mid
        else:
            hi = mid

    scale = m / k
    x_lo, x_hi = scale * math.exp(lo), scale * math.exp(hi)
    x = scale * math.exp(0.5 * (lo + hi))
    for _ in range(60):
        f = float(fisher_upper_tail(x, k, m)) - alpha
        if f > 0:
            x_lo = x
        else:
            x_hi = x
        slope = float(fisher_density(x, k, m))
        candidate = x + f / slope if slope > 0 else math.inf
        if not x_lo <= candidate <= x_hi:
            candidate = 0.5 * (x_lo + x_hi)
        if abs(candidate - x) <= 1e-14 * abs(x):
            x = candidate
            break
        x = candidate
    return float(x)


def chi2_upper_tail(x: ArrayLike, k: ArrayLike) -> ArrayLike:
    """``P(chi2(k) >= x)`` through the regularized upper incomplete gamma."""
    x = np.asarray(x, dtype=float)
    _check_dof(k)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("x must be nonnegative")
    _, upper = regularized_gamma(np.asarray(k, dtype=float) / 2.0, x / 2.0)
    return _scalar_or_array(upper)


@dataclass(frozen=True)
class RngStream:
    """Deterministic counter-based random stream.

    A stream is identified by ``(seed, stream_id)``; ``stream_id`` is a tuple
    of nonnegative integers so that streams can be derived hierarchically
    (for instance ``(trial, purpose, replicate)``). The same identifier always
    yields the same sequence, whatever the order in which streams are used.
    """

    seed: int
    stream_id: Tuple[int, ...] = ()

    def __post_init__(self):
        sid = self.stream_id
        if isinstance(sid, (int, np.integer)):
            sid = (int(sid),)
        sid = tuple(int(v) for v in sid)
        if not 0 <= int(self.seed) < 2**64 or any(not 0 <= v < 2**64 for v in sid):
            raise ValueError("seed and stream ids must be unsigned 64-bit integers")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "stream_id", sid)

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + tuple(ids))

    def bit_generator(self) -> np.random.Philox:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        return np.random.Philox(key=seq.generate_state(2, np.uint64))

    def uniforms(self, count: int, offset: int = 0) -> np.ndarray:
        """Uniform draws on the open interval (0, 1), starting at position ``offset``."""
        bg = self.bit_generator()
        steps, skip = divmod(int(offset), 4)
        if steps:
            bg.advance(steps)
        raw = bg.random_raw(skip + int(count))[skip:]
        return ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53


def sample_standard_normal(stream: RngStream, count: int, offset: int = 0) -> np.ndarray:
    """I.i.d. N(0, 1) draws by inverse-CDF transform of the stream's uniforms."""
    if count < 1:
        raise ValueError("count must be positive")
    return ndtri(stream.uniforms(count, offset))


def standard_normal_blocks(stream: RngStream, n_blocks: int, block_size: int) -> np.ndarray:
    """``block_size x n_blocks`` matrix whose column ``b`` is block ``b`` of the stream.

    Column ``b`` equals ``sample_standard_normal(stream, block_size,
    offset=b * block_size)``, so each block can be regenerated on its own.
    """
    draws = sample_standard_normal(stream, n_blocks * block_size)
    return draws.reshape(n_blocks, block_size).T
