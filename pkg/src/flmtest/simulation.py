"""Simulation design: Karhunen-Loeve processes, slope families and the trial runner.

The default process is Brownian motion on ``[0, 1]`` truncated to 100
Karhunen-Loeve terms, with eigenpairs
``lambda_j = ((j - 1/2) pi)^-2`` and ``V_j(t) = sqrt(2) sin((j - 1/2) pi t)``,
observed on 1000 evenly spaced points.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from .adaptive import DEFAULT_MC_REPLICATES, _run, _tested_dims, dimension_collection
from .fda import FunctionalSample, Grid, fpca, inner_product
from .flm import build_projection
from .numerics import RngStream, sample_standard_normal

__all__ = [
    "THREADS_ENV",
    "ProcessSpec",
    "SlopeSpec",
    "ExperimentPlan",
    "ExperimentResult",
    "KL_NORMALIZATIONS",
    "zeta",
    "simulate_design",
    "make_theta_kl",
    "make_theta_g",
    "bias_term",
    "run_experiment",
]

THREADS_ENV = "FLMTEST_THREADS"


def zeta(s: float, terms: int = 1000) -> float:
    """``sum_{k >= 1} k^-s`` for ``s > 1``: direct partial sum plus an Euler-Maclaurin tail."""
    if s <= 1:
        raise ValueError("the series diverges for s <= 1")
    N = float(terms)
    head = np.sum(np.arange(1, terms, dtype=float) ** -s)
    tail = (
        N ** (1 - s) / (s - 1)
        + 0.5 * N**-s
        + s * N ** (-s - 1) / 12
        - s * (s + 1) * (s + 2) * N ** (-s - 3) / 720
        + s * (s + 1) * (s + 2) * (s + 3) * (s + 4) * N ** (-s - 5) / 30240
    )
    return float(head + tail)


@dataclass(frozen=True)
class ProcessSpec:
    """A centered process given by its Karhunen-Loeve eigen-system on a grid.

    Attributes
    ----------
    eigenvalues : ndarray, shape (J,)
    eigenfunctions : ndarray, shape (J, p)
    grid : Grid
    kind : str
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    grid: Grid
    kind: str = "custom"

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        funcs = np.atleast_2d(np.asarray(self.eigenfunctions, dtype=float))
        if lam.ndim != 1 or lam.size < 1:
            raise ValueError("need at least one eigenvalue")
        if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be positive and nonincreasing")
        if funcs.shape != (lam.size, self.grid.size):
            raise ValueError("eigenfunctions must be a J x p matrix on the grid")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenfunctions", funcs)

    @property
    def truncation(self) -> int:
        return self.eigenvalues.size

    @classmethod
    def brownian(cls, n_terms: int = 100, n_points: int = 1000) -> "ProcessSpec":
        grid = Grid.uniform(n_points)
        freq = (np.arange(1, n_terms + 1) - 0.5) * np.pi
        lam = 1.0 / freq**2
        funcs = np.sqrt(2.0) * np.sin(np.outer(freq, grid.points))
        return cls(lam, funcs, grid, kind="brownian")

    @classmethod
    def from_functions(
        cls, eigenvalues: Sequence[float], functions: Sequence[Callable], grid: Grid
    ) -> "ProcessSpec":
        funcs = np.array([f(grid.points) for f in functions], dtype=float)
        return cls(np.asarray(eigenvalues, dtype=float), funcs, grid)


def simulate_design(process: ProcessSpec, n: int, stream: RngStream) -> np.ndarray:
    """``n`` curves ``sum_j sqrt(lambda_j) eta_ij V_j`` with i.i.d. standard normal ``eta``."""
    J = process.truncation
    eta = sample_standard_normal(stream, n * J).reshape(n, J)
    return (eta * np.sqrt(process.eigenvalues)) @ process.eigenfunctions


KL_NORMALIZATIONS = ("norm", "series")


def _kl_coefficients(B: float, xi: float, n_terms: int, normalization: str = "norm") -> np.ndarray:
    j = np.arange(1, n_terms + 1, dtype=float)
    decay = j ** (-xi - 0.5)
    if normalization == "norm":
        total = float(np.sum(decay * decay))
    elif normalization == "series":
        total = zeta(2 * xi + 1)
    else:
        raise ValueError(f"normalization must be one of {KL_NORMALIZATIONS}, got {normalization!r}")
    return B / np.sqrt(total) * decay


def make_theta_kl(
    B: float,
    xi: float,
    process: ProcessSpec,
    n_terms: int = 100,
    normalization: str = "norm",
) -> np.ndarray:
    """Slope with coefficients proportional to ``j^(-xi - 1/2)`` on the first ``n_terms`` eigenfunctions.

    Parameters
    ----------
    B : float
        Target L2 norm.
    xi : float
        Decay exponent, ``xi > 0``.
    process : ProcessSpec
        Supplies the eigenfunctions (orthonormal on the grid).
    n_terms : int
        Number of nonzero coefficients.
    normalization : {"norm", "series"}
        ``"norm"`` divides by the truncated sum ``sum_{j <= n_terms} j^(-2 xi - 1)``
        so the function has norm exactly ``B``. ``"series"`` divides by the
        full series ``zeta(2 xi + 1)`` instead; the norm is then
        ``B * sqrt(partial / full)``, about ``0.80 B`` for ``xi = 0.1`` and
        100 terms.
    """
    if B < 0 or xi <= 0:
        raise ValueError("need B >= 0 and xi > 0")
    J = min(n_terms, process.truncation)
    coef = _kl_coefficients(B, xi, n_terms, normalization)[:J]
    return coef @ process.eigenfunctions[:J]


def _gaussian_bump_norm(tau: float) -> float:
    val, _ = integrate.quad(
        lambda x: np.exp(-((x - 0.5) ** 2) / tau**2),
        0.0,
        1.0,
        points=[0.5],
        epsabs=1e-13,
        epsrel=1e-12,
        limit=200,
    )
    return val


def make_theta_g(B: float, tau: float, grid: Grid) -> np.ndarray:
    """Gaussian bump centered at 1/2 with width ``tau`` and L2 norm ``B``."""
    if B < 0 or tau <= 0:
        raise ValueError("need B >= 0 and tau > 0")
    t = grid.points
    return B * np.exp(-((t - 0.5) ** 2) / (2 * tau**2)) / np.sqrt(_gaussian_bump_norm(tau))


@dataclass(frozen=True)
class SlopeSpec:
    """Slope function of the experiment.

    ``family`` is one of ``"zero"``, ``"theta_kl"`` (uses ``B``, ``xi``),
    ``"theta_g"`` (uses ``B``, ``tau``) or ``"custom"`` (uses ``values`` on
    the process grid).
    """

    family: str = "zero"
    B: float = 0.0
    xi: Optional[float] = None
    tau: Optional[float] = None
    values: Optional[Tuple[float, ...]] = None
    normalization: str = "norm"

    def __post_init__(self):
        if self.normalization not in KL_NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {KL_NORMALIZATIONS}")
        if self.family not in ("zero", "theta_kl", "theta_g", "custom"):
            raise ValueError(f"unknown slope family {self.family!r}")
        if self.B < 0:
            raise ValueError("B must be nonnegative")
        if self.family == "theta_kl" and not (self.xi is not None and self.xi > 0):
            raise ValueError("theta_kl needs xi > 0")
        if self.family == "theta_g" and not (self.tau is not None and self.tau > 0):
            raise ValueError("theta_g needs tau > 0")
        if self.family == "custom" and self.values is None:
            raise ValueError("custom slope needs grid values")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def theta_kl(cls, B, xi, normalization="norm"):
        return cls("theta_kl", B=float(B), xi=float(xi), normalization=normalization)

    @classmethod
    def theta_g(cls, B, tau):
        return cls("theta_g", B=float(B), tau=float(tau))

    def on_grid(self, process: ProcessSpec) -> np.ndarray:
        if self.family == "zero":
            return np.zeros(process.grid.size)
        if self.family == "theta_kl":
            return make_theta_kl(self.B, self.xi, process, normalization=self.normalization)
        if self.family == "theta_g":
            return make_theta_g(self.B, self.tau, process.grid)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (process.grid.size,):
            raise ValueError("custom slope does not match the process grid")
        return values

    def coefficients(self, process: ProcessSpec) -> np.ndarray:
        """Coefficients ``<theta, V_j>`` on the process eigenfunctions."""
        J = process.truncation
        if self.family == "zero":
            return np.zeros(J)
        if self.family == "theta_kl":
            coef = np.zeros(J)
            m = min(J, 100)
            coef[:m] = _kl_coefficients(self.B, self.xi, 100, self.normalization)[:m]
            return coef
        return inner_product(process.eigenfunctions, self.on_grid(process), process.grid)


def bias_term(process: ProcessSpec, slope: SlopeSpec, k: int) -> float:
    """Signal energy left outside the first ``k`` directions, ``sum_{j > k} lambda_j <theta, V_j>^2``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    coef = slope.coefficients(process)
    return float(np.sum(process.eigenvalues[k:] * coef[k:] ** 2))


@dataclass(frozen=True)
class ExperimentPlan:
    """One cell of a simulation table."""

    process: ProcessSpec
    slope: SlopeSpec
    n: int
    trials: int
    alpha: float = 0.05
    methods: Tuple[str, ...] = ("P1", "P2")
    mc_replicates: int = DEFAULT_MC_REPLICATES
    noise_sd: float = 1.0
    seed: int = 0
    kbar: Optional[int] = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.n < 4:
            raise ValueError("n must be at least 4")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        methods = tuple(m.upper() for m in self.methods)
        if not methods or any(m not in ("P1", "P2") for m in methods):
            raise ValueError(f"methods must be a nonempty subset of P1, P2, got {self.methods}")
        object.__setattr__(self, "methods", methods)

    def describe(self) -> dict:
        """Plain-data echo of the plan (the process by its kind and sizes)."""
        return {
            "process": {
                "kind": self.process.kind,
                "terms": self.process.truncation,
                "grid_points": self.process.grid.size,
            },
            "slope": {k: v for k, v in asdict(self.slope).items() if k != "values"},
            "n": self.n,
            "trials": self.trials,
            "alpha": self.alpha,
            "methods": list(self.methods),
            "mc_replicates": self.mc_replicates,
            "noise_sd": self.noise_sd,
            "seed": self.seed,
            "kbar": self.kbar,
        }


@dataclass(frozen=True)
class ExperimentResult:
    """Rejection counts per method; ``decisions[t, i]`` is trial ``t`` under ``methods[i]``."""

    methods: Tuple[str, ...]
    rejections: Dict[str, int]
    trials: int
    elapsed: float
    plan: ExperimentPlan
    decisions: np.ndarray = field(repr=False)

    def percentage(self, method: str) -> float:
        return 100.0 * self.rejections[method] / self.trials

    def ci_half_width(self, method: str) -> float:
        """95% normal-approximation half-width, in percentage points (0 when all or none reject)."""
        p = self.rejections[method] / self.trials
        return float(100.0 * 1.96 * np.sqrt(p * (1 - p) / self.trials))


def _run_trial(plan: ExperimentPlan, theta: np.ndarray, index: int) -> Tuple[bool, ...]:
    try:
        return _trial_decisions(plan, theta, index)
    except Exception as exc:
        raise RuntimeError(f"trial {index} (seed {plan.seed}) failed: {exc}") from exc


def _trial_decisions(plan: ExperimentPlan, theta: np.ndarray, index: int) -> Tuple[bool, ...]:
    trial = RngStream(plan.seed, (index,))
    grid = plan.process.grid
    curves = simulate_design(plan.process, plan.n, trial.child(0))
    noise = sample_standard_normal(trial.child(1), plan.n)
    responses = inner_product(curves, theta, grid) + plan.noise_sd * noise
    sample = FunctionalSample(grid, curves, responses)
    collection = dimension_collection(plan.n, plan.kbar)
    decomposition = fpca(sample, max_components=min(collection.kbar, plan.n))
    contexts = [build_projection(decomposition, k, plan.n) for k in _tested_dims(decomposition, collection)]
    out = []
    for method in plan.methods:
        res = _run(
            contexts, responses, collection, plan.alpha, method, plan.mc_replicates, trial.child(2)
        )
        out.append(res.reject)
    return tuple(out)


def _thread_count(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, threads)


def run_experiment(plan: ExperimentPlan, threads: Optional[int] = None) -> ExperimentResult:
    """Estimate rejection percentages of the requested procedures.

    Trial ``t`` draws its curves, noise and Monte-Carlo replicates from
    streams derived from ``(plan.seed, t)``; results do not depend on the
    execution order or on ``threads`` (default from ``FLMTEST_THREADS``).
    Any failing trial aborts the run.
    """
    theta = plan.slope.on_grid(plan.process)
    start = time.perf_counter()
    workers = _thread_count(threads)
    indices = range(plan.trials)
    if workers == 1:
        rows = [_run_trial(plan, theta, t) for t in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda t: _run_trial(plan, theta, t), indices))
    decisions = np.array(rows, dtype=bool).reshape(plan.trials, len(plan.methods))
    counts = {m: int(decisions[:, i].sum()) for i, m in enumerate(plan.methods)}
    return ExperimentResult(
        methods=plan.methods,
        rejections=counts,
        trials=plan.trials,
        elapsed=time.perf_counter() - start,
        plan=plan,
        decisions=decisions,
    )
