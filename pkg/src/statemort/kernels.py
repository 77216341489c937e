"""Covariance kernels: base families, the age/period/cohort product, and the
cross-population (coregionalized) covariance matrix."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky as _cholesky
from scipy.linalg import LinAlgError

from .errors import FactorizationError

JITTER_LADDER = (1e-8, 1e-6, 1e-4)

_SQRT5 = np.sqrt(5.0)


def matern52(d, theta: float):
    """Matern-5/2 correlation at distance d >= 0 with lengthscale theta."""
    if theta <= 0:
        raise ValueError(f"lengthscale must be positive, got {theta}")
    r = np.abs(np.asarray(d, dtype=float)) / theta
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite distance")
    out = (1.0 + _SQRT5 * r + (5.0 / 3.0) * r**2) * np.exp(-_SQRT5 * r)
    return out if out.ndim else float(out)


def sqexp(d, theta: float):
    """Squared-exponential correlation at distance d with lengthscale theta."""
    if theta <= 0:
        raise ValueError(f"lengthscale must be positive, got {theta}")
    r = np.asarray(d, dtype=float) / theta
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite distance")
    out = np.exp(-0.5 * r**2)
    return out if out.ndim else float(out)


KERNEL_FAMILIES = {"matern52": matern52, "sqexp": sqexp}


@dataclass(frozen=True)
class InputPoint:
    """A surface coordinate; the cohort is always year - age, never stored."""

    age: float
    year: float
    population: int = 0

    @property
    def cohort(self) -> float:
        return self.year - self.age


@dataclass(frozen=True)
class KernelParams:
    family: str
    theta_age: float
    theta_year: float
    theta_cohort: float
    process_var: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        for name in ("theta_age", "theta_year", "theta_cohort", "process_var"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class Coregionalization:
    """Low-rank cross-population loadings A (L x Q); B = A A^T."""

    A: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        if a.ndim != 2:
            raise ValueError("A must be a 2-D loadings matrix")
        if not np.all(np.isfinite(a)):
            raise ValueError("A contains non-finite entries")

    @property
    def B(self) -> np.ndarray:
        return self.A @ self.A.T

    @property
    def n_populations(self) -> int:
        return self.A.shape[0]

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    def cross_correlations(self) -> np.ndarray:
        """B scaled to unit diagonal, with zero rows left at zero."""
        b = self.B
        scale = np.sqrt(np.diag(b))
        scale[scale == 0] = 1.0
        return b / np.outer(scale, scale)


def apc_kernel(x: InputPoint, x2: InputPoint, params: KernelParams) -> float:
    """Separable product kernel over age, year, and cohort distances."""
    k = KERNEL_FAMILIES[params.family]
    return params.process_var * float(
        k(abs(x.age - x2.age), params.theta_age)
        * k(abs(x.year - x2.year), params.theta_year)
        * k(abs(x.cohort - x2.cohort), params.theta_cohort)
    )


def apc_matrix(ages1, years1, ages2, years2, params: KernelParams) -> np.ndarray:
    """Product kernel evaluated pairwise between two coordinate sets."""
    k = KERNEL_FAMILIES[params.family]
    a1, t1 = np.asarray(ages1, float), np.asarray(years1, float)
    a2, t2 = np.asarray(ages2, float), np.asarray(years2, float)
    da = np.abs(a1[:, None] - a2[None, :])
    dt = np.abs(t1[:, None] - t2[None, :])
    dc = np.abs((t1 - a1)[:, None] - (t2 - a2)[None, :])
    return params.process_var * (
        k(da, params.theta_age) * k(dt, params.theta_year) * k(dc, params.theta_cohort)
    )


def apc_from_distances(d_age, d_year, d_cohort, params: KernelParams) -> np.ndarray:
    """Same product kernel on precomputed absolute-distance matrices."""
    k = KERNEL_FAMILIES[params.family]
    return params.process_var * (
        k(d_age, params.theta_age)
        * k(d_year, params.theta_year)
        * k(d_cohort, params.theta_cohort)
    )


def _point_arrays(points):
    ages = np.array([p.age for p in points], dtype=float)
    years = np.array([p.year for p in points], dtype=float)
    pops = np.array([p.population for p in points], dtype=int)
    return ages, years, pops


def icm_covariance(points, coreg: Coregionalization, params: KernelParams,
                   noise=None) -> np.ndarray:
    """Cross-population covariance: B[l_i, l_j] * apc(x_i, x_j) (+ noise diag).

    With a single population and B = [[1]] this is the plain single-output
    covariance.  `noise` is a per-population variance list applied on the
    diagonal only.
    """
    ages, years, pops = _point_arrays(points)
    b = coreg.B
    if pops.size and pops.max() >= b.shape[0]:
        raise ValueError("population index exceeds coregionalization size")
    cov = b[np.ix_(pops, pops)] * apc_matrix(ages, years, ages, years, params)
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (b.shape[0],):
            raise ValueError("noise must hold one variance per population")
        cov[np.diag_indices_from(cov)] += noise[pops]
    return cov


def jittered_cholesky(mat: np.ndarray, scale: float | None = None):
    """Lower Cholesky factor of mat + jitter*scale*I, escalating the jitter.

    The ladder starts at 1e-8 and retries at 1e-6 and 1e-4 (with a warning)
    before giving up.  Returns (factor, jitter_used).
    """
    if scale is None:
        diag = np.abs(np.diag(mat))
        scale = float(diag.mean()) if diag.size and diag.mean() > 0 else 1.0
    eye = np.eye(mat.shape[0])
    for i, j in enumerate(JITTER_LADDER):
        try:
            factor = _cholesky(mat + (j * scale) * eye, lower=True)
        except LinAlgError:
            continue
        if i > 0:
            warnings.warn(f"jitter escalated to {j:g} * scale for factorization",
                          stacklevel=2)
        return factor, j * scale
    raise FactorizationError(
        f"Cholesky failed at all jitter levels up to {JITTER_LADDER[-1]:g} * scale"
    )
