"""Gaussian-process fitting and universal-kriging prediction.

The observation model is y = f(x) + eps with a latent surface f drawn from a
GP whose covariance couples populations through a low-rank matrix B = A A^T
and couples coordinates through a separable age/year/cohort product kernel.
The linear trend in age is never optimized directly: for any kernel
hyperparameters the trend coefficients are profiled out by generalized least
squares, and prediction folds the trend-estimation uncertainty back into the
posterior covariance.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from numpy.linalg import LinAlgError
from scipy.linalg import cholesky as _cholesky
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from .errors import FactorizationError, FitFailure, InvariantBreach
from .kernels import (
    Coregionalization,
    InputPoint,
    KernelParams,
    JITTER_LADDER,
    apc_from_distances,
    apc_matrix,
)
from .lifetable import TrainingSet

TREND_MODES = ("pooled", "intercepts", "separate")

_LOG2PI = math.log(2.0 * math.pi)
_BIG = 1e25


@dataclass(frozen=True)
class FitConfig:
    family: str = "matern52"
    coreg_rank: int = 3
    restarts: int = 10
    seed: int = 0
    maxiter: int = 200
    trend: str = "intercepts"
    solver: str = "dense"  # dense | kron | auto
    theta_bounds: tuple[float, float] = (1.0, 100.0)
    eta2_bounds: tuple[float, float] = (1e-4, 25.0)
    noise_bounds: tuple[float, float] = (1e-8, 1.0)

    def __post_init__(self):
        if self.trend not in TREND_MODES:
            raise ValueError(f"trend must be one of {TREND_MODES}")
        if self.solver not in ("dense", "kron", "auto"):
            raise ValueError("solver must be dense, kron, or auto")
        if self.coreg_rank < 1:
            raise ValueError("coreg_rank must be >= 1")


@dataclass(frozen=True)
class Hyperparameters:
    """Kernel parameters, cross-population loadings, and noise variances.

    For a single population the process variance lives in `kernel.process_var`
    and A is pinned to [[1]]; for several populations the scale is absorbed
    into B and process_var stays at 1.
    """

    kernel: KernelParams
    coreg: Coregionalization
    noise: np.ndarray

    def __post_init__(self):
        noise = np.asarray(self.noise, dtype=float)
        if noise.ndim != 1 or noise.shape[0] != self.coreg.n_populations:
            raise ValueError("noise must hold one variance per population")
        if not np.all(noise > 0):
            raise ValueError("noise variances must be strictly positive")
        object.__setattr__(self, "noise", noise)

    @property
    def n_populations(self) -> int:
        return self.coreg.n_populations


@dataclass(frozen=True)
class PosteriorPrediction:
    points: tuple[InputPoint, ...]
    mean: np.ndarray
    std: np.ndarray
    covariance: np.ndarray | None = None


def trend_basis(x: InputPoint) -> np.ndarray:
    """Prior-mean basis at one point: intercept and age."""
    return np.array([1.0, x.age])


def trend_matrix(ages, pops, n_populations: int, mode: str) -> np.ndarray:
    """Design matrix for the linear-in-age prior mean.

    `pooled` shares intercept and slope; `intercepts` gives each population
    its own intercept with a common slope; `separate` frees both per
    population.  All modes coincide when there is one population.
    """
    ages = np.asarray(ages, dtype=float)
    pops = np.asarray(pops, dtype=int)
    if n_populations == 1 or mode == "pooled":
        return np.column_stack([np.ones_like(ages), ages])
    ind = (pops[:, None] == np.arange(n_populations)[None, :]).astype(float)
    if mode == "intercepts":
        return np.column_stack([ind, ages])
    if mode == "separate":
        return np.column_stack([ind, ind * ages[:, None]])
    raise ValueError(f"unknown trend mode {mode!r}")


def trend_labels(population_names, mode: str) -> list[str]:
    names = list(population_names)
    if len(names) == 1 or mode == "pooled":
        return ["intercept", "age_slope"]
    if mode == "intercepts":
        return [f"intercept_{n}" for n in names] + ["age_slope"]
    return [f"intercept_{n}" for n in names] + [f"age_slope_{n}" for n in names]


class _Workspace:
    """Cached quantities that depend on the data but not on hyperparameters."""

    def __init__(self, ts: TrainingSet, trend_mode: str):
        self.ts = ts
        self.n = ts.n
        self.L = ts.n_populations
        self.pops = ts.labels
        a = ts.ages.astype(float)
        t = ts.years.astype(float)
        c = t - a
        self.d_age = np.abs(a[:, None] - a[None, :])
        self.d_year = np.abs(t[:, None] - t[None, :])
        self.d_cohort = np.abs(c[:, None] - c[None, :])
        self.H = trend_matrix(ts.ages, ts.labels, self.L, trend_mode)
        self.y = ts.y
        self.grid = self._shared_grid()

    def _shared_grid(self):
        """Per-population block layout check for the Kronecker path."""
        if self.n % self.L:
            return None
        m = self.n // self.L
        expect = np.repeat(np.arange(self.L), m)
        if not np.array_equal(self.pops, expect):
            return None
        a0 = self.ts.ages[:m]
        t0 = self.ts.years[:m]
        for l in range(1, self.L):
            sl = slice(l * m, (l + 1) * m)
            if not (np.array_equal(self.ts.ages[sl], a0)
                    and np.array_equal(self.ts.years[sl], t0)):
                return None
        c0 = t0.astype(float) - a0.astype(float)
        return {
            "m": m,
            "d_age": np.abs(a0[:, None] - a0[None, :]).astype(float),
            "d_year": np.abs(t0[:, None] - t0[None, :]).astype(float),
            "d_cohort": np.abs(c0[:, None] - c0[None, :]),
        }


def _training_cov(ws: _Workspace, hp: Hyperparameters) -> tuple[np.ndarray, np.ndarray]:
    """Training covariance (without jitter) and the per-point latent scale."""
    clat = apc_from_distances(ws.d_age, ws.d_year, ws.d_cohort, hp.kernel)
    b = hp.coreg.B
    cov = b[np.ix_(ws.pops, ws.pops)] * clat
    cov[np.diag_indices_from(cov)] += hp.noise[ws.pops]
    latent_scale = np.diag(b)[ws.pops] * hp.kernel.process_var
    return cov, latent_scale


def _factor_training(ws: _Workspace, hp: Hyperparameters):
    """Cholesky of the training covariance with escalating latent jitter."""
    cov, latent_scale = _training_cov(ws, hp)
    idx = np.diag_indices_from(cov)
    for i, j in enumerate(JITTER_LADDER):
        try:
            factor = _cholesky(cov + np.diag(j * latent_scale), lower=True)
        except LinAlgError:
            continue
        if i > 0:
            warnings.warn(f"training covariance needed jitter {j:g}", stacklevel=2)
        return factor, j
    # Flat absolute fallback for rank-deficient B with negligible noise.
    scale = float(np.abs(cov[idx]).mean()) or 1.0
    for j in JITTER_LADDER:
        try:
            factor = _cholesky(cov + (j * scale) * np.eye(ws.n), lower=True)
        except LinAlgError:
            continue
        warnings.warn(f"training covariance needed flat jitter {j:g}", stacklevel=2)
        return factor, j
    raise FactorizationError("training covariance not positive definite at any jitter")


def _gls(factor: np.ndarray, H: np.ndarray, y: np.ndarray):
    """Whitened GLS: returns (beta, whitened H, whitened residual)."""
    hw = solve_triangular(factor, H, lower=True)
    yw = solve_triangular(factor, y, lower=True)
    beta, *_ = np.linalg.lstsq(hw, yw, rcond=None)
    return beta, hw, yw - hw @ beta


def _dense_lml(ws: _Workspace, hp: Hyperparameters) -> float:
    factor, _ = _factor_training(ws, hp)
    _, _, rw = _gls(factor, ws.H, ws.y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor))))
    return -0.5 * (float(rw @ rw) + logdet + ws.n * _LOG2PI)


def _kron_lml(ws: _Workspace, hp: Hyperparameters) -> float:
    """Likelihood via the block-grid decomposition.

    Valid only when every population shares one (age, year) grid in the
    population-major layout; then the training covariance factors as
    B (x) C plus a population-wise noise diagonal, and both the determinant
    and the solves reduce to two small eigendecompositions.
    """
    g = ws.grid
    if g is None:
        raise InvariantBreach("kron solver requested for a non-grid layout")
    m, L = g["m"], ws.L
    clat = apc_from_distances(g["d_age"], g["d_year"], g["d_cohort"], hp.kernel)
    clat[np.diag_indices_from(clat)] += JITTER_LADDER[0] * hp.kernel.process_var
    lam_c, u = np.linalg.eigh(clat)
    lam_c = np.clip(lam_c, 0.0, None)
    sig = hp.noise
    root = np.sqrt(sig)
    btil = hp.coreg.B / np.outer(root, root)
    lam_b, v = np.linalg.eigh(btil)
    lam_b = np.clip(lam_b, 0.0, None)
    denom = np.outer(lam_b, lam_c) + 1.0

    def kinv(x: np.ndarray) -> np.ndarray:
        x2 = x.reshape(L, m) / root[:, None]
        x2 = v.T @ x2 @ u
        x2 = x2 / denom
        x2 = v @ x2 @ u.T
        return (x2 / root[:, None]).ravel()

    kih = np.column_stack([kinv(ws.H[:, j]) for j in range(ws.H.shape[1])])
    kiy = kinv(ws.y)
    gram = ws.H.T @ kih
    beta, *_ = np.linalg.lstsq(gram, ws.H.T @ kiy, rcond=None)
    resid = ws.y - ws.H @ beta
    kir = kiy - kih @ beta
    quad = float(resid @ kir)
    logdet = m * float(np.sum(np.log(sig))) + float(np.sum(np.log(denom)))
    return -0.5 * (quad + logdet + ws.n * _LOG2PI)


def log_marginal_likelihood(hp: Hyperparameters, data: TrainingSet,
                            trend: str = "intercepts",
                            solver: str = "dense") -> float:
    """Profile log marginal likelihood of the data under `hp`.

    The trend coefficients are replaced by their GLS optimum before
    evaluating the Gaussian density, so the value depends only on the kernel,
    coregionalization, and noise parameters.
    """
    ws = _Workspace(data, trend)
    if solver == "kron" or (solver == "auto" and ws.grid is not None):
        return _kron_lml(ws, hp)
    return _dense_lml(ws, hp)


class _ParamPacker:
    """Maps between optimizer vectors and Hyperparameters.

    Positives are optimized on the log scale; coregionalization loadings are
    unconstrained.  For one population the loading is pinned and the process
    variance is free; for several the roles are swapped.
    """

    def __init__(self, L: int, Q: int, config: FitConfig):
        self.L = L
        self.Q = Q if L > 1 else 1
        self.config = config
        self.sogp = L == 1

    @property
    def size(self) -> int:
        base = 3 + self.L  # lengthscales + per-population noise
        return base + (1 if self.sogp else self.L * self.Q)

    def bounds(self):
        lo_t, hi_t = self.config.theta_bounds
        lo_e, hi_e = self.config.eta2_bounds
        lo_n, hi_n = self.config.noise_bounds
        out = [(math.log(lo_t), math.log(hi_t))] * 3
        if self.sogp:
            out.append((math.log(lo_e), math.log(hi_e)))
        else:
            out.extend([(None, None)] * (self.L * self.Q))
        out.extend([(math.log(lo_n), math.log(hi_n))] * self.L)
        return out

    def unpack(self, x: np.ndarray) -> Hyperparameters:
        thetas = np.exp(x[:3])
        i = 3
        if self.sogp:
            eta2 = float(np.exp(x[i]))
            i += 1
            a = np.array([[1.0]])
        else:
            eta2 = 1.0
            a = x[i:i + self.L * self.Q].reshape(self.L, self.Q).copy()
            i += self.L * self.Q
        noise = np.exp(x[i:i + self.L])
        kernel = KernelParams(self.config.family, float(thetas[0]),
                              float(thetas[1]), float(thetas[2]), eta2)
        return Hyperparameters(kernel, Coregionalization(a), noise)

    def initial(self, rng: np.random.Generator, pop_var: np.ndarray) -> np.ndarray:
        x = np.empty(self.size)
        x[:3] = rng.uniform(math.log(2.0), math.log(50.0), size=3)
        i = 3
        if self.sogp:
            lo, hi = self.config.eta2_bounds
            x[i] = math.log(float(np.clip(pop_var[0] * rng.uniform(0.5, 1.5), lo, hi)))
            i += 1
        else:
            a0 = rng.normal(size=(self.L, self.Q))
            a0 *= np.sqrt(pop_var / self.Q)[:, None]
            x[i:i + self.L * self.Q] = a0.ravel()
            i += self.L * self.Q
        lo, hi = self.config.noise_bounds
        noise0 = np.clip(pop_var * 10.0 ** rng.uniform(-3.0, -0.5, size=self.L), lo, hi)
        x[i:] = np.log(noise0)
        return x


def canonical_loadings(coreg: Coregionalization) -> Coregionalization:
    """Rotation-fixed loadings: eigenvector factor of B with signed columns.

    A is identifiable only up to right-rotation; serializing the top-Q
    eigenpair factor keeps reports reproducible without changing B.
    """
    b = coreg.B
    lam, vec = np.linalg.eigh(b)
    order = np.argsort(-lam, kind="stable")[:coreg.rank]
    lam = np.clip(lam[order], 0.0, None)
    vec = vec[:, order]
    for k in range(vec.shape[1]):
        nz = np.flatnonzero(np.abs(vec[:, k]) > 1e-12)
        if nz.size and vec[nz[0], k] < 0:
            vec[:, k] = -vec[:, k]
    return Coregionalization(vec * np.sqrt(lam))


class FittedModel:
    """Hyperparameters plus the cached factorization needed for prediction."""

    def __init__(self, hyperparameters: Hyperparameters, training: TrainingSet,
                 trend: str = "intercepts", diagnostics: dict | None = None,
                 target_index: int = 0):
        if training.n_populations != hyperparameters.n_populations:
            raise ValueError("population count mismatch between data and parameters")
        self.hyperparameters = hyperparameters
        self.training = training
        self.trend = trend
        self.diagnostics = dict(diagnostics or {})
        self.target_index = target_index
        self._ws = _Workspace(training, trend)
        self._factor, self.jitter = _factor_training(self._ws, hyperparameters)
        self.beta, self._hw, self._rw = _gls(self._factor, self._ws.H, self._ws.y)
        gram = self._hw.T @ self._hw
        self._gram_inv = np.linalg.pinv(gram)
        self.log_likelihood = -0.5 * (
            float(self._rw @ self._rw)
            + 2.0 * float(np.sum(np.log(np.diag(self._factor))))
            + self._ws.n * _LOG2PI
        )

    @property
    def population_names(self) -> tuple[str, ...]:
        return self.training.population_names

    def population_index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            return int(name)
        return self.population_names.index(name)


def _as_input_points(points) -> tuple[tuple[InputPoint, ...], np.ndarray, np.ndarray, np.ndarray]:
    pts = tuple(points)
    ages = np.array([p.age for p in pts], dtype=float)
    years = np.array([p.year for p in pts], dtype=float)
    pops = np.array([p.population for p in pts], dtype=int)
    return pts, ages, years, pops


def predict(model: FittedModel, points, with_covariance: bool = False,
            latent_only: bool = True) -> PosteriorPrediction:
    """Posterior of the latent surface (or of a new observation) at `points`.

    The mean combines the GLS trend with the kriging correction; the
    covariance is the prior minus the data correction plus the trend-
    uncertainty term.  With `latent_only=False` the per-population noise
    variance is added on the diagonal, giving predictive intervals for raw
    observations rather than for the smoothed surface.
    """
    pts, ages, years, pops = _as_input_points(points)
    hp = model.hyperparameters
    L = hp.n_populations
    if pts and pops.max() >= L:
        raise ValueError("population index outside the fitted model")
    ws = model._ws
    b = hp.coreg.B
    ks = b[np.ix_(ws.pops, pops)] * apc_matrix(
        ws.ts.ages, ws.ts.years, ages, years, hp.kernel)
    hs = trend_matrix(ages, pops, L, model.trend)
    a = solve_triangular(model._factor, ks, lower=True)
    mean = hs @ model.beta + a.T @ model._rw
    r = hs.T - model._hw.T @ a
    if with_covariance:
        kss = b[np.ix_(pops, pops)] * apc_matrix(ages, years, ages, years, hp.kernel)
        cov = kss - a.T @ a + r.T @ model._gram_inv @ r
        cov = 0.5 * (cov + cov.T)
        if not latent_only:
            cov[np.diag_indices_from(cov)] += hp.noise[pops]
        var = np.diag(cov).copy()
    else:
        prior = np.diag(b)[pops] * hp.kernel.process_var
        var = prior - np.sum(a * a, axis=0) + np.sum(r * (model._gram_inv @ r), axis=0)
        if not latent_only:
            var = var + hp.noise[pops]
        cov = None
    std = np.sqrt(np.clip(var, 0.0, None))
    if cov is not None:
        cov[np.diag_indices_from(cov)] = std**2
    return PosteriorPrediction(points=pts, mean=mean, std=std, covariance=cov)


def fit(data: TrainingSet, config: FitConfig) -> FittedModel:
    """Maximum-likelihood hyperparameters via seeded multi-restart search.

    Each restart draws an initial point from its own seeded stream and runs a
    bounded quasi-Newton minimization of the negative profile likelihood.
    The best restart wins (ties to the lowest index), so identical data,
    config, and seed reproduce the fit bit for bit.
    """
    ws = _Workspace(data, config.trend)
    L = ws.L
    packer = _ParamPacker(L, config.coreg_rank, config)
    use_kron = config.solver == "kron" or (config.solver == "auto" and ws.grid is not None)
    if config.solver == "kron" and ws.grid is None:
        raise FactorizationError("kron solver requires a shared population grid")

    # Rough per-population variance after removing the age trend, for inits.
    pop_var = np.empty(L)
    for l in range(L):
        mask = ws.pops == l
        hl = np.column_stack([np.ones(mask.sum()), ws.ts.ages[mask]])
        resid = ws.y[mask] - hl @ np.linalg.lstsq(hl, ws.y[mask], rcond=None)[0]
        pop_var[l] = max(float(resid.var()), 1e-8)

    def objective(x: np.ndarray) -> float:
        try:
            hp = packer.unpack(x)
            val = _kron_lml(ws, hp) if use_kron else _dense_lml(ws, hp)
        except (FactorizationError, FloatingPointError, ValueError):
            return _BIG
        if not np.isfinite(val):
            return _BIG
        return -val

    best = None
    notes: list[str] = []
    for restart in range(max(1, config.restarts)):
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, restart)))
        x0 = packer.initial(rng, pop_var)
        res = minimize(objective, x0, method="L-BFGS-B", bounds=packer.bounds(),
                       options={"maxiter": config.maxiter})
        if not np.isfinite(res.fun) or res.fun >= _BIG:
            notes.append(f"restart {restart}: no finite likelihood")
            continue
        if not res.success:
            notes.append(f"restart {restart}: {res.message}")
        cand = (float(res.fun), restart, res.x.copy(), int(res.nit), bool(res.success))
        if best is None or cand[0] < best[0]:
            best = cand
    if best is None:
        raise FitFailure("all restarts failed to produce a finite likelihood")

    neg_lml, restart, x, nit, converged = best
    hp = packer.unpack(x)
    if L > 1:
        hp = replace(hp, coreg=canonical_loadings(hp.coreg))
    diagnostics = {
        "log_likelihood": -neg_lml,
        "restarts": int(max(1, config.restarts)),
        "best_restart": restart,
        "iterations": nit,
        "converged": converged,
        "family": config.family,
        "trend": config.trend,
        "solver": "kron" if use_kron else "dense",
        "seed": config.seed,
        "notes": notes,
    }
    return FittedModel(hp, data, trend=config.trend, diagnostics=diagnostics)


def save_model(model: FittedModel, path, data_fingerprint: str = "") -> None:
    """Self-describing JSON snapshot; reload with `load_model`."""
    hp = model.hyperparameters
    doc = {
        "format": "statemort-model",
        "version": 1,
        "family": hp.kernel.family,
        "theta_age": hp.kernel.theta_age,
        "theta_year": hp.kernel.theta_year,
        "theta_cohort": hp.kernel.theta_cohort,
        "process_var": hp.kernel.process_var,
        "loadings": hp.coreg.A.tolist(),
        "coregionalization": hp.coreg.B.tolist(),
        "noise": hp.noise.tolist(),
        "trend_mode": model.trend,
        "beta": np.asarray(model.beta).tolist(),
        "beta_labels": trend_labels(model.population_names, model.trend),
        "populations": list(model.population_names),
        "target_index": model.target_index,
        "diagnostics": model.diagnostics,
        "data_fingerprint": data_fingerprint,
        "training": {
            "ages": model.training.ages.tolist(),
            "years": model.training.years.tolist(),
            "labels": model.training.labels.tolist(),
            "y": model.training.y.tolist(),
        },
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def load_model(path) -> FittedModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "statemort-model":
        raise ValueError(f"{path} is not a model file")
    kernel = KernelParams(doc["family"], doc["theta_age"], doc["theta_year"],
                          doc["theta_cohort"], doc["process_var"])
    hp = Hyperparameters(kernel, Coregionalization(np.array(doc["loadings"])),
                         np.array(doc["noise"]))
    tr = doc["training"]
    training = TrainingSet(
        np.array(tr["ages"]), np.array(tr["years"]),
        np.array(tr["labels"], dtype=int), np.array(tr["y"], dtype=float),
        tuple(doc["populations"]),
    )
    return FittedModel(hp, training, trend=doc["trend_mode"],
                       diagnostics=doc.get("diagnostics"),
                       target_index=int(doc.get("target_index", 0)))


def training_fingerprint(ts: TrainingSet) -> str:
    """Stable digest of the canonical training CSV content."""
    import io as _io

    from .lifetable import training_set_to_csv

    buf = _io.StringIO()
    training_set_to_csv(ts, buf)
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()
