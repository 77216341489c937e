"""State covariate table, PCA summarization, and the similarity metric.

The covariate matrix (one row per state, 18 columns) is standardized and
decomposed via SVD, which is equivalent to an eigendecomposition of the
sample correlation matrix but numerically steadier.  Per-state component
scores feed an eigenvalue-weighted Euclidean distance used for grouping.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ZeroVarianceColumn
from .states import STATE_IDS, validate_state

COVARIATE_IDS: tuple[str, ...] = (
    "EA", "GDP", "MI", "RPP", "PR", "UP", "NMP", "ED", "HI", "OR",
    "PP", "R", "TP", "RH", "DP", "PD", "LF", "IP",
)

# Component signs are arbitrary up to reflection; anchor them to named
# covariates so loadings are reproducible across eigensolvers.  Each entry is
# (component index, covariate id, required sign of their correlation).
SIGN_ANCHORS: tuple[tuple[int, str, float], ...] = (
    (0, "MI", +1.0),
    (1, "TP", -1.0),
    (2, "GDP", +1.0),
)

_EIGEN_TIE_TOL = 1e-10


@dataclass(frozen=True)
class CovariateTable:
    """Ordered states by ordered covariate ids, no missing entries."""

    states: tuple[str, ...]
    covariate_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        n, p = self.values.shape
        if n != len(self.states) or p != len(self.covariate_ids):
            raise ValueError("value matrix shape does not match labels")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("covariate table contains non-finite entries")

    def column(self, covariate_id: str) -> np.ndarray:
        return self.values[:, self.covariate_ids.index(covariate_id)]


@dataclass(frozen=True)
class PcaResult:
    """Retained principal components of the standardized covariate matrix.

    `loadings[s, k]` is the score of state s on component k; `eigenvalues`
    are the retained correlation-matrix eigenvalues in descending order;
    `covariate_weights[j, k]` is the correlation of covariate j with
    component k; `all_eigenvalues` keeps the full spectrum so that trace
    checks remain possible after truncation.
    """

    states: tuple[str, ...]
    covariate_ids: tuple[str, ...]
    loadings: np.ndarray
    eigenvalues: np.ndarray
    proportion_of_variance: np.ndarray
    covariate_weights: np.ndarray
    K: int
    all_eigenvalues: np.ndarray

    def score(self, state: str, component: int) -> float:
        return float(self.loadings[self.states.index(state), component])


def standardize(table: CovariateTable) -> CovariateTable:
    """Center each column to mean 0 and scale to sample sd 1 (ddof=1)."""
    mean = table.values.mean(axis=0)
    sd = table.values.std(axis=0, ddof=1)
    bad = np.flatnonzero(sd == 0)
    if bad.size:
        names = ", ".join(table.covariate_ids[j] for j in bad)
        raise ZeroVarianceColumn(f"constant covariate column(s): {names}")
    return CovariateTable(table.states, table.covariate_ids,
                          (table.values - mean) / sd)


def pca(table: CovariateTable, K: int = 3) -> PcaResult:
    """PCA of the correlation structure with anchored component signs.

    The input is standardized internally; eigenvalues therefore sum to the
    number of columns.  Rank deficiency is reported as a warning with the
    effective rank, not an error: degenerate trailing components simply carry
    zero variance.
    """
    n, p = table.values.shape
    if not 1 <= K <= p:
        raise ValueError(f"K must be in 1..{p}, got {K}")
    z = standardize(table).values
    # SVD of the scaled data matrix; singular values give sqrt((n-1) * lambda).
    u, s, vt = np.linalg.svd(z / np.sqrt(n - 1), full_matrices=False)
    eigenvalues = s**2
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    vectors = vt.T[:, order]
    if eigenvalues.size < p:
        # n <= p leaves a null space; its components carry zero variance.
        pad = p - eigenvalues.size
        eigenvalues = np.concatenate([eigenvalues, np.zeros(pad)])
        vectors = np.hstack([vectors, np.zeros((p, pad))])

    ties = np.flatnonzero(np.abs(np.diff(eigenvalues)) < _EIGEN_TIE_TOL)
    if ties.size:
        warnings.warn(
            f"degenerate eigenvalues at positions {ties.tolist()}; "
            "component order fixed by loading-sign tie-break",
            stacklevel=2,
        )
    rank = int(np.sum(eigenvalues > max(n, p) * np.finfo(float).eps * eigenvalues[0]))
    if rank < min(n - 1, p):
        warnings.warn(f"covariate matrix is rank-deficient (effective rank {rank})",
                      stacklevel=2)

    scores = z @ vectors
    anchors = {k: (cid, sign) for k, cid, sign in SIGN_ANCHORS
               if cid in table.covariate_ids}
    for k in range(p):
        flip = 1.0
        anchor = anchors.get(k)
        if anchor is not None and eigenvalues[k] > 0 and np.ptp(scores[:, k]) > 0:
            cid, want = anchor
            c = _pearson(table.column(cid), scores[:, k])
            if c != 0 and np.sign(c) != want:
                flip = -1.0
        else:
            nonzero = np.flatnonzero(vectors[:, k])
            if nonzero.size and vectors[nonzero[0], k] < 0:
                flip = -1.0
        vectors[:, k] *= flip
        scores[:, k] *= flip

    weights = vectors * np.sqrt(np.maximum(eigenvalues, 0.0))
    proportions = eigenvalues / p
    return PcaResult(
        states=table.states,
        covariate_ids=table.covariate_ids,
        loadings=scores[:, :K],
        eigenvalues=eigenvalues[:K],
        proportion_of_variance=proportions[:K],
        covariate_weights=weights[:, :K],
        K=K,
        all_eigenvalues=eigenvalues,
    )


def distance(pca_result: PcaResult, s1: str, s2: str) -> float:
    """Eigenvalue-weighted Euclidean distance between two states' scores."""
    i = pca_result.states.index(s1)
    j = pca_result.states.index(s2)
    diff = pca_result.loadings[i] - pca_result.loadings[j]
    return float(np.sqrt(np.sum(pca_result.eigenvalues * diff**2)))


def distance_matrix(pca_result: PcaResult) -> np.ndarray:
    """All pairwise weighted distances, symmetric with zero diagonal."""
    scaled = pca_result.loadings * np.sqrt(pca_result.eigenvalues)
    diff = scaled[:, None, :] - scaled[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=2))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.sum(xc**2) * np.sum(yc**2))
    if denom == 0:
        raise ZeroVarianceColumn("cannot correlate a constant vector")
    return float(np.sum(xc * yc) / denom)


def covariate_output_correlation(table: CovariateTable, target: np.ndarray,
                                 pca_result: PcaResult | None = None) -> dict[str, float]:
    """Pearson correlation of each covariate (and PC score) with `target`.

    `target` is one value per state in table order.  Returns an ordered map
    covariate id -> r, followed by "PC1".. when a PCA result is supplied.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (len(table.states),):
        raise ValueError("target must hold one value per state")
    if np.ptp(target) == 0:
        raise ZeroVarianceColumn("target vector is constant")
    out = {cid: _pearson(table.column(cid), target) for cid in table.covariate_ids}
    if pca_result is not None:
        for k in range(pca_result.K):
            out[f"PC{k + 1}"] = _pearson(pca_result.loadings[:, k], target)
    return out


def read_covariates(path) -> CovariateTable:
    """Load the 51-state covariate file with the fixed canonical header."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(ln for ln in fh if not ln.startswith("#"))
        header = next(reader, None)
        if header is None:
            raise ParseError("covariates file is empty")
        header = [h.strip() for h in header]
        expected = ["state", *COVARIATE_IDS]
        if header != expected:
            raise ParseError(
                "covariates header must be exactly "
                f"{','.join(expected)}; got {','.join(header)}"
            )
        rows: dict[str, list[float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            state = validate_state(row[0], line=lineno)
            if state in rows:
                raise ParseError(f"duplicate covariate row for {state}", line=lineno)
            try:
                rows[state] = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(f"malformed covariate row: {exc}", line=lineno) from exc
            if len(rows[state]) != len(COVARIATE_IDS):
                raise ParseError(f"expected {len(COVARIATE_IDS)} values", line=lineno)
    missing = [s for s in STATE_IDS if s not in rows]
    if missing:
        raise ParseError(f"covariates missing state(s): {', '.join(missing)}")
    values = np.array([rows[s] for s in STATE_IDS], dtype=float)
    return CovariateTable(STATE_IDS, COVARIATE_IDS, values)


def read_state_vector(path) -> dict[str, float]:
    """Two-column (state, value) file, e.g. life expectancy or population."""
    out: dict[str, float] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(ln for ln in fh if not ln.startswith("#"))
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ParseError("expected a two-column file with a header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            state = validate_state(row[0], line=lineno)
            try:
                out[state] = float(row[1])
            except ValueError as exc:
                raise ParseError(f"malformed value: {exc}", line=lineno) from exc
    return out
