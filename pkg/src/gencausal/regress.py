"""Core regression machinery: within transformation, clustered OLS, binary MLE, bootstrap.

Everything downstream (difference-in-differences, shift-share IV, selection
corrections, hazard second stages) reduces to the primitives in this module:

* :func:`absorb_fe` sweeps out high-dimensional fixed effects by alternating
  within-group demeaning, so estimators never materialise dummy blocks.
* :func:`ols` fits least squares with deterministic collinearity dropping and
  a CR1 cluster-robust covariance.
* :func:`probit_fit` / :func:`logit_fit` are Newton-Raphson maximum-likelihood
  fits with step halving and explicit separation detection.
* :func:`inverse_mills` is the stable hazard ratio phi/Phi used by the
  selection correction.
* :func:`cluster_bootstrap` resamples whole clusters with a replicate-keyed
  generator, so results do not depend on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special

from .errors import (
    BootstrapError,
    ConvergenceError,
    EstimationError,
    IdentificationError,
    SeparationError,
)

__all__ = [
    "FeSpec",
    "FitResult",
    "BootstrapResult",
    "absorb_fe",
    "ols",
    "probit_fit",
    "logit_fit",
    "inverse_mills",
    "cluster_bootstrap",
]

# Alternating demeaning stops when no entry moved more than this.
DEMEAN_TOL = 1e-10
DEMEAN_MAX_SWEEPS = 10_000

# Columns whose residual diagonal falls below PIVOT_TOL times the largest
# diagonal of X'X are treated as spanned by earlier columns and dropped.
PIVOT_TOL = 1e-10

NEWTON_MAX_ITER = 100
NEWTON_SCORE_TOL = 1e-8
NEWTON_STEP_TOL = 1e-10
NEWTON_MAX_HALVINGS = 30
SEPARATION_BOUND = 1e3


@dataclass(frozen=True)
class FeSpec:
    """Fixed-effect factors to absorb, by factor name.

    Names refer to keys of a sample's factor mapping; the estimators resolve
    them to integer code arrays before calling :func:`absorb_fe`.
    """

    factors: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.factors)) != len(self.factors):
            raise ValueError(f"duplicate factors in FeSpec: {self.factors}")


@dataclass(frozen=True)
class FitResult:
    """A fitted linear or binary-response model.

    Coefficients are stored positionally in ``params`` with ``names`` giving
    the column labels; ``dropped`` lists columns removed as collinear.
    ``vcov`` is cluster robust whenever cluster ids were supplied.
    """

    names: tuple[str, ...]
    params: np.ndarray
    vcov: np.ndarray
    n_obs: int
    n_clusters: int
    dropped: tuple[str, ...]
    r_squared: float
    log_likelihood: float | None = None
    residuals: np.ndarray | None = field(default=None, repr=False)
    fitted: np.ndarray | None = field(default=None, repr=False)

    @property
    def se(self) -> np.ndarray:
        # with fewer clusters than parameters the sandwich is singular and
        # rounding can leave a diagonal entry at -1e-18; treat that as zero
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def _index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no coefficient named {name!r}; have {self.names}") from None

    def param(self, name: str) -> float:
        return float(self.params[self._index(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self._index(name)])

    def tstat(self, name: str) -> float:
        return self.param(name) / self.se_of(name)

    def conf_int(self, name: str, level: float = 0.95) -> tuple[float, float]:
        z = special.ndtri(0.5 + level / 2.0)
        b, s = self.param(name), self.se_of(name)
        return (b - z * s, b + z * s)


@dataclass(frozen=True)
class BootstrapResult:
    """Pairs-cluster bootstrap summary for one coefficient vector."""

    names: tuple[str, ...]
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    n_success: int
    n_failed: int
    draws: np.ndarray = field(repr=False)

    def se_of(self, name: str) -> float:
        return float(self.se[self.names.index(name)])


def _as_codes(values: np.ndarray) -> np.ndarray:
    """Map arbitrary factor labels to dense integer codes."""
    _, codes = np.unique(values, return_inverse=True)
    return codes.astype(np.intp)


def absorb_fe(
    design: np.ndarray | None,
    outcome: np.ndarray,
    factors: Sequence[np.ndarray],
) -> tuple[np.ndarray | None, np.ndarray]:
    """Sweep fixed-effect factors out of a design matrix and outcome.

    Alternates within-group demeaning across the factors until no entry
    changes by more than ``1e-10`` in a full sweep. The result equals the
    residual from projecting on the full dummy span, so OLS afterwards
    reproduces the dummy-variable coefficients on the remaining columns.

    Parameters
    ----------
    design : (n, k) array or None
        Columns to transform alongside the outcome.
    outcome : (n,) or (n, m) array
        Outcome column(s).
    factors : sequence of (n,) arrays
        One array of group labels per fixed-effect factor. A single factor
        converges in one sweep; several factors iterate.

    Returns
    -------
    (design, outcome)
        Demeaned copies with the original shapes.
    """
    y = np.asarray(outcome, dtype=np.float64)
    y2d = y.reshape(y.shape[0], -1)
    blocks = [y2d] if design is None else [y2d, np.asarray(design, dtype=np.float64).reshape(y.shape[0], -1)]
    work = np.concatenate(blocks, axis=1).copy()
    n = work.shape[0]

    codes: list[np.ndarray] = []
    counts: list[np.ndarray] = []
    for f in factors:
        f = np.asarray(f)
        if f.shape[0] != n:
            raise ValueError("factor length does not match the sample")
        c = _as_codes(f)
        if c.max() < 1:
            raise IdentificationError("fixed-effect factor has a single level in this sample")
        codes.append(c)
        counts.append(np.bincount(c).astype(np.float64))

    if not codes:
        out_y = work[:, : y2d.shape[1]].reshape(y.shape)
        out_x = None if design is None else work[:, y2d.shape[1]:].reshape(np.asarray(design).shape)
        return out_x, out_y

    for sweep in range(DEMEAN_MAX_SWEEPS):
        delta = 0.0
        for c, cnt in zip(codes, counts):
            for j in range(work.shape[1]):
                means = np.bincount(c, weights=work[:, j]) / cnt
                adjust = means[c]
                work[:, j] -= adjust
                step = np.max(np.abs(adjust)) if adjust.size else 0.0
                if step > delta:
                    delta = step
        if delta <= DEMEAN_TOL:
            break
    else:
        raise ConvergenceError(
            f"fixed-effect absorption did not converge in {DEMEAN_MAX_SWEEPS} sweeps"
        )

    out_y = work[:, : y2d.shape[1]].reshape(y.shape)
    out_x = None
    if design is not None:
        out_x = work[:, y2d.shape[1]:].reshape(np.asarray(design, dtype=np.float64).shape)
    return out_x, out_y


def _sweep_collinear(xtx: np.ndarray) -> list[int]:
    """Return indices of columns to keep, dropping spanned columns in order.

    Runs a pivoted elimination on X'X in the given column order. The working
    diagonal at step j equals the squared residual norm of column j after
    projecting on the kept predecessors (the squared R diagonal of a QR
    factorisation), so a small value flags a spanned column. First-listed
    columns always win ties.
    """
    a = np.array(xtx, dtype=np.float64)
    k = a.shape[0]
    scale = float(np.max(np.diag(a))) if k else 0.0
    if scale <= 0.0:
        return []
    thresh = PIVOT_TOL * scale
    keep: list[int] = []
    for j in range(k):
        piv = a[j, j]
        if piv <= thresh:
            a[j, :] = 0.0
            a[:, j] = 0.0
            continue
        keep.append(j)
        row = a[j, :].copy()
        a -= np.outer(row, row) / piv
        a[j, :] = 0.0
        a[:, j] = 0.0
    return keep


def _cluster_score_sums(scores: np.ndarray, codes: np.ndarray, n_groups: int) -> np.ndarray:
    out = np.empty((n_groups, scores.shape[1]))
    for j in range(scores.shape[1]):
        out[:, j] = np.bincount(codes, weights=scores[:, j], minlength=n_groups)
    return out


def _cr1_vcov(
    bread: np.ndarray,
    scores: np.ndarray,
    cluster_codes: np.ndarray,
    n_obs: int,
    n_params: int,
) -> tuple[np.ndarray, int]:
    """CR1 sandwich: bread (Sum_g s_g s_g') bread with the small-sample factor."""
    n_groups = int(cluster_codes.max()) + 1
    grouped = _cluster_score_sums(scores, cluster_codes, n_groups)
    meat = grouped.T @ grouped
    if n_groups < 2:
        raise IdentificationError("cluster-robust variance needs at least two clusters")
    denom = n_obs - n_params
    if denom <= 0:
        raise IdentificationError("more parameters than observations")
    c = (n_groups / (n_groups - 1.0)) * ((n_obs - 1.0) / denom)
    return c * bread @ meat @ bread, n_groups


def ols(
    design: np.ndarray,
    outcome: np.ndarray,
    names: Sequence[str],
    cluster_ids: np.ndarray | None = None,
    df_absorbed: int = 0,
) -> FitResult:
    """Least squares with deterministic collinearity handling and CR1 errors.

    Parameters
    ----------
    design : (n, k) array
        Regressor columns, already transformed if fixed effects were absorbed.
    outcome : (n,) array
    names : sequence of str
        One label per design column.
    cluster_ids : (n,) array, optional
        Cluster labels for the robust covariance. When omitted every row is
        its own cluster, which makes CR1 collapse to HC1.
    df_absorbed : int
        Degrees of freedom consumed by absorbed fixed effects; enters the
        small-sample correction so absorbed and dummy fits report comparable
        standard errors.

    Returns
    -------
    FitResult
        Coefficients for the kept columns; dropped columns are recorded and
        receive no coefficient. ``r_squared`` is computed on the outcome as
        given, so it is the within R-squared after absorption.
    """
    x = np.asarray(design, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(outcome, dtype=np.float64).ravel()
    n, k = x.shape
    if len(names) != k:
        raise ValueError("names must match design columns")
    if y.shape[0] != n:
        raise ValueError("outcome length does not match design")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("design and outcome must be finite")

    xtx = x.T @ x
    keep = _sweep_collinear(xtx)
    if not keep:
        raise IdentificationError("every design column was dropped as collinear")
    dropped = tuple(names[j] for j in range(k) if j not in set(keep))
    xk = x[:, keep]

    beta, *_ = np.linalg.lstsq(xk, y, rcond=None)
    fitted = xk @ beta
    resid = y - fitted

    n_params = len(keep) + df_absorbed
    bread = np.linalg.inv(xtx[np.ix_(keep, keep)])
    scores = xk * resid[:, None]
    if cluster_ids is None:
        codes = np.arange(n, dtype=np.intp)
    else:
        codes = _as_codes(np.asarray(cluster_ids))
    vcov, n_groups = _cr1_vcov(bread, scores, codes, n, n_params)

    ybar = y.mean()
    sst = float(np.sum((y - ybar) ** 2))
    ssr = float(np.sum(resid**2))
    r2 = 1.0 - ssr / sst if sst > 0 else 0.0

    return FitResult(
        names=tuple(names[j] for j in keep),
        params=beta,
        vcov=vcov,
        n_obs=n,
        n_clusters=n_groups,
        dropped=dropped,
        r_squared=r2,
        log_likelihood=None,
        residuals=resid,
        fitted=fitted,
    )


def inverse_mills(x: np.ndarray | float) -> np.ndarray | float:
    """Inverse Mills ratio phi(x) / Phi(x), stable in both tails.

    Evaluated as exp(log phi - log Phi); ``log_ndtr`` switches to an
    asymptotic expansion for deep negative arguments, which avoids the 0/0
    collapse of the naive ratio below roughly x = -8.
    """
    arr = np.asarray(x, dtype=np.float64)
    log_pdf = -0.5 * arr**2 - 0.5 * np.log(2.0 * np.pi)
    out = np.exp(log_pdf - special.log_ndtr(arr))
    return float(out) if np.isscalar(x) else out


def _newton(
    x: np.ndarray,
    y: np.ndarray,
    loglik: Callable[[np.ndarray], float],
    score: Callable[[np.ndarray], np.ndarray],
    obs_scores: Callable[[np.ndarray], np.ndarray],
    hessian_weights: Callable[[np.ndarray], np.ndarray],
    names: Sequence[str],
    cluster_ids: np.ndarray | None,
    model: str,
) -> FitResult:
    """Shared Newton-Raphson loop for the binary-response fits."""
    n, k = x.shape
    xtx = x.T @ x
    keep = _sweep_collinear(xtx)
    if not keep:
        raise IdentificationError("every design column was dropped as collinear")
    dropped = tuple(names[j] for j in range(k) if j not in set(keep))
    xk = x[:, keep]

    beta = np.zeros(len(keep))
    ll = loglik(xk @ beta)
    converged = False
    for _ in range(NEWTON_MAX_ITER):
        eta = xk @ beta
        g = xk.T @ score(eta)
        if np.max(np.abs(g)) < NEWTON_SCORE_TOL:
            converged = True
            break
        w = hessian_weights(eta)
        h = (xk * w[:, None]).T @ xk
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError as exc:
            raise SeparationError(f"{model} information matrix is singular") from exc
        new_beta = beta + step
        new_ll = loglik(xk @ new_beta)
        halvings = 0
        while not np.isfinite(new_ll) or new_ll < ll - 1e-10:
            if halvings >= NEWTON_MAX_HALVINGS:
                raise ConvergenceError(f"{model} step halving failed to improve the likelihood")
            step *= 0.5
            new_beta = beta + step
            new_ll = loglik(xk @ new_beta)
            halvings += 1
        moved = np.max(np.abs(step))
        beta, ll = new_beta, new_ll
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError(
                f"{model} coefficients diverged beyond {SEPARATION_BOUND:g}; "
                "a covariate separates the outcomes"
            )
        if moved < NEWTON_STEP_TOL:
            converged = True
            break
    if not converged:
        eta = xk @ beta
        if np.max(np.abs(xk.T @ score(eta))) >= NEWTON_SCORE_TOL:
            raise ConvergenceError(f"{model} did not converge in {NEWTON_MAX_ITER} iterations")

    eta = xk @ beta
    # A monotone likelihood has no finite maximiser: when every observation is
    # classified on its own side the score only vanishes in the limit, so a
    # "converged" point here means separation, not an interior optimum.
    if np.all(np.where(y == 1.0, eta, -eta) > 0.0):
        raise SeparationError(f"{model}: a covariate combination perfectly separates the outcomes")
    w = hessian_weights(eta)
    h = (xk * w[:, None]).T @ xk
    h_inv = np.linalg.inv(h)
    n_groups = n
    if cluster_ids is not None:
        codes = _as_codes(np.asarray(cluster_ids))
        scores = xk * obs_scores(eta)[:, None]
        vcov, n_groups = _cr1_vcov(h_inv, scores, codes, n, len(keep))
    else:
        vcov = h_inv

    p_bar = np.clip(y.mean(), 1e-12, 1 - 1e-12)
    ll_null = n * (p_bar * np.log(p_bar) + (1 - p_bar) * np.log(1 - p_bar))
    pseudo_r2 = 1.0 - ll / ll_null if ll_null != 0 else 0.0

    return FitResult(
        names=tuple(names[j] for j in keep),
        params=beta,
        vcov=vcov,
        n_obs=n,
        n_clusters=n_groups,
        dropped=dropped,
        r_squared=float(pseudo_r2),
        log_likelihood=float(ll),
        residuals=None,
        fitted=eta,
    )


def _check_binary(design: np.ndarray, outcome: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(design, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(outcome, dtype=np.float64).ravel()
    if y.shape[0] != x.shape[0]:
        raise ValueError("outcome length does not match design")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("binary outcome must contain only 0 and 1")
    if y.min() == y.max():
        raise IdentificationError("binary outcome has no variation")
    return x, y


def probit_fit(
    design: np.ndarray,
    outcome: np.ndarray,
    names: Sequence[str],
    cluster_ids: np.ndarray | None = None,
) -> FitResult:
    """Probit MLE by Newton-Raphson with step halving.

    Converges when the score's max absolute entry falls below 1e-8 or the
    step below 1e-10; raises :class:`SeparationError` when the coefficients
    run away, which is how perfect separation manifests.
    """
    x, y = _check_binary(design, outcome)

    def loglik(eta: np.ndarray) -> float:
        return float(np.sum(y * special.log_ndtr(eta) + (1 - y) * special.log_ndtr(-eta)))

    def score(eta: np.ndarray) -> np.ndarray:
        return y * inverse_mills(eta) - (1 - y) * inverse_mills(-eta)

    def hessian_weights(eta: np.ndarray) -> np.ndarray:
        u = score(eta)
        return u * (u + eta)

    return _newton(x, y, loglik, score, score, hessian_weights, names, cluster_ids, "probit")


def logit_fit(
    design: np.ndarray,
    outcome: np.ndarray,
    names: Sequence[str],
    cluster_ids: np.ndarray | None = None,
) -> FitResult:
    """Logit MLE by Newton-Raphson with step halving; see :func:`probit_fit`."""
    x, y = _check_binary(design, outcome)

    def loglik(eta: np.ndarray) -> float:
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    def score(eta: np.ndarray) -> np.ndarray:
        return y - special.expit(eta)

    def hessian_weights(eta: np.ndarray) -> np.ndarray:
        p = special.expit(eta)
        return p * (1.0 - p)

    return _newton(x, y, loglik, score, score, hessian_weights, names, cluster_ids, "logit")


def cluster_bootstrap(
    estimator: Callable[[np.ndarray], np.ndarray],
    cluster_ids: np.ndarray,
    names: Sequence[str],
    n_reps: int = 400,
    seed: int = 0,
    alpha: float = 0.05,
    max_failure_share: float = 0.20,
) -> BootstrapResult:
    """Pairs-cluster bootstrap: resample whole clusters with replacement.

    Parameters
    ----------
    estimator : callable
        Receives an array of row indices describing one resampled data set
        (cluster blocks concatenated) and returns a coefficient vector.
        Replicates that raise are counted as failures.
    cluster_ids : (n,) array
        Cluster labels; rows sharing a label always travel together.
    names : sequence of str
        Labels for the coefficient vector the estimator returns.
    n_reps, seed
        Each replicate draws from ``default_rng((seed, rep))`` so the
        resampled distribution is reproducible and order independent.

    Raises
    ------
    BootstrapError
        If more than ``max_failure_share`` of the replicates fail.
    """
    codes = _as_codes(np.asarray(cluster_ids))
    n_groups = int(codes.max()) + 1
    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    starts = np.searchsorted(sorted_codes, np.arange(n_groups))
    stops = np.searchsorted(sorted_codes, np.arange(n_groups), side="right")
    members = [order[a:b] for a, b in zip(starts, stops)]

    draws: list[np.ndarray] = []
    n_failed = 0
    for rep in range(n_reps):
        rng = np.random.default_rng((seed, rep))
        picked = rng.integers(0, n_groups, size=n_groups)
        rows = np.concatenate([members[g] for g in picked])
        try:
            draws.append(np.asarray(estimator(rows), dtype=np.float64))
        except (EstimationError, np.linalg.LinAlgError, FloatingPointError, ValueError, ZeroDivisionError):
            n_failed += 1
    if n_failed > max_failure_share * n_reps:
        raise BootstrapError(
            f"{n_failed} of {n_reps} bootstrap replicates failed; "
            "the resampled distribution is unstable"
        )
    mat = np.vstack(draws)
    se = mat.std(axis=0, ddof=1)
    lo = np.quantile(mat, alpha / 2.0, axis=0)
    hi = np.quantile(mat, 1.0 - alpha / 2.0, axis=0)
    return BootstrapResult(
        names=tuple(names),
        se=se,
        ci_lower=lo,
        ci_upper=hi,
        n_success=len(draws),
        n_failed=n_failed,
        draws=mat,
    )
