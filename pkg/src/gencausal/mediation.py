"""Natural direct and indirect effects with a quasi-Bayesian decomposition.

Two pieces: a mediator constructed as the mother-level shared component of an
offspring outcome (the part of the outcome a mother fixed effect predicts),
and a simulation decomposition of a treatment effect into the path through a
mediator and the path around it.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DataError, IdentificationError
from .microdata import IndividualRecord
from .regress import _as_codes, absorb_fe, cluster_bootstrap, logit_fit, ols

__all__ = [
    "MediationResult",
    "build_epigenetic_mediator",
    "mediate",
]

_EFFECT_NAMES = ("natural_direct", "natural_indirect", "total")


@dataclass(frozen=True)
class MediationResult:
    """Decomposition of a total effect into direct and mediated parts.

    ``natural_direct_effect`` holds E[Y(1, M(0)) - Y(0, M(0))] and
    ``natural_indirect_effect`` holds E[Y(1, M(1)) - Y(1, M(0))]; the two sum
    to ``total_effect`` by construction. Standard errors and percentile
    intervals come from re-running the whole two-model procedure on cluster
    bootstrap resamples.
    """

    mediator: str
    natural_direct_effect: float
    natural_indirect_effect: float
    total_effect: float
    nde_se: float
    nie_se: float
    total_se: float
    nde_ci: tuple[float, float]
    nie_ci: tuple[float, float]
    total_ci: tuple[float, float]
    n_obs: int
    n_clusters: int
    n_draws: int
    n_reps: int
    n_failed_reps: int
    mediator_model: str
    precision_warning: str | None = None

    def __post_init__(self) -> None:
        gap = self.natural_direct_effect + self.natural_indirect_effect - self.total_effect
        if abs(gap) > 1e-10 * max(1.0, abs(self.total_effect)):
            raise ValueError("direct and indirect parts do not sum to the total")


def build_epigenetic_mediator(
    records: Sequence[IndividualRecord],
    outcome: str,
    covariates: np.ndarray | None = None,
    covariate_names: Sequence[str] = (),
) -> np.ndarray:
    """Mother-level shared component of an offspring outcome.

    Fits the outcome on the covariates with mother fixed effects, averages
    the covariate-adjusted residual within each mother, and shrinks each
    mother mean toward zero by its reliability (the mother variance share of
    the mean's total variance). Siblings therefore share one value, a mother
    with many offspring keeps most of her raw mean, and a mother observed
    once keeps little. The result is centered to mean zero.

    Parameters
    ----------
    records : sequence of IndividualRecord
        Offspring of one generation; the mother link groups siblings.
    outcome : str
        Name of a numeric record field, observed for every record.
    covariates, covariate_names : optional
        Columns swept out (with the fixed effects) before averaging.

    Returns
    -------
    (n,) array aligned with ``records``.

    Raises
    ------
    IdentificationError
        If no mother has two or more offspring: the within-mother residual
        variance, and with it the shared component, is not identified.
    DataError
        If the outcome field is missing or non-finite for some record.
    """
    if not records:
        raise DataError("no records to build a mediator from")
    values = []
    for r in records:
        v = getattr(r, outcome, None)
        if v is None or not np.isfinite(float(v)):
            raise DataError(f"record {r.id}: outcome {outcome!r} is missing")
        values.append(float(v))
    y = np.asarray(values, dtype=np.float64)
    codes = _as_codes(np.asarray([r.mother_id for r in records]))
    n = y.shape[0]
    n_mothers = int(codes.max()) + 1
    sizes = np.bincount(codes, minlength=n_mothers).astype(np.float64)
    if not np.any(sizes >= 2):
        raise IdentificationError(
            "every mother has a single offspring; the shared component "
            "cannot be separated from the idiosyncratic part"
        )

    k = 0
    resid = y
    if covariates is not None:
        x = np.asarray(covariates, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != n:
            raise DataError(f"covariates have {x.shape[0]} rows for {n} records")
        names = tuple(covariate_names) or tuple(f"x{j}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError(f"{len(names)} covariate names for {x.shape[1]} columns")
        xd, yd = absorb_fe(x, y, [codes])
        fit = ols(xd, yd, names, df_absorbed=n_mothers)
        k = len(fit.names)
        kept = [j for j, nm in enumerate(names) if nm not in fit.dropped]
        gamma = np.zeros(x.shape[1])
        gamma[kept] = fit.params
        resid = y - x @ gamma

    means = np.bincount(codes, weights=resid, minlength=n_mothers) / sizes
    within = resid - means[codes]
    df = n - n_mothers - k
    if df <= 0:
        raise IdentificationError("too few offspring per mother to estimate the shared part")
    sigma_e2 = float(within @ within) / df

    centered = means - float(np.mean(means[codes]))
    between = float(np.mean(centered[codes] ** 2))
    sigma_mu2 = max(0.0, between - sigma_e2 * float(np.mean(1.0 / sizes[codes])))
    if sigma_mu2 == 0.0:
        return np.zeros(n)
    reliability = sigma_mu2 / (sigma_mu2 + sigma_e2 / sizes)
    mediator = (reliability * centered)[codes]
    return mediator - mediator.mean()


def _draw_factor(vcov: np.ndarray) -> np.ndarray:
    """Square root of a covariance matrix that tolerates a flat direction."""
    evals, evecs = np.linalg.eigh((vcov + vcov.T) / 2.0)
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def _guard_dropped(fit, model: str) -> None:
    if fit.dropped:
        raise IdentificationError(f"{model} model dropped collinear columns {fit.dropped}")


def mediate(
    outcome: np.ndarray,
    treatment: np.ndarray,
    mediator: np.ndarray,
    controls: np.ndarray | None = None,
    control_names: Sequence[str] = (),
    cluster_ids: np.ndarray | None = None,
    n_draws: int = 1000,
    n_reps: int = 200,
    seed: int = 0,
    mediator_name: str = "mediator",
) -> MediationResult:
    """Decompose a treatment effect into direct and mediated parts.

    Fits a mediator model (linear, or logit when the mediator is binary) and
    a linear outcome model, draws ``n_draws`` parameter vectors from each
    fit's asymptotic normal with the cluster-robust covariance, and averages
    the implied potential-outcome contrasts over draws. The outcome model is
    linear in the mediator, so expected potential outcomes need the mediator
    only through its model-implied mean at each treatment arm; simulating
    individual mediator noise would average back to the same contrasts.

    Standard errors re-run everything per cluster-bootstrap replicate with
    one shared set of standard-normal draws, so replicate spread reflects the
    data and not the draw noise.

    Parameters
    ----------
    outcome, treatment, mediator : (n,) arrays
    controls : (n, k) array, optional
    cluster_ids : (n,) array, optional
        Bootstrap resampling blocks; rows are independent when omitted.
    n_draws : int
        Parameter draws per fit; below 100 a precision warning is recorded.
    n_reps : int
        Bootstrap replicates.
    seed : int
        Fixes draws and resampling; identical inputs give identical results.
    """
    y = np.asarray(outcome, dtype=np.float64).ravel()
    d = np.asarray(treatment, dtype=np.float64).ravel()
    m = np.asarray(mediator, dtype=np.float64).ravel()
    n = y.shape[0]
    if d.shape[0] != n or m.shape[0] != n:
        raise DataError(
            f"outcome, treatment, mediator lengths differ: {n}, {d.shape[0]}, {m.shape[0]}"
        )
    for label, col in (("outcome", y), ("treatment", d), ("mediator", m)):
        if not np.all(np.isfinite(col)):
            raise DataError(f"{label} contains non-finite values")
    if np.ptp(d) == 0.0:
        raise DataError("treatment does not vary")
    if np.ptp(m) == 0.0:
        raise DataError("mediator does not vary")
    if n_draws < 1:
        raise ValueError(f"n_draws must be positive, got {n_draws}")
    x = None
    names: tuple[str, ...] = ()
    if controls is not None:
        x = np.asarray(controls, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != n:
            raise DataError(f"controls have {x.shape[0]} rows for {n} observations")
        names = tuple(control_names) or tuple(f"x{j}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError(f"{len(names)} control names for {x.shape[1]} columns")

    binary_mediator = np.all((m == 0.0) | (m == 1.0)) and np.ptp(m) > 0.0
    model = "logit" if binary_mediator else "linear"
    med_names = ("const", "treated", *names)
    out_names = ("const", "treated", mediator_name, *names)

    rng = np.random.default_rng(seed)
    z_med = rng.standard_normal((n_draws, len(med_names)))
    z_out = rng.standard_normal((n_draws, len(out_names)))

    def decompose(rows: np.ndarray) -> np.ndarray:
        ones = np.ones(rows.shape[0])
        xb = x[rows] if x is not None else np.empty((rows.shape[0], 0))
        med_design = np.column_stack([ones, d[rows], xb])
        out_design = np.column_stack([ones, d[rows], m[rows], xb])
        if binary_mediator:
            med_fit = logit_fit(med_design, m[rows], med_names,
                                cluster_ids=None if cluster_ids is None else cluster_ids[rows])
        else:
            med_fit = ols(med_design, m[rows], med_names,
                          cluster_ids=None if cluster_ids is None else cluster_ids[rows])
        out_fit = ols(out_design, y[rows], out_names,
                      cluster_ids=None if cluster_ids is None else cluster_ids[rows])
        _guard_dropped(med_fit, "mediator")
        _guard_dropped(out_fit, "outcome")

        theta_med = med_fit.params + z_med @ _draw_factor(med_fit.vcov).T
        theta_out = out_fit.params + z_out @ _draw_factor(out_fit.vcov).T
        if binary_mediator:
            # mean mediator gap per draw, averaged over the sample's controls
            base = np.column_stack([ones, np.zeros(rows.shape[0]), xb])
            eta0 = base @ theta_med.T
            gap = np.mean(special.expit(eta0 + theta_med[:, 1]) - special.expit(eta0), axis=0)
        else:
            gap = theta_med[:, 1]
        nde_draws = theta_out[:, 1]
        nie_draws = theta_out[:, 2] * gap
        nde = math.fsum(nde_draws) / n_draws
        nie = math.fsum(nie_draws) / n_draws
        return np.array([nde, nie, nde + nie])

    point = decompose(np.arange(n))
    blocks = cluster_ids if cluster_ids is not None else np.arange(n)
    boot = cluster_bootstrap(decompose, blocks, _EFFECT_NAMES, n_reps=n_reps, seed=seed)

    warning = None
    if n_draws < 100:
        warning = f"n_draws={n_draws} is noisy; summaries stabilize from a few hundred draws"
    return MediationResult(
        mediator=mediator_name,
        natural_direct_effect=float(point[0]),
        natural_indirect_effect=float(point[1]),
        total_effect=float(point[2]),
        nde_se=float(boot.se[0]),
        nie_se=float(boot.se[1]),
        total_se=float(boot.se[2]),
        nde_ci=(float(boot.ci_lower[0]), float(boot.ci_upper[0])),
        nie_ci=(float(boot.ci_lower[1]), float(boot.ci_upper[1])),
        total_ci=(float(boot.ci_lower[2]), float(boot.ci_upper[2])),
        n_obs=n,
        n_clusters=int(np.unique(blocks).shape[0]),
        n_draws=n_draws,
        n_reps=n_reps,
        n_failed_reps=boot.n_failed,
        mediator_model=model,
        precision_warning=warning,
    )
