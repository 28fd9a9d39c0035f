"""Hazard models on age spells.

Partial-likelihood fits with Efron or Breslow tie handling and delayed
entry, stratified baselines (mother or cause strata), instrumented hazards
that carry a first-stage Anscombe residual as a control function,
cause-stacked competing risks, survival curves with banded restricted
means, and e-value sensitivity bounds.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import (
    ConvergenceError,
    DataError,
    EstimationError,
    IdentificationError,
    SeparationError,
)
from .microdata import SpellTable
from .regress import FitResult, _as_codes, logit_fit

__all__ = [
    "TIES_METHODS",
    "AGE_CAP",
    "BaselineHazard",
    "CoxFit",
    "SurvivalCurve",
    "cox_fit",
    "stratified_cox",
    "partial_likelihood",
    "anscombe_residuals",
    "factor_dummies",
    "tsri_hazard",
    "competing_risks",
    "survival_and_expectancy",
    "e_value",
]

TIES_METHODS = ("efron", "breslow")
AGE_CAP = 100.0

_SCORE_TOL = 1e-8
_STEP_TOL = 1e-10
_MAX_ITER = 60
_MAX_HALVINGS = 40
# exp(15) as a hazard ratio is far outside anything estimable; a coefficient
# there means a monotone likelihood being chased, not an interior optimum.
# The score tolerance alone cannot tell: with one separating event the score
# dips under 1e-8 once the coefficient passes roughly log(n * 1e8).
_DIVERGENT_COEF = 15.0


@dataclass(frozen=True)
class BaselineHazard:
    """Breslow baseline for one stratum: cumulative-hazard increments at the
    stratum's event ages, plus the observation range they were fitted on."""

    stratum: int
    times: np.ndarray
    increments: np.ndarray
    entry_min: float
    exit_max: float


@dataclass(frozen=True)
class CoxFit:
    """A fitted proportional-hazards model.

    ``params`` are log hazard ratios; ``vcov`` is the cluster-robust
    score-residual sandwich (each spell its own cluster when no ids were
    given). ``inestimable`` lists requested effects that had to be dropped
    (competing-risk causes without events).
    """

    names: tuple[str, ...]
    params: np.ndarray
    vcov: np.ndarray
    log_likelihood: float
    ties: str
    n_obs: int
    n_events: int
    n_clusters: int
    n_strata: int
    n_informative_strata: int
    baseline: tuple[BaselineHazard, ...] = field(repr=False)
    first_stage: FitResult | None = field(default=None, repr=False)
    first_stage_kp_f: float | None = None
    inestimable: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not np.isfinite(self.log_likelihood):
            raise EstimationError("log partial likelihood is not finite")
        if not np.all(np.isfinite(self.params)):
            raise EstimationError("coefficients are not finite")

    @property
    def se(self) -> np.ndarray:
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

    def hazard_ratio(self, name: str) -> float:
        return float(np.exp(self.param(name)))

    def conf_int(self, name: str, level: float = 0.95) -> tuple[float, float]:
        z = special.ndtri(0.5 + level / 2.0)
        b, s = self.param(name), self.se_of(name)
        return (b - z * s, b + z * s)


@dataclass(frozen=True)
class SurvivalCurve:
    """Per-arm survival steps plus restricted means over age bands.

    ``ages`` holds the curve knots (the start age followed by the event
    ages); ``treated``/``untreated`` hold S just after each knot. Band
    integrals are exact for the step function; ``added`` is the treated
    minus untreated band integral and ``extrapolated`` flags bands that
    run past the last observed exit age.
    """

    ages: np.ndarray
    treated: np.ndarray
    untreated: np.ndarray
    start_age: float
    bands: tuple[tuple[float, float], ...]
    band_treated: tuple[float, ...]
    band_untreated: tuple[float, ...]
    added: tuple[float, ...]
    extrapolated: tuple[bool, ...]

    def __post_init__(self) -> None:
        for arm in (self.treated, self.untreated):
            if arm.shape != self.ages.shape:
                raise EstimationError("survival arrays must match the age knots")
            if np.any(arm > 1.0 + 1e-12) or np.any(arm < -1e-12):
                raise EstimationError("survival probabilities left [0, 1]")
            if np.any(np.diff(arm) > 1e-12):
                raise EstimationError("survival curve is not non-increasing")
        if abs(self.treated[0] - 1.0) > 1e-12 or abs(self.untreated[0] - 1.0) > 1e-12:
            raise EstimationError("survival must start at one")

    def added_total(self) -> float:
        return float(sum(self.added))


# ---------------------------------------------------------------------------
# Partial-likelihood core


def _suffix_sums(values: np.ndarray) -> np.ndarray:
    """out[k] = sum of values[k:], with a trailing zero row."""
    if values.ndim == 1:
        out = np.zeros(values.shape[0] + 1)
        out[:-1] = np.cumsum(values[::-1])[::-1]
        return out
    out = np.zeros((values.shape[0] + 1, values.shape[1]))
    out[:-1] = np.cumsum(values[::-1], axis=0)[::-1]
    return out


class _Stratum:
    """One stratum's rows, pre-sorted by (exit age, record id)."""

    def __init__(self, rows: np.ndarray, entry: np.ndarray, exit_: np.ndarray,
                 event: np.ndarray, x: np.ndarray, ids: np.ndarray) -> None:
        order = np.lexsort((ids[rows], exit_[rows]))
        self.rows = rows[order]
        self.entry = entry[self.rows]
        self.exit = exit_[self.rows]
        self.event = event[self.rows]
        self.x = x[self.rows]
        self.entry_order = np.argsort(self.entry, kind="stable")
        self.entry_sorted = self.entry[self.entry_order]
        self.death_rows = np.flatnonzero(self.event == 1)
        death_exits = self.exit[self.death_rows]
        self.times, first, counts = np.unique(
            death_exits, return_index=True, return_counts=True
        )
        self.d_counts = counts.astype(np.float64)
        self.death_slices = tuple(
            self.death_rows[a:a + c] for a, c in zip(first, counts)
        )
        self.n_events = int(self.death_rows.shape[0])
        self.informative = self.n_events > 0 and bool(np.ptp(self.x, axis=0).max() > 0.0)

    def stats(self, beta: np.ndarray, ties: str, level: int) -> dict:
        """Log partial likelihood pieces at ``beta``.

        level 0: ll only; 1: plus score and information; 2: plus the
        score residuals and the Breslow baseline increments.
        """
        x, entry, exit_ = self.x, self.entry, self.exit
        n, p = x.shape
        eta = x @ beta
        c = float(eta.max()) if n else 0.0
        w = np.exp(eta - c)
        wx = x * w[:, None]

        sufw_x = _suffix_sums(w)
        sufw_e = _suffix_sums(w[self.entry_order])
        posx = np.searchsorted(exit_, self.times, side="left")
        pose = np.searchsorted(self.entry_sorted, self.times, side="left")
        big_w = sufw_x[posx] - sufw_e[pose]

        d = self.d_counts
        dr = self.death_rows
        ll = float((eta[dr] - c).sum() - np.sum(d * np.log(big_w)))
        out = {"ll": ll}
        tied = np.flatnonzero(d > 1)
        use_efron = ties == "efron" and tied.size > 0

        if level == 0 and not use_efron:
            return out
        sufwx_x = _suffix_sums(wx)
        sufwx_e = _suffix_sums(wx[self.entry_order])
        big_s = sufwx_x[posx] - sufwx_e[pose]
        xbar = big_s / big_w[:, None]

        if level >= 1:
            d_over_w = d / big_w
            pa = np.concatenate([[0.0], np.cumsum(d_over_w)])
            ra_exit = np.searchsorted(self.times, exit_, side="right")
            ra_entry = np.searchsorted(self.times, entry, side="right")
            big_a = pa[ra_exit] - pa[ra_entry]
            score = x[dr].sum(axis=0) - (xbar * d[:, None]).sum(axis=0)
            info = (x * (w * big_a)[:, None]).T @ x - (xbar * d[:, None]).T @ xbar
            out["score"] = score
            out["info"] = info

        if level >= 2:
            abar = d / big_w
            bbar = xbar * abar[:, None]
            dn = np.zeros((n, p))
            jidx = np.searchsorted(self.times, exit_[dr])
            np.add.at(dn, dr, x[dr] - xbar[jidx])

        if use_efron:
            for j in tied:
                t = self.times[j]
                dj = int(d[j])
                drows = self.death_slices[j]
                v_d = float(w[drows].sum())
                t_d = wx[drows].sum(axis=0)
                fl = np.arange(dj) / dj
                wl = big_w[j] - fl * v_d
                sl = big_s[j][None, :] - fl[:, None] * t_d[None, :]
                xl = sl / wl[:, None]
                out["ll"] += float(dj * np.log(big_w[j]) - np.log(wl).sum())
                if level >= 1:
                    at = (entry < t) & (exit_ >= t)
                    big_q = wx[at].T @ x[at]
                    p_d = wx[drows].T @ x[drows]
                    out["score"] += dj * xbar[j] - xl.sum(axis=0)
                    corr = -dj * (big_q / big_w[j] - np.outer(xbar[j], xbar[j]))
                    for k in range(dj):
                        ql = big_q - fl[k] * p_d
                        corr += ql / wl[k] - np.outer(xl[k], xl[k])
                    out["info"] += corr
                if level >= 2:
                    abar[j] = float(np.sum(1.0 / wl))
                    bbar[j] = (sl / (wl ** 2)[:, None]).sum(axis=0)
                    dn[drows] = x[drows] - xl.mean(axis=0)[None, :]
                    a_tilde = float(np.sum(fl / wl))
                    b_tilde = (sl * (fl / wl ** 2)[:, None]).sum(axis=0)
                    dn[drows] += wx[drows] * a_tilde - np.outer(w[drows], b_tilde)

        if level >= 2:
            pa2 = np.concatenate([[0.0], np.cumsum(abar)])
            pb2 = np.vstack([np.zeros(p), np.cumsum(bbar, axis=0)])
            ra_exit = np.searchsorted(self.times, exit_, side="right")
            ra_entry = np.searchsorted(self.times, entry, side="right")
            a_i = pa2[ra_exit] - pa2[ra_entry]
            b_i = pb2[ra_exit] - pb2[ra_entry]
            sres = dn - (x * (w * a_i)[:, None] - w[:, None] * b_i)
            out["sres"] = sres
            out["baseline_increments"] = d / (big_w * np.exp(c))
        return out


def _cox_engine(
    spells: SpellTable,
    covariates: np.ndarray,
    names: Sequence[str],
    strata_labels: np.ndarray | None,
    cluster_ids: np.ndarray | None,
    ties: str,
) -> CoxFit:
    if ties not in TIES_METHODS:
        raise ValueError(f"ties must be one of {TIES_METHODS}, got {ties!r}")
    x = np.asarray(covariates, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = spells.n_rows
    if x.shape[0] != n:
        raise DataError("covariate rows do not match the spell table")
    if x.shape[1] != len(names):
        raise DataError("covariate names do not match the covariate columns")
    if x.shape[1] == 0:
        raise ValueError("at least one covariate is required")
    if not np.all(np.isfinite(x)):
        raise DataError("covariates must be finite")
    if not np.any(spells.event == 1):
        raise IdentificationError("no events; the partial likelihood is empty")

    entry = np.asarray(spells.entry_age, dtype=np.float64)
    exit_ = np.asarray(spells.exit_age, dtype=np.float64)
    event = np.asarray(spells.event, dtype=np.int64)
    ids = np.asarray(spells.record_ids, dtype=np.int64)

    if strata_labels is None:
        codes = np.zeros(n, dtype=np.intp)
        n_strata = 1
    else:
        codes = _as_codes(np.asarray(strata_labels))
        n_strata = int(codes.max()) + 1

    strata = [
        _Stratum(np.flatnonzero(codes == s), entry, exit_, event, x, ids)
        for s in range(n_strata)
    ]
    informative = [st for st in strata if st.informative]
    if not informative:
        raise IdentificationError(
            "no stratum has both an event and covariate variation"
        )
    n_events = sum(st.n_events for st in informative)
    p = x.shape[1]

    def passes(beta: np.ndarray, level: int) -> dict:
        total = {"ll": 0.0}
        if level >= 1:
            total["score"] = np.zeros(p)
            total["info"] = np.zeros((p, p))
        for st in informative:
            parts = st.stats(beta, ties, level)
            total["ll"] += parts["ll"]
            if level >= 1:
                total["score"] += parts["score"]
                total["info"] += parts["info"]
        if level >= 1:
            # A covariate constant within every risk set zeroes an information
            # eigenvalue up to rounding, so exact-singularity checks miss it.
            evals = np.linalg.eigvalsh(total["info"])
            if evals[0] <= max(evals[-1], 0.0) * 1e-10:
                raise IdentificationError(
                    "singular information matrix; a covariate is constant within risk sets"
                )
        return total

    beta = np.zeros(p)
    current = passes(beta, 1)
    converged = False
    for _ in range(_MAX_ITER):
        if np.max(np.abs(current["score"])) < _SCORE_TOL:
            converged = True
            break
        step = np.linalg.solve(current["info"], current["score"])
        if np.max(np.abs(step)) < _STEP_TOL * max(1.0, float(np.max(np.abs(beta)))):
            # the parameters have stopped moving at machine precision; the
            # score tolerance cannot bind below the likelihood's granularity
            converged = True
            break
        # acceptance slack scales with |ll|: near the optimum a full step
        # changes the log likelihood by less than its representation spacing
        slack = 1e-10 * max(1.0, abs(current["ll"]))
        lam = 1.0
        for _ in range(_MAX_HALVINGS):
            cand = beta + lam * step
            if passes(cand, 0)["ll"] >= current["ll"] - slack:
                break
            lam *= 0.5
        else:
            raise ConvergenceError("step halving could not improve the partial likelihood")
        beta = cand
        if np.max(np.abs(beta)) > _DIVERGENT_COEF:
            raise SeparationError(
                "monotone partial likelihood; a covariate separates events from the risk sets"
            )
        current = passes(beta, 1)
    if not converged:
        raise ConvergenceError(f"Newton did not converge in {_MAX_ITER} iterations")
    if np.max(np.abs(beta)) > _DIVERGENT_COEF:
        raise SeparationError(
            "monotone partial likelihood; a covariate separates events from the risk sets"
        )

    sres = np.zeros((n, p))
    baselines = []
    for st in informative:
        parts = st.stats(beta, ties, 2)
        sres[st.rows] = parts["sres"]
        baselines.append(
            BaselineHazard(
                stratum=int(codes[st.rows[0]]),
                times=st.times.copy(),
                increments=parts["baseline_increments"],
                entry_min=float(st.entry.min()),
                exit_max=float(st.exit.max()),
            )
        )

    if cluster_ids is None:
        grouped = sres
        n_clusters = n
    else:
        ccodes = _as_codes(np.asarray(cluster_ids))
        n_clusters = int(ccodes.max()) + 1
        grouped = np.zeros((n_clusters, p))
        np.add.at(grouped, ccodes, sres)
    try:
        i_inv = np.linalg.inv(current["info"])
    except np.linalg.LinAlgError:
        raise IdentificationError("information matrix is singular at the optimum") from None
    vcov = i_inv @ (grouped.T @ grouped) @ i_inv

    return CoxFit(
        names=tuple(names),
        params=beta,
        vcov=vcov,
        log_likelihood=current["ll"],
        ties=ties,
        n_obs=n,
        n_events=n_events,
        n_clusters=n_clusters,
        n_strata=n_strata,
        n_informative_strata=len(informative),
        baseline=tuple(baselines),
    )


def cox_fit(
    spells: SpellTable,
    covariates: np.ndarray,
    names: Sequence[str],
    cluster_ids: np.ndarray | None = None,
    ties: str = "efron",
) -> CoxFit:
    """Proportional-hazards fit on age spells with delayed entry.

    Newton-Raphson with step halving on the log partial likelihood,
    converged when the score's largest entry falls below 1e-8 or the step
    below 1e-10 (large samples push the likelihood's granularity above what
    an absolute score tolerance alone can resolve). Risk sets are
    accumulated deterministically (spells sorted by exit age, record id as
    tiebreak). The default Efron tie correction matches Breslow exactly on
    tie-free data.
    """
    return _cox_engine(spells, covariates, names, None, cluster_ids, ties)


def stratified_cox(
    spells: SpellTable,
    covariates: np.ndarray,
    names: Sequence[str],
    strata: np.ndarray,
    cluster_ids: np.ndarray | None = None,
    ties: str = "efron",
) -> CoxFit:
    """Cox fit with one free baseline hazard per stratum.

    The partial likelihood multiplies across strata, so stratum-constant
    confounders are absorbed the way mother fixed effects are in the linear
    models. Strata without events or without covariate variation contribute
    nothing; their count is ``n_strata - n_informative_strata``.
    """
    strata = np.asarray(strata)
    if strata.shape[0] != spells.n_rows:
        raise DataError("strata labels do not match the spell table")
    return _cox_engine(spells, covariates, names, strata, cluster_ids, ties)


def partial_likelihood(
    spells: SpellTable,
    covariates: np.ndarray,
    beta: np.ndarray,
    ties: str = "efron",
    strata: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Log partial likelihood and analytic score at an arbitrary ``beta``."""
    if ties not in TIES_METHODS:
        raise ValueError(f"ties must be one of {TIES_METHODS}, got {ties!r}")
    x = np.asarray(covariates, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    beta = np.asarray(beta, dtype=np.float64)
    entry = np.asarray(spells.entry_age, dtype=np.float64)
    exit_ = np.asarray(spells.exit_age, dtype=np.float64)
    event = np.asarray(spells.event, dtype=np.int64)
    ids = np.asarray(spells.record_ids, dtype=np.int64)
    codes = (
        np.zeros(spells.n_rows, dtype=np.intp)
        if strata is None
        else _as_codes(np.asarray(strata))
    )
    ll = 0.0
    score = np.zeros(x.shape[1])
    for s in range(int(codes.max()) + 1):
        st = _Stratum(np.flatnonzero(codes == s), entry, exit_, event, x, ids)
        if not st.informative:
            continue
        parts = st.stats(beta, ties, 1)
        ll += parts["ll"]
        score += parts["score"]
    return ll, score


# ---------------------------------------------------------------------------
# Anscombe residuals and instrumented hazards


_ANSCOMBE_NORM = float(special.beta(2.0 / 3.0, 2.0 / 3.0))


def anscombe_residuals(outcome: np.ndarray, fitted_probs: np.ndarray) -> np.ndarray:
    """Anscombe residuals for a binary outcome against fitted probabilities.

    r = [A(y) - A(p)] / [p(1-p)]^(1/6) with A the unnormalized incomplete
    beta function of parameters (2/3, 2/3); the residual's sign matches
    y - p and its distribution is close to normal, which is what makes it a
    usable control-function term inside a hazard model.
    """
    y = np.asarray(outcome, dtype=np.float64).ravel()
    p = np.asarray(fitted_probs, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise DataError("outcome and fitted probabilities differ in length")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("outcome must be binary")
    if np.any(p <= 0.0) or np.any(p >= 1.0) or not np.all(np.isfinite(p)):
        raise ValueError("fitted probabilities must lie strictly inside (0, 1)")
    a_y = np.where(y == 1.0, _ANSCOMBE_NORM, 0.0)
    a_p = special.betainc(2.0 / 3.0, 2.0 / 3.0, p) * _ANSCOMBE_NORM
    return (a_y - a_p) / (p * (1.0 - p)) ** (1.0 / 6.0)


def factor_dummies(
    codes: np.ndarray,
    prefix: str,
    drop_first: bool = True,
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Indicator columns for a factor, one per level.

    ``drop_first`` leaves the lowest level as the reference, which is what a
    hazard model needs: the partial likelihood is invariant to adding a
    constant to every linear predictor, so a full indicator set is never
    identified.
    """
    codes = np.asarray(codes)
    levels = np.unique(codes)
    kept = levels[1:] if drop_first else levels
    cols = (codes[:, None] == kept[None, :]).astype(np.float64)
    names = tuple(f"{prefix}_{level}" for level in kept)
    return cols, names


def _assemble_covariates(
    n: int,
    covariates: np.ndarray | None,
    covariate_names: Sequence[str],
    fe_factors: Mapping[str, np.ndarray] | None,
) -> tuple[np.ndarray, tuple[str, ...]]:
    blocks: list[np.ndarray] = []
    names: list[str] = []
    if covariates is not None:
        x = np.asarray(covariates, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != n:
            raise DataError("covariate rows do not match the spell table")
        if x.shape[1] != len(covariate_names):
            raise DataError("covariate names do not match the covariate columns")
        blocks.append(x)
        names.extend(covariate_names)
    elif covariate_names:
        raise DataError("covariate names given without covariates")
    if fe_factors:
        for fname, codes in fe_factors.items():
            codes = np.asarray(codes)
            if codes.shape[0] != n:
                raise DataError(f"factor {fname!r} does not match the spell table")
            cols, dnames = factor_dummies(codes, fname, drop_first=True)
            if cols.shape[1]:
                blocks.append(cols)
                names.extend(dnames)
    if blocks:
        return np.column_stack(blocks), tuple(names)
    return np.empty((n, 0)), ()


def _first_stage(
    treatment: np.ndarray,
    instrument: np.ndarray,
    extra: np.ndarray,
    extra_names: tuple[str, ...],
    cluster_ids: np.ndarray | None,
) -> tuple[FitResult, float, np.ndarray]:
    design = np.column_stack([np.ones(treatment.shape[0]), instrument, extra])
    names = ("const", "instrument", *extra_names)
    fit = logit_fit(design, treatment, names, cluster_ids=cluster_ids)
    if "instrument" not in fit.names:
        raise IdentificationError("the instrument was dropped from the first stage")
    kp_f = fit.tstat("instrument") ** 2
    probs = special.expit(fit.fitted)
    resid = anscombe_residuals(treatment, probs)
    return fit, float(kp_f), resid


def tsri_hazard(
    spells: SpellTable,
    treatment: np.ndarray,
    instrument: np.ndarray,
    covariates: np.ndarray | None = None,
    covariate_names: Sequence[str] = (),
    fe_factors: Mapping[str, np.ndarray] | None = None,
    cluster_ids: np.ndarray | None = None,
    ties: str = "efron",
) -> CoxFit:
    """Two-stage residual-inclusion hazard fit.

    Stage one is a logit of the treatment on the instrument plus controls;
    stage two is a Cox fit that adds the stage-one Anscombe residual as the
    ``first_stage_residual`` covariate, whose coefficient doubles as an
    endogeneity diagnostic. Fixed effects enter both stages as indicator
    columns (a hazard model has no intercept to absorb them into). The
    first-stage fit and its cluster-robust Wald F on the instrument ride
    along on the result.
    """
    treatment = np.asarray(treatment, dtype=np.float64).ravel()
    if instrument is None:
        raise DataError("tsri_hazard needs an instrument column")
    instrument = np.asarray(instrument, dtype=np.float64).ravel()
    n = spells.n_rows
    if treatment.shape[0] != n or instrument.shape[0] != n:
        raise DataError("treatment and instrument must match the spell table")
    extra, extra_names = _assemble_covariates(n, covariates, covariate_names, fe_factors)
    stage1, kp_f, resid = _first_stage(treatment, instrument, extra, extra_names, cluster_ids)
    design = np.column_stack([treatment, extra, resid])
    names = ("treated", *extra_names, "first_stage_residual")
    fit = _cox_engine(spells, design, names, None, cluster_ids, ties)
    return _with_first_stage(fit, stage1, kp_f)


def _with_first_stage(fit: CoxFit, stage1: FitResult, kp_f: float) -> CoxFit:
    return CoxFit(
        names=fit.names,
        params=fit.params,
        vcov=fit.vcov,
        log_likelihood=fit.log_likelihood,
        ties=fit.ties,
        n_obs=fit.n_obs,
        n_events=fit.n_events,
        n_clusters=fit.n_clusters,
        n_strata=fit.n_strata,
        n_informative_strata=fit.n_informative_strata,
        baseline=fit.baseline,
        first_stage=stage1,
        first_stage_kp_f=kp_f,
        inestimable=fit.inestimable,
    )


def competing_risks(
    spells: SpellTable,
    treatment: np.ndarray,
    instrument: np.ndarray,
    covariates: np.ndarray | None = None,
    covariate_names: Sequence[str] = (),
    fe_factors: Mapping[str, np.ndarray] | None = None,
    cluster_ids: np.ndarray | None = None,
    ties: str = "efron",
) -> CoxFit:
    """Cause-specific hazards on a cause-stacked spell table.

    The baseline hazard is stratified by cause and the treatment enters
    through one interaction per cause (``treated_x_<cause>``), so each
    cause gets its own effect while shared covariates keep a common
    coefficient. The first stage is fitted once per subject (the first row
    of each stacked block) and its Anscombe residual is repeated on every
    cause row. Causes without a single event are reported in
    ``inestimable`` instead of getting a coefficient.
    """
    if spells.cause_code is None or spells.cause is None:
        raise DataError("competing_risks expects cause-stacked spells")
    treatment = np.asarray(treatment, dtype=np.float64).ravel()
    instrument = np.asarray(instrument, dtype=np.float64).ravel()
    n = spells.n_rows
    if treatment.shape[0] != n or instrument.shape[0] != n:
        raise DataError("treatment and instrument must match the spell table")
    extra, extra_names = _assemble_covariates(n, covariates, covariate_names, fe_factors)

    ids = spells.record_ids
    _, first_pos = np.unique(ids, return_index=True)
    first_pos = np.sort(first_pos)
    sub_cluster = None if cluster_ids is None else np.asarray(cluster_ids)[first_pos]
    stage1, kp_f, sub_resid = _first_stage(
        treatment[first_pos], instrument[first_pos], extra[first_pos], extra_names, sub_cluster
    )
    ids_first = ids[first_pos]
    order = np.argsort(ids_first)
    pos = np.searchsorted(ids_first[order], ids)
    resid = sub_resid[order[pos]]

    codes = spells.cause_code
    labels = spells.cause
    inter_cols: list[np.ndarray] = []
    inter_names: list[str] = []
    flagged: list[str] = []
    for code, label in enumerate(labels):
        n_ev = int(np.sum((codes == code) & (spells.event == 1)))
        if n_ev == 0:
            flagged.append(label)
            continue
        inter_cols.append(treatment * (codes == code))
        inter_names.append(f"treated_x_{label}")
    if not inter_cols:
        raise IdentificationError("no cause has any events")

    design = np.column_stack([*inter_cols, extra, resid])
    names = (*inter_names, *extra_names, "first_stage_residual")
    fit = _cox_engine(spells, design, names, codes, cluster_ids, ties)
    fit = _with_first_stage(fit, stage1, kp_f)
    if flagged:
        fit = CoxFit(
            names=fit.names, params=fit.params, vcov=fit.vcov,
            log_likelihood=fit.log_likelihood, ties=fit.ties, n_obs=fit.n_obs,
            n_events=fit.n_events, n_clusters=fit.n_clusters,
            n_strata=fit.n_strata, n_informative_strata=fit.n_informative_strata,
            baseline=fit.baseline, first_stage=fit.first_stage,
            first_stage_kp_f=fit.first_stage_kp_f, inestimable=tuple(flagged),
        )
    return fit


# ---------------------------------------------------------------------------
# Survival curves, banded life expectancy, e-values


def _profile_risk(fit: CoxFit, profile: Mapping[str, float]) -> float:
    unknown = set(profile) - set(fit.names)
    if unknown:
        raise ValueError(f"profile names not in the fit: {sorted(unknown)}")
    xb = sum(fit.param(name) * float(value) for name, value in profile.items())
    return float(np.exp(xb))


def _band_integral(
    times: np.ndarray,
    cum_hazard: np.ndarray,
    risk: float,
    lo: float,
    hi: float,
) -> float:
    """Exact integral of the survival step function over [lo, hi]."""
    if hi <= lo:
        return 0.0
    inside = (times > lo) & (times < hi)
    pts = times[inside]
    bounds = np.concatenate([[lo], pts, [hi]])
    # cumulative hazard in force on each segment [bounds[k], bounds[k+1])
    idx = np.searchsorted(times, bounds[:-1], side="right")
    h_seg = np.concatenate([[0.0], cum_hazard])[idx]
    s_seg = np.exp(-risk * h_seg)
    return float(np.sum(np.diff(bounds) * s_seg))


def survival_and_expectancy(
    fit: CoxFit,
    profile_treated: Mapping[str, float],
    profile_untreated: Mapping[str, float],
    bands: Sequence[tuple[float, float]],
    stratum: int | None = None,
    age_grid: np.ndarray | None = None,
) -> SurvivalCurve:
    """Survival curves per arm plus restricted mean lifetime over age bands.

    The baseline cumulative hazard is the Breslow estimator from the fit;
    each arm's curve is S0 raised to exp(x beta) at its profile. Band
    integrals are exact step-function integrals, capped at age 100; a band
    running outside the observed entry-exit range is flagged
    ``extrapolated`` (the curve is flat there by construction, not by
    evidence). ``age_grid`` only changes the ages the curve is reported
    at, never the integrals.
    """
    if len(fit.baseline) == 0:
        raise EstimationError("fit carries no baseline hazard")
    if stratum is None:
        if len(fit.baseline) > 1:
            raise ValueError(
                "fit has several strata; pass the stratum whose baseline to use"
            )
        base = fit.baseline[0]
    else:
        matches = [b for b in fit.baseline if b.stratum == stratum]
        if not matches:
            raise ValueError(f"no baseline for stratum {stratum!r}")
        base = matches[0]

    risk_t = _profile_risk(fit, profile_treated)
    risk_u = _profile_risk(fit, profile_untreated)
    cum = np.cumsum(base.increments)
    if age_grid is None:
        ages = np.concatenate([[base.entry_min], base.times])
        h_at = np.concatenate([[0.0], cum])
    else:
        grid = np.asarray(age_grid, dtype=np.float64).ravel()
        if grid.size == 0 or not np.all(np.isfinite(grid)):
            raise ValueError("age grid must hold finite ages")
        grid = np.unique(grid)
        ages = np.concatenate([[base.entry_min], grid[grid > base.entry_min]])
        idx = np.searchsorted(base.times, ages, side="right")
        h_at = np.concatenate([[0.0], cum])[idx]
    s_t = np.exp(-risk_t * h_at)
    s_u = np.exp(-risk_u * h_at)

    band_t: list[float] = []
    band_u: list[float] = []
    added: list[float] = []
    extrapolated: list[bool] = []
    for lo, hi in bands:
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
            raise ValueError(f"band ({lo}, {hi}) is not a valid age interval")
        hi_c = min(float(hi), AGE_CAP)
        bt = _band_integral(base.times, cum, risk_t, float(lo), hi_c)
        bu = _band_integral(base.times, cum, risk_u, float(lo), hi_c)
        band_t.append(bt)
        band_u.append(bu)
        added.append(bt - bu)
        extrapolated.append(hi_c > base.exit_max or float(lo) < base.entry_min)

    return SurvivalCurve(
        ages=ages,
        treated=s_t,
        untreated=s_u,
        start_age=float(base.entry_min),
        bands=tuple((float(lo), float(hi)) for lo, hi in bands),
        band_treated=tuple(band_t),
        band_untreated=tuple(band_u),
        added=tuple(added),
        extrapolated=tuple(extrapolated),
    )


def e_value(hazard_ratio: float, ci_bound: float | None = None) -> tuple[float, float | None]:
    """Minimum confounder strength that could nullify a hazard ratio.

    Protective ratios are inverted (RR* = 1/HR for HR < 1), then
    E = RR* + sqrt(RR* (RR* - 1)); the same transform applies to the
    confidence bound nearer the null, except that a bound on the far side
    of one (the interval covers the null) maps to exactly 1.
    """
    hr = float(hazard_ratio)
    if not np.isfinite(hr) or hr <= 0.0:
        raise ValueError(f"hazard ratio must be positive, got {hazard_ratio!r}")

    def transform(r: float) -> float:
        rr = 1.0 / r if r < 1.0 else r
        if rr == 1.0:
            return 1.0
        return rr + float(np.sqrt(rr * (rr - 1.0)))

    ev = transform(hr)
    if ci_bound is None:
        return ev, None
    cb = float(ci_bound)
    if not np.isfinite(cb) or cb <= 0.0:
        raise ValueError(f"confidence bound must be positive, got {ci_bound!r}")
    crosses = (hr < 1.0 <= cb) or (hr > 1.0 >= cb) or hr == 1.0
    return ev, 1.0 if crosses else transform(cb)
