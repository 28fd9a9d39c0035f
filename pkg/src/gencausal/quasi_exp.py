"""Linear identification strategies for the vaccination reform design.

The estimators in this module share one data contract: an
:class:`~gencausal.microdata.AnalysisSample` whose fixed-effect factors and
control columns were chosen at construction time. Each estimator absorbs the
sample's factors, runs least squares on what remains, and reports
cluster-robust standard errors on the sample's cluster ids (parish of birth,
or the ancestor's parish on stacked samples).

Covered designs:

* sibling comparisons through mother fixed effects,
* difference-in-differences on pre-reform assistance intensity, with the
  per-cohort event-study version and a joint parallel-trends test,
* two-stage least squares on the personnel-expansion exposure, with
  first-stage and reduced-form fits, a robust first-stage F, and an
  Anderson-Rubin statistic inverted into a confidence interval,
* the stacked per-ancestor variant for descendant outcomes,
* a two-step selection correction that models inclusion with a probit and
  feeds the inverse Mills ratio back in as a control,
* indirect least squares, placebo leads of the exposure, and
  cointervention interactions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import DataError, IdentificationError
from .microdata import (
    CONTROL_SETS,
    POST_START,
    AnalysisSample,
    DidIntensity,
    IndividualRecord,
    InstrumentTable,
    PanelContext,
)
from .regress import (
    FitResult,
    _as_codes,
    _cluster_score_sums,
    absorb_fe,
    inverse_mills,
    ols,
    probit_fit,
)

REFERENCE_COHORTS = (1790, 1800)
WEAK_INSTRUMENT_F = 1e-6
AR_GRID_POINTS = 401
AR_GRID_HALF_WIDTH = 10.0


# ---------------------------------------------------------------------------
# Result types


@dataclass(frozen=True)
class IvDiagnostics:
    """First-stage and weak-instrument diagnostics for one 2SLS fit.

    ``kp_f`` is the cluster-robust Wald F on the excluded instrument in the
    first stage, which in the just-identified single-instrument case equals
    the Kleibergen-Paap rk Wald F. ``ar_stat`` is the Anderson-Rubin
    statistic at the null of a zero structural effect and ``ar_ci`` its
    grid-inverted confidence set (NaNs when no grid point is accepted).
    """

    kp_f: float
    ar_stat: float
    ar_pvalue: float
    first_stage: FitResult
    reduced_form: FitResult
    ar_ci: tuple[float, float]
    weak_instrument: bool


@dataclass(frozen=True)
class EventStudyResult:
    """Per-cohort intensity interactions around the reform.

    ``cohorts`` lists the interacted cohorts in ascending order; the two
    ``references`` are omitted categories whose coefficients are identically
    zero. The joint test is a Wald test of all pre-reform coefficients
    against zero, referred to an F distribution with ``n_clusters - 1``
    denominator degrees of freedom.
    """

    cohorts: tuple[int, ...]
    coefficients: np.ndarray
    ses: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    references: tuple[int, int]
    joint_pre_stat: float
    joint_pre_df: tuple[int, int]
    joint_pre_pvalue: float
    fit: FitResult = field(repr=False)

    def coefficient(self, cohort: int) -> float:
        if cohort in self.references:
            return 0.0
        return float(self.coefficients[self.cohorts.index(cohort)])

    def se(self, cohort: int) -> float:
        if cohort in self.references:
            return 0.0
        return float(self.ses[self.cohorts.index(cohort)])


@dataclass(frozen=True)
class LeadCoefficients:
    """Reduced-form coefficients on forward-shifted exposure.

    Lead 0 is the reduced form itself; lead k regresses the outcome on the
    exposure the parish will receive k cohorts later, holding the current
    exposure fixed, so nonzero coefficients indicate anticipation or a
    violated exclusion restriction.
    """

    leads: tuple[int, ...]
    coefficients: np.ndarray
    ses: np.ndarray
    n_obs: tuple[int, ...]
    fits: tuple[FitResult, ...] = field(repr=False)

    def coefficient(self, lead: int) -> float:
        return float(self.coefficients[self.leads.index(lead)])

    def se(self, lead: int) -> float:
        return float(self.ses[self.leads.index(lead)])


@dataclass(frozen=True)
class SelectionFrame:
    """Inclusion predictors for everyone at risk of entering a sample.

    Rows cover the full generation, selected or not, so the inclusion probit
    sees both outcomes. Predictor columns are observed pre-selection (prices
    at birth, month of birth), never the outcome itself.
    """

    record_ids: np.ndarray
    predictors: np.ndarray
    predictor_names: tuple[str, ...]
    cohort: np.ndarray
    cluster_ids: np.ndarray

    def __post_init__(self) -> None:
        m = self.record_ids.shape[0]
        if m == 0:
            raise DataError("selection frame has no rows")
        if self.predictors.shape != (m, len(self.predictor_names)):
            raise DataError("selection predictors do not match their names")
        if not np.all(np.isfinite(self.predictors)):
            raise DataError("selection predictors contain non-finite values")


# ---------------------------------------------------------------------------
# Shared plumbing


def _check_requested_controls(sample: AnalysisSample, controls: str | None) -> None:
    if controls is None:
        return
    if controls not in CONTROL_SETS:
        raise ValueError(f"unknown control set {controls!r}; expected one of {CONTROL_SETS}")
    if controls != sample.control_set:
        raise ValueError(
            f"sample was built with control set {sample.control_set!r}; "
            f"rebuild it to estimate under {controls!r}"
        )


def _refines(fine: np.ndarray, coarse: np.ndarray) -> bool:
    """True when every level of ``fine`` maps into a single ``coarse`` level."""
    order = np.argsort(fine, kind="stable")
    f, c = fine[order], coarse[order]
    starts = np.r_[True, f[1:] != f[:-1]]
    group = np.cumsum(starts) - 1
    lo = np.full(group[-1] + 1, np.iinfo(np.int64).max, dtype=np.int64)
    hi = np.full(group[-1] + 1, np.iinfo(np.int64).min, dtype=np.int64)
    np.minimum.at(lo, group, c)
    np.maximum.at(hi, group, c)
    return bool(np.all(lo == hi))


def _n_components(a: np.ndarray, b: np.ndarray) -> int:
    """Connected components of the bipartite graph linking levels of a and b."""
    na = int(a.max()) + 1
    parent = np.arange(na + int(b.max()) + 1)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    pairs = np.unique(a.astype(np.int64) * (int(b.max()) + 1) + b)
    for key in pairs:
        i, j = find(int(key) // (int(b.max()) + 1)), find(na + int(key) % (int(b.max()) + 1))
        if i != j:
            parent[j] = i
    roots = {find(int(v)) for v in np.unique(a)}
    roots |= {find(na + int(v)) for v in np.unique(b)}
    return len(roots)


def _absorbed_df(factors: Sequence[np.ndarray]) -> int:
    """Rank of the dummy span the absorbed factors would have consumed.

    Factors whose span lies inside a finer factor's span are dropped first
    (cohort inside region-by-cohort, parish inside mother), which reduces
    every control set used here to at most two factors, where the
    levels-minus-components count is exact.
    """
    codes = [_as_codes(f) for f in factors]
    keep: list[int] = []
    for i, ci in enumerate(codes):
        redundant = False
        for j, cj in enumerate(codes):
            if i == j:
                continue
            if _refines(cj, ci) and not (_refines(ci, cj) and j > i):
                redundant = True
                break
        if not redundant:
            keep.append(i)
    df = int(codes[keep[0]].max()) + 1
    for g in keep[1:]:
        df += int(codes[g].max()) + 1 - _n_components(codes[keep[0]], codes[g])
    return df


def _fit_absorbed(
    sample: AnalysisSample,
    key_cols: Sequence[np.ndarray],
    key_names: Sequence[str],
    factor_names: Sequence[str],
    outcome: np.ndarray | None = None,
) -> FitResult:
    """Absorb the named factors and regress the outcome on keys + controls."""
    y = sample.outcome if outcome is None else outcome
    cols = [np.asarray(c, dtype=np.float64) for c in key_cols]
    names = list(key_names)
    if sample.controls.shape[1]:
        cols.append(sample.controls)
        names.extend(sample.control_names)
    design = np.column_stack(cols)
    factors = [sample.factor(n) for n in factor_names]
    df_absorbed = 0
    if factors:
        design, y = absorb_fe(design, y, factors)
        df_absorbed = _absorbed_df(factors)
    return ols(design, y, names, cluster_ids=sample.cluster_ids, df_absorbed=df_absorbed)


# ---------------------------------------------------------------------------
# Sibling comparisons


def mother_fe(sample: AnalysisSample, controls: str | None = None) -> FitResult:
    """Treatment effect identified from siblings of the same mother.

    Absorbs a mother fixed effect on top of whatever factors the sample was
    built with, so only mothers whose children differ in treatment status
    move the coefficient; everyone else is differenced out.

    Parameters
    ----------
    sample : AnalysisSample
    controls : str, optional
        When given, must equal the control set the sample was built with;
        this is a guard against mixing up prepared samples, not a switch.

    Raises
    ------
    IdentificationError
        If no mother has within-family variation in treatment.
    """
    _check_requested_controls(sample, controls)
    d = sample.treatment.astype(np.float64)
    codes = _as_codes(sample.mother_ids)
    lo = np.full(int(codes.max()) + 1, np.inf)
    hi = np.full(int(codes.max()) + 1, -np.inf)
    np.minimum.at(lo, codes, d)
    np.maximum.at(hi, codes, d)
    if not np.any(hi > lo):
        raise IdentificationError(
            "no mother has within-family variation in treatment; "
            "the mother fixed effect absorbs everything"
        )
    factor_names = ("mother",) + tuple(f for f in sample.fe_factors if f != "mother")
    return _fit_absorbed(sample, [d], ["treated"], factor_names)


# ---------------------------------------------------------------------------
# Difference-in-differences and event study


def _check_did_frame(sample: AnalysisSample, intensity: DidIntensity) -> None:
    post = sample.cohort >= POST_START
    if not post.any() or post.all():
        raise IdentificationError("need cohorts on both sides of the reform year")
    if not {"parish", "cohort"} <= set(sample.fe_factors):
        raise IdentificationError(
            "this design needs parish and cohort fixed effects; "
            "build the sample with the baseline or full control set"
        )
    missing = {int(p) for p in np.unique(sample.parish)} - set(intensity.by_parish)
    if missing:
        raise DataError(f"intensity is missing parishes {sorted(missing)[:5]}")
    levels = [intensity.by_parish[int(p)] for p in np.unique(sample.parish)]
    if np.ptp(levels) == 0.0:
        raise IdentificationError(
            "intensity is constant across the sample's parishes; "
            "the interaction is collinear with the cohort effects"
        )


def did(
    sample: AnalysisSample,
    intensity: DidIntensity,
    controls: str | None = None,
) -> FitResult:
    """Difference-in-differences on pre-reform assistance intensity.

    The regressor is ``post x intensity``: the parish's pre-reform personnel
    level (scaled by the cross-parish interquartile range) switched on for
    cohorts born after the reform. Parish and cohort effects come from the
    sample's absorbed factors.
    """
    _check_requested_controls(sample, controls)
    _check_did_frame(sample, intensity)
    regressor = intensity.regressor(sample.parish, sample.cohort)
    return _fit_absorbed(sample, [regressor], ["post_x_intensity"], sample.fe_factors)


def event_study(
    sample: AnalysisSample,
    intensity: DidIntensity,
    controls: str | None = None,
    references: tuple[int, int] = REFERENCE_COHORTS,
) -> EventStudyResult:
    """Per-cohort intensity interactions with a joint pre-reform test.

    Interacts the parish intensity with every cohort except the two
    reference cohorts. Coefficients on pre-reform cohorts should be
    indistinguishable from zero when trends are parallel; the joint Wald
    test formalizes that.
    """
    _check_requested_controls(sample, controls)
    _check_did_frame(sample, intensity)
    cohorts_present = [int(c) for c in np.unique(sample.cohort)]
    pre_present = [c for c in cohorts_present if c < POST_START]
    if len(pre_present) < 3:
        raise IdentificationError("need at least three pre-reform cohorts")
    for ref in references:
        if ref not in cohorts_present:
            raise IdentificationError(f"reference cohort {ref} is absent from the sample")
    inter = [c for c in cohorts_present if c not in references]
    if not any(c < POST_START for c in inter):
        raise IdentificationError("no non-reference pre-reform cohort to test")

    base = np.array([intensity.by_parish[int(p)] for p in sample.parish])
    cols = [base * (sample.cohort == c) for c in inter]
    names = [f"intensity_x_{c}" for c in inter]
    fit = _fit_absorbed(sample, cols, names, sample.fe_factors)

    kept = [(c, n) for c, n in zip(inter, names) if n in fit.names]
    coefs = np.array([fit.param(n) for _, n in kept])
    ses = np.array([fit.se_of(n) for _, n in kept])
    cis = [fit.conf_int(n) for _, n in kept]

    pre_names = [n for c, n in kept if c < POST_START]
    q = len(pre_names)
    idx = [fit.names.index(n) for n in pre_names]
    b = fit.params[idx]
    v = fit.vcov[np.ix_(idx, idx)]
    stat = float(b @ np.linalg.pinv(v) @ b) / q
    dfd = fit.n_clusters - 1
    pvalue = float(special.fdtrc(q, dfd, stat))

    return EventStudyResult(
        cohorts=tuple(c for c, _ in kept),
        coefficients=coefs,
        ses=ses,
        ci_lower=np.array([c[0] for c in cis]),
        ci_upper=np.array([c[1] for c in cis]),
        references=references,
        joint_pre_stat=stat,
        joint_pre_df=(q, dfd),
        joint_pre_pvalue=pvalue,
        fit=fit,
    )


# ---------------------------------------------------------------------------
# Two-stage least squares


def _cr1_factor(n_obs: int, n_params: int, n_groups: int) -> float:
    if n_groups < 2:
        raise IdentificationError("cluster-robust variance needs at least two clusters")
    if n_obs <= n_params:
        raise IdentificationError("more parameters than observations")
    return (n_groups / (n_groups - 1.0)) * ((n_obs - 1.0) / (n_obs - n_params))


def _ar_confidence_set(
    beta_hat: float,
    beta_se: float,
    exog: np.ndarray,
    resid_y: np.ndarray,
    resid_d: np.ndarray,
    alpha_y: float,
    alpha_d: float,
    codes: np.ndarray,
    cr1: float,
    dfd: int,
) -> tuple[float, float]:
    """Invert the Anderson-Rubin test over a grid around the point estimate.

    For each candidate effect the AR regression coefficient and its robust
    variance are linear and quadratic in the candidate, so the grid is
    evaluated from two sets of cluster score sums instead of refitting.
    """
    bread = np.linalg.inv(exog.T @ exog)
    c_row = bread[0]
    n_groups = int(codes.max()) + 1
    s_y = _cluster_score_sums(exog * resid_y[:, None], codes, n_groups) @ c_row
    s_d = _cluster_score_sums(exog * resid_d[:, None], codes, n_groups) @ c_row

    half = AR_GRID_HALF_WIDTH * beta_se
    grid = np.linspace(beta_hat - half, beta_hat + half, AR_GRID_POINTS)
    coef = alpha_y - grid * alpha_d
    var = cr1 * ((s_y[None, :] - grid[:, None] * s_d[None, :]) ** 2).sum(axis=1)
    stats = coef**2 / var
    crit = float(special.fdtri(1, dfd, 0.95))
    accepted = grid[stats <= crit]
    if accepted.size == 0:
        return (np.nan, np.nan)
    return (float(accepted.min()), float(accepted.max()))


def tsls(
    sample: AnalysisSample,
    instrument: np.ndarray | None = None,
    controls: str | None = None,
) -> tuple[FitResult, IvDiagnostics]:
    """Two-stage least squares with a single excluded instrument.

    Both stages absorb the same fixed effects and share the same control
    columns. The second-stage covariance uses the structural residual
    ``y - X beta`` (not the residual from regressing on fitted treatment),
    clustered on the sample's cluster ids.

    A first-stage F below ``WEAK_INSTRUMENT_F`` sets the weak-instrument
    flag; the estimate is still returned.

    Returns
    -------
    (FitResult, IvDiagnostics)
        The structural fit, and the first-stage/reduced-form detail.
    """
    _check_requested_controls(sample, controls)
    z = sample.instrument if instrument is None else np.asarray(instrument, dtype=np.float64)
    if z is None:
        raise DataError("sample carries no instrument column and none was supplied")
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.shape[0] != sample.n_obs or not np.all(np.isfinite(z)):
        raise DataError("instrument column must be finite and match the sample length")

    d = sample.treatment.astype(np.float64)
    cols = [z, d]
    if sample.controls.shape[1]:
        cols.append(sample.controls)
    design = np.column_stack(cols)
    y = sample.outcome
    factors = [sample.factor(n) for n in sample.fe_factors]
    df_absorbed = 0
    if factors:
        design, y = absorb_fe(design, y, factors)
        df_absorbed = _absorbed_df(factors)
    zt, dt, wt = design[:, 0], design[:, 1], design[:, 2:]

    stage_names = ("instrument",) + sample.control_names
    stage_design = np.column_stack([zt, wt]) if wt.shape[1] else zt[:, None]
    first = ols(stage_design, dt, stage_names, cluster_ids=sample.cluster_ids,
                df_absorbed=df_absorbed)
    if "instrument" not in first.names:
        raise IdentificationError("instrument does not vary after fixed-effect absorption")
    reduced = ols(stage_design, y, stage_names, cluster_ids=sample.cluster_ids,
                  df_absorbed=df_absorbed)

    kp_f = first.tstat("instrument") ** 2
    ar_stat = reduced.tstat("instrument") ** 2
    dfd = first.n_clusters - 1
    ar_pvalue = float(special.fdtrc(1, dfd, ar_stat))

    kept_controls = [n for n in sample.control_names if n in first.names]
    w_idx = [sample.control_names.index(n) for n in kept_controls]
    wk = wt[:, w_idx]
    exog = np.column_stack([zt, wk]) if wk.shape[1] else zt[:, None]
    regs = np.column_stack([dt, wk]) if wk.shape[1] else dt[:, None]

    a = exog.T @ regs
    rhs = exog.T @ y
    weak = kp_f < WEAK_INSTRUMENT_F
    try:
        beta = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        beta, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        weak = True
    resid = y - regs @ beta

    codes = _as_codes(sample.cluster_ids)
    n_groups = int(codes.max()) + 1
    n_params = regs.shape[1] + df_absorbed
    cr1 = _cr1_factor(sample.n_obs, n_params, n_groups)
    grouped = _cluster_score_sums(exog * resid[:, None], codes, n_groups)
    a_inv = np.linalg.pinv(a)
    vcov = cr1 * a_inv @ (grouped.T @ grouped) @ a_inv.T

    ybar = y.mean()
    sst = float(np.sum((y - ybar) ** 2))
    ssr = float(np.sum(resid**2))
    structural = FitResult(
        names=("treated", *kept_controls),
        params=beta,
        vcov=vcov,
        n_obs=sample.n_obs,
        n_clusters=n_groups,
        dropped=tuple(n for n in sample.control_names if n not in kept_controls),
        r_squared=1.0 - ssr / sst if sst > 0 else 0.0,
        residuals=resid,
        fitted=y - resid,
    )

    ar_ci = _ar_confidence_set(
        beta_hat=float(beta[0]),
        beta_se=float(np.sqrt(vcov[0, 0])),
        exog=exog,
        resid_y=reduced.residuals,
        resid_d=first.residuals,
        alpha_y=reduced.param("instrument"),
        alpha_d=first.param("instrument"),
        codes=codes,
        cr1=_cr1_factor(sample.n_obs, exog.shape[1] + df_absorbed, n_groups),
        dfd=dfd,
    )
    diag = IvDiagnostics(
        kp_f=float(kp_f),
        ar_stat=float(ar_stat),
        ar_pvalue=ar_pvalue,
        first_stage=first,
        reduced_form=reduced,
        ar_ci=ar_ci,
        weak_instrument=bool(weak),
    )
    return structural, diag


def intergen_tsls(sample: AnalysisSample, controls: str | None = None) -> FitResult:
    """2SLS for descendants, one row per (child, ancestor) pair.

    The treatment, instrument and clusters describe the ancestor while the
    outcome describes the child, so the coefficient is the effect of one
    additional vaccinated ancestor.
    """
    if not sample.stacked:
        raise DataError(
            "intergenerational 2SLS expects a stacked sample; "
            "build one with build_stacked_sample"
        )
    structural, _ = tsls(sample, controls=controls)
    return structural


# ---------------------------------------------------------------------------
# Selection correction


def build_selection_frame(
    records: Sequence[IndividualRecord],
    panel: PanelContext,
    predictors: tuple[str, ...] = ("rye_price", "birth_month"),
    generation: str = "G1",
) -> SelectionFrame:
    """Collect inclusion predictors for everyone in a generation.

    Panel predictor names are joined by (parish, cohort); anything else must
    be a numeric field of the individual records. The frame covers all
    records of the generation, so later membership in an estimation sample
    is exactly the selection event the probit models.
    """
    rows = [r for r in records if r.generation == generation]
    if not rows:
        raise DataError(f"no records for generation {generation!r}")
    columns = []
    for name in predictors:
        if hasattr(panel, name):
            grid = {
                (int(p), int(c)): float(v)
                for p, c, v in zip(panel.parish, panel.cohort, getattr(panel, name))
            }
            try:
                columns.append([grid[(r.parish, r.cohort)] for r in rows])
            except KeyError as exc:
                raise DataError(f"panel column {name!r} is missing cell {exc}") from None
        elif hasattr(rows[0], name):
            columns.append([float(getattr(r, name)) for r in rows])
        else:
            raise DataError(f"unknown selection predictor {name!r}")
    return SelectionFrame(
        record_ids=np.array([r.id for r in rows], dtype=np.int64),
        predictors=np.column_stack(columns).astype(np.float64),
        predictor_names=tuple(predictors),
        cohort=np.array([r.cohort for r in rows], dtype=np.int64),
        cluster_ids=np.array([r.parish for r in rows], dtype=np.int64),
    )


def heckman_correct(
    sample: AnalysisSample,
    selection_predictors: SelectionFrame,
    selected_flag: np.ndarray | None = None,
    estimator: Callable[[AnalysisSample], FitResult] | None = None,
) -> FitResult:
    """Two-step correction for selective inclusion in the sample.

    Stage one fits a probit of inclusion on the frame's predictors fully
    interacted with birth-year dummies (plus the dummies themselves); stage
    two reruns the requested estimator with the inverse Mills ratio of the
    fitted index appended as a control named ``inverse_mills``.

    Standard errors in stage two treat the inverse Mills ratio as data; no
    allowance is made for it being estimated, which is a documented
    limitation of the two-step approach used here.

    Parameters
    ----------
    sample : AnalysisSample
        The selected rows, as usual.
    selection_predictors : SelectionFrame
        Predictor rows for the full population at risk of selection.
    selected_flag : array of bool, optional
        Marks which frame rows were selected. Defaults to membership of the
        frame's record ids in the sample.
    estimator : callable, optional
        Stage-two estimator taking the augmented sample; defaults to
        :func:`mother_fe`.
    """
    frame = selection_predictors
    if not np.isin(sample.record_ids, frame.record_ids).all():
        raise DataError("sample contains records missing from the selection frame")
    if selected_flag is None:
        selected = np.isin(frame.record_ids, sample.record_ids)
    else:
        selected = np.asarray(selected_flag, dtype=bool)
        if selected.shape[0] != frame.record_ids.shape[0]:
            raise DataError("selected_flag length does not match the selection frame")
    if selected.all() or not selected.any():
        raise IdentificationError("selection rate is zero or one; nothing to correct")

    cohorts = np.unique(frame.cohort)
    cols: list[np.ndarray] = []
    names: list[str] = []
    for c in cohorts:
        mask = (frame.cohort == c).astype(np.float64)
        cols.append(mask)
        names.append(f"cohort_{int(c)}")
        for j, pname in enumerate(frame.predictor_names):
            cols.append(frame.predictors[:, j] * mask)
            names.append(f"{pname}_x_{int(c)}")
    stage1 = probit_fit(
        np.column_stack(cols),
        selected.astype(np.float64),
        names,
        cluster_ids=frame.cluster_ids,
    )
    design_kept = np.column_stack([cols[names.index(n)] for n in stage1.names])
    index = design_kept @ stage1.params
    mills = inverse_mills(index)

    by_id = dict(zip(frame.record_ids.tolist(), np.asarray(mills).tolist()))
    imr = np.array([by_id[int(rid)] for rid in sample.record_ids])
    augmented = replace(
        sample,
        controls=np.column_stack([sample.controls, imr]) if sample.controls.shape[1] else imr[:, None],
        control_names=(*sample.control_names, "inverse_mills"),
    )
    run = estimator if estimator is not None else mother_fe
    return run(augmented)


# ---------------------------------------------------------------------------
# Indirect least squares, leads, cointerventions


def indirect_least_squares(did_estimate: float, treated_share: float) -> float:
    """Scale a reduced-form contrast by the share actually treated.

    With a binary uptake margin the reduced form understates the effect on
    the treated by the uptake share, so dividing recovers the per-treated
    effect.
    """
    if not 0.0 < treated_share <= 1.0:
        raise ValueError(f"treated share must lie in (0, 1], got {treated_share}")
    return did_estimate / treated_share


def pretrend_leads(
    sample: AnalysisSample,
    instrument_table: InstrumentTable,
    n_leads: int = 5,
    controls: str | None = None,
) -> LeadCoefficients:
    """Reduced-form effects of exposure the parish has not received yet.

    For lead k every row's exposure is replaced by the value its parish
    takes k cohorts later; rows whose shifted cohort leaves the table are
    dropped for that lead. Leads of one and above control for the
    contemporaneous exposure so the placebo is not just relabelled signal.
    Lead 0 is the ordinary reduced form.
    """
    _check_requested_controls(sample, controls)
    if n_leads < 1:
        raise ValueError("n_leads must be at least 1")
    if sample.instrument is None:
        raise DataError("sample carries no instrument column")
    zmap = instrument_table.lookup()
    pre_rows = sample.cohort < POST_START
    if not pre_rows.any():
        raise IdentificationError("no pre-reform cohorts; leads have nothing to test")

    fits: list[FitResult] = []
    coefs: list[float] = []
    ses: list[float] = []
    counts: list[int] = []
    for k in range(0, n_leads + 1):
        shifted = np.array([
            zmap.get((int(p), int(c) + k), np.nan)
            for p, c in zip(sample.parish, sample.cohort)
        ])
        mask = np.isfinite(shifted)
        if k >= 1:
            informative = mask & pre_rows & (shifted != 0.0)
            if not informative.any():
                raise IdentificationError(
                    f"the sample's pre-period is too short to identify lead {k}"
                )
        cols = [shifted[mask]]
        names = ["instrument_lead"]
        if k >= 1:
            cols.append(sample.instrument[mask])
            names.append("instrument")
        if sample.controls.shape[1]:
            cols.append(sample.controls[mask])
            names.extend(sample.control_names)
        design = np.column_stack(cols)
        y = sample.outcome[mask]
        factors = [sample.factor(n)[mask] for n in sample.fe_factors]
        df_absorbed = 0
        if factors:
            design, y = absorb_fe(design, y, factors)
            df_absorbed = _absorbed_df(factors)
        fit = ols(design, y, names, cluster_ids=sample.cluster_ids[mask],
                  df_absorbed=df_absorbed)
        if "instrument_lead" not in fit.names:
            raise IdentificationError(f"lead {k} exposure does not vary after absorption")
        fits.append(fit)
        coefs.append(fit.param("instrument_lead"))
        ses.append(fit.se_of("instrument_lead"))
        counts.append(int(mask.sum()))

    return LeadCoefficients(
        leads=tuple(range(0, n_leads + 1)),
        coefficients=np.array(coefs),
        ses=np.array(ses),
        n_obs=tuple(counts),
        fits=tuple(fits),
    )


def cointervention_interactions(
    sample: AnalysisSample,
    cointervention: np.ndarray | str,
    panel: PanelContext | None = None,
    instrument: np.ndarray | None = None,
    controls: str | None = None,
) -> FitResult:
    """Reduced form with the instrument interacted with a cointervention.

    The cointervention is divided by its mean before interacting, so the
    instrument's main coefficient is the effect at the cointervention's
    average level. Pass a panel column name plus the panel, or an already
    joined per-row array.
    """
    _check_requested_controls(sample, controls)
    z = sample.instrument if instrument is None else np.asarray(instrument, dtype=np.float64)
    if z is None:
        raise DataError("sample carries no instrument column and none was supplied")
    z = np.asarray(z, dtype=np.float64).ravel()

    if isinstance(cointervention, str):
        if panel is None:
            raise DataError("pass the panel to resolve a cointervention column name")
        if not hasattr(panel, cointervention):
            raise DataError(f"panel has no column {cointervention!r}")
        column = np.asarray(getattr(panel, cointervention), dtype=np.float64)
        mean = float(column.mean())
        grid = {
            (int(p), int(c)): float(v)
            for p, c, v in zip(panel.parish, panel.cohort, column)
        }
        try:
            co = np.array([grid[(int(p), int(c))] for p, c in zip(sample.parish, sample.cohort)])
        except KeyError as exc:
            raise DataError(f"cointervention panel is missing cell {exc}") from None
    else:
        co = np.asarray(cointervention, dtype=np.float64).ravel()
        if co.shape[0] != sample.n_obs:
            raise DataError("cointervention array does not match the sample length")
        mean = float(co.mean())
    if mean == 0.0 or not np.isfinite(mean):
        raise DataError("cointervention mean is zero; cannot divide by it")
    co_norm = co / mean

    cols = [z, z * co_norm, co_norm]
    names = ["instrument", "instrument_x_cointervention", "cointervention"]
    return _fit_absorbed(sample, cols, names, sample.fe_factors)
