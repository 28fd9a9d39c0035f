"""Synthetic three-generation population with a fully known causal structure.

Every estimator in this package is validated against data from this module:
the planted parameters are the oracle. The construction, in domain terms:

* Parishes carry a base count of church personnel. The national count is
  flat before 1801 and then grows every year, sharply so in the two shock
  years; parish counts grow proportionally, which makes the stored national
  shift exactly the yearly growth rate and keeps the shift-share exposure
  identically zero for pre-reform cohorts.
* The oldest generation is born into families (several siblings per mother).
  From 1801 on, the probability of childhood vaccination is a baseline
  uptake ramp plus ``first_stage_slope`` times the rescaled exposure, so a
  fixed-effects first stage recovers the slope without attenuation. A small
  share is vaccinated late, independently of everything, and excluded.
* Years lived are linear in treatment, fixed effects, family background and
  noise by default. ``mortality_mode="gompertz"`` instead draws cause-
  specific survival times from a Gompertz baseline with proportional
  treatment multipliers, for the hazard estimators.
* Descendants: adults are matched into couples across parishes at random
  (spouses' exposures are independent, so stacked per-ancestor estimands
  equal the planted per-parent effects). Offspring outcomes add the planted
  per-parent effect, a mother-level shared component, and mediator channels
  (inherited vaccination propensity, inherited occupational standing).
* Out-migration censors lives through a latent-index rule driven by rye
  prices and birth month; its error can be correlated with the outcome
  noise to create real selection bias for the correction to remove.

Confounding switches (family-level, individual hazard-level), a planted
pre-trend, anticipation, and a cointervention amplifier are all off by
default and exist so tests can plant exactly one violation at a time.

Randomness comes from streams keyed by (seed, purpose, block), so any block
can be regenerated independently of generation order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, logit

from .errors import ConfigError
from .microdata import (
    AGE_CUTOFF,
    G1_ENTRY_AGE,
    POST_START,
    IndividualRecord,
    PanelContext,
    build_did_intensity,
    build_instrument,
    write_microdata,
)

__all__ = [
    "DgpParams",
    "MediatorParams",
    "SelectionParams",
    "HazardParams",
    "GroundTruth",
    "simulate_population",
    "write_population",
    "confounded_family_params",
    "migration_selection_params",
    "gompertz_hazard_params",
    "competing_risk_params",
]

# Purpose codes for keyed RNG streams.
_S_PERSONNEL = 0
_S_GROWTH = 1
_S_COVARIATES = 2
_S_PARISH_EFFECT = 3
_S_FAMILY = 4
_S_CHILD = 5
_S_MATCHING = 6
_S_OFFSPRING = 7
_S_EPIGENETIC = 8

_GEN_CODE = {"G1": 1, "G2": 2, "G3": 3}


def _rng(seed: int, purpose: int, *block: int) -> np.random.Generator:
    return np.random.default_rng((seed, purpose, *block))


@dataclass(frozen=True)
class MediatorParams:
    """Channels linking a parent's vaccination to offspring outcomes."""

    child_vaccination_transmission: float = 0.35
    occupation_transmission: float = 0.30
    epigenetic_sd: float = 2.0


@dataclass(frozen=True)
class SelectionParams:
    """Out-migration rule. ``outcome_error_corr`` ties the migration latent
    to the outcome noise (that correlation is what selection bias is);
    ``rye_instrument_loading`` ties rye prices to the exposure so migration
    is also differential along the instrument; ``month_uptake_coef`` lets
    birth month shift early-vaccination take-up (seasonal campaigns), so a
    month term in the migration latent loads onto treatment status rather
    than washing into the family intercept."""

    base: float = -1.6
    rye_coef: float = 0.3
    month_coef: float = 0.02
    outcome_error_corr: float = 0.0
    rye_instrument_loading: float = 0.0
    month_uptake_coef: float = 0.0


@dataclass(frozen=True)
class HazardParams:
    """Gompertz baseline and cause-specific treatment multipliers."""

    gompertz_shape: float = 0.07
    gompertz_rate: float = 1.1e-3
    cause_rate_shares: Mapping[str, float] = field(
        default_factory=lambda: {"smallpox": 0.35, "other": 0.65}
    )
    cause_hr: Mapping[str, float] = field(
        default_factory=lambda: {"smallpox": 0.32, "other": 0.32}
    )


@dataclass(frozen=True)
class DgpParams:
    """All planted structure. Defaults are calibrated so the default run has
    roughly fifty thousand oldest-generation records, a post-reform treated
    share near one third, and a strong first stage."""

    n_parishes: int = 50
    n_families_per_parish: int = 500
    n_regions: int = 10
    cohort_window: tuple[int, int] = (1790, 1820)
    personnel_base: tuple[float, float] = (0.0, 12.0)
    shock_years: Mapping[int, float] = field(default_factory=lambda: {1805: 0.9, 1815: 0.4})
    background_growth: tuple[float, float] = (0.01, 0.05)
    vaccination_base: tuple[float, float] = (0.12, 0.30)
    first_stage_slope: float = 0.15
    late_vaccination_rate: float = 0.04
    true_effect_years_g1: float = 11.0
    true_effect_years_g2: float = 2.2
    true_effect_years_g3: float = 1.1
    true_effect_occscore_g1: float = 3.0
    effect_heterogeneity_sd: float = 1.0
    direct_share_g2: float = 0.5
    mediator_params: MediatorParams = field(default_factory=MediatorParams)
    selection_params: SelectionParams = field(default_factory=SelectionParams)
    hazard_params: HazardParams = field(default_factory=HazardParams)
    noise_sds: Mapping[str, float] = field(
        default_factory=lambda: {
            "years_lived": 8.0,
            "years_lived_offspring": 7.0,
            "occupational_score": 5.0,
        }
    )
    treatment_link: str = "linear"
    mortality_mode: str = "linear"
    generations: tuple[str, ...] = ("G1", "G2", "G3")
    offspring_share: float = 0.37
    family_confounding: tuple[float, float] = (0.0, 0.0)
    hazard_confounding: tuple[float, float] = (0.0, 0.0)
    pretrend_slope: float = 0.0
    anticipation_effect: float = 0.0
    cointervention_amp: float = 0.0
    seed: int = 12345


@dataclass(frozen=True)
class GroundTruth:
    """Planted parameters echoed back with per-record oracle quantities.

    ``potential_treated``/``potential_untreated`` are the record's outcome
    with its own treatment switched (for the oldest generation) or with its
    first listed ancestor's treatment switched (for descendants, mediator
    channels at their planted expectations); their difference averages to
    the planted per-generation effect. ``assigned_prob`` is the planted
    vaccination probability (zero for pre-reform cohorts).
    """

    params: DgpParams
    record_ids: np.ndarray
    generation_code: np.ndarray
    potential_treated: np.ndarray
    potential_untreated: np.ndarray
    assigned_prob: np.ndarray
    summary: dict

    def planted_effect(self, generation: str) -> float:
        return {
            "G1": self.params.true_effect_years_g1,
            "G2": self.params.true_effect_years_g2,
            "G3": self.params.true_effect_years_g3,
        }[generation]


def _validate(params: DgpParams) -> None:
    p = params
    if p.n_parishes <= 0 or p.n_families_per_parish <= 0 or p.n_regions <= 0:
        raise ConfigError("population counts must be positive")
    if p.n_regions > p.n_parishes:
        raise ConfigError("cannot have more regions than parishes")
    lo, hi = p.cohort_window
    if not (isinstance(lo, int) and isinstance(hi, int) and lo < hi):
        raise ConfigError(f"bad cohort window {p.cohort_window}")
    if hi <= POST_START:
        raise ConfigError("cohort window must extend past the reform year")
    if not 0.0 <= p.personnel_base[0] < p.personnel_base[1]:
        raise ConfigError(f"bad personnel range {p.personnel_base}")
    if not 0.0 <= p.background_growth[0] <= p.background_growth[1]:
        raise ConfigError(f"bad growth range {p.background_growth}")
    for year, size in p.shock_years.items():
        if not lo < year <= hi:
            raise ConfigError(f"shock year {year} outside the cohort window")
        if size < 0:
            raise ConfigError(f"negative shock size in year {year}")
    for name, value in (
        ("vaccination_base low", p.vaccination_base[0]),
        ("vaccination_base high", p.vaccination_base[1]),
        ("late_vaccination_rate", p.late_vaccination_rate),
        ("offspring_share", p.offspring_share),
        ("direct_share_g2", p.direct_share_g2),
        ("child_vaccination_transmission", p.mediator_params.child_vaccination_transmission),
    ):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must be a probability, got {value}")
    if not -1.0 <= p.selection_params.outcome_error_corr <= 1.0:
        raise ConfigError("outcome_error_corr must lie in [-1, 1]")
    if not -1.0 <= p.selection_params.month_uptake_coef <= 1.0:
        raise ConfigError("month_uptake_coef must lie in [-1, 1]")
    effects = (
        p.first_stage_slope,
        p.true_effect_years_g1,
        p.true_effect_years_g2,
        p.true_effect_years_g3,
        p.true_effect_occscore_g1,
    )
    if not all(np.isfinite(effects)):
        raise ConfigError("planted effects must be finite")
    for key in ("years_lived", "years_lived_offspring", "occupational_score"):
        if p.noise_sds.get(key, -1.0) <= 0.0:
            raise ConfigError(f"noise_sds[{key!r}] must be positive")
    if p.treatment_link not in ("linear", "logit"):
        raise ConfigError(f"unknown treatment_link {p.treatment_link!r}")
    if p.mortality_mode not in ("linear", "gompertz"):
        raise ConfigError(f"unknown mortality_mode {p.mortality_mode!r}")
    if not p.generations or any(g not in _GEN_CODE for g in p.generations):
        raise ConfigError(f"bad generations {p.generations}")
    if "G3" in p.generations and "G2" not in p.generations:
        raise ConfigError("the third generation requires the second")
    if p.hazard_params.gompertz_shape <= 0 or p.hazard_params.gompertz_rate <= 0:
        raise ConfigError("Gompertz parameters must be positive")
    if p.seed < 0:
        raise ConfigError("seed must be non-negative")


# ---------------------------------------------------------------------------
# Panel


def _build_panel(params: DgpParams) -> tuple[PanelContext, np.ndarray, np.ndarray]:
    """Panel plus a dense exposure matrix z[parish, year] on the panel years.

    The panel starts one year before the first cohort so every cohort has a
    lagged exposure value.
    """
    lo, hi = params.cohort_window
    years = np.arange(lo - 1, hi + 1)
    n_years = years.shape[0]
    n = params.n_parishes

    base = np.empty(n)
    for p in range(n):
        base[p] = _rng(params.seed, _S_PERSONNEL, p).uniform(*params.personnel_base)

    growth = np.zeros(n_years)
    for j, year in enumerate(years):
        if year >= POST_START:
            g = _rng(params.seed, _S_GROWTH, int(year)).uniform(*params.background_growth)
            growth[j] = g + params.shock_years.get(int(year), 0.0)
    factor = np.cumprod(1.0 + growth)
    personnel = base[:, None] * factor[None, :]

    # National shift: yearly relative change of the national count. With
    # proportional parish growth this equals the growth rate itself, and it
    # is exactly zero before the reform.
    national = personnel.sum(axis=0)
    shift = np.zeros(n_years)
    shift[1:] = (national[1:] - national[:-1]) / national[:-1]

    def column(values: np.ndarray) -> np.ndarray:
        return values.reshape(-1)

    parish_col = np.repeat(np.arange(n, dtype=np.int64), n_years)
    cohort_col = np.tile(years.astype(np.int64), n)

    skeleton = PanelContext(
        parish=parish_col,
        cohort=cohort_col,
        church_personnel=column(personnel),
        national_shift=np.tile(shift, n),
        midwives=np.zeros(n * n_years),
        priests=np.zeros(n * n_years),
        smallpox_death_rate=np.zeros(n * n_years),
        urban_share=np.zeros(n * n_years),
        students_per_capita=np.zeros(n * n_years),
        rye_price=np.zeros(n * n_years),
        potato_seeds_per_km2=np.zeros(n * n_years),
    )
    table = build_instrument(skeleton)
    z = np.zeros((n, n_years))
    year_pos = {int(y): j for j, y in enumerate(years)}
    for p, t, v in zip(table.parish, table.cohort, table.value):
        z[int(p), year_pos[int(t)]] = v

    cov = {}
    sel = params.selection_params
    for p in range(n):
        r = _rng(params.seed, _S_COVARIATES, p)
        cov.setdefault("midwives", []).append(r.uniform(0.5, 3.0) + r.normal(0, 0.1, n_years))
        cov.setdefault("priests", []).append(r.uniform(1.0, 4.0) + r.normal(0, 0.1, n_years))
        cov.setdefault("smallpox_death_rate", []).append(
            np.clip(r.uniform(0.05, 0.30) + r.normal(0, 0.02, n_years), 0.01, None)
        )
        cov.setdefault("urban_share", []).append(np.full(n_years, r.uniform(0.0, 0.6)))
        cov.setdefault("students_per_capita", []).append(r.uniform(0.01, 0.10) + r.normal(0, 0.005, n_years))
        cov.setdefault("rye_price", []).append(
            np.clip(1.0 + r.normal(0, 0.25, n_years) + sel.rye_instrument_loading * z[p], 0.05, None)
        )
        cov.setdefault("potato_seeds_per_km2", []).append(r.uniform(0.0, 5.0) + r.normal(0, 0.2, n_years))

    panel = PanelContext(
        parish=parish_col,
        cohort=cohort_col,
        church_personnel=column(personnel),
        national_shift=np.tile(shift, n),
        **{name: np.concatenate([row for row in rows]) for name, rows in cov.items()},
    )
    return panel, z, years


# ---------------------------------------------------------------------------
# Lives


def _gompertz_times(
    params: DgpParams,
    treated: np.ndarray,
    frailty: np.ndarray,
    entry: float,
    exponentials: dict[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cause-specific survival draws; returns (age under D=1, age under D=0,
    cause code of the realized minimum under the realized treatment).

    Inverts the Gompertz cumulative hazard from the entry age; the same
    exponential draws are reused for both treatment arms, so the potential
    ages are comonotone.
    """
    hz = params.hazard_params
    theta = hz.gompertz_shape
    causes = tuple(hz.cause_rate_shares)
    ages = {}
    for arm in (1.0, 0.0):
        per_cause = []
        for c in causes:
            lam = hz.gompertz_rate * hz.cause_rate_shares[c]
            mult = np.exp(np.log(hz.cause_hr[c]) * arm + params.hazard_confounding[1] * frailty)
            t = np.log(np.exp(theta * entry) + theta * exponentials[c] / (lam * mult)) / theta
            per_cause.append(t)
        ages[arm] = np.stack(per_cause)
    realized = np.where(treated[None, :] > 0, ages[1.0], ages[0.0])
    cause_code = realized.argmin(axis=0)
    return ages[1.0].min(axis=0), ages[0.0].min(axis=0), cause_code


def _simulate_g1(params: DgpParams, panel: PanelContext, z: np.ndarray, years: np.ndarray):
    lo, hi = params.cohort_window
    n_parishes = params.n_parishes
    per_region = -(-n_parishes // params.n_regions)
    year_pos = {int(y): j for j, y in enumerate(years)}
    sel = params.selection_params
    sd_years = params.noise_sds["years_lived"]
    sd_occ = params.noise_sds["occupational_score"]
    v_lo, v_hi = params.vaccination_base
    slope = params.first_stage_slope
    fam_conf_t, fam_conf_y = params.family_confounding
    haz_conf_t, haz_conf_y = params.hazard_confounding

    rate_grid = panel.smallpox_death_rate.reshape(n_parishes, years.shape[0])
    rate_mean = float(rate_grid.mean())
    rye_grid = panel.rye_price.reshape(n_parishes, years.shape[0])

    intensity = None
    if params.pretrend_slope != 0.0:
        intensity = build_did_intensity(panel)

    parish_eff = np.empty(n_parishes)
    parish_eff_occ = np.empty(n_parishes)
    for p in range(n_parishes):
        r = _rng(params.seed, _S_PARISH_EFFECT, p)
        parish_eff[p] = r.normal(0.0, 2.0)
        parish_eff_occ[p] = r.normal(0.0, 1.5)

    records: list[IndividualRecord] = []
    truth_rows = {"y1": [], "y0": [], "prob": [], "ids": []}
    next_id = 1
    family_counter = 0

    for p in range(n_parishes):
        fam = _rng(params.seed, _S_FAMILY, p)
        n_fam = params.n_families_per_parish
        sizes = fam.choice(np.array([1, 2, 3]), size=n_fam, p=[0.25, 0.5, 0.25])
        starts = fam.integers(lo, hi - 4, size=n_fam)
        gaps = fam.integers(1, 4, size=(n_fam, 2))
        father_occ = fam.normal(30.0, 8.0, n_fam)
        mother_occ = fam.normal(25.0, 8.0, n_fam)
        father_lit = fam.uniform(size=n_fam) < 0.55
        mother_lit = fam.uniform(size=n_fam) < 0.45
        nonsurv = fam.beta(2.0, 8.0, n_fam)
        unmarried = fam.uniform(size=n_fam) < 0.12
        sibdeath = fam.uniform(size=n_fam) < 0.06
        q_m = fam.normal(size=n_fam)

        fidx = np.repeat(np.arange(n_fam), sizes)
        order = np.concatenate([np.arange(k) for k in sizes])
        cohort = starts[fidx].copy()
        cohort[order >= 1] += gaps[fidx[order >= 1], 0]
        cohort[order >= 2] += gaps[fidx[order >= 2], 1]
        cohort = np.minimum(cohort, hi)
        m = cohort.shape[0]

        child = _rng(params.seed, _S_CHILD, p)
        female = child.uniform(size=m) < 0.5
        month = child.integers(1, 13, size=m)
        u_vacc = child.uniform(size=m)
        u_late = child.uniform(size=m)
        u_vage = child.uniform(size=m)
        u_eff = child.normal(size=m)
        e_years = child.normal(size=m)
        e_occ = child.normal(size=m)
        v_sel = child.normal(size=m)
        u_mig = child.uniform(0.02, 0.98, size=m)
        u_dis = child.uniform(size=m)
        u_onset = child.uniform(0.02, 0.98, size=m)
        u_discause = child.uniform(size=m)
        u_dcause = child.uniform(size=m)
        u_lit = child.uniform(size=m)
        u_midwife = child.uniform(size=m)
        frailty = child.normal(size=m)
        exp_draws = {c: child.exponential(size=m) for c in params.hazard_params.cause_rate_shares}

        ypos = np.array([year_pos[int(t)] for t in cohort])
        z_own = z[p, ypos]
        z_next = np.where(cohort + 1 <= hi, z[p, np.minimum(ypos + 1, years.shape[0] - 1)], 0.0)
        post = cohort >= POST_START

        ramp = v_lo + (v_hi - v_lo) * (cohort - POST_START) / max(hi - POST_START, 1)
        season = sel.month_uptake_coef * (month - 6.5) / 5.5
        if params.treatment_link == "linear":
            prob = np.clip(ramp + slope * z_own + fam_conf_t * q_m[fidx] + season, 0.0, 1.0)
        else:
            eta = logit(np.clip(ramp, 0.01, 0.99)) + slope * z_own + season
            eta = eta + fam_conf_t * q_m[fidx] + haz_conf_t * frailty
            prob = expit(eta)
        prob = np.where(post, prob, 0.0)
        vacc = u_vacc < prob
        late = (~vacc) & post & (u_late < params.late_vaccination_rate)
        vacc_age = np.where(vacc, 0.2 + 1.6 * u_vage, np.where(late, 3.0 + 7.0 * u_vage, np.nan))

        tau = params.true_effect_years_g1 + params.effect_heterogeneity_sd * u_eff
        if params.cointervention_amp != 0.0:
            co = rate_grid[p, ypos] / rate_mean
            tau = tau * (1.0 + params.cointervention_amp * (co - 1.0))

        base_years = (
            38.0
            + parish_eff[p]
            + 0.05 * (cohort - lo)
            + 0.08 * father_occ[fidx]
            + 0.06 * mother_occ[fidx]
            + 1.2 * father_lit[fidx]
            + 0.8 * mother_lit[fidx]
            - 2.0 * nonsurv[fidx]
            - 0.8 * unmarried[fidx]
            - 0.5 * sibdeath[fidx]
            + fam_conf_y * q_m[fidx]
            + params.anticipation_effect * z_next
            + sd_years * e_years
        )
        if intensity is not None:
            pre = ~post
            base_years = base_years + np.where(
                pre, params.pretrend_slope * intensity.by_parish[p] * (cohort - (POST_START - 1)), 0.0
            )

        if params.mortality_mode == "linear":
            y0 = G1_ENTRY_AGE + np.maximum(base_years, 0.1)
            y1 = G1_ENTRY_AGE + np.maximum(base_years + tau, 0.1)
            death = np.where(vacc, y1, y0)
            smallpox_death = u_dcause < np.clip(0.25 - 0.23 * vacc, 0.0, 1.0)
        else:
            y1, y0, cause_code = _gompertz_times(
                params, vacc.astype(float), frailty, G1_ENTRY_AGE, exp_draws
            )
            y1, y0 = np.minimum(y1, 100.0), np.minimum(y0, 100.0)
            death = np.where(vacc, y1, y0)
            causes = tuple(params.hazard_params.cause_rate_shares)
            smallpox_death = np.array([causes[c] == "smallpox" for c in cause_code])

        censored_at_100 = params.mortality_mode == "gompertz"
        alive_at_cap = death >= 100.0 if censored_at_100 else np.zeros(m, dtype=bool)

        e_std = e_years  # standardized outcome noise, reused by selection
        rho = sel.outcome_error_corr
        u_sel = rho * e_std + np.sqrt(max(1.0 - rho * rho, 0.0)) * v_sel
        rye_own = rye_grid[p, ypos]
        latent = sel.base + sel.rye_coef * rye_own + sel.month_coef * (month - 6.5) + u_sel
        migrate = (latent > 0.0) & ~alive_at_cap
        mig_age = G1_ENTRY_AGE + u_mig * (death - G1_ENTRY_AGE)
        last_obs = np.where(migrate, mig_age, death)
        death_seen = ~migrate & ~alive_at_cap

        disabled = u_dis < np.clip(0.40 - 0.15 * vacc, 0.0, 1.0)
        onset = G1_ENTRY_AGE + u_onset * (death - G1_ENTRY_AGE)
        onset_seen = disabled & (onset < last_obs - 1e-9)
        dis_smallpox = u_discause < np.clip(0.60 - 0.55 * vacc, 0.0, 1.0)

        lit_prob = np.clip(
            0.45 + 0.12 * vacc + 0.10 * mother_lit[fidx] + 0.015 * (father_occ[fidx] - 30.0) / 8.0,
            0.02,
            0.98,
        )
        literacy = u_lit < lit_prob
        occ_score = (
            22.0
            + parish_eff_occ[p]
            + 0.18 * father_occ[fidx]
            + 0.12 * mother_occ[fidx]
            + params.true_effect_occscore_g1 * vacc
            + sd_occ * e_occ
        )

        region = p // per_region
        for i in range(m):
            rid = next_id + i
            records.append(IndividualRecord(
                id=rid,
                generation="G1",
                mother_id=9_000_000 + family_counter + int(fidx[i]),
                g1_ancestor_ids=(),
                parish=p,
                region=region,
                cohort=int(cohort[i]),
                sex="female" if female[i] else "male",
                birth_month=int(month[i]),
                vaccinated_age=float(vacc_age[i]) if np.isfinite(vacc_age[i]) else None,
                death_age=float(death[i]) if death_seen[i] else None,
                last_observed_age=float(last_obs[i]),
                disability_onset_age=float(onset[i]) if onset_seen[i] else None,
                disability_cause=("smallpox_related" if dis_smallpox[i] else "other") if onset_seen[i] else None,
                death_cause=("smallpox" if smallpox_death[i] else "other") if death_seen[i] else None,
                literacy_good=bool(literacy[i]),
                occupational_score=float(occ_score[i]),
                family_covariates=(
                    float(father_occ[fidx[i]]),
                    float(mother_occ[fidx[i]]),
                    float(father_lit[fidx[i]]),
                    float(mother_lit[fidx[i]]),
                    float(nonsurv[fidx[i]]),
                    float(unmarried[fidx[i]]),
                    float(sibdeath[fidx[i]]),
                ),
                midwife_assisted=bool(u_midwife[i] < 0.35),
                child_vaccinated=None,
            ))
        truth_rows["ids"].append(next_id + np.arange(m))
        truth_rows["y1"].append(y1)
        truth_rows["y0"].append(y0)
        truth_rows["prob"].append(prob)
        next_id += m
        family_counter += n_fam

    truth = {k: np.concatenate(v) for k, v in truth_rows.items()}
    return records, truth


def _simulate_offspring(
    params: DgpParams,
    generation: str,
    parents: Sequence[IndividualRecord],
    id_base: int,
    ancestor_treated: Mapping[int, bool],
):
    """Match parents into cross-parish couples and generate their children."""
    med = params.mediator_params
    sd_years = params.noise_sds["years_lived_offspring"]
    sd_occ = params.noise_sds["occupational_score"]
    sel = params.selection_params
    gen_code = _GEN_CODE[generation]
    lo, hi = params.cohort_window

    def early(r: IndividualRecord) -> bool:
        return r.vaccinated_age is not None and r.vaccinated_age <= AGE_CUTOFF

    females = [r for r in parents if r.sex == "female"]
    males = [r for r in parents if r.sex == "male"]
    match = _rng(params.seed, _S_MATCHING, gen_code)
    perm = match.permutation(len(males))
    n_couples = min(len(females), len(males))
    keep = match.uniform(size=n_couples) < params.offspring_share
    n_children = np.where(keep, 1 + match.poisson(1.0, size=n_couples), 0)

    epi = _rng(params.seed, _S_EPIGENETIC, gen_code).normal(0.0, med.epigenetic_sd, size=n_couples)

    total = int(n_children.sum())
    r = _rng(params.seed, _S_OFFSPRING, gen_code)
    female = r.uniform(size=total) < 0.5
    month = r.integers(1, 13, size=total)
    gap0 = r.integers(18, 32, size=n_couples)
    u_cv = r.uniform(size=total)
    u_vage = r.uniform(size=total)
    e_years = r.normal(size=total)
    e_occ = r.normal(size=total)
    v_sel = r.normal(size=total)
    u_mig = r.uniform(0.02, 0.98, size=total)
    u_dis = r.uniform(size=total)
    u_onset = r.uniform(0.02, 0.98, size=total)
    u_discause = r.uniform(size=total)
    u_dcause = r.uniform(size=total)
    u_lit = r.uniform(size=total)
    nonsurv = r.beta(2.0, 8.0, size=total)
    unmarried = r.uniform(size=total) < 0.10
    sibdeath = r.uniform(size=total) < 0.05

    if generation == "G2":
        per_parent = params.direct_share_g2 * params.true_effect_years_g2
        a_v = med.child_vaccination_transmission
        b_v = 0.0 if a_v == 0.0 else (1.0 - params.direct_share_g2) * params.true_effect_years_g2 / a_v
        base_level = 55.0
    else:
        per_parent = 0.0  # the third generation's planted effect is per grandparent
        a_v = med.child_vaccination_transmission
        b_v = 0.0
        base_level = 58.0

    records: list[IndividualRecord] = []
    truth_rows = {"y1": [], "y0": [], "prob": [], "ids": []}
    next_id = id_base
    child_at = 0

    for c in range(n_couples):
        k = int(n_children[c])
        if k == 0:
            continue
        mom = females[c]
        dad = males[perm[c]]
        d_mom, d_dad = float(early(mom)), float(early(dad))
        if generation == "G2":
            ancestors = (mom.id, dad.id)
        else:
            ancestors = tuple(dict.fromkeys(mom.g1_ancestor_ids + dad.g1_ancestor_ids))
        cohort0 = max(mom.cohort, dad.cohort) + int(gap0[c])

        for j in range(k):
            i = child_at + j
            cv_prob = np.clip(0.18 + a_v * (d_mom + d_dad), 0.0, 1.0)
            child_vacc = bool(u_cv[i] < cv_prob)
            mid_occ = 0.5 * ((mom.occupational_score or 0.0) + (dad.occupational_score or 0.0))
            shared = (
                base_level
                + med.occupation_transmission * 0.1 * mid_occ
                + epi[c]
                + sd_years * e_years[i]
            )
            if generation == "G2":
                direct = per_parent * (d_mom + d_dad)
                y_realized = shared + direct + b_v * child_vacc
                # Mother-flip potential outcomes, mediator at its expectation.
                y1 = shared + per_parent * (1.0 + d_dad) + b_v * np.clip(0.18 + a_v * (1.0 + d_dad), 0, 1)
                y0 = shared + per_parent * (0.0 + d_dad) + b_v * np.clip(0.18 + a_v * (0.0 + d_dad), 0, 1)
            else:
                first_anc = float(ancestor_treated[ancestors[0]])
                d_total = float(sum(ancestor_treated[a] for a in ancestors))
                y_realized = shared + params.true_effect_years_g3 * d_total
                y1 = shared + params.true_effect_years_g3 * (d_total - first_anc + 1.0)
                y0 = shared + params.true_effect_years_g3 * (d_total - first_anc)

            death = max(float(y_realized), 0.1)
            y1 = max(float(y1), 0.1)
            y0 = max(float(y0), 0.1)

            rho = sel.outcome_error_corr
            u_s = rho * e_years[i] + np.sqrt(max(1.0 - rho * rho, 0.0)) * v_sel[i]
            latent = sel.base + sel.rye_coef * 1.0 + sel.month_coef * (month[i] - 6.5) + u_s
            migrate = latent > 0.0
            mig_age = 0.02 + u_mig[i] * death
            last_obs = float(mig_age if migrate else death)
            death_seen = not migrate

            disabled = u_dis[i] < np.clip(0.40 - 0.10 * child_vacc, 0.0, 1.0)
            onset = u_onset[i] * death
            onset_seen = bool(disabled and onset < last_obs - 1e-9 and onset > 0.0)
            cohort_j = cohort0 + 2 * j

            records.append(IndividualRecord(
                id=next_id,
                generation=generation,
                mother_id=mom.id,
                g1_ancestor_ids=ancestors,
                parish=mom.parish,
                region=mom.region,
                cohort=int(cohort_j),
                sex="female" if female[i] else "male",
                birth_month=int(month[i]),
                vaccinated_age=float(0.2 + 1.6 * u_vage[i]) if child_vacc else None,
                death_age=death if death_seen else None,
                last_observed_age=last_obs,
                disability_onset_age=float(onset) if onset_seen else None,
                disability_cause=("smallpox_related" if u_discause[i] < 0.3 else "other") if onset_seen else None,
                death_cause=("smallpox" if u_dcause[i] < 0.05 else "other") if death_seen else None,
                literacy_good=bool(u_lit[i] < np.clip(0.5 + 0.1 * child_vacc, 0.02, 0.98)),
                occupational_score=float(
                    20.0 + med.occupation_transmission * mid_occ + 0.6 * (d_mom + d_dad) + sd_occ * e_occ[i]
                ),
                family_covariates=(
                    float(dad.occupational_score or 0.0),
                    float(mom.occupational_score or 0.0),
                    float(bool(dad.literacy_good)),
                    float(bool(mom.literacy_good)),
                    float(nonsurv[i]),
                    float(unmarried[i]),
                    float(sibdeath[i]),
                ),
                midwife_assisted=None,
                child_vaccinated=child_vacc,
            ))
            truth_rows["ids"].append(next_id)
            truth_rows["y1"].append(y1)
            truth_rows["y0"].append(y0)
            truth_rows["prob"].append(float(cv_prob))
            next_id += 1
        child_at += k

    truth = {
        "ids": np.asarray(truth_rows["ids"], dtype=np.int64),
        "y1": np.asarray(truth_rows["y1"]),
        "y0": np.asarray(truth_rows["y0"]),
        "prob": np.asarray(truth_rows["prob"]),
    }
    return records, truth


def simulate_population(params: DgpParams) -> tuple[list[IndividualRecord], PanelContext, GroundTruth]:
    """Generate the full population. Deterministic given ``params.seed``."""
    _validate(params)
    panel, z, years = _build_panel(params)

    g1_records, g1_truth = _simulate_g1(params, panel, z, years)
    all_records = list(g1_records)
    ids = [g1_truth["ids"]]
    codes = [np.full(g1_truth["ids"].shape[0], 1, dtype=np.int64)]
    y1s = [g1_truth["y1"]]
    y0s = [g1_truth["y0"]]
    probs = [g1_truth["prob"]]

    ancestor_treated = {
        r.id: r.vaccinated_age is not None and r.vaccinated_age <= AGE_CUTOFF
        for r in g1_records
    }

    parents = g1_records
    for gen, base in (("G2", 1_000_000), ("G3", 2_000_000)):
        if gen not in params.generations:
            break
        gen_records, gen_truth = _simulate_offspring(params, gen, parents, base, ancestor_treated)
        all_records.extend(gen_records)
        ids.append(gen_truth["ids"])
        codes.append(np.full(gen_truth["ids"].shape[0], _GEN_CODE[gen], dtype=np.int64))
        y1s.append(gen_truth["y1"])
        y0s.append(gen_truth["y0"])
        probs.append(gen_truth["prob"])
        parents = gen_records

    treated_post = [
        r for r in g1_records
        if r.cohort >= POST_START and not (r.vaccinated_age is not None and r.vaccinated_age > AGE_CUTOFF)
    ]
    n_treated = sum(1 for r in treated_post if r.vaccinated_age is not None)
    summary = {
        "n_records": len(all_records),
        "n_g1": len(g1_records),
        "n_g2": int(sum(1 for r in all_records if r.generation == "G2")),
        "n_g3": int(sum(1 for r in all_records if r.generation == "G3")),
        "treated_share_post_reform": n_treated / max(len(treated_post), 1),
        "death_count": int(sum(1 for r in all_records if r.death_age is not None)),
        "migration_share": float(np.mean([r.death_age is None for r in all_records])),
        "max_instrument": float(z.max()),
        "mean_instrument_post_reform": float(z[:, years >= POST_START].mean()),
    }
    truth = GroundTruth(
        params=params,
        record_ids=np.concatenate(ids),
        generation_code=np.concatenate(codes),
        potential_treated=np.concatenate(y1s),
        potential_untreated=np.concatenate(y0s),
        assigned_prob=np.concatenate(probs),
        summary=summary,
    )
    return all_records, panel, truth


def write_population(
    records: Sequence[IndividualRecord],
    panel: PanelContext,
    truth: GroundTruth,
    out_dir: str | Path,
) -> dict[str, Path]:
    """Write individuals.csv, panel.csv and truth.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "individuals": out / "individuals.csv",
        "panel": out / "panel.csv",
        "truth": out / "truth.json",
    }
    write_microdata(records, panel, paths["individuals"], paths["panel"])
    payload = {
        "schema_version": 1,
        "params": asdict(truth.params),
        "summary": truth.summary,
    }
    with open(paths["truth"], "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


# ---------------------------------------------------------------------------
# Scenario presets: one planted violation or mechanism at a time.


def confounded_family_params(seed: int = 0) -> DgpParams:
    """Mother-level latent raising both vaccination and longevity, so the
    pooled estimator is biased and the sibling comparison is not."""
    return replace(
        DgpParams(seed=seed),
        n_parishes=30,
        n_families_per_parish=220,
        generations=("G1",),
        family_confounding=(0.18, 9.0),
    )


def migration_selection_params(seed: int = 0) -> DgpParams:
    """Out-migration correlated with the outcome noise and, through rye
    prices, with the exposure: naive fits on survivors are biased."""
    return replace(
        DgpParams(seed=seed),
        n_parishes=40,
        n_families_per_parish=200,
        generations=("G1",),
        selection_params=SelectionParams(
            base=-0.9,
            rye_coef=0.8,
            month_coef=0.25,
            outcome_error_corr=0.6,
            rye_instrument_loading=0.5,
            month_uptake_coef=0.12,
        ),
    )


def gompertz_hazard_params(seed: int = 0, confounded: bool = False) -> DgpParams:
    """Gompertz survival with a single planted hazard ratio; optionally an
    individual frailty that raises both vaccination and mortality.

    The confounded variant loads the frailty heavily on take-up and lightly
    on the hazard: the naive bias is first order in the product of the two
    loadings while the residual-inclusion bias is second order in the hazard
    loading, so this shape gives a sharp de-confounding contrast.
    """
    return replace(
        DgpParams(seed=seed),
        n_parishes=30,
        n_families_per_parish=120,
        generations=("G1",),
        mortality_mode="gompertz",
        treatment_link="logit",
        first_stage_slope=0.8,
        hazard_confounding=(2.5, 0.45) if confounded else (0.0, 0.0),
    )


def competing_risk_params(seed: int = 0) -> DgpParams:
    """Two causes with very different planted treatment multipliers."""
    base = gompertz_hazard_params(seed)
    return replace(
        base,
        n_families_per_parish=300,
        hazard_params=HazardParams(
            gompertz_shape=0.07,
            gompertz_rate=1.6e-3,
            cause_rate_shares={"smallpox": 0.40, "other": 0.60},
            cause_hr={"smallpox": 0.03, "other": 0.33},
        ),
    )
