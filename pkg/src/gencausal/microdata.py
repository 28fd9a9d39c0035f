"""Microdata layer: individual records, the parish-year panel, and derived samples.

The unit of observation is a person observed from birth (or from age two for
the oldest generation, whose outcomes are defined conditional on surviving to
the vaccination window). Records link three generations through mother ids
and first-generation ancestor ids, which is what the sibling comparisons,
the stacked descendant samples, and the mother-level mediator all rely on.

The parish-year panel carries the exposure-side series: church personnel
counts, the yearly national shift in those counts, and the parish covariates
used as controls and cointerventions. Two derived treatments come out of it:

* a shift-share exposure, lagged parish personnel times the national yearly
  shift, rescaled by a percentile range of its own raw distribution so a
  one-unit move is a meaningful slice of the exposure spread;
* a continuous pre-reform intensity, the parish mean personnel over a fixed
  pre-window divided by the cross-parish interquartile range, interacted
  with a post indicator for difference-in-differences.

Everything estimation-facing is assembled into :class:`AnalysisSample`
(rectangular, fully observed rows) or :class:`SpellTable` (one row per
at-risk spell), both immutable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "IndividualRecord",
    "PanelContext",
    "InstrumentTable",
    "DidIntensity",
    "AnalysisSample",
    "SpellTable",
    "load_microdata",
    "write_microdata",
    "validate_records",
    "construct_treatment",
    "build_instrument",
    "build_did_intensity",
    "build_spells",
    "build_analysis_sample",
    "build_stacked_sample",
    "HazardFrame",
    "build_hazard_frame",
]

GENERATIONS = ("G1", "G2", "G3")
SEXES = ("female", "male")
DEATH_CAUSES = ("smallpox", "other")
DISABILITY_CAUSES = ("smallpox_related", "other")

# Childhood vaccination is complete by this age; later procedures are
# excluded from analysis rather than treated as controls.
AGE_CUTOFF = 2.0
# First birth cohort with access to vaccination.
POST_START = 1801
# Oldest-generation outcomes condition on surviving to the cutoff, so their
# at-risk spells open there; descendants are followed from birth.
G1_ENTRY_AGE = 2.0

FAMILY_COVARIATE_NAMES = (
    "father_occ_score",
    "mother_occ_score",
    "father_literate",
    "mother_literate",
    "nonsurviving_share",
    "mother_unmarried",
    "sibling_external_death",
)

PARISH_COVARIATE_NAMES = (
    "midwives",
    "priests",
    "smallpox_death_rate",
    "urban_share",
    "students_per_capita",
    "rye_price",
)

OUTCOME_NAMES = (
    "years_lived",
    "disability_free_years",
    "literacy_good",
    "occupational_score",
)

CONTROL_SETS = ("none", "baseline", "full")


@dataclass(frozen=True)
class IndividualRecord:
    """One person. Optional fields are None when the event was never observed.

    ``last_observed_age`` closes the observation window: it equals
    ``death_age`` when the death was recorded and the out-migration age
    otherwise. ``family_covariates`` holds the parental background variables
    in the order of :data:`FAMILY_COVARIATE_NAMES`.
    """

    id: int
    generation: str
    mother_id: int
    g1_ancestor_ids: tuple[int, ...]
    parish: int
    region: int
    cohort: int
    sex: str
    birth_month: int
    vaccinated_age: float | None
    death_age: float | None
    last_observed_age: float
    disability_onset_age: float | None
    disability_cause: str | None
    death_cause: str | None
    literacy_good: bool | None
    occupational_score: float | None
    family_covariates: tuple[float, ...]
    midwife_assisted: bool | None
    child_vaccinated: bool | None
    treated: bool | None = None
    excluded: bool = False


@dataclass(frozen=True)
class PanelContext:
    """Parish-by-cohort panel, one row per (parish, cohort) cell.

    ``national_shift`` is the yearly relative change of the national
    personnel count and must be identical across parishes within a cohort.
    """

    parish: np.ndarray
    cohort: np.ndarray
    church_personnel: np.ndarray
    national_shift: np.ndarray
    midwives: np.ndarray
    priests: np.ndarray
    smallpox_death_rate: np.ndarray
    urban_share: np.ndarray
    students_per_capita: np.ndarray
    rye_price: np.ndarray
    potato_seeds_per_km2: np.ndarray

    def __post_init__(self) -> None:
        n = self.parish.shape[0]
        for name in self.__dataclass_fields__:
            if getattr(self, name).shape[0] != n:
                raise DataError(f"panel column {name} has mismatched length")
        pairs = set(zip(self.parish.tolist(), self.cohort.tolist()))
        if len(pairs) != n:
            raise DataError("panel has duplicate (parish, cohort) cells")
        for year in np.unique(self.cohort):
            shifts = self.national_shift[self.cohort == year]
            if np.ptp(shifts) > 0:
                raise DataError(f"national_shift varies across parishes in cohort {int(year)}")

    def cell_index(self) -> dict[tuple[int, int], int]:
        return {
            (int(p), int(t)): i
            for i, (p, t) in enumerate(zip(self.parish, self.cohort))
        }

    def cohort_window(self) -> tuple[int, int]:
        return int(self.cohort.min()), int(self.cohort.max())


@dataclass(frozen=True)
class InstrumentTable:
    """Shift-share exposure per (parish, cohort), with its rescaling divisor."""

    parish: np.ndarray
    cohort: np.ndarray
    value: np.ndarray
    divisor: float
    quantiles: tuple[float, float]

    def lookup(self) -> dict[tuple[int, int], float]:
        return {
            (int(p), int(t)): float(v)
            for p, t, v in zip(self.parish, self.cohort, self.value)
        }


@dataclass(frozen=True)
class DidIntensity:
    """Continuous pre-reform treatment intensity per parish."""

    by_parish: dict[int, float]
    iqr: float
    pre_window: tuple[int, int]

    def regressor(self, parishes: np.ndarray, cohorts: np.ndarray, post_start: int = POST_START) -> np.ndarray:
        intensity = np.array([self.by_parish[int(p)] for p in parishes])
        return intensity * (np.asarray(cohorts) >= post_start)


@dataclass(frozen=True)
class AnalysisSample:
    """Rectangular estimation sample; every row is fully observed.

    ``stacked`` marks descendant samples with one row per (child, ancestor)
    pair, in which case parish/cohort/region and the treatment, instrument
    and cluster columns describe the ancestor while the outcome and controls
    describe the child.
    """

    record_ids: np.ndarray
    outcome: np.ndarray
    outcome_name: str
    treatment: np.ndarray
    instrument: np.ndarray | None
    controls: np.ndarray
    control_names: tuple[str, ...]
    parish: np.ndarray
    cohort: np.ndarray
    region: np.ndarray
    mother_ids: np.ndarray
    cluster_ids: np.ndarray
    generation: str
    control_set: str
    fe_factors: tuple[str, ...]
    stacked: bool = False

    def __post_init__(self) -> None:
        n = self.outcome.shape[0]
        if n == 0:
            raise DataError("analysis sample has no rows")
        cols = [self.record_ids, self.treatment, self.parish, self.cohort,
                self.region, self.mother_ids, self.cluster_ids]
        if self.instrument is not None:
            cols.append(self.instrument)
        for c in cols:
            if c.shape[0] != n:
                raise DataError("analysis sample columns have mismatched lengths")
        if self.controls.shape[0] != n or self.controls.shape[1] != len(self.control_names):
            raise DataError("control matrix does not match its names")
        finite = [self.outcome, self.treatment, self.controls]
        if self.instrument is not None:
            finite.append(self.instrument)
        for c in finite:
            if not np.all(np.isfinite(c)):
                raise DataError("analysis sample contains non-finite values")

    @property
    def n_obs(self) -> int:
        return int(self.outcome.shape[0])

    def factor(self, name: str) -> np.ndarray:
        """Label array for a fixed-effect factor, by name."""
        if name == "parish":
            return self.parish
        if name == "cohort":
            return self.cohort
        if name == "region_cohort":
            return self.region.astype(np.int64) * 100_000 + self.cohort.astype(np.int64)
        if name == "mother":
            return self.mother_ids
        raise KeyError(f"unknown fixed-effect factor {name!r}")


@dataclass(frozen=True)
class SpellTable:
    """At-risk spells for hazard models, one row per person (and per cause
    when stacked by cause).

    ``event`` is 1 when the spell ends in the modelled event; on cause-stacked
    tables it is 1 only on the row whose ``cause`` matches the recorded one.
    """

    record_ids: np.ndarray
    entry_age: np.ndarray
    exit_age: np.ndarray
    event: np.ndarray
    cause: tuple[str, ...] | None
    cause_code: np.ndarray | None
    event_kind: str

    def __post_init__(self) -> None:
        if np.any(self.exit_age <= self.entry_age):
            raise DataError("every spell must have entry < exit")
        if not np.all((self.event == 0) | (self.event == 1)):
            raise DataError("spell events must be 0 or 1")

    @property
    def n_rows(self) -> int:
        return int(self.record_ids.shape[0])


# ---------------------------------------------------------------------------
# CSV schemas


_INDIVIDUAL_COLUMNS = (
    "id", "generation", "mother_id", "g1_ancestor_ids", "parish", "region",
    "cohort", "sex", "birth_month", "vaccinated_age", "death_age",
    "last_observed_age", "disability_onset_age", "disability_cause",
    "death_cause", "literacy_good", "occupational_score",
) + FAMILY_COVARIATE_NAMES + ("midwife_assisted", "child_vaccinated")

_PANEL_COLUMNS = (
    "parish", "cohort", "church_personnel", "national_shift", "midwives",
    "priests", "smallpox_death_rate", "urban_share", "students_per_capita",
    "rye_price", "potato_seeds_per_km2",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _opt_float(text: str, what: str, row: int, problems: list[str]) -> float | None:
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        problems.append(f"row {row}: {what} is not a number: {text!r}")
        return None


def _opt_bool(text: str, what: str, row: int, problems: list[str]) -> bool | None:
    if text == "":
        return None
    if text in ("0", "1"):
        return text == "1"
    problems.append(f"row {row}: {what} must be 0 or 1: {text!r}")
    return None


def write_microdata(
    records: Sequence[IndividualRecord],
    panel: PanelContext,
    individuals_path: str | Path,
    panel_path: str | Path,
) -> None:
    """Write the canonical CSV pair. Floats use shortest round-trip repr, so
    a write/read cycle reproduces every value bit for bit."""
    with open(individuals_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_INDIVIDUAL_COLUMNS)
        for r in records:
            fam = {name: v for name, v in zip(FAMILY_COVARIATE_NAMES, r.family_covariates)}
            row = {
                "id": r.id,
                "generation": r.generation,
                "mother_id": r.mother_id,
                "g1_ancestor_ids": ";".join(str(a) for a in r.g1_ancestor_ids),
                "parish": r.parish,
                "region": r.region,
                "cohort": r.cohort,
                "sex": r.sex,
                "birth_month": r.birth_month,
                "vaccinated_age": r.vaccinated_age,
                "death_age": r.death_age,
                "last_observed_age": r.last_observed_age,
                "disability_onset_age": r.disability_onset_age,
                "disability_cause": r.disability_cause,
                "death_cause": r.death_cause,
                "literacy_good": r.literacy_good,
                "occupational_score": r.occupational_score,
                "midwife_assisted": r.midwife_assisted,
                "child_vaccinated": r.child_vaccinated,
                **fam,
            }
            writer.writerow([_fmt(row[c]) for c in _INDIVIDUAL_COLUMNS])
    with open(panel_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_PANEL_COLUMNS)
        personnel = panel.church_personnel
        for i in range(panel.parish.shape[0]):
            writer.writerow([
                int(panel.parish[i]), int(panel.cohort[i]), repr(float(personnel[i])),
                repr(float(panel.national_shift[i])), repr(float(panel.midwives[i])),
                repr(float(panel.priests[i])), repr(float(panel.smallpox_death_rate[i])),
                repr(float(panel.urban_share[i])), repr(float(panel.students_per_capita[i])),
                repr(float(panel.rye_price[i])), repr(float(panel.potato_seeds_per_km2[i])),
            ])


def load_microdata(
    individuals_path: str | Path,
    panel_path: str | Path,
    schema: Mapping[str, str] | None = None,
) -> tuple[list[IndividualRecord], PanelContext]:
    """Read the CSV pair, validating every row.

    Parameters
    ----------
    schema : mapping, optional
        Renames for foreign files, logical name to actual column name
        (for the individuals file only). Unknown logical names are rejected.

    Raises
    ------
    DataError
        Listing each malformed row by number, or any record-level invariant
        violation found by :func:`validate_records`.
    """
    colmap = {c: c for c in _INDIVIDUAL_COLUMNS}
    if schema:
        for logical, actual in schema.items():
            if logical not in colmap:
                raise DataError(f"schema maps unknown column {logical!r}")
            colmap[logical] = actual

    problems: list[str] = []
    records: list[IndividualRecord] = []
    with open(individuals_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or ())
        missing = [actual for actual in colmap.values() if actual not in header]
        if missing:
            raise DataError(f"individuals file lacks columns: {missing}")
        for rownum, raw in enumerate(reader, start=2):
            get = lambda logical: raw[colmap[logical]].strip()
            try:
                rid = int(get("id"))
                mother = int(get("mother_id"))
                parish = int(get("parish"))
                region = int(get("region"))
                cohort = int(get("cohort"))
                month = int(get("birth_month"))
            except ValueError:
                problems.append(f"row {rownum}: id/mother_id/parish/region/cohort/birth_month must be integers")
                continue
            anc_text = get("g1_ancestor_ids")
            try:
                ancestors = tuple(int(a) for a in anc_text.split(";") if a != "")
            except ValueError:
                problems.append(f"row {rownum}: malformed g1_ancestor_ids {anc_text!r}")
                ancestors = ()
            fam_vals: list[float] = []
            for name in FAMILY_COVARIATE_NAMES:
                v = _opt_float(get(name), name, rownum, problems)
                if v is None:
                    problems.append(f"row {rownum}: {name} is required")
                    v = 0.0
                fam_vals.append(v)
            fam = tuple(fam_vals)
            occ = _opt_float(get("occupational_score"), "occupational_score", rownum, problems)
            last_obs = _opt_float(get("last_observed_age"), "last_observed_age", rownum, problems)
            if last_obs is None:
                problems.append(f"row {rownum}: last_observed_age is required")
                last_obs = 0.0
            records.append(IndividualRecord(
                id=rid,
                generation=get("generation"),
                mother_id=mother,
                g1_ancestor_ids=ancestors,
                parish=parish,
                region=region,
                cohort=cohort,
                sex=get("sex"),
                birth_month=month,
                vaccinated_age=_opt_float(get("vaccinated_age"), "vaccinated_age", rownum, problems),
                death_age=_opt_float(get("death_age"), "death_age", rownum, problems),
                last_observed_age=last_obs,
                disability_onset_age=_opt_float(get("disability_onset_age"), "disability_onset_age", rownum, problems),
                disability_cause=get("disability_cause") or None,
                death_cause=get("death_cause") or None,
                literacy_good=_opt_bool(get("literacy_good"), "literacy_good", rownum, problems),
                occupational_score=occ,
                family_covariates=fam,
                midwife_assisted=_opt_bool(get("midwife_assisted"), "midwife_assisted", rownum, problems),
                child_vaccinated=_opt_bool(get("child_vaccinated"), "child_vaccinated", rownum, problems),
            ))
    if problems:
        raise DataError("malformed individuals file:\n" + "\n".join(problems[:20]))

    panel = _load_panel(panel_path)
    violations = validate_records(records, panel)
    if violations:
        raise DataError("invalid records:\n" + "\n".join(violations[:20]))
    return records, panel


def _load_panel(path: str | Path) -> PanelContext:
    columns: dict[str, list[float]] = {c: [] for c in _PANEL_COLUMNS}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or ())
        missing = [c for c in _PANEL_COLUMNS if c not in header]
        if missing:
            raise DataError(f"panel file lacks columns: {missing}")
        for rownum, raw in enumerate(reader, start=2):
            for c in _PANEL_COLUMNS:
                try:
                    columns[c].append(float(raw[c]))
                except ValueError:
                    raise DataError(f"panel row {rownum}: column {c} is not a number: {raw[c]!r}") from None
    return PanelContext(
        parish=np.asarray(columns["parish"], dtype=np.int64),
        cohort=np.asarray(columns["cohort"], dtype=np.int64),
        church_personnel=np.asarray(columns["church_personnel"], dtype=np.float64),
        national_shift=np.asarray(columns["national_shift"], dtype=np.float64),
        midwives=np.asarray(columns["midwives"], dtype=np.float64),
        priests=np.asarray(columns["priests"], dtype=np.float64),
        smallpox_death_rate=np.asarray(columns["smallpox_death_rate"], dtype=np.float64),
        urban_share=np.asarray(columns["urban_share"], dtype=np.float64),
        students_per_capita=np.asarray(columns["students_per_capita"], dtype=np.float64),
        rye_price=np.asarray(columns["rye_price"], dtype=np.float64),
        potato_seeds_per_km2=np.asarray(columns["potato_seeds_per_km2"], dtype=np.float64),
    )


def validate_records(
    records: Sequence[IndividualRecord],
    panel: PanelContext | None = None,
) -> list[str]:
    """Return every record-level invariant violation, one message per finding."""
    problems: list[str] = []
    seen: set[int] = set()
    window = panel.cohort_window() if panel is not None else None
    for r in records:
        tag = f"record {r.id}"
        if r.id in seen:
            problems.append(f"{tag}: duplicate id")
        seen.add(r.id)
        if r.generation not in GENERATIONS:
            problems.append(f"{tag}: unknown generation {r.generation!r}")
        if r.sex not in SEXES:
            problems.append(f"{tag}: unknown sex {r.sex!r}")
        if not 1 <= r.birth_month <= 12:
            problems.append(f"{tag}: birth_month out of range")
        if r.generation == "G1" and r.g1_ancestor_ids:
            problems.append(f"{tag}: oldest generation cannot have first-generation ancestors")
        if r.generation != "G1" and not r.g1_ancestor_ids:
            problems.append(f"{tag}: descendant record lacks first-generation ancestors")
        if r.generation == "G1" and window is not None and not window[0] <= r.cohort <= window[1]:
            problems.append(f"{tag}: cohort {r.cohort} outside panel window {window}")
        if r.vaccinated_age is not None and r.vaccinated_age < 0:
            problems.append(f"{tag}: negative vaccinated_age")
        if r.last_observed_age <= 0:
            problems.append(f"{tag}: last_observed_age must be positive")
        if r.death_age is not None and abs(r.death_age - r.last_observed_age) > 1e-9:
            problems.append(f"{tag}: observed death must close the observation window")
        if r.disability_onset_age is not None and r.disability_onset_age > r.last_observed_age + 1e-9:
            problems.append(f"{tag}: disability onset after the observation window")
        if r.death_cause is not None and r.death_cause not in DEATH_CAUSES:
            problems.append(f"{tag}: unknown death cause {r.death_cause!r}")
        if r.disability_cause is not None and r.disability_cause not in DISABILITY_CAUSES:
            problems.append(f"{tag}: unknown disability cause {r.disability_cause!r}")
        if len(r.family_covariates) != len(FAMILY_COVARIATE_NAMES):
            problems.append(f"{tag}: family covariate vector has wrong length")
        elif not all(np.isfinite(v) for v in r.family_covariates):
            problems.append(f"{tag}: non-finite family covariate")
    return problems


# ---------------------------------------------------------------------------
# Treatment and exposures


def construct_treatment(
    records: Sequence[IndividualRecord],
    age_cutoff: float = AGE_CUTOFF,
) -> list[IndividualRecord]:
    """Assign treatment status from the vaccination age.

    Treated means vaccinated at or before ``age_cutoff`` (inclusive); never
    vaccinated means untreated. Vaccinated later than the cutoff is neither:
    those records are flagged ``excluded`` and dropped by the sample
    builders, because a late procedure is not childhood protection and using
    such people as controls would contaminate the comparison.
    """
    out: list[IndividualRecord] = []
    for r in records:
        if r.vaccinated_age is None:
            out.append(replace(r, treated=False, excluded=False))
        elif r.vaccinated_age <= age_cutoff:
            out.append(replace(r, treated=True, excluded=False))
        else:
            out.append(replace(r, treated=None, excluded=True))
    return out


def build_instrument(
    panel: PanelContext,
    rescale_quantiles: tuple[float, float] = (0.05, 0.95),
) -> InstrumentTable:
    """Shift-share exposure per (parish, cohort).

    Raw value: previous-year parish personnel times the national yearly
    shift. The raw distribution (zeros included; parishes without personnel
    are a genuine null-exposure group) is rescaled by the gap between its
    upper and lower ``rescale_quantiles`` so coefficients read per
    percentile-range unit.

    Raises
    ------
    DataError
        If any parish lacks its previous-year personnel row, or the
        percentile range is degenerate.
    """
    lo_q, hi_q = rescale_quantiles
    if not 0.0 <= lo_q < hi_q <= 1.0:
        raise DataError(f"bad rescale quantiles {rescale_quantiles}")
    index = panel.cell_index()
    first = int(panel.cohort.min())
    parishes: list[int] = []
    cohorts: list[int] = []
    raw: list[float] = []
    for i in range(panel.parish.shape[0]):
        t = int(panel.cohort[i])
        if t == first:
            continue
        p = int(panel.parish[i])
        prev = index.get((p, t - 1))
        if prev is None:
            raise DataError(f"parish {p} lacks personnel for year {t - 1}")
        parishes.append(p)
        cohorts.append(t)
        raw.append(float(panel.church_personnel[prev]) * float(panel.national_shift[i]))
    values = np.asarray(raw, dtype=np.float64)
    qlo, qhi = np.quantile(values, [lo_q, hi_q])
    divisor = float(qhi - qlo)
    if divisor <= 0.0:
        raise DataError("instrument percentile range is degenerate; cannot rescale")
    return InstrumentTable(
        parish=np.asarray(parishes, dtype=np.int64),
        cohort=np.asarray(cohorts, dtype=np.int64),
        value=values / divisor,
        divisor=divisor,
        quantiles=rescale_quantiles,
    )


def build_did_intensity(
    panel: PanelContext,
    pre_window: tuple[int, int] = (1790, 1800),
    iqr_quantiles: tuple[float, float] = (0.25, 0.75),
) -> DidIntensity:
    """Continuous treatment intensity: pre-window mean personnel per parish,
    divided by the cross-parish interquartile range of those means."""
    lo, hi = pre_window
    mask = (panel.cohort >= lo) & (panel.cohort <= hi)
    if not np.any(mask):
        raise DataError(f"panel has no cells in the pre-window {pre_window}")
    means: dict[int, float] = {}
    for p in np.unique(panel.parish):
        rows = mask & (panel.parish == p)
        if not np.any(rows):
            raise DataError(f"parish {int(p)} has no pre-window personnel")
        means[int(p)] = float(panel.church_personnel[rows].mean())
    values = np.asarray(list(means.values()))
    q1, q3 = np.quantile(values, list(iqr_quantiles))
    iqr = float(q3 - q1)
    if iqr <= 0.0:
        raise DataError("cross-parish interquartile range is zero; intensity undefined")
    return DidIntensity(
        by_parish={p: v / iqr for p, v in means.items()},
        iqr=iqr,
        pre_window=pre_window,
    )


# ---------------------------------------------------------------------------
# Spells


def build_spells(
    records: Sequence[IndividualRecord],
    cause_mode: str = "all_cause",
    event_kind: str = "death",
) -> SpellTable:
    """At-risk spells for hazard models.

    Oldest-generation spells open at age two (their outcomes condition on
    surviving to the vaccination window); descendants are followed from
    birth. For ``event_kind="disability"`` the spell closes at disability
    onset when one was observed and is otherwise censored at the end of
    observation. ``cause_mode="competing"`` duplicates each spell once per
    cause with the event lit only on the matching row, which is the input
    the cause-stratified competing-risk fit expects.
    """
    if cause_mode not in ("all_cause", "competing"):
        raise DataError(f"unknown cause_mode {cause_mode!r}")
    if event_kind not in ("death", "disability"):
        raise DataError(f"unknown event_kind {event_kind!r}")
    causes = DEATH_CAUSES if event_kind == "death" else DISABILITY_CAUSES

    ids: list[int] = []
    entry: list[float] = []
    exit_: list[float] = []
    event: list[int] = []
    cause_codes: list[int] = []

    for r in records:
        start = G1_ENTRY_AGE if r.generation == "G1" else 0.0
        if event_kind == "death":
            end = r.last_observed_age
            happened = r.death_age is not None
            cause = r.death_cause
        else:
            if r.disability_onset_age is not None:
                end = r.disability_onset_age
                happened = True
                cause = r.disability_cause
            else:
                end = r.last_observed_age
                happened = False
                cause = None
        if end <= start:
            raise DataError(f"record {r.id}: observation ends at or before the spell entry")
        if happened and cause is None:
            raise DataError(f"record {r.id}: event without a recorded cause")
        if cause_mode == "all_cause":
            ids.append(r.id)
            entry.append(start)
            exit_.append(end)
            event.append(1 if happened else 0)
            cause_codes.append(-1)
        else:
            for code, label in enumerate(causes):
                ids.append(r.id)
                entry.append(start)
                exit_.append(end)
                event.append(1 if happened and cause == label else 0)
                cause_codes.append(code)

    return SpellTable(
        record_ids=np.asarray(ids, dtype=np.int64),
        entry_age=np.asarray(entry, dtype=np.float64),
        exit_age=np.asarray(exit_, dtype=np.float64),
        event=np.asarray(event, dtype=np.int64),
        cause=causes if cause_mode == "competing" else None,
        cause_code=np.asarray(cause_codes, dtype=np.int64) if cause_mode == "competing" else None,
        event_kind=event_kind,
    )


# ---------------------------------------------------------------------------
# Analysis samples


def _extract_outcome(r: IndividualRecord, outcome: str) -> float | None:
    if outcome == "years_lived":
        if r.death_age is None:
            return None
        start = G1_ENTRY_AGE if r.generation == "G1" else 0.0
        return r.death_age - start
    if outcome == "disability_free_years":
        start = G1_ENTRY_AGE if r.generation == "G1" else 0.0
        if r.disability_onset_age is not None:
            return r.disability_onset_age - start
        if r.death_age is not None:
            return r.death_age - start
        return None
    if outcome == "literacy_good":
        return None if r.literacy_good is None else float(r.literacy_good)
    if outcome == "occupational_score":
        return r.occupational_score
    raise DataError(f"unknown outcome {outcome!r}")


def _individual_controls(r: IndividualRecord) -> list[float]:
    return [1.0 if r.sex == "female" else 0.0, *r.family_covariates]


_INDIVIDUAL_CONTROL_NAMES = ("female",) + FAMILY_COVARIATE_NAMES


def _interact_with_cohorts(
    base: np.ndarray,
    base_names: Sequence[str],
    cohorts: np.ndarray,
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Full interaction of each column with cohort indicators (no main
    effects; the interactions span them)."""
    years = np.unique(cohorts)
    blocks = []
    names: list[str] = []
    for j, var in enumerate(base_names):
        for y in years:
            blocks.append(base[:, j] * (cohorts == y))
            names.append(f"{var}_x_{int(y)}")
    return np.column_stack(blocks), tuple(names)


def _control_block(
    rows: Sequence[IndividualRecord],
    cohorts_for_interaction: np.ndarray,
    panel: PanelContext,
    own_cells: Sequence[tuple[int, int]],
    control_set: str,
) -> tuple[np.ndarray, tuple[str, ...]]:
    n = len(rows)
    if control_set in ("none", "baseline"):
        return np.empty((n, 0)), ()
    indiv = np.asarray([_individual_controls(r) for r in rows], dtype=np.float64)
    index = panel.cell_index()
    parish_cols = np.empty((n, len(PARISH_COVARIATE_NAMES)))
    for i, cell in enumerate(own_cells):
        at = index.get(cell)
        if at is None:
            raise DataError(f"panel lacks cell {cell} needed for controls")
        parish_cols[i] = [getattr(panel, name)[at] for name in PARISH_COVARIATE_NAMES]
    base = np.column_stack([indiv, parish_cols])
    base_names = _INDIVIDUAL_CONTROL_NAMES + PARISH_COVARIATE_NAMES
    return _interact_with_cohorts(base, base_names, cohorts_for_interaction)


def _fe_factors_for(control_set: str) -> tuple[str, ...]:
    if control_set == "none":
        return ()
    return ("parish", "cohort", "region_cohort")


def build_analysis_sample(
    records: Sequence[IndividualRecord],
    panel: PanelContext,
    outcome: str,
    control_set: str = "baseline",
    instrument: InstrumentTable | None = None,
    generation: str = "G1",
) -> AnalysisSample:
    """Own-generation estimation sample.

    Keeps records of the requested generation with a defined treatment
    status (late vaccinations are excluded) and an observed outcome; joins
    the shift-share exposure at the record's own (parish, cohort) when an
    instrument table is supplied. Cluster ids are the parish of birth.
    """
    if control_set not in CONTROL_SETS:
        raise DataError(f"unknown control set {control_set!r}")
    if outcome not in OUTCOME_NAMES:
        raise DataError(f"unknown outcome {outcome!r}")
    inst_map = instrument.lookup() if instrument is not None else None

    rows: list[IndividualRecord] = []
    y: list[float] = []
    z: list[float] = []
    for r in records:
        if r.generation != generation or r.excluded or r.treated is None:
            continue
        value = _extract_outcome(r, outcome)
        if value is None:
            continue
        if inst_map is not None:
            zv = inst_map.get((r.parish, r.cohort))
            if zv is None:
                raise DataError(f"no instrument value for parish {r.parish}, cohort {r.cohort}")
            z.append(zv)
        rows.append(r)
        y.append(value)
    if not rows:
        raise DataError(f"no usable rows for outcome {outcome!r} in generation {generation}")

    cohorts = np.asarray([r.cohort for r in rows], dtype=np.int64)
    own_cells = [(r.parish, r.cohort) for r in rows]
    controls, control_names = _control_block(rows, cohorts, panel, own_cells, control_set)
    return AnalysisSample(
        record_ids=np.asarray([r.id for r in rows], dtype=np.int64),
        outcome=np.asarray(y, dtype=np.float64),
        outcome_name=outcome,
        treatment=np.asarray([float(r.treated) for r in rows]),
        instrument=np.asarray(z) if inst_map is not None else None,
        controls=controls,
        control_names=control_names,
        parish=np.asarray([r.parish for r in rows], dtype=np.int64),
        cohort=cohorts,
        region=np.asarray([r.region for r in rows], dtype=np.int64),
        mother_ids=np.asarray([r.mother_id for r in rows], dtype=np.int64),
        cluster_ids=np.asarray([r.parish for r in rows], dtype=np.int64),
        generation=generation,
        control_set=control_set,
        fe_factors=_fe_factors_for(control_set),
        stacked=False,
    )


def build_stacked_sample(
    records: Sequence[IndividualRecord],
    panel: PanelContext,
    outcome: str,
    generation: str,
    control_set: str = "baseline",
    instrument: InstrumentTable | None = None,
) -> AnalysisSample:
    """Descendant sample stacked by first-generation ancestor.

    Each child contributes one row per linked ancestor. Treatment,
    instrument, parish, cohort, region and the cluster id all describe the
    ancestor (the exposure side); the outcome, controls and mother id
    describe the child. Ancestors without a defined treatment status drop
    their rows only.
    """
    if generation not in ("G2", "G3"):
        raise DataError("stacked samples are for descendant generations")
    if control_set not in CONTROL_SETS:
        raise DataError(f"unknown control set {control_set!r}")
    by_id = {r.id: r for r in records}
    inst_map = instrument.lookup() if instrument is not None else None

    child_rows: list[IndividualRecord] = []
    anc_rows: list[IndividualRecord] = []
    y: list[float] = []
    z: list[float] = []
    for r in records:
        if r.generation != generation:
            continue
        value = _extract_outcome(r, outcome)
        if value is None:
            continue
        for aid in r.g1_ancestor_ids:
            anc = by_id.get(aid)
            if anc is None:
                raise DataError(f"record {r.id} links to missing ancestor {aid}")
            if anc.excluded or anc.treated is None:
                continue
            if inst_map is not None:
                zv = inst_map.get((anc.parish, anc.cohort))
                if zv is None:
                    raise DataError(f"no instrument value for parish {anc.parish}, cohort {anc.cohort}")
                z.append(zv)
            child_rows.append(r)
            anc_rows.append(anc)
            y.append(value)
    if not child_rows:
        raise DataError(f"no usable stacked rows for outcome {outcome!r} in {generation}")

    anc_cohorts = np.asarray([a.cohort for a in anc_rows], dtype=np.int64)
    anc_cells = [(a.parish, a.cohort) for a in anc_rows]
    controls, control_names = _control_block(child_rows, anc_cohorts, panel, anc_cells, control_set)
    return AnalysisSample(
        record_ids=np.asarray([r.id for r in child_rows], dtype=np.int64),
        outcome=np.asarray(y, dtype=np.float64),
        outcome_name=outcome,
        treatment=np.asarray([float(a.treated) for a in anc_rows]),
        instrument=np.asarray(z) if inst_map is not None else None,
        controls=controls,
        control_names=control_names,
        parish=np.asarray([a.parish for a in anc_rows], dtype=np.int64),
        cohort=anc_cohorts,
        region=np.asarray([a.region for a in anc_rows], dtype=np.int64),
        mother_ids=np.asarray([r.mother_id for r in child_rows], dtype=np.int64),
        cluster_ids=np.asarray([a.parish for a in anc_rows], dtype=np.int64),
        generation=generation,
        control_set=control_set,
        fe_factors=_fe_factors_for(control_set),
        stacked=True,
    )


@dataclass(frozen=True)
class HazardFrame:
    """Row-aligned inputs for the hazard estimators.

    One block of arrays aligned with ``spells`` (for cause-stacked spells the
    subject-level columns are repeated on every cause row of the subject).
    """

    spells: SpellTable
    record_ids: np.ndarray
    treatment: np.ndarray
    instrument: np.ndarray | None
    parish: np.ndarray
    cohort: np.ndarray
    region: np.ndarray
    mother_ids: np.ndarray
    cluster_ids: np.ndarray

    @property
    def n_rows(self) -> int:
        return int(self.spells.n_rows)


def build_hazard_frame(
    records: Sequence[IndividualRecord],
    panel: PanelContext | None = None,
    instrument: InstrumentTable | None = None,
    generation: str = "G1",
    cause_mode: str = "all_cause",
    event_kind: str = "death",
) -> HazardFrame:
    """Spells plus aligned treatment, exposure, and clustering columns.

    Records without an assigned treatment status (late vaccinations are
    excluded by :func:`construct_treatment`) are dropped; censored spells are
    kept, which is the point of estimating on spells rather than on realized
    lifespans.
    """
    kept = [
        r for r in records
        if r.generation == generation and not r.excluded and r.treated is not None
    ]
    if not kept:
        raise DataError(f"no usable {generation} records for the hazard frame")
    spells = build_spells(kept, cause_mode=cause_mode, event_kind=event_kind)

    per_subject = {r.id: r for r in kept}
    ids = spells.record_ids
    rows = [per_subject[int(i)] for i in ids]
    z = None
    if instrument is not None:
        zmap = instrument.lookup()
        missing = [(r.parish, r.cohort) for r in rows if (r.parish, r.cohort) not in zmap]
        if missing:
            raise DataError(f"instrument has no cell for {missing[0]}")
        z = np.asarray([zmap[(r.parish, r.cohort)] for r in rows], dtype=np.float64)
    parish = np.asarray([r.parish for r in rows], dtype=np.int64)
    return HazardFrame(
        spells=spells,
        record_ids=ids,
        treatment=np.asarray([float(r.treated) for r in rows]),
        instrument=z,
        parish=parish,
        cohort=np.asarray([r.cohort for r in rows], dtype=np.int64),
        region=np.asarray([r.region for r in rows], dtype=np.int64),
        mother_ids=np.asarray([r.mother_id for r in rows], dtype=np.int64),
        cluster_ids=parish,
    )
