"""Pipeline driver: simulate, estimate, mediate and report subcommands.

Configuration is one JSON document with an explicit schema version; the
``--seed``, ``--out`` and ``--jobs`` flags override the matching scalars.
Every number written to report.json comes from calling a library operation
with the config's parameters; the driver only assembles inputs, isolates
per-cell failures, and serializes results with sorted keys so a rerun with
the same seed reproduces the file byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, is_dataclass
from pathlib import Path
from threading import RLock

import numpy as np

from . import duration, mediation, quasi_exp
from .dgp import (
    DgpParams,
    competing_risk_params,
    confounded_family_params,
    gompertz_hazard_params,
    migration_selection_params,
    simulate_population,
    write_population,
)
from .errors import ConfigError, DataError, EstimationError
from .microdata import (
    CONTROL_SETS,
    OUTCOME_NAMES,
    POST_START,
    build_analysis_sample,
    build_did_intensity,
    build_hazard_frame,
    build_instrument,
    build_stacked_sample,
    construct_treatment,
    load_microdata,
)
from .regress import ols

SCHEMA_VERSION = 1

PRESETS = {
    "default": lambda seed: DgpParams(seed=seed),
    "confounded_family": confounded_family_params,
    "migration_selection": migration_selection_params,
    "gompertz": gompertz_hazard_params,
    "gompertz_confounded": lambda seed: gompertz_hazard_params(seed, confounded=True),
    "competing": competing_risk_params,
}

ESTIMATORS = (
    "naive_ols",
    "mother_fe",
    "did",
    "event_study",
    "tsls",
    "heckman",
    "ils",
    "tsri_hazard",
    "competing_risks",
    "survival",
)

MEDIATORS = ("child_vaccination", "midwife_assistance", "occupational_score", "epigenetic")

_MEDIATOR_FIELDS = {
    "child_vaccination": "child_vaccinated",
    "midwife_assistance": "midwife_assisted",
    "occupational_score": "occupational_score",
}

_EPIGENETIC_FIELDS = {
    "years_lived": "death_age",
    "literacy_good": "literacy_good",
    "occupational_score": "occupational_score",
}

GENERATIONS = ("G1", "G2", "G3")

SURVIVAL_BANDS = ((2.0, 20.0), (20.0, 50.0), (50.0, 100.0))

_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "out_dir": "run_out",
    "simulate": {"preset": "default", "overrides": {}},
    "inputs": None,
    "estimators": list(ESTIMATORS),
    "outcomes": ["years_lived", "literacy_good", "occupational_score"],
    "generations": list(GENERATIONS),
    "controls": "baseline",
    "mediators": list(MEDIATORS),
    "n_draws": 1000,
    "n_reps": 200,
    "jobs": 1,
}


@dataclass(frozen=True)
class RunConfig:
    """One validated pipeline run.

    Exactly one of ``simulate`` and ``inputs`` is set: a run either builds
    its population from a preset with overrides or loads the CSV pair.
    """

    seed: int
    out_dir: str
    simulate: dict | None
    inputs: dict | None
    estimators: tuple[str, ...]
    outcomes: tuple[str, ...]
    generations: tuple[str, ...]
    controls: str
    mediators: tuple[str, ...]
    n_draws: int
    n_reps: int
    jobs: int


def _subset(name: str, values, allowed) -> tuple[str, ...]:
    out = tuple(values)
    for v in out:
        if v not in allowed:
            raise ConfigError(f"unknown {name} {v!r}; allowed: {', '.join(allowed)}")
    if len(set(out)) != len(out):
        raise ConfigError(f"duplicate entries in {name}")
    return out


def load_config(document: dict) -> RunConfig:
    """Validate a config document, failing closed on anything unknown."""
    if not isinstance(document, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(document) - set(_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = {**_DEFAULTS, **document}
    if merged["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {merged['schema_version']!r} is not supported "
            f"(this build reads version {SCHEMA_VERSION})"
        )
    simulate, inputs = merged["simulate"], merged["inputs"]
    if "inputs" in document and inputs is not None and "simulate" not in document:
        simulate = None
    if (simulate is None) == (inputs is None):
        raise ConfigError("exactly one of 'simulate' and 'inputs' must be set")
    if simulate is not None:
        bad = sorted(set(simulate) - {"preset", "overrides"})
        if bad:
            raise ConfigError(f"unknown simulate keys: {', '.join(bad)}")
        preset = simulate.get("preset", "default")
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; have {', '.join(sorted(PRESETS))}")
        overrides = simulate.get("overrides", {})
        if not isinstance(overrides, dict):
            raise ConfigError("simulate.overrides must be an object")
        simulate = {"preset": preset, "overrides": overrides}
    if inputs is not None:
        if sorted(inputs) != ["individuals", "panel"]:
            raise ConfigError("inputs needs exactly the keys 'individuals' and 'panel'")
    if merged["controls"] not in CONTROL_SETS:
        raise ConfigError(f"unknown control set {merged['controls']!r}")
    for field_name in ("seed", "n_draws", "n_reps", "jobs"):
        value = merged[field_name]
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ConfigError(f"{field_name} must be a non-negative integer")
    if merged["n_draws"] < 1 or merged["n_reps"] < 1 or merged["jobs"] < 1:
        raise ConfigError("n_draws, n_reps and jobs must be at least 1")
    return RunConfig(
        seed=merged["seed"],
        out_dir=str(merged["out_dir"]),
        simulate=simulate,
        inputs=inputs,
        estimators=_subset("estimator", merged["estimators"], ESTIMATORS),
        outcomes=_subset("outcome", merged["outcomes"], OUTCOME_NAMES),
        generations=_subset("generation", merged["generations"], GENERATIONS),
        controls=merged["controls"],
        mediators=_subset("mediator", merged["mediators"], MEDIATORS),
        n_draws=merged["n_draws"],
        n_reps=merged["n_reps"],
        jobs=merged["jobs"],
    )


def _apply_overrides(base: DgpParams, overrides: dict) -> DgpParams:
    valid = {f.name: f for f in dataclasses.fields(DgpParams)}
    updates = {}
    for key, value in overrides.items():
        if key not in valid:
            raise ConfigError(f"unknown DGP parameter {key!r}")
        current = getattr(base, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{key} override must be an object")
            try:
                value = dataclasses.replace(current, **value)
            except TypeError as exc:
                raise ConfigError(f"bad {key} override: {exc}") from None
        elif isinstance(current, tuple):
            value = tuple(value)
        elif key == "shock_years":
            value = {int(k): float(v) for k, v in value.items()}
        updates[key] = value
    try:
        return dataclasses.replace(base, **updates)
    except TypeError as exc:
        raise ConfigError(f"bad simulate overrides: {exc}") from None


def resolve_params(cfg: RunConfig) -> DgpParams:
    if cfg.simulate is None:
        raise ConfigError("this command needs a simulate block in the config")
    base = PRESETS[cfg.simulate["preset"]](cfg.seed)
    return _apply_overrides(base, cfg.simulate["overrides"])


def _jsonable(value):
    """Recursively coerce to plain JSON types; non-finite numbers become null."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if np.isfinite(f) else None
    return value


def _write_report(out_dir: str, report: dict) -> Path:
    path = Path(out_dir) / "report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def _read_report(out_dir: str) -> dict:
    path = Path(out_dir) / "report.json"
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no report at {path}; run the estimate command first") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"report at {path} is not valid JSON: {exc}") from None


def _write_csv(path: Path, header: tuple[str, ...], rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# Pipeline state shared across cells


class _Pipeline:
    """Loads or simulates the population once and memoizes derived frames."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        if cfg.simulate is not None:
            records, panel, _ = simulate_population(resolve_params(cfg))
            self.source = f"simulate:{cfg.simulate['preset']}"
        else:
            try:
                records, panel = load_microdata(
                    cfg.inputs["individuals"], cfg.inputs["panel"]
                )
            except OSError as exc:
                raise DataError(f"cannot read inputs: {exc}") from None
            self.source = "inputs"
        self.records = construct_treatment(records)
        self.panel = panel
        self.instrument = build_instrument(panel)
        self.intensity = build_did_intensity(panel)
        self._cache: dict = {}
        # reentrant: building one cached object may build another
        self._lock = RLock()

    def _memo(self, key, build):
        with self._lock:
            if key not in self._cache:
                self._cache[key] = build()
            return self._cache[key]

    def sample(self, generation: str, outcome: str, with_instrument: bool = True):
        key = ("sample", generation, outcome, with_instrument)
        inst = self.instrument if with_instrument else None

        def build():
            if generation == "G1":
                return build_analysis_sample(
                    self.records, self.panel, outcome,
                    control_set=self.cfg.controls, instrument=inst,
                )
            return build_stacked_sample(
                self.records, self.panel, outcome, generation,
                control_set=self.cfg.controls, instrument=inst,
            )

        return self._memo(key, build)

    def hazard_frame(self, cause_mode: str):
        return self._memo(("hazard", cause_mode), lambda: build_hazard_frame(
            self.records, self.panel, self.instrument, cause_mode=cause_mode,
        ))

    def tsri_fit(self):
        def build():
            hf = self.hazard_frame("all_cause")
            return hf, duration.tsri_hazard(
                hf.spells, hf.treatment, hf.instrument,
                fe_factors={"parish": hf.parish, "cohort": hf.cohort},
                cluster_ids=hf.cluster_ids,
            )

        return self._memo(("tsri_fit",), build)


def _cell(spec, **values) -> dict:
    estimator, generation, outcome = spec
    base = {
        "estimator": estimator,
        "generation": generation,
        "outcome": outcome,
        "estimate": None,
        "se": None,
        "n_obs": None,
        "n_clusters": None,
        "extra": {},
        "status": "ok",
        "error": None,
    }
    base.update(values)
    return base


def _fit_cell(spec, fit, coef: str, **extra) -> dict:
    return _cell(
        spec,
        estimate=fit.param(coef),
        se=fit.se_of(coef),
        n_obs=fit.n_obs,
        n_clusters=fit.n_clusters,
        extra=extra,
    )


def _run_cell(pipe: _Pipeline, spec) -> list[dict]:
    estimator, generation, outcome = spec
    if estimator == "naive_ols":
        sample = pipe.sample(generation, outcome, with_instrument=False)
        design = np.column_stack([
            np.ones(sample.outcome.shape[0]), sample.treatment, sample.controls,
        ])
        names = ("const", "treated", *sample.control_names)
        fit = ols(design, sample.outcome, names, cluster_ids=sample.cluster_ids)
        return [_fit_cell(spec, fit, "treated")]

    if estimator == "mother_fe":
        sample = pipe.sample(generation, outcome, with_instrument=False)
        fit = quasi_exp.mother_fe(sample)
        return [_fit_cell(spec, fit, "treated")]

    if estimator == "did":
        sample = pipe.sample(generation, outcome, with_instrument=False)
        fit = quasi_exp.did(sample, pipe.intensity)
        return [_fit_cell(spec, fit, "post_x_intensity")]

    if estimator == "event_study":
        sample = pipe.sample(generation, outcome, with_instrument=False)
        res = quasi_exp.event_study(sample, pipe.intensity)
        rows = [
            (outcome, int(c), res.coefficient(c), res.se(c),
             float(res.ci_lower[i]), float(res.ci_upper[i]), 0)
            for i, c in enumerate(res.cohorts)
        ]
        rows += [(outcome, int(c), 0.0, 0.0, 0.0, 0.0, 1) for c in res.references]
        rows.sort(key=lambda r: r[1])
        cell = _cell(
            spec,
            estimate=res.joint_pre_stat,
            n_obs=res.fit.n_obs,
            n_clusters=res.fit.n_clusters,
            extra={
                "joint_pre_stat": res.joint_pre_stat,
                "joint_pre_df": list(res.joint_pre_df),
                "joint_pre_pvalue": res.joint_pre_pvalue,
                "references": list(res.references),
            },
        )
        cell["_csv"] = ("event_study", rows)
        return [cell]

    if estimator == "tsls":
        sample = pipe.sample(generation, outcome, with_instrument=True)
        fit, diag = quasi_exp.tsls(sample)
        return [_fit_cell(
            spec, fit, "treated",
            kp_f=diag.kp_f,
            ar_stat=diag.ar_stat,
            ar_pvalue=diag.ar_pvalue,
            ar_ci=list(diag.ar_ci),
            weak_instrument=diag.weak_instrument,
            first_stage=diag.first_stage.param("instrument"),
            first_stage_se=diag.first_stage.se_of("instrument"),
            reduced_form=diag.reduced_form.param("instrument"),
            reduced_form_se=diag.reduced_form.se_of("instrument"),
        )]

    if estimator == "heckman":
        sample = pipe.sample(generation, outcome, with_instrument=False)
        frame = quasi_exp.build_selection_frame(pipe.records, pipe.panel, generation=generation)
        fit = quasi_exp.heckman_correct(sample, frame)
        return [_fit_cell(spec, fit, "treated", inverse_mills=fit.param("inverse_mills"),
                          inverse_mills_se=fit.se_of("inverse_mills"))]

    if estimator == "ils":
        sample = pipe.sample(generation, outcome, with_instrument=False)
        fit = quasi_exp.did(sample, pipe.intensity)
        post = sample.cohort >= POST_START
        share = float(sample.treatment[post].mean())
        estimate = quasi_exp.indirect_least_squares(fit.param("post_x_intensity"), share)
        return [_cell(
            spec,
            estimate=estimate,
            n_obs=fit.n_obs,
            n_clusters=fit.n_clusters,
            extra={"did_estimate": fit.param("post_x_intensity"), "treated_share": share},
        )]

    if estimator == "tsri_hazard":
        _, fit = pipe.tsri_fit()
        hr = fit.hazard_ratio("treated")
        lo, hi = fit.conf_int("treated")
        near_null = float(np.exp(hi if hr < 1.0 else lo))
        ev, ev_ci = duration.e_value(hr, ci_bound=near_null)
        return [_fit_cell(
            spec, fit, "treated",
            hazard_ratio=hr,
            kp_f=fit.first_stage_kp_f,
            residual=fit.param("first_stage_residual"),
            residual_t=fit.tstat("first_stage_residual"),
            e_value=ev,
            e_value_ci=ev_ci,
        )]

    if estimator == "competing_risks":
        hf = pipe.hazard_frame("competing")
        fit = duration.competing_risks(
            hf.spells, hf.treatment, hf.instrument,
            fe_factors={"parish": hf.parish, "cohort": hf.cohort},
            cluster_ids=hf.cluster_ids,
        )
        cells = []
        for label in hf.spells.cause:
            name = f"treated_x_{label}"
            if label in fit.inestimable:
                cells.append(_cell(
                    (estimator, generation, f"{label}_mortality"),
                    status="failed", error=f"cause {label!r} has no events",
                ))
                continue
            cells.append(_fit_cell(
                (estimator, generation, f"{label}_mortality"), fit, name,
                hazard_ratio=fit.hazard_ratio(name),
                kp_f=fit.first_stage_kp_f,
            ))
        return cells

    if estimator == "survival":
        hf, fit = pipe.tsri_fit()
        curve = duration.survival_and_expectancy(
            fit, {"treated": 1.0}, {}, bands=list(SURVIVAL_BANDS),
            age_grid=np.arange(2.0, 101.0),
        )
        rows = [
            (float(a), float(st), float(su))
            for a, st, su in zip(curve.ages, curve.treated, curve.untreated)
        ]
        cell = _cell(
            spec,
            estimate=curve.added_total(),
            n_obs=fit.n_obs,
            n_clusters=fit.n_clusters,
            extra={
                "bands": [
                    {"lo": lo, "hi": hi, "added": float(a),
                     "treated": float(bt), "untreated": float(bu),
                     "extrapolated": bool(ex)}
                    for (lo, hi), a, bt, bu, ex in zip(
                        curve.bands, curve.added, curve.band_treated,
                        curve.band_untreated, curve.extrapolated)
                ],
            },
        )
        cell["_csv"] = ("survival", rows)
        return [cell]

    raise ConfigError(f"unknown estimator {estimator!r}")


def _cell_specs(cfg: RunConfig) -> list[tuple[str, str, str]]:
    specs = []
    for estimator in cfg.estimators:
        if estimator in ("naive_ols", "tsls"):
            specs += [(estimator, g, o) for g in cfg.generations for o in cfg.outcomes]
        elif estimator in ("mother_fe", "did", "event_study", "ils"):
            if "G1" in cfg.generations:
                specs += [(estimator, "G1", o) for o in cfg.outcomes]
        elif estimator == "heckman":
            # selection here is about whether death is observed at all, so
            # the correction only applies to the observed-lifespan outcomes
            if "G1" in cfg.generations:
                specs += [(estimator, "G1", o) for o in cfg.outcomes
                          if o in ("years_lived", "disability_free_years")]
        elif estimator == "tsri_hazard":
            if "G1" in cfg.generations:
                specs.append((estimator, "G1", "all_cause_mortality"))
        elif estimator == "competing_risks":
            if "G1" in cfg.generations:
                specs.append((estimator, "G1", "by_cause_mortality"))
        elif estimator == "survival":
            if "G1" in cfg.generations:
                specs.append((estimator, "G1", "years_of_life_added"))
    return specs


def _run_cells(pipe: _Pipeline, specs) -> list[dict]:
    def guarded(spec):
        try:
            return _run_cell(pipe, spec)
        except (EstimationError, DataError) as exc:
            return [_cell(spec, status="failed", error=f"{type(exc).__name__}: {exc}")]

    if pipe.cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=pipe.cfg.jobs) as pool:
            batches = list(pool.map(guarded, specs))
    else:
        batches = [guarded(spec) for spec in specs]
    cells = [cell for batch in batches for cell in batch]
    cells.sort(key=lambda c: (c["estimator"], c["generation"], c["outcome"]))
    return cells


def cmd_simulate(cfg: RunConfig) -> int:
    params = resolve_params(cfg)
    records, panel, truth = simulate_population(params)
    paths = write_population(records, panel, truth, cfg.out_dir)
    treated = construct_treatment(records)
    post = [r for r in treated
            if r.generation == "G1" and r.cohort >= POST_START and r.treated is not None]
    share = float(np.mean([r.treated for r in post])) if post else float("nan")
    deaths = sum(r.death_age is not None for r in records)
    disabilities = sum(r.disability_onset_age is not None for r in records)
    print(f"simulated {len(records)} records in {panel.parish.shape[0]} panel cells")
    print(f"treated share (post-{POST_START} G1): {share:.4f}")
    print(f"observed deaths: {deaths}; disability onsets: {disabilities}")
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_estimate(cfg: RunConfig) -> int:
    pipe = _Pipeline(cfg)
    cells = _run_cells(pipe, _cell_specs(cfg))
    if not cells:
        raise ConfigError("the configured grid is empty; nothing to estimate")

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    event_rows, survival_rows = [], []
    for cell in cells:
        kind_rows = cell.pop("_csv", None)
        if kind_rows is None or cell["status"] != "ok":
            continue
        kind, rows = kind_rows
        (event_rows if kind == "event_study" else survival_rows).extend(rows)
    if event_rows:
        event_rows.sort(key=lambda r: (r[0], r[1]))
        _write_csv(out / "event_study.csv",
                   ("outcome", "cohort", "coefficient", "se", "ci_lower", "ci_upper",
                    "is_reference"), event_rows)
        files["event_study"] = "event_study.csv"
    if survival_rows:
        _write_csv(out / "survival.csv", ("age", "s_treated", "s_untreated"), survival_rows)
        files["survival"] = "survival.csv"

    checks = {}
    gaps = [
        abs(c["estimate"] - c["extra"]["reduced_form"] / c["extra"]["first_stage"])
        for c in cells
        if c["estimator"] == "tsls" and c["status"] == "ok" and c["extra"]["first_stage"] != 0.0
    ]
    if gaps:
        checks["tsls_ratio_identity_max_gap"] = max(gaps)
        checks["tsls_ratio_identity_ok"] = max(gaps) < 1e-8

    n_ok = sum(c["status"] == "ok" for c in cells)
    report = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "source": pipe.source,
        "controls": cfg.controls,
        "cells": cells,
        "checks": checks,
        "files": files,
        "mediation": [],
    }
    path = _write_report(cfg.out_dir, report)
    print(f"{n_ok}/{len(cells)} cells estimated; report: {path}")
    if n_ok == 0:
        raise EstimationError("every cell in the estimation grid failed")
    return 0


# ---------------------------------------------------------------------------
# Mediation grid


def _mediator_values(pipe: _Pipeline, generation: str, outcome: str, mediator: str) -> dict:
    """Per-child mediator values keyed by record id; None entries are dropped."""
    if mediator == outcome:
        raise DataError("mediator coincides with the outcome")
    rows = [r for r in pipe.records if r.generation == generation]
    if mediator == "epigenetic":
        field = _EPIGENETIC_FIELDS.get(outcome)
        if field is None:
            raise DataError(f"no shared-component construction for outcome {outcome!r}")
        usable = [r for r in rows if getattr(r, field) is not None]
        if not usable:
            raise DataError(f"outcome field {field!r} is never observed in {generation}")
        values = mediation.build_epigenetic_mediator(usable, field)
        return {r.id: float(v) for r, v in zip(usable, values)}
    field = _MEDIATOR_FIELDS[mediator]
    out = {r.id: float(getattr(r, field)) for r in rows if getattr(r, field) is not None}
    if not out:
        raise DataError(f"mediator column {field!r} is empty for {generation}")
    return out


def _mediate_row(pipe: _Pipeline, generation: str, outcome: str, mediator: str) -> dict:
    cfg = pipe.cfg
    sample = pipe.sample(generation, outcome, with_instrument=False)
    values = _mediator_values(pipe, generation, outcome, mediator)
    mask = np.array([int(rid) in values for rid in sample.record_ids])
    if not mask.any():
        raise DataError("no overlap between the mediator and the estimation sample")
    med = np.array([values[int(rid)] for rid in sample.record_ids[mask]])
    y = sample.outcome[mask]
    d = sample.treatment[mask]
    controls = sample.controls[mask] if sample.controls.shape[1] else None
    clusters = sample.cluster_ids[mask]
    res = mediation.mediate(
        y, d, med,
        controls=controls,
        control_names=sample.control_names,
        cluster_ids=clusters,
        n_draws=cfg.n_draws,
        n_reps=cfg.n_reps,
        seed=cfg.seed,
        mediator_name=mediator,
    )
    cols = [np.ones(y.shape[0]), d]
    if controls is not None:
        cols.append(controls)
    plain = ols(np.column_stack(cols), y, ("const", "treated", *sample.control_names),
                cluster_ids=clusters)
    gap = abs(res.total_effect - plain.param("treated"))
    tol = 3.0 * float(np.hypot(res.total_se, plain.se_of("treated")))
    return {
        "generation": generation,
        "outcome": outcome,
        "mediator": mediator,
        "status": "ok",
        "error": None,
        "nde": res.natural_direct_effect,
        "nde_se": res.nde_se,
        "nde_ci": list(res.nde_ci),
        "nie": res.natural_indirect_effect,
        "nie_se": res.nie_se,
        "nie_ci": list(res.nie_ci),
        "total": res.total_effect,
        "total_se": res.total_se,
        "total_ci": list(res.total_ci),
        "unmediated_total": plain.param("treated"),
        "unmediated_total_se": plain.se_of("treated"),
        "total_check_ok": bool(gap <= tol),
        "mediator_model": res.mediator_model,
        "n_obs": res.n_obs,
        "n_clusters": res.n_clusters,
        "n_draws": res.n_draws,
        "n_failed_reps": res.n_failed_reps,
    }


def cmd_mediate(cfg: RunConfig) -> int:
    pipe = _Pipeline(cfg)
    rows = []
    for generation in cfg.generations:
        if generation == "G1":
            continue
        for outcome in cfg.outcomes:
            for mediator in cfg.mediators:
                try:
                    rows.append(_mediate_row(pipe, generation, outcome, mediator))
                except (EstimationError, DataError) as exc:
                    rows.append({
                        "generation": generation,
                        "outcome": outcome,
                        "mediator": mediator,
                        "status": "failed",
                        "error": f"{type(exc).__name__}: {exc}",
                    })
    if not rows:
        raise ConfigError("no descendant generations selected; nothing to mediate")
    rows.sort(key=lambda r: (r["generation"], r["outcome"], r["mediator"]))
    try:
        report = _read_report(cfg.out_dir)
    except DataError:
        report = {
            "schema_version": SCHEMA_VERSION,
            "seed": cfg.seed,
            "source": None,
            "controls": cfg.controls,
            "cells": [],
            "checks": {},
            "files": {},
        }
    report["mediation"] = rows
    path = _write_report(cfg.out_dir, report)
    n_ok = sum(r["status"] == "ok" for r in rows)
    print(f"{n_ok}/{len(rows)} mediation rows estimated; report: {path}")
    if n_ok == 0:
        raise EstimationError("every mediation row failed")
    return 0


def _fmt_cell(value, width=10) -> str:
    if value is None:
        return " " * (width - 1) + "-"
    return f"{value:{width}.4f}"


def cmd_report(cfg: RunConfig) -> int:
    report = _read_report(cfg.out_dir)
    print(f"report schema {report['schema_version']}, seed {report['seed']}, "
          f"source {report.get('source')}, controls {report.get('controls')}")
    cells = report.get("cells", [])
    if cells:
        print(f"\n{'estimator':<16} {'gen':<4} {'outcome':<22} "
              f"{'estimate':>10} {'se':>10}  status")
        for c in cells:
            note = "" if c["error"] is None else f"  {c['error']}"
            print(f"{c['estimator']:<16} {c['generation']:<4} {c['outcome']:<22} "
                  f"{_fmt_cell(c['estimate'])} {_fmt_cell(c['se'])}  {c['status']}{note}")
    rows = report.get("mediation", [])
    if rows:
        print(f"\n{'gen':<4} {'outcome':<22} {'mediator':<20} "
              f"{'nde':>10} {'nie':>10} {'total':>10}  status")
        for r in rows:
            print(f"{r['generation']:<4} {r['outcome']:<22} {r['mediator']:<20} "
                  f"{_fmt_cell(r.get('nde'))} {_fmt_cell(r.get('nie'))} "
                  f"{_fmt_cell(r.get('total'))}  {r['status']}")
    checks = report.get("checks", {})
    if checks:
        print()
        for name, value in sorted(checks.items()):
            print(f"check {name}: {value}")
    return 0


# ---------------------------------------------------------------------------
# Entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gencausal",
        description="simulate a three-generation population and run the estimator grid",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "simulate": cmd_simulate,
        "estimate": cmd_estimate,
        "mediate": cmd_mediate,
        "report": cmd_report,
    }
    for name, handler in handlers.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="path to a JSON config document")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--jobs", type=int, default=None, help="parallel estimation workers")
        p.set_defaults(handler=handler)
    return parser


def _config_from_args(args) -> RunConfig:
    document = {}
    if args.config is not None:
        try:
            with open(args.config) as fh:
                document = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    for key, value in (("seed", args.seed), ("out_dir", args.out), ("jobs", args.jobs)):
        if value is not None:
            document[key] = value
    return load_config(document)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return args.handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
