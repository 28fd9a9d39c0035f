"""Tests for the microdata layer.

Hand-computed oracles throughout: the shift-share example has an engineered
percentile range (divisor 14), the intensity example an engineered
cross-parish IQR (9.6), and the spell tables are checked row by row.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gencausal.errors import DataError
from gencausal.microdata import (
    AnalysisSample,
    IndividualRecord,
    PanelContext,
    build_analysis_sample,
    build_did_intensity,
    build_instrument,
    build_spells,
    build_stacked_sample,
    construct_treatment,
    load_microdata,
    validate_records,
    write_microdata,
)

FAM = (30.0, 25.0, 1.0, 0.0, 0.1, 0.0, 0.0)


def make_record(**kw):
    base = dict(
        id=1,
        generation="G1",
        mother_id=500,
        g1_ancestor_ids=(),
        parish=1,
        region=1,
        cohort=1795,
        sex="female",
        birth_month=6,
        vaccinated_age=None,
        death_age=60.0,
        last_observed_age=60.0,
        disability_onset_age=None,
        disability_cause=None,
        death_cause="other",
        literacy_good=True,
        occupational_score=40.0,
        family_covariates=FAM,
        midwife_assisted=False,
        child_vaccinated=None,
    )
    base.update(kw)
    return IndividualRecord(**base)


def make_panel(parishes, years, personnel_fn, shift_fn=lambda t: 0.0, cov_fn=None):
    rows = [(p, t) for p in parishes for t in years]
    n = len(rows)

    def cov(name):
        if cov_fn is None:
            return np.zeros(n)
        return np.array([cov_fn(name, p, t) for p, t in rows], dtype=float)

    return PanelContext(
        parish=np.array([p for p, _ in rows], dtype=np.int64),
        cohort=np.array([t for _, t in rows], dtype=np.int64),
        church_personnel=np.array([personnel_fn(p, t) for p, t in rows], dtype=float),
        national_shift=np.array([shift_fn(t) for _, t in rows], dtype=float),
        midwives=cov("midwives"),
        priests=cov("priests"),
        smallpox_death_rate=cov("smallpox_death_rate"),
        urban_share=cov("urban_share"),
        students_per_capita=cov("students_per_capita"),
        rye_price=cov("rye_price"),
        potato_seeds_per_km2=cov("potato_seeds_per_km2"),
    )


class TestConstructTreatment:
    def test_early_vaccination_is_treated(self):
        (r,) = construct_treatment([make_record(vaccinated_age=1.4)])
        assert r.treated is True and r.excluded is False

    def test_cutoff_age_is_inclusive(self):
        (r,) = construct_treatment([make_record(vaccinated_age=2.0)])
        assert r.treated is True

    def test_late_vaccination_is_excluded_not_control(self):
        (r,) = construct_treatment([make_record(vaccinated_age=6.0)])
        assert r.treated is None and r.excluded is True

    def test_never_vaccinated_is_untreated(self):
        (r,) = construct_treatment([make_record(vaccinated_age=None)])
        assert r.treated is False and r.excluded is False

    def test_custom_cutoff(self):
        (r,) = construct_treatment([make_record(vaccinated_age=6.0)], age_cutoff=10.0)
        assert r.treated is True


class TestPanelContext:
    def test_duplicate_cell_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            make_panel([1, 1], [1790], lambda p, t: 1.0)

    def test_shift_must_be_national(self):
        with pytest.raises(DataError, match="national_shift varies"):
            PanelContext(
                parish=np.array([1, 2], dtype=np.int64),
                cohort=np.array([1790, 1790], dtype=np.int64),
                church_personnel=np.zeros(2),
                national_shift=np.array([0.5, 0.7]),
                midwives=np.zeros(2),
                priests=np.zeros(2),
                smallpox_death_rate=np.zeros(2),
                urban_share=np.zeros(2),
                students_per_capita=np.zeros(2),
                rye_price=np.zeros(2),
                potato_seeds_per_km2=np.zeros(2),
            )

    def test_mismatched_column_length_rejected(self):
        with pytest.raises(DataError, match="mismatched"):
            PanelContext(
                parish=np.array([1, 2], dtype=np.int64),
                cohort=np.array([1790, 1791], dtype=np.int64),
                church_personnel=np.zeros(3),
                national_shift=np.zeros(2),
                midwives=np.zeros(2),
                priests=np.zeros(2),
                smallpox_death_rate=np.zeros(2),
                urban_share=np.zeros(2),
                students_per_capita=np.zeros(2),
                rye_price=np.zeros(2),
                potato_seeds_per_km2=np.zeros(2),
            )

    def test_cohort_window(self):
        panel = make_panel([1], range(1790, 1803), lambda p, t: 1.0)
        assert panel.cohort_window() == (1790, 1802)


class TestBuildInstrument:
    def lagged_seven_panel(self):
        # One parish, 1790..1801. Personnel 0 through 1794, 7 afterwards;
        # national shift 2.0 every year. Raw products for 1791..1801 are
        # five zeros then six 14s, so the 5th-95th percentile gap is
        # exactly 14 and the nonzero cells rescale to exactly 1.
        return make_panel(
            [1],
            range(1790, 1802),
            lambda p, t: 0.0 if t <= 1794 else 7.0,
            shift_fn=lambda t: 2.0,
        )

    def test_hand_computed_example(self):
        table = build_instrument(self.lagged_seven_panel())
        assert table.divisor == 14.0
        values = table.lookup()
        assert values[(1, 1796)] == 1.0
        assert values[(1, 1793)] == 0.0

    def test_first_panel_year_has_no_value(self):
        table = build_instrument(self.lagged_seven_panel())
        assert (1, 1790) not in table.lookup()
        assert int(table.cohort.min()) == 1791

    def test_zero_personnel_parish_is_null_exposure(self):
        panel = make_panel(
            [1, 2],
            range(1790, 1802),
            lambda p, t: 0.0 if p == 2 or t <= 1794 else 7.0,
            shift_fn=lambda t: 2.0,
        )
        table = build_instrument(panel)
        values = table.lookup()
        assert all(values[(2, t)] == 0.0 for t in range(1791, 1802))

    def test_missing_lag_year_raises(self):
        years = [t for t in range(1790, 1802) if t != 1795]
        panel = make_panel([1], years, lambda p, t: 7.0, shift_fn=lambda t: 2.0)
        with pytest.raises(DataError, match="lacks personnel for year 1795"):
            build_instrument(panel)

    def test_degenerate_percentile_range_raises(self):
        panel = make_panel([1], range(1790, 1802), lambda p, t: 5.0, shift_fn=lambda t: 2.0)
        with pytest.raises(DataError, match="degenerate"):
            build_instrument(panel)

    def test_bad_quantiles_raise(self):
        panel = self.lagged_seven_panel()
        with pytest.raises(DataError, match="quantiles"):
            build_instrument(panel, rescale_quantiles=(0.9, 0.1))

    @settings(max_examples=25, deadline=None)
    @given(scale=st.floats(min_value=0.25, max_value=8.0, allow_nan=False))
    def test_rescaled_values_invariant_to_personnel_scale(self, scale):
        base = build_instrument(self.lagged_seven_panel())
        scaled_panel = make_panel(
            [1],
            range(1790, 1802),
            lambda p, t: 0.0 if t <= 1794 else 7.0 * scale,
            shift_fn=lambda t: 2.0,
        )
        scaled = build_instrument(scaled_panel)
        np.testing.assert_allclose(scaled.value, base.value, rtol=1e-12, atol=1e-12)
        assert scaled.divisor == pytest.approx(14.0 * scale, rel=1e-12)


class TestBuildDidIntensity:
    def five_parish_panel(self):
        # Constant personnel per parish over the whole window, so the
        # pre-window means are the levels themselves: 0, 0, 4.8, 9.6, 12.
        # Their quartile gap is exactly 9.6, making parish 4's intensity 1.
        levels = {1: 0.0, 2: 0.0, 3: 4.8, 4: 9.6, 5: 12.0}
        return make_panel(levels, range(1790, 1806), lambda p, t: levels[p])

    def test_hand_computed_iqr_and_unit_intensity(self):
        intensity = build_did_intensity(self.five_parish_panel())
        assert intensity.iqr == pytest.approx(9.6)
        assert intensity.by_parish[4] == 1.0
        assert intensity.by_parish[1] == 0.0
        assert intensity.by_parish[5] == pytest.approx(12.0 / 9.6)

    def test_regressor_is_exactly_zero_before_reform(self):
        intensity = build_did_intensity(self.five_parish_panel())
        parishes = np.array([4, 4, 5])
        cohorts = np.array([1795, 1801, 1800])
        reg = intensity.regressor(parishes, cohorts)
        assert reg[0] == 0.0
        assert reg[1] == 1.0
        assert reg[2] == 0.0

    def test_constant_personnel_across_parishes_raises(self):
        panel = make_panel([1, 2, 3], range(1790, 1806), lambda p, t: 9.6)
        with pytest.raises(DataError, match="interquartile range is zero"):
            build_did_intensity(panel)

    def test_parish_without_pre_window_raises(self):
        rows = [(1, t) for t in range(1790, 1806)] + [(2, t) for t in range(1801, 1806)]
        panel = PanelContext(
            parish=np.array([p for p, _ in rows], dtype=np.int64),
            cohort=np.array([t for _, t in rows], dtype=np.int64),
            church_personnel=np.array([float(p) for p, _ in rows]),
            national_shift=np.zeros(len(rows)),
            midwives=np.zeros(len(rows)),
            priests=np.zeros(len(rows)),
            smallpox_death_rate=np.zeros(len(rows)),
            urban_share=np.zeros(len(rows)),
            students_per_capita=np.zeros(len(rows)),
            rye_price=np.zeros(len(rows)),
            potato_seeds_per_km2=np.zeros(len(rows)),
        )
        with pytest.raises(DataError, match="parish 2 has no pre-window"):
            build_did_intensity(panel)


class TestBuildSpells:
    def test_oldest_generation_enters_at_two(self):
        spells = build_spells([make_record(death_age=60.0, death_cause="smallpox")])
        assert spells.entry_age[0] == 2.0
        assert spells.exit_age[0] == 60.0
        assert spells.event[0] == 1

    def test_descendants_enter_at_birth(self):
        r = make_record(generation="G2", g1_ancestor_ids=(9,), death_age=55.0)
        spells = build_spells([r])
        assert spells.entry_age[0] == 0.0

    def test_censored_record_has_no_event(self):
        r = make_record(death_age=None, death_cause=None, last_observed_age=60.0)
        spells = build_spells([r])
        assert spells.event[0] == 0

    def test_competing_mode_duplicates_per_cause(self):
        r = make_record(death_age=60.0, death_cause="smallpox")
        spells = build_spells([r], cause_mode="competing")
        assert spells.n_rows == 2
        assert spells.cause == ("smallpox", "other")
        by_cause = dict(zip(spells.cause_code.tolist(), spells.event.tolist()))
        assert by_cause == {0: 1, 1: 0}

    def test_competing_event_total_matches_death_count(self):
        records = [
            make_record(id=1, death_age=60.0, death_cause="smallpox"),
            make_record(id=2, death_age=40.0, death_cause="other"),
            make_record(id=3, death_age=None, death_cause=None, last_observed_age=70.0),
        ]
        all_cause = build_spells(records)
        competing = build_spells(records, cause_mode="competing")
        assert competing.event.sum() == all_cause.event.sum() == 2
        for rid in (1, 2, 3):
            rows = competing.record_ids == rid
            assert competing.event[rows].sum() == (1 if rid != 3 else 0)

    def test_disability_spell_closes_at_onset(self):
        r = make_record(
            disability_onset_age=30.0,
            disability_cause="smallpox_related",
            death_age=50.0,
            last_observed_age=50.0,
        )
        spells = build_spells([r], event_kind="disability")
        assert spells.exit_age[0] == 30.0
        assert spells.event[0] == 1

    def test_disability_without_onset_is_censored_at_last_observation(self):
        r = make_record(disability_onset_age=None, death_age=50.0, last_observed_age=50.0)
        spells = build_spells([r], event_kind="disability")
        assert spells.exit_age[0] == 50.0
        assert spells.event[0] == 0

    def test_event_without_cause_raises(self):
        r = make_record(death_age=60.0, death_cause=None)
        with pytest.raises(DataError, match="without a recorded cause"):
            build_spells(r for r in [r])

    def test_observation_ending_before_entry_raises(self):
        r = make_record(death_age=1.5, last_observed_age=1.5)
        with pytest.raises(DataError, match="at or before the spell entry"):
            build_spells([r])

    def test_unknown_mode_raises(self):
        with pytest.raises(DataError, match="cause_mode"):
            build_spells([make_record()], cause_mode="by_cause")
        with pytest.raises(DataError, match="event_kind"):
            build_spells([make_record()], event_kind="marriage")


class TestCsvRoundTrip:
    def records_with_awkward_floats(self):
        return [
            make_record(
                id=1,
                vaccinated_age=0.1 + 0.2,
                death_age=float(np.pi) * 10,
                last_observed_age=float(np.pi) * 10,
                occupational_score=1.0 / 3.0,
            ),
            make_record(
                id=2,
                death_age=None,
                death_cause=None,
                last_observed_age=81.25,
                literacy_good=None,
                occupational_score=None,
            ),
            make_record(
                id=3,
                generation="G2",
                g1_ancestor_ids=(1, 2),
                cohort=1799,
                sex="male",
                death_age=44.5,
                last_observed_age=44.5,
                disability_onset_age=12.0,
                disability_cause="other",
                child_vaccinated=True,
            ),
        ]

    def test_write_then_load_is_identity(self, tmp_path):
        records = self.records_with_awkward_floats()
        panel = make_panel(
            [1],
            range(1790, 1806),
            lambda p, t: 7.3,
            shift_fn=lambda t: 0.1 * (t - 1790),
            cov_fn=lambda name, p, t: hash((name, t)) % 10 / 7.0,
        )
        ind, pan = tmp_path / "people.csv", tmp_path / "panel.csv"
        write_microdata(records, panel, ind, pan)
        loaded, loaded_panel = load_microdata(ind, pan)
        assert loaded == records
        for name in PanelContext.__dataclass_fields__:
            np.testing.assert_array_equal(getattr(loaded_panel, name), getattr(panel, name))

    def test_schema_renames_foreign_columns(self, tmp_path):
        records = self.records_with_awkward_floats()
        panel = make_panel([1], range(1790, 1806), lambda p, t: 7.0)
        ind, pan = tmp_path / "people.csv", tmp_path / "panel.csv"
        write_microdata(records, panel, ind, pan)
        text = ind.read_text().replace("vaccinated_age", "vacc_age", 1)
        foreign = tmp_path / "foreign.csv"
        foreign.write_text(text)
        loaded, _ = load_microdata(foreign, pan, schema={"vaccinated_age": "vacc_age"})
        assert loaded == records

    def test_unknown_schema_key_raises(self, tmp_path):
        panel = make_panel([1], range(1790, 1806), lambda p, t: 7.0)
        ind, pan = tmp_path / "people.csv", tmp_path / "panel.csv"
        write_microdata([make_record()], panel, ind, pan)
        with pytest.raises(DataError, match="unknown column"):
            load_microdata(ind, pan, schema={"not_a_column": "x"})

    def test_malformed_rows_reported_by_number(self, tmp_path):
        panel = make_panel([1], range(1790, 1806), lambda p, t: 7.0)
        ind, pan = tmp_path / "people.csv", tmp_path / "panel.csv"
        write_microdata([make_record(id=1), make_record(id=2)], panel, ind, pan)
        lines = ind.read_text().splitlines()
        lines[2] = lines[2].replace("2,G1", "two,G1", 1)
        ind.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="row 3"):
            load_microdata(ind, pan)

    def test_missing_column_raises(self, tmp_path):
        pan = tmp_path / "panel.csv"
        write_microdata([], make_panel([1], range(1790, 1806), lambda p, t: 7.0), tmp_path / "p.csv", pan)
        bad = tmp_path / "bad.csv"
        bad.write_text("id,generation\n")
        with pytest.raises(DataError, match="lacks columns"):
            load_microdata(bad, pan)


class TestValidateRecords:
    def test_clean_records_have_no_findings(self):
        assert validate_records([make_record()]) == []

    def test_each_violation_is_reported(self):
        panel = make_panel([1], range(1790, 1806), lambda p, t: 7.0)
        bad = [
            make_record(id=1),
            make_record(id=1),
            make_record(id=2, generation="G4"),
            make_record(id=3, sex="unknown"),
            make_record(id=4, birth_month=13),
            make_record(id=5, g1_ancestor_ids=(9,)),
            make_record(id=6, generation="G2"),
            make_record(id=7, death_age=50.0, last_observed_age=60.0),
            make_record(id=8, disability_onset_age=70.0, disability_cause="other"),
            make_record(id=9, death_cause="plague"),
            make_record(id=10, cohort=1888),
        ]
        problems = "\n".join(validate_records(bad, panel))
        for needle in (
            "duplicate id",
            "unknown generation",
            "unknown sex",
            "birth_month out of range",
            "cannot have first-generation ancestors",
            "lacks first-generation ancestors",
            "death must close the observation window",
            "disability onset after the observation window",
            "unknown death cause",
            "outside panel window",
        ):
            assert needle in problems


def small_population():
    """Two-parish population with known treatment statuses and outcomes."""
    panel = make_panel(
        [1, 2],
        range(1790, 1806),
        lambda p, t: 0.0 if t <= 1794 else 7.0 * p,
        shift_fn=lambda t: 2.0 if t >= 1795 else 0.0,
        cov_fn=lambda name, p, t: float(p) if name == "midwives" else 0.25,
    )
    records = construct_treatment([
        make_record(id=1, parish=1, cohort=1803, vaccinated_age=1.0, death_age=62.0,
                    last_observed_age=62.0, mother_id=100),
        make_record(id=2, parish=1, cohort=1803, vaccinated_age=None, death_age=50.0,
                    last_observed_age=50.0, mother_id=100),
        make_record(id=3, parish=2, region=2, cohort=1795, vaccinated_age=None,
                    death_age=70.0, last_observed_age=70.0, mother_id=101),
        make_record(id=4, parish=2, cohort=1803, vaccinated_age=5.0, death_age=58.0,
                    last_observed_age=58.0, mother_id=102),
        make_record(id=5, parish=1, cohort=1795, vaccinated_age=None, death_age=None,
                    death_cause=None, last_observed_age=80.0, mother_id=103,
                    disability_onset_age=30.0, disability_cause="other"),
        make_record(id=6, generation="G2", g1_ancestor_ids=(1, 2), parish=1,
                    cohort=1825, death_age=55.0, last_observed_age=55.0, mother_id=200),
        make_record(id=7, generation="G2", g1_ancestor_ids=(1, 4), parish=2,
                    cohort=1826, death_age=48.0, last_observed_age=48.0, mother_id=201),
    ])
    return records, panel


class TestBuildAnalysisSample:
    def test_filters_and_outcome_arithmetic(self):
        records, panel = small_population()
        sample = build_analysis_sample(records, panel, "years_lived")
        # id 4 is excluded (late vaccination), id 5 has no recorded death,
        # id 6 and 7 belong to the next generation.
        assert sample.record_ids.tolist() == [1, 2, 3]
        # Oldest-generation years lived are counted from the entry age of 2.
        np.testing.assert_array_equal(sample.outcome, [60.0, 48.0, 68.0])
        np.testing.assert_array_equal(sample.treatment, [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(sample.cluster_ids, sample.parish)

    def test_disability_free_years_fall_back_to_death(self):
        records, panel = small_population()
        sample = build_analysis_sample(records, panel, "disability_free_years")
        by_id = dict(zip(sample.record_ids.tolist(), sample.outcome.tolist()))
        assert by_id[5] == 28.0  # onset 30, entry 2
        assert by_id[1] == 60.0  # no disability, closed by death at 62

    def test_instrument_joined_at_own_cell(self):
        records, panel = small_population()
        table = build_instrument(panel)
        sample = build_analysis_sample(records, panel, "years_lived", instrument=table)
        expected = [table.lookup()[(p, t)] for p, t in zip(sample.parish, sample.cohort)]
        np.testing.assert_array_equal(sample.instrument, expected)

    def test_control_sets(self):
        records, panel = small_population()
        none = build_analysis_sample(records, panel, "years_lived", control_set="none")
        assert none.controls.shape == (3, 0) and none.fe_factors == ()
        base = build_analysis_sample(records, panel, "years_lived", control_set="baseline")
        assert base.controls.shape == (3, 0)
        assert base.fe_factors == ("parish", "cohort", "region_cohort")
        full = build_analysis_sample(records, panel, "years_lived", control_set="full")
        # 1 sex + 7 family + 6 parish covariates, each split by the two
        # cohorts present in the sample.
        assert full.controls.shape == (3, 14 * 2)
        names = dict(zip(full.control_names, range(len(full.control_names))))
        col = full.controls[:, names["female_x_1803"]]
        np.testing.assert_array_equal(col, [1.0, 1.0, 0.0])
        col = full.controls[:, names["midwives_x_1795"]]
        np.testing.assert_array_equal(col, [0.0, 0.0, 2.0])

    def test_region_cohort_factor_encoding(self):
        records, panel = small_population()
        sample = build_analysis_sample(records, panel, "years_lived")
        np.testing.assert_array_equal(
            sample.factor("region_cohort"),
            sample.region.astype(np.int64) * 100_000 + sample.cohort,
        )
        with pytest.raises(KeyError):
            sample.factor("parish_cohort")

    def test_unknown_outcome_and_control_set_raise(self):
        records, panel = small_population()
        with pytest.raises(DataError, match="unknown outcome"):
            build_analysis_sample(records, panel, "wealth")
        with pytest.raises(DataError, match="unknown control set"):
            build_analysis_sample(records, panel, "years_lived", control_set="extra")

    def test_empty_sample_raises(self):
        records, panel = small_population()
        with pytest.raises(DataError, match="no usable rows"):
            build_analysis_sample(records, panel, "years_lived", generation="G3")

    def test_non_finite_values_rejected(self):
        records, panel = small_population()
        sample = build_analysis_sample(records, panel, "years_lived")
        bad = dict(
            record_ids=sample.record_ids,
            outcome=np.array([1.0, np.nan, 3.0]),
            outcome_name="years_lived",
            treatment=sample.treatment,
            instrument=None,
            controls=sample.controls,
            control_names=sample.control_names,
            parish=sample.parish,
            cohort=sample.cohort,
            region=sample.region,
            mother_ids=sample.mother_ids,
            cluster_ids=sample.cluster_ids,
            generation="G1",
            control_set="baseline",
            fe_factors=sample.fe_factors,
        )
        with pytest.raises(DataError, match="non-finite"):
            AnalysisSample(**bad)


class TestBuildStackedSample:
    def test_one_row_per_child_ancestor_pair(self):
        records, panel = small_population()
        sample = build_stacked_sample(records, panel, "years_lived", "G2")
        # Child 6 links to ancestors 1 and 2; child 7 links to 1 and 4, but
        # 4 was vaccinated late, so only the row through ancestor 1 stays.
        assert sample.record_ids.tolist() == [6, 6, 7]
        np.testing.assert_array_equal(sample.outcome, [55.0, 55.0, 48.0])
        np.testing.assert_array_equal(sample.treatment, [1.0, 0.0, 1.0])
        # Exposure-side fields describe the ancestor.
        assert sample.parish.tolist() == [1, 1, 1]
        assert sample.cohort.tolist() == [1803, 1803, 1803]
        # The mother id stays the child's: it is what sibling comparisons use.
        assert sample.mother_ids.tolist() == [200, 200, 201]
        assert sample.stacked

    def test_instrument_from_ancestor_cell(self):
        records, panel = small_population()
        table = build_instrument(panel)
        sample = build_stacked_sample(records, panel, "years_lived", "G2", instrument=table)
        expected = table.lookup()[(1, 1803)]
        np.testing.assert_array_equal(sample.instrument, [expected] * 3)

    def test_child_multiplicity_matches_usable_ancestors(self):
        records, panel = small_population()
        sample = build_stacked_sample(records, panel, "years_lived", "G2")
        by_id = {r.id: r for r in records}
        ids, counts = np.unique(sample.record_ids, return_counts=True)
        for rid, count in zip(ids, counts):
            usable = [
                a for a in by_id[rid].g1_ancestor_ids
                if by_id[a].treated is not None
            ]
            assert count == len(usable)

    def test_missing_ancestor_raises(self):
        records, panel = small_population()
        orphan = make_record(id=8, generation="G2", g1_ancestor_ids=(999,), cohort=1825,
                             death_age=30.0, last_observed_age=30.0)
        with pytest.raises(DataError, match="missing ancestor 999"):
            build_stacked_sample(records + [orphan], panel, "years_lived", "G2")

    def test_oldest_generation_cannot_stack(self):
        records, panel = small_population()
        with pytest.raises(DataError, match="descendant generations"):
            build_stacked_sample(records, panel, "years_lived", "G1")
