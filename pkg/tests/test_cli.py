"""Pipeline driver tests: config validation, the four subcommands, report
and CSV artifact shape, determinism, and exit codes."""

import csv
import json
import re
import subprocess
import sys
from pathlib import Path

import pytest

from gencausal import cli
from gencausal.errors import ConfigError


def write_config(path: Path, document: dict) -> str:
    path.write_text(json.dumps(document))
    return str(path)


def small_document(out_dir, **extra) -> dict:
    """A fast config: the default preset shrunk to 30 parishes x 40 families."""
    document = {
        "seed": 0,
        "out_dir": str(out_dir),
        "simulate": {
            "preset": "default",
            "overrides": {"n_parishes": 30, "n_families_per_parish": 40},
        },
        "n_draws": 300,
        "n_reps": 60,
    }
    document.update(extra)
    return document


def read_report(out_dir) -> dict:
    return json.loads((Path(out_dir) / "report.json").read_text())


def read_csv_rows(path: Path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames), list(reader)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """One estimate + mediate run on the small config, shared read-only."""
    tmp = tmp_path_factory.mktemp("small_run")
    out = tmp / "out"
    cfg = write_config(tmp / "cfg.json", small_document(out))
    assert cli.main(["estimate", "--config", cfg]) == 0
    assert cli.main(["mediate", "--config", cfg]) == 0
    return out, read_report(out)


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    """A full-size default-preset estimate run (every estimator family)."""
    tmp = tmp_path_factory.mktemp("default_run")
    out = tmp / "out"
    cfg = write_config(tmp / "cfg.json", {"seed": 0, "out_dir": str(out),
                                          "simulate": {"preset": "default"}})
    assert cli.main(["estimate", "--config", cfg]) == 0
    return out, read_report(out)


class TestLoadConfig:
    def test_defaults_fill_in(self):
        cfg = cli.load_config({})
        assert cfg.simulate == {"preset": "default", "overrides": {}}
        assert cfg.inputs is None
        assert cfg.estimators == cli.ESTIMATORS
        assert cfg.generations == ("G1", "G2", "G3")
        assert cfg.controls == "baseline"
        assert cfg.jobs == 1

    def test_unknown_key_fails_closed(self):
        with pytest.raises(ConfigError, match="unknown config keys: bogus_key"):
            cli.load_config({"bogus_key": 1})

    def test_unsupported_schema_version(self):
        with pytest.raises(ConfigError, match="schema_version"):
            cli.load_config({"schema_version": 99})

    def test_both_sources_rejected(self):
        with pytest.raises(ConfigError, match="exactly one"):
            cli.load_config({
                "simulate": {"preset": "default"},
                "inputs": {"individuals": "a", "panel": "b"},
            })

    def test_no_source_rejected(self):
        with pytest.raises(ConfigError, match="exactly one"):
            cli.load_config({"simulate": None})

    def test_inputs_alone_replaces_default_simulate(self):
        cfg = cli.load_config({"inputs": {"individuals": "a.csv", "panel": "b.csv"}})
        assert cfg.simulate is None
        assert cfg.inputs == {"individuals": "a.csv", "panel": "b.csv"}

    def test_inputs_need_exact_keys(self):
        with pytest.raises(ConfigError, match="individuals"):
            cli.load_config({"inputs": {"individuals": "a.csv"}})

    @pytest.mark.parametrize("key, value", [
        ("estimators", ["bogus"]),
        ("outcomes", ["height"]),
        ("generations", ["G4"]),
        ("mediators", ["astrology"]),
    ])
    def test_unknown_grid_member(self, key, value):
        with pytest.raises(ConfigError, match="unknown"):
            cli.load_config({key: value})

    def test_duplicate_grid_member(self):
        with pytest.raises(ConfigError, match="duplicate"):
            cli.load_config({"estimators": ["tsls", "tsls"]})

    def test_unknown_control_set(self):
        with pytest.raises(ConfigError, match="control set"):
            cli.load_config({"controls": "kitchen_sink"})

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            cli.load_config({"simulate": {"preset": "nope"}})

    def test_unknown_simulate_key(self):
        with pytest.raises(ConfigError, match="simulate keys"):
            cli.load_config({"simulate": {"preset": "default", "n_parishes": 2}})

    @pytest.mark.parametrize("key, value", [
        ("seed", -1),
        ("seed", True),
        ("seed", "3"),
        ("n_draws", 0),
        ("n_reps", 0),
        ("jobs", 0),
    ])
    def test_count_fields_validated(self, key, value):
        with pytest.raises(ConfigError):
            cli.load_config({key: value})

    def test_unknown_dgp_override(self):
        cfg = cli.load_config({"simulate": {"overrides": {"n_cities": 3}}})
        with pytest.raises(ConfigError, match="unknown DGP parameter"):
            cli.resolve_params(cfg)

    def test_scalar_and_tuple_overrides(self):
        cfg = cli.load_config({"simulate": {"overrides": {
            "n_parishes": 12,
            "cohort_window": [1800, 1810],
            "shock_years": {"1805": 1.5},
        }}})
        params = cli.resolve_params(cfg)
        assert params.n_parishes == 12
        assert params.cohort_window == (1800, 1810)
        assert params.shock_years == {1805: 1.5}

    def test_nested_dataclass_override(self):
        cfg = cli.load_config({"simulate": {"overrides": {
            "hazard_params": {"gompertz_shape": 0.11},
        }}})
        params = cli.resolve_params(cfg)
        assert params.hazard_params.gompertz_shape == 0.11
        assert params.hazard_params.gompertz_rate == cli.PRESETS["default"](0).hazard_params.gompertz_rate

    def test_bad_nested_override_key(self):
        cfg = cli.load_config({"simulate": {"overrides": {"hazard_params": {"nope": 1}}}})
        with pytest.raises(ConfigError, match="hazard_params"):
            cli.resolve_params(cfg)


class TestSimulate:
    def test_default_population_files_and_treated_share(self, tmp_path, capsys):
        cfg_a = write_config(tmp_path / "a.json",
                             {"seed": 0, "out_dir": str(tmp_path / "a"),
                              "simulate": {"preset": "default"}})
        assert cli.main(["simulate", "--config", cfg_a]) == 0
        stdout = capsys.readouterr().out
        for name in ("individuals.csv", "panel.csv", "truth.json"):
            assert (tmp_path / "a" / name).exists()
        match = re.search(r"treated share \(post-1801 G1\): ([0-9.]+)", stdout)
        assert match is not None
        share = float(match.group(1))
        assert 0.2 < share < 0.5

        cfg_b = write_config(tmp_path / "b.json",
                             {"seed": 0, "out_dir": str(tmp_path / "b"),
                              "simulate": {"preset": "default"}})
        assert cli.main(["simulate", "--config", cfg_b]) == 0
        for name in ("individuals.csv", "panel.csv", "truth.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_invalid_params_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json",
                           small_document(tmp_path / "out",
                                          simulate={"preset": "default",
                                                    "overrides": {"n_parishes": -5}}))
        assert cli.main(["simulate", "--config", cfg]) == 2
        assert "config error" in capsys.readouterr().err


class TestEstimate:
    def test_small_grid_runs_clean(self, small_run):
        _, report = small_run
        assert report["schema_version"] == cli.SCHEMA_VERSION
        assert report["source"] == "simulate:default"
        cells = report["cells"]
        assert all(c["status"] == "ok" for c in cells)
        keys = (cells[0].keys())
        for name in ("estimator", "generation", "outcome", "estimate", "se",
                     "n_obs", "status", "error"):
            assert name in keys
        order = [(c["estimator"], c["generation"], c["outcome"]) for c in cells]
        assert order == sorted(order)

    def test_full_default_run_covers_every_family(self, default_run):
        _, report = default_run
        families = {c["estimator"] for c in report["cells"] if c["status"] == "ok"}
        assert len(families) >= 6
        assert families == set(cli.ESTIMATORS)

    def test_ratio_identity_against_own_stages(self, default_run):
        _, report = default_run
        assert report["checks"]["tsls_ratio_identity_ok"] is True
        assert report["checks"]["tsls_ratio_identity_max_gap"] < 1e-8
        tsls_cells = [c for c in report["cells"]
                      if c["estimator"] == "tsls" and c["status"] == "ok"]
        assert tsls_cells
        for cell in tsls_cells:
            ratio = cell["extra"]["reduced_form"] / cell["extra"]["first_stage"]
            assert abs(cell["estimate"] - ratio) < 1e-8

    def test_event_study_csv_shape(self, small_run):
        out, report = small_run
        assert report["files"]["event_study"] == "event_study.csv"
        header, rows = read_csv_rows(out / "event_study.csv")
        assert header == ["outcome", "cohort", "coefficient", "se",
                          "ci_lower", "ci_upper", "is_reference"]
        by_outcome = {}
        for row in rows:
            by_outcome.setdefault(row["outcome"], []).append(row)
        for outcome_rows in by_outcome.values():
            cohorts = [int(r["cohort"]) for r in outcome_rows]
            assert cohorts == sorted(cohorts)
            references = [r for r in outcome_rows if r["is_reference"] == "1"]
            assert references
            for row in references:
                assert float(row["coefficient"]) == 0.0
                assert float(row["se"]) == 0.0

    def test_survival_csv_shape(self, small_run):
        out, report = small_run
        assert report["files"]["survival"] == "survival.csv"
        header, rows = read_csv_rows(out / "survival.csv")
        assert header == ["age", "s_treated", "s_untreated"]
        ages = [float(r["age"]) for r in rows]
        assert ages[0] == 2.0 and ages[-1] == 100.0
        for column in ("s_treated", "s_untreated"):
            values = [float(r[column]) for r in rows]
            assert values[0] == 1.0
            assert all(0.0 <= v <= 1.0 for v in values)
            assert all(a >= b for a, b in zip(values, values[1:]))

    def test_rerun_is_byte_identical(self, tmp_path):
        outputs = []
        for label in ("a", "b"):
            out = tmp_path / label
            cfg = write_config(tmp_path / f"{label}.json", small_document(out))
            assert cli.main(["estimate", "--config", cfg]) == 0
            outputs.append(out)
        for name in ("report.json", "event_study.csv", "survival.csv"):
            assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()

    def test_parallel_jobs_match_serial(self, tmp_path):
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        cfg_s = write_config(tmp_path / "s.json", small_document(serial))
        cfg_p = write_config(tmp_path / "p.json", small_document(parallel))
        assert cli.main(["estimate", "--config", cfg_s]) == 0
        assert cli.main(["estimate", "--config", cfg_p, "--jobs", "4"]) == 0
        assert (serial / "report.json").read_bytes() == (parallel / "report.json").read_bytes()

    def test_inputs_mode_loads_population(self, tmp_path):
        sim_out = tmp_path / "sim"
        cfg_sim = write_config(tmp_path / "sim.json", small_document(sim_out))
        assert cli.main(["simulate", "--config", cfg_sim]) == 0
        est_out = tmp_path / "est"
        cfg_est = write_config(tmp_path / "est.json", {
            "seed": 0,
            "out_dir": str(est_out),
            "inputs": {"individuals": str(sim_out / "individuals.csv"),
                       "panel": str(sim_out / "panel.csv")},
            "estimators": ["naive_ols", "tsls"],
            "outcomes": ["years_lived"],
            "generations": ["G1"],
        })
        assert cli.main(["estimate", "--config", cfg_est]) == 0
        report = read_report(est_out)
        assert report["source"] == "inputs"
        assert {c["estimator"] for c in report["cells"]} == {"naive_ols", "tsls"}
        assert all(c["status"] == "ok" for c in report["cells"])

    def test_missing_inputs_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json", {
            "out_dir": str(tmp_path / "out"),
            "inputs": {"individuals": str(tmp_path / "no.csv"),
                       "panel": str(tmp_path / "nope.csv")},
        })
        assert cli.main(["estimate", "--config", cfg]) == 3
        assert "data error" in capsys.readouterr().err

    def test_empty_grid_is_config_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json",
                           small_document(tmp_path / "out",
                                          estimators=["mother_fe"],
                                          generations=["G2"]))
        assert cli.main(["estimate", "--config", cfg]) == 2
        assert "grid is empty" in capsys.readouterr().err

    def test_unknown_config_key_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json",
                           small_document(tmp_path / "out", bogus_key=1))
        assert cli.main(["estimate", "--config", cfg]) == 2
        assert "bogus_key" in capsys.readouterr().err


class TestMediate:
    def test_grid_completeness_and_flagged_failures(self, small_run):
        _, report = small_run
        rows = report["mediation"]
        assert len(rows) == 24
        combos = {(r["generation"], r["outcome"], r["mediator"]) for r in rows}
        assert len(combos) == 24
        order = [(r["generation"], r["outcome"], r["mediator"]) for r in rows]
        assert order == sorted(order)
        for row in rows:
            if row["status"] == "failed":
                assert row["error"]
            else:
                assert row["error"] is None

    def test_missing_mediator_column_is_isolated(self, small_run):
        _, report = small_run
        rows = report["mediation"]
        midwife = [r for r in rows if r["mediator"] == "midwife_assistance"]
        assert midwife and all(r["status"] == "failed" for r in midwife)
        assert all("midwife_assisted" in r["error"] for r in midwife)
        child = [r for r in rows if r["mediator"] == "child_vaccination"]
        assert child and all(r["status"] == "ok" for r in child)

    def test_mediator_equal_to_outcome_is_refused(self, small_run):
        _, report = small_run
        rows = [r for r in report["mediation"]
                if r["mediator"] == "occupational_score"
                and r["outcome"] == "occupational_score"]
        assert rows and all(r["status"] == "failed" for r in rows)
        assert all("coincides" in r["error"] for r in rows)

    def test_total_cross_check_flag(self, small_run):
        _, report = small_run
        ok_rows = [r for r in report["mediation"] if r["status"] == "ok"]
        assert ok_rows
        for row in ok_rows:
            assert row["total_check_ok"] is True
            assert abs(row["nde"] + row["nie"] - row["total"]) < 1e-8
            assert row["mediator_model"] in ("linear", "logit")

    def test_merges_into_estimate_report(self, small_run):
        _, report = small_run
        assert report["cells"]
        assert report["checks"]["tsls_ratio_identity_ok"] is True

    def test_every_row_failing_exits_four(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json",
                           small_document(tmp_path / "out",
                                          mediators=["midwife_assistance"]))
        assert cli.main(["mediate", "--config", cfg]) == 4
        assert "estimation error" in capsys.readouterr().err
        rows = read_report(tmp_path / "out")["mediation"]
        assert len(rows) == 6
        assert all(r["status"] == "failed" for r in rows)


class TestReportCommand:
    def test_prints_tables(self, small_run, capsys):
        out, _ = small_run
        assert cli.main(["report", "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "estimator" in stdout
        assert "mediator" in stdout
        assert "check tsls_ratio_identity_ok: True" in stdout

    def test_missing_report_exit_code(self, tmp_path, capsys):
        assert cli.main(["report", "--out", str(tmp_path / "nowhere")]) == 3
        assert "run the estimate command first" in capsys.readouterr().err


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "gencausal.cli", "report", "--out",
             str(tmp_path / "missing")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 3
        assert "data error" in proc.stderr

    def test_seed_flag_overrides_config(self, tmp_path):
        base = tmp_path / "base"
        reseeded = tmp_path / "reseeded"
        cfg_a = write_config(tmp_path / "a.json", small_document(
            base, estimators=["naive_ols"], outcomes=["years_lived"],
            generations=["G1"]))
        cfg_b = write_config(tmp_path / "b.json", small_document(
            reseeded, estimators=["naive_ols"], outcomes=["years_lived"],
            generations=["G1"]))
        assert cli.main(["estimate", "--config", cfg_a]) == 0
        assert cli.main(["estimate", "--config", cfg_b, "--seed", "7"]) == 0
        report_a = read_report(base)
        report_b = read_report(reseeded)
        assert report_a["seed"] == 0
        assert report_b["seed"] == 7
        assert report_a["cells"][0]["estimate"] != report_b["cells"][0]["estimate"]
