"""Mediation tests: the mother-component mediator and the direct/indirect
decomposition, each against planted-path oracles."""

import numpy as np
import pytest
from scipy import special

from gencausal.errors import DataError, IdentificationError
from gencausal.mediation import build_epigenetic_mediator, mediate
from gencausal.microdata import IndividualRecord
from gencausal.regress import ols


def make_offspring(rng, n_mothers, sigma_mu, sigma_e, kids=(2, 5), covar_slope=0.0):
    records, covar = [], []
    rid = 0
    for mom in range(1, n_mothers + 1):
        mu = rng.normal(0.0, sigma_mu)
        for _ in range(int(rng.integers(*kids))):
            rid += 1
            w = rng.normal()
            covar.append(w)
            records.append(IndividualRecord(
                id=rid, generation="G2", mother_id=mom, g1_ancestor_ids=(mom,),
                parish=1, region=1, cohort=1780, sex="F", birth_month=6,
                vaccinated_age=None,
                death_age=50.0 + covar_slope * w + mu + rng.normal(0.0, sigma_e),
                last_observed_age=60.0, disability_onset_age=None,
                disability_cause=None, death_cause=None, literacy_good=None,
                occupational_score=None, family_covariates=(0.0,),
                midwife_assisted=None, child_vaccinated=None,
                treated=False, excluded=False,
            ))
    return records, np.asarray(covar)


class TestBuildEpigeneticMediator:
    def test_siblings_share_one_centered_value(self):
        rng = np.random.default_rng(3)
        records, _ = make_offspring(rng, 150, sigma_mu=0.8, sigma_e=1.2)
        med = build_epigenetic_mediator(records, "death_age")
        assert med.shape == (len(records),)
        assert abs(med.mean()) < 1e-12
        mothers = np.asarray([r.mother_id for r in records])
        for mom in np.unique(mothers):
            assert np.ptp(med[mothers == mom]) == 0.0

    def test_variance_recovers_planted_mother_component(self):
        # each mother mean is shrunk by its reliability, so the mediator
        # variance lands at the reliability-weighted share of sigma_mu^2
        rng = np.random.default_rng(3)
        sigma_mu, sigma_e = 0.8, 1.2
        records, _ = make_offspring(rng, 1600, sigma_mu, sigma_e)
        med = build_epigenetic_mediator(records, "death_age")
        mothers = np.asarray([r.mother_id for r in records])
        _, sizes = np.unique(mothers, return_counts=True)
        lam = sigma_mu**2 / (sigma_mu**2 + sigma_e**2 / sizes)
        target = float(np.sum(sizes * lam) / sizes.sum()) * sigma_mu**2
        assert abs(med.var() - target) < 0.12
        # and sits well below the unshrunken raw-mean variance
        assert med.var() < sigma_mu**2

    def test_no_shared_component_gives_near_zero_mediator(self):
        rng = np.random.default_rng(9)
        records, _ = make_offspring(rng, 400, sigma_mu=0.0, sigma_e=1.2)
        med = build_epigenetic_mediator(records, "death_age")
        assert med.var() < 0.02

    def test_covariates_are_swept_out_first(self):
        rng = np.random.default_rng(5)
        records, w = make_offspring(rng, 300, sigma_mu=0.8, sigma_e=1.0, covar_slope=2.0)
        med = build_epigenetic_mediator(records, "death_age", covariates=w, covariate_names=("w",))
        stripped = [
            IndividualRecord(**{**r.__dict__, "death_age": r.death_age - 2.0 * w[i]})
            for i, r in enumerate(records)
        ]
        ref = build_epigenetic_mediator(stripped, "death_age")
        assert np.max(np.abs(med - ref)) < 0.1
        corr = np.corrcoef(med, ref)[0, 1]
        assert corr > 0.99

    def test_single_child_mothers_only(self):
        rng = np.random.default_rng(1)
        records, _ = make_offspring(rng, 40, sigma_mu=0.5, sigma_e=1.0, kids=(1, 2))
        with pytest.raises(IdentificationError):
            build_epigenetic_mediator(records, "death_age")

    def test_missing_outcome(self):
        rng = np.random.default_rng(1)
        records, _ = make_offspring(rng, 10, sigma_mu=0.5, sigma_e=1.0)
        broken = [IndividualRecord(**{**records[0].__dict__, "death_age": None})] + records[1:]
        with pytest.raises(DataError):
            build_epigenetic_mediator(broken, "death_age")

    def test_empty_records(self):
        with pytest.raises(DataError):
            build_epigenetic_mediator([], "death_age")

    def test_covariate_length_mismatch(self):
        rng = np.random.default_rng(1)
        records, w = make_offspring(rng, 10, sigma_mu=0.5, sigma_e=1.0)
        with pytest.raises(DataError):
            build_epigenetic_mediator(records, "death_age", covariates=w[:-1])


def linear_system(rng, n_clusters=200, per=5, a=0.8, b=0.6, c=0.5):
    n = n_clusters * per
    g = np.repeat(np.arange(n_clusters), per)
    d = (rng.uniform(size=n) < 0.5).astype(float)
    x = rng.normal(size=n)
    m = 0.3 + a * d + 0.6 * x + rng.normal(0, 0.3, n_clusters)[g] + rng.normal(0, 1.0, n)
    y = 1.0 + c * d + b * m + 0.4 * x + rng.normal(0, 0.3, n_clusters)[g] + rng.normal(0, 1.0, n)
    return y, d, m, x, g


class TestMediate:
    def test_recovers_planted_paths(self):
        rng = np.random.default_rng(0)
        y, d, m, x, g = linear_system(rng, a=0.8, b=0.6, c=0.5)
        res = mediate(y, d, m, controls=x, control_names=("x",), cluster_ids=g)
        assert abs(res.natural_indirect_effect - 0.8 * 0.6) < 3 * res.nie_se
        assert abs(res.natural_direct_effect - 0.5) < 3 * res.nde_se
        assert res.mediator_model == "linear"
        assert res.n_failed_reps == 0
        assert res.nie_ci[0] < res.natural_indirect_effect < res.nie_ci[1]

    def test_parts_sum_to_total(self):
        rng = np.random.default_rng(2)
        y, d, m, x, g = linear_system(rng)
        res = mediate(y, d, m, controls=x, control_names=("x",), cluster_ids=g, n_reps=50)
        gap = res.natural_direct_effect + res.natural_indirect_effect - res.total_effect
        assert abs(gap) < 1e-12

    def test_total_matches_unmediated_regression(self):
        rng = np.random.default_rng(4)
        y, d, m, x, g = linear_system(rng)
        res = mediate(y, d, m, controls=x, control_names=("x",), cluster_ids=g, n_reps=50)
        plain = ols(np.column_stack([np.ones(y.shape[0]), d, x]), y,
                    ("const", "treated", "x"), cluster_ids=g)
        assert abs(res.total_effect - plain.param("treated")) < 3 * res.total_se

    def test_broken_first_path(self):
        rng = np.random.default_rng(6)
        y, d, m, x, g = linear_system(rng, a=0.0)
        res = mediate(y, d, m, controls=x, control_names=("x",), cluster_ids=g)
        assert abs(res.natural_indirect_effect) < 2 * res.nie_se

    def test_noise_mediator_pushes_everything_direct(self):
        rng = np.random.default_rng(7)
        y, d, m, x, g = linear_system(rng)
        noise = rng.normal(size=y.shape[0])
        res = mediate(y, d, noise, controls=x, control_names=("x",), cluster_ids=g)
        assert abs(res.natural_indirect_effect) < 2 * res.nie_se
        assert abs(res.natural_direct_effect - res.total_effect) < 2 * res.nie_se

    def test_binary_mediator_uses_logit_path(self):
        rng = np.random.default_rng(8)
        n = 4000
        g = np.repeat(np.arange(500), 8)
        d = (rng.uniform(size=n) < 0.5).astype(float)
        x = rng.normal(size=n)
        m = (rng.uniform(size=n) < special.expit(-0.3 + 1.0 * d + 0.5 * x)).astype(float)
        y = 1.0 + 0.5 * d + 0.9 * m + 0.4 * x + rng.normal(0, 1.0, n)
        res = mediate(y, d, m, controls=x, control_names=("x",), cluster_ids=g, n_reps=100)
        eta0 = -0.3 + 0.5 * x
        truth = 0.9 * float(np.mean(special.expit(eta0 + 1.0) - special.expit(eta0)))
        assert res.mediator_model == "logit"
        assert abs(res.natural_indirect_effect - truth) < 3 * res.nie_se
        assert abs(res.natural_direct_effect - 0.5) < 3 * res.nde_se

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(10)
        y, d, m, x, g = linear_system(rng, n_clusters=80)
        r1 = mediate(y, d, m, controls=x, control_names=("x",), cluster_ids=g, n_reps=40)
        r2 = mediate(y, d, m, controls=x, control_names=("x",), cluster_ids=g, n_reps=40)
        assert r1 == r2
        r3 = mediate(y, d, m, controls=x, control_names=("x",), cluster_ids=g, n_reps=40, seed=1)
        assert r1 != r3

    def test_low_draw_count_is_flagged(self):
        rng = np.random.default_rng(11)
        y, d, m, x, g = linear_system(rng, n_clusters=60)
        res = mediate(y, d, m, cluster_ids=g, n_draws=50, n_reps=20)
        assert res.precision_warning is not None
        assert res.n_draws == 50
        full = mediate(y, d, m, cluster_ids=g, n_reps=20)
        assert full.precision_warning is None
        with pytest.raises(ValueError):
            mediate(y, d, m, cluster_ids=g, n_draws=0)

    def test_input_validation(self):
        rng = np.random.default_rng(12)
        y, d, m, x, g = linear_system(rng, n_clusters=30)
        with pytest.raises(DataError):
            mediate(y, d[:-1], m)
        with pytest.raises(DataError):
            mediate(y, np.zeros_like(d), m)
        with pytest.raises(DataError):
            mediate(y, d, np.where(m > 0, m, np.nan))
        with pytest.raises(DataError):
            mediate(y, d, m, controls=x[:-1])

    def test_collinear_control_is_refused(self):
        rng = np.random.default_rng(13)
        y, d, m, x, g = linear_system(rng, n_clusters=30)
        with pytest.raises(IdentificationError):
            mediate(y, d, m, controls=d.copy(), control_names=("copy_of_d",), n_reps=5)

    def test_clustering_changes_the_bootstrap(self):
        rng = np.random.default_rng(14)
        y, d, m, x, g = linear_system(rng, n_clusters=60)
        clustered = mediate(y, d, m, cluster_ids=g, n_reps=60)
        iid = mediate(y, d, m, n_reps=60)
        assert clustered.n_clusters == 60
        assert iid.n_clusters == y.shape[0]
        assert clustered.nie_se != iid.nie_se
