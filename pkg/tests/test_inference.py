import math

import numpy as np
import pytest
from scipy import stats as sps

from diffnet.inference import (
    DebiasResult,
    ci,
    debias_edge,
    multi_edge_cov,
    naive_refit,
    normal_cdf,
    normal_quantile,
    oracle_fit,
    pooled_cov,
    result_record,
    sparklie1,
    sparklie2,
    variance,
    variance_direct,
    z_stat,
)
from diffnet.ising import GraphPair, IsingModel, exact_enumerate
from diffnet.kliep import KliepProblem, gradient
from diffnet.model import edge_to_index

from conftest import random_instance


def exact_moment_problem(pair):
    """Population-level problem: enumeration rows with exact weights."""
    ex = exact_enumerate(pair.gamma_x)
    ey = exact_enumerate(pair.gamma_y)
    return KliepProblem(ex.psi, ey.psi, weights_x=ex.probs, weights_y=ey.probs)


def sparse_kliep_values(problem, lam):
    from diffnet.solvers import sparse_kliep

    return sparse_kliep(problem, lam).values


@pytest.fixture
def small_pair(rng):
    gx = rng.uniform(-0.6, 0.6, 6)
    gy = gx.copy()
    gy[[1, 4]] += [0.3, -0.4]
    return GraphPair(IsingModel(4, gx), IsingModel(4, gy))


class TestSparklie1:
    def test_zero_gradient_leaves_estimate(self, rng):
        psi = rng.choice([-1.0, 1.0], size=(30, 6))
        problem = KliepProblem(psi, psi)
        res = sparklie1(problem, np.zeros(6), rng.standard_normal(6), 2)
        assert res.theta_hat == 0.0

    def test_unit_omega_is_plain_score_step(self, rng):
        problem, theta = random_instance(rng)
        k = 1
        e_k = np.eye(problem.p)[k]
        res = sparklie1(problem, theta, e_k, k)
        g = gradient(theta, problem)
        assert res.theta_hat == pytest.approx(theta[k] - g[k], abs=1e-14)

    def test_affine_in_omega(self, rng):
        problem, theta = random_instance(rng)
        k = 0
        om = rng.standard_normal(problem.p)
        delta = rng.standard_normal(problem.p)
        g = gradient(theta, problem)
        r1 = sparklie1(problem, theta, om, k).theta_hat
        r2 = sparklie1(problem, theta, om + delta, k).theta_hat
        assert r2 - r1 == pytest.approx(-delta @ g, rel=1e-10, abs=1e-12)


class TestRefitEstimators:
    def test_sparklie2_empty_supports_single_refit(self, rng):
        problem, _ = random_instance(rng)
        res = sparklie2(problem, [], [], 3)
        assert res.method == "sparklie2"
        assert res.support_theta == (3,)

    def test_oracle_identical_samples(self, rng):
        psi = rng.choice([-1.0, 1.0], size=(40, 6))
        problem = KliepProblem(psi, psi)
        res = oracle_fit(problem, [], 2)
        assert res.theta_hat == 0.0

    def test_naive_huge_lambda_refits_k_alone(self, rng):
        problem, _ = random_instance(rng)
        res = naive_refit(problem, 10.0, 2)
        assert res.support_theta == (2,)

    def test_population_recovery(self, small_pair):
        problem = exact_moment_problem(small_pair)
        theta_star = small_pair.theta_star
        support = np.flatnonzero(theta_star)
        k = int(support[0])
        res = oracle_fit(problem, support, k)
        assert res.theta_hat == pytest.approx(theta_star[k], abs=1e-6)
        res2 = sparklie2(problem, support, support, k)
        assert res2.theta_hat == pytest.approx(theta_star[k], abs=1e-6)


class TestPooledCov:
    def test_theta_zero_reduces_to_plain_covariances(self, rng):
        problem, _ = random_instance(rng)
        pooled = pooled_cov(problem, np.zeros(problem.p))
        psi_y = problem.psi_y
        cov_y = psi_y.T @ psi_y / psi_y.shape[0] - np.outer(
            psi_y.mean(0), psi_y.mean(0)
        )
        assert np.allclose(pooled.S_psir, cov_y, atol=1e-13)

    def test_constant_rows_zero(self):
        psi = np.ones((10, 3))
        problem = KliepProblem(psi, psi)
        pooled = pooled_cov(problem, np.zeros(3))
        assert np.abs(pooled.S_psi).max() == 0.0
        assert np.abs(pooled.S_psir).max() == 0.0

    def test_two_pass_oracle(self, rng):
        problem, theta = random_instance(rng, m_max=4, n_max=40)
        pooled = pooled_cov(problem, theta)
        # direct two-pass covariance of the weighted rows
        from diffnet.kliep import ratio_state

        st = ratio_state(theta, problem.psi_y)
        rows = problem.psi_y * st.rhat[:, None]
        mu = rows.mean(axis=0)
        direct = (rows - mu).T @ (rows - mu) / rows.shape[0]
        # means differ: pooled uses muhat (ratio-weighted), which equals the
        # plain mean of the weighted rows
        assert np.allclose(mu, st.muhat, atol=1e-12)
        assert np.allclose(pooled.S_psir, direct, atol=1e-12)
        rows_x = problem.psi_x
        mux = rows_x.mean(axis=0)
        direct_x = (rows_x - mux).T @ (rows_x - mux) / rows_x.shape[0]
        assert np.allclose(pooled.S_psi, direct_x, atol=1e-12)


class TestVariance:
    def test_zero_omega_degenerate(self, rng):
        problem, theta = random_instance(rng)
        pooled = pooled_cov(problem, theta)
        val, degenerate = variance(np.zeros(problem.p), pooled)
        assert val == 0.0 and degenerate

    def test_identity_pooled(self, rng):
        problem, _ = random_instance(rng)

        class FakePooled:
            S_pooled = np.eye(problem.p)

        om = rng.standard_normal(problem.p)
        val, _ = variance(om, FakePooled())
        assert val == pytest.approx(om @ om, rel=1e-12)

    def test_quadratic_form_oracle(self, rng):
        problem, theta = random_instance(rng)
        pooled = pooled_cov(problem, theta)
        om = rng.standard_normal(problem.p)
        val, _ = variance(om, pooled)
        assert val == pytest.approx(float(om @ pooled.S_pooled @ om), abs=1e-12)

    def test_direct_matches_materialized(self, rng):
        problem, theta = random_instance(rng)
        pooled = pooled_cov(problem, theta)
        om = rng.standard_normal(problem.p)
        v1, _ = variance(om, pooled)
        v2, _ = variance_direct(problem, theta, om)
        assert v2 == pytest.approx(v1, rel=1e-10, abs=1e-12)

    def test_symmetrization_invariance(self, rng):
        problem, theta = random_instance(rng)
        om = rng.standard_normal(problem.p)
        S = pooled_cov(problem, theta).S_pooled
        noise = rng.standard_normal(S.shape)

        class P1:
            S_pooled = S + noise

        class P2:
            S_pooled = S + (noise + noise.T) / 2

        assert variance(om, P1())[0] == pytest.approx(
            variance(om, P2())[0], rel=1e-10
        )


class TestNormalFunctions:
    def test_quantile_accuracy_vs_scipy(self):
        qs = np.concatenate([
            np.linspace(1e-6, 1 - 1e-6, 201),
            [1e-9, 1e-7, 0.5, 1 - 1e-7, 1 - 1e-9],
        ])
        ours = np.array([normal_quantile(q) for q in qs])
        ref = sps.norm.ppf(qs)
        assert np.abs(ours - ref).max() <= 1e-9

    def test_cdf_accuracy_vs_scipy(self):
        zs = np.linspace(-8, 8, 301)
        ours = np.array([normal_cdf(z) for z in zs])
        assert np.abs(ours - sps.norm.cdf(zs)).max() <= 1e-12

    def test_quantile_domain(self):
        with pytest.raises(ValueError):
            normal_quantile(0.0)
        with pytest.raises(ValueError):
            normal_quantile(1.0)


def _result(theta_hat=0.5, sigma2=4.0, n=100, k=0):
    return DebiasResult(k=k, theta_hat=theta_hat, method="sparklie1", n=n,
                        sigma_hat2=sigma2)


class TestCi:
    def test_standard_halfwidth(self):
        res = _result()
        lo, hi = ci(res, 0.05)
        half = 1.959964 * 2.0 / 10.0
        assert hi - res.theta_hat == pytest.approx(half, abs=1e-5)
        assert res.theta_hat - lo == pytest.approx(half, abs=1e-5)

    def test_degenerate_point_interval(self):
        res = DebiasResult(k=0, theta_hat=0.3, method="naive", n=50,
                           sigma_hat2=1e-12, degenerate=True)
        assert ci(res, 0.05) == (0.3, 0.3)

    def test_nesting_in_alpha(self):
        res = _result()
        lo1, hi1 = ci(res, 0.01)
        lo2, hi2 = ci(res, 0.10)
        assert lo1 < lo2 and hi2 < hi1


class TestZStat:
    def test_zero_estimate(self):
        z, p = z_stat(_result(theta_hat=0.0))
        assert z == 0.0 and p == 1.0

    def test_critical_value_p(self):
        # z = 1.959964 gives a two-sided p of 0.05
        res = _result(theta_hat=1.959964 * 2.0 / 10.0)
        z, p = z_stat(res)
        assert p == pytest.approx(0.05, abs=1e-6)


class TestMultiEdgeCov:
    def test_single_edge_recovers_variance(self, rng):
        problem, theta = random_instance(rng)
        pooled = pooled_cov(problem, theta)
        om = rng.standard_normal(problem.p)
        M = multi_edge_cov(om[:, None], pooled)
        assert M.shape == (1, 1)
        assert M[0, 0] == pytest.approx(variance(om, pooled)[0], rel=1e-12)

    def test_identity_pooled_gram(self, rng):
        problem, _ = random_instance(rng)
        Om = rng.standard_normal((problem.p, 3))

        class FakePooled:
            S_pooled = np.eye(problem.p)

        M = multi_edge_cov(Om, FakePooled())
        assert np.allclose(M, Om.T @ Om, atol=1e-12)

    def test_pairwise_oracle(self, rng):
        problem, theta = random_instance(rng)
        pooled = pooled_cov(problem, theta)
        Om = rng.standard_normal((problem.p, 4))
        M = multi_edge_cov(Om, pooled)
        S = pooled.S_pooled
        for a in range(4):
            for b in range(4):
                assert M[a, b] == pytest.approx(
                    float(Om[:, a] @ S @ Om[:, b]), rel=1e-10, abs=1e-12
                )


class TestDebiasEdgeAndRecords:
    def test_record_fields(self, rng):
        problem, _ = random_instance(rng, m_max=5)
        res = debias_edge(problem, 1, 0.4, method="sparklie1",
                          scaled_penalty=0.3)
        rec = result_record(res, alpha=0.05)
        assert set(rec) == {
            "k", "u", "v", "theta_hat", "sigma_hat", "z", "p_value",
            "ci_lo", "ci_hi", "method", "lambda_theta", "lambda_k",
        }
        assert rec["k"] == 2
        assert rec["ci_lo"] <= rec["theta_hat"] <= rec["ci_hi"]
        assert 0.0 <= rec["p_value"] <= 1.0

    def test_refit_step1_flag_changes_base(self, rng):
        problem, _ = random_instance(rng, m_max=6, n_max=80)
        kwargs = dict(method="sparklie1", scaled_penalty=0.3)
        with_refit = debias_edge(problem, 1, 0.3, refit_step1=True, **kwargs)
        raw = debias_edge(problem, 1, 0.3, refit_step1=False, **kwargs)
        for res in (with_refit, raw):
            assert np.isfinite(res.theta_hat)
            assert res.sigma_hat2 > 0
        # the raw path corrects from the penalized estimate itself
        assert np.array_equal(raw.theta_check, sparse_kliep_values(problem, 0.3))

    def test_identical_samples_null_z(self, rng):
        """Under exchangeable samples the studentized statistic should stay
        sub-critical in most replications."""
        psi_pool = rng.choice([-1.0, 1.0], size=(120, 10))
        hits = 0
        reps = 60
        for r in range(reps):
            perm = rng.permutation(120)
            problem = KliepProblem(psi_pool[perm[:40]], psi_pool[perm[40:]])
            res = debias_edge(problem, 0, 0.5, method="sparklie1",
                              scaled_penalty=0.3)
            z, _ = z_stat(res)
            hits += int(abs(z) > 1.959964)
        # binomial(60, 0.05): >= 10 rejections has probability ~ 1e-3
        assert hits <= 9
