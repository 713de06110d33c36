import numpy as np
import pytest

from bsglm._rng import stream
from bsglm.lattice import build_lattice, build_ugl
from bsglm.operators import PrecisionOperator, assemble_precision
from bsglm.sampling import (
    NoiseVectors,
    SamplerConfig,
    data_block_factors,
    draw_noise,
    perturbation_rhs,
    sample_cholesky,
    sample_pcg,
    sample_prior,
    solve_mean,
)
from bsglm.sparse import cholesky, fill_reducing_order, ic0


def small_instance(rng, k=2, n=9, dims=(3, 3, 1)):
    lat = build_lattice(dims, np.ones(dims, bool))
    g = build_ugl(lat)
    x = rng.standard_normal((12, k))
    xtx = x.T @ x
    lam = rng.uniform(0.5, 2.0, n)
    alpha = rng.uniform(0.5, 2.0, k)
    btilde = assemble_precision(xtx, lam, alpha, g.d)
    op = PrecisionOperator(xtx=xtx, lam=lam, alpha=alpha, d_w=g.d)
    b_w = rng.standard_normal(k * n)
    return g, op, btilde, b_w, xtx, lam, alpha


class TestSampleCholesky:
    def test_identity_precision_injected_noise(self, rng):
        from bsglm.sparse import SparseSym

        z0 = rng.standard_normal(4)
        w, mu = sample_cholesky(SparseSym.from_dense(np.eye(4)), np.zeros(4), z=z0)
        np.testing.assert_allclose(mu, 0.0, atol=0)
        np.testing.assert_allclose(w, z0, atol=1e-14)

    def test_mean_matches_dense(self):
        from bsglm.sparse import SparseSym

        b = SparseSym.from_dense([[4.0, -2.0], [-2.0, 4.0]])
        _, mu = sample_cholesky(b, np.array([2.0, 2.0]), z=np.zeros(2))
        np.testing.assert_allclose(mu, [1.0, 1.0], atol=1e-14)

    def test_moments_match_dense_oracle(self, rng):
        g, op, btilde, b_w, *_ = small_instance(rng)
        cov = np.linalg.inv(btilde.to_dense())
        mu_exact = cov @ b_w
        factor = cholesky(btilde)
        m = 40_000
        draws = np.empty((m, btilde.n))
        gen = stream(7, "chol-moments")
        for j in range(m):
            draws[j], _ = sample_cholesky(btilde, b_w, rng=gen, factor=factor)
        check_gaussian_moments(draws, mu_exact, cov)


def check_gaussian_moments(draws, mu, cov, z_mean=4.5, z_cov=5.5):
    m = draws.shape[0]
    mean_se = np.sqrt(np.diag(cov) / m)
    assert np.max(np.abs(draws.mean(axis=0) - mu) / mean_se) < z_mean
    emp = np.cov(draws.T)
    cov_se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / m)
    assert np.max(np.abs(emp - cov) / cov_se) < z_cov


class TestSamplePcg:
    def test_zero_noise_gives_mean(self, rng):
        g, op, btilde, b_w, xtx, lam, alpha = small_instance(rng)
        noise = NoiseVectors(z1=np.zeros(2 * g.n_pairs), z2=np.zeros(2 * 9))
        res = sample_pcg(op, b_w, g, noise, delta=1e-12)
        mu = np.linalg.solve(btilde.to_dense(), b_w)
        np.testing.assert_allclose(res.w_r, mu, atol=1e-9)

    def test_rhs_covariance_identity(self, rng):
        g, op, btilde, b_w, xtx, lam, alpha = small_instance(rng)
        l_data = data_block_factors(op.data_blocks())
        gt = g.g_transpose()
        m = 60_000
        rhs = np.empty((m, 18))
        for j in range(m):
            noise = draw_noise((3, "rhs-cov", j), 2, g.n_pairs, 9)
            rhs[j] = perturbation_rhs(b_w, g.g, gt, alpha, l_data, noise)
        check_gaussian_moments(rhs, b_w, btilde.to_dense())

    def test_distribution_matches_dense_oracle(self, rng):
        g, op, btilde, b_w, *_ = small_instance(rng)
        cov = np.linalg.inv(btilde.to_dense())
        mu_exact = cov @ b_w
        perm = fill_reducing_order(btilde)
        precond = ic0(btilde.permuted(perm))
        l_data = data_block_factors(op.data_blocks())
        m = 30_000
        draws = np.empty((m, 18))
        for j in range(m):
            noise = draw_noise((11, "pcg-moments", j), 2, g.n_pairs, 9)
            draws[j] = sample_pcg(
                op, b_w, g, noise, delta=1e-12, l_data=l_data,
                btilde=btilde, perm=perm, precond=precond,
            ).w_r
        check_gaussian_moments(draws, mu_exact, cov)

    def test_noise_length_validation(self, rng):
        g, op, btilde, b_w, *_ = small_instance(rng)
        bad = NoiseVectors(z1=np.zeros(3), z2=np.zeros(18))
        with pytest.raises(ValueError, match="z1"):
            sample_pcg(op, b_w, g, bad)

    def test_warm_start_reduces_iterations(self, rng):
        g, op, btilde, b_w, *_ = small_instance(rng)
        noise = draw_noise((5, "warm", 0), 2, g.n_pairs, 9)
        cold = sample_pcg(op, b_w, g, noise, delta=1e-10)
        warm = sample_pcg(op, b_w, g, noise, delta=1e-10, x_start=cold.w_r)
        assert warm.iters <= cold.iters


class TestSolveMean:
    def test_zero_rhs(self, rng):
        g, op, btilde, *_ = small_instance(rng)
        np.testing.assert_array_equal(solve_mean(op, np.zeros(18)), np.zeros(18))

    def test_diagonal_division(self):
        from bsglm.sparse import SparseSym

        b = SparseSym.from_dense(np.diag([2.0, 5.0]))
        np.testing.assert_allclose(
            solve_mean(b, np.array([4.0, 10.0]), delta=1e-12), [2.0, 2.0], atol=1e-10
        )

    @pytest.mark.parametrize("method", ["cholesky", "pcg"])
    def test_random_matches_dense(self, rng, method):
        g, op, btilde, b_w, *_ = small_instance(rng, k=4, n=25, dims=(5, 5, 1))
        delta = 1e-10
        mu = solve_mean(op, b_w, delta=delta, method=method)
        dense = np.linalg.solve(btilde.to_dense(), b_w)
        assert np.linalg.norm(mu - dense) / np.linalg.norm(dense) <= 10 * delta

    def test_auto_threshold_dispatch(self, rng):
        g, op, btilde, b_w, *_ = small_instance(rng)
        cfg = SamplerConfig(method="auto", dimension_threshold=4)
        mu = solve_mean(op, b_w, config=cfg)  # resolves to pcg
        dense = np.linalg.solve(btilde.to_dense(), b_w)
        np.testing.assert_allclose(mu, dense, rtol=1e-6)


class TestSamplePrior:
    def test_zero_noise(self, ugl_333):
        w = sample_prior(ugl_333, 1.0, noise_z1=np.zeros(ugl_333.n_pairs))
        np.testing.assert_array_equal(w, np.zeros(27))

    def test_two_voxel_minimum_norm(self):
        lat = build_lattice((2, 1, 1), np.ones((2, 1, 1), bool))
        g = build_ugl(lat)
        z = 1.37
        w = sample_prior(g, 1.0, noise_z1=np.array([z]), delta=1e-12)
        # pseudoinverse solution of D w = G' z
        expected = np.linalg.pinv(g.d.to_dense()) @ (g.g.T @ np.array([z]))
        np.testing.assert_allclose(w, expected, atol=1e-10)
        np.testing.assert_allclose(w, [z / 2.0, -z / 2.0], atol=1e-10)

    def test_sample_mean_near_zero(self):
        lat = build_lattice((10, 10, 10), np.ones((10, 10, 10), bool))
        g = build_ugl(lat)
        alpha = 1e-2
        m = 40
        means = np.empty(m)
        for j in range(m):
            w = sample_prior(g, alpha, rng=stream(13, "prior-mean", j), delta=1e-8)
            means[j] = w.mean()
        # mean over draws of the field average should be near zero
        se = means.std(ddof=1) / np.sqrt(m)
        assert abs(means.mean()) < 4 * se + 1e-12

    def test_prior_variance_structure(self, rng):
        # empirical covariance of prior draws matches the pseudoinverse on
        # the range of D (checked through quadratic forms)
        lat = build_lattice((4, 4, 1), np.ones((4, 4, 1), bool))
        g = build_ugl(lat)
        alpha = 0.7
        m = 4000
        n = 16
        draws = np.empty((m, n))
        for j in range(m):
            draws[j] = sample_prior(g, alpha, rng=stream(5, "prior-var", j), delta=1e-10)
        d = g.d.to_dense()
        quad = np.einsum("ji,ik,jk->j", draws, d, draws)
        # E[w' D w] = rank(D)/alpha for an intrinsic field
        expected = (n - 1) / alpha
        se = quad.std(ddof=1) / np.sqrt(m)
        assert abs(quad.mean() - expected) < 4.5 * se
