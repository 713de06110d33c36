import numpy as np
import pytest
from types import SimpleNamespace

from bsglm.ppm import (
    Contrast,
    PpmMap,
    excursion_set_greedy,
    joint_ppm,
    marginal_ppm_mcmc,
    marginal_ppm_svb,
    threshold_map,
)


def chain_with(draws):
    c = Contrast(vector=np.array([1.0]), gamma=0.0, name="c")
    return SimpleNamespace(contrast_samples={"c": np.asarray(draws, dtype=float)}, lattice=None), c


class TestMarginalMcmc:
    def test_seven_of_ten(self):
        draws = np.concatenate([np.ones((7, 1)), -np.ones((3, 1))])
        chain, c = chain_with(draws)
        assert marginal_ppm_mcmc(chain, c).prob[0] == pytest.approx(0.7)

    def test_very_low_gamma_all_one(self, rng):
        chain, _ = chain_with(rng.standard_normal((50, 4)))
        c = Contrast(vector=np.array([1.0]), gamma=-1e30, name="c")
        np.testing.assert_array_equal(marginal_ppm_mcmc(chain, c).prob, np.ones(4))

    def test_zero_draws_errors(self):
        chain, c = chain_with(np.zeros((0, 3)))
        with pytest.raises(ValueError, match="zero draws"):
            marginal_ppm_mcmc(chain, c)

    def test_monotone_in_gamma(self, rng):
        chain, _ = chain_with(rng.standard_normal((200, 5)))
        grid = np.linspace(-2, 2, 9)
        probs = []
        for g in grid:
            c = Contrast(vector=np.array([1.0]), gamma=g, name="c")
            probs.append(marginal_ppm_mcmc(chain, c).prob)
        probs = np.array(probs)
        assert np.all(np.diff(probs, axis=0) <= 0)

    def test_reorder_invariance(self, rng):
        draws = rng.standard_normal((100, 3))
        chain1, c = chain_with(draws)
        chain2, _ = chain_with(draws[rng.permutation(100)])
        m1 = threshold_map(marginal_ppm_mcmc(chain1, c), 0.4)
        m2 = threshold_map(marginal_ppm_mcmc(chain2, c), 0.4)
        np.testing.assert_array_equal(m1, m2)


class TestMarginalSvb:
    def make_posterior(self, samples):
        from bsglm.svb import svb_marginal_stats

        stats = svb_marginal_stats(samples)
        return SimpleNamespace(marginal_stats=lambda: stats, lattice=None)

    def test_mean_equals_gamma_gives_half(self, rng):
        samples = rng.standard_normal((500, 1, 3))
        samples -= samples.mean(axis=0, keepdims=True)  # exact zero mean
        post = self.make_posterior(samples)
        c = Contrast(vector=np.array([1.0]), gamma=0.0, name="c")
        np.testing.assert_allclose(marginal_ppm_svb(post, c).prob, 0.5, atol=1e-12)

    def test_zero_variance_degenerate(self):
        samples = np.full((5, 1, 2), 2.0)
        post = self.make_posterior(samples)
        above = Contrast(vector=np.array([1.0]), gamma=1.0, name="c")
        below = Contrast(vector=np.array([1.0]), gamma=2.0, name="c")  # mean == gamma
        np.testing.assert_array_equal(marginal_ppm_svb(post, above).prob, [1.0, 1.0])
        np.testing.assert_array_equal(marginal_ppm_svb(post, below).prob, [0.0, 0.0])

    def test_matches_gaussian_tail_oracle(self, rng):
        mu, sd, gamma = 0.7, 1.3, 0.4
        n_s = 10_000
        samples = (mu + sd * rng.standard_normal(n_s)).reshape(n_s, 1, 1)
        post = self.make_posterior(samples)
        c = Contrast(vector=np.array([1.0]), gamma=gamma, name="c")
        from scipy.stats import norm

        exact = norm.sf((gamma - mu) / sd)
        se = 4.0 / np.sqrt(n_s)  # generous moment-error propagation bound
        assert marginal_ppm_svb(post, c).prob[0] == pytest.approx(exact, abs=se)


class TestJoint:
    def test_singleton_equals_marginal(self, rng):
        chain, c = chain_with(rng.standard_normal((300, 4)))
        marg = marginal_ppm_mcmc(chain, c).prob
        for v in range(4):
            assert joint_ppm(chain, c, np.array([v])) == pytest.approx(marg[v])

    def test_disjoint_exceedances(self):
        draws = np.array([[1.0, -1.0], [-1.0, 1.0]])
        chain, c = chain_with(draws)
        assert joint_ppm(chain, c, np.array([0, 1])) == 0.0

    def test_empty_set_errors(self, rng):
        chain, c = chain_with(rng.standard_normal((10, 2)))
        with pytest.raises(ValueError, match="nonempty"):
            joint_ppm(chain, c, np.array([], dtype=int))

    def test_joint_below_min_marginal(self, rng):
        chain, c = chain_with(rng.standard_normal((400, 8)))
        marg = marginal_ppm_mcmc(chain, c).prob
        for _ in range(200):
            size = rng.integers(1, 6)
            voxels = rng.choice(8, size=size, replace=False)
            assert joint_ppm(chain, c, voxels) <= marg[voxels].min() + 1e-12


class TestExcursion:
    def test_all_draws_exceed_everywhere(self):
        chain, c = chain_with(np.ones((20, 5)))
        e = excursion_set_greedy(chain, c, 0.95)
        np.testing.assert_array_equal(e, np.arange(5))

    def test_level_above_max_marginal_empty(self, rng):
        draws = (rng.random((100, 4)) < 0.3).astype(float) * 2 - 1
        chain, c = chain_with(draws)
        e = excursion_set_greedy(chain, c, 0.99)
        assert e.size == 0

    def test_nested_levels(self, rng):
        chain, c = chain_with(rng.standard_normal((500, 20)) + 0.8)
        e_hi = excursion_set_greedy(chain, c, 0.95)
        e_lo = excursion_set_greedy(chain, c, 0.90)
        assert set(e_hi).issubset(set(e_lo))
        assert joint_ppm(chain, c, e_lo) >= 0.90 if e_lo.size else True

    def test_candidate_domain_restriction(self, rng):
        chain, c = chain_with(rng.standard_normal((200, 10)) + 2.0)
        cands = np.array([1, 3, 5])
        e = excursion_set_greedy(chain, c, 0.5, candidates=cands)
        assert set(e).issubset(set(cands.tolist()))

    def test_level_validation(self, rng):
        chain, c = chain_with(rng.standard_normal((10, 2)))
        with pytest.raises(ValueError):
            excursion_set_greedy(chain, c, 1.5)


class TestThreshold:
    def test_all_ones_active(self):
        c = Contrast(vector=np.array([1.0]), gamma=0.0, name="c")
        m = PpmMap(prob=np.ones(4), method="mcmc", n_draws=10, contrast=c)
        assert threshold_map(m).all()

    def test_strict_inequality_at_cutoff(self):
        c = Contrast(vector=np.array([1.0]), gamma=0.0, name="c")
        m = PpmMap(prob=np.array([0.9, 0.9000001, 0.89]), method="mcmc", n_draws=10, contrast=c)
        np.testing.assert_array_equal(threshold_map(m, 0.9), [False, True, False])

    def test_elementwise(self, rng):
        c = Contrast(vector=np.array([1.0]), gamma=0.0, name="c")
        p = rng.random(50)
        m = PpmMap(prob=p, method="svb", n_draws=10, contrast=c)
        np.testing.assert_array_equal(threshold_map(m, 0.33), p > 0.33)

    def test_cutoff_validation(self):
        c = Contrast(vector=np.array([1.0]), gamma=0.0, name="c")
        m = PpmMap(prob=np.ones(1), method="mcmc", n_draws=1, contrast=c)
        with pytest.raises(ValueError):
            threshold_map(m, 1.0)


def test_contrast_validation():
    with pytest.raises(ValueError, match="nonzero"):
        Contrast(vector=np.zeros(3), gamma=0.0, name="zero")
    with pytest.raises(ValueError, match="finite"):
        Contrast(vector=np.ones(3), gamma=np.inf, name="inf")


def test_ppm_map_validation():
    c = Contrast(vector=np.array([1.0]), gamma=0.0, name="c")
    with pytest.raises(ValueError):
        PpmMap(prob=np.array([1.2]), method="mcmc", n_draws=1, contrast=c)
