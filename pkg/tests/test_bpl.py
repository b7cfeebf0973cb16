import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bpldag.bpl import (
    BplParams,
    bernoulli_score,
    bpl_log_prob,
    edge_covariance,
    expected_edge_count_and_grad,
    expected_edge_matrix,
    expected_edge_vjp,
    fisher_trace,
    load_checkpoint,
    observed_information_trace,
    pl_log_prob,
    pl_score,
    precedence_matrix,
    prob_joint_precedes,
    prob_precedes,
    sample_dag,
    sample_dags,
    sample_edges,
    sample_permutation,
    save_checkpoint,
    variance_bound,
)
from bpldag.conditionals import LinearGaussian
from bpldag.graph import is_dag
from bpldag.oracle import exact_edge_moments, exact_pair_stats, permutation_probabilities

from conftest import random_params

thetas = st.integers(1, 7).flatmap(
    lambda n: st.lists(st.floats(-5, 5, allow_nan=False), min_size=n, max_size=n)
)


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        hi = f(x)
        x[idx] = old - h
        lo = f(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * h)
    return g


class TestParams:
    def test_diagonal_always_forbidden(self):
        p = BplParams.init(4)
        assert np.all(np.diag(p.forbidden_mask))
        assert np.all(np.diag(p.edge_probs) == 0)

    def test_default_init(self):
        p = BplParams.init(3)
        assert np.all(p.theta == 0)
        off = ~np.eye(3, dtype=bool)
        assert np.allclose(p.edge_probs[off], 0.1)

    def test_forbidden_entries_pinned(self):
        forbidden = np.zeros((3, 3), bool)
        forbidden[0, 1] = True
        p = BplParams.init(3, forbidden=forbidden)
        assert p.edge_probs[0, 1] == 0.0

    def test_checkpoint_round_trip_is_bit_exact(self, tmp_path, rng):
        params = random_params(5, rng, forbid_frac=0.3)
        model = LinearGaussian(rng.normal(size=(5, 5)), rng.normal(size=5), rng.normal(size=5))
        save_checkpoint(tmp_path / "c.json", params, model, note="x")
        back, mback = load_checkpoint(tmp_path / "c.json")
        assert np.array_equal(back.theta, params.theta)
        assert np.array_equal(back.edge_logits, params.edge_logits)
        assert np.array_equal(back.forbidden_mask, params.forbidden_mask)
        for k in model.params:
            assert np.array_equal(mback.params[k], model.params[k])

    def test_checkpoint_without_model(self, tmp_path):
        save_checkpoint(tmp_path / "c.json", BplParams.init(2))
        _, model = load_checkpoint(tmp_path / "c.json")
        assert model is None


class TestSampling:
    def test_single_node(self, rng):
        for _ in range(10):
            assert sample_permutation([0.7], rng).tolist() == [0]

    def test_non_finite_logits(self, rng):
        with pytest.raises(ValueError):
            sample_permutation([0.0, np.inf], rng)
        with pytest.raises(ValueError):
            sample_permutation([np.nan, 0.0], rng)

    def test_two_items_first_probability(self, rng):
        perms = sample_permutation([math.log(2), 0.0], rng, size=100_000)
        freq = np.mean(perms[:, 0] == 0)
        se = math.sqrt((2 / 3) * (1 / 3) / 100_000)
        assert abs(freq - 2 / 3) < 3 * se

    def test_uniform_over_24_orderings(self, rng):
        perms = sample_permutation(np.zeros(4), rng, size=100_000)
        codes = perms @ (4 ** np.arange(4))
        _, counts = np.unique(codes, return_counts=True)
        assert counts.size == 24
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_matches_sequential_definition(self, rng):
        theta = np.array([0.5, -1.0, 1.2, 0.0])
        perms = sample_permutation(theta, rng, size=200_000)
        codes = perms @ (4 ** np.arange(4))
        exact = {sum(v * 4**k for k, v in enumerate(p)): pr for p, pr in permutation_probabilities(theta)}
        keys = np.array(sorted(exact))
        observed = np.array([np.sum(codes == k) for k in keys])
        expected = np.array([exact[k] for k in keys]) * perms.shape[0]
        assert stats.chisquare(observed, expected).pvalue > 1e-3

    def test_edges_half(self, rng):
        params = BplParams(np.zeros(3), np.zeros((3, 3)), np.zeros((3, 3)))
        masks = sample_edges(params, rng, size=100_000)
        mean = masks.mean(axis=0)
        se = math.sqrt(0.25 / 100_000)
        off = ~np.eye(3, dtype=bool)
        assert np.all(np.abs(mean[off] - 0.5) < 3 * se)
        assert np.all(mean[~off] == 0)

    def test_edges_saturated(self, rng):
        params = BplParams(np.zeros(3), np.full((3, 3), 60.0), np.zeros((3, 3)))
        params.forbidden_mask[0, 1] = True
        masks = sample_edges(params, rng, size=1000)
        assert np.all(masks[:, 0, 1] == 0)
        assert np.all(masks[:, 1, 0] == 1)

    def test_samples_are_dags(self, rng):
        params = random_params(12, rng, scale=2.0)
        for _ in range(200):
            s = sample_dag(params, rng)
            assert is_dag(s.adjacency)

    def test_determinism(self):
        params = BplParams.init(6)
        a = sample_dags(params, np.random.default_rng(3), 50)
        b = sample_dags(params, np.random.default_rng(3), 50)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)


class TestLogProb:
    def test_single_item(self):
        assert pl_log_prob([1.3], [0]) == 0.0

    @given(st.integers(1, 7), st.floats(-10, 10))
    def test_equal_logits(self, n, c):
        rng = np.random.default_rng(n)
        assert pl_log_prob(np.full(n, c), rng.permutation(n)) == pytest.approx(-math.lgamma(n + 1), abs=1e-12)

    def test_two_items(self):
        assert pl_log_prob([math.log(2), 0.0], [0, 1]) == pytest.approx(math.log(2 / 3))

    def test_matches_sequential_draws(self, rng):
        theta = rng.normal(size=5)
        for perm, prob in permutation_probabilities(theta):
            assert pl_log_prob(theta, perm) == pytest.approx(math.log(prob), abs=1e-12)

    def test_stable_for_large_logits(self):
        assert np.isfinite(pl_log_prob([800.0, -800.0, 0.0], [0, 2, 1]))

    def test_bpl_log_prob_sums_to_one(self, rng):
        n = 3
        params = random_params(n, rng)
        total = 0.0
        for perm in itertools.permutations(range(n)):
            for bits in itertools.product((0, 1), repeat=n * n - n):
                mask = np.zeros((n, n))
                mask[~np.eye(n, dtype=bool)] = bits
                total += math.exp(bpl_log_prob(params, perm, mask))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_bpl_log_prob_forbidden_edge(self):
        params = BplParams.init(2)
        assert bpl_log_prob(params, [0, 1], np.eye(2)) == -np.inf


class TestScore:
    def test_two_items_equal(self):
        assert np.allclose(pl_score([0.0, 0.0], [0, 1]), [0.5, -0.5])

    @given(thetas, st.randoms(use_true_random=False))
    def test_zero_sum_and_norm_bound(self, theta, rnd):
        theta = np.array(theta)
        n = theta.size
        perm = np.array(rnd.sample(range(n), n))
        g = pl_score(theta, perm)
        assert abs(g.sum()) <= 1e-12 * max(1, n)
        assert g @ g <= n * (n - 1) + 1e-9
        pos = np.empty(n, int)
        pos[perm] = np.arange(n)
        assert np.all(g <= 1 + 1e-12) and np.all(g >= -pos - 1e-12)

    def test_matches_finite_differences(self, rng):
        for _ in range(10):
            theta = rng.normal(size=6)
            perm = rng.permutation(6)
            fd = central_diff(lambda t: pl_log_prob(t, perm), theta)
            g = pl_score(theta, perm)
            assert np.allclose(g, fd, rtol=1e-6, atol=1e-8)

    def test_batched_matches_single(self, rng):
        theta = rng.normal(size=5)
        perms = np.array([rng.permutation(5) for _ in range(7)])
        batched = pl_score(theta, perms)
        for k in range(7):
            assert np.allclose(batched[k], pl_score(theta, perms[k]))

    def test_expectation_is_zero_by_enumeration(self, rng):
        theta = rng.normal(size=5)
        mean = sum(prob * pl_score(theta, perm) for perm, prob in permutation_probabilities(theta))
        assert np.allclose(mean, 0.0, atol=1e-12)

    def test_bernoulli_score(self):
        params = BplParams(np.zeros(2), np.zeros((2, 2)), np.zeros((2, 2)))
        g = bernoulli_score(np.array([[0, 1], [0, 0]]), params)
        assert g[0, 1] == 0.5 and g[1, 0] == -0.5 and g[0, 0] == 0.0

    def test_bernoulli_score_unbiased(self, rng):
        params = random_params(3, rng, forbid_frac=0.3)
        masks = sample_edges(params, rng, size=100_000)
        g = bernoulli_score(masks, params)
        se = g.std(axis=0) / math.sqrt(masks.shape[0])
        free = params.free
        assert np.all(np.abs(g.mean(axis=0))[free] < 3 * se[free] + 1e-12)
        assert np.all(g[:, ~free] == 0)


class TestClosedForms:
    def test_prob_precedes_examples(self):
        assert prob_precedes([0.3, 0.3], 0, 1) == 0.5
        assert prob_precedes([math.log(2), 0.0], 0, 1) == pytest.approx(2 / 3)
        with pytest.raises(ValueError):
            prob_precedes([0.0, 1.0], 1, 1)

    def test_joint_examples(self):
        assert prob_joint_precedes(np.zeros(3), 0, 1, 2) == pytest.approx(1 / 3)
        assert prob_joint_precedes([math.log(2), 0.0, 0.0], 0, 1, 2) == pytest.approx(5 / 12)
        with pytest.raises(ValueError):
            prob_joint_precedes(np.zeros(3), 0, 1, 0)

    def test_covariance_example(self):
        params = BplParams(np.zeros(3), np.full((3, 3), 800.0), np.zeros((3, 3)))
        assert edge_covariance(params, 0, 1, 2) == pytest.approx(1 / 12)
        params.edge_logits[0, 2] = -800.0
        assert edge_covariance(params, 0, 1, 2) == pytest.approx(0.0, abs=1e-300)
        with pytest.raises(ValueError):
            edge_covariance(params, 0, 0, 2)

    def test_expected_edge_examples(self):
        params = BplParams(np.zeros(2), np.full((2, 2), 800.0), np.zeros((2, 2)))
        assert np.allclose(expected_edge_matrix(params), [[0, 0.5], [0.5, 0]])

    @pytest.mark.parametrize("n", [3, 4, 5])
    def test_against_enumeration(self, n, rng):
        for _ in range(5):
            params = random_params(n, rng, forbid_frac=0.2)
            P2, P3, total = exact_pair_stats(params.theta)
            assert total == pytest.approx(1.0, abs=1e-12)
            mean, cov = exact_edge_moments(params)
            assert np.allclose(expected_edge_matrix(params), mean, atol=1e-12, rtol=0)
            for i, j, k in itertools.permutations(range(n), 3):
                assert abs(prob_joint_precedes(params.theta, i, j, k) - P3[i, j, k]) <= 1e-12
                assert abs(edge_covariance(params, i, k, j) - cov[i, k, j]) <= 1e-12
            for i, j in itertools.permutations(range(n), 2):
                assert abs(prob_precedes(params.theta, i, j) - P2[i, j]) <= 1e-12

    def test_monte_carlo_edge_moments(self, rng):
        params = random_params(5, rng)
        _, _, A = sample_dags(params, rng, 400_000)
        A = A.astype(float)
        freq = A.mean(axis=0)
        se = A.std(axis=0) / math.sqrt(A.shape[0])
        E = expected_edge_matrix(params)
        off = ~np.eye(5, dtype=bool)
        assert np.all(np.abs(freq - E)[off] <= 3.5 * se[off] + 1e-12)
        prod = A[:, 0, 4] * A[:, 2, 4]
        emp_cov = prod.mean() - A[:, 0, 4].mean() * A[:, 2, 4].mean()
        se_cov = prod.std() / math.sqrt(A.shape[0]) * 2
        assert abs(emp_cov - edge_covariance(params, 0, 2, 4)) < 3 * se_cov

    @settings(max_examples=50)
    @given(thetas, st.floats(-20, 20))
    def test_shift_invariance(self, theta, c):
        theta = np.array(theta)
        n = theta.size
        params = BplParams(theta, np.zeros((n, n)), np.zeros((n, n)))
        shifted = BplParams(theta + c, np.zeros((n, n)), np.zeros((n, n)))
        perm = np.arange(n)[::-1]
        assert pl_log_prob(theta + c, perm) == pytest.approx(pl_log_prob(theta, perm), abs=1e-9)
        assert np.allclose(expected_edge_matrix(shifted), expected_edge_matrix(params), atol=1e-12)
        if n >= 3:
            assert prob_joint_precedes(theta + c, 0, 1, 2) == pytest.approx(
                prob_joint_precedes(theta, 0, 1, 2), abs=1e-12)

    @given(thetas)
    def test_pair_probabilities_complement(self, theta):
        q = precedence_matrix(theta)
        off = ~np.eye(len(theta), dtype=bool)
        assert np.allclose((q + q.T)[off], 1.0, atol=1e-12)

    @given(st.integers(0, 2**31))
    def test_expected_edges_pair_bound(self, seed):
        params = random_params(6, np.random.default_rng(seed), scale=4.0)
        E = expected_edge_matrix(params)
        assert np.all(E + E.T <= 1 + 1e-12)


class TestEdgeCount:
    def test_zero_probabilities(self, rng):
        params = BplParams(rng.normal(size=4), np.zeros((4, 4)), np.ones((4, 4), bool))
        value, d_theta, d_edges = expected_edge_count_and_grad(params)
        assert value == 0 and np.all(d_theta == 0) and np.all(d_edges == 0)

    def test_two_nodes_full(self, rng):
        params = BplParams(rng.normal(size=2), np.full((2, 2), 800.0), np.zeros((2, 2)))
        assert expected_edge_count_and_grad(params)[0] == pytest.approx(1.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(5):
            params = random_params(8, rng, forbid_frac=0.2)
            _, d_theta, d_edges = expected_edge_count_and_grad(params)

            def by_theta(t):
                return expected_edge_count_and_grad(BplParams(t, params.edge_logits, params.forbidden_mask))[0]

            def by_logits(w):
                return expected_edge_count_and_grad(BplParams(params.theta, w, params.forbidden_mask))[0]

            assert np.allclose(d_theta, central_diff(by_theta, params.theta), rtol=1e-6, atol=1e-8)
            assert np.allclose(d_edges, central_diff(by_logits, params.edge_logits), rtol=1e-6, atol=1e-8)

    def test_vjp_matches_finite_differences(self, rng):
        params = random_params(5, rng, forbid_frac=0.2)
        G = rng.normal(size=(5, 5))
        d_theta, d_edges = expected_edge_vjp(params, G)

        def f_theta(t):
            return np.sum(G * expected_edge_matrix(BplParams(t, params.edge_logits, params.forbidden_mask)))

        def f_logits(w):
            return np.sum(G * expected_edge_matrix(BplParams(params.theta, w, params.forbidden_mask)))

        assert np.allclose(d_theta, central_diff(f_theta, params.theta), rtol=1e-6, atol=1e-8)
        assert np.allclose(d_edges, central_diff(f_logits, params.edge_logits), rtol=1e-6, atol=1e-8)


class TestFisher:
    def test_two_equal(self):
        assert fisher_trace([0.0, 0.0]) == pytest.approx(0.5, abs=1e-15)

    def test_single(self):
        assert fisher_trace([3.0]) == 0.0

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    def test_equals_expected_squared_score_by_enumeration(self, n, rng):
        theta = rng.normal(scale=1.5, size=n)
        exact = sum(prob * np.sum(pl_score(theta, perm) ** 2) for perm, prob in permutation_probabilities(theta))
        assert fisher_trace(theta) == pytest.approx(exact, abs=1e-12)
        assert fisher_trace(theta) <= n - 1

    def test_observed_information_expectation(self, rng):
        theta = rng.normal(size=5)
        via_stage = sum(prob * observed_information_trace(theta, perm)
                        for perm, prob in permutation_probabilities(theta))
        assert fisher_trace(theta) == pytest.approx(via_stage, abs=1e-12)

    def test_stage_formula_depends_on_arrangement(self):
        theta = np.array([2.0, 0.0, -1.0])
        assert observed_information_trace(theta, [0, 1, 2]) != pytest.approx(
            observed_information_trace(theta, [2, 1, 0]))

    def test_monte_carlo_agreement(self, rng):
        theta = rng.normal(size=6)
        perms = sample_permutation(theta, rng, size=1_000_000)
        mc = np.mean(np.sum(pl_score(theta, perms) ** 2, axis=1))
        assert mc == pytest.approx(fisher_trace(theta), rel=0.01)

    def test_large_n_monte_carlo_path(self, rng):
        theta = np.zeros(20)
        with pytest.raises(ValueError):
            fisher_trace(theta)
        value = fisher_trace(theta, rng=rng, n_samples=2000)
        assert 0 < value <= 19

    def test_variance_bound_formula(self):
        params = BplParams(np.zeros(2), np.zeros((2, 2)), np.zeros((2, 2)))
        assert variance_bound(np.array([-2.0, 1.0]), params) == pytest.approx(4 * (2 + 0.5))
