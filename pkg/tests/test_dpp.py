import itertools
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_psd
from dppl.dpp import (DppKernel, ElementaryDpp, enumerate_distribution, greedy_map,
                      marginal_kernel, marginal_kernel_direct, marginal_probability, sample_dpp,
                      sample_dpp_batch, sample_elementary, subset_probability)
from dppl.errors import (InstanceTooLargeError, InvalidParameterError, NumericalDegeneracyError,
                         PsdViolationError)


def _codes(draws):
    return draws @ (1 << np.arange(draws.shape[1]))


def _code(subset):
    return sum(1 << i for i in subset)


def total_variation(draws, distribution):
    freq = np.bincount(_codes(draws), minlength=1 << draws.shape[1]) / draws.shape[0]
    return 0.5 * sum(abs(freq[_code(s)] - p) for s, p in distribution.items())


def all_subsets(n):
    return [frozenset(c) for r in range(n + 1) for c in itertools.combinations(range(n), r)]


psd_matrices = st.integers(1, 6).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(0, 2**32 - 1), st.integers(1, n)))


class TestDppKernel:
    def test_eigen_reconstruction(self, rng):
        L = random_psd(rng, 7)
        k = DppKernel(L)
        rebuilt = (k.eigenvectors * k.eigenvalues) @ k.eigenvectors.T
        assert np.max(np.abs(rebuilt - L)) <= 1e-8
        assert np.all(k.eigenvalues >= 0)
        assert k.clamped == 0

    def test_tiny_negative_eigenvalues_clamped(self, rng):
        v = np.linalg.qr(rng.normal(size=(5, 5)))[0]
        lam = np.array([-1e-12, 0.5, 1.0, 2.0, 4.0])
        k = DppKernel((v * lam) @ v.T)
        assert k.clamped == 1
        assert np.all(k.eigenvalues >= 0)
        rebuilt = (k.eigenvectors * k.eigenvalues) @ k.eigenvectors.T
        assert np.max(np.abs(rebuilt - k.l_matrix)) <= 1e-8

    def test_large_negative_eigenvalue_rejected(self):
        with pytest.raises(PsdViolationError):
            DppKernel([[1.0, 2.0], [2.0, 1.0]])

    def test_asymmetric_rejected(self):
        with pytest.raises(InvalidParameterError):
            DppKernel([[1.0, 0.5], [0.0, 1.0]])

    @pytest.mark.parametrize("bad", [np.ones((2, 3)), np.array([[np.nan]])])
    def test_malformed_rejected(self, bad):
        with pytest.raises(InvalidParameterError):
            DppKernel(bad)

    def test_log_normalizer(self, rng):
        L = random_psd(rng, 4)
        assert DppKernel(L).log_normalizer() == pytest.approx(np.linalg.slogdet(L + np.eye(4))[1])


class TestMarginalKernel:
    def test_zero_kernel(self):
        np.testing.assert_array_equal(marginal_kernel(DppKernel(np.zeros((3, 3)))), 0.0)

    def test_identity_kernel(self):
        np.testing.assert_allclose(marginal_kernel(DppKernel(np.eye(4))), np.eye(4) / 2, atol=1e-15)

    def test_two_constructions_agree(self, rng):
        for _ in range(10):
            k = DppKernel(random_psd(rng, 3))
            np.testing.assert_allclose(marginal_kernel(k), marginal_kernel_direct(k), atol=1e-8)

    @given(psd_matrices)
    def test_spectrum_in_unit_interval(self, case):
        n, seed, rank = case
        K = marginal_kernel(DppKernel(random_psd(np.random.default_rng(seed), n, rank)))
        np.testing.assert_allclose(K, K.T, atol=1e-14)
        lam = np.linalg.eigvalsh(K)
        assert lam.min() >= -1e-12 and lam.max() < 1.0


class TestProbabilities:
    def test_empty_subset(self, rng):
        L = random_psd(rng, 3)
        assert subset_probability(DppKernel(L), set()) == pytest.approx(1 / np.linalg.det(L + np.eye(3)))

    def test_diagonal_kernel(self):
        lam = np.array([0.3, 2.0, 5.0, 1.5])
        k = DppKernel(np.diag(lam))
        for subset in all_subsets(4):
            expected = np.prod(lam[list(subset)]) / np.prod(1 + lam)
            assert subset_probability(k, subset) == pytest.approx(expected, rel=1e-12)

    def test_normalization_four_items(self, rng):
        k = DppKernel(random_psd(rng, 4))
        assert sum(subset_probability(k, s) for s in all_subsets(4)) == pytest.approx(1.0, abs=1e-12)

    def test_marginal_singleton_and_empty(self, rng):
        K = marginal_kernel(DppKernel(random_psd(rng, 4)))
        assert marginal_probability(K, {2}) == pytest.approx(K[2, 2])
        assert marginal_probability(K, set()) == 1.0

    def test_marginal_matches_enumeration(self, rng):
        k = DppKernel(random_psd(rng, 4))
        K = marginal_kernel(k)
        dist = enumerate_distribution(k)
        for a in all_subsets(4):
            total = sum(p for y, p in dist.items() if a <= y)
            assert marginal_probability(K, a) == pytest.approx(total, abs=1e-12)

    def test_volume_scaling(self, rng):
        L = random_psd(rng, 5)
        c = 1.7
        D = np.ones(5)
        D[2] = c
        scaled = D[:, None] * L * D[None, :]
        for y in all_subsets(5):
            idx = sorted(y)
            ratio = np.linalg.det(scaled[np.ix_(idx, idx)]) / np.linalg.det(L[np.ix_(idx, idx)]) if idx else 1.0
            assert ratio == pytest.approx(c ** 2 if 2 in y else 1.0, rel=1e-9)

    @given(psd_matrices)
    def test_repulsion(self, case):
        n, seed, rank = case
        K = marginal_kernel(DppKernel(random_psd(np.random.default_rng(seed), n, rank)))
        for i, j in itertools.combinations(range(n), 2):
            assert marginal_probability(K, {i, j}) <= K[i, i] * K[j, j] + 1e-12

    def test_out_of_range_subset(self, rng):
        with pytest.raises(InvalidParameterError):
            subset_probability(DppKernel(random_psd(rng, 3)), {3})


class TestEnumeration:
    def test_single_item(self):
        dist = enumerate_distribution(DppKernel([[1.0]]))
        assert dist == pytest.approx({frozenset(): 0.5, frozenset({0}): 0.5})

    def test_two_diagonal_items(self):
        dist = enumerate_distribution(DppKernel(np.diag([1.0, 3.0])))
        expected = {frozenset(): 1 / 8, frozenset({0}): 1 / 8, frozenset({1}): 3 / 8,
                    frozenset({0, 1}): 3 / 8}
        assert dist == pytest.approx(expected)

    @given(st.integers(1, 10).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, 2**32 - 1))))
    def test_sums_to_one(self, case):
        n, seed = case
        dist = enumerate_distribution(DppKernel(random_psd(np.random.default_rng(seed), n)))
        assert len(dist) == 2 ** n
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-9)

    def test_size_guard(self):
        with pytest.raises(InstanceTooLargeError):
            enumerate_distribution(DppKernel(np.eye(13)))


class TestElementarySampler:
    def test_standard_basis_vector(self):
        e = ElementaryDpp(np.eye(5)[:, 3])
        assert all(sample_elementary(e, s) == {3} for s in range(50))

    def test_cardinality(self, rng):
        for k in range(1, 6):
            V = np.linalg.qr(rng.normal(size=(7, k)))[0]
            e = ElementaryDpp(V)
            assert all(len(sample_elementary(e, rng)) == k for _ in range(200))

    def test_distribution(self, rng):
        V = np.linalg.qr(rng.normal(size=(4, 2)))[0]
        e = ElementaryDpp(V)
        K = e.marginal_kernel()
        counts = {}
        for _ in range(100_000):
            y = sample_elementary(e, rng)
            counts[y] = counts.get(y, 0) + 1
        pairs = [frozenset(c) for c in itertools.combinations(range(4), 2)]
        tv = 0.5 * sum(abs(counts.get(y, 0) / 100_000 - np.linalg.det(K[np.ix_(sorted(y), sorted(y))]))
                       for y in pairs)
        assert set(counts) <= set(pairs)
        assert tv <= 0.02

    def test_non_orthonormal_rejected(self):
        with pytest.raises(InvalidParameterError):
            ElementaryDpp(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_degenerate_basis_detected(self):
        # a basis vector supported on already-exhausted coordinates cannot be completed
        e = ElementaryDpp.__new__(ElementaryDpp)
        e.vectors = np.array([[1.0, 1.0], [0.0, 0.0]])
        with pytest.raises(NumericalDegeneracyError):
            sample_elementary(e, 0)


class TestSampler:
    def test_zero_kernel_gives_empty_set(self):
        k = DppKernel(np.zeros((4, 4)))
        assert all(sample_dpp(k, s) == frozenset() for s in range(20))

    def test_diagonal_marginals(self):
        lam = np.array([0.2, 1.0, 4.0, 9.0])
        draws = sample_dpp_batch(DppKernel(np.diag(lam)), 100_000, seed=3)
        np.testing.assert_allclose(draws.mean(axis=0), lam / (1 + lam), atol=0.01)

    def test_six_item_distribution(self, rng):
        k = DppKernel(random_psd(rng, 6, scale=0.8))
        draws = sample_dpp_batch(k, 200_000, rng)
        assert total_variation(draws, enumerate_distribution(k)) <= 0.02

    def test_single_draws_match_batch_law(self, rng):
        k = DppKernel(random_psd(rng, 4, scale=0.8))
        singles = np.zeros((20_000, 4), dtype=bool)
        for row in singles:
            row[list(sample_dpp(k, rng))] = True
        assert total_variation(singles, enumerate_distribution(k)) <= 0.03

    def test_marginals_and_cardinality(self, rng):
        k = DppKernel(random_psd(rng, 5, scale=0.7))
        K = marginal_kernel(k)
        n = 50_000
        draws = sample_dpp_batch(k, n, rng)
        freq = draws.mean(axis=0)
        se = np.sqrt(np.diag(K) * (1 - np.diag(K)) / n)
        assert np.all(np.abs(freq - np.diag(K)) <= 3 * se + 1e-12)
        sizes = draws.sum(axis=1)
        assert abs(sizes.mean() - np.trace(K)) <= 3 * sizes.std() / np.sqrt(n)

    def test_seed_reproducible(self, rng):
        k = DppKernel(random_psd(rng, 6))
        np.testing.assert_array_equal(sample_dpp_batch(k, 100, 5), sample_dpp_batch(k, 100, 5))
        assert sample_dpp(k, 9) == sample_dpp(k, 9)

    def test_rank_deficient_kernel(self, rng):
        k = DppKernel(random_psd(rng, 6, rank=2, scale=3.0))
        draws = sample_dpp_batch(k, 5000, rng)
        assert draws.sum(axis=1).max() <= 2


class TestGreedyMap:
    def test_diagonal(self):
        assert greedy_map(DppKernel(np.diag([0.5, 2.0, 3.0]))) == {1, 2}

    def test_identity_needs_strict_gain(self):
        assert greedy_map(DppKernel(np.eye(4))) == frozenset()

    def test_tie_goes_to_lowest_index(self):
        assert greedy_map(DppKernel(np.array([[2.0, 1.9], [1.9, 2.0]]))) == {0}

    def test_deterministic(self, rng):
        k = DppKernel(random_psd(rng, 8))
        assert greedy_map(k) == greedy_map(DppKernel(k.l_matrix.copy()))

    def test_near_optimal_on_small_kernels(self, rng):
        exact, worst = 0, 1.0
        for _ in range(50):
            L = random_psd(rng, 5, scale=0.9)
            dets = {s: np.linalg.det(L[np.ix_(sorted(s), sorted(s))]) if s else 1.0
                    for s in all_subsets(5)}
            best = max(dets.values())
            got = dets[greedy_map(DppKernel(L))]
            exact += np.isclose(got, best)
            worst = min(worst, got / best)
        print(f"greedy MAP exact-match rate {exact / 50:.2f}, worst det ratio {worst:.3f}")
        assert worst > 0.25
        assert exact >= 25

    def test_greedy_is_locally_maximal(self, rng):
        L = random_psd(rng, 7)
        y = sorted(greedy_map(DppKernel(L)))
        base = np.linalg.det(L[np.ix_(y, y)]) if y else 1.0
        for i in set(range(7)) - set(y):
            z = sorted(y + [i])
            assert np.linalg.det(L[np.ix_(z, z)]) <= base * (1 + 1e-9)

    def test_large_kernel_is_fast(self, rng):
        k = DppKernel(random_psd(rng, 200, rank=60, scale=0.3))
        t0 = time.perf_counter()
        greedy_map(k)
        assert time.perf_counter() - t0 < 1.0
