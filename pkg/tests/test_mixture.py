import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from robustgmm import (GaussianComponent, GaussianMixture, IsotropizingTransform,
                       log_density, match_components, sample_mixture, tv_monte_carlo,
                       tv_upper_bound)
from robustgmm.mixture import (InvalidMixtureError, brute_force_matching, load_mixture,
                               moment_distance_check, raw_moments_1d, save_mixture,
                               standard_normal_moments, tv_frobenius_bound,
                               weight_gap_threshold)

from conftest import random_spd


def tv_quadrature_1d(a, b):
    def pdf(m, x):
        return sum(w * stats.norm.pdf(x, c.mean[0], math.sqrt(c.cov[0, 0]))
                   for w, c in zip(m.weights, m.components))
    val, _ = integrate.quad(lambda x: abs(pdf(a, x) - pdf(b, x)), -40, 40, limit=400)
    return 0.5 * val


# -- validation ------------------------------------------------------------

def test_rejects_bad_weights_and_shapes():
    with pytest.raises(InvalidMixtureError):
        GaussianMixture.from_params([0.5, 0.6], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    with pytest.raises(InvalidMixtureError):
        GaussianMixture.from_params([1.5, -0.5], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    with pytest.raises(InvalidMixtureError):
        GaussianComponent([0.0, 0.0], np.eye(3))
    with pytest.raises(InvalidMixtureError):
        GaussianComponent([0.0, 0.0], [[1.0, 0.0], [0.5, 1.0]])
    with pytest.raises(InvalidMixtureError):
        GaussianComponent([0.0], [[-1.0]])


def test_degenerate_covariance_allowed():
    c = GaussianComponent([0.0, 0.0], np.diag([1.0, 0.0]))
    assert c.dim == 2


def test_moments_of_mixture(two_mix, rng):
    x, labels = sample_mixture(two_mix, 200000, rng)
    assert np.bincount(labels).tolist() == pytest.approx([80000, 120000], rel=0.02)
    np.testing.assert_allclose(x.mean(axis=0), two_mix.mean(), atol=0.02)
    np.testing.assert_allclose(np.cov(x, rowvar=False), two_mix.covariance(), atol=0.05)


def test_save_load_roundtrip(two_mix, tmp_path):
    p = tmp_path / "m.json"
    save_mixture(two_mix, p, seed=7)
    back = load_mixture(p)
    np.testing.assert_array_equal(back.weights, two_mix.weights)
    np.testing.assert_array_equal(back.covs, two_mix.covs)


# -- densities and TV ------------------------------------------------------

def test_log_density_matches_scipy(two_mix, rng):
    x = rng.standard_normal((20, 3))
    ref = np.log(sum(w * stats.multivariate_normal(c.mean, c.cov).pdf(x)
                     for w, c in zip(two_mix.weights, two_mix.components)))
    np.testing.assert_allclose(log_density(two_mix, x, floor=1e-300), ref, rtol=1e-10)
    assert isinstance(log_density(two_mix, x[0]), float)


def test_tv_monte_carlo_matches_quadrature(rng):
    pairs = [(GaussianMixture.single([0.0], [[1.0]]), GaussianMixture.single([1.0], [[1.0]])),
             (GaussianMixture.single([0.0], [[1.0]]), GaussianMixture.single([0.0], [[4.0]])),
             (GaussianMixture.from_params([0.3, 0.7], [[0.0], [3.0]], [[[1.0]], [[0.5]]]),
              GaussianMixture.single([2.0], [[2.0]]))]
    for a, b in pairs:
        tv, se = tv_monte_carlo(a, b, 200000, rng)
        assert se < 0.003
        assert tv == pytest.approx(tv_quadrature_1d(a, b), abs=0.01)


def test_tv_identical_is_zero(two_mix, rng):
    tv, _ = tv_monte_carlo(two_mix, two_mix, 4000, rng)
    assert tv == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 0.5))
def test_tv_upper_bound_dominates_exact_1d(seed, scale):
    r = np.random.default_rng(seed)
    a = GaussianComponent([r.normal()], [[r.uniform(0.5, 2.0)]])
    b = GaussianComponent(a.mean + scale * r.normal(), a.cov * (1 + scale * r.uniform(-1, 1)))
    exact = tv_quadrature_1d(GaussianMixture([1.0], (a,)), GaussianMixture([1.0], (b,)))
    assert tv_upper_bound(a, b) >= exact - 1e-6
    assert 0.0 <= tv_upper_bound(a, b) <= 1.0


def test_tv_upper_bound_distinct_ranges():
    a = GaussianComponent([0.0, 0.0], np.diag([1.0, 0.0]))
    b = GaussianComponent([0.0, 0.0], np.diag([0.0, 1.0]))
    assert tv_upper_bound(a, b) == 1.0
    assert tv_upper_bound(a, a) == 0.0


def test_frobenius_bound_requires_positive_lambda():
    a = GaussianComponent([0.0], [[1.0]])
    with pytest.raises(ValueError):
        tv_frobenius_bound(a, a, 0.0)


# -- transforms ------------------------------------------------------------

def test_isotropizing_transform_roundtrip(rng):
    cov = random_spd(rng, 4)
    vals, vecs = np.linalg.eigh(cov)
    t = IsotropizingTransform(rng.standard_normal(4), vecs, 1 / np.sqrt(vals))
    x = rng.standard_normal((10, 4))
    np.testing.assert_allclose(t.inverse(t.apply(x)), x, atol=1e-8)
    mu, c = t.lift_params(np.zeros(4), np.eye(4))
    np.testing.assert_allclose(c, cov, atol=1e-10)
    np.testing.assert_allclose(mu, t.shift)


def test_transform_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        IsotropizingTransform(np.zeros(2), np.ones((2, 2)), np.ones(2))


# -- matching --------------------------------------------------------------

def test_matching_is_label_free(two_mix):
    perm = GaussianMixture(two_mix.weights[::-1], two_mix.components[::-1])
    a = match_components(two_mix, two_mix, 0.1)
    b = match_components(two_mix, perm, 0.1)
    assert a["unmatched_weight"] == b["unmatched_weight"] == 0.0
    assert a["max_weight_gap"] == b["max_weight_gap"] == 0.0
    assert b["groups"] == [[1], [0]]


def test_matching_agrees_with_brute_force(rng):
    for _ in range(10):
        k = 3
        truth = GaussianMixture.from_params(rng.dirichlet(np.ones(k)), rng.normal(0, 2, (k, 2)),
                                            [random_spd(rng, 2) for _ in range(k)])
        hyp = GaussianMixture.from_params(
            rng.dirichlet(np.ones(2)),
            truth.means[:2] + 0.05 * rng.standard_normal((2, 2)), truth.covs[:2])
        fast = match_components(truth, hyp, 0.5)
        slow = brute_force_matching(truth, hyp, 0.5)
        assert fast["unmatched_weight"] == pytest.approx(slow["unmatched_weight"], abs=1e-12)


def test_weight_gap_threshold_pigeonhole():
    i = weight_gap_threshold([0.5, 0.3], [0.2], 0.1, 0.5)
    assert 1 <= i <= 4
    lo, hi = 0.1 ** (0.5 ** (i - 1)), 0.1 ** (0.5 ** i)
    assert not any(lo <= w < hi for w in [0.5, 0.3, 0.2])


# -- moment-distance witness -----------------------------------------------

def test_raw_moments_1d_standard_normal():
    np.testing.assert_allclose(standard_normal_moments(6), [0, 1, 0, 3, 0, 15])
    m = GaussianMixture.single([2.0], [[3.0]])
    np.testing.assert_allclose(raw_moments_1d(m, 4), [2, 7, 26, 115])


@pytest.mark.parametrize("beta", [0.05, 0.1, 0.2])
def test_moment_distance_witness_on_perturbed_mixtures(beta):
    k = 2
    built = [
        GaussianMixture.from_params([0.5, 0.5], [[beta], [-beta]], [[[1.0]], [[1.0]]]),
        GaussianMixture.from_params([0.5, 0.5], [[0.0], [0.0]], [[[1 + beta]], [[1.0]]]),
        GaussianMixture.from_params([beta, 1 - beta], [[1.0], [0.0]], [[[1.0]], [[1.0]]]),
        GaussianMixture.from_params([0.5, 0.5], [[beta], [0.0]], [[[1 - beta]], [[1.0]]]),
    ]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for m in built:
            rep = moment_distance_check(m, beta, D=2.0, k=k)
            assert rep["separated"], rep
            assert 1 <= rep["witness"] <= 2 * k
            assert rep["difference"] >= rep["threshold"]
        null = moment_distance_check(GaussianMixture.single([0.0], [[1.0]]), beta, 2.0, k)
    assert not null["separated"]
