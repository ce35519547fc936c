import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustgmm import GaussianMixture, sample_mixture
from robustgmm.decode import (CandidateList, SearchSubspace, assemble_candidates,
                              build_search_subspace, cover_size, decode_from_tensors,
                              decode_parameters, enumerate_candidates, fit_moments, grid_cover,
                              list_decode, low_dim_learn, merge_components, project_tensor,
                              random_collapse)
from robustgmm.hermite import DenseTensor, collapse_modes, dense_to_sym, expected_hermite

from conftest import random_spd


def planted(rng, d=3):
    means = rng.standard_normal((2, d))
    means *= rng.uniform(0.5, 1.5, (2, 1)) / np.linalg.norm(means, axis=1, keepdims=True)
    covs = [np.eye(d) + 0.3 * (random_spd(rng, d) - np.eye(d)) for _ in range(2)]
    return GaussianMixture.from_params([0.5, 0.5], means, covs)


def test_decode_parameters_formulas():
    p = decode_parameters(2, 0.5, 1e-6, Delta=2.0, eta=1e-3)
    assert p["eta"] == 1e-3
    assert p["G"] == pytest.approx(1 / 6)
    assert p["delta"] == pytest.approx(2 * 1e-3 ** (1 / 6))
    assert p["D"] == pytest.approx(16 / (0.5 * math.sqrt(1e-3)))
    assert p["lambda"] == pytest.approx(4e-3)
    assert p["phi"] == pytest.approx(10 * 5 / (math.sqrt(1e-3) * 0.5 ** 5))
    assert p["k_prime"] == 4
    capped = decode_parameters(2, 0.5, 0.01)
    assert capped["eta"] == 0.25 and capped["eta_formula"] > 0.25


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2 ** 31 - 1))
def test_random_collapse_vs_brute_force(d, seed):
    r = np.random.default_rng(seed)
    t = DenseTensor(r.standard_normal((d,) * 4))
    draw = random_collapse(t, 2, 0.5, 0.01, np.random.default_rng(seed))
    brute = sum(a * collapse_modes(t, x, y) for a, x, y in zip(draw.a, draw.xs, draw.ys))
    assert np.max(np.abs(draw.s_hat - 0.5 * (brute + brute.T))) < 1e-10
    assert np.all(np.abs(draw.a) <= draw.D)
    assert draw.xs.shape == (8, d)


def test_random_collapse_validates():
    t = DenseTensor(np.zeros((2, 2, 2, 2)))
    with pytest.raises(ValueError):
        random_collapse(t, 2, 0.5, 1.5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        random_collapse(DenseTensor(np.zeros((2, 2))), 2, 0.5, 0.1, np.random.default_rng(0))


def test_subspace_contains_planted_means(rng):
    mix = planted(rng, d=4)
    tensors = [expected_hermite(mix, m) for m in range(1, 5)]
    space = build_search_subspace(tensors, None, lam=1e-3, delta=1e-3)
    P = space.basis @ space.basis.T
    for mu in mix.means:
        assert np.linalg.norm(mu - P @ mu) < 1e-8
    np.testing.assert_allclose(space.basis.T @ space.basis, np.eye(space.dim), atol=1e-10)


def test_subspace_truncation_warns(rng):
    t = DenseTensor(np.diag(np.arange(1.0, 6.0)))
    with pytest.warns(UserWarning):
        space = build_search_subspace([t], None, 0.5, 1e-3, max_dim=2)
    assert space.dim == 2
    # the largest singular directions survive
    assert abs(space.basis[4, :]).max() > 0.99


def test_grid_cover_and_closed_form_size():
    pts = grid_cover(2, 1.0, 0.5)
    assert np.all(np.linalg.norm(pts, axis=1) <= 1.0 + 1e-12)
    assert len(pts) == 13
    for dim, phi in [(1, 1.0), (2, 0.6)]:
        space = SearchSubspace(np.eye(3)[:, :dim])
        delta = 0.5 ** 4
        lst = enumerate_candidates(space, None, 1.0, delta, phi, 1, budget=None)
        assert len(lst) == cover_size(dim, 1.0, delta, phi, 1)


def test_enumeration_budget_truncates():
    space = SearchSubspace(np.eye(2))
    lst = enumerate_candidates(space, None, 0.5, 0.5 ** 4, 2.0, 2, budget=50)
    assert len(lst) == 50 and lst.truncated


def test_candidate_list_dedupe_and_json(tmp_path):
    cl = CandidateList()
    cl.add_group([(0.5, np.zeros(2), np.eye(2)), (0.5, np.ones(2), np.eye(2))])
    cl.add_group([(0.5, np.zeros(2) + 1e-9, np.eye(2)), (0.5, np.ones(2), 2 * np.eye(2))])
    cl.dedupe(1e-6)
    assert len(cl) == 3
    assert cl.groups == [[0, 1], [0, 2]]
    p = tmp_path / "c.json"
    cl.save(p)
    back = CandidateList.load(p)
    assert back.groups == cl.groups
    np.testing.assert_array_equal(back.entries[2]["cov"], cl.entries[2]["cov"])


def test_candidate_budget():
    cl = CandidateList(budget=1)
    assert cl.add(np.zeros(1), np.eye(1)) == 0
    assert cl.add(np.zeros(1), np.eye(1)) is None and cl.truncated


def test_merge_components_preserves_moments():
    w, mu, cov = merge_components([0.3, 0.7], [np.zeros(2), np.full(2, 1e-4)],
                                  [np.eye(2), np.eye(2)], tol=0.1)
    assert len(w) == 1 and w[0] == pytest.approx(1.0)
    np.testing.assert_allclose(mu[0], 0.7e-4 * np.ones(2))
    w2, _, _ = merge_components([0.5, 0.5], [np.zeros(2), np.full(2, 5.0)],
                                [np.eye(2), np.eye(2)], tol=0.1)
    assert len(w2) == 2


def test_low_dim_learn_recovers_separated_mixture(rng):
    mix = GaussianMixture.from_params([0.3, 0.7], [[-3.0, 0.0], [3.0, 0.0]],
                                      [np.eye(2), np.diag([0.5, 2.0])])
    x, _ = sample_mixture(mix, 8000, rng)
    best = low_dim_learn(x, 2, 0.0, rng, n_restarts=3)[0]
    order = np.argsort(best.means[:, 0])
    np.testing.assert_allclose(best.weights[order], [0.3, 0.7], atol=0.03)
    np.testing.assert_allclose(best.means[order], mix.means, atol=0.15)
    np.testing.assert_allclose(best.covs[order], mix.covs, atol=0.2)


def test_assemble_formula(rng):
    U = np.eye(3)[:, :1]
    s_hat = random_spd(rng, 3) - np.eye(3)
    out = assemble_candidates(SearchSubspace(U), s_hat,
                              [(np.ones(1), np.array([[2.0]]), np.array([[[3.0]]]))])
    P = U @ U.T
    base = np.eye(3) + s_hat
    expect = 3.0 * P + base - P @ base @ P
    vals, vecs = np.linalg.eigh(expect)
    expect = (vecs * np.clip(vals, 0, None)) @ vecs.T
    np.testing.assert_allclose(out.entries[0]["cov"], expect, atol=1e-12)
    np.testing.assert_allclose(out.entries[0]["mean"], [2.0, 0, 0])


def test_project_tensor_matches_einsum(rng):
    t = DenseTensor(rng.standard_normal((3,) * 3))
    U = np.linalg.qr(rng.standard_normal((3, 2)))[0]
    np.testing.assert_allclose(project_tensor(t, U).data,
                               np.einsum("abc,ai,bj,ck->ijk", t.data, U, U, U), atol=1e-12)


def test_fit_moments_on_exact_targets(rng):
    mix = planted(rng, d=2)
    targets = {m: dense_to_sym(expected_hermite(mix, m)) for m in range(1, 5)}
    best = fit_moments(targets, 2, 2, rng, n_starts=8)[0]
    assert best.score > -1e-8
    for mu, cov in zip(mix.means, mix.covs):
        errs = [np.linalg.norm(mu - m) + np.linalg.norm(cov - c)
                for m, c in zip(best.means, best.covs)]
        assert min(errs) < 1e-3


def test_list_decode_moments_plant_and_recover(rng):
    mix = planted(rng, d=3)
    tensors = [expected_hermite(mix, m) for m in range(1, 5)]
    params = decode_parameters(2, 0.5, 0.0, eta=1e-3)
    cands, diag = decode_from_tensors(tensors, 2, 0.5, rng, params=params, search="moments",
                                      collapse_budget=10)
    assert diag["collapse_reps"] == 10
    for mu, cov in zip(mix.means, mix.covs):
        assert any(np.linalg.norm(e["mean"] - mu) <= 0.3 and np.linalg.norm(e["cov"] - cov) <= 0.3
                   for e in cands.entries)


def test_list_decode_trivial_first_and_efficient_needs_fresh(rng):
    x = rng.standard_normal((2000, 2))
    with pytest.raises(ValueError):
        list_decode(x, 2, 0.5, 0.01, mode="efficient")
    cands, _ = list_decode(x[:1000], 2, 0.5, 0.01, mode="efficient", fresh_points=x[1000:],
                           rng=rng, collapse_budget=2)
    assert cands.entries[0]["tags"]["source"] == "trivial"
