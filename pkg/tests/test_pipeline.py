import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustgmm import GaussianMixture, sample_mixture, tv_monte_carlo
from robustgmm.config import DEFAULT_CONSTANTS, PipelineConfig, defaults_document
from robustgmm.contamination import ContaminationSpec, strong_contaminate
from robustgmm.pipeline import (PipelineError, _Cache, cluster_or_decode, learn_gmm,
                                tournament_select, weight_grid_guess, weight_guess)


def two_blobs(d=2):
    return GaussianMixture.from_params([0.5, 0.5], [np.zeros(d), 4 * np.eye(d)[0]],
                                       [np.eye(d), np.eye(d)])


def walk(nodes, depth=0):
    for node in nodes:
        yield node, depth
        yield from walk(node["children"], depth + 1)


# -- config ----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(eps=0.6)
    with pytest.raises(ValueError):
        PipelineConfig(outer_budget=0)
    with pytest.raises(ValueError):
        PipelineConfig(mode="fast")
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})


def test_schedule_flooring_recorded():
    sch = PipelineConfig().schedule(0.02, 2)
    assert sch["floored"]
    assert sch["tau"] == pytest.approx(0.02 ** 0.5)
    assert sch["light_eps"] == pytest.approx(0.02 + 0.02 ** 0.5)
    raw = PipelineConfig(exponent_floor=0.0).schedule(0.02, 2)
    assert raw["exponents"]["light"][0] == pytest.approx(1 / 60)


def test_constants_table_complete_and_json():
    cfg = PipelineConfig(constants={"alg3.2.D.C": 2.0})
    assert cfg.constants["alg3.2.D.C"] == 2.0
    assert set(DEFAULT_CONSTANTS) <= set(cfg.constants)
    doc = json.loads(json.dumps(defaults_document()))
    assert PipelineConfig.from_dict(doc["pipeline"]) == PipelineConfig()


# -- weights ---------------------------------------------------------------

def test_weight_guess_properties():
    assert weight_guess(1, 0.1, np.random.default_rng(0)).tolist() == [1.0]
    r = np.random.default_rng(0)
    draws = np.array([weight_guess(3, 0.05, r) for _ in range(10000)])
    np.testing.assert_allclose(draws.mean(axis=0), np.full(3, 1 / 3), atol=0.02)
    np.testing.assert_array_equal(weight_guess(3, 0.05, np.random.default_rng(9)),
                                  weight_guess(3, 0.05, np.random.default_rng(9)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.floats(0.0, 0.2), st.integers(0, 2 ** 31 - 1))
def test_weight_guess_sum(k, eps, seed):
    w = weight_guess(k, eps, np.random.default_rng(seed))
    assert abs(w.sum() - 1) <= k * eps + 1e-12
    assert np.all(w >= 0)


def test_weight_grid_guess():
    w = weight_grid_guess(3, 0.1, 0.01, np.random.default_rng(0))
    assert np.allclose(w / 0.1, np.round(w / 0.1))
    assert abs(w.sum() - 1) <= 3 * 0.01 + 0.1 + 1e-12


# -- tournament ------------------------------------------------------------

def test_tournament_degenerate_lists(rng):
    truth = two_blobs()
    x, _ = sample_mixture(truth, 500, rng)
    assert tournament_select([truth], x, 0.05, rng) == 0
    assert tournament_select([truth, truth, truth], x, 0.05, rng) == 0
    with pytest.raises(ValueError):
        tournament_select([], x, 0.05, rng)


def test_tournament_prefers_truth():
    truth = two_blobs()
    wide = GaussianMixture.single(np.zeros(2), 100 * np.eye(2))
    wins = 0
    for seed in range(100):
        r = np.random.default_rng(seed)
        x, _ = sample_mixture(truth, 1000, r)
        wins += tournament_select([wide, truth], x, 0.05, r, n_mc=1000) == 1
    assert wins >= 95


def test_tournament_ledger_invariant(rng):
    truth = two_blobs()
    hyps = [GaussianMixture.from_params([0.5, 0.5], [np.zeros(2), s * np.eye(2)[0]],
                                        [np.eye(2), np.eye(2)]) for s in (0.0, 1.0, 2.0, 4.0, 6.0)]
    x, _ = sample_mixture(truth, 4000, rng)
    ledger = []
    eta = 0.05
    win = tournament_select(hyps, x, eta, rng, n_mc=2000, ledger=ledger)
    assert win == 3
    for entry in ledger:
        if entry["stage"] == "recheck" and entry["pair"][0] == win:
            dw, dh = entry["deficits"]
            assert dw <= dh + 3 * eta


# -- recursion -------------------------------------------------------------

def test_k1_clean_recovers_gaussian(rng):
    x = rng.multivariate_normal([1.0, -2.0], [[2.0, 0.3], [0.3, 0.5]], size=5000)
    hyp = cluster_or_decode(x, 1, 0.01, PipelineConfig(k=1, eps=0.01), rng)
    comp = hyp.mixture.components[0]
    np.testing.assert_allclose(comp.mean, [1.0, -2.0], atol=0.1)
    np.testing.assert_allclose(comp.cov, [[2.0, 0.3], [0.3, 0.5]], atol=0.15)


def test_forced_decode_branch_succeeds():
    truth = two_blobs()
    r = np.random.default_rng(0)
    x, _ = sample_mixture(truth, 6000, r)
    cfg = PipelineConfig(k=2, eps=0.01, branch_probs={"light": 0.0, "cluster": 0.0},
                         collapse_budget=2)
    cache = _Cache(0)
    tvs = []
    for _ in range(20):
        trace = []
        hyp = cluster_or_decode(x, 2, 0.01, cfg, r, trace, cache)
        assert trace[0]["step"].startswith("3b")
        if hyp is not None:
            tvs.append(tv_monte_carlo(truth, hyp.mixture, 4000, r)[0])
    assert tvs and min(tvs) <= 0.2


def test_branch_trace_well_formed():
    truth = two_blobs()
    r = np.random.default_rng(1)
    x, _ = sample_mixture(truth, 3000, r)
    cfg = PipelineConfig(k=2, eps=0.01, collapse_budget=2)
    cache = _Cache(0)
    for _ in range(20):
        trace = []
        hyp = cluster_or_decode(x, 2, 0.01, cfg, r, trace, cache)
        for node, depth in walk(trace):
            assert depth <= 2 and node["depth"] == depth
            assert "step" in node or node.get("result") == "null"
        if hyp is not None:
            raw = hyp.provenance["raw_weight_sum"]
            assert abs(raw - 1) <= 2 * 0.45 + 1e-12


def test_spectral_branch_reached_on_thin_instance():
    d = 2
    truth = GaussianMixture.from_params(
        [0.5, 0.5], [np.zeros(d), np.array([1.9, 0.0])],
        [np.diag([1e-6, 1.0]), np.diag([0.195, 1.0])])
    r = np.random.default_rng(2)
    x, _ = sample_mixture(truth, 6000, r)
    cfg = PipelineConfig(k=2, eps=0.01, collapse_budget=2)
    cache = _Cache(0)
    steps = []
    for _ in range(100):
        trace = []
        cluster_or_decode(x, 2, 0.01, cfg, r, trace, cache)
        steps += [n.get("step") for n, _ in walk(trace)]
    assert any(s and s.startswith("3b-ii") for s in steps)


# -- end to end ------------------------------------------------------------

def small_problem(seed):
    truth = two_blobs()
    r = np.random.default_rng(seed)
    a, _ = sample_mixture(truth, 4000, r)
    b, _ = sample_mixture(truth, 4000, r)
    spec = ContaminationSpec("strong", 0.02)
    return truth, strong_contaminate(a, spec, r)[0], strong_contaminate(b, spec, r)[0]


def test_learn_gmm_reproducible_and_reported():
    truth, a, b = small_problem(0)
    cfg = PipelineConfig(k=2, eps=0.02, outer_budget=10, collapse_budget=2, seed=3)
    h1, rep1 = learn_gmm(a, b, 2, 0.02, cfg, np.random.default_rng(3), truth)
    h2, rep2 = learn_gmm(a, b, 2, 0.02, cfg, np.random.default_rng(3), truth)
    assert h1.mixture.to_dict() == h2.mixture.to_dict()
    d1, d2 = rep1.to_dict(), rep2.to_dict()
    d1.pop("timings"), d2.pop("timings")
    assert json.dumps(d1, sort_keys=True) == json.dumps(d2, sort_keys=True)
    assert len(d1["branch_traces"]) == 10 and d1["constants"] == cfg.constants
    assert d1["floored_exponents"] and d1["tv_estimate"]["tv"] >= 0


def test_threads_do_not_change_result():
    truth, a, b = small_problem(1)
    cfg1 = PipelineConfig(k=2, eps=0.02, outer_budget=6, collapse_budget=2)
    cfg2 = PipelineConfig(k=2, eps=0.02, outer_budget=6, collapse_budget=2, threads=3)
    h1, _ = learn_gmm(a, b, 2, 0.02, cfg1, np.random.default_rng(5))
    h2, _ = learn_gmm(a, b, 2, 0.02, cfg2, np.random.default_rng(5))
    assert h1.mixture.to_dict() == h2.mixture.to_dict()


def test_budget_one_returns_single_hypothesis():
    truth, a, b = small_problem(2)
    cfg = PipelineConfig(k=1, eps=0.02, outer_budget=1)
    hyp, rep = learn_gmm(a, b, 1, 0.02, cfg, np.random.default_rng(0))
    assert rep.hypothesis["index"] == 0 and hyp.mixture.k == 1


def test_all_null_attempts_raise_with_report():
    x = np.random.default_rng(0).standard_normal((5, 2))
    cfg = PipelineConfig(k=2, eps=0.02, outer_budget=3)
    with pytest.raises(PipelineError) as info:
        learn_gmm(x, x, 2, 0.02, cfg, np.random.default_rng(0))
    assert info.value.report.status == "failed"
    assert len(info.value.report.branch_traces) == 3
