"""Experiment orchestration behind the command line: gen, run, eval, bench."""

from __future__ import annotations

import csv
import itertools
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import PipelineConfig
from .contamination import ContaminationSpec, contaminate, read_samples, write_samples
from .mixture import (GaussianMixture, load_mixture, match_components, sample_mixture,
                      save_mixture, tv_monte_carlo)
from .pipeline import PipelineError, learn_gmm


class InputError(ValueError):
    """Bad configuration or missing/unparsable input files (exit code 2)."""


# --------------------------------------------------------------------------
# mixtures from recipes


def make_mixture(recipe, rng: np.random.Generator | None = None) -> GaussianMixture:
    """Mixture from a file path or a generator recipe.

    Recipes: ``{"preset": "offset-pair", "d": 6}`` gives equal weights,
    ``N(0, I)`` and ``N(3 e1, diag(2, 1, ..., 1))``; otherwise
    ``{"k", "d", "separation", "seed"}`` draws means at the given distance
    scale and randomly rotated covariances with eigenvalues in ``[0.5, 2]``.
    """
    if isinstance(recipe, str):
        if not os.path.exists(recipe):
            raise InputError(f"mixture file not found: {recipe}")
        return load_mixture(recipe)
    recipe = dict(recipe)
    d = int(recipe.get("d", 2))
    if recipe.get("preset") == "offset-pair":
        e1 = np.eye(d)[0]
        return GaussianMixture.from_params([0.5, 0.5], [np.zeros(d), 3 * e1],
                                           [np.eye(d), np.diag([2.0] + [1.0] * (d - 1))])
    if "preset" in recipe:
        raise InputError(f"unknown mixture preset {recipe['preset']!r}")
    k = int(recipe.get("k", 2))
    sep = float(recipe.get("separation", 3.0))
    if "seed" in recipe:
        rng = np.random.default_rng(recipe["seed"])
    elif rng is None:
        rng = np.random.default_rng(0)
    means = rng.standard_normal((k, d))
    means *= sep / max(np.linalg.norm(means, axis=1).max(), 1e-12)
    covs = []
    for _ in range(k):
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        covs.append((q * rng.uniform(0.5, 2.0, d)) @ q.T)
    return GaussianMixture.from_params(np.full(k, 1.0 / k), means, covs)


@dataclass
class ExperimentSpec:
    mixture: object = field(default_factory=lambda: {"k": 2, "d": 2, "separation": 3.0})
    contamination: dict = field(default_factory=lambda: {"model": "strong", "eps": 0.02,
                                                         "strategy": "far-cluster"})
    n: int = 1000
    trials: int = 1
    pipeline: dict = field(default_factory=dict)
    samples: str | None = None          # directory holding sample_a.csv / sample_b.csv
    truth: str | None = None            # ground-truth mixture file for evaluation
    bench: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise InputError("trial count must be at least 1")
        if self.n < 1:
            raise InputError("sample size must be at least 1")

    @classmethod
    def from_document(cls, doc: dict) -> "ExperimentSpec":
        exp = dict(doc.get("experiment", {}))
        if "k" in exp or "d" in exp:
            mix = exp.pop("mixture", None) or {}
            if isinstance(mix, dict):
                mix = {**{"k": exp.get("k", 2), "d": exp.get("d", 2)}, **mix}
            exp["mixture"] = mix
        exp.pop("k", None)
        exp.pop("d", None)
        known = set(cls.__dataclass_fields__)
        unknown = set(exp) - known
        if unknown:
            raise InputError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(pipeline=dict(doc.get("pipeline", {})), bench=dict(doc.get("bench", {})),
                   **exp)

    def contamination_spec(self) -> ContaminationSpec:
        try:
            return ContaminationSpec.from_dict(self.contamination)
        except (TypeError, ValueError, KeyError) as exc:
            raise InputError(f"bad contamination spec: {exc}") from exc

    def pipeline_config(self, k: int, seed: int, threads: int = 1) -> PipelineConfig:
        opts = dict(self.pipeline)
        opts.setdefault("k", k)
        opts.setdefault("eps", max(self.contamination.get("eps", 0.0), 1e-3))
        opts["seed"] = seed
        opts["threads"] = threads
        try:
            return PipelineConfig.from_dict(opts)
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad pipeline config: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def load_document(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from exc


# --------------------------------------------------------------------------
# commands


def _draw(truth, spec: ExperimentSpec, n, rng):
    clean, labels = sample_mixture(truth, n, rng)
    cspec = spec.contamination_spec()
    pts, lab, mask = contaminate(clean, labels, cspec, rng, mixture=truth)
    return clean, labels, pts, lab, mask


def cmd_gen(spec: ExperimentSpec, out: str, seed: int) -> dict:
    """Write ``truth.json`` and clean/corrupted CSV pairs for samples ``a`` and ``b``."""
    os.makedirs(out, exist_ok=True)
    rng = np.random.default_rng(seed)
    truth = make_mixture(spec.mixture, rng)
    paths = {"truth": os.path.join(out, "truth.json")}
    save_mixture(truth, paths["truth"], seed=seed)
    for tag in ("a", "b"):
        clean, labels, pts, lab, mask = _draw(truth, spec, spec.n, rng)
        paths[f"{tag}_clean"] = os.path.join(out, f"sample_{tag}_clean.csv")
        paths[tag] = os.path.join(out, f"sample_{tag}.csv")
        write_samples(paths[f"{tag}_clean"], clean, labels, np.zeros(len(clean), bool), seed)
        write_samples(paths[tag], pts, lab, mask, seed)
    return paths


def _read(path):
    if not os.path.exists(path):
        raise InputError(f"sample file not found: {path}")
    try:
        return read_samples(path)
    except (ValueError, IndexError) as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc


def cmd_run(spec: ExperimentSpec, samples: str, out: str, seed: int, threads: int = 1,
            k: int | None = None):
    """Run the learner on ``samples/sample_a.csv`` (and ``sample_b.csv``).

    Without a second sample the first is split in halves. Returns
    ``(status, paths)``; a failed run still writes its report.
    """
    a = _read(os.path.join(samples, "sample_a.csv"))["points"]
    b_path = os.path.join(samples, "sample_b.csv")
    if os.path.exists(b_path):
        b = _read(b_path)["points"]
    else:
        half = len(a) // 2
        a, b = a[:half], a[half:]
    if k is None:
        k = int(spec.pipeline.get("k", spec.mixture.get("k", 2)
                                  if isinstance(spec.mixture, dict) else 2))
    cfg = spec.pipeline_config(k, seed, threads)
    truth = None
    truth_path = spec.truth or os.path.join(samples, "truth.json")
    if os.path.exists(truth_path):
        truth = load_mixture(truth_path)
    os.makedirs(out, exist_ok=True)
    paths = {"report": os.path.join(out, "report.json"),
             "hypothesis": os.path.join(out, "hypothesis.json")}
    try:
        hyp, report = learn_gmm(a, b, cfg.k, cfg.eps, cfg, np.random.default_rng(seed), truth)
    except PipelineError as exc:
        doc = exc.report.to_dict() if exc.report is not None else {"status": "failed"}
        doc.update({"seed": seed, "error": str(exc)})
        _dump(paths["report"], doc)
        return 1, paths
    save_mixture(hyp.mixture, paths["hypothesis"], seed=seed)
    _dump(paths["report"], {**report.to_dict(), "seed": seed})
    return 0, paths


def cmd_eval(truth_path: str, hyp_path: str, n_mc: int, seed: int, tv_tol: float = 0.2,
             out: str | None = None) -> dict:
    """TV estimate, label-free component matching and weight gaps."""
    for p in (truth_path, hyp_path):
        if not os.path.exists(p):
            raise InputError(f"file not found: {p}")
    try:
        truth, hyp = load_mixture(truth_path), load_mixture(hyp_path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"schema mismatch: {exc}") from exc
    if truth.dim != hyp.dim:
        raise InputError(f"dimension mismatch: {truth.dim} vs {hyp.dim}")
    tv, se = tv_monte_carlo(truth, hyp, n_mc, np.random.default_rng(seed))
    match = match_components(truth, hyp, tv_tol)
    metrics = {"seed": seed, "n_mc": n_mc, "tv": tv, "tv_stderr": se,
               "unmatched_weight": match["unmatched_weight"],
               "max_weight_gap": match["max_weight_gap"], "matching": match}
    if out:
        os.makedirs(out, exist_ok=True)
        _dump(os.path.join(out, "metrics.json"), metrics)
        with open(os.path.join(out, "metrics.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "n_mc", "tv", "tv_stderr", "unmatched_weight", "max_weight_gap"])
            w.writerow([seed, n_mc, tv, se, match["unmatched_weight"], match["max_weight_gap"]])
    return metrics


BENCH_COLUMNS = ["eps", "n", "k", "d", "trials", "failures", "tv_median", "tv_q25", "tv_q75",
                 "runtime_median", "seed"]


def _bench_trial(spec: ExperimentSpec, eps, n, k, d, seed_seq):
    rng = np.random.default_rng(seed_seq)
    cont = {**spec.contamination, "eps": eps}
    sub = ExperimentSpec(mixture={**(spec.mixture if isinstance(spec.mixture, dict) else {}),
                                  "k": k, "d": d},
                         contamination=cont, n=n, pipeline=spec.pipeline)
    sub.mixture.pop("seed", None)
    sub.mixture.pop("preset", None)
    truth = make_mixture(sub.mixture, rng)
    t0 = time.perf_counter()
    try:
        a = _draw(truth, sub, n, rng)[2]
        b = _draw(truth, sub, n, rng)[2]
        cfg = sub.pipeline_config(k, int(rng.integers(2 ** 31)))
        cfg.eps = max(eps, 1e-3)
        hyp, _ = learn_gmm(a, b, k, cfg.eps, cfg, rng)
        tv, _ = tv_monte_carlo(truth, hyp.mixture, 20000, rng)
        return {"tv": tv, "runtime": time.perf_counter() - t0, "error": None}
    except Exception as exc:  # recorded per cell; the sweep continues
        return {"tv": None, "runtime": time.perf_counter() - t0, "error": str(exc)}


def cmd_bench(spec: ExperimentSpec, out: str, seed: int, threads: int = 1) -> list[dict]:
    """Median/IQR of TV over the ``(eps, n, k, d)`` grid; writes ``bench.csv``."""
    grid = spec.bench
    axes = [list(grid.get(key, default)) for key, default in
            (("eps", [spec.contamination.get("eps", 0.02)]), ("n", [spec.n]),
             ("k", [spec.mixture.get("k", 2) if isinstance(spec.mixture, dict) else 2]),
             ("d", [spec.mixture.get("d", 2) if isinstance(spec.mixture, dict) else 2]))]
    trials = int(grid.get("trials", spec.trials))
    cells = list(itertools.product(*axes))
    root = np.random.SeedSequence(seed)
    cell_seeds = root.spawn(len(cells))
    rows = []
    for (eps, n, k, d), cs in zip(cells, cell_seeds):
        seqs = cs.spawn(trials)
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                res = list(pool.map(lambda s: _bench_trial(spec, eps, n, k, d, s), seqs))
        else:
            res = [_bench_trial(spec, eps, n, k, d, s) for s in seqs]
        tvs = np.array([r["tv"] for r in res if r["tv"] is not None])
        rt = np.array([r["runtime"] for r in res])
        q = np.percentile(tvs, [25, 50, 75]) if tvs.size else [np.nan] * 3
        rows.append({"eps": eps, "n": n, "k": k, "d": d, "trials": trials,
                     "failures": int(sum(r["error"] is not None for r in res)),
                     "tv_median": float(q[1]), "tv_q25": float(q[0]), "tv_q75": float(q[2]),
                     "runtime_median": float(np.median(rt)), "seed": seed})
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "bench.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return rows


def _dump(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=_default)


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
