"""Cluster-or-decode recursion, repetition and robust tournament selection."""

from __future__ import annotations

import hashlib
import math
import threading
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .decode import list_decode, robust_tensors
from .mixture import (GaussianComponent, GaussianMixture, Hypothesis, default_floor,
                      log_density, sample_mixture)
from .partial_cluster import moment_matrix_oracle, partial_cluster
from .robust import FilterFailure, isotropize
from .separation import SeparatorError, apply_separator, build_separator, find_thin_direction


class PipelineError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# --------------------------------------------------------------------------
# helpers


def weight_guess(k: int, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform point of the simplex scaled by a factor uniform in ``[1 - k eps, 1 + k eps]``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if k == 1:
        return np.ones(1)
    w = rng.dirichlet(np.ones(k))
    return w * rng.uniform(1 - k * eps, 1 + k * eps)


def weight_grid_guess(k: int, alpha: float, eps: float, rng: np.random.Generator,
                      max_tries: int = 1000) -> np.ndarray:
    """Uniform draw from the grid ``{alpha, 2 alpha, ...} ∩ [alpha, 1]`` per weight,
    conditioned on the sum lying within ``k eps + alpha`` of one."""
    if k == 1:
        return np.ones(1)
    grid = np.arange(1, int(math.floor(1 / alpha + 1e-9)) + 1) * alpha
    for _ in range(max_tries):
        w = rng.choice(grid, size=k)
        if abs(w.sum() - 1) <= k * eps + alpha:
            return w
    return np.full(k, 1.0 / k)


def _digest(points: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(points).tobytes()).hexdigest()


class _Cache:
    """Per-run memo of expensive node computations, keyed by point digest."""

    def __init__(self, seed: int):
        self.seed = seed
        self.store: dict = {}
        self.lock = threading.Lock()

    def rng(self, key: str) -> np.random.Generator:
        h = int(hashlib.sha1(key.encode()).hexdigest()[:16], 16)
        return np.random.default_rng([self.seed, h])

    def get(self, key, fn):
        with self.lock:
            if key in self.store:
                return self.store[key]
        val = fn(self.rng(key))
        with self.lock:
            self.store.setdefault(key, val)
            return self.store[key]


@dataclass
class _Ctx:
    cfg: PipelineConfig
    cache: _Cache
    max_depth: int


# --------------------------------------------------------------------------
# recursion


def _null(node, reason):
    node["result"] = "null"
    node["reason"] = reason
    return None


def _pick_candidates(cands, k: int, rng: np.random.Generator):
    groups = [g for g in cands.groups if len(g) == k]
    if groups:
        g = groups[rng.integers(len(groups))]
        return [cands.entries[i] for i in g], {"group": True}
    if len(cands) == 0:
        return None, {}
    idx = rng.choice(len(cands), size=k, replace=len(cands) < k)
    return [cands.entries[int(i)] for i in idx], {"group": False}


def _node(points, k, eps, ctx: _Ctx, rng, depth, trace):
    node = {"k": int(k), "eps": float(eps), "n": int(len(points)), "depth": depth,
            "children": []}
    trace.append(node)
    cfg = ctx.cfg
    if depth > ctx.max_depth:
        raise PipelineError("recursion deeper than k (invariant breach)")
    if k == 0:
        return _null(node, "k=0")
    if len(points) < 10:
        return _null(node, "too few points")
    sch = cfg.schedule(eps, k)
    node["schedule"] = {key: sch[key] for key in ("alpha", "tau", "floored")}

    # step 1: light component treated as noise
    if k > 1 and rng.random() < cfg.branch_probs.get("light", 0.5):
        node["step"] = "1-light"
        sub = _node(points, k - 1, sch["light_eps"], ctx, rng, depth + 1, node["children"])
        if sub is None:
            return _null(node, "child failed")
        d = points.shape[1]
        return sub + [(0.0, np.zeros(d), np.eye(d))]

    # step 2: robust isotropic transformation
    key = _digest(points)
    try:
        transform, Z = ctx.cache.get(("iso", key, round(eps, 12)).__repr__(),
                                     lambda r: isotropize(points, eps, r,
                                                          threshold=cfg.const("filter.threshold.C_f")))
    except (FilterFailure, ValueError, np.linalg.LinAlgError) as exc:
        return _null(node, f"isotropize failed: {exc}")
    if k == 1:
        node["step"] = "2-single"
        mu, cov = transform.lift_params(np.zeros(transform.rank), np.eye(transform.rank))
        node["result"] = "ok"
        return [(1.0, mu, cov)]

    # step 3a: partial clustering
    if rng.random() < cfg.branch_probs.get("cluster", 0.5):
        node["step"] = "3a-partial-cluster"
        pc_alpha = max(sch["alpha"], 2.01 * eps)
        try:
            M = ctx.cache.get(repr(("oracle", key, k, round(eps, 12), cfg.pc_oracle)),
                              lambda r: moment_matrix_oracle(Z, cfg.pc_oracle, pc_alpha, eps=eps,
                                                             rng=r, whiten=False, k=k))
            part = partial_cluster(Z, k, pc_alpha, eps, sch["alpha"], cfg.pc_oracle, rng,
                                   tau=cfg.pc_tau, C=cfg.const("thm7.1.tau.C"),
                                   tau_prefactor=cfg.const("thm7.1.tau.prefactor"),
                                   moment_matrix=M)
        except Exception as exc:  # oracle rejection or numerical failure
            return _null(node, f"partial clustering failed: {exc}")
        if part.trivial or len(part.side2) == 0 or len(part.side1) == 0:
            return _null(node, "trivial partition")
        return _split(points, [part.side1, part.side2], k, sch["cluster_eps"], ctx, rng,
                      depth, node)

    # step 3b: list decoding
    node["step"] = "3b-decode"
    cands = _decode(points, Z, k, eps, sch, ctx, key)
    if cands is None:
        return _null(node, "decode failed")
    node["list_size"] = len(cands)
    picked, how = _pick_candidates(cands, k, rng)
    if picked is None:
        return _null(node, "empty list")
    node["pick"] = how
    tau = sch["tau"]
    min_eigs = [float(np.linalg.eigvalsh(e["cov"])[0]) for e in picked]
    if min(min_eigs) >= tau:
        node["step"] = "3b-i-large-eigenvalues"
        if cfg.weight_mode == "fitted" and all("weight" in e["tags"] for e in picked):
            w = np.array([e["tags"]["weight"] for e in picked])
        elif cfg.weight_mode == "grid":
            w = weight_grid_guess(k, max(sch["alpha"], 1e-3), eps, rng)
        else:
            w = weight_guess(k, eps, rng)
        node["result"] = "ok"
        return [(float(wi),) + transform.lift_params(e["mean"], e["cov"])
                for wi, e in zip(w, picked)]

    # step 3b-ii: spectral separation of thin components
    node["step"] = "3b-ii-spectral"
    found = find_thin_direction([(e["mean"], e["cov"]) for e in picked], tau / 2)
    if found is None:
        return _null(node, "no thin direction")
    v, s = found
    try:
        sep = build_separator([(e["mean"], e["cov"]) for e in picked], v, tau / 2, k,
                              C=cfg.const("alg5.1.gap.C"),
                              width_mult=cfg.const("alg5.1.width.mult"))
    except SeparatorError as exc:
        return _null(node, f"separator: {exc}")
    side1, side2 = apply_separator(sep, Z)
    node["separator"] = sep.kind
    if min(len(side1), len(side2)) < sch["small_side"] * len(points):
        node["step"] = "3b-ii-A-small-side"
        sub = _node(points, k - 1, sch["small_side_eps"], ctx, rng, depth + 1, node["children"])
        if sub is None:
            return _null(node, "child failed")
        d = points.shape[1]
        return sub + [(0.0, np.zeros(d), np.eye(d))]
    return _split(points, [side1, side2], k, sch["spectral_eps"], ctx, rng, depth, node)


def _split(points, sides, k, sub_eps, ctx, rng, depth, node):
    k1 = int(rng.integers(1, k))
    node["k1"] = k1
    out = []
    n = len(points)
    for side, kk in zip(sides, (k1, k - k1)):
        sub = _node(points[side], kk, sub_eps, ctx, rng, depth + 1, node["children"])
        if sub is None:
            return _null(node, "child failed")
        frac = len(side) / n
        out += [(w * frac, mu, cov) for w, mu, cov in sub]
    node["result"] = "ok"
    return out


def _decode(points, Z, k, eps, sch, ctx: _Ctx, key):
    cfg = ctx.cfg
    search = "efficient" if cfg.mode == "efficient" else cfg.baseline_search
    ck = repr(("decode", key, k, round(eps, 12), search))

    def run(r):
        if search == "efficient":
            perm = r.permutation(len(Z))
            half = len(Z) // 2
            main, fresh = Z[np.sort(perm[:half])], Z[np.sort(perm[half:])]
        else:
            main, fresh = Z, None
        alpha = min(max(sch["alpha"], 1e-3), 1.0)
        try:
            tensors = robust_tensors(main, cfg.m_max, eps, r,
                                     threshold=cfg.const("filter.threshold.C_f"))
            cands, diag = list_decode(
                main, k, alpha, eps, mode=search, fresh_points=fresh, rng=r,
                m_max=cfg.m_max, collapse_budget=cfg.collapse_budget,
                cover_budget=cfg.cover_budget, constants=cfg.constants, eta_cap=cfg.eta_cap,
                tensors=tensors, trivial=(np.zeros(Z.shape[1]), np.eye(Z.shape[1])),
                n_starts=cfg.n_starts, low_dim_kwargs={"n_restarts": cfg.em_restarts},
                filter_threshold=cfg.const("filter.threshold.C_f"))
        except Exception as exc:  # sub-module failures become a null attempt
            warnings.warn(f"list decoding failed: {exc}", stacklevel=2)
            return None
        return cands

    return ctx.cache.get(ck, run)


def cluster_or_decode(points, k: int, eps: float, cfg: PipelineConfig,
                      rng: np.random.Generator, trace: list | None = None,
                      cache: _Cache | None = None):
    """One randomized attempt; returns a :class:`Hypothesis` or ``None``.

    ``trace`` (if given) receives the branch tree of this attempt.
    """
    pts = np.asarray(points, dtype=float)
    ctx = _Ctx(cfg, cache or _Cache(cfg.seed), max_depth=k)
    trace = [] if trace is None else trace
    parts = _node(pts, k, eps, ctx, rng, 0, trace)
    if parts is None:
        return None
    w = np.array([p[0] for p in parts], dtype=float)
    if w.sum() <= 0:
        return None
    raw_sum = float(w.sum())
    comps = []
    for _, mu, cov in parts:
        cov = 0.5 * (cov + cov.T)
        vals, vecs = np.linalg.eigh(cov)
        cov = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        comps.append(GaussianComponent(mu, 0.5 * (cov + cov.T)))
    mix = GaussianMixture(w / raw_sum, tuple(comps))
    return Hypothesis(mix, {"trace": trace, "raw_weight_sum": raw_sum})


# --------------------------------------------------------------------------
# tournament


class _Scheffe:
    """Lazily evaluated log densities for pairwise Scheffe comparisons."""

    def __init__(self, hyps, points, n_mc, rng):
        self.hyps = hyps
        self.points = points
        self.n_mc = n_mc
        self.rng = rng
        self.floor = max(default_floor(h) for h in hyps)
        self._lp: dict = {}
        self._samples: dict = {}
        self._ls: dict = {}

    def logp(self, i):
        if i not in self._lp:
            self._lp[i] = log_density(self.hyps[i], self.points, self.floor)
        return self._lp[i]

    def samples(self, i):
        if i not in self._samples:
            self._samples[i] = sample_mixture(self.hyps[i], self.n_mc, self.rng)[0]
        return self._samples[i]

    def logs(self, j, i):
        # log density of hypothesis j on samples of hypothesis i
        if (j, i) not in self._ls:
            self._ls[(j, i)] = log_density(self.hyps[j], self.samples(i), self.floor)
        return self._ls[(j, i)]

    def compare(self, i, j):
        """Deficits ``|H(A) - P(A)|`` of ``i`` and ``j`` on ``A = {p_i > p_j}``."""
        emp = float(np.mean(self.logp(i) > self.logp(j)))
        hi = float(np.mean(self.logs(i, i) > self.logs(j, i)))
        hj = float(np.mean(self.logs(i, j) > self.logs(j, j)))
        return abs(hi - emp), abs(hj - emp)


def tournament_select(hyps, points, eta: float, rng: np.random.Generator,
                      n_mc: int = 4000, C: float = 1.0, ledger: list | None = None,
                      max_rounds: int | None = None) -> int:
    """Scheffe tournament: single elimination, then a champion re-check round.

    A challenger replaces the champion when its deficit is smaller by more
    than ``3 eta``. Ties go to the lower index.
    """
    hyps = list(hyps)
    if not hyps:
        raise ValueError("empty hypothesis list")
    X = np.asarray(points, dtype=float)
    if len(X) < C * math.log(max(len(hyps), 2)) / eta ** 2:
        warnings.warn("tournament sample smaller than C log(N)/eta^2", stacklevel=2)
    if len(hyps) == 1:
        return 0
    sch = _Scheffe(hyps, X, n_mc, rng)
    ledger = [] if ledger is None else ledger

    def play(i, j, stage):
        di, dj = sch.compare(i, j)
        win = i if di <= dj else j
        if (i > j and di == dj):
            win = j
        ledger.append({"stage": stage, "pair": [i, j], "deficits": [di, dj], "winner": win})
        return win, di, dj

    alive = list(range(len(hyps)))
    while len(alive) > 1:
        nxt = []
        for a in range(0, len(alive) - 1, 2):
            nxt.append(play(alive[a], alive[a + 1], "bracket")[0])
        if len(alive) % 2:
            nxt.append(alive[-1])
        alive = nxt
    champ = alive[0]
    rounds = 0
    max_rounds = len(hyps) if max_rounds is None else max_rounds
    changed = True
    while changed and rounds < max_rounds:
        changed = False
        rounds += 1
        for h in range(len(hyps)):
            if h == champ:
                continue
            dc, dh = sch.compare(champ, h)
            ledger.append({"stage": "recheck", "pair": [champ, h], "deficits": [dc, dh],
                           "winner": h if dh + 3 * eta < dc else champ})
            if dh + 3 * eta < dc:
                champ = h
                changed = True
                break
    return champ


# --------------------------------------------------------------------------
# top level


@dataclass
class RunReport:
    hypothesis: dict | None
    list_sizes: dict
    branch_traces: list
    constants: dict
    config: dict
    timings: dict
    tv_estimate: dict | None = None
    tournament: list = field(default_factory=list)
    floored_exponents: bool = False
    status: str = "ok"

    def to_dict(self) -> dict:
        return {"status": self.status, "hypothesis": self.hypothesis,
                "list_sizes": self.list_sizes, "branch_traces": self.branch_traces,
                "constants": self.constants, "config": self.config, "timings": self.timings,
                "tv_estimate": self.tv_estimate, "tournament": self.tournament,
                "floored_exponents": self.floored_exponents}


def _jsonable_trace(trace):
    out = []
    for node in trace:
        item = {}
        for key, val in node.items():
            if key == "children":
                item[key] = _jsonable_trace(val)
            elif isinstance(val, (np.floating, np.integer)):
                item[key] = val.item()
            else:
                item[key] = val
        out.append(item)
    return out


def learn_gmm(points_a, points_b, k: int, eps: float, cfg: PipelineConfig | None = None,
              rng: np.random.Generator | None = None, truth: GaussianMixture | None = None):
    """Repeat :func:`cluster_or_decode` on ``points_a``; select on ``points_b``.

    Returns ``(Hypothesis, RunReport)``; raises :class:`PipelineError` with a
    report when no attempt produced a hypothesis.
    """
    cfg = cfg or PipelineConfig(k=k, eps=eps)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    A = np.asarray(points_a, dtype=float)
    B = np.asarray(points_b, dtype=float)
    t0 = time.perf_counter()
    seeds = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(cfg.outer_budget + 1)
    cache = _Cache(int(rng.integers(2 ** 63)))

    def attempt(r):
        trace: list = []
        hyp = cluster_or_decode(A, k, eps, cfg, np.random.default_rng(seeds[r]), trace, cache)
        return hyp, trace

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(attempt, range(cfg.outer_budget)))
    else:
        results = [attempt(r) for r in range(cfg.outer_budget)]
    t1 = time.perf_counter()
    hyps = [h for h, _ in results if h is not None]
    traces = [_jsonable_trace(t) for _, t in results]
    floored = any(cfg.schedule(eps, kk)["floored"] for kk in range(1, k + 1))
    report = RunReport(None, {"attempts": cfg.outer_budget, "hypotheses": len(hyps)},
                       traces, dict(cfg.constants), cfg.to_dict(),
                       {"attempts_s": t1 - t0}, floored_exponents=floored)
    if not hyps:
        report.status = "failed"
        raise PipelineError("no attempt produced a hypothesis", report)
    t_rng = np.random.default_rng(seeds[-1])
    n_t = max(1, int(round(cfg.tournament_fraction * len(B))))
    idx = np.sort(t_rng.permutation(len(B))[:n_t]) if n_t < len(B) else np.arange(len(B))
    ledger: list = []
    win = tournament_select([h.mixture for h in hyps], B[idx], cfg.tournament_eta, t_rng,
                            n_mc=cfg.tournament_mc, C=cfg.const("tournament.C"), ledger=ledger)
    report.timings["tournament_s"] = time.perf_counter() - t1
    chosen = hyps[win]
    report.hypothesis = {**chosen.mixture.to_dict(), "index": win}
    report.tournament = ledger
    if truth is not None:
        from .mixture import tv_monte_carlo
        tv, se = tv_monte_carlo(truth, chosen.mixture, 20000, np.random.default_rng(seeds[-1]))
        report.tv_estimate = {"tv": tv, "stderr": se}
    return chosen, report
