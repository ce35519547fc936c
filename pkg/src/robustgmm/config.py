"""Pipeline configuration and the table of constants keyed by formula site."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

# Every unnamed constant of the method lives here; reports copy the table verbatim.
DEFAULT_CONSTANTS = {
    "fact2.1.tv.C": 1.0,            # TV upper bound prefactor
    "lemma3.7.C": 1.0,              # exponent base of the moment-distance threshold
    "filter.threshold.C_f": 10.0,   # spectral filter stopping ratio
    "alg3.2.eta.C": 1.0,            # tensor accuracy eta
    "alg3.2.D.C": 1.0,              # collapse coefficient range D
    "alg3.2.G.C": 1.0,              # G(k) = 1/(C^(k+1)(k+1)!)
    "alg3.2.ell.C": 100.0,          # collapse repetitions
    "alg3.2.phi.C": 10.0,           # cover scalar range phi
    "alg3.2.kprime.C": 1.0,         # number of low-rank atoms k' = C k^2
    "alg4.1.rows.C": 1.0,           # rounding rows l = C/alpha log(k/eta)
    "thm7.1.tau.C": 1.0,            # merge scale constant
    "thm7.1.tau.prefactor": 1e8,    # merge scale prefactor
    "alg5.1.gap.C": 0.25,           # multiplicative variance gap C eta^(-1/(2k))
    "alg5.1.width.mult": 1.0,       # interval half-width multiplier
    "alg5.3.exponent.C": 1.0,       # C in the epsilon-escalation exponents
    "alg5.3.tau.C": 1.0,            # eigenvalue threshold prefactor
    "tournament.C": 1.0,            # sample-size check C log(N)/eta^2
}


@dataclass
class PipelineConfig:
    k: int = 2
    eps: float = 0.02
    mode: str = "efficient"                  # "baseline" or "efficient"
    baseline_search: str = "moments"         # "moments" or "cover" for baseline mode
    outer_budget: int = 100
    collapse_budget: int = 8
    cover_budget: int = 2000
    m_max: int = 4
    seed: int = 0
    exponent_floor: float = 0.5
    branch_probs: dict = field(default_factory=lambda: {"light": 0.5, "cluster": 0.5})
    alpha: float | None = None               # minimum weight guess; schedule value if None
    tau: float | None = None                 # eigenvalue threshold; schedule value if None
    eta_cap: float = 0.25
    pc_tau: float | None = 1.0               # partial-cluster merge scale (desk preset)
    pc_oracle: str = "affinity"
    tournament_eta: float = 0.05
    tournament_mc: int = 4000
    tournament_fraction: float = 1.0         # share of points_b used by the tournament
    weight_mode: str = "guess"               # "guess", "grid" or "fitted"
    n_starts: int = 6
    em_restarts: int = 3
    threads: int = 1
    constants: dict = field(default_factory=lambda: dict(DEFAULT_CONSTANTS))

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 1/2)")
        if self.mode not in ("baseline", "efficient"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.weight_mode not in ("guess", "grid", "fitted"):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")
        for name in ("outer_budget", "collapse_budget", "cover_budget"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        merged = dict(DEFAULT_CONSTANTS)
        merged.update(self.constants or {})
        self.constants = merged

    def const(self, key: str) -> float:
        return float(self.constants[key])

    # exponent schedule -------------------------------------------------
    def _G(self, k: int) -> float:
        return self.const("alg5.3.exponent.C") ** (k + 1) * math.factorial(k + 1)

    def exponent(self, denom_factor: float, k: int) -> tuple[float, float]:
        """``(effective, formula)`` exponent ``1/(denom_factor * C^(k+1) (k+1)!)``."""
        formula = 1.0 / (denom_factor * self._G(k))
        return max(formula, self.exponent_floor), formula

    def schedule(self, eps: float, k: int) -> dict:
        """Branch parameters at a node with outlier rate ``eps`` and ``k`` components."""
        e10, f10 = self.exponent(10, k)
        e40, f40 = self.exponent(40, k)
        e100, f100 = self.exponent(100 * k, k)
        e400, f400 = self.exponent(400 * k, k)
        cap = 0.45
        return {
            "light_eps": min(eps + eps ** e10, cap),
            "cluster_eps": min(eps ** e10, cap),
            "alpha": self.alpha if self.alpha is not None else eps ** e10,
            "tau": self.tau if self.tau is not None else self.const("alg5.3.tau.C") * eps ** e40,
            "spectral_eps": min(eps ** e100, cap),
            "small_side": eps ** e400,
            "small_side_eps": min(2 * eps ** e400, cap),
            "exponents": {"light": [e10, f10], "tau": [e40, f40], "spectral": [e100, f100],
                          "small_side": [e400, f400]},
            "floored": any(e > f for e, f in ((e10, f10), (e40, f40), (e100, f100),
                                              (e400, f400))),
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def defaults_document() -> dict:
    """Full default configuration, as emitted by the ``defaults`` subcommand."""
    return {"pipeline": PipelineConfig().to_dict(),
            "experiment": {"k": 2, "d": 2, "n": 1000, "trials": 1,
                           "contamination": {"model": "strong", "eps": 0.02,
                                             "strategy": "far-cluster"}}}
