"""Run configuration: defaults, presets, JSON loading, overrides and hashing."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Optional

from .errors import ConfigError

# Fields that change where or how fast work runs, never what it produces.
NON_SEMANTIC = ("workers", "backend", "out")


def _default_eps_grid():
    return [round(0.001 + 0.1 * i, 3) for i in range(10)]


@dataclass
class RunConfig:
    target: dict = field(default_factory=lambda: {"kind": "reference_bimodal", "dim": 50})
    b: float = 0.01
    b_evidence: float = 0.3
    sqrt_c1: float = 0.05
    delta: float = 9.5e-5
    M: int = 100_000
    sqrt_c1_evidence: float = 0.05
    delta_evidence: float = 3e-5
    M_evidence: int = 100_000
    mc_size: int = 5000
    evidence_mc_size: Optional[int] = None
    eta: float = 1e-10
    probe_mc_size: Optional[int] = None
    zero_mass_tol: float = 1e-8
    pilot_n_iter: int = 2_250_000
    pilot_burn_in: int = 750_000
    pilot_thin: int = 150
    pilot_adapt_iter: int = 2000
    eps_grid: List[float] = field(default_factory=_default_eps_grid)
    merge_threshold: float = 0.05
    modal_radius: Optional[object] = None
    polish_modes: bool = False
    evidence_center: str = "mean"
    vardim_modes: str = "auto"
    tail_run: int = 20
    tail_rtol: float = 1e-8
    K: int = 10_000
    seed: int = 0
    workers: int = 1
    backend: str = "thread"
    ratio_mode: str = "proposal_ratio"
    max_shells: int = 1 << 22
    grid_lo: float = 2.0
    grid_step: float = 0.06
    grid_n: int = 100
    out: str = "out"

    def __post_init__(self):
        positive = ("b", "b_evidence", "sqrt_c1", "sqrt_c1_evidence", "M", "M_evidence", "mc_size",
                    "eta", "pilot_n_iter", "pilot_thin", "K", "grid_n", "grid_step", "max_shells", "merge_threshold")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.delta < 0 or self.delta_evidence < 0:
            raise ConfigError("radius increments must be non-negative")
        if not 0 <= self.pilot_burn_in < self.pilot_n_iter:
            raise ConfigError("need 0 <= pilot_burn_in < pilot_n_iter")
        if self.ratio_mode not in ("proposal_ratio", "raw_pushforward"):
            raise ConfigError(f"unknown ratio_mode {self.ratio_mode!r}")
        if self.evidence_center not in ("mean", "mode"):
            raise ConfigError("evidence_center must be 'mean' or 'mode'")
        if self.vardim_modes not in ("mean", "sweep", "auto"):
            raise ConfigError("vardim_modes must be 'mean', 'sweep' or 'auto'")
        if any(not 0 < e < 1 for e in self.eps_grid):
            raise ConfigError("eps_grid values must lie in (0, 1)")
        if "kind" not in self.target:
            raise ConfigError("target needs a 'kind'")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)

    def semantic_dict(self):
        return {k: v for k, v in self.to_dict().items() if k not in NON_SEMANTIC}

    def hash(self):
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def meta(self):
        return {"config_hash": self.hash(), "seed": self.seed}


PRESETS = {
    "reference": {},
    "desk": {
        "target": {"kind": "reference_bimodal", "dim": 5},
        "delta": 0.05,
        "M": 240,
        "delta_evidence": 0.02,
        "M_evidence": 1500,
        "pilot_n_iter": 60_000,
        "pilot_burn_in": 10_000,
        "pilot_thin": 5,
        "eps_grid": [0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5],
        "polish_modes": True,
    },
    "acidity-desk": {
        "target": {"kind": "normal_mixture", "data": None, "synthetic_n": 155, "data_seed": 0,
                   "k_values": [1, 2, 3, 4, 5], "k_max": 30},
        "delta": 0.03,
        "M": 300,
        "evidence_mc_size": 2000,
        "probe_mc_size": 500,
        "delta_evidence": 0.05,
        "M_evidence": 1000,
        "pilot_n_iter": 25_000,
        "pilot_burn_in": 5_000,
        "pilot_thin": 2,
        "K": 2000,
    },
}


def load_config(path=None, preset="reference", overrides=None):
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    data = RunConfig().to_dict()
    data.update(PRESETS[preset])
    if path is not None:
        with open(path) as fh:
            try:
                data.update(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
    data.update(overrides or {})
    return RunConfig.from_dict(data)


def parse_override(text):
    """``key=value`` with the value parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value
