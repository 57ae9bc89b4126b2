"""Experiment configuration: TOML sections per pipeline, lossless round trip."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .errors import ConfigError

STAGES = ("simulate-trajectories", "solve-pde", "estimate-fdr", "fit-rate",
          "verify-bounds", "check-sharpness")
FAMILIES = ("critical_shear", "lipschitz_shear", "weierstrass", "circular")
PROFILES = ("sin", "monomial")
BOUND_FORMS = ("linear", "critical", "circular")
SHAPES = ("linear", "quadratic", "measured")


@dataclass
class FlowSpec:
    family: str = "critical_shear"
    profile: str = "sin"
    power: int = 1
    amplitude: float = 1.0
    q: float = 2.0
    alpha: float = 0.5
    L: int = 0  # 0 selects the default truncation for each kappa
    domain: str = "torus"
    L_y: float = 0.0

    def validate(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"flow.family must be one of {FAMILIES}, got {self.family!r}")
        if self.profile not in PROFILES:
            raise ConfigError(f"flow.profile must be one of {PROFILES}")
        if self.domain not in ("torus", "strip"):
            raise ConfigError("flow.domain must be 'torus' or 'strip'")
        if self.domain == "strip" and not self.L_y > 0:
            raise ConfigError("a strip domain needs flow.L_y > 0")
        if self.family == "circular" and self.q < 1:
            raise ConfigError("flow.q must be >= 1")
        if self.family == "weierstrass" and not 0 < self.alpha < 1:
            raise ConfigError("flow.alpha must lie in (0, 1)")
        if self.L < 0 or self.power < 0:
            raise ConfigError("flow.L and flow.power must be non-negative")


@dataclass
class PdeSpec:
    t_end: float = 0.0  # 0 selects kappa**(-p) from the theoretical exponent
    dt: float = 0.0  # 0 selects the solver default
    cells_per_scale: int = 256
    refine: int = 1
    lam: float = 0.5
    max_doublings: int = 12
    record_every: int = 1

    def validate(self):
        if self.t_end < 0 or self.dt < 0:
            raise ConfigError("pde.t_end and pde.dt must be non-negative")
        if not 0 < self.lam < 1:
            raise ConfigError("pde.lam must lie in (0, 1)")
        if self.cells_per_scale < 16 or self.refine < 1 or self.record_every < 1:
            raise ConfigError("pde mesh parameters out of range")
        if self.max_doublings < 0:
            raise ConfigError("pde.max_doublings must be non-negative")


@dataclass
class MonteCarloSpec:
    M: int = 1000
    times: list = field(default_factory=lambda: [1.0, 2.0, 4.0])
    h: float = 0.0  # 0 selects the integrator default
    estimator: str = "paired"
    delta: int = 0
    fine_per_scale: int = 8

    def validate(self):
        if self.M < 100:
            raise ConfigError("mc.M must be >= 100")
        if not self.times or any(t <= 0 for t in self.times):
            raise ConfigError("mc.times must be a non-empty list of positive times")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError("mc.times must be increasing")
        if self.h < 0:
            raise ConfigError("mc.h must be non-negative")
        if self.estimator.lower() not in ("paired", "single", "pairedcopy", "singlecopy"):
            raise ConfigError("mc.estimator must be 'paired' or 'single'")
        if self.delta not in (0, 1):
            raise ConfigError("mc.delta must be 0 or 1")
        if self.fine_per_scale < 2:
            raise ConfigError("mc.fine_per_scale must be >= 2")


@dataclass
class BoundSpec:
    form: str = "linear"
    p: float = 0.0  # 0 selects the theoretical exponent
    window: float = 1.0

    def validate(self):
        if self.form not in BOUND_FORMS:
            raise ConfigError(f"bounds.form must be one of {BOUND_FORMS}")
        if self.p < 0 or self.window <= 0:
            raise ConfigError("bounds.p must be >= 0 and bounds.window > 0")


@dataclass
class SharpnessSpec:
    shape: str = "measured"
    xi_exponent: float = 1.0 / 3.0
    r_exponent: float = 0.25
    C: float = 2.0
    kappas: list = field(default_factory=lambda: [10.0 ** -k for k in range(4, 11)])
    x_max: float = 0.0  # table extent for measured shapes; 0 uses the common range

    def validate(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"sharpness.shape must be one of {SHAPES}")
        if self.C < 1:
            raise ConfigError("sharpness.C must be >= 1")
        if not self.kappas or any(not 0 < k < 1 for k in self.kappas):
            raise ConfigError("sharpness.kappas must be a non-empty list in (0, 1)")
        if self.xi_exponent <= 0 or self.r_exponent <= 0:
            raise ConfigError("sharpness exponents must be positive")


SECTIONS = {"flow": FlowSpec, "pde": PdeSpec, "mc": MonteCarloSpec,
            "bounds": BoundSpec, "sharpness": SharpnessSpec}


@dataclass
class ExperimentConfig:
    kappas: list
    stages: list = field(default_factory=lambda: ["solve-pde", "fit-rate"])
    seed: int = 0
    out: str = "results"
    flow: FlowSpec = field(default_factory=FlowSpec)
    pde: PdeSpec = field(default_factory=PdeSpec)
    mc: MonteCarloSpec = field(default_factory=MonteCarloSpec)
    bounds: BoundSpec = field(default_factory=BoundSpec)
    sharpness: SharpnessSpec = field(default_factory=SharpnessSpec)

    def validate(self):
        if not self.kappas:
            raise ConfigError("kappas must not be empty")
        for k in self.kappas:
            if not (isinstance(k, (int, float)) and math.isfinite(k) and 0 < k < 1):
                raise ConfigError(f"kappa={k!r} outside (0, 1)")
        if len(set(self.kappas)) != len(self.kappas):
            raise ConfigError("kappas must be distinct")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown or not self.stages:
            raise ConfigError(f"unknown or empty stages {unknown}; choose from {STAGES}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for name in SECTIONS:
            getattr(self, name).validate()
        if "estimate-fdr" in self.stages and self.flow.family == "circular" and self.mc.delta:
            raise ConfigError("mc.delta applies to shear flows only")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "kappas" not in data:
            raise ConfigError("config needs a 'kappas' list")
        for name, kind in SECTIONS.items():
            section = data.get(name, {})
            if isinstance(section, kind):
                continue
            if not isinstance(section, dict):
                raise ConfigError(f"[{name}] must be a table")
            bad = set(section) - {f.name for f in fields(kind)}
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            data[name] = kind(**section)
        data["kappas"] = [float(k) for k in data["kappas"]]
        data["stages"] = list(data.get("stages", cls.__dataclass_fields__["stages"]
                                       .default_factory()))
        return cls(**data).validate()


def loads(text):
    try:
        return ExperimentConfig.from_dict(tomli.loads(text))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load(path):
    return loads(Path(path).read_text(encoding="utf-8"))


def dumps(config):
    return tomli_w.dumps(config.to_dict())
