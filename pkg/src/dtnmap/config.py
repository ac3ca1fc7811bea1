"""Run configurations, presets and the pipeline that turns them into operators."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .dtn import DtnOperator, build_dtn
from .fem import (
    CoefficientField,
    DiscreteForms,
    IllPosedError,
    assemble,
    check_wellposedness,
    constant_potential,
    identity_coefficients,
    random_potential,
    variable_coefficients,
)
from .geometry import Mesh, SmoothDomain, make_domain, triangulate

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass
class RunConfig:
    domain: str = "disk"
    domain_params: dict = field(default_factory=dict)
    h: float = 0.04
    boundary_h: float | None = None
    coeff: str = "const"
    potential: str = "zero"
    theta_deg: float = 60.0
    t_max: float = 10.0
    seed: int = 0
    checks: list = field(default_factory=lambda: list(DEFAULT_CHECKS))
    output_dir: str = "dtn-output"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown field")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def validate(self) -> None:
        if self.domain not in ("disk", "star"):
            raise ConfigError(f"domain: expected 'disk' or 'star', got {self.domain!r}")
        if not isinstance(self.domain_params, dict):
            raise ConfigError("domain_params: expected an object")
        for name in ("h", "t_max", "theta_deg"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
                raise ConfigError(f"{name}: expected a positive number, got {value!r}")
        if self.boundary_h is not None and (
            isinstance(self.boundary_h, bool) or not isinstance(self.boundary_h, (int, float)) or self.boundary_h <= 0
        ):
            raise ConfigError(f"boundary_h: expected a positive number or null, got {self.boundary_h!r}")
        if not self.theta_deg < 90:
            raise ConfigError(f"theta_deg: must be below 90, got {self.theta_deg}")
        if self.coeff not in ("const", "variable"):
            raise ConfigError(f"coeff: expected 'const' or 'variable', got {self.coeff!r}")
        try:
            parse_potential(self.potential)
        except ValueError as exc:
            raise ConfigError(f"potential: {exc}") from exc
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed: expected an integer, got {self.seed!r}")
        if not isinstance(self.checks, list) or any(c not in ALL_CHECKS for c in self.checks):
            bad = [c for c in self.checks if c not in ALL_CHECKS] if isinstance(self.checks, list) else self.checks
            raise ConfigError(f"checks: unknown check(s) {bad!r}")
        try:
            make_domain(self.domain, **self.domain_params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"domain_params: {exc}") from exc


DEFAULT_CHECKS = [
    "wellposedness",
    "dtn_invariants",
    "stochasticity",
    "poisson_real",
    "large_time",
    "continuity",
    "perturbation",
]
ALL_CHECKS = DEFAULT_CHECKS + [
    "disk_spectrum",
    "poisson_sector",
    "commutator",
    "schwartz",
    "schedule",
    "imaginary_powers",
    "max_regularity",
]

PRESETS = {
    "disk-laplace-V0": RunConfig(
        domain="disk", h=0.04, boundary_h=0.005, potential="zero",
        checks=DEFAULT_CHECKS + ["disk_spectrum", "schedule"],
    ),
    "disk-laplace-V1": RunConfig(domain="disk", h=0.04, potential="1"),
    "star-variable-c": RunConfig(
        domain="star", domain_params={"base_radius": 1.0, "amplitude": 0.2, "lobes": 3}, h=0.05,
        coeff="variable", potential="zero",
    ),
    "disk-negative-V": RunConfig(domain="disk", h=0.04, potential="negative"),
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r} (choose from {sorted(PRESETS)})")
    return RunConfig.from_dict(PRESETS[name].to_dict())


def parse_potential(spec: str):
    """Potential identifiers: ``zero``, ``1``, ``const:<v>``, ``random[:seed]``, ``negative``."""
    if not isinstance(spec, str):
        raise ValueError(f"expected a string, got {spec!r}")
    if spec in ("zero", "0", "none"):
        return None
    if spec in ("one", "1"):
        return constant_potential(1.0)
    if spec == "negative":
        # between the first two Dirichlet eigenvalues of the unit disk (5.78 and 14.68)
        return constant_potential(-10.0)
    if spec.startswith("const:"):
        return constant_potential(float(spec.split(":", 1)[1]))
    if spec == "random" or spec.startswith("random:"):
        seed = int(spec.split(":", 1)[1]) if ":" in spec else 0
        return random_potential(seed)
    raise ValueError(f"unknown potential {spec!r}")


def coefficient_field(coeff: str, potential: str) -> CoefficientField:
    V = parse_potential(potential)
    if coeff == "const":
        return identity_coefficients(V)
    if coeff == "variable":
        return variable_coefficients(V)
    raise ValueError(f"unknown coefficient preset {coeff!r}")


@dataclass(frozen=True, eq=False)
class Pipeline:
    config: RunConfig
    domain: SmoothDomain
    mesh: Mesh
    coeff: CoefficientField
    forms: DiscreteForms
    op: DtnOperator

    def with_potential(self, potential: str) -> DiscreteForms:
        return assemble(self.mesh, coefficient_field(self.config.coeff, potential))


def build_pipeline(config: RunConfig) -> Pipeline:
    domain = make_domain(config.domain, **config.domain_params)
    mesh = triangulate(domain, config.h, config.boundary_h, seed=config.seed)
    coeff = coefficient_field(config.coeff, config.potential)
    forms = assemble(mesh, coeff)
    report = check_wellposedness(forms)
    if report.ill_posed:
        raise IllPosedError(f"Dirichlet problem ill-posed: sigma_min={report.sigma_min:.3g}")
    return Pipeline(config, domain, mesh, coeff, forms, build_dtn(forms))
