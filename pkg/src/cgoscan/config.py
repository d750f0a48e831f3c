"""Run configuration: strict YAML parsing, defaults, canonical form.

One structured file drives every pipeline stage.  Unknown keys are
rejected (naming the key), every field has a default, and a parsed
configuration re-serializes to a canonical YAML form whose SHA-256 prefix
stamps all artifacts of a run.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ParseError, ValidationError
from .medium import (
    FACE_NAMES,
    Domain,
    Inclusion,
    PartialBoundary,
    RefractiveMedium,
    boundary_mesh,
    make_medium,
    validate_placement,
)


@dataclass(frozen=True)
class DomainConfig:
    half_side: float = 0.5
    grid_n: int = 32
    c0: float = 0.15


@dataclass(frozen=True)
class BoundaryConfig:
    faces: tuple = tuple(FACE_NAMES)


@dataclass(frozen=True)
class BackgroundConfig:
    index: float = 1.0


@dataclass(frozen=True)
class InclusionConfig:
    center: tuple = (0.175, 0.0, -0.125)
    alpha: float = 0.05
    shape: str = "ball"
    index: float = 2.0


@dataclass(frozen=True)
class PhysicsConfig:
    omega: float = 1.0
    l_values: tuple = (8.0,)
    trace_path: str = "B"


@dataclass(frozen=True)
class DataConfig:
    noise_sigma: float = 0.0
    seed: int = 1234


@dataclass(frozen=True)
class ReconConfig:
    kmax: float = 4.0
    kgrid_n: int = 9
    peak_threshold: float = 0.5
    tikhonov_lambda: float = 1e-4


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/default"
    formats: tuple = ("json", "csv", "vol", "pgm")


@dataclass(frozen=True)
class RunConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    inclusions: tuple = (InclusionConfig(),)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # -- construction helpers -------------------------------------------------
    def build_domain(self) -> Domain:
        return Domain(half_side=self.domain.half_side, grid_n=self.domain.grid_n)

    def build_medium(self) -> RefractiveMedium:
        incs = [
            Inclusion(
                center=tuple(ic.center), alpha=ic.alpha, shape=ic.shape, index=ic.index
            )
            for ic in self.inclusions
        ]
        return make_medium(
            self.build_domain(), self.background.index, incs, c0=self.domain.c0
        )

    def build_patch(self) -> PartialBoundary:
        return boundary_mesh(self.build_domain(), self.boundary.faces)

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["inclusions"] = [asdict(ic) for ic in self.inclusions]
        return _tuples_to_lists(d)

    def canonical_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_yaml().encode()).hexdigest()[:16]

    def replace(self, **section_updates) -> "RunConfig":
        from dataclasses import replace as dc_replace

        return dc_replace(self, **section_updates)


def _tuples_to_lists(obj):
    if isinstance(obj, dict):
        return {k: _tuples_to_lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tuples_to_lists(v) for v in obj]
    return obj


_SECTION_TYPES = {
    "domain": DomainConfig,
    "boundary": BoundaryConfig,
    "background": BackgroundConfig,
    "physics": PhysicsConfig,
    "data": DataConfig,
    "recon": ReconConfig,
    "output": OutputConfig,
}

_LIST_FIELDS = {"faces", "l_values", "formats", "center"}


def _build_section(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ParseError(f"section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ParseError(
            f"unknown key {sorted(unknown)[0]!r} in section {where!r} "
            f"(known keys: {sorted(known)})"
        )
    kwargs = {}
    for f in fields(cls):
        if f.name not in raw:
            continue
        v = raw[f.name]
        if f.name in _LIST_FIELDS:
            if not isinstance(v, (list, tuple)):
                raise ParseError(f"{where}.{f.name} must be a list")
            kwargs[f.name] = tuple(v)
        else:
            kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid value in section {where!r}: {exc}") from exc


def config_from_dict(raw: dict) -> RunConfig:
    """Validated RunConfig from a plain dict (defaults fill gaps)."""
    if not isinstance(raw, dict):
        raise ParseError("top level of the config must be a mapping")
    known = set(_SECTION_TYPES) | {"inclusions"}
    unknown = set(raw) - known
    if unknown:
        raise ParseError(
            f"unknown key {sorted(unknown)[0]!r} at top level (known: {sorted(known)})"
        )
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        if name in raw:
            sections[name] = _build_section(cls, raw[name], name)
    if "inclusions" in raw:
        incs_raw = raw["inclusions"]
        if not isinstance(incs_raw, list):
            raise ParseError("'inclusions' must be a list")
        sections["inclusions"] = tuple(
            _build_section(InclusionConfig, ic, f"inclusions[{i}]")
            for i, ic in enumerate(incs_raw)
        )
    cfg = RunConfig(**sections)
    _validate_semantics(cfg)
    return cfg


def _validate_semantics(cfg: RunConfig) -> None:
    d = cfg.domain
    if d.grid_n < 8:
        raise ValidationError(f"domain.grid_n must be >= 8, got {d.grid_n}")
    if d.half_side <= 0 or d.c0 <= 0:
        raise ValidationError("domain.half_side and domain.c0 must be positive")
    bad = [f for f in cfg.boundary.faces if f not in FACE_NAMES]
    if bad:
        raise ValidationError(f"unknown boundary face(s) {bad}; valid: {list(FACE_NAMES)}")
    if not cfg.boundary.faces:
        raise ValidationError("boundary.faces must be nonempty")
    if cfg.physics.omega <= 0:
        raise ValidationError("physics.omega must be positive")
    if not cfg.physics.l_values or any(l <= 0 for l in cfg.physics.l_values):
        raise ValidationError("physics.l_values must be positive")
    if cfg.physics.trace_path not in ("A", "B"):
        raise ValidationError("physics.trace_path must be 'A' or 'B'")
    if cfg.data.noise_sigma < 0:
        raise ValidationError("data.noise_sigma must be >= 0")
    if cfg.recon.kgrid_n % 2 != 1 or cfg.recon.kgrid_n < 3:
        raise ValidationError("recon.kgrid_n must be odd and >= 3")
    if not (0 < cfg.recon.peak_threshold <= 1):
        raise ValidationError("recon.peak_threshold must be in (0, 1]")
    if cfg.recon.tikhonov_lambda <= 0:
        raise ValidationError("recon.tikhonov_lambda must be positive")
    for i, ic in enumerate(cfg.inclusions):
        if ic.shape not in ("ball", "cube"):
            raise ValidationError(f"inclusions[{i}].shape must be 'ball' or 'cube'")
        if ic.alpha <= 0:
            raise ValidationError(f"inclusions[{i}].alpha must be positive")
        if len(ic.center) != 3:
            raise ValidationError(f"inclusions[{i}].center must have 3 components")
    # placement constraints surface as a validation error, echoing the report
    report = validate_placement(cfg.build_medium())
    if not report.ok:
        raise ValidationError(f"inclusion placement violates constraints: {report}")


def parse_config(path) -> RunConfig:
    """Parse and validate a YAML run configuration.

    Raises ParseError (with line/column for syntax problems, or naming the
    offending key) and ValidationError for semantic violations.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        loc = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ParseError(f"YAML syntax error in {path}{loc}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"YAML error in {path}: {exc}") from exc
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def write_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(cfg.canonical_yaml())
    return path
