"""YAML run configuration

One file with the sections phase, grid, time, noise, forcing, initial,
experiment and output. Every section is a pydantic model with defaults, and
unknown keys are rejected. Dotted overrides (time.dt=5e-5) are applied to the
raw mapping before validation.
"""
import io
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from ruamel.yaml import YAML
from ruamel.yaml.comments import CommentedMap

from .experiment import ExperimentPlan, ExperimentPlanException
from .limit import LimitConfig
from .noise import (CoefficientFamily, FamilyConstraintException, ModeIndex, NoiseSpec,
                    UnresolvedModeException, ZeroModeException, basis_e, make_family)
from .phase import PhaseFunctions, PhaseParameterException
from .solver import SolverConfig, SolverConfigException
from .spectral import ScalarField, SnapshotFormatException, TorusGrid, read_snapshot

log = logging.getLogger(__name__)


class ConfigurationException(Exception):
    """Configuration file is missing, malformed or fails validation

    `errors` holds one "section.field: message" line per problem.
    """

    def __init__(self, errors: List[str]):
        self.errors = errors
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class GridSection(_Section):
    n: int = Field(64, description="samples per dimension (even, at least 4)")

    @field_validator('n')
    @classmethod
    def _fits_torus(cls, v: int) -> int:
        TorusGrid(n=v)
        return v


class TimeSection(_Section):
    dt: float = Field(1e-4, gt=0, description="time step")
    T: float = Field(0.05, gt=0, description="horizon")
    stride: int = Field(10, ge=1, description="steps between stored samples")
    imex_a: Optional[float] = Field(
        None, gt=0, description="implicit shift (unset means Lip(Psi) + Lip(g))")
    scheme: Literal['ito_imex', 'stratonovich_midpoint'] = Field(
        'ito_imex', description="stochastic stepper")


class NoiseSection(_Section):
    enabled: bool = Field(True, description="false runs the deterministic dynamics")
    N: int = Field(8, ge=1, description="truncation radius of the noise modes")
    profile: Literal['flat', 'power'] = Field('flat', description="radial coefficient profile")
    power: float = Field(1.0, gt=0, description="decay exponent of the power profile")
    seed: int = Field(0, ge=0, description="64-bit seed of the increment streams")


class FourierTerm(_Section):
    k1: int
    k2: int
    amplitude: float = 1.0


def _fourier_sum(grid: TorusGrid, terms: Sequence[FourierTerm]) -> np.ndarray:
    x = np.stack(grid.nodes, axis=-1)
    values = np.zeros(grid.shape)
    for term in terms:
        values += term.amplitude * basis_e(ModeIndex(term.k1, term.k2), x)
    return values


def _snapshot_on(grid: TorusGrid, path: Optional[str], what: str) -> ScalarField:
    if path is None:
        raise ConfigurationException([f"{what}.path: required for snapshot data"])
    field = read_snapshot(path)
    if field.grid != grid:
        raise ConfigurationException(
            [f"{what}.path: snapshot has n={field.grid.n}, grid has n={grid.n}"])
    return field


class ForcingSection(_Section):
    kind: Literal['zero', 'fourier', 'snapshot'] = Field('zero', description="forcing type")
    mean: float = Field(0.0, description="constant added to the fourier profile")
    terms: List[FourierTerm] = Field(default_factory=list, description="fourier terms amplitude * e_k")
    path: Optional[str] = Field(None, description="STFN snapshot for kind=snapshot")

    def realize(self, grid: TorusGrid) -> Optional[ScalarField]:
        if self.kind == 'zero':
            return None
        if self.kind == 'snapshot':
            return _snapshot_on(grid, self.path, 'forcing')
        return ScalarField(grid, self.mean + _fourier_sum(grid, self.terms))


class InitialSection(_Section):
    kind: Literal['zero', 'constant', 'blob', 'fourier', 'snapshot'] = Field(
        'blob', description="initial enthalpy type")
    value: float = Field(-0.5, description="constant level, background of blob and fourier")
    amplitude: float = Field(2.5, description="peak added by the blob")
    width: float = Field(0.15, gt=0, description="blob standard deviation")
    center: Tuple[float, float] = Field((0.0, 0.0), description="blob center")
    terms: List[FourierTerm] = Field(default_factory=list, description="fourier terms amplitude * e_k")
    path: Optional[str] = Field(None, description="STFN snapshot for kind=snapshot")

    def realize(self, grid: TorusGrid) -> ScalarField:
        if self.kind == 'zero':
            return ScalarField.zeros(grid)
        if self.kind == 'constant':
            return ScalarField.constant(grid, self.value)
        if self.kind == 'snapshot':
            return _snapshot_on(grid, self.path, 'initial')
        if self.kind == 'fourier':
            return ScalarField(grid, self.value + _fourier_sum(grid, self.terms))

        def blob(x1, x2):
            # periodic distance to the center
            d1 = (x1 - self.center[0] + 0.5) % 1.0 - 0.5
            d2 = (x2 - self.center[1] + 0.5) % 1.0 - 0.5
            return self.value + self.amplitude * np.exp(-(d1 ** 2 + d2 ** 2) / (2 * self.width ** 2))

        return ScalarField.from_function(grid, blob)


class ExperimentSection(_Section):
    Ns: List[int] = Field([4, 8, 16, 32], description="strictly increasing truncation radii")
    replicas: int = Field(64, ge=2, description="ensemble size per radius")
    base_seed: int = Field(0, ge=0, description="seed from which per-radius streams derive")
    holder_beta: float = Field(5.0, gt=4, description="negative Sobolev order of increments")
    holder_r: float = Field(4.0, gt=2, description="moment of the increment probe")
    holder_pairs: int = Field(64, ge=1, description="start instants per lag")
    sobolev_alpha: float = Field(0.375, description="time regularity of the seminorm, in (1/r, 1/2)")
    probe: Tuple[int, int] = Field((1, 0), description="test mode of the martingale probe")
    abort_fraction: float = Field(0.01, ge=0, le=1, description="tolerated share of aborted paths")
    threads: int = Field(1, ge=1, description="worker threads (results do not depend on it)")


class OutputSection(_Section):
    directory: Optional[str] = Field(
        None, description="output directory (else $STEFANPY_OUT, else ./runs)")
    snapshots: bool = Field(True, description="write trajectory snapshots")


class RunConfig(_Section):
    phase: PhaseFunctions = Field(default_factory=PhaseFunctions)
    grid: GridSection = Field(default_factory=GridSection)
    time: TimeSection = Field(default_factory=TimeSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    forcing: ForcingSection = Field(default_factory=ForcingSection)
    initial: InitialSection = Field(default_factory=InitialSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    output: OutputSection = Field(default_factory=OutputSection)

    def torus(self) -> TorusGrid:
        return TorusGrid(n=self.grid.n)

    def family(self, N: Optional[int] = None) -> CoefficientFamily:
        N = self.noise.N if N is None else N
        if self.noise.profile == 'power':
            return make_family(N, 'power', p=self.noise.power)
        return make_family(N)

    def initial_field(self) -> ScalarField:
        return _resolving(lambda: self.initial.realize(self.torus()))

    def solver_config(self) -> SolverConfig:
        def build():
            grid = self.torus()
            noise = NoiseSpec(self.family(), grid, self.noise.seed) if self.noise.enabled else None
            return SolverConfig(grid, self.time.dt, self.time.T, noise=noise,
                                scheme=self.time.scheme, phase=self.phase,
                                forcing=self.forcing.realize(grid), imex_a=self.time.imex_a,
                                stride=self.time.stride)
        return _resolving(build)

    def limit_config(self) -> LimitConfig:
        def build():
            grid = self.torus()
            return LimitConfig(grid, self.time.dt, self.time.T, phase=self.phase,
                               forcing=self.forcing.realize(grid), imex_a=self.time.imex_a,
                               stride=self.time.stride)
        return _resolving(build)

    def plan(self) -> ExperimentPlan:
        e = self.experiment

        def build():
            grid = self.torus()
            plan = ExperimentPlan(
                e.Ns, e.replicas, e.base_seed, self.initial.realize(grid), self.time.dt, self.time.T,
                phase=self.phase, forcing=self.forcing.realize(grid), imex_a=self.time.imex_a,
                scheme=self.time.scheme, stride=self.time.stride, profile=self.noise.profile,
                power=self.noise.power,
                holder_beta=e.holder_beta, holder_r=e.holder_r, holder_pairs=e.holder_pairs,
                sobolev_alpha=e.sobolev_alpha, probe=ModeIndex(*e.probe),
                abort_fraction=e.abort_fraction)
            # every radius must fit the grid and the stability bounds
            for N in e.Ns:
                plan.solver_config(N)
            return plan
        return _resolving(build)

    def resolved(self) -> Dict[str, Any]:
        return self.model_dump(mode='json')


_RESOLVE_ERRORS = (SolverConfigException, FamilyConstraintException, UnresolvedModeException,
                   ZeroModeException, SnapshotFormatException, ExperimentPlanException,
                   FileNotFoundError)


def _resolving(build):
    try:
        return build()
    except _RESOLVE_ERRORS as e:
        raise ConfigurationException([str(e)]) from e
    except ValidationError as e:
        raise ConfigurationException(_field_errors(e)) from e


def _field_errors(error: ValidationError) -> List[str]:
    return [f"{'.'.join(str(p) for p in item['loc']) or '<root>'}: {item['msg']}"
            for item in error.errors()]


def parse_override_value(raw: str) -> Any:
    text = raw.strip()
    lower = text.lower()
    if lower in {'true', 'false'}:
        return lower == 'true'
    if lower in {'none', 'null'}:
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if text.startswith('[') and text.endswith(']'):
        return [parse_override_value(item) for item in text[1:-1].split(',') if item.strip()]
    if len(text) >= 2 and text[0] == text[-1] and text[0] in '"\'':
        return text[1:-1]
    return text


def apply_overrides(payload: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Set dotted-path entries such as time.dt=5e-5 in a raw configuration mapping"""
    for item in overrides or ():
        key, sep, value = item.partition('=')
        parts = [p for p in key.strip().split('.') if p]
        if not sep or not parts:
            raise ConfigurationException([f"override {item!r}: expected section.field=value"])

        target = payload
        for segment in parts[:-1]:
            if target.get(segment) is None:
                target[segment] = {}
            target = target[segment]
            if not isinstance(target, dict):
                raise ConfigurationException([f"override {item!r}: {segment} is not a section"])
        target[parts[-1]] = parse_override_value(value)
    return payload


def validate_mapping(data: Optional[Dict[str, Any]]) -> RunConfig:
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigurationException(_field_errors(e)) from e
    except PhaseParameterException as e:
        raise ConfigurationException([f"phase: {e}"]) from e


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Sequence[str] = ()) -> RunConfig:
    """Read and validate a YAML configuration; no path means all defaults"""
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationException([f"config file {path} does not exist"])
        try:
            with path.open('r', encoding='utf-8') as f:
                data = YAML(typ='safe').load(f) or {}
        except Exception as e:
            raise ConfigurationException([f"{path}: {e}"]) from e
        if not isinstance(data, dict):
            raise ConfigurationException([f"{path}: top level must be a mapping of sections"])

        # snapshot paths are relative to the configuration file
        for section in ('forcing', 'initial'):
            entry = data.get(section)
            if isinstance(entry, dict) and entry.get('path') and not Path(entry['path']).is_absolute():
                entry['path'] = str(path.parent / entry['path'])

    data = apply_overrides(data, overrides)
    cfg = validate_mapping(data)
    log.debug("resolved configuration: %s", cfg.resolved())
    return cfg


def _commented(model: BaseModel) -> CommentedMap:
    out = CommentedMap()
    for name, info in type(model).model_fields.items():
        value = getattr(model, name)
        if isinstance(value, BaseModel):
            out[name] = _commented(value)
            continue
        dumped = model.model_dump(mode='json')[name]
        out[name] = list(dumped) if isinstance(dumped, tuple) else dumped
        if info.description:
            out.yaml_add_eol_comment(info.description, name)
    return out


def example_config() -> str:
    """Default configuration as YAML, each field annotated with its description"""
    yaml = YAML()
    yaml.default_flow_style = None
    buf = io.StringIO()
    yaml.dump(_commented(RunConfig()), buf)
    return buf.getvalue()
