"""Experiment configuration: a flat, line-oriented ``key: value`` format.

Blank lines and lines starting with ``#`` are ignored. Every key is
checked against ``SCHEMA``; unknown keys, keys the chosen experiment does
not use, malformed values and missing required keys raise ConfigError
naming the offending key.

Potentials are written ``zero``, ``uniform_field(F)``, ``harmonic(k)``,
``harmonic(k, center)`` or ``polynomial(c0, c1, ...)``. Lists are
comma-separated; ``system.external`` separates one potential per particle
with ``;`` and ``system.pairwise`` takes ``i-j=potential`` items
separated by ``;``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .action import EUCLIDEAN, PotentialSpec, SystemSpec, TimeGrid
from .propagator import SpatialGrid
from .sampler import SamplerConfig

SCHEMA_VERSION = 1
EXPERIMENTS = ("validate_kernels", "factorization", "concentration", "mass_scaling", "deviation")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


def parse_potential(text: str) -> PotentialSpec:
    text = text.strip()
    match = re.fullmatch(r"([a-z_]+)\s*(?:\((.*)\))?", text)
    if not match:
        raise ValueError(f"cannot parse potential {text!r}")
    name, args = match.group(1), match.group(2)
    values = [float(a) for a in args.split(",")] if args and args.strip() else []
    if name == "zero" and not values:
        return PotentialSpec.zero()
    if name == "uniform_field" and len(values) == 1:
        return PotentialSpec.uniform_field(values[0])
    if name == "harmonic" and len(values) in (1, 2):
        return PotentialSpec.harmonic(*values)
    if name in ("polynomial", "custom_polynomial") and values:
        return PotentialSpec.polynomial(*values)
    raise ValueError(f"cannot parse potential {text!r}")


def format_potential(pot: PotentialSpec) -> str:
    if pot.kind == "zero":
        return "zero"
    if pot.kind == "uniform_field":
        return f"uniform_field({pot.strength!r})"
    if pot.kind == "harmonic":
        return f"harmonic({pot.stiffness!r}, {pot.center!r})"
    return "polynomial(" + ", ".join(repr(c) for c in pot.coefficients) + ")"


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _potentials(text: str) -> tuple[PotentialSpec, ...]:
    return tuple(parse_potential(p) for p in text.split(";") if p.strip())


def _pairs(text: str) -> dict:
    pairs = {}
    for item in text.split(";"):
        if not item.strip():
            continue
        key, _, pot = item.partition("=")
        i, _, j = key.strip().partition("-")
        pairs[(int(i), int(j))] = parse_potential(pot)
    return pairs


def _experiment(text: str) -> str:
    text = text.strip()
    if text not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {text!r}; expected one of {EXPERIMENTS}")
    return text


ALL = EXPERIMENTS
SYSTEM_USERS = ("validate_kernels", "factorization", "concentration", "deviation")
SPACE_USERS = ("validate_kernels", "factorization", "concentration", "mass_scaling")


@dataclass(frozen=True)
class Field:
    parse: Callable[[str], Any]
    doc: str
    experiments: tuple[str, ...] = ALL
    default: Any = None
    required: tuple[str, ...] = ()


SCHEMA: dict[str, Field] = {
    "schema": Field(int, "format version; must be 1", required=ALL),
    "experiment": Field(_experiment, "one of " + ", ".join(EXPERIMENTS), required=ALL),
    "seed": Field(int, "master seed; per-module streams are derived from it", default=0),
    "output_dir": Field(str, "directory for result files and manifest.json", required=ALL),
    "system.masses": Field(_floats, "particle masses", SYSTEM_USERS, required=SYSTEM_USERS),
    "system.hbar": Field(float, "effective hbar", ALL, default=1.0),
    "system.external": Field(_potentials, "one potential per particle, ';'-separated", SYSTEM_USERS),
    "system.pairwise": Field(_pairs, "'i-j=potential' items, ';'-separated", ("factorization",), default={}),
    "time.start": Field(float, "start of the time grid", ALL, default=0.0),
    "time.end": Field(float, "end of the time grid", ALL, required=ALL),
    "time.slices": Field(int, "number of time slices", ALL, required=ALL),
    "space.min": Field(float, "spatial grid lower edge", SPACE_USERS, required=SPACE_USERS),
    "space.max": Field(float, "spatial grid upper edge", SPACE_USERS, required=SPACE_USERS),
    "space.points": Field(int, "spatial grid points", SPACE_USERS, required=SPACE_USERS),
    "validate.omega": Field(float, "oscillator frequency of the harmonic checks", ("validate_kernels",), default=1.0),
    "validate.sigma": Field(float, "width of the unitarity test packet", ("validate_kernels",), default=1.0),
    "factorization.control_stiffness": Field(float, "stiffness of the shared-well control", ("factorization",), default=1.0),
    "initial.center": Field(float, "centre of the initial Gaussian profile", ("concentration", "mass_scaling"), default=0.0),
    "initial.sigma": Field(float, "width of the initial Gaussian profile", ("concentration", "mass_scaling"), default=1.0),
    "concentration.hbar_values": Field(_floats, "descending hbar values", ("concentration",), required=("concentration",)),
    "concentration.expected_exponent": Field(float, "exponent the fit is checked against", ("concentration",), default=0.5),
    "concentration.exponent_tolerance": Field(float, "allowed deviation of the fitted exponent", ("concentration",), default=0.1),
    "mass_scaling.base_mass": Field(float, "mass of one constituent particle", ("mass_scaling",), default=1.0),
    "mass_scaling.n_values": Field(_ints, "increasing particle counts", ("mass_scaling",), required=("mass_scaling",)),
    "mass_scaling.well": Field(parse_potential, "external potential felt by each particle", ("mass_scaling",), required=("mass_scaling",)),
    "mass_scaling.expected_exponent": Field(float, "exponent the fit is checked against", ("mass_scaling",), default=-0.5),
    "mass_scaling.exponent_tolerance": Field(float, "allowed deviation of the fitted exponent", ("mass_scaling",), default=0.1),
    "deviation.x1": Field(float, "initial COM endpoint", ("deviation",), default=0.0),
    "deviation.x2": Field(float, "final COM endpoint", ("deviation",), default=0.0),
    "deviation.epsilons": Field(_floats, "sup-norm thresholds", ("deviation",), required=("deviation",)),
    "deviation.hbar_values": Field(_floats, "hbar values to sample at (default: system.hbar)", ("deviation",)),
    "deviation.oracle_samples": Field(int, "bridge-simulation samples for free systems; 0 disables", ("deviation",), default=1_000_000),
    "sampler.sweeps": Field(int, "Metropolis sweeps", ("deviation",), required=("deviation",)),
    "sampler.burn_in": Field(int, "discarded initial sweeps", ("deviation",), default=0),
    "sampler.step_width": Field(float, "proposal width (default sqrt(hbar dt / m))", ("deviation",)),
    "sampler.thinning": Field(int, "keep every n-th sweep", ("deviation",), default=1),
}


def stream_seed(seed: int, module: str) -> int:
    """Per-module seed: first 8 bytes of sha256("<seed>:<module>"), little-endian."""
    digest = hashlib.sha256(f"{seed}:{module}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, module: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, module))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    output_dir: Path
    seed: int
    values: dict
    text: str

    def get(self, key: str):
        if key in self.values:
            return self.values[key]
        return SCHEMA[key].default

    @property
    def canonical_text(self) -> str:
        return self.text

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def system(self) -> SystemSpec:
        masses = self.get("system.masses")
        if not masses or not all(np.isfinite(m) and m > 0 for m in masses):
            raise ConfigError(f"masses must be strictly positive, got {masses}", "system.masses")
        external = self.get("system.external")
        if external is not None and len(external) != len(masses):
            raise ConfigError(f"{len(external)} potentials for {len(masses)} masses", "system.external")
        try:
            return SystemSpec(masses, external, self.get("system.pairwise"), self.get("system.hbar"))
        except ValueError as exc:
            raise ConfigError(str(exc), "system") from exc

    def time_grid(self, mode: str = EUCLIDEAN) -> TimeGrid:
        try:
            return TimeGrid(self.get("time.start"), self.get("time.end"), self.get("time.slices"), mode)
        except ValueError as exc:
            raise ConfigError(str(exc), "time") from exc

    def spatial_grid(self) -> SpatialGrid:
        try:
            return SpatialGrid(self.get("space.min"), self.get("space.max"), self.get("space.points"))
        except ValueError as exc:
            raise ConfigError(str(exc), "space") from exc

    def sampler_config(self, module: str = "euclidean_sampler") -> SamplerConfig:
        try:
            return SamplerConfig(
                sweeps=self.get("sampler.sweeps"),
                burn_in=self.get("sampler.burn_in"),
                step_width=self.get("sampler.step_width"),
                seed=stream_seed(self.seed, module),
                thinning=self.get("sampler.thinning"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc), "sampler") from exc


def parse_config(text: str) -> ExperimentConfig:
    raw: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition(":")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {number} is not 'key: value'", key)
        if key not in SCHEMA:
            raise ConfigError("unknown key", key)
        if key in raw:
            raise ConfigError("key given twice", key)
        raw[key] = value.strip()

    values = {}
    for key in ("schema", "experiment"):
        if key not in raw:
            raise ConfigError("missing required key", key)
    for key, value in raw.items():
        try:
            values[key] = SCHEMA[key].parse(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value {value!r} ({exc})", key) from exc
    if values["schema"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {values['schema']}", "schema")
    experiment = values["experiment"]
    for key in values:
        if experiment not in SCHEMA[key].experiments:
            raise ConfigError(f"not used by experiment {experiment!r}", key)
    for key, spec in SCHEMA.items():
        if experiment in spec.required and key not in values:
            raise ConfigError("missing required key", key)

    canonical = "\n".join(f"{k}: {raw[k]}" for k in sorted(raw)) + "\n"
    config = ExperimentConfig(experiment, Path(values["output_dir"]), values.get("seed", 0), values, canonical)
    _validate_semantics(config)
    return config


def _validate_semantics(config: ExperimentConfig) -> None:
    # construct the typed objects so that bad physics fails at parse time
    exp = config.experiment
    if not config.get("system.hbar") > 0:
        raise ConfigError("must be positive", "system.hbar")
    config.time_grid()
    if exp in SPACE_USERS:
        config.spatial_grid()
    if exp in SYSTEM_USERS:
        system = config.system()
        if exp == "factorization" and system.n != 2:
            raise ConfigError("factorization needs exactly two masses", "system.masses")
        if exp in ("validate_kernels", "concentration", "deviation") and system.n != 1:
            raise ConfigError(f"{exp} needs a single (COM) mass", "system.masses")
    if exp == "deviation":
        config.sampler_config()
        for key in ("deviation.hbar_values", "deviation.epsilons"):
            vals = config.get(key)
            if vals is not None and (not vals or any(v < 0 for v in vals)):
                raise ConfigError("values must be non-negative", key)
    if exp == "concentration":
        hb = config.get("concentration.hbar_values")
        if not hb or any(h <= 0 for h in hb) or any(b >= a for a, b in zip(hb, hb[1:])):
            raise ConfigError("need positive, strictly descending values", "concentration.hbar_values")
    if exp == "mass_scaling":
        ns = config.get("mass_scaling.n_values")
        if not ns or any(n < 1 for n in ns) or any(b < a for a, b in zip(ns, ns[1:])):
            raise ConfigError("need positive, non-decreasing counts", "mass_scaling.n_values")
        if not config.get("mass_scaling.base_mass") > 0:
            raise ConfigError("must be positive", "mass_scaling.base_mass")


def load_config(path) -> ExperimentConfig:
    """Read a config file, or the config embedded in a run's manifest.json."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        import json

        try:
            text = json.loads(text)["config"]
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{path} is not a manifest with a 'config' entry") from exc
    return parse_config(text)


def schema_text() -> str:
    lines = [f"schema: {SCHEMA_VERSION}", ""]
    for key, spec in SCHEMA.items():
        req = ", ".join(spec.required) if spec.required else "-"
        default = "" if spec.default in (None, {}) else f" [default {spec.default!r}]"
        used = "all" if spec.experiments == ALL else ", ".join(spec.experiments)
        lines.append(f"{key}\n    {spec.doc}{default}\n    used by: {used}; required by: {req}")
    return "\n".join(lines) + "\n"
