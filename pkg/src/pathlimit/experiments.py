"""Experiment runners behind the command line.

Each runner takes a parsed ExperimentConfig and returns an
ExperimentOutput: tables to write as CSV, a JSON report and a list of
threshold checks. ``run_experiment`` writes everything plus
``manifest.json`` into the output directory.
"""

from __future__ import annotations

import hashlib
import os
import platform
import time
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .action import EUCLIDEAN, REAL_TIME, PotentialSpec, SystemSpec, TimeGrid
from .classical import concentration_profile, least_action_path, mass_scaling_study
from .config import ConfigError, ExperimentConfig, rng_for, stream_seed
from .factorization import UnsupportedSystem, factorization_study
from .io import write_csv, write_json
from .propagator import (
    GridWaveFunction,
    analytic_reference_kernel,
    build_kernel,
    central_relative_error,
    compose,
    evolve,
)
from .sampler import bridge_sup_tail, deviation_probability, sample_paths


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    comparison: str  # "le" passes when value <= threshold, "gt" when value > threshold

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        if self.comparison == "le":
            return self.value <= self.threshold
        return self.value > self.threshold

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


@dataclass
class ExperimentOutput:
    tables: dict[str, tuple[tuple[str, ...], list]] = field(default_factory=dict)
    report: dict = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    streams: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def validate_kernels(config: ExperimentConfig) -> ExperimentOutput:
    """Kernel-vs-oracle, composition and unitarity checks for one particle."""
    system = config.system()
    system.require_single()
    free = system
    m, hbar = system.masses[0], system.hbar
    if system.external[0].kind != "zero":
        raise ConfigError("validate_kernels uses a free particle; drop system.external", "system.external")
    omega = config.get("validate.omega")
    harmonic = SystemSpec.single(m, PotentialSpec.harmonic(m * omega**2), hbar)
    sgrid = config.spatial_grid()
    t0, t1 = config.get("time.start"), config.get("time.end")
    slices = config.get("time.slices")
    if slices % 2:
        raise ConfigError("must be even so the span can be halved", "time.slices")
    span = t1 - t0
    out = ExperimentOutput()
    rows = []

    for kind, sys_ in (("free", free), ("harmonic", harmonic)):
        for mode in (REAL_TIME, EUCLIDEAN):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                full = build_kernel(sys_, config.time_grid(mode), sgrid)
                first = build_kernel(sys_, _half(config, mode, 0), sgrid)
                second = build_kernel(sys_, _half(config, mode, 1), sgrid)
                composed = compose(second, first)
            ref = analytic_reference_kernel(kind, m, omega, hbar, span, mode, sgrid)
            err = central_relative_error(full, ref)
            ck = central_relative_error(composed, full)
            rows.append((kind, mode, "oracle", err, 1e-2))
            rows.append((kind, mode, "chapman_kolmogorov", ck, 1e-3))
            out.checks.append(Check(f"{kind}_{mode}_oracle", err, 1e-2, "le"))
            out.checks.append(Check(f"{kind}_{mode}_chapman_kolmogorov", ck, 1e-3, "le"))
            if kind == "free" and mode == REAL_TIME:
                sigma = config.get("validate.sigma")
                psi0 = GridWaveFunction.gaussian(sgrid, 0.0, sigma)
                psi = evolve(psi0, full)
                norm_err = abs(psi.norm2 - psi0.norm2)
                expected = sigma**2 * (1 + (hbar * span / (2 * m * sigma**2)) ** 2)
                var_err = abs(psi.variance() - expected) / expected
                rows.append((kind, mode, "norm2_drift", norm_err, 1e-3))
                rows.append((kind, mode, "variance_relative_error", var_err, 1e-2))
                out.checks.append(Check("unitarity_norm2", norm_err, 1e-3, "le"))
                out.checks.append(Check("unitarity_variance", var_err, 1e-2, "le"))

    out.tables["kernel_errors"] = (("kind", "mode", "check", "error", "threshold"), rows)
    out.report = {"grid": [sgrid.x_min, sgrid.x_max, sgrid.points], "slices": slices, "span": span}
    return out


def _half(config: ExperimentConfig, mode: str, which: int):
    t0, t1 = config.get("time.start"), config.get("time.end")
    mid = 0.5 * (t0 + t1)
    half = config.get("time.slices") // 2
    return TimeGrid(t0, mid, half, mode) if which == 0 else TimeGrid(mid, t1, half, mode)


def factorization(config: ExperimentConfig) -> ExperimentOutput:
    system = config.system()
    try:
        reports = factorization_study(
            system, config.time_grid(), config.spatial_grid(),
            control_stiffness=config.get("factorization.control_stiffness"),
        )
    except UnsupportedSystem as exc:
        raise ConfigError(str(exc), "system") from exc
    out = ExperimentOutput()
    rows = []
    for r in reports:
        rows.append((r.label, r.discrepancy, r.threshold, r.expected_to_pass, r.passed, r.separability_defect))
        out.checks.append(Check(r.label, r.discrepancy, r.threshold, "le" if r.expected_to_pass else "gt"))
    out.tables["factorization"] = (
        ("case", "discrepancy", "threshold", "expected_to_pass", "passed", "separability_defect"), rows
    )
    out.report = {"cases": [asdict(r) for r in reports]}
    return out


def _initial_profile(config: ExperimentConfig) -> GridWaveFunction:
    return GridWaveFunction.gaussian(
        config.spatial_grid(), config.get("initial.center"), config.get("initial.sigma")
    )


def _concentration_output(config, report, prefix: str) -> ExperimentOutput:
    out = ExperimentOutput()
    out.tables[prefix] = (("hbar", "mass", "width", "mode"), report.rows())
    expected = config.get(f"{prefix}.expected_exponent")
    tol = config.get(f"{prefix}.exponent_tolerance")
    out.checks.append(Check(f"{prefix}_exponent_deviation", abs(report.fitted_exponent - expected), tol, "le"))
    out.report = report.to_dict()
    return out


def concentration(config: ExperimentConfig) -> ExperimentOutput:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = concentration_profile(
            config.system(), _initial_profile(config), config.time_grid(),
            config.get("concentration.hbar_values"),
        )
    return _concentration_output(config, report, "concentration")


def mass_scaling(config: ExperimentConfig) -> ExperimentOutput:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = mass_scaling_study(
            config.get("mass_scaling.base_mass"), config.get("mass_scaling.n_values"),
            config.get("system.hbar"), config.get("mass_scaling.well"), config.time_grid(),
            _initial_profile(config),
        )
    return _concentration_output(config, report, "mass_scaling")


def _z_score(diff: float, se_a: float, se_b: float) -> float:
    scale = np.hypot(se_a, se_b)
    if scale == 0:
        # both estimates are exact (all samples on one side of epsilon)
        return 0.0 if diff == 0 else np.copysign(np.inf, diff)
    return diff / scale


def deviation(config: ExperimentConfig) -> ExperimentOutput:
    """Sup-norm deviation probability around the least-action path, per hbar and epsilon.

    For a free particle each estimate is also compared with a direct
    Brownian-bridge simulation. Probabilities at consecutive (descending)
    hbar values must decrease by more than three combined standard errors.
    """
    system = config.system()
    tgrid = config.time_grid()
    x1, x2 = config.get("deviation.x1"), config.get("deviation.x2")
    eps = np.array(config.get("deviation.epsilons"))
    hbars = sorted(config.get("deviation.hbar_values") or (system.hbar,), reverse=True)
    reference = least_action_path(system, x1, x2, tgrid)[0]
    free = system.external[0].kind == "zero"
    oracle_n = config.get("deviation.oracle_samples") if free else 0
    out = ExperimentOutput()
    rows = []
    results = []
    for i, h in enumerate(hbars):
        sys_h = system.with_hbar(h)
        module = f"euclidean_sampler/{i}"
        sampler_cfg = config.sampler_config(module)
        out.streams[module] = sampler_cfg.seed
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            samples, diag = sample_paths(sys_h, x1, x2, tgrid, sampler_cfg)
        p, se = deviation_probability(samples, reference, eps)
        if oracle_n:
            oracle_module = f"bridge_oracle/{i}"
            out.streams[oracle_module] = stream_seed(config.seed, oracle_module)
            po, seo = bridge_sup_tail(
                tgrid.slices, tgrid.span, h, system.masses[0], eps, oracle_n, rng_for(config.seed, oracle_module)
            )
        else:
            po = seo = np.full(eps.shape, np.nan)
        for j, e in enumerate(eps):
            rows.append((h, e, p[j], se[j], po[j], seo[j], diag.acceptance_rate,
                         diag.integrated_autocorrelation, diag.effective_samples))
            if oracle_n:
                z = abs(_z_score(p[j] - po[j], se[j], seo[j]))
                out.checks.append(Check(f"oracle_z_hbar={h:g}_eps={e:g}", z, 3.0, "le"))
        results.append((p, se))
        if caught:
            out.report.setdefault("warnings", []).extend(f"hbar={h:g}: {w.message}" for w in caught)
    for (h_a, (p_a, se_a)), (h_b, (p_b, se_b)) in zip(zip(hbars, results), zip(hbars[1:], results[1:])):
        for j, e in enumerate(eps):
            z = _z_score(p_a[j] - p_b[j], se_a[j], se_b[j])
            out.checks.append(Check(f"decrease_z_hbar={h_a:g}->{h_b:g}_eps={e:g}", z, 3.0, "gt"))
    out.tables["deviation"] = (
        ("hbar", "epsilon", "probability", "stderr", "oracle_probability", "oracle_stderr",
         "acceptance_rate", "integrated_autocorrelation", "effective_samples"),
        rows,
    )
    out.report["reference_action"] = reference.action
    return out


RUNNERS: dict[str, Callable[[ExperimentConfig], ExperimentOutput]] = {
    "validate_kernels": validate_kernels,
    "factorization": factorization,
    "concentration": concentration,
    "mass_scaling": mass_scaling,
    "deviation": deviation,
}


def _versions() -> dict:
    import numba
    import scipy

    return {
        "pathlimit": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(config: ExperimentConfig, output_dir=None) -> tuple[int, Path]:
    """Run, write artifacts and the manifest; return (exit status, output directory).

    Status is 0 when every check passes and 1 otherwise. Config problems
    surface as ConfigError before anything is written.
    """
    started = datetime.now(timezone.utc)
    clock = time.perf_counter()
    output = RUNNERS[config.experiment](config)
    wall = time.perf_counter() - clock

    directory = Path(output_dir if output_dir is not None else config.output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    artifacts = {}
    for name, (header, rows) in output.tables.items():
        path = write_csv(directory / f"{name}.csv", header, rows)
        artifacts[path.name] = _sha256(path)
    checks = [c.to_dict() for c in output.checks]
    path = write_csv(
        directory / "checks.csv", ("check", "value", "threshold", "comparison", "passed"),
        [(c.name, c.value, c.threshold, c.comparison, c.passed) for c in output.checks],
    )
    artifacts[path.name] = _sha256(path)
    path = write_json(directory / "report.json", output.report)
    artifacts[path.name] = _sha256(path)
    failures = [c for c in checks if not c["passed"]]
    status = 0 if not failures else 1
    failure_path = directory / "failures.json"
    if failures:
        write_json(failure_path, {"experiment": config.experiment, "failed_checks": failures})
    elif failure_path.exists():
        failure_path.unlink()
    write_json(directory / "manifest.json", {
        "experiment": config.experiment,
        "config": config.canonical_text,
        "config_sha256": config.digest,
        "seed": config.seed,
        "streams": output.streams,
        "versions": _versions(),
        "threads": os.environ.get("PATHLIMIT_THREADS"),
        "started_utc": started.isoformat(),
        "wall_time_s": wall,
        "thresholds": {c["name"]: c["threshold"] for c in checks},
        "checks": checks,
        "artifacts": artifacts,
        "status": status,
    })
    return status, directory
