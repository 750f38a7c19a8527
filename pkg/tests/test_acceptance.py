"""Acceptance criteria, one test (and one PASS/FAIL summary line) per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary section
at the end of the run lists every criterion with its measured value.
"""

import csv
import json
import time
import warnings
from functools import cache
from pathlib import Path

import numpy as np
import pytest

import oracles
from pathlimit.action import EUCLIDEAN, REAL_TIME, PotentialSpec, SystemPaths, SystemSpec, TimeGrid
from pathlimit.classical import delta_action, least_action_path
from pathlimit.config import load_config
from pathlimit.experiments import run_experiment
from pathlimit.propagator import BoundaryWarning, GridWaveFunction, SpatialGrid, build_kernel, evolve
from pathlimit.sampler import (
    SamplerConfig,
    brute_force_lattice_measure,
    metropolis_transition_matrix,
    sample_histogram,
    sample_paths,
    total_variation,
)


pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@cache
def _run(name: str, out: str):
    config = load_config(CONFIGS / f"{name}.cfg")
    start = time.perf_counter()
    status, directory = run_experiment(config, out)
    elapsed = time.perf_counter() - start
    checks = {c["name"]: c for c in json.loads((directory / "manifest.json").read_text())["checks"]}
    return status, Path(directory), checks, elapsed


@pytest.fixture(scope="module")
def outdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def run(name, outdir):
    return _run(name, str(outdir / name))


def _central(grid: SpatialGrid):
    mask = grid.central(0.5)
    return np.ix_(mask, mask)


def _rel_error(entries, ref, grid):
    sel = _central(grid)
    return float(np.max(np.abs(entries[sel] - ref[sel]) / np.abs(ref[sel])))


def test_criterion_1_kernel_validation(acceptance):
    grid = SpatialGrid(-20.0, 20.0, 801)
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        k_free = build_kernel(SystemSpec.single(1.0), TimeGrid(0, 1, 200, REAL_TIME), grid)
        k_ho = build_kernel(SystemSpec.single(1.0, PotentialSpec.harmonic(1.0)), TimeGrid(0, 1, 200, EUCLIDEAN), grid)
    elapsed = time.perf_counter() - start
    x2, x1 = np.meshgrid(grid.x, grid.x, indexing="ij")
    err_free = _rel_error(k_free.entries, oracles.free_kernel(x2, x1, 1.0, 1.0, 1.0, False), grid)
    err_ho = _rel_error(k_ho.entries, oracles.mehler_euclidean(x2, x1, 1.0, 1.0, 1.0, 1.0), grid)
    ok = err_free <= 1e-2 and err_ho <= 1e-2 and elapsed <= 60
    acceptance("1 kernel validation", ok,
               f"free real-time {err_free:.2e}, euclidean Mehler {err_ho:.2e} (<=1e-2), {elapsed:.1f}s (<=60s)")
    assert ok


def test_criterion_2_chapman_kolmogorov(acceptance, outdir):
    _, _, checks, _ = run("validate_kernels", outdir)
    ck = {name: c["value"] for name, c in checks.items() if name.endswith("chapman_kolmogorov")}
    assert len(ck) == 4
    worst = max(ck.values())
    ok = worst <= 1e-3
    acceptance("2 Chapman-Kolmogorov", ok,
               ", ".join(f"{k.replace('_chapman_kolmogorov', '')} {v:.1e}" for k, v in ck.items()) + " (<=1e-3)")
    assert ok


def test_criterion_3_unitarity(acceptance):
    grid = SpatialGrid(-20.0, 20.0, 801)
    sigma = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        kernel = build_kernel(SystemSpec.single(1.0), TimeGrid(0, 1, 200, REAL_TIME), grid)

    psi0 = GridWaveFunction.gaussian(grid, 0.0, sigma)
    psi = evolve(psi0, kernel)
    norm_err = abs(psi.norm2 - 1.0)
    expected = oracles.packet_variance(sigma, 1.0, 1.0, 1.0)
    var_err = abs(psi.variance() - expected) / expected
    ok = norm_err <= 1e-3 and var_err <= 1e-2
    acceptance("3 unitarity", ok, f"norm2 drift {norm_err:.1e} (<=1e-3), variance error {var_err:.1e} (<=1e-2)")
    assert ok


def test_criterion_4_com_factorization(acceptance, outdir):
    status, _, checks, elapsed = run("factorization", outdir)
    sep = checks["separable"]["value"]
    control = checks["shared_harmonic_well_control"]["value"]
    ok = status == 0 and sep <= 1e-2 and control > 1e-2 and elapsed <= 300
    acceptance("4 COM factorization", ok,
               f"separable {sep:.1e} (<=1e-2), shared-well control {control:.2f} (>1e-2), "
               f"P=64, {elapsed:.0f}s (<=300s)")
    assert ok


def test_criterion_5_localization(acceptance, outdir):
    s1, d1, _, _ = run("concentration", outdir)
    s2, d2, _, _ = run("mass_scaling", outdir)
    p = json.loads((d1 / "report.json").read_text())["fitted_exponent"]
    q = json.loads((d2 / "report.json").read_text())["fitted_exponent"]
    ok = s1 == 0 and s2 == 0 and abs(p - 0.5) <= 0.1 and abs(q + 0.5) <= 0.1
    acceptance("5 localization", ok, f"width ~ hbar^{p:.4f} (0.5+-0.1), width ~ M^{q:.4f} (-0.5+-0.1)")
    assert ok


def test_criterion_6_least_action(acceptance):
    free = SystemSpec.single(1.0)
    tg = TimeGrid(0.0, 2.0, 200, EUCLIDEAN)
    (line,) = least_action_path(free, -0.5, 1.5, tg)
    free_err = abs(line.action - 1.0 * 2.0**2 / (2 * 2.0))

    span, a = 1.0, 0.1
    tg = TimeGrid(0.0, span, 2000, EUCLIDEAN)
    (base,) = least_action_path(free, 0.0, 0.0, tg)
    bump = SystemPaths(tg, (a * np.sin(np.pi * tg.times / span))[None, :])
    ds = delta_action(free, bump, base)
    closed = 1.0 * a**2 * np.pi**2 / (4 * span)
    sin_err = abs(ds - closed) / closed

    well = SystemSpec.single(1.0, PotentialSpec.polynomial(1, 0, -2, 0, 1))
    (inst,) = least_action_path(well, -1.0, 1.0, TimeGrid(-5.0, 5.0, 2000, EUCLIDEAN))
    inst_err = abs(inst.action - oracles.INSTANTON_ACTION_T10) / oracles.INSTANTON_ACTION_T10
    ok = free_err <= 1e-6 and sin_err <= 1e-3 and inst_err <= 0.05
    acceptance("6 least-action solver", ok,
               f"free {free_err:.1e} (<=1e-6), sinusoidal dS {sin_err:.1e} (<=1e-3), "
               f"instanton {inst.action:.6f} vs {oracles.INSTANTON_ACTION_T10:.6f} rel {inst_err:.1e} (<=5%)")
    assert ok


LATTICE_POTENTIALS = {
    "free": PotentialSpec.zero(),
    "harmonic": PotentialSpec.harmonic(1.0),
    "double_well": PotentialSpec.polynomial(1, 0, -2, 0, 1),
}


# wide lattices in the double well reject most hops; the tuning warning is expected there
@pytest.mark.filterwarnings("ignore::pathlimit.sampler.SamplerTuningWarning")
def test_criterion_7_sampler_correctness(acceptance):
    worst = 0.0
    cases = 0
    for slices in (2, 3, 4):
        for n_sites in (3, 5, 7):
            sites = np.linspace(-1.5, 1.5, n_sites)
            for k, (name, pot) in enumerate(LATTICE_POTENTIALS.items()):
                system = SystemSpec.single(1.0, pot)
                tg = TimeGrid(0.0, 1.0, slices, EUCLIDEAN)
                exact = brute_force_lattice_measure(system, 0.0, 0.5, tg, sites)
                cfg = SamplerConfig(200_000, 1000, seed=1000 * slices + 10 * n_sites + k)
                samples, _ = sample_paths(system, 0.0, 0.5, tg, cfg, site_values=sites)
                for node in range(slices - 1):
                    emp = np.bincount(np.searchsorted(sites, samples.positions[:, node + 1]), minlength=n_sites)
                    worst = max(worst, total_variation(emp / len(samples), exact.marginal(node)))
                if len(exact.probabilities) <= 49:
                    worst = max(worst, total_variation(sample_histogram(samples, exact), exact.probabilities))
                cases += 1

    system = SystemSpec.single(1.0, LATTICE_POTENTIALS["double_well"], 0.7)
    measure, trans = metropolis_transition_matrix(system, 0.0, 0.5, TimeGrid(0, 1, 4, EUCLIDEAN),
                                                  np.linspace(-1.5, 1.5, 5))
    flow = measure.probabilities[:, None] * trans
    balance = float(np.max(np.abs(flow - flow.T)))
    ok = worst <= 0.02 and balance <= 1e-15
    acceptance("7 sampler correctness", ok,
               f"worst TV {worst:.4f} over {cases} lattices (<=0.02), detailed-balance residual {balance:.1e}")
    assert ok


def test_criterion_8_deviation_probability(acceptance, outdir):
    status, directory, checks, elapsed = run("deviation", outdir)
    with open(directory / "deviation.csv") as fh:
        rows = list(csv.DictReader(fh))
    first = rows[0]
    assert float(first["hbar"]) == 1.0 and float(first["epsilon"]) == 0.5
    z_oracle = abs(float(first["probability"]) - float(first["oracle_probability"])) / np.hypot(
        float(first["stderr"]), float(first["oracle_stderr"]))
    probs = [float(r["probability"]) for r in rows]
    decrease = [c["value"] for name, c in checks.items() if name.startswith("decrease_z")]
    ok = status == 0 and z_oracle <= 3 and all(z > 3 for z in decrease) and elapsed <= 600
    acceptance("8 deviation probability", ok,
               f"P(sup>0.5) {first['probability'][:7]} vs bridge {first['oracle_probability'][:7]} "
               f"z={z_oracle:.2f} (<=3); P over hbar {', '.join(f'{p:.4f}' for p in probs)}; "
               f"step z {', '.join(f'{z:.1f}' for z in decrease)} (>3); {elapsed:.0f}s (<=600s)")
    assert ok


def test_criterion_9_reproducibility(acceptance, outdir):
    differing = []
    compared = 0
    for name in ("validate_kernels", "factorization", "concentration", "mass_scaling", "deviation"):
        _, first, _, _ = run(name, outdir)
        again = outdir / f"{name}_rerun"
        run_experiment(load_config(first / "manifest.json"), again)
        for path in sorted(first.glob("*.csv")):
            compared += 1
            if path.read_bytes() != (again / path.name).read_bytes():
                differing.append(f"{name}/{path.name}")
    ok = not differing and compared > 0
    acceptance("9 reproducibility", ok,
               f"{compared} CSVs re-run from manifest, {len(differing)} differ" + (f": {differing}" if differing else ""))
    assert ok
