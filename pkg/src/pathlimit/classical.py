"""Least-action paths and the concentration of the COM distribution.

The euclidean action of a one-particle (centre-of-mass) path with fixed
endpoints is minimised over the interior nodes. Concentration studies
evolve an initial profile with the euclidean kernel, renormalise, and
track how the width of the final profile shrinks with hbar or with the
total mass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .action import (
    EUCLIDEAN,
    PotentialSpec,
    SystemPaths,
    SystemSpec,
    TimeGrid,
    discrete_euclidean_action,
)
from .propagator import GridWaveFunction, SpatialGrid, build_kernel, evolve

GRADIENT_TOL = 1e-8
MAX_ITERATIONS = 100_000
_EPS = np.finfo(float).eps


class MinimalityViolation(RuntimeError):
    """A path undercuts the supposed least-action reference."""


@dataclass(frozen=True, eq=False)
class LeastActionResult:
    path: SystemPaths
    action: float
    endpoints: tuple[float, float]
    converged: bool
    iterations: int
    gradient_norm: float

    @property
    def tau(self) -> np.ndarray:
        return self.path.grid.times

    @property
    def positions(self) -> np.ndarray:
        return self.path.positions[0]

    def to_dict(self) -> dict:
        return {
            "action": self.action,
            "x1": self.endpoints[0],
            "x2": self.endpoints[1],
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "tau_start": self.path.grid.t_start,
            "tau_end": self.path.grid.t_end,
            "slices": self.path.grid.slices,
        }


def _require_euclidean(system: SystemSpec, tgrid: TimeGrid) -> None:
    system.require_single()
    if tgrid.mode != EUCLIDEAN:
        raise ValueError("least-action problems are posed on a euclidean grid")


def euclidean_action_and_gradient(
    system_com: SystemSpec, x1: float, x2: float, interior: np.ndarray, dt: float
) -> tuple[float, np.ndarray]:
    """Discrete euclidean action of [x1, interior, x2] and its interior gradient."""
    m = system_com.masses[0]
    u = system_com.external[0]
    full = np.concatenate(([x1], interior, [x2]))
    steps = np.diff(full)
    mid = 0.5 * (full[1:] + full[:-1])
    action = m * np.sum(steps**2) / (2 * dt) + dt * np.sum(u(mid))
    force = u.derivative(mid)
    grad = m * (steps[:-1] - steps[1:]) / dt + 0.5 * dt * (force[:-1] + force[1:])
    return float(action), grad


def _preconditioner(m: float, dt: float, curvature: float, size: int) -> np.ndarray:
    """Banded Cholesky factor of the kinetic Hessian plus a curvature shift.

    The shift uses the midpoint-rule stencil (1, 2, 1) dt / 4 of a constant
    potential curvature, so a harmonic well is solved in one step.
    """
    diag = np.full(size, 2 * m / dt + 0.5 * dt * curvature)
    off = np.full(size, -m / dt + 0.25 * dt * curvature)
    off[0] = 0.0
    return cholesky_banded(np.vstack([off, diag]))


def _curvature_scale(u: PotentialSpec, lo: float, hi: float) -> float:
    xs = np.linspace(lo, hi, 201)
    return max(0.0, float(np.max(u.second_derivative(xs))))


def _hessian_factor(system_com: SystemSpec, x1: float, x2: float, interior: np.ndarray, dt: float):
    """Banded Cholesky factor of the exact (tridiagonal) Hessian, or None if not positive definite."""
    m = system_com.masses[0]
    full = np.concatenate(([x1], interior, [x2]))
    curv = system_com.external[0].second_derivative(0.5 * (full[1:] + full[:-1]))
    diag = 2 * m / dt + 0.25 * dt * (curv[:-1] + curv[1:])
    off = np.empty_like(diag)
    off[0] = 0.0
    off[1:] = -m / dt + 0.25 * dt * curv[1:-1]
    try:
        return cholesky_banded(np.vstack([off, diag]))
    except np.linalg.LinAlgError:
        return None


def _descend(
    system_com: SystemSpec, x1: float, x2: float, start: np.ndarray, dt: float,
    factor: np.ndarray, tol: float, max_iter: int,
) -> tuple[np.ndarray, float, np.ndarray, int, bool]:
    # Descent along -H^{-1} g with the exact Hessian where it is positive
    # definite, else along the fixed kinetic preconditioner; Armijo backtracking
    # either way.
    x = start.copy()
    s, g = euclidean_action_and_gradient(system_com, x1, x2, x, dt)
    step = 1.0
    for it in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return x, s, g, it, True
        hess = _hessian_factor(system_com, x1, x2, x, dt)
        direction = -cho_solve_banded((factor if hess is None else hess, False), g)
        slope = float(g @ direction)
        alpha = 1.0 if hess is not None else min(1.0, 2.0 * step)
        while True:
            trial = x + alpha * direction
            s_new, g_new = euclidean_action_and_gradient(system_com, x1, x2, trial, dt)
            if s_new <= s + 1e-4 * alpha * slope:
                break
            # at machine precision the action cannot resolve the decrease;
            # accept if it is flat to rounding and the gradient shrinks
            if abs(s_new - s) <= 8 * _EPS * max(1.0, abs(s)) and np.linalg.norm(g_new) < gnorm:
                break
            alpha *= 0.5
            if alpha < 1e-14:
                return x, s, g, it, gnorm <= tol
        x, s, g, step = trial, s_new, g_new, alpha
    return x, s, g, max_iter, float(np.linalg.norm(g)) <= tol


def least_action_path(
    system_com: SystemSpec,
    x1: float,
    x2: float,
    tgrid: TimeGrid,
    starts: int = 1,
    *,
    seed: int = 0,
    tol: float = GRADIENT_TOL,
    max_iter: int = MAX_ITERATIONS,
    dx: float = 1e-2,
    perturbation_scale: float | None = None,
) -> list[LeastActionResult]:
    """Local minimisers of the euclidean action with endpoints x1, x2.

    The first start is the straight line; the remaining ``starts - 1`` are
    the straight line plus smooth random sine series drawn from ``seed``.
    Each start runs preconditioned gradient descent with Armijo
    backtracking. Minima closer than ``10 * dx`` in sup-norm are merged and
    the survivors are returned sorted by action.
    """
    _require_euclidean(system_com, tgrid)
    if starts < 1:
        raise ValueError("need at least one start")
    n = tgrid.slices
    frac = np.arange(1, n) / n
    line = x1 + (x2 - x1) * frac
    if n == 1:
        path = SystemPaths(tgrid, [[x1, x2]])
        s = discrete_euclidean_action(system_com, path).total
        return [LeastActionResult(path, s, (x1, x2), True, 0, 0.0)]

    u = system_com.external[0]
    scale = perturbation_scale if perturbation_scale is not None else max(1.0, abs(x2 - x1))
    lo, hi = min(x1, x2) - scale, max(x1, x2) + scale
    factor = _preconditioner(system_com.masses[0], tgrid.dt, _curvature_scale(u, lo, hi), n - 1)

    rng = np.random.default_rng(seed)
    modes = np.arange(1, 9)
    seeds = [line]
    for _ in range(starts - 1):
        amps = rng.normal(0.0, scale / modes)
        seeds.append(line + np.sin(np.pi * np.outer(frac, modes)) @ amps)

    found: list[LeastActionResult] = []
    for start in seeds:
        x, s, g, its, ok = _descend(system_com, x1, x2, start, tgrid.dt, factor, tol, max_iter)
        path = SystemPaths(tgrid, np.concatenate(([x1], x, [x2]))[None, :])
        found.append(LeastActionResult(path, s, (x1, x2), ok, its, float(np.linalg.norm(g))))

    found.sort(key=lambda r: r.action)
    distinct: list[LeastActionResult] = []
    for res in found:
        if all(np.max(np.abs(res.positions - d.positions)) > 10 * dx for d in distinct):
            distinct.append(res)
    return distinct


def delta_action(
    system_com: SystemSpec,
    paths: SystemPaths,
    reference: LeastActionResult,
    *,
    dx: float = 1e-2,
    tolerance: float = GRADIENT_TOL,
) -> float:
    """Excess euclidean action of ``paths`` over the least-action reference."""
    if paths.n != 1:
        raise ValueError("delta_action takes a single COM path")
    ends = paths.positions[0, [0, -1]]
    if np.max(np.abs(ends - np.asarray(reference.endpoints))) > dx:
        raise ValueError(f"endpoints {tuple(ends)} differ from {reference.endpoints}")
    ds = discrete_euclidean_action(system_com, paths).total - reference.action
    if ds < -10 * tolerance:
        raise MinimalityViolation(f"path undercuts the reference by {-ds:.3g}")
    return ds


def path_weight(delta_s, hbar: float, log: bool = False):
    """exp(-dS / hbar), or its logarithm when ``log`` is set."""
    if not hbar > 0:
        raise ValueError("hbar must be positive")
    exponent = -np.asarray(delta_s, dtype=float) / hbar
    out = exponent if log else np.exp(exponent)
    return float(out) if np.ndim(out) == 0 else out


def endpoint_action_scan(
    system_com: SystemSpec, sgrid: SpatialGrid, tgrid: TimeGrid, support: np.ndarray
) -> np.ndarray:
    """min over X1 in ``support`` of the lattice least action S_min(X1, X2).

    Dynamic programming over grid-restricted paths (a min-plus matrix
    power), returned for every X2 on ``sgrid``.
    """
    _require_euclidean(system_com, tgrid)
    m = system_com.masses[0]
    u = system_com.external[0]
    x = sgrid.x
    dt = tgrid.dt
    x2, x1 = np.meshgrid(x, x, indexing="ij")
    step = m * (x2 - x1) ** 2 / (2 * dt) + dt * u(0.5 * (x1 + x2))
    best = np.where(np.asarray(support, bool), 0.0, np.inf)
    for _ in range(tgrid.slices):
        best = np.min(best[None, :] + step, axis=1)
    return best


def profile_width(psi: GridWaveFunction, central_fraction: float = 0.9) -> tuple[float, float]:
    """Mode of |psi| and the standard deviation of |psi| about it."""
    mask = psi.grid.central(central_fraction)
    x = psi.grid.x[mask]
    amp = np.abs(psi.amplitudes[mask])
    mode = float(x[np.argmax(amp)])
    weights = amp / amp.sum()
    return mode, float(np.sqrt(np.sum(weights * (x - mode) ** 2)))


@dataclass(frozen=True)
class ConcentrationReport:
    hbar_values: tuple[float, ...]
    widths: tuple[float, ...]
    modes: tuple[float, ...]
    fitted_exponent: float
    classical_endpoint: float
    masses: tuple[float, ...] = ()
    scan: str = "hbar"
    fit_degenerate: bool = False
    min_action: float = float("nan")
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = len(self.widths)
        if len(self.hbar_values) != n or len(self.modes) != n:
            raise ValueError("report lists must have equal length")
        if not all(w > 0 for w in self.widths):
            raise ValueError("widths must be strictly positive")

    @property
    def mode_offsets(self) -> tuple[float, ...]:
        return tuple(abs(m - self.classical_endpoint) for m in self.modes)

    def rows(self) -> list[tuple]:
        masses = self.masses or (float("nan"),) * len(self.widths)
        return list(zip(self.hbar_values, masses, self.widths, self.modes))

    def to_dict(self) -> dict:
        return {
            "scan": self.scan,
            "hbar_values": list(self.hbar_values),
            "masses": list(self.masses),
            "widths": list(self.widths),
            "modes": list(self.modes),
            "fitted_exponent": self.fitted_exponent,
            "fit_degenerate": self.fit_degenerate,
            "classical_endpoint": self.classical_endpoint,
            "min_action": self.min_action,
            "warnings": list(self.warnings),
        }


def _fit_exponent(xs: Sequence[float], widths: Sequence[float]) -> tuple[float, bool]:
    if len(set(xs)) < 2:
        return float("nan"), True
    slope, _ = np.polyfit(np.log(xs), np.log(widths), 1)
    return float(slope), False


def _profile(system_com, psi0, tgrid, kernel_kwargs):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        kernel = build_kernel(system_com, tgrid, psi0.grid, **kernel_kwargs)
    psi = evolve(psi0, kernel).normalized()
    mode, width = profile_width(psi)
    return mode, width, [(w.category, str(w.message)) for w in caught]


def _check_profile_inputs(system_com, psi0, tgrid):
    _require_euclidean(system_com, tgrid)
    amp = psi0.amplitudes
    if np.any(np.abs(amp.imag) > 0) or np.any(amp.real < 0) or not np.any(amp.real > 0):
        raise ValueError("psi0 must be real and non-negative with positive mass")


def _classical_endpoint(system_com, psi0, tgrid, support_threshold):
    amp = np.abs(psi0.amplitudes)
    support = amp > support_threshold * amp.max()
    best = endpoint_action_scan(system_com, psi0.grid, tgrid, support)
    i = int(np.argmin(best))
    return float(psi0.grid.x[i]), float(best[i])


def concentration_profile(
    system_com: SystemSpec,
    psi0: GridWaveFunction,
    tgrid: TimeGrid,
    hbar_values: Sequence[float],
    *,
    support_threshold: float = 1e-6,
    **kernel_kwargs,
) -> ConcentrationReport:
    """Width of the renormalised euclidean-evolved profile for each hbar.

    Fits width ~ hbar**p on a log-log scale; the classical endpoint is the
    X2 of the globally least action over X1 in the support of ``psi0``.
    """
    _check_profile_inputs(system_com, psi0, tgrid)
    hbars = [float(h) for h in hbar_values]
    if not hbars or any(h <= 0 for h in hbars):
        raise ValueError("hbar values must be positive")
    if any(b >= a for a, b in zip(hbars, hbars[1:])):
        raise ValueError("hbar values must be sorted in descending order")
    modes, widths, notes = [], [], []
    for h in hbars:
        mode, width, msgs = _profile(system_com.with_hbar(h), psi0, tgrid, kernel_kwargs)
        modes.append(mode)
        widths.append(width)
        notes.extend((cat, f"hbar={h:g}: {msg}") for cat, msg in msgs)
    for cat, note in notes:
        warnings.warn(note, cat, stacklevel=2)
    exponent, degenerate = _fit_exponent(hbars, widths)
    endpoint, s_min = _classical_endpoint(system_com, psi0, tgrid, support_threshold)
    return ConcentrationReport(
        tuple(hbars), tuple(widths), tuple(modes), exponent, endpoint,
        masses=(system_com.masses[0],) * len(hbars), scan="hbar",
        fit_degenerate=degenerate, min_action=s_min, warnings=tuple(n for _, n in notes),
    )


def com_system(base_particle_mass: float, n: int, well: PotentialSpec, hbar: float) -> SystemSpec:
    """COM of ``n`` identical particles each feeling ``well`` at X: mass n m, potential n U."""
    return SystemSpec.single(n * base_particle_mass, well.scaled(n), hbar)


def mass_scaling_study(
    base_particle_mass: float,
    n_values: Sequence[int],
    hbar: float,
    well: PotentialSpec,
    tgrid: TimeGrid,
    psi0: GridWaveFunction,
    *,
    support_threshold: float = 1e-6,
    **kernel_kwargs,
) -> ConcentrationReport:
    """Width of the final COM profile as the particle count grows at fixed hbar."""
    ns = [int(n) for n in n_values]
    if not ns or any(n < 1 for n in ns):
        raise ValueError("particle counts must be positive")
    if any(b < a for a, b in zip(ns, ns[1:])):
        raise ValueError("particle counts must be non-decreasing")
    modes, widths, notes = [], [], []
    for n in ns:
        system = com_system(base_particle_mass, n, well, hbar)
        _check_profile_inputs(system, psi0, tgrid)
        mode, width, msgs = _profile(system, psi0, tgrid, kernel_kwargs)
        modes.append(mode)
        widths.append(width)
        notes.extend((cat, f"n={n}: {msg}") for cat, msg in msgs)
    for cat, note in notes:
        warnings.warn(note, cat, stacklevel=2)
    masses = [n * base_particle_mass for n in ns]
    exponent, degenerate = _fit_exponent(masses, widths)
    system = com_system(base_particle_mass, ns[-1], well, hbar)
    endpoint, s_min = _classical_endpoint(system, psi0, tgrid, support_threshold)
    return ConcentrationReport(
        (float(hbar),) * len(ns), tuple(widths), tuple(modes), exponent, endpoint,
        masses=tuple(masses), scan="mass", fit_degenerate=degenerate,
        min_action=s_min, warnings=tuple(n for _, n in notes),
    )
