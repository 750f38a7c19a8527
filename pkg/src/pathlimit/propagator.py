"""Time-sliced propagators on a spatial grid.

A kernel ``K(x2, x1)`` is stored as a dense ``P_out x P_in`` matrix and is
applied to wave functions with a ``dx`` quadrature weight, so that
``psi_out = K @ psi_in * dx`` realises the integral wave equation. An
N-slice kernel is the N-th power of the dx-weighted one-slice kernel.

Euclidean slices use the closed-form short-time kernel sampled on the grid.
Real-time slices cannot be point-sampled: the free short-time chirp
oscillates faster than the grid resolves, and the product of sampled
slices diverges. Real-time slices therefore use the free short-time
kernel restricted to the momenta the grid can carry (a smooth
super-Gaussian cut below the Nyquist wavenumber). A smooth absorbing
layer in the outer part of the grid removes amplitude that would
otherwise reflect off the truncation edge.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .action import EUCLIDEAN, MODES, REAL_TIME, SystemSpec, TimeGrid

BOUNDARY_THRESHOLD = 1e-3
MAX_POINTS = 2048

# Real-time slice regularisation; see module docstring.
BAND_FRACTION = 0.8
BAND_ORDER = 8
ABSORBER_FRACTION = 0.3
ABSORBER_RATE = 100.0


class BoundaryWarning(UserWarning):
    pass


class CausticError(ValueError):
    """Real-time harmonic kernel requested at a focal time (sin(wt) = 0)."""


@dataclass(frozen=True)
class SpatialGrid:
    x_min: float
    x_max: float
    points: int

    def __post_init__(self):
        if int(self.points) != self.points or self.points < 2:
            raise ValueError("a spatial grid needs at least two points")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        object.__setattr__(self, "points", int(self.points))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.points - 1)

    @cached_property
    def x(self) -> np.ndarray:
        x = np.linspace(self.x_min, self.x_max, self.points)
        x.setflags(write=False)
        return x

    def central(self, fraction: float = 0.5) -> np.ndarray:
        """Boolean mask of the central ``fraction`` of the grid extent."""
        mid = 0.5 * (self.x_min + self.x_max)
        half = 0.5 * fraction * (self.x_max - self.x_min)
        return np.abs(self.x - mid) <= half * (1 + 1e-12)


@dataclass(frozen=True, eq=False)
class GridWaveFunction:
    grid: SpatialGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.array(self.amplitudes, dtype=complex)
        if amp.shape != (self.grid.points,):
            raise ValueError(f"expected {self.grid.points} amplitudes, got {amp.shape}")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def gaussian(
        cls, grid: SpatialGrid, center: float = 0.0, sigma: float = 1.0, wavenumber: float = 0.0
    ) -> GridWaveFunction:
        """Normalised packet with probability density of std ``sigma``."""
        x = grid.x
        amp = np.exp(-((x - center) ** 2) / (4 * sigma**2) + 1j * wavenumber * x)
        return cls(grid, amp / (2 * np.pi * sigma**2) ** 0.25)

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def norm2(self) -> float:
        return float(np.sum(self.density) * self.grid.dx)

    def normalized(self) -> GridWaveFunction:
        return GridWaveFunction(self.grid, self.amplitudes / np.sqrt(self.norm2))

    def mean(self) -> float:
        rho = self.density
        return float(np.sum(self.grid.x * rho) / np.sum(rho))

    def variance(self) -> float:
        rho = self.density
        mu = self.mean()
        return float(np.sum((self.grid.x - mu) ** 2 * rho) / np.sum(rho))


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    grid_out: SpatialGrid
    grid_in: SpatialGrid
    entries: np.ndarray
    mode: str
    t_span: tuple[float, float]
    boundary_mass: float = float("nan")
    warning: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        entries = np.array(self.entries, dtype=float if self.mode == EUCLIDEAN else complex)
        if entries.shape != (self.grid_out.points, self.grid_in.points):
            raise ValueError("entries do not match the grids")
        if not np.all(np.isfinite(entries)):
            raise ValueError("kernel entries must be finite")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def flagged(self) -> bool:
        return self.warning is not None


def _check_single(system: SystemSpec) -> tuple[float, float]:
    system.require_single()
    return system.masses[0], system.hbar


def short_time_kernel(system_1p: SystemSpec, x2, x1, dt: float, mode: str = REAL_TIME):
    """Single-slice kernel with the potential taken at the midpoint.

    Real time: sqrt(m / (2 pi i hbar dt)) exp(i S / hbar), with
    sqrt(i) = exp(i pi / 4). Euclidean: sqrt(m / (2 pi hbar dt)) exp(-S / hbar).
    """
    m, hbar = _check_single(system_1p)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    x2 = np.asarray(x2, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    u = system_1p.external[0]
    kinetic = m * (x2 - x1) ** 2 / (2 * dt)
    potential = dt * u(0.5 * (x1 + x2))
    norm = np.sqrt(m / (2 * np.pi * hbar * dt))
    if mode == EUCLIDEAN:
        return norm * np.exp(-(kinetic + potential) / hbar)
    return norm * np.exp(-1j * np.pi / 4) * np.exp(1j * (kinetic - potential) / hbar)


def band_limited_free_kernel(
    separation, m: float, hbar: float, dt: float, dx: float,
    band_fraction: float = BAND_FRACTION, order: int = BAND_ORDER,
):
    """Real-time free short-time kernel carried by momenta a dx-grid resolves.

    (1/pi) int_0^{pi/dx} cos(k d) exp(-i hbar dt k^2 / 2m) w(k) dk with
    w(k) = exp(-(k / (band_fraction pi/dx))^(2 order)).
    """
    sep = np.asarray(separation, dtype=float)
    k_max = np.pi / dx
    distances, inverse = np.unique(np.abs(sep), return_inverse=True)
    # trapezoid in k is spectrally accurate: the integrand is even and w(k_max) ~ 0
    nk = max(2048, int(8 * k_max * distances.max() / np.pi) + 1) if distances.size else 2048
    k = np.linspace(0.0, k_max, nk)
    weights = np.full(nk, k[1] - k[0])
    weights[[0, -1]] *= 0.5
    spectrum = np.exp(-1j * hbar * dt * k**2 / (2 * m)) * np.exp(
        -((k / (band_fraction * k_max)) ** (2 * order))
    )
    values = np.empty(distances.size, dtype=complex)
    for start in range(0, distances.size, 256):
        block = distances[start:start + 256]
        values[start:start + 256] = np.cos(np.outer(block, k)) @ (spectrum * weights)
    return (values / np.pi)[inverse].reshape(sep.shape)


def absorber_profile(
    sgrid: SpatialGrid, rate: float = ABSORBER_RATE, fraction: float = ABSORBER_FRACTION
) -> np.ndarray:
    """Absorption rate: zero in the interior, cubic ramp over the outer layer."""
    mid = 0.5 * (sgrid.x_min + sgrid.x_max)
    half = 0.5 * (sgrid.x_max - sgrid.x_min)
    start = (1.0 - fraction) * half
    depth = np.clip((np.abs(sgrid.x - mid) - start) / (half - start), 0.0, 1.0)
    return rate * depth**3


def slice_kernel(
    system_1p: SystemSpec, dt: float, sgrid: SpatialGrid, mode: str,
    band_fraction: float = BAND_FRACTION, absorber_rate: float = ABSORBER_RATE,
    absorber_fraction: float = ABSORBER_FRACTION,
) -> np.ndarray:
    """One-slice kernel sampled on ``sgrid x sgrid`` (rows are x2)."""
    x2, x1 = np.meshgrid(sgrid.x, sgrid.x, indexing="ij")
    if mode == EUCLIDEAN:
        return short_time_kernel(system_1p, x2, x1, dt, EUCLIDEAN)
    m, hbar = _check_single(system_1p)
    free = band_limited_free_kernel(x2 - x1, m, hbar, dt, sgrid.dx, band_fraction)
    phase = np.exp(-1j * dt * system_1p.external[0](0.5 * (x1 + x2)) / hbar)
    damp = np.exp(-0.5 * dt * absorber_profile(sgrid, absorber_rate, absorber_fraction))
    return damp[:, None] * (free * phase) * damp[None, :]


def boundary_mass(entries: np.ndarray, grid_out: SpatialGrid, grid_in: SpatialGrid) -> float:
    """Share of |K| from centrally launched columns landing in the outer 5%."""
    outer = ~grid_out.central(0.9)
    cols = np.abs(entries[:, grid_in.central(0.5)])
    total = cols.sum()
    if total == 0:
        return 0.0
    return float(cols[outer].sum() / total)


def _finish(entries, grid_out, grid_in, mode, t_span) -> KernelMatrix:
    mass = boundary_mass(entries, grid_out, grid_in)
    message = None
    if mass > BOUNDARY_THRESHOLD:
        message = f"boundary mass {mass:.3g} exceeds {BOUNDARY_THRESHOLD:g}; widen the grid"
        warnings.warn(message, BoundaryWarning, stacklevel=3)
    return KernelMatrix(grid_out, grid_in, entries, mode, t_span, mass, message)


def build_kernel(
    system_1p: SystemSpec,
    tgrid: TimeGrid,
    sgrid: SpatialGrid,
    *,
    band_fraction: float = BAND_FRACTION,
    absorber_rate: float = ABSORBER_RATE,
    absorber_fraction: float = ABSORBER_FRACTION,
    max_points: int = MAX_POINTS,
) -> KernelMatrix:
    """N-slice propagator on ``sgrid``: (dx k)^N / dx for the one-slice kernel k."""
    if sgrid.points > max_points:
        raise ValueError(f"{sgrid.points} grid points exceeds the cap of {max_points}")
    k = slice_kernel(
        system_1p, tgrid.dt, sgrid, tgrid.mode, band_fraction, absorber_rate, absorber_fraction
    )
    if tgrid.slices == 1:
        entries = k
    else:
        dx = sgrid.dx
        entries = np.linalg.matrix_power(dx * k, tgrid.slices) / dx
    return _finish(entries, sgrid, sgrid, tgrid.mode, (tgrid.t_start, tgrid.t_end))


def identity_kernel(sgrid: SpatialGrid, mode: str, t: float = 0.0) -> KernelMatrix:
    entries = np.eye(sgrid.points) / sgrid.dx
    return KernelMatrix(sgrid, sgrid, entries, mode, (t, t), 0.0)


def evolve(psi: GridWaveFunction, kernel: KernelMatrix) -> GridWaveFunction:
    """psi_out(x2) = sum_x1 K(x2, x1) psi_in(x1) dx."""
    if kernel.grid_in != psi.grid:
        raise ValueError("kernel input grid does not match the wave function grid")
    return GridWaveFunction(kernel.grid_out, (kernel.entries @ psi.amplitudes) * psi.grid.dx)


def compose(k_bc: KernelMatrix, k_ab: KernelMatrix) -> KernelMatrix:
    """Chapman-Kolmogorov product: K_ac = sum_b K_bc K_ab dx_b."""
    if k_bc.grid_in != k_ab.grid_out:
        raise ValueError("intermediate grids differ")
    if k_bc.mode != k_ab.mode:
        raise ValueError("cannot compose real-time and euclidean kernels")
    scale = max(1.0, abs(k_ab.t_span[1]), abs(k_bc.t_span[0]))
    if abs(k_bc.t_span[0] - k_ab.t_span[1]) > 1e-12 * scale:
        raise ValueError(f"time spans {k_ab.t_span} and {k_bc.t_span} do not abut")
    entries = (k_bc.entries @ k_ab.entries) * k_ab.grid_out.dx
    return _finish(entries, k_bc.grid_out, k_ab.grid_in, k_bc.mode, (k_ab.t_span[0], k_bc.t_span[1]))


def analytic_reference_kernel(
    kind: str,
    m: float,
    omega: float,
    hbar: float,
    span: float,
    mode: str,
    sgrid: SpatialGrid,
    center: float = 0.0,
) -> KernelMatrix:
    """Closed-form free or harmonic (Mehler) kernel sampled on ``sgrid``."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not (m > 0 and hbar > 0 and span > 0):
        raise ValueError("m, hbar and span must be positive")
    x2, x1 = np.meshgrid(sgrid.x - center, sgrid.x - center, indexing="ij")
    if kind == "free":
        entries = _free(x2, x1, m, hbar, span, mode)
    elif kind == "harmonic":
        if not omega > 0:
            raise ValueError("harmonic kernel needs omega > 0")
        entries = _mehler(x2, x1, m, omega, hbar, span, mode)
    else:
        raise ValueError(f"unknown reference kind {kind!r}")
    return KernelMatrix(sgrid, sgrid, entries, mode, (0.0, span))


def _free(x2, x1, m, hbar, t, mode):
    norm = np.sqrt(m / (2 * np.pi * hbar * t))
    if mode == EUCLIDEAN:
        return norm * np.exp(-m * (x2 - x1) ** 2 / (2 * hbar * t))
    return norm * np.exp(-1j * np.pi / 4) * np.exp(1j * m * (x2 - x1) ** 2 / (2 * hbar * t))


def _mehler(x2, x1, m, omega, hbar, t, mode):
    wt = omega * t
    if mode == EUCLIDEAN:
        s = np.sinh(wt)
        # (x1^2 + x2^2) cosh - 2 x1 x2, rearranged to stay accurate as omega -> 0
        quad = (x2 - x1) ** 2 + (x1**2 + x2**2) * 2 * np.sinh(wt / 2) ** 2
        return np.sqrt(m * omega / (2 * np.pi * hbar * s)) * np.exp(-m * omega * quad / (2 * hbar * s))
    s = np.sin(wt)
    if abs(s) < 1e-9:
        raise CausticError(f"caustic: sin(omega t) = {s:.3g} at omega t = {wt:.6g}")
    quad = (x2 - x1) ** 2 - (x1**2 + x2**2) * 2 * np.sin(wt / 2) ** 2
    maslov = np.floor(wt / np.pi)
    norm = np.sqrt(m * omega / (2 * np.pi * hbar * abs(s)))
    phase = np.exp(-1j * np.pi / 4 - 1j * np.pi / 2 * maslov)
    return norm * phase * np.exp(1j * m * omega * quad / (2 * hbar * s))


def central_relative_error(kernel: KernelMatrix, reference, fraction: float = 0.5) -> float:
    """Max |K - K_ref| / |K_ref| over entries with both points in the central region."""
    ref = reference.entries if isinstance(reference, KernelMatrix) else np.asarray(reference)
    rows = kernel.grid_out.central(fraction)
    cols = kernel.grid_in.central(fraction)
    diff = np.abs(kernel.entries - ref)[np.ix_(rows, cols)]
    return float(np.max(diff / np.abs(ref)[np.ix_(rows, cols)]))
