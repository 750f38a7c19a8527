"""Metropolis sampling of euclidean COM paths and deviation statistics.

Paths with fixed endpoints are drawn with density proportional to
exp(-S_E[X] / hbar). A sweep proposes one single-node move per interior
node, in order. Two proposal families exist: Gaussian moves of width
``step_width`` for continuous paths, and uniform jumps to another value of
a finite site set for lattice paths (used against exhaustive enumeration).
"""

from __future__ import annotations

import itertools
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numba import njit

from .action import EUCLIDEAN, SystemPaths, SystemSpec, TimeGrid

ENUMERATION_BUDGET = 10**6
BATCHES = 32
ACCEPTANCE_WINDOW = (0.1, 0.9)
_CHUNK = 4096


class SamplerTuningWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    sweeps: int
    burn_in: int = 0
    step_width: float | None = None
    seed: int = 0
    thinning: int = 1

    def __post_init__(self):
        if not self.sweeps > self.burn_in >= 0:
            raise ValueError("need sweeps > burn_in >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.step_width is not None and not self.step_width > 0:
            raise ValueError("step_width must be positive")

    def resolved_step(self, system_com: SystemSpec, dt: float) -> float:
        """Explicit step width, or the local free-action scale sqrt(hbar dt / m)."""
        if self.step_width is not None:
            return float(self.step_width)
        return float(np.sqrt(system_com.hbar * dt / system_com.masses[0]))


@dataclass(frozen=True)
class ChainDiagnostics:
    acceptance_rate: float
    integrated_autocorrelation: float
    effective_samples: float
    retained: int
    warning: str | None = None


class PathSamples(Sequence):
    """Retained chain states, viewed as a sequence of one-row SystemPaths."""

    def __init__(self, grid: TimeGrid, positions: np.ndarray, diagnostics: ChainDiagnostics | None = None):
        positions = np.array(positions, dtype=float)
        positions.setflags(write=False)
        self.grid = grid
        self.positions = positions
        self.diagnostics = diagnostics

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return PathSamples(self.grid, self.positions[i], self.diagnostics)
        return SystemPaths(self.grid, self.positions[i][None, :])

    @property
    def mean_path(self) -> np.ndarray:
        return self.positions.mean(axis=0)


@njit(cache=True)
def _poly(coeffs, x):
    acc = 0.0
    for c in coeffs[::-1]:
        acc = acc * x + c
    return acc


@njit(cache=True)
def _local_delta(path, k, new, coeffs, m, dt):
    """Change of the discrete euclidean action when node k moves to ``new``."""
    left = path[k - 1]
    right = path[k + 1]
    old = path[k]
    kin = m * ((new - left) ** 2 + (right - new) ** 2 - (old - left) ** 2 - (right - old) ** 2) / (2.0 * dt)
    pot = dt * (
        _poly(coeffs, 0.5 * (left + new)) + _poly(coeffs, 0.5 * (new + right))
        - _poly(coeffs, 0.5 * (left + old)) - _poly(coeffs, 0.5 * (old + right))
    )
    return kin + pot


@njit(cache=True)
def _sweep_gaussian(path, coeffs, m, dt, hbar, step, noise, uniform, out, thin, start):
    """Run len(noise) sweeps in place; store every thin-th state after ``start``."""
    accepted = 0
    stored = 0
    nodes = path.shape[0] - 1
    for s in range(noise.shape[0]):
        for k in range(1, nodes):
            new = path[k] + step * noise[s, k - 1]
            ds = _local_delta(path, k, new, coeffs, m, dt)
            if ds <= 0.0 or uniform[s, k - 1] < np.exp(-ds / hbar):
                path[k] = new
                accepted += 1
        idx = start + s
        if idx >= 0 and idx % thin == 0:
            out[stored, :] = path
            stored += 1
    return accepted, stored


@njit(cache=True)
def _sweep_lattice(path, state, sites, coeffs, m, dt, hbar, jumps, uniform, out, thin, start):
    accepted = 0
    stored = 0
    nodes = path.shape[0] - 1
    for s in range(jumps.shape[0]):
        for k in range(1, nodes):
            # uniform over the other nsites - 1 values: a symmetric proposal
            j = jumps[s, k - 1]
            if j >= state[k]:
                j += 1
            new = sites[j]
            ds = _local_delta(path, k, new, coeffs, m, dt)
            if ds <= 0.0 or uniform[s, k - 1] < np.exp(-ds / hbar):
                path[k] = new
                state[k] = j
                accepted += 1
        idx = start + s
        if idx >= 0 and idx % thin == 0:
            out[stored, :] = path
            stored += 1
    return accepted, stored


def _coeffs(system_com: SystemSpec) -> np.ndarray:
    return np.ascontiguousarray(system_com.external[0].as_polynomial(), dtype=float)


def _require(system_com: SystemSpec, tgrid: TimeGrid) -> None:
    system_com.require_single()
    if tgrid.mode != EUCLIDEAN:
        raise ValueError("sampling needs a euclidean time grid")
    if tgrid.slices < 2:
        raise ValueError("need at least one interior node (slices >= 2)")


def path_actions(system_com: SystemSpec, dt: float, positions: np.ndarray) -> np.ndarray:
    """Discrete euclidean action of each row of ``positions``."""
    positions = np.atleast_2d(positions)
    m = system_com.masses[0]
    u = system_com.external[0]
    steps = np.diff(positions, axis=1)
    mid = 0.5 * (positions[:, 1:] + positions[:, :-1])
    return m * np.sum(steps**2, axis=1) / (2 * dt) + dt * np.sum(u(mid), axis=1)


def integrated_autocorrelation(series, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's automatic window.

    Uses the convention tau = 1 + 2 sum rho(t), so independent samples give 1.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 2:
        return 1.0
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0 or not np.isfinite(var):
        return 1.0
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:n] / (n * var)
    tau = 1.0
    for t in range(1, n):
        tau += 2.0 * acf[t]
        if t >= c * tau:
            break
    return max(1.0, float(tau))


def sample_paths(
    system_com: SystemSpec,
    x1: float,
    x2: float,
    tgrid: TimeGrid,
    config: SamplerConfig,
    *,
    site_values: Sequence[float] | None = None,
    initial: np.ndarray | None = None,
) -> tuple[PathSamples, ChainDiagnostics]:
    """Metropolis chain over interior nodes targeting exp(-S_E / hbar).

    With ``site_values`` the chain lives on the lattice of those values
    (interior nodes only; endpoints stay at x1, x2).
    """
    _require(system_com, tgrid)
    n = tgrid.slices
    m = system_com.masses[0]
    hbar = system_com.hbar
    dt = tgrid.dt
    coeffs = _coeffs(system_com)
    rng = np.random.default_rng(config.seed)

    if initial is None:
        path = x1 + (x2 - x1) * np.arange(n + 1) / n
    else:
        path = np.array(initial, dtype=float)
    path[0], path[-1] = x1, x2
    if site_values is not None:
        sites = np.array(site_values, dtype=float)
        if sites.size < 2:
            raise ValueError("need at least two site values")
        state = np.zeros(n + 1, dtype=np.int64)
        state[1:-1] = np.argmin(np.abs(path[1:-1, None] - sites[None, :]), axis=1)
        path[1:-1] = sites[state[1:-1]]
    else:
        step = config.resolved_step(system_com, dt)

    kept = (config.sweeps - config.burn_in + config.thinning - 1) // config.thinning
    out = np.empty((kept, n + 1))
    accepted_post = 0
    proposals_post = 0
    stored = 0
    done = 0
    while done < config.sweeps:
        size = min(_CHUNK, config.sweeps - done)
        uniform = rng.random((size, n - 1))
        start = done - config.burn_in
        if site_values is None:
            noise = rng.standard_normal((size, n - 1))
            acc, got = _sweep_gaussian(
                path, coeffs, m, dt, hbar, step, noise, uniform, out[stored:], config.thinning, start
            )
        else:
            jumps = rng.integers(0, sites.size - 1, (size, n - 1))
            acc, got = _sweep_lattice(
                path, state, sites, coeffs, m, dt, hbar, jumps, uniform, out[stored:], config.thinning, start
            )
        post = max(0, min(size, done + size - config.burn_in))
        if post:
            # the chunk straddling burn-in is attributed pro rata
            accepted_post += acc * post / size
            proposals_post += post * (n - 1)
        stored += got
        done += size

    actions = path_actions(system_com, dt, out)
    tau = integrated_autocorrelation(actions)
    rate = accepted_post / proposals_post if proposals_post else float("nan")
    message = None
    lo, hi = ACCEPTANCE_WINDOW
    if not lo <= rate <= hi:
        message = f"acceptance rate {rate:.3f} outside [{lo}, {hi}]; retune step_width"
        warnings.warn(message, SamplerTuningWarning, stacklevel=2)
    diag = ChainDiagnostics(rate, tau, min(stored, stored / tau), stored, message)
    return PathSamples(tgrid, out, diag), diag


def _sup_deviation(samples, reference) -> np.ndarray:
    if isinstance(samples, PathSamples):
        pos = samples.positions
        grid = samples.grid
    else:
        if not samples:
            raise ValueError("no samples")
        pos = np.vstack([p.positions[0] for p in samples])
        grid = samples[0].grid
    if len(pos) == 0:
        raise ValueError("no samples")
    ref = reference.path.positions[0]
    if pos.shape[1] != ref.size or grid.slices != reference.path.grid.slices:
        raise ValueError("samples and reference use different time grids")
    if np.max(np.abs(pos[:, [0, -1]] - ref[[0, -1]])) > 1e-12 * max(1.0, np.abs(ref).max()):
        raise ValueError("samples and reference have different endpoints")
    return np.max(np.abs(pos - ref[None, :]), axis=1)


def deviation_probability(samples, reference, epsilon):
    """P(max_k |X_k - X_min_k| > epsilon) and its standard error.

    For chain output the standard error is the larger of two estimates: a
    binomial error with the sample count replaced by an effective count
    (the smaller of the chain's own estimate and the one implied by the
    autocorrelation of the exceedance indicator), and a batch-means error
    over ``BATCHES`` contiguous blocks, which also sees slow tails of the
    autocorrelation that the windowed estimate truncates.
    ``epsilon`` may be a scalar or an array; the result matches its shape.
    """
    dev = _sup_deviation(samples, reference)
    eps = np.asarray(epsilon, dtype=float)
    n = dev.size
    chain_ess = n
    diag = getattr(samples, "diagnostics", None)
    if diag is not None:
        chain_ess = diag.effective_samples
    probs, errs = [], []
    for e in eps.ravel():
        hits = (dev > e).astype(float)
        p = float(hits.mean())
        ess = min(chain_ess, n / integrated_autocorrelation(hits)) if diag is not None else n
        se = float(np.sqrt(p * (1 - p) / ess))
        if diag is not None and n >= 4 * BATCHES:
            size = n // BATCHES
            means = hits[: size * BATCHES].reshape(BATCHES, size).mean(axis=1)
            se = max(se, float(means.std(ddof=1) / np.sqrt(BATCHES)))
        probs.append(p)
        errs.append(se)
    if eps.ndim == 0:
        return probs[0], errs[0]
    return np.array(probs).reshape(eps.shape), np.array(errs).reshape(eps.shape)


def l2_deviation(samples, reference) -> np.ndarray:
    """Root-mean-square deviation over time nodes, one value per sample.

    A secondary statistic; acceptance checks use the sup-norm.
    """
    if isinstance(samples, PathSamples):
        pos = samples.positions
    else:
        pos = np.vstack([p.positions[0] for p in samples])
    _sup_deviation(samples, reference)  # same validation
    ref = reference.path.positions[0]
    return np.sqrt(np.mean((pos - ref[None, :]) ** 2, axis=1))


def bridge_sup_tail(
    n_slices: int, span: float, hbar: float, mass: float, epsilon,
    samples: int, rng: np.random.Generator, chunk: int = 100_000,
):
    """Tail P(max_k |B_k| > epsilon) of a discrete Brownian bridge, by direct simulation.

    Increments have variance hbar * dt / mass; the bridge is pinned by
    subtracting the linear interpolation of the endpoint of the walk. This
    is the exact law of free-particle euclidean fluctuations on the grid.
    Returns (probabilities, standard errors) for each epsilon.
    """
    eps = np.atleast_1d(np.asarray(epsilon, dtype=float))
    dt = span / n_slices
    scale = np.sqrt(hbar * dt / mass)
    frac = np.arange(n_slices + 1) / n_slices
    counts = np.zeros(eps.size)
    done = 0
    while done < samples:
        size = min(chunk, samples - done)
        walk = np.zeros((size, n_slices + 1))
        np.cumsum(scale * rng.standard_normal((size, n_slices)), axis=1, out=walk[:, 1:])
        bridge = walk - walk[:, -1:] * frac[None, :]
        sup = np.max(np.abs(bridge), axis=1)
        counts += (sup[:, None] > eps[None, :]).sum(axis=0)
        done += size
    p = counts / samples
    return p, np.sqrt(p * (1 - p) / samples)


@dataclass(frozen=True, eq=False)
class LatticeMeasure:
    """Exact normalised distribution over interior-node configurations."""

    configurations: np.ndarray
    probabilities: np.ndarray
    site_values: np.ndarray

    def marginal(self, node: int) -> np.ndarray:
        """Distribution of interior node ``node`` (0-based) over site values."""
        idx = np.searchsorted(self.site_values, self.configurations[:, node])
        return np.bincount(idx, weights=self.probabilities, minlength=self.site_values.size)

    def index_of(self, configs: np.ndarray) -> np.ndarray:
        """Row index of each configuration (rows of site values)."""
        k = self.site_values.size
        digits = np.searchsorted(self.site_values, np.atleast_2d(configs))
        return digits @ (k ** np.arange(digits.shape[1] - 1, -1, -1))


def brute_force_lattice_measure(
    system_com: SystemSpec,
    x1: float,
    x2: float,
    tgrid: TimeGrid,
    site_values: Sequence[float],
    hbar: float | None = None,
) -> LatticeMeasure:
    """Enumerate every lattice path and weight it by exp(-S_E / hbar)."""
    _require(system_com, tgrid)
    sites = np.array(sorted(set(float(v) for v in site_values)))
    if sites.size != len(site_values):
        raise ValueError("site values must be distinct")
    interior = tgrid.slices - 1
    if sites.size**interior > ENUMERATION_BUDGET:
        raise ValueError(
            f"{sites.size}^{interior} configurations exceeds the budget of {ENUMERATION_BUDGET}"
        )
    h = system_com.hbar if hbar is None else float(hbar)
    configs = np.array(list(itertools.product(sites, repeat=interior)))
    full = np.hstack([np.full((len(configs), 1), x1), configs, np.full((len(configs), 1), x2)])
    logw = -path_actions(system_com, tgrid.dt, full) / h
    w = np.exp(logw - logw.max())
    return LatticeMeasure(configs, w / w.sum(), sites)


def sample_histogram(samples: PathSamples, measure: LatticeMeasure) -> np.ndarray:
    """Empirical distribution of lattice samples over the measure's configurations."""
    idx = measure.index_of(samples.positions[:, 1:-1])
    return np.bincount(idx, minlength=len(measure.probabilities)) / len(samples)


def total_variation(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def metropolis_transition_matrix(
    system_com: SystemSpec,
    x1: float,
    x2: float,
    tgrid: TimeGrid,
    site_values: Sequence[float],
    node: int | None = None,
) -> tuple[LatticeMeasure, np.ndarray]:
    """Transition matrix of one single-node lattice update.

    ``node`` selects the interior node (1-based, as in the path); ``None``
    gives the random-scan mixture over all interior nodes. Acceptance uses
    the same local action difference as the sampler.
    """
    measure = brute_force_lattice_measure(system_com, x1, x2, tgrid, site_values)
    configs = measure.configurations
    sites = measure.site_values
    coeffs = _coeffs(system_com)
    m, dt, hbar = system_com.masses[0], tgrid.dt, system_com.hbar
    nodes = range(1, tgrid.slices) if node is None else [node]
    size = len(configs)
    trans = np.zeros((size, size))
    for k in nodes:
        part = np.zeros((size, size))
        for i, cfg in enumerate(configs):
            path = np.concatenate(([x1], cfg, [x2]))
            for new in sites:
                if new == path[k]:
                    continue
                target = cfg.copy()
                target[k - 1] = new
                j = int(measure.index_of(target[None, :])[0])
                ds = _local_delta(path, k, new, coeffs, m, dt)
                part[i, j] = min(1.0, np.exp(-ds / hbar)) / (sites.size - 1)
            part[i, i] = 1.0 - part[i].sum()
        trans += part / len(nodes)
    return measure, trans
