"""Systems, time grids, discretized paths and their action functionals.

Everything here is one-dimensional: a system is ``n`` point particles on a
line with external potentials and translation-invariant pair potentials.
Paths are sampled on a uniform time grid and the action is evaluated with
a forward-difference kinetic term and midpoint quadrature for potentials.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

REAL_TIME = "real_time"
EUCLIDEAN = "euclidean"
MODES = (REAL_TIME, EUCLIDEAN)

POTENTIAL_KINDS = ("zero", "uniform_field", "harmonic", "custom_polynomial")


class ShapeError(ValueError):
    """Paths and system disagree on the number of particles or nodes."""


@dataclass(frozen=True)
class PotentialSpec:
    """A one-dimensional potential energy function.

    ``uniform_field`` is ``strength * x``; ``harmonic`` is
    ``stiffness * (x - center)**2 / 2``; ``custom_polynomial`` is
    ``sum(c_k * x**k)`` with coefficients in ascending order.
    """

    kind: str = "zero"
    strength: float = 0.0
    stiffness: float = 0.0
    center: float = 0.0
    coefficients: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "harmonic" and not self.stiffness >= 0:
            raise ValueError("harmonic stiffness must be >= 0")
        if self.kind == "custom_polynomial":
            coeffs = tuple(float(c) for c in self.coefficients)
            if not coeffs:
                raise ValueError("custom_polynomial needs at least one coefficient")
            object.__setattr__(self, "coefficients", coeffs)
        values = (self.strength, self.stiffness, self.center, *self.coefficients)
        if not np.all(np.isfinite(values)):
            raise ValueError("potential parameters must be finite")

    @classmethod
    def zero(cls) -> PotentialSpec:
        return cls("zero")

    @classmethod
    def uniform_field(cls, strength: float) -> PotentialSpec:
        return cls("uniform_field", strength=float(strength))

    @classmethod
    def harmonic(cls, stiffness: float, center: float = 0.0) -> PotentialSpec:
        return cls("harmonic", stiffness=float(stiffness), center=float(center))

    @classmethod
    def polynomial(cls, *coefficients: float) -> PotentialSpec:
        return cls("custom_polynomial", coefficients=tuple(coefficients))

    @property
    def is_affine(self) -> bool:
        """True when the potential is at most linear in the coordinate."""
        if self.kind in ("zero", "uniform_field"):
            return True
        if self.kind == "harmonic":
            return self.stiffness == 0
        return all(c == 0 for c in self.coefficients[2:])

    def as_polynomial(self) -> np.ndarray:
        """Ascending power-series coefficients of the potential."""
        if self.kind == "zero":
            return np.zeros(1)
        if self.kind == "uniform_field":
            return np.array([0.0, self.strength])
        if self.kind == "harmonic":
            k, c = self.stiffness, self.center
            return np.array([0.5 * k * c * c, -k * c, 0.5 * k])
        return np.array(self.coefficients)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "uniform_field":
            return self.strength * x
        if self.kind == "harmonic":
            return 0.5 * self.stiffness * (x - self.center) ** 2
        return np.polynomial.polynomial.polyval(x, self.coefficients)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "uniform_field":
            return np.full_like(x, self.strength)
        if self.kind == "harmonic":
            return self.stiffness * (x - self.center)
        return np.polynomial.polynomial.polyval(
            x, np.polynomial.polynomial.polyder(self.coefficients)
        )

    def second_derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "harmonic":
            return np.full_like(x, self.stiffness)
        return np.polynomial.polynomial.polyval(
            x, np.polynomial.polynomial.polyder(self.as_polynomial(), 2)
        )

    @property
    def field_at_origin(self) -> float:
        """U'(0): the uniform-field component of the potential."""
        return float(self.derivative(0.0))

    def separation_defect(self, com, rel):
        """U(X + xi) - U(X) - xi * U'(0).

        The last term is the part of the shift that does not depend on the
        centre-of-mass coordinate; it is exactly zero for affine potentials.
        """
        com, rel = np.broadcast_arrays(np.asarray(com, float), np.asarray(rel, float))
        if self.is_affine:
            return np.zeros(com.shape)
        if self.kind == "harmonic":
            return self.stiffness * rel * (com + 0.5 * rel)
        return self(com + rel) - self(com) - rel * self.field_at_origin

    def scaled(self, factor: float) -> PotentialSpec:
        return replace(
            self,
            strength=self.strength * factor,
            stiffness=self.stiffness * factor,
            coefficients=tuple(c * factor for c in self.coefficients),
        )

    def mirrored(self) -> PotentialSpec:
        """The potential as a function of ``-x``."""
        if self.kind == "zero":
            return self
        if self.kind == "uniform_field":
            return replace(self, strength=-self.strength)
        if self.kind == "harmonic":
            return replace(self, center=-self.center)
        return replace(
            self,
            coefficients=tuple(c * (-1) ** k for k, c in enumerate(self.coefficients)),
        )


def sum_potentials(specs: Sequence[PotentialSpec]) -> PotentialSpec:
    """Combine potentials acting on the same coordinate into one."""
    specs = [s for s in specs if s.kind != "zero"]
    if not specs:
        return PotentialSpec.zero()
    if len(specs) == 1:
        return specs[0]
    if all(s.kind == "uniform_field" for s in specs):
        return PotentialSpec.uniform_field(sum(s.strength for s in specs))
    width = max(len(s.as_polynomial()) for s in specs)
    total = np.zeros(width)
    for s in specs:
        c = s.as_polynomial()
        total[: len(c)] += c
    return PotentialSpec.polynomial(*total)


def _pair_key(key) -> tuple[int, int]:
    i, j = (int(k) for k in key)
    return i, j


@dataclass(frozen=True)
class SystemSpec:
    """Masses, external and pair potentials of an n-particle 1-D system.

    Pair potentials are functions of the separation ``x[i] - x[j]`` for the
    key ``(i, j)``; keys are normalised so that ``i < j``.
    """

    masses: tuple[float, ...]
    external: tuple[PotentialSpec, ...] | None = None
    pairwise: Mapping[tuple[int, int], PotentialSpec] = field(default_factory=dict)
    hbar: float = 1.0

    def __post_init__(self):
        masses = tuple(float(m) for m in np.atleast_1d(self.masses))
        if not masses:
            raise ValueError("a system needs at least one particle")
        if not all(np.isfinite(m) and m > 0 for m in masses):
            raise ValueError(f"masses must be strictly positive, got {masses}")
        if not (np.isfinite(self.hbar) and self.hbar > 0):
            raise ValueError(f"hbar must be strictly positive, got {self.hbar}")
        n = len(masses)
        external = self.external
        if external is None:
            external = (PotentialSpec.zero(),) * n
        external = tuple(external)
        if len(external) != n:
            raise ShapeError(f"{len(external)} external potentials for {n} particles")
        pairs = {}
        for key, pot in dict(self.pairwise).items():
            i, j = _pair_key(key)
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"invalid pair key {key!r} for {n} particles")
            if i > j:
                i, j, pot = j, i, pot.mirrored()
            if (i, j) in pairs:
                raise ValueError(f"pair ({i}, {j}) given twice")
            pairs[(i, j)] = pot
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "external", external)
        object.__setattr__(self, "pairwise", dict(sorted(pairs.items())))
        object.__setattr__(self, "hbar", float(self.hbar))

    @classmethod
    def single(
        cls, mass: float, potential: PotentialSpec | None = None, hbar: float = 1.0
    ) -> SystemSpec:
        return cls((mass,), (potential or PotentialSpec.zero(),), hbar=hbar)

    @property
    def n(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> float:
        return float(sum(self.masses))

    def scaled(self, factor: float) -> SystemSpec:
        """Multiply every mass and potential strength by ``factor``."""
        return SystemSpec(
            tuple(m * factor for m in self.masses),
            tuple(p.scaled(factor) for p in self.external),
            {k: p.scaled(factor) for k, p in self.pairwise.items()},
            self.hbar,
        )

    def with_hbar(self, hbar: float) -> SystemSpec:
        return replace(self, hbar=hbar)

    def require_single(self) -> None:
        if self.n != 1:
            raise ShapeError(f"expected a one-particle system, got n={self.n}")


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    slices: int
    mode: str = REAL_TIME

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.slices) != self.slices or self.slices < 1:
            raise ValueError("a time grid needs at least one slice")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        object.__setattr__(self, "slices", int(self.slices))

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.slices

    @property
    def span(self) -> float:
        return self.t_end - self.t_start

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.slices + 1)

    def split(self, node: int) -> tuple[TimeGrid, TimeGrid]:
        """Two grids meeting at time node ``node`` (0 < node < slices)."""
        if not 0 < node < self.slices:
            raise ValueError("split node must be interior")
        t_mid = self.t_start + node * self.dt
        return (
            TimeGrid(self.t_start, t_mid, node, self.mode),
            TimeGrid(t_mid, self.t_end, self.slices - node, self.mode),
        )


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SystemPaths:
    """Positions of every particle at every node of a time grid.

    ``positions[j, k]`` is particle ``j`` at time node ``k``.
    """

    grid: TimeGrid
    positions: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != self.grid.slices + 1:
            raise ShapeError(
                f"positions shape {pos.shape} does not match {self.grid.slices + 1} time nodes"
            )
        if not np.all(np.isfinite(pos)):
            raise ValueError("path coordinates must be finite")
        object.__setattr__(self, "positions", _frozen(pos))

    @classmethod
    def from_functions(cls, grid: TimeGrid, *funcs: Callable) -> SystemPaths:
        t = grid.times
        return cls(grid, np.vstack([np.broadcast_to(f(t), t.shape) for f in funcs]))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def split(self, node: int) -> tuple[SystemPaths, SystemPaths]:
        left, right = self.grid.split(node)
        return (
            SystemPaths(left, self.positions[:, : node + 1]),
            SystemPaths(right, self.positions[:, node:]),
        )

    def with_mode(self, mode: str) -> SystemPaths:
        return SystemPaths(replace(self.grid, mode=mode), self.positions)


@dataclass(frozen=True)
class ActionBreakdown:
    total: float
    kinetic: float
    external: float
    interaction: float
    com_part: float
    relative_part: float
    coupling_residual: float


def _check(system: SystemSpec, paths: SystemPaths) -> None:
    if paths.n != system.n:
        raise ShapeError(f"{paths.n} path rows for a system of {system.n} particles")


def _kinetic(masses, positions, dt) -> float:
    steps = np.diff(positions, axis=1)
    return float(np.sum(np.asarray(masses)[:, None] * steps**2) / (2.0 * dt))


def _midpoints(positions) -> np.ndarray:
    return 0.5 * (positions[:, 1:] + positions[:, :-1])


def com_split(system: SystemSpec, paths: SystemPaths) -> tuple[SystemPaths, SystemPaths]:
    """Centre-of-mass path and the relative coordinates ``x[j] - X``."""
    _check(system, paths)
    m = np.asarray(system.masses)
    com = m @ paths.positions / system.total_mass
    return (
        SystemPaths(paths.grid, com[None, :]),
        SystemPaths(paths.grid, paths.positions - com[None, :]),
    )


def _breakdown(system: SystemSpec, paths: SystemPaths, sign: float) -> ActionBreakdown:
    # sign = -1: real-time Lagrangian T - U; sign = +1: euclidean T + U.
    _check(system, paths)
    dt = paths.grid.dt
    pos = paths.positions
    mid = _midpoints(pos)

    kinetic = _kinetic(system.masses, pos, dt)
    external = dt * float(sum(np.sum(u(mid[j])) for j, u in enumerate(system.external)))
    interaction = dt * float(
        sum(np.sum(u(mid[i] - mid[j])) for (i, j), u in system.pairwise.items())
    )
    total = kinetic + sign * (external + interaction)

    com, rel = com_split(system, paths)
    com_mid = _midpoints(com.positions)[0]
    rel_mid = mid - com_mid[None, :]
    com_kin = _kinetic((system.total_mass,), com.positions, dt)
    com_pot = dt * float(sum(np.sum(u(com_mid)) for u in system.external))
    rel_kin = _kinetic(system.masses, rel.positions, dt)
    rel_field = dt * float(
        sum(u.field_at_origin * np.sum(rel_mid[j]) for j, u in enumerate(system.external))
    )
    rel_pair = dt * float(
        sum(np.sum(u(rel_mid[i] - rel_mid[j])) for (i, j), u in system.pairwise.items())
    )
    defect = dt * float(
        sum(
            np.sum(u.separation_defect(com_mid, rel_mid[j]))
            for j, u in enumerate(system.external)
        )
    )
    com_part = com_kin + sign * com_pot
    relative_part = rel_kin + sign * (rel_field + rel_pair)
    residual = sign * defect
    return ActionBreakdown(
        total=total,
        kinetic=kinetic,
        external=external,
        interaction=interaction,
        com_part=com_part,
        relative_part=relative_part,
        coupling_residual=residual,
    )


def discrete_action(system: SystemSpec, paths: SystemPaths) -> ActionBreakdown:
    """Real-time action sum_j int (m v^2/2 - U_j - sum_k U_jk) dt on the grid."""
    if paths.grid.mode != REAL_TIME:
        raise ValueError("discrete_action needs a real_time grid")
    return _breakdown(system, paths, -1.0)


def discrete_euclidean_action(system: SystemSpec, paths: SystemPaths) -> ActionBreakdown:
    """Euclidean action with integrand T + U on an imaginary-time grid."""
    if paths.grid.mode != EUCLIDEAN:
        raise ValueError("discrete_euclidean_action needs a euclidean grid")
    return _breakdown(system, paths, 1.0)


def action_decompose(system: SystemSpec, paths: SystemPaths) -> ActionBreakdown:
    """Breakdown into centre-of-mass, relative and coupling parts.

    ``com_part`` is the action of the COM path with mass M in the summed
    external potentials evaluated at X. ``relative_part`` collects the
    relative kinetic energy, pair potentials and the X-independent field
    terms ``U_j'(0) * xi_j``. ``coupling_residual`` is whatever is left,
    i.e. the integrated failure of ``U_j(X + xi_j) ~ U_j(X)``.
    """
    if paths.grid.mode == EUCLIDEAN:
        return discrete_euclidean_action(system, paths)
    return discrete_action(system, paths)


def separability_defect(
    system: SystemSpec,
    com_range: tuple[float, float],
    rel_range: tuple[float, float],
    points: int = 64,
) -> float:
    """Worst |U_j(X + xi) - U_j(X) - xi U_j'(0)| over a lattice of (X, xi).

    The lattice includes both ends of each range, so the corner maximum of
    a quadratic defect is attained exactly.
    """
    for lo, hi in (com_range, rel_range):
        if not (np.isfinite(lo) and np.isfinite(hi)) or not hi > lo:
            raise ValueError(f"empty or non-finite range ({lo}, {hi})")
    if points < 2:
        raise ValueError("need at least two lattice points per axis")
    com, rel = np.meshgrid(
        np.linspace(*com_range, points), np.linspace(*rel_range, points), indexing="ij"
    )
    worst = 0.0
    for u in system.external:
        worst = max(worst, float(np.max(np.abs(u.separation_defect(com, rel)))))
    return worst
