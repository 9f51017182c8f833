"""Time evolution of the coupled NLS system by Strang splitting.

Each step is half a free Schrodinger step (exact in Fourier space), a full
nonlinear phase rotation (exact, since that sub-flow leaves ``|phi_i|``
unchanged), and another half free step. Masses are conserved to round-off.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .energy import SINGULAR_FLOOR, SystemParams, _axes, masses_of, stack, terms_of, unstack
from .errors import InvalidParams, NotConverged, NumericalBlowup
from .fields import Field, FieldPair, Grid, best_translation_alignment, h1_norm, translate
from .minimize import MinimizeResult, Status, _project

SAMPLE_COLUMNS = ("t", "mass1", "mass2", "energy", "orbit_distance")


@dataclass(frozen=True)
class EvolutionState:
    pair: FieldPair
    time: float = 0.0
    step_count: int = 0


@dataclass
class TrajectorySummary:
    samples: list = field(default_factory=list)  # rows of SAMPLE_COLUMNS
    dt: float = 0.0
    scheme_order: int = 2
    kinetic: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[SAMPLE_COLUMNS.index(name)] for row in self.samples])

    @property
    def max_orbit_distance(self) -> float:
        return float(np.nanmax(self.column("orbit_distance")))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SAMPLE_COLUMNS)
            for row in self.samples:
                w.writerow([repr(float(v)) for v in row])
        return path


def default_dt(grid: Grid) -> float:
    """Suggested step: 1e-3 in units where the box spacing is ~ 0.05 (scales with h^2)."""
    return min(1e-3, 0.4 * grid.spacing**2)


class Propagator:
    """Precomputed Strang stepper for a fixed grid, step and parameters."""

    def __init__(self, grid: Grid, dt: float, params: SystemParams):
        if dt == 0 or not np.isfinite(dt):
            raise InvalidParams(f"time step must be finite and nonzero, got {dt}")
        self.grid = grid
        self.dt = dt
        self.params = params
        self.axes = _axes(grid)
        self.half_kinetic = np.exp(-0.5j * dt * grid.k_squared)

    def _phase(self, U):
        p = self.params
        A = np.abs(U)
        V = np.empty(U.shape)
        V[0] = p.mu1 * A[0] ** (4.0 / p.dim)
        V[1] = p.mu2 * A[1] ** (4.0 / p.dim)
        if p.beta:
            for i, j, ri, rj in ((0, 1, p.r1, p.r2), (1, 0, p.r2, p.r1)):
                ai = A[i]
                mask = ai > SINGULAR_FLOOR * ai.max()
                w = np.zeros_like(ai)
                w[mask] = ai[mask] ** (ri - 2) * A[j][mask] ** rj
                V[i] += p.beta * ri * w
        return U * np.exp(1j * self.dt * V)

    def advance(self, U: np.ndarray, n_steps: int = 1) -> np.ndarray:
        Uh = np.fft.fftn(U, axes=self.axes)
        for _ in range(n_steps):
            Uh *= self.half_kinetic
            U = self._phase(np.fft.ifftn(Uh, axes=self.axes))
            Uh = np.fft.fftn(U, axes=self.axes)
            Uh *= self.half_kinetic
        U = np.fft.ifftn(Uh, axes=self.axes)
        if not np.all(np.isfinite(U)):
            raise NumericalBlowup("non-finite values during time stepping")
        return U


def step(state: EvolutionState, dt: float, params: SystemParams) -> EvolutionState:
    """One Strang step; a negative ``dt`` runs the scheme backwards."""
    grid = state.pair.grid
    U = Propagator(grid, dt, params).advance(stack(state.pair))
    return EvolutionState(unstack(grid, U), state.time + dt, state.step_count + 1)


@dataclass(frozen=True)
class Alignment:
    """Translation ``shift`` and per-component ``phases`` mapping a pair onto a reference."""

    pair: FieldPair
    shift: np.ndarray
    phases: np.ndarray


def align_pair(pair: FieldPair, reference: FieldPair, refine: bool = True) -> Alignment:
    """Move ``pair`` along its translation/phase orbit as close as possible to ``reference``.

    The translation is aligned on ``|u1| + |u2|`` by cross-correlation and then
    polished by maximizing the sum of the moduli of the H^1 products; the
    phases are then optimal in closed form.
    """
    grid = pair.grid
    if grid != reference.grid:
        raise ValueError("pair and reference live on different grids")
    U = stack(pair)
    R = stack(reference)
    axes = _axes(grid)
    Uh = np.fft.fftn(U, axes=axes)
    Rh = np.fft.fftn(R, axes=axes)
    weight = 1.0 + grid.k_squared
    ks = np.meshgrid(*([grid.wavenumbers] * grid.dim), indexing="ij")
    n_tot = grid.points_per_axis**grid.dim

    amp_u = Field(grid, np.abs(U[0]) + np.abs(U[1]))
    amp_r = Field(grid, np.abs(R[0]) + np.abs(R[1]))
    y0 = best_translation_alignment(amp_u, amp_r)

    def products(y):
        # <u_i(. + y), ref_i>_{H1} for both components
        phase = np.exp(1j * sum(k * yi for k, yi in zip(ks, y)))
        return grid.cell_volume * np.sum(weight * Uh * phase * np.conj(Rh), axis=axes) / n_tot

    def objective(y):
        return -float(np.sum(np.abs(products(y))))

    y = y0
    if refine:
        opt = optimize.minimize(objective, y0, method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 400})
        if opt.fun <= objective(y0):
            y = opt.x
    y = np.asarray(y, dtype=float)
    z = products(y)
    phases = np.angle(z)
    shifted = np.stack([translate(Field(grid, U[i]), -y).values for i in (0, 1)])
    aligned = shifted * np.exp(-1j * phases).reshape((2,) + (1,) * grid.dim)
    return Alignment(unstack(grid, aligned), y, phases)


def _h1_distance(grid: Grid, U: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Per-component H^1 norms of ``U - R``."""
    axes = _axes(grid)
    Dh = np.fft.fftn(U - R, axes=axes)
    n_tot = grid.points_per_axis**grid.dim
    d2 = grid.cell_volume * np.sum((1.0 + grid.k_squared) * np.abs(Dh) ** 2, axis=axes) / n_tot
    return np.sqrt(np.maximum(d2, 0.0))


def orbit_distance(pair: FieldPair, reference: FieldPair, refine: bool = True) -> float:
    """H^1 x H^1 distance from ``pair`` to the translation/phase orbit of ``reference``.

    Uses ``align_pair``; the result is an upper bound on the distance to the orbit.
    """
    if pair.grid != reference.grid:
        raise ValueError("pair and reference live on different grids")
    if np.array_equal(stack(pair), stack(reference)):
        return 0.0
    aligned = align_pair(pair, reference, refine=refine).pair
    d = _h1_distance(pair.grid, stack(aligned), stack(reference))
    return float(np.hypot(d[0], d[1]))


def h1_pair_norm(pair: FieldPair) -> float:
    return float(np.hypot(h1_norm(pair.first), h1_norm(pair.second)))


def evolve(
    pair: FieldPair,
    params: SystemParams,
    dt: float,
    n_steps: int,
    sample_every: int = 100,
    reference: FieldPair | None = None,
) -> tuple[EvolutionState, TrajectorySummary]:
    """Advance ``n_steps`` steps, sampling conservation data every ``sample_every`` steps."""
    grid = pair.grid
    prop = Propagator(grid, dt, params)
    summary = TrajectorySummary(dt=dt)
    U = stack(pair)

    def record(U, k):
        terms = terms_of(grid, U, params)
        dist = orbit_distance(unstack(grid, U), reference) if reference is not None else float("nan")
        summary.samples.append((k * dt, terms.mass[0], terms.mass[1], terms.energy(params), dist))
        summary.kinetic.append(float(terms.kinetic.sum()))

    record(U, 0)
    done = 0
    while done < n_steps:
        chunk = min(sample_every, n_steps - done)
        U = prop.advance(U, chunk)
        done += chunk
        record(U, done)
    return EvolutionState(unstack(grid, U), done * dt, done), summary


def random_perturbation(grid: Grid, seed: int, center=None, width=None) -> FieldPair:
    """Smooth, localized complex random pair with unit H^1 x H^1 norm."""
    rng = np.random.default_rng(seed)
    L = grid.half_width
    width = width or L / 6
    center = np.zeros(grid.dim) if center is None else np.asarray(center)
    r2 = sum((x - c) ** 2 for x, c in zip(grid.coords, center))
    envelope = np.exp(-r2 / (2 * width**2))
    cutoff = np.exp(-grid.k_squared / 2.0)  # keep wavenumbers O(1)
    comps = []
    for _ in range(2):
        noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        smooth = np.fft.ifftn(cutoff * np.fft.fftn(noise))
        comps.append(envelope * smooth)
    pert = FieldPair.from_arrays(grid, *comps)
    return FieldPair.from_arrays(grid, *(c / h1_pair_norm(pert) for c in comps))


def stability_probe(
    minimizer: MinimizeResult,
    perturbation_size: float,
    horizon: float,
    dt: float,
    params: SystemParams,
    seed: int = 0,
    sample_every: int = 100,
    restore_mass: bool = True,
) -> TrajectorySummary:
    """Evolve a perturbed minimizer and track its orbit distance to the minimizer."""
    if minimizer.status is not Status.CONVERGED:
        raise NotConverged(f"stability probe needs a converged minimizer, got {minimizer.status}")
    if not 0 <= perturbation_size <= 0.1:
        raise InvalidParams("perturbation_size must lie in [0, 0.1]")
    ref = minimizer.pair
    grid = ref.grid
    U = stack(ref)
    if perturbation_size > 0:
        pert = stack(random_perturbation(grid, seed))
        U = U + perturbation_size * h1_pair_norm(ref) * pert
        if restore_mass:
            U = _project(grid, U, masses_of(grid, stack(ref)))
    n_steps = int(round(horizon / dt))
    _, summary = evolve(unstack(grid, U), params, dt, n_steps, sample_every, reference=ref)
    return summary
