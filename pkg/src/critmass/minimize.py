"""Minimization of J on the double mass constraint.

The flow is a projected gradient descent: each step moves along the
Sobolev-preconditioned tangent direction and then rescales both components
back onto their prescribed masses. Step sizes are controlled by
backtracking on energy increase.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .energy import (
    MassConstraint,
    Multipliers,
    SystemParams,
    _axes,
    gradient_of,
    masses_of,
    multipliers_of,
    pohozaev_of,
    residual_of,
    stack,
    terms_of,
    unstack,
)
from .errors import DomainEscape, InvalidParams, NotConverged, ZeroMass
from .fields import Field, FieldPair, Grid, outer_mass_fraction
from .ground_state import GroundStateQ, critical_masses, rescaled_ground_state, solve_q


MAX_STEP = 2.0


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    SPREAD = "SpreadDetected"
    DIVERGENCE = "DivergenceDetected"
    ITER_LIMIT = "IterLimit"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class MinimizeOptions:
    step: float = 0.5
    max_iters: int = 20000
    grad_tol: float = 1e-8
    restarts: int = 4
    spread_threshold: float = 0.05
    spread_energy: float = 1e-3
    # divergence: kinetic above min(divergence_kinetic, resolution_fraction * k_max^2 * mass)
    divergence_kinetic: float = 1e4
    divergence_energy: float = 1e3
    resolution_fraction: float = 0.01
    step_growth: float = 1.1
    seed: int = 0

    def __post_init__(self):
        for name in ("step", "grad_tol", "spread_threshold", "max_iters", "restarts"):
            if not getattr(self, name) > 0:
                raise InvalidParams(f"option {name} must be positive")
        if not self.grad_tol < 1:
            raise InvalidParams("grad_tol must be < 1")


@dataclass
class MinimizeResult:
    pair: FieldPair
    value: float
    multipliers: Multipliers
    grad_residual: float
    pohozaev: float
    status: Status
    iterations: int = 0
    restart: int = 0
    energies: list = field(default_factory=list, repr=False)

    @property
    def masses(self) -> tuple[float, float]:
        m = masses_of(self.pair.grid, stack(self.pair))
        return float(m[0]), float(m[1])

    def summary(self) -> dict:
        return {
            "status": str(self.status),
            "value": self.value,
            "lambda1": self.multipliers.lambda1,
            "lambda2": self.multipliers.lambda2,
            "grad_residual": self.grad_residual,
            "pohozaev": self.pohozaev,
            "iterations": self.iterations,
            "restart": self.restart,
            "mass1": self.masses[0],
            "mass2": self.masses[1],
        }


@lru_cache(maxsize=8)
def critical_profile(dim: int) -> GroundStateQ:
    """Mass-critical ground state, solved once per dimension."""
    return solve_q(dim)


def project_masses(pair: FieldPair, target: MassConstraint) -> FieldPair:
    """Rescale each component onto its prescribed mass."""
    U = _project(pair.grid, stack(pair), target.as_array())
    return unstack(pair.grid, U)


def _project(grid: Grid, U: np.ndarray, a: np.ndarray) -> np.ndarray:
    m = masses_of(grid, U)
    if np.any(m == 0):
        raise ZeroMass("cannot project a zero component onto a positive mass")
    return U * np.sqrt(a / m).reshape((2,) + (1,) * grid.dim)


class _Flow:
    """One descent run from one initial guess."""

    def __init__(self, grid, params, target, opts):
        self.grid = grid
        self.params = params
        self.a = target.as_array()
        self.opts = opts
        self.axes = _axes(grid)
        k_limit = opts.resolution_fraction * grid.k_max**2 * self.a.sum()
        self.kinetic_limit = min(opts.divergence_kinetic, k_limit)
        self.c_floor = (np.pi / grid.half_width) ** 2

    def _evaluate(self, U):
        Uh = np.fft.fftn(U, axes=self.axes)
        terms = terms_of(self.grid, U, self.params, Uh=Uh)
        return Uh, terms, terms.energy(self.params)

    def _state(self, U):
        Uh, terms, J = self._evaluate(U)
        lam = multipliers_of(terms, self.params)
        res = residual_of(self.grid, U, self.params, lam, Uh=Uh)
        return Uh, terms, J, lam, res

    def run(self, U):
        grid, params, opts = self.grid, self.params, self.opts
        shape = (2,) + (1,) * grid.dim
        U = _project(grid, U, self.a)
        Uh, terms, J, lam, res = self._state(U)
        tau = opts.step
        energies = [J]
        status = Status.ITER_LIMIT
        it = 0
        for it in range(1, opts.max_iters + 1):
            if res < opts.grad_tol:
                status = Status.CONVERGED
                break
            if terms.kinetic.sum() > self.kinetic_limit and J < 0:
                status = Status.DIVERGENCE
                break
            spread = max(outer_mass_fraction(Field(grid, U[i])) for i in (0, 1))
            if spread > opts.spread_threshold and abs(J) < opts.spread_energy:
                status = Status.SPREAD
                break

            G = gradient_of(grid, U, params, Uh=Uh)
            c = np.maximum(lam, self.c_floor).reshape(shape)
            precond = 1.0 / (c + grid.k_squared)
            PG = np.fft.ifftn(precond * np.fft.fftn(G, axes=self.axes), axes=self.axes)
            PU = np.fft.ifftn(precond * Uh, axes=self.axes)
            num = np.sum((PG * np.conj(U)).real, axis=self.axes)
            den = np.sum((PU * np.conj(U)).real, axis=self.axes)
            D = PG - (num / den).reshape(shape) * PU

            # below this, energy differences are round-off and the residual decides
            slack = 64 * np.finfo(float).eps * (0.5 * terms.kinetic.sum() + abs(J))
            for _ in range(60):
                V = _project(grid, U - tau * D, self.a)
                cand = self._state(V)
                JV, res_v = cand[2], cand[4]
                if JV < J - slack or (JV <= J + slack and res_v < res):
                    break
                tau *= 0.5
            else:
                break
            U = V
            Uh, terms, J, lam, res = cand
            energies.append(J)
            tau = min(tau * opts.step_growth, MAX_STEP)
        return U, status, it, energies


def _gaussian_guess(grid: Grid, rng, a: np.ndarray) -> np.ndarray:
    L = grid.half_width
    out = []
    for ai in a:
        width = L / 8 * np.exp(rng.uniform(-0.7, 0.7))
        center = rng.uniform(-L / 8, L / 8, size=grid.dim)
        r2 = sum((x - c) ** 2 for x, c in zip(grid.coords, center))
        g = np.exp(-r2 / (2 * width**2)).astype(complex)
        out.append(g)
    return _project(grid, np.stack(out), a)


def _ground_state_guess(grid, params, target) -> np.ndarray | None:
    q = critical_profile(params.dim)
    stars = critical_masses(params, q)
    try:
        comps = [
            np.sqrt(a / s) * rescaled_ground_state(q, mu, grid).values
            for a, s, mu in zip((target.a1, target.a2), stars, (params.mu1, params.mu2))
        ]
    except DomainEscape:
        return None
    return np.stack(comps)


def initial_guesses(grid, params, target, opts) -> list[np.ndarray]:
    """Deterministic ground-state product first, then seeded random Gaussians."""
    rng = np.random.default_rng(opts.seed)
    guesses = []
    det = _ground_state_guess(grid, params, target)
    if det is not None:
        guesses.append(det)
    while len(guesses) < opts.restarts:
        guesses.append(_gaussian_guess(grid, rng, target.as_array()))
    return guesses


def _finish(grid, params, U, status, iterations, restart, energies) -> MinimizeResult:
    pair = unstack(grid, U)
    terms = terms_of(grid, U, params)
    lam = multipliers_of(terms, params)
    poh, scale = pohozaev_of(terms, params)
    return MinimizeResult(
        pair=pair,
        value=terms.energy(params),
        multipliers=Multipliers(float(lam[0]), float(lam[1])),
        grad_residual=residual_of(grid, U, params, lam),
        pohozaev=poh / scale if scale else 0.0,
        status=status,
        iterations=iterations,
        restart=restart,
        energies=energies,
    )


def minimize(
    params: SystemParams,
    target: MassConstraint,
    grid: Grid,
    opts: MinimizeOptions | None = None,
    initial: FieldPair | None = None,
) -> MinimizeResult:
    """Approximate ``m(a1, a2)`` and a minimizer on ``grid``.

    Runs the descent from every initial guess (or only from ``initial`` when
    given) and returns the best outcome: a detected divergence wins outright,
    then the lowest-energy converged run, then spread/iteration-limit runs.
    """
    opts = opts or MinimizeOptions()
    if grid.dim != params.dim:
        raise InvalidParams(f"grid dimension {grid.dim} differs from N={params.dim}")
    flow = _Flow(grid, params, target, opts)
    if initial is not None:
        guesses = [stack(initial)]
    else:
        guesses = initial_guesses(grid, params, target, opts)

    results = []
    for k, U0 in enumerate(guesses):
        U, status, its, energies = flow.run(U0)
        res = _finish(grid, params, U, status, its, k, energies)
        if status is Status.DIVERGENCE:
            return res
        results.append(res)
    return _best(results)


# values this close (relative) count as ties; ties go to the earliest guess
TIE_RTOL = 1e-10


def _best(results: list[MinimizeResult]) -> MinimizeResult:
    order = {Status.CONVERGED: 0, Status.SPREAD: 1, Status.ITER_LIMIT: 2}
    top = min(order[r.status] for r in results)
    pool = [r for r in results if order[r.status] == top]
    low = min(r.value for r in pool)
    return next(r for r in pool if r.value <= low + TIE_RTOL * abs(low))


def with_options(opts: MinimizeOptions, **changes) -> MinimizeOptions:
    return replace(opts, **changes)


# -- scans and structural checks ---------------------------------------------


@dataclass(frozen=True)
class ScanRow:
    a1: float
    a2: float
    value: float
    lambda1: float
    lambda2: float
    status: Status

    COLUMNS = ("a1", "a2", "value", "lambda1", "lambda2", "status")

    def as_tuple(self) -> tuple:
        return (self.a1, self.a2, self.value, self.lambda1, self.lambda2, str(self.status))


def scan_m(
    params: SystemParams,
    mass_grid: list[MassConstraint],
    grid: Grid,
    opts: MinimizeOptions | None = None,
    jobs: int = 1,
) -> list[ScanRow]:
    """Run ``minimize`` for every mass pair; rows keep the input order.

    Entries are independent, so up to ``jobs`` of them run on worker threads.
    A failing entry never aborts the scan: it is reported through its status.
    """
    opts = opts or MinimizeOptions()

    def one(target):
        res = minimize(params, target, grid, opts)
        return ScanRow(target.a1, target.a2, res.value, res.multipliers.lambda1,
                       res.multipliers.lambda2, res.status)

    if jobs <= 1:
        return [one(t) for t in mass_grid]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, mass_grid))


def divergence_family_energy(
    params: SystemParams, q: GroundStateQ, masses: MassConstraint, t: float, grid: Grid,
    tol: float = 1e-6,
) -> float:
    """J on ``(sqrt(a1) Q_t / |Q|_2, sqrt(a2) Q_t / |Q|_2)`` with ``Q_t = t^(N/2) Q(t x)``."""
    from .fields import rescale_conformal
    from .ground_state import sample_profile

    stars = critical_masses(params, q)
    if masses.a1 > stars[0] * (1 + 1e-12) or masses.a2 > stars[1] * (1 + 1e-12):
        raise InvalidParams("divergence family needs masses at most critical componentwise")
    if not t > 0:
        raise InvalidParams(f"t must be positive, got {t}")
    base = rescale_conformal(sample_profile(q, grid, tol=tol), t, tol=tol)
    norm = np.sqrt(q.mass)
    pair = FieldPair(base * (np.sqrt(masses.a1) / norm), base * (np.sqrt(masses.a2) / norm))
    return terms_of(grid, stack(pair), params).energy(params)


@dataclass(frozen=True)
class StructureReport:
    phase_deviation: tuple[float, float]
    centers: tuple[tuple[float, ...], tuple[float, ...]]
    center_offset: float
    unimodality_violation: tuple[float, float]
    positivity: tuple[float, float]
    spacing: float

    def passes(self, phase_tol: float = 1e-6) -> bool:
        return (
            max(self.phase_deviation) < phase_tol
            and self.center_offset < self.spacing
            and max(self.unimodality_violation) == 0
            and min(self.positivity) > 0
        )

    def to_dict(self) -> dict:
        return {
            "phase_deviation": list(self.phase_deviation),
            "centers": [list(c) for c in self.centers],
            "center_offset": self.center_offset,
            "unimodality_violation": list(self.unimodality_violation),
            "positivity": list(self.positivity),
            "passes": self.passes(),
        }


# amplitudes below this fraction of the peak are treated as numerically zero
STRUCTURE_FLOOR = 1e-10


def _mean_phase(u: np.ndarray) -> float:
    # amplitude-weighted circular mean of arg u
    return float(np.angle(np.sum(u)))


def phase_deviation(u: np.ndarray) -> float:
    """Largest amplitude-weighted deviation of ``arg u`` from its weighted mean.

    Points are weighted by ``|u| / max|u|`` so tail round-off does not count.
    """
    a = np.abs(u)
    top = a.max()
    if top == 0:
        return 0.0
    dev = np.abs(np.angle(u * np.exp(-1j * _mean_phase(u))))
    return float(np.max(a / top * dev))


def _center(grid: Grid, density: np.ndarray) -> np.ndarray:
    """Periodic centroid of ``density`` along each axis."""
    L = grid.half_width
    out = []
    for x in grid.coords:
        z = np.sum(density * np.exp(1j * np.pi * x / L))
        out.append(L / np.pi * np.angle(z))
    return np.array(out)


def _periodic_gap(grid: Grid, c1, c2) -> float:
    d = np.asarray(c1) - np.asarray(c2)
    box = 2 * grid.half_width
    d = d - box * np.round(d / box)
    return float(np.linalg.norm(d))


def unimodality_violation(grid: Grid, u: np.ndarray, center) -> float:
    """Fraction of radial bin means of ``|u|`` (about ``center``) that rise outward."""
    from .fields import translate

    a = np.abs(translate(Field(grid, u), -np.asarray(center)).values)
    top = a.max()
    if top == 0:
        return 0.0
    h = grid.spacing
    bins = np.floor(grid.radius / h + 0.5).astype(int).ravel()
    sums = np.bincount(bins, weights=a.ravel())
    counts = np.bincount(bins)
    keep = counts > 0
    means = sums[keep] / counts[keep]
    # bins past the box inscribed sphere see the corners only
    radii = np.nonzero(keep)[0] * h
    means = means[(radii <= grid.half_width) & (means > STRUCTURE_FLOOR * top)]
    if means.size < 2:
        return 0.0
    rises = np.diff(means) > 1e-9 * top
    return float(np.count_nonzero(rises) / (means.size - 1))


def positivity(u: np.ndarray) -> float:
    """``min Re(e^{-i theta} u) / max|u|`` over the support ``|u| > floor * max|u|``."""
    a = np.abs(u)
    top = a.max()
    if top == 0:
        return 0.0
    mask = a > STRUCTURE_FLOOR * top
    real = (u * np.exp(-1j * _mean_phase(u))).real
    return float(real[mask].min() / top)


def check_minimizer_structure(result: MinimizeResult) -> StructureReport:
    """Constant phase, common center, radial monotonicity and positivity of a minimizer."""
    if result.status is not Status.CONVERGED:
        raise NotConverged(f"structure check needs a converged minimizer, got {result.status}")
    return structure_report(result.pair)


def structure_report(pair: FieldPair) -> StructureReport:
    grid = pair.grid
    U = stack(pair)
    centers = [_center(grid, np.abs(U[i]) ** 2) for i in (0, 1)]
    return StructureReport(
        phase_deviation=(phase_deviation(U[0]), phase_deviation(U[1])),
        centers=(tuple(map(float, centers[0])), tuple(map(float, centers[1]))),
        center_offset=_periodic_gap(grid, centers[0], centers[1]),
        unimodality_violation=tuple(unimodality_violation(grid, U[i], centers[i]) for i in (0, 1)),
        positivity=(positivity(U[0]), positivity(U[1])),
        spacing=grid.spacing,
    )
