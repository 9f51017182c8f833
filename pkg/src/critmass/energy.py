"""Energy functional of the coupled mass-critical system and its derivatives.

``J(u1, u2) = 1/2 sum K_i - N/(2N+4) sum mu_i P_i - beta C`` with kinetic
terms ``K_i = int |grad u_i|^2``, potential terms ``P_i = int |u_i|^(2+4/N)``
and coupling ``C = int |u1|^r1 |u2|^r2``.

Array-level helpers take a stacked array ``U`` of shape ``(2, n, ..., n)`` so
the solvers can transform both components in one FFT call.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidParams, ZeroMass
from .fields import FieldPair, Grid, rescale_conformal

SINGULAR_FLOOR = 1e-12


@dataclass(frozen=True)
class SystemParams:
    dim: int
    mu1: float
    mu2: float
    beta: float
    r1: float
    r2: float

    def __post_init__(self):
        for name in ("mu1", "mu2", "beta", "r1", "r2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for clause in self.violations():
            raise InvalidParams(f"parameter assumption violated: {clause}")

    def violations(self) -> list[str]:
        out = []
        if not (isinstance(self.dim, (int, np.integer)) and self.dim >= 1):
            out.append(f"N >= 1 (got N={self.dim})")
        elif self.dim > 3:
            out.append(f"N in {{1, 2, 3}} for this toolkit (got N={self.dim})")
        for name in ("mu1", "mu2"):
            if not getattr(self, name) > 0:
                out.append(f"{name} > 0 (got {getattr(self, name)})")
        # beta = 0 is admitted as the decoupled reference case
        if not self.beta >= 0:
            out.append(f"beta > 0 (got {self.beta})")
        for name in ("r1", "r2"):
            if not getattr(self, name) > 1:
                out.append(f"{name} > 1 (got {getattr(self, name)})")
        if not out and not self.r1 + self.r2 < 2 + 4 / self.dim:
            out.append(f"r1 + r2 < 2 + 4/N (got r1 + r2 = {self.r1 + self.r2}, 2 + 4/N = {2 + 4 / self.dim})")
        return out

    @property
    def p_crit(self) -> float:
        return 2.0 + 4.0 / self.dim

    @property
    def coupling_scaling(self) -> float:
        """Exponent of t in the coupling term under ``u -> t^{N/2} u(t x)``."""
        return self.dim * (self.r1 + self.r2 - 2.0) / 2.0

    def satisfies_a1(self) -> bool:
        return _satisfies_extra(self.dim, self.r1, self.r2)

    def satisfies_a2(self) -> bool:
        return _satisfies_extra(self.dim, self.r2, self.r1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemParams":
        allowed = {"dim", "mu1", "mu2", "beta", "r1", "r2"}
        unknown = set(data) - allowed
        if unknown:
            raise InvalidParams(f"unknown parameter key(s): {', '.join(sorted(unknown))}")
        missing = allowed - set(data)
        if missing:
            raise InvalidParams(f"missing parameter key(s): {', '.join(sorted(missing))}")
        return cls(int(data["dim"]), data["mu1"], data["mu2"], data["beta"], data["r1"], data["r2"])

    @classmethod
    def from_json(cls, path) -> "SystemParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _satisfies_extra(dim: int, r_own: float, r_other: float) -> bool:
    # (A1) reads with (r_own, r_other) = (r1, r2); (A2) swaps them
    if r_other >= 2:
        return False
    if dim <= 2:
        return True
    return 2 * r_own / (2 - r_other) <= 2 * dim / (dim - 2)


@dataclass(frozen=True)
class MassConstraint:
    a1: float
    a2: float

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > 0):
            raise InvalidParams(f"masses must be positive, got ({self.a1}, {self.a2})")
        object.__setattr__(self, "a1", float(self.a1))
        object.__setattr__(self, "a2", float(self.a2))

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2])


@dataclass(frozen=True)
class Multipliers:
    lambda1: float
    lambda2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2])


# -- stacked-array kernels ----------------------------------------------------


def _axes(grid: Grid) -> tuple[int, ...]:
    return tuple(range(1, grid.dim + 1))


def stack(pair: FieldPair) -> np.ndarray:
    return np.stack([pair.first.values, pair.second.values])


def unstack(grid: Grid, U: np.ndarray) -> FieldPair:
    return FieldPair.from_arrays(grid, U[0], U[1])


def masses_of(grid: Grid, U: np.ndarray) -> np.ndarray:
    return grid.cell_volume * np.sum(np.abs(U) ** 2, axis=_axes(grid))


def kinetics_of(grid: Grid, Uh: np.ndarray) -> np.ndarray:
    """Per-component kinetic energies from the stacked spectra ``Uh``."""
    n_tot = grid.points_per_axis**grid.dim
    return grid.cell_volume * np.sum(grid.k_squared * np.abs(Uh) ** 2, axis=_axes(grid)) / n_tot


def singular_power(u: np.ndarray, r: float) -> np.ndarray:
    """``|u|^(r-2) u`` with values below ``SINGULAR_FLOOR * max|u|`` mapped to 0."""
    a = np.abs(u)
    top = a.max()
    if r >= 2 or top == 0:
        return a ** (r - 2) * u
    mask = a > SINGULAR_FLOOR * top
    out = np.zeros_like(u)
    out[mask] = a[mask] ** (r - 2) * u[mask]
    return out


@dataclass
class Terms:
    """Integrals entering J for one state."""

    kinetic: np.ndarray  # (K1, K2)
    potential: np.ndarray  # (P1, P2)
    coupling: float
    mass: np.ndarray

    def energy(self, params: SystemParams) -> float:
        n = params.dim
        mu = np.array([params.mu1, params.mu2])
        return float(
            0.5 * self.kinetic.sum()
            - n / (2 * n + 4) * np.dot(mu, self.potential)
            - params.beta * self.coupling
        )


def terms_of(grid: Grid, U: np.ndarray, params: SystemParams, Uh=None) -> Terms:
    if Uh is None:
        Uh = np.fft.fftn(U, axes=_axes(grid))
    A = np.abs(U)
    dv = grid.cell_volume
    pot = dv * np.sum(A ** params.p_crit, axis=_axes(grid))
    coup = dv * float(np.sum(A[0] ** params.r1 * A[1] ** params.r2))
    return Terms(kinetics_of(grid, Uh), pot, coup, dv * np.sum(A**2, axis=_axes(grid)))


def nonlinear_forces(U: np.ndarray, params: SystemParams) -> np.ndarray:
    """``mu_i |u_i|^{4/N} u_i + beta r_i |u_i|^{r_i-2} u_i |u_j|^{r_j}`` per component."""
    A = np.abs(U)
    F = np.empty_like(U)
    F[0] = params.mu1 * A[0] ** (4.0 / params.dim) * U[0]
    F[1] = params.mu2 * A[1] ** (4.0 / params.dim) * U[1]
    if params.beta:
        F[0] += params.beta * params.r1 * singular_power(U[0], params.r1) * A[1] ** params.r2
        F[1] += params.beta * params.r2 * singular_power(U[1], params.r2) * A[0] ** params.r1
    return F


def laplacian_of(grid: Grid, Uh: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(-grid.k_squared * Uh, axes=_axes(grid))


def gradient_of(grid: Grid, U: np.ndarray, params: SystemParams, Uh=None) -> np.ndarray:
    if Uh is None:
        Uh = np.fft.fftn(U, axes=_axes(grid))
    return -laplacian_of(grid, Uh) - nonlinear_forces(U, params)


def multipliers_of(terms: Terms, params: SystemParams) -> np.ndarray:
    if np.any(terms.mass == 0):
        raise ZeroMass("multipliers need both components to carry mass")
    mu = np.array([params.mu1, params.mu2])
    r = np.array([params.r1, params.r2])
    return (-terms.kinetic + mu * terms.potential + params.beta * r * terms.coupling) / terms.mass


def residual_of(grid: Grid, U: np.ndarray, params: SystemParams, lam, Uh=None) -> float:
    """Relative L2 norm of the Euler-Lagrange residual (see ``stationarity_residual``)."""
    if Uh is None:
        Uh = np.fft.fftn(U, axes=_axes(grid))
    lap = laplacian_of(grid, Uh)
    F = nonlinear_forces(U, params)
    lam = np.asarray(lam, dtype=float).reshape((2,) + (1,) * grid.dim)
    R = -lap + lam * U - F
    scale = np.sum(np.abs(lap) ** 2) + np.sum(np.abs(lam * U) ** 2) + np.sum(np.abs(F) ** 2)
    if scale == 0:
        return 0.0
    return float(np.sqrt(np.sum(np.abs(R) ** 2) / scale))


def pohozaev_of(terms: Terms, params: SystemParams) -> tuple[float, float]:
    """Pohozaev mismatch and the sum of magnitudes of its three terms."""
    n = params.dim
    mu = np.array([params.mu1, params.mu2])
    lhs = 0.5 * terms.kinetic.sum()
    pot = n / (2 * n + 4) * np.dot(mu, terms.potential)
    coup = n * (params.r1 + params.r2 - 2) / 4 * params.beta * terms.coupling
    return float(lhs - pot - coup), float(abs(lhs) + abs(pot) + abs(coup))


# -- public operations -------------------------------------------------------


def energy(pair: FieldPair, params: SystemParams) -> float:
    """The functional J evaluated on ``pair``."""
    return terms_of(pair.grid, stack(pair), params).energy(params)


def coupling(pair: FieldPair, params: SystemParams) -> float:
    """``int |u1|^r1 |u2|^r2`` (without the factor beta)."""
    return terms_of(pair.grid, stack(pair), params).coupling


def gradient(pair: FieldPair, params: SystemParams) -> FieldPair:
    """Unconstrained L2 gradient of J w.r.t. the real inner product ``Re int f conj(g)``."""
    return unstack(pair.grid, gradient_of(pair.grid, stack(pair), params))


def extract_multipliers(pair: FieldPair, params: SystemParams) -> Multipliers:
    """Lagrange multipliers from projecting the Euler-Lagrange equations onto each ``u_i``."""
    lam = multipliers_of(terms_of(pair.grid, stack(pair), params), params)
    return Multipliers(float(lam[0]), float(lam[1]))


def stationarity_residual(pair: FieldPair, params: SystemParams, multipliers: Multipliers) -> float:
    """Relative residual of the elliptic system.

    ``||R|| / sqrt(sum_i ||Lap u_i||^2 + ||lambda_i u_i||^2 + ||F_i||^2)`` where
    ``R_i = -Lap u_i + lambda_i u_i - F_i`` and ``F_i`` collects the nonlinear forces.
    """
    return residual_of(pair.grid, stack(pair), params, multipliers.as_array())


def pohozaev_residual(pair: FieldPair, params: SystemParams, relative: bool = False) -> float:
    """LHS minus RHS of the Pohozaev identity.

    With ``relative=True`` the mismatch is divided by the sum of the absolute
    values of the three terms.
    """
    res, scale = pohozaev_of(terms_of(pair.grid, stack(pair), params), params)
    if relative:
        return res / scale if scale else 0.0
    return res


def rescale_pair(pair: FieldPair, t: float, tol: float = 1e-6) -> FieldPair:
    return pair.map(lambda f: rescale_conformal(f, t, tol=tol))
