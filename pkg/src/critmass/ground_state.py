"""Scalar Gagliardo-Nirenberg extremals by radial shooting.

For an exponent ``p > 2`` the optimizer ``Q_p`` of the GN inequality is the
positive radial solution of::

    -c (Q'' + (N-1)/r Q') + w Q = Q^(p-1),
    c = N(p-2)/4,   w = 1 - (N-2)(p-2)/4.

We shoot on ``Q(0)``: an overshoot crosses zero, an undershoot turns back up
before crossing. Bisection pins ``Q(0)`` to round-off, after which the
trajectory is trusted down to ``match_level * Q(0)`` and continued by the
decaying solution of the linearised equation (a modified Bessel function).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, interpolate, optimize, special

from .errors import DomainEscape, ExponentMismatch, InvalidParams, NoConvergence, ZeroField
from .fields import Field, Grid, kinetic, lp_integral, mass

R_START = 1e-8
TAIL_FLOOR = 1e-14
MATCH_LEVEL = 1e-6
COARSE_RTOL = 1e-10
COARSE_WIDTH = 1e-9


def _sphere_area(dim: int) -> float:
    # surface measure of the unit sphere; for N=1 the two half-lines
    return 2.0 * np.pi ** (dim / 2) / special.gamma(dim / 2)


def critical_exponent(dim: int) -> float:
    return 2.0 + 4.0 / dim


@dataclass(frozen=True)
class GroundStateQ:
    dim: int
    exponent: float
    radial_profile: np.ndarray = field(repr=False)
    mass: float
    kinetic: float
    potential: float
    gn_constant: float
    residual: float = 0.0

    @property
    def center_value(self) -> float:
        return float(self.radial_profile[0, 1])

    @property
    def is_mass_critical(self) -> bool:
        return abs(self.exponent - critical_exponent(self.dim)) < 1e-12

    @property
    def r_max(self) -> float:
        return float(self.radial_profile[-1, 0])

    @cached_property
    def _interp(self):
        # even extension keeps Q'(0) = 0; a C^2 spline keeps spectral Laplacians clean
        r, q = self.radial_profile.T
        return interpolate.CubicSpline(np.concatenate([-r[:0:-1], r]), np.concatenate([q[:0:-1], q]))

    def __call__(self, r) -> np.ndarray:
        """Profile value at radius ``r`` (zero beyond the stored tail)."""
        r = np.abs(np.asarray(r, dtype=float))
        out = self._interp(np.minimum(r, self.r_max))
        return np.where(r >= self.r_max, 0.0, out)

    def summary(self) -> dict:
        return {
            "dim": self.dim,
            "p": self.exponent,
            "mass": self.mass,
            "kinetic": self.kinetic,
            "gn_constant": self.gn_constant,
        }


def _coefficients(dim: int, p: float) -> tuple[float, float]:
    c = dim * (p - 2.0) / 4.0
    w = 1.0 - (dim - 2) * (p - 2.0) / 4.0
    return c, w


def _validate_exponent(dim: int, p: float) -> None:
    if dim < 1:
        raise InvalidParams(f"dimension must be >= 1, got {dim}")
    if not p > 2:
        raise InvalidParams(f"exponent must exceed 2, got {p}")
    if dim >= 3 and not p < 2.0 * dim / (dim - 2):
        raise InvalidParams(f"exponent {p} is not Sobolev-subcritical in dimension {dim}")


class _Shooter:
    def __init__(self, dim, p, rtol, max_step):
        self.dim = dim
        self.p = p
        self.c, self.w = _coefficients(dim, p)
        self.kappa = np.sqrt(self.w / self.c)
        self.rtol = rtol
        self.max_step = max_step
        self.area = _sphere_area(dim)
        # far enough that every trajectory decides before reaching it
        self.r_far = 60.0 / self.kappa

    def rhs(self, r, y):
        q, dq = y
        d2q = (self.w * q - abs(q) ** (self.p - 2) * q) / self.c - (self.dim - 1) / r * dq
        return [dq, d2q]

    def start(self, q0):
        # Taylor start: Q''(0) = (w Q0 - Q0^(p-1)) / (c N)
        q2 = (self.w * q0 - q0 ** (self.p - 1)) / (self.c * self.dim)
        r0 = R_START
        return r0, [q0 + 0.5 * q2 * r0**2, q2 * r0]

    def solve(self, q0, events=None, r_end=None, dense=True, rtol=None):
        r0, y0 = self.start(q0)
        return integrate.solve_ivp(
            self.rhs,
            (r0, r_end or self.r_far),
            y0,
            method="DOP853",
            rtol=rtol or self.rtol,
            atol=1e-16,
            max_step=self.max_step,
            events=events,
            dense_output=dense,
        )

    def classify(self, q0, rtol=None) -> int:
        """+1 for overshoot (zero crossing), -1 for undershoot (turns up)."""

        def crossing(r, y):
            return y[0]

        crossing.terminal = True
        crossing.direction = -1

        def turning(r, y):
            return y[1]

        turning.terminal = True
        turning.direction = 1

        sol = self.solve(q0, events=[crossing, turning], dense=False, rtol=rtol)
        if sol.t_events[0].size:
            return 1
        if sol.t_events[1].size:
            return -1
        # reached r_far without deciding: treat by sign of the tail
        return 1 if sol.y[0, -1] < 0 else -1


def solve_q(
    dim: int,
    exponent: float | None = None,
    tol: float = 1e-8,
    bracket: tuple[float, float] = (0.1, 20.0),
    rtol: float = 1e-12,
    max_step: float = np.inf,
    samples_per_length: int = 400,
) -> GroundStateQ:
    """Positive radial solution ``Q_p`` together with its integrals.

    Parameters
    ----------
    dim : int
        Spatial dimension N.
    exponent : float, optional
        GN exponent p; defaults to the mass-critical ``2 + 4/N``.
    tol : float
        Bound on the sup-norm of the ODE residual (relative to ``Q(0)^(p-1)``).
    bracket : tuple
        Initial search interval for ``Q(0)``; widened automatically on failure.
    rtol, max_step
        Integrator controls.
    samples_per_length : int
        Radial samples per decay length ``1/kappa`` in the stored profile.
    """
    p = critical_exponent(dim) if exponent is None else float(exponent)
    _validate_exponent(dim, p)
    if not tol > 0:
        raise ValueError("tol must be positive")
    sh = _Shooter(dim, p, rtol, max_step)

    lo, hi = bracket
    for _ in range(8):
        if sh.classify(lo) < 0 and sh.classify(hi) > 0:
            break
        lo, hi = lo / 4.0, hi * 4.0
    else:
        raise NoConvergence(f"could not bracket Q(0) for N={dim}, p={p}")

    # coarse bisection at a cheaper integrator tolerance
    while hi - lo > COARSE_WIDTH * lo:
        mid = 0.5 * (lo + hi)
        if sh.classify(mid, rtol=COARSE_RTOL) > 0:
            hi = mid
        else:
            lo = mid
    q0 = _refine(sh, lo, hi)
    def matched(r, y):
        return y[0] - MATCH_LEVEL * q0

    matched.terminal = True
    matched.direction = -1
    sol = sh.solve(q0, events=[matched])
    if not sol.t_events[0].size:
        raise NoConvergence("shooting trajectory never decayed to the matching level")
    r_m = float(sol.t_events[0][0])
    y_m = sol.y_events[0][0]

    dr = 1.0 / (sh.kappa * samples_per_length)
    r_core = np.arange(0.0, r_m, dr)
    r_core[0] = R_START
    core = sol.sol(r_core)
    q_core = core[0]

    nu = (dim - 2) / 2.0

    def tail_shape(r):
        # r^{-nu} K_nu(kappa r), scaled by e^{kappa r_m} to avoid underflow
        return r ** (-nu) * special.kve(nu, sh.kappa * r) * np.exp(-sh.kappa * (r - r_m))

    # extend until Q drops below TAIL_FLOOR * Q(0)
    r_stop = r_m + np.log(MATCH_LEVEL / TAIL_FLOOR) / sh.kappa * 1.05 + 5 * dr
    r_tail = np.arange(r_core[-1] + dr, r_stop, dr)
    scale = y_m[0] / tail_shape(r_m)
    q_tail = scale * tail_shape(r_tail)

    r_all = np.concatenate([r_core, r_tail])
    q_all = np.concatenate([q_core, q_tail])
    r_all[0] = 0.0

    dq_core = core[1]
    dq_tail = scale * _tail_derivative(tail_shape, r_tail, dr)
    dq_all = np.concatenate([dq_core, dq_tail])
    wt = sh.area * r_all ** (dim - 1)
    m_int = integrate.simpson(wt * q_all**2, x=r_all)
    k_int = integrate.simpson(wt * dq_all**2, x=r_all)
    s_int = integrate.simpson(wt * np.abs(q_all) ** p, x=r_all)

    residual = _ode_residual(sh, sol, r_core[r_core > 10 * dr], q0)
    if residual > tol:
        raise NoConvergence(f"ODE residual {residual:.2e} exceeds tol {tol:.2e}")

    return GroundStateQ(
        dim=dim,
        exponent=p,
        radial_profile=np.column_stack([r_all, q_all]),
        mass=float(m_int),
        kinetic=float(k_int),
        potential=float(s_int),
        gn_constant=float(p / (2.0 * m_int ** ((p - 2.0) / 2.0))),
        residual=float(residual),
    )


def _tail_derivative(shape, r, dr):
    h = 1e-3 * dr
    return (shape(r + h) - shape(r - h)) / (2 * h)


def _ode_residual(sh: _Shooter, sol, r: np.ndarray, q0: float) -> float:
    """Sup of the equation residual with Q'' from a 5-point stencil on the dense Q'."""
    eta = 1e-3 / sh.kappa
    r = r[(r > 2 * eta) & (r < sol.t[-1] - 2 * eta)]
    dq = lambda s: sol.sol(s)[1]  # noqa: E731
    d2q = (-dq(r + 2 * eta) + 8 * dq(r + eta) - 8 * dq(r - eta) + dq(r - 2 * eta)) / (12 * eta)
    q = sol.sol(r)[0]
    res = -sh.c * (d2q + (sh.dim - 1) / r * dq(r)) + sh.w * q - np.abs(q) ** (sh.p - 2) * q
    return float(np.max(np.abs(res)) / q0 ** (sh.p - 1))


def _refine(sh: _Shooter, lo: float, hi: float) -> float:
    """Pin Q(0) inside a tight bracket by matching to the decaying linear tail.

    At a radius where Q ~ MATCH_LEVEL * Q(0) the nonlinearity is negligible,
    so the true profile has the log-derivative of ``r^-nu K_nu(kappa r)``.
    The mismatch is continuous in Q(0), unlike the bisection verdict.
    """

    def level(r, y):
        return y[0] - 1e-3 * lo

    level.terminal = True
    level.direction = -1
    sol = sh.solve(lo, events=[level], dense=False)
    if not sol.t_events[0].size:
        return _bisect(sh, lo, hi)
    r_match = float(sol.t_events[0][0]) + np.log(1e-3 / MATCH_LEVEL) / sh.kappa
    nu = (sh.dim - 2) / 2.0
    z = sh.kappa * r_match
    log_slope = -sh.kappa * special.kve(nu + 1, z) / special.kve(nu, z)

    def mismatch(q0):
        y = sh.solve(q0, r_end=r_match, dense=False).y[:, -1]
        return y[1] - log_slope * y[0]

    f_lo, f_hi = mismatch(lo), mismatch(hi)
    if np.sign(f_lo) == np.sign(f_hi):
        return _bisect(sh, lo, hi)
    return optimize.brentq(mismatch, lo, hi, xtol=1e-15 * lo, rtol=4 * np.finfo(float).eps)


def _bisect(sh: _Shooter, lo: float, hi: float) -> float:
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if sh.classify(mid) > 0:
            hi = mid
        else:
            lo = mid
    return lo


def critical_masses(params, q: GroundStateQ) -> tuple[float, float]:
    """Critical masses ``mu_i^{-N/2} ||Q||_2^2``."""
    if q.dim != params.dim or not q.is_mass_critical:
        raise ExponentMismatch(
            f"need the mass-critical profile (p={critical_exponent(params.dim)}) "
            f"in dimension {params.dim}, got N={q.dim}, p={q.exponent}"
        )
    n = params.dim
    return params.mu1 ** (-n / 2) * q.mass, params.mu2 ** (-n / 2) * q.mass


def sample_profile(q: GroundStateQ, grid: Grid, amplitude=1.0, stretch=1.0, tol=1e-6) -> Field:
    """Field ``amplitude * Q(stretch * |x|)`` on ``grid``, checked against the box faces."""
    if grid.dim != q.dim:
        raise ValueError(f"grid dimension {grid.dim} does not match profile dimension {q.dim}")
    f = Field(grid, amplitude * q(stretch * grid.radius))
    edge = float(q(stretch * grid.half_width)) / q.center_value
    if edge > tol:
        raise DomainEscape(
            f"profile amplitude {edge:.2e} (relative) at the box faces exceeds {tol:.0e}"
        )
    return f


def rescaled_ground_state(q: GroundStateQ, mu: float, grid: Grid, tol: float = 1e-6) -> Field:
    """Sample ``mu^{-N/4} Q(|x|)``, the ground state carrying the critical mass for ``mu``."""
    if not q.is_mass_critical:
        raise ExponentMismatch("rescaled ground states use the mass-critical profile")
    return sample_profile(q, grid, amplitude=mu ** (-q.dim / 4.0), tol=tol)


def gn_deficit(f: Field, q: GroundStateQ) -> float:
    """RHS minus LHS of the sharp GN inequality for exponent ``q.exponent``."""
    if f.grid.dim != q.dim:
        raise ValueError("field and profile dimensions differ")
    m = mass(f)
    if m == 0:
        raise ZeroField("GN deficit is undefined for the zero field")
    p, n = q.exponent, q.dim
    theta = n * (p - 2.0) / 4.0
    rhs = q.gn_constant * kinetic(f) ** theta * m ** (p / 2.0 - theta)
    return rhs - lp_integral(f, p)
