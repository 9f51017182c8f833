"""Concentration of minimizers as the masses approach the critical pair.

Each minimizer is zoomed by ``eps = (K1 + K2)^(-1/2)`` so that the rescaled
pair has unit total kinetic energy, and the rescaled pair is compared with
the limiting profiles ``mu^(-N/4) alpha^(N/4) Q(alpha^(1/2) x)`` where
``alpha_i = eps^2 lambda_i N / 2``.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import _h1_distance, align_pair
from .energy import MassConstraint, SystemParams, stack, terms_of
from .errors import InvalidParams, ZeroKinetic
from .fields import Field, FieldPair, Grid, resample
from .ground_state import GroundStateQ, critical_masses, sample_profile
from .minimize import MinimizeOptions, Status, critical_profile, minimize

# zoom boxes extend this many decay lengths of the limiting profile
ZOOM_DECAY = 18.0

RECORD_COLUMNS = (
    "a1", "a2", "status", "value", "epsilon", "lambda1", "lambda2",
    "rescaled_lambda1", "rescaled_lambda2", "alpha1", "alpha2",
    "multiplier_identity_gap", "potential_sum", "potential_gap", "coupling_decay",
    "profile_error1", "profile_error2", "box_half_width",
)


@dataclass
class ConcentrationRecord:
    masses: MassConstraint
    status: Status
    value: float
    epsilon: float
    multipliers: tuple[float, float]
    rescaled_multipliers: tuple[float, float]
    alpha: tuple[float, float]
    multiplier_identity_gap: float
    potential_sum: float
    potential_gap: float
    coupling_decay: float
    profile_errors: tuple[float, float] | None
    box_half_width: float
    aligned: FieldPair | None = field(default=None, repr=False)
    predicted: FieldPair | None = field(default=None, repr=False)

    def row(self) -> dict:
        errs = self.profile_errors or (float("nan"), float("nan"))
        return {
            "a1": self.masses.a1, "a2": self.masses.a2, "status": str(self.status),
            "value": self.value, "epsilon": self.epsilon,
            "lambda1": self.multipliers[0], "lambda2": self.multipliers[1],
            "rescaled_lambda1": self.rescaled_multipliers[0],
            "rescaled_lambda2": self.rescaled_multipliers[1],
            "alpha1": self.alpha[0], "alpha2": self.alpha[1],
            "multiplier_identity_gap": self.multiplier_identity_gap,
            "potential_sum": self.potential_sum, "potential_gap": self.potential_gap,
            "coupling_decay": self.coupling_decay,
            "profile_error1": errs[0], "profile_error2": errs[1],
            "box_half_width": self.box_half_width,
        }


def epsilon_of(pair: FieldPair) -> float:
    """``(int |grad u1|^2 + int |grad u2|^2)^(-1/2)``."""
    grid = pair.grid
    k = terms_of(grid, stack(pair), _PLAIN[grid.dim]).kinetic.sum()
    if not k > 0:
        raise ZeroKinetic("epsilon needs a positive total kinetic energy")
    return float(k**-0.5)


# any valid parameter set will do for pulling kinetic terms out of terms_of
_PLAIN = {n: SystemParams(n, 1.0, 1.0, 0.0, 1.5, 1.5) for n in (1, 2, 3)}


def rescale_to_unit(pair: FieldPair, grid: Grid | None = None, tol: float = 1e-6) -> FieldPair:
    """``(eps^(N/2) u1(eps x), eps^(N/2) u2(eps x))``, with unit total kinetic energy.

    The zoom is exact: the samples are kept and the box is stretched by
    ``1/eps``. With ``grid`` given, the result is then resampled onto it.
    """
    eps = epsilon_of(pair)
    src = pair.grid
    zoom = Grid(src.dim, src.points_per_axis, src.half_width / eps)
    amp = eps ** (src.dim / 2)
    out = FieldPair.from_arrays(zoom, amp * pair.first.values, amp * pair.second.values)
    if grid is not None:
        out = out.map(lambda f: resample(f, grid, tol=tol))
    return out


def predicted_profile(q: GroundStateQ, mu_i: float, alpha_i: float, grid: Grid, tol: float = 1e-6) -> Field:
    """``mu^(-N/4) alpha^(N/4) Q(alpha^(1/2) |x|)`` sampled on ``grid``."""
    if not alpha_i > 0:
        raise InvalidParams(f"alpha must be positive, got {alpha_i}")
    n = q.dim
    amp = mu_i ** (-n / 4) * alpha_i ** (n / 4)
    return sample_profile(q, grid, amplitude=amp, stretch=np.sqrt(alpha_i), tol=tol)


def limiting_alpha(params: SystemParams, q: GroundStateQ) -> float:
    """Common value of alpha when both rescaled multipliers agree in the limit."""
    stars = critical_masses(params, q)
    return 1.0 / (stars[0] + stars[1])


def zoom_grid(params: SystemParams, q: GroundStateQ, points_per_axis: int) -> Grid:
    """Box for the rescaled comparison, sized to the decay length of the limit profile."""
    decay = np.sqrt(2.0 * limiting_alpha(params, q) / params.dim)
    return Grid(params.dim, points_per_axis, ZOOM_DECAY / decay)


def geometric_sequence(params: SystemParams, steps: int = 6, final: float = 0.995,
                       first: float = 0.5) -> list[MassConstraint]:
    """Masses ``(1 - d_k) a*`` with ``d_k`` geometric from ``1 - first`` to ``1 - final``."""
    if steps < 2 or not 0 < first < final < 1:
        raise InvalidParams("need steps >= 2 and 0 < first < final < 1")
    stars = critical_masses(params, critical_profile(params.dim))
    gaps = np.geomspace(1 - first, 1 - final, steps)
    return [MassConstraint((1 - d) * stars[0], (1 - d) * stars[1]) for d in gaps]


def dyadic_sequence(params: SystemParams, steps: int = 6) -> list[MassConstraint]:
    """Masses ``(1 - 2^-k) a*`` for ``k = 1..steps``."""
    stars = critical_masses(params, critical_profile(params.dim))
    return [MassConstraint((1 - 2.0**-k) * stars[0], (1 - 2.0**-k) * stars[1])
            for k in range(1, steps + 1)]


def _check_sequence(params, q, masses):
    stars = np.array(critical_masses(params, q))
    prev = None
    for m in masses:
        a = m.as_array()
        if np.any(a > stars * (1 + 1e-12)):
            raise InvalidParams(f"masses {tuple(a)} exceed the critical pair {tuple(stars)}")
        if np.allclose(a, stars, rtol=1e-12, atol=0):
            raise InvalidParams("the critical pair itself is excluded from the sequence")
        if prev is not None and not (np.all(a >= prev) and np.any(a > prev)):
            raise InvalidParams("mass sequence must increase toward the critical pair")
        prev = a
    return stars


def _deficit(m: MassConstraint, stars) -> float:
    return float(1.0 - (m.a1 + m.a2) / (stars[0] + stars[1]))


def make_record(params, q, result, zoom: Grid, tol: float = 1e-6) -> ConcentrationRecord:
    """Rescale, align and compare one minimizer with the predicted profiles."""
    pair = result.pair
    grid = pair.grid
    stars = critical_masses(params, q)
    lam = result.multipliers.as_array()
    eps = epsilon_of(pair)
    resc = eps**2 * lam
    alpha = resc * params.dim / 2
    gap = abs(stars[0] * resc[0] + stars[1] * resc[1] - 2.0 / params.dim)
    v = rescale_to_unit(pair)
    tv = terms_of(v.grid, stack(v), params)
    pot = float(params.mu1 * tv.potential[0] + params.mu2 * tv.potential[1])
    target = (params.dim + 2) / params.dim
    s = 2.0 - params.coupling_scaling
    record = ConcentrationRecord(
        masses=MassConstraint(*result.masses), status=result.status, value=result.value,
        epsilon=eps, multipliers=(float(lam[0]), float(lam[1])),
        rescaled_multipliers=(float(resc[0]), float(resc[1])),
        alpha=(float(alpha[0]), float(alpha[1])),
        multiplier_identity_gap=float(gap), potential_sum=pot,
        potential_gap=abs(pot - target), coupling_decay=float(eps**s * tv.coupling),
        profile_errors=None, box_half_width=grid.half_width,
    )
    if result.status is not Status.CONVERGED or np.any(alpha <= 0):
        return record
    v = v.map(lambda f: resample(f, zoom, tol=tol))
    pred = FieldPair(predicted_profile(q, params.mu1, alpha[0], zoom, tol),
                     predicted_profile(q, params.mu2, alpha[1], zoom, tol))
    aligned = align_pair(v, pred).pair
    P = stack(pred)
    errs = _h1_distance(zoom, stack(aligned), P) / _h1_distance(zoom, P, np.zeros_like(P))
    record.profile_errors = (float(errs[0]), float(errs[1]))
    record.aligned = aligned
    record.predicted = pred
    return record


def concentration_run(
    params: SystemParams,
    mass_sequence: list[MassConstraint],
    grid: Grid,
    opts: MinimizeOptions | None = None,
    warm_start: bool = True,
    jobs: int = 1,
    tol: float = 1e-6,
) -> list[ConcentrationRecord]:
    """Minimize along ``mass_sequence`` and compare with the limiting profiles.

    With ``warm_start`` (default) the records are computed in order: each
    minimization starts from the previous minimizer, zoomed onto a box that
    shrinks with the predicted concentration rate ``eps ~ d^(1/s)`` where
    ``d`` is the relative mass deficit and ``s = 2 - N(r1+r2-2)/2``. Cold
    starts use ``grid`` for every record and may run on ``jobs`` threads.
    """
    if grid.dim != params.dim:
        raise InvalidParams(f"grid dimension {grid.dim} differs from N={params.dim}")
    opts = opts or MinimizeOptions()
    q = critical_profile(params.dim)
    stars = _check_sequence(params, q, mass_sequence)
    zoom = zoom_grid(params, q, grid.points_per_axis)
    rate = 1.0 / (2.0 - params.coupling_scaling)

    if not warm_start:
        def solve(m):
            return make_record(params, q, minimize(params, m, grid, opts), zoom, tol)

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            return list(pool.map(solve, mass_sequence))

    records = []
    prev = None
    for m in mass_sequence:
        box = grid
        initial = None
        if prev is not None:
            shrink = (_deficit(m, stars) / _deficit(prev.masses, stars)) ** rate
            eps_pred = prev.epsilon * shrink
            half = min(grid.half_width, zoom.half_width * eps_pred)
            box = Grid(grid.dim, grid.points_per_axis, half)
            # same samples on a smaller box: a mass-preserving zoom of the previous minimizer
            ratio = (prev_pair.grid.half_width / half) ** (grid.dim / 2)
            initial = FieldPair.from_arrays(box, ratio * prev_pair.first.values,
                                            ratio * prev_pair.second.values)
        result = minimize(params, m, box, opts, initial=initial)
        rec = make_record(params, q, result, zoom, tol)
        records.append(rec)
        prev, prev_pair = rec, result.pair
    return records


def tail_decreasing(values, tail: int = 3) -> bool:
    """True when the last ``tail`` entries are strictly decreasing."""
    v = np.asarray(values, dtype=float)[-tail:]
    return bool(np.all(np.isfinite(v)) and np.all(np.diff(v) < 0))


def records_to_csv(records: list[ConcentrationRecord], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS)
        w.writeheader()
        for r in records:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.row().items()})
    return path
