"""Discretized fields on periodic boxes.

A :class:`Grid` samples ``[-L, L)^N`` with ``n`` points per axis. All
differential operators are spectral (FFT based) and all integrals are the
plain box quadrature ``h^N * sum(...)``, which is spectrally accurate for
smooth, decaying profiles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DomainEscape, InvalidParams

FLD_SUFFIX = ".fld"


@dataclass(frozen=True)
class Grid:
    dim: int
    points_per_axis: int
    half_width: float

    def __post_init__(self):
        n = self.points_per_axis
        if self.dim not in (1, 2, 3):
            raise InvalidParams(f"dim must be 1, 2 or 3, got {self.dim}")
        if n < 8 or n & (n - 1):
            raise InvalidParams(f"points_per_axis must be a power of two >= 8, got {n}")
        if not self.half_width > 0:
            raise InvalidParams(f"half_width must be positive, got {self.half_width}")
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.points_per_axis)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c**2 for c in self.coords))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)

    @cached_property
    def k_squared(self) -> np.ndarray:
        ks = np.meshgrid(*([self.wavenumbers] * self.dim), indexing="ij")
        return sum(k**2 for k in ks)

    @property
    def k_max(self) -> float:
        return np.pi / self.spacing

    @cached_property
    def outer_mask(self) -> np.ndarray:
        """Points with ``max_i |x_i| > L/2`` (the outer shell of the box)."""
        return np.max(np.abs(np.stack(self.coords)), axis=0) > 0.5 * self.half_width

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
        return mask

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape, dtype=complex))

    def sample(self, func) -> "Field":
        """Field with values ``func(*coords)``."""
        return Field(self, np.asarray(func(*self.coords), dtype=complex))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "points_per_axis": self.points_per_axis,
            "half_width": self.half_width,
        }


@dataclass(frozen=True)
class Field:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        if vals.size != self.grid.points_per_axis**self.grid.dim:
            raise ValueError(
                f"expected {self.grid.points_per_axis**self.grid.dim} values, got {vals.size}"
            )
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __mul__(self, c) -> "Field":
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def __add__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field(self.grid, self.values - other.values)

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass(frozen=True)
class FieldPair:
    first: Field
    second: Field

    def __post_init__(self):
        _check_same_grid(self.first, self.second)

    @property
    def grid(self) -> Grid:
        return self.first.grid

    def __iter__(self):
        yield self.first
        yield self.second

    def __getitem__(self, i: int) -> Field:
        return (self.first, self.second)[i]

    def map(self, func) -> "FieldPair":
        return FieldPair(func(self.first), func(self.second))

    @classmethod
    def from_arrays(cls, grid: Grid, u1, u2) -> "FieldPair":
        return cls(Field(grid, u1), Field(grid, u2))


def _check_same_grid(f: Field, g: Field) -> None:
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")


# -- array level kernels (used in hot loops by the solvers) ------------------


def integral(grid: Grid, density: np.ndarray) -> float:
    return float(grid.cell_volume * np.sum(density).real)


def kinetic_array(grid: Grid, u: np.ndarray) -> float:
    uh = np.fft.fftn(u)
    return float(grid.cell_volume * np.sum(grid.k_squared * np.abs(uh) ** 2) / u.size)


def laplacian_array(grid: Grid, u: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(-grid.k_squared * np.fft.fftn(u))


def gradient_arrays(grid: Grid, u: np.ndarray) -> list[np.ndarray]:
    """Spectral partial derivatives of ``u`` along each axis."""
    uh = np.fft.fftn(u)
    k = grid.wavenumbers.copy()
    if grid.points_per_axis % 2 == 0:
        # odd derivative of the Nyquist mode is not representable
        k[grid.points_per_axis // 2] = 0.0
    out = []
    for ax in range(grid.dim):
        shape = [1] * grid.dim
        shape[ax] = -1
        out.append(np.fft.ifftn(1j * k.reshape(shape) * uh))
    return out


# -- public operations -------------------------------------------------------


def mass(f: Field) -> float:
    """Discrete ``int |f|^2 dx``."""
    return integral(f.grid, np.abs(f.values) ** 2)


def lp_integral(f: Field, p: float) -> float:
    """Discrete ``int |f|^p dx``."""
    return integral(f.grid, np.abs(f.values) ** p)


def kinetic(f: Field) -> float:
    """Discrete ``int |grad f|^2 dx`` via Fourier multipliers."""
    return kinetic_array(f.grid, f.values)


def spectral_mass(f: Field) -> float:
    """``mass`` computed on the Fourier side (Parseval)."""
    fh = np.fft.fftn(f.values)
    return float(f.grid.cell_volume * np.sum(np.abs(fh) ** 2) / f.values.size)


def h1_inner(f: Field, g: Field) -> float:
    """Real part of the H^1 inner product ``<f, g>_{L2} + <grad f, grad g>_{L2}``."""
    _check_same_grid(f, g)
    grid = f.grid
    fh = np.fft.fftn(f.values)
    gh = np.fft.fftn(g.values)
    s = np.sum((1.0 + grid.k_squared) * fh * np.conj(gh)).real
    return float(grid.cell_volume * s / fh.size)


def h1_norm(f: Field) -> float:
    return float(np.sqrt(max(h1_inner(f, f), 0.0)))


def boundary_amplitude(f: Field) -> float:
    """Max modulus on the box faces relative to the overall max (0 for a zero field)."""
    mod = f.modulus
    top = mod.max()
    if top == 0:
        return 0.0
    return float(mod[f.grid.boundary_mask].max() / top)


def outer_mass_fraction(f: Field) -> float:
    """Fraction of the mass sitting in the outer shell ``max_i |x_i| > L/2``."""
    dens = np.abs(f.values) ** 2
    total = dens.sum()
    if total == 0:
        return 0.0
    return float(dens[f.grid.outer_mask].sum() / total)


def _axis_evaluator(grid: Grid, points: np.ndarray) -> np.ndarray:
    """Matrix mapping DFT coefficients along one axis to interpolant values at ``points``.

    The Nyquist mode is evaluated as a cosine so the interpolant of real data
    stays real.
    """
    n = grid.points_per_axis
    k = grid.wavenumbers
    phase = np.exp(1j * np.outer(points + grid.half_width, k))
    nyq = n // 2
    phase[:, nyq] = np.cos(k[nyq] * (points + grid.half_width))
    return phase / n


def _evaluate_separable(grid: Grid, values: np.ndarray, points: list[np.ndarray]) -> np.ndarray:
    coeffs = np.fft.fftn(values)
    out = coeffs
    for ax, pts in enumerate(points):
        mat = _axis_evaluator(grid, pts)
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [ax])), 0, ax)
    return out


def rescale_conformal(f: Field, t: float, tol: float = 1e-6) -> Field:
    """Return ``t^{N/2} f(t x)``, the mass-preserving dilation.

    Values are obtained by evaluating the trigonometric interpolant of ``f``.
    Sample points ``t x`` falling outside the box are set to zero, which is
    only legitimate when ``f`` has decayed at the box faces.

    Raises
    ------
    DomainEscape
        If the rescaled profile does not fit the box (boundary amplitude or
        spectral content above ``tol`` relative to the peak).
    """
    if not t > 0:
        raise ValueError(f"scale factor must be positive, got {t}")
    grid = f.grid
    if t == 1.0:
        return Field(grid, f.values.copy())
    if t > 1.0:
        if boundary_amplitude(f) > tol:
            raise DomainEscape(
                f"profile not decayed at box faces (relative amplitude {boundary_amplitude(f):.2e})"
            )
        fh = np.abs(np.fft.fftn(f.values))
        kabs = np.sqrt(grid.k_squared)
        high = fh[kabs > grid.k_max / t]
        if high.size and high.max() > tol * fh.max():
            raise DomainEscape(f"zoom t={t:g} under-resolves the profile on this grid")
    pts = t * grid.axis
    vals = _evaluate_separable(grid, f.values, [pts] * grid.dim)
    outside = np.abs(pts) > grid.half_width
    if np.any(outside):
        for ax in range(grid.dim):
            idx = [slice(None)] * grid.dim
            idx[ax] = outside
            vals[tuple(idx)] = 0.0
    out = Field(grid, t ** (grid.dim / 2) * vals)
    if t < 1.0 and boundary_amplitude(out) > tol:
        raise DomainEscape(
            f"dilated profile reaches the box faces (relative amplitude {boundary_amplitude(out):.2e})"
        )
    return out


def resample(f: Field, grid: Grid, tol: float = 1e-6) -> Field:
    """Evaluate ``f`` on another grid of the same dimension (zero outside the old box)."""
    if grid.dim != f.grid.dim:
        raise ValueError("dimension mismatch")
    if grid == f.grid:
        return Field(grid, f.values.copy())
    pts = grid.axis
    inside = np.abs(pts) <= f.grid.half_width
    if not np.all(inside) and boundary_amplitude(f) > tol:
        raise DomainEscape("source profile not decayed at its box faces")
    vals = _evaluate_separable(f.grid, f.values, [pts] * grid.dim)
    for ax in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[ax] = ~inside
        vals[tuple(idx)] = 0.0
    return Field(grid, vals)


def translate(f: Field, shift) -> Field:
    """Periodic translation ``f(x - shift)`` through Fourier phase factors."""
    grid = f.grid
    shift = np.broadcast_to(np.asarray(shift, dtype=float), (grid.dim,))
    if not np.any(shift):
        return Field(grid, f.values.copy())
    fh = np.fft.fftn(f.values)
    nyq = grid.points_per_axis // 2
    for ax in range(grid.dim):
        k = grid.wavenumbers
        mult = np.exp(-1j * k * shift[ax])
        mult[nyq] = np.cos(k[nyq] * shift[ax])
        shape = [1] * grid.dim
        shape[ax] = -1
        fh = fh * mult.reshape(shape)
    return Field(grid, np.fft.ifftn(fh))


def best_translation_alignment(f: Field, g: Field) -> np.ndarray:
    """Shift ``y`` maximizing ``|<f, g(. - y)>|``, i.e. ``f ~ g(. - y)``.

    The grid-level maximizer of the circular cross-correlation is refined per
    axis by a three-point parabola through ``|corr|``.
    """
    _check_same_grid(f, g)
    grid = f.grid
    n = grid.points_per_axis
    corr = np.abs(np.fft.ifftn(np.fft.fftn(f.values) * np.conj(np.fft.fftn(g.values))))
    peak = np.unravel_index(np.argmax(corr), corr.shape)
    shift = np.zeros(grid.dim)
    for ax in range(grid.dim):
        lo = list(peak)
        hi = list(peak)
        lo[ax] = (peak[ax] - 1) % n
        hi[ax] = (peak[ax] + 1) % n
        c_lo, c_0, c_hi = corr[tuple(lo)], corr[peak], corr[tuple(hi)]
        denom = c_lo - 2.0 * c_0 + c_hi
        delta = 0.5 * (c_lo - c_hi) / denom if denom < 0 else 0.0
        m = peak[ax] if peak[ax] < n // 2 else peak[ax] - n
        shift[ax] = (m + delta) * grid.spacing
    return shift


def symmetric_decreasing_rearrangement(f: Field) -> Field:
    """Nonnegative equimeasurable rearrangement of ``|f|`` centred at the origin.

    Sorted moduli are assigned to grid points ordered by distance from the
    origin; equidistant points are taken in flat-index order.
    """
    grid = f.grid
    n = grid.points_per_axis
    offsets = np.indices(grid.shape).reshape(grid.dim, -1) - n // 2
    dist2 = np.sum(offsets.astype(np.int64) ** 2, axis=0)
    flat_index = np.arange(dist2.size)
    order = np.lexsort((flat_index, dist2))
    moduli = np.sort(np.abs(f.values).ravel())[::-1]
    out = np.empty(dist2.size)
    out[order] = moduli
    return Field(grid, out.reshape(grid.shape))


# -- .fld file format --------------------------------------------------------


def save_field(f: Field, path) -> Path:
    """Write ``f`` as a JSON header line followed by little-endian complex128 data."""
    path = Path(path)
    header = json.dumps(f.grid.to_dict()) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(f.values, dtype="<c16").tobytes())
    return path


def load_field(path) -> Field:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        data = fh.read()
    grid = Grid(int(header["dim"]), int(header["points_per_axis"]), float(header["half_width"]))
    vals = np.frombuffer(data, dtype="<c16").astype(complex)
    return Field(grid, vals.reshape(grid.shape))
