import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from critmass.errors import DomainEscape, InvalidParams
from critmass.fields import (
    Field,
    FieldPair,
    Grid,
    best_translation_alignment,
    boundary_amplitude,
    kinetic,
    load_field,
    mass,
    rescale_conformal,
    resample,
    save_field,
    spectral_mass,
    symmetric_decreasing_rearrangement,
    translate,
)

G16 = Grid(1, 1024, 16.0)


def gaussian(grid, center=0.0, width=1.0):
    return grid.sample(lambda *xs: np.exp(-sum((x - center) ** 2 for x in xs) / (2 * width**2)))


class TestGrid:
    def test_spacing_times_points(self):
        g = Grid(2, 64, 3.7)
        assert g.spacing * g.points_per_axis == pytest.approx(2 * g.half_width, rel=1e-15)

    @pytest.mark.parametrize("n", [4, 12, 100])
    def test_points_must_be_power_of_two(self, n):
        with pytest.raises(InvalidParams):
            Grid(1, n, 1.0)

    @pytest.mark.parametrize("dim", [0, 4])
    def test_dimension_range(self, dim):
        with pytest.raises(InvalidParams):
            Grid(dim, 16, 1.0)

    def test_axis_starts_at_minus_l(self):
        g = Grid(1, 8, 2.0)
        assert g.axis[0] == -2.0 and g.axis[-1] == pytest.approx(1.5)


class TestField:
    def test_rejects_non_finite(self):
        v = np.zeros(16)
        v[3] = np.nan
        with pytest.raises(ValueError):
            Field(Grid(1, 16, 1.0), v)

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            Field(Grid(1, 16, 1.0), np.zeros(15))

    def test_pair_needs_shared_grid(self):
        with pytest.raises(ValueError):
            FieldPair(Grid(1, 16, 1.0).zeros(), Grid(1, 16, 2.0).zeros())


class TestMass:
    def test_zero(self):
        assert mass(G16.zeros()) == 0.0

    def test_constant(self):
        g = Grid(2, 16, 1.5)
        f = Field(g, np.full(g.shape, 2 - 1j))
        assert mass(f) == pytest.approx(5 * 3.0**2, rel=1e-14)

    def test_gaussian_oracle(self):
        assert abs(mass(gaussian(G16)) - np.sqrt(np.pi)) < 1e-12

    def test_parseval(self, rng):
        g = Grid(2, 32, 2.0)
        f = Field(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
        assert spectral_mass(f) == pytest.approx(mass(f), rel=1e-12)


class TestKinetic:
    def test_constant(self):
        assert kinetic(Field(G16, np.ones(G16.shape))) == pytest.approx(0.0, abs=1e-20)

    def test_single_mode(self):
        L = G16.half_width
        f = G16.sample(lambda x: np.sin(np.pi * x / L))
        assert kinetic(f) == pytest.approx((np.pi / L) ** 2 * mass(f), rel=1e-12)

    def test_gaussian_oracle(self):
        # int (x e^{-x^2/2})^2 dx = sqrt(pi)/2
        assert abs(kinetic(gaussian(G16)) - np.sqrt(np.pi) / 2) < 1e-10

    def test_round_trip_transform(self, rng):
        v = rng.standard_normal(256) + 1j * rng.standard_normal(256)
        back = np.fft.ifft(np.fft.fft(v))
        assert np.max(np.abs(back - v)) / np.max(np.abs(v)) < 1e-13


class TestRescale:
    def test_identity(self):
        f = gaussian(G16)
        assert np.array_equal(rescale_conformal(f, 1.0).values, f.values)

    def test_mass_invariant(self):
        f = gaussian(G16)
        assert abs(mass(rescale_conformal(f, 2.0)) - mass(f)) < 1e-8

    @pytest.mark.parametrize("t", [0.5, 2.0])
    def test_kinetic_scaling(self, t):
        f = gaussian(G16)
        assert kinetic(rescale_conformal(f, t)) == pytest.approx(t**2 * kinetic(f), rel=1e-6)

    @given(st.floats(0.5, 2.0))
    @settings(max_examples=20, deadline=None)
    def test_inverse_round_trip(self, t):
        f = gaussian(G16, width=0.8)
        back = rescale_conformal(rescale_conformal(f, t), 1 / t)
        assert np.max(np.abs(back.values - f.values)) < 1e-7

    def test_dilation_escape(self):
        with pytest.raises(DomainEscape):
            rescale_conformal(gaussian(G16, width=3.0), 0.3)

    def test_zoom_under_resolved(self):
        g = Grid(1, 64, 16.0)
        with pytest.raises(DomainEscape):
            rescale_conformal(gaussian(g, width=0.6), 8.0)

    def test_resample_finer_grid(self):
        f = gaussian(Grid(1, 256, 12.0))
        fine = resample(f, Grid(1, 1024, 10.0))
        assert mass(fine) == pytest.approx(np.sqrt(np.pi), rel=1e-10)


class TestRearrangement:
    def test_fixes_symmetric_decreasing(self):
        g = Grid(1, 64, 8.0)
        f = gaussian(g)
        out = symmetric_decreasing_rearrangement(f)
        assert np.allclose(out.values, f.values, rtol=0, atol=1e-15)

    def test_mass_exact_and_idempotent(self, rng):
        g = Grid(2, 16, 2.0)
        f = Field(g, rng.standard_normal(g.shape))
        once = symmetric_decreasing_rearrangement(f)
        assert np.sort(np.abs(once.values.ravel())).tolist() == np.sort(np.abs(f.values.ravel())).tolist()
        assert np.array_equal(symmetric_decreasing_rearrangement(once).values, once.values)

    def test_kinetic_does_not_increase(self):
        f = gaussian(G16, center=3.3)
        assert kinetic(symmetric_decreasing_rearrangement(f)) <= kinetic(f) * (1 + 1e-12)


class TestTranslation:
    def test_zero_shift(self):
        f = gaussian(G16)
        assert np.max(np.abs(translate(f, 0.0).values - f.values)) < 1e-13

    def test_mass_preserved(self):
        f = gaussian(G16)
        assert abs(mass(translate(f, 1.37)) - mass(f)) < 1e-12

    def test_matches_shifted_samples(self):
        f = gaussian(G16)
        moved = translate(f, 1.25)
        assert np.max(np.abs(moved.values - gaussian(G16, center=1.25).values)) < 1e-12

    @given(st.floats(-4.0, 4.0))
    @settings(max_examples=25, deadline=None)
    def test_alignment_recovers_shift(self, y0):
        g = Grid(1, 256, 12.0)
        f = gaussian(g)
        assert abs(best_translation_alignment(translate(f, y0), f)[0] - y0) < g.spacing / 2

    def test_alignment_2d(self):
        g = Grid(2, 64, 8.0)
        f = gaussian(g)
        y = best_translation_alignment(translate(f, [0.7, -1.1]), f)
        assert np.allclose(y, [0.7, -1.1], atol=g.spacing / 2)


class TestFileFormat:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        g = Grid(2, 16, 3.25)
        f = Field(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
        back = load_field(save_field(f, tmp_path / "f.fld"))
        assert back.grid == g
        assert np.array_equal(back.values, f.values)

    def test_layout(self, tmp_path):
        g = Grid(1, 8, 1.0)
        f = Field(g, np.arange(8) + 0.5j)
        path = save_field(f, tmp_path / "f.fld")
        raw = path.read_bytes()
        header, body = raw.split(b"\n", 1)
        assert b'"points_per_axis": 8' in header
        data = np.frombuffer(body, dtype="<f8")
        assert data[:4].tolist() == [0.0, 0.5, 1.0, 0.5]


def test_boundary_amplitude():
    assert boundary_amplitude(gaussian(G16)) < 1e-50
    assert boundary_amplitude(Field(G16, np.ones(G16.shape))) == 1.0
