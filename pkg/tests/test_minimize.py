import numpy as np
import pytest
from scipy import integrate

from critmass.energy import MassConstraint, SystemParams, energy, stationarity_residual
from critmass.errors import InvalidParams, NotConverged, ZeroMass
from critmass.fields import Field, FieldPair, Grid, mass, translate
from critmass.minimize import (
    MinimizeOptions,
    Status,
    check_minimizer_structure,
    divergence_family_energy,
    minimize,
    project_masses,
    scan_m,
    structure_report,
)

FINE = Grid(1, 2048, 12.0)


def gaussian_pair(grid, a1=1.0, a2=1.0):
    g = grid.sample(lambda x: np.exp(-x**2 / 2))
    return project_masses(FieldPair(g, g), MassConstraint(a1, a2))


def frac(q, f1, f2=None):
    return MassConstraint(f1 * q.mass, (f1 if f2 is None else f2) * q.mass)


class TestProjectMasses:
    def test_already_on_sphere(self, grid1):
        pair = gaussian_pair(grid1, 0.7, 1.3)
        again = project_masses(pair, MassConstraint(0.7, 1.3))
        assert np.max(np.abs(again.first.values - pair.first.values)) < 1e-15
        assert np.max(np.abs(again.second.values - pair.second.values)) < 1e-15

    def test_scale_inversion(self, grid1):
        pair = gaussian_pair(grid1)
        doubled = FieldPair(pair.first * 2.0, pair.second)
        back = project_masses(doubled, MassConstraint(1.0, 1.0))
        assert np.max(np.abs(back.first.values - pair.first.values)) < 1e-15

    def test_random_input_masses(self, grid1, rng):
        vals = rng.standard_normal((2, 1024)) + 1j * rng.standard_normal((2, 1024))
        out = project_masses(FieldPair.from_arrays(grid1, *vals), MassConstraint(0.3, 2.0))
        assert mass(out.first) == pytest.approx(0.3, rel=1e-14)
        assert mass(out.second) == pytest.approx(2.0, rel=1e-14)

    def test_zero_component(self, grid1):
        with pytest.raises(ZeroMass):
            project_masses(FieldPair(gaussian_pair(grid1).first, grid1.zeros()), MassConstraint(1, 1))


class TestMinimize:
    def test_converged_reference(self, minimizer, params):
        assert minimizer.status is Status.CONVERGED
        assert minimizer.value < 0
        assert minimizer.grad_residual < 1e-6
        assert abs(minimizer.pohozaev) < 1e-6

    def test_result_invariants(self, minimizer, params, half_critical):
        assert minimizer.value == pytest.approx(energy(minimizer.pair, params), rel=1e-12)
        for got, want in zip(minimizer.masses, half_critical.as_array()):
            assert got == pytest.approx(want, rel=1e-12)

    def test_fixed_point_is_stationary(self, minimizer, params):
        res = stationarity_residual(minimizer.pair, params, minimizer.multipliers)
        assert res < 10 * MinimizeOptions().grad_tol

    def test_energy_monotone_along_flow(self, minimizer):
        e = np.asarray(minimizer.energies)
        assert np.all(np.diff(e) <= 1e-12 * np.abs(e[1:]))

    def test_decoupled_spreads(self, q1, grid1):
        p = SystemParams(1, 1, 1, 0, 1.5, 1.5)
        res = minimize(p, frac(q1, 0.5), grid1)
        assert res.status is Status.SPREAD
        # without coupling J > 0 below the critical masses, so the infimum 0 is approached from above
        assert 0 < res.value < 1e-3

    def test_supercritical_diverges(self, params, q1, grid1):
        res = minimize(params, frac(q1, 1.1, 0.5), grid1)
        assert res.status is Status.DIVERGENCE

    def test_deterministic(self, params, half_critical, grid1, minimizer):
        again = minimize(params, half_critical, grid1)
        assert again.value == minimizer.value and again.status is minimizer.status
        assert np.array_equal(again.pair.first.values, minimizer.pair.first.values)

    def test_translated_initial_guess(self, params, half_critical, grid1, minimizer):
        moved = FieldPair(translate(minimizer.pair.first, 3.1), translate(minimizer.pair.second, 3.1))
        noisy = FieldPair(moved.first * np.exp(0.3j), moved.second)
        res = minimize(params, half_critical, grid1, initial=gaussian_like(noisy))
        assert res.value == pytest.approx(minimizer.value, abs=2e-4 * abs(minimizer.value))

    def test_random_starts_agree(self, params, half_critical, grid1, minimizer):
        res = minimize(params, half_critical, grid1, MinimizeOptions(restarts=3, seed=7))
        assert res.value == pytest.approx(minimizer.value, rel=1e-6)

    def test_grid_dimension_mismatch(self, params, half_critical):
        with pytest.raises(InvalidParams):
            minimize(params, half_critical, Grid(2, 32, 8.0))

    @pytest.mark.parametrize("kw", [dict(step=0), dict(grad_tol=2.0), dict(restarts=0)])
    def test_bad_options(self, kw):
        with pytest.raises(InvalidParams):
            MinimizeOptions(**kw)


def gaussian_like(pair):
    # a smeared copy of pair: start away from the fixed point but in the same basin
    grid = pair.grid
    kernel = np.exp(-0.5 * grid.k_squared)
    return FieldPair.from_arrays(grid, *(np.fft.ifftn(kernel * np.fft.fftn(f.values)) for f in pair))


class TestScan:
    def test_subadditivity(self, params, q1, grid1):
        a, b, c = frac(q1, 0.8, 0.7), frac(q1, 0.5, 0.3), frac(q1, 0.3, 0.4)
        rows = scan_m(params, [a, b, c], grid1, jobs=2)
        ma, mb, mc = (r.value for r in rows)
        assert all(r.status is Status.CONVERGED for r in rows)
        assert ma <= mb + mc + 2e-4 * abs(ma)

    def test_monotone_and_ordered(self, params, q1, grid1):
        masses = [frac(q1, f, 0.4) for f in (0.2, 0.4, 0.6, 0.8)]
        rows = scan_m(params, masses, grid1)
        assert [r.a1 for r in rows] == [m.a1 for m in masses]
        vals = np.array([r.value for r in rows])
        assert np.all(np.diff(vals) < 0)

    def test_parallel_matches_serial(self, params, q1, grid1):
        masses = [frac(q1, 0.3), frac(q1, 0.6, 0.2)]
        assert scan_m(params, masses, grid1) == scan_m(params, masses, grid1, jobs=2)

    def test_failing_entry_reported(self, params, q1, grid1):
        rows = scan_m(params, [frac(q1, 1.2, 0.5), frac(q1, 0.5)], grid1)
        assert rows[0].status is Status.DIVERGENCE
        assert rows[1].status is Status.CONVERGED

    def test_approach_to_criticality(self, params, q1):
        opts = MinimizeOptions(restarts=1, grad_tol=1e-7, max_iters=5000)
        near, mid = (minimize(params, frac(q1, f), FINE, opts) for f in (0.99, 0.9))
        assert near.status is Status.CONVERGED and mid.status is Status.CONVERGED
        assert near.value < mid.value < 0


class TestDivergenceFamily:
    def test_unit_scale_closed_form(self, params, q1):
        # at t = 1 and critical masses the quadratic part vanishes
        stars = MassConstraint(q1.mass, q1.mass)
        got = divergence_family_energy(params, q1, stars, 1.0, FINE)
        r = np.linspace(0, q1.radial_profile[-1, 0], 200001)
        want = -2 * integrate.trapezoid(q1(r) ** 3, r)
        assert got == pytest.approx(want, rel=1e-8)

    def test_monotone_divergence(self, params, q1):
        stars = MassConstraint(q1.mass, q1.mass)
        j = [divergence_family_energy(params, q1, stars, t, FINE) for t in (1.0, 2.0, 4.0)]
        assert j[2] < j[1] < j[0] < 0

    def test_subcritical_tends_to_zero(self, params, q1):
        sub = frac(q1, 0.5)
        wide = Grid(1, 2048, 48.0)
        j = [divergence_family_energy(params, q1, sub, t, wide) for t in (0.5, 0.25)]
        assert j[1] < 0 and j[0] < 0 and abs(j[1]) < abs(j[0])
        assert min(divergence_family_energy(params, q1, sub, t, FINE) for t in (1, 2, 4, 8)) > -10

    def test_rejects_supercritical(self, params, q1):
        with pytest.raises(InvalidParams):
            divergence_family_energy(params, q1, frac(q1, 1.1), 1.0, FINE)


class TestStructure:
    def test_reference_minimizer(self, minimizer):
        rep = check_minimizer_structure(minimizer)
        assert max(rep.phase_deviation) < 1e-6
        assert rep.center_offset < rep.spacing
        assert rep.unimodality_violation == (0.0, 0.0)
        assert min(rep.positivity) > 0
        assert rep.passes()

    def test_phase_twist_flagged(self, grid1):
        g = grid1.sample(lambda x: np.exp(-x**2 / 2) * np.exp(1j * x))
        rep = structure_report(FieldPair(g, g))
        assert max(rep.phase_deviation) > 0.1
        assert not rep.passes()

    def test_two_bumps_flagged(self, grid1):
        g = grid1.sample(lambda x: np.exp(-((x - 3) ** 2)) + np.exp(-((x + 3) ** 2)))
        rep = structure_report(FieldPair(g, g))
        assert max(rep.unimodality_violation) > 0
        assert not rep.passes()

    def test_separated_centers_flagged(self, grid1):
        rep = structure_report(FieldPair(grid1.sample(lambda x: np.exp(-x**2)),
                                         grid1.sample(lambda x: np.exp(-((x - 2) ** 2)))))
        assert rep.center_offset == pytest.approx(2.0, abs=1e-6)
        assert not rep.passes()

    def test_needs_converged(self, params, q1, grid1):
        res = minimize(params, frac(q1, 1.1, 0.5), grid1)
        with pytest.raises(NotConverged):
            check_minimizer_structure(res)

    def test_report_dict(self, minimizer):
        d = check_minimizer_structure(minimizer).to_dict()
        assert d["passes"] is True and len(d["centers"]) == 2
