import numpy as np
import pytest

from critmass.dynamics import (
    EvolutionState,
    Propagator,
    align_pair,
    default_dt,
    evolve,
    h1_pair_norm,
    orbit_distance,
    random_perturbation,
    stability_probe,
    step,
)
from critmass.energy import MassConstraint, SystemParams, energy, stack
from critmass.errors import InvalidParams, NotConverged, NumericalBlowup
from critmass.fields import FieldPair, Grid, translate
from critmass.ground_state import sample_profile
from critmass.minimize import minimize

FREE = SystemParams(1, 1e-12, 1e-12, 0.0, 1.5, 1.5)


def free_gaussian(grid, t, s=1.0):
    # exact solution of i u_t + u_xx = 0 from exp(-x^2 / 2s)
    z = s + 2j * t
    return grid.sample(lambda x: np.sqrt(s / z) * np.exp(-x**2 / (2 * z)))


def chirped_pair(grid):
    g = grid.sample(lambda x: np.exp(-x**2 / 2) * (1 + 0.3j * x))
    return FieldPair(g, g * 0.8)


class TestStep:
    def test_free_gaussian_oracle(self):
        grid = Grid(1, 1024, 32.0)
        start = free_gaussian(grid, 0.0) * 1e-6
        state = EvolutionState(FieldPair(start, start))
        dt = 1e-3
        prop = Propagator(grid, dt, FREE)
        out = prop.advance(stack(state.pair), 1000)
        want = free_gaussian(grid, 1.0).values * 1e-6
        assert np.max(np.abs(out[0] - want)) / 1e-6 < 1e-6

    def test_step_bookkeeping(self, params, grid1):
        state = EvolutionState(chirped_pair(grid1))
        for _ in range(3):
            state = step(state, 1e-3, params)
        assert state.step_count == 3
        assert state.time == pytest.approx(3e-3, rel=1e-12)

    def test_time_reversal(self, params, grid1):
        pair = chirped_pair(grid1)
        back = step(step(EvolutionState(pair), 1e-3, params), -1e-3, params)
        assert np.max(np.abs(stack(back.pair) - stack(pair))) < 1e-11

    def test_mass_drift(self, params, grid1):
        _, summary = evolve(chirped_pair(grid1), params, 1e-3, 10_000, sample_every=10_000)
        for col in ("mass1", "mass2"):
            m = summary.column(col)
            assert abs(m[-1] - m[0]) / m[0] < 1e-10

    def test_order_two_on_moving_data(self, params, grid1):
        drift = []
        for dt in (2e-3, 1e-3):
            _, s = evolve(chirped_pair(grid1), params, dt, int(round(1 / dt)), sample_every=10**6)
            e = s.column("energy")
            drift.append(abs(e[-1] - e[0]) / abs(e[0]))
        assert 3.5 <= drift[0] / drift[1] <= 4.5

    def test_standing_wave(self, minimizer, params):
        dt = default_dt(minimizer.pair.grid)
        state, _ = evolve(minimizer.pair, params, dt, int(round(1 / dt)))
        for now, then in zip(state.pair, minimizer.pair):
            assert np.max(np.abs(np.abs(now.values) - np.abs(then.values))) < 1e-5

    def test_samples_increase(self, params, grid1):
        _, s = evolve(chirped_pair(grid1), params, 1e-3, 250, sample_every=100)
        assert np.all(np.diff(s.column("t")) > 0)
        assert s.column("t")[-1] == pytest.approx(0.25)
        assert s.scheme_order == 2

    @pytest.mark.parametrize("dt", [0.0, np.inf])
    def test_bad_dt(self, params, grid1, dt):
        with pytest.raises(InvalidParams):
            Propagator(grid1, dt, params)

    def test_blowup_guard(self, grid1):
        # a huge phase rate overflows to NaN
        p = SystemParams(1, 1e300, 1e300, 0.0, 1.5, 1.5)
        pair = chirped_pair(grid1)
        pair = FieldPair(pair.first * 1e10, pair.second * 1e10)
        with np.errstate(all="ignore"), pytest.raises(NumericalBlowup):
            Propagator(grid1, 1e-3, p).advance(stack(pair))

    def test_csv(self, params, grid1, tmp_path):
        _, s = evolve(chirped_pair(grid1), params, 1e-3, 200, sample_every=100)
        lines = s.to_csv(tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,mass1,mass2,energy,orbit_distance"
        assert len(lines) == 4


class TestOrbitDistance:
    def test_self(self, minimizer):
        assert orbit_distance(minimizer.pair, minimizer.pair) < 1e-12

    def test_orbit_element(self, minimizer):
        ref = minimizer.pair
        moved = FieldPair(translate(ref.first, 1.7) * np.exp(0.7j), translate(ref.second, 1.7) * np.exp(1.3j))
        assert orbit_distance(moved, ref) < 1e-6

    def test_scaled_reference(self, minimizer):
        ref = minimizer.pair
        big = FieldPair(ref.first * 1.01, ref.second * 1.01)
        d = orbit_distance(big, ref)
        assert d == pytest.approx(0.01 * h1_pair_norm(ref), rel=0.2)

    def test_symmetric(self, minimizer, grid1):
        ref = minimizer.pair
        other = FieldPair(ref.first + random_perturbation(grid1, 3).first * 0.05, ref.second)
        assert orbit_distance(other, ref) == pytest.approx(orbit_distance(ref, other), abs=1e-10)

    def test_alignment_recovers_group_action(self, minimizer):
        ref = minimizer.pair
        moved = FieldPair(translate(ref.first, -2.3) * np.exp(0.4j), translate(ref.second, -2.3) * np.exp(-1.1j))
        al = align_pair(moved, ref)
        assert al.shift[0] == pytest.approx(-2.3, abs=1e-6)
        assert np.angle(np.exp(1j * (al.phases - [0.4, -1.1]))) == pytest.approx([0, 0], abs=1e-6)


class TestStabilityProbe:
    def test_perturbation_normalized(self, grid1):
        pert = random_perturbation(grid1, 0)
        assert h1_pair_norm(pert) == pytest.approx(1.0, rel=1e-12)
        assert np.array_equal(stack(pert), stack(random_perturbation(grid1, 0)))

    def test_short_probe(self, minimizer, params):
        s = stability_probe(minimizer, 1e-2, 2.0, 2e-3, params)
        d = s.column("orbit_distance")
        assert d[0] > 0 and s.max_orbit_distance < 5e-2
        m = s.column("mass1")
        assert m[0] == pytest.approx(minimizer.masses[0], rel=1e-12)

    def test_zero_perturbation(self, minimizer, params):
        s = stability_probe(minimizer, 0.0, 1.0, 2e-3, params)
        assert s.max_orbit_distance < 1e-4

    def test_needs_converged(self, params, q1, grid1):
        bad = minimize(params, MassConstraint(1.1 * q1.mass, 0.5 * q1.mass), grid1)
        with pytest.raises(NotConverged):
            stability_probe(bad, 1e-2, 1.0, 1e-3, params)

    def test_size_range(self, minimizer, params):
        with pytest.raises(InvalidParams):
            stability_probe(minimizer, 0.5, 1.0, 1e-3, params)

    def test_supercritical_contrast(self, params, q1, grid1):
        base = sample_profile(q1, grid1)
        sup = FieldPair(base * np.sqrt(1.1), base * np.sqrt(1.1))
        assert energy(sup, params) < 0
        _, s = evolve(sup, params, 2e-4, 1600, sample_every=200, reference=sup)
        assert np.all(np.diff(s.kinetic) > 0)
        assert np.all(np.diff(s.column("orbit_distance")) > 0)
