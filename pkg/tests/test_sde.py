import numpy as np
import pytest

from polarqh import sde
from polarqh.geometry import PolarCellGrid, PolarGrid
from polarqh.madelung import PhysicalParams, VelocityFields
from polarqh.sde import (DriftAccumulator, EnsembleConfig, NoiseStream,
                         Particle, backward_step, estimate_density,
                         estimate_drifts, forward_step, simulate)
from polarqh.states import eigenstate_bundle, oscillator_params


@pytest.fixture(scope="module")
def grid():
    return PolarGrid.cell_centered(800, 128, 8.0)


@pytest.fixture(scope="module")
def n1(grid, params):
    """Solved N = 1 eigenstate bundle."""
    return eigenstate_bundle(1, 0, grid, params)


def zero_fields(grid):
    z = np.zeros(grid.shape)
    return VelocityFields(grid, (z, z), (z, z), (z, z))


def const_fields(grid, ur, utheta=0.0):
    z = np.zeros(grid.shape)
    u = (ur + z, utheta + z)
    return VelocityFields(grid, u, u, u)


class TestNoiseStream:
    def test_reproducible_from_seed_and_index(self):
        a = NoiseStream(123, 7).normals(100)
        b = NoiseStream(123, 7).normals(100)
        assert np.array_equal(a, b)
        c = NoiseStream(123, 8).normals(100)
        assert not np.array_equal(a, c)

    def test_moments_on_1e6_draws(self):
        draws = NoiseStream(2024, 0).normals(500000).ravel()
        n = draws.size
        # 3 sigma sampling bands: mean ~ N(0, 1/n), var estimator ~ 1 +- sqrt(2/n)
        assert abs(draws.mean()) < 3.0 / np.sqrt(n)
        assert abs(draws.var() - 1.0) < 3.0 * np.sqrt(2.0 / n)

    def test_cross_stream_independence(self):
        a = NoiseStream(55, 1).normals(200000).ravel()
        b = NoiseStream(55, 2).normals(200000).ravel()
        corr = np.mean(a * b)
        assert abs(corr) < 3.0 / np.sqrt(a.size)


class TestSteps:
    def test_zero_drift_classical_limit_unchanged(self, grid):
        tiny = PhysicalParams(m=1.0, hbar=1e-30)
        p = Particle(1.5, 0.7)
        q = forward_step(p, zero_fields(grid), tiny, 0.01, (0.3, -1.2))
        assert abs(q.r - 1.5) < 1e-14
        assert abs(q.theta_unwrapped - 0.7) < 1e-14

    def test_classical_radial_drift_exact(self, grid):
        tiny = PhysicalParams(m=1.0, hbar=1e-30)
        p = Particle(1.0, 0.0)
        q = forward_step(p, const_fields(grid, 0.25), tiny, 0.01, (0.0, 0.0))
        assert q.r == pytest.approx(1.0 + 0.25 * 0.01, abs=1e-12)

    def test_forward_one_step_moments(self, grid, params):
        # pure noise from r = 1: E[dr] = nu dt, Var(dtheta) = 2 nu dt / r^2
        n, dt = 10**5, 1e-3
        rng = np.random.default_rng(3)
        noise = rng.standard_normal((n, 2))
        from polarqh.sde import FieldInterpolator, _step_arrays
        interp = FieldInterpolator.from_fields(zero_fields(grid), "u_plus")
        r1, th1, _ = _step_arrays(np.ones(n), np.zeros(n), interp,
                                  params.nu, dt, +1.0, noise)
        dr = r1 - 1.0
        dth = th1
        assert abs(dr.mean() - params.nu * dt) < 3 * dr.std() / np.sqrt(n)
        var = dth.var()
        target = 2 * params.nu * dt
        assert abs(var - target) < 3 * target * np.sqrt(2.0 / n)

    def test_backward_radial_drift_sign(self, grid, params):
        # E[dr] = -nu dt = +nu |dt| for the backward process at zero drift
        n, dt = 10**5, -1e-3
        rng = np.random.default_rng(4)
        noise = rng.standard_normal((n, 2))
        from polarqh.sde import FieldInterpolator, _step_arrays
        interp = FieldInterpolator.from_fields(zero_fields(grid), "u_minus")
        r1, _, _ = _step_arrays(np.ones(n), np.zeros(n), interp,
                                params.nu, dt, -1.0, noise)
        dr = r1 - 1.0
        assert abs(dr.mean() - params.nu * abs(dt)) < 3 * dr.std() / np.sqrt(n)

    def test_backward_step_requires_negative_dt(self, grid, params):
        with pytest.raises(ValueError):
            backward_step(Particle(1.0, 0.0), zero_fields(grid), params, 0.01, (0, 0))
        with pytest.raises(ValueError):
            forward_step(Particle(1.0, 0.0), zero_fields(grid), params, -0.01, (0, 0))

    def test_reflection_counted(self, grid, params):
        # strong inward drift overshoots the origin
        fields = const_fields(grid, -50.0)
        cfg = EnsembleConfig(64, 0.01, 3, seed=1)
        run = simulate(np.full(64, 0.3), np.zeros(64), fields, params, cfg)
        assert run.reflections > 0
        assert np.all(run.r > 0)

    def test_winding_tracked_on_unwrapped_angle(self, grid, params):
        fields = const_fields(grid, 0.0, utheta=5.0)
        tiny = PhysicalParams(m=1.0, hbar=1e-30)
        cfg = EnsembleConfig(4, 0.1, 20, seed=1)
        run = simulate(np.ones(4), np.zeros(4), fields, tiny, cfg)
        assert np.all(run.winding == 1)              # 10 rad ~ 1.59 turns
        assert np.all((run.theta >= 0) & (run.theta < 2 * np.pi))


class TestReproducibility:
    def test_bit_identical_same_config(self, grid, params, n1):
        _, _, fields = n1
        rng = sde.init_rng(9)
        r0 = np.abs(rng.normal(1.0, 0.2, 2000)) + 0.1
        th0 = rng.random(2000) * 2 * np.pi
        cfg = EnsembleConfig(2000, 1e-3, 50, seed=42)
        a = simulate(r0, th0, fields, params, cfg)
        b = simulate(r0, th0, fields, params, cfg)
        assert np.array_equal(a.r, b.r)
        assert np.array_equal(a.theta_unwrapped, b.theta_unwrapped)

    def test_chunk_size_invariance(self, grid, params, n1):
        _, _, fields = n1
        rng = sde.init_rng(10)
        r0 = np.abs(rng.normal(1.0, 0.2, 1000)) + 0.1
        th0 = rng.random(1000) * 2 * np.pi
        a = simulate(r0, th0, fields, params,
                     EnsembleConfig(1000, 1e-3, 40, seed=5, chunk_size=64))
        b = simulate(r0, th0, fields, params,
                     EnsembleConfig(1000, 1e-3, 40, seed=5, chunk_size=1000))
        assert np.array_equal(a.r, b.r)
        assert np.array_equal(a.theta_unwrapped, b.theta_unwrapped)


class TestDensityEstimate:
    def test_iid_gaussian_sample_l1(self, params):
        # independent oracle: for rho ~ exp(-r^2) the radial law is Rayleigh,
        # sampled exactly by inverse CDF r = sqrt(-ln(1 - u))
        rng = np.random.default_rng(11)
        n = 10**5
        r = np.sqrt(-np.log1p(-rng.random(n)))
        th = rng.random(n) * 2 * np.pi
        run = sde.EnsembleRun(EnsembleConfig(n, 1e-3, 0, 0), 0.0, r, th)
        cells = PolarCellGrid.regular(12, 12, 4.0)
        est = estimate_density(run, cells)
        # reference masses: exact Rayleigh CDF differences x uniform angle
        re = cells.r_edges
        radial_mass = np.exp(-re[:-1] ** 2) - np.exp(-re[1:] ** 2)
        ref = np.outer(radial_mass, np.full(12, 1.0 / 12))
        assert sde.l1_distance(est, ref) < 0.05

    def test_delta_histogram_integrates_to_one(self):
        n = 2000
        run = sde.EnsembleRun(EnsembleConfig(n, 1e-3, 0, 0), 0.0,
                              np.full(n, 1.05), np.full(n, 0.1))
        cells = PolarCellGrid.regular(10, 10, 4.0)
        est = estimate_density(run, cells)
        from polarqh.geometry import integrate
        assert integrate(est.values, cells) == pytest.approx(1.0, abs=1e-12)
        assert np.count_nonzero(est.values) == 1

    def test_winding_ignored_in_histogram(self):
        n = 1000
        r = np.full(n, 1.0)
        th = np.where(np.arange(n) % 2 == 0, 0.1, 0.1 + 2 * np.pi)
        run = sde.EnsembleRun(EnsembleConfig(n, 1e-3, 0, 0), 0.0, r, th)
        cells = PolarCellGrid.regular(8, 8, 4.0)
        est = estimate_density(run, cells)
        assert np.count_nonzero(est.values) == 1

    def test_minimum_particles_enforced(self):
        run = sde.EnsembleRun(EnsembleConfig(10, 1e-3, 0, 0), 0.0,
                              np.ones(10), np.zeros(10))
        with pytest.raises(ValueError):
            estimate_density(run, PolarCellGrid.regular(4, 4, 2.0))


class TestDriftEstimates:
    def test_deterministic_flow_recovers_fields(self, grid):
        # classical limit: increments are exactly u dt, no corrections
        tiny = PhysicalParams(m=1.0, hbar=1e-30)
        fields = const_fields(grid, 0.05, utheta=0.2)
        n = 2000
        rng = np.random.default_rng(12)
        r0 = rng.uniform(0.5, 3.0, n)
        th0 = rng.random(n) * 2 * np.pi
        cfg = EnsembleConfig(n, 1e-2, 30, seed=3)
        run, traj = simulate(r0, th0, fields, tiny, cfg, store_trajectory=True)
        cells = PolarCellGrid.regular(6, 6, 4.0)
        est = estimate_drifts(traj, cells, tiny)
        ok = est.estimated_plus
        assert np.allclose(est.u_plus_r[ok], 0.05, atol=1e-10)
        assert np.allclose(est.u_plus_theta[ok], 0.2, atol=1e-10)

    def test_ground_state_osmotic_drifts(self, grid, params):
        # v = 0 state: u_pm^r = -+ omega r within Monte Carlo bands
        spec, state, fields = eigenstate_bundle(0, 0, grid, params)
        n, steps, dt = 20000, 50, 1e-3
        rng = sde.init_rng(21)
        r0 = sde.sample_radial_law(spec.r, spec.density(), n, rng)
        th0 = rng.random(n) * 2 * np.pi
        cells = PolarCellGrid(np.linspace(0.2, 1.8, 9), np.linspace(0, 2 * np.pi, 5))
        acc = DriftAccumulator(cells, params, dt)
        simulate(r0, th0, fields, params, EnsembleConfig(n, dt, steps, 22),
                 drift_accumulator=acc)
        est = acc.finalize()
        r_mid = cells.mesh()[0][:, 0]
        for i in range(cells.shape[0]):
            counts = est.counts_plus[i, :].sum()
            if counts < 500:
                continue
            mean_p = np.nanmean(est.u_plus_r[i, :])
            mean_m = np.nanmean(est.u_minus_r[i, :])
            band = 3 * np.sqrt(2 * params.nu / dt / counts) + 0.05 * r_mid[i]
            assert abs(mean_p + r_mid[i]) < band
            assert abs(mean_m - r_mid[i]) < band

    def test_eigenstate_covariant_momentum_band(self, params, n1):
        spec, state, fields = n1
        n, steps, dt = 20000, 60, 1e-3
        rng = sde.init_rng(31)
        r0 = sde.sample_radial_law(spec.r, spec.density(), n, rng)
        th0 = rng.random(n) * 2 * np.pi
        cells = PolarCellGrid.regular(10, 8, 4.0)
        acc = DriftAccumulator(cells, params, dt)
        simulate(r0, th0, fields, params, EnsembleConfig(n, dt, steps, 32),
                 drift_accumulator=acc)
        est = acc.finalize()
        for which in ("plus", "minus"):
            val, se = est.pooled_p_theta(which)
            assert abs(val - params.hbar) < 3 * se

    def test_too_short_trajectory_rejected(self, grid, params):
        traj = sde.Trajectory(np.zeros(1), np.ones((1, 10)), np.zeros((1, 10)),
                              EnsembleConfig(10, 1e-3, 0, 0))
        with pytest.raises(ValueError):
            estimate_drifts(traj, PolarCellGrid.regular(4, 4, 2.0), params)


class TestBackwardStationarity:
    def test_backward_run_stays_in_stationary_law(self, params, n1):
        spec, state, fields = n1
        n = 30000
        rng = sde.init_rng(41)
        r0 = sde.sample_radial_law(spec.r, spec.density(), n, rng)
        th0 = rng.random(n) * 2 * np.pi
        cfg = EnsembleConfig(n, 1e-3, 200, seed=42, direction="backward")
        run = simulate(r0, th0, fields, params, cfg)
        assert run.time < 0
        cells = PolarCellGrid.regular(10, 10, 4.0)
        est = estimate_density(run, cells)
        re = cells.r_edges
        # N=1 radial law: P(r < a) = 1 - (1 + a^2) exp(-a^2)
        cdf = 1 - (1 + re**2) * np.exp(-re**2)
        ref = np.outer(np.diff(cdf), np.full(10, 0.1))
        assert sde.l1_distance(est, ref) < 0.06


def test_ensemble_csv(tmp_path, grid, params):
    run = sde.EnsembleRun(EnsembleConfig(3, 1e-3, 2, 0), 0.002,
                          np.array([1.0, 2.0, 0.5]),
                          np.array([0.3, 7.0, -0.5]))
    path = tmp_path / "ens.csv"
    sde.write_ensemble_csv(path, run)
    lines = path.read_text().splitlines()
    assert lines[0] == "particle_id,t,r,theta_wrapped,winding"
    assert len(lines) == 4
    assert lines[2].split(",")[4] == "1"      # 7.0 rad = one full turn
    assert lines[3].split(",")[4] == "-1"     # -0.5 rad wraps backward
