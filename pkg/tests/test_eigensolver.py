import numpy as np
import pytest

from polarqh.eigensolver import (SolverError, solve_radial, stationary_residual,
                                 winding_number, write_eigenstate_csv)
from polarqh.geometry import PolarGrid
from polarqh.madelung import (VelocityFields, _sqrt_rho_curvature,
                              dilate_mask, oscillator_potential)
from polarqh.states import eigenstate_bundle

V = oscillator_potential()


@pytest.fixture(scope="module")
def grid():
    return PolarGrid.cell_centered(2000, 16, 8.0)


class TestSpectrum:
    # 2D oscillator: eps = hbar w (2 n_r + |alpha| + 1)
    @pytest.mark.parametrize("alpha,n_r,exact", [
        (0, 0, 1.0), (1, 0, 2.0), (0, 1, 3.0),
        (-1, 0, 2.0), (2, 1, 5.0), (0, 2, 5.0),
    ])
    def test_oscillator_eigenvalues(self, grid, params, alpha, n_r, exact):
        spec = solve_radial(V, alpha, grid, params, n_r)
        assert abs(spec.epsilon - exact) / exact < 1e-4

    def test_ground_profile_gaussian(self, grid, params):
        spec = solve_radial(V, 0, grid, params, 0)
        ref = np.exp(-grid.r**2 / 2) / np.sqrt(np.pi)
        assert np.max(np.abs(spec.radial_profile - ref)) < 1e-5

    def test_second_order_eigenvalue_convergence(self, params):
        errs = []
        for n in (500, 1000, 2000):
            g = PolarGrid.cell_centered(n, 8, 8.0)
            errs.append(solve_radial(V, 1, g, params, 0).epsilon - 2.0)
        assert 3.5 < errs[0] / errs[1] < 4.5
        assert 3.5 < errs[1] / errs[2] < 4.5

    def test_normalization_and_nodes(self, grid, params):
        for n_r in (0, 1, 2):
            spec = solve_radial(V, 1, grid, params, n_r)
            norm = 2 * np.pi * np.trapezoid(grid.r * spec.radial_profile**2, grid.r)
            assert abs(norm - 1.0) < 1e-10
            signs = np.sign(spec.radial_profile[
                np.abs(spec.radial_profile) > 1e-8 * np.abs(spec.radial_profile).max()])
            assert int(np.sum(signs[1:] * signs[:-1] < 0)) == n_r

    def test_orthogonality_same_alpha(self, grid, params):
        specs = [solve_radial(V, 1, grid, params, k) for k in range(3)]
        for a in range(3):
            for b in range(a + 1, 3):
                inner = 2 * np.pi * np.trapezoid(
                    grid.r * specs[a].radial_profile * specs[b].radial_profile, grid.r)
                assert abs(inner) < 1e-8

    def test_box_too_small_reported(self, params):
        g = PolarGrid.cell_centered(300, 8, 2.0)
        with pytest.raises(SolverError):
            solve_radial(V, 0, g, params, 2)

    def test_alpha_any_real_accepted(self, grid, params):
        spec = solve_radial(V, 0.5, grid, params, 0)
        assert 1.0 < spec.epsilon < 2.0  # between the alpha=0 and alpha=1 levels


class TestWinding:
    def test_eigenstate_raw_integer(self, grid, params):
        for n in (-2, -1, 0, 1, 2):
            spec, _, fields = eigenstate_bundle(n, 0, grid, params)
            res = winding_number(fields, params, 1.0)
            assert res.n == n
            assert abs(res.raw - n) < 1e-6
            assert not res.violation

    def test_zero_velocity(self, grid, params):
        zeros = np.zeros(grid.shape)
        fields = VelocityFields(grid, (zeros, zeros), (zeros, zeros), (zeros, zeros))
        res = winding_number(fields, params, 1.0)
        assert res.n == 0 and res.raw == 0.0

    def test_conjugate_winding(self, grid, params):
        # covariant v_theta = -2 everywhere: Theta = -2 theta
        r = grid.mesh()[0]
        v = (np.zeros(grid.shape), -2.0 / r**2 * np.ones(grid.shape))
        fields = VelocityFields(grid, v, v, v)
        res = winding_number(fields, params, 2.0)
        assert res.n == -2 and abs(res.raw + 2.0) < 1e-12

    def test_unquantized_alpha_violation(self, grid, params):
        spec, _, fields = eigenstate_bundle(0.5, 0, grid, params)
        res = winding_number(fields, params, 1.0)
        assert res.violation
        assert abs(res.raw - 0.5) < 1e-6


class TestStationaryResidual:
    def test_ground_state_small_residual(self, grid, params):
        spec = solve_radial(V, 0, grid, params, 0)
        rad, ang = stationary_residual(spec, 0.0, V, params)
        assert rad < 1e-3
        assert ang == 0.0

    def test_residual_second_order_decay(self, params):
        vals = []
        for n in (1000, 2000):
            g = PolarGrid.cell_centered(n, 8, 8.0)
            spec = solve_radial(V, 0, g, params, 0)
            vals.append(stationary_residual(spec, 0.0, V, params, n_theta=8)[0])
        assert 3.0 < vals[0] / vals[1] < 5.0

    def test_rotating_state_residual(self, grid, params):
        # near-axis cells resolve the chart singularity only at first order,
        # so the tolerance is looser than the alpha=0 case
        spec = solve_radial(V, 1, grid, params, 0)
        rad, ang = stationary_residual(spec, 1.0, V, params)
        assert rad < 5e-3
        assert ang == 0.0

    def test_wrong_eigenvalue_detected(self, grid, params):
        spec = solve_radial(V, 0, grid, params, 0)
        spec.epsilon += 0.5
        rad, _ = stationary_residual(spec, 0.0, V, params)
        assert rad > 1e-1

    def test_theta_independent_angular_identically_zero(self, grid, params):
        spec = solve_radial(V, 2, grid, params, 1)
        _, ang = stationary_residual(spec, 2.0, V, params)
        assert ang == 0.0

    def test_matches_eigen_equation_residual(self, grid, params):
        # radial line (Bernoulli form) == eigenvalue-equation residual
        # divided by m * sqrt(rho), built from the same grid operators
        spec = solve_radial(V, 0, grid, params, 0)
        sgrid = PolarGrid(spec.r, 16)
        rho = np.repeat(spec.density()[:, None], 16, axis=1)
        from polarqh.geometry import integrate
        rho = rho / integrate(rho, sgrid)
        s = np.sqrt(rho)
        kin = params.hbar**2 / (2 * params.m)
        r = sgrid.mesh()[0]
        r18 = (-kin * _sqrt_rho_curvature(rho, sgrid) * s
               + V(spec.r)[:, None] * s - spec.epsilon * s)
        direct = r18 / (params.m * s)
        bern = (-kin * _sqrt_rho_curvature(rho, sgrid)
                + V(spec.r)[:, None]) / params.m - spec.epsilon / params.m
        keep = ~dilate_mask(rho < 1e-12 * rho.max(), sgrid)
        assert np.max(np.abs((direct - bern)[keep])) < 1e-12


def test_eigenstate_csv_roundtrip(tmp_path, grid, params):
    spec = solve_radial(V, 1, grid, params, 0)
    path = tmp_path / "eig.csv"
    write_eigenstate_csv(path, spec)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# alpha=1")
    assert "epsilon=" in lines[0]
    assert lines[1] == "r,sqrt_rho,rho"
    row = lines[2].split(",")
    assert float(row[0]) == grid.r[0]
    assert float(row[2]) == pytest.approx(float(row[1]) ** 2, rel=1e-9)
