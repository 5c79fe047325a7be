"""Cascade solves, the sentinel, and its first-order sensitivity.

With control and observation masks covering the whole interior the
cascade is mode-diagonal, so a single-mode control admits an exact
scalar oracle: forward CN recursion for y, backward recursion for q
driven by the stored midpoint averages.
"""
import numpy as np
import pytest

from insens4.cascade_sentinel import (
    sentinel,
    sentinel_sensitivity,
    solve_adjoint_pair,
    solve_cascade,
)
from insens4.pde_engine import Trajectory, duality_residual
from insens4.problem_setup import (
    CoefficientField,
    ProblemConfig,
    build_grid,
    build_mask,
    validate_problem,
)
from conftest import unit_smooth


def _full_mask_problem(a0=0.6):
    grid = build_grid(1, 2.0, 24, 1.0, 30)
    return validate_problem(ProblemConfig(
        grid=grid,
        omega=build_mask(grid, [(0.0, 2.0)], "omega"),
        obs=build_mask(grid, [(0.0, 2.0)], "obs"),
        omega0=build_mask(grid, [(0.9, 1.1)], "omega0"),
        a0=CoefficientField.constant("a0", a0),
    ))


def _partial_problem(rng, dim=1):
    if dim == 1:
        grid = build_grid(1, 2.0, 24, 0.5, 24)
        om, ob, om0 = [(0.5, 1.3)], [(0.9, 1.7)], [(1.0, 1.2)]
    else:
        grid = build_grid(2, 2.0, 12, 0.5, 16)
        om = [((0.3, 1.5), (0.3, 1.5))]
        ob = [((0.5, 1.7), (0.5, 1.7))]
        om0 = [((0.8, 1.2), (0.8, 1.2))]
    d = grid.dim
    force = rng.standard_normal((grid.n_steps,) + grid.shape)
    force[grid.times <= 0.15] = 0.0
    return validate_problem(ProblemConfig(
        grid=grid,
        omega=build_mask(grid, om, "omega"),
        obs=build_mask(grid, ob, "obs"),
        omega0=build_mask(grid, om0, "omega0"),
        a0=CoefficientField.constant("a0", rng.uniform(-1, 1), dim=d),
        b0=CoefficientField.constant("b0", rng.uniform(-1, 1, d), dim=d),
        b=CoefficientField.constant("b", rng.uniform(-0.5, 0.5, (d, d)), dim=d),
        a1=CoefficientField.constant("a1", rng.uniform(-1, 1), dim=d),
        force=force, force_onset=0.15,
    ))


class TestCascadeOracle:
    def test_single_mode_scalar_recursion(self):
        p = _full_mask_problem(a0=0.6)
        grid = p.grid
        k = 2
        mu = (k * np.pi / 2.0) ** 4 + 0.6
        c = grid.dt * mu / 2
        rng = np.random.default_rng(11)
        amps = rng.standard_normal(grid.n_steps)
        e = np.zeros(grid.shape)
        e[k - 1] = 1.0
        mode = grid.basis.from_modes(e)
        v = amps[:, None] * mode

        sol = solve_cascade(p, v)

        g = 0.0
        ymid = []
        for j in range(grid.n_steps):
            g_next = ((1 - c) * g + grid.dt * amps[j]) / (1 + c)
            ymid.append((g + g_next) / 2)
            g = g_next
        h = 0.0
        for j in reversed(range(grid.n_steps)):
            h = ((1 - c) * h + grid.dt * ymid[j]) / (1 + c)

        got = grid.basis.to_modes(sol.q0)
        assert got[k - 1] == pytest.approx(h, rel=1e-12)
        others = got.copy()
        others[k - 1] = 0.0
        assert np.abs(others).max() <= 1e-14 * max(abs(h), 1.0)

    def test_linear_in_the_control(self):
        p = _full_mask_problem()
        rng = np.random.default_rng(12)
        v1 = rng.standard_normal((p.grid.n_steps,) + p.grid.shape)
        v2 = rng.standard_normal(v1.shape)
        q_sum = solve_cascade(p, v1 + v2).q0
        q_sep = solve_cascade(p, v1).q0 + solve_cascade(p, v2).q0
        scale = np.abs(q_sum).max()
        assert np.allclose(q_sum, q_sep, rtol=0, atol=1e-12 * max(scale, 1e-30))

    def test_premasked_control_identical(self, rng):
        p = _partial_problem(rng)
        v = rng.standard_normal((p.grid.n_steps,) + p.grid.shape)
        plain = solve_cascade(p, v)
        masked = solve_cascade(p, p.omega.values * v, premasked=True)
        assert np.array_equal(plain.q0, masked.q0)
        assert np.array_equal(plain.y.fields, masked.y.fields)

    def test_homogeneous_zero(self):
        p = _full_mask_problem()
        sol = solve_cascade(p, None, include_force=False)
        assert np.all(sol.y.fields == 0.0)
        assert np.all(sol.q0 == 0.0)


class TestDuality:
    @pytest.mark.parametrize("dim", [1, 2], ids=["1d", "2d"])
    def test_exact_identity_all_roles(self, rng, dim):
        # forward/backward transposes cancel exactly, so the identity
        # holds at rounding level with every coefficient role active
        p = _partial_problem(rng, dim=dim)
        phi0 = rng.standard_normal(p.grid.shape)
        pair = solve_adjoint_pair(p, phi0)
        v = rng.standard_normal((p.grid.n_steps,) + p.grid.shape)
        sol = solve_cascade(p, v)
        res = duality_residual(sol.y, pair.psi, v, p.force_fields, pair.phi,
                               p.omega.values, p.obs.values)
        assert res <= 1e-12

    def test_pair_is_linear_in_seed(self, rng):
        p = _partial_problem(rng)
        phi0 = rng.standard_normal(p.grid.shape)
        one = solve_adjoint_pair(p, phi0)
        two = solve_adjoint_pair(p, 2.0 * phi0)
        assert np.allclose(two.psi.fields, 2.0 * one.psi.fields,
                           rtol=1e-12, atol=1e-14)


class TestSentinel:
    def test_midpoint_quadrature(self, rng):
        p = _partial_problem(rng)
        v = rng.standard_normal((p.grid.n_steps,) + p.grid.shape)
        y = solve_cascade(p, v).y
        b = p.basis
        direct = 0.5 * p.grid.dt * sum(
            b.inner(p.obs.values * f, f) for f in y.fields)
        assert sentinel(y, p.obs.values) == pytest.approx(direct, rel=1e-12)

    def test_quadratic_scaling(self):
        grid = build_grid(1, 2.0, 16, 0.5, 24)
        u = np.sin(np.pi * grid.basis.nodes[0] / 2.0)
        fields = np.array([u for _ in range(grid.n_steps)])
        traj = Trajectory(grid.basis, grid.dt, grid.times, fields, u, u)
        obs = np.ones(grid.shape)
        one = sentinel(traj, obs)
        two = sentinel(Trajectory(grid.basis, grid.dt, grid.times,
                                  2 * fields, 2 * u, 2 * u), obs)
        assert two == pytest.approx(4 * one, rel=1e-13)


class TestSensitivity:
    def test_linear_fd_matches_dual(self, rng):
        p = _partial_problem(rng)
        v = rng.standard_normal((p.grid.n_steps,) + p.grid.shape)
        yhat = unit_smooth(p.basis, rng)
        report = sentinel_sensitivity(p, v, yhat, tau_probe=0.1)
        # linear dynamics: the sentinel is quadratic in tau, central
        # differences are exact up to rounding
        assert report.gap_rel <= 1e-9
        assert abs(report.d_dual) <= report.cauchy_schwarz_bound * (1 + 1e-12)
        assert report.phi_plus > 0 and report.phi_minus > 0
        assert report.tau == pytest.approx(0.1)

    def test_premasked_probe_identical(self, rng):
        p = _partial_problem(rng)
        v = rng.standard_normal((p.grid.n_steps,) + p.grid.shape)
        yhat = unit_smooth(p.basis, rng)
        a = sentinel_sensitivity(p, v, yhat, tau_probe=0.05)
        b = sentinel_sensitivity(p, p.omega.values * v, yhat,
                                 tau_probe=0.05, premasked=True)
        assert a.d_fd == b.d_fd
        assert a.d_dual == b.d_dual
