"""Time marching: exact single-mode recursions, order, duality pieces.

The march is Crank-Nicolson on the mode-diagonal part, so one sine mode
with a constant reaction follows the scalar rational recursion
g(n+1) = g(n) (1 - c) / (1 + c) with c = dt (kappa^4 + a0) / 2 exactly.
Every oracle below is that recursion recomputed in plain floats.
"""
import numpy as np
import pytest

from insens4.errors import EngineError
from insens4.nonlinearity import make_nonlinearity
from insens4.pde_engine import (
    ListSchedule,
    NodeCoefficients,
    Trajectory,
    assemble_operator,
    check_energy_growth,
    make_schedule,
    solve_backward,
    solve_forward,
    solve_forward_nonlinear,
)
from insens4.problem_setup import CoefficientField, build_grid


def _mode(grid, k):
    e = np.zeros(grid.basis.shape)
    e[k - 1] = 1.0
    return grid.basis.from_modes(e)


def _rational_march(mu, dt, n_steps, g0=1.0, source=None):
    """Scalar CN recursion; returns integer-node values g_0 .. g_Nt."""
    c = dt * mu / 2
    g = [float(g0)]
    for j in range(n_steps):
        rhs = (1 - c) * g[-1]
        if source is not None:
            rhs += dt * source[j]
        g.append(rhs / (1 + c))
    return np.array(g)


class TestSingleModeRecursion:
    def test_terminal_and_midpoints(self):
        grid = build_grid(1, 2.0, 32, 1.0, 50)
        k, a0 = 2, 0.7
        mu = (k * np.pi / 2.0) ** 4 + a0
        coeffs = {"a0": CoefficientField.constant("a0", a0), "b0": None,
                  "b": None, "a1": None}
        traj = solve_forward(grid, make_schedule(grid, coeffs), _mode(grid, k))
        g = _rational_march(mu, grid.dt, grid.n_steps)
        got_T = grid.basis.to_modes(traj.stateT)[k - 1]
        assert got_T == pytest.approx(g[-1], rel=1e-13)
        # stored fields are midpoint averages of the integer-node states
        mid = (g[:-1] + g[1:]) / 2
        got_mid = np.array([grid.basis.to_modes(f)[k - 1] for f in traj.fields])
        assert np.allclose(got_mid, mid, rtol=1e-12, atol=1e-15)
        # no leakage into other modes
        other = grid.basis.to_modes(traj.stateT)
        other[k - 1] = 0.0
        assert np.abs(other).max() <= 1e-14

    def test_constant_source(self):
        grid = build_grid(1, 2.0, 32, 0.5, 40)
        k = 1
        mu = (np.pi / 2.0) ** 4
        src_vals = np.full(grid.n_steps, 0.8)
        source = np.array([0.8 * _mode(grid, k) for _ in range(grid.n_steps)])
        traj = solve_forward(grid, make_schedule(grid, {}), np.zeros(grid.basis.shape),
                             source=source)
        g = _rational_march(mu, grid.dt, grid.n_steps, g0=0.0, source=src_vals)
        got = grid.basis.to_modes(traj.stateT)[k - 1]
        assert got == pytest.approx(g[-1], rel=1e-13)

    def test_backward_matches_reversed_recursion(self):
        grid = build_grid(1, 2.0, 32, 1.0, 50)
        k, a0 = 3, 0.4
        mu = (3 * np.pi / 2.0) ** 4 + a0
        coeffs = {"a0": CoefficientField.constant("a0", a0)}
        traj = solve_backward(grid, make_schedule(grid, coeffs), _mode(grid, k))
        g = _rational_march(mu, grid.dt, grid.n_steps)
        got0 = grid.basis.to_modes(traj.state0)[k - 1]
        assert got0 == pytest.approx(g[-1], rel=1e-13)

    def test_time_varying_schedule_samples_midpoints(self):
        grid = build_grid(1, 2.0, 16, 0.5, 24)
        k = 1
        kap4 = (np.pi / 2.0) ** 4
        a0_of_t = lambda t: 0.5 + 2.0 * t
        shape = grid.basis.shape
        nodes = [NodeCoefficients(a0=np.full(shape, a0_of_t(t)))
                 for t in grid.times]
        traj = solve_forward(grid, ListSchedule(nodes), _mode(grid, k))
        g = 1.0
        for t in grid.times:
            c = grid.dt * (kap4 + a0_of_t(t)) / 2
            g = g * (1 - c) / (1 + c)
        assert grid.basis.to_modes(traj.stateT)[k - 1] == pytest.approx(g, rel=1e-12)


class TestTemporalOrder:
    def test_second_order_in_dt(self):
        # manufactured solution g(t) P(x) with P one discrete mode and the
        # source built from the discrete operator, so the error is purely
        # temporal
        def error(n_steps):
            grid = build_grid(1, 2.0, 24, 1.0, n_steps)
            basis = grid.basis
            p = _mode(grid, 1)
            coeffs = {"a0": CoefficientField.constant("a0", 0.3)}
            ap = assemble_operator(grid, coeffs, 0.0).apply(p)
            g = lambda t: np.exp(-t) * (1 + 0.5 * np.sin(3 * t))
            gp = lambda t: np.exp(-t) * (1.5 * np.cos(3 * t) - 1 - 0.5 * np.sin(3 * t))
            source = np.array([gp(t) * p + g(t) * ap for t in grid.times])
            traj = solve_forward(grid, make_schedule(grid, coeffs), g(0.0) * p,
                                 source=source)
            return basis.norm(traj.stateT - g(1.0) * p)

        e24, e48 = error(24), error(48)
        assert e24 / e48 >= 3.4
        assert e48 < e24


class TestNonlinearMarch:
    def test_linear_kind_matches_shifted_reaction(self):
        grid = build_grid(1, 2.0, 32, 0.5, 40)
        rng = np.random.default_rng(5)
        y0 = rng.standard_normal(grid.basis.shape)
        alpha = 0.8
        base = {"a0": CoefficientField.constant("a0", 1.1)}
        nl = make_nonlinearity("linear", scale=alpha)
        got = solve_forward_nonlinear(grid, make_schedule(grid, base), nl, y0)
        shifted = {"a0": CoefficientField.constant("a0", 1.1 - alpha)}
        want = solve_forward(grid, make_schedule(grid, shifted), y0)
        # agreement is limited by the per-step fixed-point tolerance
        assert np.allclose(got.stateT, want.stateT, rtol=0, atol=1e-9)
        assert np.allclose(got.fields, want.fields, rtol=0, atol=1e-9)

    def test_zero_kind_is_plain_linear(self):
        grid = build_grid(1, 2.0, 16, 0.5, 24)
        y0 = np.random.default_rng(6).standard_normal(grid.basis.shape)
        nl = make_nonlinearity("zero")
        got = solve_forward_nonlinear(grid, make_schedule(grid, {}), nl, y0)
        want = solve_forward(grid, make_schedule(grid, {}), y0)
        assert np.array_equal(got.stateT, want.stateT)

    def test_stiff_coefficient_diverges_loudly(self):
        # the modal half-solve iterates the lower-order block; a reaction
        # coefficient with dt*a0/2 >> 1 breaks that contraction
        grid = build_grid(1, 2.0, 32, 1.0, 40)
        y0 = np.random.default_rng(7).standard_normal(grid.basis.shape)
        coeffs = {"a0": CoefficientField.constant("a0", 400.0)}
        with pytest.raises(EngineError) as exc:
            solve_forward(grid, make_schedule(grid, coeffs), y0)
        assert exc.value.code == "inner-solve-divergence"


class TestTrajectory:
    def _traj(self):
        grid = build_grid(1, 2.0, 16, 0.5, 24)
        y0 = np.random.default_rng(8).standard_normal(grid.basis.shape)
        return grid, solve_forward(grid, make_schedule(grid, {}), y0)

    def test_norms_match_direct_sums(self):
        grid, traj = self._traj()
        b = grid.basis
        direct = np.sqrt(grid.dt * sum(b.inner(f, f) for f in traj.fields))
        assert traj.norm_l2q() == pytest.approx(direct, rel=1e-13)
        assert traj.sup_l2() == pytest.approx(
            max(b.norm(f) for f in traj.fields), rel=1e-13)
        h2 = np.sqrt(grid.dt * sum(b.h2_norm_sq(f) for f in traj.fields))
        assert traj.norm_l2h2() == pytest.approx(h2, rel=1e-13)

    def test_inner_against_direct_sum(self):
        grid, traj = self._traj()
        w = np.random.default_rng(9).standard_normal(traj.fields.shape)
        other = Trajectory(grid.basis, grid.dt, grid.times, w, w[0], w[-1])
        direct = grid.dt * sum(
            grid.basis.inner(traj.fields[j], w[j]) for j in range(grid.n_steps))
        assert traj.inner_l2q(other) == pytest.approx(direct, rel=1e-12)

    def test_at_returns_midpoint_record(self):
        _, traj = self._traj()
        assert np.array_equal(traj.at(3), traj.fields[3])


class TestEnergyGrowth:
    def test_dissipative_march_passes(self):
        grid = build_grid(1, 2.0, 32, 1.0, 50)
        coeffs = {"a0": CoefficientField.constant("a0", 0.5)}
        y0 = np.random.default_rng(10).standard_normal(grid.basis.shape)
        traj = solve_forward(grid, make_schedule(grid, coeffs), y0)
        report = check_energy_growth(traj, beta=2.0 + 0.25)
        assert report.passed

    def test_fabricated_growth_fails(self):
        grid = build_grid(1, 2.0, 16, 1.0, 24)
        u = _mode(grid, 1)
        fields = np.array([np.exp(5.0 * t) * u for t in grid.times])
        traj = Trajectory(grid.basis, grid.dt, grid.times, fields,
                          state0=u, stateT=np.exp(5.0) * u)
        report = check_energy_growth(traj, beta=0.1)
        assert not report.passed
