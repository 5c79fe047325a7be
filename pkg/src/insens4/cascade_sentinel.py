"""Cascade solves and the sentinel functional.

The sentinel is Phi(y) = 1/2 int_Q chi_obs |y|^2.  Its first-order
sensitivity to a perturbation tau*yhat0 of the initial state equals
<q(0), yhat0> where (y, q) solves the cascade: y marches forward from
y(0) = 0 driven by chi_omega v + f, and q marches the transposed
operator backward from q(T) = 0 driven by chi_obs y.  The adjoint pair
(phi, psi) used for control synthesis mirrors the cascade: phi forward
and homogeneous, psi backward driven by chi_obs phi.

In the frozen semilinear regime the two legs carry different operators:
the state leg (y, psi) uses the path-averaged secant coefficients, the
costate leg (phi, q) the pointwise tangent coefficients, which keeps the
synthesis map self-adjoint while matching the true linearized adjoint.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pde_engine import (
    ListSchedule,
    StaticSchedule,
    Trajectory,
    solve_backward,
    solve_forward,
    solve_forward_nonlinear,
)
from .problem_setup import ValidatedProblem

__all__ = [
    "CascadeOperators",
    "AdjointPair",
    "CascadeSolution",
    "InsensitivityReport",
    "linearized_operators",
    "solve_adjoint_pair",
    "solve_cascade",
    "sentinel",
    "sentinel_sensitivity",
]

Array = np.ndarray


@dataclass
class CascadeOperators:
    """Coefficient schedules for the two legs of the cascade."""

    state_schedule: StaticSchedule | ListSchedule
    costate_schedule: StaticSchedule | ListSchedule
    reaction_offset: float = 0.0  # -F(0,0,0), added to the state source


def linearized_operators(problem: ValidatedProblem, frozen=None) -> CascadeOperators:
    """Operators for the linear pipeline or a frozen linearization.

    With ``frozen=None`` both legs carry the problem's base coefficients
    and the reaction term is absent entirely.
    """
    if frozen is None:
        base = StaticSchedule(problem.grid, problem.coefficients)
        return CascadeOperators(base, base, 0.0)
    return CascadeOperators(
        frozen.state_schedule, frozen.costate_schedule, -frozen.f0
    )


@dataclass
class AdjointPair:
    phi: Trajectory
    psi: Trajectory


@dataclass
class CascadeSolution:
    y: Trajectory
    q: Trajectory
    q0: np.ndarray = field(repr=False)


def solve_adjoint_pair(
    problem: ValidatedProblem,
    phi0: Array,
    frozen=None,
    ops: CascadeOperators | None = None,
    inner_tol: float = 1e-13,
) -> AdjointPair:
    """Solve the adjoint pair: phi forward from phi0, psi backward.

    phi is homogeneous under the costate operator; psi solves the
    transposed state operator backward from psi(T) = 0 with source
    chi_obs phi at the midpoint nodes.
    """
    grid = problem.grid
    if ops is None:
        ops = linearized_operators(problem, frozen)
    phi = solve_forward(grid, ops.costate_schedule, phi0, inner_tol=inner_tol)
    psi_source = problem.obs.values * phi.fields
    psi = solve_backward(
        grid, ops.state_schedule, np.zeros(grid.shape), psi_source,
        inner_tol=inner_tol,
    )
    return AdjointPair(phi=phi, psi=psi)


def solve_cascade(
    problem: ValidatedProblem,
    v: np.ndarray | None,
    frozen=None,
    ops: CascadeOperators | None = None,
    include_force: bool = True,
    premasked: bool = False,
    inner_tol: float = 1e-13,
) -> CascadeSolution:
    """Solve the cascade (y, q) for a given control v on Q_omega.

    y marches forward from zero with source chi_omega v + f (+ the
    reaction offset F(0,0,0) in the frozen regime); q marches the
    transposed costate operator backward from q(T) = 0 with source
    chi_obs y.  ``include_force=False`` drops both f and the offset,
    which is the homogeneous map used by the synthesis operator.
    ``premasked=True`` takes v as already multiplied by the control
    mask, the form a stored control comes in.
    """
    grid = problem.grid
    if ops is None:
        ops = linearized_operators(problem, frozen)
    source = np.zeros((grid.n_steps,) + grid.shape)
    if v is not None:
        source += v if premasked else problem.omega.values * v
    if include_force:
        source += problem.force_fields
        if ops.reaction_offset != 0.0:
            source += ops.reaction_offset
    y = solve_forward(grid, ops.state_schedule, np.zeros(grid.shape), source,
                      inner_tol=inner_tol)
    q_source = problem.obs.values * y.fields
    q = solve_backward(grid, ops.costate_schedule, np.zeros(grid.shape), q_source,
                       inner_tol=inner_tol)
    return CascadeSolution(y=y, q=q, q0=q.state0)


def sentinel(y: Trajectory, obs_values: Array) -> float:
    """Phi(y) = 1/2 int_Q chi_obs |y|^2 by midpoint quadrature."""
    return float(0.5 * y.dt * y.basis.cell_volume * np.sum(obs_values * y.fields**2))


@dataclass
class InsensitivityReport:
    """Finite-difference sentinel sensitivity against its dual value."""

    tau: float
    d_fd: float
    d_fd_half: float
    d_dual: float
    gap: float
    gap_rel: float
    q0_norm: float
    yhat_norm: float
    phi_plus: float
    phi_minus: float

    @property
    def cauchy_schwarz_bound(self) -> float:
        return self.q0_norm * self.yhat_norm


def sentinel_sensitivity(
    problem: ValidatedProblem,
    v: np.ndarray | None,
    yhat0: Array,
    tau_probe: float = 1e-3,
    premasked: bool = False,
    inner_tol: float = 1e-13,
) -> InsensitivityReport:
    """Probe d/dtau Phi(y_tau) at tau = 0 and compare with <q(0), yhat0>.

    The finite-difference side runs the true dynamics (reaction term
    active when the problem carries one) from initial states +-tau*yhat0
    and +-tau/2*yhat0 under the same control.  The dual side solves the
    cascade at tau = 0: the state run y0, then the backward costate with
    the tangent coefficients frozen at y0 and source chi_obs y0.  In the
    linear case both sides agree to rounding; the half-step re-run makes
    quadratic tau bias visible in the report.
    """
    grid = problem.grid
    basis = problem.basis
    nl = problem.nonlinearity
    base = StaticSchedule(grid, problem.coefficients)

    source = problem.force_fields.copy()
    if v is not None:
        source += v if premasked else problem.omega.values * v

    def run(scale: float) -> Trajectory:
        init = scale * yhat0
        return solve_forward_nonlinear(
            grid, base, nl, init, source, inner_tol=inner_tol
        )

    tau = float(tau_probe)
    y_plus = run(tau)
    y_minus = run(-tau)
    phi_plus = sentinel(y_plus, problem.obs.values)
    phi_minus = sentinel(y_minus, problem.obs.values)
    d_fd = (phi_plus - phi_minus) / (2 * tau)
    d_fd_half = (
        sentinel(run(tau / 2), problem.obs.values)
        - sentinel(run(-tau / 2), problem.obs.values)
    ) / tau

    # dual value from the cascade at tau = 0
    if nl.is_zero:
        y0_traj = solve_forward(grid, base, np.zeros(grid.shape), source,
                                inner_tol=inner_tol)
        costate = base
    else:
        y0_traj = run(0.0)
        # tangent coefficients at the tau = 0 trajectory; imported here to
        # keep the linearization builder with the outer iteration module
        from .semilinear_loop import tangent_schedule

        costate = tangent_schedule(problem, y0_traj)
    q = solve_backward(
        grid, costate, np.zeros(grid.shape),
        problem.obs.values * y0_traj.fields, inner_tol=inner_tol,
    )
    d_dual = basis.inner(q.state0, yhat0)
    q0_norm = basis.norm(q.state0)
    yhat_norm = basis.norm(yhat0)
    gap = abs(d_fd - d_dual)
    scale = q0_norm * yhat_norm + abs(d_dual)
    return InsensitivityReport(
        tau=tau, d_fd=d_fd, d_fd_half=d_fd_half, d_dual=d_dual,
        gap=gap, gap_rel=gap / (scale + 1e-300),
        q0_norm=q0_norm, yhat_norm=yhat_norm,
        phi_plus=phi_plus, phi_minus=phi_minus,
    )
