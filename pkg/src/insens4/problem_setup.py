"""Grids, subdomain masks, coefficients, and sealed problem instances.

The verification pipeline wants every ingredient checked once, up front,
and then frozen: masks are sharp node indicators built from boxes,
coefficient fields carry declared sup bounds that must dominate their
sampled values, the force must switch on strictly after t = 0 so its
singular-weighted energy is finite, and the initial state is pinned to
zero in insensitization mode.  ``validate_problem`` runs all of these
checks, builds the Carleman weights and observability constants for the
instance, and returns an immutable bundle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from . import carleman_weights as cw
from .errors import SetupError
from .nonlinearity import NonlinearitySpec, make_nonlinearity
from .spectral import SineBasis

__all__ = [
    "Grid",
    "SubdomainMask",
    "CoefficientField",
    "ProblemConfig",
    "ValidatedProblem",
    "build_grid",
    "build_mask",
    "validate_problem",
]

Array = np.ndarray
_ROLES = ("a0", "b0", "b", "a1")


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass
class Grid:
    """Uniform space-time grid; spatial fields live on interior nodes."""

    dim: int
    extents: tuple[float, ...]
    n_cells: int
    t_final: float
    n_steps: int
    basis: SineBasis = field(repr=False)
    dt: float
    times: np.ndarray = field(repr=False)  # midpoint nodes (j + 1/2) dt

    @property
    def shape(self) -> tuple[int, ...]:
        return self.basis.shape


def build_grid(
    dimension: int,
    extents: float | tuple[float, ...],
    n_cells: int,
    t_final: float,
    n_steps: int,
) -> Grid:
    """Build the grid; interior nodes number ``n_cells - 1`` per axis.

    Raises
    ------
    SetupError
        ``grid-too-coarse`` for n_cells < 8 or n_steps < 16,
        ``grid-dimension`` for dimensions other than 1 and 2.
    """
    if dimension not in (1, 2):
        raise SetupError("grid-dimension", f"dimension {dimension} not supported")
    if np.isscalar(extents):
        extents = (float(extents),) * dimension
    extents = tuple(float(L) for L in extents)
    if len(extents) != dimension or any(L <= 0 for L in extents):
        raise SetupError("grid-dimension", f"bad extents {extents}")
    if n_cells < 8 or n_steps < 16:
        raise SetupError(
            "grid-too-coarse",
            f"need n_cells >= 8 and n_steps >= 16, got {n_cells}, {n_steps}",
        )
    if t_final <= 0:
        raise SetupError("grid-dimension", f"t_final = {t_final} must be positive")
    basis = SineBasis(extents, n_cells)
    dt = t_final / n_steps
    times = (np.arange(n_steps) + 0.5) * dt
    return Grid(
        dim=dimension, extents=extents, n_cells=int(n_cells),
        t_final=float(t_final), n_steps=int(n_steps),
        basis=basis, dt=dt, times=_freeze(times),
    )


@dataclass
class SubdomainMask:
    """Node indicator of a union of boxes; sharp masks are exactly 0/1."""

    label: str
    boxes: tuple
    values: np.ndarray = field(repr=False)
    support: np.ndarray = field(repr=False)
    smooth: bool

    @property
    def n_support(self) -> int:
        return int(self.support.sum())


def _normalize_boxes(boxes, dim: int):
    if dim == 1 and boxes and np.isscalar(boxes[0]):
        boxes = [tuple(boxes)]
    out = []
    for box in boxes:
        if dim == 1:
            lo, hi = box
            out.append(((float(lo), float(hi)),))
        else:
            out.append(tuple((float(lo), float(hi)) for lo, hi in box))
    return tuple(out)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    """Quintic ramp, C^2 at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t * t)


def build_mask(grid: Grid, boxes, label: str = "", smooth: bool = False) -> SubdomainMask:
    """Indicator of a union of open boxes on the interior nodes.

    Sharp masks (default) are exactly one at nodes strictly inside a box
    and zero elsewhere.  With ``smooth=True`` each box edge carries a
    one-cell quintic ramp instead.

    Raises
    ------
    SetupError
        ``box-outside-domain`` when a box leaves [0, L] on some axis,
        ``empty-mask`` when no node falls in any box.
    """
    basis = grid.basis
    norm = _normalize_boxes(boxes, grid.dim)
    if not norm:
        raise SetupError("empty-mask", f"mask {label!r} has no boxes")
    for box in norm:
        for ax, (lo, hi) in enumerate(box):
            L = basis.extents[ax]
            if not (0.0 <= lo < hi <= L):
                raise SetupError(
                    "box-outside-domain",
                    f"mask {label!r}: interval ({lo}, {hi}) outside [0, {L}] on axis {ax}",
                )
    values = np.zeros(basis.shape)
    for box in norm:
        box_vals = np.ones(basis.shape)
        for ax, (lo, hi) in enumerate(box):
            x = basis.nodes[ax]
            h = basis.extents[ax] / basis.n_cells
            ramp = min(h, (hi - lo) / 2)
            if smooth:
                ax_vals = _smoothstep((x - lo) / ramp) * _smoothstep((hi - x) / ramp)
            else:
                ax_vals = ((x > lo) & (x < hi)).astype(float)
            shape = [1] * grid.dim
            shape[ax] = x.size
            box_vals = box_vals * ax_vals.reshape(shape)
        values = np.maximum(values, box_vals)
    support = values > 0
    if not support.any():
        raise SetupError("empty-mask", f"mask {label!r} covers no interior node")
    return SubdomainMask(
        label=label, boxes=norm, values=_freeze(values),
        support=_freeze(support), smooth=bool(smooth),
    )


def _contained_with_margin(inner: np.ndarray, outer: np.ndarray, margin: int = 1) -> bool:
    """Inner support, dilated by ``margin`` nodes, stays inside outer."""
    inner_p = np.pad(inner, margin)
    outer_p = np.pad(outer, margin)
    dil = ndimage.binary_dilation(
        inner_p, structure=np.ones((3,) * inner.ndim, dtype=bool), iterations=margin
    )
    return bool(np.all(outer_p[dil]))


@dataclass
class CoefficientField:
    """One lower-order coefficient with a declared sup bound.

    Roles and shapes: ``a0``/``a1`` map to scalars, ``b0`` to a vector of
    length dim, ``b`` to a dim-by-dim matrix; evaluators return the
    component stack with spatial axes last.
    """

    role: str
    evaluator: Callable | np.ndarray
    sup_declared: float
    time_constant: bool
    label: str = ""

    @staticmethod
    def constant(role: str, value, dim: int = 1, label: str = "") -> "CoefficientField":
        value = np.asarray(value, dtype=float)
        expected = {"a0": (), "a1": (), "b0": (dim,), "b": (dim, dim)}[role]
        if value.shape != expected:
            raise SetupError(
                "coefficient-shape",
                f"role {role!r} expects shape {expected}, got {value.shape}",
            )
        sup = float(np.sqrt(np.sum(value**2)))
        return CoefficientField(role, value, sup, True, label or f"{role}-const")

    @staticmethod
    def from_callable(
        role: str, fn: Callable, sup_declared: float,
        time_constant: bool = False, label: str = "",
    ) -> "CoefficientField":
        return CoefficientField(role, fn, float(sup_declared), time_constant,
                                label or f"{role}-fn")

    def eval(self, basis: SineBasis, t: float) -> np.ndarray:
        dim = basis.dim
        lead = {"a0": (), "a1": (), "b0": (dim,), "b": (dim, dim)}[self.role]
        if callable(self.evaluator):
            out = np.asarray(self.evaluator(*basis.mesh(), t), dtype=float)
            target = lead + basis.shape
            return np.broadcast_to(out, target).astype(float, copy=False)
        out = np.asarray(self.evaluator, dtype=float)
        return np.broadcast_to(
            out.reshape(lead + (1,) * dim), lead + basis.shape
        ).astype(float, copy=False)

    def pointwise_magnitude(self, values: np.ndarray, dim: int) -> np.ndarray:
        lead = {"a0": 0, "a1": 0, "b0": 1, "b": 2}[self.role]
        if lead == 0:
            return np.abs(values)
        return np.sqrt(np.sum(values**2, axis=tuple(range(lead))))


@dataclass
class ProblemConfig:
    """Mutable builder for a problem instance; seal with validate_problem."""

    grid: Grid
    omega: SubdomainMask
    obs: SubdomainMask
    omega0: SubdomainMask
    a0: CoefficientField | None = None
    b0: CoefficientField | None = None
    b: CoefficientField | None = None
    a1: CoefficientField | None = None
    force: Callable | np.ndarray | None = None
    force_onset: float = 0.0
    y0: np.ndarray | None = None
    yhat0: np.ndarray | None = None
    epsilon: float = 1e-3
    lam: float = 1.0
    s: float | None = None
    s_factor: float = 1.0
    c_proxy: float = 1.0
    eta_peak: tuple[float, ...] | None = None
    nonlinearity: NonlinearitySpec | None = None


@dataclass(frozen=True)
class ValidatedProblem:
    """Sealed problem instance; all arrays are read-only."""

    grid: Grid
    omega: SubdomainMask
    obs: SubdomainMask
    omega0: SubdomainMask
    coefficients: dict
    sup_norms: dict
    force_fields: np.ndarray
    force_onset: float
    y0: np.ndarray
    yhat0: np.ndarray | None
    epsilon: float
    nonlinearity: NonlinearitySpec
    profile: cw.WeightProfile
    weights: cw.CarlemanWeights
    constants: cw.ObservabilityConstants
    force_weight_integral: float

    @property
    def basis(self) -> SineBasis:
        return self.grid.basis

    def force_at(self, j: int) -> np.ndarray:
        return self.force_fields[j]


def _materialize_force(grid: Grid, force) -> np.ndarray:
    basis = grid.basis
    if force is None:
        return np.zeros((grid.n_steps,) + basis.shape)
    if callable(force):
        out = np.empty((grid.n_steps,) + basis.shape)
        for j, t in enumerate(grid.times):
            out[j] = np.broadcast_to(
                np.asarray(force(*basis.mesh(), t), dtype=float), basis.shape
            )
        return out
    out = np.asarray(force, dtype=float)
    if out.shape != (grid.n_steps,) + basis.shape:
        raise SetupError(
            "force-shape",
            f"force array must have shape {(grid.n_steps,) + basis.shape}, got {out.shape}",
        )
    return out.copy()


def validate_problem(config: ProblemConfig, require_insensitization: bool = True) -> ValidatedProblem:
    """Check, complete, and seal a problem instance.

    Verifies mask geometry (omega and the observation set overlap, the
    inner subdomain sits inside the overlap with a one-cell margin),
    pins y0 to zero in insensitization mode, normalizes the perturbation
    direction, asserts every declared coefficient bound against sampled
    values on the grid, checks the force switches on strictly after
    t = 0 and that its singular-weighted energy integral is finite, and
    builds the Carleman weights and observability constants.

    Raises
    ------
    SetupError
        ``disjoint-omega-obs``, ``omega0-margin``, ``nonzero-y0``,
        ``degenerate-perturbation``, ``declared-bound-violated``,
        ``force-onset``, ``force-weight-divergent``.
    """
    grid = config.grid
    basis = grid.basis

    overlap = config.omega.support & config.obs.support
    if not overlap.any():
        raise SetupError(
            "disjoint-omega-obs",
            "control region and observation region share no interior node",
        )
    if not _contained_with_margin(config.omega0.support, overlap, margin=1):
        raise SetupError(
            "omega0-margin",
            "inner subdomain must sit inside omega intersect obs with a one-cell margin",
        )

    if config.y0 is None:
        y0 = np.zeros(basis.shape)
    else:
        y0 = np.asarray(config.y0, dtype=float)
        if require_insensitization and np.any(y0 != 0):
            raise SetupError("nonzero-y0", "insensitization requires y0 = 0")

    yhat0 = None
    if config.yhat0 is not None:
        yhat0 = np.asarray(config.yhat0, dtype=float).copy()
        nrm = basis.norm(yhat0)
        if nrm <= 0:
            raise SetupError("degenerate-perturbation", "perturbation direction is zero")
        yhat0 /= nrm

    coefficients = {}
    sup_norms = {}
    for role in _ROLES:
        fld: CoefficientField | None = getattr(config, role)
        if fld is None:
            sup_norms[role] = 0.0
            coefficients[role] = None
            continue
        if fld.role != role:
            raise SetupError("coefficient-shape",
                             f"field in slot {role!r} has role {fld.role!r}")
        sample_times = grid.times[:1] if fld.time_constant else grid.times
        observed = 0.0
        for t in sample_times:
            mag = fld.pointwise_magnitude(fld.eval(basis, t), grid.dim)
            observed = max(observed, float(mag.max()))
        if observed > fld.sup_declared * (1 + 1e-12) + 1e-300:
            raise SetupError(
                "declared-bound-violated",
                f"{fld.label}: sampled sup {observed} exceeds declared {fld.sup_declared}",
            )
        coefficients[role] = fld
        sup_norms[role] = fld.sup_declared

    force_fields = _materialize_force(grid, config.force)
    onset = float(config.force_onset)
    has_force = bool(np.any(force_fields != 0))
    if has_force and onset <= 0:
        raise SetupError(
            "force-onset",
            "a nonzero force requires a strictly positive onset time",
        )
    early = grid.times < onset
    if np.any(force_fields[early] != 0):
        raise SetupError(
            "force-onset",
            "force must vanish before its declared onset time",
        )

    profile = cw.build_eta(basis, config.omega0.support, peak=config.eta_peak)
    weights = cw.build_weights(profile, config.lam, grid.t_final)
    s = config.s if config.s is not None else weights.s_threshold * config.s_factor
    constants = cw.observability_constants(weights, s, sup_norms, config.c_proxy)

    # singular-weighted force energy, in log space to make divergence loud
    fw = 0.0
    if has_force:
        norms2 = np.array([basis.inner(f, f) for f in force_fields])
        active = norms2 > 0
        exponents = constants.rate_m / np.sqrt(grid.times[active]) + np.log(norms2[active])
        if exponents.size and exponents.max() > 700.0 - np.log(grid.dt):
            raise SetupError(
                "force-weight-divergent",
                "exp(M/sqrt(t)) |f|^2 overflows on the grid; push the onset later "
                "or reduce the weight rate",
            )
        fw = float(grid.dt * np.sum(np.exp(exponents)))

    nl = config.nonlinearity if config.nonlinearity is not None else make_nonlinearity("zero", dim=grid.dim)
    if nl.dim != grid.dim:
        raise SetupError("coefficient-shape",
                         f"nonlinearity dimension {nl.dim} != grid dimension {grid.dim}")

    return ValidatedProblem(
        grid=grid, omega=config.omega, obs=config.obs, omega0=config.omega0,
        coefficients=coefficients, sup_norms=sup_norms,
        force_fields=_freeze(force_fields), force_onset=onset,
        y0=_freeze(y0), yhat0=None if yhat0 is None else _freeze(yhat0),
        epsilon=float(config.epsilon), nonlinearity=nl,
        profile=profile, weights=weights, constants=constants,
        force_weight_integral=fw,
    )
