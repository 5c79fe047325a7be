"""Grid, masks, coefficient fields, and problem validation."""
import numpy as np
import pytest

from insens4.errors import SetupError
from insens4.problem_setup import (
    CoefficientField,
    ProblemConfig,
    build_grid,
    build_mask,
    validate_problem,
)


def _config(grid, **overrides):
    base = dict(
        grid=grid,
        omega=build_mask(grid, [(0.5, 1.3)], "omega"),
        obs=build_mask(grid, [(0.9, 1.7)], "obs"),
        omega0=build_mask(grid, [(1.0, 1.2)], "omega0"),
    )
    base.update(overrides)
    return ProblemConfig(**base)


class TestGrid:
    def test_nodes_and_times(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        assert g.dt == pytest.approx(0.05)
        assert g.times.shape == (20,)
        # source and control samples live at midpoint nodes (j + 1/2) dt
        assert np.allclose(g.times, (np.arange(20) + 0.5) * 0.05)
        assert np.allclose(g.basis.nodes[0], np.arange(1, 16) * 2.0 / 16)

    def test_square_extent_broadcast(self):
        g = build_grid(2, 1.5, 8, 1.0, 16)
        assert g.extents == (1.5, 1.5)
        assert g.basis.shape == (7, 7)

    def test_too_coarse(self):
        with pytest.raises(SetupError) as exc:
            build_grid(1, 1.0, 4, 1.0, 20)
        assert exc.value.code == "grid-too-coarse"
        with pytest.raises(SetupError):
            build_grid(1, 1.0, 16, 1.0, 8)

    def test_bad_dimension(self):
        with pytest.raises(SetupError):
            build_grid(3, 1.0, 16, 1.0, 20)


class TestMask:
    def test_sharp_indicator_matches_nodes(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        m = build_mask(g, [(0.5, 1.25)], "m")
        x = g.basis.nodes[0]
        expected = ((x > 0.5) & (x < 1.25)).astype(float)
        assert np.array_equal(m.values, expected)
        assert np.array_equal(m.support, expected > 0)
        assert m.n_support == int(expected.sum())

    def test_union_of_boxes(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        m = build_mask(g, [(0.2, 0.5), (1.5, 1.8)], "m")
        x = g.basis.nodes[0]
        expected = ((x > 0.2) & (x < 0.5)) | ((x > 1.5) & (x < 1.8))
        assert np.array_equal(m.support, expected)

    def test_smooth_mask_ramps(self):
        g = build_grid(1, 2.0, 32, 1.0, 20)
        m = build_mask(g, [(0.5, 1.5)], "m", smooth=True)
        assert m.smooth
        assert np.all(m.values >= 0) and np.all(m.values <= 1)
        # plateau one cell in from each edge, strict ramp just inside it
        x = g.basis.nodes[0]
        core = (x >= 0.5 + 2.0 / 32) & (x <= 1.5 - 2.0 / 32)
        assert np.allclose(m.values[core], 1.0)
        edge = (x > 0.5) & (x < 0.5 + 2.0 / 32)
        assert np.all(m.values[edge] < 1.0)

    def test_2d_box(self):
        g = build_grid(2, 2.0, 12, 1.0, 20)
        m = build_mask(g, [((0.5, 1.5), (0.3, 1.0))], "m")
        xs, ys = g.basis.nodes
        expected = ((xs > 0.5) & (xs < 1.5))[:, None] & ((ys > 0.3) & (ys < 1.0))[None, :]
        assert np.array_equal(m.support, expected)

    def test_box_outside_domain(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        with pytest.raises(SetupError) as exc:
            build_mask(g, [(1.5, 2.5)], "m")
        assert exc.value.code == "box-outside-domain"

    def test_empty_mask(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        with pytest.raises(SetupError) as exc:
            build_mask(g, [(0.51, 0.55)], "m")
        assert exc.value.code == "empty-mask"


class TestCoefficientField:
    def test_constant_shapes_and_sup(self):
        a0 = CoefficientField.constant("a0", 0.7)
        assert a0.sup_declared == pytest.approx(0.7)
        b0 = CoefficientField.constant("b0", [0.3, 0.4], dim=2)
        assert b0.sup_declared == pytest.approx(0.5)
        with pytest.raises(SetupError) as exc:
            CoefficientField.constant("b0", 1.0, dim=2)
        assert exc.value.code == "coefficient-shape"

    def test_eval_broadcasts(self):
        g = build_grid(2, 2.0, 10, 1.0, 20)
        b = CoefficientField.constant("b", np.eye(2) * 0.2, dim=2)
        vals = b.eval(g.basis, 0.0)
        assert vals.shape == (2, 2) + g.basis.shape
        assert np.all(vals[0, 0] == 0.2) and np.all(vals[0, 1] == 0.0)

    def test_callable_bound_check(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        fld = CoefficientField.from_callable(
            "a0", lambda x, t: np.sin(np.pi * x), sup_declared=0.5)
        cfg = _config(g, a0=fld)
        with pytest.raises(SetupError) as exc:
            validate_problem(cfg)
        assert exc.value.code == "declared-bound-violated"


class TestValidateProblem:
    def test_seals_and_builds_weights(self):
        g = build_grid(1, 2.0, 32, 1.0, 40)
        p = validate_problem(_config(g, a0=CoefficientField.constant("a0", 0.7)))
        assert p.sup_norms["a0"] == pytest.approx(0.7)
        assert p.sup_norms["b"] == 0.0
        assert p.weights.s_threshold > 0
        assert p.constants.s >= p.weights.s_threshold * (1 - 1e-12)
        assert not p.y0.flags.writeable
        assert p.nonlinearity.is_zero

    def test_disjoint_omega_obs(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        cfg = _config(
            g,
            omega=build_mask(g, [(0.2, 0.6)], "omega"),
            obs=build_mask(g, [(1.2, 1.8)], "obs"),
            omega0=build_mask(g, [(0.3, 0.5)], "omega0"),
        )
        with pytest.raises(SetupError) as exc:
            validate_problem(cfg)
        assert exc.value.code == "disjoint-omega-obs"

    def test_omega0_margin(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        cfg = _config(g, omega0=build_mask(g, [(0.9, 1.7)], "omega0"))
        with pytest.raises(SetupError) as exc:
            validate_problem(cfg)
        assert exc.value.code == "omega0-margin"

    def test_nonzero_y0_rejected(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        cfg = _config(g, y0=np.ones(g.basis.shape))
        with pytest.raises(SetupError) as exc:
            validate_problem(cfg)
        assert exc.value.code == "nonzero-y0"

    def test_perturbation_normalized(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        yhat = np.zeros(g.basis.shape)
        yhat[3] = 7.0
        p = validate_problem(_config(g, yhat0=yhat))
        assert p.basis.norm(p.yhat0) == pytest.approx(1.0, rel=1e-13)
        with pytest.raises(SetupError) as exc:
            validate_problem(_config(g, yhat0=np.zeros(g.basis.shape)))
        assert exc.value.code == "degenerate-perturbation"

    def test_force_onset_required(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        force = np.ones((g.n_steps,) + g.basis.shape)
        with pytest.raises(SetupError) as exc:
            validate_problem(_config(g, force=force, force_onset=0.0))
        assert exc.value.code == "force-onset"

    def test_force_before_onset_rejected(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        force = np.ones((g.n_steps,) + g.basis.shape)
        with pytest.raises(SetupError) as exc:
            validate_problem(_config(g, force=force, force_onset=0.3))
        assert exc.value.code == "force-onset"

    def test_force_shape_checked(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        with pytest.raises(SetupError) as exc:
            validate_problem(_config(g, force=np.ones((3, 3)), force_onset=0.3))
        assert exc.value.code == "force-shape"

    def test_force_weight_integral(self):
        g = build_grid(1, 2.0, 32, 1.0, 40)
        force = np.zeros((g.n_steps,) + g.basis.shape)
        profile = np.sin(np.pi * g.basis.nodes[0] / 2.0)
        late = g.times > 0.25
        force[late] = profile
        p1 = validate_problem(_config(g, force=force, force_onset=0.25))
        p2 = validate_problem(_config(g, force=3.0 * force, force_onset=0.25))
        assert p1.force_weight_integral > 0
        # quadratic in the force amplitude
        assert p2.force_weight_integral == pytest.approx(
            9.0 * p1.force_weight_integral, rel=1e-12)
        # matches the direct weighted sum over active midpoints
        b = g.basis
        direct = g.dt * sum(
            np.exp(p1.constants.rate_m / np.sqrt(t)) * b.inner(f, f)
            for t, f in zip(g.times, force) if b.inner(f, f) > 0)
        assert p1.force_weight_integral == pytest.approx(direct, rel=1e-10)

    def test_zero_force_integral_is_zero(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        p = validate_problem(_config(g))
        assert p.force_weight_integral == 0.0

    def test_early_onset_divergence(self):
        # an onset so early that exp(M / sqrt(t)) overflows must be loud
        g = build_grid(1, 2.0, 32, 1.0, 4000)
        force = np.zeros((g.n_steps,) + g.basis.shape)
        force[g.times > 1e-4] = 1.0
        cfg = _config(g, force=force, force_onset=1e-4)
        with pytest.raises(SetupError) as exc:
            validate_problem(cfg)
        assert exc.value.code == "force-weight-divergent"

    def test_wrong_role_slot(self):
        g = build_grid(1, 2.0, 16, 1.0, 20)
        cfg = _config(g, a0=CoefficientField.constant("a1", 0.5))
        with pytest.raises(SetupError) as exc:
            validate_problem(cfg)
        assert exc.value.code == "coefficient-shape"
