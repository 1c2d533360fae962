import numpy as np
import pytest

from fixnet.hilbert import BlockLayout, Point
from fixnet.operators import (DomainError, EstimationError, NonexpansiveOp,
                              OperatorSet, affine_projection_op, averaged,
                              ball_projection, box_projection, clip_half_map,
                              estimate_linear_regularity,
                              estimate_power_regularity, estimate_regularity,
                              gradient_descent_map, halfspace_projection,
                              identity_op, nonexpansiveness_defect,
                              power_constant_from_linear,
                              quasi_nonexpansiveness_defect, residual,
                              row_block_map, sample_in_ball, square_map,
                              two_halfspace_projection)


def catalog():
    return [
        (identity_op(3), 5.0),
        (box_projection([-1.0, 0.0], [1.0, 2.0]), 5.0),
        (ball_projection([0.5, -0.5], 1.5), 5.0),
        (halfspace_projection([1.0, -0.5, 0.25], 0.3), 5.0),
        (affine_projection_op([[1.0, 2.0, -1.0]], [0.5]), 5.0),
        (gradient_descent_map([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0], 0.5), 5.0),
        (row_block_map([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]], [1.0, 0.0]), 5.0),
        (square_map(), 0.999),
        (clip_half_map(), 0.999),
    ]


class TestEvaluation:
    def test_identity(self):
        op = identity_op(2)
        x = np.array([3.0, -4.0])
        assert np.array_equal(op(x), x)

    def test_clip_projection_value(self):
        # projection onto [0, 1/2] evaluated at 1
        op = box_projection([0.0], [0.5])
        assert op(np.array([1.0]))[0] == 0.5

    def test_halfspace_closed_form(self):
        op = halfspace_projection([1.0, 0.0], 0.0)
        assert np.allclose(op(np.array([2.0, 3.0])), [0.0, 3.0])

    def test_halfspace_against_constrained_minimization(self):
        # closed form vs a numerical constrained-minimization oracle
        cp = pytest.importorskip("cvxpy")
        rng = np.random.default_rng(42)
        for _ in range(5):
            a = rng.standard_normal(3)
            b = float(rng.standard_normal())
            x0 = rng.uniform(-4, 4, 3)
            z = cp.Variable(3)
            cp.Problem(cp.Minimize(cp.sum_squares(z - x0)), [a @ z <= b]).solve()
            ours = halfspace_projection(a, b)(x0)
            assert np.allclose(ours, z.value, atol=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            identity_op(2)(np.zeros(3))

    def test_domain_rejection(self):
        with pytest.raises(DomainError):
            square_map()(np.array([1.0]))
        with pytest.raises(DomainError):
            square_map()(np.array([-0.1]))


class TestPointEvaluation:
    def test_evaluate_preserves_layout(self):
        from fixnet.operators import evaluate
        lay = BlockLayout((1, 1))
        p = Point(np.array([2.0, 3.0]), lay)
        out = evaluate(halfspace_projection([1.0, 0.0], 0.0), p)
        assert isinstance(out, Point)
        assert out.layout == lay
        assert np.allclose(out.coords, [0.0, 3.0])


class TestAveraged:
    def test_identity_pointwise(self):
        op = averaged(identity_op(2), 0.3)
        x = np.array([1.0, -2.0])
        assert np.allclose(op(x), x)

    def test_half_relaxed_projection(self):
        op = averaged(box_projection([0.0], [0.5]), 0.5)
        assert op(np.array([1.0]))[0] == 0.75

    def test_negation_map(self):
        neg = NonexpansiveOp("negate", 1, lambda x: -x, projector=lambda x: np.zeros(1))
        op = averaged(neg, 0.25)
        assert op(np.array([2.0]))[0] == 1.0

    def test_alpha_out_of_range(self):
        for bad in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(ValueError):
                averaged(identity_op(1), bad)

    def test_residual_scales_exactly(self):
        rng = np.random.default_rng(6)
        base = halfspace_projection([1.0, 1.0], 0.0)
        for alpha in (0.5, 0.25, 0.37):
            op = averaged(base, alpha)
            for _ in range(50):
                x = rng.uniform(-3, 3, 2)
                assert residual(op, x) == pytest.approx(alpha * residual(base, x), rel=1e-12)

    def test_keeps_fixed_set(self):
        base = box_projection([0.0, 0.0], [1.0, 1.0])
        op = averaged(base, 0.7)
        x = np.array([2.0, -1.0])
        z = op.fixed_projection(x)
        assert np.allclose(op(z), z, atol=1e-12)


class TestResidual:
    def test_fixed_point_gives_zero(self):
        op = box_projection([0.0], [0.5])
        assert residual(op, np.array([0.3])) == 0.0

    def test_clip_at_one(self):
        op = box_projection([0.0], [0.5])
        assert residual(op, np.array([1.0])) == 0.5

    def test_square_map_value(self):
        # |x - x^2| at 0.9 is 0.09
        assert residual(square_map(), np.array([0.9])) == pytest.approx(0.09, abs=1e-12)


class TestNonexpansiveness:
    @pytest.mark.parametrize("op,radius", [c for c in catalog() if not c[0].quasi_only],
                             ids=lambda c: getattr(c, "name", c))
    def test_catalog_is_nonexpansive(self, op, radius):
        defect = nonexpansiveness_defect(op, radius, 10000, 2024)
        assert defect <= 1e-10

    def test_square_map_is_quasi_but_not_pairwise_nonexpansive(self):
        op = square_map()
        assert quasi_nonexpansiveness_defect(op, 0.999, 10000, 2024) <= 1e-10
        # pairwise the map genuinely expands: |x^2-y^2| = |x+y||x-y|
        assert nonexpansiveness_defect(op, 0.999, 10000, 2024) > 0.5

    @pytest.mark.parametrize("op,radius", [c for c in catalog() if c[0].has_projector],
                             ids=lambda c: getattr(c, "name", c))
    def test_projector_lands_on_fixed_points(self, op, radius):
        rng = np.random.default_rng(31)
        pts = sample_in_ball(rng, op.dim, radius, 200)
        if op.domain is not None:
            lo, hi = np.asarray(op.domain.lo), np.asarray(op.domain.hi)
            pts = pts[np.all(pts >= lo, axis=1) & np.all(pts < hi, axis=1)]
        for x in pts:
            z = op.fixed_projection(x)
            assert np.linalg.norm(op(z) - z) <= 1e-10 * (1 + np.linalg.norm(z))

    def test_fixed_point_inner_product_bound(self):
        # 2 <y - z, y - T(y)> >= ||T(y) - y||^2 with z the fixed-set projection
        rng = np.random.default_rng(97)
        for op, radius in catalog():
            if not op.has_projector:
                continue
            pts = sample_in_ball(rng, op.dim, radius, 300)
            if op.domain is not None:
                lo, hi = np.asarray(op.domain.lo), np.asarray(op.domain.hi)
                pts = pts[np.all(pts >= lo, axis=1) & np.all(pts < hi, axis=1)]
            for y in pts:
                z = op.fixed_projection(y)
                ty = op(y)
                assert 2 * np.dot(y - z, y - ty) >= np.dot(ty - y, ty - y) - 1e-10

    def test_gradient_map_step_range(self):
        P = [[2.0, 0.0], [0.0, 1.0]]   # largest eigenvalue 2, step must stay below 1
        with pytest.raises(ValueError):
            gradient_descent_map(P, [0.0, 0.0], 1.5)
        gradient_descent_map(P, [0.0, 0.0], 0.9)


class TestTwoHalfspaceProjection:
    def test_matches_constrained_minimization(self):
        cp = pytest.importorskip("cvxpy")
        rng = np.random.default_rng(5)
        a1, b1 = np.array([1.0, 0.0]), 0.0
        a2, b2 = np.array([-0.6, 0.8]), 0.0
        proj = two_halfspace_projection(a1, b1, a2, b2)
        for _ in range(8):
            x0 = rng.uniform(-8, 8, 2)
            z = cp.Variable(2)
            cp.Problem(cp.Minimize(cp.sum_squares(z - x0)),
                       [a1 @ z <= b1, a2 @ z <= b2]).solve()
            assert np.allclose(proj(x0), z.value, atol=1e-7)

    def test_feasible_point_is_fixed(self):
        proj = two_halfspace_projection([1.0, 0.0], 1.0, [0.0, 1.0], 1.0)
        x = np.array([0.5, -2.0])
        assert np.array_equal(proj(x), x)


class TestLinearRegularityEstimation:
    def test_projection_gives_one(self):
        for op in (halfspace_projection([1.0, 2.0], 1.0),
                   ball_projection([0.0, 0.0], 1.0),
                   box_projection([-1.0], [1.0])):
            k = estimate_linear_regularity(op, 5.0, 2000, 11)
            assert k == pytest.approx(1.0, abs=1e-9)

    def test_identity_has_no_usable_residuals(self):
        with pytest.raises(EstimationError):
            estimate_linear_regularity(identity_op(2), 5.0, 500, 11)

    def test_missing_projector(self):
        bare = NonexpansiveOp("bare", 1, lambda x: 0.5 * x)
        with pytest.raises(EstimationError):
            estimate_linear_regularity(bare, 1.0, 100, 11)

    def test_square_map_blowup_matches_closed_form(self):
        # the ratio is 1/(1-x), so at radius 0.99 the estimate passes 50
        k = estimate_linear_regularity(square_map(), 0.99, 100000, 12)
        assert k > 50.0
        assert k <= 1.0 / (1.0 - 0.99) + 1e-9

    def test_deterministic_for_fixed_seed(self):
        op = halfspace_projection([1.0, -1.0], 0.2)
        a = estimate_linear_regularity(op, 4.0, 1000, 99)
        b = estimate_linear_regularity(op, 4.0, 1000, 99)
        assert a == b


class TestPowerRegularityEstimation:
    def test_square_clip_pair_constant_two(self):
        ops = OperatorSet([square_map(), clip_half_map()],
                          common_projector=lambda x: np.zeros(1))
        nu = estimate_power_regularity(ops, 0.999, 20000, 13)
        assert nu <= 2.0 + 1e-6
        assert nu > 1.5

    def test_single_projection_reduces_to_linear(self):
        op = halfspace_projection([1.0, 0.0], 0.0)
        ops = OperatorSet([op], common_projector=op._fn)
        nu = estimate_power_regularity(ops, 5.0, 2000, 14)
        assert nu == pytest.approx(1.0, abs=1e-9)

    def test_two_halfspaces_match_grid_search(self):
        a1, b1 = np.array([1.0, 0.0]), 0.0
        a2, b2 = np.array([-0.6, 0.8]), 0.0
        ops = OperatorSet([halfspace_projection(a1, b1), halfspace_projection(a2, b2)],
                          common_projector=two_halfspace_projection(a1, b1, a2, b2))
        grid = np.linspace(-10, 10, 100)
        best = -np.inf
        for x in grid:
            for y in grid:
                p = np.array([x, y])
                if np.linalg.norm(p) > 10:
                    continue
                denom = residual(ops[0], p) + residual(ops[1], p)
                if denom <= 1e-9:
                    continue
                best = max(best, ops.distance_to_common(p) / denom)
        nu = estimate_power_regularity(ops, 10.0, 4000, 12345)
        assert np.isfinite(nu)
        assert abs(nu - best) <= 0.05 * best

    def test_missing_common_projector(self):
        ops = OperatorSet([identity_op(1)])
        with pytest.raises(EstimationError):
            estimate_power_regularity(ops, 1.0, 100, 15)


class TestCombinedRegularity:
    def test_power_constant_from_linear_values(self):
        assert power_constant_from_linear([1.0, 1.0], 1.0) == 1.0
        assert power_constant_from_linear([2.0, 3.0], 2.0) == 6.0
        with pytest.raises(ValueError):
            power_constant_from_linear([-1.0], 1.0)

    def test_shared_sample_combination_bound(self):
        # on one shared sample set, nu_hat <= kappa_set_hat * kappa_max_hat
        a1, b1 = np.array([1.0, 0.0]), 0.0
        a2, b2 = np.array([-0.6, 0.8]), 0.0
        ops = OperatorSet([halfspace_projection(a1, b1), halfspace_projection(a2, b2)],
                          common_projector=two_halfspace_projection(a1, b1, a2, b2))
        est = estimate_regularity(ops, 10.0, 8000, 16)
        assert est.nu <= est.kappa_set * est.kappa_max + 1e-9
        assert est.kappa_max == pytest.approx(1.0, abs=1e-9)
        assert est.sample_count > 0
        assert est.rng_seed == 16
