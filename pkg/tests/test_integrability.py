"""Refined quadrature, integrability verdicts, and Sobolev norms."""

import dataclasses

import numpy as np
import pytest

from roughdiff import integrability as ig
from roughdiff import testfunctions
from roughdiff.errors import BoxTooSmall, DimensionMismatch, NoHessian
from roughdiff.testfunctions import component_function, make_test_function


def closed_form_potential(pts):
    return 0.5 * np.exp(-np.abs(np.asarray(pts)[..., 0]))


def gauss_weight_2d(pts):
    pts = np.asarray(pts)
    return np.exp(-(pts ** 2).sum(axis=-1))


class TestBoxNormalization:
    def test_scalar_pair_broadcasts(self):
        assert ig._norm_box((-1.0, 2.0), 2) == [(-1.0, 2.0), (-1.0, 2.0)]

    def test_per_axis(self):
        box = [(-1.0, 1.0), (0.0, 4.0)]
        assert ig._norm_box(box, 2) == [(-1.0, 1.0), (0.0, 4.0)]

    def test_bad_shapes(self):
        with pytest.raises(DimensionMismatch):
            ig._norm_box((0.0, 1.0, 2.0), 1)
        with pytest.raises(DimensionMismatch):
            ig._norm_box([(-1.0, 1.0)], 2)
        with pytest.raises(DimensionMismatch):
            ig._norm_box((1.0, -1.0), 1)


class TestRefinedIntegral:
    def test_smooth_1d(self):
        res = ig.refined_integral(lambda p: np.sin(p[..., 0]) ** 2,
                                  (0.0, np.pi), 0.01, [], 1)
        assert res.finite
        np.testing.assert_allclose(res.value, np.pi / 2, rtol=1e-6)
        assert res.ratios == [] and res.increments == []

    def test_smooth_2d(self):
        res = ig.refined_integral(lambda p: (p ** 2).sum(axis=-1),
                                  (0.0, 1.0), 0.02, [], 2)
        assert res.finite
        np.testing.assert_allclose(res.value, 2.0 / 3.0, rtol=1e-3)

    def test_integrable_singularity_1d(self):
        # int_{-1}^{1} |x|^(-1/2) dx = 4; shells plus the geometric
        # remainder recover it
        def f(p):
            return np.abs(p[..., 0]) ** -0.5

        res = ig.refined_integral(f, (-1.0, 1.0), 0.01, [np.zeros(1)], 1)
        assert res.finite
        np.testing.assert_allclose(res.value, 4.0, rtol=1e-2)
        assert res.remainder > 0
        # shell scaling for r^(-1/2): successive ratio 2^(-1/2)
        np.testing.assert_allclose(res.ratios, 2.0 ** -0.5, rtol=1e-2)

    @pytest.mark.parametrize("power", [1.0, 1.5])
    def test_divergent_singularity_1d(self, power):
        def f(p, _s=power):
            return np.abs(p[..., 0]) ** -_s

        res = ig.refined_integral(f, (-1.0, 1.0), 0.01, [np.zeros(1)], 1)
        assert not res.finite
        assert res.value is None
        assert all(r > 0.99 for r in res.ratios)

    def test_integrable_singularity_2d(self):
        # int over [-1,1]^2 of 1/|x| = 8 log(1 + sqrt 2)
        def f(p):
            r = np.sqrt((p ** 2).sum(axis=-1))
            return 1.0 / np.where(r > 0, r, 1.0)

        res = ig.refined_integral(f, (-1.0, 1.0), 0.02, [np.zeros(2)], 2)
        assert res.finite
        np.testing.assert_allclose(res.value, 8.0 * np.log(1.0 + np.sqrt(2)),
                                   rtol=1e-2)

    def test_divergent_singularity_2d(self):
        def f(p):
            r2 = (p ** 2).sum(axis=-1)
            return 1.0 / np.where(r2 > 0, r2, 1.0)

        res = ig.refined_integral(f, (-1.0, 1.0), 0.02, [np.zeros(2)], 2)
        assert not res.finite

    def test_singular_point_outside_box_ignored(self):
        def f(p):
            return np.abs(p[..., 0]) ** -0.5

        res = ig.refined_integral(f, (0.5, 2.0), 0.01, [np.zeros(1)], 1)
        assert res.finite
        np.testing.assert_allclose(res.value, 2.0 * (2.0 ** 0.5 - 0.5 ** 0.5),
                                   rtol=1e-4)
        assert res.increments == []

    def test_two_singular_points_unsupported(self):
        with pytest.raises(ValueError):
            ig.refined_integral(lambda p: p[..., 0] * 0 + 1.0, (-1.0, 1.0),
                                0.01, [np.zeros(1), np.ones(1) * 0.5], 1)

    def test_partial_sums_track_increments(self):
        def f(p):
            return np.abs(p[..., 0]) ** -0.5

        res = ig.refined_integral(f, (-1.0, 1.0), 0.01, [np.zeros(1)], 1)
        assert len(res.increments) == 5
        assert len(res.ratios) == 4
        assert len(res.partial_sums) == 6
        np.testing.assert_allclose(res.partial_sums[-1],
                                   res.base + sum(res.increments), rtol=1e-12)


class TestConditionChecks:
    def test_gradient_condition_linear(self):
        F = make_test_function("linear", c=[2.0])
        res = ig.check_condition_1(F, closed_form_potential,
                                   (-10.0, 10.0), 0.01)
        assert res.finite
        np.testing.assert_allclose(res.value, 4.0 * (1.0 - np.exp(-10.0)),
                                   atol=1e-3)
        assert res.kind == "condition_1"

    def test_hessian_condition_quadratic_1d(self):
        F = make_test_function("quadratic", dim=1)
        res = ig.check_condition_2(F, closed_form_potential,
                                   (-10.0, 10.0), 0.01)
        assert res.finite
        np.testing.assert_allclose(res.value, 4.0, atol=2e-3)
        assert res.entry_finite.shape == (1, 1)

    def test_hessian_condition_quadratic_2d_entries(self):
        F = make_test_function("quadratic", dim=2)
        res = ig.check_condition_2(F, gauss_weight_2d, (-4.0, 4.0), 0.05)
        assert res.finite
        np.testing.assert_allclose(res.entry_values,
                                   [[4.0 * np.pi, 0.0], [0.0, 4.0 * np.pi]],
                                   rtol=1e-3, atol=1e-9)
        np.testing.assert_allclose(res.value, 8.0 * np.pi, rtol=1e-3)

    @pytest.mark.parametrize("alpha,finite", [
        (0.25, False), (0.4, False), (0.5, False), (0.6, True), (0.75, True),
    ])
    def test_hessian_condition_abs_power_sweep(self, alpha, finite):
        F = make_test_function("abs_power", alpha=alpha)
        res = ig.check_condition_2(F, closed_form_potential,
                                   (-10.0, 10.0), 0.01)
        assert res.finite is finite
        if finite:
            assert res.value > 0
        else:
            assert res.value is None
            assert np.isinf(res.entry_values).any()

    @pytest.mark.parametrize("alpha", [0.25, 0.4, 0.75])
    def test_gradient_condition_abs_power_always_finite(self, alpha):
        F = make_test_function("abs_power", alpha=alpha)
        res = ig.check_condition_1(F, closed_form_potential,
                                   (-10.0, 10.0), 0.01)
        assert res.finite

    def test_no_hessian(self):
        F = component_function(make_test_function("quadratic", dim=1), 0)
        with pytest.raises(NoHessian):
            ig.check_condition_2(F, closed_form_potential,
                                 (-10.0, 10.0), 0.01)

    def test_box_too_small(self):
        F = make_test_function("quadratic", dim=1)
        with pytest.raises(BoxTooSmall):
            ig.check_condition_1(F, closed_form_potential, (-3.0, 3.0), 0.01)
        ig.check_condition_1(F, closed_form_potential, (-10.0, 10.0), 0.01)

    def test_ladder_dict_round_trip(self):
        F = make_test_function("abs_power", alpha=0.75)
        res = ig.check_condition_2(F, closed_form_potential,
                                   (-10.0, 10.0), 0.01)
        entries = res.ladder_dict()
        assert len(entries) == 1
        lad = entries[0]
        assert set(lad) == {"base", "increments", "partial_sums", "ratios",
                            "remainder", "finite"}
        assert lad["finite"] is True
        assert len(lad["increments"]) == 5


class TestSobolevNorm:
    def test_linear_closed_form(self):
        F = make_test_function("linear", c=[3.0])
        res = ig.sobolev_norm(F, 2, 1, (-1.0, 1.0), 0.01)
        assert res.finite
        np.testing.assert_allclose(res.value, np.sqrt(18.0), rtol=1e-9)

    def test_sin_second_order(self):
        # int cos^2 + int sin^2 over [-pi, pi] is 2 pi
        F = make_test_function("sin1d")
        res = ig.sobolev_norm(F, 2, 2, (-np.pi, np.pi), 0.01)
        assert res.finite
        np.testing.assert_allclose(res.value, np.sqrt(2.0 * np.pi), rtol=1e-4)

    def test_abs_power_second_order_divergence(self):
        F = make_test_function("abs_power", alpha=0.25)
        res = ig.sobolev_norm(F, 3, 2, (-2.0, 2.0), 0.01)
        assert not res.finite
        assert res.value is None
        assert res.term_finite == [True, False]

    def test_abs_power_first_order_finite(self):
        F = make_test_function("abs_power", alpha=0.25)
        res = ig.sobolev_norm(F, 3, 1, (-2.0, 2.0), 0.01)
        assert res.finite

    def test_validation(self):
        F = make_test_function("sin1d")
        with pytest.raises(ValueError):
            ig.sobolev_norm(F, 0.5, 1, (-1.0, 1.0), 0.01)
        with pytest.raises(ValueError):
            ig.sobolev_norm(F, 2, 3, (-1.0, 1.0), 0.01)
        stripped = dataclasses.replace(F, hessian=None)
        with pytest.raises(NoHessian):
            ig.sobolev_norm(stripped, 2, 2, (-1.0, 1.0), 0.01)

    def test_mixed_derivative_counted_once(self):
        # F(x) = x1 x2: gradient (x2, x1), single mixed second derivative 1
        F = testfunctions.TestFunction(
            name="xy", dim=2, regularity="C2",
            value=lambda x: np.asarray(x)[..., 0] * np.asarray(x)[..., 1],
            gradient=lambda x: np.stack([np.asarray(x)[..., 1],
                                         np.asarray(x)[..., 0]], axis=-1),
            hessian=lambda x: np.broadcast_to(
                np.array([[0.0, 1.0], [1.0, 0.0]]),
                np.asarray(x).shape + (2,)).copy())
        res = ig.sobolev_norm(F, 2, 2, (0.0, 1.0), 0.02)
        # order 1 terms: int x2^2 + int x1^2 = 2/3; order 2: one unit entry
        np.testing.assert_allclose(res.value, np.sqrt(2.0 / 3.0 + 1.0),
                                   rtol=1e-3)


class TestStartpointCondition:
    def test_bump_2d_with_large_p(self):
        F = make_test_function("bump", dim=2)
        v = ig.check_every_startpoint_condition(F, 3)
        assert v.sufficient
        assert v.norm_finite

    def test_exponent_must_exceed_dim_and_two(self):
        F = make_test_function("abs_power", alpha=0.75)
        v = ig.check_every_startpoint_condition(F, 2)
        assert not v.sufficient
        assert "max(d, 2)" in v.reason
        assert ig.check_every_startpoint_condition(F, 4).sufficient

    def test_divergent_norm_blocks_verdict(self):
        def grad(x):
            t = np.asarray(x)[..., 0]
            r = np.abs(t)
            with np.errstate(divide="ignore"):
                g = np.where(r < 1.0, r ** -0.9, 0.0)
            return g[..., None]

        F = testfunctions.TestFunction(
            name="steep", dim=1, regularity="H1_loc",
            value=lambda x: np.abs(np.asarray(x)[..., 0]) ** 0.1,
            gradient=grad, singular_points=[np.zeros(1)])
        v = ig.check_every_startpoint_condition(F, 4)
        assert not v.sufficient
        assert not v.norm_finite
        assert "diverges" in v.reason
