"""Kernel-level tests: frozen values, branch boundaries, derivative checks."""

import numpy as np
import pytest

from melunet.activations import (
    ActivationFamily,
    Kind,
    aplu_eval,
    family_from_tag,
    fixed_dx,
    fixed_forward,
    melu_eval,
    mexican_hat,
    mexican_hat_dx,
    prelu_eval,
    srelu_eval,
)
from melunet.basis import build_melu_basis
from melunet.errors import ConfigurationError
from melunet.gradcheck import check_family, default_suite


class TestFixedFamilies:
    def test_relu_values(self):
        assert fixed_forward(Kind.RELU, -2.0) == 0.0
        assert fixed_forward(Kind.RELU, 3.0) == 3.0
        assert fixed_forward(Kind.RELU, 0.0) == 0.0

    def test_leaky_negative_branch(self):
        assert fixed_forward(Kind.LEAKY_RELU, -2.0) == pytest.approx(-0.02)

    def test_selu_positive_branch(self):
        assert fixed_forward(Kind.SELU, 1.0) == pytest.approx(1.0507)

    def test_elu_negative_value(self):
        # frozen from expm1(-1)
        assert fixed_forward(Kind.ELU, -1.0) == pytest.approx(
            -0.6321205588285577, rel=1e-12)

    def test_relu_dx_at_zero_takes_nonnegative_branch(self):
        assert fixed_dx(Kind.RELU, 0.0) == 1.0
        assert fixed_dx(Kind.LEAKY_RELU, 0.0) == 1.0

    def test_selu_dx_at_negative_zero(self):
        assert fixed_dx(Kind.SELU, -0.0) == pytest.approx(1.0507)

    def test_elu_dx_negative(self):
        # frozen from exp(-1)
        assert fixed_dx(Kind.ELU, -1.0) == pytest.approx(
            0.36787944117144233, rel=1e-12)

    def test_learnable_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            fixed_forward(Kind.PRELU, 1.0)
        with pytest.raises(ConfigurationError):
            fixed_dx(Kind.MELU, 1.0)

    def test_selu_preserves_standard_normal_moments(self):
        rng = np.random.default_rng(1234)
        x = rng.standard_normal(1_000_000)
        out = fixed_forward(Kind.SELU, x)
        assert -0.02 <= out.mean() <= 0.02
        assert 0.95 <= out.var() <= 1.05


class TestMexicanHat:
    def test_peak_equals_half_width(self):
        assert mexican_hat(512.0, 512.0, 512.0) == 512.0

    def test_zero_at_support_boundary(self):
        assert mexican_hat(0.0, 512.0, 512.0) == 0.0

    def test_interior_value(self):
        assert mexican_hat(100.0, 512.0, 512.0) == 100.0

    def test_dx_rising_and_falling(self):
        assert mexican_hat_dx(300.0, 512.0, 512.0) == 1.0
        assert mexican_hat_dx(700.0, 512.0, 512.0) == -1.0

    def test_dx_zero_at_kinks_and_outside(self):
        for x in (0.0, 512.0, 1024.0, 2000.0, -5.0):
            assert mexican_hat_dx(x, 512.0, 512.0) == 0.0

    def test_nonnegative_symmetric_with_bounded_support(self):
        rng = np.random.default_rng(0)
        center, width = 3.0, 2.5
        d = rng.uniform(0, 4 * width, size=2000)
        left = mexican_hat(center - d, center, width)
        right = mexican_hat(center + d, center, width)
        # center +/- d round before evaluation, hence the tiny tolerance
        np.testing.assert_allclose(left, right, atol=1e-12)
        assert np.array_equal(mexican_hat(-d, 0.0, width),
                              mexican_hat(d, 0.0, width))
        assert np.all(left >= 0.0)
        assert np.all(left[d >= width] == 0.0)

    def test_nonpositive_width_rejected(self):
        with pytest.raises(ConfigurationError):
            mexican_hat(0.0, 0.0, 0.0)
        with pytest.raises(ConfigurationError):
            mexican_hat_dx(0.0, 0.0, -1.0)


class TestPrelu:
    def test_zero_init_slope(self):
        value, dx, dslope = prelu_eval(-3.0, 0.0)
        assert value == 0.0 and dx == 0.0 and dslope == -3.0

    def test_positive_branch(self):
        value, dx, dslope = prelu_eval(5.0, 0.2)
        assert (value, dx, dslope) == (5.0, 1.0, 0.0)

    def test_negative_branch(self):
        value, dx, dslope = prelu_eval(-2.0, 0.25)
        assert (value, dx, dslope) == (-0.5, 0.25, -2.0)


class TestSrelu:
    def test_middle_branch_is_identity_at_init(self):
        value, dx, dparams = srelu_eval(5.0, (0.0, 0.0, 255.0, 1.0))
        assert value == 5.0 and dx == 1.0
        assert np.all(dparams == 0.0)

    def test_right_branch_identity_with_unit_slope(self):
        value, _, _ = srelu_eval(510.0, (0.0, 0.0, 255.0, 1.0))
        assert value == 510.0

    def test_left_branch_values_and_gradients(self):
        value, dx, dparams = srelu_eval(-4.0, (0.0, 0.5, 255.0, 1.0))
        assert value == -2.0 and dx == 0.5
        d_tl, d_sl, d_tr, d_sr = dparams
        assert d_sl == -4.0 and d_tl == 0.5
        assert d_tr == 0.0 and d_sr == 0.0
        # hand check against central differences
        h = 1e-6
        for i, expected in enumerate(dparams):
            plus = np.array([0.0, 0.5, 255.0, 1.0])
            minus = plus.copy()
            plus[i] += h
            minus[i] -= h
            fd = (srelu_eval(-4.0, plus)[0] - srelu_eval(-4.0, minus)[0]) / (2 * h)
            assert fd == pytest.approx(expected, abs=1e-6)

    def test_published_sign_mode_changes_only_threshold_partials(self):
        params = (0.5, -0.3, 4.0, 1.4)
        rng = np.random.default_rng(3)
        x = rng.uniform(-10, 10, size=200)
        va, dxa, dpa = srelu_eval(x, params)
        vp, dxp, dpp = srelu_eval(x, params, paper_gradients=True)
        assert np.array_equal(va, vp)
        assert np.array_equal(dxa, dxp)
        assert np.array_equal(dpa[..., 1], dpp[..., 1])
        assert np.array_equal(dpa[..., 3], dpp[..., 3])
        left = x < params[0]
        assert np.all(dpp[left, 0] == -params[1])
        assert np.all(dpa[left, 0] == 1.0 - params[1])

    def test_degenerate_thresholds_left_branch_wins(self):
        # t_left > t_right: overlap region evaluates as the left branch
        value, dx, dparams = srelu_eval(1.0, (2.0, 0.5, 0.0, 3.0))
        assert value == 2.0 + 0.5 * (1.0 - 2.0)
        assert dx == 0.5
        assert dparams[3] == 0.0


class TestAplu:
    def test_zero_slopes_reduce_to_relu(self):
        value, dx, _ = aplu_eval(3.0, (0.0, 0.0, 0.7, 2.0))
        assert value == 3.0 and dx == 1.0

    def test_known_hinge_value(self):
        # relu(0) + 0.5 * max(0, 1 - 0), checked symbolically
        value, dx, dparams = aplu_eval(0.0, (0.5, 1.0))
        assert value == 0.5
        assert dparams[0] == 1.0 and dparams[1] == 0.5
        assert dx == 1.0 - 0.5

    def test_param_gradients_match_central_differences(self):
        params = np.array([0.5, 1.0])
        h = 1e-6
        _, _, dparams = aplu_eval(0.0, params)
        for i in range(2):
            plus = params.copy()
            minus = params.copy()
            plus[i] += h
            minus[i] -= h
            fd = (aplu_eval(0.0, plus)[0] - aplu_eval(0.0, minus)[0]) / (2 * h)
            assert fd == pytest.approx(dparams[i], abs=1e-6)

    def test_boundary_x_equal_anchor_inactive(self):
        value, dx, dparams = aplu_eval(1.0, (0.5, 1.0))
        assert value == 1.0 and dx == 1.0
        assert np.all(dparams == 0.0)

    def test_published_sign_mode_changes_only_anchor_partials(self):
        params = np.array([0.4, -0.2, 1.0, 2.5])
        rng = np.random.default_rng(4)
        x = rng.uniform(-4, 4, size=200)
        va, dxa, dpa = aplu_eval(x, params)
        vp, dxp, dpp = aplu_eval(x, params, paper_gradients=True)
        assert np.array_equal(va, vp)
        assert np.array_equal(dxa, dxp)
        assert np.array_equal(dpa[..., :2], dpp[..., :2])
        assert np.array_equal(dpp[..., 2:], -dpa[..., 2:])

    def test_odd_block_length_rejected(self):
        with pytest.raises(ConfigurationError):
            aplu_eval(0.0, (1.0, 2.0, 3.0))


class TestMelu:
    def test_zero_coefficients_equal_relu_bitwise(self):
        basis = build_melu_basis(256.0, 7)
        rng = np.random.default_rng(11)
        x = rng.uniform(-4 * 256.0, 4 * 256.0, size=100_000)
        value, _, _ = melu_eval(x, np.zeros(8), basis)
        expected = fixed_forward(Kind.RELU, x)
        assert np.array_equal(value, expected)
        # bit-identical, including signed zeros
        assert np.array_equal(value.view(np.int64), expected.view(np.int64))

    def test_single_bump_contribution(self):
        basis = build_melu_basis(256.0, 7)
        coeffs = np.zeros(8)
        coeffs[1] = 1.0
        value, _, dcoeffs = melu_eval(512.0, coeffs, basis)
        assert value == 1024.0          # relu(512) + bump peak 512
        assert dcoeffs[1] == 512.0      # bump value at its peak
        assert dcoeffs[2] == 0.0        # the [0, 512] bump vanishes at 512

    def test_coefficient_gradients_are_bump_values(self):
        basis = build_melu_basis(2.0, 3)
        rng = np.random.default_rng(5)
        x = rng.uniform(-8, 8, size=500)
        coeffs = rng.uniform(-1, 1, size=4)
        _, _, dcoeffs = melu_eval(x, coeffs, basis)
        assert np.array_equal(dcoeffs[:, 1], mexican_hat(x, 4.0, 4.0))
        assert np.array_equal(dcoeffs[:, 0], np.where(x < 0, x, 0.0))

    def test_dimension_mismatch_rejected(self):
        basis = build_melu_basis(256.0, 7)
        with pytest.raises(ConfigurationError):
            melu_eval(1.0, np.zeros(4), basis)


class TestFamilyDescriptor:
    def test_fixed_constants(self):
        from melunet import activations as A
        assert A.LEAKY_SLOPE == 0.01
        assert A.ELU_ALPHA == 1.0
        assert A.SELU_ALPHA == 1.6733
        assert A.SELU_SCALE == 1.0507

    @pytest.mark.parametrize("tag,count", [
        ("relu", 0), ("leaky_relu", 0), ("elu", 0), ("selu", 0),
        ("prelu", 1), ("srelu", 4), ("aplu_n5", 10), ("melu_k8", 8),
        ("melu_k4", 4),
    ])
    def test_param_count_per_channel(self, tag, count):
        assert family_from_tag(tag).param_count == count

    def test_invalid_melu_total_rejected(self):
        with pytest.raises(ConfigurationError):
            ActivationFamily(Kind.MELU, melu_total_params=6)

    def test_unknown_tag_rejected(self):
        with pytest.raises(ConfigurationError):
            family_from_tag("swish")

    def test_roundtrip_through_dict(self):
        fam = ActivationFamily(Kind.MELU, max_input=255.0, melu_total_params=4)
        assert ActivationFamily.from_dict(fam.to_dict()) == fam


class TestTotality:
    @pytest.mark.parametrize("tag", ["relu", "leaky_relu", "elu", "selu",
                                     "prelu", "srelu", "aplu_n5", "melu_k8"])
    def test_finite_output_over_huge_range(self, tag):
        family = family_from_tag(tag, max_input=256.0)
        rng = np.random.default_rng(9)
        x = np.concatenate([
            rng.uniform(-1e12, 1e12, size=1000),
            np.array([-1e12, 1e12, 0.0]),
        ])
        params = None
        if family.param_count:
            params = rng.uniform(-1.0, 1.0, size=family.param_count)
            if family.kind is Kind.SRELU:
                params = np.array([0.0, 0.3, 255.0, 1.2])
        value, dx, dparams = family.evaluate(x, params)
        assert np.all(np.isfinite(value))
        assert np.all(np.isfinite(dx))
        if dparams is not None:
            assert np.all(np.isfinite(dparams))


class TestFiniteDifferences:
    """Every analytic derivative matches central differences off the kinks."""

    @pytest.mark.parametrize("family", default_suite(),
                             ids=lambda f: f"{f.tag}@{f.max_input:g}")
    def test_analytic_gradients(self, family):
        result = check_family(family, n_points=400, seed=101)
        assert result.passed(1e-6), result.failures[:3]

    @pytest.mark.parametrize("family", default_suite(max_inputs=(255.0,)),
                             ids=lambda f: f"{f.tag}@{f.max_input:g}")
    def test_published_sign_mode_passes_with_skips(self, family):
        result = check_family(family, n_points=200, seed=7,
                              paper_gradients=True)
        assert result.passed(1e-6), result.failures[:3]
        if family.kind in (Kind.SRELU, Kind.APLU):
            assert result.skipped
