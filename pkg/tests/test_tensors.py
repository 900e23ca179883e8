"""Tensor storage, Euler rotations and the principal-frame gauge."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinspec.errors import InvalidParameterError
from spinspec.tensors import (
    EulerAngles,
    PrincipalTensor,
    lab_to_principal,
    rotate_to_lab,
    validate_field,
    wrap_angle_deg,
)

angles_st = st.floats(-720.0, 720.0, allow_nan=False, allow_infinity=False)


def test_wrap_angle_canonical_interval():
    assert wrap_angle_deg(180.0) == 180.0
    assert wrap_angle_deg(-180.0) == 180.0
    assert wrap_angle_deg(360.0) == 0.0
    assert wrap_angle_deg(540.0) == 180.0
    assert wrap_angle_deg(-190.0) == 170.0
    with pytest.raises(InvalidParameterError):
        wrap_angle_deg(float("nan"))


def test_identity_rotation_gives_diagonal():
    t = PrincipalTensor((3.0, 2.0, 1.0), EulerAngles(0.0, 0.0, 0.0))
    np.testing.assert_allclose(rotate_to_lab(t), np.diag([1.0, 2.0, 3.0]), atol=1e-15)


def test_z_rotation_by_90_swaps_transverse_entries():
    t = PrincipalTensor((3.0, 2.0, 1.0), EulerAngles(90.0, 0.0, 0.0))
    np.testing.assert_allclose(rotate_to_lab(t), np.diag([2.0, 1.0, 3.0]), atol=1e-14)


def test_reference_g_tensor_trace():
    # strongly anisotropic reference site: trace must be preserved exactly
    t = PrincipalTensor((14.846, 2.38, 0.55), EulerAngles(137.50, -66.036, -155.7))
    assert np.trace(rotate_to_lab(t)) == pytest.approx(17.776, abs=1e-12)


def test_rotation_against_hand_expanded_matrix():
    # alpha=30, beta=45, gamma=60 with values (vz,vy,vx)=(3,2,1); entries were
    # expanded symbolically from R = Rz(30) Ry(45) Rz(60), M = R diag(1,2,3) R.T
    s2, s3, s6 = math.sqrt(2.0), math.sqrt(3.0), math.sqrt(6.0)
    expected = np.array(
        [
            [3 * s2 / 16 + 67 / 32, -s6 / 16 + 9 * s3 / 32, -s6 / 16 + 5 * s3 / 16],
            [-s6 / 16 + 9 * s3 / 32, 49 / 32 - 3 * s2 / 16, 3 * s2 / 16 + 5 / 16],
            [-s6 / 16 + 5 * s3 / 16, 3 * s2 / 16 + 5 / 16, 19 / 8],
        ]
    )
    t = PrincipalTensor((3.0, 2.0, 1.0), EulerAngles(30.0, 45.0, 60.0))
    np.testing.assert_allclose(rotate_to_lab(t), expected, atol=1e-14)


def test_alpha_beta_orient_the_principal_z_axis():
    # z_lab = (cos a sin b, sin a sin b, cos b), independent of gamma
    t = PrincipalTensor((5.0, 2.0, 1.0), EulerAngles(30.0, 45.0, 60.0))
    m = rotate_to_lab(t)
    z_axis = np.array([math.sqrt(6) / 4, math.sqrt(2) / 4, math.sqrt(2) / 2])
    np.testing.assert_allclose(m @ z_axis, 5.0 * z_axis, atol=1e-12)
    for gamma in (0.0, 25.0, -110.0):
        mg = rotate_to_lab(PrincipalTensor((5.0, 2.0, 1.0), EulerAngles(30.0, 45.0, gamma)))
        np.testing.assert_allclose(mg @ z_axis, 5.0 * z_axis, atol=1e-12)


@given(angles_st, angles_st, angles_st)
@settings(max_examples=100, deadline=None)
def test_rotation_matrices_are_orthogonal(alpha, beta, gamma):
    r = EulerAngles(alpha, beta, gamma).matrix()
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


@given(angles_st, angles_st, angles_st)
@settings(max_examples=100, deadline=None)
def test_double_cover_identity(alpha, beta, gamma):
    r1 = EulerAngles(alpha, beta, gamma).matrix()
    r2 = EulerAngles(alpha + 180.0, -beta, gamma + 180.0).matrix()
    np.testing.assert_allclose(r1, r2, atol=1e-12)


@given(
    st.tuples(
        st.floats(-20, 20, allow_nan=False),
        st.floats(-20, 20, allow_nan=False),
        st.floats(-20, 20, allow_nan=False),
    ),
    angles_st,
    angles_st,
    angles_st,
)
@settings(max_examples=100, deadline=None)
def test_rotation_preserves_trace_and_frobenius_norm(values, alpha, beta, gamma):
    t = PrincipalTensor(values, EulerAngles(alpha, beta, gamma))
    m = rotate_to_lab(t)
    assert np.trace(m) == pytest.approx(sum(values), abs=1e-12 * (1 + abs(sum(values))))
    assert np.linalg.norm(m) == pytest.approx(
        np.linalg.norm(values), rel=1e-12, abs=1e-12
    )


def test_principal_values_match_independent_eigendecomposition():
    # construct matrices with known eigenstructure, independent of rotate_to_lab
    rng = np.random.default_rng(7)
    for _ in range(100):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        vals = rng.uniform(-10.0, 10.0, size=3)
        m = q @ np.diag(vals) @ q.T
        t = lab_to_principal(m)
        assert sorted(np.abs(t.values_zyx), reverse=True) == pytest.approx(
            list(np.abs(t.values_zyx))
        )
        np.testing.assert_allclose(
            np.sort(t.values_zyx), np.sort(vals), atol=1e-10
        )


def test_roundtrip_reproduces_matrix():
    rng = np.random.default_rng(11)
    for _ in range(200):
        vals = tuple(rng.uniform(-15.0, 15.0, size=3))
        ang = EulerAngles(*rng.uniform(-180.0, 180.0, size=3))
        m = rotate_to_lab(PrincipalTensor(vals, ang))
        t = lab_to_principal(m)
        np.testing.assert_allclose(rotate_to_lab(t), m, atol=1e-10)
        # canonical gauge: beta in [0, 90], transverse freedom to gamma in (-90, 90]
        assert 0.0 <= t.angles.beta <= 90.0 + 1e-12
        assert -90.0 < t.angles.gamma <= 90.0 + 1e-12


def test_gauge_mapping_of_reference_orientation():
    # the canonical representative of (137.50, -66.036, -155.7) follows from
    # the double-cover map (alpha+180, -beta, gamma+180)
    t = PrincipalTensor((14.846, 2.38, 0.55), EulerAngles(137.50, -66.036, -155.7))
    m = rotate_to_lab(t)
    c = lab_to_principal(m)
    assert c.angles.alpha == pytest.approx(-42.5, abs=1e-9)
    assert c.angles.beta == pytest.approx(66.036, abs=1e-9)
    assert c.angles.gamma == pytest.approx(24.3, abs=1e-9)
    np.testing.assert_allclose(rotate_to_lab(c), m, atol=1e-12)


def test_axially_degenerate_tensor_gets_zero_gamma():
    m = rotate_to_lab(PrincipalTensor((5.0, 1.0, 1.0), EulerAngles(40.0, 30.0, 77.0)))
    t = lab_to_principal(m)
    assert t.angles.gamma == 0.0
    np.testing.assert_allclose(rotate_to_lab(t), m, atol=1e-10)


def test_diagonal_matrix_with_descending_entries():
    t = lab_to_principal(np.diag([3.0, 2.0, 1.0]))
    assert t.values_zyx == pytest.approx((3.0, 2.0, 1.0))
    np.testing.assert_allclose(rotate_to_lab(t), np.diag([3.0, 2.0, 1.0]), atol=1e-12)


def test_negative_principal_values_keep_signs():
    m = rotate_to_lab(PrincipalTensor((-4.0, 2.5, 0.5), EulerAngles(10.0, 20.0, 30.0)))
    t = lab_to_principal(m)
    assert t.values_zyx == pytest.approx((-4.0, 2.5, 0.5), abs=1e-10)


def test_asymmetric_matrix_rejected():
    m = np.diag([3.0, 2.0, 1.0])
    m[0, 1] = 1e-6
    with pytest.raises(InvalidParameterError):
        lab_to_principal(m)


def test_non_finite_inputs_rejected():
    with pytest.raises(InvalidParameterError):
        lab_to_principal(np.full((3, 3), np.nan))
    with pytest.raises(InvalidParameterError):
        PrincipalTensor((1.0, float("inf"), 0.5), EulerAngles(0, 0, 0))
    with pytest.raises(InvalidParameterError):
        validate_field([0.0, np.nan, 0.1])
    with pytest.raises(InvalidParameterError):
        validate_field([0.0, 0.1])


def test_tensor_json_roundtrip():
    t = PrincipalTensor((14.846, 2.38, 0.55), EulerAngles(137.50, -66.036, -155.7))
    d = t.to_json_dict()
    assert list(d) == ["values_zyx", "euler_deg"]
    t2 = PrincipalTensor.from_json_dict(d)
    np.testing.assert_allclose(rotate_to_lab(t2), rotate_to_lab(t), atol=1e-14)
