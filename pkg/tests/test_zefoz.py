"""Tests for ZEFOZ gradients, Hessians, search, regimes, and coherence."""

import dataclasses
import math

import numpy as np
import pytest

from spinspec.constants import DEFAULT_CONSTANTS
from spinspec.errors import InvalidParameterError
from spinspec.hamiltonian import LevelModel, LevelParams
from spinspec.reference import reference_ground_level
from spinspec.tensors import EulerAngles, PrincipalTensor, lab_to_principal, rotate_to_lab
from spinspec.zefoz import (
    ALL_PAIRS,
    GHZ_PER_T2_TO_HZ_PER_MT2,
    VERIFY_TOL_GHZ_PER_T,
    CoherenceEstimate,
    ZefozPoint,
    classify_regime,
    estimate_coherence,
    find_zefoz,
    transition_gradient,
    transition_gradient_flagged,
    transition_hessian,
    transition_hessian_flagged,
)


def random_level(rng):
    def tensor(scale):
        vals = tuple(rng.uniform(0.1, 1.0, 3) * scale)
        return PrincipalTensor(
            vals,
            EulerAngles(rng.uniform(-180, 180), rng.uniform(0, 90), rng.uniform(-90, 90)),
        )

    return LevelParams(g=tensor(rng.uniform(2, 15)), a=tensor(rng.uniform(0.5, 3)))


def principal_axis(tensor, which):
    """Unit principal axis of a tensor for the given |value| rank (0 = largest)."""
    lab = rotate_to_lab(tensor)
    vals, vecs = np.linalg.eigh(lab)
    order = np.argsort(-np.abs(vals))
    return vecs[:, order[which]]


def test_pair_count():
    assert len(ALL_PAIRS) == 120
    assert all(i < j for i, j in ALL_PAIRS)


def test_gradient_zero_at_zero_field():
    rng = np.random.default_rng(11)
    for _ in range(5):
        level = random_level(rng)
        for pair in ((0, 1), (0, 15), (7, 8)):
            grad = transition_gradient(level, np.zeros(3), *pair)
            assert np.linalg.norm(grad) < 1e-8


def test_gradient_zeeman_closed_form():
    # with A = 0 and no nuclear Zeeman term, f(0 -> 15) = mu_e g_z B exactly
    base = reference_ground_level()
    level = LevelParams(
        g=base.g, a=PrincipalTensor((0.0, 0.0, 0.0), EulerAngles(0, 0, 0))
    )
    no_nuc = dataclasses.replace(DEFAULT_CONSTANTS, g_n=0.0)
    axis = principal_axis(base.g, 0)
    b = 0.4 * axis
    grad = transition_gradient(level, b, 0, 15, constants=no_nuc)
    expected = DEFAULT_CONSTANTS.mu_e_ghz_per_t * 14.846
    assert np.linalg.norm(grad) == pytest.approx(expected, rel=1e-8)
    # gradient points along the field direction for B on a principal axis
    cos = abs(grad @ axis) / np.linalg.norm(grad)
    assert cos == pytest.approx(1.0, abs=1e-6)
    # with the nuclear term restored the correction is only ~1e-4 relative
    grad_full = transition_gradient(level, b, 0, 15)
    assert np.linalg.norm(grad_full) == pytest.approx(expected, rel=2e-4)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(23)
    delta = 1e-5
    checked = 0
    while checked < 60:
        level = random_level(rng)
        b = rng.normal(size=3) * rng.uniform(0.05, 2.0)
        i, j = sorted(rng.choice(16, size=2, replace=False))
        i, j = int(i), int(j)
        model = LevelModel(level)
        energies = model.energies(b)
        gaps = np.diff(energies)
        neighbor_gap = min(
            gaps[i - 1] if i > 0 else np.inf,
            gaps[i] if i < 15 else np.inf,
            gaps[j - 1] if j > 0 else np.inf,
            gaps[j] if j < 15 else np.inf,
        )
        # stay far enough from degeneracies that no level crossing can
        # occur inside the +-delta stencil (slopes are < ~220 GHz/T)
        if neighbor_gap < 0.05:
            continue
        grad, flagged = transition_gradient_flagged(level, b, i, j)
        assert not flagged
        offsets = np.concatenate([np.eye(3), -np.eye(3)]) * delta
        e = model.energies(b + offsets)
        f = e[:, j] - e[:, i]
        fd = (f[:3] - f[3:]) / (2 * delta)
        assert np.linalg.norm(grad - fd) <= 1e-6 * max(np.linalg.norm(fd), 1.0)
        checked += 1


def test_gradient_degenerate_fallback_flag():
    # isotropic A at B = 0: every level sits in a degenerate F multiplet
    level = LevelParams(
        g=PrincipalTensor((5.0, 5.0, 5.0), EulerAngles(0, 0, 0)),
        a=PrincipalTensor((1.0, 1.0, 1.0), EulerAngles(0, 0, 0)),
    )
    grad, flagged = transition_gradient_flagged(level, np.zeros(3), 0, 15)
    assert flagged
    assert np.linalg.norm(grad) < 1e-6  # still stationary by evenness


def test_gradient_validates_inputs():
    level = reference_ground_level()
    with pytest.raises(InvalidParameterError):
        transition_gradient(level, np.zeros(3), 3, 3)
    with pytest.raises(InvalidParameterError):
        transition_gradient(level, np.zeros(3), -1, 4)
    with pytest.raises(InvalidParameterError):
        transition_gradient(level, [0.1, np.nan, 0.0], 0, 1)


def test_hessian_matches_second_differences():
    rng = np.random.default_rng(31)
    level = random_level(rng)
    b = np.array([0.31, -0.12, 0.22])
    i, j = 2, 9
    hess = transition_hessian(level, b, i, j)
    assert np.allclose(hess, hess.T, atol=1e-12)

    def freq(field):
        e = LevelModel(level).energies(field)
        return e[j] - e[i]

    h = 2e-4
    fd = np.empty((3, 3))
    eye = np.eye(3)
    for k in range(3):
        for l in range(3):
            fd[k, l] = (
                freq(b + h * eye[k] + h * eye[l])
                - freq(b + h * eye[k] - h * eye[l])
                - freq(b - h * eye[k] + h * eye[l])
                + freq(b - h * eye[k] - h * eye[l])
            ) / (4 * h * h)
    assert np.linalg.norm(hess - fd) <= 1e-4 * np.linalg.norm(fd)


def test_hessian_pure_zeeman_directional_curvature_zero():
    # with A = 0, f is linear in |B| along any fixed direction
    base = reference_ground_level()
    level = LevelParams(
        g=base.g, a=PrincipalTensor((0.0, 0.0, 0.0), EulerAngles(0, 0, 0))
    )
    direction = np.array([0.3, -0.5, 0.81])
    direction /= np.linalg.norm(direction)
    b = 0.7 * direction
    hess = transition_hessian(level, b, 0, 15)
    assert abs(direction @ hess @ direction) < 1e-4


def test_hessian_isotropic_at_zero_field():
    level = LevelParams(
        g=PrincipalTensor((4.0, 4.0, 4.0), EulerAngles(0, 0, 0)),
        a=PrincipalTensor((1.3, 1.3, 1.3), EulerAngles(0, 0, 0)),
    )
    hess, asym, _ = transition_hessian_flagged(level, np.zeros(3), 0, 15)
    eigvals = np.linalg.eigvalsh(hess)
    assert np.max(np.abs(eigvals - eigvals.mean())) <= 1e-6 * abs(eigvals.mean())
    assert asym < 1e-4


def test_s2_gauge_invariant():
    # gauge-equivalent Euler triples give the same lab tensor, hence the
    # same curvature
    level = reference_ground_level()
    canonical = LevelParams(
        g=lab_to_principal(rotate_to_lab(level.g)),
        a=lab_to_principal(rotate_to_lab(level.a)),
    )
    b = np.array([0.2, 0.05, -0.1])
    h1 = transition_hessian(level, b, 3, 11)
    h2 = transition_hessian(canonical, b, 3, 11)
    assert np.allclose(h1, h2, rtol=0, atol=1e-8 * np.linalg.norm(h1))


def test_classify_regime_reference_examples():
    level = reference_ground_level()
    assert classify_regime(level, np.zeros(3)) == "strong"
    gz = principal_axis(level.g, 0)
    assert classify_regime(level, 1.0 * gz) == "weak"
    gx = principal_axis(level.g, 2)
    assert classify_regime(level, 0.05 * gx) == "strong"


def test_classify_regime_validates():
    level = reference_ground_level()
    with pytest.raises(InvalidParameterError):
        classify_regime(level, np.zeros(3), kappa=0.0)
    with pytest.raises(InvalidParameterError):
        classify_regime(level, [1.0, np.inf, 0.0])


def test_coherence_arithmetic():
    def point_with(s2):
        return ZefozPoint(
            b_field_t=np.zeros(3),
            pair=(0, 1),
            frequency_ghz=1.0,
            gradient_ghz_per_t=np.zeros(3),
            gradient_residual_ghz_per_t=0.0,
            hessian_ghz_per_t2=np.eye(3) * s2,
            s2_max_ghz_per_t2=s2,
            regime="strong",
        )

    assert GHZ_PER_T2_TO_HZ_PER_MT2 == 1e3
    # S2 = 10 GHz/T^2 = 1e4 Hz/mT^2 -> rate 1 Hz at 0.01 mT -> T2 = 1 s
    est = estimate_coherence(point_with(10.0), delta_b_mt=0.01)
    assert est.rate_hz == pytest.approx(1.0, rel=1e-12)
    assert est.t2_s == pytest.approx(1.0, rel=1e-12)
    # quadratic law in deltaB
    est2 = estimate_coherence(point_with(10.0), delta_b_mt=0.02)
    assert est2.rate_hz == pytest.approx(4.0 * est.rate_hz, rel=1e-12)
    # zero curvature -> infinite T2 sentinel
    est0 = estimate_coherence(point_with(0.0), delta_b_mt=0.01)
    assert math.isinf(est0.t2_s)
    assert est0.to_json_dict()["T2_s"] is None
    with pytest.raises(InvalidParameterError):
        estimate_coherence(point_with(1.0), delta_b_mt=0.0)


def test_find_zefoz_reports_origin_for_every_pair():
    level = reference_ground_level()
    pairs = [(0, 1), (4, 9)]
    points = find_zefoz(level, 0.5, pairs=pairs, n_radii=2, n_directions=4, max_iter=8)
    for pair in pairs:
        origins = [
            p
            for p in points
            if p.pair == pair and np.linalg.norm(p.b_field_t) == 0.0
        ]
        assert len(origins) == 1
        assert origins[0].regime == "strong"


def test_find_zefoz_verified_and_antipodal():
    level = reference_ground_level()
    points = find_zefoz(level, 5.0, pairs=[(0, 1), (7, 8)], n_radii=4, n_directions=16)
    assert points, "expected at least the origin points"
    fields = {}
    for p in points:
        assert p.gradient_residual_ghz_per_t < VERIFY_TOL_GHZ_PER_T
        assert np.allclose(p.hessian_ghz_per_t2, p.hessian_ghz_per_t2.T)
        assert p.regime in ("weak", "strong")
        fields.setdefault(p.pair, []).append(p.b_field_t)
    # antipodal closure: every off-origin point has its mirror
    for pair, blist in fields.items():
        for b in blist:
            if np.linalg.norm(b) == 0.0:
                continue
            assert any(np.linalg.norm(b + other) < 1e-6 for other in blist)


def test_find_zefoz_deterministic():
    level = reference_ground_level()
    kwargs = dict(pairs=[(7, 8)], n_radii=3, n_directions=8)
    a = find_zefoz(level, 2.0, **kwargs)
    b = find_zefoz(level, 2.0, **kwargs)
    assert len(a) == len(b)
    for pa, pb in zip(a, b):
        assert pa.pair == pb.pair
        assert np.array_equal(pa.b_field_t, pb.b_field_t)
        assert pa.s2_max_ghz_per_t2 == pb.s2_max_ghz_per_t2


def test_find_zefoz_validates():
    level = reference_ground_level()
    with pytest.raises(InvalidParameterError):
        find_zefoz(level, 0.0)
    with pytest.raises(InvalidParameterError):
        find_zefoz(level, 1.0, n_radii=0)
    with pytest.raises(InvalidParameterError):
        find_zefoz(level, 1.0, pairs=[(3, 3)])


def test_zefoz_point_json_roundtrip_fields():
    level = reference_ground_level()
    points = find_zefoz(level, 0.5, pairs=[(0, 1)], n_radii=2, n_directions=4, max_iter=8)
    d = points[0].to_json_dict()
    assert set(d) == {
        "B_T",
        "pair",
        "f_GHz",
        "grad_GHz_per_T",
        "grad_residual_GHz_per_T",
        "hessian_GHz_per_T2",
        "S2_max_GHz_per_T2",
        "regime",
        "degenerate_fallback",
        "hessian_asymmetry",
    }
    import json

    json.dumps(d)  # all entries must be plain JSON types
