"""Tests for the 16-level spin Hamiltonian builder and its eigensolver."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinspec.constants import DEFAULT_CONSTANTS, DIM, DIM_I, DIM_S
from spinspec.errors import DegenerateAxisError, InvalidParameterError
from spinspec.hamiltonian import (
    I_TOTAL,
    S_TOTAL,
    LevelModel,
    LevelParams,
    angular_momentum_operators,
    build_hamiltonian,
    diagonalize,
    effective_hyperfine_splitting,
    field_derivative_operators,
    hyperfine_hamiltonian,
    quadrupole_hamiltonian,
    quantization_axis,
)
from spinspec.reference import reference_ground_level, reference_site
from spinspec.tensors import EulerAngles, PrincipalTensor, rotate_to_lab

MU_E = DEFAULT_CONSTANTS.mu_e_ghz_per_t
MU_N = DEFAULT_CONSTANTS.mu_n_ghz_per_t
G_N = DEFAULT_CONSTANTS.g_n


def random_level(rng, with_q=False):
    def tensor(lo, hi):
        vals = np.sort(rng.uniform(lo, hi, size=3))[::-1]
        ang = EulerAngles(
            rng.uniform(-180.0, 180.0),
            rng.uniform(0.0, 90.0),
            rng.uniform(-90.0, 90.0),
        )
        return PrincipalTensor(tuple(vals), ang)

    q = tensor(-0.1, 0.1) if with_q else None
    return LevelParams(g=tensor(0.5, 15.0), a=tensor(0.05, 2.0), q=q)


# ---------------------------------------------------------------------------
# angular momentum operators


@pytest.mark.parametrize("j", [0.5, 1.0, 1.5, 3.5])
def test_angular_momentum_algebra(j):
    jx, jy, jz = angular_momentum_operators(j)
    dim = int(round(2 * j + 1))
    assert jx.shape == (dim, dim)
    # commutation relations [Jx, Jy] = i Jz and cyclic
    np.testing.assert_allclose(jx @ jy - jy @ jx, 1j * jz, atol=1e-12)
    np.testing.assert_allclose(jy @ jz - jz @ jy, 1j * jx, atol=1e-12)
    np.testing.assert_allclose(jz @ jx - jx @ jz, 1j * jy, atol=1e-12)
    # Casimir J^2 = j(j+1)
    casimir = jx @ jx + jy @ jy + jz @ jz
    np.testing.assert_allclose(casimir, j * (j + 1) * np.eye(dim), atol=1e-12)
    # Jz diagonal with ascending projections -j .. +j
    np.testing.assert_allclose(jz, np.diag(np.arange(-j, j + 1)), atol=1e-12)


def test_product_space_operators_commute_and_have_correct_casimirs():
    for s_op in S_TOTAL:
        for i_op in I_TOTAL:
            np.testing.assert_allclose(s_op @ i_op, i_op @ s_op, atol=1e-12)
    s2 = sum(op @ op for op in S_TOTAL)
    i2 = sum(op @ op for op in I_TOTAL)
    np.testing.assert_allclose(s2, 0.75 * np.eye(DIM), atol=1e-12)
    np.testing.assert_allclose(i2, (3.5 * 4.5) * np.eye(DIM), atol=1e-12)


# ---------------------------------------------------------------------------
# zero-field hyperfine structure: coupled F = 3 and F = 4 multiplets


def test_isotropic_zero_field_splits_into_f4_and_f3_multiplets():
    a = 0.9
    level = LevelParams(
        g=PrincipalTensor((2.0, 2.0, 2.0), EulerAngles(0.0, 0.0, 0.0)),
        a=PrincipalTensor((a, a, a), EulerAngles(0.0, 0.0, 0.0)),
    )
    energies = LevelModel(level).energies(np.zeros(3))
    # a/2 [F(F+1) - S(S+1) - I(I+1)] for F = I +- 1/2
    e_f3, e_f4 = -2.25 * a, 1.75 * a
    np.testing.assert_allclose(energies[:7], np.full(7, e_f3), rtol=1e-10)
    np.testing.assert_allclose(energies[7:], np.full(9, e_f4), rtol=1e-10)


def test_zero_field_multiplets_survive_tensor_rotation():
    a = 1.3
    angles = EulerAngles(137.5, -66.0, 24.0)
    level = LevelParams(
        g=PrincipalTensor((2.0, 2.0, 2.0), angles),
        a=PrincipalTensor((a, a, a), angles),
    )
    energies = LevelModel(level).energies(np.zeros(3))
    expected = np.concatenate([np.full(7, -2.25 * a), np.full(9, 1.75 * a)])
    np.testing.assert_allclose(energies, expected, rtol=1e-10)


# ---------------------------------------------------------------------------
# pure-Zeeman block structure (A = 0): exact closed form


def test_zeeman_only_eigenvalues_match_closed_form():
    rng = np.random.default_rng(7)
    zero_a = PrincipalTensor((0.0, 0.0, 0.0), EulerAngles(0.0, 0.0, 0.0))
    for _ in range(25):
        g = random_level(rng).g
        level = LevelParams(g=g, a=zero_a)
        b = rng.normal(scale=0.5, size=3)
        energies = LevelModel(level).energies(b)
        electron = 0.5 * MU_E * np.linalg.norm(b @ rotate_to_lab(g))
        nuclear = -MU_N * G_N * np.linalg.norm(b)
        m_i = np.arange(-3.5, 4.0)
        expected = np.sort(
            np.concatenate([s * electron + nuclear * m_i for s in (-1.0, 1.0)])
        )
        np.testing.assert_allclose(energies, expected, rtol=1e-10, atol=1e-12)


def test_branch_centers_split_by_electron_zeeman_energy():
    site = reference_site()
    z_axis = site.ground.g.angles.matrix()[:, 2]
    model = LevelModel(site.ground)

    e = model.energies(0.4 * z_axis)
    split = e[8:].mean() - e[:8].mean()
    closed = MU_E * site.ground.g.vz * 0.4
    assert closed == pytest.approx(83.11530071416, abs=1e-8)
    # second-order hyperfine repulsion shifts the centres by ~13 MHz here
    assert split == pytest.approx(closed, abs=0.02)

    # the residual shrinks ~1/B: at 10x the field it must drop ~10x
    e10 = model.energies(4.0 * z_axis)
    split10 = e10[8:].mean() - e10[:8].mean()
    assert abs(split10 - 10 * closed) < abs(split - closed) / 5.0


def test_high_field_ladder_converges_to_first_order_spacing():
    site = reference_site()
    z_axis = site.ground.g.angles.matrix()[:, 2]
    model = LevelModel(site.ground)
    worst = []
    for b_mag in (1.0, 10.0, 100.0):
        b = b_mag * z_axis
        energies = model.energies(b)
        n = quantization_axis(site.ground.g, b)
        errs = []
        for branch, block in ((-1, energies[:8]), (+1, energies[8:])):
            w = 0.5 * branch * (model.a_lab @ n) - MU_N * G_N * b
            spacing = np.linalg.norm(w)
            errs.append(np.max(np.abs(np.diff(block) - spacing)) / spacing)
        worst.append(max(errs))
    assert worst[0] < 3e-3 and worst[1] < 3e-4 and worst[2] < 3e-5
    assert worst[0] > worst[1] > worst[2]


# ---------------------------------------------------------------------------
# symmetry and structure properties


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_spectrum_is_even_in_field(seed):
    rng = np.random.default_rng(seed)
    level = random_level(rng, with_q=rng.random() < 0.5)
    model = LevelModel(level)
    b = rng.normal(scale=1.0, size=3)
    e_plus = model.energies(b)
    e_minus = model.energies(-b)
    np.testing.assert_allclose(e_plus, e_minus, rtol=1e-10, atol=1e-10)


def test_hamiltonian_is_hermitian_and_linear_in_field():
    rng = np.random.default_rng(11)
    for _ in range(10):
        level = random_level(rng, with_q=True)
        model = LevelModel(level)
        b1, b2 = rng.normal(size=3), rng.normal(size=3)
        h1, h2 = model.hamiltonian(b1), model.hamiltonian(b2)
        np.testing.assert_allclose(h1, h1.conj().T, atol=1e-12)
        h_sum = model.hamiltonian(b1 + b2)
        np.testing.assert_allclose(h_sum, h1 + h2 - model.h0, atol=1e-10)


def test_hamiltonian_matches_term_by_term_construction():
    rng = np.random.default_rng(3)
    level = random_level(rng, with_q=True)
    b = np.array([0.1, -0.25, 0.3])
    g_lab = rotate_to_lab(level.g)
    a_lab = rotate_to_lab(level.a)
    q_lab = rotate_to_lab(level.q)
    expected = np.zeros((DIM, DIM), dtype=complex)
    for j in range(3):
        for k in range(3):
            expected += MU_E * b[j] * g_lab[j, k] * S_TOTAL[k]
            expected += a_lab[j, k] * I_TOTAL[j] @ S_TOTAL[k]
            expected += (q_lab - np.trace(q_lab) / 3 * np.eye(3))[j, k] * (
                I_TOTAL[j] @ I_TOTAL[k]
            )
        expected += -MU_N * G_N * b[j] * I_TOTAL[j]
    np.testing.assert_allclose(build_hamiltonian(level, b), expected, atol=1e-10)


def test_quadrupole_term_ignores_trace_and_matches_axial_closed_form():
    q_val = 0.07
    axial = np.diag([0.0, 0.0, q_val])
    shifted = axial + 0.4 * np.eye(3)
    np.testing.assert_allclose(
        quadrupole_hamiltonian(axial), quadrupole_hamiltonian(shifted), atol=1e-12
    )
    # traceless axial quadrupole: q (I_z^2 - I(I+1)/3)
    m_i = np.arange(-3.5, 4.0)
    expected = np.sort(np.tile(q_val * (m_i**2 - 3.5 * 4.5 / 3.0), 2))
    energies = np.linalg.eigvalsh(quadrupole_hamiltonian(axial))
    np.testing.assert_allclose(energies, expected, atol=1e-12)


def test_field_derivative_operators_match_finite_differences():
    rng = np.random.default_rng(21)
    level = random_level(rng)
    d_ops = field_derivative_operators(level)
    b0 = np.array([0.2, -0.1, 0.45])
    h = 1e-6
    for j in range(3):
        step = np.zeros(3)
        step[j] = h
        fd = (build_hamiltonian(level, b0 + step) - build_hamiltonian(level, b0 - step)) / (
            2 * h
        )
        np.testing.assert_allclose(fd, d_ops[j], atol=1e-8)


def test_energies_batch_matches_single_field_calls():
    rng = np.random.default_rng(5)
    level = random_level(rng, with_q=True)
    model = LevelModel(level)
    fields = rng.normal(scale=0.5, size=(6, 3))
    batch = model.energies(fields)
    assert batch.shape == (6, DIM)
    for row, b in zip(batch, fields):
        np.testing.assert_allclose(row, model.energies(b), atol=1e-12)


# ---------------------------------------------------------------------------
# diagonalize and the phase gauge


def test_diagonalize_returns_ascending_gauge_fixed_eigensystem():
    rng = np.random.default_rng(13)
    level = random_level(rng)
    h = build_hamiltonian(level, np.array([0.05, 0.1, -0.3]))
    spec = diagonalize(h)
    assert np.all(np.diff(spec.energies) >= -1e-12)
    assert spec.residual(h) < 1e-9
    # gauge: the largest-magnitude component of each eigenvector is real positive
    for k in range(DIM):
        v = spec.states[:, k]
        top = v[np.argmax(np.abs(v))]
        assert abs(top.imag) < 1e-12 and top.real > 0


def test_diagonalize_is_deterministic():
    level = reference_ground_level()
    h = build_hamiltonian(level, np.array([0.11, -0.2, 0.31]))
    first = diagonalize(h)
    second = diagonalize(h)
    assert np.array_equal(first.energies, second.energies)
    assert np.array_equal(first.states, second.states)


def test_diagonalize_rejects_bad_input():
    good = build_hamiltonian(reference_ground_level(), np.array([0.0, 0.0, 0.2]))
    with pytest.raises(InvalidParameterError):
        diagonalize(good[:15, :15])
    bad = good.copy()
    bad[0, 1] += 1e-3  # breaks Hermiticity
    with pytest.raises(InvalidParameterError):
        diagonalize(bad)
    bad = good.copy()
    bad[2, 2] = np.nan
    with pytest.raises(InvalidParameterError):
        diagonalize(bad)


def test_eigensystem_solves_the_hamiltonian():
    rng = np.random.default_rng(17)
    level = random_level(rng, with_q=True)
    model = LevelModel(level)
    b = np.array([0.3, 0.2, -0.1])
    energies, states = model.eigensystem(b)
    h = model.hamiltonian(b)
    np.testing.assert_allclose(h @ states, states * energies, atol=1e-9)
    np.testing.assert_allclose(states.conj().T @ states, np.eye(DIM), atol=1e-12)


# ---------------------------------------------------------------------------
# quantization axis and effective hyperfine splitting


def test_quantization_axis_follows_b_dot_g():
    g = PrincipalTensor((14.0, 2.0, 0.5), EulerAngles(0.0, 0.0, 0.0))
    axis = quantization_axis(g, np.array([0.0, 0.0, 0.3]))
    np.testing.assert_allclose(axis, [0.0, 0.0, 1.0], atol=1e-12)
    # along the weak principal axis the direction is preserved too
    axis = quantization_axis(g, np.array([0.2, 0.0, 0.0]))
    np.testing.assert_allclose(axis, [1.0, 0.0, 0.0], atol=1e-12)
    # a tilted field bends toward the strong axis
    axis = quantization_axis(g, np.array([0.1, 0.0, 0.1]))
    assert axis[2] > 0.99 and np.linalg.norm(axis) == pytest.approx(1.0)


def test_quantization_axis_degenerate_cases_raise():
    g = PrincipalTensor((14.0, 2.0, 0.5), EulerAngles(0.0, 0.0, 0.0))
    with pytest.raises(DegenerateAxisError):
        quantization_axis(g, np.zeros(3))
    singular = PrincipalTensor((5.0, 1.0, 0.0), EulerAngles(0.0, 0.0, 0.0))
    with pytest.raises(DegenerateAxisError):
        quantization_axis(singular, np.array([0.4, 0.0, 0.0]))


def test_effective_hyperfine_splitting_isotropic_and_axial():
    iso = PrincipalTensor((0.8, 0.8, 0.8), EulerAngles(33.0, 41.0, -7.0))
    n = np.array([1.0, 2.0, 2.0]) / 3.0
    assert effective_hyperfine_splitting(iso, n) == pytest.approx(0.8, rel=1e-12)
    axial = PrincipalTensor((1.5, 0.4, 0.2), EulerAngles(0.0, 0.0, 0.0))
    assert effective_hyperfine_splitting(axial, [0, 0, 1]) == pytest.approx(1.5)
    assert effective_hyperfine_splitting(axial, [0, 1, 0]) == pytest.approx(0.4)
    with pytest.raises(InvalidParameterError):
        effective_hyperfine_splitting(iso, [1.0, 1.0, 0.0])


# ---------------------------------------------------------------------------
# serialization


def test_level_params_json_roundtrip():
    rng = np.random.default_rng(29)
    for with_q in (False, True):
        level = random_level(rng, with_q=with_q)
        data = level.to_json_dict()
        assert set(data) == ({"g", "A_GHz", "Q_GHz"} if with_q else {"g", "A_GHz"})
        back = LevelParams.from_json_dict(data)
        np.testing.assert_allclose(rotate_to_lab(back.g), rotate_to_lab(level.g), atol=1e-12)
        np.testing.assert_allclose(rotate_to_lab(back.a), rotate_to_lab(level.a), atol=1e-12)
        if with_q:
            np.testing.assert_allclose(
                rotate_to_lab(back.q), rotate_to_lab(level.q), atol=1e-12
            )


def test_hyperfine_term_couples_electron_and_nuclear_spaces():
    a_lab = np.diag([0.3, 0.5, 1.2])
    h = hyperfine_hamiltonian(a_lab)
    expected = sum(a_lab[j, j] * I_TOTAL[j] @ S_TOTAL[j] for j in range(3))
    np.testing.assert_allclose(h, expected, atol=1e-14)
