"""Effective spin Hamiltonian of one crystal-field doublet.

Models a Kramers doublet as an effective electron spin S = 1/2 coupled to a
single I = 7/2 nucleus:

    H/h = mu_e B.g.S  +  I.A.S  +  I.Q.I  -  mu_n g_n B.I

with every term in GHz (mu_e and mu_n already divided by h), fields in tesla
and g, A, Q symmetric 3x3 tensors in the laboratory frame.  The Hilbert space
is the product |m_S> x |m_I| with both projections ascending, electron factor
first, giving 16 levels.  H is linear in B, so it decomposes as a constant
hyperfine/quadrupole part plus B dotted with three derivative operators;
:class:`LevelModel` precomputes both pieces and evaluates batches of fields
in one shot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import DIM, DIM_I, DIM_S, SPIN_I, SPIN_S, DEFAULT_CONSTANTS, PhysicalConstants
from .errors import DegenerateAxisError, InvalidParameterError
from .tensors import PrincipalTensor, rotate_to_lab, validate_field

#: Hermiticity tolerance (relative to the largest matrix element).
HERMITICITY_TOL = 1e-9


def angular_momentum_operators(j: float) -> np.ndarray:
    """Return (Jx, Jy, Jz) in the |j, m> basis with m ascending, hbar = 1."""
    dim = int(round(2 * j)) + 1
    m = -j + np.arange(dim)
    raising = np.zeros((dim, dim), dtype=complex)
    # <m+1| J+ |m> = sqrt(j(j+1) - m(m+1))
    raising[np.arange(1, dim), np.arange(dim - 1)] = np.sqrt(
        j * (j + 1) - m[:-1] * (m[:-1] + 1)
    )
    jx = 0.5 * (raising + raising.conj().T)
    jy = -0.5j * (raising - raising.conj().T)
    jz = np.diag(m).astype(complex)
    return np.stack([jx, jy, jz])


_S_OPS = angular_momentum_operators(SPIN_S)
_I_OPS = angular_momentum_operators(SPIN_I)

#: Electron and nuclear spin operators embedded in the 16-dimensional product
#: space, index order (x, y, z).
S_TOTAL = np.stack([np.kron(op, np.eye(DIM_I)) for op in _S_OPS])
I_TOTAL = np.stack([np.kron(np.eye(DIM_S), op) for op in _I_OPS])


@dataclass(frozen=True)
class LevelParams:
    """g- and A-tensors (plus optional quadrupole Q) of one doublet."""

    g: PrincipalTensor
    a: PrincipalTensor
    q: PrincipalTensor | None = None

    def to_json_dict(self) -> dict:
        data = {
            "g": self.g.to_json_dict(),
            "A_GHz": self.a.to_json_dict(),
        }
        if self.q is not None:
            data["Q_GHz"] = self.q.to_json_dict()
        return data

    @classmethod
    def from_json_dict(cls, data: dict) -> "LevelParams":
        q = data.get("Q_GHz")
        return cls(
            g=PrincipalTensor.from_json_dict(data["g"]),
            a=PrincipalTensor.from_json_dict(data["A_GHz"]),
            q=PrincipalTensor.from_json_dict(q) if q is not None else None,
        )


@dataclass
class LevelSpectrum:
    """Eigenvalues (GHz, ascending) and phase-gauged eigenvector columns."""

    energies: np.ndarray
    states: np.ndarray

    def residual(self, hamiltonian: np.ndarray) -> float:
        """Max |H v - E v| over all eigenpairs, for validation."""
        hv = hamiltonian @ self.states
        ev = self.states * self.energies[np.newaxis, :]
        return float(np.max(np.abs(hv - ev)))


def _phase_gauge(states: np.ndarray) -> np.ndarray:
    """Rotate each eigenvector's phase so its largest component is real positive."""
    idx = np.argmax(np.abs(states), axis=-2)
    lead = np.take_along_axis(states, idx[..., np.newaxis, :], axis=-2)
    phase = lead / np.abs(lead)
    return states * phase.conj()


def hyperfine_hamiltonian(a_lab: np.ndarray) -> np.ndarray:
    """I.A.S in the product space: sum_jk A_jk (1 x I_j)(S_k x 1)."""
    return np.einsum("jk,jab,kbc->ac", a_lab, I_TOTAL, S_TOTAL)


def quadrupole_hamiltonian(q_lab: np.ndarray) -> np.ndarray:
    """I.Q.I with the trace part removed (only the traceless part is physical)."""
    q_traceless = q_lab - np.trace(q_lab) / 3.0 * np.eye(3)
    return np.einsum("jk,jab,kbc->ac", q_traceless, I_TOTAL, I_TOTAL)


class LevelModel:
    """Field-independent pieces of one level's Hamiltonian, ready for batching.

    H(B) = h0 + sum_j B_j d_ops[j], with h0 the hyperfine + quadrupole part
    and d_ops the exact field-derivative operators dH/dB_j.
    """

    def __init__(
        self,
        params: LevelParams,
        constants: PhysicalConstants = DEFAULT_CONSTANTS,
    ):
        self.params = params
        self.g_lab = rotate_to_lab(params.g)
        self.a_lab = rotate_to_lab(params.a)
        self.h0 = hyperfine_hamiltonian(self.a_lab)
        if params.q is not None:
            self.h0 = self.h0 + quadrupole_hamiltonian(rotate_to_lab(params.q))
        # dH/dB_j = mu_e sum_k g_jk S_k - mu_n g_n I_j
        zeeman = constants.mu_e_ghz_per_t * np.einsum("jk,kab->jab", self.g_lab, S_TOTAL)
        nuclear = constants.mu_n_ghz_per_t * constants.g_n * I_TOTAL
        self.d_ops = zeeman - nuclear

    def hamiltonian(self, b_field) -> np.ndarray:
        """H(B) for a single field (3,) or a batch (..., 3) of fields, in GHz."""
        b = np.asarray(b_field, dtype=float)
        if b.shape[-1] != 3 or not np.all(np.isfinite(b)):
            raise InvalidParameterError("field must have three finite components")
        return self.h0 + np.tensordot(b, self.d_ops, axes=([-1], [0]))

    def energies(self, b_field) -> np.ndarray:
        """Eigenvalues in GHz, ascending, batched over leading field axes."""
        return np.linalg.eigvalsh(self.hamiltonian(b_field))

    def eigensystem(self, b_field) -> tuple[np.ndarray, np.ndarray]:
        """(energies, states) with the standard phase gauge, batched."""
        energies, states = np.linalg.eigh(self.hamiltonian(b_field))
        return energies, _phase_gauge(states)


def build_hamiltonian(
    params: LevelParams,
    b_field,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """Assemble the 16x16 Hamiltonian (GHz) at one field (tesla)."""
    return LevelModel(params, constants).hamiltonian(validate_field(b_field))


def field_derivative_operators(
    params: LevelParams,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """Exact dH/dB_j operators, shape (3, 16, 16); H is linear in B."""
    return LevelModel(params, constants).d_ops


def diagonalize(hamiltonian: np.ndarray) -> LevelSpectrum:
    """Eigensystem of a Hermitian 16x16 Hamiltonian with a fixed phase gauge.

    Eigenvalues come back ascending; each eigenvector is rotated so that its
    largest-magnitude component is real and positive, making spectra
    reproducible across runs and platforms.
    """
    h = np.asarray(hamiltonian)
    if h.shape != (DIM, DIM):
        raise InvalidParameterError(f"expected a {DIM}x{DIM} matrix, got {h.shape}")
    if not np.all(np.isfinite(h.real)) or not np.all(np.isfinite(h.imag)):
        raise InvalidParameterError("Hamiltonian contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(h))))
    if np.max(np.abs(h - h.conj().T)) > HERMITICITY_TOL * scale:
        raise InvalidParameterError("Hamiltonian is not Hermitian within tolerance")
    energies, states = np.linalg.eigh(h)
    return LevelSpectrum(energies=energies, states=_phase_gauge(states))


def quantization_axis(g: PrincipalTensor, b_field) -> np.ndarray:
    """Unit vector along B.g, the electron-spin quantization direction.

    Raises
    ------
    DegenerateAxisError
        If |B.g| vanishes (no field, or B in the null space of g).
    """
    b = validate_field(b_field)
    g_lab = rotate_to_lab(g)
    axis = b @ g_lab
    norm = float(np.linalg.norm(axis))
    scale = float(np.linalg.norm(b)) * max(1.0, float(np.max(np.abs(g_lab))))
    if norm <= 1e-12 * max(1.0, scale):
        raise DegenerateAxisError("quantization axis undefined: |B.g| = 0")
    return axis / norm


def effective_hyperfine_splitting(a: PrincipalTensor, axis) -> float:
    """|A.n| in GHz: first-order hyperfine ladder spacing along a unit axis."""
    n = np.asarray(axis, dtype=float)
    if n.shape != (3,) or not np.all(np.isfinite(n)):
        raise InvalidParameterError("axis must be a finite 3-vector")
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise InvalidParameterError("axis must be normalised to unit length")
    return float(np.linalg.norm(rotate_to_lab(a) @ n))
