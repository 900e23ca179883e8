"""Optical transitions between the hyperfine manifolds of two doublets.

Each magnetic field splits both crystal-field doublets into 16 sublevels;
every ordered (ground, excited) pair contributes one optical line at

    f = f0 + E_excited - E_ground

for 256 lines per field.  Line strengths use an electron-spin-agnostic
overlap model: the optical operator acts trivially on both spin factors, so
the amplitude between electron-branch channels (s, s') is the nuclear
overlap sum_m c_e*(s', m) c_g(s, m) and channels add incoherently,

    I(g -> e) = sum_{s,s'} | sum_m c_e*(s', m) c_g(s, m) |^2 .

Summed over both complete manifolds this is invariant under field rotations,
which pins the overall scale; reported intensities are then normalised to
the strongest line at that field.

Lines are grouped a-d by the electron-spin branch (sign of <S.n>) of the two
states involved, with labels assigned once per parameter set in ascending
mean-frequency order at a high reference field along the ground-state g_z
axis, so the labels are stable while the field rotates.  States too mixed to
carry a branch sign (|<S.n>| below a threshold, or B = 0 where no axis
exists) yield the group label "mixed".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import DIM, DIM_I, DIM_S, DEFAULT_CONSTANTS
from .errors import DegenerateAxisError, InvalidParameterError
from .hamiltonian import LevelModel, LevelParams, S_TOTAL, angular_momentum_operators
from .constants import SPIN_I
from .tensors import rotate_to_lab, validate_field

_I_BARE = angular_momentum_operators(SPIN_I)

#: Electron branch labels in the order produced by :func:`group_label_map`.
GROUP_NAMES = ("a", "b", "c", "d")

#: Default |<S.n>| threshold below which a state counts as mixed.
MIX_THRESHOLD = 0.1

#: Minimum dominant |m_I> weight for a state to carry a definite m_I.
MI_WEIGHT_THRESHOLD = 0.6

#: Reference field magnitude (tesla) used to freeze the group label order.
GROUP_REFERENCE_FIELD_T = 1.0


@dataclass(frozen=True)
class SystemParams:
    """Parameters of the optical pair: two doublets plus the zero-field gap."""

    ground: LevelParams
    excited: LevelParams
    f0_ghz: float

    def __post_init__(self):
        if not (math.isfinite(self.f0_ghz) and self.f0_ghz > 0.0):
            raise InvalidParameterError("f0_ghz must be finite and positive")

    def to_json_dict(self) -> dict:
        return {
            "unit_frequency": "GHz",
            "unit_field": "T",
            "unit_angle": "deg",
            "f0_GHz": self.f0_ghz,
            "ground": self.ground.to_json_dict(),
            "excited": self.excited.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SystemParams":
        try:
            return cls(
                ground=LevelParams.from_json_dict(data["ground"]),
                excited=LevelParams.from_json_dict(data["excited"]),
                f0_ghz=float(data["f0_GHz"]),
            )
        except KeyError as exc:
            raise InvalidParameterError(f"params JSON missing key: {exc}") from exc


@dataclass(frozen=True)
class TransitionPeak:
    """One optical line: frequency (GHz), relative intensity and provenance."""

    frequency_ghz: float
    intensity: float
    ground_index: int
    excited_index: int
    group: str
    delta_mi: str

    def to_json_dict(self) -> dict:
        return {
            "f_GHz": self.frequency_ghz,
            "I_rel": self.intensity,
            "group": self.group,
            "gi": self.ground_index,
            "ei": self.excited_index,
            "delta_mI": self.delta_mi,
        }


@dataclass
class SpectrumTrace:
    """Synthesised spectrum on a uniform frequency grid."""

    frequencies_ghz: np.ndarray
    signal: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies_ghz, dtype=float)
        s = np.asarray(self.signal, dtype=float)
        if f.ndim != 1 or f.shape != s.shape or f.size < 2:
            raise InvalidParameterError("trace needs matching 1-d arrays, >= 2 points")
        steps = np.diff(f)
        # rounding jitter in the differences scales with |f|, not the step
        tol = max(1e-9 * abs(steps[0]), 64 * np.finfo(float).eps * np.max(np.abs(f)))
        if np.any(steps <= 0) or np.max(np.abs(steps - steps[0])) > tol:
            raise InvalidParameterError("frequency grid must be uniform and increasing")
        self.frequencies_ghz = f
        self.signal = s


def branch_signs(
    states: np.ndarray, axis: np.ndarray, mix_threshold: float = MIX_THRESHOLD
) -> np.ndarray:
    """Electron branch of each eigenstate: -1 (lower), +1 (upper), 0 (mixed).

    The branch is the sign of <S.n> along the quantization axis; states with
    |<S.n>| below ``mix_threshold`` are tagged 0.
    """
    s_axis = np.tensordot(axis, S_TOTAL, axes=([0], [0]))
    expect = np.einsum("as,ab,bs->s", states.conj(), s_axis, states).real
    signs = np.where(expect > 0.0, 1, -1)
    signs[np.abs(expect) < mix_threshold] = 0
    return signs


def nuclear_quantization_field(
    level: LevelParams, axis: np.ndarray, b_field: np.ndarray
) -> np.ndarray:
    """Effective field (GHz units) seen by the nucleus in the upper branch.

    w = A.n/2 - mu_n g_n B: the first-order hyperfine field for m_S = +1/2
    plus the bare nuclear Zeeman term.  The lower branch sees approximately
    -w, so a single basis built from w serves both branches: lower-branch
    eigenstates simply acquire reversed projection labels, which is exactly
    the physical projection along the common +w direction.
    """
    a_lab = rotate_to_lab(level.a)
    return 0.5 * (a_lab @ axis) - (
        DEFAULT_CONSTANTS.mu_n_ghz_per_t
        * DEFAULT_CONSTANTS.g_n
        * np.asarray(b_field, dtype=float)
    )


def dominant_mi_indices(
    states: np.ndarray, w_field: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Dominant nuclear projection index (0..7) and its weight, per state.

    Every eigenstate is expanded in the nuclear basis quantized along
    ``w_field`` (index 0 is projection -7/2, index 7 is +7/2), the same
    basis for both electron branches, so differences of these labels count
    the physical change of nuclear projection between any two states.  A
    zero ``w_field`` leaves every weight at 0, i.e. no definite m_I.
    """
    idx = np.zeros(DIM, dtype=int)
    weight = np.zeros(DIM)
    norm = np.linalg.norm(w_field)
    if norm == 0.0:
        return idx, weight
    # eigenvectors of I.w sorted by ascending projection, -7/2 .. +7/2
    _, u = np.linalg.eigh(np.tensordot(w_field / norm, _I_BARE, axes=([0], [0])))
    comps = states.reshape(DIM_S, DIM_I, DIM)
    proj = np.einsum("mt,smk->tsk", u.conj(), comps)
    nuclear = np.sum(np.abs(proj) ** 2, axis=1)
    idx[:] = np.argmax(nuclear, axis=0)
    weight[:] = np.max(nuclear, axis=0)
    return idx, weight


def intensity_matrix(ground_states: np.ndarray, excited_states: np.ndarray) -> np.ndarray:
    """Unnormalised line strengths, indexed [excited, ground]."""
    g3 = ground_states.reshape(DIM_S, DIM_I, DIM)
    e3 = excited_states.reshape(DIM_S, DIM_I, DIM)
    amp = np.einsum("pme,smg->pseg", e3.conj(), g3)
    return np.sum(np.abs(amp) ** 2, axis=(0, 1))


def _quantization_axes(sys: SystemParams, b_field: np.ndarray):
    """Per-level unit axes along B.g, or None when degenerate (B = 0)."""
    axes = []
    for level in (sys.ground, sys.excited):
        from .hamiltonian import quantization_axis

        try:
            axes.append(quantization_axis(level.g, b_field))
        except DegenerateAxisError:
            axes.append(None)
    return axes


def group_label_map(
    sys: SystemParams,
    reference_field_t: float = GROUP_REFERENCE_FIELD_T,
) -> dict[tuple[int, int], str]:
    """Freeze the (ground branch, excited branch) -> a..d label assignment.

    Labels are ordered by ascending mean transition frequency at a high field
    along the ground-state g_z principal axis, where the electron character
    of every state is sharp; the resulting map is then reused at every other
    field so a group keeps its name while the field rotates.
    """
    z_axis = sys.ground.g.angles.matrix()[:, 2]
    b_ref = reference_field_t * z_axis
    means = {}
    axes = _quantization_axes(sys, b_ref)
    eg, vg = LevelModel(sys.ground).eigensystem(b_ref)
    ee, ve = LevelModel(sys.excited).eigensystem(b_ref)
    # at the reference field every state carries a sharp branch sign
    sign_g = branch_signs(vg, axes[0], mix_threshold=0.0)
    sign_e = branch_signs(ve, axes[1], mix_threshold=0.0)
    freq = sys.f0_ghz + ee[np.newaxis, :] - eg[:, np.newaxis]
    for gb in (-1, 1):
        for eb in (-1, 1):
            block = freq[np.ix_(sign_g == gb, sign_e == eb)]
            if block.size == 0:
                raise DegenerateAxisError(
                    "electron branches unresolved at the group reference field"
                )
            means[(gb, eb)] = float(np.mean(block))
    ordered = sorted(means, key=means.get)
    return {combo: GROUP_NAMES[i] for i, combo in enumerate(ordered)}


def compute_transitions(
    sys: SystemParams,
    b_field,
    *,
    mix_threshold: float = MIX_THRESHOLD,
    label_map: dict[tuple[int, int], str] | None = None,
) -> list[TransitionPeak]:
    """All 256 optical lines at one field, intensities normalised to the max.

    Returns peaks ordered by (ground_index, excited_index); indices refer to
    the ascending-energy eigenstates of each doublet at this field.
    """
    b = validate_field(b_field)
    if label_map is None:
        label_map = group_label_map(sys)
    eg, vg = LevelModel(sys.ground).eigensystem(b)
    ee, ve = LevelModel(sys.excited).eigensystem(b)

    axes = _quantization_axes(sys, b)
    sign_g = (
        branch_signs(vg, axes[0], mix_threshold)
        if axes[0] is not None
        else np.zeros(DIM, dtype=int)
    )
    sign_e = (
        branch_signs(ve, axes[1], mix_threshold)
        if axes[1] is not None
        else np.zeros(DIM, dtype=int)
    )

    w_g = (
        nuclear_quantization_field(sys.ground, axes[0], b)
        if axes[0] is not None
        else np.zeros(3)
    )
    w_e = (
        nuclear_quantization_field(sys.excited, axes[1], b)
        if axes[1] is not None
        else np.zeros(3)
    )
    # report both levels' projections along a consistent direction so that
    # delta_mI is meaningful across levels even if the hyperfine axes of the
    # two levels happen to come out anti-aligned
    if float(w_g @ w_e) < 0.0:
        w_e = -w_e
    mi_g, wg = dominant_mi_indices(vg, w_g)
    mi_e, we = dominant_mi_indices(ve, w_e)

    intensity = intensity_matrix(vg, ve)
    intensity = intensity / np.max(intensity)

    peaks = []
    for gi in range(DIM):
        for ei in range(DIM):
            if sign_g[gi] == 0 or sign_e[ei] == 0:
                group = "mixed"
            else:
                group = label_map[(sign_g[gi], sign_e[ei])]
            if wg[gi] < MI_WEIGHT_THRESHOLD or we[ei] < MI_WEIGHT_THRESHOLD:
                delta = "other"
            else:
                step = int(mi_e[ei] - mi_g[gi])
                delta = {0: "0", 1: "+1", -1: "-1"}.get(step, "other")
            peaks.append(
                TransitionPeak(
                    frequency_ghz=float(sys.f0_ghz + ee[ei] - eg[gi]),
                    intensity=float(intensity[ei, gi]),
                    ground_index=gi,
                    excited_index=ei,
                    group=group,
                    delta_mi=delta,
                )
            )
    return peaks


def classify_group(
    sys: SystemParams,
    b_field,
    ground_index: int,
    excited_index: int,
    *,
    mix_threshold: float = MIX_THRESHOLD,
) -> str:
    """Group label (a-d or mixed) for one (ground, excited) eigenstate pair."""
    if not (0 <= ground_index < DIM and 0 <= excited_index < DIM):
        raise InvalidParameterError("state indices must lie in [0, 16)")
    peaks = compute_transitions(sys, b_field, mix_threshold=mix_threshold)
    return peaks[ground_index * DIM + excited_index].group


def transition_table(
    sys: SystemParams, b_fields: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised line table over a batch of fields.

    Returns (freq, intensity, gi, ei): freq and intensity have shape
    (n_fields, 256) with intensities normalised per field, gi/ei are the
    shared (256,) index arrays in (ground_index, excited_index) order.
    """
    b = np.atleast_2d(np.asarray(b_fields, dtype=float))
    eg, vg = LevelModel(sys.ground).eigensystem(b)
    ee, ve = LevelModel(sys.excited).eigensystem(b)
    freq = sys.f0_ghz + ee[:, np.newaxis, :] - eg[:, :, np.newaxis]
    g3 = vg.reshape(-1, DIM_S, DIM_I, DIM)
    e3 = ve.reshape(-1, DIM_S, DIM_I, DIM)
    amp = np.einsum("fpme,fsmg->fpseg", e3.conj(), g3)
    inten = np.sum(np.abs(amp) ** 2, axis=(1, 2))  # [field, e, g]
    inten = inten / np.max(inten, axis=(1, 2), keepdims=True)
    gi, ei = np.meshgrid(np.arange(DIM), np.arange(DIM), indexing="ij")
    # flatten in (gi, ei) order to match compute_transitions
    freq_flat = freq.reshape(b.shape[0], -1)
    inten_flat = np.transpose(inten, (0, 2, 1)).reshape(b.shape[0], -1)
    return freq_flat, inten_flat, gi.ravel(), ei.ravel()


def synthesize_spectrum(
    peaks,
    f_start_ghz: float,
    f_stop_ghz: float,
    step_ghz: float,
    fwhm_ghz: float,
) -> SpectrumTrace:
    """Sum of peak-height-normalised Lorentzians on a uniform grid.

    Each line contributes I_k (G/2)^2 / ((f - f_k)^2 + (G/2)^2) with
    G = ``fwhm_ghz``, so an isolated line reaches exactly its intensity at
    its centre.
    """
    if not (step_ghz > 0.0 and fwhm_ghz > 0.0):
        raise InvalidParameterError("step and fwhm must be positive")
    n = int(math.floor((f_stop_ghz - f_start_ghz) / step_ghz + 1e-9)) + 1
    if f_stop_ghz < f_start_ghz or n < 2:
        raise InvalidParameterError("frequency grid is empty or degenerate")
    grid = f_start_ghz + step_ghz * np.arange(n)
    centers = np.array([p.frequency_ghz for p in peaks])
    heights = np.array([p.intensity for p in peaks])
    half = 0.5 * fwhm_ghz
    if centers.size == 0:
        return SpectrumTrace(grid, np.zeros_like(grid))
    lor = (half**2) / ((grid[:, np.newaxis] - centers[np.newaxis, :]) ** 2 + half**2)
    return SpectrumTrace(grid, lor @ heights)
