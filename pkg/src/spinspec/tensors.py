"""Principal-axis tensors and the z-y'-z'' Euler rotation convention.

A symmetric interaction tensor (g or A) is stored by its three principal
values together with the z-y'-z'' Euler angles that carry the laboratory
frame onto the principal frame: rotate by ``alpha`` about z, then ``beta``
about the new y', then ``gamma`` about the new z''.  Writing that passive
(coordinate-transform) sequence as a single active matrix gives

    R = Rz(alpha) @ Ry(beta) @ Rz(gamma)

whose columns are the principal x, y, z axes expressed in laboratory
coordinates, and the laboratory-frame tensor is

    M = R @ diag(vx, vy, vz) @ R.T

In this convention ``alpha`` and ``beta`` are the azimuthal and polar angles
of the principal z axis (z_lab = (cos a sin b, sin a sin b, cos b)) and
``gamma`` orients the transverse axes about it.  Angles are measured in
degrees and normalised to (-180, 180].  The triples (alpha, beta, gamma) and
(alpha + 180, -beta, gamma + 180) generate the same rotation matrix, and for
a symmetric tensor flipping the sign of any principal axis is also
irrelevant; ``lab_to_principal`` therefore returns the gauge-fixed
representative with beta in [0, 90] (which pins alpha within (-180, 180])
and the residual transverse freedom resolved to gamma in (-90, 90].  Tests
and comparisons should always be made on laboratory matrices, never on raw
angle triples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

#: Orthogonality / symmetry tolerance used by the checks in this module.
ORTHO_TOL = 1e-12
SYMMETRY_TOL = 1e-9


def wrap_angle_deg(angle: float) -> float:
    """Map an angle in degrees onto the canonical interval (-180, 180]."""
    if not math.isfinite(angle):
        raise InvalidParameterError(f"angle must be finite, got {angle!r}")
    wrapped = angle % 360.0
    if wrapped > 180.0:
        wrapped -= 360.0
    # avoid returning -0.0 for inputs like 360.0
    return wrapped + 0.0


def rotation_z(angle_deg: float) -> np.ndarray:
    """Rotation matrix about the z axis (right handed, degrees)."""
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_y(angle_deg: float) -> np.ndarray:
    """Rotation matrix about the y axis (right handed, degrees)."""
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class EulerAngles:
    """Intrinsic z-y'-z'' Euler angles in degrees, normalised to (-180, 180]."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", wrap_angle_deg(float(self.alpha)))
        object.__setattr__(self, "beta", wrap_angle_deg(float(self.beta)))
        object.__setattr__(self, "gamma", wrap_angle_deg(float(self.gamma)))

    def matrix(self) -> np.ndarray:
        """Fixed-frame rotation matrix Rz(alpha) @ Ry(beta) @ Rz(gamma)."""
        return rotation_z(self.alpha) @ rotation_y(self.beta) @ rotation_z(self.gamma)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)


@dataclass(frozen=True)
class PrincipalTensor:
    """Symmetric 3x3 tensor given by principal values and frame orientation.

    ``values_zyx`` lists the principal values in the order (vz, vy, vx); the
    canonical form produced by :func:`lab_to_principal` sorts them by
    descending absolute value with signs retained, so vz carries the largest
    magnitude.  The constructor stores what it is given and does not reorder.
    """

    values_zyx: tuple[float, float, float]
    angles: EulerAngles

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values_zyx)
        if len(vals) != 3 or not all(math.isfinite(v) for v in vals):
            raise InvalidParameterError(
                f"principal values must be three finite reals, got {self.values_zyx!r}"
            )
        object.__setattr__(self, "values_zyx", vals)

    @property
    def vz(self) -> float:
        return self.values_zyx[0]

    @property
    def vy(self) -> float:
        return self.values_zyx[1]

    @property
    def vx(self) -> float:
        return self.values_zyx[2]

    def lab_matrix(self) -> np.ndarray:
        return rotate_to_lab(self)

    def to_json_dict(self) -> dict:
        return {
            "values_zyx": list(self.values_zyx),
            "euler_deg": list(self.angles.as_tuple()),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PrincipalTensor":
        try:
            values = data["values_zyx"]
            euler = data["euler_deg"]
        except (KeyError, TypeError) as exc:
            raise InvalidParameterError(
                "tensor JSON needs 'values_zyx' and 'euler_deg' entries"
            ) from exc
        if len(values) != 3 or len(euler) != 3:
            raise InvalidParameterError("tensor JSON entries must have length 3")
        return cls(tuple(float(v) for v in values), EulerAngles(*euler))


def rotate_to_lab(tensor: PrincipalTensor) -> np.ndarray:
    """Return the laboratory-frame matrix R @ diag(vx, vy, vz) @ R.T."""
    r = tensor.angles.matrix()
    diag = np.diag([tensor.vx, tensor.vy, tensor.vz])
    return r @ diag @ r.T


def _euler_from_matrix(r: np.ndarray) -> tuple[float, float, float]:
    """Extract (alpha, beta, gamma) with beta in [0, 180] from a zyz matrix."""
    sb = math.hypot(r[0, 2], r[1, 2])
    beta = math.degrees(math.atan2(sb, r[2, 2]))
    if sb > 1e-12:
        alpha = math.degrees(math.atan2(r[1, 2], r[0, 2]))
        gamma = math.degrees(math.atan2(r[2, 1], -r[2, 0]))
    elif r[2, 2] > 0.0:
        # beta ~ 0: only alpha + gamma is defined; fold it all into alpha
        alpha = math.degrees(math.atan2(r[1, 0], r[0, 0]))
        gamma = 0.0
    else:
        # beta ~ 180: only alpha - gamma is defined
        alpha = math.degrees(math.atan2(-r[1, 0], -r[0, 0]))
        gamma = 0.0
    return wrap_angle_deg(alpha), wrap_angle_deg(beta), wrap_angle_deg(gamma)


# Sign flips of principal axes that leave a symmetric tensor unchanged
# (det +1 representatives only).
_AXIS_FLIPS = (
    np.diag([1.0, 1.0, 1.0]),
    np.diag([1.0, -1.0, -1.0]),
    np.diag([-1.0, 1.0, -1.0]),
    np.diag([-1.0, -1.0, 1.0]),
)


def _gauge_fixed_angles(r: np.ndarray) -> tuple[float, float, float]:
    """Pick the gauge representative: beta in [0, 90], then gamma in (-90, 90]."""
    candidates = [_euler_from_matrix(r @ flip) for flip in _AXIS_FLIPS]
    feasible = [c for c in candidates if c[1] <= 90.0 + 1e-12]

    def key(c):
        alpha, beta, gamma = c
        gamma_pref = 0 if -90.0 < gamma <= 90.0 else 1
        alpha_pref = 0 if -90.0 < alpha <= 90.0 else 1
        return (beta, gamma_pref, alpha_pref, gamma, alpha)

    return min(feasible, key=key)


def lab_to_principal(
    matrix: np.ndarray, *, degeneracy_tol: float = 1e-10
) -> PrincipalTensor:
    """Factor a symmetric laboratory matrix into canonical principal form.

    The principal values are returned sorted by descending absolute value
    (signs retained) and the Euler angles are gauge fixed as described in the
    module docstring.  When the two smaller principal values are degenerate
    the tensor is axially symmetric and gamma is fixed to zero.

    Raises
    ------
    InvalidParameterError
        If the matrix is not 3x3, not finite, or not symmetric to 1e-9.
    """
    m = np.asarray(matrix, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise InvalidParameterError("expected a finite 3x3 matrix")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
        raise InvalidParameterError("matrix is not symmetric within tolerance")
    m = 0.5 * (m + m.T)

    eigvals, eigvecs = np.linalg.eigh(m)
    order = np.argsort(-np.abs(eigvals), kind="stable")
    vz, vy, vx = (float(eigvals[i]) for i in order)
    # columns of R are the principal x, y, z axes in lab coordinates
    r = np.column_stack(
        [eigvecs[:, order[2]], eigvecs[:, order[1]], eigvecs[:, order[0]]]
    )
    if np.linalg.det(r) < 0.0:
        r[:, 0] = -r[:, 0]

    alpha, beta, gamma = _gauge_fixed_angles(r)
    if abs(vy - vx) <= degeneracy_tol * scale:
        gamma = 0.0
    return PrincipalTensor((vz, vy, vx), EulerAngles(alpha, beta, gamma))


def validate_field(b_field) -> np.ndarray:
    """Coerce a magnetic field vector to a finite float array of shape (3,)."""
    b = np.asarray(b_field, dtype=float)
    if b.shape != (3,) or not np.all(np.isfinite(b)):
        raise InvalidParameterError(
            f"field vector must be three finite components in tesla, got {b_field!r}"
        )
    return b
