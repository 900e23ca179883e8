"""Field-direction schedules: spherical spirals and in-plane circles.

The spiral mode places ``count`` points on the unit sphere with a Fibonacci
lattice (golden-angle azimuth, uniform steps in z through band midpoints),
which keeps the minimum pairwise angular separation within a constant factor
of the ideal sqrt(4*pi/count).  The plane mode steps a unit vector around one
of the three coordinate planes; the plane name gives the axis at 0 degrees
and the axis reached at 90 degrees, e.g. ZOX starts at +z and rotates toward
+x.
"""

import math

import numpy as np

from .errors import InvalidParameterError

#: Azimuthal increment of the spherical spiral, pi (3 - sqrt 5) radians.
GOLDEN_ANGLE_RAD = math.pi * (3.0 - math.sqrt(5.0))

#: Plane name -> (axis index at 0 deg, axis index at 90 deg).
PLANE_AXES = {"XOY": (0, 1), "YOZ": (1, 2), "ZOX": (2, 0)}


def fibonacci_sphere(count: int) -> np.ndarray:
    """``count`` near-uniform unit vectors, shape (count, 3).

    count = 2 returns the antipodal pair along z (the band-midpoint lattice
    is a poor fit for two points, where the only sensible answer is a pole
    pair).
    """
    if not isinstance(count, (int, np.integer)) or count < 2:
        raise InvalidParameterError("direction count must be an integer >= 2")
    if count == 2:
        return np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    i = np.arange(count)
    z = 1.0 - (2.0 * i + 1.0) / count
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = GOLDEN_ANGLE_RAD * i
    points = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def plane_circle(plane: str, step_deg: float) -> np.ndarray:
    """Unit vectors around one coordinate plane at uniform angular steps."""
    if plane not in PLANE_AXES:
        raise InvalidParameterError(
            f"unknown plane {plane!r}; expected one of {sorted(PLANE_AXES)}"
        )
    if not (0.0 < step_deg <= 180.0) or not math.isfinite(step_deg):
        raise InvalidParameterError("step_deg must lie in (0, 180]")
    angles = np.deg2rad(np.arange(0.0, 360.0, step_deg))
    out = np.zeros((angles.size, 3))
    first, second = PLANE_AXES[plane]
    out[:, first] = np.cos(angles)
    out[:, second] = np.sin(angles)
    return out


def generate_directions(
    mode: str,
    *,
    count: int | None = None,
    plane: str | None = None,
    step_deg: float | None = None,
) -> np.ndarray:
    """Dispatch to :func:`fibonacci_sphere` or :func:`plane_circle`."""
    if mode == "spiral":
        if count is None:
            raise InvalidParameterError("spiral mode needs count")
        return fibonacci_sphere(count)
    if mode == "plane":
        if plane is None or step_deg is None:
            raise InvalidParameterError("plane mode needs plane and step_deg")
        return plane_circle(plane, step_deg)
    raise InvalidParameterError(f"unknown direction mode {mode!r}")
