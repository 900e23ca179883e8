"""Bundled reference parameters: a strongly anisotropic monoclinic Kramers site.

The values describe the lowest crystal-field doublets of an effective
S = 1/2, I = 7/2 centre whose g- and A-tensors are highly anisotropic and
share (nearly) a principal z axis.  They serve as the package's worked
example: tests, docs and the CLI demo all start from here.
"""

from __future__ import annotations

from .hamiltonian import LevelParams
from .tensors import EulerAngles, PrincipalTensor
from .transitions import SystemParams

#: Optical gap between the two doublets at zero field, GHz.
REFERENCE_F0_GHZ = 195036.7


def reference_ground_level() -> LevelParams:
    """Ground doublet: g and A tensors (A in GHz)."""
    return LevelParams(
        g=PrincipalTensor((14.846, 2.38, 0.55), EulerAngles(137.50, -66.036, -155.7)),
        a=PrincipalTensor((1.558, 0.56, 0.30), EulerAngles(138.77, -66.30, -65.0)),
    )


def reference_excited_level() -> LevelParams:
    """Excited doublet: g and A tensors (A in GHz)."""
    return LevelParams(
        g=PrincipalTensor((13.100, 0.59, 0.16), EulerAngles(129.74, -71.87, -161.0)),
        a=PrincipalTensor((1.773, 0.42, 0.07), EulerAngles(127.39, -72.2, -101.0)),
    )


def reference_site() -> SystemParams:
    """Full optical two-doublet system used as the package demo."""
    return SystemParams(
        ground=reference_ground_level(),
        excited=reference_excited_level(),
        f0_ghz=REFERENCE_F0_GHZ,
    )
