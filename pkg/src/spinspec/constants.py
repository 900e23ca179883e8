"""Physical constants in the GHz / tesla / degree unit system used package-wide.

All energies are expressed as frequencies (E/h) in GHz, magnetic fields in
tesla and angles in degrees.  The electron constant below folds mu_B/h into
GHz/T; the effective g-factors of the modelled doublets carry the remaining
anisotropy.
"""

from dataclasses import dataclass

#: Bohr magneton over Planck constant, GHz per tesla.
MU_E_GHZ_PER_T = 13.9962449

#: Nuclear magneton over Planck constant, GHz per tesla.
MU_N_GHZ_PER_T = 7.622593e-3

#: Nuclear g-factor of the modelled I = 7/2 nucleus (dimensionless, negative).
G_N = -0.1618

#: Electron effective spin and nuclear spin of the modelled system.
SPIN_S = 0.5
SPIN_I = 3.5

#: Hilbert-space dimensions: (2S+1), (2I+1) and their product.
DIM_S = 2
DIM_I = 8
DIM = DIM_S * DIM_I


@dataclass(frozen=True)
class PhysicalConstants:
    """Immutable constant set; instantiate only to override for what-if studies."""

    mu_e_ghz_per_t: float = MU_E_GHZ_PER_T
    mu_n_ghz_per_t: float = MU_N_GHZ_PER_T
    g_n: float = G_N


DEFAULT_CONSTANTS = PhysicalConstants()
