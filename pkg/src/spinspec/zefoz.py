"""Zero-first-order-Zeeman (ZEFOZ) field search and characterization.

A ZEFOZ point of a hyperfine transition f(B) = E_j(B) - E_i(B) is a field
where the gradient dF/dB vanishes, making the transition first-order
insensitive to magnetic noise.  Gradients come from the Hellmann-Feynman
theorem (the Hamiltonian is exactly linear in B), Hessians from central
finite differences of that gradient, and candidate points from damped
Newton iterations launched on a log-radial x Fibonacci-angular seed grid
for every unordered pair among the 16 sublevels.

Every reported point is re-verified with an independent finite-difference
gradient on sorted eigenvalues, classified by mixing regime, and annotated
with the maximum curvature S2 (largest-|eigenvalue| of the Hessian) that
sets the residual second-order sensitivity and hence the coherence time.
"""

import math
from dataclasses import dataclass

import numpy as np

from .constants import DEFAULT_CONSTANTS, DIM, PhysicalConstants
from .directions import fibonacci_sphere
from .errors import InvalidParameterError
from .hamiltonian import LevelModel, LevelParams

#: Pairs (i, j) with i < j among the 16 sorted sublevels.
ALL_PAIRS = tuple((i, j) for i in range(DIM) for j in range(i + 1, DIM))

#: Reported points must pass an independent FD check below this norm (GHz/T).
VERIFY_TOL_GHZ_PER_T = 1e-4

#: Newton iterations stop once the Hellmann-Feynman gradient is this small.
NEWTON_TOL_GHZ_PER_T = 1e-7

#: Converged candidates closer than this are considered the same point (T).
DEDUPE_DISTANCE_T = 1e-3

#: Neighbor gaps below this (GHz) make per-state gradients ill-defined.
DEGENERACY_GAP_GHZ = 1e-6

#: Step (T) of the independent verification differences and the FD fallback.
FD_STEP_T = 1e-5

#: Candidate steps (T) tried by the adaptive Hessian differencing.
HESSIAN_STEPS_T = (1e-3, 1e-4, 1e-5)

#: Pre-symmetrization relative asymmetry accepted without a flag.
HESSIAN_ASYM_TOL = 1e-6

#: 1 GHz/T^2 expressed in Hz/mT^2.
GHZ_PER_T2_TO_HZ_PER_MT2 = 1e3

#: Default electron-Zeeman/hyperfine ratio separating the mixing regimes.
DEFAULT_KAPPA = 3.0


@dataclass(frozen=True)
class ZefozPoint:
    """One verified stationary point of a hyperfine transition."""

    b_field_t: np.ndarray
    pair: tuple
    frequency_ghz: float
    gradient_ghz_per_t: np.ndarray
    gradient_residual_ghz_per_t: float
    hessian_ghz_per_t2: np.ndarray
    s2_max_ghz_per_t2: float
    regime: str
    degenerate_fallback: bool = False
    hessian_asymmetry: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "B_T": [float(v) for v in self.b_field_t],
            "pair": [int(self.pair[0]), int(self.pair[1])],
            "f_GHz": self.frequency_ghz,
            "grad_GHz_per_T": [float(v) for v in self.gradient_ghz_per_t],
            "grad_residual_GHz_per_T": self.gradient_residual_ghz_per_t,
            "hessian_GHz_per_T2": [
                [float(v) for v in row] for row in self.hessian_ghz_per_t2
            ],
            "S2_max_GHz_per_T2": self.s2_max_ghz_per_t2,
            "regime": self.regime,
            "degenerate_fallback": self.degenerate_fallback,
            "hessian_asymmetry": self.hessian_asymmetry,
        }


@dataclass(frozen=True)
class CoherenceEstimate:
    """Magnetic-noise-limited decoherence rate and T2 at one ZEFOZ point."""

    rate_hz: float
    t2_s: float
    delta_b_mt: float

    def to_json_dict(self) -> dict:
        return {
            "rate_Hz": self.rate_hz,
            "T2_s": None if math.isinf(self.t2_s) else self.t2_s,
            "deltaB_mT": self.delta_b_mt,
        }


def _validate_pair(i: int, j: int) -> tuple[int, int]:
    i, j = int(i), int(j)
    if not (0 <= i < DIM and 0 <= j < DIM and i != j):
        raise InvalidParameterError(f"pair must be two distinct indices in [0, {DIM})")
    return (i, j) if i < j else (j, i)


def _pair_quantities(model: LevelModel, b_batch: np.ndarray, i: int, j: int):
    """Frequency, HF gradient, perturbation-theory Hessian and min gap, batched.

    The Hessian of each eigenvalue uses second-order perturbation theory,
    d2E_t/dB_k dB_l = sum_{m != t} 2 Re(W_k[m,t] conj(W_l[m,t])) / (E_t - E_m)
    with W_k = V^dag (dH/dB_k) V, which is exact because H is linear in B.
    """
    energies, states = model.eigensystem(b_batch)
    cols = states[:, :, [i, j]]
    # W[n, k, m, t] = <m | dH/dB_k | level_t>, t in {i, j}
    m = np.einsum("kab,nbt->nkat", model.d_ops, cols)
    w = np.einsum("nas,nkat->nkst", states.conj(), m)
    grad = (w[:, :, j, 1] - w[:, :, i, 0]).real
    freq = energies[:, j] - energies[:, i]

    hessians = []
    for t_pos, t_idx in enumerate((i, j)):
        denom = energies[:, t_idx, np.newaxis] - energies
        denom[:, t_idx] = np.inf  # exclude the level itself
        inv = np.zeros_like(denom)
        np.divide(1.0, denom, out=inv, where=np.abs(denom) > 1e-12)
        wt = w[:, :, :, t_pos]
        hessians.append(
            2.0 * np.einsum("nkm,nlm,nm->nkl", wt, wt.conj(), inv).real
        )
    hess = hessians[1] - hessians[0]

    gaps = np.diff(energies, axis=1)
    pad = np.full((b_batch.shape[0], 1), np.inf)
    lower = np.concatenate([pad, gaps], axis=1)  # gap below each level
    upper = np.concatenate([gaps, pad], axis=1)  # gap above each level
    min_gap = np.minimum(
        np.minimum(lower[:, i], upper[:, i]), np.minimum(lower[:, j], upper[:, j])
    )
    return freq, grad, hess, min_gap


def _fd_gradient(model: LevelModel, b_field: np.ndarray, i: int, j: int) -> np.ndarray:
    """Central differences of the sorted-eigenvalue transition frequency."""
    offsets = np.concatenate([np.eye(3), -np.eye(3)]) * FD_STEP_T
    energies = model.energies(b_field + offsets)
    f = energies[:, j] - energies[:, i]
    return (f[:3] - f[3:]) / (2.0 * FD_STEP_T)


def transition_gradient(
    level: LevelParams,
    b_field,
    i: int,
    j: int,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """Gradient of f = E_j - E_i with respect to B, in GHz/T.

    Uses the Hellmann-Feynman identity on the exact field-derivative
    operators; near-degenerate levels (neighbor gap below
    :data:`DEGENERACY_GAP_GHZ`) fall back to finite differences on sorted
    eigenvalues, where per-state expectation values are ill-defined.
    """
    grad, _ = transition_gradient_flagged(level, b_field, i, j, constants)
    return grad


def transition_gradient_flagged(
    level: LevelParams,
    b_field,
    i: int,
    j: int,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
    model: LevelModel | None = None,
):
    """As :func:`transition_gradient`, plus a flag marking the FD fallback."""
    i, j = _validate_pair(i, j)
    b = np.asarray(b_field, dtype=float)
    if b.shape != (3,) or not np.all(np.isfinite(b)):
        raise InvalidParameterError("field must be a finite 3-vector")
    if model is None:
        model = LevelModel(level, constants)
    _, grad, _, min_gap = _pair_quantities(model, b[np.newaxis], i, j)
    if min_gap[0] < DEGENERACY_GAP_GHZ:
        return _fd_gradient(model, b, i, j), True
    return grad[0], False


def transition_hessian(
    level: LevelParams,
    b_field,
    i: int,
    j: int,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """Symmetrized Hessian of f = E_j - E_i, in GHz/T^2."""
    hess, _, _ = transition_hessian_flagged(level, b_field, i, j, constants)
    return hess


def transition_hessian_flagged(
    level: LevelParams,
    b_field,
    i: int,
    j: int,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
    model: LevelModel | None = None,
):
    """Hessian by central differences of the Hellmann-Feynman gradient.

    The step adapts: candidates from :data:`HESSIAN_STEPS_T` are tried until
    the pre-symmetrization asymmetry of the mixed partials drops below
    :data:`HESSIAN_ASYM_TOL`; if none succeeds the least-asymmetric result
    is kept and flagged.  Returns (hessian, asymmetry, flagged); the
    asymmetry is the relative ||H - H^T|| before symmetrization, a health
    metric for the step choice, and ``flagged`` also marks any degenerate
    gradient fallback encountered at the stencil points.
    """
    i, j = _validate_pair(i, j)
    b = np.asarray(b_field, dtype=float)
    if b.shape != (3,) or not np.all(np.isfinite(b)):
        raise InvalidParameterError("field must be a finite 3-vector")
    if model is None:
        model = LevelModel(level, constants)

    best = None
    for step in HESSIAN_STEPS_T:
        rows = np.empty((3, 3))
        degenerate = False
        for k in range(3):
            offset = np.zeros(3)
            offset[k] = step
            gp, fp = transition_gradient_flagged(level, b + offset, i, j, constants, model)
            gm, fm = transition_gradient_flagged(level, b - offset, i, j, constants, model)
            rows[k] = (gp - gm) / (2.0 * step)
            degenerate |= fp or fm
        scale = max(float(np.linalg.norm(rows)), 1e-300)
        asym = float(np.linalg.norm(rows - rows.T)) / scale
        candidate = (asym, 0.5 * (rows + rows.T), degenerate)
        if best is None or asym < best[0]:
            best = candidate
        if asym < HESSIAN_ASYM_TOL and not degenerate:
            return candidate[1], asym, False
    return best[1], best[0], True


def classify_regime(
    level: LevelParams,
    b_field,
    kappa: float = DEFAULT_KAPPA,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> str:
    """"weak" when the electron Zeeman splitting dominates the hyperfine spread.

    The hyperfine spread is measured at the given field as the full
    eigenvalue span minus the electron Zeeman splitting mu_e |g B|; "weak"
    means the splitting exceeds ``kappa`` times that spread, so the electron
    spin projection is nearly a good quantum number.
    """
    if not (kappa > 0):
        raise InvalidParameterError("kappa must be positive")
    b = np.asarray(b_field, dtype=float)
    if b.shape != (3,) or not np.all(np.isfinite(b)):
        raise InvalidParameterError("field must be a finite 3-vector")
    model = LevelModel(level, constants)
    energies = model.energies(b)
    zeeman = constants.mu_e_ghz_per_t * float(np.linalg.norm(b @ model.g_lab))
    spread = max(float(energies[-1] - energies[0]) - zeeman, 0.0)
    return "weak" if zeeman > kappa * spread else "strong"


def estimate_coherence(point: ZefozPoint, delta_b_mt: float = 0.01) -> CoherenceEstimate:
    """Decoherence rate S2_max * deltaB^2 and its T2 = 1/rate.

    ``S2_max`` in GHz/T^2 equals 1e3 Hz/mT^2, so the rate in Hz is
    |S2_max| * 1e3 * deltaB_mT^2; zero curvature yields an infinite T2.
    """
    if not (delta_b_mt > 0):
        raise InvalidParameterError("deltaB must be positive")
    s2_hz_per_mt2 = abs(point.s2_max_ghz_per_t2) * GHZ_PER_T2_TO_HZ_PER_MT2
    rate = s2_hz_per_mt2 * delta_b_mt**2
    return CoherenceEstimate(
        rate_hz=rate,
        t2_s=(math.inf if rate == 0.0 else 1.0 / rate),
        delta_b_mt=float(delta_b_mt),
    )


def _seed_grid(b_max: float, n_radii: int, n_directions: int) -> np.ndarray:
    radii = np.geomspace(1e-3, b_max, n_radii)
    dirs = fibonacci_sphere(n_directions)
    return (radii[:, np.newaxis, np.newaxis] * dirs[np.newaxis]).reshape(-1, 3)


def _newton_candidates(
    model: LevelModel,
    seeds: np.ndarray,
    i: int,
    j: int,
    b_max: float,
    max_iter: int,
) -> np.ndarray:
    """Damped Newton on grad f = 0 from every seed; converged points only."""
    b = seeds.copy()
    active = np.arange(b.shape[0])
    found = []
    for _ in range(max_iter):
        if active.size == 0:
            break
        _, grad, hess, _ = _pair_quantities(model, b[active], i, j)
        norms = np.linalg.norm(grad, axis=1)
        done = norms < NEWTON_TOL_GHZ_PER_T
        if np.any(done):
            found.append(b[active[done]])
        keep = ~done
        active = active[keep]
        if active.size == 0:
            break
        step = -np.linalg.pinv(hess[keep]) @ grad[keep][..., np.newaxis]
        step = step[..., 0]
        b_norm = np.linalg.norm(b[active], axis=1)
        cap = np.maximum(0.2 * b_norm, 1e-2)
        step_norm = np.linalg.norm(step, axis=1)
        shrink = np.where(step_norm > cap, cap / np.maximum(step_norm, 1e-300), 1.0)
        b[active] = b[active] + step * shrink[:, np.newaxis]
        inside = np.linalg.norm(b[active], axis=1) <= 1.5 * b_max
        finite = np.all(np.isfinite(b[active]), axis=1)
        active = active[inside & finite]
    if not found:
        return np.empty((0, 3))
    return np.concatenate(found, axis=0)


def _deduplicate(points: np.ndarray) -> np.ndarray:
    """Greedy 1 mT deduplication in deterministic (|B|, x, y, z) order."""
    if points.shape[0] == 0:
        return points
    order = np.lexsort(
        (points[:, 2], points[:, 1], points[:, 0], np.linalg.norm(points, axis=1))
    )
    kept: list[np.ndarray] = []
    for idx in order:
        p = points[idx]
        if all(np.linalg.norm(p - q) >= DEDUPE_DISTANCE_T for q in kept):
            kept.append(p)
    return np.asarray(kept)


def find_zefoz(
    level: LevelParams,
    b_max: float = 5.0,
    *,
    pairs=None,
    n_radii: int = 8,
    n_directions: int = 64,
    max_iter: int = 60,
    kappa: float = DEFAULT_KAPPA,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> list[ZefozPoint]:
    """Locate and characterize ZEFOZ points of one level's transitions.

    For every requested pair, damped Newton iterations on the
    Hellmann-Feynman gradient start from a log-radial x Fibonacci seed grid
    plus the origin (always stationary because f(B) = f(-B)).  Converged
    candidates within ``b_max`` are closed under B -> -B, deduplicated to
    1 mT, then re-verified with an independent finite-difference gradient;
    only points passing ``||grad|| < 1e-4 GHz/T`` are reported.

    Args:
        level: tensors of the level searched (its 16 hyperfine sublevels).
        b_max: search radius in tesla.
        pairs: iterable of (i, j) pairs; default all 120 unordered pairs.
        n_radii: log-spaced seed radii in [1 mT, b_max].
        n_directions: Fibonacci seed directions per radius.
        max_iter: Newton iteration cap per seed.
        kappa: mixing-regime threshold passed to :func:`classify_regime`.
        constants: physical constants set.

    Returns:
        ZefozPoint list ordered by (pair, |B|, B components).
    """
    if not (b_max > 0):
        raise InvalidParameterError("b_max must be positive")
    if n_radii < 1 or n_directions < 2:
        raise InvalidParameterError("need at least one radius and two directions")
    model = LevelModel(level, constants)
    seeds = _seed_grid(b_max, n_radii, n_directions)
    pair_list = [_validate_pair(i, j) for (i, j) in (pairs or ALL_PAIRS)]

    points = []
    for (i, j) in pair_list:
        candidates = _newton_candidates(model, seeds, i, j, b_max, max_iter)
        if candidates.shape[0]:
            candidates = candidates[np.linalg.norm(candidates, axis=1) <= b_max]
        candidates = np.concatenate(
            [np.zeros((1, 3)), candidates, -candidates], axis=0
        )
        for b in _deduplicate(candidates):
            _, degenerate = transition_gradient_flagged(
                level, b, i, j, constants, model
            )
            fd_grad = _fd_gradient(model, b, i, j)
            residual = float(np.linalg.norm(fd_grad))
            if residual >= VERIFY_TOL_GHZ_PER_T:
                continue
            hess, asym, flagged = transition_hessian_flagged(
                level, b, i, j, constants, model
            )
            eigvals = np.linalg.eigvalsh(hess)
            s2 = float(eigvals[np.argmax(np.abs(eigvals))])
            freq, _, _, _ = _pair_quantities(model, b[np.newaxis], i, j)
            points.append(
                ZefozPoint(
                    b_field_t=b,
                    pair=(i, j),
                    frequency_ghz=float(freq[0]),
                    gradient_ghz_per_t=fd_grad,
                    gradient_residual_ghz_per_t=residual,
                    hessian_ghz_per_t2=hess,
                    s2_max_ghz_per_t2=s2,
                    regime=classify_regime(level, b, kappa, constants),
                    degenerate_fallback=bool(degenerate or flagged),
                    hessian_asymmetry=float(asym),
                )
            )
    points.sort(
        key=lambda p: (
            p.pair,
            float(np.linalg.norm(p.b_field_t)),
            tuple(p.b_field_t),
        )
    )
    return points
