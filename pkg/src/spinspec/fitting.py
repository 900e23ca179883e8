"""Spin-Hamiltonian parameter fitting by two-phase basin-hopping.

The fit minimises the root-mean-square deviation between measured peak
frequencies and simulated transition frequencies over all assigned peaks,

    rmsd = sqrt( (1/N) sum_k (f_exp_k - f_sim_k)^2 ),

with 25 free parameters: for each of the two levels three principal values
and three Euler angles of g and of A, plus the zero-field optical gap f0.

Phase 1 fits a Zeeman-only surrogate (both g tensors and f0, 13 parameters)
in which every transition group collapses to its electron-Zeeman centroid
and each measured peak is attributed to the nearest of the four centroids.

Phase 2 refines the hyperfine parameters and f0 in three stages designed
around the hyperfine-ladder registration problem: because the spectrum is a
ladder of nearly evenly spaced lines, a one-to-one peak matching computed
from a wrong A_z locks every bright peak to the wrong rung and local
descent then polishes that wrong registration.  Stage (a) therefore
descends a soft surrogate - each measured peak is attracted to the nearest
simulated line of any kind, with the distance clipped at an annealed cap -
interleaved with Metropolis hops.  Stage (b) sweeps the two dominant
hyperfine principal values over a grid and scores each node by how many
peaks a one-to-one greedy matching explains, which selects the correct
ladder registration deterministically.  The sweep's coverage score is only
trustworthy once the g tensors are accurate (percent-level g errors move
every line far enough to relocate the coverage maximum to a compensating
wrong rung), so stage (b) alternates sweeps with expectation-maximisation
refinement - fixed-assignment local descents with re-derived assignments -
first over the hyperfine block, then over all 25 parameters, for
``registration_rounds`` rounds.  Stage (c) adds a final round of Metropolis
hops over all parameters.

Hops are accepted by a Metropolis rule whose temperature equals the current
objective, and never when the candidate explains far fewer peaks than the
incumbent.  All descent endpoints are archived; the reported solution is
the archived candidate that explains the most peaks at the lowest rmsd
under the final assignment window.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .constants import DEFAULT_CONSTANTS
from .errors import (
    InvalidParameterError,
    NonConvergenceError,
    UndefinedObjectiveError,
)
from .hamiltonian import LevelModel, LevelParams
from .tensors import EulerAngles, PrincipalTensor, lab_to_principal, rotate_to_lab
from .transitions import SystemParams, transition_table

_log = logging.getLogger(__name__)

#: Minimum number of peaks required before a 25-parameter fit is permitted.
MIN_PEAKS = 25

#: Default assignment window (GHz) when none is given: about twice a linewidth.
DEFAULT_WINDOW_GHZ = 0.06

#: Soft-objective caps (GHz) annealed coarse-to-fine during phase 2; the last
#: entry doubles as the assignment window of the one-to-one matching stages.
DEFAULT_WINDOW_SCHEDULE = (1.5, 0.6, 0.25, 0.1)

#: Principal-value threshold below which the transverse angle is unidentifiable.
DEGENERACY_GUARD = 1e-3

_BLOCKS = ("ground.g", "ground.A", "excited.g", "excited.A")
_FIELDS = ("vz", "vy", "vx", "alpha_deg", "beta_deg", "gamma_deg")

#: Names of the 25 fit parameters, in vector order.
PARAM_NAMES = tuple(
    f"{block}.{name}" for block in _BLOCKS for name in _FIELDS
) + ("f0_GHz",)


def params_to_vector(sys: SystemParams) -> np.ndarray:
    """Flatten a parameter set to the 25-vector in :data:`PARAM_NAMES` order."""
    out = []
    for level in (sys.ground, sys.excited):
        for tensor in (level.g, level.a):
            out.extend(tensor.values_zyx)
            out.extend(tensor.angles.as_tuple())
    out.append(sys.f0_ghz)
    return np.asarray(out, dtype=float)


def vector_to_params(x) -> SystemParams:
    """Inverse of :func:`params_to_vector` (quadrupole-free model)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (25,):
        raise InvalidParameterError(f"parameter vector must have 25 entries, got {x.shape}")

    def tensor(block):
        vz, vy, vx, al, be, ga = x[block : block + 6]
        return PrincipalTensor((vz, vy, vx), EulerAngles(al, be, ga))

    ground = LevelParams(g=tensor(0), a=tensor(6))
    excited = LevelParams(g=tensor(12), a=tensor(18))
    return SystemParams(ground=ground, excited=excited, f0_ghz=float(x[24]))


def default_bounds(frequencies_ghz) -> tuple[np.ndarray, np.ndarray]:
    """Finite box bounds: generous physical ranges plus a data-driven f0 range."""
    freqs = np.asarray(frequencies_ghz, dtype=float)
    lower, upper = [], []
    for block in _BLOCKS:
        top = 20.0 if block.endswith(".g") else 5.0
        lower += [0.0, 0.0, 0.0, -180.0, 0.0, -90.0]
        upper += [top, top, top, 180.0, 90.0, 90.0]
    lower.append(float(freqs.min()) - 20.0)
    upper.append(float(freqs.max()) + 20.0)
    return np.asarray(lower), np.asarray(upper)


@dataclass(frozen=True)
class PeakObservation:
    """One measured line: centre frequency, UNCERTAINTY and its field."""

    frequency_ghz: float
    sigma_ghz: float
    b_field_t: np.ndarray
    hint: tuple[int, int] | None = None

    def __post_init__(self):
        b = np.asarray(self.b_field_t, dtype=float)
        if b.shape != (3,) or not np.all(np.isfinite(b)):
            raise InvalidParameterError("observation field must be a finite 3-vector")
        object.__setattr__(self, "b_field_t", b)


@dataclass
class FitProblem:
    """Measured peaks plus parameter bounds, ready for fitting."""

    peaks: list[PeakObservation]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if len(self.peaks) < MIN_PEAKS:
            raise InvalidParameterError(
                f"need at least {MIN_PEAKS} peaks to constrain {MIN_PEAKS} parameters, "
                f"got {len(self.peaks)}"
            )
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != (25,) or self.upper.shape != (25,):
            raise InvalidParameterError("bounds must be 25-vectors")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise InvalidParameterError("bounds must be finite")
        if np.any(self.lower >= self.upper):
            raise InvalidParameterError("lower bounds must lie below upper bounds")
        self.frequencies = np.array([p.frequency_ghz for p in self.peaks])
        fields = np.stack([p.b_field_t for p in self.peaks])
        self.unique_fields, self.field_index = np.unique(
            fields, axis=0, return_inverse=True
        )


def problem_from_scan_peaks(groups, bounds=None) -> FitProblem:
    """Flatten per-scan extraction results into a :class:`FitProblem`."""
    observations = [
        PeakObservation(
            frequency_ghz=p.frequency_ghz,
            sigma_ghz=p.frequency_sigma_ghz,
            b_field_t=g.b_field_t,
        )
        for g in groups
        for p in g.peaks
        if getattr(p, "ok", True)
    ]
    if bounds is None:
        freqs = [p.frequency_ghz for p in observations]
        if not freqs:
            raise InvalidParameterError("no usable peaks in the scan groups")
        bounds = default_bounds(freqs)
    return FitProblem(peaks=observations, lower=bounds[0], upper=bounds[1])


# ---------------------------------------------------------------------------
# assignment


def _greedy_match(
    measured: np.ndarray,
    predicted: np.ndarray,
    intensity: np.ndarray,
    window_ghz: float,
) -> np.ndarray:
    """One-to-one match by ascending |df|; ties favour brighter predictions.

    Returns, per measured peak, the index into ``predicted`` or -1.
    """
    diff = np.abs(measured[:, None] - predicted[None, :])
    mi, pi = np.nonzero(diff <= window_ghz)
    if mi.size == 0:
        return np.full(measured.size, -1, dtype=int)
    order = np.lexsort((mi, pi, -intensity[pi], diff[mi, pi]))
    out = np.full(measured.size, -1, dtype=int)
    used = np.zeros(predicted.size, dtype=bool)
    for k in order:
        m, p = mi[k], pi[k]
        if out[m] < 0 and not used[p]:
            out[m] = p
            used[p] = True
    return out


def assign_peaks(measured, predicted, window_ghz: float) -> dict[int, int]:
    """Match measured peaks to predicted transitions within a window.

    ``measured`` may be MeasuredPeak-like objects or bare frequencies;
    ``predicted`` is a list of TransitionPeak.  Unmatched measured peaks are
    simply absent from the returned map.
    """
    if not (window_ghz > 0.0):
        raise InvalidParameterError("assignment window must be positive")
    mf = np.array(
        [getattr(p, "frequency_ghz", p) for p in measured], dtype=float
    )
    pf = np.array([p.frequency_ghz for p in predicted])
    pint = np.array([p.intensity for p in predicted])
    matched = _greedy_match(mf, pf, pint, window_ghz)
    return {int(m): int(p) for m, p in enumerate(matched) if p >= 0}


def derive_assignments(
    params: SystemParams, problem: FitProblem, window_ghz: float
) -> np.ndarray:
    """Per-peak (gi, ei) assignment array, -1 rows where unassigned."""
    if not (window_ghz > 0.0):
        raise InvalidParameterError("assignment window must be positive")
    freq, inten, gi, ei = transition_table(params, problem.unique_fields)
    out = np.full((len(problem.peaks), 2), -1, dtype=int)
    for u in range(problem.unique_fields.shape[0]):
        rows = np.nonzero(problem.field_index == u)[0]
        if rows.size == 0:
            continue
        matched = _greedy_match(
            problem.frequencies[rows], freq[u], inten[u], window_ghz
        )
        hit = matched >= 0
        out[rows[hit], 0] = gi[matched[hit]]
        out[rows[hit], 1] = ei[matched[hit]]
    for k, peak in enumerate(problem.peaks):
        if peak.hint is not None:
            out[k] = peak.hint
    return out


# ---------------------------------------------------------------------------
# objective


def _frequency_table(sys: SystemParams, unique_fields: np.ndarray) -> np.ndarray:
    """Simulated line frequencies, shape (n_fields, 16 ground, 16 excited)."""
    eg = LevelModel(sys.ground).energies(unique_fields)
    ee = LevelModel(sys.excited).energies(unique_fields)
    return sys.f0_ghz + ee[:, np.newaxis, :] - eg[:, :, np.newaxis]


def _rmsd_from_assignments(
    sys: SystemParams, problem: FitProblem, assignments: np.ndarray
) -> float:
    mask = assignments[:, 0] >= 0
    if not np.any(mask):
        raise UndefinedObjectiveError("no peaks assigned: rmsd is undefined")
    table = _frequency_table(sys, problem.unique_fields)
    sim = table[problem.field_index[mask], assignments[mask, 0], assignments[mask, 1]]
    residual = problem.frequencies[mask] - sim
    return float(np.sqrt(np.mean(residual**2)))


def _nearest_rmsd(x: np.ndarray, problem: FitProblem, cap_ghz: float) -> float:
    """Soft matching surrogate: rms distance to the nearest simulated line.

    Every measured peak is attracted to whichever of the 256 simulated lines
    lies closest, with the distance clipped at ``cap_ghz`` so unexplained
    peaks saturate instead of dominating.  Unlike the one-to-one greedy
    matching this never locks a peak to a wrong hyperfine rung, which makes
    it the right objective while the ladder registration is still uncertain.
    """
    table = _frequency_table(vector_to_params(x), problem.unique_fields)
    table = table.reshape(table.shape[0], -1)
    d = np.abs(problem.frequencies[:, np.newaxis] - table[problem.field_index])
    nearest = np.minimum(d.min(axis=1), cap_ghz)
    return float(np.sqrt(np.mean(nearest**2)))


def _ladder_sweep(
    x: np.ndarray, problem: FitProblem, window_ghz: float, points: int
) -> np.ndarray:
    """Grid the two dominant hyperfine values; keep the best registration.

    The dominant principal value of each A tensor sets the rung spacing of
    its hyperfine ladder, so it is the one coordinate a local descent cannot
    correct once the peak matching has locked onto the wrong rung.  A coarse
    two-dimensional grid over both values, scored by (peaks explained,
    -rmsd) under a one-to-one greedy matching, is a cheap deterministic way
    to pick the right registration; all other coordinates stay fixed.
    """
    def axis(col):
        half = max(0.25 * abs(x[col]), 0.35)
        return np.clip(
            np.linspace(x[col] - half, x[col] + half, points),
            problem.lower[col],
            problem.upper[col],
        )

    best = None
    grid_g = axis(6)
    grid_e = axis(18)
    for vg in np.append(grid_g, x[6]):
        for ve in np.append(grid_e, x[18]):
            trial = x.copy()
            trial[6], trial[18] = vg, ve
            sys = vector_to_params(trial)
            assign = derive_assignments(sys, problem, window_ghz)
            n = int(np.sum(assign[:, 0] >= 0))
            if n == 0:
                continue
            r = _rmsd_from_assignments(sys, problem, assign)
            if best is None or (n, -r) > (best[0], -best[1]):
                best = (n, r, trial)
    if best is None:
        return x
    _log.debug(
        "ladder sweep: A_z (%.4f, %.4f) -> (%.4f, %.4f), %d peaks explained",
        x[6], x[18], best[2][6], best[2][18], best[0],
    )
    return best[2]


def rmsd_objective(
    params: SystemParams,
    problem: FitProblem,
    assignments: np.ndarray | None = None,
    window_ghz: float = DEFAULT_WINDOW_GHZ,
) -> float:
    """Root-mean-square deviation over assigned peaks, in GHz.

    With ``assignments`` the matching is frozen (the mode used inside local
    descents); without, assignments are re-derived from ``params`` first.
    """
    if assignments is None:
        assignments = derive_assignments(params, problem, window_ghz)
    else:
        assignments = np.asarray(assignments, dtype=int)
        if assignments.shape != (len(problem.peaks), 2):
            raise InvalidParameterError(
                "assignments must map every peak to a (gi, ei) pair or -1"
            )
    return _rmsd_from_assignments(params, problem, assignments)


# ---------------------------------------------------------------------------
# basin-hopping driver


@dataclass(frozen=True)
class FitConfig:
    """Knobs of the two-phase basin-hopping fit."""

    initial: SystemParams
    seed: int = 42
    hops_zeeman: int = 30
    hops_tensor: int = 8
    hops_full: int = 6
    window_schedule_ghz: tuple = DEFAULT_WINDOW_SCHEDULE
    sweep_points: int = 15
    registration_rounds: int = 2
    value_step_frac: float = 0.05
    angle_step_deg: float = 10.0
    f0_step_ghz: float = 0.5
    local_fatol_ghz: float = 1e-6
    local_maxfev: int = 6000
    replicas: int = 1

    def __post_init__(self):
        if min(self.hops_zeeman, self.hops_tensor, self.hops_full) < 0:
            raise InvalidParameterError("hop counts must be non-negative")
        if not self.window_schedule_ghz or min(self.window_schedule_ghz) <= 0:
            raise InvalidParameterError("window schedule must be positive")
        if self.sweep_points < 2:
            raise InvalidParameterError("sweep needs at least two grid points")
        if self.registration_rounds < 1:
            raise InvalidParameterError("need at least one registration round")
        if self.local_maxfev < 1 or self.replicas < 1:
            raise InvalidParameterError("maxfev and replicas must be positive")


@dataclass(frozen=True)
class FitResult:
    """Best parameter set found, with enough provenance to audit it."""

    params: SystemParams
    rmsd_ghz: float
    assignments: tuple
    n_assigned: int
    n_peaks: int
    hops: int
    iterations: int
    converged: bool
    history: tuple
    phase1_rmsd_ghz: float
    seed: int
    window_ghz: float

    def to_json_dict(self) -> dict:
        return {
            "params": self.params.to_json_dict(),
            "rmsd_GHz": self.rmsd_ghz,
            "n_assigned": self.n_assigned,
            "n_peaks": self.n_peaks,
            "hops": self.hops,
            "iterations": self.iterations,
            "converged": self.converged,
            "phase1_rmsd_GHz": self.phase1_rmsd_ghz,
            "seed": self.seed,
            "assignment_window_GHz": self.window_ghz,
            "rmsd_history_GHz": [
                [float(w), float(r)] for w, r in self.history
            ],
            "assignments": [[int(v) for v in a] for a in self.assignments],
        }


_ANGLE_COLS = np.array([3, 4, 5, 9, 10, 11, 15, 16, 17, 21, 22, 23])
_VALUE_COLS = np.array([0, 1, 2, 6, 7, 8, 12, 13, 14, 18, 19, 20])
_GAMMA_COLS = (5, 11, 17, 23)


class _Scaler:
    """Affine map between raw parameters and the unit box used by descents."""

    def __init__(self, lower, upper):
        self.lower = lower
        self.span = upper - lower

    def to_unit(self, x):
        return np.clip((x - self.lower) / self.span, 0.0, 1.0)

    def to_raw(self, u):
        return self.lower + np.clip(u, 0.0, 1.0) * self.span


def _hop_steps(config: FitConfig, scaler: _Scaler) -> np.ndarray:
    """Per-parameter random-step sigma in unit-box coordinates."""
    steps = np.empty(25)
    steps[_VALUE_COLS] = config.value_step_frac
    steps[_ANGLE_COLS] = config.angle_step_deg / scaler.span[_ANGLE_COLS]
    steps[24] = config.f0_step_ghz / scaler.span[24]
    return steps


def _degeneracy_frozen(x: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Freeze transverse angles of tensors whose vy and vx have collapsed."""
    free = free.copy()
    for block, gamma_col in zip(range(0, 24, 6), _GAMMA_COLS):
        if abs(x[block + 1]) < DEGENERACY_GUARD and abs(x[block + 2]) < DEGENERACY_GUARD:
            free[gamma_col] = False
    return free


def _descend(objective, x0, free, scaler, config):
    """Nelder-Mead over the free coordinates; returns (x, value, nfev, ok)."""
    u0 = scaler.to_unit(x0)
    idx = np.nonzero(free)[0]

    def wrapped(u_free):
        u = u0.copy()
        u[idx] = u_free
        return objective(scaler.to_raw(u))

    res = minimize(
        wrapped,
        u0[idx],
        method="Nelder-Mead",
        options={
            "fatol": config.local_fatol_ghz,
            "xatol": 1e-5,
            "maxfev": config.local_maxfev,
            "disp": False,
        },
    )
    u = u0.copy()
    u[idx] = np.clip(res.x, 0.0, 1.0)
    return scaler.to_raw(u), float(res.fun), int(res.nfev), bool(res.success)


def _zeeman_centroid_rmsd(x: np.ndarray, problem: FitProblem) -> float:
    """Phase-1 surrogate: distance to the nearest electron-Zeeman centroid."""
    sys = vector_to_params(x)
    mu_e = DEFAULT_CONSTANTS.mu_e_ghz_per_t
    zg = 0.5 * mu_e * np.linalg.norm(
        problem.unique_fields @ rotate_to_lab(sys.ground.g), axis=1
    )
    ze = 0.5 * mu_e * np.linalg.norm(
        problem.unique_fields @ rotate_to_lab(sys.excited.g), axis=1
    )
    centroids = sys.f0_ghz + np.stack(
        [se * ze - sg * zg for sg in (-1.0, 1.0) for se in (-1.0, 1.0)], axis=1
    )
    nearest = np.min(
        np.abs(problem.frequencies[:, None] - centroids[problem.field_index]), axis=1
    )
    return float(np.sqrt(np.mean(nearest**2)))


def _metropolis_accept(new, cur, rng) -> bool:
    if new <= cur:
        return True
    temperature = max(cur, 1e-9)
    return bool(rng.random() < math.exp(-(new - cur) / temperature))


def _run_single(problem: FitProblem, config: FitConfig, seed: int):
    rng = np.random.default_rng(seed)
    scaler = _Scaler(problem.lower, problem.upper)
    steps = _hop_steps(config, scaler)
    x0 = np.clip(
        params_to_vector(_canonical_params(config.initial)),
        problem.lower,
        problem.upper,
    )

    iterations = 0
    any_success = False
    history = []
    # the user's initial guess is itself a candidate for the final selection
    archive = [x0.copy()]

    # ---- phase 1: Zeeman-only surrogate over both g tensors and f0
    zeeman_free = np.zeros(25, dtype=bool)
    zeeman_free[0:6] = True
    zeeman_free[12:18] = True
    zeeman_free[24] = True

    def phase1(x):
        return _zeeman_centroid_rmsd(x, problem)

    x_cur, r_cur, nfev, ok = _descend(phase1, x0, zeeman_free, scaler, config)
    iterations += nfev
    any_success |= ok
    x_best, r_best = x_cur, r_cur
    for _ in range(config.hops_zeeman):
        x_try = x_cur.copy()
        noise = rng.normal(size=25) * steps * scaler.span
        x_try[zeeman_free] += noise[zeeman_free]
        x_try = np.clip(x_try, problem.lower, problem.upper)
        x_loc, r_loc, nfev, ok = _descend(phase1, x_try, zeeman_free, scaler, config)
        iterations += nfev
        any_success |= ok
        if _metropolis_accept(r_loc, r_cur, rng):
            x_cur, r_cur = x_loc, r_loc
        if r_loc < r_best:
            x_best, r_best = x_loc, r_loc
    phase1_rmsd = r_best
    x_cur = x_best
    # the surrogate optimum is only a better phase-2 start than the user's
    # initial guess when it also better explains the actual line positions
    coarse_cap = config.window_schedule_ghz[0]
    keep_initial = _nearest_rmsd(x0, problem, coarse_cap) < _nearest_rmsd(
        x_cur, problem, coarse_cap
    )
    if keep_initial:
        x_cur = x0.copy()
    _log.debug(
        "phase 1: surrogate rmsd %.4f GHz; phase 2 starts from %s",
        phase1_rmsd,
        "the initial guess" if keep_initial else "the surrogate optimum",
    )

    # ---- phase 2: full model, assignments re-derived between hops.
    # Every descent endpoint goes into the archive; the winner is picked at
    # the end under the final window, because assignment counts obtained at
    # different windows are not comparable.
    def descend_refine(x, free, window, max_rounds=4):
        """Alternate fixed-assignment descents with re-assignment until the
        matching stops improving (returns None if nothing matches)."""
        nonlocal iterations, any_success
        assign = derive_assignments(vector_to_params(x), problem, window)
        n = int(np.sum(assign[:, 0] >= 0))
        if n == 0:
            return None
        r = np.inf
        for _ in range(max_rounds):
            def fixed_obj(v, _assign=assign):
                return _rmsd_from_assignments(vector_to_params(v), problem, _assign)

            x, r, nfev, ok = _descend(
                fixed_obj, x, _degeneracy_frozen(x, free), scaler, config
            )
            iterations += nfev
            any_success |= ok
            new_assign = derive_assignments(vector_to_params(x), problem, window)
            n_new = int(np.sum(new_assign[:, 0] >= 0))
            if n_new < n or np.array_equal(new_assign, assign):
                break
            assign, n = new_assign, n_new
        archive.append(x)
        return x, r, assign, n

    def full_stage(x_start, free, hops, windows):
        nonlocal iterations
        x_cur = x_start
        hop_budgets = np.array_split(np.arange(hops), len(windows))
        for window, hop_block in zip(windows, hop_budgets):
            if len(hop_block) == 0:
                continue
            refined = descend_refine(x_cur, free, window)
            if refined is None:
                continue
            x_cur, r_cur, _, n_cur = refined
            stage_best = r_cur
            history.append((window, stage_best))
            for _ in range(len(hop_block) - 1):
                x_try = x_cur.copy()
                noise = rng.normal(size=25) * steps * scaler.span
                x_try[free] += noise[free]
                x_try = np.clip(x_try, problem.lower, problem.upper)
                # cheap pre-filter: skip candidates that lose too much coverage
                assign_try = derive_assignments(
                    vector_to_params(x_try), problem, window
                )
                n_try = int(np.sum(assign_try[:, 0] >= 0))
                if n_try < int(0.9 * n_cur):
                    history.append((window, stage_best))
                    continue
                refined = descend_refine(x_try, free, window)
                if refined is None:
                    history.append((window, stage_best))
                    continue
                x_loc, r_loc, _, n_loc = refined
                if n_loc >= int(0.98 * n_cur) and _metropolis_accept(
                    r_loc, r_cur, rng
                ):
                    x_cur, r_cur, n_cur = x_loc, r_loc, n_loc
                stage_best = min(stage_best, r_loc)
                history.append((window, stage_best))
        return x_cur

    tensor_free = np.zeros(25, dtype=bool)
    tensor_free[6:12] = True
    tensor_free[18:24] = True
    tensor_free[24] = True
    all_free = np.ones(25, dtype=bool)
    final_window = config.window_schedule_ghz[-1]

    # ---- phase 2a: soft nearest-line objective over the hyperfine block.
    # The soft objective cannot lock onto a wrong hyperfine rung, so it
    # safely moves the A tensors and f0 into range before any one-to-one
    # matching is trusted.
    def soft_descend(x, cap):
        nonlocal iterations, any_success

        def soft_obj(v, _cap=cap):
            return _nearest_rmsd(v, problem, _cap)

        x, r, nfev, ok = _descend(
            soft_obj, x, _degeneracy_frozen(x, tensor_free), scaler, config
        )
        iterations += nfev
        any_success |= ok
        archive.append(x)
        return x, r

    r_cur = np.inf
    for cap in config.window_schedule_ghz:
        x_cur, r_cur = soft_descend(x_cur, cap)
        history.append((cap, r_cur))
        _log.debug("soft descent at cap %.3f GHz: rmsd %.4f GHz", cap, r_cur)
    stage_best = r_cur
    for _ in range(config.hops_tensor):
        x_try = x_cur.copy()
        noise = rng.normal(size=25) * steps * scaler.span
        x_try[tensor_free] += noise[tensor_free]
        x_try = np.clip(x_try, problem.lower, problem.upper)
        x_loc, r_loc = soft_descend(x_try, final_window)
        if _metropolis_accept(r_loc, r_cur, rng):
            x_cur, r_cur = x_loc, r_loc
        stage_best = min(stage_best, r_loc)
        history.append((final_window, stage_best))

    # ---- phase 2b: deterministic hyperfine-ladder registration sweeps,
    # alternated with EM refinement.  The first sweep runs with whatever g
    # tensors phase 1 left, whose residual errors can displace the coverage
    # maximum to a compensating wrong rung; each round therefore ends with a
    # full-parameter EM polish that sharpens g, and the next sweep re-checks
    # the registration against the improved line forest.
    for round_idx in range(config.registration_rounds):
        x_cur = _ladder_sweep(x_cur, problem, final_window, config.sweep_points)
        archive.append(x_cur)
        refined = descend_refine(x_cur, tensor_free, final_window)
        if refined is not None:
            x_cur = refined[0]
        refined = descend_refine(x_cur, all_free, final_window)
        if refined is not None:
            x_cur, _, _, n_round = refined
            _log.debug(
                "registration round %d: %d peaks explained", round_idx + 1, n_round
            )
    x_cur = _ladder_sweep(x_cur, problem, final_window, config.sweep_points)
    archive.append(x_cur)

    # ---- phase 2c: EM refinement and Metropolis hops of all 25 parameters
    x_cur = full_stage(x_cur, all_free, max(config.hops_full, 1), (final_window,))

    # ---- pick the archived candidate explaining the most peaks at the
    # lowest rmsd, all judged under the final window
    state = None
    for k, x in enumerate(archive):
        assign = derive_assignments(vector_to_params(x), problem, final_window)
        n = int(np.sum(assign[:, 0] >= 0))
        if n == 0:
            continue
        r = _rmsd_from_assignments(vector_to_params(x), problem, assign)
        _log.debug(
            "archive %d: %d peaks, rmsd %.4f GHz, A_z (%.4f, %.4f)",
            k, n, r, x[6], x[18],
        )
        if state is None or (n, -r) > (state[0], -state[1]):
            state = (n, r, x, assign)
    if state is None or not any_success:
        raise NonConvergenceError(
            "no candidate explained any peak under the final assignment window"
            if state is None
            else "every local minimisation failed"
        )
    return state, iterations, any_success, history, phase1_rmsd


def _canonical_params(sys: SystemParams) -> SystemParams:
    """Map every tensor to the canonical principal-axis gauge."""
    def canon(level):
        return LevelParams(
            g=lab_to_principal(rotate_to_lab(level.g)),
            a=lab_to_principal(rotate_to_lab(level.a)),
            q=level.q,
        )

    return SystemParams(
        ground=canon(sys.ground), excited=canon(sys.excited), f0_ghz=sys.f0_ghz
    )


def fit_basin_hopping(problem: FitProblem, config: FitConfig) -> FitResult:
    """Two-phase basin-hopping fit; deterministic for a fixed seed.

    Replicas (``config.replicas``) rerun the whole schedule with distinct
    seeds; the winner is the replica explaining the most peaks at the lowest
    rmsd, ties broken by replica order.
    """
    x_init = params_to_vector(_canonical_params(config.initial))
    if np.any(x_init < problem.lower) or np.any(x_init > problem.upper):
        raise InvalidParameterError("initial guess violates the parameter bounds")

    best = None
    total_iterations = 0
    for replica in range(max(config.replicas, 1)):
        state, iterations, ok, history, phase1_rmsd = _run_single(
            problem, config, config.seed + 1009 * replica
        )
        total_iterations += iterations
        candidate = (state, iterations, ok, history, phase1_rmsd)
        if best is None or (state[0], -state[1]) > (best[0][0], -best[0][1]):
            best = candidate

    (n_assigned, _, x_best, assign), _, ok, history, phase1_rmsd = best
    params = _canonical_params(vector_to_params(x_best))
    # the canonical gauge leaves the model invariant; recompute to make the
    # stored rmsd exactly reproducible from the stored assignments
    rmsd = _rmsd_from_assignments(params, problem, assign)
    assignments = tuple(
        (int(k), int(assign[k, 0]), int(assign[k, 1]))
        for k in range(len(problem.peaks))
        if assign[k, 0] >= 0
    )
    return FitResult(
        params=params,
        rmsd_ghz=rmsd,
        assignments=assignments,
        n_assigned=int(n_assigned),
        n_peaks=len(problem.peaks),
        hops=config.hops_zeeman + config.hops_tensor + config.hops_full,
        iterations=total_iterations,
        converged=bool(ok),
        history=tuple(history),
        phase1_rmsd_ghz=float(phase1_rmsd),
        seed=config.seed,
        window_ghz=float(config.window_schedule_ghz[-1]),
    )


def assignments_to_array(result: FitResult, n_peaks: int) -> np.ndarray:
    """Expand FitResult.assignments back to the (n_peaks, 2) array form."""
    out = np.full((n_peaks, 2), -1, dtype=int)
    for k, gi, ei in result.assignments:
        out[k] = (gi, ei)
    return out
