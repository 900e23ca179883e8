"""Scan ingestion and multi-Lorentzian peak extraction.

A scan is one frequency sweep at a fixed magnetic field, stored as a CSV
trace (``f_GHz,signal``) plus a JSON sidecar carrying the field vector and
scan id.  Peak extraction seeds Lorentzians at prominent local maxima, then
refines all centres, heights and widths jointly with a nonlinear
least-squares fit on top of a constant baseline.  After each fit the
residual is scanned for further prominent maxima (merged peaks leave a
characteristic shoulder) and the fit is repeated with the extra seeds until
the residual is featureless or ``max_peaks`` is reached.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .errors import InvalidParameterError
from .transitions import SpectrumTrace, transition_table

#: Reported frequency sigmas never drop below the wavemeter repeatability.
SIGMA_FLOOR_GHZ = 0.006

#: Default seeding prominence as a fraction of the trace maximum.
DEFAULT_PROMINENCE = 0.1

#: Default cap on the number of Lorentzians fitted per scan.
DEFAULT_MAX_PEAKS = 30

_MAX_SEED_ROUNDS = 6


@dataclass(frozen=True)
class ScanRecord:
    """One measured trace at a fixed field."""

    scan_id: str
    b_field_t: np.ndarray
    trace: SpectrumTrace
    laser_range_ghz: tuple[float, float] | None = None

    def __post_init__(self):
        b = np.asarray(self.b_field_t, dtype=float)
        if b.shape != (3,) or not np.all(np.isfinite(b)):
            raise InvalidParameterError("scan field must be a finite 3-vector")
        if np.linalg.norm(b) == 0.0:
            raise InvalidParameterError("scan field magnitude must be > 0")
        object.__setattr__(self, "b_field_t", b)

    @property
    def frequency_range_ghz(self) -> tuple[float, float]:
        f = self.trace.frequencies_ghz
        return float(f[0]), float(f[-1])


@dataclass(frozen=True)
class MeasuredPeak:
    """One extracted line centre with its uncertainty and shape."""

    frequency_ghz: float
    frequency_sigma_ghz: float
    height: float
    fwhm_ghz: float
    scan_id: str = ""
    ok: bool = True

    def __post_init__(self):
        if not (self.fwhm_ghz > 0.0):
            raise InvalidParameterError("fwhm must be positive")

    def to_json_dict(self) -> dict:
        return {
            "f_GHz": self.frequency_ghz,
            "sigma_GHz": self.frequency_sigma_ghz,
            "height": self.height,
            "fwhm_GHz": self.fwhm_ghz,
            "ok": self.ok,
        }

    @classmethod
    def from_json_dict(cls, data: dict, scan_id: str = "") -> "MeasuredPeak":
        return cls(
            frequency_ghz=float(data["f_GHz"]),
            frequency_sigma_ghz=float(data["sigma_GHz"]),
            height=float(data["height"]),
            fwhm_ghz=float(data["fwhm_GHz"]),
            scan_id=scan_id,
            ok=bool(data.get("ok", True)),
        )


@dataclass
class ScanPeaks:
    """Extraction result for one scan, ready for fitting."""

    scan_id: str
    b_field_t: np.ndarray
    peaks: list = field(default_factory=list)


def _lorentzians(grid: np.ndarray, params: np.ndarray, n_peaks: int) -> np.ndarray:
    """Sum of n Lorentzians plus the trailing constant baseline parameter."""
    out = np.full_like(grid, params[-1])
    for j in range(n_peaks):
        c, h, w = params[3 * j : 3 * j + 3]
        half = 0.5 * w
        out += h * half**2 / ((grid - c) ** 2 + half**2)
    return out


def _joint_fit(grid: np.ndarray, signal: np.ndarray, seeds: list[int], max_nfev=None):
    """Least-squares of seeded Lorentzians; returns the scipy result."""
    step = grid[1] - grid[0]
    span = grid[-1] - grid[0]
    baseline0 = float(np.median(signal))
    x0, lower, upper = [], [], []
    for k in seeds:
        x0 += [float(grid[k]), max(float(signal[k]) - baseline0, 1e-12), 2.0 * step]
        # a Lorentzian narrower than the grid step is unresolvable
        lower += [float(grid[0]), 0.0, float(step)]
        upper += [float(grid[-1]), np.inf, float(span)]
    x0.append(baseline0)
    lower.append(-np.inf)
    upper.append(np.inf)
    n = len(seeds)
    return least_squares(
        lambda x: _lorentzians(grid, x, n) - signal,
        np.asarray(x0),
        bounds=(np.asarray(lower), np.asarray(upper)),
        max_nfev=max_nfev if max_nfev is not None else 200 * (3 * n + 1),
    )


def _center_sigmas(result, n_peaks: int, n_points: int) -> np.ndarray:
    """Covariance-derived 1-sigma of each centre, from the fit Jacobian."""
    dof = max(n_points - (3 * n_peaks + 1), 1)
    s_sq = 2.0 * result.cost / dof
    # pseudo-inverse of J^T J via SVD: tolerant of flat directions
    _, sing, vt = np.linalg.svd(result.jac, full_matrices=False)
    good = sing > max(sing[0], 1e-300) * 1e-12
    inv = (vt[good].T / sing[good] ** 2) @ vt[good]
    variances = np.clip(np.diag(inv) * s_sq, 0.0, None)
    return np.sqrt(variances[0 : 3 * n_peaks : 3])


def extract_peaks(
    trace: SpectrumTrace,
    min_prominence: float = DEFAULT_PROMINENCE,
    max_peaks: int = DEFAULT_MAX_PEAKS,
    scan_id: str = "",
    max_nfev: int | None = None,
) -> list[MeasuredPeak]:
    """Peak centres from one trace by joint multi-Lorentzian decomposition.

    Returns peaks sorted by frequency.  Peaks whose fitted centre sticks to
    the scan edge, whose width pins at the grid resolution, whose height
    collapses, or whose joint fit ran out of iterations (``max_nfev``,
    default scales with the model size) keep their best values but carry
    ``ok=False``.
    """
    if not (0.0 < min_prominence < 1.0):
        raise InvalidParameterError("min_prominence must lie in (0, 1)")
    if max_peaks < 1:
        raise InvalidParameterError("max_peaks must be >= 1")
    grid = trace.frequencies_ghz
    signal = np.asarray(trace.signal, dtype=float)
    top = float(np.max(signal)) if signal.size else 0.0
    if top <= 0.0:
        return []
    threshold = min_prominence * top

    found, props = find_peaks(signal, prominence=threshold)
    order = np.argsort(props["prominences"])[::-1]
    seeds = sorted(int(found[i]) for i in order[:max_peaks])
    if not seeds:
        return []

    result = _joint_fit(grid, signal, seeds, max_nfev)
    for _ in range(_MAX_SEED_ROUNDS):
        if len(seeds) >= max_peaks:
            break
        residual = signal - _lorentzians(grid, result.x, len(seeds))
        extra, _ = find_peaks(residual, prominence=threshold)
        extra = [int(k) for k in extra if min(abs(k - s) for s in seeds) >= 2]
        if not extra:
            break
        trial_seeds = sorted(seeds + extra[: max_peaks - len(seeds)])
        trial = _joint_fit(grid, signal, trial_seeds, max_nfev)
        # extra components must explain real structure, not just nibble noise
        if trial.cost > 0.9 * result.cost:
            break
        seeds, result = trial_seeds, trial

    n = len(seeds)
    converged = result.status > 0
    sigmas = _center_sigmas(result, n, grid.size)
    step = grid[1] - grid[0]
    peaks = []
    for j in range(n):
        center, height, width = result.x[3 * j : 3 * j + 3]
        on_edge = center - grid[0] < 0.5 * step or grid[-1] - center < 0.5 * step
        unresolved = width < 1.05 * step
        healthy = (
            converged and not on_edge and not unresolved and height > threshold * 0.5
        )
        peaks.append(
            MeasuredPeak(
                frequency_ghz=float(center),
                frequency_sigma_ghz=float(max(sigmas[j], SIGMA_FLOOR_GHZ)),
                height=float(height),
                fwhm_ghz=float(width),
                scan_id=scan_id,
                ok=bool(healthy),
            )
        )
    peaks.sort(key=lambda p: p.frequency_ghz)
    return peaks


# ---------------------------------------------------------------------------
# file formats


def write_scan(directory, record: ScanRecord) -> Path:
    """Write ``<scan_id>.csv`` and its JSON sidecar; returns the CSV path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{record.scan_id}.csv"
    rows = np.column_stack([record.trace.frequencies_ghz, record.trace.signal])
    np.savetxt(csv_path, rows, delimiter=",", header="f_GHz,signal", comments="")
    sidecar = {"scan_id": record.scan_id, "B_T": [float(v) for v in record.b_field_t]}
    if record.laser_range_ghz is not None:
        sidecar["laser_range_GHz"] = [float(v) for v in record.laser_range_ghz]
    csv_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1) + "\n")
    return csv_path


def read_scan(csv_path) -> ScanRecord:
    """Read one scan from its CSV trace and JSON sidecar."""
    csv_path = Path(csv_path)
    header = csv_path.read_text().splitlines()[0].strip()
    if header != "f_GHz,signal":
        raise InvalidParameterError(
            f"{csv_path.name}: expected header 'f_GHz,signal', got {header!r}"
        )
    rows = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    sidecar_path = csv_path.with_suffix(".json")
    if not sidecar_path.exists():
        raise InvalidParameterError(f"missing sidecar {sidecar_path.name}")
    meta = json.loads(sidecar_path.read_text())
    laser = meta.get("laser_range_GHz")
    return ScanRecord(
        scan_id=str(meta.get("scan_id", csv_path.stem)),
        b_field_t=np.asarray(meta["B_T"], dtype=float),
        trace=SpectrumTrace(rows[:, 0], rows[:, 1]),
        laser_range_ghz=tuple(float(v) for v in laser) if laser else None,
    )


def read_scan_directory(directory) -> list[ScanRecord]:
    """All scans under ``directory``, sorted by scan id for reproducibility."""
    records = [read_scan(p) for p in sorted(Path(directory).glob("*.csv"))]
    if not records:
        raise InvalidParameterError(f"no scan CSV files found in {directory}")
    return sorted(records, key=lambda r: r.scan_id)


def extract_scan_peaks(
    records,
    min_prominence: float = DEFAULT_PROMINENCE,
    max_peaks: int = DEFAULT_MAX_PEAKS,
) -> list[ScanPeaks]:
    """Run :func:`extract_peaks` over many scans, one result group per scan."""
    groups = []
    for record in records:
        peaks = extract_peaks(
            record.trace, min_prominence, max_peaks, scan_id=record.scan_id
        )
        groups.append(
            ScanPeaks(scan_id=record.scan_id, b_field_t=record.b_field_t, peaks=peaks)
        )
    return groups


def write_peaks_json(path, groups, meta: dict | None = None) -> None:
    """Serialise extraction results grouped by scan."""
    payload = {
        "unit_frequency": "GHz",
        "unit_field": "T",
        "scans": [
            {
                "scan_id": g.scan_id,
                "B_T": [float(v) for v in g.b_field_t],
                "peaks": [p.to_json_dict() for p in g.peaks],
            }
            for g in groups
        ],
    }
    if meta is not None:
        payload["meta"] = meta
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def read_peaks_json(path) -> list[ScanPeaks]:
    """Inverse of :func:`write_peaks_json`."""
    data = json.loads(Path(path).read_text())
    try:
        return [
            ScanPeaks(
                scan_id=str(entry["scan_id"]),
                b_field_t=np.asarray(entry["B_T"], dtype=float),
                peaks=[
                    MeasuredPeak.from_json_dict(p, scan_id=str(entry["scan_id"]))
                    for p in entry["peaks"]
                ],
            )
            for entry in data["scans"]
        ]
    except KeyError as exc:
        raise InvalidParameterError(f"peaks JSON missing key: {exc}") from exc


def simulate_scan_peaks(
    sys,
    b_fields,
    *,
    top_n: int = DEFAULT_MAX_PEAKS,
    min_intensity: float = 0.02,
    noise_sigma_ghz: float = 0.0,
    fwhm_ghz: float = 0.03,
    rng=None,
) -> list[ScanPeaks]:
    """Synthetic extraction results: the strongest simulated lines per field.

    For every field the ``top_n`` brightest transitions above
    ``min_intensity`` (relative to the strongest line of that scan) are kept
    and optionally jittered with Gaussian frequency noise, mimicking what
    :func:`extract_peaks` would return from a measured trace.  Deterministic:
    without an explicit ``rng`` a fixed-seed generator is used.

    Args:
        sys: SystemParams describing both levels and the optical gap.
        b_fields: field vectors in T, shape (n, 3) or (3,).
        top_n: per-scan cap on the number of kept lines.
        min_intensity: relative intensity threshold for keeping a line.
        noise_sigma_ghz: Gaussian sigma added to each kept frequency.
        fwhm_ghz: linewidth recorded on the synthetic peaks.
        rng: numpy Generator used for the jitter.

    Returns:
        One ScanPeaks per field, peaks sorted by frequency.
    """
    fields = np.atleast_2d(np.asarray(b_fields, dtype=float))
    if fields.ndim != 2 or fields.shape[1] != 3 or not np.all(np.isfinite(fields)):
        raise InvalidParameterError("b_fields must be finite vectors of shape (n, 3)")
    if top_n < 1:
        raise InvalidParameterError("top_n must be at least 1")
    if noise_sigma_ghz < 0.0:
        raise InvalidParameterError("noise sigma must be non-negative")
    if rng is None:
        rng = np.random.default_rng(0)
    freq, inten, _, _ = transition_table(sys, fields)
    sigma = max(noise_sigma_ghz, SIGMA_FLOOR_GHZ)
    out = []
    for k in range(fields.shape[0]):
        scan_id = f"sim_{k:04d}"
        idx = np.nonzero(inten[k] >= min_intensity)[0]
        idx = idx[np.argsort(-inten[k, idx], kind="stable")][:top_n]
        centers = freq[k, idx]
        if noise_sigma_ghz > 0.0:
            centers = centers + rng.normal(0.0, noise_sigma_ghz, size=centers.size)
        peaks = [
            MeasuredPeak(
                frequency_ghz=float(f),
                frequency_sigma_ghz=sigma,
                height=float(inten[k, i]),
                fwhm_ghz=fwhm_ghz,
                scan_id=scan_id,
            )
            for f, i in zip(centers, idx)
        ]
        peaks.sort(key=lambda p: p.frequency_ghz)
        out.append(ScanPeaks(scan_id=scan_id, b_field_t=fields[k].copy(), peaks=peaks))
    return out
