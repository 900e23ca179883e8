"""Command-line pipeline: simulate, extract, fit, mcmc, zefoz.

Every subcommand writes plain JSON/CSV artifacts embedding a ``meta`` block
(tool version, configuration digest, input-file digests) and is
deterministic for a fixed seed and thread count (set threads with the
``SPINSPEC_THREADS`` environment variable before launching).

Exit codes: 0 success; 2 bad input (missing/malformed files, invalid
parameters); 3 stage failure (unexpected internal error); 4 non-convergence
(a fit or sampler failed to reach its criterion).  A ``pipeline`` run halts
at the first failing stage with that stage's code, leaving the artifacts of
completed stages intact.
"""

import argparse
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_STAGE_FAILURE = 3
EXIT_NON_CONVERGENCE = 4


def _config_from_args(args) -> dict:
    return {
        k: v
        for k, v in sorted(vars(args).items())
        if k not in ("func",) and not callable(v)
    }


def _load_system_params(path):
    """Read SystemParams from a bare params file or a fit.json artifact."""
    from .serialize import read_json_artifact
    from .transitions import SystemParams

    data = read_json_artifact(path)
    payload = data["params"] if "params" in data else data
    return SystemParams.from_json_dict(payload)


def _load_directions(path):
    import numpy as np

    from .errors import InvalidParameterError
    from .serialize import read_json_artifact

    data = read_json_artifact(path)
    if "directions" not in data:
        raise InvalidParameterError(f"{path}: missing 'directions' key")
    dirs = np.asarray(data["directions"], dtype=float)
    if dirs.size and (dirs.ndim != 2 or dirs.shape[1] != 3):
        raise InvalidParameterError(f"{path}: directions must be an (n, 3) array")
    return dirs.reshape(-1, 3)


def _csv_header_comment(config: dict) -> str:
    from . import __version__
    from .serialize import config_digest

    return f"# spinspec {__version__} config_digest={config_digest(config)}"


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_directions(args) -> int:
    from .directions import generate_directions
    from .serialize import meta_block, write_json_artifact

    config = _config_from_args(args)
    dirs = generate_directions(
        args.mode, count=args.count, plane=args.plane, step_deg=args.step_deg
    )
    write_json_artifact(
        args.out,
        {
            "meta": meta_block(config),
            "directions": [[float(v) for v in d] for d in dirs],
        },
    )
    print(f"wrote {len(dirs)} directions to {args.out}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    import numpy as np

    from .peakio import ScanRecord, simulate_scan_peaks, write_peaks_json, write_scan
    from .serialize import meta_block, write_json_artifact
    from .transitions import compute_transitions, synthesize_spectrum

    config = _config_from_args(args)
    sys_params = _load_system_params(args.params)
    directions = _load_directions(args.directions)
    inputs = {"params": args.params, "directions": args.directions}
    meta = meta_block(config, inputs)

    if directions.shape[0] == 0:
        print("warning: zero directions given, nothing to simulate", file=sys.stderr)
        return EXIT_OK

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fields = args.bmag * directions
    rng = np.random.default_rng(args.seed)

    for k, b in enumerate(fields):
        peaks = compute_transitions(sys_params, b)
        write_json_artifact(
            out_dir / f"transitions_{k:04d}.json",
            {
                "meta": meta,
                "B_T": [float(v) for v in b],
                "unit_frequency": "GHz",
                "peaks": [p.to_json_dict() for p in peaks],
            },
        )
        if args.traces:
            strong = [p for p in peaks if p.intensity >= args.min_intensity]
            lo = min(p.frequency_ghz for p in strong) - args.trace_pad_ghz
            hi = max(p.frequency_ghz for p in strong) + args.trace_pad_ghz
            trace = synthesize_spectrum(
                strong, lo, hi, args.trace_step_mhz * 1e-3, args.fwhm_mhz * 1e-3
            )
            if args.trace_noise > 0.0:
                trace = type(trace)(
                    trace.frequencies_ghz,
                    trace.signal
                    + rng.normal(0.0, args.trace_noise, size=trace.signal.size),
                )
            write_scan(
                out_dir, ScanRecord(scan_id=f"scan_{k:04d}", b_field_t=b, trace=trace)
            )

    if args.peaks_out:
        groups = simulate_scan_peaks(
            sys_params,
            fields,
            top_n=args.top_n,
            min_intensity=args.min_intensity,
            noise_sigma_ghz=args.noise_mhz * 1e-3,
            fwhm_ghz=args.fwhm_mhz * 1e-3,
            rng=np.random.default_rng(args.seed),
        )
        write_peaks_json(args.peaks_out, groups, meta=meta)
        n = sum(len(g.peaks) for g in groups)
        print(f"wrote {n} synthetic peaks over {len(groups)} scans to {args.peaks_out}")
    print(f"wrote {fields.shape[0]} transition lists to {out_dir}")
    return EXIT_OK


def _cmd_extract(args) -> int:
    from .peakio import extract_scan_peaks, read_scan_directory, write_peaks_json
    from .serialize import meta_block

    config = _config_from_args(args)
    records = read_scan_directory(args.scan_dir)
    groups = extract_scan_peaks(records, args.prominence, args.max_peaks)
    write_peaks_json(args.out, groups, meta=meta_block(config))
    n = sum(len(g.peaks) for g in groups)
    print(f"extracted {n} peaks from {len(records)} scans into {args.out}")
    return EXIT_OK


def _parse_windows(text: str):
    from .errors import InvalidParameterError

    try:
        windows = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise InvalidParameterError(f"bad window schedule {text!r}") from exc
    if not windows or any(w <= 0 for w in windows):
        raise InvalidParameterError("window schedule must be positive floats")
    return windows


def _build_problem(peaks_path, bounds_path=None):
    import numpy as np

    from .errors import InvalidParameterError
    from .fitting import FitProblem, default_bounds, problem_from_scan_peaks
    from .peakio import read_peaks_json
    from .serialize import read_json_artifact

    groups = read_peaks_json(peaks_path)
    if bounds_path:
        data = read_json_artifact(bounds_path)
        try:
            bounds = (
                np.asarray(data["lower"], dtype=float),
                np.asarray(data["upper"], dtype=float),
            )
        except KeyError as exc:
            raise InvalidParameterError(
                f"bounds JSON missing key: {exc}"
            ) from exc
        return problem_from_scan_peaks(groups, bounds=bounds)
    return problem_from_scan_peaks(groups)


def _cmd_fit(args) -> int:
    from .fitting import FitConfig, fit_basin_hopping
    from .serialize import meta_block, write_json_artifact

    config = _config_from_args(args)
    problem = _build_problem(args.peaks, args.bounds)
    initial = _load_system_params(args.initial)
    fit_config = FitConfig(
        initial=initial,
        seed=args.seed,
        hops_zeeman=args.hops_zeeman,
        hops_tensor=args.hops_tensor,
        hops_full=args.hops_full,
        window_schedule_ghz=_parse_windows(args.window_schedule),
        sweep_points=args.sweep_points,
        local_maxfev=args.local_maxfev,
        replicas=args.replicas,
    )
    result = fit_basin_hopping(problem, fit_config)
    inputs = {"peaks": args.peaks, "initial": args.initial}
    if args.bounds:
        inputs["bounds"] = args.bounds
    payload = {"meta": meta_block(config, inputs)}
    payload.update(result.to_json_dict())
    write_json_artifact(args.out, payload)
    print(
        f"fit rmsd {result.rmsd_ghz * 1e3:.2f} MHz over "
        f"{result.n_assigned}/{result.n_peaks} assigned peaks -> {args.out}"
    )
    return EXIT_OK


def _cmd_mcmc(args) -> int:
    import numpy as np

    from .fitting import PARAM_NAMES
    from .mcmc import McmcConfig, run_mcmc
    from .serialize import meta_block, read_json_artifact, write_json_artifact
    from .transitions import SystemParams

    config = _config_from_args(args)
    problem = _build_problem(args.peaks)
    fit_data = read_json_artifact(args.fit)
    start = SystemParams.from_json_dict(fit_data["params"])
    assignments = None
    if "assignments" in fit_data:
        assignments = np.full((len(problem.peaks), 2), -1, dtype=int)
        for k, gi, ei in fit_data["assignments"]:
            assignments[int(k)] = (int(gi), int(ei))
    mcmc_config = McmcConfig(
        n_samples=args.length,
        burn_in=args.burn_in,
        n_chains=args.chains,
        seed=args.seed,
        sigma_ghz=args.sigma_ghz,
        thin=args.thin,
    )
    summary, chains = run_mcmc(problem, start, mcmc_config, assignments=assignments)
    payload = {"meta": meta_block(config, {"fit": args.fit, "peaks": args.peaks})}
    payload.update(summary.to_json_dict())
    write_json_artifact(args.out, payload)
    if args.samples_csv:
        flat = chains.reshape(-1, chains.shape[-1])
        header = _csv_header_comment(config) + "\n" + ",".join(PARAM_NAMES)
        np.savetxt(
            args.samples_csv, flat, delimiter=",", header=header, comments=""
        )
    for warning in summary.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(
        f"posterior over {summary.n_samples} samples "
        f"(acceptance {summary.acceptance_rate:.2f}) -> {args.out}"
    )
    return EXIT_OK


def _parse_pairs(text: str):
    from .errors import InvalidParameterError

    pairs = []
    for token in text.split(","):
        parts = token.split("-")
        if len(parts) != 2:
            raise InvalidParameterError(f"bad pair {token!r}; expected like '0-1'")
        pairs.append((int(parts[0]), int(parts[1])))
    return pairs


def _cmd_zefoz(args) -> int:
    import numpy as np

    from .errors import InvalidParameterError
    from .serialize import meta_block, write_json_artifact
    from .zefoz import estimate_coherence, find_zefoz

    config = _config_from_args(args)
    sys_params = _load_system_params(args.params)
    if args.level == "ground":
        level = sys_params.ground
    elif args.level == "excited":
        level = sys_params.excited
    else:
        raise InvalidParameterError(f"unknown level {args.level!r}")
    pairs = _parse_pairs(args.pairs) if args.pairs else None
    points = find_zefoz(
        level,
        args.bmax,
        pairs=pairs,
        n_radii=args.radii,
        n_directions=args.directions,
        kappa=args.kappa,
    )
    entries = []
    for p in points:
        entry = p.to_json_dict()
        entry["coherence"] = estimate_coherence(p, args.deltab_mt).to_json_dict()
        entries.append(entry)
    payload = {
        "meta": meta_block(config, {"params": args.params}),
        "level": args.level,
        "unit_field": "T",
        "unit_curvature": "GHz/T^2",
        "points": entries,
    }
    write_json_artifact(args.out, payload)

    if args.plotdata:
        header = _csv_header_comment(config)
        curvature_rows = [
            header,
            "B_T,S2_max_GHz_per_T2,S2_max_Hz_per_mT2,regime",
        ]
        field_rows = [header, "Bx_T,By_T,Bz_T,pair_i,pair_j,regime"]
        for p in points:
            b_norm = float(np.linalg.norm(p.b_field_t))
            s2 = p.s2_max_ghz_per_t2
            curvature_rows.append(f"{b_norm!r},{s2!r},{abs(s2) * 1e3!r},{p.regime}")
            bx, by, bz = (float(v) for v in p.b_field_t)
            field_rows.append(
                f"{bx!r},{by!r},{bz!r},{p.pair[0]},{p.pair[1]},{p.regime}"
            )
        Path(f"{args.plotdata}_curvature.csv").write_text(
            "\n".join(curvature_rows) + "\n"
        )
        Path(f"{args.plotdata}_fields.csv").write_text("\n".join(field_rows) + "\n")

    n_strong = sum(1 for p in points if p.regime == "strong")
    print(
        f"found {len(points)} ZEFOZ points ({n_strong} strong, "
        f"{len(points) - n_strong} weak) -> {args.out}"
    )
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    from .serialize import file_digest, verify_file_digest

    work = Path(args.workdir)
    dirs_path = work / "directions.json"
    sim_dir = work / "simulated"
    peaks_path = work / "peaks.json"
    fit_path = work / "fit.json"
    posterior_path = work / "posterior.json"
    zefoz_path = work / "zefoz.json"
    initial = args.initial or args.params

    plan = [
        ("gen-directions", [], dirs_path),
        ("simulate", [args.params, dirs_path], peaks_path),
        ("fit", [peaks_path, initial], fit_path),
        ("mcmc", [fit_path, peaks_path], posterior_path),
        ("zefoz", [fit_path], zefoz_path),
    ]
    if args.dry_run:
        print("pipeline plan (dry run, nothing written):")
        for stage, stage_inputs, output in plan:
            ins = ", ".join(str(p) for p in stage_inputs)
            print(f"  {stage}: inputs [{ins}] -> {output}")
        return EXIT_OK

    work.mkdir(parents=True, exist_ok=True)
    ns = argparse.Namespace

    print("stage 1/5: gen-directions")
    code = _cmd_gen_directions(
        ns(mode="spiral", count=args.count, plane=None, step_deg=None, out=str(dirs_path))
    )
    if code != EXIT_OK:
        return code
    digests = {str(dirs_path): file_digest(dirs_path)}

    print("stage 2/5: simulate")
    verify_file_digest(dirs_path, digests[str(dirs_path)])
    code = _cmd_simulate(
        ns(
            params=args.params,
            directions=str(dirs_path),
            bmag=args.bmag,
            out_dir=str(sim_dir),
            peaks_out=str(peaks_path),
            noise_mhz=args.noise_mhz,
            top_n=args.top_n,
            min_intensity=0.02,
            fwhm_mhz=30.0,
            seed=args.seed,
            traces=False,
            trace_noise=0.0,
            trace_step_mhz=10.0,
            trace_pad_ghz=1.0,
        )
    )
    if code != EXIT_OK:
        return code
    digests[str(peaks_path)] = file_digest(peaks_path)

    print("stage 3/5: fit")
    verify_file_digest(peaks_path, digests[str(peaks_path)])
    code = _cmd_fit(
        ns(
            peaks=str(peaks_path),
            initial=str(initial),
            bounds=None,
            seed=args.seed,
            hops_zeeman=args.hops_zeeman,
            hops_tensor=args.hops_tensor,
            hops_full=args.hops_full,
            window_schedule=args.window_schedule,
            sweep_points=args.sweep_points,
            local_maxfev=args.local_maxfev,
            replicas=1,
            out=str(fit_path),
        )
    )
    if code != EXIT_OK:
        return code
    digests[str(fit_path)] = file_digest(fit_path)
    _print_recovery_table(args.params, fit_path)

    print("stage 4/5: mcmc")
    verify_file_digest(fit_path, digests[str(fit_path)])
    code = _cmd_mcmc(
        ns(
            fit=str(fit_path),
            peaks=str(peaks_path),
            chains=args.chains,
            length=args.mcmc_length,
            burn_in=args.mcmc_burn_in,
            seed=args.seed,
            sigma_ghz=None,
            thin=1,
            samples_csv=None,
            out=str(posterior_path),
        )
    )
    if code != EXIT_OK:
        return code

    print("stage 5/5: zefoz")
    verify_file_digest(fit_path, digests[str(fit_path)])
    code = _cmd_zefoz(
        ns(
            params=str(fit_path),
            level="ground",
            bmax=args.bmax,
            deltab_mt=args.deltab_mt,
            pairs=None,
            radii=args.zefoz_radii,
            directions=args.zefoz_directions,
            kappa=3.0,
            out=str(zefoz_path),
            plotdata=str(work / "zefoz") if args.plotdata else None,
        )
    )
    if code != EXIT_OK:
        return code
    print(f"pipeline complete; artifacts in {work}")
    return EXIT_OK


def _print_recovery_table(truth_path, fit_path) -> None:
    """Parameter recovery table when the generating parameters are known."""
    from .fitting import PARAM_NAMES, params_to_vector
    from .serialize import read_json_artifact
    from .transitions import SystemParams

    truth = params_to_vector(_canonical(_load_system_params(truth_path)))
    fit_data = read_json_artifact(fit_path)
    fitted = params_to_vector(SystemParams.from_json_dict(fit_data["params"]))
    print("parameter recovery (truth vs fitted):")
    for name, t, f in zip(PARAM_NAMES, truth, fitted):
        print(f"  {name:20s} {t:14.4f} {f:14.4f}  (err {f - t:+.4f})")


def _canonical(sys_params):
    from .fitting import _canonical_params

    return _canonical_params(sys_params)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinspec",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "--check-input",
        action="append",
        default=[],
        metavar="PATH=SHA256",
        help="verify an input file digest before any computation (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-directions", help="write a direction schedule")
    p.add_argument("--mode", choices=("spiral", "plane"), required=True)
    p.add_argument("--count", type=int, default=None, help="spiral point count")
    p.add_argument("--plane", choices=("XOY", "YOZ", "ZOX"), default=None)
    p.add_argument("--step-deg", type=float, default=None, help="plane step (deg)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_directions)

    p = sub.add_parser("simulate", help="forward-model transition lists")
    p.add_argument("--params", required=True, help="SystemParams JSON")
    p.add_argument("--directions", required=True, help="gen-directions output")
    p.add_argument("--bmag", type=float, default=0.4, help="field magnitude (T)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--peaks-out", default=None, help="also write a measured-style peaks JSON")
    p.add_argument("--noise-mhz", type=float, default=0.0, help="peak frequency jitter")
    p.add_argument("--top-n", type=int, default=32, help="kept lines per scan in peaks JSON")
    p.add_argument("--min-intensity", type=float, default=0.02)
    p.add_argument("--fwhm-mhz", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--traces", action="store_true", help="also synthesize CSV traces")
    p.add_argument("--trace-noise", type=float, default=0.0, help="trace amplitude noise")
    p.add_argument("--trace-step-mhz", type=float, default=10.0)
    p.add_argument("--trace-pad-ghz", type=float, default=1.0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("extract", help="extract peaks from scan traces")
    p.add_argument("--scan-dir", required=True)
    p.add_argument("--prominence", type=float, default=0.1)
    p.add_argument("--max-peaks", type=int, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("fit", help="fit tensors to peaks by basin-hopping")
    p.add_argument("--peaks", required=True)
    p.add_argument("--initial", required=True, help="initial SystemParams JSON")
    p.add_argument("--bounds", default=None, help="JSON with 'lower'/'upper' 25-vectors")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--hops-zeeman", type=int, default=30)
    p.add_argument("--hops-tensor", type=int, default=8)
    p.add_argument("--hops-full", type=int, default=6)
    p.add_argument("--window-schedule", default="1.5,0.6,0.25,0.1", help="GHz, comma-separated")
    p.add_argument("--sweep-points", type=int, default=15,
                   help="grid points per axis of the ladder registration sweep")
    p.add_argument("--local-maxfev", type=int, default=6000,
                   help="function-evaluation cap per local descent")
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("mcmc", help="sample parameter posterior around a fit")
    p.add_argument("--fit", required=True, help="fit.json artifact")
    p.add_argument("--peaks", required=True)
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--length", type=int, default=20_000)
    p.add_argument("--burn-in", type=int, default=4_000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--sigma-ghz", type=float, default=None, help="override noise scale")
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--samples-csv", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mcmc)

    p = sub.add_parser("zefoz", help="search zero-first-order-Zeeman points")
    p.add_argument("--params", required=True, help="params JSON or fit.json")
    p.add_argument("--level", choices=("ground", "excited"), default="ground")
    p.add_argument("--bmax", type=float, default=5.0)
    p.add_argument("--deltab-mt", type=float, default=0.01)
    p.add_argument("--pairs", default=None, help="subset like '0-1,7-8'")
    p.add_argument("--radii", type=int, default=8)
    p.add_argument("--directions", type=int, default=64)
    p.add_argument("--kappa", type=float, default=3.0)
    p.add_argument("--plotdata", default=None, help="prefix for plot-ready CSVs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_zefoz)

    p = sub.add_parser("pipeline", help="simulate -> fit -> mcmc -> zefoz")
    p.add_argument("--params", required=True, help="generating SystemParams JSON")
    p.add_argument("--initial", default=None, help="fit start (default: --params)")
    p.add_argument("--workdir", required=True)
    p.add_argument("--count", type=int, default=181, help="spiral directions")
    p.add_argument("--bmag", type=float, default=0.4)
    p.add_argument("--noise-mhz", type=float, default=30.0)
    p.add_argument("--top-n", type=int, default=32)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--hops-zeeman", type=int, default=30)
    p.add_argument("--hops-tensor", type=int, default=8)
    p.add_argument("--hops-full", type=int, default=6)
    p.add_argument("--window-schedule", default="1.5,0.6,0.25,0.1")
    p.add_argument("--sweep-points", type=int, default=15)
    p.add_argument("--local-maxfev", type=int, default=6000)
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--mcmc-length", type=int, default=4_000)
    p.add_argument("--mcmc-burn-in", type=int, default=1_000)
    p.add_argument("--bmax", type=float, default=5.0)
    p.add_argument("--deltab-mt", type=float, default=0.01)
    p.add_argument("--zefoz-radii", type=int, default=8)
    p.add_argument("--zefoz-directions", type=int, default=64)
    p.add_argument("--plotdata", action="store_true")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    import json

    from .errors import (
        InvalidParameterError,
        NonConvergenceError,
        UndefinedObjectiveError,
    )
    from .serialize import verify_file_digest

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        for declared in args.check_input:
            path, sep, digest = declared.partition("=")
            if not sep or not digest:
                raise InvalidParameterError(
                    f"--check-input expects PATH=SHA256, got {declared!r}"
                )
            verify_file_digest(path, digest)
        return args.func(args)
    except (InvalidParameterError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (NonConvergenceError, UndefinedObjectiveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NON_CONVERGENCE
    except Exception as exc:  # stage failure: anything unexpected
        print(f"stage failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE


if __name__ == "__main__":
    sys.exit(main())
