"""Command-line interface.

Subcommands: simulate (forward model + synthetic counts), fit (single
spectrum or joint polarization fit), polarscan (analyzer-angle sweep),
report (derived quantities table).  Exit codes: 0 success, 2 invalid
input, 3 fit did not converge, 4 no detectable signal in the data.

The default output directory is --out, then the EXSPEC_OUTDIR environment
variable, then the working directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .dataio import (
    ConfigError,
    CsvFormatError,
    RunManifest,
    atomic_write_text,
    load_config,
    read_spectrum_csv,
    write_manifest,
    write_spectrum_csv,
)
from .fitting import (
    DegenerateScanError,
    FitConfig,
    FitResult,
    LowContrastError,
    NoPeakError,
    fit_fluorescence,
    fit_transmission,
    joint_fit_polar,
)
from .lineshape import (
    EmitterParams,
    ModalCoupling,
    Spectrum,
    absorption_cross_section,
    detected_spectrum,
    enhancement_factor,
    linewidth_from_lifetime,
    optimal_dip_coupling,
    resonance_visibility,
    visibility,
)
from .polarization import AnalyzerScan, JonesField, analyzer_scan, crossed_pair_sum
from .synth import AcquisitionConfig, coherent_rate_check, simulate_counts, snr_estimate

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_NO_CONVERGENCE = 3
EXIT_NO_SIGNAL = 4


def _out_dir(args) -> str:
    out = args.out or os.environ.get("EXSPEC_OUTDIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _manifest_params(config) -> dict:
    params = dataclasses.asdict(config)
    params["grid"] = {
        "start_mhz": float(config.grid[0]),
        "stop_mhz": float(config.grid[-1]),
        "points": int(config.grid.size),
    }
    return params


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    acq = config.acquisition
    if args.seed is not None:
        acq = dataclasses.replace(acq, seed=args.seed)
    model = detected_spectrum(
        config.emitter, config.coupling, config.grid, saturation=args.saturation
    )
    noisy = simulate_counts(model, acq)
    model_path = os.path.join(out, "model.csv")
    noisy_path = os.path.join(out, "simulated.csv")
    meta = {
        "command": "simulate",
        "seed": acq.seed,
        "i_e_cps": config.coupling.i_e,
        "gamma_mhz": config.emitter.gamma,
    }
    write_spectrum_csv(model_path, model, metadata=meta)
    write_spectrum_csv(noisy_path, noisy, metadata=meta)
    manifest = RunManifest.create(
        command="simulate",
        parameters=_manifest_params(config),
        inputs=(os.path.abspath(args.config),),
        outputs=(model_path, noisy_path),
        seed=acq.seed,
        version=__version__,
    )
    write_manifest(os.path.join(out, "manifest.json"), manifest)
    print(f"wrote {model_path}, {noisy_path}")
    return EXIT_OK


def _result_table(result: FitResult) -> str:
    lines = [f"model: {result.model}"]
    for name in result.free:
        err = result.stderr(name)
        lines.append(f"  {name:16s} = {result.params[name]:.6g} +- {err:.3g}")
    for name, value in result.params.items():
        if name not in result.free:
            lines.append(f"  {name:16s} = {value:.6g} (fixed)")
    lines.append(f"  residual_rms    = {result.residual_rms:.6g}")
    lines.append(
        f"  iterations={result.iterations} converged={result.converged}"
        f" flags={','.join(result.flags) or '-'}"
    )
    return "\n".join(lines)


def _write_fit_record(out: str, result: FitResult, stem: str) -> str:
    record = {
        "model": result.model,
        "params": result.params,
        "free": list(result.free),
        "stderr": {k: result.stderr(k) for k in result.free},
        "residual_rms": result.residual_rms,
        "iterations": result.iterations,
        "converged": result.converged,
        "flags": list(result.flags),
        "message": result.message,
    }
    path = os.path.join(out, f"{stem}.json")
    atomic_write_text(path, json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def _parse_guess(text: str, name: str) -> JonesField:
    try:
        axis_deg, ell_deg = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(
            f"--{name} must be 'axis_deg,ellipticity_deg', got {text!r}"
        ) from None
    return JonesField.from_ellipse(math.radians(axis_deg), math.radians(ell_deg))


def _load_scan(paths: list[str], theta_override: list[float] | None) -> AnalyzerScan:
    """Assemble an AnalyzerScan from one multi-angle CSV or many per-angle
    CSVs; analyzer angles come from a theta_deg column, metadata, or the
    --theta override (one value per file)."""
    from .fitting import estimate_baseline

    spectra: list[Spectrum] = []
    thetas: list[float] = []
    for k, path in enumerate(paths):
        parsed = read_spectrum_csv(path)
        if parsed.theta_deg is not None and np.unique(parsed.theta_deg).size > 1:
            if len(paths) > 1:
                raise CsvFormatError(
                    f"{path}: multi-angle files cannot be combined with others"
                )
            for theta in np.unique(parsed.theta_deg):
                mask = parsed.theta_deg == theta
                spectra.append(
                    Spectrum(
                        detunings=parsed.detuning_mhz[mask],
                        values=parsed.intensity_cps[mask],
                        sigma=None
                        if parsed.sigma_cps is None
                        else parsed.sigma_cps[mask],
                    )
                )
                thetas.append(math.radians(float(theta)))
            break
        if theta_override is not None:
            if len(theta_override) != len(paths):
                raise ConfigError(
                    f"--theta needs {len(paths)} comma-separated values"
                )
            theta = theta_override[k]
        elif parsed.theta_deg is not None:
            theta = float(parsed.theta_deg[0])
        elif "theta_deg" in parsed.metadata:
            theta = float(parsed.metadata["theta_deg"])
        else:
            raise ConfigError(
                f"{path}: no analyzer angle (theta_deg column, metadata, or --theta)"
            )
        spectra.append(parsed.to_spectrum())
        thetas.append(math.radians(theta))
    baselines = np.array([estimate_baseline(sp)[0] for sp in spectra])
    return AnalyzerScan(
        thetas=np.asarray(thetas) % math.pi,
        spectra=tuple(spectra),
        i_e_vs_theta=baselines,
    )


def cmd_fit(args) -> int:
    out = _out_dir(args)
    cfg = FitConfig(max_iters=args.max_iters)
    if args.joint:
        if args.gamma_mhz is None:
            raise ConfigError("--gamma-mhz is required for a joint fit")
        scan = _load_scan(args.csv, args.theta)
        tip_guess = _parse_guess(args.tip_guess, "tip-guess")
        mol_guess = _parse_guess(args.mol_guess, "mol-guess")
        result = joint_fit_polar(
            scan,
            tip_guess,
            mol_guess,
            gamma=args.gamma_mhz,
            alpha=args.alpha,
            gamma0=args.gamma0_mhz,
            cfg=cfg,
        )
    else:
        if len(args.csv) != 1:
            raise ConfigError("single-spectrum fit takes exactly one CSV")
        parsed = read_spectrum_csv(args.csv[0])
        spec = parsed.to_spectrum()
        if args.mode == "fluorescence":
            result = fit_fluorescence(spec, cfg)
        else:
            if args.gamma_mhz is None:
                raise ConfigError("--gamma-mhz is required for a transmission fit")
            result = fit_transmission(
                spec,
                gamma=args.gamma_mhz,
                alpha=args.alpha,
                gamma0=args.gamma0_mhz,
                cfg=cfg,
            )
    print(_result_table(result))
    record_path = _write_fit_record(out, result, "fit_result")
    print(f"wrote {record_path}")
    if not result.converged:
        print(f"fit did not converge: {result.message}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_polarscan(args) -> int:
    config = load_config(args.config, need_polarization=True)
    out = _out_dir(args)
    pol = config.polarization
    thetas = pol.thetas()
    scan = analyzer_scan(
        config.emitter,
        config.coupling,
        pol.tip_field(),
        pol.mol_field(),
        thetas,
        config.grid,
        saturation=args.saturation,
    )
    acq = config.acquisition
    if args.seed is not None:
        acq = dataclasses.replace(acq, seed=args.seed)
    outputs = []
    vis_rows = []
    for k in range(len(scan)):
        theta_deg = math.degrees(scan.thetas[k])
        pair = crossed_pair_sum(
            config.emitter,
            config.coupling,
            pol.tip_field(),
            pol.mol_field(),
            float(scan.thetas[k]),
            config.grid,
            saturation=args.saturation,
        )
        noisy = simulate_counts(
            scan.spectra[k],
            dataclasses.replace(
                acq, seed=None if acq.seed is None else acq.seed + k
            ),
        )
        path = os.path.join(out, f"theta_{k:03d}.csv")
        meta = {
            "command": "polarscan",
            "theta_deg": f"{theta_deg:.6f}",
            "i_e_cps": f"{scan.i_e_vs_theta[k]:.17g}",
            "pair_sum_resonance_cps": f"{pair.values[np.argmin(np.abs(pair.detunings - config.emitter.nu21))]:.17g}",
        }
        write_spectrum_csv(path, noisy, metadata=meta, theta_deg=theta_deg)
        outputs.append(path)
        vis_rows.append(visibility(scan.spectra[k], scan.i_e_vs_theta[k]).values)
    matrix_path = os.path.join(out, "visibility_matrix.csv")
    header = "theta_deg," + ",".join(f"{nu:.17g}" for nu in config.grid)
    lines = [header]
    for k, row in enumerate(vis_rows):
        lines.append(
            f"{math.degrees(scan.thetas[k]):.17g},"
            + ",".join(f"{v:.17g}" for v in row)
        )
    atomic_write_text(matrix_path, "\n".join(lines) + "\n")
    outputs.append(matrix_path)
    manifest = RunManifest.create(
        command="polarscan",
        parameters=_manifest_params(config),
        inputs=(os.path.abspath(args.config),),
        outputs=tuple(outputs),
        seed=acq.seed,
        version=__version__,
    )
    write_manifest(os.path.join(out, "manifest.json"), manifest)
    print(f"wrote {len(outputs)} files to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows: list[tuple[str, str]] = []
    gamma0 = args.gamma0_mhz
    if args.lifetime_ns is not None:
        derived = linewidth_from_lifetime(args.lifetime_ns)
        rows.append(("radiative linewidth gamma0 (MHz)", f"{derived:.6g}"))
        if gamma0 is None:
            gamma0 = derived
    if args.wavelength_nm is not None:
        sigma = absorption_cross_section(args.wavelength_nm)
        rows.append(("peak absorption cross-section (m^2)", f"{sigma:.6g}"))
    emitter = None
    if args.gamma_mhz is not None:
        if gamma0 is None:
            raise ConfigError(
                "enhancement needs gamma0: give --gamma0-mhz or --lifetime-ns"
            )
        emitter = EmitterParams(
            nu21=0.0, gamma=args.gamma_mhz, gamma0=gamma0, alpha=args.alpha
        )
        rows.append(
            ("extinction budget gamma/(alpha*gamma0)", f"{enhancement_factor(emitter):.6g}")
        )
        c_opt, v_min = optimal_dip_coupling(emitter)
        rows.append(("deepest dip coupling C* (MHz)", f"{c_opt:.6g}"))
        rows.append(("deepest dip visibility", f"{v_min:.6g}"))
    if emitter is not None and args.c_mhz is not None and args.i_e_cps is not None:
        coupling = ModalCoupling(c_amp=args.c_mhz, psi=args.psi_rad, i_e=args.i_e_cps)
        rows.append(("resonance visibility", f"{resonance_visibility(emitter, coupling):.6g}"))
        acq = AcquisitionConfig(
            dwell=args.dwell_s, averages=args.averages, laser_rms=args.laser_rms
        )
        rows.append(("expected SNR", f"{snr_estimate(emitter, coupling, acq):.6g}"))
        rows.append(
            ("direct coherent rate (cps)", f"{coherent_rate_check(emitter, coupling):.6g}")
        )
    if not rows:
        raise ConfigError(
            "nothing to report: give --lifetime-ns, --wavelength-nm, or --gamma-mhz"
        )
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exspec",
        description="Extinction spectroscopy of a single emitter: simulate, fit, report.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="forward model plus synthetic counts")
    p_sim.add_argument("--config", required=True, help="INI run configuration")
    p_sim.add_argument("--out", default=None, help="output directory")
    p_sim.add_argument("--seed", type=int, default=None, help="override RNG seed")
    p_sim.add_argument(
        "--saturation", action="store_true", help="use the drive-dependent lineshape"
    )
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit one spectrum or a joint analyzer scan")
    p_fit.add_argument("csv", nargs="+", help="spectrum CSV file(s)")
    p_fit.add_argument(
        "--mode",
        choices=("transmission", "fluorescence"),
        default="transmission",
        help="single-spectrum model",
    )
    p_fit.add_argument("--joint", action="store_true", help="joint polarization fit")
    p_fit.add_argument("--gamma-mhz", type=float, default=None, help="fixed total linewidth")
    p_fit.add_argument("--gamma0-mhz", type=float, default=None, help="fixed radiative linewidth")
    p_fit.add_argument("--alpha", type=float, default=0.25, help="collected fraction")
    p_fit.add_argument(
        "--theta",
        type=lambda s: [float(v) for v in s.split(",")],
        default=None,
        help="per-file analyzer angles in degrees, comma separated",
    )
    p_fit.add_argument(
        "--tip-guess",
        default="0,5",
        help="excitation ellipse guess 'axis_deg,ellipticity_deg'",
    )
    p_fit.add_argument(
        "--mol-guess",
        default="20,-30",
        help="emitter ellipse guess 'axis_deg,ellipticity_deg'",
    )
    p_fit.add_argument("--max-iters", type=int, default=200, help="iteration cap")
    p_fit.add_argument("--out", default=None, help="output directory")
    p_fit.set_defaults(func=cmd_fit)

    p_pol = sub.add_parser("polarscan", help="analyzer-angle sweep of the spectrum")
    p_pol.add_argument("--config", required=True, help="INI run configuration")
    p_pol.add_argument("--out", default=None, help="output directory")
    p_pol.add_argument("--seed", type=int, default=None, help="override RNG seed")
    p_pol.add_argument(
        "--saturation", action="store_true", help="use the drive-dependent lineshape"
    )
    p_pol.set_defaults(func=cmd_polarscan)

    p_rep = sub.add_parser("report", help="derived quantities table")
    p_rep.add_argument("--lifetime-ns", type=float, default=None)
    p_rep.add_argument("--wavelength-nm", type=float, default=None)
    p_rep.add_argument("--gamma-mhz", type=float, default=None)
    p_rep.add_argument("--gamma0-mhz", type=float, default=None)
    p_rep.add_argument("--alpha", type=float, default=0.25)
    p_rep.add_argument("--c-mhz", type=float, default=None)
    p_rep.add_argument("--psi-rad", type=float, default=math.pi / 2)
    p_rep.add_argument("--i-e-cps", type=float, default=None)
    p_rep.add_argument("--dwell-s", type=float, default=0.01)
    p_rep.add_argument("--averages", type=int, default=20)
    p_rep.add_argument("--laser-rms", type=float, default=0.003)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CsvFormatError, FileNotFoundError, ValueError) as exc:
        # Signal-quality gates are reported separately from bad input.
        if isinstance(exc, (NoPeakError, LowContrastError)):
            print(f"no signal: {exc}", file=sys.stderr)
            return EXIT_NO_SIGNAL
        if isinstance(exc, DegenerateScanError):
            print(f"invalid input: {exc}", file=sys.stderr)
            return EXIT_BAD_INPUT
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
