"""Command-line workflows: JSON config in, CSV/JSON out.

Exit codes: 0 success, 1 numerical non-convergence (or a failing
regression suite), 2 invalid input.  Outputs depend only on the config
and seed, so re-runs are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import cloudfit as CF
from . import efield as EF
from . import iontransport as IT
from . import magtrap as MT
from . import reproduce as RP
from . import rydstruct as RS
from . import spectra as SP
from . import starkmap as SM
from .errors import DomainError, NumericalError

# ---------------------------------------------------------------------------
# helpers


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DomainError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise DomainError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise DomainError("config must be a JSON object")
    return cfg


def _sequence(spec, default):
    """A list of numbers or {"start", "stop", "num"}."""
    spec = default if spec is None else spec
    if isinstance(spec, dict):
        try:
            return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        except KeyError as exc:
            raise DomainError(f"range spec missing {exc}") from None
    return np.asarray(spec, dtype=float)


def _level(d) -> RS.RydbergLevel:
    try:
        return RS.RydbergLevel(int(d["n"]), int(d["l"]), float(d["j"]), float(d.get("mj", 0.5)))
    except KeyError as exc:
        raise DomainError(f"level config missing {exc}") from None


def _trap(d):
    if d is None:
        return None
    return MT.IoffePritchardTrap.from_dict(d)


def _seed(args, cfg, required=True) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        if required:
            raise DomainError("this command is stochastic: pass --seed or set 'seed' in the config")
        return 0
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise DomainError("seed must be an unsigned 64-bit integer")
    return seed


def _calibration(name):
    if name in (None, "theory"):
        return EF.theory_calibration()
    if name == "measured":
        return EF.measured_calibration()
    if isinstance(name, (int, float)):
        return EF.voltage_calibration(float(name), name="custom")
    raise DomainError("calibration must be 'theory', 'measured' or a field-per-volt number")


def _charges(cfg) -> EF.ChargeSet:
    if "charges" in cfg:
        c = cfg["charges"]
        return EF.ChargeSet.from_json(json.dumps(c)) if isinstance(c, dict) else EF.ChargeSet(tuple(c))
    if "charges_file" in cfg:
        try:
            return EF.ChargeSet.from_json(Path(cfg["charges_file"]).read_text())
        except OSError as exc:
            raise DomainError(f"cannot read charges: {exc}") from None
    preset = cfg.get("preset", "constant_BH")
    cal = _calibration(cfg.get("calibration"))
    return cal.charges(preset, float(cfg.get("volts", 1.0)))


def svg_plot(path: Path, series, xlabel: str, ylabel: str, width=480, height=320) -> None:
    """Minimal line plot as SVG; series is a list of (x, y) arrays."""
    xs = np.concatenate([np.asarray(s[0], float) for s in series])
    ys = np.concatenate([np.asarray(s[1], float) for s in series])
    x0, x1 = float(np.nanmin(xs)), float(np.nanmax(xs))
    y0, y1 = float(np.nanmin(ys)), float(np.nanmax(ys))
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0
    m = 40

    def sx(v):
        return m + (v - x0) / (x1 - x0) * (width - 2 * m)

    def sy(v):
        return height - m - (v - y0) / (y1 - y0) * (height - 2 * m)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" text-anchor="middle">{ylabel}</text>',
        f'<text x="{m}" y="{m - 6}" font-size="10">[{x0:.4g}, {x1:.4g}] x [{y0:.4g}, {y1:.4g}]</text>',
    ]
    for x, y in series:
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y) if math.isfinite(a) and math.isfinite(b))
        parts.append(f'<polyline fill="none" stroke="black" stroke-width="1" points="{pts}"/>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_stark_map(args, cfg, out: Path) -> int:
    basis = SM.build_basis(int(cfg.get("n", 43)), int(cfg.get("spread", SM.DEFAULT_SPREAD)), float(cfg.get("mj", 0.5)))
    level = _level(cfg["level"]) if "level" in cfg else RS.RydbergLevel(int(cfg.get("n", 43)), 0, 0.5, basis.mj)
    fields = _sequence(cfg.get("fields_V_per_cm"), {"start": 0.0, "stop": 0.5, "num": 11})
    smap = SM.compute_stark_map(basis, fields, level)
    smap.to_csv(out / "stark_map.csv")
    report = {"reference": level.label, "basis_size": len(basis), "metadata": smap.metadata}
    if len(fields) >= 7:
        fit_range = tuple(cfg.get("fit_range", (0.0, float(fields[-1]))))
        pol = SM.polarizability(basis, level, fit_range, samples=len(fields))
        report["alpha_half_MHz_per_V_per_cm_sq"] = pol.alpha_half
        report["alpha_MHz_per_V_per_cm_sq"] = pol.alpha
        report["fit_range_V_per_cm"] = list(pol.fit_range)
        report["quadratic_residual"] = pol.residual
        report["linear_term_MHz_per_V_per_cm"] = pol.linear_term
        print(f"alpha/2({level.label}) = {pol.alpha_half:.4f} MHz/(V/cm)^2")
    else:
        report["energies_MHz"] = smap.energies[:, 0].tolist() if len(fields) == 1 else smap.energies.tolist()
    write_json(out / "stark_report.json", report)
    if args.plot:
        idx = basis.index(level)
        svg_plot(out / "stark_map.svg", [(fields, smap.energies[idx])], "field (V/cm)", "shift (MHz)")
    return 0


def cmd_field(args, cfg, out: Path) -> int:
    geometry = EF.PlateGeometry.from_dict(cfg["geometry"]) if "geometry" in cfg else EF.DEFAULT_GEOMETRY
    if args.action == "solve":
        target = EF.FieldTarget.from_dict(cfg.get("target", {}))
        res = EF.solve_charges(geometry, target)
        (out / "charges.json").write_text(res.charges.to_json() + "\n")
        write_json(out / "solve_report.json", {"residuals": res.residuals, "rank": res.rank, "singular_values": res.singular_values})
        print(f"solved {len(target.components)} components, rank {res.rank}")
        return 0
    if args.action == "preset":
        name = cfg.get("preset", "constant_BH")
        cal = _calibration(cfg.get("calibration"))
        volts = float(cfg.get("volts", 1.0))
        charges = cal.charges(name, volts)
        tc = EF.taylor_coefficients(geometry, charges, 2)
        (out / "charges.json").write_text(charges.to_json() + "\n")
        write_json(
            out / "preset_report.json",
            {
                "preset": name,
                "volts": volts,
                "calibration": cal.name,
                "field_V_per_cm": tc.field,
                "gradient_V_per_cm2": tc.gradient,
                "curvature_V_per_cm3": tc.curvature,
                "volts_for_1_V_per_cm": cal.volts_for_field(1.0),
            },
        )
        return 0
    # eval
    charges = _charges(cfg)
    if "points_mm" in cfg:
        pts = np.atleast_2d(np.asarray(cfg["points_mm"], dtype=float))
        if pts.shape[1] != 3:
            raise DomainError("points_mm must be a list of [x, y, z]")
    else:
        pts = EF.axis_points(cfg.get("axis", "x"), float(cfg.get("half_range_mm", 10.0)), int(cfg.get("samples", 41)))
    EF.field_map_csv(out / "field.csv", geometry, charges, pts)
    if args.plot:
        e = np.linalg.norm(EF.field_at(geometry, charges, pts), axis=1)
        s = np.linalg.norm(pts, axis=1) * np.sign(pts.sum(axis=1))
        svg_plot(out / "field.svg", [(s, e)], "position (mm)", "|E| (V/cm)")
    return 0


def cmd_trajectory(args, cfg, out: Path) -> int:
    part = cfg.get("particle", {})
    particle = IT.ChargedParticle(
        tuple(part.get("position_mm", (0.0, 0.0, 0.0))),
        tuple(part.get("velocity_m_per_s", (0.0, 0.0, 0.0))),
        float(part.get("charge_e", 1.0)),
    )
    if "uniform" in cfg:
        u = cfg["uniform"]
        sources = IT.FieldSources.uniform(u.get("E_V_per_cm", (0, 0, 0)), u.get("B_G", (0, 0, 0)))
    else:
        trap = _trap(cfg.get("trap", RP.excitation_trap().to_dict()))
        sources = IT.ionization_sources(
            float(cfg.get("plate_volts", 1000.0)),
            float(cfg.get("cage_volts", EF.CAGE_REFERENCE_VOLTAGE)),
            _calibration(cfg.get("calibration")),
            trap,
        )
    aperture = {"J": IT.MCP_J, "I": IT.MCP_I, None: None, "none": None}.get(cfg.get("aperture", "J"), "bad")
    if aperture == "bad":
        raise DomainError("aperture must be 'J', 'I' or 'none'")
    tr = IT.integrate(particle, sources, float(cfg.get("dt_s", 1e-9)), float(cfg.get("t_max_s", 20e-6)), aperture)
    tr.to_csv(out / "trajectory.csv")
    report = {"reason": tr.reason, "flight_time_us": tr.flight_time * 1e6, "final_position_mm": tr.final_position}
    if aperture is not None:
        d = IT.transverse_drift(tr, aperture)
        report.update({"hit": d.hit, "offset_mm": d.offset_mm, "offset_yz_mm": d.offset_vector, "status": d.reason})
    report["energy_audit"] = IT.energy_audit(tr, sources)
    write_json(out / "hit_report.json", report)
    print(f"{tr.reason}: t = {tr.flight_time * 1e6:.3f} us, offset = {report.get('offset_mm', float('nan')):.4g} mm")
    if args.plot:
        svg_plot(out / "trajectory.svg", [(tr.positions[:, 0], tr.positions[:, 1])], "x (mm)", "y (mm)")
    return 0


def _scheme(cfg) -> SP.ExcitationScheme:
    base = RP.excitation_scheme(float(cfg.get("alpha_half", RP.ALPHA_HALF_REFERENCE)))
    red = cfg.get("red")
    blue = cfg.get("blue")
    mk = lambda d, dflt: SP.GaussianBeam(
        float(d.get("wavelength_nm", dflt.wavelength_nm)),
        float(d.get("power_W", dflt.power_W)),
        float(d.get("waist_um", dflt.waist_um)),
        d.get("polarization", dflt.polarization),
    )
    return SP.ExcitationScheme(
        mk(red, base.red) if red else base.red,
        mk(blue, base.blue) if blue else base.blue,
        float(cfg.get("intermediate_detuning_MHz", base.detuning_MHz)),
        linewidth_MHz=float(cfg.get("linewidth_MHz", base.linewidth_MHz)),
        alpha_half=base.alpha_half,
    )


def cmd_spectrum(args, cfg, out: Path) -> int:
    if args.action == "synth":
        seed = _seed(args, cfg)
        trap = _trap(cfg.get("trap", RP.excitation_trap().to_dict()))
        det = _sequence(cfg.get("detuning_MHz"), {"start": -45.0, "stop": -25.0, "num": 401})
        sp = SP.synthesize_spectrum(
            _scheme(cfg),
            trap,
            float(cfg.get("temperature_K", 15e-6)),
            int(cfg.get("atom_count", 100_000)),
            float(cfg.get("electric_field_V_per_cm", 2.0)),
            seed=seed,
            detunings=det,
            samples=int(cfg.get("samples", 100_000)),
            noise=float(cfg.get("noise", 0.0)),
        )
        sp.to_csv(out / "spectrum.csv")
        write_json(out / "spectrum_meta.json", sp.metadata)
        if args.plot:
            svg_plot(out / "spectrum.svg", [(sp.detuning, sp.signal)], "detuning (MHz)", "signal")
        return 0
    if args.action == "fit":
        if "spectrum" not in cfg:
            raise DomainError("fit config needs 'spectrum' (path to a spectrum CSV)")
        sp = SP.Spectrum.from_csv(cfg["spectrum"])
        window = cfg.get("window")
        if cfg.get("mode", "two") == "two":
            guess = cfg.get("guess_MHz")
            if guess is None:
                k = int(np.argmax(sp.signal))
                guess = (float(sp.detuning[k]) - 3.0, float(sp.detuning[k]))
            left, right = SP.fit_two_peaks(sp, float(guess[0]), float(guess[1]), window)
            report = {"left": left.to_dict(), "right": right.to_dict(), "separation_MHz": right.center - left.center}
            print(f"peaks at {left.center:.3f} and {right.center:.3f} MHz, FWHM {left.width:.3f} / {right.width:.3f} MHz")
        else:
            fit = SP.fit_gaussian_peak(sp, window)
            report = {"peak": fit.to_dict()}
            print(f"peak at {fit.center:.3f} MHz, FWHM {fit.width:.3f} MHz")
        write_json(out / "fit.json", report)
        return 0
    # starkscan
    alpha = float(cfg.get("alpha_half", RP.ALPHA_HALF_REFERENCE))
    if "index" in cfg:
        try:
            idx_path = Path(cfg["index"])
            idx = json.loads(idx_path.read_text())
            spectra = [SP.Spectrum.from_csv(idx_path.parent / name) for name in idx["spectra"]]
            scan = SP.StarkScan(idx["voltages_V"], spectra)
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise DomainError(f"bad Stark-scan index: {exc}") from None
    else:
        syn = cfg.get("synthetic", {})
        seed = _seed(args, cfg, required=float(syn.get("noise", 0.0)) > 0)
        volts = _sequence(syn.get("voltages_V"), {"start": -6.0, "stop": 4.0, "num": 11})
        if "offset_field_V_per_cm" in syn:
            offset = syn["offset_field_V_per_cm"]
        else:
            cage = EF.cage_field_model(float(syn.get("cage_volts", EF.CAGE_REFERENCE_VOLTAGE)))
            offset = EF.taylor_coefficients(EF.DEFAULT_GEOMETRY, cage, 0).field
        scan = SP.synthesize_stark_scan(
            volts,
            float(syn.get("field_per_volt", EF.MEASURED_FIELD_PER_VOLT)),
            offset,
            alpha,
            noise=float(syn.get("noise", 0.0)),
            seed=seed,
        )
        names = []
        for i, s in enumerate(scan.spectra):
            name = f"scan_{i:03d}.csv"
            s.to_csv(out / name)
            names.append(name)
        (out / "scan_index.json").write_text(scan.to_json_index(names) + "\n")
    res = SP.stark_scan_analysis(scan, alpha, cfg.get("method", "gauss"), cfg.get("window"))
    write_json(out / "starkscan.json", res.to_dict())
    print(f"vertex {res.vertex_V:.4f} V, {res.volts_per_field:.3f} V per V/cm, offset {res.offset_field:.4f} V/cm")
    if args.plot:
        svg_plot(out / "starkscan.svg", [(scan.voltages, scan.fitted_centers())], "voltage (V)", "line center (MHz)")
    return 0


def cmd_cloud(args, cfg, out: Path) -> int:
    if args.action == "synth":
        seed = _seed(args, cfg, required=float(cfg.get("noise", 0.01)) > 0)
        if "fraction" in cfg:
            T, nt, nb = CF.ideal_gas_scenario(
                float(cfg["fraction"]), float(cfg.get("total_number", 4.6e5)), float(cfg.get("critical_temperature_K", 400e-9))
            )
        else:
            T = float(cfg.get("temperature_K", 400e-9))
            nt = float(cfg.get("thermal_number", 4.6e5))
            nb = float(cfg.get("condensate_number", 0.0))
        img = CF.synthesize_image(
            T,
            nt,
            nb,
            tuple(cfg.get("trap_Hz", (250.0, 18.0))),
            float(cfg.get("tof_ms", 21.0)),
            float(cfg.get("noise", 0.01)),
            seed,
            float(cfg.get("pitch_um", 6.0)),
            tuple(cfg.get("shape", (200, 200))),
        )
        name = "image.csv" if cfg.get("format", "csv") == "csv" else "image.bin"
        img.save(out / name)
        print(f"wrote {name}: T = {T * 1e9:.1f} nK, N_th = {nt:.4g}, N_BEC = {nb:.4g}")
        return 0
    if "image" not in cfg:
        raise DomainError("analyze config needs 'image' (path to an image file)")
    img = CF.AbsorptionImage.load(cfg["image"])
    trap = cfg.get("trap_Hz", (250.0, 18.0))
    res = CF.analyze_bimodal(
        img,
        tuple(trap) if trap else None,
        float(cfg.get("exclusion", CF.DEFAULT_EXCLUSION)),
        saturation_correction=float(cfg.get("saturation_correction", 1.0)),
    )
    write_json(out / "bimodal.json", res.to_dict())
    print(f"condensate fraction {res.condensate_fraction:.4f}, T = {res.temperature_nK:.1f} nK, N = {res.total_number:.4g}")
    if args.plot:
        x, _ = img.coordinates()
        row = img.od.shape[0] // 2
        svg_plot(out / "cloud_cut.svg", [(x[row], img.od[row])], "x (um)", "optical density")
    return 0


def cmd_reproduce(args, cfg, out: Path) -> int:
    only = cfg.get("criteria")
    if args.only:
        only = [int(v) for v in args.only.split(",")]
    for k in only or []:
        if k not in RP.CRITERIA:
            raise DomainError(f"unknown criterion {k}")
    checks = RP.run_all(only)
    print(RP.table(checks))
    write_json(
        out / "reproduce.json",
        [{"criterion": c.number, "title": c.title, "passed": c.passed, "values": c.values} for c in checks],
    )
    return 0 if all(c.passed for c in checks) else 1


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (see docs/config.md)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed for stochastic steps")
    common.add_argument("--plot", action="store_true", help="also write simple SVG plots")

    p = argparse.ArgumentParser(prog="rydbec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("stark-map", parents=[common], help="Stark map and polarizability")
    f = sub.add_parser("field", parents=[common], help="plate charges and fields")
    f.add_argument("action", choices=("solve", "eval", "preset"))
    sub.add_parser("trajectory", parents=[common], help="ion trajectory to the MCP")
    s = sub.add_parser("spectrum", parents=[common], help="excitation spectra")
    s.add_argument("action", choices=("synth", "fit", "starkscan"))
    c = sub.add_parser("cloud", parents=[common], help="absorption-image analysis")
    c.add_argument("action", choices=("analyze", "synth"))
    r = sub.add_parser("reproduce", parents=[common], help="run the regression suite")
    r.add_argument("--only", help="comma-separated criterion numbers")
    return p


COMMANDS = {
    "stark-map": cmd_stark_map,
    "field": cmd_field,
    "trajectory": cmd_trajectory,
    "spectrum": cmd_spectrum,
    "cloud": cmd_cloud,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        diag = getattr(exc, "diagnostics", {})
        print(f"numerical failure: {exc} {json.dumps(_clean(diag), sort_keys=True) if diag else ''}".rstrip(), file=sys.stderr)
        return 1
    except (TypeError, ValueError) as exc:
        # malformed config values (wrong types, bad numbers)
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
