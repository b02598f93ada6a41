"""
Command-line front end.

    wgmqed simulate --scenario fig2d --out runs/fig2d
    wgmqed simulate --config device.json --ports drop,add,int1 --out runs/custom
    wgmqed fit --data runs/fig2b/spectra.csv --port drop --out runs/fit
    wgmqed metrics --from runs/fit/fit.json --out runs/fit
    wgmqed compare --simulated runs/fig2b --reference measured.csv --rms 0.02

Exit codes: 0 success, 1 comparison outside tolerance or unexpected
failure, 2 invalid input, 3 fit did not converge, 4 file I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__, presets
from .fit import BackgroundModel, Spectrum, _line_mask, fit_background, fit_fano, read_spectrum_csv
from .lm import FitError, NumericalError
from .metrics import DomainError, metrics_from_linewidth, metrics_from_model
from .model import MHZ_IN_GHZ, THZ_IN_GHZ, ModelError, load_model
from .scenarios import (
    PRESETS,
    GridMismatchError,
    ScenarioError,
    Tolerance,
    compare_reference,
    custom_scenario,
    get_scenario,
    run_scenario,
)
from .solver import PortError

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_VALIDATION = 2
EXIT_FIT = 3
EXIT_IO = 4


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ScenarioError) and exc.cause is not None:
        return _exit_code(exc.cause)
    if isinstance(exc, (FitError, NumericalError)):
        return EXIT_FIT
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ModelError, PortError, GridMismatchError, DomainError, ValueError, KeyError,
                        json.JSONDecodeError)):
        return EXIT_VALIDATION
    return EXIT_FAIL


def _split(text: str | None) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()] if text else []


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# simulate

def cmd_simulate(args: argparse.Namespace) -> int:
    model = load_model(Path(args.config)) if args.config else None
    name = args.scenario or ("custom" if model is not None else None)
    if name is None:
        raise ModelError("give --scenario or --config")
    ports = _split(args.ports)
    if args.ports is not None and not ports:
        raise ModelError("no ports requested")
    post = _split(args.post)
    if name == "custom":
        if model is None:
            raise ModelError("the custom scenario needs --config")
        scenario = custom_scenario(model, ports or ("drop", "add", "transmission"), post)
    else:
        scenario = get_scenario(name)
        if ports:
            scenario = replace(scenario, ports=tuple(ports))
        if args.post is not None:
            scenario = replace(scenario, postprocess=tuple(post))
    manifest = run_scenario(scenario, args.out, model=model, workers=args.workers)
    print(f"{scenario.name}: wrote {len(manifest.files)} files to {args.out} "
          f"in {manifest.timings.get('total', 0.0):.2f} s")
    return EXIT_OK


# --------------------------------------------------------------------------
# fit

def _read_init(path: str | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ModelError("init file must hold a JSON object")
    unknown = set(doc) - {"origin_thz", "background", "line", "mask_ghz", "max_resonances", "cofit"}
    if unknown:
        raise ModelError(f"unknown init keys {sorted(unknown)}")
    return doc


def cmd_fit(args: argparse.Namespace) -> int:
    init = _read_init(args.init)
    origin = args.origin if args.origin is not None else init.get("origin_thz")
    spectrum = read_spectrum_csv(Path(args.data), origin=origin, port=args.port, step=args.step)
    line = init.get("line")
    guess = None
    if line is not None:
        guess = ((line["frequency_thz"] - spectrum.origin) * THZ_IN_GHZ, line["linewidth_mhz"] * MHZ_IN_GHZ,
                 line.get("amplitude", 0.3), line.get("phase_rad", math.pi / 2))
    if "background" in init:
        background = BackgroundModel.from_dict(init["background"])
    else:
        if "mask_ghz" in init:
            mask = tuple(init["mask_ghz"])
        elif guess is not None:
            mask = (guess[0] - 5 * guess[1], guess[0] + 5 * guess[1])
        else:
            mask = _line_mask(spectrum, 0.1)
        background = fit_background(spectrum, max_resonances=int(init.get("max_resonances", 2)), mask=mask)
    cofit = init.get("cofit", args.cofit)
    result = fit_fano(spectrum, background, init=guess, cofit_background=False if cofit == "none" else cofit)
    out = _out_dir(args.out)
    result.to_json(out / "fit.json")
    print(f"line at {result.frequency:.9f} THz, linewidth {result.linewidth:.4g} "
          f"+/- {result.errors['linewidth_mhz']:.2g} MHz, A = {result.amplitude:.3g}, phi = {result.phase:.3g} rad")
    return EXIT_OK


# --------------------------------------------------------------------------
# metrics

def _linewidth_from_fit(doc: dict, step: int | None) -> float:
    if "parameters" in doc:
        return float(doc["parameters"]["linewidth_mhz"])
    steps = doc.get("steps")
    if not steps:
        raise ModelError("fit file holds no fitted line")
    if step is None:
        entry = max(steps, key=lambda s: s["parameters"]["linewidth_mhz"])
    else:
        matches = [s for s in steps if s["step"] == step]
        if not matches:
            raise ModelError(f"no fitted step {step}")
        entry = matches[0]
    return float(entry["parameters"]["linewidth_mhz"])


def cmd_metrics(args: argparse.Namespace) -> int:
    source = Path(args.source)
    doc = json.loads(source.read_text())
    if isinstance(doc, dict) and "mode_pairs" in doc:
        result = metrics_from_model(load_model(doc), args.emitter, fsr=args.fsr)
    elif isinstance(doc, dict) and ("parameters" in doc or "steps" in doc):
        gamma = _linewidth_from_fit(doc, args.step)
        result = metrics_from_linewidth(gamma, args.free_linewidth, args.branching,
                                        g=args.coupling, kappa=args.kappa)
    else:
        raise ModelError(f"{source}: neither a fit result nor a model configuration")
    out = _out_dir(args.out)
    result.to_json(out / "metrics.json")
    print(f"F = {result.F:.4g}, alpha' = {result.alpha_enhanced:.4g}, beta = {result.beta:.4g}")
    return EXIT_OK


# --------------------------------------------------------------------------
# compare

def cmd_compare(args: argparse.Namespace) -> int:
    tol = Tolerance(rms=args.rms, max=args.max)
    report = compare_reference(Path(args.simulated), Path(args.reference), tol, interpolate=args.interpolate)
    if args.out:
        report.to_json(_out_dir(args.out) / "comparison.json")
    for d in report.deviations:
        status = "PASS" if d.passed else "FAIL"
        print(f"{status} step {d.step} {d.port}: rms {d.rms:.3g}, max {d.max_abs:.3g} "
              f"at {d.at_frequency:.9f} THz")
    return EXIT_OK if report.passed else EXIT_FAIL


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wgmqed", description="Emitters in a waveguide-coupled microdisc.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a preset or a custom configuration")
    p.add_argument("--config", help="model configuration (JSON)")
    p.add_argument("--scenario", help=f"preset name ({', '.join(PRESETS)}) or custom")
    p.add_argument("--ports", help="comma-separated ports, e.g. drop,add,transmission,int1,int2")
    p.add_argument("--post", help="comma-separated post-processing (fit, metrics, waterfall)")
    p.add_argument("--workers", type=int, help="worker processes (default: WGMQED_WORKERS or all CPUs)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a complex Fano line to a measured or simulated spectrum")
    p.add_argument("--data", required=True, help="CSV with frequency_THz (or detuning_GHz) and intensity")
    p.add_argument("--init", help="JSON with initial line, background, mask or origin")
    p.add_argument("--port", help="port to use when the CSV holds several")
    p.add_argument("--step", type=int, help="sweep step to use when the CSV holds several")
    p.add_argument("--origin", type=float, help="detuning origin [THz]")
    p.add_argument("--cofit", choices=("none", "linear", "all"), default="linear",
                   help="background parameters refined with the line")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("metrics", help="figures of merit from a fit result or a configuration")
    p.add_argument("--from", dest="source", required=True, help="fit.json or model configuration")
    p.add_argument("--emitter", type=int, default=0)
    p.add_argument("--step", type=int, help="fitted step of a scenario fit.json (default: broadest line)")
    p.add_argument("--fsr", type=float, default=None, help="free spectral range [THz]")
    p.add_argument("--free-linewidth", type=float, default=presets.FREE_LINEWIDTH, help="gamma0 [MHz]")
    p.add_argument("--branching", type=float, default=presets.BRANCHING, help="alpha0")
    p.add_argument("--coupling", type=float, help="g [MHz], adds C and J")
    p.add_argument("--kappa", type=float, help="cavity linewidth [GHz], with --coupling")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("compare", help="compare a simulated bundle with reference spectra")
    p.add_argument("--simulated", required=True, help="bundle directory or spectra CSV")
    p.add_argument("--reference", required=True, help="reference CSV")
    p.add_argument("--rms", type=float, default=0.02, help="RMS intensity tolerance")
    p.add_argument("--max", type=float, default=None, help="maximum intensity tolerance")
    p.add_argument("--interpolate", action="store_true", help="interpolate onto the reference grid")
    p.add_argument("--out", help="directory for comparison.json")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        code = _exit_code(exc)
        print(f"wgmqed {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
