"""
Named reproduction scenarios, parameter sweeps and output bundles.

A scenario picks a base model, sweeps one axis (laser frequency, cavity
detuning or Stark voltage) and asks for optional post-processing (line fits,
metrics, waterfall tracking).  :func:`run_scenario` writes a bundle::

    <out>/spectra.csv      step, sweep value, frequency, port, amplitude, intensity
    <out>/fit.json         per-step Fano fits and/or waterfall tracks
    <out>/metrics.json     figures of merit and per-step line signals
    <out>/tables/*.csv     plot-ready derived tables
    <out>/scenario.json    the scenario and its base model, enough to rerun it
    <out>/manifest.json    config hash, tool version, checksums, timings

Every file except the manifest's timing block is a pure function of the
scenario and model, whatever the number of worker processes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import __version__, presets
from .fit import FanoFitResult, Spectrum, _round_floats, crossing_point, fit_background, fit_fano, track_waterfall
from .lm import lm_minimize
from .metrics import confocal_fluorescence, fluorescence_scaling, metrics_from_linewidth, metrics_from_model
from .model import (
    MHZ_IN_GHZ,
    THZ_IN_GHZ,
    SystemModel,
    ValidationError,
    apply_stark,
    model_to_dict,
    resonator_figures,
)
from .solver import (
    PortError,
    PortSpectra,
    _fundamental,
    at_cavity_detuning,
    canonical_port,
    effective_emitter_response,
    port_spectrum,
)

AXES = ("laser-frequency", "cavity-detuning", "stark-voltage")
POSTPROCESS = ("fit", "metrics", "waterfall")
WORKERS_ENV = "WGMQED_WORKERS"
DIGITS = 12


class ScenarioError(RuntimeError):
    """A downstream failure while running a scenario; ``cause`` is the original error."""

    def __init__(self, scenario: str, message: str, cause: BaseException | None = None, step: int | None = None):
        where = f"scenario {scenario!r}" + (f", step {step}" if step is not None else "")
        super().__init__(f"{where}: {message}")
        self.scenario = scenario
        self.step = step
        self.cause = cause


class GridMismatchError(ValueError):
    """Simulated and reference spectra do not share a frequency grid."""


# --------------------------------------------------------------------------
# base models

BASE_MODELS: dict[str, Callable[[], SystemModel]] = {
    "resonator": lambda: presets.bare_model(),
    "resonator-extended": lambda: presets.bare_model(extended=True),
    "m1": lambda: presets.m1_model(),
    "m1-extended": lambda: presets.m1_model(extended=True),
    "two-molecule": lambda: presets.two_molecule_model(phase_difference=presets.PHASE_DIFFERENCE),
    "stark": lambda: presets.stark_sweep_model(),
    "identical-pair": lambda: presets.identical_pair_model(0.99, math.pi / 2),
}


def base_model(name: str) -> SystemModel:
    try:
        return BASE_MODELS[name]()
    except KeyError:
        raise ValidationError(f"unknown base model {name!r}; choose from {', '.join(BASE_MODELS)}") from None


# --------------------------------------------------------------------------
# scenario definition

def _increasing(values: Sequence[float], what: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if not out:
        raise ValidationError(f"{what} is empty")
    if not all(math.isfinite(v) for v in out):
        raise ValidationError(f"{what} has non-finite values")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ValidationError(f"{what} must be strictly increasing")
    return out


@dataclass(frozen=True)
class Scenario:
    """One simulation recipe.

    Parameters
    ----------
    name : str
    base : str
        Key of :data:`BASE_MODELS`, or ``"custom"`` when the model is passed
        to :func:`run_scenario` directly.
    axis : {"laser-frequency", "cavity-detuning", "stark-voltage"}
    grid : sequence of float
        Laser detuning from the drive origin [GHz] for the laser axis;
        otherwise the sweep values (emitter minus cavity [GHz], or bias [V]).
    ports : sequence of str
        Output ports to record.
    postprocess : sequence of {"fit", "metrics", "waterfall"}
    scan : sequence of float
        Laser detuning grid [GHz] simulated at each sweep step (sweep axes only).
    fit_port : str
        Port used for line fits and waterfall tracking.
    fsr : float, optional
        Free spectral range [THz] for finesse and Q.
    """

    name: str
    base: str
    axis: str = "laser-frequency"
    grid: tuple[float, ...] = (0.0,)
    ports: tuple[str, ...] = ("drop", "add", "transmission")
    postprocess: tuple[str, ...] = ()
    scan: tuple[float, ...] = ()
    fit_port: str = "drop"
    fsr: float | None = None
    description: str = ""

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValidationError(f"unknown sweep axis {self.axis!r}; choose from {', '.join(AXES)}")
        if self.base != "custom" and self.base not in BASE_MODELS:
            raise ValidationError(f"unknown base model {self.base!r}")
        object.__setattr__(self, "grid", _increasing(self.grid, "grid"))
        if not self.ports:
            raise ValidationError("no ports requested")
        try:
            ports = tuple(dict.fromkeys(canonical_port(p) for p in self.ports))
            fit_port = canonical_port(self.fit_port)
        except PortError as exc:
            raise ValidationError(str(exc.args[0]) if exc.args else "unknown port") from None
        object.__setattr__(self, "ports", ports)
        object.__setattr__(self, "fit_port", fit_port)
        post = tuple(self.postprocess)
        unknown = set(post) - set(POSTPROCESS)
        if unknown:
            raise ValidationError(f"unknown post-processing {sorted(unknown)}; choose from {', '.join(POSTPROCESS)}")
        object.__setattr__(self, "postprocess", tuple(p for p in POSTPROCESS if p in post))
        if self.axis == "laser-frequency":
            object.__setattr__(self, "scan", ())
        else:
            object.__setattr__(self, "scan", _increasing(self.scan, "scan"))
        if ("fit" in post or "waterfall" in post) and fit_port not in ports:
            raise ValidationError(f"fit port {fit_port!r} is not among the requested ports")
        if "waterfall" in post and self.axis == "laser-frequency":
            raise ValidationError("waterfall tracking needs a sweep axis")
        if self.fsr is not None and not self.fsr > 0:
            raise ValidationError("fsr must be positive")

    @property
    def n_steps(self) -> int:
        return 1 if self.axis == "laser-frequency" else len(self.grid)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base": self.base,
            "axis": self.axis,
            "grid": list(self.grid),
            "ports": list(self.ports),
            "postprocess": list(self.postprocess),
            "scan": list(self.scan),
            "fit_port": self.fit_port,
            "fsr": self.fsr,
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Scenario":
        fields = ("name", "base", "axis", "grid", "ports", "postprocess", "scan", "fit_port", "fsr", "description")
        extra = set(doc) - set(fields)
        if extra:
            raise ValidationError(f"unknown scenario fields {sorted(extra)}")
        return cls(**{k: doc[k] for k in fields if k in doc})


def _span(lo: float, hi: float, n: int) -> tuple[float, ...]:
    return tuple(np.linspace(lo, hi, n).tolist())


def _presets() -> dict[str, Scenario]:
    kappa = presets.RING_LINEWIDTH
    fsr = presets.RING_FSR
    return {
        "fig1c": Scenario(
            "fig1c", "resonator-extended", grid=_span(-150, 150, 1501),
            ports=("transmission", "drop", "add"), postprocess=("metrics",), fsr=fsr,
            description="bare resonator at the three waveguide ports"),
        "fig2a": Scenario(
            "fig2a", "m1", grid=_span(-60, 60, 6001), ports=("drop", "add"),
            postprocess=("fit", "metrics"), fsr=fsr,
            description="M1 on double resonance: dip at the drop port, peak at the add port"),
        "fig2b": Scenario(
            "fig2b", "m1", grid=_span(-1, 1, 1001), ports=("transmission", "int1", "int2", "drop"),
            postprocess=("fit", "metrics"), fsr=fsr,
            description="close-up of M1 in transmission and at the interferometer ports"),
        "fig2c": Scenario(
            "fig2c", "m1-extended", axis="cavity-detuning", grid=(-40.0, 0.0, 40.0),
            scan=_span(-2, 2, 801), ports=("drop",), postprocess=("fit", "metrics"), fsr=fsr,
            description="M1 lines at three cavity detunings with complex Fano fits"),
        "fig2d": Scenario(
            "fig2d", "m1-extended", axis="cavity-detuning", grid=_span(-8 * kappa, 8 * kappa, 33),
            scan=_span(-2, 2, 801), ports=("drop",), postprocess=("fit", "metrics"), fsr=fsr,
            description="fitted M1 linewidth against cavity detuning, model curves and fluorescence"),
        "fig3a": Scenario(
            "fig3a", "stark", axis="stark-voltage", grid=tuple(np.arange(-160.0, 0.5, 10.0).tolist()),
            scan=_span(-2, 2, 1001), ports=("drop",), postprocess=("waterfall", "metrics"), fsr=fsr,
            description="Stark waterfall of M1 and M2 crossing near -110 V"),
        "fig3b": Scenario(
            "fig3b", "stark", axis="stark-voltage", grid=(-150.0, -110.0),
            scan=_span(-1, 1, 1001), ports=("drop",), postprocess=("metrics",), fsr=fsr,
            description="drop-port spectra with M1 and M2 apart and together"),
        "fig3c": Scenario(
            "fig3c", "stark", axis="stark-voltage", grid=(-150.0, -110.0),
            scan=_span(-1, 1, 1001), ports=("int1",), postprocess=("metrics",), fsr=fsr,
            description="interferometer port 1 with M1 and M2 apart and together"),
        "fig3ef": Scenario(
            "fig3ef", "identical-pair", grid=_span(-1, 1, 1001), ports=("drop", "int1"),
            postprocess=("metrics",), fsr=fsr,
            description="two identical emitters with opposite back-scattering phases"),
    }


PRESETS: dict[str, Scenario] = _presets()


def get_scenario(name: str) -> Scenario:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown scenario {name!r}; choose from {', '.join(PRESETS)} or custom") from None


def custom_scenario(model: SystemModel, ports: Sequence[str] = ("drop", "add", "transmission"),
                    postprocess: Sequence[str] = ()) -> Scenario:
    """Laser scan over the model's own drive grid."""
    return Scenario("custom", "custom", grid=tuple(model.drive.detuning), ports=tuple(ports),
                    postprocess=tuple(postprocess))


# --------------------------------------------------------------------------
# per-step work

def step_model(scenario: Scenario, base: SystemModel, step: int) -> SystemModel:
    """The model simulated at sweep step ``step``, with its laser grid."""
    if scenario.axis == "laser-frequency":
        return base.with_detuning(scenario.grid)
    value = scenario.grid[step]
    if scenario.axis == "cavity-detuning":
        if not base.emitters:
            raise ValidationError("a cavity-detuning sweep needs an emitter")
        moved = at_cavity_detuning(base, 0, value)
        return moved.with_detuning(scenario.scan, origin=moved.emitter_frequency(0))
    return apply_stark(base, value - base.drive.stark_voltage).with_detuning(scenario.scan)


def _active(model: SystemModel) -> list[int]:
    return [j for j, em in enumerate(model.emitters) if any(g > 0 for g in em.coupling)]


def fit_simulated_line(model: SystemModel, spectrum: Spectrum, port: str = "drop",
                       background_span: float = 3.0, background_points: int = 2001) -> FanoFitResult:
    """Fano fit of a single emitter line in a simulated port spectrum.

    The resonator profile is fitted to a wide molecule-free scan of the same
    model (``background_span`` cavity linewidths either side), then refined
    together with the line on the narrow grid of ``spectrum``.
    """
    kappa = _fundamental(model).linewidth
    x = np.linspace(-background_span * kappa, background_span * kappa, background_points)
    bare = model.with_emitters([]).with_detuning(x, origin=spectrum.origin)
    profile = port_spectrum(bare, (port,)).intensity[port]
    background = fit_background(Spectrum(x, profile, spectrum.origin), max_resonances=len(model.mode_pairs))
    return fit_fano(spectrum, background, cofit_background="linear")


def _single_pair(model: SystemModel) -> SystemModel:
    """Fundamental pair only, without backscattering, same fundamental couplings."""
    fund = _fundamental(model)
    k = model.mode_pairs.index(fund)
    ems = [replace(em, coupling=(em.coupling[k],), coupling_phase=(em.phase(k, fund.azimuthal_order),))
           for em in model.emitters]
    return replace(model, mode_pairs=(replace(fund, backscatter=0.0),), emitters=tuple(ems))


def _line_signals(model: SystemModel, spectra: PortSpectra) -> dict:
    """Size of the emitter features at each port.

    ``extinction`` is ``1 - min(I / I_bare)`` where the molecule-free
    intensity is non-zero; ``signal`` is ``max |I - I_bare|``.  With several
    emitters ``single_signal`` repeats the latter for emitter 0 alone and
    ``signal_ratio`` compares the two.
    """
    ports = spectra.ports
    bare = port_spectrum(model.with_emitters([]), ports).intensity
    single = port_spectrum(model.with_emitters(model.emitters[:1]), ports).intensity if len(model.emitters) > 1 else None
    out = {}
    for port in ports:
        I, I0 = spectra.intensity[port], bare[port]
        entry = {"signal": float(np.max(np.abs(I - I0)))}
        entry["extinction"] = float(1 - np.min(I / I0)) if np.min(I0) > 1e-9 else None
        if single is not None:
            s = float(np.max(np.abs(single[port] - I0)))
            entry["single_signal"] = s
            entry["signal_ratio"] = entry["signal"] / s if s > 0 else None
        out[port] = entry
    return out


def _run_step(task: tuple) -> dict:
    scenario, base, step = task
    model = step_model(scenario, base, step)
    spectra = port_spectrum(model, scenario.ports)
    out: dict = {"step": step, "value": scenario.grid[step] if scenario.axis != "laser-frequency" else None,
                 "spectra": spectra, "origin": model.drive.origin}
    if "fit" in scenario.postprocess:
        active = _active(model)
        if len(active) != 1:
            raise ValidationError("line fits need exactly one coupled emitter")
        spec = Spectrum(spectra.detuning, spectra.intensity[scenario.fit_port], model.drive.origin)
        out["fit"] = fit_simulated_line(model, spec, scenario.fit_port).to_dict()
    if "metrics" in scenario.postprocess and model.emitters:
        out["signals"] = _line_signals(model, spectra)
    if scenario.axis == "cavity-detuning" and "fit" in scenario.postprocess:
        simple = _single_pair(model)
        resp = effective_emitter_response(model, 0)
        out["curve"] = {
            "model_linewidth": resp["linewidth"],
            "lamb_shift": resp["lamb_shift"],
            "single_pair_linewidth": effective_emitter_response(simple, 0)["linewidth"],
            "fluorescence": confocal_fluorescence(model, 0, scenario.grid[step]),
        }
    return out


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"{WORKERS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValidationError(f"{WORKERS_ENV} must be a positive integer, got {env!r}")
        return n
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


def _map_steps(tasks: list[tuple], workers: int) -> list[dict]:
    if workers <= 1 or len(tasks) <= 1:
        return [_run_step(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        results = list(pool.map(_run_step, tasks))
    return sorted(results, key=lambda r: r["step"])


# --------------------------------------------------------------------------
# writers

def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.{DIGITS}g}"
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_round_floats(doc, DIGITS), indent=2, sort_keys=True) + "\n")


def _spectra_rows(results: list[dict]):
    for r in results:
        sp: PortSpectra = r["spectra"]
        for k in range(len(sp.frequency)):
            for port, amp in sp.amplitude.items():
                z = complex(amp[k])
                yield (r["step"], r["value"], sp.frequency[k], sp.detuning[k], port, z.real, z.imag, abs(z) ** 2)


SPECTRA_HEADER = ("step", "sweep_value", "frequency_THz", "detuning_GHz", "port",
                  "re_amplitude", "im_amplitude", "intensity")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_hash(scenario: Scenario, model: SystemModel) -> str:
    doc = {"scenario": scenario.to_dict(), "model": model_to_dict(model)}
    text = json.dumps(_round_floats(doc, 17), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Provenance of one bundle.

    ``files`` maps bundle-relative paths to SHA-256 digests; ``timings``
    holds wall-clock seconds and is the only part that varies between reruns.
    """

    scenario: str
    config_hash: str
    tool_version: str
    files: dict[str, str]
    timings: dict[str, float] = field(default_factory=dict)
    workers: int = 1

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "files": dict(sorted(self.files.items())),
            "timings": {k: round(v, 6) for k, v in self.timings.items()},
            "workers": self.workers,
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        doc = json.loads(Path(path).read_text())
        return cls(doc["scenario"], doc["config_hash"], doc["tool_version"], doc["files"],
                   doc.get("timings", {}), doc.get("workers", 1))


# --------------------------------------------------------------------------
# post-processing across steps

def _lorentzian_asymptote(delta: np.ndarray, gamma: np.ndarray, kappa: float) -> dict:
    """Fit ``gamma0 + P / (1 + (2 delta / w)**2)`` to the fitted linewidths."""
    ok = np.isfinite(gamma)
    d, g = delta[ok], gamma[ok]

    def resid(p):
        return p[0] + p[1] / (1 + (2 * d / p[2]) ** 2) - g

    res = lm_minimize(resid, np.array([float(np.min(g)), float(np.ptp(g)), kappa]))
    return {"free_linewidth_mhz": res.params[0], "purcell_rate_mhz": res.params[1],
            "width_ghz": abs(res.params[2]), "converged": res.converged}


def _far_limit(model: SystemModel, kappa: float) -> float:
    return effective_emitter_response(model, 0, detuning=1e3 * kappa)["linewidth"]


def _linewidth_curve(scenario: Scenario, base: SystemModel, results: list[dict], tables: Path) -> dict:
    rows = []
    for r in results:
        fit = r["fit"]
        rows.append((r["value"], fit["parameters"]["linewidth_mhz"], fit["errors"]["linewidth_mhz"],
                     r["curve"]["model_linewidth"], r["curve"]["single_pair_linewidth"], r["curve"]["lamb_shift"],
                     r["curve"]["fluorescence"]))
    arr = np.array(rows, dtype=float)
    free = base.emitters[0].decoherence_rate
    far = _fundamental(base).linewidth
    fl_ref = confocal_fluorescence(base, 0, 1e3 * far)
    header = ("cavity_detuning_GHz", "fitted_linewidth_MHz", "fitted_linewidth_error_MHz", "model_linewidth_MHz",
              "single_pair_linewidth_MHz", "lamb_shift_MHz", "fluorescence", "inverse_square_linewidth")
    out_rows = [row[:6] + (row[6] / fl_ref, fluorescence_scaling(row[1], free)) for row in rows]
    _write_csv(tables / "linewidth_curve.csv", header, out_rows)
    return {
        "far_detuned_linewidth_mhz": _far_limit(base, far),
        "single_pair_far_detuned_linewidth_mhz": _far_limit(_single_pair(base), far),
        "lorentzian_fit": _lorentzian_asymptote(arr[:, 0], arr[:, 1], far),
        "max_fit_deviation": float(np.max(np.abs(arr[:, 1] / arr[:, 3] - 1))),
    }


def _waterfall(scenario: Scenario, base: SystemModel, results: list[dict], tables: Path) -> dict:
    active = _active(base)
    widths = [effective_emitter_response(step_model(scenario, base, 0), j)["linewidth"] for j in active]
    linewidth = max(widths) * MHZ_IN_GHZ
    origin = results[0]["origin"]
    spectra = [Spectrum(r["spectra"].detuning, r["spectra"].intensity[scenario.fit_port], origin) for r in results]
    steps = np.array(scenario.grid)
    track = track_waterfall(spectra, len(active), steps=steps, linewidth=linewidth)
    rows = [(row["step"], row["molecule"], row["frequency_thz"],
             None if row["frequency_thz"] is None else (row["frequency_thz"] - origin) * THZ_IN_GHZ,
             int(row["merged"])) for row in track.to_rows()]
    _write_csv(tables / "waterfall.csv", ("sweep_value", "molecule", "frequency_THz", "detuning_GHz", "merged"), rows)
    doc: dict = {"origin_thz": origin, "tracks": track.to_rows()}
    if len(active) == 2:
        merged = track.merged.any(axis=1)
        try:
            doc["crossing"] = crossing_point(steps, track.frequency[:, 0], track.frequency[:, 1], exclude=merged)
        except ValueError as exc:
            doc["crossing"] = None
            doc["crossing_error"] = str(exc)
        doc["merged_steps"] = steps[merged].tolist()
    return doc


def _metrics(scenario: Scenario, base: SystemModel, results: list[dict], fits: list[dict] | None) -> dict:
    fund = _fundamental(base)
    doc: dict = {"resonator": {"center_frequency_thz": fund.center_frequency, "linewidth_ghz": fund.linewidth}}
    if scenario.fsr is not None:
        doc["resonator"].update(resonator_figures(fund.center_frequency, fund.linewidth, scenario.fsr))
    if base.emitters:
        doc["emitters"] = {}
        for j in _active(base):
            report = metrics_from_model(base, j, fsr=scenario.fsr).report()
            doc["emitters"][base.emitters[j].name or str(j)] = {k: v["value"] for k, v in report.items()}
    if fits:
        em = base.emitters[_active(base)[0]]
        best = max(fits, key=lambda f: f["parameters"]["linewidth_mhz"])
        fitted = metrics_from_linewidth(best["parameters"]["linewidth_mhz"], em.decoherence_rate, em.branching_ratio)
        doc["fitted"] = {k: v["value"] for k, v in fitted.report().items()}
    if any("signals" in r for r in results):
        doc["steps"] = [{"step": r["step"], "sweep_value": r["value"], "ports": r.get("signals", {})}
                        for r in results]
    return doc


# --------------------------------------------------------------------------
# driver

def run_scenario(scenario: Scenario, out_dir: str | Path, model: SystemModel | None = None,
                 workers: int | None = None) -> RunManifest:
    """Simulate ``scenario`` and write its bundle to ``out_dir``.

    Parameters
    ----------
    scenario : Scenario
    out_dir : path
        Created if missing; existing bundle files are overwritten.
    model : SystemModel, optional
        Replaces the scenario's base model (required for ``base="custom"``).
    workers : int, optional
        Worker processes for the sweep steps; defaults to the
        ``WGMQED_WORKERS`` environment variable or the available CPUs.

    Raises
    ------
    ValidationError
        For an invalid scenario/model combination, before any computation.
    ScenarioError
        Wrapping any failure of the solver, fits or writers.
    """
    t0 = time.perf_counter()
    if model is None:
        if scenario.base == "custom":
            raise ValidationError("a custom scenario needs a model")
        model = base_model(scenario.base)
    if scenario.axis == "cavity-detuning" and not model.emitters:
        raise ValidationError("a cavity-detuning sweep needs an emitter")
    if scenario.axis == "stark-voltage" and not any(em.stark_coefficient for em in model.emitters):
        raise ValidationError("a Stark sweep needs an emitter with a Stark coefficient")
    if ("fit" in scenario.postprocess) and len(_active(model)) != 1:
        raise ValidationError("line fits need exactly one coupled emitter")
    if "waterfall" in scenario.postprocess and not _active(model):
        raise ValidationError("waterfall tracking needs coupled emitters")
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValidationError("workers must be positive")

    out = Path(out_dir)
    tables = out / "tables"
    try:
        tables.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ScenarioError(scenario.name, f"cannot create {out}: {exc}", exc) from exc
    timings: dict[str, float] = {}

    tasks = [(scenario, model, k) for k in range(scenario.n_steps)]
    t = time.perf_counter()
    try:
        results = _map_steps(tasks, workers)
    except ValidationError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise ScenarioError(scenario.name, f"{type(exc).__name__}: {exc}", exc) from exc
    timings["simulate"] = time.perf_counter() - t

    t = time.perf_counter()
    try:
        written = ["spectra.csv", "scenario.json"]
        _write_csv(out / "spectra.csv", SPECTRA_HEADER, _spectra_rows(results))
        _write_json(out / "scenario.json", {"scenario": scenario.to_dict(), "model": model_to_dict(model)})
        fit_doc: dict = {}
        fits = None
        if "fit" in scenario.postprocess:
            fits = [r["fit"] for r in results]
            fit_doc["steps"] = [{"step": r["step"], "sweep_value": r["value"], **r["fit"]} for r in results]
            if scenario.axis == "cavity-detuning":
                fit_doc["linewidth_curve"] = _linewidth_curve(scenario, model, results, tables)
                written.append("tables/linewidth_curve.csv")
        if "waterfall" in scenario.postprocess:
            fit_doc["waterfall"] = _waterfall(scenario, model, results, tables)
            written.append("tables/waterfall.csv")
        if fit_doc:
            _write_json(out / "fit.json", fit_doc)
            written.append("fit.json")
        _write_json(out / "metrics.json", _metrics(scenario, model, results, fits))
        written.append("metrics.json")
    except ValidationError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise ScenarioError(scenario.name, f"{type(exc).__name__}: {exc}", exc) from exc
    timings["postprocess"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0

    manifest = RunManifest(scenario.name, config_hash(scenario, model), __version__,
                           {name: _sha256(out / name) for name in written}, timings, workers)
    manifest.to_json(out / "manifest.json")
    return manifest


# --------------------------------------------------------------------------
# comparison against reference data

@dataclass(frozen=True)
class Tolerance:
    """Bounds on the intensity deviation; ``None`` disables a bound."""

    rms: float | None = 0.02
    max: float | None = None

    def accepts(self, rms: float, max_abs: float) -> bool:
        return (self.rms is None or rms <= self.rms) and (self.max is None or max_abs <= self.max)


@dataclass(frozen=True)
class PortDeviation:
    port: str
    step: int
    max_abs: float
    rms: float
    at_frequency: float
    points: int
    passed: bool


@dataclass(frozen=True)
class ComparisonReport:
    deviations: tuple[PortDeviation, ...]
    tolerance: Tolerance
    interpolated: bool

    @property
    def passed(self) -> bool:
        return all(d.passed for d in self.deviations)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "interpolated": self.interpolated,
            "tolerance": {"rms": self.tolerance.rms, "max": self.tolerance.max},
            "ports": [
                {"port": d.port, "step": d.step, "max_abs_deviation": d.max_abs, "rms_deviation": d.rms,
                 "max_at_frequency_thz": d.at_frequency, "points": d.points, "passed": d.passed}
                for d in self.deviations
            ],
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(_round_floats(self.to_dict(), DIGITS), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def read_spectra_table(source: str | Path) -> dict[tuple[int, str], tuple[np.ndarray, np.ndarray]]:
    """``(step, port) -> (frequency [THz], intensity)`` from a bundle or CSV.

    A directory is read through its ``spectra.csv``.  Files without ``step``
    or ``port`` columns count as step 0 and port ``"drop"`` respectively.
    """
    path = Path(source)
    if path.is_dir():
        path = path / "spectra.csv"
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if "frequency_THz" not in rows[0] or "intensity" not in rows[0]:
        raise ValueError(f"{path}: need frequency_THz and intensity columns")
    table: dict[tuple[int, str], tuple[list, list]] = {}
    for r in rows:
        key = (int(r.get("step") or 0), canonical_port(r.get("port") or "drop"))
        f, y = table.setdefault(key, ([], []))
        f.append(float(r["frequency_THz"]))
        y.append(float(r["intensity"]))
    return {k: (np.array(f), np.array(y)) for k, (f, y) in table.items()}


def compare_reference(simulated, reference, tolerance: Tolerance | float = Tolerance(),
                      interpolate: bool = False, grid_atol: float = 2e-9) -> ComparisonReport:
    """Deviation of simulated intensities from reference data, per port and step.

    Parameters
    ----------
    simulated, reference : path or table
        Bundle directories, CSV files, or tables from
        :func:`read_spectra_table`.  Every (step, port) of the reference must
        exist in the simulation.
    tolerance : Tolerance or float
        A float is an RMS bound.
    interpolate : bool
        Linearly interpolate the simulation onto the reference grid instead
        of requiring identical grids.
    grid_atol : float
        Frequency agreement [THz] for a shared grid.

    Raises
    ------
    GridMismatchError
        If grids differ and ``interpolate`` is off, the reference lies outside
        the simulated range, or a reference port is missing.
    """
    if not isinstance(tolerance, Tolerance):
        tolerance = Tolerance(rms=float(tolerance))
    sim = simulated if isinstance(simulated, dict) else read_spectra_table(simulated)
    ref = reference if isinstance(reference, dict) else read_spectra_table(reference)
    out = []
    for key in sorted(ref):
        if key not in sim:
            raise GridMismatchError(f"reference step {key[0]} port {key[1]!r} is not in the simulation")
        fs, ys = sim[key]
        fr, yr = ref[key]
        if fs.shape == fr.shape and np.allclose(fs, fr, rtol=0, atol=grid_atol):
            y = ys
        elif not interpolate:
            raise GridMismatchError(f"step {key[0]} port {key[1]!r}: frequency grids differ; enable interpolation")
        else:
            order = np.argsort(fs)
            if fr.min() < fs.min() - grid_atol or fr.max() > fs.max() + grid_atol:
                raise GridMismatchError(f"step {key[0]} port {key[1]!r}: reference extends beyond the simulation")
            y = np.interp(fr, fs[order], ys[order])
        dev = y - yr
        k = int(np.argmax(np.abs(dev)))
        mx = float(abs(dev[k]))
        rms = float(np.sqrt(np.mean(dev ** 2)))
        out.append(PortDeviation(key[1], key[0], mx, rms, float(fr[k]), len(fr), tolerance.accepts(rms, mx)))
    if not out:
        raise GridMismatchError("reference holds no spectra")
    return ComparisonReport(tuple(out), tolerance, bool(interpolate))


__all__ = [
    "AXES",
    "BASE_MODELS",
    "ComparisonReport",
    "GridMismatchError",
    "PRESETS",
    "PortDeviation",
    "RunManifest",
    "Scenario",
    "ScenarioError",
    "Tolerance",
    "compare_reference",
    "config_hash",
    "custom_scenario",
    "default_workers",
    "fit_simulated_line",
    "get_scenario",
    "read_spectra_table",
    "run_scenario",
    "step_model",
]
