"""
Domain types, configuration I/O and unit conventions.

Units
-----
Absolute frequencies are stored in THz, cavity rates and detunings in GHz,
emitter rates and couplings in MHz, angles in radians and voltages in volts.
All rates are ordinary frequencies: a rate quoted as ``2*pi*27 GHz`` is
stored as ``27.0``.  The conversion factors below are the only place where
the scales meet.
"""

from __future__ import annotations

import json
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import jsonschema
import numpy as np

THZ_IN_GHZ = 1e3
MHZ_IN_GHZ = 1e-3

CLOSURE_RTOL = 1e-9

WAVEGUIDES = (1, 2)
CW, CCW = "cw", "ccw"

# (waveguide, circulation of the mode that feeds/reads the port)
DEFAULT_PORTS: dict[str, tuple[int, str]] = {
    "input": (1, CW),
    "transmission": (1, CW),
    "reflection": (1, CCW),
    "drop": (2, CW),
    "add": (2, CCW),
    "interferometer_1": (1, CCW),
    "interferometer_2": (1, CCW),
}

MODE_LABELS = ("fundamental", "second-order")


class ModelError(ValueError):
    """Base class for invalid models and configuration documents."""


class ConfigError(ModelError):
    """A configuration document does not match the schema."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ValidationError(ModelError):
    """A physical invariant of the model is violated."""


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class ModePair:
    """Degenerate CW/CCW pair of whispering-gallery modes.

    Parameters
    ----------
    center_frequency : float
        Resonance frequency [THz].
    linewidth : float
        Total FWHM ``kappa`` [GHz].
    intrinsic_loss : float
        Scattering/absorption part of ``kappa`` [GHz].
    external_coupling : tuple of float
        Coupling rate to waveguide 1 and waveguide 2 [GHz].
    backscatter : float
        Real CW-CCW coupling ``h`` [GHz].
    azimuthal_order : int
        Azimuthal mode number ``m``.
    label : str
        ``"fundamental"`` or ``"second-order"``.
    """

    center_frequency: float
    linewidth: float
    intrinsic_loss: float
    external_coupling: tuple[float, float]
    backscatter: float = 0.0
    azimuthal_order: int = 1
    label: str = "fundamental"

    def __post_init__(self):
        object.__setattr__(self, "external_coupling", tuple(float(k) for k in self.external_coupling))
        _check(len(self.external_coupling) == len(WAVEGUIDES), "external_coupling needs one rate per waveguide")
        _check(_finite(self.center_frequency, self.linewidth, self.intrinsic_loss, self.backscatter,
                       *self.external_coupling), "mode pair parameters must be finite")
        _check(self.center_frequency > 0, "center_frequency must be > 0")
        _check(self.linewidth > 0, "linewidth must be > 0")
        _check(self.intrinsic_loss >= 0 and min(self.external_coupling) >= 0,
               "loss and coupling rates must be >= 0")
        _check(self.backscatter >= 0, "backscatter must be >= 0")
        _check(isinstance(self.azimuthal_order, (int, np.integer)) and self.azimuthal_order > 0,
               "azimuthal_order must be a positive integer")
        _check(self.label in MODE_LABELS, f"label must be one of {MODE_LABELS}")
        total = self.intrinsic_loss + sum(self.external_coupling)
        _check(abs(total - self.linewidth) <= CLOSURE_RTOL * self.linewidth,
               f"loss closure violated: intrinsic + external = {total!r} != linewidth {self.linewidth!r}")

    @classmethod
    def from_coupling(cls, center_frequency: float, intrinsic_loss: float,
                      external_coupling: Sequence[float], **kwargs) -> "ModePair":
        ext = tuple(float(k) for k in external_coupling)
        return cls(center_frequency, intrinsic_loss + sum(ext), intrinsic_loss, ext, **kwargs)


@dataclass(frozen=True)
class Emitter:
    """Two-level emitter on the resonator rim.

    ``coupling`` holds one rate per mode pair [MHz].  The coupling phase to
    pair ``p`` is ``m_p * azimuthal_angle`` unless ``coupling_phase`` gives
    the phases directly.
    """

    transition_frequency: float
    linewidth: float
    branching_ratio: float
    coupling: tuple[float, ...] = ()
    azimuthal_angle: float = 0.0
    dephasing: float = 0.0
    stark_coefficient: float = 0.0
    coupling_phase: tuple[float, ...] | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "coupling", tuple(float(g) for g in self.coupling))
        if self.coupling_phase is not None:
            object.__setattr__(self, "coupling_phase", tuple(float(p) for p in self.coupling_phase))
            _check(len(self.coupling_phase) == len(self.coupling),
                   "coupling_phase needs one entry per coupling")
        _check(_finite(self.transition_frequency, self.linewidth, self.branching_ratio,
                       self.azimuthal_angle, self.dephasing, self.stark_coefficient, *self.coupling),
               "emitter parameters must be finite")
        _check(self.transition_frequency > 0, "transition_frequency must be > 0")
        _check(self.linewidth > 0, "linewidth must be > 0")
        _check(0 < self.branching_ratio <= 1, "branching_ratio must lie in (0, 1]")
        _check(self.dephasing >= 0, "dephasing must be >= 0")
        _check(all(g >= 0 for g in self.coupling), "couplings must be >= 0")
        _check(0 <= self.azimuthal_angle < 2 * math.pi, "azimuthal_angle must lie in [0, 2*pi)")

    @property
    def zpl_linewidth(self) -> float:
        return self.branching_ratio * self.linewidth

    @property
    def red_linewidth(self) -> float:
        return (1 - self.branching_ratio) * self.linewidth

    @property
    def decoherence_rate(self) -> float:
        """Emitter field decay (FWHM) without the cavity [MHz]."""
        return self.linewidth + 2 * self.dephasing

    def phase(self, pair: int, azimuthal_order: int) -> float:
        if self.coupling_phase is not None:
            return self.coupling_phase[pair]
        return azimuthal_order * self.azimuthal_angle


@dataclass(frozen=True)
class CircuitTopology:
    """Port routing and the interferometer reference arm.

    The reference arm taps the input with amplitude ratio
    ``reference_amplitude`` and phase ``reference_phase``; it is mixed 50/50
    with the light leaving waveguide 1 in the CCW direction.
    """

    ports: Mapping[str, tuple[int, str]] = field(default_factory=lambda: dict(DEFAULT_PORTS))
    reference_amplitude: float = 1.0
    reference_phase: float = 0.0

    def __post_init__(self):
        ports = {str(k): (int(v[0]), str(v[1])) for k, v in dict(self.ports).items()}
        object.__setattr__(self, "ports", ports)
        _check(set(ports) == set(DEFAULT_PORTS), f"port map must name exactly {sorted(DEFAULT_PORTS)}")
        for name, (wg, _) in ports.items():
            _check(wg == DEFAULT_PORTS[name][0], f"port {name!r} must sit on waveguide {DEFAULT_PORTS[name][0]}")
        _check(all(d in (CW, CCW) for _, d in ports.values()), "port directions must be 'cw' or 'ccw'")
        _check(_finite(self.reference_amplitude, self.reference_phase), "reference arm must be finite")
        _check(self.reference_amplitude >= 0, "reference_amplitude must be >= 0")


@dataclass(frozen=True)
class DriveSpec:
    """Laser scan: detunings [GHz] relative to ``origin`` [THz], unit input power.

    ``stark_voltage`` is the electrode bias [V] applied during the scan.
    """

    origin: float
    detuning: tuple[float, ...] = (0.0,)
    stark_voltage: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "detuning", tuple(float(d) for d in np.ravel(self.detuning)))
        _check(len(self.detuning) > 0, "detuning grid must be non-empty")
        _check(_finite(self.origin, self.stark_voltage, *self.detuning), "drive parameters must be finite")
        _check(self.origin > 0, "origin must be > 0")
        _check(all(b > a for a, b in zip(self.detuning, self.detuning[1:])),
               "detuning grid must be strictly increasing")

    @property
    def frequencies(self) -> np.ndarray:
        """Absolute laser frequencies [THz]."""
        return self.origin + np.asarray(self.detuning) / THZ_IN_GHZ


@dataclass(frozen=True)
class SystemModel:
    mode_pairs: tuple[ModePair, ...]
    emitters: tuple[Emitter, ...] = ()
    topology: CircuitTopology = field(default_factory=CircuitTopology)
    drive: DriveSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode_pairs", tuple(self.mode_pairs))
        object.__setattr__(self, "emitters", tuple(self.emitters))
        _check(1 <= len(self.mode_pairs) <= 2, "a model has one or two mode pairs")
        _check(sum(p.label == "fundamental" for p in self.mode_pairs) <= 1,
               "at most one mode pair may be labelled fundamental")
        for j, em in enumerate(self.emitters):
            _check(len(em.coupling) == len(self.mode_pairs),
                   f"emitter {j} must give one coupling per mode pair ({len(self.mode_pairs)})")
        if self.drive is None:
            object.__setattr__(self, "drive", DriveSpec(self.mode_pairs[0].center_frequency))

    def emitter_frequency(self, j: int) -> float:
        """Transition frequency of emitter ``j`` at the current bias [THz]."""
        em = self.emitters[j]
        return em.transition_frequency + em.stark_coefficient * self.drive.stark_voltage * MHZ_IN_GHZ / THZ_IN_GHZ

    def with_detuning(self, detuning: Sequence[float], origin: float | None = None) -> "SystemModel":
        drive = replace(self.drive, detuning=tuple(detuning),
                        origin=self.drive.origin if origin is None else origin)
        return replace(self, drive=drive)

    def with_emitters(self, emitters: Sequence[Emitter]) -> "SystemModel":
        return replace(self, emitters=tuple(emitters))

    def shift_cavity(self, delta_ghz: float) -> "SystemModel":
        """Move every mode pair by ``delta_ghz`` keeping their spacing."""
        pairs = tuple(replace(p, center_frequency=p.center_frequency + delta_ghz / THZ_IN_GHZ)
                      for p in self.mode_pairs)
        return replace(self, mode_pairs=pairs)


def apply_stark(model: SystemModel, voltage: float) -> SystemModel:
    """Add ``voltage`` to the electrode bias; each emitter moves by ``k_S * V``."""
    if not math.isfinite(voltage):
        raise ValidationError("voltage must be finite")
    if voltage == 0:
        return model
    return replace(model, drive=replace(model.drive, stark_voltage=model.drive.stark_voltage + voltage))


def calibrate_stark(freq_a: float, freq_b: float, voltage_a: float, voltage_b: float) -> float:
    """Linear Stark coefficient [MHz/V] from two (frequency [THz], voltage) points."""
    if voltage_a == voltage_b:
        raise ValidationError("calibration voltages must differ")
    return (freq_b - freq_a) * THZ_IN_GHZ / MHZ_IN_GHZ / (voltage_b - voltage_a)


def resonator_figures(center_frequency: float, linewidth: float, fsr: float) -> dict[str, float]:
    """Finesse and quality factor.

    Parameters
    ----------
    center_frequency : float
        Resonance [THz].
    linewidth : float
        FWHM [GHz].
    fsr : float
        Free spectral range [THz].
    """
    if not (center_frequency > 0 and linewidth > 0 and fsr > 0):
        raise ValidationError("resonator figures need positive inputs")
    return {
        "finesse": fsr * THZ_IN_GHZ / linewidth,
        "Q": center_frequency * THZ_IN_GHZ / linewidth,
    }


# --------------------------------------------------------------------------
# configuration documents

_NUM = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}
_GRID = {
    "oneOf": [
        {"type": "array", "items": _NUM, "minItems": 1},
        {
            "type": "object",
            "properties": {"start": _NUM, "stop": _NUM, "num": {"type": "integer", "minimum": 1}},
            "required": ["start", "stop", "num"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "mode_pairs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "label": {"enum": list(MODE_LABELS)},
                    "center_frequency_thz": _NUM,
                    "linewidth_ghz": _NUM,
                    "intrinsic_loss_ghz": _NUM,
                    "external_coupling_ghz": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                    "backscatter_ghz": _NUM,
                    "azimuthal_order": {"type": "integer"},
                },
                "required": ["center_frequency_thz", "linewidth_ghz", "intrinsic_loss_ghz",
                             "external_coupling_ghz"],
                "additionalProperties": False,
            },
        },
        "emitters": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string"},
                    "transition_frequency_thz": _NUM,
                    "linewidth_mhz": _NUM,
                    "branching_ratio": _NUM,
                    "dephasing_mhz": _NUM,
                    "coupling_mhz": {"type": "array", "items": _NONNEG},
                    "azimuthal_angle_rad": _NUM,
                    "coupling_phase_rad": {"type": "array", "items": _NUM},
                    "stark_coefficient_mhz_per_v": _NUM,
                },
                "required": ["transition_frequency_thz", "linewidth_mhz", "branching_ratio", "coupling_mhz"],
                "additionalProperties": False,
            },
        },
        "topology": {
            "type": "object",
            "properties": {
                "ports": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "array",
                        "prefixItems": [{"enum": list(WAVEGUIDES)}, {"enum": [CW, CCW]}],
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
                "reference_amplitude": _NUM,
                "reference_phase_rad": _NUM,
            },
            "additionalProperties": False,
        },
        "drive": {
            "type": "object",
            "properties": {
                "origin_thz": _NUM,
                "detuning_ghz": _GRID,
                "stark_voltage_v": _NUM,
            },
            "required": ["origin_thz"],
            "additionalProperties": False,
        },
    },
    "required": ["mode_pairs"],
    "additionalProperties": False,
}


def _path(error: jsonschema.ValidationError) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in error.absolute_path)


def model_from_dict(doc: Mapping[str, Any]) -> SystemModel:
    """Build a validated model from a parsed configuration document."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError(errors[0].message, _path(errors[0]))

    pairs = []
    for i, p in enumerate(doc["mode_pairs"]):
        with _at_path(f"$.mode_pairs[{i}]"):
            pairs.append(ModePair(
                center_frequency=p["center_frequency_thz"],
                linewidth=p["linewidth_ghz"],
                intrinsic_loss=p["intrinsic_loss_ghz"],
                external_coupling=tuple(p["external_coupling_ghz"]),
                backscatter=p.get("backscatter_ghz", 0.0),
                azimuthal_order=p.get("azimuthal_order", 1),
                label=p.get("label", "fundamental" if i == 0 else "second-order"),
            ))
    emitters = []
    for j, e in enumerate(doc.get("emitters", [])):
        with _at_path(f"$.emitters[{j}]"):
            emitters.append(Emitter(
                transition_frequency=e["transition_frequency_thz"],
                linewidth=e["linewidth_mhz"],
                branching_ratio=e["branching_ratio"],
                coupling=tuple(e["coupling_mhz"]),
                azimuthal_angle=e.get("azimuthal_angle_rad", 0.0),
                dephasing=e.get("dephasing_mhz", 0.0),
                stark_coefficient=e.get("stark_coefficient_mhz_per_v", 0.0),
                coupling_phase=tuple(e["coupling_phase_rad"]) if "coupling_phase_rad" in e else None,
                name=e.get("name", f"M{j + 1}"),
            ))
    topo = doc.get("topology", {})
    with _at_path("$.topology"):
        topology = CircuitTopology(
            ports={k: tuple(v) for k, v in topo.get("ports", DEFAULT_PORTS).items()},
            reference_amplitude=topo.get("reference_amplitude", 1.0),
            reference_phase=topo.get("reference_phase_rad", 0.0),
        )
    drive = None
    if "drive" in doc:
        d = doc["drive"]
        grid = d.get("detuning_ghz", [0.0])
        if isinstance(grid, Mapping):
            grid = np.linspace(grid["start"], grid["stop"], grid["num"])
        with _at_path("$.drive"):
            drive = DriveSpec(origin=d["origin_thz"], detuning=tuple(grid),
                              stark_voltage=d.get("stark_voltage_v", 0.0))
    with _at_path("$"):
        return SystemModel(tuple(pairs), tuple(emitters), topology, drive)


@contextmanager
def _at_path(path: str):
    """Re-raise semantic validation errors as configuration errors at ``path``."""
    try:
        yield
    except ValidationError as exc:
        raise ConfigError(str(exc), path) from exc


def model_to_dict(model: SystemModel) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "mode_pairs": [
            {
                "label": p.label,
                "center_frequency_thz": p.center_frequency,
                "linewidth_ghz": p.linewidth,
                "intrinsic_loss_ghz": p.intrinsic_loss,
                "external_coupling_ghz": list(p.external_coupling),
                "backscatter_ghz": p.backscatter,
                "azimuthal_order": int(p.azimuthal_order),
            }
            for p in model.mode_pairs
        ],
        "emitters": [],
        "topology": {
            "ports": {k: list(v) for k, v in model.topology.ports.items()},
            "reference_amplitude": model.topology.reference_amplitude,
            "reference_phase_rad": model.topology.reference_phase,
        },
        "drive": {
            "origin_thz": model.drive.origin,
            "detuning_ghz": list(model.drive.detuning),
            "stark_voltage_v": model.drive.stark_voltage,
        },
    }
    for em in model.emitters:
        e = {
            "name": em.name,
            "transition_frequency_thz": em.transition_frequency,
            "linewidth_mhz": em.linewidth,
            "branching_ratio": em.branching_ratio,
            "dephasing_mhz": em.dephasing,
            "coupling_mhz": list(em.coupling),
            "azimuthal_angle_rad": em.azimuthal_angle,
            "stark_coefficient_mhz_per_v": em.stark_coefficient,
        }
        if em.coupling_phase is not None:
            e["coupling_phase_rad"] = list(em.coupling_phase)
        doc["emitters"].append(e)
    return doc


def load_model(source: str | Path | Mapping[str, Any]) -> SystemModel:
    """Load a model from a JSON file path, JSON text, or parsed document."""
    if isinstance(source, Mapping):
        return model_from_dict(source)
    text = str(source)
    if not text.lstrip().startswith("{"):
        text = Path(source).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno})") from exc
    return model_from_dict(doc)


def save_model(model: SystemModel, path: str | Path | None = None) -> str:
    text = json.dumps(model_to_dict(model), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def describe(model: SystemModel) -> dict[str, Any]:
    """Flat dictionary view, mostly for logging."""
    return asdict(model)
