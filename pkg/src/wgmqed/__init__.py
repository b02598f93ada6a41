"""Steady-state simulation and lineshape fitting for emitters coupled to
waveguide-addressed whispering-gallery resonators."""

__version__ = "0.1.0"

from .model import (
    CircuitTopology,
    ConfigError,
    DriveSpec,
    Emitter,
    ModelError,
    ModePair,
    SystemModel,
    ValidationError,
    apply_stark,
    load_model,
    resonator_figures,
    save_model,
)
from .solver import (
    PortSpectra,
    StateAmplitudes,
    assemble_linear_system,
    calibrate_coupling,
    effective_emitter_response,
    intracavity_field,
    port_spectrum,
    solve_steady_state,
    time_domain_oracle,
)

__all__ = [
    "CircuitTopology",
    "ConfigError",
    "DriveSpec",
    "Emitter",
    "ModelError",
    "ModePair",
    "PortSpectra",
    "StateAmplitudes",
    "SystemModel",
    "ValidationError",
    "apply_stark",
    "assemble_linear_system",
    "calibrate_coupling",
    "effective_emitter_response",
    "intracavity_field",
    "load_model",
    "port_spectrum",
    "resonator_figures",
    "save_model",
    "solve_steady_state",
    "time_domain_oracle",
]
