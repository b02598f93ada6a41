"""
Device and molecule parameter sets for the TiO2 microdisc with DBT:PE.

Numbers quoted for the experiment: resonance 404.935 THz, FWHM 27 GHz,
FSR about 6.3 THz, 40 % transmission dip (under-coupled), molecule M1 with
gamma0 = 33 MHz, alpha0 = 1/3 and a 125 MHz Purcell-broadened line, M2 with
a 49 % drop-port dip, both tuned into resonance at -110 V, 4 GHz below the
cavity, with a 10 MHz residual splitting.  Everything else (second radial
mode, backscattering, Stark coefficients, azimuthal orders) is a modelling
choice made here.
"""

from __future__ import annotations

import math
from dataclasses import replace

from .model import (
    MHZ_IN_GHZ,
    THZ_IN_GHZ,
    CircuitTopology,
    DriveSpec,
    Emitter,
    ModePair,
    SystemModel,
    calibrate_stark,
)
from .solver import at_cavity_detuning, calibrate_coupling

RING_FREQUENCY = 404.935  # THz
RING_LINEWIDTH = 27.0  # GHz
RING_FSR = 6.3  # THz
TRANSMISSION_DIP = 0.40

FREE_LINEWIDTH = 33.0  # MHz
BRANCHING = 1 / 3
M1_LINEWIDTH = 125.0  # MHz, on resonance
M1_BETA = 0.75
M2_BETA = 0.56
M1_COUPLING = 490.0  # MHz, as quoted
M2_COUPLING = 395.0

CROSSING_VOLTAGE = -110.0  # V
CROSSING_DETUNING = -4.0  # GHz from the cavity
RESIDUAL_SPLITTING = 0.010  # GHz
PHASE_DIFFERENCE = 0.58 * math.pi

# modelling choices
FUNDAMENTAL_ORDER = 46
SECOND_ORDER = 40
SECOND_LINEWIDTH_FACTOR = 10.0
SECOND_COUPLING_FACTOR = 0.5
SECOND_OFFSET = 40.0  # GHz above the fundamental
BACKSCATTER = 1.0  # GHz, fundamental pair only
STARK_M1 = -12.0  # MHz/V
STARK_M2 = 9.0  # MHz/V


def _symmetric_coupling(linewidth: float, dip: float) -> float:
    """External rate per waveguide giving on-resonance transmission ``1 - dip``."""
    return linewidth * (1 - math.sqrt(1 - dip)) / 2


def fundamental_pair(backscatter: float = 0.0) -> ModePair:
    ext = _symmetric_coupling(RING_LINEWIDTH, TRANSMISSION_DIP)
    return ModePair.from_coupling(RING_FREQUENCY, RING_LINEWIDTH - 2 * ext, (ext, ext), backscatter=backscatter,
                                  azimuthal_order=FUNDAMENTAL_ORDER, label="fundamental")


def second_pair() -> ModePair:
    kappa = SECOND_LINEWIDTH_FACTOR * RING_LINEWIDTH
    ext = _symmetric_coupling(kappa, TRANSMISSION_DIP)
    return ModePair.from_coupling(RING_FREQUENCY + SECOND_OFFSET / THZ_IN_GHZ, kappa - 2 * ext, (ext, ext),
                                  azimuthal_order=SECOND_ORDER, label="second-order")


def resonator(extended: bool = False) -> tuple[ModePair, ...]:
    """Fundamental pair alone, or with backscattering and the second radial mode."""
    if extended:
        return fundamental_pair(BACKSCATTER), second_pair()
    return (fundamental_pair(),)


def bare_model(extended: bool = False, detuning=(0.0,), origin: float = RING_FREQUENCY) -> SystemModel:
    return SystemModel(resonator(extended), (), CircuitTopology(), DriveSpec(origin, tuple(detuning)))


def molecule(name: str, frequency: float, n_pairs: int, coupling: float = 1.0, stark: float = 0.0,
             phase: float = 0.0) -> Emitter:
    """Emitter with the DBT free-space parameters.

    The coupling to the second pair is ``SECOND_COUPLING_FACTOR`` times the
    fundamental one.  ``phase`` is the coupling phase to the fundamental
    pair; the azimuth follows from it.
    """
    g = (coupling,) + (SECOND_COUPLING_FACTOR * coupling,) * (n_pairs - 1)
    orders = (FUNDAMENTAL_ORDER, SECOND_ORDER)[:n_pairs]
    azimuth = (phase % (2 * math.pi)) / FUNDAMENTAL_ORDER
    return Emitter(frequency, FREE_LINEWIDTH, BRANCHING, g, azimuthal_angle=azimuth, stark_coefficient=stark,
                   coupling_phase=tuple(m * azimuth for m in orders), name=name)


def m1_model(calibration: str = "linewidth", extended: bool = False, detuning=(0.0,)) -> SystemModel:
    """M1 on double resonance.

    ``calibration="linewidth"`` sets the coupling so the line is 125 MHz wide
    on resonance; ``"extinction"`` sets beta = 0.75 (61 % drop-port dip);
    ``"quoted"`` uses g = 490 MHz as printed.
    """
    base = bare_model(extended, detuning)
    n = len(base.mode_pairs)
    if calibration == "quoted":
        return base.with_emitters([molecule("M1", RING_FREQUENCY, n, M1_COUPLING)])
    model = base.with_emitters([molecule("M1", RING_FREQUENCY, n)])
    if calibration == "linewidth":
        return calibrate_coupling(model, 0, linewidth=M1_LINEWIDTH)
    if calibration == "extinction":
        return calibrate_coupling(model, 0, beta=M1_BETA)
    raise ValueError(f"unknown calibration {calibration!r}")


def two_molecule_model(beta1: float = M1_BETA, beta2: float = M2_BETA, phase_difference: float = math.pi / 2,
                       splitting: float = RESIDUAL_SPLITTING, cavity_detuning: float = CROSSING_DETUNING,
                       extended: bool = False, detuning=(0.0,)) -> SystemModel:
    """M1 and M2 near resonance with each other.

    Each molecule's coupling is calibrated alone to its ``beta`` at
    ``cavity_detuning`` [GHz]; M1 sits ``splitting/2`` above the mean and M2
    below it.  The drive origin is the mean molecule frequency.
    """
    base = bare_model(extended)
    n = len(base.mode_pairs)
    mean = RING_FREQUENCY + cavity_detuning / THZ_IN_GHZ
    ems = []
    for name, beta, phase, sign in (("M1", beta1, 0.0, 1), ("M2", beta2, phase_difference, -1)):
        em = molecule(name, mean + sign * splitting / 2 / THZ_IN_GHZ, n, phase=phase)
        single = calibrate_coupling(base.with_emitters([replace(em, transition_frequency=mean)]), 0, beta=beta)
        ems.append(replace(em, coupling=single.emitters[0].coupling))
    return SystemModel(base.mode_pairs, tuple(ems), base.topology, DriveSpec(mean, tuple(detuning)))


def identical_pair_model(beta: float, phase_difference: float, cavity_detuning: float = 0.0,
                         detuning=(0.0,)) -> SystemModel:
    """Two identical degenerate molecules with the given coupling efficiency."""
    return two_molecule_model(beta, beta, phase_difference, 0.0, cavity_detuning, detuning=detuning)


def stark_sweep_model(extended: bool = False, detuning=(0.0,)) -> SystemModel:
    """M1 and M2 with opposite Stark coefficients, degenerate (up to 10 MHz) at -110 V.

    Transition frequencies are the zero-bias values.
    """
    resonant = two_molecule_model(phase_difference=PHASE_DIFFERENCE, extended=extended, detuning=detuning)
    ems = []
    for em, k in zip(resonant.emitters, (STARK_M1, STARK_M2)):
        f0 = em.transition_frequency - k * CROSSING_VOLTAGE * MHZ_IN_GHZ / THZ_IN_GHZ
        ems.append(replace(em, transition_frequency=f0, stark_coefficient=k))
    return resonant.with_emitters(ems)


def stark_coefficients_from(model: SystemModel, voltage: float) -> list[float]:
    """Two-point calibration of every emitter between 0 V and ``voltage``."""
    from .model import apply_stark

    zero = apply_stark(model, -model.drive.stark_voltage)
    tuned = apply_stark(zero, voltage)
    return [calibrate_stark(zero.emitter_frequency(j), tuned.emitter_frequency(j), 0.0, voltage)
            for j in range(len(model.emitters))]


__all__ = [
    "bare_model",
    "fundamental_pair",
    "identical_pair_model",
    "m1_model",
    "molecule",
    "resonator",
    "second_pair",
    "stark_coefficients_from",
    "stark_sweep_model",
    "two_molecule_model",
    "at_cavity_detuning",
]
