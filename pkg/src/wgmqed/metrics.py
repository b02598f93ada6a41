"""Cavity-QED figures of merit from fitted linewidths or model parameters."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .model import MHZ_IN_GHZ, THZ_IN_GHZ, ModelError, SystemModel, resonator_figures
from .solver import (
    _fundamental,
    assemble_linear_system,
    at_cavity_detuning,
    effective_emitter_matrix,
    effective_emitter_response,
    solve_linear,
    solve_steady_state,
    standing_wave_visibility,
)


class DomainError(ValueError):
    """An input lies outside the range where a relation is defined."""


def purcell_from_linewidth(enhanced: float, free: float, branching: float) -> dict[str, float]:
    """Purcell factor, enhanced branching ratio and coupling efficiency.

    Uses ``gamma' = (1 + F) alpha0 gamma0 + (1 - alpha0) gamma0``.
    """
    if not (free > 0 and 0 < branching <= 1):
        raise DomainError("need gamma0 > 0 and 0 < alpha0 <= 1")
    if enhanced < free * (1 - 1e-12):
        raise DomainError(f"enhanced linewidth {enhanced} is below the free-space value {free}")
    enhanced = max(enhanced, free)
    zpl = branching * free
    F = (enhanced - free) / zpl
    return {
        "F": F,
        "alpha_enhanced": (1 + F) * zpl / enhanced,
        "beta": F * zpl / enhanced,
    }


def linewidth_from_purcell(F: float, free: float, branching: float) -> float:
    return (1 + F) * branching * free + (1 - branching) * free


def _check_beta(beta: float) -> None:
    if not 0 <= beta <= 1:
        raise DomainError(f"beta = {beta} outside [0, 1]")


def extinction_ring(beta: float) -> float:
    """Drop-port transmission on the molecular resonance with two degenerate modes."""
    _check_beta(beta)
    return (1 - beta / 2) ** 2


def extinction_fabry_perot(beta: float) -> float:
    """Transmission on the molecular resonance of a single-mode cavity."""
    _check_beta(beta)
    return (1 - beta) ** 2


def cooperativity_exchange(g: float, kappa: float, gamma0: float) -> dict[str, float]:
    """Standing-wave coupling, cooperativity and cavity-mediated exchange.

    All rates in one unit (e.g. GHz); ``g_eff`` and ``J`` come back in it.
    """
    if g < 0 or kappa <= 0 or gamma0 <= 0:
        raise DomainError("need g >= 0 and kappa, gamma0 > 0")
    g_eff = math.sqrt(2) * g
    return {"g_eff": g_eff, "C": 4 * g_eff ** 2 / (kappa * gamma0), "J": g_eff ** 2 / kappa}


def fluorescence_scaling(linewidth: float, reference: float) -> float:
    """Relative red-shifted fluorescence, ``(reference / linewidth)**2``."""
    if linewidth <= 0 or reference <= 0:
        raise DomainError("linewidths must be positive")
    return (reference / linewidth) ** 2


def super_sub_linewidths(model: SystemModel, phase_difference: float | None = None,
                         detuning: float = 0.0, rtol: float = 1e-12) -> dict[str, float]:
    """Collective linewidths [MHz] of two degenerate emitters.

    The cavity rows are eliminated at the emitters' common frequency and the
    linewidths are ``-2 Re`` of the eigenvalues of the remaining 2x2 matrix.

    Parameters
    ----------
    model : SystemModel
        Exactly two emitters with equal transition frequencies.
    phase_difference : float, optional
        If given, emitter 2's coupling phases are set to emitter 1's plus
        this value (all mode pairs).
    detuning : float
        Emitter minus fundamental resonance [GHz].
    """
    if len(model.emitters) != 2:
        raise DomainError("super/subradiance needs exactly two emitters")
    f1, f2 = model.emitter_frequency(0), model.emitter_frequency(1)
    if abs(f1 - f2) > rtol * f1:
        raise DomainError("emitters are not degenerate; use the full solver")
    e1, e2 = model.emitters
    if phase_difference is not None:
        ph1 = [e1.phase(p, pair.azimuthal_order) for p, pair in enumerate(model.mode_pairs)]
        e2 = replace(e2, coupling_phase=tuple(ph + phase_difference for ph in ph1))
        model = model.with_emitters([e1, e2])
    model = at_cavity_detuning(model, 0, detuning)
    eff, active = effective_emitter_matrix(model, f1)
    widths = [em.decoherence_rate for em in model.emitters]
    if active:
        rates = sorted((-2 * np.linalg.eigvals(eff).real / MHZ_IN_GHZ).tolist(), reverse=True)
        for k, j in enumerate(active):
            widths[j] = None
        widths = sorted([w for w in widths if w is not None] + rates, reverse=True)
    else:
        widths = sorted(widths, reverse=True)
    return {"super": float(widths[0]), "sub": float(widths[1])}


def confocal_fluorescence(model: SystemModel, j: int, detuning: float, rabi: float = 1e-3) -> float:
    """Red-shifted fluorescence under weak free-space excitation.

    Emitter ``j`` is driven directly (no waveguide input) on its
    cavity-shifted resonance; returns ``gamma_red * |sigma|**2`` in
    arbitrary units.  ``rabi`` is the drive amplitude [GHz].
    """
    model = at_cavity_detuning(model, j, detuning).with_emitters([model.emitters[j]])
    shift = effective_emitter_response(model, 0)["lamb_shift"]
    f_laser = model.emitter_frequency(0) + shift * MHZ_IN_GHZ / THZ_IN_GHZ
    system = assemble_linear_system(model, f_laser, s_in=0.0)
    drive = system.drive.copy()
    drive[system.index[("sigma", 0)]] = -1j * rabi
    x = solve_linear(replace(system, drive=drive))
    sigma = x[system.index[("sigma", 0)]]
    return model.emitters[0].red_linewidth * MHZ_IN_GHZ * abs(sigma) ** 2


# --------------------------------------------------------------------------
# reports

UNITS = {
    "F": "", "alpha_enhanced": "", "beta": "", "g_eff": "MHz", "C": "", "J": "MHz",
    "gamma_super": "MHz", "gamma_sub": "MHz", "visibility": "", "T_ring": "", "T_fp": "",
    "finesse": "", "Q": "", "linewidth": "MHz", "free_linewidth": "MHz",
}


@dataclass(frozen=True)
class QedMetrics:
    F: float
    alpha_enhanced: float
    beta: float
    T_ring: float
    T_fp: float
    linewidth: float
    free_linewidth: float
    g_eff: float | None = None
    C: float | None = None
    J: float | None = None
    gamma_super: float | None = None
    gamma_sub: float | None = None
    visibility: float | None = None
    finesse: float | None = None
    Q: float | None = None
    provenance: str = "configured"

    def __post_init__(self):
        if not (0 <= self.beta <= 1 and 0 <= self.alpha_enhanced <= 1):
            raise DomainError("beta and alpha' must lie in [0, 1]")
        if self.gamma_super is not None and not self.gamma_super >= self.gamma_sub > 0:
            raise DomainError("need gamma_super >= gamma_sub > 0")
        if self.visibility is not None and not 0 <= self.visibility <= 1 + 1e-12:
            raise DomainError("visibility outside [0, 1]")

    def report(self) -> dict[str, dict]:
        out = {}
        for name, unit in UNITS.items():
            value = getattr(self, name)
            if value is None:
                continue
            out[name] = {"value": float(f"{value:.12g}"), "unit": unit, "provenance": self.provenance}
        return out

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.report(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def metrics_from_linewidth(enhanced: float, free: float, branching: float, *, g: float | None = None,
                           kappa: float | None = None) -> QedMetrics:
    """Metrics from a fitted enhanced linewidth [MHz]; ``g`` [MHz], ``kappa`` [GHz] optional."""
    p = purcell_from_linewidth(enhanced, free, branching)
    extra = {}
    if g is not None and kappa is not None:
        ce = cooperativity_exchange(g * MHZ_IN_GHZ, kappa, free * MHZ_IN_GHZ)
        extra = {"g_eff": ce["g_eff"] / MHZ_IN_GHZ, "C": ce["C"], "J": ce["J"] / MHZ_IN_GHZ}
    return QedMetrics(p["F"], p["alpha_enhanced"], p["beta"], extinction_ring(p["beta"]),
                      extinction_fabry_perot(p["beta"]), enhanced, free, provenance="fitted", **extra)


def metrics_from_model(model: SystemModel, j: int = 0, fsr: float | None = None) -> QedMetrics:
    """Metrics of emitter ``j`` at its configured cavity detuning.

    Collective linewidths use the model's two emitters when they are
    degenerate, otherwise a hypothetical identical copy of emitter ``j``
    in phase with it.  ``fsr`` [THz] adds finesse and Q.
    """
    if not model.emitters:
        raise ModelError("metrics need at least one emitter")
    em = model.emitters[j]
    resp = effective_emitter_response(model, j)
    free = em.decoherence_rate
    p = purcell_from_linewidth(resp["linewidth"], free, em.branching_ratio)
    fund = _fundamental(model)
    k = model.mode_pairs.index(fund)
    ce = cooperativity_exchange(em.coupling[k] * MHZ_IN_GHZ, fund.linewidth, free * MHZ_IN_GHZ)

    pair = model.with_emitters([em, replace(em, name=em.name + "'")])
    if len(model.emitters) == 2 and abs(model.emitter_frequency(0) - model.emitter_frequency(1)) < 1e-12:
        pair = model
    det = (model.emitter_frequency(j) - fund.center_frequency) * THZ_IN_GHZ
    ss = super_sub_linewidths(pair, detuning=det)

    single = model.with_emitters([em])
    state = solve_steady_state(single, model.emitter_frequency(j))
    figs = resonator_figures(fund.center_frequency, fund.linewidth, fsr) if fsr else {}
    return QedMetrics(
        F=p["F"], alpha_enhanced=p["alpha_enhanced"], beta=p["beta"],
        T_ring=extinction_ring(p["beta"]), T_fp=extinction_fabry_perot(p["beta"]),
        linewidth=resp["linewidth"], free_linewidth=free,
        g_eff=ce["g_eff"] / MHZ_IN_GHZ, C=ce["C"], J=ce["J"] / MHZ_IN_GHZ,
        gamma_super=ss["super"], gamma_sub=ss["sub"],
        visibility=standing_wave_visibility(state, k),
        finesse=figs.get("finesse"), Q=figs.get("Q"),
        provenance="configured",
    )
