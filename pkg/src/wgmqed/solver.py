"""
Linear steady-state solver for the coupled CW/CCW mode pairs and emitters.

Conventions
-----------
Fields rotate as ``exp(-i w t)`` and the equations are written in the frame
of the laser.  All rates entering the matrices are in GHz and are treated as
angular rates, so the oracle's time unit is ``1/(2*pi GHz)``.  For mode pair
``p`` and emitter ``j`` with coupling phase ``theta_jp``::

    da_p/dt = (i(wL - w_p) - k_int/2) a_p - sum_q D_pq a_q - i h_p b_p
              - i sum_j g_jp exp(-i theta_jp) s_j + sqrt(k_ext,p,1) s_in
    db_p/dt = (i(wL - w_p) - k_int/2) b_p - sum_q D_pq b_q - i h_p a_p
              - i sum_j g_jp exp(+i theta_jp) s_j
    ds_j/dt = (i(wL - w_j) - G_j/2) s_j
              - i sum_p g_jp (exp(+i theta_jp) a_p + exp(-i theta_jp) b_p)

``D_pq = 1/2 sum_w sqrt(k_ext,p,w k_ext,q,w)`` is the radiative damping
through the shared waveguides; for a single pair it reduces to ``k_ext/2``.
``G_j = gamma0_j + 2 gamma*_j``.  Outputs follow ``s_out = s_in - sqrt(k) a``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .model import (
    MHZ_IN_GHZ,
    THZ_IN_GHZ,
    ModelError,
    SystemModel,
)

PORT_ALIASES = {"int1": "interferometer_1", "int2": "interferometer_2"}
OUTPUT_PORTS = ("input", "transmission", "reflection", "drop", "add", "interferometer_1", "interferometer_2")

RESIDUAL_RTOL = 1e-12


class SolverError(ModelError):
    """The linear system is unstable or singular."""


class OracleError(RuntimeError):
    """Time integration did not settle within the allotted time."""


class PortError(KeyError):
    """An unknown output port was requested."""


def canonical_port(name: str) -> str:
    name = PORT_ALIASES.get(name, name)
    if name not in OUTPUT_PORTS:
        raise PortError(f"unknown port {name!r}; choose from {', '.join(OUTPUT_PORTS)} (or int1/int2)")
    return name


@dataclass(frozen=True)
class LinearSystem:
    """Evolution matrix ``A`` and drive ``d`` with ``dx/dt = A x + d``.

    The steady state solves ``A x = -d``.  ``index`` maps row labels such as
    ``("a", 0)``, ``("b", 0)`` or ``("sigma", 2)`` to row numbers; emitters
    without any coupling are left out and have zero amplitude.
    """

    matrix: np.ndarray
    drive: np.ndarray
    index: dict[tuple[str, int], int]
    laser_frequency: float
    n_pairs: int
    emitters: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def cavity_rows(self) -> np.ndarray:
        return np.arange(2 * self.n_pairs)

    @property
    def emitter_rows(self) -> np.ndarray:
        return np.arange(2 * self.n_pairs, self.dim)


@dataclass(frozen=True)
class StateAmplitudes:
    """Steady-state amplitudes at one laser frequency [THz].

    ``a`` and ``b`` are the CW and CCW amplitudes per mode pair, ``sigma`` the
    emitter coherences in model order.
    """

    a: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    laser_frequency: float

    @property
    def standing_plus(self) -> np.ndarray:
        return (self.a + self.b) / math.sqrt(2)

    @property
    def standing_minus(self) -> np.ndarray:
        return (self.a - self.b) / math.sqrt(2)


@dataclass(frozen=True)
class PortSpectra:
    """Complex output amplitudes per port on the drive grid (unit input power)."""

    frequency: np.ndarray
    detuning: np.ndarray
    amplitude: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def intensity(self) -> dict[str, np.ndarray]:
        return {k: np.abs(v) ** 2 for k, v in self.amplitude.items()}

    @property
    def ports(self) -> tuple[str, ...]:
        return tuple(self.amplitude)

    def to_csv(self, dest: str | Path | io.TextIOBase | None = None) -> str:
        """Write ``frequency_THz, detuning_GHz, port, re, im, intensity`` rows."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frequency_THz", "detuning_GHz", "port", "re_amplitude", "im_amplitude", "intensity"])
        for k in range(len(self.frequency)):
            for port, amp in self.amplitude.items():
                z = amp[k]
                w.writerow([f"{self.frequency[k]:.12g}", f"{self.detuning[k]:.12g}", port,
                            f"{z.real:.12g}", f"{z.imag:.12g}", f"{abs(z) ** 2:.12g}"])
        text = buf.getvalue()
        if isinstance(dest, (str, Path)):
            Path(dest).write_text(text)
        elif dest is not None:
            dest.write(text)
        return text


def read_spectra_csv(source: str | Path) -> PortSpectra:
    """Inverse of :meth:`PortSpectra.to_csv` (amplitudes at 12 digits)."""
    rows = list(csv.DictReader(io.StringIO(Path(source).read_text())))
    freqs: dict[float, float] = {}
    amps: dict[str, list[complex]] = {}
    for r in rows:
        freqs.setdefault(float(r["frequency_THz"]), float(r["detuning_GHz"]))
        amps.setdefault(r["port"], []).append(complex(float(r["re_amplitude"]), float(r["im_amplitude"])))
    f = np.array(list(freqs))
    return PortSpectra(f, np.array(list(freqs.values())), {k: np.array(v) for k, v in amps.items()})


# --------------------------------------------------------------------------
# assembly

def _active_emitters(model: SystemModel) -> tuple[int, ...]:
    return tuple(j for j, em in enumerate(model.emitters) if any(g > 0 for g in em.coupling))


def _damping_matrix(model: SystemModel) -> np.ndarray:
    ext = np.sqrt(np.array([p.external_coupling for p in model.mode_pairs]))
    return 0.5 * ext @ ext.T


def assemble_linear_system(model: SystemModel, laser_frequency: float, s_in: complex = 1.0,
                           check_stability: bool = True) -> LinearSystem:
    """Build the evolution matrix at laser frequency ``laser_frequency`` [THz]."""
    pairs = model.mode_pairs
    P = len(pairs)
    active = _active_emitters(model)
    n = 2 * P + len(active)
    A = np.zeros((n, n), dtype=complex)
    d = np.zeros(n, dtype=complex)
    index: dict[tuple[str, int], int] = {}
    D = _damping_matrix(model)

    for p, pair in enumerate(pairs):
        ia, ib = 2 * p, 2 * p + 1
        index[("a", p)] = ia
        index[("b", p)] = ib
        delta = (laser_frequency - pair.center_frequency) * THZ_IN_GHZ
        A[ia, ia] = A[ib, ib] = 1j * delta - pair.intrinsic_loss / 2
        for q in range(P):
            A[ia, 2 * q] -= D[p, q]
            A[ib, 2 * q + 1] -= D[p, q]
        A[ia, ib] = A[ib, ia] = -1j * pair.backscatter
        d[ia] = math.sqrt(pair.external_coupling[0]) * s_in

    for k, j in enumerate(active):
        em = model.emitters[j]
        i_s = 2 * P + k
        index[("sigma", j)] = i_s
        delta = (laser_frequency - model.emitter_frequency(j)) * THZ_IN_GHZ
        A[i_s, i_s] = 1j * delta - em.decoherence_rate * MHZ_IN_GHZ / 2
        for p, pair in enumerate(pairs):
            g = em.coupling[p] * MHZ_IN_GHZ
            if g == 0:
                continue
            ph = np.exp(1j * em.phase(p, pair.azimuthal_order))
            A[2 * p, i_s] = -1j * g * np.conj(ph)
            A[2 * p + 1, i_s] = -1j * g * ph
            A[i_s, 2 * p] = -1j * g * ph
            A[i_s, 2 * p + 1] = -1j * g * np.conj(ph)

    if check_stability:
        worst = np.linalg.eigvals(A).real.max()
        if not worst < 0:
            raise SolverError(f"homogeneous system is not stable (max Re eigenvalue {worst:.3g})")
    return LinearSystem(A, d, index, float(laser_frequency), P, active)


def _unpack(model: SystemModel, system: LinearSystem, x: np.ndarray) -> StateAmplitudes:
    P = system.n_pairs
    sigma = np.zeros(len(model.emitters), dtype=complex)
    for k, j in enumerate(system.emitters):
        sigma[j] = x[2 * P + k]
    return StateAmplitudes(x[0:2 * P:2].copy(), x[1:2 * P:2].copy(), sigma, system.laser_frequency)


def solve_linear(system: LinearSystem) -> np.ndarray:
    """Raw solution vector of ``A x = -d`` with a residual check."""
    rhs = -system.drive
    if not np.any(rhs):
        return np.zeros_like(rhs)
    try:
        x = np.linalg.solve(system.matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError("singular steady-state matrix") from exc
    res = np.linalg.norm(system.matrix @ x - rhs)
    scale = np.linalg.norm(system.matrix, ord=np.inf) * np.linalg.norm(x) + np.linalg.norm(rhs)
    if not res <= 1e4 * np.finfo(float).eps * scale:
        raise SolverError(f"steady-state residual too large ({res:.3g})")
    return x


def solve_steady_state(model: SystemModel, laser_frequency: float | None = None,
                       s_in: complex = 1.0) -> StateAmplitudes:
    """Steady state at ``laser_frequency`` [THz] (default: the drive origin)."""
    if laser_frequency is None:
        laser_frequency = model.drive.origin
    system = assemble_linear_system(model, laser_frequency, s_in)
    return _unpack(model, system, solve_linear(system))


def solve_grid(model: SystemModel, s_in: complex = 1.0) -> tuple[np.ndarray, LinearSystem]:
    """Solution vectors for every point of the drive grid, shape ``(K, n)``."""
    base = assemble_linear_system(model, model.drive.origin, s_in)
    det = np.asarray(model.drive.detuning)
    mats = base.matrix[None, :, :] + 1j * det[:, None, None] * np.eye(base.dim)[None]
    rhs = np.broadcast_to(-base.drive, (len(det), base.dim))
    try:
        x = np.linalg.solve(mats, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SolverError("singular steady-state matrix on the drive grid") from exc
    return x, base


def output_amplitudes(model: SystemModel, a: np.ndarray, b: np.ndarray, s_in: complex = 1.0,
                      ports: Iterable[str] = OUTPUT_PORTS) -> dict[str, np.ndarray]:
    """Port amplitudes from cavity amplitudes ``a``, ``b`` of shape ``(..., P)``."""
    k1 = np.sqrt([p.external_coupling[0] for p in model.mode_pairs])
    k2 = np.sqrt([p.external_coupling[1] for p in model.mode_pairs])
    a = np.asarray(a)
    b = np.asarray(b)
    s = s_in * np.ones(a.shape[:-1], dtype=complex)
    reflection = -(b @ k1)
    topo = model.topology
    reference = topo.reference_amplitude * np.exp(1j * topo.reference_phase) * s
    out = {}
    for port in ports:
        port = canonical_port(port)
        if port == "input":
            out[port] = s
        elif port == "transmission":
            out[port] = s - a @ k1
        elif port == "reflection":
            out[port] = reflection
        elif port == "drop":
            out[port] = -(a @ k2)
        elif port == "add":
            out[port] = -(b @ k2)
        elif port == "interferometer_1":
            out[port] = (reference + reflection) / math.sqrt(2)
        elif port == "interferometer_2":
            out[port] = (reference - reflection) / math.sqrt(2)
    return out


def port_spectrum(model: SystemModel, ports: Sequence[str] = ("drop", "add", "transmission"),
                  s_in: complex = 1.0) -> PortSpectra:
    """Output amplitudes on the model's drive grid.

    Raises
    ------
    PortError
        If a port name is unknown.
    """
    names = [canonical_port(p) for p in ports]
    if not names:
        raise PortError("no ports requested")
    x, base = solve_grid(model, s_in)
    P = base.n_pairs
    amps = output_amplitudes(model, x[:, 0:2 * P:2], x[:, 1:2 * P:2], s_in, names)
    return PortSpectra(model.drive.frequencies, np.asarray(model.drive.detuning), amps)


def power_balance(model: SystemModel, state: StateAmplitudes, s_in: complex = 1.0) -> dict[str, float]:
    """Output power per real and virtual channel.

    Virtual channels are the intrinsic loss of each mode pair and the
    free-space decay of each emitter.  They sum to ``|s_in|**2``.
    """
    amps = output_amplitudes(model, state.a[None], state.b[None], s_in,
                             ("transmission", "reflection", "drop", "add"))
    out = {k: float(abs(v[0]) ** 2) for k, v in amps.items()}
    for p, pair in enumerate(model.mode_pairs):
        out[f"intrinsic_{p}"] = pair.intrinsic_loss * float(abs(state.a[p]) ** 2 + abs(state.b[p]) ** 2)
    for j, em in enumerate(model.emitters):
        out[f"emitter_{j}"] = em.decoherence_rate * MHZ_IN_GHZ * float(abs(state.sigma[j]) ** 2)
    return out


# --------------------------------------------------------------------------
# derived views

def intracavity_field(state: StateAmplitudes, pair: int, azimuth: np.ndarray,
                      azimuthal_order: int) -> dict[str, object]:
    """Field ``a e^{im phi} + b e^{-im phi}`` around the rim of one mode pair."""
    a, b = state.a[pair], state.b[pair]
    azimuth = np.asarray(azimuth, dtype=float)
    f = a * np.exp(1j * azimuthal_order * azimuth) + b * np.exp(-1j * azimuthal_order * azimuth)
    norm = abs(a) ** 2 + abs(b) ** 2
    vis = 2 * abs(a) * abs(b) / norm if norm > 0 else 0.0
    return {"field": f, "visibility": float(vis), "node": float(azimuth[np.argmin(np.abs(f))])}


def standing_wave_visibility(state: StateAmplitudes, pair: int = 0) -> float:
    a, b = abs(state.a[pair]), abs(state.b[pair])
    norm = a ** 2 + b ** 2
    return float(2 * a * b / norm) if norm > 0 else 0.0


def cavity_detuning(model: SystemModel, j: int) -> float:
    """Emitter ``j`` minus fundamental resonance [GHz]."""
    return (model.emitter_frequency(j) - _fundamental(model).center_frequency) * THZ_IN_GHZ


def _fundamental(model: SystemModel):
    for p in model.mode_pairs:
        if p.label == "fundamental":
            return p
    return model.mode_pairs[0]


def at_cavity_detuning(model: SystemModel, j: int, detuning: float) -> SystemModel:
    """Shift the resonator so that emitter ``j`` sits ``detuning`` GHz above it."""
    return model.shift_cavity(cavity_detuning(model, j) - detuning)


def effective_emitter_matrix(model: SystemModel, laser_frequency: float) -> tuple[np.ndarray, tuple[int, ...]]:
    """Emitter evolution matrix after eliminating all cavity rows [GHz].

    Returns the ``N x N`` matrix (active emitters only) and the emitter
    indices its rows belong to.
    """
    system = assemble_linear_system(model, laser_frequency, check_stability=False)
    A = system.matrix
    c, e = system.cavity_rows, system.emitter_rows
    Acc = A[np.ix_(c, c)]
    eff = A[np.ix_(e, e)] - A[np.ix_(e, c)] @ np.linalg.solve(Acc, A[np.ix_(c, e)])
    return eff, system.emitters


def self_energy(model: SystemModel, j: int, laser_frequency: float | None = None) -> complex:
    """Cavity self-energy of emitter ``j`` alone [GHz], evaluated at its own frequency."""
    em = model.emitters[j]
    single = model.with_emitters([em])
    if laser_frequency is None:
        laser_frequency = model.emitter_frequency(j)
    if not any(g > 0 for g in em.coupling):
        return 0j
    eff, _ = effective_emitter_matrix(single, laser_frequency)
    bare = 1j * (laser_frequency - model.emitter_frequency(j)) * THZ_IN_GHZ - em.decoherence_rate * MHZ_IN_GHZ / 2
    return complex(bare - eff[0, 0])


def effective_emitter_response(model: SystemModel, j: int, detuning: float | None = None) -> dict[str, float]:
    """Cavity-modified linewidth and line shift of emitter ``j`` [MHz].

    ``detuning`` is emitter minus fundamental resonance [GHz]; the resonator
    is moved to realise it (emitter parameters stay fixed).  ``None`` keeps
    the model as is.
    """
    if not 0 <= j < len(model.emitters):
        raise IndexError(f"no emitter {j}")
    if detuning is not None:
        model = at_cavity_detuning(model, j, detuning)
    sigma = self_energy(model, j)
    em = model.emitters[j]
    return {
        "linewidth": em.decoherence_rate + 2 * sigma.real / MHZ_IN_GHZ,
        "lamb_shift": sigma.imag / MHZ_IN_GHZ,
        "purcell_rate": 2 * sigma.real / MHZ_IN_GHZ,
    }


def coupling_efficiency(model: SystemModel, j: int, detuning: float | None = None) -> float:
    """Fraction of the emitter's decay routed into the resonator."""
    r = effective_emitter_response(model, j, detuning)
    return r["purcell_rate"] / r["linewidth"]


def calibrate_coupling(model: SystemModel, j: int, *, linewidth: float | None = None,
                       beta: float | None = None) -> SystemModel:
    """Rescale emitter ``j``'s couplings to hit a target at the current detuning.

    Give either the cavity-enhanced ``linewidth`` [MHz] or the coupling
    efficiency ``beta``.  The ratio between couplings to different mode pairs
    is kept; an uncoupled emitter is first given unit coupling to the
    fundamental pair.
    """
    if (linewidth is None) == (beta is None):
        raise ValueError("give exactly one of linewidth or beta")
    em = model.emitters[j]
    if not any(g > 0 for g in em.coupling):
        k = model.mode_pairs.index(_fundamental(model))
        em = replace(em, coupling=tuple(1.0 if p == k else 0.0 for p in range(len(model.mode_pairs))))
    emitters = list(model.emitters)
    emitters[j] = em
    trial = model.with_emitters(emitters)
    rate = effective_emitter_response(trial, j)["purcell_rate"]
    base = em.decoherence_rate
    if linewidth is not None:
        if linewidth < base:
            raise ValueError(f"target linewidth {linewidth} is below the uncoupled value {base}")
        target = linewidth - base
    else:
        if not 0 <= beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        target = beta * base / (1 - beta)
    scale = math.sqrt(target / rate)
    emitters[j] = replace(em, coupling=tuple(g * scale for g in em.coupling))
    return model.with_emitters(emitters)


# --------------------------------------------------------------------------
# verification oracle

def time_domain_oracle(model: SystemModel, laser_frequency: float, t_end: float | None = None,
                       tol: float = 1e-6, s_in: complex = 1.0, method: str = "DOP853",
                       rtol: float = 1e-10) -> StateAmplitudes:
    """Integrate the equations of motion from the empty state until settled.

    The real form of the system is integrated with ``scipy.integrate.solve_ivp``
    (an explicit 8th-order Runge-Kutta by default; pass ``method="Radau"``
    for stiff models with widely separated rates).  ``t_end`` defaults to 25
    time constants of the slowest mode.

    Raises
    ------
    OracleError
        If the integrator fails or the relative drift ``|dx/dt| / (rate |x|)``
        at ``t_end`` exceeds ``tol``.
    """
    system = assemble_linear_system(model, laser_frequency, s_in)
    A, d = system.matrix, system.drive
    n = system.dim
    if not np.any(d):
        return _unpack(model, system, np.zeros(n, dtype=complex))
    rates = -np.linalg.eigvals(A).real
    slow = rates.min()
    if t_end is None:
        t_end = 25.0 / slow
    J = np.block([[A.real, -A.imag], [A.imag, A.real]])
    f = np.concatenate([d.real, d.imag])

    extra = {"jac": J} if method in ("Radau", "BDF") else {}
    sol = solve_ivp(lambda t, y: J @ y + f, (0.0, t_end), np.zeros(2 * n), method=method,
                    rtol=rtol, atol=1e-14 * np.abs(f).max(), **extra)
    if not sol.success:
        raise OracleError(sol.message)
    y = sol.y[:, -1]
    x = y[:n] + 1j * y[n:]
    slope = np.linalg.norm(A @ x + d)
    drift = slope / (slow * np.linalg.norm(x))
    if drift > tol:
        raise OracleError(f"not settled at t={t_end:.3g}: residual slope {slope:.3g} (relative {drift:.3g})")
    return _unpack(model, system, x)
