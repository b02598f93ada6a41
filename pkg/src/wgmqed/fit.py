"""
Resonator background and complex Fano line fitting.

A molecular line on top of a resonator profile ``f_r`` is modelled as::

    f(x) = f_r(x) * |1 - A exp(i phi) / (1 + 2i (x - x_m) / gamma)|**2

with ``x`` the laser detuning from a declared origin [GHz].  Fits run in
detuning space; results are reported with ``x_m`` as an absolute frequency
[THz] and ``gamma`` in MHz.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .lm import FitError, LMResult, lm_minimize
from .model import MHZ_IN_GHZ, THZ_IN_GHZ

__all__ = [
    "BackgroundModel",
    "FanoFitResult",
    "FitError",
    "Spectrum",
    "UnderResolvedWarning",
    "fano_factor",
    "fano_jacobian",
    "fano_model",
    "fit_background",
    "fit_fano",
    "read_spectrum_csv",
    "crossing_point",
    "track_waterfall",
    "wrap_phase",
]


class UnderResolvedWarning(UserWarning):
    """Fitted linewidth is comparable to the grid spacing."""


@dataclass(frozen=True)
class Spectrum:
    """Intensity on a detuning grid [GHz] relative to ``origin`` [THz]."""

    detuning: np.ndarray
    intensity: np.ndarray
    origin: float = 0.0
    sigma: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.detuning, dtype=float)
        y = np.asarray(self.intensity, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("detuning and intensity must be 1-d arrays of equal length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("detuning grid must be strictly increasing")
        object.__setattr__(self, "detuning", x)
        object.__setattr__(self, "intensity", y)
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float)
            if s.shape != x.shape or np.any(s <= 0):
                raise ValueError("sigma must be positive and match the grid")
            object.__setattr__(self, "sigma", s)

    @classmethod
    def from_frequency(cls, frequency_thz, intensity, origin: float | None = None, sigma=None) -> "Spectrum":
        f = np.asarray(frequency_thz, dtype=float)
        if origin is None:
            origin = float(f[0])
        return cls((f - origin) * THZ_IN_GHZ, intensity, origin, sigma)

    @property
    def frequency(self) -> np.ndarray:
        return self.origin + self.detuning / THZ_IN_GHZ

    def scaled(self, factor: float) -> "Spectrum":
        sigma = None if self.sigma is None else self.sigma * factor
        return replace(self, intensity=self.intensity * factor, sigma=sigma)


def read_spectrum_csv(path: str | Path, origin: float | None = None, port: str | None = None,
                      step: int | None = None) -> Spectrum:
    """Read ``frequency_THz`` or ``detuning_GHz``, ``intensity`` and optional ``sigma``.

    A detuning column needs ``origin``; with a frequency column the origin
    defaults to the first frequency.  Files with a ``port`` column (simulator
    output) are filtered to ``port``, which may be omitted when only one port
    is present; likewise ``step`` selects one sweep step.
    """
    rows = list(csv.DictReader(io.StringIO(Path(path).read_text())))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    cols = rows[0].keys()
    for key, want in (("port", port), ("step", step)):
        if key not in cols:
            continue
        present = sorted({r[key] for r in rows})
        if want is None:
            if len(present) > 1:
                raise ValueError(f"{path}: several values in column '{key}' ({', '.join(present)}); choose one")
            continue
        rows = [r for r in rows if r[key] == str(want)]
        if not rows:
            raise ValueError(f"{path}: no rows with {key} = {want}")
    if "intensity" not in cols:
        raise ValueError(f"{path}: missing 'intensity' column")
    y = np.array([float(r["intensity"]) for r in rows])
    sigma = np.array([float(r["sigma"]) for r in rows]) if "sigma" in cols else None
    if "frequency_THz" in cols:
        f = np.array([float(r["frequency_THz"]) for r in rows])
        return Spectrum.from_frequency(f, y, origin, sigma)
    if "detuning_GHz" in cols:
        if origin is None:
            raise ValueError(f"{path}: a detuning_GHz column needs a declared origin")
        return Spectrum(np.array([float(r["detuning_GHz"]) for r in rows]), y, origin, sigma)
    raise ValueError(f"{path}: need a frequency_THz or detuning_GHz column")


def wrap_phase(phi: float) -> float:
    """Map to (-pi, pi]."""
    return float(math.pi - (math.pi - phi) % (2 * math.pi))


# --------------------------------------------------------------------------
# line shapes

def fano_factor(x, center, width, amplitude, phase):
    """``|1 - A e^{i phi} / (1 + 2i (x - center) / width)|**2``."""
    u = 2 * (np.asarray(x) - center) / width
    z = 1 - amplitude * np.exp(1j * phase) / (1 + 1j * u)
    return z.real ** 2 + z.imag ** 2


def fano_factor_jacobian(x, center, width, amplitude, phase) -> np.ndarray:
    """Derivatives of :func:`fano_factor` w.r.t. (center, width, amplitude, phase)."""
    x = np.asarray(x, dtype=float)
    u = 2 * (x - center) / width
    L = 1 / (1 + 1j * u)
    e = np.exp(1j * phase)
    z = 1 - amplitude * e * L
    dL_du = -1j * L ** 2
    dz = [
        -amplitude * e * dL_du * (-2 / width),
        -amplitude * e * dL_du * (-u / width),
        -e * L,
        -1j * amplitude * e * L,
    ]
    return np.stack([2 * (np.conj(z) * d).real for d in dz], axis=-1)


@dataclass(frozen=True)
class BackgroundModel:
    """Affine baseline plus up to two Lorentzian resonances.

    ``resonances`` holds ``(center [GHz], width [GHz], height)`` per
    component; negative heights are dips.  Detunings are relative to
    ``origin`` [THz].
    """

    offset: float
    slope: float = 0.0
    resonances: tuple[tuple[float, float, float], ...] = ()
    origin: float = 0.0

    def __post_init__(self):
        if len(self.resonances) > 2:
            raise ValueError("at most two resonances")
        object.__setattr__(self, "resonances", tuple(tuple(float(v) for v in r) for r in self.resonances))

    @property
    def params(self) -> np.ndarray:
        return np.array([self.offset, self.slope, *[v for r in self.resonances for v in r]])

    def with_params(self, p: Sequence[float]) -> "BackgroundModel":
        p = list(p)
        res = tuple(tuple(p[2 + 3 * k: 5 + 3 * k]) for k in range(len(self.resonances)))
        res = tuple((c, abs(w), h) for c, w, h in res)
        return replace(self, offset=p[0], slope=p[1], resonances=res)

    def __call__(self, x) -> np.ndarray:
        return _background_eval(np.asarray(x, dtype=float), self.params)

    def jacobian(self, x) -> np.ndarray:
        return _background_jac(np.asarray(x, dtype=float), self.params)

    def scaled(self, factor: float) -> "BackgroundModel":
        """Same shape with every intensity-like parameter multiplied by ``factor``."""
        res = tuple((c, w, h * factor) for c, w, h in self.resonances)
        return replace(self, offset=self.offset * factor, slope=self.slope * factor, resonances=res)

    def shifted(self, origin: float) -> "BackgroundModel":
        """Same curve expressed relative to another origin [THz]."""
        dx = (self.origin - origin) * THZ_IN_GHZ
        res = tuple((c + dx, w, h) for c, w, h in self.resonances)
        return replace(self, offset=self.offset - self.slope * dx, resonances=res, origin=origin)

    @classmethod
    def from_dict(cls, doc: dict) -> "BackgroundModel":
        """Inverse of :meth:`to_dict`."""
        res = tuple((r["center_ghz"], r["width_ghz"], r["height"]) for r in doc.get("resonances", ()))
        return cls(float(doc["offset"]), float(doc.get("slope_per_ghz", 0.0)), res, float(doc.get("origin_thz", 0.0)))

    def to_dict(self) -> dict:
        return {
            "origin_thz": self.origin,
            "offset": self.offset,
            "slope_per_ghz": self.slope,
            "resonances": [{"center_ghz": c, "width_ghz": w, "height": h} for c, w, h in self.resonances],
        }


def _background_eval(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    y = p[0] + p[1] * x
    for k in range((len(p) - 2) // 3):
        c, w, h = p[2 + 3 * k: 5 + 3 * k]
        y = y + h / (1 + (2 * (x - c) / w) ** 2)
    return y


def _background_jac(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    cols = [np.ones_like(x), x]
    for k in range((len(p) - 2) // 3):
        c, w, h = p[2 + 3 * k: 5 + 3 * k]
        v = 2 * (x - c) / w
        den = 1 + v ** 2
        cols += [h * (4 * v / w) / den ** 2, h * 2 * v ** 2 / (w * den ** 2), 1 / den]
    return np.stack(cols, axis=-1)


def fano_model(x, params: Sequence[float], background: BackgroundModel) -> np.ndarray:
    """Full line shape; ``params`` = (center, width, amplitude, phase) in GHz/rad."""
    return background(x) * fano_factor(x, *params)


def fano_jacobian(x, params: Sequence[float], background: BackgroundModel, cofit=False) -> np.ndarray:
    """Analytic Jacobian of :func:`fano_model`.

    Background columns are appended for the parameters selected by
    ``cofit`` (see :func:`background_free_params`).
    """
    x = np.asarray(x, dtype=float)
    bg = background(x)
    F = fano_factor(x, *params)
    J = bg[:, None] * fano_factor_jacobian(x, *params)
    free = background_free_params(background, cofit)
    if free.size:
        J = np.hstack([J, F[:, None] * background.jacobian(x)[:, free]])
    return J


def background_free_params(background: BackgroundModel, cofit) -> np.ndarray:
    """Indices into ``background.params`` that a co-fit varies.

    ``False`` holds the background fixed, ``True`` or ``"all"`` frees every
    parameter, ``"linear"`` frees the baseline and the resonance heights
    (centres and widths stay put, which keeps narrow windows well posed).
    """
    n = len(background.params)
    if cofit in (False, None, "none"):
        return np.arange(0)
    if cofit in (True, "all"):
        return np.arange(n)
    if cofit == "linear":
        return np.array([0, 1] + [4 + 3 * k for k in range(len(background.resonances))])
    raise ValueError(f"unknown co-fit mode {cofit!r}")


# --------------------------------------------------------------------------
# background

def _half_width(x: np.ndarray, dev: np.ndarray, k: int) -> float:
    half = abs(dev[k]) / 2
    above = np.abs(dev) >= half
    lo = k
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = k
    while hi < len(x) - 1 and above[hi + 1]:
        hi += 1
    return max(x[hi] - x[lo], 2 * (x[1] - x[0]))


def fit_background(spectrum: Spectrum, init: BackgroundModel | None = None, max_resonances: int = 2,
                   mask: np.ndarray | tuple[float, float] | None = None, max_iter: int = 500,
                   rel_threshold: float = 1e-3) -> BackgroundModel:
    """Least-squares resonator background.

    Without ``init`` the number of resonances is chosen automatically: none
    if the spectrum deviates from a straight line by less than
    ``rel_threshold`` of its scale, otherwise one, and a second if the
    one-resonance residual still exceeds the threshold.  ``mask`` excludes
    points (boolean array, ``True`` = excluded, or a ``(lo, hi)`` detuning
    window, e.g. around a molecular line).

    Raises
    ------
    FitError
        If the minimizer fails to converge.
    """
    scale = _intensity_scale(spectrum)
    unit_init = None if init is None else init.scaled(1 / scale)
    model = _fit_background_unit(spectrum.scaled(1 / scale), unit_init, max_resonances, mask, max_iter,
                                 rel_threshold)
    return model.scaled(scale)


def _intensity_scale(spectrum: Spectrum) -> float:
    """Largest |intensity|; fits run on data divided by it so results do not depend on intensity units."""
    scale = float(np.max(np.abs(spectrum.intensity)))
    return scale if scale > 0 and math.isfinite(scale) else 1.0


def _fit_background_unit(spectrum: Spectrum, init: BackgroundModel | None, max_resonances: int,
                         mask, max_iter: int, rel_threshold: float) -> BackgroundModel:
    x, y = spectrum.detuning, spectrum.intensity
    keep = np.ones_like(x, dtype=bool)
    if mask is not None:
        if isinstance(mask, tuple):
            keep = ~((x >= mask[0]) & (x <= mask[1]))
        else:
            keep = ~np.asarray(mask, dtype=bool)
    xs, ys = x[keep], y[keep]
    w = 1 / spectrum.sigma[keep] if spectrum.sigma is not None else np.ones_like(xs)

    def run(model: BackgroundModel) -> tuple[BackgroundModel, LMResult]:
        res = lm_minimize(lambda p: w * (_background_eval(xs, p) - ys), model.params,
                          jac=lambda p: w[:, None] * _background_jac(xs, p), max_iter=max_iter)
        if not res.converged:
            raise FitError(f"background fit did not converge: {res.message}", res.residual_norm)
        return model.with_params(res.params), res

    if init is not None:
        return run(replace(init, origin=spectrum.origin))[0]

    scale = np.max(np.abs(ys))
    line = np.polyfit(xs, ys, 1)
    model, res = run(BackgroundModel(line[1], line[0], (), spectrum.origin))
    n_edge = max(1, len(xs) // 20)
    for _ in range(max_resonances):
        dev = ys - model(xs)
        if np.max(np.abs(dev)) <= rel_threshold * scale:
            break
        if not model.resonances:
            # baseline through the window edges, so a resonance is not half-absorbed by the line
            x_ends = np.r_[xs[:n_edge], xs[-n_edge:]]
            y_ends = np.r_[ys[:n_edge], ys[-n_edge:]]
            slope, offset = np.polyfit(x_ends, y_ends, 1)
            base = BackgroundModel(offset, slope, (), spectrum.origin)
            dev = ys - base(xs)
        else:
            base = model
        k = int(np.argmax(np.abs(dev)))
        width = _half_width(xs, dev, k)
        trial = replace(base, resonances=base.resonances + ((xs[k], width, dev[k]),))
        try:
            trial, res_t = run(trial)
        except FitError:
            break
        if res_t.cost >= res.cost:
            break
        model, res = trial, res_t
    return model


# --------------------------------------------------------------------------
# Fano fit

@dataclass(frozen=True)
class FanoFitResult:
    """Fitted molecular line.

    ``frequency`` [THz], ``linewidth`` [MHz] (FWHM), ``amplitude`` >= 0 and
    ``phase`` in (-pi, pi].  ``errors`` holds one-sigma uncertainties in the
    same units.
    """

    frequency: float
    linewidth: float
    amplitude: float
    phase: float
    errors: dict[str, float]
    residual_norm: float
    iterations: int
    converged: bool
    covariance: np.ndarray
    background: BackgroundModel
    singular: bool = False
    messages: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "parameters": {
                "frequency_thz": self.frequency,
                "linewidth_mhz": self.linewidth,
                "amplitude": self.amplitude,
                "phase_rad": self.phase,
            },
            "errors": dict(self.errors),
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "singular_covariance": self.singular,
            "background": self.background.to_dict(),
            "messages": list(self.messages),
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(_round_floats(self.to_dict()), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _round_floats(obj, digits: int = 12):
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}") if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, digits) for v in obj]
    return obj


def initial_guess(spectrum: Spectrum, background: BackgroundModel) -> tuple[float, float, float, float]:
    """(center, width [GHz], amplitude, phase) from the residual peak."""
    x = spectrum.detuning
    ratio = spectrum.intensity / background(x)
    dev = ratio - 1
    k = int(np.argmax(np.abs(dev)))
    half = np.abs(dev) >= abs(dev[k]) / 2
    lo, hi = k, k
    while lo > 0 and half[lo - 1]:
        lo -= 1
    while hi < len(x) - 1 and half[hi + 1]:
        hi += 1
    wgt = np.abs(dev[lo:hi + 1])
    m2 = np.sum(wgt * (x[lo:hi + 1] - x[k]) ** 2) / np.sum(wgt)
    # second moment of a Lorentzian over its half-maximum core is (4/pi - 1) (w/2)^2
    width = 2 * math.sqrt(m2 / (4 / math.pi - 1)) if m2 > 0 else 0.0
    width = max(width, 2 * float(np.min(np.diff(x))) if len(x) > 1 else 1.0)
    amp = abs(1 - math.sqrt(max(ratio[k], 0.0)))
    return float(x[k]), width, max(amp, 1e-3), math.pi / 2


def _normalized(p: np.ndarray) -> np.ndarray:
    c, w, a, ph = p[:4]
    if w < 0:
        # u -> -u is the same curve with the complex amplitude conjugated
        w, ph = -w, -ph
    if a < 0:
        a, ph = -a, ph + math.pi
    out = p.copy()
    out[:4] = c, w, a, wrap_phase(ph)
    return out


def fit_fano(spectrum: Spectrum, background: BackgroundModel, init: Sequence[float] | None = None,
             cofit_background: bool | str = False, max_iter: int = 500,
             phase_starts: Sequence[float] | None = None) -> FanoFitResult:
    """Fit one complex Fano line on top of ``background``.

    Parameters
    ----------
    spectrum : Spectrum
    background : BackgroundModel
        Resonator profile; held fixed unless ``cofit_background``.
    cofit_background : bool or {"all", "linear"}
        Which background parameters are refined together with the line.
    init : sequence, optional
        (center [GHz detuning], width [GHz], amplitude, phase).  Estimated
        from the data otherwise.
    phase_starts : sequence of float, optional
        Extra starting phases tried after the initial one; the lowest cost
        wins.  Defaults to the four quadrants.

    Raises
    ------
    FitError
        If no start converges.
    """
    scale = _intensity_scale(spectrum)
    unit = _fit_fano_unit(spectrum.scaled(1 / scale), background.scaled(1 / scale), init, cofit_background,
                          max_iter, phase_starts)
    # intensity-like background parameters carry the scale; line parameters are dimensionless or frequencies
    free = background_free_params(unit.background, cofit_background)
    linear = np.array([k < 2 or (k - 2) % 3 == 2 for k in range(len(unit.background.params))], dtype=bool)
    d = np.concatenate([np.ones(4), np.where(linear[free], scale, 1.0)])
    return replace(unit, background=unit.background.scaled(scale), residual_norm=unit.residual_norm * scale,
                   covariance=unit.covariance * np.outer(d, d))


def _fit_fano_unit(spectrum: Spectrum, background: BackgroundModel, init, cofit_background, max_iter: int,
                   phase_starts) -> FanoFitResult:
    x, y = spectrum.detuning, spectrum.intensity
    background = background.shifted(spectrum.origin) if background.origin != spectrum.origin else background
    w = 1 / spectrum.sigma if spectrum.sigma is not None else np.ones_like(x)
    guess = tuple(init) if init is not None else initial_guess(spectrum, background)
    starts = [guess[3]] + list(phase_starts if phase_starts is not None else (0.0, math.pi, -math.pi / 2))
    free = background_free_params(background, cofit_background)
    base = background.params

    def split(p):
        if not free.size:
            return p[:4], background
        full = base.copy()
        full[free] = p[4:]
        return p[:4], background.with_params(full)

    def resid(p):
        fp, bg = split(p)
        return w * (fano_model(x, fp, bg) - y)

    def jac(p):
        fp, bg = split(p)
        return w[:, None] * fano_jacobian(x, fp, bg, cofit_background)

    best = None
    for ph in starts:
        p0 = np.array([guess[0], guess[1], guess[2], ph] + list(base[free]))
        try:
            res = lm_minimize(resid, p0, jac=jac, max_iter=max_iter)
        except FloatingPointError:
            continue
        if best is None or res.cost < best.cost * (1 - 1e-12):
            best = res
    if best is None or not best.converged:
        raise FitError("Fano fit did not converge", float("nan") if best is None else best.residual_norm)

    p = _normalized(best.params)
    fp, bg = split(p)
    res = best
    if not np.array_equal(p, best.params):
        # re-derive the covariance at the normalized point (same curve)
        J = jac(p)
        s2 = 2 * res.cost / max(len(x) - len(p), 1)
        res = replace(res, covariance=s2 * np.linalg.pinv(J.T @ J), jacobian=J)
    err = res.stderr
    messages = []
    spacing = float(np.min(np.diff(x))) if len(x) > 1 else float("inf")
    if fp[1] < 2 * spacing:
        msg = f"fitted linewidth {fp[1] / MHZ_IN_GHZ:.3g} MHz is below two grid steps ({spacing / MHZ_IN_GHZ:.3g} MHz)"
        warnings.warn(msg, UnderResolvedWarning, stacklevel=3)
        messages.append(msg)
    return FanoFitResult(
        frequency=spectrum.origin + fp[0] / THZ_IN_GHZ,
        linewidth=fp[1] / MHZ_IN_GHZ,
        amplitude=float(fp[2]),
        phase=float(fp[3]),
        errors={
            "frequency_thz": float(err[0] / THZ_IN_GHZ),
            "linewidth_mhz": float(err[1] / MHZ_IN_GHZ),
            "amplitude": float(err[2]),
            "phase_rad": float(err[3]),
        },
        residual_norm=res.residual_norm,
        iterations=res.iterations,
        converged=res.converged,
        covariance=res.covariance,
        background=bg,
        singular=res.singular,
        messages=tuple(messages),
    )


# --------------------------------------------------------------------------
# waterfall tracking

@dataclass(frozen=True)
class WaterfallTrack:
    """Per-step line centres [THz] for each tracked molecule.

    ``frequency[k, i]`` is NaN where molecule ``i`` was lost at step ``k``;
    ``merged[k, i]`` marks steps where it shares one unresolved dip with
    another molecule.
    """

    steps: np.ndarray
    frequency: np.ndarray
    merged: np.ndarray

    def to_rows(self) -> list[dict]:
        rows = []
        for k, s in enumerate(self.steps):
            for i in range(self.frequency.shape[1]):
                f = self.frequency[k, i]
                rows.append({"step": float(s), "molecule": i, "frequency_thz": None if np.isnan(f) else float(f),
                             "merged": bool(self.merged[k, i])})
        return rows


def _find_dips(x: np.ndarray, signal: np.ndarray, threshold: float) -> list[int]:
    """Indices of local maxima of ``signal`` above ``threshold``."""
    from scipy.signal import find_peaks

    peaks, props = find_peaks(signal, height=threshold)
    order = np.argsort(props["peak_heights"])[::-1]
    return [int(peaks[i]) for i in order]


def _refine_center(spectrum: Spectrum, background: BackgroundModel, center: float, width: float) -> float:
    x = spectrum.detuning
    win = np.abs(x - center) <= 3 * width
    if win.sum() < 7:
        return center
    sub = Spectrum(x[win], spectrum.intensity[win], spectrum.origin)
    try:
        r = fit_fano(sub, background, init=(center, width, 0.3, 0.0), phase_starts=(math.pi / 2, -math.pi / 2))
    except FitError:
        return center
    c = (r.frequency - spectrum.origin) * THZ_IN_GHZ
    return c if abs(c - center) <= width else center


def track_waterfall(spectra: Sequence[Spectrum], n_molecules: int, init: Sequence[float] | None = None,
                    background: BackgroundModel | None = None, steps: Sequence[float] | None = None,
                    linewidth: float = 0.1, max_jump: float | None = None,
                    threshold: float = 0.05) -> WaterfallTrack:
    """Follow ``n_molecules`` lines through a sequence of spectra.

    Parameters
    ----------
    spectra : sequence of Spectrum
        One spectrum per sweep step, sharing a grid and origin.
    n_molecules : int
    init : sequence of float, optional
        Starting detunings [GHz] of the molecules at the first step; the
        strongest dips are used otherwise.
    background : BackgroundModel, optional
        Molecule-free profile; fitted to the first spectrum with the lines
        masked out if omitted.
    steps : sequence of float, optional
        Sweep coordinate (e.g. voltage) for each spectrum.
    linewidth : float
        Typical line FWHM [GHz]; sets the refinement window.
    max_jump : float, optional
        Largest accepted move between consecutive steps [GHz], default
        ``5 * linewidth``.
    threshold : float
        Minimum relative deviation from the background counted as a line.

    Each molecule's position is predicted from its last two steps (constant
    velocity) and matched to the dips within ``max_jump`` of the
    prediction.  With at least as many dips as molecules the assignment is
    one-to-one and minimises the total distance; with fewer dips a dip may be
    claimed by several molecules, which marks them as merged and gives all
    of them its centre.  A molecule without a dip in range gets NaN.
    """
    from scipy.optimize import linear_sum_assignment

    if not spectra:
        raise ValueError("no spectra")
    grid = spectra[0].detuning
    for s in spectra:
        if s.detuning.shape != grid.shape or not np.allclose(s.detuning, grid, rtol=0, atol=1e-12):
            raise ValueError("waterfall spectra must share one grid")
    if max_jump is None:
        max_jump = 5 * linewidth
    if background is None:
        background = fit_background(spectra[0], max_resonances=2, mask=_line_mask(spectra[0], linewidth))
    steps = np.arange(len(spectra), dtype=float) if steps is None else np.asarray(steps, dtype=float)

    freq = np.full((len(spectra), n_molecules), np.nan)
    merged = np.zeros((len(spectra), n_molecules), dtype=bool)
    last = None if init is None else np.array(init, dtype=float)
    velocity = np.zeros(n_molecules)

    for k, spec in enumerate(spectra):
        signal = np.abs(spec.intensity / background(grid) - 1)
        dips = np.array([grid[i] for i in _find_dips(grid, signal, threshold)])
        assign: dict[int, float | None] = {i: None for i in range(n_molecules)}
        if last is None:
            chosen = sorted(dips[:n_molecules].tolist())
            last = np.array(chosen + [np.nan] * (n_molecules - len(chosen)))
            assign = {i: (c if not np.isnan(c) else None) for i, c in enumerate(last)}
        elif dips.size:
            predicted = last + velocity
            known = [i for i in range(n_molecules) if not np.isnan(predicted[i])]
            cost = np.abs(predicted[known][:, None] - dips[None, :]) if known else np.zeros((0, dips.size))
            if known and dips.size >= len(known):
                rows, cols = linear_sum_assignment(cost)
                pairs = zip(rows, cols)
            else:
                pairs = ((r, int(np.argmin(cost[r]))) for r in range(len(known)))
            for r, c in pairs:
                if cost[r, c] <= max_jump:
                    assign[known[r]] = float(dips[c])
        claimed: dict[float, list[int]] = {}
        for i, c in assign.items():
            if c is not None:
                claimed.setdefault(c, []).append(i)
        previous = last.copy()
        for c, owners in claimed.items():
            centre = _refine_center(spec, background, c, linewidth)
            for i in owners:
                freq[k, i] = spec.origin + centre / THZ_IN_GHZ
                merged[k, i] = len(owners) > 1
                last[i] = centre
        if k > 0:
            moved = ~np.isnan(freq[k]) & ~np.isnan(freq[k - 1]) & ~merged[k] & ~merged[k - 1]
            velocity = np.where(moved, last - previous, velocity)
    return WaterfallTrack(steps, freq, merged)


def _line_mask(spectrum: Spectrum, linewidth: float) -> np.ndarray:
    """Mask narrow features (much narrower than the resonator) before a background fit."""
    from scipy.ndimage import median_filter

    x, y = spectrum.detuning, spectrum.intensity
    step = float(np.min(np.diff(x)))
    size = max(3, int(round(6 * linewidth / step)) | 1)
    smooth = median_filter(y, size=size, mode="nearest")
    dev = np.abs(y / smooth - 1)
    mask = dev > 0.01
    grow = max(1, int(round(3 * linewidth / step)))
    return np.convolve(mask, np.ones(2 * grow + 1), mode="same") > 0


def crossing_point(steps: np.ndarray, track_a: np.ndarray, track_b: np.ndarray,
                   exclude: np.ndarray | None = None) -> float:
    """Sweep coordinate where straight-line fits of two trajectories intersect.

    ``exclude`` masks steps (e.g. merged ones) out of both fits.
    """
    ok = ~(np.isnan(track_a) | np.isnan(track_b))
    if exclude is not None:
        ok &= ~exclude
    if ok.sum() < 2:
        raise ValueError("need at least two resolved steps")
    ref = float(np.mean(track_a[ok]))
    pa = np.polyfit(steps[ok], track_a[ok] - ref, 1)
    pb = np.polyfit(steps[ok], track_b[ok] - ref, 1)
    if pa[0] == pb[0]:
        raise ValueError("trajectories are parallel")
    return float((pb[1] - pa[1]) / (pa[0] - pb[0]))
