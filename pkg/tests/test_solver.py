import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model
from wgmqed.model import MHZ_IN_GHZ, SystemModel
from wgmqed.presets import bare_model, fundamental_pair, m1_model, molecule
from wgmqed.solver import (
    OUTPUT_PORTS,
    PortError,
    assemble_linear_system,
    calibrate_coupling,
    coupling_efficiency,
    effective_emitter_response,
    intracavity_field,
    port_spectrum,
    power_balance,
    read_spectra_csv,
    self_energy,
    solve_grid,
    solve_steady_state,
    standing_wave_visibility,
    time_domain_oracle,
)


def _balance_error(model, frequency):
    state = solve_steady_state(model, frequency)
    return abs(sum(power_balance(model, state).values()) - 1.0)


# --------------------------------------------------------------------------
# closed forms

def test_bare_resonator_matches_lorentzian():
    det = np.linspace(-80, 80, 401)
    model = bare_model(detuning=det)
    pair = model.mode_pairs[0]
    k1, k2 = pair.external_coupling
    spec = port_spectrum(model, ("drop", "transmission", "add"))
    den = pair.linewidth / 2 - 1j * det
    np.testing.assert_allclose(spec.amplitude["drop"], -math.sqrt(k1 * k2) / den, rtol=1e-12)
    np.testing.assert_allclose(spec.amplitude["transmission"], 1 - k1 / den, rtol=1e-12)
    np.testing.assert_array_equal(spec.amplitude["add"], 0)


def test_preset_transmission_dip_is_forty_percent():
    spec = port_spectrum(bare_model(), ("transmission",))
    assert spec.intensity["transmission"][0] == pytest.approx(0.6, rel=1e-12)


def test_single_emitter_on_resonance_closed_form():
    model = m1_model()
    pair = model.mode_pairs[0]
    beta = coupling_efficiency(model, 0)
    a0 = math.sqrt(pair.external_coupling[0]) / (pair.linewidth / 2)
    state = solve_steady_state(model)
    assert state.a[0] == pytest.approx(a0 * (1 - beta / 2), rel=1e-10)
    assert state.b[0] == pytest.approx(-a0 * beta / 2, rel=1e-10)
    # frozen values of the calibrated M1 model
    assert state.a[0] == pytest.approx(0.08166395, rel=1e-7)
    assert state.b[0] == pytest.approx(-0.04755116, rel=1e-7)
    assert state.sigma[0] == pytest.approx(-1.15203073j, rel=1e-7)


def test_frozen_port_amplitudes_of_m1():
    spec = port_spectrum(m1_model(), ("drop", "add", "transmission", "int1", "int2"))
    frozen = {"drop": -0.1424549050394234, "add": 0.0829484257190932, "transmission": 0.8575450949605766,
              "interferometer_1": 0.7657601755012668, "interferometer_2": 0.6484533868718281}
    for port, value in frozen.items():
        assert spec.amplitude[port][0] == pytest.approx(value, rel=1e-9, abs=1e-12)


def test_linewidth_and_shift_closed_form():
    """Single pair, h = 0: gamma = G + 8 g^2 / kappa * L(delta), shift = 2 g^2 delta / ((k/2)^2 + delta^2)."""
    model = m1_model()
    kappa = model.mode_pairs[0].linewidth
    g = model.emitters[0].coupling[0] * MHZ_IN_GHZ
    for delta in (-300.0, -27.0, -5.0, 0.0, 3.0, 13.5, 100.0):
        r = effective_emitter_response(model, 0, detuning=delta)
        lor = 1 / (1 + (2 * delta / kappa) ** 2)
        assert r["linewidth"] - 33.0 == pytest.approx(8 * g ** 2 / kappa * lor / MHZ_IN_GHZ, rel=1e-9)
        shift = 2 * g ** 2 * delta / ((kappa / 2) ** 2 + delta ** 2)
        assert r["lamb_shift"] == pytest.approx(shift / MHZ_IN_GHZ, rel=1e-9, abs=1e-9)


def test_lamb_shift_is_level_repulsion():
    model = m1_model()
    assert effective_emitter_response(model, 0, detuning=10.0)["lamb_shift"] > 0
    assert effective_emitter_response(model, 0, detuning=-10.0)["lamb_shift"] < 0


def test_emitter_line_centre_follows_lamb_shift():
    """The sigma response peaks at the shifted frequency."""
    model = m1_model()
    far = model.shift_cavity(-10.0)
    shift = effective_emitter_response(far, 0)["lamb_shift"]
    det = np.linspace(-0.3, 0.3, 6001)
    x, system = solve_grid(far.with_detuning(det))
    peak = det[np.argmax(np.abs(x[:, system.index[("sigma", 0)]]))]
    assert peak / MHZ_IN_GHZ == pytest.approx(shift, abs=0.2)


def test_self_energy_zero_without_coupling():
    model = m1_model()
    em = replace(model.emitters[0], coupling=(0.0,))
    assert self_energy(model.with_emitters([em]), 0) == 0


def test_calibration_hits_targets():
    base = bare_model().with_emitters([molecule("x", 404.935, 1)])
    assert effective_emitter_response(calibrate_coupling(base, 0, linewidth=90.0), 0)["linewidth"] == \
        pytest.approx(90.0, rel=1e-9)
    assert coupling_efficiency(calibrate_coupling(base, 0, beta=0.4), 0) == pytest.approx(0.4, rel=1e-9)
    with pytest.raises(ValueError):
        calibrate_coupling(base, 0, linewidth=10.0)
    with pytest.raises(ValueError):
        calibrate_coupling(base, 0)


def test_backscatter_splits_the_doublet():
    h = 40.0
    pair = replace(fundamental_pair(), backscatter=h)
    model = SystemModel((pair,))
    eig = np.linalg.eigvals(assemble_linear_system(model, pair.center_frequency).matrix)
    np.testing.assert_allclose(np.sort(eig.imag), [-h, h], rtol=1e-12)
    np.testing.assert_allclose(eig.real, -pair.linewidth / 2, rtol=1e-12)


def test_well_split_doublet_peaks():
    h = 300.0
    pair = replace(fundamental_pair(), backscatter=h)
    det = np.linspace(-400, 400, 8001)
    model = SystemModel((pair,)).with_detuning(det, origin=pair.center_frequency)
    drop = port_spectrum(model, ("drop",)).intensity["drop"]
    left = det[np.argmax(np.where(det < 0, drop, 0))]
    right = det[np.argmax(np.where(det > 0, drop, 0))]
    assert right - left == pytest.approx(2 * h, rel=2e-3)


def test_visibility_of_travelling_and_standing_waves():
    assert standing_wave_visibility(solve_steady_state(bare_model())) == 0.0
    vis = standing_wave_visibility(solve_steady_state(m1_model()))
    assert vis == pytest.approx(0.8696900801719757, rel=1e-9)
    field = intracavity_field(solve_steady_state(m1_model()), 0, np.linspace(0, 2 * np.pi, 2001), 46)
    assert field["visibility"] == pytest.approx(vis, rel=1e-4)


# --------------------------------------------------------------------------
# errors

def test_port_errors():
    with pytest.raises(PortError):
        port_spectrum(m1_model(), ())
    with pytest.raises(PortError):
        port_spectrum(m1_model(), ("sideways",))


def test_port_aliases():
    spec = port_spectrum(m1_model(), ("int1", "interferometer_2"))
    assert spec.ports == ("interferometer_1", "interferometer_2")


def test_csv_round_trip(tmp_path):
    model = m1_model(detuning=np.linspace(-1, 1, 11))
    spec = port_spectrum(model, ("drop", "add"))
    spec.to_csv(tmp_path / "s.csv")
    back = read_spectra_csv(tmp_path / "s.csv")
    np.testing.assert_allclose(back.amplitude["drop"], spec.amplitude["drop"], rtol=1e-11)
    np.testing.assert_allclose(back.detuning, spec.detuning, atol=1e-12)


# --------------------------------------------------------------------------
# soundness on random models

def test_passivity_on_random_models(rng):
    worst = 0.0
    for _ in range(100):
        model = random_model(rng)
        for f in model.drive.frequencies:
            worst = max(worst, _balance_error(model, f))
    assert worst <= 1e-9


@given(seed=st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60, deadline=None)
def test_passivity_property(seed):
    model = random_model(np.random.default_rng(seed))
    for f in model.drive.frequencies:
        assert _balance_error(model, f) <= 1e-9


def test_time_domain_oracle_on_random_models(rng):
    worst = 0.0
    for _ in range(100):
        model = random_model(rng)
        f = model.drive.frequencies[int(rng.integers(0, 5))]
        ss = solve_steady_state(model, f)
        td = time_domain_oracle(model, f)
        x = np.concatenate([ss.a, ss.b, ss.sigma])
        y = np.concatenate([td.a, td.b, td.sigma])
        worst = max(worst, np.linalg.norm(x - y) / np.linalg.norm(x))
    assert worst <= 1e-6


def test_time_domain_oracle_on_stiff_preset():
    model = m1_model(extended=True)
    ss = solve_steady_state(model)
    td = time_domain_oracle(model, model.drive.origin, method="Radau")
    assert abs(td.sigma[0] - ss.sigma[0]) <= 1e-6 * abs(ss.sigma[0])


def test_zero_coupling_reduces_exactly_to_resonator(rng):
    for _ in range(20):
        model = random_model(rng, max_emitters=3)
        ems = [replace(em, coupling=tuple(0.0 for _ in em.coupling)) for em in model.emitters]
        a = port_spectrum(model.with_emitters(ems), OUTPUT_PORTS)
        b = port_spectrum(model.with_emitters([]), OUTPUT_PORTS)
        for port in OUTPUT_PORTS:
            np.testing.assert_array_equal(a.amplitude[port], b.amplitude[port])


@given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(1e-3, 1e3), phase=st.floats(-np.pi, np.pi))
@settings(max_examples=40, deadline=None)
def test_linear_in_input_amplitude(seed, scale, phase):
    model = random_model(np.random.default_rng(seed))
    s = scale * np.exp(1j * phase)
    f = model.drive.frequencies[0]
    one = solve_steady_state(model, f)
    many = solve_steady_state(model, f, s_in=s)
    np.testing.assert_allclose(many.a, s * one.a, rtol=1e-9, atol=1e-14 * scale)
    np.testing.assert_allclose(many.sigma, s * one.sigma, rtol=1e-9, atol=1e-14 * scale)


@given(seed=st.integers(0, 2 ** 32 - 1), shift=st.floats(0, 2 * np.pi))
@settings(max_examples=40, deadline=None)
def test_common_azimuth_rotation_leaves_spectra_unchanged(seed, shift):
    """Without backscattering, rotating every emitter by the same angle is a gauge change."""
    model = random_model(np.random.default_rng(seed), max_pairs=1)
    model = replace(model, mode_pairs=(replace(model.mode_pairs[0], backscatter=0.0),))
    turned = [replace(em, azimuthal_angle=(em.azimuthal_angle + shift) % (2 * np.pi)) for em in model.emitters]
    a = port_spectrum(model, ("drop", "transmission")).intensity
    b = port_spectrum(model.with_emitters(turned), ("drop", "transmission")).intensity
    for port in a:
        np.testing.assert_allclose(a[port], b[port], rtol=1e-9, atol=1e-14)


def test_assembled_matrix_is_stable_for_presets():
    for model in (m1_model(), m1_model(extended=True)):
        system = assemble_linear_system(model, model.drive.origin)
        assert np.all(np.linalg.eigvals(system.matrix).real < 0)


def test_cross_damping_is_needed_for_two_pairs():
    """Dropping the off-diagonal waveguide damping breaks the power balance."""
    model = m1_model(extended=True).with_emitters([])
    system = assemble_linear_system(model, model.drive.origin)
    a = system.matrix.copy()
    c = system.cavity_rows
    # rows are [a0, b0, a1, b1]; remove the pair-pair terms
    for i, j in ((0, 2), (2, 0), (1, 3), (3, 1)):
        a[c[i], c[j]] = 0
    x = np.linalg.solve(a, -system.drive)
    pairs = model.mode_pairs
    k1 = np.sqrt([p.external_coupling[0] for p in pairs])
    k2 = np.sqrt([p.external_coupling[1] for p in pairs])
    aa, bb = x[c[[0, 2]]], x[c[[1, 3]]]
    out = (abs(1 - aa @ k1) ** 2 + abs(aa @ k2) ** 2 + abs(bb @ k1) ** 2 + abs(bb @ k2) ** 2
           + sum(p.intrinsic_loss * (abs(aa[i]) ** 2 + abs(bb[i]) ** 2) for i, p in enumerate(pairs)))
    assert abs(out - 1) > 1e-3
    assert _balance_error(model, model.drive.origin) <= 1e-12


def test_power_balance_channels():
    model = m1_model()
    budget = power_balance(model, solve_steady_state(model))
    assert {"transmission", "drop", "add", "reflection", "intrinsic_0", "emitter_0"} <= set(budget)
    assert all(v >= 0 for v in budget.values())
