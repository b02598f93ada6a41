"""Shared fixtures and random-model generators."""

from __future__ import annotations

import numpy as np
import pytest

from wgmqed.model import CircuitTopology, DriveSpec, Emitter, ModePair, SystemModel

BASE_FREQUENCY = 400.0  # THz


def random_model(rng: np.random.Generator, max_pairs: int = 2, max_emitters: int = 3,
                 detuning_span: float = 5.0) -> SystemModel:
    """A stable model with moderate, well-separated rates.

    Cavity linewidths 1-10 GHz, emitter linewidths 50-500 MHz, couplings up
    to 1 GHz and detunings of a few GHz, so the time-domain oracle settles in
    a reasonable number of steps.
    """
    n_pairs = int(rng.integers(1, max_pairs + 1))
    pairs = []
    for p in range(n_pairs):
        kappa = rng.uniform(1.0, 10.0)
        ext = rng.uniform(0.05, 0.45, size=2) * kappa
        pairs.append(ModePair(
            center_frequency=BASE_FREQUENCY + rng.uniform(-3, 3) * 1e-3,
            linewidth=kappa,
            intrinsic_loss=kappa - ext.sum(),
            external_coupling=tuple(ext),
            backscatter=rng.uniform(0, 2.0),
            azimuthal_order=int(rng.integers(20, 60)),
            label="fundamental" if p == 0 else "second-order",
        ))
    emitters = []
    for j in range(int(rng.integers(0, max_emitters + 1))):
        emitters.append(Emitter(
            transition_frequency=BASE_FREQUENCY + rng.uniform(-3, 3) * 1e-3,
            linewidth=rng.uniform(50, 500),
            branching_ratio=rng.uniform(0.05, 1.0),
            coupling=tuple(rng.uniform(0, 1000, size=n_pairs)),
            azimuthal_angle=rng.uniform(0, 2 * np.pi),
            dephasing=rng.uniform(0, 100),
            name=f"e{j}",
        ))
    topology = CircuitTopology(reference_amplitude=rng.uniform(0.2, 2.0), reference_phase=rng.uniform(-np.pi, np.pi))
    drive = DriveSpec(BASE_FREQUENCY, tuple(np.sort(rng.uniform(-detuning_span, detuning_span, size=5))))
    return SystemModel(tuple(pairs), tuple(emitters), topology, drive)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


class BundleCache:
    """Runs each (preset, workers) combination once per test session."""

    def __init__(self, root):
        self.root = root
        self.runs: dict[tuple[str, int], tuple] = {}

    def __call__(self, name: str, workers: int = 1):
        import time

        from wgmqed.scenarios import get_scenario, run_scenario

        key = (name, workers)
        if key not in self.runs:
            out = self.root / f"{name}-w{workers}"
            t = time.perf_counter()
            manifest = run_scenario(get_scenario(name), out, workers=workers)
            self.runs[key] = (out, manifest, time.perf_counter() - t)
        return self.runs[key]


@pytest.fixture(scope="session")
def bundles(tmp_path_factory) -> BundleCache:
    return BundleCache(tmp_path_factory.mktemp("bundles"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
