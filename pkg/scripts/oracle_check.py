"""Compare the steady-state solver with direct time integration.

Random models (one or two mode pairs, up to three emitters) are driven at a
random laser frequency; the relative difference of the full state vector and
the power sum-rule error are reported.

    python3 scripts/oracle_check.py --models 100 --seed 1
"""

import argparse
import time

import numpy as np

from wgmqed.model import CircuitTopology, DriveSpec, Emitter, ModePair, SystemModel
from wgmqed.solver import power_balance, solve_steady_state, time_domain_oracle


def random_model(rng: np.random.Generator) -> SystemModel:
    pairs = []
    for p in range(int(rng.integers(1, 3))):
        kappa = rng.uniform(1.0, 10.0)
        ext = rng.uniform(0.05, 0.45, size=2) * kappa
        pairs.append(ModePair(400.0 + rng.uniform(-3, 3) * 1e-3, kappa, kappa - ext.sum(), tuple(ext),
                              backscatter=rng.uniform(0, 2.0), azimuthal_order=int(rng.integers(20, 60)),
                              label="fundamental" if p == 0 else "second-order"))
    emitters = [Emitter(400.0 + rng.uniform(-3, 3) * 1e-3, rng.uniform(50, 500), rng.uniform(0.05, 1.0),
                        tuple(rng.uniform(0, 1000, size=len(pairs))), azimuthal_angle=rng.uniform(0, 2 * np.pi))
                for _ in range(int(rng.integers(0, 4)))]
    topology = CircuitTopology(reference_amplitude=rng.uniform(0.2, 2.0), reference_phase=rng.uniform(-np.pi, np.pi))
    return SystemModel(tuple(pairs), tuple(emitters), topology, DriveSpec(400.0, (rng.uniform(-5, 5),)))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--models", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    worst_state = worst_power = 0.0
    t = time.perf_counter()
    for _ in range(args.models):
        model = random_model(rng)
        f = model.drive.frequencies[0]
        ss = solve_steady_state(model, f)
        td = time_domain_oracle(model, f)
        x = np.concatenate([ss.a, ss.b, ss.sigma])
        y = np.concatenate([td.a, td.b, td.sigma])
        worst_state = max(worst_state, float(np.linalg.norm(x - y) / np.linalg.norm(x)))
        worst_power = max(worst_power, abs(sum(power_balance(model, ss).values()) - 1.0))
    print(f"{args.models} models in {time.perf_counter() - t:.1f} s: "
          f"worst state difference {worst_state:.2e}, worst power sum-rule error {worst_power:.2e}")


if __name__ == "__main__":
    main()
