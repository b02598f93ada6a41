"""Emitter linewidth against cavity detuning, three ways.

For each detuning the simulated drop-port line is fitted with the complex
Fano model and compared with the linewidth from cavity elimination, both for
the full resonator (second-order mode and backscattering) and for the bare
fundamental pair.  Writes a CSV and prints a short table.

    python3 scripts/linewidth_curve.py --points 25 --out linewidth_curve.csv
"""

import argparse
import csv

import numpy as np

from wgmqed.fit import Spectrum
from wgmqed.presets import RING_LINEWIDTH, m1_model
from wgmqed.scenarios import fit_simulated_line
from wgmqed.solver import at_cavity_detuning, effective_emitter_response, port_spectrum


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--span", type=float, default=8.0, help="half range in cavity linewidths")
    parser.add_argument("--points", type=int, default=33)
    parser.add_argument("--out", default="linewidth_curve.csv")
    args = parser.parse_args()

    full = m1_model(extended=True)
    simple = m1_model()
    rows = []
    for delta in np.linspace(-args.span * RING_LINEWIDTH, args.span * RING_LINEWIDTH, args.points):
        moved = at_cavity_detuning(full, 0, delta)
        moved = moved.with_detuning(np.linspace(-2, 2, 801), origin=moved.emitter_frequency(0))
        drop = port_spectrum(moved, ("drop",))
        fit = fit_simulated_line(moved, Spectrum(drop.detuning, drop.intensity["drop"], moved.drive.origin))
        model = effective_emitter_response(moved, 0)
        bare = effective_emitter_response(simple, 0, delta)["linewidth"]
        rows.append((delta, fit.linewidth, fit.errors["linewidth_mhz"], model["linewidth"], bare,
                     model["lamb_shift"]))
        print(f"{delta:8.1f} GHz  fitted {fit.linewidth:7.2f}  model {model['linewidth']:7.2f}  "
              f"single pair {bare:7.2f} MHz  shift {model['lamb_shift']:+6.2f} MHz")

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("cavity_detuning_GHz", "fitted_MHz", "fitted_error_MHz", "model_MHz", "single_pair_MHz",
                    "lamb_shift_MHz"))
        w.writerows(rows)


if __name__ == "__main__":
    main()
