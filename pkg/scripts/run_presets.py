"""Run every preset scenario and print the headline numbers of each bundle.

    python3 scripts/run_presets.py --out runs
    python3 scripts/run_presets.py --out runs --only fig2d fig3a --workers 2
"""

import argparse
import json
import time
from pathlib import Path

from wgmqed.scenarios import PRESETS, get_scenario, run_scenario


def headline(out: Path) -> str:
    parts = []
    metrics = json.loads((out / "metrics.json").read_text())
    for name, em in metrics.get("emitters", {}).items():
        parts.append(f"{name}: linewidth {em['linewidth']:.1f} MHz, beta {em['beta']:.3f}")
    fit_path = out / "fit.json"
    if fit_path.exists():
        fit = json.loads(fit_path.read_text())
        if "linewidth_curve" in fit:
            curve = fit["linewidth_curve"]
            parts.append(f"fit vs model max deviation {curve['max_fit_deviation']:.2%}, "
                         f"far limit {curve['far_detuned_linewidth_mhz']:.3f} MHz")
        if fit.get("waterfall", {}).get("crossing") is not None:
            parts.append(f"crossing at {fit['waterfall']['crossing']:.1f} V")
    return "; ".join(parts) or "resonator only"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", default="runs", help="parent directory for the bundles")
    parser.add_argument("--only", nargs="*", help="subset of presets")
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args()

    for name in args.only or sorted(PRESETS):
        out = Path(args.out) / name
        t = time.perf_counter()
        run_scenario(get_scenario(name), out, workers=args.workers)
        print(f"{name:7s} {time.perf_counter() - t:6.2f} s  {headline(out)}")


if __name__ == "__main__":
    main()
