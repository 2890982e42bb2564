#!/usr/bin/env python3
"""
Controller sensitivity study

Runs paired real/quantized rollouts for PID, LQR and MPC over a sweep of
fractional widths and reports, per controller, the smallest n_frac whose
worst trajectory error stays under the tolerance. Writes one CSV row per
(controller, format).

Usage:
    python scripts/controller_sensitivity.py [--robot iiwa] [--seeds 10] [--output-dir out/sensitivity]

Example:
    python scripts/controller_sensitivity.py --robot pendulum --n-int 6 --frac-min 6 --frac-max 14
"""

import argparse
import os
import sys
from pathlib import Path

import pandas as pd
from tqdm import tqdm

# Add the parent directory to sys.path to allow imports from the app package
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.models.fixed_point import FxpFormat
from app.models.simulation import RolloutFailure
from app.robots import load_robot
from app.schemas.run_config import ControllerConfig, SimConfig
from app.services.icms import QuantSetup, default_target, initial_state, pair_metrics, rollout_pairs
from app.utils.logging import configure_logging, get_logger

logger = get_logger(__name__)

CONTROLLERS = ("pid", "lqr", "mpc")


def sweep(robot, n_int, fractions, seeds, sim, workers):
    model = load_robot(robot)
    target = default_target(model, sim)
    starts = [initial_state(model, target, sim, k) for k in range(seeds)]
    rows = []
    jobs = [(kind, n_frac) for kind in CONTROLLERS for n_frac in fractions]
    for kind, n_frac in tqdm(jobs, desc=f"{model.name} sensitivity"):
        fmt = FxpFormat(n_int, n_frac)
        pairs = rollout_pairs(
            model, ControllerConfig(kind=kind), QuantSetup(fmt), sim, starts, workers=workers
        )
        median, worst = pair_metrics(pairs)
        rows.append(
            {
                "robot": model.name,
                "controller": kind,
                "format": str(fmt),
                "n_frac": n_frac,
                "median_error": median,
                "max_error": worst,
                "failures": sum(isinstance(p, RolloutFailure) for p in pairs),
            }
        )
    return pd.DataFrame(rows)


def minimal_passing(frame, tolerance):
    """Smallest n_frac per controller from which every wider format also passes."""
    out = {}
    for kind, group in frame.groupby("controller"):
        group = group.sort_values("n_frac", ascending=False)
        best = None
        for _, row in group.iterrows():
            if row["max_error"] > tolerance:
                break
            best = int(row["n_frac"])
        out[kind] = best
    return out


def main():
    parser = argparse.ArgumentParser(description="Closed-loop quantization sensitivity per controller")
    parser.add_argument("--robot", default="iiwa", help="Bundled robot name or URDF path")
    parser.add_argument("--n-int", type=int, default=12, help="Integer bits of every format")
    parser.add_argument("--frac-min", type=int, default=6, help="Smallest n_frac swept")
    parser.add_argument("--frac-max", type=int, default=16, help="Largest n_frac swept")
    parser.add_argument("--seeds", type=int, default=10, help="Rollouts per format")
    parser.add_argument("--steps", type=int, default=1000, help="Plant steps per rollout")
    parser.add_argument("--tolerance", type=float, default=5e-4, help="Trajectory tolerance (m)")
    parser.add_argument("--workers", type=int, default=4, help="Worker threads")
    parser.add_argument("--output-dir", default="out/sensitivity", help="Directory for the CSV")
    args = parser.parse_args()

    configure_logging()
    sim = SimConfig(steps=args.steps, tolerance=args.tolerance)
    fractions = list(range(args.frac_min, args.frac_max + 1))
    frame = sweep(args.robot, args.n_int, fractions, args.seeds, sim, args.workers)

    output_dir = Path(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    output_file = output_dir / "controller_sensitivity.csv"
    frame.to_csv(output_file, index=False, float_format="%.6g")
    logger.info(f"Saved {output_file}")

    for kind, n_frac in minimal_passing(frame, args.tolerance).items():
        label = f"Q{args.n_int}.{n_frac}" if n_frac is not None else "none in range"
        print(f"{kind:>4}: smallest passing format {label}")


if __name__ == "__main__":
    main()
