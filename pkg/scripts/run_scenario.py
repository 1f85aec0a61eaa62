"""Generate a synthetic scenario, replay it through the service and print its metrics.

    python scripts/run_scenario.py --spec configs/scenario.ini --out-dir runs/demo
    python scripts/run_scenario.py --seed 3 --patients 500 --out-dir runs/s3
"""

import argparse
import json
from dataclasses import asdict

from smstriage.simulator import ScenarioSpec, generate, load_spec, run


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--spec", help="INI file with a [scenario] section")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--patients", type=int)
    ap.add_argument("--out-dir", required=True)
    args = ap.parse_args()

    spec = load_spec(args.spec) if args.spec else ScenarioSpec()
    if args.seed is not None:
        spec.seed = args.seed
    if args.patients is not None:
        spec.n_patients = args.patients
    files = generate(spec, args.out_dir)
    metrics = run(files.replay, files.truth, files.out_dir)
    print(json.dumps(asdict(metrics), indent=2, sort_keys=True))
    return 0 if metrics.capacity_violations == 0 else 1


if __name__ == "__main__":
    raise SystemExit(main())
