"""Measure end-to-end replay throughput (decode, core, event log, reply file)."""

import argparse
import tempfile
import time
from pathlib import Path

from smstriage.service import Core
from smstriage.simulator import ScenarioSpec, generate, read_truth, scenario_config
from smstriage.wire import replay_file


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--patients", type=int, default=26_000, help="26k patients give about 50k frames")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--repeat", type=int, default=1)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        spec = ScenarioSpec(seed=args.seed, n_patients=args.patients, n_facilities=20, n_rows=40, n_cols=40,
                            duration_days=30, typo_rate=0.05, feedback_rate=0.3, beds_per_facility=5)
        files = generate(spec, tmp / "scenario")
        header, _ = read_truth(files.truth)
        config = scenario_config(header, files.truth.parent)
        for i in range(args.repeat):
            core = Core(config, tmp / "events.jsonl", truncate=True)
            t = time.perf_counter()
            summary = replay_file(files.replay, core, tmp / "out.txt")
            core.close()
            dt = time.perf_counter() - t
            print(f"run {i}: {summary.frames_in} frames, {summary.replies_out} replies, "
                  f"{dt:.2f}s, {summary.frames_in / dt:.0f} frames/s")


if __name__ == "__main__":
    main()
