"""Run every scenario over several seeds on the congested bottleneck grid and print the comparison."""

import argparse
import json
import time
from pathlib import Path

from ecoroute.engine import SCENARIOS, run_desk_batch
from ecoroute.metrics import compare_scenarios, seed_samples, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--scenarios", default=",".join(SCENARIOS))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, help="write per-scenario summaries and the comparison as JSON")
    args = ap.parse_args()
    t0 = time.time()
    runs = run_desk_batch(args.scenarios.split(","), range(args.seeds), args.jobs)
    samples = {sid: seed_samples(r) for sid, r in runs.items()}
    for sid, r in runs.items():
        s = samples[sid]
        print(f"{sid}: mean tt {sum(s['tt']) / len(s['tt']):7.1f} s  vkt {sum(s['vkt']) / len(s['vkt']):.3f} km  "
              f"ghg {sum(s['ghg']) / len(s['ghg']):7.1f} kg  nox {sum(s['nox']) / len(s['nox']):8.1f} g")
    if "S1" in samples and len(samples) > 1:
        table = compare_scenarios(samples, "S1")
        for c in table.tests:
            if c.a == "S1":
                print(f"S1 vs {c.b} {c.metric:10s} change {table.pct_change[c.b][c.metric]:+6.1f}%  p={c.p:.3g}")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            table.write(args.out / "comparison.csv")
            summ = {sid: [summarize(t, sid).to_dict() for t in r] for sid, r in runs.items()}
            (args.out / "summaries.json").write_text(json.dumps(summ, indent=1))
    print(f"elapsed {time.time() - t0:.0f} s")


if __name__ == "__main__":
    main()
