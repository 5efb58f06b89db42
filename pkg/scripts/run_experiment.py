"""Run one of the JSON experiment configs and write the campaign outputs.

    python3 scripts/run_experiment.py configs/fig2_stationary.json --out results/fig2
    python3 scripts/run_experiment.py configs/fig5_moving.json --trials 20 --workers 4
"""

import argparse
import json
import sys
import time
from pathlib import Path

from onebit_radar import cli, harness


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory (default: results/<config name>)")
    p.add_argument("--trials", type=int, default=None, help="override the trial count")
    p.add_argument("--workers", type=int, default=None)
    args = p.parse_args(argv)

    d = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.trials is not None:
        d["trials"] = args.trials
    cfg = harness.ExperimentConfig.from_dict(d)
    out = Path(args.out or Path("results") / Path(args.config).stem)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    res = harness.run_campaign(cfg, workers=args.workers)
    elapsed = time.perf_counter() - t0

    (out / "config.json").write_text(cli.config_json(cfg), encoding="utf-8", newline="\n")
    (out / "records.csv").write_text(harness.records_csv(res.records), encoding="utf-8", newline="\n")
    (out / "summary.csv").write_text(harness.summary_csv(res.summary), encoding="utf-8", newline="\n")
    cli.emit_plot_data(res, out)
    print(harness.format_summary(res.summary, moving=cfg.scenario == "moving"))
    print(f"\n{len(res.records)} records in {elapsed:.1f} s -> {out}")


if __name__ == "__main__":
    sys.exit(main())
