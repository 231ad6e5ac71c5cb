"""Train, evaluate and run closed-loop control for one preset.

    python scripts/run_preset.py configs/vdp_reduced.json
    python scripts/run_preset.py configs/tanks_reduced.json --out runs/tanks --overwrite

Outputs land in ``<out>/train``, ``<out>/evaluate`` and ``<out>/control``.
"""

import argparse
import json
import logging
from pathlib import Path

from pinc import cli, config


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config")
    parser.add_argument("--out")
    parser.add_argument("--overwrite", action="store_true")
    parser.add_argument("--no-baseline", action="store_true", help="skip the RK-model MPC run")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = config.load(args.config)
    out = Path(args.out or cfg.output_dir)
    summary = {"train": cli.run_train(cfg, out / "train", args.overwrite)}
    checkpoint = out / "train" / "checkpoint.json"
    summary["evaluate"] = json.loads(cli.run_evaluate(checkpoint, cfg, out / "evaluate", overwrite=args.overwrite).to_json())
    if cfg.mpc is not None and cfg.scenario is not None:
        reports = cli.run_control(checkpoint, cfg, out / "control", not args.no_baseline, args.overwrite)
        summary["control"] = {k: json.loads(v.to_json()) for k, v in reports.items()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
