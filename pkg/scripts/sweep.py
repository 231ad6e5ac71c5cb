"""Grid searches over network size or sample counts.

    python scripts/sweep.py configs/sweep_complexity.json --workers 4
    python scripts/sweep.py configs/sweep_data.json --workers 4

Writes ``sweep.csv`` (one row per cell, mean and std of log10 MSE_gen over
repeats) and ``sweep_table.txt``, a width x depth (or N_t x N_F) matrix of the
mean log10 MSE_gen.
"""

import argparse
import csv
from collections import defaultdict
from pathlib import Path

from pinc import cli, config


def table(rows, row_key, col_key):
    cells = defaultdict(dict)
    for r in rows:
        cells[r[row_key]][r[col_key]] = r["mean_log10_mse_gen"]
    cols = sorted({c for v in cells.values() for c in v})
    lines = [f"{row_key}\\{col_key}".ljust(12) + "".join(f"{c:>10}" for c in cols)]
    for k in sorted(cells):
        lines.append(f"{k:<12}" + "".join(f"{cells[k].get(c, float('nan')):>10.2f}" for c in cols))
    return "\n".join(lines)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config")
    parser.add_argument("--out")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--overwrite", action="store_true")
    args = parser.parse_args()
    cfg = config.load(args.config)
    out = Path(args.out or cfg.output_dir)
    cli.run_sweep(cfg, out, args.workers, args.overwrite)
    rows = [{k: float(v) if k == "mean_log10_mse_gen" else v for k, v in r.items()} for r in csv.DictReader(open(out / "sweep.csv"))]
    sw = cfg.sweep
    if len(sw.layer_widths) > 1 or len(sw.layer_depths) > 1:
        text = table(rows, "width", "depth")
    else:
        text = table(rows, "n_t", "n_f")
    (out / "sweep_table.txt").write_text(text + "\n")
    print(text)


if __name__ == "__main__":
    main()
