"""Run the synthetic transfer benchmark and write its CSV, plots and a summary.

    python scripts/run_synthetic_suite.py --out-dir results --jobs 1
"""

import argparse
import time
from pathlib import Path

import numpy as np

from dbn_transfer import benchmark as bm
from dbn_transfer.cli import main as cli_main
from dbn_transfer.experiments import results_to_csv, run_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cells = bm.benchmark_cells()
    t0 = time.perf_counter()
    rows = run_suite(cells, bm.benchmark_corpora(), args.seed, args.jobs)
    print(f"{len(cells)} cells, {len(rows)} rows in {time.perf_counter() - t0:.0f}s")
    (out / "benchmark.csv").write_text(results_to_csv(rows), encoding="utf-8")

    groups = bm.grouped_uar(rows, cells)
    dbn, svm = bm.loco_means(groups, "DBN"), bm.loco_means(groups, "SparseAeSvm")
    best = bm.best_single_source(groups)
    print("\nLOCO mean UAR     DBN    AE+SVM  best single source")
    for c in sorted(dbn):
        print(f"  {c:<14} {dbn[c]:.3f}  {svm[c]:.3f}   {best[c][1]:.3f} ({best[c][0]})")
    print("\ntarget-fraction sweep, median UAR")
    for f, m in bm.sweep_medians(groups).items():
        print(f"  {f:.1f}  {m:.3f}")

    # separate plots for the LOCO comparison and the sweep
    sweep = [r for r in rows if cells[r["cell"]]["protocol"] == "sweep"]
    loco = [r for r in rows if cells[r["cell"]]["protocol"] == "loco"]
    for name, part in (("loco", loco), ("sweep", sweep)):
        csv_path = out / f"{name}.csv"
        csv_path.write_text(results_to_csv(part), encoding="utf-8")
        cli_main(["report", "--in", str(csv_path), "--svg", str(out / f"{name}.svg")])
    print(f"\nwrote {out}/benchmark.csv, loco.svg, sweep.svg")
    return 0 if np.isfinite(list(dbn.values())).all() else 1


if __name__ == "__main__":
    raise SystemExit(main())
