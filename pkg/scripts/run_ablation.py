"""Run the ablation grid (alignment x selection x statistic) over three seeds.

    python scripts/run_ablation.py --data runs/data --out runs/ablation [--headline-only]

Generates the benchmark first when ``--data`` has no manifest. Writes one
directory per variant plus ablation.csv and report.md.
"""
import argparse
from pathlib import Path

from cdnd.config import load_config
from cdnd.experiments import run_ablation
from cdnd.synth_data import generate_dataset

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "cdnd.yaml"))
    ap.add_argument("--data", default="runs/data")
    ap.add_argument("--data-seed", type=int, default=7)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--headline-only", action="store_true")
    args = ap.parse_args()

    data = Path(args.data)
    if not (data / "manifest.tsv").exists():
        generate_dataset(per_class=50, seed=args.data_seed, out_dir=data)
    config, _ = load_config(args.config)
    config.dataset = str(data)
    if args.epochs:
        config.epochs = args.epochs
    rows = run_ablation(config, Path(args.out), full_grid=not args.headline_only)
    for r in rows:
        print(f"{r['variant']:<28} {r['tgt_acc_mean']:.4f} +- {r['tgt_acc_std']:.4f}")
    print((Path(args.out) / "report.md").read_text())


if __name__ == "__main__":
    main()
