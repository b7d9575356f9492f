"""Source-only smoke run on a freshly generated benchmark.

    python scripts/smoke_train.py --out runs/smoke
"""
import argparse
import time
from pathlib import Path

from cdnd.config import load_config
from cdnd.synth_data import generate_dataset
from cdnd.training import run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/smoke")
    ap.add_argument("--data-seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=100)
    args = ap.parse_args()

    out = Path(args.out)
    generate_dataset(per_class=50, seed=args.data_seed, out_dir=out / "data")
    config, _ = load_config(ROOT / "configs" / "source_only.yaml")
    config.dataset = str(out / "data")
    config.epochs = args.epochs
    config.seeds = (1,)
    start = time.perf_counter()
    m = run_experiment(config, out_dir=out / "run")
    print(f"source val acc {m.src_acc_mean:.4f}, target test acc {m.tgt_acc_mean:.4f}, "
          f"{time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
