"""Ablation grid over alignment x selection mode x diversity statistic."""
from __future__ import annotations

import copy
import csv
import re
from pathlib import Path

from .training import TrainConfig, run_experiment, variant_name


def variant(base: TrainConfig, alignment: str, mode: str | None, statistic: str = "entropy",
            gamma: float | None = None) -> TrainConfig:
    cfg = copy.deepcopy(base)
    cfg.alignment = alignment
    if mode is None:  # source-only: labelled source originals, nothing else
        cfg.alignment = "none"
        cfg.weights.gamma = 0.0
    else:
        cfg.deform.mode = mode
        cfg.deform.statistic = statistic
        if gamma is not None:
            cfg.weights.gamma = gamma
    return cfg


def grid(base: TrainConfig, full: bool = True) -> list[TrainConfig]:
    out = [variant(base, "none", None), variant(base, "dnwd", "lowest", "entropy")]
    if not full:
        return out
    for alignment in ("none", "nwd", "dnwd"):
        for mode, stat in (("lowest", "entropy"), ("highest", "entropy"), ("lowest", "std"),
                           ("highest", "std"), ("random", "entropy")):
            cfg = variant(base, alignment, mode, stat)
            if variant_name(cfg) not in {variant_name(c) for c in out}:
                out.append(cfg)
    return out


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower()


def run_ablation(base: TrainConfig, out_dir: Path, full_grid: bool = True) -> list[dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for cfg in grid(base, full_grid):
        name = variant_name(cfg)
        m = run_experiment(cfg, out_dir=out_dir / slug(name), label=name)
        rows.append({"variant": name, "src_acc_mean": m.src_acc_mean, "src_acc_std": m.src_acc_std,
                     "tgt_acc_mean": m.tgt_acc_mean, "tgt_acc_std": m.tgt_acc_std})
    write_report(out_dir, rows)
    return rows


def write_report(out_dir: Path, rows: list[dict]) -> None:
    with open(out_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    acc = {r["variant"]: r["tgt_acc_mean"] for r in rows}
    lines = ["# Ablation report", "", "| variant | source val acc | target test acc |", "|---|---|---|"]
    lines += [f"| {r['variant']} | {r['src_acc_mean']:.4f} ± {r['src_acc_std']:.4f} | "
              f"{r['tgt_acc_mean']:.4f} ± {r['tgt_acc_std']:.4f} |" for r in rows]
    lines += ["", "## Orderings", ""]
    cdnd, base = acc.get("CurvRec(En)-Low+D-NWD"), acc.get("source-only")
    if cdnd is not None and base is not None:
        verdict = "PASS" if cdnd >= base else "FAIL"
        lines.append(f"- gate: CDND {cdnd:.4f} >= source-only {base:.4f}: {verdict}")
    for suffix in ("", "+NWD", "+D-NWD"):
        for stat in ("En", "S"):
            low, high = acc.get(f"CurvRec({stat})-Low{suffix}"), acc.get(f"CurvRec({stat})-High{suffix}")
            if low is not None and high is not None:
                rel = ">=" if low >= high else "<"
                lines.append(f"- CurvRec({stat})-Low{suffix} {low:.4f} {rel} CurvRec({stat})-High{suffix} {high:.4f}")
    for mode in ("CurvRec(En)-Low", "CurvRec(S)-Low", "DefRec"):
        nwd, dnwd = acc.get(f"{mode}+NWD"), acc.get(f"{mode}+D-NWD")
        if nwd is not None and dnwd is not None:
            rel = ">=" if dnwd >= nwd else "<"
            lines.append(f"- {mode}+D-NWD {dnwd:.4f} {rel} {mode}+NWD {nwd:.4f}")
    (out_dir / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
