"""``cdnd`` command line: gen-data, deform, train, ablate, verify.

Exit codes: 0 success, 1 verification failure, 2 usage, 3 I/O or parse error,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import geometry as geo
from .autodiff import NumericFailure

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("cdnd")


def cmd_gen_data(args) -> int:
    from .config import ConfigError, load_config
    from .synth_data import SCAN_LIKE_SHIFT, SHAPE_CLASSES, generate_dataset

    shift = SCAN_LIKE_SHIFT
    if args.config:
        try:
            _, shift = load_config(args.config)
        except (OSError, ConfigError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
    try:
        manifest = generate_dataset(SHAPE_CLASSES, shift, args.per_class, args.seed, args.out, args.points)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(manifest.records)} clouds and {Path(args.out) / 'manifest.tsv'}")
    return EXIT_OK


def cmd_deform(args) -> int:
    try:
        cloud = geo.read_cloud(args.input)
    except geo.CloudParseError as exc:
        print(f"error: parse failure at line {exc.line_no}: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    cfg = geo.DeformConfig(k=args.k, m=args.m, n_deform=args.n_deform, mode=args.mode, statistic=args.stat,
                           variance=args.variance, curvature_neighborhood=args.neighborhood)
    try:
        cfg.validate(len(cloud))
    except geo.GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rng = np.random.default_rng(args.seed)
    analysis = geo.analyze(cloud, cfg, rng)
    selected = geo.select_regions(analysis.regions, analysis.scores[cfg.statistic], cfg.n_deform, cfg.mode, rng)
    out = geo.deform(cloud, selected, cfg.variance, rng, str(args.input))

    chosen = {r.center_index for r in selected}
    out_path = Path(args.output)
    report_path = out_path.with_name(out_path.name + ".regions.csv")
    try:
        geo.write_cloud(out_path, out.points)
        with open(report_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["region", "center_index", "members", "entropy", "std", "selected"])
            for j, region in enumerate(analysis.regions):
                w.writerow([j, region.center_index, " ".join(map(str, region.member_indices)),
                            repr(analysis.scores["entropy"][j].score), repr(analysis.scores["std"][j].score),
                            int(region.center_index in chosen)])
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"deformed {len(out.deformed_indices)} points; report in {report_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import ConfigError, dump_config, load_config
    from .training import run_experiment

    try:
        config, shift = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.dataset:
        config.dataset = args.dataset
    if args.workers:
        config.workers = args.workers
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(dump_config(config, shift), encoding="utf-8")
        metrics = run_experiment(config, out_dir=out, label=args.label)
    except NumericFailure as exc:
        step = getattr(exc, "step", None)
        (out / "failure.txt").write_text(f"numeric failure at (epoch, step)={step}: {exc}\n", encoding="utf-8")
        print(f"error: numeric failure at {step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"source acc {metrics.src_acc_mean:.4f} +- {metrics.src_acc_std:.4f}; "
          f"target acc {metrics.tgt_acc_mean:.4f} +- {metrics.tgt_acc_std:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .config import ConfigError, load_config
    from .experiments import run_ablation

    try:
        config, _ = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.dataset:
        config.dataset = args.dataset
    if args.epochs:
        config.epochs = args.epochs
    try:
        rows = run_ablation(config, Path(args.out), full_grid=not args.headline_only)
    except NumericFailure as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for row in rows:
        print(f"{row['variant']:<32} tgt {row['tgt_acc_mean']:.4f} +- {row['tgt_acc_std']:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suites

    names = list(SUITES) if args.suite == "all" else [args.suite]
    reports = run_suites(names)
    lines = ["check,passed,worst_deviation,detail"]
    for r in reports:
        lines.append(f"{r.name},{int(r.passed)},{r.worst_deviation!r},{'; '.join(r.failures)}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdnd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the two-domain synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--points", type=int, default=128)
    p.add_argument("--config", help="YAML file whose [shift] section overrides the domain shift")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("deform", help="curvature-diversity deformation of one cloud")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--n-deform", type=int, default=1)
    p.add_argument("--mode", choices=("lowest", "highest", "random"), default="lowest")
    p.add_argument("--stat", choices=("entropy", "std"), default="entropy")
    p.add_argument("--variance", type=float, default=0.001)
    p.add_argument("--neighborhood", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_deform)

    p = sub.add_parser("train", help="train every seed of one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", help="override data.dataset")
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--label", help="variant name written to summary.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run the ablation grid and write a report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--headline-only", action="store_true", help="only source-only and CDND")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify", help="run verification suites")
    p.add_argument("suite", choices=("grad", "theory", "geometry", "all"))
    p.add_argument("--report", help="also write the CSV report here")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
