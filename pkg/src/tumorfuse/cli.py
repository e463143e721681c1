"""Command-line interface: synth, train, eval, report, gradcheck, defaults."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import default_config_text, load_config
from .data import synth_generate, write_dataset
from .errors import TumorFuseError

log = logging.getLogger("tumorfuse")


def _counts(text: str) -> tuple[int, int]:
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("counts must be two comma-separated integers (tumor,notumor)")
    return parts


def cmd_synth(args) -> int:
    ds = synth_generate(args.counts, args.size, args.seed, args.domain)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds)} images {dict(zip(ds.class_names, ds.counts()))} to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .pipeline import evaluate, prepare_data, save_artifacts, train_all
    from .report import save_metrics, write_curves

    overrides = {"run": {"seed": str(args.seed)}} if args.seed is not None else None
    cfg = load_config(args.config, overrides)
    outdir = Path(args.out or cfg.output_dir)
    start = time.perf_counter()
    data = prepare_data(cfg)
    artifacts = train_all(cfg, data)
    paths = save_artifacts(artifacts, outdir)
    metrics = evaluate(artifacts, data.test)
    save_metrics(metrics, outdir / "metrics.json")
    write_curves(metrics, outdir / "curves.csv")
    print(f"trained in {time.perf_counter() - start:.1f}s; checkpoints: {', '.join(str(p) for p in paths)}")
    print(f"fused test accuracy {metrics.accuracy:.4f}; " +
          ", ".join(f"{k} {v:.4f}" for k, v in metrics.branch_accuracy.items()))
    return 0


def cmd_eval(args) -> int:
    from .pipeline import evaluate, load_artifacts, prepare_data
    from .report import save_metrics, write_report

    artifacts = load_artifacts(args.run)
    data = prepare_data(artifacts.config)
    metrics = evaluate(artifacts, data.test)
    outdir = Path(args.out or args.run)
    outdir.mkdir(parents=True, exist_ok=True)
    save_metrics(metrics, outdir / "metrics.json")
    write_report(metrics, outdir)
    print(f"fused test accuracy {metrics.accuracy:.4f} on {metrics.total} samples; report in {outdir}")
    return 0


def cmd_report(args) -> int:
    from .report import load_metrics, write_report

    metrics = load_metrics(args.metrics)
    for path in write_report(metrics, args.out):
        print(path)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_gradient_suite

    failed = 0
    for r in run_gradient_suite(args.instances, args.seed):
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status} {r.name:16s} max_rel_err={r.max_error:.3e} instances={r.instances} ({r.seconds:.1f}s)")
    print(f"{failed} failing check(s); tolerance {TOLERANCE:g}")
    return 1 if failed else 0


def cmd_defaults(args) -> int:
    sys.stdout.write(default_config_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tumorfuse", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic blob dataset as PGM files")
    p.add_argument("--out", required=True)
    p.add_argument("--domain", choices=("target", "source"), default="target")
    p.add_argument("--counts", type=_counts, default=(500, 400), help="tumor,notumor (default 500,400)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train all three branches and the fusion templates")
    p.add_argument("--config", help="INI run config (defaults apply when omitted)")
    p.add_argument("--out", help="output directory (overrides [run] output_dir)")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved checkpoints and write the report")
    p.add_argument("--run", required=True, help="directory holding the checkpoints")
    p.add_argument("--out", help="report directory (default: the run directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render report files from a metrics.json")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="run the numerical gradient verification suite")
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("defaults", help="print the default config with every key")
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (TumorFuseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
