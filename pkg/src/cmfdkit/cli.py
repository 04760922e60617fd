"""Command-line interface: detection, evaluation, fixture generation,
scorer training, and gradient checks."""

import argparse
import json
import os
import sys

from . import pipeline, ranking
from .pipeline import PipelineConfig, StageFailure


def _add_common(parser):
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--mode", choices=("hard", "soft"))
    parser.add_argument("--size", type=int, dest="input_size",
                        help="working image size (pixels per side)")


def _build_config(args):
    values = {}
    if getattr(args, "config", None):
        values.update(pipeline.parse_config_file(args.config))
    for key in ("seed", "threads", "iterations", "beta", "mode",
                "input_size", "scorer_params"):
        val = getattr(args, key, None)
        if val is not None:
            values[key] = val
    return pipeline.config_from_mapping(values)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="cmfd",
        description="copy-move forgery detection toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="detect duplicated regions")
    d.add_argument("images", nargs="+", help="input image paths")
    d.add_argument("--out", required=True,
                   help="output directory; results go to OUT/<image stem>/ "
                        "(OUT/<parent dir>/ for fixture-style image.png)")
    d.add_argument("--scorer-params", dest="scorer_params",
                   help="trained scorer tensor file")
    _add_common(d)

    e = sub.add_parser("evaluate", help="score predictions against truth")
    e.add_argument("--pred", required=True, help="detection output root")
    e.add_argument("--gt", required=True, help="fixture root")
    e.add_argument("--out", help="metrics JSON path")

    g = sub.add_parser("gen-fixtures", help="write labeled forgeries")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--kind", choices=pipeline.FIXTURE_KINDS,
                   default="translation")
    g.add_argument("--size", type=int, default=448)
    g.add_argument("--min-side", type=int, default=64, dest="min_side")

    t = sub.add_parser("train-scorer", help="fit the ranking scorer")
    t.add_argument("--fixtures", required=True)
    t.add_argument("--out", required=True, help="parameter tensor path")
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--lr", type=float, default=1e-3)
    _add_common(t)

    c = sub.add_parser("grad-check", help="verify analytic gradients")
    c.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "detect":
            cfg = _build_config(args)
            for path in args.images:
                stem = os.path.splitext(os.path.basename(path))[0]
                if stem == "image":
                    # fixture layout: <fixture name>/image.png
                    parent = os.path.basename(
                        os.path.dirname(os.path.abspath(path)))
                    stem = parent or stem
                out_dir = os.path.join(args.out, stem)
                report = pipeline.detect(path, cfg, out_dir)
                total = sum(report["timings_ms"].values())
                print(f"{path}: {report['foreground_pixels']} foreground "
                      f"pixels, {total:.0f} ms -> {out_dir}")
            return 0
        if args.command == "evaluate":
            result = pipeline.evaluate(args.pred, args.gt, args.out)
            print(json.dumps({k: v for k, v in result.items()
                              if k != "images"}, indent=2, sort_keys=True))
            return 0
        if args.command == "gen-fixtures":
            index = pipeline.gen_fixtures(args.count, args.out,
                                          seed=args.seed, kind=args.kind,
                                          size=args.size,
                                          min_side=args.min_side)
            print(f"wrote {len(index)} {args.kind} fixtures to {args.out}")
            return 0
        if args.command == "train-scorer":
            cfg = _build_config(args)
            train_cfg = ranking.TrainConfig(learning_rate=args.lr,
                                            epochs=args.epochs)
            params, trace = pipeline.train_scorer_on_fixtures(
                args.fixtures, cfg, train_cfg)
            ranking.save_params(params, args.out)
            print(f"trained {args.epochs} epochs, loss "
                  f"{trace[0]:.4f} -> {trace[-1]:.4f}, params -> {args.out}")
            return 0
        if args.command == "grad-check":
            results = pipeline.run_grad_checks(seed=args.seed)
            ok = all(v <= 1e-4 for v in results.values())
            for name, err in sorted(results.items()):
                print(f"{name}: max relative error {err:.3e}")
            print("all gradients verified" if ok else "gradient check FAILED")
            return 0 if ok else 1
    except StageFailure as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
