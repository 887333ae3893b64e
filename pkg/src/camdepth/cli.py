"""Command line front end.

Exit codes: 0 success, 1 failed check or required ordering, 2 configuration
error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .camconv import CHANNEL_ORDER, make_stack
from .camera import load_intrinsics
from .fileio import write_pfm_planes
from .harness import ExperimentSpec, required_orderings_pass, run_experiment
from .losses import aggregate_metrics, evaluate
from .network import NetConfig, TrainConfig, load_model, predict_depth, save_model, train
from .synth import DatasetSpec, build_dataset, load_dataset


def _cmd_synth(args) -> int:
    spec = DatasetSpec.from_dict(json.loads(Path(args.spec).read_text()))
    root = build_dataset(spec, args.out)
    print(f"{spec.n_samples} samples in {root}")
    return 0


def _cmd_maps(args) -> int:
    cam, _ = load_intrinsics(args.cam)
    if args.size:
        try:
            h, w = (int(t) for t in args.size.lower().split("x"))
        except ValueError:
            raise ValueError(f"--size must be HxW, got {args.size!r}") from None
    else:
        h, w = cam.h, cam.w
    stack = make_stack(cam, h, w)
    write_pfm_planes(args.out, stack.as_array())
    print(f"wrote {len(CHANNEL_ORDER)} planes ({', '.join(CHANNEL_ORDER)}) "
          f"at {h}x{w} to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = json.loads(Path(args.config).read_text())
    net_cfg = NetConfig.from_dict(cfg["net"])
    train_cfg = TrainConfig.from_dict(cfg["train"])
    params, curve = train(train_cfg, net_cfg)
    save_model(args.out, params)
    print(f"trained {train_cfg.iterations} steps, "
          f"loss {curve[0]:.4f} -> {curve[-1]:.4f}, saved {args.out}")
    return 0


def _cmd_eval(args) -> int:
    params = load_model(args.ckpt)
    samples = load_dataset(args.data)
    reports = []
    for sample in samples:
        pred = predict_depth(params, sample)
        reports.append(evaluate(pred, sample.depth))
    agg = aggregate_metrics(reports)
    out = {
        "checkpoint": str(args.ckpt),
        "dataset": str(args.data),
        "n_samples": len(reports),
        "mean": agg["mean"],
        "median": agg["median"],
        "per_sample": [r.to_dict() for r in reports],
    }
    Path(args.report).write_text(json.dumps(out, sort_keys=True, indent=1) + "\n")
    print(f"evaluated {len(reports)} samples, "
          f"mean abs_rel {agg['mean']['abs_rel']:.4f}, report {args.report}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(full=args.full)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        ok = ok and r.passed
        print(f"{r.name:24s} {r.max_rel_err:12.3e}  {status}")
    print(f"{len(results)} checks, {'all passed' if ok else 'FAILURES'}")
    return 0 if ok else 1


def _cmd_experiment(args) -> int:
    spec = ExperimentSpec.from_dict(json.loads(Path(args.spec).read_text()))
    log = print if args.verbose else None
    report = run_experiment(spec, args.out, data_root=args.data_root, log=log)
    for o in report.orderings:
        tag = "required" if o["required"] else "reported"
        print(f"{o['name']} [{tag}]: {'pass' if o['passed'] else 'FAIL'}")
        if o.get("worse") and o.get("better"):
            print(f"  worse : {o['worse']}")
            print(f"  better: {o['better']}")
    print(f"report in {args.out}")
    return 0 if required_orderings_pass(report) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camdepth",
        description="Calibration-conditioned depth estimation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a dataset from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("maps", help="write the six calibration channels as stacked PFM planes")
    p.add_argument("--cam", required=True, help="camera intrinsics JSON")
    p.add_argument("--size", help="HxW target resolution (default: camera size)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_maps)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True, help='JSON {"net": {...}, "train": {...}}')
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="output JSON path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    p.add_argument("--full", action="store_true",
                   help="include the end-to-end network graph check")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("experiment", help="run an experiment grid and assert orderings")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data-root", default=None,
                   help="dataset cache directory (default: OUT/data)")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
