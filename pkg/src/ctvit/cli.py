"""``ctvit`` command line: train, eval, count, gen-data, ablate.

Exit codes: 0 ok, 2 config/checkpoint error, 3 data error, 4 non-finite loss.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import checkpoint, complexity, plotting
from .config import (
    PRESETS, VARIANTS, ConfigError, ModelConfig, TrainingConfig, ViTConfig,
    apply_variant, dump_config, load_config,
)
from .data import EXPRESSIONS, DataError, generate_toy_dataset, load_dataset, write_toy_dataset
from .model import CrossTaskModel
from .train import MetricLog, NumericError, evaluate, stage1_train, stage2_train

log = logging.getLogger("ctvit")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

REPORTED = {  # (params, FLOPs) as published for each preset
    "vit-b16": (86.7e6, 17.6e9),
    "crossvit-b": (104.7e6, 21.2e9),
    "proposed": (125.8e6, 24.6e9),
}

CHECKPOINT_NAME = "ckpt"
METRICS_NAME = "metrics.csv"
MANIFEST_NAME = "run_manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load_configs(args) -> tuple[ModelConfig, TrainingConfig]:
    model_cfg, train_cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        model_cfg = dataclasses.replace(model_cfg, seed=args.seed)
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if getattr(args, "variant", None):
        model_cfg = apply_variant(model_cfg, args.variant)
    return model_cfg, train_cfg


def _datasets(args, model_cfg: ModelConfig, train_cfg: TrainingConfig):
    norm = dict(mean=train_cfg.norm_mean, std=train_cfg.norm_std)
    if args.toy:
        side = model_cfg.image_side
        train = generate_toy_dataset(train_cfg.toy_train, side, train_cfg.seed, **norm)
        test = generate_toy_dataset(train_cfg.toy_test, side, train_cfg.seed + 1, **norm)
        return train, test
    kw = dict(side=model_cfg.image_side, num_expr_classes=model_cfg.num_expr_classes,
              num_mask_classes=model_cfg.num_mask_classes, **norm)
    train = load_dataset(args.data, **kw)
    test_path = getattr(args, "test_data", None) or train_cfg.test_data
    test = load_dataset(test_path, **kw) if test_path else []
    return train, test


def cmd_train(args) -> int:
    if not args.toy and not args.data:
        raise ConfigError("either --data or --toy is required")
    model_cfg, train_cfg = _load_configs(args)
    stages = {"1": (1,), "2": (2,), "both": (1, 2)}[args.stage]
    train_data, test_data = _datasets(args, model_cfg, train_cfg)
    if not train_data:
        raise DataError("training data is empty")

    model = CrossTaskModel(model_cfg)
    if args.resume:
        checkpoint.load_into(model, args.resume)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    metrics = MetricLog()
    if 1 in stages:
        metrics.extend(stage1_train(model, train_data, train_cfg))
    if 2 in stages:
        metrics.extend(stage2_train(model, train_data, train_cfg))

    ckpt_bytes = checkpoint.save(model, out / CHECKPOINT_NAME)
    metrics.write_csv(out / METRICS_NAME)
    (out / "config.cfg").write_text(dump_config(model_cfg, train_cfg), encoding="utf-8")

    summary = {}
    if test_data:
        report = evaluate(model, test_data)
        summary = {"test_expr_acc": report.expr_acc, "test_mask_acc": report.mask_acc}
        print(f"test expr_acc {report.expr_acc:.4f}  mask_acc {report.mask_acc:.4f}  (n={report.n_samples})")
        (out / "test_report.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n")
        if not args.no_plots:
            plotting.confusion(report.confusion_expr, _expr_labels(model_cfg), out / "confusion_expr.png", "expression")
            plotting.confusion(report.confusion_mask, ["no mask", "mask"], out / "confusion_mask.png", "mask")
    if metrics.rows and not args.no_plots:
        plotting.training_curves(metrics, out / "training_curves.png")

    manifest = {
        "config": dataclasses.asdict(model_cfg),
        "training": dataclasses.asdict(train_cfg),
        "seed": train_cfg.seed,
        "stages": list(stages),
        "resumed_from": str(args.resume) if args.resume else None,
        "started": started,
        "finished": _now(),
        "checkpoint": CHECKPOINT_NAME,
        "checkpoint_hash": checkpoint.git_blob_hash(ckpt_bytes),
        "metrics_csv": METRICS_NAME,
        **summary,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    if metrics.rows:
        last = metrics.rows[-1]
        print(f"stage {last.stage} epoch {last.epoch}: loss {last.train_loss:.4f} "
              f"expr_acc {last.expr_acc:.4f} mask_acc {last.mask_acc:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def _expr_labels(cfg: ModelConfig) -> list[str]:
    if cfg.num_expr_classes == len(EXPRESSIONS):
        return list(EXPRESSIONS)
    return [str(i) for i in range(cfg.num_expr_classes)]


def cmd_eval(args) -> int:
    if not args.toy and not args.data:
        raise ConfigError("either --data or --toy is required")
    model_cfg, train_cfg = _load_configs(args)
    model = CrossTaskModel(model_cfg, initialize=False)
    checkpoint.load_into(model, args.ckpt)
    train, test = _datasets(args, model_cfg, train_cfg)
    data = test if args.toy and args.toy_split == "test" else train
    report = evaluate(model, data, head=args.head)
    if args.json:
        print(json.dumps(report.as_dict()))
        return EXIT_OK
    print(f"n_samples {report.n_samples}")
    print(f"expr_acc {report.expr_acc!r}")
    print(f"mask_acc {report.mask_acc!r}")
    print("confusion_expr (rows: true, cols: predicted)")
    for row in report.confusion_expr:
        print("  " + " ".join(f"{v:5d}" for v in row))
    print("confusion_mask")
    for row in report.confusion_mask:
        print("  " + " ".join(f"{v:5d}" for v in row))
    return EXIT_OK


def _count_target(args):
    if args.preset:
        cfg = PRESETS[args.preset]()
    elif args.config:
        cfg, _ = load_config(args.config)
    else:
        raise ConfigError("count needs --config or --preset")
    if args.variant:
        if isinstance(cfg, ViTConfig):
            raise ConfigError("--variant does not apply to the vit-b16 preset")
        cfg = apply_variant(cfg, args.variant)
    return cfg


def cmd_count(args) -> int:
    cfg = _count_target(args)
    parts = complexity.breakdown(cfg)
    total = complexity.total(cfg)
    result = {"params": total.params, "flops": total.flops,
              "params_M": total.params / 1e6, "gflops": total.flops / 1e9}
    ref = REPORTED.get(args.preset) if args.preset and not args.variant else None
    if args.preset == "crossvit-b" or args.variant == "phase1-only":
        ref = REPORTED["crossvit-b"]
    if ref:
        result["reported_params_M"] = ref[0] / 1e6
        result["reported_gflops"] = ref[1] / 1e9
    if args.breakdown:
        result["breakdown"] = {k: {"params": v.params, "flops": v.flops} for k, v in parts.items()}
    if args.json:
        print(json.dumps(result))
    else:
        print(f"params {total.params} ({total.params / 1e6:.2f}M)")
        print(f"gflops {total.flops / 1e9:.3f}")
        if ref:
            print(f"reported {ref[0] / 1e6:.1f}M / {ref[1] / 1e9:.1f}G  "
                  f"(delta {100 * (total.params / ref[0] - 1):+.2f}% / {100 * (total.flops / ref[1] - 1):+.2f}%)")
        if args.breakdown:
            width = max(len(k) for k in parts)
            for k, v in parts.items():
                print(f"  {k:<{width}}  {v.params:>12d}  {v.flops / 1e9:9.4f}G")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for name, preset in PRESETS.items():
            c = complexity.total(preset())
            rows.append((name, c.params / 1e6, c.flops / 1e9, REPORTED[name][0] / 1e6, REPORTED[name][1] / 1e9))
        plotting.complexity_bars(rows, out / "complexity.png")
        with open(out / "complexity.csv", "w", encoding="utf-8") as fh:
            fh.write("model,params_M,gflops,reported_params_M,reported_gflops\n")
            for r in rows:
                fh.write(",".join([r[0]] + [f"{v:.4f}" for v in r[1:]]) + "\n")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.n < 1 or args.side < 1:
        raise ConfigError("--n and --side must be positive")
    manifest = write_toy_dataset(args.out, args.n, args.side, args.seed)
    print(f"wrote {args.n} samples to {manifest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctvit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_args(p):
        p.add_argument("--config", required=True)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--data", help="training manifest")
        src.add_argument("--toy", action="store_true", help="use the synthetic glyph/band dataset")
        p.add_argument("--test-data", help="optional held-out manifest")
        p.add_argument("--stage", choices=("1", "2", "both"), default="both")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="run")
        p.add_argument("--resume", help="checkpoint to start from")
        p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("train", help="two-stage training")
    add_train_args(p)
    p.set_defaults(func=cmd_train, variant=None)

    p = sub.add_parser("ablate", help="train an ablation variant")
    add_train_args(p)
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and confusion matrices")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data")
    src.add_argument("--toy", action="store_true")
    p.add_argument("--toy-split", choices=("train", "test"), default="train")
    p.add_argument("--head", choices=("expr", "shared"), default="expr")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval, test_data=None)

    p = sub.add_parser("count", help="analytic parameter and FLOP counts")
    p.add_argument("--config")
    p.add_argument("--preset", choices=tuple(PRESETS))
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--breakdown", action="store_true")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", help="also write complexity.csv and complexity.png here")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("gen-data", help="write the synthetic dataset as PPM + manifest")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, checkpoint.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
