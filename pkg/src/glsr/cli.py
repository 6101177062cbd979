"""Command-line interface: gen-data, train, eval, infer, check, bench."""

from __future__ import annotations

import argparse
import os
import sys

from . import bench as bench_mod
from . import data, pipeline
from .model import GLMamba, ModelConfig, load_checkpoint, param_report


def _add_config_flags(p):
    p.add_argument("--config", help="plain-text key=value config file")
    p.add_argument("--seed", type=int, help="override the config seed")


def _effective_config(args, extra=None):
    """Config file < GLSR_SEED env < command-line flags."""
    overrides = {"seed": args.seed}
    if extra:
        overrides.update(extra)
    return data.load_config(args.config, overrides)


def _echo_config(cfg_dict, log):
    for key in sorted(cfg_dict):
        log(f"config {key} = {cfg_dict[key]}")


def _run_logger(outdir):
    os.makedirs(outdir, exist_ok=True)
    log_path = os.path.join(outdir, "run.log")
    fh = open(log_path, "w")

    def log(msg):
        print(msg)
        fh.write(msg + "\n")
        fh.flush()

    return log


def cmd_gen_data(args):
    cfg = _effective_config(args, {
        "count": args.count, "size": args.size, "scale": args.scale,
    })
    spec = data.SyntheticSceneSpec(
        seed=int(cfg.get("seed", 0)),
        count=int(cfg.get("count", 16)),
        size=int(cfg.get("size", 64)),
        scale=int(cfg.get("scale", 2)),
    )
    log = _run_logger(args.out)
    _echo_config(vars(spec), log)
    pairs = data.gen_synthetic(spec)
    data.save_dataset(args.out, pairs, spec)
    log(f"wrote {len(pairs)} pairs to {args.out}")
    return 0


def _model_config(args, extra=None):
    cfg_dict = _effective_config(args, extra)
    return ModelConfig.from_dict(cfg_dict), cfg_dict


def cmd_train(args):
    extra = {}
    for key in ("channels", "num_blocks", "lr", "batch", "scale",
                "lr_scan_mode", "ref_scan_mode", "fusion_mode"):
        val = getattr(args, key, None)
        if val is not None:
            extra[key] = val
    cfg, cfg_dict = _model_config(args, extra)
    log = _run_logger(args.out)
    _echo_config({**cfg_dict, "steps": args.steps, "data": args.data}, log)
    pairs = data.load_dataset(args.data)
    model = optimizer = None
    if args.resume:
        model, optimizer = load_checkpoint(args.resume)
        cfg = model.cfg
    report = param_report(model if model is not None else GLMamba(cfg))
    log(f"param_count = {report['total']} "
        f"(reference {report['reference']}, ratio {report['ratio']:.3f})")
    model, optimizer, rows = pipeline.run_train(
        cfg, pairs, args.steps, args.out, log=log,
        model=model, optimizer=optimizer,
    )
    if rows:
        log(f"final loss = {rows[-1][1]:.6f}")
    log(f"checkpoint written to {os.path.join(args.out, 'model.glck')}")
    return 0


def cmd_eval(args):
    log = _run_logger(args.out)
    model, _ = load_checkpoint(args.checkpoint)
    _echo_config({"checkpoint": args.checkpoint, "data": args.data}, log)
    pairs = data.load_dataset(args.data)
    rows = pipeline.run_eval(model, pairs, args.out)
    mean_psnr = sum(r[1] for r in rows) / len(rows)
    mean_ssim = sum(r[2] for r in rows) / len(rows)
    base = pipeline.bicubic_baseline(pairs, model.cfg.scale)
    mean_base = sum(r[1] for r in base) / len(base)
    log(f"mean_psnr_db = {mean_psnr:.4f}")
    log(f"mean_ssim = {mean_ssim:.4f}")
    log(f"bicubic_mean_psnr_db = {mean_base:.4f}")
    return 0


def cmd_infer(args):
    model, _ = load_checkpoint(args.checkpoint)
    sr_path, rec_path = pipeline.run_infer(model, args.lr, args.ref, args.out)
    print(f"wrote {sr_path}")
    print(f"wrote {rec_path}")
    return 0


def cmd_check(args):
    from .checks import run_checks

    return 1 if run_checks() else 0


def cmd_bench(args):
    result = bench_mod.run_complexity_bench()
    for size, tokens, scan_s, attn_s in result["rows"]:
        print(f"grid {size}x{size} ({tokens} tokens): "
              f"ss2d {scan_s:.4f}s, attention {attn_s:.4f}s")
    print(f"scan_slope = {result['scan_slope']:.3f}")
    print(f"attn_slope = {result['attn_slope']:.3f}")
    bench_mod.write_bench_csv(args.out, result)
    print(f"wrote {args.out}")
    backend = bench_mod.run_backend_bench()
    if backend["compiled_s"] is None:
        print("backend: compiled extension unavailable, python fallback only")
    else:
        print(f"backend: python {backend['python_s']:.4f}s, "
              f"compiled {backend['compiled_s']:.4f}s "
              f"({backend['speedup']:.1f}x)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="glsr",
        description="Reference-guided super-resolution with global/local "
                    "selective scans.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--scale", type=int)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--channels", type=int)
    p.add_argument("--num-blocks", dest="num_blocks", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--lr-scan-mode", dest="lr_scan_mode",
                   choices=("global", "local"))
    p.add_argument("--ref-scan-mode", dest="ref_scan_mode",
                   choices=("global", "local"))
    p.add_argument("--fusion-mode", dest="fusion_mode",
                   choices=("mmfusion", "addconv"))
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="super-resolve one LR/Ref image pair")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lr", required=True, help="low-resolution input PNG")
    p.add_argument("--ref", required=True, help="reference-modality PNG")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("check", help="run the invariant/gradient suite")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("bench", help="scan-vs-attention complexity benchmark")
    _add_config_flags(p)
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
