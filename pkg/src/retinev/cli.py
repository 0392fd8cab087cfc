"""Command-line entry point: synth, pretrain, train, enhance, evaluate, bench."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, load_run_config
from .degrade import synthesize_training_sample
from .events import SensorConstants, extract_fpe, load_events, load_fpe, save_fpe
from .pipeline import enhance_image, evaluate_dataset
from .raster import EncodedRaster, load_image, save_image
from .t2i import beta_normalize
from .train import load_checkpoint, model_from_checkpoint, pretrain_denoiser, \
    save_checkpoint, train_main


def _overrides(args) -> dict:
    ov: dict = {}
    if getattr(args, "seed", None) is not None:
        ov["train"] = {"seed": args.seed}
        ov["lldm"] = {"seed": args.seed}
    return ov


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    gt_dir = Path(args.gt)
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"GT directory not found: {gt_dir}")
    paths = sorted(p for p in gt_dir.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise FileNotFoundError(f"no PNG images in {gt_dir}")
    out = Path(args.out)
    (out / "fpe").mkdir(parents=True, exist_ok=True)
    (out / "preview").mkdir(parents=True, exist_ok=True)
    sensor = SensorConstants()
    entries = []
    for i, path in enumerate(paths):
        gt = load_image(path)
        fpe, _ = synthesize_training_sample(gt, sensor, cfg.lldm, sample_index=i)
        save_fpe(fpe, out / "fpe" / (path.stem + ".fpe"))
        preview = beta_normalize(fpe, 0.0).t_norm.astype(np.float32)
        save_image(EncodedRaster(preview[:, :, None], gamma=1.0),
                   out / "preview" / (path.stem + ".png"))
        entries.append({"name": path.stem, "source": str(path), "sample_index": i})
    (out / "manifest.json").write_text(json.dumps(
        {"seed": cfg.lldm.seed, "config_hash": cfg.config_hash(), "files": entries},
        indent=2))
    print(f"wrote {len(paths)} FPE maps to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    out_dir = Path(cfg.train.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = pretrain_denoiser(cfg, log_file=out_dir / "pretrain_loss.txt")
    save_checkpoint(ckpt, out_dir / "pretrain.ckpt")
    print(f"pretrain checkpoint written to {out_dir / 'pretrain.ckpt'}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    out_dir = Path(cfg.train.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    init = None
    if args.resume:
        init = load_checkpoint(args.resume, expected_hash=cfg.config_hash())
    elif (out_dir / "pretrain.ckpt").is_file():
        init = load_checkpoint(out_dir / "pretrain.ckpt",
                               expected_hash=cfg.config_hash())
    ckpt = train_main(cfg, init=init, log_file=out_dir / "loss.txt",
                      checkpoint_path=out_dir / "model.ckpt")
    save_checkpoint(ckpt, out_dir / "model.ckpt")
    print(f"final checkpoint at iteration {ckpt['iteration']}: "
          f"{out_dir / 'model.ckpt'}")
    return 0


def _load_fpe_or_events(args):
    if args.fpe:
        return load_fpe(args.fpe)
    return extract_fpe(load_events(args.events))


def cmd_enhance(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    low = load_image(args.low)
    fpe = _load_fpe_or_events(args)
    out = enhance_image(model, low, fpe, beta=args.beta)
    save_image(EncodedRaster(out["s_hat"], gamma=low.gamma), args.out)
    if args.dump_intermediates:
        dump = Path(args.dump_intermediates)
        dump.mkdir(parents=True, exist_ok=True)
        save_image(EncodedRaster(out["i_hat"], gamma=1.0), dump / "illumination.png")
        save_image(EncodedRaster(np.clip(out["r_hat"], 0, 1), gamma=1.0),
                   dump / "reflectance.png")
        np.save(dump / "illumination.npy", out["i_hat"])
    print(f"enhanced image written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    report = evaluate_dataset(model, args.data, beta=args.beta)
    report.write(args.report)
    print(f"{len(report.rows)} images: mean PSNR {report.mean_psnr:.2f} dB, "
          f"mean SSIM {report.mean_ssim:.4f}")
    return 0


def cmd_bench(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    w, h = (int(v) for v in args.size.lower().split("x"))
    s_low = torch.rand(1, 3, h, w)
    t_norm = torch.rand(1, 1, h, w) * 0.999 + 1e-3
    with torch.no_grad():
        model.enhance(s_low, t_norm)  # warmup
        times = []
        for _ in range(args.iters):
            t0 = time.perf_counter()
            model.enhance(s_low, t_norm)
            times.append(time.perf_counter() - t0)
    mean_s = float(np.mean(times))
    median_s = float(np.median(times))
    print(f"resolution {w}x{h}, {args.iters} iterations")
    print(f"mean latency {mean_s * 1e3:.1f} ms, median {median_s * 1e3:.1f} ms, "
          f"{1.0 / mean_s:.1f} FPS")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retinev",
        description="Event-based low-light image enhancement from "
                    "temporal-mapping events")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize FPE maps from GT images")
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="pretrain the T2I denoiser")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="joint training of the full pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one low-light image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--low", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--events", default=None)
    g.add_argument("--fpe", default=None)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-intermediates", default=None)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="PSNR/SSIM report on a paired dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--beta", type=float, default=0.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="forward-pass latency / FPS report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--size", default="640x480")
    p.add_argument("--iters", type=int, default=10)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
