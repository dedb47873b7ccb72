"""Command-line entry point: ``wsvos <command> [options]``.

Errors are printed as a single ``error: <kind>: <message>`` line on stderr
and the process exits with a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml
from PIL import Image, ImageDraw

from . import campost
from .config import ConfigError, RunConfig, config_from_dict, dump_config, load_config
from .dataio import (SyntheticConfig, generate_synthetic, load_dataset, read_frame_dir, read_frame_labels_csv,
                     save_dataset, split_clips)
from .trainer import VARIANT_ALIASES, load_checkpoint, predict, save_checkpoint, score_predictions, train, \
    variant_outputs

logger = logging.getLogger("wsvos")


class CliError(Exception):
    def __init__(self, kind, message, code=2):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _require_file(path, flag):
    if not Path(path).exists():
        raise CliError("missing_path", f"{flag} {path} does not exist")


def _train_dataset(cfg: RunConfig):
    if cfg.data.train:
        _require_file(cfg.data.train, "data.train")
        return load_dataset(cfg.data.train)
    return generate_synthetic(cfg.synth, cfg.data.synth_count)


def cmd_train(args):
    _require_file(args.config, "--config")
    cfg = load_config(args.config)
    out = Path(args.out)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    dataset = _train_dataset(cfg)
    log_path = out / "logs" / "train_log.jsonl"
    log_path.write_text("")
    ckpt, log = train(dataset, cfg, log_path=log_path)
    save_checkpoint(ckpt, out / "checkpoints" / "last.pt")
    print(f"trained {len(log)} epochs on {len(dataset)} clips; checkpoint {out / 'checkpoints' / 'last.pt'}")
    return 0


def cmd_eval(args):
    _require_file(args.ckpt, "--ckpt")
    _require_file(args.data, "--data")
    ckpt = load_checkpoint(args.ckpt)
    variant = VARIANT_ALIASES[args.variant]
    if variant != "teacher_only" and not ckpt.student_trained:
        print(f"warning: the student was never trained in this checkpoint; '{args.variant}' "
              "output reflects an untrained student", file=sys.stderr)
    cfg = ckpt.run_config
    dataset = load_dataset(args.data)
    if dataset.class_names != ckpt.class_names:
        raise CliError("class_mismatch", f"dataset classes {dataset.class_names} differ from "
                                         f"checkpoint classes {ckpt.class_names}")
    model = ckpt.build_model()
    pred = predict(model, dataset.frames_array(), cfg, cfg.trainer.batch_size)
    report = score_predictions(pred, dataset, variant, cfg)
    print(report.table())
    if args.report:
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json())
    if args.masks_out:
        cams, _ = variant_outputs(pred, variant)
        for clip, cam in zip(dataset.clips, cams):
            masks = campost.upsample_mask(campost.binarize(cam, cfg.post.threshold), clip.frame_size)
            campost.export_masks(masks, args.masks_out, dataset.class_names, clip.clip_id)
    return 0


def cmd_synth(args):
    synth = SyntheticConfig()
    if args.config:
        _require_file(args.config, "--config")
        data = yaml.safe_load(Path(args.config).read_text()) or {}
        # accept either a full run config or a bare synth block
        synth = config_from_dict({"synth": data.get("synth", data) if isinstance(data, dict) else data}).synth
    if args.seed is not None:
        synth.seed = args.seed
    ds = generate_synthetic(synth, args.count)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} clips to {args.out}")
    return 0


def cmd_split(args):
    _require_file(args.frames, "--frames")
    _require_file(args.labels, "--labels")
    frame_labels, names = read_frame_labels_csv(args.labels)
    frames = read_frame_dir(args.frames)
    ds = split_clips(frames, frame_labels, args.clip_len, class_names=names,
                     video_id=args.video_id or Path(args.frames).name)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} clips to {args.out}")
    return 0


def cmd_stats(args):
    _require_file(args.data, "--data")
    ds = load_dataset(args.data)
    stats = ds.stats
    if args.json:
        print(json.dumps(stats, indent=2))
        return 0
    print(f"{'class':>16} | {'clips':>6} | {'frames':>7} | {'FPC[%]':>7}")
    for name, row in stats.items():
        fpc = "n/a" if row["fpc"] is None else f"{row['fpc']:.1f}"
        print(f"{name:>16} | {row['clips']:>6} | {row['frames']:>7} | {fpc:>7}")
    return 0


def overlay_frame(frame, cam, mask, color=(255, 0, 0), alpha=0.5):
    """Blend a normalized CAM as a red heat layer over a frame and outline the mask."""
    H, W = frame.shape[:2]
    base = np.clip(frame[..., :3] if frame.shape[-1] >= 3 else np.repeat(frame, 3, axis=-1), 0, 1)
    heat = np.kron(cam, np.ones((H // cam.shape[0], W // cam.shape[1])))
    tint = np.zeros_like(base)
    tint[..., 0] = 1.0
    blended = base * (1 - alpha * heat[..., None]) + tint * alpha * heat[..., None]
    img = Image.fromarray((blended * 255).round().astype(np.uint8))
    # contour: mask pixels with at least one 4-neighbour outside the mask
    m = np.pad(mask, 1)
    interior = m[1:-1, 1:-1] & m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
    edge = mask & ~interior
    draw = ImageDraw.Draw(img)
    for y, x in zip(*np.nonzero(edge)):
        draw.point((int(x), int(y)), fill=color)
    return img


def cmd_viz(args):
    _require_file(args.ckpt, "--ckpt")
    _require_file(args.data, "--data")
    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.run_config
    ds = load_dataset(args.data)
    ids = [c.clip_id for c in ds.clips]
    if args.clip in ids:
        index = ids.index(args.clip)
    elif args.clip.isdigit() and int(args.clip) < len(ds):
        index = int(args.clip)
    else:
        raise CliError("unknown_clip", f"clip {args.clip!r} not found")
    names = ds.class_names
    if args.cls in names:
        n = names.index(args.cls)
    elif args.cls.isdigit() and int(args.cls) < len(names):
        n = int(args.cls)
    else:
        raise CliError("unknown_class", f"class {args.cls!r} not in {names}")
    clip = ds[index]
    pred = predict(ckpt.build_model(), clip.frames[None], cfg)
    cams, _ = variant_outputs(pred, args.variant)
    cam = cams[0][..., n]
    masks = campost.upsample_mask(campost.binarize(cams[0], cfg.post.threshold), clip.frame_size)[..., n]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for d in range(clip.num_frames):
        overlay_frame(clip.frames[d], cam[d], masks[d]).save(out / f"{clip.clip_id}_{names[n]}_{d:04d}.png")
    print(f"wrote {clip.num_frames} overlays to {out}")
    return 0


def build_parser():
    parser = _Parser(prog="wsvos", description="Weakly supervised video object segmentation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from a YAML run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory (config echo, checkpoints, logs)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset with ground truth")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=sorted(VARIANT_ALIASES), default="full")
    p.add_argument("--report", help="write the metrics report as JSON")
    p.add_argument("--masks-out", help="also export predicted masks to this directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render a synthetic dataset")
    p.add_argument("--config", help="YAML with a synth block (or a bare synth mapping)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="cut a long frame sequence into labelled clips")
    p.add_argument("--frames", required=True, help="directory of frame images")
    p.add_argument("--labels", required=True, help="CSV of per-frame presence, header = class names")
    p.add_argument("--clip-len", type=int, default=30)
    p.add_argument("--video-id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", help="per-class presence statistics of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("viz", help="write CAM overlays for one clip and class")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clip", default="0", help="clip id or index")
    p.add_argument("--class", dest="cls", default="0", help="class name or index")
    p.add_argument("--variant", choices=sorted(VARIANT_ALIASES), default="full")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
