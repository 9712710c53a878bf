"""Command-line entry points.

    roadmtl preprocess  --source-root RAW --out DATA/source
    roadmtl synth       --out DATA --seed 0
    roadmtl init-config --preset desk --out run.toml
    roadmtl train       --config run.toml --mode mtl --out runs/mtl
    roadmtl eval        --checkpoint runs/mtl/best.pt --split test --out report.tsv
    roadmtl visualize   --checkpoint runs/mtl/best.pt --split test --what steer_features --out viz/

Errors are printed as one line ``<CODE>: <message>`` on stderr and the
process exits with status 2. ``ROADMTL_DATA_ROOT`` is the default data root.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import ConfigError, DataError, RoadMTLError

log = logging.getLogger("roadmtl")

DATA_ROOT_ENV = "ROADMTL_DATA_ROOT"
MODE_CHOICES = ("st", "tl", "mtl")


def _data_root(arg=None) -> Path:
    root = arg or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise ConfigError(f"no data root given; pass --data-root or set {DATA_ROOT_ENV}")
    return Path(root)


def _size(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 320x1216, got {text!r}")
    return h, w


# -- preprocess ---------------------------------------------------------------

def _label_files(root: Path):
    labels = root / "labels"
    if not labels.is_dir():
        raise DataError(f"{root} has no labels/ directory")
    return sorted(labels.glob("*.png"))


def _find_image(root: Path, sid: str) -> Path:
    for ext in (".png", ".jpg", ".jpeg"):
        p = root / "images" / f"{sid}{ext}"
        if p.is_file():
            return p
    raise DataError(f"no image for label {sid!r}")


def cmd_preprocess(args) -> int:
    from PIL import Image

    from .data.dataset import DatasetManifest, ManifestEntry, read_image, write_image, write_manifest, write_mask
    from .data.preprocess import crop_top_quarter, filter_by_road_fraction, merge_road_classes, resize_pair

    src, out = Path(args.source_root), Path(args.out)
    class_ids = [int(v) for v in args.class_ids.split(",")] if args.class_ids else None
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries, dropped, errors = [], 0, []
    for label_path in _label_files(src):
        sid = label_path.stem
        try:
            with Image.open(label_path) as im:
                if im.mode not in ("L", "P", "I", "I;16"):
                    raise DataError(f"label image mode {im.mode} is not an integer label map")
                labels = np.asarray(im).astype(np.int64)
            mask = merge_road_classes(labels, class_ids) if class_ids else merge_road_classes(labels)
            mask = mask[None]
            if not filter_by_road_fraction(mask):
                dropped += 1
                continue
            image = read_image(_find_image(src, sid))
            if image.shape[-2:] != mask.shape[-2:]:
                raise DataError(f"image {image.shape[-2:]} and labels {mask.shape[-2:]} differ in size")
            image, mask = crop_top_quarter(image, mask)
            image, mask = resize_pair(image, mask, args.size)
        except (OSError, ValueError) as exc:
            errors.append(f"{label_path.name}: {exc}")
            continue
        write_image(out / "images" / f"{sid}.png", image)
        write_mask(out / "masks" / f"{sid}.png", mask)
        entries.append(ManifestEntry(sid, f"images/{sid}.png", f"masks/{sid}.png"))
    write_manifest(DatasetManifest(out, entries, args.split))
    print(f"kept {len(entries)} dropped {dropped} errors {len(errors)}")
    if errors:
        for e in errors:
            print(f"  {e}", file=sys.stderr)
        raise DataError(f"{len(errors)} label files could not be processed")
    return 0


# -- synth --------------------------------------------------------------------

def write_synth_split(root: Path, split: str, samples, with_mask: bool, with_angle: bool, max_angle: float):
    from .data.dataset import DatasetManifest, ManifestEntry, write_image, write_manifest, write_mask

    (root / "images").mkdir(parents=True, exist_ok=True)
    if with_mask:
        (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        write_image(root / "images" / f"{s.id}.png", s.image)
        mask_rel = None
        if with_mask:
            write_mask(root / "masks" / f"{s.id}.png", s.road_mask)
            mask_rel = f"masks/{s.id}.png"
        angle = s.steer_angle * max_angle if with_angle and s.steer_angle is not None else None
        entries.append(ManifestEntry(s.id, f"images/{s.id}.png", mask_rel, angle, i / 10.0 if with_angle else None))
    write_manifest(DatasetManifest(root, entries, split, max_angle))


def cmd_synth(args) -> int:
    from .experiment import SOURCE_WEATHERS, TARGET_WEATHERS, synth_samples

    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    ma = args.max_angle
    src = synth_samples(args.n_source, args.source_size, "source", SOURCE_WEATHERS, rng, "src")
    write_synth_split(out / "source", "train", src, True, False, ma)
    tgt = synth_samples(args.n_target, args.target_size, "target", TARGET_WEATHERS, rng, "tgt")
    write_synth_split(out / "target", "train", tgt, False, True, ma)
    val = synth_samples(args.n_val, args.target_size, "target", TARGET_WEATHERS, rng, "val", annotated=True)
    write_synth_split(out / "target", "val", val, True, True, ma)
    test = synth_samples(args.n_test, args.target_size, "target", TARGET_WEATHERS, rng, "test", annotated=True)
    write_synth_split(out / "target", "test", test, True, True, ma)
    print(f"wrote {len(src)} source, {len(tgt)} target, {len(val)} val, {len(test)} test samples to {out}")
    return 0


# -- config / train -----------------------------------------------------------

def cmd_init_config(args) -> int:
    cfg = config_mod.desk_config() if args.preset == "desk" else config_mod.RunConfig()
    text = config_mod.dumps(cfg)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    from .trainer import Trainer, stores_from_config

    cfg = config_mod.load(args.config)
    cfg.train.mode = config_mod.normalize_mode(args.mode)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.steps is not None:
        cfg.train.total_steps = args.steps
        cfg.train.__post_init__()
    out = Path(args.out) if args.out else Path(cfg.train.checkpoint_dir)
    cfg.train.checkpoint_dir = str(out)
    root = Path(args.data_root) if args.data_root else (Path(cfg.data.root) if cfg.data.root else _data_root())
    source, target, val = stores_from_config(cfg, root)
    trainer = Trainer(cfg, source, target if cfg.train.mode != "st" else None, val)
    out.mkdir(parents=True, exist_ok=True)
    config_mod.save(cfg, out / "config.toml")
    state = trainer.fit(resume_from=args.resume, run_log=out / "run_log.tsv")
    print(f"trained {state.step} steps; best val mIoU {state.best_val_miou:.4f} at {state.best_checkpoint_path}")
    return 0


# -- eval / visualize ---------------------------------------------------------

def _manifest_from_args(args):
    from .data.dataset import load_manifest

    if args.manifest:
        return load_manifest(args.manifest)
    return load_manifest(_data_root(args.data_root) / "target" / f"{args.split}.tsv")


def cmd_eval(args) -> int:
    from .data.dataset import SampleStore
    from .metrics import evaluate_set
    from .trainer import load_model

    model = load_model(args.checkpoint)
    manifest = _manifest_from_args(args)
    if not manifest.annotated:
        raise DataError("evaluation manifest contains samples without road masks")
    report = evaluate_set(model, SampleStore(manifest, "target", cache=False))
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    print(f"mIoU {report.miou:.4f} precision {report.precision:.4f} recall {report.recall:.4f} "
          f"over {report.n_samples} samples")
    return 0


def cmd_visualize(args) -> int:
    import torch
    from PIL import Image

    from .data.dataset import SampleStore
    from .metrics import predict_road
    from .trainer import load_model
    from .viz import segmentation_panel, steer_feature_panel, to_uint8

    model = load_model(args.checkpoint)
    store = SampleStore(_manifest_from_args(args), "target", cache=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = len(store) if args.limit is None else min(args.limit, len(store))
    for i in range(n):
        s = store[i]
        x = torch.from_numpy(s.image[None]).float()
        if args.what == "steer_features":
            with torch.no_grad():
                feat = model(x, "source", steering=False).final_steer_feature[0].numpy()
            panel = steer_feature_panel(s.image, feat)
        else:
            pred = predict_road(model, x)[0]
            panel = segmentation_panel(s.image, pred, None if s.road_mask is None else s.road_mask[0])
        Image.fromarray(to_uint8(panel)).save(out / f"{s.id}_{args.what}.png")
    print(f"wrote {n} {args.what} overlays to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadmtl", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="merge classes, filter, crop and resize a labelled source set")
    p.add_argument("--source-root", required=True, help="directory with images/ and labels/")
    p.add_argument("--out", required=True)
    p.add_argument("--class-ids", help="comma separated drivable label ids")
    p.add_argument("--size", type=_size, default=(768, 1024))
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="write a synthetic source/target dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-source", type=int, default=200)
    p.add_argument("--n-target", type=int, default=400)
    p.add_argument("--n-val", type=int, default=100)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--source-size", type=_size, default=(768, 1024))
    p.add_argument("--target-size", type=_size, default=(320, 1216))
    p.add_argument("--max-angle", type=float, default=1.0, help="raw angle stored for a normalised angle of 1")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init-config", help="write a default run configuration")
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    p.add_argument("--out")
    p.set_defaults(func=cmd_init_config)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=MODE_CHOICES, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--out")
    p.add_argument("--data-root")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate a checkpoint on an annotated split"),
                                 ("visualize", cmd_visualize, "render overlays")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--manifest")
        p.add_argument("--split", default="val", choices=("train", "val", "test"))
        p.add_argument("--data-root")
        p.add_argument("--out", required=name == "visualize")
        if name == "visualize":
            p.add_argument("--what", choices=("steer_features", "segmentation"), default="segmentation")
            p.add_argument("--limit", type=int)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except RoadMTLError as exc:
        print(f"{exc.code}: {' '.join(str(exc).split())}", file=sys.stderr)
    except OSError as exc:
        print(f"E_IO: {' '.join(str(exc).split())}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
