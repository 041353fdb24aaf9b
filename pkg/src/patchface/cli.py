"""Command-line interface.

Subcommands: synth, train, enroll, identify, evaluate, baseline.  Every
command prints the seed it ran with, echoes the effective configuration
into its text outputs, exits 0 on success and 1 with a one-line
machine-parsable `error: <kind>: <message>` on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import Config, parse_config
from .dataset import load_manifest, load_sample
from .evaluate import decide_entry, enroll, evaluate, make_extractor
from .gallery_io import load_gallery, save_gallery
from .nn import load_params, save_params
from .pipeline import sample_to_patches
from .synthetic import SyntheticSpec, generate_synthetic
from .triplet import PatchDataset, train

MODALITY_CHOICES = ("image", "depth", "both")


def _load_config(args) -> Config:
    cfg = Config()
    if getattr(args, "config", None):
        cfg = parse_config(args.config, base=cfg)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _echo_seed(cfg: Config) -> None:
    print(f"seed = {cfg.seed}")


def _gallery_patches(manifest, cfg: Config, modality: str):
    """Collect (patches, labels) per modality over the gallery split."""
    wanted = ("image", "depth") if modality == "both" else (modality,)
    out = {m: ([], []) for m in wanted}
    for entry in manifest.split("gallery"):
        sample = load_sample(manifest, entry)
        img_p, dep_p = sample_to_patches(
            sample, cfg.keypoint_config(),
            max_invalid_fraction=cfg.max_invalid_fraction,
        )
        per_mod = {"image": img_p, "depth": dep_p}
        for m in wanted:
            for p in per_mod[m]:
                out[m][0].append(p.data)
                out[m][1].append(entry.person)
    return out


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        identities=args.identities,
        samples_per_identity=args.samples,
        gallery_per_identity=args.gallery,
        seed=args.seed if args.seed is not None else 0,
    )
    print(f"seed = {spec.seed}")
    manifest = generate_synthetic(spec, args.out)
    print(f"wrote {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    _echo_seed(cfg)
    manifest = load_manifest(args.data, args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_mod = _gallery_patches(manifest, cfg, args.modality)
    # Per-modality runs are independent; depth gets seed + 1 so the two
    # models differ even with identical configuration.
    seeds = {"image": cfg.seed, "depth": cfg.seed + 1}
    for modality, (patches, labels) in per_mod.items():
        dataset = PatchDataset(np.stack(patches), labels)
        tc = cfg.train_config(seed=seeds[modality])
        if tc.pool_size is None:
            tc.pool_size = cfg.pool_size_per_person * len(dataset.persons)
        params, history = train(dataset, tc)
        model_path = out_dir / f"model.{modality}.pfnn"
        save_params(params, model_path)
        log_path = out_dir / f"train.{modality}.csv"
        with open(log_path, "w") as fh:
            for line in cfg.to_lines():
                fh.write(f"# {line}\n")
            fh.write("epoch,mean_batch_loss,valid_fraction,seconds\n")
            for s in history:
                fh.write(f"{s.epoch},{s.mean_batch_loss:.9f},"
                         f"{s.valid_fraction:.6f},{s.seconds:.3f}\n")
        print(f"trained {modality}: {len(dataset)} patches, "
              f"{len(history)} epochs -> {model_path}")
    return 0


def _load_models(models_dir, modality: str):
    models_dir = Path(models_dir)
    params = {"image": None, "depth": None}
    wanted = ("image", "depth") if modality == "both" else (modality,)
    for m in wanted:
        path = models_dir / f"model.{m}.pfnn"
        if not path.is_file():
            raise FileNotFoundError(f"model file not found: {path}")
        params[m] = load_params(path)
    return params


def cmd_enroll(args) -> int:
    cfg = _load_config(args)
    _echo_seed(cfg)
    manifest = load_manifest(args.data, args.manifest)
    params = _load_models(args.models, args.modality)
    extractor = make_extractor("cnn", params["image"], params["depth"])
    gallery = enroll(manifest, extractor, cfg, modality=args.modality)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "gallery.pfga"
    save_gallery(gallery, path)
    sizes = {m: gallery[m].size for m in gallery.modalities}
    print(f"enrolled {sizes} -> {path}")
    return 0


def cmd_identify(args) -> int:
    cfg = _load_config(args)
    _echo_seed(cfg)
    manifest = load_manifest(args.data, args.manifest)
    entry = next((e for e in manifest.entries if e.sample_id == args.sample),
                 None)
    if entry is None:
        raise LookupError(f"sample {args.sample!r} not in manifest")
    params = _load_models(args.models, args.modality)
    extractor = make_extractor("cnn", params["image"], params["depth"])
    gallery = load_gallery(args.gallery)
    result = decide_entry(manifest, entry, gallery, extractor, cfg,
                          modality=args.modality)
    header = ["sample", "predicted", "true"] + \
        [f"score_{p}" for p in result.persons]
    row = [result.sample_id, result.predictions["fused"],
           result.true_label or ""]
    row += [f"{s:.9f}" for s in result.fused_scores]
    print(",".join(header))
    print(",".join(row))
    return 0


def _run_evaluation(args, extractor_name: str) -> int:
    cfg = _load_config(args)
    _echo_seed(cfg)
    manifest = load_manifest(args.data, args.manifest)
    if extractor_name == "cnn":
        params = _load_models(args.models, args.modality)
        extractor = make_extractor("cnn", params["image"], params["depth"])
    else:
        extractor = make_extractor(extractor_name)
    if getattr(args, "gallery", None):
        gallery = load_gallery(args.gallery)
    else:
        gallery = enroll(manifest, extractor, cfg, modality=args.modality)
    report = evaluate(manifest, gallery, extractor, cfg,
                      modality=args.modality)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"report.{extractor.name}.csv"
    report.write_csv(path)
    print(report.summary_table())
    print(f"report -> {path}")
    print(f"evaluation took {report.seconds:.1f}s", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    return _run_evaluation(args, "cnn")


def cmd_baseline(args) -> int:
    return _run_evaluation(args, args.extractor)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchface",
        description="Patch-based RGB-D face identification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic RGB-D dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--identities", type=int, default=10)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--gallery", type=int, default=14,
                   help="gallery samples per identity; the rest are probes")
    p.set_defaults(fn=cmd_synth)

    def common(p, gallery_arg=False, models_arg=False):
        p.add_argument("--data", required=True, help="dataset root directory")
        p.add_argument("--manifest", default=None,
                       help="manifest path (default: <data>/manifest.csv)")
        p.add_argument("--config", default=None, help="config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--modality", choices=MODALITY_CHOICES, default="both")
        if models_arg:
            p.add_argument("--models", required=True,
                           help="directory holding model.<modality>.pfnn")
        if gallery_arg:
            p.add_argument("--gallery", required=True, help="gallery file")

    p = sub.add_parser("train", help="train patch embedding model(s)")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enroll", help="embed the gallery split into a gallery file")
    common(p, models_arg=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_enroll)

    p = sub.add_parser("identify", help="identify a single probe sample")
    common(p, gallery_arg=True, models_arg=True)
    p.add_argument("--sample", required=True,
                   help="probe id as <person>/<sample>")
    p.set_defaults(fn=cmd_identify)

    p = sub.add_parser("evaluate", help="rank-1 evaluation over the probe split")
    common(p, models_arg=True)
    p.add_argument("--gallery", default=None,
                   help="gallery file (default: enroll in memory)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("baseline",
                       help="evaluate with a chosen patch feature extractor")
    common(p)
    p.add_argument("--extractor", required=True,
                   choices=("cnn", "hog", "lbp", "raw"))
    p.add_argument("--models", default=None,
                   help="model directory (required for --extractor cnn)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_baseline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "baseline" and args.extractor == "cnn" \
            and not args.models:
        print("error: usage: --extractor cnn requires --models",
              file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
