"""``dmae`` command-line entry point.

Every subcommand writes its outputs under ``--out`` together with a
``run-manifest.json`` (git describe string, config hash, seed, outputs).
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from dmae import imaging, kfid, masking, pipeline, plotting, synthdata
from dmae.config import Config, ConfigError, config_hash, dumps, load_config, to_dict
from dmae.errors import ParameterError, ShapeError
from dmae.model import train
from dmae.model.temporal import JerseyLabel

logger = logging.getLogger("dmae")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() if res.returncode == 0 and res.stdout.strip() else "unknown"


# ---------------------------------------------------------------------------
# subcommands; each returns the list of files it promised to write
# ---------------------------------------------------------------------------

def _sample_image(cfg: Config, args) -> np.ndarray:
    if getattr(args, "image", None):
        img = imaging.read_png(args.image)
        return img
    rng = np.random.default_rng(cfg.seed)
    img, _ = synthdata.render_frame(JerseyLabel.from_number(23), cfg.synth, rng, "visible")
    return img


def cmd_kernel_viz(cfg: Config, args, out: Path) -> list:
    kern = imaging.motion_blur_kernel(args.omega, args.scale, args.k_size)
    mat = imaging.rotation_matrix(args.omega, args.scale, args.k_size)
    img = _sample_image(cfg, args)
    k = imaging.patch_count(img.shape[0], img.shape[1], cfg.model.patch_size)
    plan = masking.sample_mask(k, cfg.masking.ratio, cfg.seed, "motion_blur", cfg.model.patch_size,
                               params={"omega": args.omega, "scale": args.scale, "k_size": args.k_size})
    masked_img, _, _ = masking.apply_masking(img, plan)
    text = imaging.format_kernel(kern) + "\n"
    files = [
        plotting.plot_kernel(kern.weights, out / "kernel.png",
                             f"omega={args.omega:g} s={args.scale:g} k={args.k_size}"),
        plotting.plot_before_after(img, masked_img, out / "masked_sample.png"),
        imaging.write_png(out / "masked_sample_raw.png", masked_img),
    ]
    (out / "kernel.txt").write_text(text)
    files.append(out / "kernel.txt")
    files.append(write_json(out / "kernel.json", {
        "omega": args.omega, "scale": args.scale, "k_size": args.k_size,
        "weights": kern.weights.tolist(), "rotation_matrix": mat.matrix.tolist(), "plan": plan.to_dict()}))
    print(text, end="")
    return files


def cmd_mask(cfg: Config, args, out: Path) -> list:
    img = _sample_image(cfg, args)
    k = imaging.patch_count(img.shape[0], img.shape[1], cfg.model.patch_size)
    plan = masking.sample_mask(k, cfg.masking.ratio, cfg.seed, cfg.masking.policy, cfg.model.patch_size,
                               train.sampling_from(cfg.masking))
    masked_img, _, _ = masking.apply_masking(img, plan)
    return [imaging.write_png(out / "masked.png", masked_img),
            plotting.plot_before_after(img, masked_img, out / "before_after.png"),
            write_json(out / "plan.json", plan.to_dict())]


def cmd_synth(cfg: Config, args, out: Path) -> list:
    numbers = list(cfg.data.numbers)
    count = args.count if args.count is not None else cfg.data.train_tracklets
    data = synthdata.gen_dataset(numbers, count, cfg.synth, cfg.seed)
    root = out / "tracklets"
    index = []
    for i, tr in enumerate(data):
        d = synthdata.write_tracklet(root / f"{i:05d}", tr)
        index.append({"dir": d.name, "label": tr.label.text, "frames": len(tr)})
    return [root, write_json(out / "index.json", {"count": count, "seed": cfg.seed, "tracklets": index})]


def _load_tracklets(path: Optional[str], cfg: Config, which: str) -> list:
    if path:
        return [synthdata.read_tracklet(d) for d in synthdata.list_tracklets(path)]
    train_set, test_set = pipeline.build_datasets(cfg)
    return train_set if which == "train" else test_set


def cmd_pretrain(cfg: Config, args, out: Path) -> list:
    tracklets = _load_tracklets(args.data, cfg, "train")
    log = train.JsonlLog(out / "pretrain_log.jsonl")
    model, weights, records = pipeline.run_pretrain(cfg, tracklets, log)
    ckpt = pipeline.save_mae(out / "checkpoint", model, weights, cfg)
    summary = {"steps": cfg.pretrain.steps, "initial_loss": records[0]["loss"] if records else None,
               "final_loss": records[-1]["loss"] if records else None, "policy": cfg.masking.policy}
    return [ckpt / "manifest.json", ckpt / "params.bin", log.path,
            plotting.plot_loss_curve(log.records, out / "pretrain_loss.png"),
            write_json(out / "pretrain.json", summary)]


def cmd_train(cfg: Config, args, out: Path) -> list:
    encoder = pipeline.load_encoder(args.checkpoint, cfg) if args.checkpoint else None
    embedder = kfid.EncoderEmbedder(encoder) if encoder is not None and cfg.kfid.ghc_mode == "deep" else None
    prepared = train.prepare_tracklets(_load_tracklets(args.data, cfg, "train"), cfg.kfid, embedder)
    log = train.JsonlLog(out / "finetune_log.jsonl")
    clf, _ = pipeline.run_finetune(cfg, prepared, encoder, log)
    ckpt = pipeline.save_classifier(out / "classifier", clf, cfg)
    test = train.prepare_tracklets(_load_tracklets(args.test_data, cfg, "test"), cfg.kfid, embedder)
    metrics = train.evaluate(clf, test)
    print(f"held-out tracklet accuracy: {100 * metrics['accuracy']:.2f}% ({metrics['correct']}/{metrics['total']})")
    return [ckpt / "manifest.json", ckpt / "params.bin", log.path,
            plotting.plot_loss_curve(log.records, out / "finetune_loss.png", keys=("loss",)),
            write_json(out / "metrics.json", metrics)]


def _kfid_one(item):
    tr, kcfg = item
    detector = kfid.OracleDetector.from_tracklets([tr])
    return kfid.kfid_run(tr.frames, detector, kcfg)


def cmd_kfid(cfg: Config, args, out: Path) -> list:
    dirs = synthdata.list_tracklets(args.tracklets)
    tracklets = [synthdata.read_tracklet(d) for d in dirs]
    for d, tr in zip(dirs, tracklets):
        if tr.truths is None:
            raise UsageError(f"{d} has no frame truth; the oracle detector needs meta.json frames")
    results = pipeline.parallel_map(_kfid_one, [(tr, cfg.kfid) for tr in tracklets], args.jobs)
    rng = np.random.default_rng(cfg.seed)
    files = []
    report = []
    for d, tr, ks in zip(dirs, tracklets, results):
        entry = {"tracklet": d.name, "label": tr.label.text, **ks.to_dict()}
        fused = kfid.fuse_keyframes(tr.frames, ks.indices, cfg.finetune.fusion_n, rng, cfg.finetune.fusion_mode)
        if fused is not None:
            files.append(imaging.write_png(out / "fused" / f"{d.name}.png", fused))
            entry["fused"] = f"fused/{d.name}.png"
        report.append(entry)
    if tracklets:
        files.append(plotting.plot_keyframes(tracklets[0].frames, results[0].indices, out / "keyframes_first.png"))
    files.append(write_json(out / "keyframes.json", {"tracklets": report}))
    return files


def cmd_eval(cfg: Config, args, out: Path) -> list:
    clf, ccfg = pipeline.load_classifier(args.checkpoint)
    tracklets = _load_tracklets(args.tracklets, ccfg, "test")
    prepared = train.prepare_tracklets(tracklets, ccfg.kfid)
    metrics = train.evaluate(clf, prepared)
    print(f"tracklet accuracy: {100 * metrics['accuracy']:.2f}% ({metrics['correct']}/{metrics['total']})")
    return [write_json(out / "predictions.json", metrics)]


def cmd_compare_masking(cfg: Config, args, out: Path) -> list:
    result = pipeline.compare_masking(cfg, progress=lambda m: print(m, file=sys.stderr))
    table = pipeline.format_table(result)
    print(table, end="")
    (out / "comparison.txt").write_text(table)
    return [write_json(out / "comparison.json", result), out / "comparison.txt",
            plotting.plot_comparison(result["rows"], out / "comparison.png")]


def cmd_default_config(cfg: Config, args, out: Path) -> list:
    text = dumps(Config()) + "\n"
    print(text, end="")
    path = out / "default-config.json"
    path.write_text(text)
    return [path]


COMMANDS = {
    "kernel-viz": cmd_kernel_viz,
    "mask": cmd_mask,
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "kfid": cmd_kfid,
    "eval": cmd_eval,
    "compare-masking": cmd_compare_masking,
    "default-config": cmd_default_config,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-tracklet work")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dmae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kernel-viz", parents=[common], help="render a motion-blur kernel and a masked sample")
    p.add_argument("--omega", type=float, default=30.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--k-size", type=int, default=5)
    p.add_argument("--image", help="PNG to mask instead of a synthetic frame")

    p = sub.add_parser("mask", parents=[common], help="apply the configured masking policy to an image")
    p.add_argument("--image")

    p = sub.add_parser("synth", parents=[common], help="write synthetic tracklets to disk")
    p.add_argument("--count", type=int)

    p = sub.add_parser("pretrain", parents=[common], help="pre-train the masked autoencoder")
    p.add_argument("--data", help="tracklet directory (default: synthetic training set)")

    p = sub.add_parser("train", parents=[common], help="fine-tune the jersey classifier")
    p.add_argument("--checkpoint", help="pre-trained autoencoder checkpoint directory")
    p.add_argument("--data", help="training tracklet directory")
    p.add_argument("--test-data", help="held-out tracklet directory")

    p = sub.add_parser("kfid", parents=[common], help="identify keyframes and write fused images")
    p.add_argument("--tracklets", required=True)

    p = sub.add_parser("eval", parents=[common], help="evaluate a classifier checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tracklets", help="tracklet directory (default: synthetic held-out set)")

    sub.add_parser("compare-masking", parents=[common], help="compare masking policies against a random-init baseline")
    sub.add_parser("default-config", parents=[common], help="print and write the full default config")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"dmae: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        with threadpool_limits(1):
            files = COMMANDS[args.command](cfg, args, out)
    except (UsageError, ParameterError, ShapeError, ConfigError) as exc:
        print(f"dmae {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError) as exc:
        print(f"dmae {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    files = [Path(f) for f in files]
    missing = [str(f) for f in files if not f.exists()]
    manifest = {
        "command": args.command,
        "git_describe": git_describe(),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "config": to_dict(cfg),
        "outputs": sorted(str(f.relative_to(out)) if f.is_relative_to(out) else str(f) for f in files),
    }
    write_json(out / "run-manifest.json", manifest)
    if missing:
        print(f"dmae {args.command}: missing outputs: {', '.join(missing)}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
