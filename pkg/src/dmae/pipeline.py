"""End-to-end experiment glue: datasets, pre-training, fine-tuning, comparison."""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from dmae.config import Config, to_dict
from dmae.masking import POLICIES
from dmae.model.losses import LossWeights
from dmae.model.mae import Encoder, MaskedAutoencoder
from dmae.model.temporal import JerseyClassifier
from dmae.model import train
from dmae.synthdata import TrackletData, gen_dataset
from dmae.tensor import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

POLICY_NAMES = {"zero_out": "MAE (zero-out)", "gaussian_blur": "MAE (gaussian blur)",
                "motion_blur": "d-MAE (motion blur)"}


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Ordered map; ``jobs > 1`` fans out over worker processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def build_datasets(cfg: Config) -> tuple[list, list]:
    d = cfg.data
    return (gen_dataset(list(d.numbers), d.train_tracklets, cfg.synth, d.train_seed),
            gen_dataset(list(d.numbers), d.test_tracklets, cfg.synth, d.test_seed))


def all_frames(tracklets: Sequence[TrackletData]) -> np.ndarray:
    return np.concatenate([np.asarray(t.frames, dtype=np.float32) for t in tracklets])


def save_mae(directory, model: MaskedAutoencoder, weights: LossWeights, cfg: Config) -> Path:
    state = dict(model.state_dict())
    state.update({f"loss.{k}": v for k, v in weights.state_dict().items()})
    return save_checkpoint(directory, state, to_dict(cfg), cfg.seed, {"kind": "mae"})


def load_encoder(directory, cfg: Config) -> Encoder:
    """Encoder weights from either an MAE or a classifier checkpoint."""
    state, _ = load_checkpoint(directory)
    enc = Encoder(cfg.model, np.random.default_rng(0))
    enc.load_state_dict({k[len("encoder."):]: v for k, v in state.items() if k.startswith("encoder.")})
    return enc


def save_classifier(directory, clf: JerseyClassifier, cfg: Config, extra: Optional[dict] = None) -> Path:
    return save_checkpoint(directory, clf.state_dict(), to_dict(cfg), cfg.seed, {"kind": "classifier", **(extra or {})})


def load_classifier(directory, cfg: Optional[Config] = None) -> tuple[JerseyClassifier, Config]:
    from dmae.config import from_dict

    state, manifest = load_checkpoint(directory)
    if manifest.get("kind") != "classifier":
        raise ValueError(f"{directory} is not a classifier checkpoint")
    cfg = cfg or from_dict(Config, manifest["hyperparameters"])
    clf = JerseyClassifier(cfg.model, cfg.temporal, seed=cfg.seed)
    clf.load_state_dict(state)
    return clf, cfg


def run_pretrain(cfg: Config, tracklets: Sequence[TrackletData], log: Optional[train.JsonlLog] = None,
                 ) -> tuple[MaskedAutoencoder, LossWeights, list]:
    return train.pretrain(all_frames(tracklets), cfg, log)


def run_finetune(cfg: Config, prepared: Sequence[train.TrainTracklet], encoder: Optional[Encoder] = None,
                 log: Optional[train.JsonlLog] = None) -> tuple[JerseyClassifier, list]:
    """Fine-tune a classifier; without ``encoder`` it starts from the same
    random initialisation the autoencoder would."""
    if encoder is None:
        encoder = MaskedAutoencoder(cfg.model, seed=cfg.seed).encoder
    clf = JerseyClassifier(cfg.model, cfg.temporal, seed=cfg.seed, encoder=encoder)
    return train.finetune(prepared, cfg, clf, log)


def compare_masking(cfg: Config, policies: Sequence[str] = POLICIES, baseline: bool = True,
                    progress: Optional[Callable[[str], None]] = None) -> dict:
    """Pre-train one autoencoder per masking policy, fine-tune each under the
    same budget and data, and report held-out tracklet accuracy.

    A random-init encoder fine-tuned identically is the baseline row. Every
    protocol in ``cfg.compare.protocols`` fine-tunes a fresh copy of each
    encoder: ``frozen`` trains only the temporal decoder and heads, ``full``
    trains everything.
    """
    say = progress or (lambda msg: logger.info(msg))
    train_set, test_set = build_datasets(cfg)
    prepared_train = train.prepare_tracklets(train_set, cfg.kfid)
    prepared_test = train.prepare_tracklets(test_set, cfg.kfid)
    variants = []
    for policy in policies:
        say(f"pre-train {POLICY_NAMES.get(policy, policy)}")
        vcfg = replace(cfg, masking=replace(cfg.masking, policy=policy))
        model, _, records = run_pretrain(vcfg, train_set)
        variants.append((policy, POLICY_NAMES.get(policy, policy), model.encoder,
                         records[-1]["loss"] if records else None))
    if baseline:
        variants.append((None, "random-init encoder", None, None))
    rows = []
    beats = {}
    for protocol in cfg.compare.protocols:
        pcfg = replace(cfg, finetune=replace(cfg.finetune, freeze_encoder=protocol == "frozen"))
        for policy, name, encoder, loss in variants:
            say(f"fine-tune {name} ({protocol})")
            clf, _ = run_finetune(pcfg, prepared_train, copy.deepcopy(encoder))
            metrics = train.evaluate(clf, prepared_test)
            rows.append({"name": name, "policy": policy, "protocol": protocol, "baseline": policy is None,
                         "accuracy": metrics["accuracy"], "correct": metrics["correct"],
                         "total": metrics["total"], "pretrain_final_loss": loss})
        group = [r for r in rows if r["protocol"] == protocol]
        base = next((r for r in group if r["baseline"]), None)
        beats[protocol] = None if base is None else all(
            r["accuracy"] > base["accuracy"] for r in group if not r["baseline"])
    return {"rows": rows, "pretrain_steps": cfg.pretrain.steps, "finetune_steps": cfg.finetune.steps,
            "seed": cfg.seed, "protocols": list(cfg.compare.protocols), "beats_baseline": beats,
            "all_beat_baseline": beats[cfg.compare.protocols[0]]}


def format_table(result: dict) -> str:
    rows = result["rows"]
    width = max(len("Method"), *(len(r["name"]) for r in rows))
    lines = [f"{'Method':<{width}}  {'Protocol':<8}  {'Accuracy (%)':>12}  {'Correct':>9}"]
    lines.append("-" * len(lines[0]))
    for r in rows:
        lines.append(f"{r['name']:<{width}}  {r['protocol']:<8}  {100 * r['accuracy']:>12.2f}  "
                     f"{r['correct']:>4}/{r['total']:<4}")
    return "\n".join(lines) + "\n"
