"""Pre-training and fine-tuning steps plus the loops that drive them."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from dmae import imaging, kfid
from dmae.masking import BlurSampling, apply_masking, sample_mask
from dmae.model.losses import ConvFeatureExtractor, LossConfig, LossWeights, class_loss, mae_loss
from dmae.model.mae import MaskedAutoencoder
from dmae.model.temporal import JerseyClassifier, JerseyLabel, decode_jersey, predict_tracklet
from dmae.tensor import AdamW, StepDecay, Tensor, recording
from dmae.tensor.optim import TrainingDivergenceError


@dataclass
class MaskedBatch:
    visible: np.ndarray  # (B, n_vis, P*P*C)
    visible_pos: np.ndarray  # (B, n_vis)
    masked: Optional[np.ndarray]  # (B, n_mask, P*P*C) corrupted patches
    masked_pos: Optional[np.ndarray]  # (B, n_mask)
    mask_map: np.ndarray  # (B, H, W, 1), 1 on masked pixels
    plans: list


def make_optimizer(params, optim_cfg) -> AdamW:
    return AdamW(params, lr=optim_cfg.lr, betas=(optim_cfg.beta1, optim_cfg.beta2), eps=optim_cfg.eps,
                 weight_decay=optim_cfg.weight_decay,
                 schedule=StepDecay(optim_cfg.decay_interval, optim_cfg.decay_until, optim_cfg.decay_factor))


def sampling_from(mcfg) -> BlurSampling:
    return BlurSampling(tuple(mcfg.omega), tuple(mcfg.scale), int(mcfg.k_size), tuple(mcfg.sigma), bool(mcfg.per_patch))


def prepare_masked_batch(images: np.ndarray, mcfg, rng: np.random.Generator, patch_size: int) -> MaskedBatch:
    """Draw a mask plan per image and split each into visible and corrupted patches."""
    images = np.asarray(images, dtype=float)
    b, h, w, _ = images.shape
    k = imaging.patch_count(h, w, patch_size)
    sampling = sampling_from(mcfg)
    vis, vis_pos, msk, msk_pos, plans = [], [], [], [], []
    mask_map = np.zeros((b, h, w, 1))
    for i in range(b):
        plan = sample_mask(k, mcfg.ratio, rng, mcfg.policy, patch_size, sampling)
        masked_img, visible, positions = apply_masking(images[i], plan)
        vis.append(visible)
        vis_pos.append(plan.unmasked_indices)
        if positions:
            msk.append(imaging.patchify(masked_img, patch_size).flat[list(positions)])
            msk_pos.append(positions)
        grid_w = w // patch_size
        for pos in positions:
            r, c = divmod(pos, grid_w)
            mask_map[i, r * patch_size:(r + 1) * patch_size, c * patch_size:(c + 1) * patch_size] = 1.0
        plans.append(plan)
    return MaskedBatch(np.stack(vis), np.array(vis_pos, dtype=int).reshape(b, -1),
                       np.stack(msk) if msk else None, np.array(msk_pos, dtype=int) if msk else None,
                       mask_map, plans)


def _check_finite(params) -> None:
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingDivergenceError("non-finite gradient")


def pretrain_loss(model: MaskedAutoencoder, weights: LossWeights, images: np.ndarray, batch: MaskedBatch,
                  loss_cfg: LossConfig, extractor=None) -> tuple[Tensor, dict]:
    dtype = model.encoder.dtype
    recon = model.reconstruct(batch.visible.astype(dtype), batch.visible_pos,
                              None if batch.masked is None else batch.masked.astype(dtype), batch.masked_pos)
    return mae_loss(recon, Tensor(np.asarray(images, dtype=dtype)), weights, loss_cfg, extractor,
                    batch.mask_map)


def pretrain_step(images: np.ndarray, model: MaskedAutoencoder, weights: LossWeights, opt: AdamW,
                  rng: np.random.Generator, mcfg, loss_cfg: LossConfig, extractor=None) -> dict:
    """One masked-reconstruction update; returns the logged scalars."""
    batch = prepare_masked_batch(images, mcfg, rng, model.cfg.patch_size)
    opt.zero_grad()
    with recording() as tape:
        loss, parts = pretrain_loss(model, weights, images, batch, loss_cfg, extractor)
        tape.backward(loss)
    if not np.isfinite(loss.data):
        raise TrainingDivergenceError("non-finite loss")
    _check_finite(opt.params)
    lr = opt.step()
    s1, s2 = weights.sigmas()
    return {"loss": float(loss.data), "mse": parts["mse"], "siamese": parts["siamese"], "lr": lr,
            "sigma1": s1, "sigma2": s2}


def finetune_step(frames: np.ndarray, targets: np.ndarray, classifier: JerseyClassifier, opt: AdamW) -> dict:
    """One classification update on ``(B, T, H, W, C)`` frames."""
    opt.zero_grad()
    with recording() as tape:
        frames = np.asarray(frames, dtype=classifier.encoder.dtype)
        l1, l2 = classifier(frames)
        loss = class_loss(l1, l2, targets)
        tape.backward(loss)
    if not np.isfinite(loss.data):
        raise TrainingDivergenceError("non-finite loss")
    _check_finite(opt.params)
    lr = opt.step()
    return {"loss": float(loss.data), "lr": lr}


def finetune_parameters(classifier: JerseyClassifier, freeze_encoder: bool = False) -> list:
    """Parameters updated during fine-tuning; the MAE decoder is never part of the classifier."""
    if freeze_encoder:
        return classifier.temporal.parameters()
    return classifier.parameters()


class JsonlLog:
    """Line-delimited JSON records, written as they arrive."""

    def __init__(self, path: Optional[Path] = None):
        self.path = None if path is None else Path(path)
        self.records: list = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def pretrain(images: np.ndarray, cfg, log: Optional[JsonlLog] = None, model: Optional[MaskedAutoencoder] = None,
             callback: Optional[Callable] = None) -> tuple[MaskedAutoencoder, LossWeights, list]:
    """Run ``cfg.pretrain.steps`` updates over minibatches drawn from ``images``.

    ``cfg`` is a :class:`dmae.config.Config`.  Returns the model, the loss
    weights and the per-step records.
    """
    rng = np.random.default_rng(cfg.seed)
    model = model or MaskedAutoencoder(cfg.model, seed=cfg.seed)
    weights = LossWeights(cfg.loss.init_log_weight)
    extractor = (ConvFeatureExtractor.from_npz(cfg.loss.extractor_path) if cfg.loss.extractor_path
                 else ConvFeatureExtractor(cfg.loss.extractor_seed))
    opt = make_optimizer(model.parameters() + weights.parameters(), cfg.pretrain.optim)
    log = log or JsonlLog()
    images = np.asarray(images, dtype=np.float32)
    pc = cfg.pretrain
    records = []
    for step in range(pc.steps):
        idx = rng.choice(len(images), size=min(pc.batch_size, len(images)), replace=False)
        rec = pretrain_step(images[np.sort(idx)], model, weights, opt, rng, cfg.masking, cfg.loss, extractor)
        rec = {"step": step, **rec}
        records.append(rec)
        if step % max(pc.log_every, 1) == 0 or step == pc.steps - 1:
            log.write({k: rec[k] for k in ("step", "loss", "lr", "sigma1", "sigma2", "mse", "siamese")})
        if callback is not None:
            callback(rec)
    return model, weights, records


@dataclass
class TrainTracklet:
    """A tracklet prepared for fine-tuning: frames, KfID keyframes and targets."""

    frames: np.ndarray  # (N, H, W, C)
    keyframes: list
    classes: tuple
    label: str

    @property
    def usable(self) -> list:
        return self.keyframes if self.keyframes else list(range(len(self.frames)))


def prepare_tracklets(tracklets, kcfg: kfid.KfidConfig, embedder=None) -> list:
    """Run KfID (oracle detector) and attach keyframe indices to each tracklet."""
    detector = kfid.OracleDetector.from_tracklets(tracklets)
    out = []
    for tr in tracklets:
        ks = kfid.kfid_run(tr.frames, detector, kcfg, embedder)
        out.append(TrainTracklet(np.stack(tr.frames).astype(np.float32), list(ks.indices),
                                 tr.label.classes, tr.label.text))
    return out


def sample_sequence(tr: TrainTracklet, t: int, rng: np.random.Generator, fcfg) -> np.ndarray:
    """Pick ``t`` keyframes in temporal order, fusing some with their neighbours."""
    pool = tr.usable
    idx = np.sort(rng.choice(pool, size=t, replace=len(pool) < t))
    seq = []
    for i in idx:
        frame = tr.frames[i]
        if fcfg.fusion_n > 1 and rng.random() < fcfg.fusion_prob:
            run = _run_containing(tr.keyframes, int(i), fcfg.fusion_n)
            if run is not None:
                fused = kfid.fuse_keyframes(tr.frames, run, fcfg.fusion_n, rng, fcfg.fusion_mode)
                if fused is not None:
                    frame = fused.astype(np.float32)
        seq.append(frame)
    return np.stack(seq)


def _run_containing(keyframes: Sequence[int], i: int, n: int) -> Optional[list]:
    for run in kfid.consecutive_runs(keyframes):
        if i in run and len(run) >= n:
            return run
    return None


def finetune(tracklets: Sequence[TrainTracklet], cfg, classifier: Optional[JerseyClassifier] = None,
             log: Optional[JsonlLog] = None) -> tuple[JerseyClassifier, list]:
    rng = np.random.default_rng(cfg.seed + 1)
    classifier = classifier or JerseyClassifier(cfg.model, cfg.temporal, seed=cfg.seed)
    fc = cfg.finetune
    opt = make_optimizer(finetune_parameters(classifier, fc.freeze_encoder), fc.optim)
    log = log or JsonlLog()
    records = []
    for step in range(fc.steps):
        pick = rng.choice(len(tracklets), size=min(fc.batch_size, len(tracklets)), replace=False)
        frames = np.stack([sample_sequence(tracklets[j], fc.frames, rng, fc) for j in pick])
        targets = np.array([tracklets[j].classes for j in pick])
        rec = {"step": step, **finetune_step(frames, targets, classifier, opt)}
        records.append(rec)
        if step % max(fc.log_every, 1) == 0 or step == fc.steps - 1:
            log.write(rec)
    return classifier, records


def evaluate(classifier: JerseyClassifier, tracklets: Sequence[TrainTracklet]) -> dict:
    """Tracklet-level accuracy using every keyframe (all frames when KfID finds none)."""
    rows = []
    for i, tr in enumerate(tracklets):
        pred = decode_jersey(predict_tracklet(classifier, tr.frames[tr.usable]))
        rows.append({"index": i, "label": tr.label, "pred": pred, "correct": pred == tr.label,
                     "keyframes": len(tr.keyframes)})
    correct = sum(r["correct"] for r in rows)
    return {"accuracy": correct / len(rows) if rows else 0.0, "correct": correct, "total": len(rows),
            "tracklets": rows}


def label_classes(text: str) -> tuple:
    return JerseyLabel.from_number(text).classes
