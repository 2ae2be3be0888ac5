"""Encoder-decoder lesion segmenter: build, cross-entropy/SGD training,
inference, checkpoint selection and probability-map ensembling."""

from __future__ import annotations

import copy
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .data import AugmentConfig, DatasetManifest, baseline_augment, derive_seed
from .metrics import confusion, metric_scores
from .nets import EncoderDecoder, check_resolution, init_weights

log = logging.getLogger(__name__)

EPS = 1e-7


@dataclass
class SegmenterConfig:
    depth: int = 3
    base_channels: int = 8
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    binarize_threshold: float = 0.5
    flip_prob: float = 0.5
    jitter: float = 0.05
    crop: int = 0            # 0 disables random cropping

    def validate(self, resolution: Optional[Sequence[int]] = None) -> None:
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")
        if not 0 < self.binarize_threshold < 1:
            raise ValueError("binarize_threshold must lie in (0, 1)")
        if resolution is not None:
            check_resolution(resolution, self.depth)

    def architecture(self) -> tuple:
        return (self.depth, self.base_channels)


@dataclass
class SegmenterModel:
    net: EncoderDecoder
    config: SegmenterConfig
    training_meta: dict = field(default_factory=dict)

    def parameters(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy().copy() for k, v in self.net.state_dict().items()}

    def clone(self) -> "SegmenterModel":
        return SegmenterModel(copy.deepcopy(self.net), dataclasses.replace(self.config),
                              dict(self.training_meta))

    def probability(self, images) -> torch.Tensor:
        """Foreground probability for a (B,3,H,W) tensor."""
        return torch.sigmoid(self.net(images))


@dataclass
class CheckpointRecord:
    model: SegmenterModel
    epoch: int
    val_score: float


def build_fcn(config: SegmenterConfig, resolution: Optional[Sequence[int]] = None) -> SegmenterModel:
    config.validate(resolution)
    net = EncoderDecoder(3, 1, config.depth, config.base_channels)
    init_weights(net, config.seed)
    return SegmenterModel(net, dataclasses.replace(config), {"epochs_trained": 0})


def cross_entropy_loss(prob, mask):
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps].

    Works on numpy arrays or torch tensors (torch keeps the graph).
    """
    if tuple(prob.shape) != tuple(mask.shape):
        raise ValueError(f"shape mismatch: {tuple(prob.shape)} vs {tuple(mask.shape)}")
    if isinstance(prob, torch.Tensor):
        m = torch.as_tensor(mask, dtype=prob.dtype)
        p = prob.clamp(EPS, 1 - EPS)
        return -(m * torch.log(p) + (1 - m) * torch.log(1 - p)).mean()
    p = np.clip(np.asarray(prob, dtype=np.float64), EPS, 1 - EPS)
    m = np.asarray(mask, dtype=np.float64)
    return float(-(m * np.log(p) + (1 - m) * np.log(1 - p)).mean())


def _to_batch(images: Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.stack(images), dtype=dtype).permute(0, 3, 1, 2).contiguous()


def predict_proba(model: SegmenterModel, images, batch_size: int = 32) -> np.ndarray:
    """Probability maps, shape (N,H,W) for a list/array of HxWx3 images or (H,W) for one."""
    single = isinstance(images, np.ndarray) and images.ndim == 3
    batch = [images] if single else list(images)
    for im in batch:
        if im.ndim != 3 or im.shape[2] != 3:
            raise ValueError(f"expected HxWx3 image, got {im.shape}")
        check_resolution(im.shape[:2], model.config.depth)
    dtype = next(model.net.parameters()).dtype
    out = []
    model.net.eval()
    with torch.no_grad():
        for i in range(0, len(batch), batch_size):
            out.append(model.probability(_to_batch(batch[i:i + batch_size], dtype))[:, 0].numpy())
    probs = np.concatenate(out) if out else np.zeros((0,), np.float32)
    return probs[0] if single else probs


def binarize(prob: np.ndarray, threshold: float) -> np.ndarray:
    return (prob >= threshold).astype(np.uint8)


def predict_mask(model: SegmenterModel, image: np.ndarray) -> np.ndarray:
    return binarize(predict_proba(model, image), model.config.binarize_threshold)


def predict_masks(model: SegmenterModel, images) -> np.ndarray:
    return binarize(predict_proba(model, images), model.config.binarize_threshold)


def mean_jaccard(model: SegmenterModel, data: DatasetManifest) -> float:
    preds = predict_masks(model, [s.image for s in data])
    return float(np.mean([metric_scores(confusion(p, s.mask))["jaccard"] for p, s in zip(preds, data)]))


def train_fcn(model: SegmenterModel, train: DatasetManifest, val: DatasetManifest,
              config: Optional[SegmenterConfig] = None):
    """Minibatch SGD with momentum; one CheckpointRecord per epoch.

    Checkpoints are scored by mean validation Jaccard (training Jaccard when
    ``val`` is empty). The input model is not modified.
    """
    config = config or model.config
    if len(train) == 0:
        raise ValueError("training set is empty")
    if config.architecture() != model.config.architecture():
        raise ValueError("config architecture differs from the model's")
    model = model.clone()
    model.config = dataclasses.replace(config)
    torch.manual_seed(derive_seed(config.seed, "torch"))
    opt = torch.optim.SGD(model.net.parameters(), lr=config.learning_rate, momentum=config.momentum)
    aug = AugmentConfig(crop_size=(config.crop, config.crop) if config.crop else None,
                        flip_prob=config.flip_prob, jitter=config.jitter)
    score_set = val if len(val) else train
    dtype = next(model.net.parameters()).dtype
    checkpoints, losses = [], []
    samples = list(train)
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng(derive_seed(config.seed, "epoch", epoch))
        order = rng.permutation(len(samples))
        model.net.train()
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [baseline_augment(samples[i], rng, aug) for i in order[start:start + config.batch_size]]
            x = _to_batch([b.image for b in batch], dtype)
            y = torch.as_tensor(np.stack([b.mask for b in batch]), dtype=dtype)
            loss = cross_entropy_loss(model.probability(x)[:, 0], y)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            seen += len(batch)
        losses.append(total / seen)
        score = mean_jaccard(model, score_set)
        model.training_meta = {"epochs_trained": epoch, "final_loss": losses[-1]}
        checkpoints.append(CheckpointRecord(model.clone(), epoch, score))
        log.info("epoch %d loss %.4f val_jaccard %.4f", epoch, losses[-1], score)
    model.training_meta = {"epochs_trained": config.epochs, "losses": losses,
                           "final_loss": losses[-1] if losses else None}
    return model, checkpoints


def select_top_k(checkpoints: Sequence[CheckpointRecord], k: int) -> list[SegmenterModel]:
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(checkpoints, key=lambda r: (r.val_score, r.epoch), reverse=True)
    return [r.model for r in ranked[:k]]


def top_k_records(checkpoints: Sequence[CheckpointRecord], k: int) -> list[CheckpointRecord]:
    ranked = sorted(checkpoints, key=lambda r: (r.val_score, r.epoch), reverse=True)
    return ranked[:k]


def ensemble_proba(models: Sequence[SegmenterModel], images) -> np.ndarray:
    if not models:
        raise ValueError("empty model list")
    ref = dataclasses.asdict(models[0].config)
    ref.pop("seed")
    for m in models[1:]:
        other = dataclasses.asdict(m.config)
        other.pop("seed")
        if other != ref:
            raise ValueError("ensemble members have different configs")
    maps = [predict_proba(m, images) for m in models]
    # float64 accumulation keeps the mean of identical float32 maps exact
    return np.mean(np.stack(maps).astype(np.float64), axis=0).astype(maps[0].dtype)


def ensemble_predict(models: Sequence[SegmenterModel], image) -> np.ndarray:
    return binarize(ensemble_proba(models, image), models[0].config.binarize_threshold)


# -- persistence -------------------------------------------------------------

def save_segmenter(path: os.PathLike, model: SegmenterModel, epoch: int = 0,
                   val_score: float | None = None) -> None:
    meta = {k: v for k, v in model.training_meta.items() if k != "losses"}
    meta["losses"] = list(model.training_meta.get("losses", []))
    save_checkpoint(path, model.parameters(), component="segmenter",
                    config=dataclasses.asdict(model.config), epoch=epoch,
                    val_score=val_score, meta=meta)


def load_segmenter(path: os.PathLike) -> tuple[SegmenterModel, dict]:
    header, tensors = load_checkpoint(path)
    if header["component"] != "segmenter":
        raise ValueError(f"{path} holds a {header['component']} checkpoint")
    config = SegmenterConfig(**header["config"])
    model = build_fcn(config)
    model.net.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    model.training_meta = header.get("meta", {})
    return model, header
