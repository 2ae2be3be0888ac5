"""Label-conditioned adversarial image synthesis.

The generator maps a lesion mask (plus noise) to an RGB image; the
discriminator scores (mask, image) pairs as real or synthesized. Training
alternates a discriminator ascent step on the conditional value function with a
non-saturating generator step.
"""

from __future__ import annotations

import copy
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetManifest, ImageSample, derive_seed, flip_pair
from .nets import EncoderDecoder, PatchDiscriminator, check_resolution, init_weights

log = logging.getLogger(__name__)

EPS = 1e-7


@dataclass
class NoiseSpec:
    mode: str = "channel"    # "channel" or "dropout"
    dim: int = 8
    rate: float = 0.5
    seed: int = 0

    def validate(self):
        if self.mode == "channel":
            if self.dim < 1:
                raise ValueError("channel noise needs dim >= 1")
        elif self.mode == "dropout":
            if not 0 < self.rate < 1:
                raise ValueError("dropout noise needs rate in (0, 1)")
        else:
            raise ValueError(f"unknown noise mode {self.mode!r}")

    @property
    def channels(self) -> int:
        return self.dim if self.mode == "channel" else 0


@dataclass
class GanConfig:
    depth: int = 3
    base_channels: int = 16
    d_depth: int = 3
    d_base_channels: int = 32
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    lr_g: float = 2e-4
    lr_d: float = 4e-4
    beta1: float = 0.5
    epochs: int = 40
    batch_size: int = 8
    seed: int = 0
    patch: bool = True
    l1_weight: float = 0.0
    flip: bool = True
    d_steps: int = 1             # discriminator updates per generator update

    def validate(self, resolution: Optional[Sequence[int]] = None) -> None:
        self.noise.validate()
        if min(self.depth, self.d_depth, self.base_channels, self.d_base_channels) < 1:
            raise ValueError("depths and channel counts must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.l1_weight < 0 or self.d_steps < 1:
            raise ValueError("invalid batch_size/epochs/l1_weight")
        if resolution is not None:
            check_resolution(resolution, max(self.depth, self.d_depth))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        d = dict(d)
        d["noise"] = NoiseSpec(**d.get("noise", {}))
        return cls(**d)


@dataclass
class GeneratorModel:
    net: EncoderDecoder
    config: GanConfig
    meta: dict = field(default_factory=dict)

    @property
    def trained(self) -> bool:
        return "epochs_trained" in self.meta

    def draw_noise(self, labels: torch.Tensor, gen: torch.Generator):
        b, _, h, w = labels.shape
        c = self.config.noise.channels
        if c == 0:
            return None
        return torch.randn((b, c, h, w), generator=gen, dtype=labels.dtype)

    def forward(self, labels: torch.Tensor, z: Optional[torch.Tensor] = None,
                gen: Optional[torch.Generator] = None) -> torch.Tensor:
        """Images (B,3,H,W) in [0,1] for labels (B,1,H,W).

        Channel noise is taken from ``z``; dropout noise from ``gen``.
        """
        x = labels if z is None else torch.cat([labels, z], dim=1)
        return torch.sigmoid(self.net(x, generator=gen))

    def parameters(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self.net.state_dict().items()}


@dataclass
class DiscriminatorModel:
    net: PatchDiscriminator
    config: GanConfig

    def forward(self, labels: torch.Tensor, images: torch.Tensor) -> torch.Tensor:
        """Probability-of-real, (B,) or (B,h,w) on the patch grid."""
        return torch.sigmoid(self.net(torch.cat([labels, images], dim=1)))

    def parameters(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self.net.state_dict().items()}


def build_generator(config: GanConfig, resolution: Optional[Sequence[int]] = None) -> GeneratorModel:
    config.validate(resolution)
    dropout = config.noise.rate if config.noise.mode == "dropout" else 0.0
    net = EncoderDecoder(1 + config.noise.channels, 3, config.depth, config.base_channels,
                         dropout=dropout, leaky=0.2)
    init_weights(net, derive_seed(config.seed, "generator"))
    return GeneratorModel(net, copy.deepcopy(config))


def build_discriminator(config: GanConfig, resolution: Optional[Sequence[int]] = None) -> DiscriminatorModel:
    config.validate(resolution)
    net = PatchDiscriminator(4, config.d_depth, config.d_base_channels, patch=config.patch)
    init_weights(net, derive_seed(config.seed, "discriminator"))
    return DiscriminatorModel(net, copy.deepcopy(config))


def gan_value(d_real, d_fake):
    """Per-sample ``log D(l,y) + log(1 - D(l,G(l,z)))`` averaged over all entries.

    Accepts floats, numpy arrays or torch tensors; inputs are clamped to
    [eps, 1-eps].
    """
    if isinstance(d_real, torch.Tensor) or isinstance(d_fake, torch.Tensor):
        r = torch.as_tensor(d_real).clamp(EPS, 1 - EPS)
        f = torch.as_tensor(d_fake).clamp(EPS, 1 - EPS)
        return torch.log(r).mean() + torch.log(1 - f).mean()
    r = np.clip(np.asarray(d_real, dtype=np.float64), EPS, 1 - EPS)
    f = np.clip(np.asarray(d_fake, dtype=np.float64), EPS, 1 - EPS)
    return float(np.mean(np.log(r)) + np.mean(np.log(1 - f)))


def generator_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating surrogate ``-log D(l, G(l,z))``."""
    return -torch.log(d_fake.clamp(EPS, 1 - EPS)).mean()


def _labels(masks: Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.stack(masks), dtype=dtype)[:, None]


def _images(images: Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.stack(images), dtype=dtype).permute(0, 3, 1, 2).contiguous()


@dataclass
class GanTrace:
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    d_real_acc: list = field(default_factory=list)
    d_fake_acc: list = field(default_factory=list)
    holdout_acc: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def train_gan(data: DatasetManifest, config: GanConfig, generator: Optional[GeneratorModel] = None,
              discriminator: Optional[DiscriminatorModel] = None,
              holdout: Optional[DatasetManifest] = None):
    """Alternating adversarial training.

    Returns ``(generator, trace, discriminator)``. Per epoch the trace records
    mean D loss (negated value function), mean G loss and the discriminator's
    accuracy on the real and synthesized batches; with ``holdout`` also its
    accuracy on held-out real/synthesized pairs.
    """
    if len(data) == 0:
        raise ValueError("GAN training set is empty")
    shape = data[0].shape
    for s in data:
        if s.shape != shape:
            raise ValueError(f"{s.id}: shape {s.shape} differs from {shape}")
    g = copy.deepcopy(generator) if generator else build_generator(config, shape)
    d = copy.deepcopy(discriminator) if discriminator else build_discriminator(config, shape)
    config.validate(shape)
    dtype = next(g.net.parameters()).dtype
    opt_g = torch.optim.Adam(g.net.parameters(), lr=config.lr_g, betas=(config.beta1, 0.999))
    opt_d = torch.optim.Adam(d.net.parameters(), lr=config.lr_d, betas=(config.beta1, 0.999))
    noise_gen = torch.Generator().manual_seed(derive_seed(config.seed, config.noise.seed, "noise"))
    trace = GanTrace()
    samples = list(data)
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng(derive_seed(config.seed, "gan-epoch", epoch))
        order = rng.permutation(len(samples))
        g.net.train()
        d.net.train()
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[start:start + config.batch_size]]
            if config.flip:
                batch = [flip_pair(s, 1) if rng.random() < 0.5 else s for s in batch]
            labels = _labels([s.mask for s in batch], dtype)
            real = _images([s.image for s in batch], dtype)
            z = g.draw_noise(labels, noise_gen)
            fake = g.forward(labels, z, noise_gen)

            for _ in range(config.d_steps):
                d_real = d.forward(labels, real)
                d_fake = d.forward(labels, fake.detach())
                d_loss = -gan_value(d_real, d_fake)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()

            d_fake_g = d.forward(labels, fake)
            g_loss = generator_loss(d_fake_g)
            if config.l1_weight:
                g_loss = g_loss + config.l1_weight * (fake - real).abs().mean()
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()

            if not (math.isfinite(d_loss.item()) and math.isfinite(g_loss.item())):
                raise FloatingPointError(f"non-finite GAN loss at epoch {epoch}")
            sums += [d_loss.item(), g_loss.item(),
                     (d_real.detach() > 0.5).double().mean().item(),
                     (d_fake.detach() < 0.5).double().mean().item()]
            n_batches += 1
        means = sums / n_batches
        trace.d_loss.append(float(means[0]))
        trace.g_loss.append(float(means[1]))
        trace.d_real_acc.append(float(means[2]))
        trace.d_fake_acc.append(float(means[3]))
        if holdout is not None and len(holdout):
            trace.holdout_acc.append(discriminator_accuracy(d, g, holdout, seed=config.seed))
        log.info("gan epoch %d d_loss %.4f g_loss %.4f acc_real %.3f acc_fake %.3f%s",
                 epoch, *means, f" holdout {trace.holdout_acc[-1]:.3f}" if trace.holdout_acc else "")
    g.meta = {"epochs_trained": config.epochs, "n_train": len(samples)}
    return g, trace, d


def generate_images(g: GeneratorModel, labels: Sequence[np.ndarray], noise_seeds: Sequence[int]) -> np.ndarray:
    """One image per (label, noise seed); each draw uses its own noise stream."""
    out = []
    g.net.eval()
    dtype = next(g.net.parameters()).dtype
    with torch.no_grad():
        for label, seed in zip(labels, noise_seeds):
            gen = torch.Generator().manual_seed(int(seed))
            lab = _labels([label], dtype)
            z = g.draw_noise(lab, gen)
            out.append(g.forward(lab, z, gen)[0].permute(1, 2, 0).numpy())
    return np.stack(out) if out else np.zeros((0,))


def synthesize(g: GeneratorModel, label: np.ndarray, noise_seed: int, sample_id: str = "synthetic",
               origin: str = "synthetic-simple") -> ImageSample:
    label = np.asarray(label)
    if label.ndim != 2:
        raise ValueError(f"label must be HxW, got {label.shape}")
    check_resolution(label.shape, g.config.depth)
    image = generate_images(g, [label], [noise_seed])[0]
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return ImageSample(sample_id, image, label.astype(np.uint8).copy(), origin)


def discriminator_accuracy(d: DiscriminatorModel, g: GeneratorModel, data: DatasetManifest,
                           seed: int = 0) -> float:
    """Fraction of patches classified correctly on real pairs and synthesized pairs."""
    masks = [s.mask for s in data]
    fakes = generate_images(g, masks, [derive_seed(seed, s.id) for s in data])
    d.net.eval()
    with torch.no_grad():
        labels = _labels(masks)
        p_real = d.forward(labels, _images([s.image for s in data]))
        p_fake = d.forward(labels, torch.as_tensor(fakes).permute(0, 3, 1, 2))
    return 0.5 * float((p_real > 0.5).double().mean() + (p_fake < 0.5).double().mean())


# -- persistence -------------------------------------------------------------

def save_generator(path: os.PathLike, g: GeneratorModel, component: str = "generator") -> None:
    save_checkpoint(path, g.parameters(), component=component, config=g.config.to_dict(),
                    epoch=g.meta.get("epochs_trained", 0), meta=g.meta)


def load_generator(path: os.PathLike) -> GeneratorModel:
    header, tensors = load_checkpoint(path)
    if header["component"] not in ("generator", "S-Model", "C-Model"):
        raise ValueError(f"{path} holds a {header['component']} checkpoint")
    g = build_generator(GanConfig.from_dict(header["config"]))
    g.net.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    g.meta = header.get("meta", {})
    return g


def save_discriminator(path: os.PathLike, d: DiscriminatorModel) -> None:
    save_checkpoint(path, d.parameters(), component="discriminator", config=d.config.to_dict())


def load_discriminator(path: os.PathLike) -> DiscriminatorModel:
    header, tensors = load_checkpoint(path)
    if header["component"] != "discriminator":
        raise ValueError(f"{path} holds a {header['component']} checkpoint")
    d = build_discriminator(GanConfig.from_dict(header["config"]))
    d.net.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    return d
