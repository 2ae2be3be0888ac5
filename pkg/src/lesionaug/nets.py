"""Skip-connected encoder-decoder used by both the segmenter and the generator,
plus the conditional discriminator."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def check_resolution(size, depth: int) -> None:
    h, w = size
    step = 2 ** depth
    if h % step or w % step:
        raise ValueError(f"resolution {h}x{w} not divisible by 2^depth={step}")


def init_weights(module: nn.Module, seed: int) -> None:
    """Fan-in scaled (He) uniform init driven by a private generator."""
    gen = torch.Generator().manual_seed(int(seed))
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu", generator=gen)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class EncoderDecoder(nn.Module):
    """U-shaped net: ``depth`` stride-2 conv stages doubling channels, a mirrored
    transposed-conv decoder with skip concatenation, and a 1x1 head returning logits.

    ``dropout`` > 0 enables unit dropping in the decoder, drawn from the
    generator passed to ``forward``; it stays active at inference.
    """

    def __init__(self, in_channels: int, out_channels: int, depth: int, base_channels: int,
                 dropout: float = 0.0, leaky: float = 0.0):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        self.dropout = dropout
        self.leaky = leaky
        chans = [base_channels * 2 ** i for i in range(depth + 1)]
        self.stem = nn.Conv2d(in_channels, chans[0], 3, padding=1)
        self.down = nn.ModuleList()
        for i in range(depth):
            self.down.append(nn.ModuleList([
                nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1),
                nn.Conv2d(chans[i + 1], chans[i + 1], 3, padding=1),
            ]))
        self.up = nn.ModuleList()
        for i in reversed(range(depth)):
            self.up.append(nn.ModuleList([
                nn.ConvTranspose2d(chans[i + 1], chans[i], 4, stride=2, padding=1),
                nn.Conv2d(2 * chans[i], chans[i], 3, padding=1),
            ]))
        self.head = nn.Conv2d(chans[0], out_channels, 1)

    def _act(self, x):
        return F.leaky_relu(x, self.leaky) if self.leaky else F.relu(x)

    def encode(self, x):
        skips = [self._act(self.stem(x))]
        for down, conv in self.down:
            skips.append(self._act(conv(self._act(down(skips[-1])))))
        return skips

    def forward(self, x, generator: torch.Generator | None = None):
        skips = self.encode(x)
        h = skips[-1]
        for level, (up, conv) in enumerate(self.up):
            h = self._act(up(h))
            if self.dropout > 0 and level < max(1, self.depth - 1):
                keep = 1.0 - self.dropout
                mask = torch.bernoulli(torch.full_like(h, keep), generator=generator)
                h = h * mask / keep
            h = self._act(conv(torch.cat([h, skips[-2 - level]], dim=1)))
        return self.head(h)


class PatchDiscriminator(nn.Module):
    """Stride-2 conv stack over the concatenated (mask, image) pair.

    Returns logits of shape (B, h, w) when ``patch`` else (B,).
    """

    def __init__(self, in_channels: int, depth: int, base_channels: int, patch: bool = True):
        super().__init__()
        self.patch = patch
        layers = []
        c_in = in_channels
        for i in range(depth):
            c_out = base_channels * 2 ** i
            layers += [nn.Conv2d(c_in, c_out, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c_in = c_out
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(c_in, 1, 3, padding=1)

    def forward(self, x):
        logits = self.head(self.body(x))[:, 0]
        if self.patch:
            return logits
        return logits.mean(dim=(1, 2))


def n_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
