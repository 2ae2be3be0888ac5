"""Image/mask samples, manifests, resizing, baseline augmentation and a
procedural lesion corpus for desk-scale runs."""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image
from scipy import ndimage

ORIGINS = ("real", "synthetic-simple", "synthetic-complex")
DIFFICULTIES = ("unknown", "simple", "complex")
SPLITS = ("train", "train-val", "test-val", "unsplit")


class ManifestError(ValueError):
    pass


def derive_seed(seed: int, *keys) -> int:
    """Stable 31-bit sub-seed for ``(seed, *keys)``; independent of PYTHONHASHSEED."""
    text = ":".join([str(seed)] + [str(k) for k in keys])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def quantize(image: np.ndarray) -> np.ndarray:
    """Round an image in [0,1] to the 8-bit grid it would have on disk."""
    return (np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


@dataclass(frozen=True, eq=False)
class ImageSample:
    id: str
    image: np.ndarray
    mask: np.ndarray
    origin: str = "real"
    difficulty: str = "unknown"
    split: str = "unsplit"

    def __post_init__(self):
        validate_pair(self.image, self.mask, self.id)
        if self.origin not in ORIGINS:
            raise ValueError(f"{self.id}: unknown origin {self.origin!r}")
        if self.difficulty not in DIFFICULTIES:
            raise ValueError(f"{self.id}: unknown difficulty {self.difficulty!r}")
        if self.split not in SPLITS:
            raise ValueError(f"{self.id}: unknown split {self.split!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def replace(self, **changes) -> "ImageSample":
        return dataclasses.replace(self, **changes)


def validate_pair(image: np.ndarray, mask: np.ndarray, sid: str = "?") -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"{sid}: image must be HxWx3, got {image.shape}")
    if mask.ndim != 2:
        raise ValueError(f"{sid}: mask must be HxW, got {mask.shape}")
    if image.shape[:2] != mask.shape:
        raise ValueError(f"{sid}: image {image.shape[:2]} and mask {mask.shape} differ")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError(f"{sid}: mask is not binary")
    if image.size and (not np.isfinite(image).all() or image.min() < 0 or image.max() > 1):
        raise ValueError(f"{sid}: image values outside [0,1]")


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    samples: tuple[ImageSample, ...] = ()
    seed: int = 0
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise ManifestError(f"duplicate id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.by_id()[key]
        return self.samples[key]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def by_id(self) -> dict[str, ImageSample]:
        return {s.id: s for s in self.samples}

    def subset(self, ids: Iterable[str]) -> "DatasetManifest":
        lookup = self.by_id()
        return DatasetManifest(tuple(lookup[i] for i in ids), seed=self.seed, source=self.source)

    def with_split(self, split: str) -> "DatasetManifest":
        return DatasetManifest(tuple(s.replace(split=split) for s in self.samples),
                               seed=self.seed, source=self.source)


# -- file I/O ---------------------------------------------------------------

def read_image(path: os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def read_mask(path: os.PathLike, sid: str = "?") -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    if not np.isin(arr, (0, 255)).all():
        raise ManifestError(f"{sid}: mask {path} has values other than 0/255")
    return (arr == 255).astype(np.uint8)


def write_image(path: os.PathLike, image: np.ndarray) -> None:
    arr = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def write_mask(path: os.PathLike, mask: np.ndarray) -> None:
    Image.fromarray((mask.astype(np.uint8) * 255), mode="L").save(path)


def load_manifest(path: os.PathLike) -> DatasetManifest:
    """Read a tab-separated manifest; image paths resolve relative to the file."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    samples = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise ManifestError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(fields)}")
            sid, img_p, mask_p, split, origin, difficulty = fields
            if sid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {sid!r} (first on line {seen[sid]})")
            seen[sid] = lineno
            if split not in SPLITS or origin not in ORIGINS or difficulty not in DIFFICULTIES:
                raise ManifestError(f"{path}:{lineno}: bad split/origin/difficulty for {sid!r}")
            img_path, mask_path = base / img_p, base / mask_p
            for p in (img_path, mask_path):
                if not p.is_file():
                    raise ManifestError(f"{path}:{lineno}: {sid!r} references missing file {p}")
            image = read_image(img_path)
            mask = read_mask(mask_path, sid)
            try:
                samples.append(ImageSample(sid, image, mask, origin, difficulty, split))
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return DatasetManifest(tuple(samples), source=str(path))


def save_manifest(manifest: DatasetManifest, path: os.PathLike, image_dir: str = "images") -> Path:
    """Write every sample as PNG under ``image_dir`` next to the manifest file."""
    path = Path(path)
    root = path.parent
    (root / image_dir).mkdir(parents=True, exist_ok=True)
    lines = [f"# seed={manifest.seed}"]
    for s in manifest.samples:
        img_rel = f"{image_dir}/{s.id}.png"
        mask_rel = f"{image_dir}/{s.id}_mask.png"
        write_image(root / img_rel, s.image)
        write_mask(root / mask_rel, s.mask)
        lines.append("\t".join([s.id, img_rel, mask_rel, s.split, s.origin, s.difficulty]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# -- splitting and geometry ---------------------------------------------------

def split_train_val(manifest: DatasetManifest, n_val: int, seed: int):
    if not 0 <= n_val <= len(manifest):
        raise ValueError(f"n_val={n_val} outside [0, {len(manifest)}]")
    rng = np.random.default_rng(seed)
    val_idx = set(rng.choice(len(manifest), size=n_val, replace=False).tolist())
    train = [s.replace(split="train") for i, s in enumerate(manifest.samples) if i not in val_idx]
    val = [s.replace(split="train-val") for i, s in enumerate(manifest.samples) if i in val_idx]
    return (DatasetManifest(tuple(train), seed=seed, source=manifest.source),
            DatasetManifest(tuple(val), seed=seed, source=manifest.source))


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centres: src = floor((i + 0.5) * n_in / n_out)
    idx = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(int)
    return np.minimum(idx, n_in - 1)


def _bilinear_axis(n_in: int, n_out: int):
    x = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    x = np.clip(x, 0, n_in - 1)
    lo = np.floor(x).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, (x - lo).astype(np.float32)


def resize_image(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    r0, r1, fr = _bilinear_axis(image.shape[0], h)
    c0, c1, fc = _bilinear_axis(image.shape[1], w)
    top = image[r0][:, c0] * (1 - fc)[None, :, None] + image[r0][:, c1] * fc[None, :, None]
    bot = image[r1][:, c0] * (1 - fc)[None, :, None] + image[r1][:, c1] * fc[None, :, None]
    out = top * (1 - fr)[:, None, None] + bot * fr[:, None, None]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    return mask[_nearest_index(mask.shape[0], h)][:, _nearest_index(mask.shape[1], w)]


def resize_pair(sample: ImageSample, size: tuple[int, int]) -> ImageSample:
    h, w = size
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {size}")
    if tuple(size) == sample.shape:
        return sample
    return sample.replace(image=resize_image(sample.image, size), mask=resize_mask(sample.mask, size))


def resize_manifest(manifest: DatasetManifest, size: tuple[int, int]) -> DatasetManifest:
    return DatasetManifest(tuple(resize_pair(s, size) for s in manifest.samples),
                           seed=manifest.seed, source=manifest.source)


# -- baseline augmentation ---------------------------------------------------

@dataclass
class AugmentConfig:
    crop_size: Optional[tuple[int, int]] = None   # None keeps full size
    flip_prob: float = 0.5
    jitter: float = 0.05


def flip_pair(sample: ImageSample, axis: int) -> ImageSample:
    """Mirror image and mask along ``axis`` (0 vertical, 1 horizontal)."""
    return sample.replace(image=np.flip(sample.image, axis=axis).copy(),
                          mask=np.flip(sample.mask, axis=axis).copy())


def baseline_augment(sample: ImageSample, rng: np.random.Generator,
                     config: AugmentConfig = AugmentConfig()) -> ImageSample:
    h, w = sample.shape
    ch, cw = config.crop_size or (h, w)
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than input {h}x{w}")
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    out = sample.replace(image=sample.image[top:top + ch, left:left + cw].copy(),
                         mask=sample.mask[top:top + ch, left:left + cw].copy())
    for axis in (0, 1):
        if rng.random() < config.flip_prob:
            out = flip_pair(out, axis)
    if config.jitter > 0:
        gain = 1.0 + rng.uniform(-config.jitter, config.jitter)
        shift = rng.uniform(-config.jitter, config.jitter, size=3)
        image = np.clip(out.image * gain + shift, 0.0, 1.0).astype(np.float32)
        out = out.replace(image=image)
    return out


# -- procedural lesion corpus ----------------------------------------------------

@dataclass
class CorpusSpec:
    skin: tuple[float, float, float] = (0.86, 0.68, 0.58)
    lesion_easy: tuple[float, float, float] = (0.30, 0.17, 0.12)
    lesion_hard_contrast: float = 0.28
    hard_blur: float = 2.5
    hair_strokes: tuple[int, int] = (2, 6)


def _blob_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = h * rng.uniform(0.35, 0.65)
    cx = w * rng.uniform(0.35, 0.65)
    ry = h * rng.uniform(0.14, 0.30)
    rx = w * rng.uniform(0.14, 0.30)
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    ang = np.arctan2(v / ry, u / rx)
    # radial boundary perturbation by a few low-order harmonics
    radius = np.ones_like(ang)
    for k in (2, 3, 5):
        radius += rng.uniform(0.0, 0.12) * np.cos(k * ang + rng.uniform(0, 2 * np.pi))
    mask = (u / rx) ** 2 + (v / ry) ** 2 <= radius ** 2
    if not mask.any():
        mask[int(cy), int(cx)] = True
    return mask.astype(np.uint8)


def _hair(rng: np.random.Generator, h: int, w: int, n: int) -> np.ndarray:
    canvas = np.zeros((h, w), dtype=np.float64)
    t = np.linspace(0, 1, 4 * max(h, w))
    for _ in range(n):
        p0 = rng.uniform(0, 1, 2) * (h, w)
        p1 = rng.uniform(0, 1, 2) * (h, w)
        bend = rng.normal(0, 0.15, 2) * (h, w)
        pts = ((1 - t)[:, None] ** 2 * p0 + 2 * (t * (1 - t))[:, None] * (0.5 * (p0 + p1) + bend)
               + (t ** 2)[:, None] * p1)
        r = np.clip(np.round(pts[:, 0]).astype(int), 0, h - 1)
        c = np.clip(np.round(pts[:, 1]).astype(int), 0, w - 1)
        canvas[r, c] = 1.0
    return np.clip(ndimage.gaussian_filter(canvas, 0.5) * 2.5, 0, 1)


def render_lesion(mask: np.ndarray, hard: bool, rng: np.random.Generator,
                  spec: CorpusSpec = CorpusSpec()) -> np.ndarray:
    h, w = mask.shape
    skin = np.array(spec.skin) * rng.uniform(0.9, 1.05)
    texture = ndimage.gaussian_filter(rng.normal(0, 1, (h, w)), 1.5)
    texture /= texture.std() + 1e-9
    if hard:
        lesion = skin * (1.0 - spec.lesion_hard_contrast * rng.uniform(0.8, 1.2))
        weight = ndimage.gaussian_filter(mask.astype(np.float64), spec.hard_blur * max(h, w) / 64)
        tex_amp = 0.06
    else:
        lesion = np.array(spec.lesion_easy) * rng.uniform(0.85, 1.15)
        weight = mask.astype(np.float64)
        tex_amp = 0.025
    image = skin[None, None, :] * (1 - weight[..., None]) + lesion[None, None, :] * weight[..., None]
    image = image + tex_amp * texture[..., None]
    if hard:
        lo, hi = spec.hair_strokes
        hair = _hair(rng, h, w, int(rng.integers(lo, hi + 1)))
        image = image * (1 - 0.75 * hair[..., None]) + 0.08 * hair[..., None]
    image = image + rng.normal(0, 0.015, image.shape)
    return quantize(image)


def gen_synthetic_corpus(n: int, hard_fraction: float, size: tuple[int, int] = (128, 128),
                         seed: int = 0, prefix: str = "syn", split: str = "unsplit",
                         spec: CorpusSpec = CorpusSpec()) -> DatasetManifest:
    """Procedural lesion corpus; ``round(n * hard_fraction)`` samples are hard.

    The difficulty tag is recorded for experiment bookkeeping only.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if not 0.0 <= hard_fraction <= 1.0:
        raise ValueError("hard_fraction must lie in [0, 1]")
    h, w = size
    n_hard = int(round(n * hard_fraction))
    order = np.random.default_rng(seed).permutation(n)
    hard_set = set(order[:n_hard].tolist())
    samples = []
    for i in range(n):
        sid = f"{prefix}{i:05d}"
        rng = np.random.default_rng(derive_seed(seed, sid))
        mask = _blob_mask(rng, h, w)
        hard = i in hard_set
        image = render_lesion(mask, hard, rng, spec)
        samples.append(ImageSample(sid, image, mask, "real",
                                   "complex" if hard else "simple", split))
    return DatasetManifest(tuple(samples), seed=seed, source="synthetic")
