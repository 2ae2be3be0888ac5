"""Confusion counts and the segmentation metric suite (Dice, Jaccard, thresholded
Jaccard, sensitivity, specificity, accuracy)."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

TJAC_THRESHOLD = 0.65
FIELDS = ("dice", "jaccard", "t_jaccard", "sensitivity", "specificity", "accuracy")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _as_binary(mask, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype == bool:
        return arr
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} mask is not binary")
    return arr.astype(bool)


def confusion(pred, gt) -> ConfusionCounts:
    p = _as_binary(pred, "pred")
    g = _as_binary(gt, "gt")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num: int, den: int) -> float:
    # zero denominator means both sets empty: perfect agreement
    return 1.0 if den == 0 else num / den


def metric_scores(c: ConfusionCounts) -> dict[str, float]:
    if c.total <= 0:
        raise ValueError("confusion counts are all zero")
    return {
        "dice": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "jaccard": _ratio(c.tp, c.tp + c.fp + c.fn),
        "sensitivity": _ratio(c.tp, c.tp + c.fn),
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "accuracy": (c.tp + c.tn) / c.total,
    }


def thresholded_jaccard(j: float) -> float:
    """Zero a per-image Jaccard strictly below 0.65; keep it otherwise."""
    if not 0.0 <= j <= 1.0:
        raise ValueError(f"jaccard {j} outside [0, 1]")
    return 0.0 if j < TJAC_THRESHOLD else j


def image_scores(pred, gt) -> dict[str, float]:
    s = metric_scores(confusion(pred, gt))
    s["t_jaccard"] = thresholded_jaccard(s["jaccard"])
    return {k: s[k] for k in FIELDS}


@dataclass
class MetricsReport:
    per_image: dict[str, dict[str, float]]
    means: dict[str, float]
    n_images: int
    header: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"# {k}={v}" for k, v in self.header.items()]
        lines.append("# id " + " ".join(FIELDS))
        for sid, vals in self.per_image.items():
            lines.append(sid + " " + " ".join(f"{vals[f]:.6f}" for f in FIELDS))
        lines.append("MEAN " + " ".join(f"{self.means[f]:.6f}" for f in FIELDS))
        return "\n".join(lines) + "\n"

    def save(self, path: os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path: os.PathLike) -> "MetricsReport":
        per_image, means, header = {}, {}, {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    if "=" in body:
                        k, v = body.split("=", 1)
                        header[k.strip()] = v.strip()
                    continue
                parts = line.split()
                vals = dict(zip(FIELDS, map(float, parts[1:])))
                if parts[0] == "MEAN":
                    means = vals
                else:
                    per_image[parts[0]] = vals
        return cls(per_image, means, len(per_image), header)


def evaluate_dataset(preds: Mapping[str, np.ndarray], gts: Mapping[str, np.ndarray],
                     header: dict | None = None) -> MetricsReport:
    if set(preds) != set(gts):
        missing = sorted(set(preds) ^ set(gts))
        raise ValueError(f"prediction/ground-truth id mismatch: {missing[:5]}")
    if not gts:
        raise ValueError("cannot evaluate an empty dataset")
    per_image = {sid: image_scores(preds[sid], gts[sid]) for sid in gts}
    means = {f: float(np.mean([v[f] for v in per_image.values()])) for f in FIELDS}
    return MetricsReport(per_image, means, len(per_image), dict(header or {}))
