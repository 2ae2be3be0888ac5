"""Difficulty scoring, simple/complex median split and cross-synthesis."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Mapping

from .adversary import GeneratorModel, synthesize
from .data import DatasetManifest, derive_seed
from .metrics import confusion, metric_scores
from .segmenter import SegmenterModel, predict_masks


@dataclass
class DifficultyPartition:
    scores: dict[str, float]
    simple_ids: list[str]
    complex_ids: list[str]

    def label(self, sid: str) -> str:
        return "S" if sid in set(self.simple_ids) else "C"

    def to_text(self) -> str:
        lines = [f"{sid} {self.scores[sid]:.6f} S" for sid in self.simple_ids]
        lines += [f"{sid} {self.scores[sid]:.6f} C" for sid in self.complex_ids]
        return "\n".join(lines) + "\n"

    def save(self, path: os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path: os.PathLike) -> "DifficultyPartition":
        scores, simple, hard = {}, [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    sid, score, tag = line.split()
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: expected 'id score S|C'") from None
                if tag not in ("S", "C"):
                    raise ValueError(f"{path}:{lineno}: bad partition tag {tag!r}")
                scores[sid] = float(score)
                (simple if tag == "S" else hard).append(sid)
        return cls(scores, simple, hard)


def score_per_image(model: SegmenterModel, data: DatasetManifest) -> dict[str, float]:
    if len(data) == 0:
        raise ValueError("cannot score an empty dataset")
    preds = predict_masks(model, [s.image for s in data])
    return {s.id: metric_scores(confusion(p, s.mask))["dice"] for p, s in zip(preds, data)}


def partition_by_median(scores: Mapping[str, float]) -> DifficultyPartition:
    """Best-scored ceil(n/2) ids are simple; ties ordered by id."""
    if len(scores) < 2:
        raise ValueError("need at least 2 scored ids to partition")
    ranked = sorted(scores, key=lambda sid: (-scores[sid], sid))
    half = math.ceil(len(ranked) / 2)
    return DifficultyPartition(dict(scores), ranked[:half], ranked[half:])


def cross_synthesize(partition: DifficultyPartition, data: DatasetManifest,
                     s_model: GeneratorModel, c_model: GeneratorModel, seed: int):
    """Render simple labels with the complex-trained generator and vice versa.

    Returns ``(syn_s, syn_c)``: simple-style renderings of complex labels, and
    complex-style renderings of simple labels.
    """
    for name, g in (("S-Model", s_model), ("C-Model", c_model)):
        if not g.trained:
            raise ValueError(f"{name} has not been trained")
    lookup = data.by_id()
    wanted = set(partition.simple_ids) | set(partition.complex_ids)
    if wanted != set(lookup):
        diff = sorted(wanted ^ set(lookup))
        raise ValueError(f"partition and data ids differ: {diff[:5]}")

    def render(ids, g, suffix, origin):
        out = []
        for sid in ids:
            new_id = f"{sid}.{suffix}"
            sample = synthesize(g, lookup[sid].mask, derive_seed(seed, sid, suffix), new_id, origin)
            out.append(sample.replace(split="train"))
        return DatasetManifest(tuple(out), seed=seed, source="cross-synthesis")

    syn_c = render(partition.simple_ids, c_model, "synC", "synthetic-complex")
    syn_s = render(partition.complex_ids, s_model, "synS", "synthetic-simple")
    return syn_s, syn_c
