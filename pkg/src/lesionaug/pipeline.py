"""End-to-end augmentation pipeline.

Each stage reads its inputs from, and writes its artifacts to, a run directory,
so stages can be driven one at a time from the command line or all at once by
:func:`run_full_pipeline`. Layout under the run directory::

    config.txt  run_log.tsv
    data/manifest.tsv            generated corpus (synthetic source only)
    split/train.tsv  split/val.tsv
    baseline/final.ckpt  baseline/checkpoints/epoch_###.ckpt  baseline/history.tsv
    stratify/partition.txt
    gan/S-Model.ckpt  gan/C-Model.ckpt  gan/{S,C}-discriminator.ckpt  gan/{S,C}-trace.tsv
    synthetic/syn_s.tsv  synthetic/syn_c.tsv
    augmented/manifest.tsv  augmented/final.ckpt  augmented/checkpoints/...
    reports/{baseline,augmented,ensemble}.txt  reports/summary.tsv
    figures/*.png
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import plotting
from .adversary import (build_generator, generate_images, load_generator, save_discriminator,
                        save_generator, train_gan)
from .checkpoint import load_checkpoint
from .config import PipelineConfig, dump_config
from .data import (DatasetManifest, derive_seed, gen_synthetic_corpus, load_manifest,
                   resize_manifest, save_manifest, split_train_val)
from .metrics import MetricsReport, evaluate_dataset
from .segmenter import (CheckpointRecord, build_fcn, ensemble_proba, binarize, load_segmenter,
                        predict_masks, save_segmenter, top_k_records, train_fcn)
from .stratify import DifficultyPartition, cross_synthesize, partition_by_median, score_per_image

log = logging.getLogger(__name__)

STAGES = ("split", "train-baseline", "stratify", "train-gan", "synthesize", "augment",
          "train-augmented", "evaluate")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def augment_dataset(real: DatasetManifest, syn_s: DatasetManifest, syn_c: DatasetManifest) -> DatasetManifest:
    """Real samples first, then all synthetic samples in id order."""
    seen: dict[str, str] = {}
    for name, m in (("real", real), ("syn_s", syn_s), ("syn_c", syn_c)):
        for sid in m.ids:
            if sid in seen:
                raise ValueError(f"id collision: {sid!r} in both {seen[sid]} and {name}")
            seen[sid] = name
    synthetic = sorted(list(syn_s) + list(syn_c), key=lambda s: s.id)
    return DatasetManifest(tuple(real) + tuple(synthetic), seed=real.seed, source="augmented")


@dataclass
class PipelineArtifacts:
    root: Path
    baseline_model: Path
    baseline_checkpoints: list[Path]
    partition: Path
    s_model: Path
    c_model: Path
    syn_s: Path
    syn_c: Path
    augmented_manifest: Path
    retrained_model: Path
    retrained_checkpoints: list[Path]
    ensemble_members: list[Path]
    baseline_report: Path
    augmented_report: Path
    ensemble_report: Path
    run_log: Path
    figures: list[Path] = field(default_factory=list)


class Workspace:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.root = Path(config.out)
        self._depth = 0

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    # -- run log --------------------------------------------------------------

    @property
    def log_path(self) -> Path:
        return self.path("run_log.tsv")

    def _log_row(self, row: list[str]) -> None:
        new = not self.log_path.exists()
        with open(self.log_path, "a", encoding="utf-8") as fh:
            if new:
                fh.write("stage\tseed\tstarted\tfinished\tstatus\tnote\n")
            fh.write("\t".join(row) + "\n")

    def note(self, stage: str, text: str) -> None:
        now = dt.datetime.now().isoformat(timespec="seconds")
        self._log_row([stage, "-", now, now, "note", text])

    @contextmanager
    def stage(self, name: str, seed=None):
        """Time a stage and append it to the run log.

        Only the outermost stage is logged, so a composite stage (as used by
        ``run-all``) shows up as a single row.
        """
        self.root.mkdir(parents=True, exist_ok=True)
        self.path("config.txt").write_text(dump_config(self.config), encoding="utf-8")
        started = dt.datetime.now().isoformat(timespec="seconds")
        t0 = time.perf_counter()
        top = self._depth == 0
        self._depth += 1
        log.info("stage %s (seed %s)", name, seed)
        try:
            yield
        except Exception as exc:
            if top:
                finished = dt.datetime.now().isoformat(timespec="seconds")
                self._log_row([name, "-" if seed is None else str(seed), started, finished, "failed", repr(exc)])
            if isinstance(exc, StageError):
                raise
            raise StageError(name, exc) from exc
        finally:
            self._depth -= 1
        if top:
            finished = dt.datetime.now().isoformat(timespec="seconds")
            self._log_row([name, "-" if seed is None else str(seed), started, finished, "ok", f"{time.perf_counter() - t0:.1f}s"])

    def require(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        if not p.exists():
            raise FileNotFoundError(f"missing artifact {p}; run the earlier stage first")
        return p


# -- stages ------------------------------------------------------------------

def stage_gen_data(ws: Workspace) -> Path:
    cfg = ws.config
    seed = cfg.stage_seed("gen-data")
    with ws.stage("gen-data", seed):
        d = cfg.data
        train = gen_synthetic_corpus(d.train_n, d.train_hard_fraction, cfg.size,
                                     derive_seed(seed, "train"), prefix="tr", split="train")
        val = gen_synthetic_corpus(d.val_n, d.val_hard_fraction, cfg.size,
                                   derive_seed(seed, "val"), prefix="va", split="train-val")
        corpus = DatasetManifest(tuple(train) + tuple(val), seed=seed, source="synthetic")
        return save_manifest(corpus, ws.path("data", "manifest.tsv"))


def stage_split(ws: Workspace) -> tuple[Path, Path]:
    """Resize to the working resolution and separate train / train-val.

    Records already tagged train/train-val keep their tags; otherwise a seeded
    random split of ``data.n_val`` images (10% by default) is drawn.
    """
    cfg = ws.config
    seed = cfg.stage_seed("split")
    with ws.stage("split", seed):
        src = Path(cfg.data.manifest) if cfg.data.manifest else ws.require("data", "manifest.tsv")
        full = resize_manifest(load_manifest(src), cfg.size)
        tagged = {s.split for s in full}
        if "train-val" in tagged:
            train = DatasetManifest(tuple(s for s in full if s.split == "train"), seed=seed)
            val = DatasetManifest(tuple(s for s in full if s.split == "train-val"), seed=seed)
        else:
            n_val = cfg.data.n_val if cfg.data.n_val is not None else int(round(0.1 * len(full)))
            train, val = split_train_val(full, n_val, seed)
        paths = (save_manifest(train, ws.path("split", "train.tsv")),
                 save_manifest(val, ws.path("split", "val.tsv")))
        log.info("split: %d train, %d val", len(train), len(val))
        return paths


def _write_history(path: Path, model, checkpoints: list[CheckpointRecord]) -> None:
    losses = model.training_meta.get("losses", [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_jaccard"])
        for rec, loss in zip(checkpoints, losses):
            w.writerow([rec.epoch, f"{loss:.6f}", f"{rec.val_score:.6f}"])


def _train_segmenter(ws: Workspace, name: str, seg_cfg, train: DatasetManifest,
                     val: DatasetManifest) -> tuple[Path, list[Path]]:
    model = build_fcn(seg_cfg, ws.config.size)
    model, checkpoints = train_fcn(model, train, val, seg_cfg)
    ckpt_paths = []
    for rec in checkpoints:
        p = ws.path(name, "checkpoints", f"epoch_{rec.epoch:03d}.ckpt")
        save_segmenter(p, rec.model, epoch=rec.epoch, val_score=rec.val_score)
        ckpt_paths.append(p)
    final = ws.path(name, "final.ckpt")
    save_segmenter(final, model, epoch=seg_cfg.epochs,
                   val_score=checkpoints[-1].val_score if checkpoints else None)
    _write_history(ws.path(name, "history.tsv"), model, checkpoints)
    return final, ckpt_paths


def stage_train_baseline(ws: Workspace) -> Path:
    cfg = ws.config
    seed = cfg.stage_seed("train-baseline")
    with ws.stage("train-baseline", seed):
        train = load_manifest(ws.require("split", "train.tsv"))
        val = load_manifest(ws.require("split", "val.tsv"))
        seg_cfg = dataclasses.replace(cfg.segmenter, seed=seed)
        final, _ = _train_segmenter(ws, "baseline", seg_cfg, train, val)
        return final


def stage_stratify(ws: Workspace) -> Path:
    with ws.stage("stratify"):
        model, _ = load_segmenter(ws.require("baseline", "final.ckpt"))
        train = load_manifest(ws.require("split", "train.tsv"))
        partition = partition_by_median(score_per_image(model, train))
        out = ws.path("stratify", "partition.txt")
        partition.save(out)
        log.info("partition: %d simple, %d complex", len(partition.simple_ids), len(partition.complex_ids))
        return out


def stage_train_gan(ws: Workspace, which: str) -> Path:
    if which not in ("S", "C"):
        raise ValueError("partition must be S or C")
    cfg = ws.config
    seed = cfg.stage_seed(f"train-gan:{which}")
    with ws.stage(f"train-gan:{which}", seed):
        partition = DifficultyPartition.load(ws.require("stratify", "partition.txt"))
        train = load_manifest(ws.require("split", "train.tsv"))
        ids = partition.simple_ids if which == "S" else partition.complex_ids
        gan_cfg = dataclasses.replace(cfg.gan, seed=seed)
        val = load_manifest(ws.require("split", "val.tsv"))
        g, trace, d = train_gan(train.subset(ids), gan_cfg, holdout=val)
        out = ws.path("gan", f"{which}-Model.ckpt")
        save_generator(out, g, component=f"{which}-Model")
        save_discriminator(ws.path("gan", f"{which}-discriminator.ckpt"), d)
        with open(ws.path("gan", f"{which}-trace.tsv"), "w", encoding="utf-8") as fh:
            fh.write("epoch\td_loss\tg_loss\td_real_acc\td_fake_acc\tholdout_acc\n")
            holdout = trace.holdout_acc or [float("nan")] * len(trace.d_loss)
            rows = zip(trace.d_loss, trace.g_loss, trace.d_real_acc, trace.d_fake_acc, holdout)
            for i, row in enumerate(rows, 1):
                fh.write(f"{i}\t" + "\t".join(f"{v:.6f}" for v in row) + "\n")
        return out


def _existing_files(manifest_path: Path) -> dict[str, tuple[Path, Path]]:
    out = {}
    base = manifest_path.parent
    with open(manifest_path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            f = line.rstrip("\n").split("\t")
            out[f[0]] = (base / f[1], base / f[2])
    return out


def stage_synthesize(ws: Workspace) -> tuple[Path, Path]:
    cfg = ws.config
    seed = cfg.stage_seed("synthesize")
    with ws.stage("synthesize", seed):
        partition = DifficultyPartition.load(ws.require("stratify", "partition.txt"))
        train = load_manifest(ws.require("split", "train.tsv"))
        s_model = load_generator(ws.require("gan", "S-Model.ckpt"))
        c_model = load_generator(ws.require("gan", "C-Model.ckpt"))
        syn_s, syn_c = cross_synthesize(partition, train, s_model, c_model, seed)
        return (save_manifest(syn_s, ws.path("synthetic", "syn_s.tsv")),
                save_manifest(syn_c, ws.path("synthetic", "syn_c.tsv")))


def stage_augment(ws: Workspace) -> Path:
    with ws.stage("augment"):
        paths = [ws.require("split", "train.tsv"), ws.require("synthetic", "syn_s.tsv"),
                 ws.require("synthetic", "syn_c.tsv")]
        real, syn_s, syn_c = (load_manifest(p) for p in paths)
        merged = augment_dataset(real, syn_s, syn_c)
        existing = {}
        for p in paths:
            existing.update(_existing_files(p))
        out = ws.path("augmented", "manifest.tsv")
        lines = [f"# seed={merged.seed}"]
        for s in merged:
            img, mask = existing[s.id]
            lines.append("\t".join([s.id, os.path.relpath(img, out.parent), os.path.relpath(mask, out.parent),
                                    s.split, s.origin, s.difficulty]))
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        log.info("augmented set: %d real + %d synthetic", len(real), len(syn_s) + len(syn_c))
        return out


def stage_train_augmented(ws: Workspace) -> Path:
    cfg = ws.config
    seed = cfg.stage_seed("train-augmented")
    with ws.stage("train-augmented", seed):
        train = load_manifest(ws.require("augmented", "manifest.tsv"))
        val = load_manifest(ws.require("split", "val.tsv"))
        seg_cfg = dataclasses.replace(cfg.augmented, seed=seed)
        final, _ = _train_segmenter(ws, "augmented", seg_cfg, train, val)
        if cfg.ensemble.mode == "seeds":
            for i in range(1, cfg.ensemble.k):
                run_cfg = dataclasses.replace(cfg.augmented, seed=derive_seed(seed, "member", i))
                _train_segmenter(ws, f"augmented/seed_{i}", run_cfg, train, val)
        return final


def _evaluate(models, val: DatasetManifest, header: dict) -> MetricsReport:
    images = [s.image for s in val]
    preds = binarize(ensemble_proba(models, images), models[0].config.binarize_threshold)
    return evaluate_dataset({s.id: p for s, p in zip(val, preds)}, {s.id: s.mask for s in val}, header)


def _header(ws: Workspace, model: str, members=None) -> dict:
    h = {"model": model, "resolution": f"{ws.config.resolution}x{ws.config.resolution}",
         "split": "train-val"}
    if members is not None:
        h["members"] = ",".join(members)
    return h


def stage_evaluate(ws: Workspace) -> dict[str, Path]:
    """Single-model reports for the baseline and the augmented retraining."""
    with ws.stage("evaluate"):
        val = load_manifest(ws.require("split", "val.tsv"))
        out = {}
        for name in ("baseline", "augmented"):
            if not (ws.root / name / "final.ckpt").exists():
                continue
            model, _ = load_segmenter(ws.root / name / "final.ckpt")
            report = _evaluate([model], val, _header(ws, name))
            out[name] = ws.path("reports", f"{name}.txt")
            report.save(out[name])
        if "baseline" in out and "augmented" in out:
            b = MetricsReport.load(out["baseline"]).means["jaccard"]
            a = MetricsReport.load(out["augmented"]).means["jaccard"]
            delta = a - b
            ws.note("evaluate", f"directional check: augmented - baseline mean Jaccard = {delta:+.4f} "
                                f"(non-inferiority margin -0.02: {'met' if delta >= -0.02 else 'NOT met'}; "
                                f"expected strict improvement: {'yes' if delta > 0 else 'no'})")
        _write_summary(ws)
        render_figures(ws)
        return out


def ensemble_members(ws: Workspace) -> list[tuple[Path, int, float]]:
    k = ws.config.ensemble.k
    if ws.config.ensemble.mode == "seeds":
        paths = [ws.require("augmented", "final.ckpt")]
        paths += [ws.require("augmented", f"seed_{i}", "final.ckpt") for i in range(1, k)]
        members = []
        for p in paths:
            header, _ = load_checkpoint(p)
            members.append((p, header["epoch"], header["val_score"]))
        return members
    ckpt_dir = ws.require("augmented", "checkpoints")
    records = []
    for p in sorted(ckpt_dir.glob("epoch_*.ckpt")):
        header, _ = load_checkpoint(p)
        records.append(CheckpointRecord(p, header["epoch"], header["val_score"]))
    if not records:
        raise ValueError("no augmented checkpoints to ensemble")
    return [(r.model, r.epoch, r.val_score) for r in top_k_records(records, k)]


def stage_ensemble_evaluate(ws: Workspace) -> Path:
    with ws.stage("ensemble-evaluate"):
        val = load_manifest(ws.require("split", "val.tsv"))
        members = ensemble_members(ws)
        models = [load_segmenter(p)[0] for p, _, _ in members]
        with open(ws.path("reports", "ensemble_members.tsv"), "w", encoding="utf-8") as fh:
            fh.write("checkpoint\tepoch\tval_jaccard\n")
            for p, epoch, score in members:
                fh.write(f"{os.path.relpath(p, ws.root)}\t{epoch}\t{score:.6f}\n")
        names = [f"epoch_{e:03d}" for _, e, _ in members]
        report = _evaluate(models, val, _header(ws, f"augmented-ensemble-top{len(models)}", names))
        out = ws.path("reports", "ensemble.txt")
        report.save(out)
        _write_summary(ws)
        render_figures(ws)
        return out


def _write_summary(ws: Workspace) -> None:
    rows = []
    for name in ("baseline", "augmented", "ensemble"):
        p = ws.root / "reports" / f"{name}.txt"
        if p.exists():
            rep = MetricsReport.load(p)
            rows.append((name, rep.n_images, rep.means))
    if not rows:
        return
    from .metrics import FIELDS
    with open(ws.path("reports", "summary.tsv"), "w", encoding="utf-8") as fh:
        fh.write("model\tn_images\t" + "\t".join(FIELDS) + "\n")
        for name, n, means in rows:
            fh.write(f"{name}\t{n}\t" + "\t".join(f"{means[f]:.6f}" for f in FIELDS) + "\n")


def _read_tsv(path: Path) -> dict[str, list[float]]:
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        cols: dict[str, list[float]] = {k: [] for k in reader.fieldnames or []}
        for row in reader:
            for k, v in row.items():
                cols[k].append(float(v))
    return cols


def render_figures(ws: Workspace) -> list[Path]:
    """Draw every figure whose input artifacts exist."""
    figs = []
    hist = {}
    for name in ("baseline", "augmented"):
        p = ws.root / name / "history.tsv"
        if p.exists():
            cols = _read_tsv(p)
            hist[name] = (cols["train_loss"], cols["val_jaccard"])
    if hist:
        figs.append(plotting.plot_training_curves(hist, ws.path("figures", "training_curves.png")))
    traces = {w: _read_tsv(ws.root / "gan" / f"{w}-trace.tsv") for w in ("S", "C")
              if (ws.root / "gan" / f"{w}-trace.tsv").exists()}
    if traces:
        figs.append(plotting.plot_gan_traces(traces, ws.path("figures", "gan_traces.png")))
    part_path = ws.root / "stratify" / "partition.txt"
    if part_path.exists():
        part = DifficultyPartition.load(part_path)
        figs.append(plotting.plot_partition(part.scores, part.simple_ids, ws.path("figures", "partition.png")))
        syn_paths = [ws.root / "synthetic" / f for f in ("syn_c.tsv", "syn_s.tsv")]
        if all(p.exists() for p in syn_paths):
            train = load_manifest(ws.root / "split" / "train.tsv").by_id()
            rows = []
            for p, tag in zip(syn_paths, ("C-Model", "S-Model")):
                for s in list(load_manifest(p))[:3]:
                    src = train[s.id.rsplit(".", 1)[0]]
                    rows.append((f"{tag}\n{src.id}", src.image, s.mask, s.image))
            figs.append(plotting.plot_synthesis_grid(rows, ws.path("figures", "synthesis_grid.png")))
    reports = {}
    for name in ("baseline", "augmented", "ensemble"):
        p = ws.root / "reports" / f"{name}.txt"
        if p.exists():
            reports[name] = MetricsReport.load(p).means
    if reports:
        figs.append(plotting.plot_metric_comparison(reports, ws.path("figures", "metrics.png")))
    return [Path(f) for f in figs]


def run_full_pipeline(config: PipelineConfig) -> PipelineArtifacts:
    config.validate()
    ws = Workspace(config)
    if ws.log_path.exists():
        ws.log_path.unlink()
    split_seed = config.stage_seed("split")
    if not config.data.manifest:
        split_seed = f"gen-data:{config.stage_seed('gen-data')},split:{split_seed}"
    with ws.stage("split", split_seed):
        if not config.data.manifest:
            stage_gen_data(ws)
        stage_split(ws)
    stage_train_baseline(ws)
    stage_stratify(ws)
    gan_seeds = ",".join(f"{w}:{config.stage_seed(f'train-gan:{w}')}" for w in ("S", "C"))
    with ws.stage("train-gan", gan_seeds):
        stage_train_gan(ws, "S")
        stage_train_gan(ws, "C")
    stage_synthesize(ws)
    stage_augment(ws)
    stage_train_augmented(ws)
    with ws.stage("evaluate"):
        reports = stage_evaluate(ws)
        ens = stage_ensemble_evaluate(ws)
    members = [p for p, _, _ in ensemble_members(ws)]
    root = ws.root
    return PipelineArtifacts(
        root=root,
        baseline_model=root / "baseline" / "final.ckpt",
        baseline_checkpoints=sorted((root / "baseline" / "checkpoints").glob("*.ckpt")),
        partition=root / "stratify" / "partition.txt",
        s_model=root / "gan" / "S-Model.ckpt",
        c_model=root / "gan" / "C-Model.ckpt",
        syn_s=root / "synthetic" / "syn_s.tsv",
        syn_c=root / "synthetic" / "syn_c.tsv",
        augmented_manifest=root / "augmented" / "manifest.tsv",
        retrained_model=root / "augmented" / "final.ckpt",
        retrained_checkpoints=sorted((root / "augmented" / "checkpoints").glob("*.ckpt")),
        ensemble_members=members,
        baseline_report=reports["baseline"],
        augmented_report=reports["augmented"],
        ensemble_report=ens,
        run_log=ws.log_path,
        figures=sorted((root / "figures").glob("*.png")),
    )
