"""Acceptance criteria; each test appends one PASS/FAIL line to the terminal summary."""

import json
import math
import time

import numpy as np
import pytest

from lesionaug.adversary import GanConfig, NoiseSpec, gan_value, train_gan
from lesionaug.config import PipelineConfig
from lesionaug.data import gen_synthetic_corpus
from lesionaug.metrics import MetricsReport, confusion, metric_scores, thresholded_jaccard
from lesionaug.pipeline import run_full_pipeline
from lesionaug.segmenter import (SegmenterConfig, build_fcn, ensemble_proba, load_segmenter,
                                 predict_proba, save_segmenter, train_fcn)
from lesionaug.stratify import cross_synthesize, partition_by_median

from conftest import ACCEPTANCE_LINES
from gradcheck_cases import CASES
from oracles import brute_force_metrics
from toy_gan import REFERENCE, SEED as TOY_SEED, run_toy_gan

E2E_SEED = 7


def record(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_metric_oracle_equivalence():
    rng = np.random.default_rng(12345)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        shape = tuple(rng.integers(1, 17, size=2))
        density = rng.random()
        pred = (rng.random(shape) < density).astype(np.uint8)
        gt = (rng.random(shape) < density).astype(np.uint8)
        ours = metric_scores(confusion(pred, gt))
        ref = brute_force_metrics(pred, gt)
        worst = max(worst, max(abs(ours[k] - ref[k]) for k in ref))
    elapsed = time.perf_counter() - t0
    record("metric oracle", worst <= 1e-12 and elapsed < 10,
           f"max |diff| {worst:.1e} over 1000 pairs x 5 metrics, {elapsed:.2f}s")


def test_thresholded_jaccard_rule():
    inputs = [0.0, 0.649, 0.65, 0.651, 1.0]
    expected = [0.0, 0.0, 0.65, 0.651, 1.0]
    got = [thresholded_jaccard(j) for j in inputs]
    record("thresholded Jaccard", got == expected, f"{inputs} -> {got}")


def test_gan_value_cases():
    eps = 1e-7
    a = gan_value(1 - eps, eps)
    b = gan_value(0.5, 0.5)
    c = gan_value(0.5, eps)
    ok = abs(a) < 1e-6 and abs(b + 1.386294) <= 1e-6 and abs(c + 0.693147) <= 1e-6
    record("GAN value", ok, f"V(1-e,e)={a:.2e}  V(.5,.5)={b:.6f}  V(.5,e)={c:.6f}")


@pytest.mark.parametrize("name", list(CASES))
def test_gradient_checks(name):
    err, margin, n_params = CASES[name]()
    ok = err < 1e-3 and n_params <= 1000 and margin > 1e-3
    record(f"gradient check ({name})", ok,
           f"rel err {err:.1e}, {n_params} params, kink margin {margin:.1e}")


def test_stratification_properties():
    rng = np.random.default_rng(2024)
    failures = 0
    for trial in range(500):
        n = int(rng.integers(2, 300))
        # coarse rounding on half the maps forces ties at the median
        raw = rng.random(n)
        values = np.round(raw, 1) if trial % 2 else raw
        scores = {f"im{i:04d}": float(v) for i, v in enumerate(values)}
        p = partition_by_median(scores)
        s_min = min(scores[i] for i in p.simple_ids)
        c_max = max(scores[i] for i in p.complex_ids)
        shuffled = dict(sorted(scores.items(), key=lambda kv: rng.random()))
        ok = (abs(len(p.simple_ids) - len(p.complex_ids)) <= 1
              and set(p.simple_ids) | set(p.complex_ids) == set(scores)
              and s_min >= c_max
              and partition_by_median(shuffled) == p)
        failures += not ok
    record("stratification", failures == 0, f"{500 - failures}/500 score maps satisfy balance, order, determinism")


def test_cross_synthesis_size_contract():
    n = 13
    corpus = gen_synthetic_corpus(n, 0.4, (16, 16), seed=31)
    cfg = GanConfig(depth=2, base_channels=4, d_depth=2, d_base_channels=4,
                    noise=NoiseSpec(dim=2), epochs=1, batch_size=4)
    part = partition_by_median({s.id: float(i % 5) for i, s in enumerate(corpus)})
    s_model, _, _ = train_gan(corpus.subset(part.simple_ids), cfg)
    c_model, _, _ = train_gan(corpus.subset(part.complex_ids), cfg)
    syn_s, syn_c = cross_synthesize(part, corpus, s_model, c_model, seed=5)
    src = corpus.by_id()
    exact = all(s.mask.tobytes() == src[s.id.rsplit(".", 1)[0]].mask.tobytes()
                for s in list(syn_s) + list(syn_c))
    total = len(syn_s) + len(syn_c)
    record("cross-synthesis size", total == n and exact,
           f"n={n} real -> {len(syn_c)} C-style + {len(syn_s)} S-style, masks bit-exact: {exact}")


def test_ensemble_identity(tmp_path):
    corpus = gen_synthetic_corpus(8, 0.5, (32, 32), seed=41)
    cfg = SegmenterConfig(depth=2, base_channels=4, epochs=2, batch_size=4, seed=2)
    model, _ = train_fcn(build_fcn(cfg, (32, 32)), corpus, corpus, cfg)
    save_segmenter(tmp_path / "m.ckpt", model, epoch=2)
    copies = [load_segmenter(tmp_path / "m.ckpt")[0] for _ in range(5)]
    images = [s.image for s in corpus]
    single = predict_proba(copies[0], images)
    ens = ensemble_proba(copies, images)
    record("ensemble identity", ens.tobytes() == single.tobytes() and ens.dtype == single.dtype,
           f"5 copies vs single on {len(images)} maps: bit-identical={ens.tobytes() == single.tobytes()}")


@pytest.mark.slow
def test_toy_gan_label_consistency():
    t0 = time.perf_counter()
    result = run_toy_gan(TOY_SEED)
    elapsed = time.perf_counter() - t0
    reference = json.loads(REFERENCE.read_text())
    late = result["holdout_acc"][10:]
    detail = (f"mean Dice {result['mean_dice']:.4f} (reference {reference['mean_dice']:.4f}, seed {TOY_SEED}), "
              f"held-out D acc after warmup {np.mean(late):.3f}, {elapsed:.0f}s")
    record("toy GAN label consistency", result["mean_dice"] >= 0.6 and elapsed <= 20 * 60, detail)
    assert math.isclose(result["mean_dice"], reference["mean_dice"], abs_tol=1e-6)
    assert 0.5 < np.mean(late) < 1.0


@pytest.mark.slow
def test_end_to_end_directional(tmp_path):
    cfg = PipelineConfig(resolution=64, seed=E2E_SEED, out=str(tmp_path / "run"))
    t0 = time.perf_counter()
    arts = run_full_pipeline(cfg)
    elapsed = time.perf_counter() - t0
    base = MetricsReport.load(arts.baseline_report).means["jaccard"]
    aug = MetricsReport.load(arts.augmented_report).means["jaccard"]
    ens = MetricsReport.load(arts.ensemble_report).means["jaccard"]
    noted = "directional check" in arts.run_log.read_text()
    detail = (f"baseline {base:.4f}, augmented {aug:.4f} (delta {aug - base:+.4f}), "
              f"ensemble {ens:.4f}, {elapsed / 60:.1f} min")
    record("end-to-end directional", aug >= base - 0.02 and noted and elapsed <= 45 * 60, detail)
