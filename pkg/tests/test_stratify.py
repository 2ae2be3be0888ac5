import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lesionaug.adversary import GanConfig, NoiseSpec, build_generator, train_gan
from lesionaug.data import gen_synthetic_corpus
from lesionaug.metrics import confusion, metric_scores
from lesionaug.segmenter import SegmenterConfig, build_fcn, predict_mask
from lesionaug.stratify import (DifficultyPartition, cross_synthesize, partition_by_median,
                                score_per_image)

from oracles import brute_force_metrics

GAN = GanConfig(depth=2, base_channels=4, d_depth=2, d_base_channels=4,
                noise=NoiseSpec(dim=2), epochs=1, batch_size=4, seed=2)


@pytest.fixture(scope="module")
def corpus():
    return gen_synthetic_corpus(9, 0.3, (16, 16), seed=6)


@pytest.fixture(scope="module")
def generators(corpus):
    s_model, _, _ = train_gan(corpus, GAN)
    c_model, _, _ = train_gan(corpus, GanConfig(**{**GAN.to_dict(), "noise": GAN.noise, "seed": 3}))
    return s_model, c_model


def test_scores_match_oracle(corpus):
    model = build_fcn(SegmenterConfig(depth=2, base_channels=4, seed=1), (16, 16))
    scores = score_per_image(model, corpus)
    assert list(scores) == corpus.ids
    for s in corpus:
        ref = brute_force_metrics(predict_mask(model, s.image), s.mask)["dice"]
        assert abs(scores[s.id] - ref) <= 1e-12


def test_empty_prediction_and_label_scores_one():
    # empty prediction on an empty label is a perfect score under the empty-denominator rule
    z = np.zeros((4, 4), np.uint8)
    assert metric_scores(confusion(z, z))["dice"] == 1.0


def test_partition_example():
    p = partition_by_median({"a": 0.9, "b": 0.8, "c": 0.5, "d": 0.3})
    assert p.simple_ids == ["a", "b"] and p.complex_ids == ["c", "d"]


def test_partition_odd_gives_extra_to_simple():
    p = partition_by_median({k: v for k, v in zip("abcde", [0.1, 0.5, 0.3, 0.9, 0.7])})
    assert p.simple_ids == ["d", "e", "b"] and p.complex_ids == ["c", "a"]


def test_partition_ties_ordered_by_id():
    p = partition_by_median({"z": 0.5, "y": 0.5, "x": 0.5, "w": 0.5})
    assert p.simple_ids == ["w", "x"] and p.complex_ids == ["y", "z"]
    assert partition_by_median({"z": 0.5, "y": 0.5, "x": 0.5, "w": 0.5}) == p


def test_partition_needs_two():
    with pytest.raises(ValueError):
        partition_by_median({"a": 1.0})


score_maps = st.dictionaries(st.text("abcdef0123", min_size=1, max_size=6),
                             st.floats(0, 1), min_size=2, max_size=500)


@settings(max_examples=150, deadline=None)
@given(score_maps)
def test_partition_invariants(scores):
    p = partition_by_median(scores)
    simple, hard = set(p.simple_ids), set(p.complex_ids)
    assert not simple & hard and simple | hard == set(scores)
    assert len(simple) - len(hard) in (0, 1)
    assert len(simple) == math.ceil(len(scores) / 2)
    assert min(scores[i] for i in simple) >= max(scores[i] for i in hard)
    assert partition_by_median(dict(reversed(list(scores.items())))) == p


def test_partition_text_roundtrip(tmp_path):
    p = partition_by_median({"a": 0.25, "b": 0.75, "c": 0.5})
    p.save(tmp_path / "p.txt")
    assert (tmp_path / "p.txt").read_text().splitlines()[0] == "b 0.750000 S"
    back = DifficultyPartition.load(tmp_path / "p.txt")
    assert back == p and back.label("a") == "C"
    (tmp_path / "bad.txt").write_text("a 0.1 X\n")
    with pytest.raises(ValueError, match=":1:"):
        DifficultyPartition.load(tmp_path / "bad.txt")


def test_cross_synthesis_contract(corpus, generators):
    s_model, c_model = generators
    part = partition_by_median({s.id: i / 10 for i, s in enumerate(corpus)})
    syn_s, syn_c = cross_synthesize(part, corpus, s_model, c_model, seed=4)
    assert len(syn_s) == len(part.complex_ids) and len(syn_c) == len(part.simple_ids)
    assert len(syn_s) + len(syn_c) == len(corpus)
    real = corpus.by_id()
    for out, src_ids, suffix, origin in ((syn_c, part.simple_ids, "synC", "synthetic-complex"),
                                         (syn_s, part.complex_ids, "synS", "synthetic-simple")):
        assert out.ids == [f"{i}.{suffix}" for i in src_ids]
        for sid, sample in zip(src_ids, out):
            assert sample.mask.tobytes() == real[sid].mask.tobytes()
            assert sample.origin == origin
    all_ids = set(corpus.ids) | set(syn_s.ids) | set(syn_c.ids)
    assert len(all_ids) == 2 * len(corpus)
    again = cross_synthesize(part, corpus, s_model, c_model, seed=4)
    assert [s.image.tobytes() for s in again[0]] == [s.image.tobytes() for s in syn_s]


def test_cross_synthesis_errors(corpus, generators):
    s_model, c_model = generators
    part = partition_by_median({s.id: 0.5 for s in corpus})
    with pytest.raises(ValueError, match="not been trained"):
        cross_synthesize(part, corpus, build_generator(GAN), c_model, seed=0)
    with pytest.raises(ValueError, match="differ"):
        cross_synthesize(part, corpus.subset(corpus.ids[:5]), s_model, c_model, seed=0)
