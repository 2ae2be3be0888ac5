"""Adversarial-learning data augmentation for lesion segmentation."""

from .data import DatasetManifest, ImageSample, gen_synthetic_corpus, load_manifest
from .metrics import MetricsReport, evaluate_dataset
from .segmenter import SegmenterConfig, build_fcn, train_fcn
from .adversary import GanConfig, NoiseSpec, build_generator, train_gan
from .stratify import DifficultyPartition, cross_synthesize, partition_by_median
from .pipeline import run_full_pipeline

__version__ = "0.1.0"
