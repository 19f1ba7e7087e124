"""Iris segmentation by fusing predictions from every dense block of a DenseNet."""
from .augment import AugmentConfig, contrast_normalize, expand_dataset, horizontal_flip
from .data import Sample, SynthConfig, load_manifest, resize_to_model, split_by_subject, synthesize_sample
from .evaluation import ScoreSet, SegScore, gar_at_far, nice1_error, roc_points, write_report
from .infer import binarize, confidence_bands, postprocess, predict_mask, resize_mask_nearest
from .model import BackboneConfig, SegDenseNet, build_model, fuse, load_checkpoint, save_checkpoint
from .train import TrainConfig, pixel_loss, run_training, train_epoch

__version__ = "0.1.0"
