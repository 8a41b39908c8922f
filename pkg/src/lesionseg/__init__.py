"""Lesion segmentation with a gated context cascade and position affinity.

The package is a self-contained numpy implementation: a small reverse-mode
autodiff core over rank-4 tensors, the network blocks built on it, synthetic
data tooling, evaluation metrics, and a command line front end.
"""
from .errors import (CheckpointError, ConfigError, IngestionError,
                     ManifestError, ShapeError, StateError, TrainingDiverged)
from .tensor import (Tensor, backward, bilinear_resize, clamp, concat_channels,
                     conv2d, ew_add, ew_mul, global_avg_pool, log, pos_gram,
                     pos_mix, relu, sigmoid, softmax_rows, sum_all,
                     sum_spatial)
from .config import ModelConfig
from .network import SegmentationNetwork, ForwardResult
from .losses import weighted_bce, dice_loss, joint_loss
from .optim import PolySGD
from .checkpoint import save_checkpoint, load_checkpoint, load_model
from .data import (SegSample, generate, emit_dataset, load_manifest,
                   AugmentSpec, augment, resize_sample, to_batch)
from .metrics import (Confusion, confusion, compute_metrics, evaluate_pair,
                      aggregate, MetricsReport)
from .train import train

__version__ = "0.1.0"
