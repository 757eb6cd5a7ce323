"""lesionforge: a from-scratch CNN training engine for binary lesion images."""

from .data import AugmentParams, Batch, Dataset, augment, iter_batches, load_dataset, \
    resize, synth_dataset, train_val_split
from .gradcam import Heatmap, grad_cam, overlay
from .layers import Model
from .metrics import ConfusionMatrix, MetricsReport, comparison_table, confusion, report
from .optim import Adam, EarlyStopping, ReduceLROnPlateau, categorical_crossentropy
from .tensor import (Tensor, col2im, default_dtype, im2col, matmul,
                     set_default_dtype, tensor_new)
from .trainer import (TrainConfig, TrainHistory, build_lesionnet, evaluate,
                      load_checkpoint, save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AugmentParams", "Batch", "ConfusionMatrix", "Dataset", "EarlyStopping",
    "Heatmap", "MetricsReport", "Model", "ReduceLROnPlateau", "Tensor", "TrainConfig",
    "TrainHistory", "augment", "build_lesionnet", "categorical_crossentropy", "col2im",
    "comparison_table", "confusion", "default_dtype", "evaluate", "grad_cam", "im2col",
    "iter_batches", "load_checkpoint", "load_dataset", "matmul", "overlay", "report",
    "resize", "save_checkpoint", "set_default_dtype", "synth_dataset", "tensor_new",
    "train", "train_val_split",
]
