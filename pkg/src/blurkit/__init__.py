"""Blur-detection toolkit: a multi-scale dilated U-shaped segmentation
network, its training recipe, threshold-sweep evaluation metrics, and the
kernel-geometry oracles used to verify it."""

from .dilation import Kernel2D, dilation_factor, dilated_size, expand_kernel, conv2d_reference
from .model import (ModelConfig, MultiScaleDilatedUNet, VARIANTS, build_model,
                    init_parameters, parameter_count, parameter_breakdown, tiny_config)
from .data import (BlurSample, DatasetSplit, load_dataset, split_cuhk, augment,
                   preprocess, preprocess_many, resize_mask_nearest, write_manifest)
from .train import (TrainSchedule, TrainLog, EpochRecord, lr_at_epoch,
                    cross_entropy_loss, pixel_accuracy, sgd_step, train,
                    grad_check, run_grad_check, min_relu_preactivation)
from .checkpoint import save_checkpoint, load_checkpoint
from .metrics import (BlurMap, EvalReport, PerImageResult, threshold_segment,
                      precision_recall, f_measure, mae, evaluate, evaluate_maps,
                      predict_map, export_report, save_map_png, quantize)
from .config import RunConfig
from .errors import ConfigError, ShapeError

__version__ = "0.1.0"
