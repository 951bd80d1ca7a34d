"""claret: a self-contained micro deep-learning library for block-based CNN
classification of retinal OCT scans, with its own NHWC tensor kernels,
tape-based reverse-mode autodiff, gradient checking, training loop, Netpbm
dataset ingestion and bit-exact checkpointing.
"""

from . import errors
from .autodiff import Tape, backward, grad_check
from .checkpoint import import_backbone, load_checkpoint, save_checkpoint
from .checks import run_gradcheck
from .data import (
    Dataset,
    Image,
    adapt_channels,
    load_dataset,
    read_image,
    resize_nearest,
    save_dataset_tree,
    synth_dataset,
    write_image,
)
from .kernels import (
    conv2d_same,
    matmul,
    maxpool2,
    relu,
    softmax_rows,
    tensor_create,
)
from .model import (
    ClaRetConfig,
    Model,
    build_claret,
    build_vgg19_features,
    conv_filter_schedule,
    dense_unit_schedule,
    dropout,
    freeze_backbone,
    micro_config,
    predict,
    record_forward,
)
from .params import ParamSet
from .rng import RandomStream, derive_seed
from .training import (
    EpochRecord,
    Metrics,
    TrainConfig,
    cross_entropy,
    evaluate,
    metrics_from_confusion,
    records_to_csv,
    sgd_momentum_step,
    split_dataset,
    train,
)

__version__ = "0.1.0"
