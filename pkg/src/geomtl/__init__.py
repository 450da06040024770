"""Desk-scale multi-task learning testbed.

A numpy-only reverse-mode autodiff engine, a multi-stream convolutional
encoder-decoder for segmentation, depth, and motion, six loss-combination
strategies centered on geometric-mean aggregation, a seeded synthetic
scene generator, and a deterministic training harness with a CLI.
"""

from .combiners import (
    COMBINER_NAMES,
    CombinerState,
    combine_dwa,
    combine_equal,
    combine_fls,
    combine_gls,
    combine_uncertainty,
    combine_weighted,
    dwa_weights,
    make_combiner,
    update_state,
)
from .data import (
    DataFormatError,
    FramePairSample,
    PlacementError,
    SceneSpec,
    generate_dataset,
    generate_sample,
    load_dataset,
    split,
    write_dataset,
)
from .losses import (
    HuberParams,
    LabelError,
    cross_entropy,
    huber,
    pixel_accuracy,
    regression_accuracy,
)
from .model import (
    AGGREGATIONS,
    TASKS,
    CheckpointError,
    EncoderConfig,
    MultiStreamModel,
    ParamCountReport,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import (
    GraphError,
    NonFiniteError,
    ShapeError,
    Tensor,
    backward,
    no_grad,
)
from .training import (
    AdamState,
    ExperimentConfig,
    MetricsRecord,
    NumericAbort,
    adam_step,
    evaluate,
    sgd_step,
    train,
    write_metrics_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AGGREGATIONS",
    "AdamState",
    "COMBINER_NAMES",
    "CheckpointError",
    "CombinerState",
    "DataFormatError",
    "EncoderConfig",
    "ExperimentConfig",
    "FramePairSample",
    "GraphError",
    "HuberParams",
    "LabelError",
    "MetricsRecord",
    "MultiStreamModel",
    "NonFiniteError",
    "NumericAbort",
    "ParamCountReport",
    "PlacementError",
    "SceneSpec",
    "ShapeError",
    "TASKS",
    "Tensor",
    "adam_step",
    "backward",
    "build_model",
    "combine_dwa",
    "combine_equal",
    "combine_fls",
    "combine_gls",
    "combine_uncertainty",
    "combine_weighted",
    "cross_entropy",
    "dwa_weights",
    "evaluate",
    "generate_dataset",
    "generate_sample",
    "huber",
    "load_checkpoint",
    "load_dataset",
    "make_combiner",
    "no_grad",
    "pixel_accuracy",
    "regression_accuracy",
    "save_checkpoint",
    "sgd_step",
    "split",
    "train",
    "update_state",
    "write_dataset",
    "write_metrics_csv",
]
