"""Desk-scale contrastive representation learning with a smoothed,
top-k-weighted InfoNCE variant.

The package trains small MLP encoder pairs with a momentum-updated key
encoder and a FIFO negative queue, supports soft target distributions
over the hardest negatives, and ships its own gradcheck, synthetic data
generator, and evaluation probes.  Kernels run through numba when it is
available (SOFTNCE_BACKEND=numpy forces the fallback).
"""

__version__ = "0.1.0"

from .backend import active_backend, set_backend
from .checkpoint import CheckpointData, load_checkpoint, save_checkpoint
from .config import RunConfig, from_yaml, load_config, to_yaml
from .data import (
    LabeledDataset,
    SynthConfig,
    load_cifar10,
    load_dataset,
    make_view_batch,
    make_views,
    save_dataset,
    synth_generate,
)
from .errors import (
    ConfigError,
    DataError,
    NumericFailure,
    SoftNCEError,
)
from .evaluation import ProbeConfig, knn_classify, linear_probe
from .gradcheck import GradcheckReport, run_gradcheck
from .losses import (
    SmoothingConfig,
    SmoothWeights,
    alpha_at,
    beta_weights,
    embedding_loss,
    info_nce,
    pattern_betas,
    soft_nce,
    symmetric_pair_loss,
)
from .membank import NegativeQueue, all_similarities, enqueue, top_k_similar
from .metrics import MetricsLogger, iter_records
from .model import (
    EncoderPair,
    Network,
    build_network,
    build_pair,
    ema_update,
    forward,
    momentum_at,
    params,
)
from .optim import TrainPlan, TrainState, init_state, lr_at, sgd_step, train_step
from .run import build_dataset, embed_features, evaluate, pretrain, sweep
from .tensorcore import (
    Matrix,
    Rng,
    cosine_sim_matrix,
    l2_normalize,
    l2_normalize_rows,
    softmax_temp,
)

__all__ = [
    "__version__",
    "active_backend", "set_backend",
    "CheckpointData", "load_checkpoint", "save_checkpoint",
    "RunConfig", "from_yaml", "load_config", "to_yaml",
    "LabeledDataset", "SynthConfig", "load_cifar10", "load_dataset",
    "make_view_batch", "make_views", "save_dataset", "synth_generate",
    "ConfigError", "DataError", "NumericFailure", "SoftNCEError",
    "ProbeConfig", "knn_classify", "linear_probe",
    "GradcheckReport", "run_gradcheck",
    "SmoothingConfig", "SmoothWeights", "alpha_at", "beta_weights",
    "embedding_loss", "info_nce", "pattern_betas", "soft_nce",
    "symmetric_pair_loss",
    "NegativeQueue", "all_similarities", "enqueue", "top_k_similar",
    "MetricsLogger", "iter_records",
    "EncoderPair", "Network", "build_network", "build_pair", "ema_update",
    "forward", "momentum_at", "params",
    "TrainPlan", "TrainState", "init_state", "lr_at", "sgd_step", "train_step",
    "build_dataset", "embed_features", "evaluate", "pretrain", "sweep",
    "Matrix", "Rng", "cosine_sim_matrix", "l2_normalize",
    "l2_normalize_rows", "softmax_temp",
]
