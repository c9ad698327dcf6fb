"""Transformer world agent: architecture, streaming state, training and sampling."""

from .config import ConfigError, ModelConfig, SampleParams
from .sampling import SamplingError, generate_message, nucleus_distribution, sample_token
from .training import (
    TrainConfig,
    TrainingError,
    TrainResult,
    batch_windows,
    load_checkpoint,
    loss,
    read_checkpoint_header,
    save_checkpoint,
    streaming_loss,
    train,
    unigram_entropy,
    window_loss,
    write_loss_csv,
)
from .transformer import MessageTransformer, RMSNorm, StreamState, param_count, rmsnorm, rope

__all__ = [
    "ConfigError",
    "ModelConfig",
    "SampleParams",
    "SamplingError",
    "generate_message",
    "nucleus_distribution",
    "sample_token",
    "TrainConfig",
    "TrainingError",
    "TrainResult",
    "batch_windows",
    "load_checkpoint",
    "loss",
    "read_checkpoint_header",
    "save_checkpoint",
    "streaming_loss",
    "train",
    "unigram_entropy",
    "window_loss",
    "write_loss_csv",
    "MessageTransformer",
    "RMSNorm",
    "StreamState",
    "param_count",
    "rmsnorm",
    "rope",
]
