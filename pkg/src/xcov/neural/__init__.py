"""Two-stream neural singular-value cleaner."""
from .model import ModelFormatError, NeuralModel, load_model, save_model
from .network import (
    Architecture,
    NetworkError,
    backward,
    count_parameters,
    forward,
    init_params,
    loss,
    loss_and_grad,
)
from .optim import AdamState, adam_step
from .tokens import Batch, TokenSequence, build_tokens, make_batch, tokens_from_triplet
from .training import SyntheticSampler, TrainConfig, TrainingError, train

__all__ = [
    "AdamState",
    "Architecture",
    "Batch",
    "ModelFormatError",
    "NetworkError",
    "NeuralModel",
    "SyntheticSampler",
    "TokenSequence",
    "TrainConfig",
    "TrainingError",
    "adam_step",
    "backward",
    "build_tokens",
    "count_parameters",
    "forward",
    "init_params",
    "load_model",
    "loss",
    "loss_and_grad",
    "make_batch",
    "save_model",
    "tokens_from_triplet",
    "train",
]
