"""Character-level LSTM language models and generative knowledge transfer."""

from .clm import ModelParams, ModelSpec, ModelState
from .corpus import VOCAB, VOCAB_SIZE, Vocab
from .gkt import GktConfig, TransferReport, run_sdgkt, run_tdgkt
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "ModelSpec",
    "ModelState",
    "VOCAB",
    "VOCAB_SIZE",
    "Vocab",
    "GktConfig",
    "TransferReport",
    "run_sdgkt",
    "run_tdgkt",
    "TrainConfig",
    "train",
    "__version__",
]
