"""RELECTRA: ELECTRA-style pretraining with Reformer (LSH attention) encoders, in numpy."""

from .tensor import Tensor, backward, check_gradients
from .reformer import ReformerConfig, AttentionInstrumentation, lsh_attention, full_attention, reformer_forward
from .electra import ElectraConfig, TrainSchedule, RelectraModel, lr_at
from .tokenizer import Vocab, train_bpe, encode, decode

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "check_gradients",
    "ReformerConfig", "AttentionInstrumentation", "lsh_attention", "full_attention", "reformer_forward",
    "ElectraConfig", "TrainSchedule", "RelectraModel", "lr_at",
    "Vocab", "train_bpe", "encode", "decode",
]
