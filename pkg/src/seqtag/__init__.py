"""Sequence labeling with a direction-aware relative-attention encoder and a CRF."""

from .chars import CharEncoderConfig, build_char_encoder, count_parameters
from .crf import CrfLayer, log_likelihood, log_partition, score_sequence, viterbi_decode
from .data import (LabeledSentence, Vocabulary, digit_normalize, load_embeddings,
                   read_column_file, span_f1, to_bioes)
from .encoder import EncoderConfig, TransformerEncoder, attention_apply
from .errors import (CheckpointError, ConfigError, ContractError, ParseError,
                     SeqtagError, ShapeError, TrainingError)
from .model import SequenceTagger, derive_seed
from .positional import (RelativeTable, SinusoidalTable, pe_dot_curve,
                         pe_projected_dot_curve, relative_encoding, sinusoidal_pe)
from .tensor import Tensor, backward, grad_check
from .training import (Checkpoint, SgdMomentum, TrainConfig, evaluate,
                       load_checkpoint, model_from_checkpoint, save_checkpoint,
                       train, triangular_lr)

__version__ = "0.1.0"
