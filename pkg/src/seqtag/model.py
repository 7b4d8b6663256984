"""End-to-end tagger: embeddings -> encoder -> per-label scores -> CRF.

Per token, the pretrained (or randomly initialized) word vector is
concatenated with the character feature, projected to the encoder width, run
through the encoder stack, and mapped to one score per label. The CRF layer
turns those emission rows plus learned transition scores into sequence
log-likelihoods for training and Viterbi paths for prediction. Sentences in
a batch are padded to a common length; the padding mask excludes padded
positions from attention and truncates them before the CRF.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .chars import CharEncoderConfig, build_char_encoder
from .crf import CrfLayer
from .data import (PAD_INDEX, EmbeddingMatrix, LabeledSentence, Vocabulary,
                   digit_normalize)
from .encoder import EncoderConfig, Linear, TransformerEncoder
from .errors import ConfigError, ContractError
from .tensor import Tensor, concat, dropout, embedding_lookup, reshape


def derive_seed(base_seed: int, label: str) -> int:
    """Stable per-component seed: low 4 bytes of sha256 over 'base:label'."""
    digest = hashlib.sha256(f"{base_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


class SequenceTagger:
    """A trainable tagging model over fixed word/char vocabularies and labels."""

    def __init__(self, word_vocab: Vocabulary, char_vocab: Vocabulary,
                 labels: list[str], encoder_config: EncoderConfig,
                 char_config: CharEncoderConfig,
                 embeddings: EmbeddingMatrix | None = None,
                 word_dim: int = 50, fc_dropout: float = 0.4, seed: int = 1):
        if not labels or labels[0] != "O" or len(set(labels)) != len(labels):
            raise ConfigError("labels must be unique and start with 'O'")
        if not 0.0 <= fc_dropout < 1.0:
            raise ConfigError(f"fc_dropout must be in [0, 1), got {fc_dropout}")
        self.word_vocab = word_vocab
        self.char_vocab = char_vocab
        self.labels = list(labels)
        self.label_index = {lab: i for i, lab in enumerate(self.labels)}
        self.encoder_config = encoder_config
        self.char_config = char_config
        self.fc_dropout = fc_dropout
        self.seed = seed
        self.training = False

        init_rng = np.random.default_rng(derive_seed(seed, "init"))
        self._dropout_rng = np.random.default_rng(derive_seed(seed, "dropout"))

        if embeddings is not None:
            if embeddings.matrix.shape[0] != len(word_vocab):
                raise ConfigError(
                    f"embedding rows {embeddings.matrix.shape[0]} do not match "
                    f"vocabulary size {len(word_vocab)}")
            self.word_dim = embeddings.dim
            self.finetune_embeddings = embeddings.finetune
            self.word_emb = Tensor(embeddings.matrix.copy(),
                                   requires_grad=embeddings.finetune)
        else:
            self.word_dim = word_dim
            self.finetune_embeddings = True
            matrix = init_rng.uniform(-0.1, 0.1, size=(len(word_vocab), word_dim))
            matrix[PAD_INDEX] = 0.0
            self.word_emb = Tensor(matrix, requires_grad=True)

        self.char_encoder = build_char_encoder(char_config, len(char_vocab), init_rng)
        in_dim = self.word_dim + char_config.feature_dim
        self.input_proj = Linear(in_dim, encoder_config.d_model, init_rng, bias=True)
        self.encoder = TransformerEncoder(encoder_config, init_rng)
        self.fc = Linear(encoder_config.d_model, len(self.labels), init_rng, bias=True)
        self.crf = CrfLayer(self.labels, init_rng)

    # -- modes ------------------------------------------------------------

    def train_mode(self, flag: bool = True) -> None:
        self.training = flag

    def reseed_dropout(self, seed: int) -> None:
        self._dropout_rng = np.random.default_rng(derive_seed(seed, "dropout"))

    # -- forward ----------------------------------------------------------

    def word_ids(self, tokens: list[str]) -> np.ndarray:
        return np.array([self.word_vocab.index(digit_normalize(t)) for t in tokens],
                        dtype=np.int64)

    def char_ids(self, tokens: list[str]) -> list[np.ndarray]:
        max_len = self.char_config.max_word_len
        return [np.array([self.char_vocab.index(c)
                          for c in digit_normalize(t)[:max_len]], dtype=np.int64)
                for t in tokens]

    def _sentence_inputs(self, sentence: LabeledSentence):
        ids = self.word_ids(sentence.tokens)
        chars = sentence.char_ids if sentence.char_ids else self.char_ids(sentence.tokens)
        return ids, chars

    def emissions(self, sentence: LabeledSentence, pad_to: int | None = None,
                  score_sink: list | None = None):
        """Per-label scores for each position; returns (emissions, mask)."""
        ids, chars = self._sentence_inputs(sentence)
        n_true = ids.size
        n = max(pad_to or n_true, n_true)
        if n > n_true:
            ids = np.concatenate([ids, np.full(n - n_true, PAD_INDEX, dtype=np.int64)])
        mask = np.zeros(n, dtype=bool)
        mask[:n_true] = True

        x = embedding_lookup(self.word_emb, ids)
        if self.char_encoder is not None:
            feat_dim = self.char_encoder.feature_dim
            rows = [reshape(self.char_encoder(chars[i], self.training,
                                              self._dropout_rng), (1, feat_dim))
                    for i in range(n_true)]
            if n > n_true:
                rows.append(Tensor(np.zeros((n - n_true, feat_dim))))
            x = concat([x, concat(rows, axis=0)], axis=1)
        h = self.input_proj(x)
        encoded = self.encoder(h, mask, self.training, self._dropout_rng, score_sink)
        encoded = dropout(encoded, self.fc_dropout, self._dropout_rng, self.training)
        return self.fc(encoded), mask

    def tag_indices(self, sentence: LabeledSentence) -> list[int]:
        try:
            return [self.label_index[lab] for lab in sentence.labels]
        except KeyError as exc:
            raise ContractError(f"label {exc.args[0]!r} not in the model's label set") \
                from None

    def sentence_loss(self, sentence: LabeledSentence,
                      pad_to: int | None = None) -> Tensor:
        """Negative log-likelihood of the gold path."""
        em, mask = self.emissions(sentence, pad_to)
        return self.crf.neg_log_likelihood(em, self.tag_indices(sentence), mask)

    def predict(self, sentence: LabeledSentence, constrained: bool = True) -> list[str]:
        was_training = self.training
        self.training = False
        try:
            em, mask = self.emissions(sentence)
        finally:
            self.training = was_training
        path, _ = self.crf.decode(em.data, mask, constrained)
        return [self.labels[i] for i in path]

    def word_representation(self, word_text: str) -> np.ndarray:
        """Concatenated word vector and char feature for a single word."""
        token = digit_normalize(word_text)
        vec = self.word_emb.data[self.word_vocab.index(token)]
        if self.char_encoder is None:
            return vec.copy()
        ids = np.array([self.char_vocab.index(c)
                        for c in token[:self.char_config.max_word_len]],
                       dtype=np.int64)
        feat = self.char_encoder(ids, training=False).data
        return np.concatenate([vec, feat])

    # -- parameter registry ------------------------------------------------

    def named_tensors(self):
        """Every model tensor, trainable or not, under a stable name."""
        out = [("word_emb", self.word_emb)]
        if self.char_encoder is not None:
            out += [(f"char.{n}", t) for n, t in self.char_encoder.parameters()]
        out += [(f"proj.{n}", t) for n, t in self.input_proj.parameters()]
        out += [(f"enc.{n}", t) for n, t in self.encoder.parameters()]
        out += [(f"fc.{n}", t) for n, t in self.fc.parameters()]
        out += [(f"crf.{n}", t) for n, t in self.crf.parameters()]
        return out

    def parameters(self):
        """Trainable tensors only."""
        return [(n, t) for n, t in self.named_tensors() if t.requires_grad]
