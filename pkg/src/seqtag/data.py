"""Corpus ingestion, tag-schema conversion, vocabularies, embeddings, span F1.

Corpora are whitespace-separated column files: one token per line, blank
lines delimit sentences, ``-DOCSTART-`` lines are skipped. Labels use the
BIOES schema; a BIO corpus is converted on load. All digits are normalized
to '0' before any vocabulary or embedding lookup.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParseError

PAD = "<pad>"
UNK = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

_DIGITS = re.compile(r"\d")
_LABEL = re.compile(r"^(O|[BIES]-\S+)$")


def digit_normalize(token: str) -> str:
    """Replace every Unicode decimal digit with the character '0'."""
    return _DIGITS.sub("0", token)


@dataclass
class LabeledSentence:
    """Tokens with aligned gold labels; char_ids filled in after vocab build."""

    tokens: list[str]
    labels: list[str]
    char_ids: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.tokens) != len(self.labels) or not self.tokens:
            raise ContractError(
                f"sentence needs equal, non-zero token/label counts, got "
                f"{len(self.tokens)}/{len(self.labels)}")

    def __len__(self) -> int:
        return len(self.tokens)


def read_column_file(path: str, token_col: int = 0, label_col: int = -1):
    """Parse a column-format corpus into LabeledSentence objects."""
    sentences: list[LabeledSentence] = []
    tokens: list[str] = []
    labels: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                if tokens:
                    sentences.append(LabeledSentence(tokens, labels))
                    tokens, labels = [], []
                continue
            cols = line.split()
            if cols[0] == "-DOCSTART-":
                continue
            try:
                token = cols[token_col]
                label = cols[label_col]
            except IndexError:
                raise ParseError(
                    f"{path}:{lineno}: line has {len(cols)} columns, "
                    f"need token column {token_col} and label column {label_col}") from None
            tokens.append(token)
            labels.append(label)
    if tokens:
        sentences.append(LabeledSentence(tokens, labels))
    return sentences


def write_column_file(path: str, sentences) -> None:
    """Canonical two-column output: ``token<space>label``, blank line between sentences."""
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            for token, label in zip(sent.tokens, sent.labels):
                fh.write(f"{token} {label}\n")
            fh.write("\n")


def _validate_labels(labels, where: str = "") -> None:
    for lab in labels:
        if not _LABEL.match(lab):
            raise ParseError(f"malformed label {lab!r}{where}")


def to_bioes(labels, repairs: list | None = None) -> list[str]:
    """Convert BIO labels to BIOES; BIOES input is validated and returned as-is.

    An orphan I-X (no preceding B-X/I-X of the same type) is repaired to open
    a new span; each repair is appended to ``repairs`` as (position, label).
    """
    labels = list(labels)
    _validate_labels(labels)
    if any(lab[0] in ("E", "S") for lab in labels if lab != "O"):
        return labels

    fixed = list(labels)
    for i, lab in enumerate(fixed):
        if lab.startswith("I-"):
            prev = fixed[i - 1] if i > 0 else "O"
            if prev == "O" or prev[2:] != lab[2:]:
                fixed[i] = "B-" + lab[2:]
                if repairs is not None:
                    repairs.append((i, lab))

    out = list(fixed)
    n = len(out)
    for i, lab in enumerate(out):
        if lab == "O":
            continue
        nxt = fixed[i + 1] if i + 1 < n else "O"
        continues = nxt.startswith("I-") and nxt[2:] == lab[2:]
        if lab.startswith("B-"):
            if not continues:
                out[i] = "S-" + lab[2:]
        elif lab.startswith("I-"):
            if not continues:
                out[i] = "E-" + lab[2:]
    return out


def bioes_spans(labels) -> set[tuple[int, int, str]]:
    """Extract (start, end, type) spans; end is inclusive.

    Only well-formed spans count: S-X alone, or B-X (I-X)* E-X with one
    type throughout. Fragments that never close are dropped.
    """
    spans: set[tuple[int, int, str]] = set()
    start = None
    etype = None
    for i, lab in enumerate(labels):
        prefix = lab[0]
        t = lab[2:] if lab != "O" else ""
        if prefix == "S":
            spans.add((i, i, t))
            start, etype = None, None
        elif prefix == "B":
            start, etype = i, t
        elif prefix == "I":
            if start is None or t != etype:
                start, etype = None, None
        elif prefix == "E":
            if start is not None and t == etype:
                spans.add((start, i, t))
            start, etype = None, None
        else:  # O
            start, etype = None, None
    return spans


@dataclass
class PrfScores:
    precision: float
    recall: float
    f1: float
    n_gold: int = 0
    n_pred: int = 0
    n_correct: int = 0

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def _prf(n_correct: int, n_pred: int, n_gold: int) -> PrfScores:
    p = n_correct / n_pred if n_pred else 0.0
    r = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return PrfScores(p, r, f1, n_gold, n_pred, n_correct)


def span_f1(pred, gold) -> PrfScores:
    """Exact-match span F1 over aligned BIOES sequences."""
    if len(pred) != len(gold):
        raise ContractError(f"span_f1: {len(pred)} predictions vs {len(gold)} references")
    n_correct = n_pred = n_gold = 0
    for p_labels, g_labels in zip(pred, gold):
        if len(p_labels) != len(g_labels):
            raise ContractError(
                f"span_f1: sequence lengths differ ({len(p_labels)} vs {len(g_labels)})")
        p_spans = bioes_spans(p_labels)
        g_spans = bioes_spans(g_labels)
        n_correct += len(p_spans & g_spans)
        n_pred += len(p_spans)
        n_gold += len(g_spans)
    return _prf(n_correct, n_pred, n_gold)


def span_f1_per_type(pred, gold) -> dict[str, PrfScores]:
    """Per-entity-type breakdown of exact-match span F1."""
    if len(pred) != len(gold):
        raise ContractError(f"span_f1: {len(pred)} predictions vs {len(gold)} references")
    correct: Counter = Counter()
    predicted: Counter = Counter()
    golden: Counter = Counter()
    for p_labels, g_labels in zip(pred, gold):
        p_spans = bioes_spans(p_labels)
        g_spans = bioes_spans(g_labels)
        for span in p_spans & g_spans:
            correct[span[2]] += 1
        for span in p_spans:
            predicted[span[2]] += 1
        for span in g_spans:
            golden[span[2]] += 1
    return {t: _prf(correct[t], predicted[t], golden[t])
            for t in sorted(set(predicted) | set(golden))}


class Vocabulary:
    """Bidirectional token<->index map with reserved pad/unknown entries."""

    def __init__(self, tokens_with_counts: dict[str, int] | None = None):
        self._index = {PAD: PAD_INDEX, UNK: UNK_INDEX}
        self._tokens = [PAD, UNK]
        self.counts: Counter = Counter()
        if tokens_with_counts:
            for token, count in tokens_with_counts.items():
                self.add(token, count)

    @classmethod
    def from_sentences(cls, sentences, min_count: int = 1,
                       normalize_digits: bool = True) -> "Vocabulary":
        counts: Counter = Counter()
        for sent in sentences:
            for token in sent.tokens:
                counts[digit_normalize(token) if normalize_digits else token] += 1
        vocab = cls()
        for token, count in sorted(counts.items()):
            if count >= min_count:
                vocab.add(token, count)
        return vocab

    @classmethod
    def chars_from_sentences(cls, sentences) -> "Vocabulary":
        counts: Counter = Counter()
        for sent in sentences:
            for token in sent.tokens:
                counts.update(digit_normalize(token))
        vocab = cls()
        for ch, count in sorted(counts.items()):
            vocab.add(ch, count)
        return vocab

    def add(self, token: str, count: int = 1) -> int:
        if token not in self._index:
            self._index[token] = len(self._tokens)
            self._tokens.append(token)
        self.counts[token] += count
        return self._index[token]

    def index(self, token: str) -> int:
        return self._index.get(token, UNK_INDEX)

    def token(self, index: int) -> str:
        return self._tokens[index]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def non_reserved(self) -> list[str]:
        return self._tokens[2:]


@dataclass
class EmbeddingMatrix:
    """Vocabulary-aligned embedding rows plus load-coverage statistics."""

    matrix: np.ndarray
    dim: int
    finetune: bool = True
    stats: dict = field(default_factory=dict)


def load_embeddings(path: str, vocab: Vocabulary, dim: int,
                    seed: int = 0) -> EmbeddingMatrix:
    """Load pretrained text-format vectors for a vocabulary.

    One ``token v1 .. vdim`` line per word; an optional leading ``count dim``
    header is detected and skipped. Lookup is exact-match first, then
    lowercase; uncovered tokens get uniform(-0.1, 0.1) rows. The pad row
    stays zero.
    """
    wanted = set(vocab.non_reserved())
    wanted_lower: dict[str, list[str]] = {}
    for token in wanted:
        wanted_lower.setdefault(token.lower(), []).append(token)

    exact: dict[str, np.ndarray] = {}
    lower: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(
                    p.lstrip("-").isdigit() for p in parts):
                continue  # "count dim" header
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ParseError(
                    f"{path}:{lineno}: expected {dim} values for {token!r}, "
                    f"got {len(values)}")
            if token in wanted and token not in exact:
                exact[token] = np.array(values, dtype=np.float64)
            elif token in wanted_lower and token not in lower:
                lower[token] = np.array(values, dtype=np.float64)

    rng = np.random.default_rng(seed)
    matrix = np.zeros((len(vocab), dim), dtype=np.float64)
    matrix[UNK_INDEX] = rng.uniform(-0.1, 0.1, size=dim)
    n_exact = n_lower = n_missing = 0
    for token in vocab.non_reserved():
        row = vocab.index(token)
        if token in exact:
            matrix[row] = exact[token]
            n_exact += 1
        elif token.lower() in lower:
            matrix[row] = lower[token.lower()]
            n_lower += 1
        else:
            matrix[row] = rng.uniform(-0.1, 0.1, size=dim)
            n_missing += 1
    stats = {"exact": n_exact, "lowercase": n_lower, "missing": n_missing,
             "vocab": len(vocab) - 2}
    return EmbeddingMatrix(matrix, dim, finetune=True, stats=stats)


def random_embeddings(vocab: Vocabulary, dim: int, seed: int = 0) -> EmbeddingMatrix:
    """Uniform(-0.1, 0.1) rows for every non-pad entry; used when no file is given."""
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    matrix[PAD_INDEX] = 0.0
    return EmbeddingMatrix(matrix, dim, finetune=True,
                           stats={"exact": 0, "lowercase": 0,
                                  "missing": len(vocab) - 2, "vocab": len(vocab) - 2})


def prepare_corpus(sentences, char_vocab: Vocabulary,
                   max_word_len: int = 32, repairs: list | None = None):
    """Normalize digits, convert labels to BIOES, attach char index arrays."""
    prepared = []
    for sent in sentences:
        tokens = [digit_normalize(t) for t in sent.tokens]
        labels = to_bioes(sent.labels, repairs)
        char_ids = [np.array([char_vocab.index(c) for c in tok[:max_word_len]],
                             dtype=np.int64)
                    for tok in tokens]
        prepared.append(LabeledSentence(tokens, labels, char_ids))
    return prepared


def label_inventory(sentences) -> list[str]:
    """Sorted list of all BIOES labels occurring in the corpus, O first."""
    seen = {lab for sent in sentences for lab in sent.labels}
    seen.discard("O")
    return ["O"] + sorted(seen)
