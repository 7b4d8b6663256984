"""Training loop, SGD with momentum, triangular LR schedule, checkpoints.

The schedule ramps linearly from zero to the peak learning rate over the
first percent of optimizer steps and decays linearly to zero over the rest,
stepping once per batch. The loss is the mean negative log-likelihood over
the sequences of a batch. After each epoch the dev set is decoded and the
parameters achieving the highest dev span-F1 are kept (last epoch wins when
no dev data is given). Everything is deterministic given the config seed.

A checkpoint is a zip archive holding a JSON manifest (config, vocabularies,
labels, metric history, format version, config hash) plus one raw
little-endian binary block per named tensor; the zip layer contributes a
per-block CRC that is verified on read.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .chars import CharEncoderConfig
from .data import (LabeledSentence, PrfScores, Vocabulary, label_inventory,
                   prepare_corpus, span_f1)
from .encoder import EncoderConfig
from .errors import CheckpointError, ConfigError, ContractError, TrainingError
from .model import SequenceTagger, derive_seed
from .tensor import add, scale

CHECKPOINT_FORMAT_VERSION = 1

_DTYPE_CODES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


def triangular_lr(step: int, total_steps: int, peak: float,
                  warmup_fraction: float = 0.01) -> float:
    """Linear warmup to the peak over the first fraction of steps, then linear decay to 0."""
    if not 0.0 < warmup_fraction < 1.0:
        raise ConfigError(f"warmup_fraction must be in (0, 1), got {warmup_fraction}")
    if step <= 0:
        return 0.0
    warmup = max(1, math.ceil(warmup_fraction * total_steps))
    if step <= warmup:
        return peak * step / warmup
    if step >= total_steps:
        return 0.0
    return peak * (total_steps - step) / (total_steps - warmup)


class SgdMomentum:
    """v <- momentum * v + g; p <- p - lr * v; gradients are zeroed afterwards."""

    def __init__(self, params, momentum: float = 0.9):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.params}

    def step(self, lr: float) -> None:
        for name, p in self.params:
            if p.grad is None:
                raise ContractError(
                    f"parameter {name!r} has no gradient; the graph is detached")
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            p.data -= lr * v
        self.zero_grad()

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


@dataclass
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    char: CharEncoderConfig = field(default_factory=lambda: CharEncoderConfig(kind="none"))
    epochs: int = 100
    batch_size: int = 16
    peak_lr: float = 0.01
    warmup_fraction: float = 0.01
    momentum: float = 0.9
    clip_norm: float = 5.0
    word_dim: int = 50
    fc_dropout: float = 0.4
    seed: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigError(
                f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "char": self.char.to_dict(),
                "epochs": self.epochs, "batch_size": self.batch_size,
                "peak_lr": self.peak_lr, "warmup_fraction": self.warmup_fraction,
                "momentum": self.momentum, "clip_norm": self.clip_norm,
                "word_dim": self.word_dim, "fc_dropout": self.fc_dropout,
                "seed": self.seed}


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(
        json.dumps(config_dict, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict[str, np.ndarray]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: SequenceTagger
    history: list[dict]
    best_epoch: int
    best_dev_f1: float


def evaluate(model: SequenceTagger, sentences, constrained: bool = True) -> PrfScores:
    """Span F1 of constrained Viterbi decoding against gold labels."""
    pred = [model.predict(s, constrained) for s in sentences]
    gold = [s.labels for s in sentences]
    return span_f1(pred, gold)


def _batches(order: np.ndarray, batch_size: int):
    for i in range(0, order.size, batch_size):
        yield order[i:i + batch_size]


def _snapshot(model: SequenceTagger) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in model.named_tensors()}


def _restore(model: SequenceTagger, snap: dict[str, np.ndarray]) -> None:
    for name, t in model.named_tensors():
        t.data[...] = snap[name]


def build_checkpoint(model: SequenceTagger, config: TrainConfig,
                     history: list[dict] | None = None) -> Checkpoint:
    cfg = config.to_dict()
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "labels": model.labels,
        "word_vocab": model.word_vocab.tokens[2:],
        "char_vocab": model.char_vocab.tokens[2:],
        "history": history or [],
    }
    return Checkpoint(manifest, {n: t.data.copy() for n, t in model.named_tensors()})


def train(config: TrainConfig, train_data, dev_data=(), embeddings=None,
          metrics_path: str | None = None, dev_scorer=None,
          log=None) -> TrainResult:
    """Fit a tagger on LabeledSentence lists; returns the best-dev checkpoint.

    ``dev_scorer``, when given, replaces span-F1 decoding for model
    selection; it is called as dev_scorer(model, dev_data, epoch) and must
    return a PrfScores.
    """
    if not train_data:
        raise ContractError("train: empty training data")
    word_vocab = Vocabulary.from_sentences(train_data)
    char_vocab = Vocabulary.chars_from_sentences(train_data)
    labels = label_inventory(train_data)

    train_prepared = prepare_corpus(train_data, char_vocab,
                                    config.char.max_word_len)
    dev_prepared = prepare_corpus(dev_data, char_vocab, config.char.max_word_len) \
        if dev_data else []

    model = SequenceTagger(word_vocab, char_vocab, labels, config.encoder,
                           config.char, embeddings, config.word_dim,
                           config.fc_dropout, config.seed)
    optimizer = SgdMomentum(model.parameters(), config.momentum)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))

    n = len(train_prepared)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = steps_per_epoch * config.epochs

    history: list[dict] = []
    best_f1 = -1.0
    best_epoch = 0
    best_snap = None
    global_step = 0
    lr = 0.0
    metrics_fh = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        if metrics_fh:
            metrics_fh.write("epoch,train_loss,dev_p,dev_r,dev_f1,lr\n")
        for epoch in range(1, config.epochs + 1):
            model.train_mode(True)
            order = shuffle_rng.permutation(n)
            epoch_loss = 0.0
            for batch_idx, batch in enumerate(_batches(order, config.batch_size)):
                sentences = [train_prepared[i] for i in batch]
                pad_to = max(len(s) for s in sentences)
                loss = model.sentence_loss(sentences[0], pad_to)
                for sent in sentences[1:]:
                    loss = add(loss, model.sentence_loss(sent, pad_to))
                loss = scale(loss, 1.0 / len(sentences))
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(
                        f"non-finite loss {value} in epoch {epoch}, batch {batch_idx}")
                epoch_loss += value * len(sentences)
                loss.backward()
                clip_global_norm(optimizer.params, config.clip_norm)
                global_step += 1
                lr = triangular_lr(global_step, total_steps, config.peak_lr,
                                   config.warmup_fraction)
                optimizer.step(lr)
            epoch_loss /= n

            model.train_mode(False)
            if dev_scorer is not None:
                dev = dev_scorer(model, dev_prepared, epoch)
            elif dev_prepared:
                dev = evaluate(model, dev_prepared)
            else:
                dev = PrfScores(0.0, 0.0, 0.0)
            record = {"epoch": epoch, "train_loss": epoch_loss,
                      "dev_p": dev.precision, "dev_r": dev.recall,
                      "dev_f1": dev.f1, "lr": lr}
            history.append(record)
            if metrics_fh:
                metrics_fh.write(
                    f"{epoch},{epoch_loss:.6f},{dev.precision:.4f},"
                    f"{dev.recall:.4f},{dev.f1:.4f},{lr:.6g}\n")
            if log is not None:
                log(f"epoch {epoch}: loss {epoch_loss:.4f} dev_f1 {dev.f1:.4f} "
                    f"lr {lr:.5f}")

            track_dev = dev_scorer is not None or bool(dev_prepared)
            if track_dev:
                if dev.f1 > best_f1:
                    best_f1 = dev.f1
                    best_epoch = epoch
                    best_snap = _snapshot(model)
            else:
                best_epoch = epoch
                best_snap = _snapshot(model)
    finally:
        if metrics_fh:
            metrics_fh.close()

    if best_snap is not None:
        _restore(model, best_snap)
    model.train_mode(False)
    ckpt = build_checkpoint(model, config, history)
    return TrainResult(ckpt, model, history, best_epoch, max(best_f1, 0.0))


# -- checkpoint serialization ---------------------------------------------


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    manifest = dict(ckpt.manifest)
    manifest["tensor_index"] = {
        name: {"shape": list(arr.shape), "dtype": "<f8"}
        for name, arr in ckpt.tensors.items()
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
        for name, arr in ckpt.tensors.items():
            zf.writestr(f"tensors/{name}.bin",
                        np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str, expected_config: TrainConfig | None = None) -> Checkpoint:
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            version = manifest.get("format_version")
            if version is None or version > CHECKPOINT_FORMAT_VERSION:
                raise CheckpointError(
                    f"checkpoint format version {version} is newer than supported "
                    f"version {CHECKPOINT_FORMAT_VERSION}")
            tensors = {}
            for name, meta in manifest["tensor_index"].items():
                dtype = _DTYPE_CODES.get(meta["dtype"])
                if dtype is None:
                    raise CheckpointError(f"unknown tensor dtype {meta['dtype']!r}")
                raw = zf.read(f"tensors/{name}.bin")
                arr = np.frombuffer(raw, dtype=dtype).reshape(meta["shape"])
                tensors[name] = arr.astype(np.float64)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt or unreadable checkpoint {path}: {exc}") from exc
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    if expected_config is not None:
        expected = config_hash(expected_config.to_dict())
        if manifest.get("config_hash") != expected:
            import warnings
            warnings.warn(
                f"checkpoint config hash {manifest.get('config_hash')} does not "
                f"match expected {expected}", stacklevel=2)
    return Checkpoint(manifest, tensors)


def _config_from_manifest(manifest: dict) -> TrainConfig:
    cfg = manifest["config"]
    return TrainConfig(encoder=EncoderConfig(**cfg["encoder"]),
                       char=CharEncoderConfig(**cfg["char"]),
                       epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                       peak_lr=cfg["peak_lr"], warmup_fraction=cfg["warmup_fraction"],
                       momentum=cfg["momentum"], clip_norm=cfg["clip_norm"],
                       word_dim=cfg["word_dim"], fc_dropout=cfg["fc_dropout"],
                       seed=cfg["seed"])


def model_from_checkpoint(ckpt: Checkpoint) -> SequenceTagger:
    """Rebuild a tagger and overwrite its tensors with the stored values."""
    config = _config_from_manifest(ckpt.manifest)
    word_vocab = Vocabulary({t: 1 for t in ckpt.manifest["word_vocab"]})
    char_vocab = Vocabulary({t: 1 for t in ckpt.manifest["char_vocab"]})
    model = SequenceTagger(word_vocab, char_vocab, ckpt.manifest["labels"],
                           config.encoder, config.char, None, config.word_dim,
                           config.fc_dropout, config.seed)
    names = {n for n, _ in model.named_tensors()}
    stored = set(ckpt.tensors)
    if names != stored:
        raise CheckpointError(
            f"checkpoint tensors do not match the model: missing "
            f"{sorted(names - stored)}, unexpected {sorted(stored - names)}")
    for name, tensor in model.named_tensors():
        arr = ckpt.tensors[name]
        if arr.shape != tensor.data.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {arr.shape}, model expects "
                f"{tensor.data.shape}")
        tensor.data[...] = arr
    model.train_mode(False)
    return model
