"""Command-line interface: train, eval, predict, diagnose, synth.

Every subcommand accepts ``--config FILE`` with flat ``key = value`` lines
(UTF-8, ``#`` comments); explicit flags win over file values, file values
win over defaults. All randomness flows from ``--seed``; submodule seeds are
derived by hashing the seed with a component label. Exit codes: 0 success,
1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from .chars import CharEncoderConfig
from .data import (LabeledSentence, label_inventory, load_embeddings,
                   prepare_corpus, read_column_file, span_f1, span_f1_per_type)
from .encoder import EncoderConfig
from .errors import (CheckpointError, ConfigError, ContractError, ParseError,
                     SeqtagError)
from .positional import pe_dot_curve, pe_projected_dot_curve
from .synth import write_corpus
from .training import (TrainConfig, load_checkpoint, model_from_checkpoint,
                       save_checkpoint, train)

TRAIN_DEFAULTS = {
    "encoder": "adapted", "scaled": "false", "layers": 1, "heads": 4,
    "d_model": 32, "d_ff": 64, "attn_dropout": 0.15, "ffn_dropout": 0.15,
    "max_len": 512, "char_encoder": "none", "word_dim": 50,
    "embedding_dim": 100, "epochs": 100, "batch_size": 16, "lr": 0.01,
    "warmup_frac": 0.01, "clip_norm": 5.0, "fc_dropout": 0.4, "seed": 1,
}


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    lowered = str(value).strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


class _Resolver:
    """Flag > config file > default, key by key."""

    def __init__(self, args: argparse.Namespace, defaults: dict):
        self.args = vars(args)
        self.file = parse_config_file(self.args["config"]) if self.args.get("config") \
            else {}
        self.defaults = defaults

    def get(self, key: str, cast=str):
        flag = self.args.get(key)
        if flag is not None:
            return cast(flag)
        if key in self.file:
            return cast(self.file[key])
        if key in self.defaults:
            return cast(self.defaults[key])
        return None


def _require_file(path: str | None, what: str) -> str:
    import os
    if path is None:
        raise ConfigError(f"missing required {what} path")
    if not os.path.exists(path):
        raise ConfigError(f"{what} file not found: {path}")
    return path


def _out_stream(path: str | None):
    if path:
        return open(path, "w", encoding="utf-8"), True
    return sys.stdout, False


# -- train ------------------------------------------------------------------


def _build_train_config(res: _Resolver) -> TrainConfig:
    encoder = EncoderConfig(
        mode=res.get("encoder"), scaled=res.get("scaled", parse_bool),
        n_layers=res.get("layers", int), n_heads=res.get("heads", int),
        d_model=res.get("d_model", int), d_ff=res.get("d_ff", int),
        attn_dropout=res.get("attn_dropout", float),
        ffn_dropout=res.get("ffn_dropout", float),
        max_len=res.get("max_len", int))
    char = CharEncoderConfig(kind=res.get("char_encoder"))
    return TrainConfig(
        encoder=encoder, char=char, epochs=res.get("epochs", int),
        batch_size=res.get("batch_size", int), peak_lr=res.get("lr", float),
        warmup_fraction=res.get("warmup_frac", float),
        clip_norm=res.get("clip_norm", float), word_dim=res.get("word_dim", int),
        fc_dropout=res.get("fc_dropout", float), seed=res.get("seed", int))


def cmd_train(args: argparse.Namespace) -> int:
    res = _Resolver(args, TRAIN_DEFAULTS)
    train_path = _require_file(res.get("train"), "training data")
    dev_path = res.get("dev")
    if dev_path is not None:
        dev_path = _require_file(dev_path, "development data")
    config = _build_train_config(res)

    train_data = read_column_file(train_path)
    dev_data = read_column_file(dev_path) if dev_path else []

    embeddings = None
    emb_path = res.get("embeddings")
    if emb_path:
        from .data import Vocabulary
        emb_path = _require_file(emb_path, "embedding")
        vocab = Vocabulary.from_sentences(train_data)
        embeddings = load_embeddings(emb_path, vocab, res.get("embedding_dim", int),
                                     seed=config.seed)
        print(f"embeddings: {embeddings.stats}", file=sys.stderr)

    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    result = train(config, train_data, dev_data, embeddings,
                   metrics_path=res.get("metrics"), log=log)
    out_path = res.get("out") or "model.ckpt"
    save_checkpoint(result.checkpoint, out_path)
    print(f"best_dev_f1 {result.best_dev_f1:.4f} (epoch {result.best_epoch}); "
          f"checkpoint written to {out_path}")
    return 0


# -- eval ---------------------------------------------------------------------


def _load_model(path: str):
    _require_file(path, "checkpoint")
    return model_from_checkpoint(load_checkpoint(path))


def _prepared_corpus(path: str, model) -> list[LabeledSentence]:
    data = read_column_file(_require_file(path, "data"))
    return prepare_corpus(data, model.char_vocab, model.char_config.max_word_len)


def cmd_eval(args: argparse.Namespace) -> int:
    model = _load_model(args.checkpoint)
    data = _prepared_corpus(args.data, model)

    data_labels = set(label_inventory(data))
    missing = sorted(data_labels - set(model.labels))
    if missing:
        raise ContractError(
            f"data contains labels the checkpoint does not know: {missing}; "
            f"checkpoint labels: {sorted(model.labels)}")

    pred = [model.predict(s) for s in data]
    gold = [s.labels for s in data]
    scores = span_f1(pred, gold)
    print(f"precision {scores.precision:.4f} recall {scores.recall:.4f} "
          f"f1 {scores.f1:.4f}")
    if args.per_type:
        for etype, s in span_f1_per_type(pred, gold).items():
            print(f"{etype}: precision {s.precision:.4f} recall {s.recall:.4f} "
                  f"f1 {s.f1:.4f} support {s.n_gold}")
    return 0


# -- predict --------------------------------------------------------------------


def _read_plain_sentences(fh) -> list[list[str]]:
    sentences = []
    for line in fh:
        tokens = line.split()
        if tokens:
            sentences.append(tokens)
    return sentences


def _read_conll_tokens(fh) -> list[list[str]]:
    sentences: list[list[str]] = []
    current: list[str] = []
    for line in fh:
        cols = line.split()
        if not cols:
            if current:
                sentences.append(current)
                current = []
            continue
        if cols[0] == "-DOCSTART-":
            continue
        current.append(cols[0])
    if current:
        sentences.append(current)
    return sentences


def cmd_predict(args: argparse.Namespace) -> int:
    model = _load_model(args.checkpoint)
    if args.input:
        fh = open(_require_file(args.input, "input"), encoding="utf-8")
    else:
        fh = sys.stdin
    try:
        sentences = _read_conll_tokens(fh) if args.conll else _read_plain_sentences(fh)
    finally:
        if args.input:
            fh.close()

    out, close_out = _out_stream(args.out)
    try:
        for tokens in sentences:
            sent = LabeledSentence(tokens, ["O"] * len(tokens))
            labels = model.predict(sent, constrained=True)
            for token, label in zip(tokens, labels):
                out.write(f"{token} {label}\n")
            out.write("\n")
    finally:
        if close_out:
            out.close()
    return 0


# -- diagnose ---------------------------------------------------------------------


def _write_csv(rows, header: str, path: str | None) -> None:
    out, close_out = _out_stream(path)
    try:
        out.write(header + "\n")
        for row in rows:
            out.write(",".join(row) + "\n")
    finally:
        if close_out:
            out.close()


def cmd_diagnose(args: argparse.Namespace) -> int:
    kind = args.kind
    if kind == "pe_curve":
        curve = pe_dot_curve(args.dim, args.k_min, args.k_max)
        _write_csv(([f"{int(k)}", f"{v:.12g}"] for k, v in curve), "k,dot", args.out)
        return 0
    if kind == "pe_projected":
        curve = pe_projected_dot_curve(args.dim, args.k_min, args.k_max,
                                       args.seed, t=args.anchor)
        _write_csv(([f"{int(k)}", f"{d:.12g}", f"{p:.12g}"] for k, d, p in curve),
                   f"k,dot,projected_dot_seed{args.seed}", args.out)
        return 0

    # attention_entropy: run a corpus through a checkpoint, compare the
    # per-head softmax entropy of raw scores vs sqrt(d_k)-scaled scores.
    if not args.checkpoint:
        raise ConfigError("diagnose attention_entropy requires --checkpoint")
    if not args.data:
        raise ConfigError("diagnose attention_entropy requires --data")
    model = _load_model(args.checkpoint)
    data = _prepared_corpus(args.data, model)
    d_k = model.encoder_config.d_k
    sums: dict[tuple[int, int], list[float]] = {}
    counts: dict[tuple[int, int], int] = {}
    for sent in data:
        sink: list = []
        model.emissions(sent, score_sink=sink)
        for layer_idx, heads in enumerate(sink):
            for head_idx, raw in enumerate(heads):
                key = (layer_idx, head_idx)
                ent_raw = _mean_entropy(raw)
                ent_scaled = _mean_entropy(raw / math.sqrt(d_k))
                acc = sums.setdefault(key, [0.0, 0.0])
                acc[0] += ent_raw * raw.shape[0]
                acc[1] += ent_scaled * raw.shape[0]
                counts[key] = counts.get(key, 0) + raw.shape[0]

    rows = []
    for (layer_idx, head_idx), (raw_sum, scaled_sum) in sorted(sums.items()):
        n = counts[(layer_idx, head_idx)]
        rows.append([str(layer_idx), str(head_idx),
                     f"{raw_sum / n:.12g}", f"{scaled_sum / n:.12g}"])
    _write_csv(rows, "layer,head,entropy_unscaled,entropy_scaled", args.out)
    return 0


def _mean_entropy(scores: np.ndarray) -> float:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return float(terms.sum(axis=-1).mean())


# -- synth ------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    paths = write_corpus(args.task, args.size, args.seed, args.out_dir)
    for split, path in paths.items():
        print(f"{split}: {path}")
    return 0


# -- wiring -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqtag",
        description="Sequence labeling with a direction-aware attention encoder "
                    "and a CRF decoder.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a tagger on a column-format corpus")
    p_train.add_argument("--config", help="flat key = value config file")
    p_train.add_argument("--train", help="training data path")
    p_train.add_argument("--dev", help="development data path")
    p_train.add_argument("--out", help="checkpoint output path")
    p_train.add_argument("--metrics", help="per-epoch metrics CSV path")
    p_train.add_argument("--encoder", choices=["vanilla", "adapted"],
                         help="word-level encoder mode")
    p_train.add_argument("--scaled", help="divide attention scores by sqrt(d_k)")
    p_train.add_argument("--layers", type=int, help="encoder layers")
    p_train.add_argument("--heads", type=int, help="attention heads")
    p_train.add_argument("--d-model", type=int, dest="d_model")
    p_train.add_argument("--d-ff", type=int, dest="d_ff")
    p_train.add_argument("--attn-dropout", type=float, dest="attn_dropout")
    p_train.add_argument("--ffn-dropout", type=float, dest="ffn_dropout")
    p_train.add_argument("--max-len", type=int, dest="max_len")
    p_train.add_argument("--char-encoder", dest="char_encoder",
                         choices=["none", "cnn", "bilstm", "transformer",
                                  "adapted_transformer"])
    p_train.add_argument("--word-dim", type=int, dest="word_dim")
    p_train.add_argument("--embeddings", help="pretrained embedding text file")
    p_train.add_argument("--embedding-dim", type=int, dest="embedding_dim")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", type=int, dest="batch_size")
    p_train.add_argument("--lr", type=float, help="peak learning rate")
    p_train.add_argument("--warmup-frac", type=float, dest="warmup_frac")
    p_train.add_argument("--clip-norm", type=float, dest="clip_norm")
    p_train.add_argument("--fc-dropout", type=float, dest="fc_dropout")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on labeled data")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--per-type", action="store_true", dest="per_type")
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="label sentences from a file or stdin")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--input", help="input path (default stdin)")
    p_pred.add_argument("--conll", action="store_true",
                        help="input is column format; first column is the token")
    p_pred.add_argument("--out", help="output path (default stdout)")
    p_pred.set_defaults(func=cmd_predict)

    p_diag = sub.add_parser("diagnose",
                            help="positional-encoding curves and attention entropy")
    p_diag.add_argument("--kind", required=True,
                        choices=["pe_curve", "pe_projected", "attention_entropy"])
    p_diag.add_argument("--dim", type=int, default=512)
    p_diag.add_argument("--k-min", type=int, default=-100, dest="k_min")
    p_diag.add_argument("--k-max", type=int, default=100, dest="k_max")
    p_diag.add_argument("--seed", type=int, default=1)
    p_diag.add_argument("--anchor", type=int, default=100,
                        help="anchor position for the projected curve")
    p_diag.add_argument("--checkpoint")
    p_diag.add_argument("--data")
    p_diag.add_argument("--out")
    p_diag.set_defaults(func=cmd_diagnose)

    p_synth = sub.add_parser("synth", help="write a synthetic labeled corpus")
    p_synth.add_argument("--task", choices=["directional", "copy_pattern"],
                         default="directional")
    p_synth.add_argument("--size", type=int, default=2000,
                         help="training sentences; dev/test get a tenth each")
    p_synth.add_argument("--seed", type=int, default=1)
    p_synth.add_argument("--out-dir", required=True, dest="out_dir")
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SeqtagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
