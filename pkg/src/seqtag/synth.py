"""Seeded synthetic corpora for exercising the tagger end to end.

The ``directional`` task makes entity labels depend on which side of a
trigger word a token sits: the one or two tokens immediately after the
trigger ``at`` form a LOC span, and the one or two tokens immediately before
the trigger ``corp`` form an ORG span. Entity tokens are drawn from the same
filler vocabulary as everything else, so token identity carries no signal; a
model can only solve the task by combining adjacency with relative
direction. Event units are separated by at least one filler so the two rules
never collide on a token.

The ``copy_pattern`` task puts a domain token at the start of the sentence
and one ``mark`` trigger later; the token after the trigger is an entity
whose type copies the sentence-initial domain. It stresses long-range
content attention rather than direction.
"""

from __future__ import annotations

import os

import numpy as np

from .data import LabeledSentence, write_column_file
from .errors import ConfigError
from .model import derive_seed

FILLERS = [f"f{i:02d}" for i in range(40)]
TRIGGER_FORWARD = "at"      # entity follows the trigger
TRIGGER_BACKWARD = "corp"   # entity precedes the trigger


def _entity_labels(n_tokens: int, etype: str) -> list[str]:
    if n_tokens == 1:
        return [f"S-{etype}"]
    return [f"B-{etype}"] + [f"I-{etype}"] * (n_tokens - 2) + [f"E-{etype}"]


def _directional_sentence(rng: np.random.Generator) -> LabeledSentence:
    events = []
    if rng.random() < 0.7:
        events.append("fwd")
    if rng.random() < 0.7:
        events.append("bwd")
    if not events:
        events.append("fwd" if rng.random() < 0.5 else "bwd")
    rng.shuffle(events)

    units: list[tuple[list[str], list[str]]] = []
    for kind in events:
        span = 2 if rng.random() < 0.35 else 1
        entity = [FILLERS[rng.integers(len(FILLERS))] for _ in range(span)]
        if kind == "fwd":
            tokens = [TRIGGER_FORWARD] + entity
            labels = ["O"] + _entity_labels(span, "LOC")
        else:
            tokens = entity + [TRIGGER_BACKWARD]
            labels = _entity_labels(span, "ORG") + ["O"]
        units.append((tokens, labels))

    n_fillers = int(rng.integers(5, 13))
    # interior gaps keep event units from touching; boundaries may be empty
    n_gaps = len(units) + 1
    interior = len(units) - 1
    n_fillers = max(n_fillers, interior)
    cuts = sorted(rng.integers(0, n_fillers - interior + 1, size=n_gaps - 1))
    sizes = np.diff([0, *cuts, n_fillers - interior])
    gap_sizes = [int(s) + (1 if 0 < i < n_gaps - 1 else 0)
                 for i, s in enumerate(sizes)]

    tokens: list[str] = []
    labels: list[str] = []
    for i, size in enumerate(gap_sizes):
        for _ in range(size):
            tokens.append(FILLERS[rng.integers(len(FILLERS))])
            labels.append("O")
        if i < len(units):
            tokens.extend(units[i][0])
            labels.extend(units[i][1])
    return LabeledSentence(tokens, labels)


def _copy_pattern_sentence(rng: np.random.Generator) -> LabeledSentence:
    domain = "alpha" if rng.random() < 0.5 else "beta"
    etype = "TYPA" if domain == "alpha" else "TYPB"
    entity = FILLERS[rng.integers(len(FILLERS))]
    n_before = int(rng.integers(2, 7))
    n_after = int(rng.integers(0, 5))
    tokens = [domain]
    tokens += [FILLERS[rng.integers(len(FILLERS))] for _ in range(n_before)]
    tokens += ["mark", entity]
    tokens += [FILLERS[rng.integers(len(FILLERS))] for _ in range(n_after)]
    labels = ["O"] * (1 + n_before) + ["O", f"S-{etype}"] + ["O"] * n_after
    return LabeledSentence(tokens, labels)


_GENERATORS = {"directional": _directional_sentence,
               "copy_pattern": _copy_pattern_sentence}


def generate(task: str, n_sentences: int, seed: int) -> list[LabeledSentence]:
    """Deterministic list of labeled sentences for the given task and seed."""
    if task not in _GENERATORS:
        raise ConfigError(f"unknown synthetic task {task!r}")
    if n_sentences < 1:
        raise ConfigError(f"need at least one sentence, got {n_sentences}")
    rng = np.random.default_rng(seed)
    gen = _GENERATORS[task]
    return [gen(rng) for _ in range(n_sentences)]


def write_corpus(task: str, size: int, seed: int, out_dir: str) -> dict[str, str]:
    """Write train/dev/test splits (size, size/10, size/10) as column files."""
    if size < 50:
        raise ConfigError(f"synthetic corpus size must be >= 50, got {size}")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for split, count in (("train", size), ("dev", max(1, size // 10)),
                         ("test", max(1, size // 10))):
        sentences = generate(task, count, derive_seed(seed, f"synth:{task}:{split}"))
        path = os.path.join(out_dir, f"{split}.txt")
        write_column_file(path, sentences)
        paths[split] = path
    return paths
