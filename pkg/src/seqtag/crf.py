"""Linear-chain CRF: sequence scoring, partition function, Viterbi decoding.

A path score is the sum of per-step transition and emission scores,
including transitions from a virtual start state into the first label and
from the last label into a virtual end state. The probability of a label
sequence is exp(score) normalized by the sum of exp over all paths, computed
with the forward recursion in log space. Decoding uses the Viterbi dynamic
program; ties are broken toward the lower label index at every decision
(including the final state), which is equivalent to returning the maximizing
path whose reversed label sequence is lexicographically smallest.

Transitions live in an (L+2) x (L+2) matrix: indices 0..L-1 are labels,
index L is the virtual start state, index L+1 the virtual end state.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import (NEG_INF, Tensor, add, gather, logsumexp_lastdim, narrow,
                     reshape, sum_all, transpose)


def start_index(n_labels: int) -> int:
    return n_labels


def end_index(n_labels: int) -> int:
    return n_labels + 1


def _check_tags(tags, n_labels: int) -> None:
    for y in tags:
        if not 0 <= y < n_labels:
            raise ContractError(f"tag index {y} outside label range [0, {n_labels})")


def _emission_block(emissions: Tensor, length: int, n_labels: int) -> Tensor:
    if emissions.data.ndim != 2:
        raise ContractError(f"emissions must be a matrix, got shape {emissions.shape}")
    block = emissions
    if length != emissions.shape[0]:
        block = narrow(emissions, 0, 0, length)
    if n_labels != emissions.shape[1]:
        raise ContractError(
            f"emissions have {emissions.shape[1]} columns, transitions expect {n_labels}")
    return block


def _resolve_length(emissions: Tensor, mask) -> int:
    if mask is None:
        return emissions.shape[0]
    m = np.asarray(mask, dtype=bool)
    length = int(m.sum())
    if length < 1:
        raise ContractError("sequence mask leaves no unmasked token")
    if not m[:length].all():
        raise ContractError("mask must be a contiguous prefix of valid tokens")
    return length


def score_sequence(emissions: Tensor, transitions: Tensor, tags) -> Tensor:
    """Score of one label path, including virtual start/end transitions."""
    tags = list(tags)
    n_labels = transitions.shape[0] - 2
    if len(tags) != emissions.shape[0]:
        raise ContractError(
            f"got {len(tags)} tags for {emissions.shape[0]} emission rows")
    _check_tags(tags, n_labels)

    t_dim = transitions.shape[0]
    pairs = [(start_index(n_labels), tags[0])]
    pairs += list(zip(tags[:-1], tags[1:]))
    pairs.append((tags[-1], end_index(n_labels)))
    trans_idx = np.array([a * t_dim + b for a, b in pairs], dtype=np.int64)
    emit_idx = np.arange(len(tags), dtype=np.int64) * emissions.shape[1] + np.array(tags)

    trans_sum = sum_all(gather(transitions, trans_idx, (len(pairs),)))
    emit_sum = sum_all(gather(emissions, emit_idx, (len(tags),)))
    return add(trans_sum, emit_sum)


def log_partition(emissions: Tensor, transitions: Tensor, mask=None) -> Tensor:
    """Log of the sum over all label paths of exp(path score)."""
    length = _resolve_length(emissions, mask)
    n_labels = transitions.shape[0] - 2
    em = _emission_block(emissions, length, n_labels)

    core_t = transpose(narrow(narrow(transitions, 0, 0, n_labels), 1, 0, n_labels))
    from_start = reshape(narrow(narrow(transitions, 0, start_index(n_labels), 1),
                                1, 0, n_labels), (n_labels,))
    to_end = reshape(narrow(narrow(transitions, 0, 0, n_labels),
                            1, end_index(n_labels), 1), (n_labels,))

    alpha = add(from_start, reshape(narrow(em, 0, 0, 1), (n_labels,)))
    for t in range(1, length):
        # core_t[j, i] + alpha[i]: logsumexp over predecessors i for each j
        scores = add(core_t, alpha)
        alpha = add(logsumexp_lastdim(scores),
                    reshape(narrow(em, 0, t, 1), (n_labels,)))
    return logsumexp_lastdim(add(alpha, to_end))


def log_likelihood(emissions: Tensor, transitions: Tensor, tags, mask=None) -> Tensor:
    """Log-probability of the gold path; always <= 0."""
    length = _resolve_length(emissions, mask)
    tags = list(tags)[:length]
    n_labels = transitions.shape[0] - 2
    em = _emission_block(emissions, length, n_labels)
    gold = score_sequence(em, transitions, tags)
    norm = log_partition(em, transitions)
    from .tensor import sub
    return sub(gold, norm)


def viterbi_decode(emissions: np.ndarray, transitions: np.ndarray, mask=None,
                   constrained_mask: np.ndarray | None = None):
    """Best label path and its score.

    ``constrained_mask`` is an (L+2) x (L+2) boolean matrix of allowed
    transitions; disallowed ones are treated as NEG_INF. Pure numpy, no
    gradient tracking.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    trans = np.asarray(transitions, dtype=np.float64)
    n_labels = trans.shape[0] - 2
    if mask is not None:
        length = int(np.asarray(mask, dtype=bool).sum())
        if length < 1:
            raise ContractError("viterbi_decode: no unmasked token")
        emissions = emissions[:length]
    if emissions.shape[0] < 1:
        raise ContractError("viterbi_decode: empty emission table")

    if constrained_mask is not None:
        trans = np.where(constrained_mask, trans, NEG_INF)
    s, e = start_index(n_labels), end_index(n_labels)

    if trans[s, :n_labels].max() <= NEG_INF / 2:
        raise ContractError("viterbi_decode: every transition out of start is forbidden")

    length = emissions.shape[0]
    delta = trans[s, :n_labels] + emissions[0]
    backptr = np.zeros((length, n_labels), dtype=np.int64)
    for t in range(1, length):
        # cand[i, j]: arriving at j from i; argmax keeps the lowest i on ties
        cand = delta[:, None] + trans[:n_labels, :n_labels]
        backptr[t] = cand.argmax(axis=0)
        delta = cand.max(axis=0) + emissions[t]

    final = delta + trans[:n_labels, e]
    best_last = int(final.argmax())
    best_score = float(final[best_last])

    path = [best_last]
    for t in range(length - 1, 0, -1):
        path.append(int(backptr[t, path[-1]]))
    path.reverse()
    return path, best_score


def bioes_transition_mask(labels: list[str]) -> np.ndarray:
    """Allowed-transition matrix for a BIOES label set plus start/end states.

    A span must open with B-X or S-X, continue only as I-X of the same type,
    and close with E-X before anything else (including end of sequence).
    """
    n = len(labels)
    s, e = start_index(n), end_index(n)
    allowed = np.zeros((n + 2, n + 2), dtype=bool)

    def role(lab: str) -> tuple[str, str]:
        if lab == "O":
            return "O", ""
        return lab[0], lab[2:]

    opens = {i for i, lab in enumerate(labels) if role(lab)[0] in ("O", "B", "S")}
    for i in opens:
        allowed[s, i] = True
    for i, lab in enumerate(labels):
        prefix, etype = role(lab)
        if prefix in ("O", "E", "S"):
            allowed[i, e] = True
            for j in opens:
                allowed[i, j] = True
        else:  # B or I must continue the same span
            for j, lab2 in enumerate(labels):
                p2, t2 = role(lab2)
                if t2 == etype and p2 in ("I", "E"):
                    allowed[i, j] = True
    return allowed


class CrfLayer:
    """Learned transition scores over a fixed label set, with BIOES constraints."""

    def __init__(self, labels: list[str], rng: np.random.Generator | None = None):
        self.labels = list(labels)
        n = len(self.labels)
        rng = rng or np.random.default_rng(0)
        self.transitions = Tensor(rng.uniform(-0.1, 0.1, size=(n + 2, n + 2)),
                                  requires_grad=True)
        self.validity_mask = bioes_transition_mask(self.labels)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def neg_log_likelihood(self, emissions: Tensor, tags, mask=None) -> Tensor:
        from .tensor import neg
        return neg(log_likelihood(emissions, self.transitions, tags, mask))

    def decode(self, emissions: np.ndarray, mask=None, constrained: bool = True):
        cm = self.validity_mask if constrained else None
        return viterbi_decode(emissions, self.transitions.data, mask, cm)

    def parameters(self):
        return [("transitions", self.transitions)]
