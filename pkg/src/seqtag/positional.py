"""Sinusoidal position embeddings and signed relative offset encodings.

The absolute embedding of position t interleaves sin(t * c_i) and
cos(t * c_i) at geometric frequencies c_i = 10000^(-2i/d). Its inner
products depend only on the distance between two positions and are blind to
direction. The relative encoding applies the same interleaving to the signed
offset between two positions, so negating the offset flips every sin slot
while leaving the cos slots untouched - that sign pattern is what carries
direction. Both tables are parameter-free constants, precomputed once and
shared read-only.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .tensor import Tensor

_BASE = 10000.0


def _frequencies(d: int) -> np.ndarray:
    """c_i = 10000^(-2i/d) for i in [0, d/2)."""
    i = np.arange(d // 2, dtype=np.float64)
    return _BASE ** (-2.0 * i / d)


def sinusoidal_pe(t: int, d: int) -> np.ndarray:
    """Absolute position embedding: interleaved sin/cos of position t."""
    if d < 2 or d % 2 != 0:
        raise ConfigError(f"sinusoidal_pe: dimension must be even and >= 2, got {d}")
    if t < 0:
        raise ConfigError(f"sinusoidal_pe: position must be non-negative, got {t}")
    angles = t * _frequencies(d)
    out = np.empty(d, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def relative_encoding(offset: int, d_k: int) -> np.ndarray:
    """Encoding of a signed query-key offset: interleaved sin/cos of the offset."""
    if d_k < 2 or d_k % 2 != 0:
        raise ConfigError(f"relative_encoding: dimension must be even and >= 2, got {d_k}")
    angles = offset * _frequencies(d_k)
    out = np.empty(d_k, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


class SinusoidalTable:
    """Precomputed absolute position embeddings for positions 0..max_len-1."""

    def __init__(self, dim: int, max_len: int):
        if dim < 2 or dim % 2 != 0:
            raise ConfigError(f"SinusoidalTable: dim must be even and >= 2, got {dim}")
        if max_len < 1:
            raise ConfigError(f"SinusoidalTable: max_len must be positive, got {max_len}")
        self.dim = dim
        self.max_len = max_len
        angles = np.outer(np.arange(max_len, dtype=np.float64), _frequencies(dim))
        rows = np.empty((max_len, dim), dtype=np.float64)
        rows[:, 0::2] = np.sin(angles)
        rows[:, 1::2] = np.cos(angles)
        self.rows = rows
        self._tensor = Tensor(rows)

    def prefix(self, length: int) -> Tensor:
        """First ``length`` rows as a constant tensor."""
        if length > self.max_len:
            raise ConfigError(
                f"SinusoidalTable: requested {length} positions, table holds {self.max_len}")
        from .tensor import narrow
        return narrow(self._tensor, 0, 0, length)


class RelativeTable:
    """Encodings for every signed offset in [-window, window].

    Row ``offset + window`` holds the encoding of ``offset``. The window is
    never smaller than the longest sequence, so offsets are never clipped.
    """

    def __init__(self, head_dim: int, window: int):
        if head_dim < 2 or head_dim % 2 != 0:
            raise ConfigError(f"RelativeTable: head_dim must be even and >= 2, got {head_dim}")
        if window < 0:
            raise ConfigError(f"RelativeTable: window must be non-negative, got {window}")
        self.head_dim = head_dim
        self.window = window
        offsets = np.arange(-window, window + 1, dtype=np.float64)
        angles = np.outer(offsets, _frequencies(head_dim))
        rows = np.empty((2 * window + 1, head_dim), dtype=np.float64)
        rows[:, 0::2] = np.sin(angles)
        rows[:, 1::2] = np.cos(angles)
        self.rows = rows
        self._tensor = Tensor(rows)

    def row_index(self, offset: int) -> int:
        if abs(offset) > self.window:
            raise ConfigError(
                f"RelativeTable: offset {offset} outside window {self.window}")
        return offset + self.window

    def as_tensor(self) -> Tensor:
        return self._tensor


def pe_dot_curve(d: int, k_min: int, k_max: int) -> np.ndarray:
    """Inner product of two absolute embeddings a fixed distance k apart.

    Returns an array of (k, dot) rows for k in [k_min, k_max]. The value is
    independent of the anchor position; this is checked internally by
    evaluating at two anchors 100 apart and asserting agreement to 1e-9.
    """
    if k_min > k_max:
        raise ConfigError(f"pe_dot_curve: k_min {k_min} > k_max {k_max}")
    t1 = max(0, -k_min)
    t2 = t1 + 100
    table = SinusoidalTable(d, t2 + max(0, k_max) + 1)
    ks = np.arange(k_min, k_max + 1)
    v1 = table.rows[t1 + ks] @ table.rows[t1]
    v2 = table.rows[t2 + ks] @ table.rows[t2]
    drift = float(np.max(np.abs(v1 - v2)))
    if drift > 1e-9:
        raise AssertionError(f"pe_dot_curve: anchor invariance violated by {drift}")
    return np.column_stack([ks.astype(np.float64), v1])


def pe_projected_dot_curve(d: int, k_min: int, k_max: int, seed: int,
                           t: int = 100, w: np.ndarray | None = None) -> np.ndarray:
    """Same curve after a square projection is inserted between the embeddings.

    By default W is drawn elementwise from uniform(-1/sqrt(d), 1/sqrt(d))
    with the given seed; pass ``w`` to use a fixed matrix instead. Returns
    (k, dot, projected_dot) rows; the unprojected curve rides along for
    comparison.
    """
    if k_min > k_max:
        raise ConfigError(f"pe_projected_dot_curve: k_min {k_min} > k_max {k_max}")
    if t + k_min < 0:
        raise ConfigError(
            f"pe_projected_dot_curve: anchor t={t} leaves position {t + k_min} undefined")
    if w is None:
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(d)
        w = rng.uniform(-bound, bound, size=(d, d))
    elif w.shape != (d, d):
        raise ConfigError(f"pe_projected_dot_curve: w must be {d}x{d}, got {w.shape}")
    table = SinusoidalTable(d, t + max(0, k_max) + 1)
    ks = np.arange(k_min, k_max + 1)
    anchor = table.rows[t]
    others = table.rows[t + ks]
    plain = others @ anchor
    projected = others @ (w.T @ anchor)
    return np.column_stack([ks.astype(np.float64), plain, projected])
