"""Static word-vector tables and cosine similarity for words and phrases."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger("caprank")

# Binary snapshot header: magic, format version, dim, entry count.
_SNAPSHOT_MAGIC = b"CAPRKEMB"
_SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<8sIIQ")


@dataclass(frozen=True)
class WordVectorTable:
    """An immutable token -> vector map with a single fixed dimension."""

    dim: int
    entries: dict[str, np.ndarray] = field(repr=False)

    @property
    def vocab_size(self) -> int:
        return len(self.entries)

    def get(self, token: str) -> Optional[np.ndarray]:
        return self.entries.get(token)

    def __contains__(self, token: str) -> bool:
        return token in self.entries


def load_vectors(path: str, vocab_filter: Optional[Iterable[str]] = None) -> WordVectorTable:
    """Load a text-format embedding file: token, then dim floats per line.

    The dimension is inferred from the first line and enforced everywhere
    else. A vocab_filter keeps memory bounded on multi-gigabyte files by
    retaining only the listed tokens. Duplicate tokens keep the last
    occurrence, with a warning.
    """
    keep = None if vocab_filter is None else frozenset(vocab_filter)
    entries: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise ValueError(f"{path}:{lineno}: no vector components")
            elif len(values) != dim:
                raise ValueError(
                    f"{path}:{lineno}: expected {dim} components, found {len(values)}"
                )
            if keep is not None and token not in keep:
                continue
            try:
                vec = np.array(values, dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric component") from exc
            if token in entries:
                log.warning("duplicate token %r at %s:%d, keeping the later vector", token, path, lineno)
            vec.setflags(write=False)
            entries[token] = vec
    if dim is None:
        raise ValueError(f"{path}: empty embedding file")
    return WordVectorTable(dim=dim, entries=entries)


def save_table(table: WordVectorTable, path: str) -> None:
    """Write a binary snapshot of a (typically vocab-filtered) table."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_SNAPSHOT_MAGIC, _SNAPSHOT_VERSION, table.dim, table.vocab_size))
        for token, vec in table.entries.items():
            raw = token.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(vec.astype("<f8").tobytes())


def load_table(path: str) -> WordVectorTable:
    """Read a binary snapshot written by save_table."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ValueError(f"{path}: truncated snapshot header")
        magic, version, dim, count = _HEADER.unpack(header)
        if magic != _SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not an embedding snapshot")
        if version != _SNAPSHOT_VERSION:
            raise ValueError(
                f"{path}: snapshot version {version}, this build reads version {_SNAPSHOT_VERSION}"
            )
        entries: dict[str, np.ndarray] = {}
        for _ in range(count):
            (token_len,) = struct.unpack("<I", fh.read(4))
            token = fh.read(token_len).decode("utf-8")
            vec = np.frombuffer(fh.read(8 * dim), dtype="<f8").astype(np.float64)
            vec.setflags(write=False)
            entries[token] = vec
    return WordVectorTable(dim=dim, entries=entries)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ValueError(f"vectors must be equal-length and non-empty, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    if np.array_equal(a, b):
        return 1.0  # exact, not 0.999... — identical keyphrase/label must fully confirm
    value = float(np.dot(a, b) / (na * nb))
    return max(-1.0, min(1.0, value))


def phrase_vector(phrase: Sequence[str], table: WordVectorTable) -> Optional[np.ndarray]:
    """Mean of the in-vocabulary token vectors; None if every token is OOV."""
    vecs = [table.get(tok) for tok in phrase]
    vecs = [v for v in vecs if v is not None]
    if not vecs:
        return None
    return np.mean(vecs, axis=0)


def word_similarity(a: Sequence[str], b: Sequence[str], table: WordVectorTable) -> float:
    """Cosine of the two phrase vectors, clamped to [0, 1].

    Negative cosines clamp to 0 (anti-related words must not boost a
    candidate) and fully out-of-vocabulary phrases score 0 rather than
    erroring, so unusual detector labels degrade gracefully.
    """
    va = phrase_vector(a, table)
    vb = phrase_vector(b, table)
    if va is None or vb is None:
        return 0.0
    return max(0.0, cosine(va, vb))
