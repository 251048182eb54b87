"""Static word embeddings: word2vec text I/O, normalization, cosine."""

from __future__ import annotations

import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError, UnknownWordError


class EmbeddingMatrix:
    """Word list plus a float32 matrix with one row per word."""

    def __init__(self, words: Sequence[str], vectors):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise ConfigError(f"{len(words)} words but vectors have shape {vectors.shape}")
        self.words = list(words)
        self.index = {}
        for i, w in enumerate(self.words):
            if w in self.index:
                raise ConfigError(f"duplicate word {w!r}")
            self.index[w] = i
        self.vectors = vectors
        self.vectors.setflags(write=False)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row(self, word: str) -> int:
        try:
            return self.index[word]
        except KeyError:
            raise UnknownWordError(word) from None

    def vector(self, word: str) -> np.ndarray:
        return self.vectors[self.row(word)]

    def save(self, path):
        store_word2vec_text(self, path)


def load_word2vec_text(path) -> EmbeddingMatrix:
    text = Path(path).read_text(encoding="utf-8", errors="surrogateescape")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(f"{path}: empty embedding file", line=1)
    try:
        count, dim = (int(v) for v in lines[0].split())
    except ValueError:
        raise ParseError(f"{path}: header must be 'count dim'", line=1) from None
    body = lines[1:]
    if len(body) != count:
        raise ParseError(f"{path}: header announces {count} rows, found {len(body)}", line=1)

    words, rows, dups = [], [], 0
    seen = set()
    for lineno, line in enumerate(body, start=2):
        parts = line.rstrip(" ").split(" ")
        if len(parts) != dim + 1:
            raise ParseError(f"{path}: expected {dim} values, got {len(parts) - 1}", line=lineno)
        word = parts[0]
        try:
            vec = [float(v) for v in parts[1:]]
        except ValueError:
            raise ParseError(f"{path}: non-numeric value", line=lineno) from None
        if word in seen:
            dups += 1
            continue
        seen.add(word)
        words.append(word)
        rows.append(vec)
    if dups:
        warnings.warn(f"{path}: skipped {dups} duplicate word(s), first occurrence kept")
    return EmbeddingMatrix(words, np.asarray(rows, dtype=np.float32).reshape(len(words), dim))


def store_word2vec_text(emb: EmbeddingMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", errors="surrogateescape") as fh:
        fh.write(f"{len(emb)} {emb.dim}\n")
        for word, vec in zip(emb.words, emb.vectors):
            fh.write(word + " " + " ".join("%.9g" % v for v in vec) + "\n")


def _unit_rows(m: np.ndarray, words) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ConfigError(f"zero vector for word {words[zero[0]]!r}")
    return m / norms[:, None]


def normalize(emb: EmbeddingMatrix) -> EmbeddingMatrix:
    """Unit length, mean-center, unit length again.

    Centering is skipped for a single-word matrix, where it would zero the
    only vector.
    """
    m = _unit_rows(emb.vectors.astype(np.float64), emb.words)
    if len(emb) > 1:
        m = m - m.mean(axis=0)
        m = _unit_rows(m, emb.words)
    return EmbeddingMatrix(emb.words, m)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ConfigError("cosine of a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
