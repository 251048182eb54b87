"""Synthetic fixtures: a character-cipher language pair and rotated embedding spaces."""

from __future__ import annotations

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import OverLengthError
from .evaluation import BilingualDictionary
from .tokenizer import SubwordVocabulary, tokenize, train_vocabulary

SOURCE_ALPHABET = "abcdefghij"
TARGET_ALPHABET = "qwrtyuopsz"
_VOWELS = "aei"


def cipher(word: str, src: str = SOURCE_ALPHABET, tgt: str = TARGET_ALPHABET) -> str:
    """Character substitution ``src[i] -> tgt[i]``; other characters pass through."""
    return word.translate(str.maketrans(src, tgt))


def syllables(alphabet: str = SOURCE_ALPHABET) -> list[str]:
    cons = [c for c in alphabet if c not in _VOWELS]
    return [c + v for c in cons for v in _VOWELS if v in alphabet]


def random_words(count: int, seed: int, min_syl: int = 1, max_syl: int = 4) -> list[str]:
    """Distinct pseudo-words built from consonant-vowel syllables (plus an optional coda)."""
    rng = np.random.default_rng(seed)
    syl = syllables()
    cons = [c for c in SOURCE_ALPHABET if c not in _VOWELS]
    seen, out = set(), []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 1000 * count:
            raise RuntimeError("could not draw enough distinct words")
        k = int(rng.integers(min_syl, max_syl + 1))
        w = "".join(syl[int(i)] for i in rng.integers(0, len(syl), size=k))
        if rng.random() < 0.3:
            w += cons[int(rng.integers(0, len(cons)))]
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


class CipherFixture:
    """Source/target lexicon where each target is the cipher of its source.

    The shared vocabulary is trained on both sides, and only pairs whose
    words segment into at most ``n`` known sub-tokens are kept.
    """

    def __init__(self, n_train=400, n_test=100, n=4, vocab_size=160, seed=0,
                 extra_tokens=("The", "translation", "of", "the", "word", "is")):
        pool = random_words(3 * (n_train + n_test), seed)
        corpus = pool + [cipher(w) for w in pool]
        self.vocab: SubwordVocabulary = train_vocabulary(corpus, vocab_size, extra_tokens)
        self.n = n
        pairs = []
        for w in pool:
            t = cipher(w)
            try:
                ok = all(self._fits(x) for x in (w, t))
            except OverLengthError:
                ok = False
            if ok:
                pairs.append((w, t))
            if len(pairs) == n_train + n_test:
                break
        if len(pairs) < n_train + n_test:
            raise RuntimeError("not enough segmentable cipher pairs; raise vocab_size")
        self.train = BilingualDictionary(pairs[:n_train], "train")
        self.test = BilingualDictionary(pairs[n_train:], "test")

    def _fits(self, word):
        ids = tokenize(self.vocab, word)
        return len(ids) <= self.n and self.vocab.unk_id not in ids


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def rotated_spaces(vocab_size=2000, dim=50, noise=0.0, seed=0):
    """Random source space X and target Z = X @ R.T (+ Gaussian noise).

    Words are ``s<i>`` / ``t<i>`` so that row i of each space is a gold pair.
    Returns ``(X, Z, R)`` as EmbeddingMatrix objects and the rotation.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((vocab_size, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    r = random_orthogonal(dim, rng)
    z = x @ r.T
    if noise:
        z = z + noise * rng.standard_normal(z.shape)
    X = EmbeddingMatrix([f"s{i}" for i in range(vocab_size)], x)
    Z = EmbeddingMatrix([f"t{i}" for i in range(vocab_size)], z)
    return X, Z, r


def index_dictionary(indices, role="train") -> BilingualDictionary:
    return BilingualDictionary([(f"s{i}", f"t{i}") for i in indices], role)
