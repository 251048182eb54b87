"""Subword vocabulary and greedy longest-match segmentation.

The vocabulary is a flat token list whose first four entries are the special
tokens. Normal words are segmented left to right, always taking the longest
vocabulary entry that matches at the current position.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, OverLengthError, ParseError

CLS = "[CLS]"
MASK = "[MASK]"
PAD = "[PAD]"
UNK = "[UNK]"
SPECIAL_TOKENS = (CLS, MASK, PAD, UNK)

# longest substring considered when ranking candidate pieces
MAX_PIECE_LEN = 8


@dataclass(frozen=True)
class SubwordVocabulary:
    tokens: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)
    _max_piece: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ConfigError(f"vocabulary must start with {list(SPECIAL_TOKENS)}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        # specials are excluded so a literal "[PAD]" in a word never matches
        index = {tok: i for i, tok in enumerate(self.tokens) if i >= len(SPECIAL_TOKENS)}
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_max_piece", max((len(t) for t in index), default=1))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    @property
    def cls_id(self) -> int:
        return 0

    @property
    def mask_id(self) -> int:
        return 1

    @property
    def pad_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    def id_of(self, token: str) -> int | None:
        if token in SPECIAL_TOKENS:
            return SPECIAL_TOKENS.index(token)
        return self._index.get(token)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SubwordVocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        for i, tok in enumerate(lines):
            if not tok or any(c.isspace() for c in tok):
                raise ParseError(f"invalid token {tok!r}", line=i + 1)
        try:
            return cls(tuple(lines))
        except ConfigError as exc:
            raise ParseError(str(exc)) from None


@dataclass(frozen=True)
class PaddedSpan:
    """Exactly ``n`` token ids; the first ``valid_len`` are real sub-tokens."""

    ids: tuple[int, ...]
    valid_len: int

    @property
    def n(self) -> int:
        return len(self.ids)


def train_vocabulary(
    corpus_words: Iterable[str],
    target_size: int,
    extra_tokens: Sequence[str] = (),
) -> SubwordVocabulary:
    """Build a vocabulary from a word list.

    All characters of the corpus are always included, so every corpus word
    is segmentable without UNK. The remaining budget goes to multi-character
    substrings ranked by occurrence count (ties: longer first, then
    lexicographic). ``extra_tokens`` (e.g. template words) are reserved
    verbatim and count toward ``target_size``.
    """
    words = [w for w in corpus_words if w]
    if not words:
        raise ConfigError("empty corpus")
    extras = []
    for tok in extra_tokens:
        if tok in SPECIAL_TOKENS or any(c.isspace() for c in tok) or not tok:
            raise ConfigError(f"invalid extra token {tok!r}")
        if tok not in extras:
            extras.append(tok)

    chars = sorted({c for w in words for c in w})
    base = list(SPECIAL_TOKENS) + chars + [t for t in extras if t not in chars]
    if target_size < len(base):
        raise ConfigError(
            f"target_size {target_size} cannot hold {len(SPECIAL_TOKENS)} special tokens, "
            f"{len(chars)} characters and {len(extras)} reserved tokens"
        )

    counts: Counter = Counter()
    for word in words:
        for i in range(len(word)):
            for j in range(i + 2, min(len(word), i + MAX_PIECE_LEN) + 1):
                counts[word[i:j]] += 1
    taken = set(base)
    ranked = sorted(
        (s for s in counts if s not in taken),
        key=lambda s: (-counts[s], -len(s), s),
    )
    budget = target_size - len(base)
    return SubwordVocabulary(tuple(base + ranked[:budget]))


def tokenize(vocab: SubwordVocabulary, word: str) -> list[int]:
    if not word:
        raise ConfigError("cannot tokenize an empty word")
    ids = []
    i = 0
    while i < len(word):
        for j in range(min(len(word), i + vocab._max_piece), i, -1):
            tid = vocab._index.get(word[i:j])
            if tid is not None:
                ids.append(tid)
                i = j
                break
        else:
            ids.append(vocab.unk_id)
            i += 1
    return ids


def tokenize_padded(vocab: SubwordVocabulary, word: str, n: int) -> PaddedSpan:
    ids = tokenize(vocab, word)
    if len(ids) > n:
        raise OverLengthError(word, len(ids), n)
    return PaddedSpan(tuple(ids) + (vocab.pad_id,) * (n - len(ids)), len(ids))


def detokenize(vocab: SubwordVocabulary, span: PaddedSpan | Sequence[int]) -> str:
    ids = span.ids if isinstance(span, PaddedSpan) else span
    return "".join(vocab.tokens[i] for i in ids if i != vocab.pad_id)
