"""Translation with a finetuned masked LM.

Two modes:

* generation: fill the ``n`` masked slots of the padded prompt independently
  and concatenate the non-PAD predictions;
* selection: re-rank the top-K candidates of a static embedding alignment by
  combining a softmax over their cosine scores with the LM loss of each
  candidate, ``score_i = w_i / ln(1 + loss_i)``.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .alignment import CandidateIndex, CandidateSet, LinearMapping
from .embeddings import EmbeddingMatrix
from .errors import ConfigError
from .mlm import MaskedLMModel, PromptTemplate, build_prompt
from .tokenizer import SubwordVocabulary, detokenize, tokenize, tokenize_padded

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RerankConfig:
    temperature: float = 0.1
    k: int = 10
    loss_floor: float = 1e-6

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not self.loss_floor > 0:
            raise ConfigError("loss_floor must be positive")


@dataclass(frozen=True)
class CandidateRecord:
    word: str
    cosine: float
    weight: float
    loss: float
    score: float


@dataclass
class RerankTrace:
    records: list[CandidateRecord]
    selected: int
    source: str = ""

    @property
    def selected_word(self) -> str:
        return self.records[self.selected].word

    def order(self) -> list[int]:
        """Candidate indices by descending score; ties keep cosine rank."""
        return sorted(range(len(self.records)), key=lambda i: -self.records[i].score)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "candidates": [
                {
                    "word": r.word,
                    "cosine": r.cosine,
                    "weight": r.weight,
                    "loss": r.loss if math.isfinite(r.loss) else None,
                    "score": r.score,
                }
                for r in self.records
            ],
            "selected": self.selected,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)


def _source_log_probs(model, vocab, template, source_word, n) -> np.ndarray:
    """Log-probabilities at the ``n`` masked positions, shape (n, r), float64."""
    span = tokenize_padded(vocab, source_word, n)
    prompt = build_prompt(vocab, template, span, n, model.cfg.max_len)
    with torch.no_grad():
        lp = model.log_probs(torch.as_tensor([prompt], dtype=torch.long))[0, -n:]
    return lp.double().numpy()


def generate_translation(model: MaskedLMModel, vocab: SubwordVocabulary, template: PromptTemplate,
                         source_word: str, n: int) -> str:
    lp = _source_log_probs(model, vocab, template, source_word, n)
    return detokenize(vocab, lp.argmax(axis=1).tolist())


def k_best_decodings(log_probs: np.ndarray, k: int) -> list[tuple[float, tuple[int, ...]]]:
    """The ``k`` highest-scoring id tuples when positions are independent.

    Score is the summed log-probability. Best-first search over rank vectors,
    starting from the all-argmax tuple.
    """
    n, r = log_probs.shape
    order = np.argsort(-log_probs, axis=1, kind="stable")
    sorted_lp = np.take_along_axis(log_probs, order, axis=1)
    k = min(k, r ** n)
    start = (0,) * n
    heap = [(-float(sorted_lp[:, 0].sum()), start)]
    seen = {start}
    out = []
    while heap and len(out) < k:
        neg, ranks = heapq.heappop(heap)
        out.append((-neg, tuple(int(order[p, ranks[p]]) for p in range(n))))
        for p in range(n):
            if ranks[p] + 1 < r:
                nxt = ranks[:p] + (ranks[p] + 1,) + ranks[p + 1 :]
                if nxt not in seen:
                    seen.add(nxt)
                    score = neg + float(sorted_lp[p, ranks[p]] - sorted_lp[p, ranks[p] + 1])
                    heapq.heappush(heap, (score, nxt))
    return out


def generate_ranked(model, vocab, template, source_word: str, n: int, k: int) -> list[str]:
    """Up to ``k`` distinct words from the best joint decodings, best first.

    Decodings that render to the same string (PAD placement) are merged. An
    all-PAD decoding stays in the list as "" so rank 1 always matches
    ``generate_translation``. The candidate pool is widened until ``k``
    distinct words are found or the pool stops growing.
    """
    lp = _source_log_probs(model, vocab, template, source_word, n)
    pool = k
    while True:
        words: list[str] = []
        decodings = k_best_decodings(lp, pool)
        for _, ids in decodings:
            w = detokenize(vocab, ids)
            if w not in words:
                words.append(w)
        if len(words) >= k or len(decodings) < pool:
            return words[:k]
        pool *= 4


def softmax_weights(scores: Sequence[float], temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise ConfigError("temperature must be positive")
    s = np.asarray(scores, dtype=np.float64) / temperature
    e = np.exp(s - s.max())
    return e / e.sum()


def candidate_loss(model, vocab, template, source_word: str, candidate_word: str, n: int) -> float:
    """Mean cross-entropy over the candidate's non-PAD sub-tokens.

    Candidates with more than ``n`` sub-tokens get ``inf``.
    """
    return ModelScorer(model, vocab, template, n)(source_word, candidate_word)


class ModelScorer:
    """Callable ``(source, candidate) -> loss`` backed by a finetuned model.

    The prompt only depends on the source word, so its masked-position
    log-probabilities are computed once and reused across candidates.
    """

    def __init__(self, model: MaskedLMModel, vocab: SubwordVocabulary, template: PromptTemplate, n: int):
        self.model, self.vocab, self.template, self.n = model, vocab, template, n
        self._cache_key = None
        self._cache = None

    def log_probs(self, source_word):
        if self._cache_key != source_word:
            self._cache = _source_log_probs(self.model, self.vocab, self.template, source_word, self.n)
            self._cache_key = source_word
        return self._cache

    def __call__(self, source_word: str, candidate_word: str) -> float:
        lp = self.log_probs(source_word)
        ids = tokenize(self.vocab, candidate_word)
        if len(ids) > self.n:
            return math.inf
        return float(-np.mean(lp[np.arange(len(ids)), ids]))


def combine_and_select(weights, losses, cfg: RerankConfig = RerankConfig(),
                       words=None, cosines=None, source: str = "") -> tuple[int, RerankTrace]:
    weights = np.asarray(weights, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if len(weights) == 0:
        raise ConfigError("empty candidate list")
    if len(weights) != len(losses):
        raise ConfigError("weights and losses differ in length")
    words = list(words) if words is not None else [str(i) for i in range(len(weights))]
    cosines = list(cosines) if cosines is not None else [math.nan] * len(weights)

    scores = []
    for w, l in zip(weights, losses):
        if math.isinf(l):
            scores.append(0.0)
        else:
            scores.append(float(w / math.log1p(max(l, cfg.loss_floor))))
    if all(math.isinf(l) for l in losses):
        warnings.warn(f"no candidate for {source!r} fits the span; falling back to cosine top-1")
    selected = int(np.argmax(scores))
    records = [
        CandidateRecord(str(wd), float(c), float(w), float(l), s)
        for wd, c, w, l, s in zip(words, cosines, weights, losses, scores)
    ]
    return selected, RerankTrace(records, selected, source)


def rerank(scorer: Callable[[str, str], float], mapping: LinearMapping, X: EmbeddingMatrix,
           Z: EmbeddingMatrix, source_word: str, cfg: RerankConfig = RerankConfig(),
           index: CandidateIndex | None = None) -> tuple[str, RerankTrace]:
    """Select a translation among the top-K aligned candidates.

    ``scorer`` maps ``(source, candidate)`` to an LM loss, normally a
    ModelScorer; ``index`` lets callers reuse mapped spaces across queries.
    """
    index = index or CandidateIndex(mapping, X, Z)
    cands: CandidateSet = index.query(source_word, cfg.k)
    weights = softmax_weights(cands.scores, cfg.temperature)
    losses = [scorer(source_word, c) for c in cands.candidates]
    c, trace = combine_and_select(weights, losses, cfg, cands.candidates, cands.scores, source_word)
    return cands.candidates[c], trace
