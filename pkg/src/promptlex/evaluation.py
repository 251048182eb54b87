"""Bilingual dictionaries, P@K scoring and the evaluation harnesses."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .alignment import CandidateIndex
from .errors import ConfigError, OverLengthError, ParseError
from .mlm import MaskedLMModel, finetune
from .tokenizer import tokenize
from .translate import RerankConfig, generate_ranked, rerank

log = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10, 50)


class BilingualDictionary:
    """Ordered, de-duplicated (source, target) pairs.

    A source word may appear with several targets; all of them count as
    gold translations.
    """

    def __init__(self, pairs: Iterable[tuple[str, str]], role: str = "train"):
        if role not in ("train", "test"):
            raise ConfigError(f"role must be 'train' or 'test', got {role!r}")
        self.role = role
        self.pairs: list[tuple[str, str]] = []
        self.duplicates = 0
        seen = set()
        for src, tgt in pairs:
            if (src, tgt) in seen:
                self.duplicates += 1
                continue
            seen.add((src, tgt))
            self.pairs.append((src, tgt))
        self.removed = 0

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def sources(self) -> list[str]:
        """Distinct source words in first-appearance order."""
        return list(dict.fromkeys(s for s, _ in self.pairs))

    def gold(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {}
        for s, t in self.pairs:
            out.setdefault(s, set()).add(t)
        return out

    def subset(self, indices: Sequence[int], role: str | None = None) -> "BilingualDictionary":
        return BilingualDictionary([self.pairs[i] for i in indices], role or self.role)

    def save(self, path):
        Path(path).write_text("".join(f"{s}\t{t}\n" for s, t in self.pairs), encoding="utf-8")


def load_dictionary(path, role: str = "train") -> BilingualDictionary:
    pairs = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.count("\t") != 1:
            raise ParseError(f"{path}: expected 'source<TAB>target'", line=lineno)
        src, tgt = (p.strip() for p in line.split("\t"))
        if not src or not tgt:
            raise ParseError(f"{path}: empty word", line=lineno)
        pairs.append((src, tgt))
    d = BilingualDictionary(pairs, role)
    if d.duplicates:
        log.info("%s: dropped %d duplicate pair(s)", path, d.duplicates)
    return d


def precision_at_k(ranked: Mapping[str, Sequence[str]], gold: Mapping[str, set], k: int) -> float:
    """Fraction of queries whose first ``k`` predictions contain any gold target."""
    if not ranked:
        raise ConfigError("no queries to evaluate")
    if k < 1:
        raise ConfigError("k must be >= 1")
    hits = 0
    for query, preds in ranked.items():
        golds = gold.get(query)
        if not golds:
            raise ConfigError(f"query {query!r} has no gold translation")
        hits += any(p in golds for p in list(preds)[:k])
    return hits / len(ranked)


def filter_shared_pairs(dictionary: BilingualDictionary, vocab, emb_src, emb_tgt, n: int) -> BilingualDictionary:
    """Keep pairs covered by both embedding vocabularies and segmentable into <= n known sub-tokens.

    The returned dictionary carries the number of dropped pairs in ``removed``.
    """
    def fits(word):
        ids = tokenize(vocab, word)
        return len(ids) <= n and vocab.unk_id not in ids

    kept = [(s, t) for s, t in dictionary if s in emb_src and t in emb_tgt and fits(s) and fits(t)]
    out = BilingualDictionary(kept, dictionary.role)
    out.removed = len(dictionary) - len(kept)
    if out.removed:
        log.info("shared-vocabulary filter removed %d of %d pairs", out.removed, len(dictionary))
    return out


@dataclass
class EvaluationReport:
    pairs_total: int
    skipped: dict = field(default_factory=lambda: {"overlength": 0, "oov": 0})
    precision: dict = field(default_factory=dict)
    base_precision: dict | None = None
    outcomes: list = field(default_factory=list)

    @property
    def pairs_skipped(self) -> int:
        return sum(self.skipped.values())

    @property
    def pairs_evaluated(self) -> int:
        return self.pairs_total - self.pairs_skipped

    @property
    def queries(self) -> int:
        return len(self.outcomes)

    def to_dict(self, with_outcomes: bool = True) -> dict:
        d = {
            "pairs_total": self.pairs_total,
            "pairs_skipped": dict(self.skipped),
            "pairs_evaluated": self.pairs_evaluated,
            "queries": self.queries,
            "precision": {str(k): v for k, v in self.precision.items()},
        }
        if self.base_precision is not None:
            d["base_precision"] = {str(k): v for k, v in self.base_precision.items()}
        if with_outcomes:
            d["outcomes"] = self.outcomes
        return d


def _group(test_dict: BilingualDictionary):
    """(source, gold set, pair count) per distinct source word."""
    gold = test_dict.gold()
    counts: dict[str, int] = {}
    for s, _ in test_dict:
        counts[s] = counts.get(s, 0) + 1
    return [(s, gold[s], counts[s]) for s in test_dict.sources()]


def _score(report: EvaluationReport, ranked: dict, gold: dict, ks, base_ranked=None):
    if not ranked:
        return report
    report.precision = {k: precision_at_k(ranked, gold, k) for k in ks}
    if base_ranked is not None:
        report.base_precision = {k: precision_at_k(base_ranked, gold, k) for k in ks}
    return report


def evaluate_retrieval(mapping, X, Z, test_dict: BilingualDictionary,
                       ks: Sequence[int] = DEFAULT_KS) -> EvaluationReport:
    """P@K of plain cosine retrieval in the shared space."""
    ks = sorted(set(ks))
    report = EvaluationReport(len(test_dict))
    index = CandidateIndex(mapping, X, Z)
    depth = min(max(ks), len(Z))
    ranked, gold = {}, {}
    for src, golds, count in _group(test_dict):
        if src not in X:
            report.skipped["oov"] += count
            continue
        cands = index.query(src, depth).candidates
        ranked[src] = cands
        gold[src] = golds
        report.outcomes.append({"source": src, "gold": sorted(golds), "prediction": cands[0],
                                "correct": cands[0] in golds})
    return _score(report, ranked, gold, ks)


def evaluate_generator(model, vocab, template, test_dict: BilingualDictionary, n: int,
                       ks: Sequence[int] = DEFAULT_KS) -> EvaluationReport:
    """P@K of generated translations (exact string match against any gold).

    Rank 1 is the per-position argmax decoding; deeper ranks come from the
    next-best joint decodings.
    """
    ks = sorted(set(ks))
    report = EvaluationReport(len(test_dict))
    ranked, gold = {}, {}
    for src, golds, count in _group(test_dict):
        ids = tokenize(vocab, src)
        if len(ids) > n:
            report.skipped["overlength"] += count
            continue
        if vocab.unk_id in ids:
            report.skipped["oov"] += count
            continue
        preds = generate_ranked(model, vocab, template, src, n, max(ks))
        ranked[src] = preds
        gold[src] = golds
        report.outcomes.append({
            "source": src,
            "gold": sorted(golds),
            "prediction": preds[0],
            "ranked": preds,
            "correct": preds[0] in golds,
        })
    return _score(report, ranked, gold, ks)


def evaluate_reranker(scorer, mapping, X, Z, test_dict: BilingualDictionary, cfg=None,
                      ks: Sequence[int] = DEFAULT_KS) -> EvaluationReport:
    """P@K of re-ranked candidate lists alongside the cosine-order baseline.

    Both lists hold the same top-K candidates, so P@K for K >= cfg.k is
    identical between them by construction.
    """
    cfg = cfg or RerankConfig()
    ks = sorted(set(ks))
    report = EvaluationReport(len(test_dict))
    index = CandidateIndex(mapping, X, Z)
    ranked, base, gold = {}, {}, {}
    for src, golds, count in _group(test_dict):
        if src not in X:
            report.skipped["oov"] += count
            continue
        try:
            word, trace = rerank(scorer, mapping, X, Z, src, cfg, index=index)
        except OverLengthError:
            report.skipped["overlength"] += count
            continue
        words = [r.word for r in trace.records]
        ranked[src] = [words[i] for i in trace.order()]
        base[src] = words
        gold[src] = golds
        report.outcomes.append({
            "source": src,
            "gold": sorted(golds),
            "prediction": word,
            "base_prediction": words[0],
            "correct": word in golds,
            "trace": trace.to_dict(),
        })
    return _score(report, ranked, gold, ks, base)


@dataclass(frozen=True)
class FewShotConfig:
    shots: tuple[int, ...] = (1, 3, 10)
    samples: int = 5
    seeds: int = 5
    base_seed: int = 0

    def __post_init__(self):
        if not self.shots or min(self.shots) < 1 or self.samples < 1 or self.seeds < 1:
            raise ConfigError(f"invalid few-shot config {self}")


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _few_shot_job(args):
    mcfg, tcfg, vocab, template, train_pairs, test_pairs = args
    model = MaskedLMModel(mcfg, len(vocab))
    model, _ = finetune(model, vocab, template, train_pairs, tcfg)
    report = evaluate_generator(model, vocab, template, BilingualDictionary(test_pairs, "test"), tcfg.n, ks=(1,))
    return report.precision.get(1, 0.0)


def few_shot_run(full_train: BilingualDictionary, test_dict: BilingualDictionary, fs_cfg: FewShotConfig,
                 tcfg, mcfg, vocab, template, jobs: int = 1) -> list[dict]:
    """Train and evaluate the generator on random N-pair subsets.

    For every N, ``samples`` subsets are drawn and ``seeds`` models trained
    per subset (model init and batch order both vary with the seed). Returns
    one row per N with the mean and population stddev of test P@1 and the
    individual runs in (sample, seed) order.
    """
    if max(fs_cfg.shots) > len(full_train):
        raise ConfigError(f"N={max(fs_cfg.shots)} exceeds training dictionary size {len(full_train)}")

    jobs_args, keys = [], []
    for n_shot in fs_cfg.shots:
        for sample in range(fs_cfg.samples):
            rng = np.random.default_rng([fs_cfg.base_seed, n_shot, sample])
            idx = np.sort(rng.choice(len(full_train), size=n_shot, replace=False))
            subset = [full_train[i] for i in idx]
            for s in range(fs_cfg.seeds):
                seed = _derive_seed(fs_cfg.base_seed, n_shot, sample, s)
                jobs_args.append((
                    replace(mcfg, seed=seed),
                    replace(tcfg, seed=seed),
                    vocab, template, subset, list(test_dict),
                ))
                keys.append((n_shot, sample, s, [p[0] for p in subset]))

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_few_shot_job, jobs_args))
    else:
        results = [_few_shot_job(a) for a in jobs_args]

    table = []
    for n_shot in fs_cfg.shots:
        runs = [
            {"sample": sample, "seed": s, "train_sources": srcs, "p_at_1": p}
            for (n_, sample, s, srcs), p in zip(keys, results)
            if n_ == n_shot
        ]
        vals = np.array([r["p_at_1"] for r in runs])
        table.append({"n": n_shot, "mean": float(vals.mean()), "std": float(vals.std()), "runs": runs})
    return table
