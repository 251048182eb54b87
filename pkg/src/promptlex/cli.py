"""Command-line entry point: ``promptlex <command> [options]``.

Every command prints (or writes with ``--report``) a JSON report that embeds
a run manifest: the command, the fully resolved configuration, sha256
digests of the input files, the seed and the package version. Identical
manifests give byte-identical reports.

Exit codes: 0 success, 1 nothing usable to evaluate, 2 input or config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .alignment import AlignmentConfig, CandidateIndex, LinearMapping, self_training_align
from .embeddings import EmbeddingMatrix, load_word2vec_text, normalize, store_word2vec_text
from .errors import ConfigError, ParseError, PromptlexError
from .evaluation import (
    DEFAULT_KS,
    FewShotConfig,
    evaluate_generator,
    evaluate_reranker,
    evaluate_retrieval,
    few_shot_run,
    load_dictionary,
    precision_at_k,
)
from .mlm import (
    MaskedLMModel,
    ModelConfig,
    PromptTemplate,
    TrainingConfig,
    encode_pairs,
    finetune,
    prompt_length,
    word_vectors,
)
from .tokenizer import SubwordVocabulary, tokenize, train_vocabulary
from .translate import ModelScorer, RerankConfig, generate_ranked, rerank

log = logging.getLogger("promptlex")

EXIT_OK, EXIT_EMPTY, EXIT_INPUT = 0, 1, 2

# options that steer output location or parallelism, never results; kept out of the config echo
_NOT_CONFIG = {"func", "report", "verbose", "jobs"}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def manifest(args, inputs: dict, **resolved) -> dict:
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}
    config.update({k: _jsonable(v) for k, v in resolved.items()})
    return {
        "command": args.command,
        "config": config,
        "inputs": {k: _sha256(p) for k, p in sorted(inputs.items()) if p is not None},
        "seed": getattr(args, "seed", None),
        "version": __version__,
    }


def emit(report: dict, path=None):
    text = json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _read_words(path) -> list[str]:
    words = [l.strip() for l in Path(path).read_text(encoding="utf-8").splitlines()]
    return list(dict.fromkeys(w for w in words if w))


def _template(args, model=None) -> PromptTemplate:
    if getattr(args, "template", None):
        return PromptTemplate.from_file(args.template)
    extra = getattr(model, "checkpoint_extra", {}) if model is not None else {}
    if "template" in extra:
        return PromptTemplate(**extra["template"])
    return PromptTemplate()


def _n(args, model) -> int:
    if getattr(args, "n", None):
        return args.n
    n = getattr(model, "checkpoint_extra", {}).get("n")
    if n is None:
        raise ConfigError("span length unknown: pass --n or use a checkpoint written by 'finetune'")
    return int(n)


def _load_spaces(args, mapping: LinearMapping):
    X = load_word2vec_text(args.src_emb)
    Z = load_word2vec_text(args.tgt_emb)
    if mapping.config.get("normalize", True):
        X, Z = normalize(X), normalize(Z)
    return X, Z


def _model_config(args) -> ModelConfig:
    return ModelConfig(layers=args.layers, heads=args.heads, dim=args.dim, ff_dim=args.ff_dim,
                       max_len=args.max_len, seed=args.seed, dtype=args.dtype, init_std=args.init_std)


def _training_config(args) -> TrainingConfig:
    return TrainingConfig(lr=args.lr, batch_size=args.batch, epochs=args.epochs, n=args.n, seed=args.seed)


# -- commands ----------------------------------------------------------------


def cmd_vocab(args) -> int:
    words = Path(args.corpus).read_text(encoding="utf-8").split()
    template = PromptTemplate.from_file(args.template) if args.template else PromptTemplate()
    reserved = () if args.no_reserve else tuple(template.words())
    vocab = train_vocabulary(words, args.size, reserved)
    vocab.save(args.out)
    emit({
        "manifest": manifest(args, {"corpus": args.corpus, "template": args.template}, reserved=list(reserved)),
        "size": len(vocab),
        "corpus_words": len(words),
        "vocab_sha256": vocab.digest(),
    }, args.report)
    return EXIT_OK


def cmd_align(args) -> int:
    X = load_word2vec_text(args.src_emb)
    Z = load_word2vec_text(args.tgt_emb)
    if args.normalize:
        X, Z = normalize(X), normalize(Z)
    train = load_dictionary(args.train_dict, "train")
    cfg = AlignmentConfig(
        max_iterations=args.iters, stop_delta=args.stop_delta, retrieval=args.retrieval, csls_k=args.csls_k,
        whiten=args.whiten, reweight_exponent=args.reweight, reduce_dim=args.reduce_dim,
        self_training=args.self_training, vocab_cutoff=args.vocab_cutoff,
    )
    mapping = self_training_align(X, Z, train, cfg)
    mapping.config["normalize"] = args.normalize
    mapping.save(args.out)
    report = {
        "manifest": manifest(args, {"src_emb": args.src_emb, "tgt_emb": args.tgt_emb,
                                    "train_dict": args.train_dict, "test_dict": args.test_dict},
                             alignment=asdict(cfg)),
        "history": mapping.history,
        "train_pairs": len(train),
    }
    if args.test_dict:
        rep = evaluate_retrieval(mapping, X, Z, load_dictionary(args.test_dict, "test"), args.ks)
        report["evaluation"] = rep.to_dict(with_outcomes=False)
    emit(report, args.report)
    return EXIT_OK


def cmd_finetune(args) -> int:
    vocab = SubwordVocabulary.load(args.vocab)
    train = load_dictionary(args.train_dict, "train")
    template = _template(args)
    mcfg = _model_config(args)
    tcfg = _training_config(args)
    plen = prompt_length(vocab, template, tcfg.n)
    if plen > mcfg.max_len:
        raise ConfigError(f"prompt length {plen} exceeds --max-len {mcfg.max_len}")
    _, _, kept, dropped = encode_pairs(vocab, template, train, tcfg.n, mcfg.max_len)
    model = MaskedLMModel(mcfg, len(vocab))
    model, trace = finetune(model, vocab, template, train, tcfg)
    model.save(args.out, vocab, extra={"n": tcfg.n, "template": {"prefix": template.prefix,
                                                                 "infix": template.infix}})
    emit({
        "manifest": manifest(args, {"vocab": args.vocab, "train_dict": args.train_dict, "template": args.template},
                             model_config=asdict(mcfg), training_config=asdict(tcfg), prompt_length=plen,
                             prefix=template.prefix, infix=template.infix),
        "pairs_used": len(kept),
        "pairs_dropped": dropped,
        "loss_trace": trace,
        "parameters": model.num_parameters(),
    }, args.report)
    return EXIT_OK


def cmd_generate(args) -> int:
    vocab = SubwordVocabulary.load(args.vocab)
    model = MaskedLMModel.load(args.model, vocab)
    template = _template(args, model)
    n = _n(args, model)
    lines, skipped = [], {"overlength": 0, "oov": 0}
    for w in _read_words(args.words):
        ids = tokenize(vocab, w)
        if vocab.unk_id in ids:
            skipped["oov"] += 1
        elif len(ids) > n:
            skipped["overlength"] += 1
        else:
            lines.append("\t".join([w, *generate_ranked(model, vocab, template, w, n, args.k)]))
    Path(args.out).write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    emit({
        "manifest": manifest(args, {"vocab": args.vocab, "model": args.model, "words": args.words,
                                    "template": args.template}, n=n),
        "generated": len(lines),
        "skipped": skipped,
    }, args.report)
    return EXIT_OK if lines else EXIT_EMPTY


def cmd_rerank(args) -> int:
    vocab = SubwordVocabulary.load(args.vocab)
    model = MaskedLMModel.load(args.model, vocab)
    template = _template(args, model)
    n = _n(args, model)
    mapping = LinearMapping.load(args.mapping)
    X, Z = _load_spaces(args, mapping)
    cfg = RerankConfig(temperature=args.temperature, k=args.k)
    scorer = ModelScorer(model, vocab, template, n)
    index = CandidateIndex(mapping, X, Z)
    lines, traces, skipped = [], [], {"overlength": 0, "oov": 0}
    for w in _read_words(args.words):
        if w not in X:
            skipped["oov"] += 1
            continue
        try:
            _, trace = rerank(scorer, mapping, X, Z, w, cfg, index=index)
        except PromptlexError as exc:
            log.info("skipping %r: %s", w, exc)
            skipped["overlength"] += 1
            continue
        lines.append("\t".join([w, *(trace.records[i].word for i in trace.order())]))
        traces.append(trace.to_dict())
    Path(args.out).write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    emit({
        "manifest": manifest(args, {"vocab": args.vocab, "model": args.model, "mapping": args.mapping,
                                    "src_emb": args.src_emb, "tgt_emb": args.tgt_emb, "words": args.words,
                                    "template": args.template},
                             n=n, rerank=asdict(cfg)),
        "traces": traces,
        "skipped": skipped,
    }, args.report)
    return EXIT_OK if lines else EXIT_EMPTY


def _load_predictions(path) -> dict[str, list[str]]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if not parts[0].strip():
            raise ParseError(f"{path}: empty source word", line=lineno)
        out[parts[0].strip()] = [p.strip() for p in parts[1:] if p.strip()]
    return out


def cmd_evaluate(args) -> int:
    gold_dict = load_dictionary(args.gold, "test")
    ks = sorted(set(args.ks))
    inputs = {"gold": args.gold, "predictions": args.predictions, "model": args.model, "vocab": args.vocab,
              "mapping": args.mapping, "src_emb": args.src_emb, "tgt_emb": args.tgt_emb,
              "template": args.template}
    if args.predictions:
        preds = _load_predictions(args.predictions)
        gold = gold_dict.gold()
        # a gold source without a prediction line counts as a miss
        ranked = {s: preds.get(s, []) for s in gold}
        report = {
            "pairs_total": len(gold_dict),
            "pairs_skipped": {"overlength": 0, "oov": 0},
            "pairs_evaluated": len(gold_dict),
            "queries": len(ranked),
            "precision": {str(k): precision_at_k(ranked, gold, k) for k in ks},
        }
        mode = "predictions"
    else:
        if not (args.model and args.vocab):
            raise ConfigError("pass --predictions, or --model and --vocab")
        vocab = SubwordVocabulary.load(args.vocab)
        model = MaskedLMModel.load(args.model, vocab)
        template = _template(args, model)
        n = _n(args, model)
        if args.mapping:
            if not (args.src_emb and args.tgt_emb):
                raise ConfigError("--mapping needs --src-emb and --tgt-emb")
            mapping = LinearMapping.load(args.mapping)
            X, Z = _load_spaces(args, mapping)
            cfg = RerankConfig(temperature=args.temperature, k=args.k)
            rep = evaluate_reranker(ModelScorer(model, vocab, template, n), mapping, X, Z, gold_dict, cfg, ks)
            mode = "rerank"
        else:
            rep = evaluate_generator(model, vocab, template, gold_dict, n, ks)
            mode = "generate"
        report = rep.to_dict(with_outcomes=args.outcomes)
    report["manifest"] = manifest(args, inputs, mode=mode)
    emit(report, args.report)
    return EXIT_OK if report["precision"] else EXIT_EMPTY


def cmd_fewshot(args) -> int:
    vocab = SubwordVocabulary.load(args.vocab)
    train = load_dictionary(args.train_dict, "train")
    test = load_dictionary(args.test_dict, "test")
    template = _template(args)
    mcfg = _model_config(args)
    tcfg = _training_config(args)
    fs = FewShotConfig(shots=tuple(args.shots), samples=args.samples, seeds=args.seeds, base_seed=args.seed)
    table = few_shot_run(train, test, fs, tcfg, mcfg, vocab, template, jobs=args.jobs)
    emit({
        "manifest": manifest(args, {"vocab": args.vocab, "train_dict": args.train_dict,
                                    "test_dict": args.test_dict, "template": args.template},
                             model_config=asdict(mcfg), training_config=asdict(tcfg), fewshot=asdict(fs)),
        "runs": table,
    }, args.report)
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    vocab = SubwordVocabulary.load(args.vocab)
    model = MaskedLMModel.load(args.model, vocab)
    words, matrix, skipped = word_vectors(model, vocab, _read_words(args.words), args.layer)
    if words:
        store_word2vec_text(EmbeddingMatrix(words, matrix), args.out)
    emit({
        "manifest": manifest(args, {"vocab": args.vocab, "model": args.model, "words": args.words}),
        "exported": len(words),
        "skipped": len(skipped),
        "skipped_words": skipped,
    }, args.report)
    return EXIT_OK if words else EXIT_EMPTY


# -- parser ------------------------------------------------------------------


def _add_model_args(p):
    d = ModelConfig()
    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int, default=d.layers)
    g.add_argument("--heads", type=int, default=d.heads)
    g.add_argument("--dim", type=int, default=d.dim)
    g.add_argument("--ff-dim", type=int, default=d.ff_dim)
    g.add_argument("--max-len", type=int, default=d.max_len)
    g.add_argument("--init-std", type=float, default=d.init_std)
    g.add_argument("--dtype", choices=("float32", "float64"), default=d.dtype)


def _add_training_args(p):
    d = TrainingConfig()
    g = p.add_argument_group("training")
    g.add_argument("--n", type=int, default=d.n, help="masked span length in sub-tokens")
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--batch", type=int, default=d.batch_size)
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--template", type=Path, help="two-line file: prefix, then infix")


def _add_rerank_args(p):
    d = RerankConfig()
    p.add_argument("--k", type=int, default=d.k, help="number of retrieved candidates")
    p.add_argument("--temperature", type=float, default=d.temperature)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptlex", description="Word translation with aligned embeddings and prompted masked LMs."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        p.add_argument("--report", type=Path, help="write the JSON report here instead of stdout")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = command("vocab", cmd_vocab, "train a sub-word vocabulary from a whitespace-separated corpus")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--template", type=Path, help="reserve this template's words (default: built-in prompt)")
    p.add_argument("--no-reserve", action="store_true", help="do not reserve any template words")

    a = AlignmentConfig()
    p = command("align", cmd_align, "fit a linear mapping between two embedding spaces")
    p.add_argument("--src-emb", type=Path, required=True)
    p.add_argument("--tgt-emb", type=Path, required=True)
    p.add_argument("--train-dict", type=Path, required=True)
    p.add_argument("--test-dict", type=Path, help="also report retrieval P@K on these pairs")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--self-training", type=_bool, default=a.self_training)
    p.add_argument("--iters", type=int, default=a.max_iterations)
    p.add_argument("--stop-delta", type=float, default=a.stop_delta)
    p.add_argument("--retrieval", choices=("cosine", "csls"), default=a.retrieval)
    p.add_argument("--csls-k", type=int, default=a.csls_k)
    p.add_argument("--whiten", action="store_true")
    p.add_argument("--reweight", type=float, default=a.reweight_exponent)
    p.add_argument("--reduce-dim", type=int, default=a.reduce_dim)
    p.add_argument("--vocab-cutoff", type=int, default=a.vocab_cutoff)
    p.add_argument("--normalize", type=_bool, default=True, help="unit-length, centre, unit-length first")
    p.add_argument("--ks", type=int, nargs="+", default=list(DEFAULT_KS))

    p = command("finetune", cmd_finetune, "prompt-finetune a fresh masked LM on a training dictionary")
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--train-dict", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_training_args(p)
    _add_model_args(p)

    p = command("generate", cmd_generate, "generate ranked translations for a word list")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--words", type=Path, required=True, help="one source word per line")
    p.add_argument("--out", type=Path, required=True, help="TSV: source, then ranked predictions")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--n", type=int, help="span length (default: from the checkpoint)")
    p.add_argument("--template", type=Path)

    p = command("rerank", cmd_rerank, "re-rank retrieved candidates with the masked LM")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--mapping", type=Path, required=True)
    p.add_argument("--src-emb", type=Path, required=True)
    p.add_argument("--tgt-emb", type=Path, required=True)
    p.add_argument("--words", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="TSV: source, then re-ranked candidates")
    p.add_argument("--n", type=int)
    p.add_argument("--template", type=Path)
    _add_rerank_args(p)

    p = command("evaluate", cmd_evaluate, "P@K against a gold dictionary")
    p.add_argument("--gold", type=Path, required=True)
    p.add_argument("--predictions", type=Path, help="TSV of ranked predictions")
    p.add_argument("--model", type=Path)
    p.add_argument("--vocab", type=Path)
    p.add_argument("--mapping", type=Path, help="with --model: evaluate re-ranking instead of generation")
    p.add_argument("--src-emb", type=Path)
    p.add_argument("--tgt-emb", type=Path)
    p.add_argument("--n", type=int)
    p.add_argument("--template", type=Path)
    p.add_argument("--ks", type=int, nargs="+", default=list(DEFAULT_KS))
    p.add_argument("--outcomes", action="store_true", help="include per-query outcomes")
    _add_rerank_args(p)

    f = FewShotConfig()
    p = command("fewshot", cmd_fewshot, "few-shot grid: N-pair subsets x samples x seeds")
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--train-dict", type=Path, required=True)
    p.add_argument("--test-dict", type=Path, required=True)
    p.add_argument("--shots", type=int, nargs="+", default=list(f.shots))
    p.add_argument("--samples", type=int, default=f.samples)
    p.add_argument("--seeds", type=int, default=f.seeds)
    p.add_argument("--jobs", type=int, default=1)
    _add_training_args(p)
    _add_model_args(p)

    p = command("export-embeddings", cmd_export_embeddings, "write model word representations as word2vec text")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--words", type=Path, required=True)
    p.add_argument("--layer", choices=("input", "final"), default="input")
    p.add_argument("--out", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PromptlexError, OSError, ValueError) as exc:
        print(f"promptlex {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
