"""Toy masked language model, padded prompts, and prompt-based finetuning.

The model is a small pre-norm transformer encoder with learned absolute
positions. The MLM head reuses the token embedding table as its output
projection (plus a per-token bias), so a masked position's logits are
``E @ h + b``.

A padded prompt looks like::

    [CLS] <prefix> s_0 .. s_{n-1} <infix> [MASK] x n

where ``s`` is the source word padded to ``n`` sub-tokens. Training targets
for the ``n`` masks are the target word's sub-tokens followed by [PAD].
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import read_checkpoint, write_checkpoint
from .errors import ConfigError, OverLengthError, ParseError
from .tokenizer import PaddedSpan, SubwordVocabulary, tokenize, tokenize_padded

log = logging.getLogger(__name__)

DEFAULT_PREFIX = "The translation of the word"
DEFAULT_INFIX = "is"


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    heads: int = 4
    dim: int = 128
    ff_dim: int = 256
    max_len: int = 32
    seed: int = 0
    dtype: str = "float32"
    init_std: float = 0.05

    def __post_init__(self):
        for name in ("layers", "heads", "dim", "ff_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 2e-5
    batch_size: int = 64
    epochs: int = 5
    n: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.n < 1 or self.epochs < 0:
            raise ConfigError(f"invalid training config {self}")


@dataclass(frozen=True)
class PromptTemplate:
    """Prefix and infix text around the source span.

    Both strings are split on whitespace and each piece is segmented with
    the model vocabulary, so template words missing from the vocabulary
    degrade to sub-tokens or [UNK] rather than failing.
    """

    prefix: str = DEFAULT_PREFIX
    infix: str = DEFAULT_INFIX
    lang: str = ""

    @classmethod
    def from_file(cls, path) -> "PromptTemplate":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) < 2 or any(l.strip() for l in lines[2:]):
            raise ParseError(f"{path}: template file needs exactly two lines (prefix, infix)")
        return cls(prefix=lines[0].strip(), infix=lines[1].strip())

    def words(self) -> list[str]:
        return self.prefix.split() + self.infix.split()

    def render(self, vocab: SubwordVocabulary) -> tuple[list[int], list[int]]:
        def seg(text):
            return [i for w in text.split() for i in tokenize(vocab, w)]

        return seg(self.prefix), seg(self.infix)


def build_prompt(
    vocab: SubwordVocabulary,
    template: PromptTemplate,
    source_span: PaddedSpan,
    n: int,
    max_len: int | None = None,
) -> list[int]:
    if source_span.n != n:
        raise ConfigError(f"source span has length {source_span.n}, expected {n}")
    prefix, infix = template.render(vocab)
    ids = [vocab.cls_id, *prefix, *source_span.ids, *infix] + [vocab.mask_id] * n
    if max_len is not None and len(ids) > max_len:
        raise ConfigError(f"prompt length {len(ids)} exceeds model max_len {max_len}")
    return ids


def prompt_length(vocab: SubwordVocabulary, template: PromptTemplate, n: int) -> int:
    prefix, infix = template.render(vocab)
    return 1 + len(prefix) + len(infix) + 2 * n


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.dim
        self.heads = cfg.heads
        self.ln1 = nn.LayerNorm(d)
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, cfg.ff_dim)
        self.ff2 = nn.Linear(cfg.ff_dim, d)

    def forward(self, x):
        b, L, d = x.shape
        hd = d // self.heads
        h = self.ln1(x)
        q = self.q(h).view(b, L, self.heads, hd).transpose(1, 2)
        k = self.k(h).view(b, L, self.heads, hd).transpose(1, 2)
        v = self.v(h).view(b, L, self.heads, hd).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        ctx = (att @ v).transpose(1, 2).reshape(b, L, d)
        x = x + self.o(ctx)
        return x + self.ff2(F.gelu(self.ff1(self.ln2(x))))


class MaskedLMModel(nn.Module):
    def __init__(self, cfg: ModelConfig, vocab_size: int):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.tok_emb = nn.Parameter(torch.empty(vocab_size, cfg.dim))
        self.pos_emb = nn.Parameter(torch.empty(cfg.max_len, cfg.dim))
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.dim)
        self.out_bias = nn.Parameter(torch.zeros(vocab_size))
        self.to(cfg.torch_dtype)
        self._init_weights()

    def _init_weights(self):
        gen = torch.Generator().manual_seed(self.cfg.seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                elif ".ln" in name or name.startswith("ln_"):
                    p.fill_(1.0)
                else:
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * self.cfg.init_std)

    def hidden(self, ids: torch.Tensor) -> torch.Tensor:
        """Final-layer hidden states, shape (batch, length, dim)."""
        if ids.dim() == 1:
            ids = ids[None]
        L = ids.shape[1]
        if L > self.cfg.max_len:
            raise ConfigError(f"sequence length {L} exceeds max_len {self.cfg.max_len}")
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.vocab_size):
            raise ConfigError(f"token id out of range [0, {self.vocab_size})")
        x = self.tok_emb[ids] + self.pos_emb[:L]
        for layer in self.layers:
            x = layer(x)
        return self.ln_f(x)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """Logits over the vocabulary at every position."""
        return self.hidden(ids) @ self.tok_emb.T + self.out_bias

    def log_probs(self, ids) -> torch.Tensor:
        return torch.log_softmax(self(torch.as_tensor(ids, dtype=torch.long)), dim=-1)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    # -- persistence -------------------------------------------------------

    def save(self, path, vocab: SubwordVocabulary, extra: dict | None = None):
        header = {
            "format": "promptlex-mlm",
            "model_config": asdict(self.cfg),
            "vocab_size": self.vocab_size,
            "vocab_sha256": vocab.digest(),
        }
        if extra:
            header["extra"] = extra
        arrays = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        write_checkpoint(path, header, arrays, self.cfg.dtype)

    @classmethod
    def load(cls, path, vocab: SubwordVocabulary | None = None) -> "MaskedLMModel":
        meta, arrays = read_checkpoint(path)
        if meta.get("format") != "promptlex-mlm":
            raise ParseError(f"{path}: not a model checkpoint")
        if vocab is not None and meta["vocab_sha256"] != vocab.digest():
            raise ConfigError(f"{path}: checkpoint was trained with a different vocabulary")
        model = cls(ModelConfig(**meta["model_config"]), meta["vocab_size"])
        dtype = model.cfg.torch_dtype
        model.load_state_dict({k: torch.from_numpy(v).to(dtype) for k, v in arrays.items()})
        model.checkpoint_extra = meta.get("extra", {})
        return model


def forward(model: MaskedLMModel, tokens: Sequence[int]) -> np.ndarray:
    """Per-position probability distributions, shape (len(tokens), r)."""
    with torch.no_grad():
        lp = model.log_probs(torch.as_tensor([list(tokens)], dtype=torch.long))[0]
    return torch.exp(lp.double()).numpy()


def _mask_positions(vocab_mask_id: int, prompt: Sequence[int], n: int) -> list[int]:
    pos = [i for i, t in enumerate(prompt) if t == vocab_mask_id]
    if len(pos) != n:
        raise ConfigError(f"prompt has {len(pos)} [MASK] positions, expected {n}")
    return pos


def masked_log_probs(model, vocab, prompt, target_span: PaddedSpan) -> np.ndarray:
    """Log-probability of each target id at its masked position (float64, length n)."""
    pos = _mask_positions(vocab.mask_id, prompt, target_span.n)
    with torch.no_grad():
        lp = model.log_probs(torch.as_tensor([list(prompt)], dtype=torch.long))[0]
    picked = lp[torch.as_tensor(pos), torch.as_tensor(target_span.ids)]
    return picked.double().numpy()


def mlm_loss(model, vocab, prompt, target_span: PaddedSpan) -> float:
    """Mean cross-entropy over all ``n`` masked positions, PAD targets included."""
    return float(-masked_log_probs(model, vocab, prompt, target_span).mean())


def pseudo_likelihood(model, vocab, prompt, target_span: PaddedSpan) -> float:
    return float(math.exp(masked_log_probs(model, vocab, prompt, target_span).sum()))


def batch_loss(model: MaskedLMModel, prompts: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Differentiable mean CE over the trailing ``n`` mask positions of each prompt."""
    n = targets.shape[1]
    logits = model(prompts)[:, -n:, :]
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1))


def encode_pairs(vocab, template, pairs, n: int, max_len: int | None = None):
    """Turn (source, target) word pairs into prompt/target id arrays.

    Pairs where either word has more than ``n`` sub-tokens are dropped.
    Returns ``(prompts, targets, kept_pairs, dropped)``.
    """
    prompts, targets, kept = [], [], []
    dropped = 0
    for src, tgt in pairs:
        try:
            s = tokenize_padded(vocab, src, n)
            t = tokenize_padded(vocab, tgt, n)
        except OverLengthError:
            dropped += 1
            continue
        prompts.append(build_prompt(vocab, template, s, n, max_len))
        targets.append(t.ids)
        kept.append((src, tgt))
    return np.asarray(prompts, dtype=np.int64), np.asarray(targets, dtype=np.int64), kept, dropped


def finetune(
    model: MaskedLMModel,
    vocab: SubwordVocabulary,
    template: PromptTemplate,
    pairs,
    tcfg: TrainingConfig,
) -> tuple[MaskedLMModel, list[float]]:
    """Prompt-based finetuning with Adam on the padded MLM objective.

    Trains a copy of ``model``; the argument is left untouched. Returns the
    trained copy and the mean training loss of each epoch.
    """
    pairs = list(pairs)
    prompts, targets, kept, dropped = encode_pairs(vocab, template, pairs, tcfg.n, model.cfg.max_len)
    if dropped:
        log.info("dropped %d of %d pairs longer than n=%d sub-tokens", dropped, len(pairs), tcfg.n)
    if not kept:
        raise ConfigError("no usable training pairs")

    model = copy.deepcopy(model)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=tcfg.lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
    rng = np.random.default_rng(tcfg.seed)
    prompts_t = torch.from_numpy(prompts)
    targets_t = torch.from_numpy(targets)
    trace = []
    for _ in range(tcfg.epochs):
        order = torch.from_numpy(rng.permutation(len(kept)))
        total = 0.0
        for start in range(0, len(kept), tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            loss = batch_loss(model, prompts_t[idx], targets_t[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        trace.append(total / len(kept))
    model.eval()
    return model, trace


def word_vectors(model: MaskedLMModel, vocab: SubwordVocabulary, words, layer: str = "input"):
    """Per-word representations: the mean over the word's sub-tokens.

    ``input`` averages rows of the token embedding table; ``final`` feeds
    ``[CLS] pieces`` through the encoder and averages the last hidden states
    at the piece positions. Words containing [UNK] or too long for the model
    are skipped. Returns ``(kept_words, matrix, skipped_words)``.
    """
    if layer not in ("input", "final"):
        raise ConfigError(f"layer must be 'input' or 'final', got {layer!r}")
    kept, rows, skipped = [], [], []
    with torch.no_grad():
        for w in dict.fromkeys(words):
            ids = tokenize(vocab, w) if w else []
            if not ids or vocab.unk_id in ids or len(ids) + 1 > model.cfg.max_len:
                skipped.append(w)
                continue
            if layer == "input":
                vec = model.tok_emb[torch.as_tensor(ids)].mean(0)
            else:
                h = model.hidden(torch.as_tensor([vocab.cls_id, *ids]))[0]
                vec = h[1:].mean(0)
            kept.append(w)
            rows.append(vec.double().numpy())
    matrix = np.stack(rows) if rows else np.zeros((0, model.cfg.dim))
    return kept, matrix, skipped
