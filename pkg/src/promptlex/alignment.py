"""Cross-lingual embedding alignment.

Both spaces are mapped into a shared space by a pair of linear maps
``(wx, wz)``; a row vector ``x`` maps to ``x @ wx.T``. The pure orthogonal
configuration keeps ``wz`` at the identity, so the shared space is the
target space.

``self_training_align`` alternates fitting a mapping and re-inducing the
training dictionary from mutual nearest neighbours in the shared space.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import read_checkpoint, write_checkpoint
from .embeddings import EmbeddingMatrix
from .errors import ConfigError, ParseError, UnknownWordError

log = logging.getLogger(__name__)

WHITEN_EPS = 1e-8


@dataclass(frozen=True)
class AlignmentConfig:
    max_iterations: int = 10
    stop_delta: float = 1e-6
    retrieval: str = "cosine"
    csls_k: int = 10
    whiten: bool = False
    reweight_exponent: float = 0.0
    reduce_dim: int | None = None
    self_training: bool = True
    vocab_cutoff: int = 20000

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.retrieval not in ("cosine", "csls"):
            raise ConfigError(f"retrieval must be 'cosine' or 'csls', got {self.retrieval!r}")
        if self.csls_k < 1:
            raise ConfigError("csls_k must be >= 1")
        if self.reduce_dim is not None and self.reduce_dim < 1:
            raise ConfigError("reduce_dim must be >= 1")
        if self.vocab_cutoff < 1:
            raise ConfigError("vocab_cutoff must be >= 1")


@dataclass
class LinearMapping:
    wx: np.ndarray
    wz: np.ndarray
    config: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def map_source(self, m) -> np.ndarray:
        return np.asarray(m, dtype=np.float64) @ self.wx.T

    def map_target(self, m) -> np.ndarray:
        return np.asarray(m, dtype=np.float64) @ self.wz.T

    def save(self, path):
        header = {
            "format": "promptlex-mapping",
            "dim": int(self.wx.shape[1]),
            "out_dim": int(self.wx.shape[0]),
            "config": self.config,
            "history": self.history,
        }
        write_checkpoint(path, header, {"wx": self.wx, "wz": self.wz}, "float64")

    @classmethod
    def load(cls, path) -> "LinearMapping":
        meta, arrays = read_checkpoint(path)
        if meta.get("format") != "promptlex-mapping":
            raise ParseError(f"{path}: not a mapping checkpoint")
        return cls(arrays["wx"], arrays["wz"], meta.get("config", {}), meta.get("history", []))


@dataclass(frozen=True)
class CandidateSet:
    source_word: str
    candidates: tuple[str, ...]
    scores: tuple[float, ...]

    def __len__(self):
        return len(self.candidates)


def resolve_pairs(X: EmbeddingMatrix, Z: EmbeddingMatrix, pairs):
    """Row indices of the dictionary pairs present in both vocabularies."""
    src, tgt = [], []
    for s, t in pairs:
        i, j = X.index.get(s), Z.index.get(t)
        if i is not None and j is not None:
            src.append(i)
            tgt.append(j)
    return np.asarray(src, dtype=np.int64), np.asarray(tgt, dtype=np.int64)


def _check_inputs(X, Z, src_idx):
    if X.dim != Z.dim:
        raise ConfigError(f"dimension mismatch: {X.dim} vs {Z.dim}")
    if len(src_idx) == 0:
        raise ConfigError("no dictionary pairs resolvable in both vocabularies (0 resolvable)")
    if len(src_idx) < X.dim:
        warnings.warn(
            f"only {len(src_idx)} resolvable pairs for dim {X.dim}; mapping is underdetermined"
        )


def _procrustes(xd: np.ndarray, zd: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(zd.T @ xd)
    if s[-1] <= s[0] * 1e-12:
        warnings.warn("rank-deficient cross-covariance in Procrustes solve")
    return u @ vt


def solve_procrustes(X: EmbeddingMatrix, Z: EmbeddingMatrix, dictionary) -> LinearMapping:
    """Orthogonal ``wx`` maximizing ``sum_i <wx x_i, z_i>`` over dictionary pairs; ``wz = I``."""
    src_idx, tgt_idx = resolve_pairs(X, Z, dictionary)
    _check_inputs(X, Z, src_idx)
    xd = X.vectors[src_idx].astype(np.float64)
    zd = Z.vectors[tgt_idx].astype(np.float64)
    return LinearMapping(_procrustes(xd, zd), np.eye(Z.dim))


def _whitening(m: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of ``m.T @ m``."""
    cov = m.T @ m
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= WHITEN_EPS * max(vals.max(), 1.0):
        warnings.warn("singular whitening covariance; regularizing with 1e-8 * I")
        vals = vals + WHITEN_EPS
    return (vecs / np.sqrt(vals)) @ vecs.T


def _fit(xd: np.ndarray, zd: np.ndarray, cfg: AlignmentConfig, dim: int):
    """Vecmap-style mapping: whiten, orthogonal map, re-weight, de-whiten, reduce.

    Works in row-vector form (``x @ ax``) and returns ``(wx, wz)`` in the
    column convention of LinearMapping.
    """
    if cfg.whiten:
        wx1, wz1 = _whitening(xd), _whitening(zd)
    else:
        wx1 = wz1 = np.eye(dim)
    u, s, vt = np.linalg.svd((xd @ wx1).T @ (zd @ wz1))
    v = vt.T
    ax = wx1 @ u
    az = wz1 @ v
    if cfg.reweight_exponent:
        ax = ax * s ** cfg.reweight_exponent
        az = az * s ** cfg.reweight_exponent
    if cfg.whiten:
        # de-whiten each side in its own space
        ax = ax @ u.T @ np.linalg.inv(wx1) @ u
        az = az @ v.T @ np.linalg.inv(wz1) @ v
    if cfg.reduce_dim is not None and cfg.reduce_dim < dim:
        ax = ax[:, : cfg.reduce_dim]
        az = az[:, : cfg.reduce_dim]
    else:
        # express the shared space in target coordinates
        ax = ax @ vt
        az = az @ vt
    return ax.T, az.T


def vecmap_refine(X: EmbeddingMatrix, Z: EmbeddingMatrix, dictionary, config: AlignmentConfig) -> LinearMapping:
    src_idx, tgt_idx = resolve_pairs(X, Z, dictionary)
    _check_inputs(X, Z, src_idx)
    xd = X.vectors[src_idx].astype(np.float64)
    zd = Z.vectors[tgt_idx].astype(np.float64)
    wx, wz = _fit(xd, zd, config, X.dim)
    return LinearMapping(wx, wz, asdict(config))


def _unit(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return m / norms


CHUNK = 2048


def _knn_mean(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    """Mean of each row of ``a``'s ``k`` highest cosines against ``b``."""
    k = min(k, len(b))
    out = np.empty(len(a))
    for i in range(0, len(a), CHUNK):
        sims = a[i : i + CHUNK] @ b.T
        out[i : i + CHUNK] = np.mean(-np.partition(-sims, k - 1, axis=1)[:, :k], axis=1)
    return out


def _best_match(a: np.ndarray, b: np.ndarray, ra=None, rb=None):
    """Argmax and max over ``b`` for each row of ``a`` (CSLS when radii are given)."""
    idx = np.empty(len(a), dtype=np.int64)
    val = np.empty(len(a))
    for i in range(0, len(a), CHUNK):
        sims = a[i : i + CHUNK] @ b.T
        if ra is not None:
            sims = 2 * sims - ra[i : i + CHUNK, None] - rb[None, :]
        idx[i : i + CHUNK] = np.argmax(sims, axis=1)
        val[i : i + CHUNK] = sims[np.arange(len(sims)), idx[i : i + CHUNK]]
    return idx, val


def _induce(xm: np.ndarray, zm: np.ndarray, cfg: AlignmentConfig):
    """Mutual nearest neighbours among the first ``vocab_cutoff`` rows of each side.

    Returns ``(src_idx, tgt_idx, objective)``; the objective is the mean
    best retrieval score of the source rows.
    """
    xs = xm[: cfg.vocab_cutoff]
    zs = zm[: cfg.vocab_cutoff]
    rx = rz = None
    if cfg.retrieval == "csls":
        rx = _knn_mean(xs, zs, cfg.csls_k)
        rz = _knn_mean(zs, xs, cfg.csls_k)
    fwd, best = _best_match(xs, zs, rx, rz)
    bwd, _ = _best_match(zs, xs, rz, rx)
    src = np.flatnonzero(bwd[fwd] == np.arange(len(xs)))
    return src, fwd[src], float(np.mean(best))


def self_training_align(X: EmbeddingMatrix, Z: EmbeddingMatrix, seed_dict, config: AlignmentConfig) -> LinearMapping:
    """Fit on the seed dictionary, then alternate dictionary induction and refitting.

    The induced dictionary is the seed pairs plus the mutual nearest
    neighbours in the current shared space. Stops when the objective gains
    less than ``stop_delta`` or after ``max_iterations`` fits, and returns
    the mapping with the best objective seen.
    """
    seed_src, seed_tgt = resolve_pairs(X, Z, seed_dict)
    _check_inputs(X, Z, seed_src)
    xv = X.vectors.astype(np.float64)
    zv = Z.vectors.astype(np.float64)

    src_idx, tgt_idx = seed_src, seed_tgt
    best = None
    best_obj = -np.inf
    history = []
    for it in range(config.max_iterations):
        wx, wz = _fit(xv[src_idx], zv[tgt_idx], config, X.dim)
        if not config.self_training:
            best = (wx, wz)
            break
        xm = _unit(xv @ wx.T)
        zm = _unit(zv @ wz.T)
        ind_src, ind_tgt, obj = _induce(xm, zm, config)
        improved = obj - best_obj
        if obj > best_obj:
            best, best_obj = (wx, wz), obj
        history.append({"iteration": it, "pairs": int(len(src_idx)), "objective": obj,
                        "best_objective": best_obj})
        log.debug("iteration %d: %d pairs, objective %.6f", it, len(src_idx), obj)
        if improved < config.stop_delta:
            break
        pairs = dict.fromkeys(zip(seed_src.tolist(), seed_tgt.tolist()))
        pairs.update(dict.fromkeys(zip(ind_src.tolist(), ind_tgt.tolist())))
        if len(pairs) < X.dim and len(pairs) <= len(src_idx):
            warnings.warn(f"induced dictionary collapsed to {len(pairs)} pairs; keeping best mapping")
            break
        keys = list(pairs)
        src_idx = np.asarray([k[0] for k in keys], dtype=np.int64)
        tgt_idx = np.asarray([k[1] for k in keys], dtype=np.int64)
    return LinearMapping(best[0], best[1], asdict(config), history)


def _stable_top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores; equal scores keep index order."""
    return np.argsort(-scores, kind="stable")[:k]


def top_k_candidates(mapping: LinearMapping, X: EmbeddingMatrix, Z: EmbeddingMatrix,
                     source_word: str, k: int = 10) -> CandidateSet:
    """The ``k`` target words with the highest cosine to the mapped source word.

    Equal scores are ordered by target vocabulary index.
    """
    return CandidateIndex(mapping, X, Z).query(source_word, k)


class CandidateIndex:
    """Batched top-K retrieval for many source words against one mapping."""

    def __init__(self, mapping: LinearMapping, X: EmbeddingMatrix, Z: EmbeddingMatrix):
        self.X, self.Z = X, Z
        self.xm = _unit(mapping.map_source(X.vectors))
        self.zm = _unit(mapping.map_target(Z.vectors))

    def query(self, source_word: str, k: int = 10) -> CandidateSet:
        if source_word not in self.X:
            raise UnknownWordError(source_word)
        if not 1 <= k <= len(self.Z):
            raise ConfigError(f"k={k} outside [1, {len(self.Z)}]")
        scores = np.clip(self.zm @ self.xm[self.X.row(source_word)], -1.0, 1.0)
        top = _stable_top_k(scores, k)
        return CandidateSet(source_word, tuple(self.Z.words[i] for i in top),
                            tuple(float(scores[i]) for i in top))
