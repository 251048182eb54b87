import warnings

import numpy as np
import pytest

from promptlex.alignment import (
    AlignmentConfig,
    CandidateIndex,
    LinearMapping,
    self_training_align,
    solve_procrustes,
    top_k_candidates,
    vecmap_refine,
)
from promptlex.embeddings import EmbeddingMatrix, normalize
from promptlex.errors import ConfigError, UnknownWordError
from promptlex.evaluation import BilingualDictionary, precision_at_k
from promptlex.synthetic import index_dictionary, random_orthogonal, rotated_spaces

PURE = AlignmentConfig(self_training=False, max_iterations=1)


def held_out_p1(mapping, X, Z, idx):
    index = CandidateIndex(mapping, X, Z)
    ranked = {f"s{i}": index.query(f"s{i}", 1).candidates for i in idx}
    return precision_at_k(ranked, {f"s{i}": {f"t{i}"} for i in idx}, 1)


@pytest.fixture(scope="module")
def rotated():
    X, Z, R = rotated_spaces(300, 10, seed=3)
    return X, Z, R


def test_identity_alignment():
    X, _, _ = rotated_spaces(50, 8, seed=0)
    Z = EmbeddingMatrix([f"t{i}" for i in range(50)], X.vectors)
    m = solve_procrustes(X, Z, index_dictionary(range(50)))
    np.testing.assert_allclose(m.wx, np.eye(8), atol=1e-6)
    np.testing.assert_array_equal(m.wz, np.eye(8))


def test_rotation_recovered(rotated):
    X, Z, R = rotated
    m = solve_procrustes(X, Z, index_dictionary(range(300)))
    assert np.linalg.norm(m.wx - R) < 1e-4
    assert np.linalg.norm(m.wx.T @ m.wx - np.eye(10)) < 1e-6


def test_beats_random_orthogonal_matrices():
    X, Z, _ = rotated_spaces(200, 10, noise=0.3, seed=5)
    d = index_dictionary(range(200))
    m = solve_procrustes(X, Z, d)
    xd, zd = X.vectors.astype(float), Z.vectors.astype(float)

    def objective(w):
        return np.trace(zd.T @ xd @ w.T)

    best = objective(m.wx)
    rng = np.random.default_rng(0)
    assert all(objective(random_orthogonal(10, rng)) < best for _ in range(100))


def test_too_few_pairs():
    X, Z, _ = rotated_spaces(20, 4, seed=0)
    with pytest.raises(ConfigError, match="0 resolvable"):
        solve_procrustes(X, Z, BilingualDictionary([("nope", "t1")]))


def test_underdetermined_seed_warns():
    X, Z, _ = rotated_spaces(20, 4, seed=0)
    with pytest.warns(UserWarning) as rec:
        solve_procrustes(X, Z, index_dictionary([0, 1]))
    messages = " ".join(str(w.message) for w in rec)
    assert "underdetermined" in messages and "rank-deficient" in messages


def test_dimension_mismatch():
    X = EmbeddingMatrix(["a"], [[1.0, 0.0]])
    Z = EmbeddingMatrix(["b"], [[1.0, 0.0, 0.0]])
    with pytest.raises(ConfigError):
        solve_procrustes(X, Z, BilingualDictionary([("a", "b")]))


def test_vecmap_collapses_to_procrustes(rotated):
    X, Z, _ = rotated
    X2, Z2, _ = rotated_spaces(300, 10, noise=0.2, seed=9)
    for a, b in ((X, Z), (X2, Z2)):
        d = index_dictionary(range(0, 300, 2))
        p = solve_procrustes(a, b, d)
        v = vecmap_refine(a, b, d, AlignmentConfig(whiten=False, reweight_exponent=0.0))
        np.testing.assert_allclose(v.wx, p.wx, atol=1e-8)
        np.testing.assert_allclose(v.wz, p.wz, atol=1e-8)


def test_vecmap_full_pipeline_recovers_rotation():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((1000, 12))
    R = random_orthogonal(12, rng)
    X = EmbeddingMatrix([f"s{i}" for i in range(1000)], x)
    Z = EmbeddingMatrix([f"t{i}" for i in range(1000)], x @ R.T)
    cfg = AlignmentConfig(whiten=True, reweight_exponent=0.5)
    m = vecmap_refine(X, Z, index_dictionary(range(1000)), cfg)
    # the effective source->target map, with the shared space pulled back to target coordinates
    effective = np.linalg.solve(m.wz, m.wx)
    assert np.linalg.norm(effective - R) < 1e-3


def test_vecmap_reduce_dim_full_is_noop(rotated):
    X, Z, _ = rotated
    d = index_dictionary(range(100))
    cfg = AlignmentConfig(whiten=True, reweight_exponent=0.5)
    a = vecmap_refine(X, Z, d, cfg)
    b = vecmap_refine(X, Z, d, AlignmentConfig(whiten=True, reweight_exponent=0.5, reduce_dim=10))
    np.testing.assert_array_equal(a.wx, b.wx)
    np.testing.assert_array_equal(a.wz, b.wz)


def test_vecmap_reduce_dim_truncates(rotated):
    X, Z, _ = rotated
    m = vecmap_refine(X, Z, index_dictionary(range(100)), AlignmentConfig(reduce_dim=4))
    assert m.wx.shape == (4, 10) and m.wz.shape == (4, 10)
    assert len(top_k_candidates(m, X, Z, "s0", 3)) == 3


def test_singular_whitening_regularized():
    X, Z, _ = rotated_spaces(50, 10, seed=2)
    with pytest.warns(UserWarning) as rec:
        vecmap_refine(X, Z, index_dictionary(range(5)), AlignmentConfig(whiten=True))
    messages = " ".join(str(w.message) for w in rec)
    assert "regularizing" in messages and "underdetermined" in messages


def test_self_training_disabled_matches_vecmap(rotated):
    X, Z, _ = rotated
    d = index_dictionary(range(40))
    a = self_training_align(X, Z, d, AlignmentConfig(max_iterations=1, self_training=False))
    b = vecmap_refine(X, Z, d, AlignmentConfig())
    np.testing.assert_array_equal(a.wx, b.wx)
    np.testing.assert_array_equal(a.wz, b.wz)


def test_self_training_not_worse_than_seed_only():
    X, Z, _ = rotated_spaces(1000, 20, seed=4)
    X, Z = normalize(X), normalize(Z)
    perm = np.random.default_rng(0).permutation(1000)
    seed = index_dictionary(perm[:25])
    test = perm[25:325]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        st = self_training_align(X, Z, seed, AlignmentConfig())
        pr = solve_procrustes(X, Z, seed)
    assert held_out_p1(st, X, Z, test) >= held_out_p1(pr, X, Z, test)


def test_self_training_objective_monotone():
    X, Z, _ = rotated_spaces(800, 20, noise=0.1, seed=6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = self_training_align(X, Z, index_dictionary(range(10)), AlignmentConfig(max_iterations=8))
    best = [h["best_objective"] for h in m.history]
    assert best == sorted(best)
    assert len(m.history) >= 2


def test_self_training_one_pair_two_words():
    vecs = [[1.0, 0.2], [-0.3, 1.0]]
    X = EmbeddingMatrix(["a", "b"], vecs)
    Z = EmbeddingMatrix(["A", "B"], vecs)
    seed = BilingualDictionary([("a", "A")])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = self_training_align(X, Z, seed, AlignmentConfig())
    ranked = {w: top_k_candidates(m, X, Z, w, 1).candidates for w in ("a", "b")}
    assert precision_at_k(ranked, {"a": {"A"}, "b": {"B"}}, 1) == 1.0


def test_self_training_deterministic():
    X, Z, _ = rotated_spaces(400, 10, noise=0.1, seed=8)
    d = index_dictionary(range(15))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = self_training_align(X, Z, d, AlignmentConfig(retrieval="csls"))
        b = self_training_align(X, Z, d, AlignmentConfig(retrieval="csls"))
    np.testing.assert_array_equal(a.wx, b.wx)


def test_csls_self_training_recovers_rotation():
    X, Z, _ = rotated_spaces(600, 10, noise=0.02, seed=12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = self_training_align(X, Z, index_dictionary(range(20)), AlignmentConfig(retrieval="csls"))
    assert held_out_p1(m, X, Z, range(300, 600)) == 1.0


def test_top_k_self_retrieval():
    X, _, _ = rotated_spaces(30, 5, seed=1)
    Z = EmbeddingMatrix([f"s{i}" for i in range(30)], X.vectors)
    ident = LinearMapping(np.eye(5), np.eye(5))
    c = top_k_candidates(ident, X, Z, "s0", 1)
    assert c.candidates == ("s0",)
    assert c.scores[0] == pytest.approx(1.0)


def test_top_k_full_sort_oracle():
    X, Z, _ = rotated_spaces(60, 6, noise=0.5, seed=2)
    m = solve_procrustes(X, Z, index_dictionary(range(30)))
    c = top_k_candidates(m, X, Z, "s7", len(Z))
    q = m.wx @ X.vector("s7").astype(float)
    oracle = []
    for w, z in zip(Z.words, Z.vectors.astype(float)):
        oracle.append((float(q @ z / np.linalg.norm(q) / np.linalg.norm(z)), w))
    oracle.sort(key=lambda t: -t[0])
    assert list(c.candidates) == [w for _, w in oracle]
    np.testing.assert_allclose(c.scores, [s for s, _ in oracle], atol=1e-12)
    assert list(c.scores) == sorted(c.scores, reverse=True)
    assert len(set(c.candidates)) == len(Z)


def test_top_k_tie_break_by_index():
    X = EmbeddingMatrix(["q"], [[1.0, 0.0]])
    Z = EmbeddingMatrix(["z0", "z1", "z2"], [[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
    c = top_k_candidates(LinearMapping(np.eye(2), np.eye(2)), X, Z, "q", 3)
    assert c.candidates == ("z1", "z2", "z0")


def test_top_k_rank_invariant_to_target_scaling():
    X, Z, _ = rotated_spaces(80, 6, noise=0.4, seed=3)
    m = solve_procrustes(X, Z, index_dictionary(range(40)))
    Z3 = EmbeddingMatrix(Z.words, Z.vectors * 3.0)
    assert top_k_candidates(m, X, Z, "s1", 10).candidates == top_k_candidates(m, X, Z3, "s1", 10).candidates


def test_top_k_unknown_word():
    X, Z, _ = rotated_spaces(10, 3, seed=0)
    with pytest.raises(UnknownWordError, match="ghost"):
        top_k_candidates(LinearMapping(np.eye(3), np.eye(3)), X, Z, "ghost", 1)


def test_top_k_k_too_large():
    X, Z, _ = rotated_spaces(10, 3, seed=0)
    with pytest.raises(ConfigError):
        top_k_candidates(LinearMapping(np.eye(3), np.eye(3)), X, Z, "s0", 11)


def test_mapping_checkpoint_roundtrip(tmp_path, rotated):
    X, Z, _ = rotated
    m = self_training_align(X, Z, index_dictionary(range(50)), AlignmentConfig(max_iterations=2))
    path = tmp_path / "map.bin"
    m.save(path)
    back = LinearMapping.load(path)
    np.testing.assert_array_equal(back.wx, m.wx)
    np.testing.assert_array_equal(back.wz, m.wz)
    assert back.config["max_iterations"] == 2


def test_config_validation():
    with pytest.raises(ConfigError):
        AlignmentConfig(max_iterations=0)
    with pytest.raises(ConfigError):
        AlignmentConfig(csls_k=0)
    with pytest.raises(ConfigError):
        AlignmentConfig(retrieval="dot")
