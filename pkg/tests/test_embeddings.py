import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from promptlex.embeddings import (
    EmbeddingMatrix,
    cosine,
    load_word2vec_text,
    normalize,
    store_word2vec_text,
)
from promptlex.errors import ConfigError, ParseError


def write(tmp_path, text, name="emb.txt"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_minimal(tmp_path):
    emb = load_word2vec_text(write(tmp_path, "2 3\na 1 0 0\nb 0 1 0\n"))
    assert emb.words == ["a", "b"]
    assert emb.vectors.shape == (2, 3)
    assert emb.vectors.dtype == np.float32
    np.testing.assert_array_equal(emb.vector("b"), [0, 1, 0])


def test_load_short_row_reports_line(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_word2vec_text(write(tmp_path, "2 3\na 1 0 0\nb 0 1\n"))
    assert exc.value.line == 3


def test_load_empty_file(tmp_path):
    with pytest.raises(ParseError):
        load_word2vec_text(write(tmp_path, ""))


def test_load_duplicates_keep_first(tmp_path):
    with pytest.warns(UserWarning, match="duplicate"):
        emb = load_word2vec_text(write(tmp_path, "3 2\na 1 0\nb 0 1\na 5 5\n"))
    assert len(emb) == 2
    np.testing.assert_array_equal(emb.vector("a"), [1, 0])


def test_store_load_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    emb = EmbeddingMatrix([f"w{i}" for i in range(20)], rng.standard_normal((20, 7)))
    path = tmp_path / "out.txt"
    store_word2vec_text(emb, path)
    back = load_word2vec_text(path)
    assert back.words == emb.words
    np.testing.assert_array_equal(back.vectors, emb.vectors)


def test_normalize_single_row():
    out = normalize(EmbeddingMatrix(["a"], [[3.0, 4.0]]))
    np.testing.assert_allclose(out.vectors[0], [0.6, 0.8], atol=1e-7)


def test_normalize_antipodal_rows_unchanged():
    emb = EmbeddingMatrix(["a", "b"], [[1.0, 0.0], [-1.0, 0.0]])
    np.testing.assert_allclose(normalize(emb).vectors, emb.vectors, atol=1e-7)


def test_normalize_random_norms():
    rng = np.random.default_rng(1)
    emb = EmbeddingMatrix([str(i) for i in range(100)], rng.standard_normal((100, 20)) + 0.5)
    out = normalize(emb)
    np.testing.assert_allclose(np.linalg.norm(out.vectors.astype(np.float64), axis=1), 1.0, atol=1e-6)
    assert out is not emb and not np.shares_memory(out.vectors, emb.vectors)


def test_normalize_zero_row_names_word():
    emb = EmbeddingMatrix(["ok", "bad"], [[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ConfigError, match="bad"):
        normalize(emb)


def test_cosine_examples():
    assert cosine([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 0], [1, 1]) == pytest.approx(1 / math.sqrt(2), abs=1e-4)


def test_cosine_zero_vector():
    with pytest.raises(ConfigError):
        cosine([0, 0], [1, 0])


vec = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3
)


@settings(max_examples=200, deadline=None)
@given(u=vec, v=vec, alpha=st.floats(1e-3, 1e3))
def test_cosine_symmetry_and_scale(u, v, alpha):
    assert cosine(u, v) == cosine(v, u)
    assert abs(cosine(np.multiply(alpha, u), v) - cosine(u, v)) < 1e-9
    assert -1.0 <= cosine(u, v) <= 1.0
