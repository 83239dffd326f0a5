import numpy as np
import pytest

from gnewsrec.gradcheck import check_gradients
from gnewsrec.numerics import ParameterStore
from gnewsrec.text_extractor import PAD, UNK, NewsItem, TextConfig, TextExtractor, TokenIndex, Vocabulary


def make_extractor(seed=0, **kw):
    cfg = TextConfig(**{"word_dim": 6, "type_dim": 4, "out_dim": 5, "n_filters": 3, **kw})
    store = ParameterStore(seed=seed, std=0.5)
    return TextExtractor(store, n_words=20, n_entities=10, n_types=4, config=cfg), store


def item(title, ents=(), types=None, nid="n"):
    return NewsItem(nid, list(title), list(ents), list(types if types is not None else [2] * len(ents)))


def test_title_matrix_shape_and_rows():
    ext, _ = make_extractor(word_dim=50, type_dim=50)
    m = ext.build_title_matrix(item([2, 3, 4, 5]))
    assert m.shape == (4, 50)
    np.testing.assert_array_equal(m.data[1], ext.word_emb.data[3])


def test_empty_title_is_min_length_padding():
    ext, _ = make_extractor()
    m = ext.build_title_matrix(item([]))
    assert m.shape == (ext.min_len, 6)
    assert not np.any(m.data)


def test_identical_titles_identical_matrices():
    ext, _ = make_extractor()
    a = ext.build_title_matrix(item([5, 6, 7]))
    b = ext.build_title_matrix(item([5, 6, 7], nid="other"))
    np.testing.assert_array_equal(a.data, b.data)


def test_profile_matrix_interleaves():
    ext, _ = make_extractor(word_dim=50, type_dim=50)
    m = ext.build_profile_matrix(item([2], [3, 4, 5], [1, 2, 3]))
    assert m.shape == (6, 50)
    np.testing.assert_array_equal(m.data[2], ext.entity_emb.data[4])
    np.testing.assert_allclose(m.data[3], ext.W_c.data @ ext.type_emb.data[2], rtol=1e-12)


def test_profile_zero_type_map():
    ext, _ = make_extractor()
    ext.W_c.data[:] = 0.0
    m = ext.build_profile_matrix(item([2], [3, 4], [1, 2]))
    assert not np.any(m.data[1::2])


def test_profile_identity_type_map():
    ext, _ = make_extractor(word_dim=4, type_dim=4)
    ext.W_c.data[:] = np.eye(4)
    m = ext.build_profile_matrix(item([2], [3], [2]))
    np.testing.assert_array_equal(m.data[0], ext.entity_emb.data[3])
    np.testing.assert_array_equal(m.data[1], ext.type_emb.data[2])


def test_empty_profile_is_padding():
    ext, _ = make_extractor()
    m = ext.build_profile_matrix(item([2]))
    assert m.shape[0] == ext.min_len
    assert not np.any(m.data)


def test_zero_parameters_give_zero_feature():
    ext, store = make_extractor()
    for p in store.params.values():
        p.data[:] = 0.0
    np.testing.assert_array_equal(ext.extract_text_feature(item([2, 3], [4], [1])).data, 0.0)


def test_default_output_dimension():
    store = ParameterStore(seed=0)
    ext = TextExtractor(store, 30, 10, 5, TextConfig())
    for title in ([2], [2, 3, 4, 5, 6, 7, 8, 9]):
        assert ext.extract_text_feature(item(title, [2, 3])).shape == (128,)


def test_batch_matches_single_items():
    ext, _ = make_extractor()
    items = [item([2, 3]), item([4, 5, 6, 7, 8], [2, 3, 4]), item([], [5]), item([9])]
    batch = ext.extract_batch(items).data
    for i, it in enumerate(items):
        np.testing.assert_allclose(batch[i], ext.extract_text_feature(it).data, rtol=1e-12, atol=1e-14)


def test_window_one_is_permutation_invariant():
    ext, _ = make_extractor(windows=(1,))
    a = ext.extract_text_feature(item([2, 3, 4, 5], [3], [1])).data
    b = ext.extract_text_feature(item([5, 3, 2, 4], [3], [1])).data
    np.testing.assert_allclose(a, b, rtol=1e-14)
    ext2, _ = make_extractor(windows=(2,))
    c = ext2.extract_text_feature(item([2, 3, 4, 5], [3], [1])).data
    d = ext2.extract_text_feature(item([5, 3, 2, 4], [3], [1])).data
    assert not np.allclose(c, d)


def test_padding_rows_frozen():
    ext, store = make_extractor()
    out = ext.extract_batch([item([2, 3, 4], [2], [1]), item([2])])
    (out * out).sum().backward()
    assert not np.any(ext.word_emb.grad[PAD])
    assert not np.any(ext.entity_emb.grad[PAD])
    assert not np.any(ext.type_emb.grad[PAD])
    assert np.any(ext.word_emb.grad[2])


def test_feature_gradients_match_finite_differences():
    ext, store = make_extractor(seed=3)
    items = [item([2, 3, 4], [2, 3], [1, 2]), item([5], [4], [3]), item([6, 7, 8, 9], [], [])]

    def loss():
        d = ext.extract_batch(items)
        return (d * d).sum()

    errs = check_gradients(loss, dict(store.params))
    assert max(errs.values()) < 1e-4, errs


def test_token_index_round_trip(tmp_path):
    idx = TokenIndex()
    for tok in ("nyhet", "oslo", "nyhet"):
        idx.add(tok)
    assert idx.id("oslo") == 3 and idx.id("never-seen") == UNK
    path = tmp_path / "words.tsv"
    idx.save(path)
    assert path.read_text(encoding="utf-8").splitlines()[2] == "nyhet\t2"
    back = TokenIndex.load(path)
    assert back.encode(["oslo", "nyhet", "x"]) == [3, 2, UNK]


def test_vocabulary_round_trip(tmp_path):
    vocab = Vocabulary(TokenIndex(), TokenIndex(), TokenIndex())
    vocab.words.add("a")
    vocab.entities.add("bergen")
    vocab.types.add("location")
    vocab.save(tmp_path / "v")
    back = Vocabulary.load(tmp_path / "v")
    assert back.types.id("location") == vocab.types.id("location")
    assert len(back.words) == len(vocab.words)


def test_news_item_type_count_must_match():
    with pytest.raises(ValueError):
        NewsItem("x", [2], [2, 3], [1])
