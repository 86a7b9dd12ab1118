"""Vocabulary tables, concatenation layout and the gated fusion map."""

import numpy as np
import pytest
import torch

from univse.tensor_utils import DegenerateEmbeddingError, l2_normalize
from univse.vocab import (
    UNK,
    FusionParams,
    VocabularyTable,
    concat_attr_noun,
    concat_noun,
    concat_pair_batch,
    concat_word_batch,
    fuse_attr_pairs,
    fuse_words,
    gated_fuse,
    load_vocab_file,
    save_vocab_file,
)

ENTRIES = [("ball", "noun"), ("cube", "noun"), ("red", "adjective"), ("on", "relation")]


def make_vocab(basic_dim=6, modifier_dim=4, seed=0):
    return VocabularyTable.build(ENTRIES, basic_dim, modifier_dim, np.random.default_rng(seed))


def test_unk_is_reserved_at_zero():
    vocab = make_vocab()
    assert vocab.words[0] == UNK
    assert vocab.lookup("never-seen-word") == 0


def test_lookup_is_case_insensitive():
    vocab = make_vocab()
    assert vocab.lookup("BALL") == vocab.lookup("ball")


def test_duplicate_entries_collapse():
    vocab = VocabularyTable.build(ENTRIES + [("ball", "noun")], 4, 4, np.random.default_rng(0))
    assert vocab.words.count("ball") == 1


def test_unknown_pos_class_rejected():
    with pytest.raises(ValueError, match="POS class"):
        VocabularyTable.build([("x", "verbish")], 4, 4, np.random.default_rng(0))


def test_words_of_class_excludes_unk():
    vocab = make_vocab()
    assert vocab.words_of_class("noun") == ["ball", "cube"]
    assert UNK not in vocab.words_of_class("other")


def test_concat_noun_uses_own_modifier_row():
    vocab = make_vocab()
    i = vocab.lookup("ball")
    row = concat_noun(vocab, "ball")
    assert torch.equal(row[:6], vocab.basic[i])
    assert torch.equal(row[6:], vocab.modifier[i])


def test_concat_attr_pair_swaps_modifier():
    vocab = make_vocab()
    n = vocab.lookup("ball")
    a = vocab.lookup("red")
    row = concat_attr_noun(vocab, "red", "ball")
    assert torch.equal(row[:6], vocab.basic[n])
    assert torch.equal(row[6:], vocab.modifier[a])


def test_batched_concat_matches_single():
    vocab = make_vocab()
    batch = concat_word_batch(vocab, ["ball", "cube"])
    assert torch.equal(batch[0], concat_noun(vocab, "ball"))
    assert torch.equal(batch[1], concat_noun(vocab, "cube"))
    pairs = concat_pair_batch(vocab, [("red", "cube")])
    assert torch.equal(pairs[0], concat_attr_noun(vocab, "red", "cube"))


class TestGatedFuse:
    def test_closed_form(self):
        """With hand-set weights the output is Norm(sigmoid(W1x+b1) * tanh(W2x+b2))."""
        params = FusionParams(
            w1=torch.eye(3, dtype=torch.float64) * 0.5,
            b1=torch.zeros(3, dtype=torch.float64),
            w2=torch.eye(3, dtype=torch.float64),
            b2=torch.full((3,), 0.1, dtype=torch.float64),
        )
        x = torch.tensor([0.2, -0.4, 1.0], dtype=torch.float64)
        expected = torch.sigmoid(0.5 * x) * torch.tanh(x + 0.1)
        expected = expected / torch.linalg.vector_norm(expected)
        assert torch.allclose(gated_fuse(x, params), expected, atol=1e-14)

    def test_output_rows_are_unit(self):
        vocab = make_vocab()
        params = FusionParams.init(8, 10, np.random.default_rng(1))
        rows = fuse_words(vocab, params, ["ball", "cube", "on"])
        norms = torch.linalg.vector_norm(rows, dim=1)
        assert torch.allclose(norms, torch.ones(3, dtype=torch.float64), atol=1e-12)

    def test_dim_mismatch_raises(self):
        params = FusionParams.init(8, 10, np.random.default_rng(1))
        with pytest.raises(ValueError, match="input dim"):
            gated_fuse(torch.zeros(7, dtype=torch.float64), params)

    def test_pair_and_word_fusions_share_weights(self):
        # same concatenation in, same embedding out
        vocab = make_vocab()
        params = FusionParams.init(8, 10, np.random.default_rng(1))
        pair_row = fuse_attr_pairs(vocab, params, [("ball", "ball")])[0]
        word_row = fuse_words(vocab, params, ["ball"])[0]
        assert torch.equal(pair_row, word_row)


def test_degenerate_fusion_input_rejected():
    params = FusionParams(
        w1=torch.zeros((2, 3), dtype=torch.float64),
        b1=torch.full((2,), 20.0, dtype=torch.float64),  # gate saturates to 1
        w2=torch.zeros((2, 3), dtype=torch.float64),
        b2=torch.zeros(2, dtype=torch.float64),  # candidate is exactly 0
    )
    with pytest.raises(DegenerateEmbeddingError):
        gated_fuse(torch.ones(3, dtype=torch.float64), params)


def test_l2_normalize_rejects_zero_rows():
    with pytest.raises(DegenerateEmbeddingError):
        l2_normalize(torch.zeros(4, dtype=torch.float64))


def test_vocab_file_round_trip(tmp_path):
    path = tmp_path / "vocab.tsv"
    save_vocab_file(str(path), ENTRIES)
    assert load_vocab_file(str(path)) == ENTRIES


def test_vocab_file_rejects_malformed_line(tmp_path):
    path = tmp_path / "vocab.tsv"
    path.write_text("ball noun\n", encoding="utf-8")  # space, not tab
    with pytest.raises(ValueError, match="word<TAB>class"):
        load_vocab_file(str(path))


def test_load_word_vectors_overwrites_known_rows(tmp_path):
    vocab = make_vocab(basic_dim=3)
    path = tmp_path / "vectors.txt"
    path.write_text("ball 1.0 2.0 3.0\nzebra 9 9 9\n", encoding="utf-8")
    loaded = vocab.load_word_vectors(str(path))
    assert loaded == 1
    assert torch.equal(vocab.basic[vocab.lookup("ball")],
                       torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64))


def test_load_word_vectors_wrong_width(tmp_path):
    vocab = make_vocab(basic_dim=3)
    path = tmp_path / "vectors.txt"
    path.write_text("ball 1.0 2.0\n", encoding="utf-8")
    with pytest.raises(ValueError, match="expected 3 values"):
        vocab.load_word_vectors(str(path))
