"""Recurrent combiner, component aggregation and the caption mix."""

import numpy as np
import pytest
import torch

from univse.composer import (
    CombinerParams,
    aggregate_components,
    combine_sequence,
    encode_caption,
    encode_relation,
    encode_relation_batch,
    encode_sentence,
    encode_sentence_batch,
    run_combiner,
)
from univse.vocab import FusionParams, VocabularyTable


def make_params(d=6, seed=2):
    return CombinerParams.init(d, np.random.default_rng(seed))


def unit(v):
    return v / torch.linalg.vector_norm(v)


def test_single_step_closed_form():
    """One step from the zero state reduces to (1-z) * tanh(Wn x + bn).

    With h0 = 0 the reset gate cannot act, so the candidate is just
    tanh(Wn x + bn) and the update gate mixes it with zero.
    """
    params = make_params(d=4)
    x = torch.tensor([0.3, -0.7, 0.2, 0.9], dtype=torch.float64)
    z = torch.sigmoid(x @ params.wz.T + params.bz)
    expected = unit((1.0 - z) * torch.tanh(x @ params.wn.T + params.bn))
    got = combine_sequence([x], params)
    assert torch.allclose(got, expected, atol=1e-14)


def test_two_step_recurrence_matches_manual_unroll():
    params = make_params(d=3)
    x1 = torch.tensor([0.5, 0.1, -0.2], dtype=torch.float64)
    x2 = torch.tensor([-0.4, 0.8, 0.3], dtype=torch.float64)

    h = torch.zeros(3, dtype=torch.float64)
    for x in (x1, x2):
        z = torch.sigmoid(x @ params.wz.T + h @ params.uz.T + params.bz)
        r = torch.sigmoid(x @ params.wr.T + h @ params.ur.T + params.br)
        n = torch.tanh(x @ params.wn.T + r * (h @ params.un.T) + params.bn)
        h = (1.0 - z) * n + z * h
    assert torch.allclose(combine_sequence([x1, x2], params), unit(h), atol=1e-14)


def test_order_sensitivity():
    params = make_params()
    a = torch.tensor([1.0, 0.0, 0.0, 0.0, 0.0, 0.0], dtype=torch.float64)
    b = torch.tensor([0.0, 1.0, 0.0, 0.0, 0.0, 0.0], dtype=torch.float64)
    ab = combine_sequence([a, b], params)
    ba = combine_sequence([b, a], params)
    assert not torch.allclose(ab, ba, atol=1e-6)


def test_padding_never_leaks():
    """A padded batch row equals the same sequence run alone."""
    params = make_params(d=3)
    short = [torch.tensor([0.2, -0.1, 0.4], dtype=torch.float64)]
    long = [torch.tensor([0.5, 0.5, 0.5], dtype=torch.float64),
            torch.tensor([-0.3, 0.2, 0.1], dtype=torch.float64),
            torch.tensor([0.9, -0.9, 0.0], dtype=torch.float64)]
    x = torch.zeros(2, 3, 3, dtype=torch.float64)
    x[0, 0] = short[0]
    for t, v in enumerate(long):
        x[1, t] = v
    out = run_combiner(x, torch.tensor([1, 3]), params)
    assert torch.allclose(out[0], combine_sequence(short, params), atol=1e-14)
    assert torch.allclose(out[1], combine_sequence(long, params), atol=1e-14)


def test_empty_sequence_rejected():
    with pytest.raises(ValueError, match="empty"):
        combine_sequence([], make_params())


class TestEncoders:
    """Relation and sentence encoders drive the same cell and weights."""

    def setup_method(self):
        entries = [("clock", "noun"), ("wall", "noun"), ("above", "relation"),
                   ("white", "adjective"), ("a", "other")]
        rng = np.random.default_rng(4)
        self.vocab = VocabularyTable.build(entries, 6, 4, rng)
        self.fusion = FusionParams.init(5, 10, rng)
        self.combiner = CombinerParams.init(5, rng)

    def test_relation_is_a_three_token_sequence(self):
        from univse.vocab import fuse_words
        rows = fuse_words(self.vocab, self.fusion, ["clock", "above", "wall"])
        expected = combine_sequence(list(rows), self.combiner)
        got = encode_relation("clock", "above", "wall", self.vocab, self.fusion, self.combiner)
        assert torch.allclose(got, expected, atol=1e-14)

    def test_relation_order_matters(self):
        fwd = encode_relation("clock", "above", "wall", self.vocab, self.fusion, self.combiner)
        rev = encode_relation("wall", "above", "clock", self.vocab, self.fusion, self.combiner)
        assert not torch.allclose(fwd, rev, atol=1e-6)

    def test_batched_relations_match_single(self):
        triples = [("clock", "above", "wall"), ("wall", "above", "clock")]
        batch = encode_relation_batch(triples, self.vocab, self.fusion, self.combiner)
        for row, (s, r, o) in zip(batch, triples):
            single = encode_relation(s, r, o, self.vocab, self.fusion, self.combiner)
            assert torch.allclose(row, single, atol=1e-14)

    def test_batched_sentences_match_single(self):
        seqs = [["a", "white", "clock"], ["clock", "above", "wall", "above", "clock"]]
        batch = encode_sentence_batch(seqs, self.vocab, self.fusion, self.combiner)
        for row, seq in zip(batch, seqs):
            single = encode_sentence(seq, self.vocab, self.fusion, self.combiner)
            assert torch.allclose(row, single, atol=1e-14)

    def test_empty_batch_gives_empty_stack(self):
        out = encode_relation_batch([], self.vocab, self.fusion, self.combiner)
        assert out.shape == (0, 5)


class TestAggregation:
    def test_normalized_sum(self):
        a = torch.tensor([1.0, 0.0], dtype=torch.float64)
        b = torch.tensor([0.0, 1.0], dtype=torch.float64)
        out = aggregate_components([a], [b], [])
        expected = torch.tensor([1.0, 1.0], dtype=torch.float64) / np.sqrt(2.0)
        assert torch.allclose(out, expected, atol=1e-14)

    def test_key_order_is_canonical(self):
        a = torch.tensor([1.0, 0.0], dtype=torch.float64)
        b = torch.tensor([0.0, 1.0], dtype=torch.float64)
        c = torch.tensor([1.0, 1.0], dtype=torch.float64)
        forward = aggregate_components([a, b], [c], [], obj_keys=["ant", "bee"], attr_keys=[("x", "y")])
        swapped = aggregate_components([b, a], [c], [], obj_keys=["bee", "ant"], attr_keys=[("x", "y")])
        assert torch.equal(forward, swapped)

    def test_no_components_rejected(self):
        with pytest.raises(ValueError, match="no components"):
            aggregate_components([], [], [])

    def test_key_length_mismatch(self):
        a = torch.tensor([1.0, 0.0], dtype=torch.float64)
        with pytest.raises(ValueError, match="differ in length"):
            aggregate_components([a], [], [], obj_keys=["x", "y"])


class TestCaptionMix:
    def test_endpoints_are_bit_identical(self):
        u_sent = torch.tensor([0.6, 0.8], dtype=torch.float64)
        u_comp = torch.tensor([1.0, 0.0], dtype=torch.float64)
        assert encode_caption(u_sent, u_comp, 1.0) is u_sent
        assert encode_caption(u_sent, u_comp, 0.0) is u_comp

    def test_mix_is_not_renormalized(self):
        u_sent = torch.tensor([1.0, 0.0], dtype=torch.float64)
        u_comp = torch.tensor([0.0, 1.0], dtype=torch.float64)
        mixed = encode_caption(u_sent, u_comp, 0.75)
        assert torch.allclose(mixed, torch.tensor([0.75, 0.25], dtype=torch.float64), atol=1e-15)
        assert float(torch.linalg.vector_norm(mixed)) < 1.0

    def test_alpha_out_of_range(self):
        u = torch.ones(2, dtype=torch.float64)
        with pytest.raises(ValueError, match="alpha"):
            encode_caption(u, u, 1.5)
