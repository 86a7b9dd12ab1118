"""The assembled model: creation, parameter naming, full encoding passes."""

import numpy as np
import pytest
import torch

from univse.model import JointModel, ModelDims, vocab_entries_from_corpus
from univse.vocab import UNK


def test_dims_validation():
    with pytest.raises(ValueError, match="embed_dim"):
        ModelDims(embed_dim=0).validate()
    with pytest.raises(ValueError, match="feature_depth"):
        ModelDims(feature_depth=-1).validate()


def test_vocab_entries_classes(tiny_synth):
    entries = dict(vocab_entries_from_corpus(tiny_synth.corpus))
    for noun in tiny_synth.corpus.nouns:
        assert entries[noun] == "noun"
    for adjective in tiny_synth.corpus.adjectives:
        assert entries[adjective] == "adjective"
    for rel in tiny_synth.corpus.relation_words:
        assert entries[rel] == "relation"
    assert entries["a"] == "other"  # determiner
    assert list(entries) == sorted(entries)


def test_parameter_names_cover_all_groups(tiny_model):
    names = set(tiny_model.named_parameters())
    assert {"vocab.basic", "vocab.modifier"} <= names
    assert any(n.startswith("fusion.") for n in names)
    assert any(n.startswith("combiner.") for n in names)
    assert any(n.startswith("projection.") for n in names)
    for tensor in tiny_model.named_parameters().values():
        assert tensor.dtype == torch.float64
        assert tensor.requires_grad


def test_seeded_creation_is_reproducible(tiny_synth):
    dims = ModelDims(24, 16, 8, 32)
    a = JointModel.from_corpus(tiny_synth.corpus, dims=dims, seed=9)
    b = JointModel.from_corpus(tiny_synth.corpus, dims=dims, seed=9)
    c = JointModel.from_corpus(tiny_synth.corpus, dims=dims, seed=10)
    for name, t in a.named_parameters().items():
        assert torch.equal(t, b.named_parameters()[name])
    assert not torch.equal(a.vocab.basic, c.vocab.basic)


def test_unknown_words_share_the_unk_row(tiny_model):
    a = tiny_model.encode_object_words(["zeppelin"])
    b = tiny_model.encode_object_words(["quixotic"])
    u = tiny_model.encode_object_words([UNK])
    assert torch.equal(a, b)
    assert torch.equal(a, u)


def test_empty_batches_have_embed_width(tiny_model):
    assert tiny_model.encode_object_words([]).shape == (0, 24)
    assert tiny_model.encode_attr_pairs([]).shape == (0, 24)
    assert tiny_model.encode_triples([]).shape == (0, 24)


class TestEncodeRecords:
    def test_component_rows_match_direct_encoders(self, tiny_model, tiny_synth):
        rec = tiny_synth.corpus.records[0]
        enc = tiny_model.encode_records([rec], alpha=0.75)[0]
        objs = sorted(rec.graph.objects)
        direct = tiny_model.encode_object_words(objs)
        for j in range(len(objs)):
            assert torch.allclose(enc.obj_embs[j], direct[j])
        rels = sorted(rec.graph.rel_triples)
        direct_r = tiny_model.encode_triples(rels)
        for j in range(len(rels)):
            assert torch.allclose(enc.rel_embs[j], direct_r[j])

    def test_alpha_one_returns_sentence_embedding(self, tiny_model, tiny_synth):
        recs = tiny_synth.corpus.records[:3]
        encs = tiny_model.encode_records(recs, alpha=1.0)
        for e in encs:
            assert torch.equal(e.u_cap, e.u_sent)
            assert e.u_comp is not None  # components are computed, just unmixed

    def test_family_selection_changes_u_comp(self, tiny_model, tiny_synth):
        recs = tiny_synth.corpus.records[:3]
        full = tiny_model.encode_records(recs, alpha=0.75)
        no_rel = tiny_model.encode_records(recs, alpha=0.75, families=("obj", "attr"))
        for f, n in zip(full, no_rel):
            assert not torch.allclose(f.u_comp, n.u_comp)
            assert len(f.rel_embs) == len(n.rel_embs)  # rows still reported

    def test_unknown_family_rejected(self, tiny_model, tiny_synth):
        with pytest.raises(ValueError, match="unknown component families"):
            tiny_model.encode_records(tiny_synth.corpus.records[:1], families=("verbs",))

    def test_componentless_caption_falls_back_or_raises(self, tiny_model, tiny_synth):
        from univse.corpus import CaptionRecord
        from univse.semparse import AnnotatedToken, ROOT, SemanticGraph

        tokens = [AnnotatedToken("ball", "ball", "NOUN", ROOT, "root")]
        bare = CaptionRecord("c0", "img0", tokens,
                             SemanticGraph(objects=set(), attr_pairs=set(), rel_triples=[]))
        enc = tiny_model.encode_records([bare], alpha=0.75)[0]
        assert enc.u_comp is None
        assert torch.equal(enc.u_cap, enc.u_sent)
        with pytest.raises(ValueError, match="no components"):
            tiny_model.encode_records([bare], strict_components=True)


def test_encode_images_shapes_and_norms(tiny_model, tiny_synth):
    ids = tiny_synth.features.image_ids[:4]
    regions, pooled = tiny_model.encode_images(tiny_synth.features, ids)
    assert regions.shape == (4, 16, 24)
    assert pooled.shape == (4, 24)
    assert torch.allclose(pooled.norm(dim=1), torch.ones(4, dtype=pooled.dtype))
