"""The joint embedding model: all parameter groups plus encoding passes.

One object bundles the vocabulary tables, fusion encoder, sequence
combiner and region projection, so the trainer, evaluator and estimator
all drive the same parameter set. Creation order of the groups is fixed,
which makes seeded initialization bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .composer import (
    CaptionEncoding,
    CombinerParams,
    aggregate_components,
    encode_caption,
    encode_relation_batch,
    encode_sentence_batch,
)
from .corpus import CaptionRecord, Corpus
from .vision import FeatureSet, ProjectionParams, project_batch
from .vocab import FusionParams, VocabularyTable, fuse_attr_pairs, fuse_words

ALL_FAMILIES = ("obj", "attr", "rel")

DEFAULT_ALPHA = 0.75


@dataclass
class ModelDims:
    embed_dim: int = 64
    basic_dim: int = 32
    modifier_dim: int = 16
    feature_depth: int = 32

    def validate(self) -> None:
        for name in ("embed_dim", "basic_dim", "modifier_dim", "feature_depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def vocab_entries_from_corpus(corpus: Corpus) -> list[tuple[str, str]]:
    """Derive (word, pos_class) entries from caption annotations.

    The class of a lemma is decided by the first POS tag seen for it in a
    fixed scan order, mapping NOUN/ADJ to their classes and ADP or VERB to
    the relation class.
    """
    mapping = {"NOUN": "noun", "ADJ": "adjective", "ADP": "relation", "VERB": "relation"}
    classes: dict[str, str] = {}
    for rec in corpus:
        for tok in rec.tokens:
            lemma = tok.lemma.lower()
            if lemma not in classes:
                classes[lemma] = mapping.get(tok.pos, "other")
    return sorted(classes.items())


class JointModel:
    """Vocabulary, fusion, combiner and projection behind one interface."""

    def __init__(self, vocab: VocabularyTable, fusion: FusionParams,
                 combiner: CombinerParams, projection: ProjectionParams, dims: ModelDims):
        self.vocab = vocab
        self.fusion = fusion
        self.combiner = combiner
        self.projection = projection
        self.dims = dims

    @classmethod
    def create(cls, entries: list[tuple[str, str]], dims: ModelDims, seed: int) -> "JointModel":
        dims.validate()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D6F64]))
        vocab = VocabularyTable.build(entries, dims.basic_dim, dims.modifier_dim, rng)
        fusion = FusionParams.init(dims.embed_dim, dims.basic_dim + dims.modifier_dim, rng)
        combiner = CombinerParams.init(dims.embed_dim, rng)
        projection = ProjectionParams.init(dims.embed_dim, dims.feature_depth, rng)
        return cls(vocab, fusion, combiner, projection, dims)

    @classmethod
    def from_corpus(cls, corpus: Corpus, dims: ModelDims, seed: int) -> "JointModel":
        return cls.create(vocab_entries_from_corpus(corpus), dims, seed)

    def named_parameters(self) -> dict[str, torch.Tensor]:
        named = {"vocab.basic": self.vocab.basic, "vocab.modifier": self.vocab.modifier}
        named.update(self.fusion.named_tensors())
        named.update(self.combiner.named_tensors())
        named.update(self.projection.named_tensors())
        return named

    # text side -----------------------------------------------------------

    def encode_object_words(self, words: list[str]) -> torch.Tensor:
        if not words:
            return self.vocab.basic.new_zeros((0, self.dims.embed_dim))
        return fuse_words(self.vocab, self.fusion, words)

    def encode_attr_pairs(self, pairs: list[tuple[str, str]]) -> torch.Tensor:
        if not pairs:
            return self.vocab.basic.new_zeros((0, self.dims.embed_dim))
        return fuse_attr_pairs(self.vocab, self.fusion, pairs)

    def encode_triples(self, triples: list[tuple[str, str, str]]) -> torch.Tensor:
        return encode_relation_batch(triples, self.vocab, self.fusion, self.combiner)

    def encode_sentences(self, word_seqs: list[list[str]]) -> torch.Tensor:
        return encode_sentence_batch(word_seqs, self.vocab, self.fusion, self.combiner)

    def encode_records(self, records: list[CaptionRecord], alpha: float = DEFAULT_ALPHA,
                       families: tuple[str, ...] = ALL_FAMILIES,
                       strict_components: bool = False) -> list[CaptionEncoding]:
        """Encode captions with all component embeddings in one pass.

        Component lists follow the canonical order (objects, attributes,
        relations, each sorted lexically). ``families`` selects which
        component types feed the bag-of-components embedding; a caption
        whose selected families are all empty gets ``u_comp = None`` and
        falls back to the bare sentence embedding for ``u_cap`` unless
        ``strict_components`` is set.
        """
        unknown = set(families) - set(ALL_FAMILIES)
        if unknown:
            raise ValueError(f"unknown component families: {sorted(unknown)}")
        u_sent = self.encode_sentences([rec.lemmas for rec in records])

        objs = [sorted(rec.graph.objects) for rec in records]
        attrs = [sorted(rec.graph.attr_pairs) for rec in records]
        rels = [sorted(rec.graph.rel_triples) for rec in records]

        obj_rows = self.encode_object_words([w for group in objs for w in group])
        attr_rows = self.encode_attr_pairs([p for group in attrs for p in group])
        rel_rows = self.encode_triples([t for group in rels for t in group])

        encodings = []
        io = ia = ir = 0
        for i, rec in enumerate(records):
            no, na, nr = len(objs[i]), len(attrs[i]), len(rels[i])
            obj_embs = [obj_rows[io + j] for j in range(no)]
            attr_embs = [attr_rows[ia + j] for j in range(na)]
            rel_embs = [rel_rows[ir + j] for j in range(nr)]
            io, ia, ir = io + no, ia + na, ir + nr

            selected: list[torch.Tensor] = []
            if "obj" in families:
                selected += obj_embs
            if "attr" in families:
                selected += attr_embs
            if "rel" in families:
                selected += rel_embs
            if selected:
                u_comp = aggregate_components(
                    obj_embs if "obj" in families else [],
                    attr_embs if "attr" in families else [],
                    rel_embs if "rel" in families else [],
                )
                u_cap = encode_caption(u_sent[i], u_comp, alpha)
            elif strict_components:
                raise ValueError(f"caption {rec.caption_id!r} has no components")
            else:
                u_comp = None
                u_cap = u_sent[i]
            encodings.append(
                CaptionEncoding(
                    u_sent=u_sent[i], u_comp=u_comp, u_cap=u_cap,
                    obj_embs=obj_embs, attr_embs=attr_embs, rel_embs=rel_embs, alpha=alpha,
                )
            )
        return encodings

    # image side ----------------------------------------------------------

    def encode_images(self, features: FeatureSet, image_ids: list[str]) -> tuple[torch.Tensor, torch.Tensor]:
        """Region embeddings (n, rows*cols, d) and pooled unit rows (n, d)."""
        stack = features.stack(image_ids, dtype=self.vocab.basic.dtype)
        return project_batch(stack, self.projection)
