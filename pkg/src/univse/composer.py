"""Sequence combiner and caption-level encodings.

Relations and sentences are encoded by one shared recurrent cell run
left-to-right from a zero state; its L2-normalized last state is the
embedding. A caption additionally gets a bag-of-components embedding
(normalized sum of its object, attribute and relation embeddings) and a
final mix ``alpha * u_sent + (1 - alpha) * u_comp``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .tensor_utils import glorot_scale, l2_normalize, uniform_init
from .vocab import FusionParams, VocabularyTable, fuse_words


@dataclass
class CombinerParams:
    """Update/reset/candidate transforms of the recurrent cell."""

    wz: torch.Tensor
    wr: torch.Tensor
    wn: torch.Tensor
    uz: torch.Tensor
    ur: torch.Tensor
    un: torch.Tensor
    bz: torch.Tensor
    br: torch.Tensor
    bn: torch.Tensor

    @classmethod
    def init(cls, embed_dim: int, rng: np.random.Generator) -> "CombinerParams":
        scale = glorot_scale(embed_dim, embed_dim)

        def mat():
            return uniform_init(rng, (embed_dim, embed_dim), scale)

        def vec():
            return uniform_init(rng, (embed_dim,), scale)

        return cls(wz=mat(), wr=mat(), wn=mat(), uz=mat(), ur=mat(), un=mat(), bz=vec(), br=vec(), bn=vec())

    @property
    def embed_dim(self) -> int:
        return self.wz.shape[0]

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {f"combiner.{name}": getattr(self, name) for name in ("wz", "wr", "wn", "uz", "ur", "un", "bz", "br", "bn")}


def run_combiner(x: torch.Tensor, lengths: torch.Tensor, params: CombinerParams) -> torch.Tensor:
    """Run the cell over padded sequences, returning normalized last states.

    ``x`` is (batch, steps, d); rows past each sequence's length keep their
    previous hidden state, so padding never leaks into the output.
    """
    batch, steps, _ = x.shape
    h = x.new_zeros(batch, params.embed_dim)
    for t in range(steps):
        xt = x[:, t, :]
        z = torch.sigmoid(xt @ params.wz.T + h @ params.uz.T + params.bz)
        r = torch.sigmoid(xt @ params.wr.T + h @ params.ur.T + params.br)
        n = torch.tanh(xt @ params.wn.T + r * (h @ params.un.T) + params.bn)
        h_new = (1.0 - z) * n + z * h
        active = (lengths > t).unsqueeze(1)
        h = torch.where(active, h_new, h)
    return l2_normalize(h, what="combiner state")


def combine_sequence(embs: list[torch.Tensor], params: CombinerParams) -> torch.Tensor:
    """Encode one sequence of joint-space vectors into a unit vector."""
    if not embs:
        raise ValueError("cannot combine an empty sequence")
    x = torch.stack(embs).unsqueeze(0)
    lengths = torch.tensor([len(embs)])
    return run_combiner(x, lengths, params).squeeze(0)


def encode_relation(subj: str, rel: str, obj: str, vocab: VocabularyTable,
                    fusion: FusionParams, combiner: CombinerParams) -> torch.Tensor:
    """Embed a (subject, relation, object) triple; order-sensitive."""
    rows = fuse_words(vocab, fusion, [subj, rel, obj])
    return combine_sequence(list(rows), combiner)


def encode_relation_batch(triples: list[tuple[str, str, str]], vocab: VocabularyTable,
                          fusion: FusionParams, combiner: CombinerParams) -> torch.Tensor:
    """Embed many triples at once, shape (n, d)."""
    if not triples:
        return vocab.basic.new_zeros((0, combiner.embed_dim))
    flat = [w for t in triples for w in t]
    rows = fuse_words(vocab, fusion, flat).reshape(len(triples), 3, -1)
    lengths = torch.full((len(triples),), 3, dtype=torch.long)
    return run_combiner(rows, lengths, combiner)


def encode_sentence(words: list[str], vocab: VocabularyTable,
                    fusion: FusionParams, combiner: CombinerParams) -> torch.Tensor:
    """Embed a full word sequence with the same fusion and combiner weights."""
    if not words:
        raise ValueError("cannot encode an empty caption")
    rows = fuse_words(vocab, fusion, words)
    return combine_sequence(list(rows), combiner)


def encode_sentence_batch(word_seqs: list[list[str]], vocab: VocabularyTable,
                          fusion: FusionParams, combiner: CombinerParams) -> torch.Tensor:
    """Embed many word sequences with padding, shape (n, d)."""
    if not word_seqs:
        return vocab.basic.new_zeros((0, combiner.embed_dim))
    if any(len(seq) == 0 for seq in word_seqs):
        raise ValueError("cannot encode an empty caption")
    max_len = max(len(seq) for seq in word_seqs)
    flat = [w for seq in word_seqs for w in seq]
    rows = fuse_words(vocab, fusion, flat)
    x = rows.new_zeros(len(word_seqs), max_len, rows.shape[1])
    offset = 0
    for i, seq in enumerate(word_seqs):
        x[i, : len(seq)] = rows[offset : offset + len(seq)]
        offset += len(seq)
    lengths = torch.tensor([len(seq) for seq in word_seqs], dtype=torch.long)
    return run_combiner(x, lengths, combiner)


def aggregate_components(obj_embs: list[torch.Tensor], attr_embs: list[torch.Tensor],
                         rel_embs: list[torch.Tensor], *, obj_keys=None, attr_keys=None,
                         rel_keys=None) -> torch.Tensor:
    """Normalized unweighted sum of all component embeddings.

    Summation order is canonical (objects, then attributes, then relations,
    each sorted by its lexical key) so the result is bit-reproducible no
    matter how callers ordered the lists. When keys are omitted the lists
    are taken as already canonically ordered.
    """

    def ordered(embs, keys):
        if keys is None:
            return list(embs)
        if len(keys) != len(embs):
            raise ValueError("keys and embeddings differ in length")
        return [e for _, e in sorted(zip(keys, embs), key=lambda item: item[0])]

    parts = ordered(obj_embs, obj_keys) + ordered(attr_embs, attr_keys) + ordered(rel_embs, rel_keys)
    if not parts:
        raise ValueError("no components to aggregate")
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return l2_normalize(total, what="component aggregation")


def encode_caption(u_sent: torch.Tensor, u_comp: torch.Tensor, alpha: float) -> torch.Tensor:
    """Convex mix of sentence and bag-of-components embeddings (no re-norm).

    The endpoints short-circuit so that alpha=1 returns u_sent itself
    (and alpha=0 returns u_comp), keeping those evaluations bit-identical
    to the single-embedding paths.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return u_sent
    if alpha == 0.0:
        return u_comp
    return alpha * u_sent + (1.0 - alpha) * u_comp


@dataclass
class CaptionEncoding:
    """All embeddings derived from one caption."""

    u_sent: torch.Tensor
    u_comp: torch.Tensor | None
    u_cap: torch.Tensor
    obj_embs: list[torch.Tensor] = field(default_factory=list)
    attr_embs: list[torch.Tensor] = field(default_factory=list)
    rel_embs: list[torch.Tensor] = field(default_factory=list)
    alpha: float = 1.0
