"""Per-word embedding tables and the gated fusion encoder.

Every vocabulary word owns a basic embedding and a modifier embedding.
A bare noun is encoded from its own basic and modifier rows; an
(adjective, noun) pair keeps the noun's basic row and swaps in the
adjective's modifier row. The gated fusion maps either concatenation
onto the unit sphere of the joint space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .tensor_utils import glorot_scale, l2_normalize, uniform_init

UNK = "<unk>"
POS_CLASSES = ("noun", "adjective", "relation", "other")

EMBED_INIT_SCALE = 0.1


class VocabularyTable:
    """Word ids, POS classes and the two trainable embedding matrices."""

    def __init__(self, words: list[str], pos_classes: list[str], basic: torch.Tensor, modifier: torch.Tensor):
        if len(words) != len(pos_classes):
            raise ValueError("words and pos classes differ in length")
        if basic.shape[0] != len(words) or modifier.shape[0] != len(words):
            raise ValueError("embedding rows do not match vocabulary size")
        self.words = list(words)
        self.pos_class = list(pos_classes)
        self.word_to_id = {w: i for i, w in enumerate(self.words)}
        if UNK not in self.word_to_id:
            raise ValueError(f"vocabulary must reserve {UNK!r}")
        self.unk_id = self.word_to_id[UNK]
        self.basic = basic
        self.modifier = modifier

    @classmethod
    def build(cls, entries: list[tuple[str, str]], basic_dim: int, modifier_dim: int,
              rng: np.random.Generator) -> "VocabularyTable":
        """Create a table from (word, pos_class) entries with uniform init."""
        if basic_dim <= 0 or modifier_dim <= 0:
            raise ValueError("embedding dims must be positive")
        words = [UNK]
        classes = ["other"]
        seen = {UNK}
        for word, cls_name in entries:
            word = word.lower()
            if cls_name not in POS_CLASSES:
                raise ValueError(f"unknown POS class {cls_name!r}")
            if word in seen:
                continue
            seen.add(word)
            words.append(word)
            classes.append(cls_name)
        basic = uniform_init(rng, (len(words), basic_dim), EMBED_INIT_SCALE)
        modifier = uniform_init(rng, (len(words), modifier_dim), EMBED_INIT_SCALE)
        return cls(words, classes, basic, modifier)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def basic_dim(self) -> int:
        return self.basic.shape[1]

    @property
    def modifier_dim(self) -> int:
        return self.modifier.shape[1]

    def lookup(self, word: str) -> int:
        return self.word_to_id.get(word.lower(), self.unk_id)

    def ids(self, words: list[str]) -> torch.Tensor:
        return torch.tensor([self.lookup(w) for w in words], dtype=torch.long)

    def words_of_class(self, cls_name: str) -> list[str]:
        return [w for w, c in zip(self.words, self.pos_class) if c == cls_name and w != UNK]

    def load_word_vectors(self, path: str) -> int:
        """Overwrite basic rows from a text file of ``word v1 .. vD`` lines.

        Returns the number of vocabulary words that received a pretrained
        row; out-of-vocabulary lines are skipped.
        """
        loaded = 0
        with torch.no_grad():
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    parts = line.split()
                    if not parts:
                        continue
                    word, values = parts[0].lower(), parts[1:]
                    if len(values) != self.basic_dim:
                        raise ValueError(f"line {lineno}: expected {self.basic_dim} values, got {len(values)}")
                    if word in self.word_to_id:
                        row = torch.tensor([float(v) for v in values], dtype=self.basic.dtype)
                        self.basic[self.word_to_id[word]] = row
                        loaded += 1
        return loaded


def load_vocab_file(path: str) -> list[tuple[str, str]]:
    """Read ``word<TAB>pos_class`` lines."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'word<TAB>class'")
            entries.append((parts[0], parts[1]))
    return entries


def save_vocab_file(path: str, entries: list[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word, cls_name in entries:
            fh.write(f"{word}\t{cls_name}\n")


@dataclass
class FusionParams:
    """Gate and candidate transforms of the fusion encoder."""

    w1: torch.Tensor
    b1: torch.Tensor
    w2: torch.Tensor
    b2: torch.Tensor

    @classmethod
    def init(cls, embed_dim: int, input_dim: int, rng: np.random.Generator) -> "FusionParams":
        scale = glorot_scale(input_dim, embed_dim)
        return cls(
            w1=uniform_init(rng, (embed_dim, input_dim), scale),
            b1=uniform_init(rng, (embed_dim,), scale),
            w2=uniform_init(rng, (embed_dim, input_dim), scale),
            b2=uniform_init(rng, (embed_dim,), scale),
        )

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w1.shape[0]

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {"fusion.w1": self.w1, "fusion.b1": self.b1, "fusion.w2": self.w2, "fusion.b2": self.b2}


def concat_noun(vocab: VocabularyTable, word: str) -> torch.Tensor:
    """Basic row of the noun joined with its own (intrinsic) modifier row."""
    i = vocab.lookup(word)
    return torch.cat([vocab.basic[i], vocab.modifier[i]])


def concat_attr_noun(vocab: VocabularyTable, adj: str, noun: str) -> torch.Tensor:
    """Noun basic row joined with the adjective's modifier row."""
    n = vocab.lookup(noun)
    a = vocab.lookup(adj)
    return torch.cat([vocab.basic[n], vocab.modifier[a]])


def concat_word_batch(vocab: VocabularyTable, words: list[str]) -> torch.Tensor:
    """Stacked own-modifier concatenations, shape (n, basic+modifier)."""
    ids = vocab.ids(words)
    return torch.cat([vocab.basic.index_select(0, ids), vocab.modifier.index_select(0, ids)], dim=1)


def concat_pair_batch(vocab: VocabularyTable, pairs: list[tuple[str, str]]) -> torch.Tensor:
    """Stacked (adjective, noun) concatenations, shape (n, basic+modifier)."""
    noun_ids = vocab.ids([noun for _, noun in pairs])
    adj_ids = vocab.ids([adj for adj, _ in pairs])
    return torch.cat([vocab.basic.index_select(0, noun_ids), vocab.modifier.index_select(0, adj_ids)], dim=1)


def gated_fuse(x: torch.Tensor, params: FusionParams) -> torch.Tensor:
    """sigmoid gate times tanh candidate, L2-normalized along the last dim.

    Accepts a single vector or a batch of rows; raises on inputs whose
    pre-normalization output degenerates to (near) zero.
    """
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"fusion input dim {x.shape[-1]} does not match params ({params.input_dim})")
    gate = torch.sigmoid(x @ params.w1.T + params.b1)
    cand = torch.tanh(x @ params.w2.T + params.b2)
    return l2_normalize(gate * cand, what="fusion output")


def fuse_words(vocab: VocabularyTable, params: FusionParams, words: list[str]) -> torch.Tensor:
    """Joint-space rows for bare words, shape (n, d)."""
    return gated_fuse(concat_word_batch(vocab, words), params)


def fuse_attr_pairs(vocab: VocabularyTable, params: FusionParams, pairs: list[tuple[str, str]]) -> torch.Tensor:
    """Joint-space rows for (adjective, noun) pairs, shape (n, d)."""
    return gated_fuse(concat_pair_batch(vocab, pairs), params)
