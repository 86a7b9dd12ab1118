"""Caption corpus: records, per-image indices and component inventories."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .semparse import AnnotatedToken, SemanticGraph, load_conllu, parse_caption


@dataclass
class CaptionRecord:
    caption_id: str
    image_id: str
    tokens: list[AnnotatedToken]
    graph: SemanticGraph

    @property
    def text(self) -> str:
        return " ".join(t.surface for t in self.tokens)

    @property
    def lemmas(self) -> list[str]:
        return [t.lemma.lower() for t in self.tokens]


@dataclass
class Corpus:
    """Caption records with image-level component indices.

    A component counts as belonging to an image when it appears in any of
    the image's captions; negative sampling and attack generation both use
    that criterion for "irrelevant".
    """

    records: list[CaptionRecord] = field(default_factory=list)

    def __post_init__(self):
        self._reindex()

    def _reindex(self) -> None:
        self.by_image: dict[str, list[CaptionRecord]] = {}
        for rec in self.records:
            self.by_image.setdefault(rec.image_id, []).append(rec)
        self.image_ids = sorted(self.by_image)

        self.nouns: list[str] = sorted({o for r in self.records for o in r.graph.objects})
        self.adjectives: list[str] = sorted({a for r in self.records for a, _ in r.graph.attr_pairs})
        self.relation_words: list[str] = sorted({t[1] for r in self.records for t in r.graph.rel_triples})

        self.image_nouns: dict[str, set[str]] = {}
        self.image_attr_pairs: dict[str, set[tuple[str, str]]] = {}
        self.image_triples: dict[str, set[tuple[str, str, str]]] = {}
        self.image_texts: dict[str, set[str]] = {}
        for img, recs in self.by_image.items():
            self.image_nouns[img] = {o for r in recs for o in r.graph.objects}
            self.image_attr_pairs[img] = {p for r in recs for p in r.graph.attr_pairs}
            self.image_triples[img] = {t for r in recs for t in r.graph.rel_triples}
            self.image_texts[img] = {r.text for r in recs}

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def lemma_inventory(self) -> list[str]:
        return sorted({lem for r in self.records for lem in r.lemmas})


def load_corpus(captions_path: str, conllu_path: str, reparse: bool = False) -> Corpus:
    """Assemble a corpus from a captions JSONL file and its CoNLL-U twin.

    The JSONL rows carry ``id``/``image_id``/``caption``/``graph``; token
    annotations are joined on the sentence id. With ``reparse`` the stored
    graph is ignored and recomputed from the tokens.
    """
    token_groups = dict(load_conllu(conllu_path))
    records = []
    with open(captions_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            cid = str(row["id"])
            if cid not in token_groups:
                raise ValueError(f"caption {cid!r} has no token annotations in {conllu_path}")
            tokens = token_groups[cid]
            if reparse or "graph" not in row:
                graph = parse_caption(tokens)
            else:
                graph = SemanticGraph.from_json(row["graph"])
            records.append(CaptionRecord(caption_id=cid, image_id=str(row["image_id"]), tokens=tokens, graph=graph))
    return Corpus(records)


def save_captions_jsonl(path: str, records: list[CaptionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = {
                "id": rec.caption_id,
                "image_id": rec.image_id,
                "caption": rec.text,
                "graph": rec.graph.to_json(),
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")
