"""Text-domain adversarial captions: object, attribute and relation attacks.

Each attack perturbs exactly one semantic slot of a parsed caption and
re-parses the result, so downstream evaluation can verify the graph diff.
"Irrelevant" always means absent from every caption of the source image,
the same criterion the negative sampler uses.

Surface realization sticks to fixed templates ("and a X" for added
objects, "REL a X" for added relations); fluency is not a goal here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import CaptionRecord, Corpus
from .semparse import ROOT, AnnotatedToken, SemanticGraph, parse_caption

logger = logging.getLogger(__name__)

FAMILIES = ("object", "attribute", "relation")
MODES = ("replace", "add", "mixed")


class AttackError(ValueError):
    """A caption lacks the material an attack needs."""


@dataclass
class AttackSpec:
    family: str = "all"
    mode: str = "mixed"
    n_per_caption: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES + ("all",):
            raise ValueError(f"unknown attack family {self.family!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown attack mode {self.mode!r}")
        if self.n_per_caption < 1:
            raise ValueError("n_per_caption must be at least 1")


@dataclass
class AdversarialCaption:
    source_caption_id: str
    source_image_id: str
    family: str
    mode: str
    tokens: list[AnnotatedToken]
    graph: SemanticGraph

    @property
    def text(self) -> str:
        return " ".join(t.surface for t in self.tokens)

    def to_record(self, caption_id: str) -> CaptionRecord:
        return CaptionRecord(caption_id=caption_id, image_id=self.source_image_id,
                             tokens=self.tokens, graph=self.graph)


def _swap_word(tokens: list[AnnotatedToken], index: int, word: str) -> list[AnnotatedToken]:
    out = list(tokens)
    old = out[index]
    out[index] = AnnotatedToken(surface=word, lemma=word, pos=old.pos, head=old.head, dep=old.dep)
    return out


def _insert_token(tokens: list[AnnotatedToken], position: int, new: AnnotatedToken,
                  ) -> list[AnnotatedToken]:
    """Insert and remap every head index across the shift."""
    def shift(h: int) -> int:
        return h + 1 if h != ROOT and h >= position else h

    out = [AnnotatedToken(t.surface, t.lemma, t.pos, shift(t.head), t.dep) for t in tokens[:position]]
    out.append(AnnotatedToken(new.surface, new.lemma, new.pos, shift(new.head), new.dep))
    for t in tokens[position:]:
        out.append(AnnotatedToken(t.surface, t.lemma, t.pos, shift(t.head), t.dep))
    return out


def _pick(rng: np.random.Generator, items: list):
    if not items:
        raise IndexError("empty pool")
    return items[int(rng.integers(len(items)))]


def _irrelevant_nouns(record: CaptionRecord, corpus: Corpus) -> list[str]:
    present = corpus.image_nouns[record.image_id]
    return [n for n in corpus.nouns if n not in present]


def _resolve_mode(rng: np.random.Generator, mode: str) -> str:
    if mode == "mixed":
        return "replace" if rng.random() < 0.5 else "add"
    return mode


def attack_object(record: CaptionRecord, corpus: Corpus, rng: np.random.Generator,
                  mode: str = "mixed") -> AdversarialCaption:
    """Swap one object noun for an irrelevant one, or conjoin a new one."""
    pool = _irrelevant_nouns(record, corpus)
    if not pool:
        raise AttackError(f"no irrelevant noun available for image {record.image_id}")
    picked = _resolve_mode(rng, mode)
    noun_idx = [i for i, t in enumerate(record.tokens) if t.pos == "NOUN"]
    if picked == "replace":
        if not noun_idx:
            raise AttackError(f"caption {record.caption_id} has no object to replace")
        target = _pick(rng, noun_idx)
        tokens = _swap_word(record.tokens, target, _pick(rng, pool))
    else:
        anchor = next((i for i, t in enumerate(record.tokens) if t.head == ROOT), 0)
        noun = _pick(rng, pool)
        base = len(record.tokens)
        tokens = list(record.tokens)
        tokens.append(AnnotatedToken("and", "and", "OTHER", anchor, "cc"))
        tokens.append(AnnotatedToken("a", "a", "DET", base + 2, "det"))
        tokens.append(AnnotatedToken(noun, noun, "NOUN", anchor, "conj"))
    return AdversarialCaption(
        source_caption_id=record.caption_id, source_image_id=record.image_id,
        family="object", mode=picked, tokens=tokens, graph=parse_caption(tokens))


def attack_attribute(record: CaptionRecord, corpus: Corpus, rng: np.random.Generator,
                     mode: str = "mixed") -> AdversarialCaption:
    """Swap one adjective for an irrelevant one, or modify a bare noun.

    When the requested flavor has no slot (no adjective to replace, or no
    unmodified noun to extend), the other one is tried before giving up.
    """
    present = {a for a, _ in corpus.image_attr_pairs[record.image_id]}
    pool = [a for a in corpus.adjectives if a not in present]
    if not pool:
        raise AttackError(f"no irrelevant adjective available for image {record.image_id}")

    adj_idx = [i for i, t in enumerate(record.tokens)
               if t.pos == "ADJ" and t.head != ROOT and record.tokens[t.head].pos == "NOUN"]
    modified = {t.head for i, t in enumerate(record.tokens) if i in adj_idx}
    bare_idx = [i for i, t in enumerate(record.tokens) if t.pos == "NOUN" and i not in modified]

    picked = _resolve_mode(rng, mode)
    if picked == "replace" and not adj_idx:
        picked = "add"
    if picked == "add" and not bare_idx:
        picked = "replace"
    if picked == "replace" and not adj_idx:
        raise AttackError(f"caption {record.caption_id} has no adjective slot and no bare noun")

    if picked == "replace":
        target = _pick(rng, adj_idx)
        old = record.tokens[target].lemma
        choices = [a for a in pool if a != old]
        if not choices:
            raise AttackError(f"no irrelevant adjective differs from {old!r}")
        tokens = _swap_word(record.tokens, target, _pick(rng, choices))
    else:
        noun_pos = _pick(rng, bare_idx)
        adjective = _pick(rng, pool)
        new = AnnotatedToken(adjective, adjective, "ADJ", noun_pos, "amod")
        tokens = _insert_token(record.tokens, noun_pos, new)
    return AdversarialCaption(
        source_caption_id=record.caption_id, source_image_id=record.image_id,
        family="attribute", mode=picked, tokens=tokens, graph=parse_caption(tokens))


def _locate_triple(tokens: list[AnnotatedToken], triple: tuple[str, str, str],
                   ) -> tuple[int, int, int]:
    """Token indices realizing (subject, relation, object), first match."""
    subj, rel, obj = triple
    for i, t in enumerate(tokens):
        if t.lemma != rel or t.pos not in ("ADP", "VERB"):
            continue
        if t.pos == "ADP":
            if t.head == ROOT or tokens[t.head].lemma != subj:
                continue
            for j, u in enumerate(tokens):
                if u.head == i and u.pos == "NOUN" and u.lemma == obj:
                    return (t.head, i, j)
        else:
            s_idx = o_idx = None
            for j, u in enumerate(tokens):
                if u.head == i and u.pos == "NOUN":
                    if u.dep in ("nsubj",) and u.lemma == subj:
                        s_idx = j
                    if u.dep in ("obj", "dobj") and u.lemma == obj:
                        o_idx = j
            if s_idx is not None and o_idx is not None:
                return (s_idx, i, o_idx)
    raise AttackError(f"triple {triple} not found in token tree")


def attack_relation(record: CaptionRecord, corpus: Corpus, rng: np.random.Generator,
                    mode: str = "mixed") -> AdversarialCaption:
    """Corrupt one slot of a triple, or attach a spurious relation.

    The add flavor appends "REL a X" to an existing entity, reusing another
    entity of the caption as X so the object set stays fixed and exactly
    one triple is introduced.
    """
    triples = sorted(set(record.graph.rel_triples))
    picked = _resolve_mode(rng, mode)
    if picked == "replace" and not triples:
        raise AttackError(f"caption {record.caption_id} has no relation triple")

    image_rels = {r for _, r, _ in corpus.image_triples[record.image_id]}
    rel_pool = [r for r in corpus.relation_words if r not in image_rels]

    if picked == "replace":
        triple = triples[int(rng.integers(len(triples)))]
        s_idx, r_idx, o_idx = _locate_triple(record.tokens, triple)
        slot = int(rng.integers(3))
        if slot == 1:
            choices = [r for r in rel_pool if r != triple[1]]
            if not choices:
                raise AttackError(f"no irrelevant relation word for image {record.image_id}")
            tokens = _swap_word(record.tokens, r_idx, _pick(rng, choices))
        else:
            noun_pool = _irrelevant_nouns(record, corpus)
            if not noun_pool:
                raise AttackError(f"no irrelevant noun available for image {record.image_id}")
            tokens = _swap_word(record.tokens, s_idx if slot == 0 else o_idx, _pick(rng, noun_pool))
    else:
        if not rel_pool:
            raise AttackError(f"no irrelevant relation word for image {record.image_id}")
        noun_idx = [i for i, t in enumerate(record.tokens) if t.pos == "NOUN"]
        if len(noun_idx) < 2:
            raise AttackError(f"caption {record.caption_id} has fewer than two entities")
        anchor = _pick(rng, noun_idx)
        partner = _pick(rng, [i for i in noun_idx if i != anchor])
        rel = _pick(rng, rel_pool)
        other = record.tokens[partner].lemma
        base = len(record.tokens)
        tokens = list(record.tokens)
        tokens.append(AnnotatedToken(rel, rel, "ADP", anchor, "prep"))
        tokens.append(AnnotatedToken("a", "a", "DET", base + 2, "det"))
        tokens.append(AnnotatedToken(other, other, "NOUN", base, "pobj"))
    return AdversarialCaption(
        source_caption_id=record.caption_id, source_image_id=record.image_id,
        family="relation", mode=picked, tokens=tokens, graph=parse_caption(tokens))


_ATTACKS = {"object": attack_object, "attribute": attack_attribute, "relation": attack_relation}


@dataclass
class AttackSuite:
    spec: AttackSpec
    adversarials: list[AdversarialCaption]
    skipped: dict[str, int] = field(default_factory=dict)
    n_source_captions: int = 0

    @property
    def candidate_count(self) -> int:
        return self.n_source_captions + len(self.adversarials)


def build_attack_suite(corpus: Corpus, spec: AttackSpec) -> AttackSuite:
    """n_per_caption adversarials per caption; per-caption failures skip.

    With ``family="all"`` the three families rotate per sample, keeping
    the suite balanced; every adversarial is re-checked against the
    source image's caption texts.
    """
    rng = np.random.default_rng(spec.rng_seed)
    adversarials: list[AdversarialCaption] = []
    skipped: dict[str, int] = {}
    for record in corpus.records:
        originals = corpus.image_texts[record.image_id]
        for k in range(spec.n_per_caption):
            family = spec.family if spec.family != "all" else FAMILIES[k % len(FAMILIES)]
            try:
                adv = _ATTACKS[family](record, corpus, rng, spec.mode)
            except AttackError as exc:
                key = f"{family}: {exc}"
                skipped[key] = skipped.get(key, 0) + 1
                continue
            if adv.text in originals:
                skipped[f"{family}: collided with an original"] = \
                    skipped.get(f"{family}: collided with an original", 0) + 1
                continue
            adversarials.append(adv)
    return AttackSuite(spec=spec, adversarials=adversarials, skipped=skipped,
                       n_source_captions=len(corpus.records))
