"""Fully-labeled synthetic scenes so the whole suite runs without real data.

A scene is a small grid; each occupied cell holds one object class with one
attribute class. The cell's raw feature vector is the object's signature
plus half the attribute's offset plus Gaussian noise, so a linear projection
can recover both. Spatial relations (above / below / on / beside) are
derived from cell coordinates, captions are realized from the template
``a ADJ N REL a ADJ N``, and gold dependency annotations are emitted
alongside, which keeps the caption → parse → graph loop closed by
construction.

Train and test partitions share class signatures (same seed) but draw
disjoint scene randomness, so a model fit on one transfers to the other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import CaptionRecord, Corpus, save_captions_jsonl
from .semparse import ROOT, AnnotatedToken, SemanticGraph, parse_caption, write_conllu
from .vision import FeatureSet, RawFeatureMap, write_feature_file
from .vocab import save_vocab_file

NOUNS = ("ball", "brick", "cone", "cube", "disk", "knob",
         "plate", "prism", "ring", "slab", "tube", "wedge")
ADJECTIVES = ("blue", "dark", "green", "pale", "red", "shiny")
RELATIONS = ("above", "below", "beside", "on")

CAPTIONS_FILE = "captions.jsonl"
CONLLU_FILE = "annotations.conllu"
FEATURES_FILE = "features.uvse"
SCENES_FILE = "scenes.json"
VOCAB_FILE = "vocab.tsv"

SCENE_RETRIES = 100


@dataclass
class CorpusConfig:
    """Knobs for one generated partition; defaults are the desk scale."""

    n_scenes: int = 200
    rows: int = 4
    cols: int = 4
    n_nouns: int = 12
    n_adjectives: int = 6
    n_relations: int = 4
    captions_per_scene: int = 2
    min_objects: int = 2
    max_objects: int = 3
    noise: float = 0.05
    position_gain: float = 0.15
    feature_depth: int = 32
    seed: int = 7
    partition: int = 0
    id_prefix: str = ""

    def __post_init__(self):
        if self.n_nouns < 2 or self.n_adjectives < 2 or self.n_relations < 2:
            raise ValueError("need at least 2 classes per lexicon")
        if self.n_nouns > len(NOUNS) or self.n_adjectives > len(ADJECTIVES) \
                or self.n_relations > len(RELATIONS):
            raise ValueError("lexicon size exceeds the built-in word lists")
        if not 2 <= self.min_objects <= self.max_objects:
            raise ValueError("object count range must satisfy 2 <= min <= max")
        if self.max_objects > min(self.n_nouns, self.n_adjectives):
            raise ValueError("not enough distinct classes for max_objects")
        if self.rows * self.cols < self.max_objects or max(self.rows, self.cols) < 2:
            raise ValueError(
                f"grid {self.rows}x{self.cols} too small for {self.max_objects} objects")
        if self.n_scenes < 1 or self.captions_per_scene < 1:
            raise ValueError("need at least one scene and one caption per scene")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.position_gain < 0:
            raise ValueError("position gain must be non-negative")
        if self.feature_depth < 1:
            raise ValueError("feature depth must be positive")
        if not self.id_prefix:
            self.id_prefix = f"s{self.partition}"

    @property
    def nouns(self) -> tuple[str, ...]:
        return NOUNS[: self.n_nouns]

    @property
    def adjectives(self) -> tuple[str, ...]:
        return ADJECTIVES[: self.n_adjectives]

    @property
    def relations(self) -> tuple[str, ...]:
        return RELATIONS[: self.n_relations]


@dataclass
class SyntheticScene:
    """Grid layout ground truth for one generated image."""

    image_id: str
    rows: int
    cols: int
    cells: dict[tuple[int, int], tuple[str, str]] = field(default_factory=dict)
    facts: list[tuple[str, str, str]] = field(default_factory=list)

    def cell_of(self, noun: str) -> tuple[int, int]:
        for pos, (n, _) in self.cells.items():
            if n == noun:
                return pos
        raise KeyError(f"{noun!r} not placed in scene {self.image_id}")

    def adjective_of(self, noun: str) -> str:
        return self.cells[self.cell_of(noun)][1]

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "rows": self.rows,
            "cols": self.cols,
            "cells": [
                {"row": r, "col": c, "noun": n, "adjective": a}
                for (r, c), (n, a) in sorted(self.cells.items())
            ],
            "facts": [list(f) for f in self.facts],
        }

    @classmethod
    def from_json(cls, row: dict) -> "SyntheticScene":
        cells = {(int(c["row"]), int(c["col"])): (c["noun"], c["adjective"])
                 for c in row["cells"]}
        facts = [tuple(f) for f in row["facts"]]
        return cls(image_id=row["image_id"], rows=int(row["rows"]), cols=int(row["cols"]),
                   cells=cells, facts=facts)


def derive_facts(cells: dict[tuple[int, int], tuple[str, str]],
                 relations: tuple[str, ...]) -> list[tuple[str, str, str]]:
    """All spatial relation facts entailed by the layout.

    Rows grow downward: ``on`` means directly atop (also ``above``);
    ``beside`` holds for horizontally adjacent cells in both directions.
    """
    facts = []
    items = sorted(cells.items())
    for (r1, c1), (n1, _) in items:
        for (r2, c2), (n2, _) in items:
            if (r1, c1) == (r2, c2):
                continue
            if c1 == c2 and r1 < r2:
                if "above" in relations:
                    facts.append((n1, "above", n2))
                if r2 - r1 == 1 and "on" in relations:
                    facts.append((n1, "on", n2))
            if c1 == c2 and r1 > r2 and "below" in relations:
                facts.append((n1, "below", n2))
            if r1 == r2 and abs(c1 - c2) == 1 and "beside" in relations:
                facts.append((n1, "beside", n2))
    return sorted(facts)


def caption_tokens(adj1: str, noun1: str, rel: str, adj2: str, noun2: str) -> list[AnnotatedToken]:
    """Gold annotation for the template ``a ADJ1 N1 REL a ADJ2 N2``."""
    return [
        AnnotatedToken(surface="a", lemma="a", pos="DET", head=2, dep="det"),
        AnnotatedToken(surface=adj1, lemma=adj1, pos="ADJ", head=2, dep="amod"),
        AnnotatedToken(surface=noun1, lemma=noun1, pos="NOUN", head=ROOT, dep="root"),
        AnnotatedToken(surface=rel, lemma=rel, pos="ADP", head=2, dep="prep"),
        AnnotatedToken(surface="a", lemma="a", pos="DET", head=6, dep="det"),
        AnnotatedToken(surface=adj2, lemma=adj2, pos="ADJ", head=6, dep="amod"),
        AnnotatedToken(surface=noun2, lemma=noun2, pos="NOUN", head=3, dep="pobj"),
    ]


def _relatable_cells(first: tuple[int, int], cfg: CorpusConfig) -> list[tuple[int, int]]:
    """Free cells whose pairing with ``first`` entails at least one fact."""
    r0, c0 = first
    out = []
    for r in range(cfg.rows):
        for c in range(cfg.cols):
            if (r, c) == first:
                continue
            probe = {first: ("x", "x"), (r, c): ("y", "y")}
            if derive_facts(probe, cfg.relations):
                out.append((r, c))
    return out


def _place_scene(rng: np.random.Generator, cfg: CorpusConfig,
                 image_id: str) -> SyntheticScene | None:
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    nouns = [cfg.nouns[i] for i in rng.choice(cfg.n_nouns, size=n_obj, replace=False)]
    adjs = [cfg.adjectives[i] for i in rng.choice(cfg.n_adjectives, size=n_obj, replace=False)]

    all_cells = [(r, c) for r in range(cfg.rows) for c in range(cfg.cols)]
    first = all_cells[int(rng.integers(len(all_cells)))]
    partners = _relatable_cells(first, cfg)
    if not partners:
        return None
    second = partners[int(rng.integers(len(partners)))]
    placed = [first, second]
    for _ in range(n_obj - 2):
        free = [c for c in all_cells if c not in placed]
        placed.append(free[int(rng.integers(len(free)))])

    cells = {pos: (nouns[i], adjs[i]) for i, pos in enumerate(placed)}
    scene = SyntheticScene(image_id=image_id, rows=cfg.rows, cols=cfg.cols, cells=cells)
    scene.facts = derive_facts(cells, cfg.relations)
    return scene if scene.facts else None


def _realize_captions(scene: SyntheticScene, rng: np.random.Generator, cfg: CorpusConfig,
                      seen_text: set[str], endpoint_owner: dict[frozenset, str],
                      ) -> list[list[AnnotatedToken]] | None:
    """Pick facts and realize captions, or give up on a clashing scene.

    Two global uniqueness rules keep retrieval well-posed: no caption
    string repeats anywhere, and no unordered pair of (adjective, noun)
    endpoints is shared between different images, so a caption's objects
    alone identify its image.
    """
    adj = {n: a for (n, a) in scene.cells.values()}
    order = list(rng.permutation(len(scene.facts)))
    chosen: list[list[AnnotatedToken]] = []
    texts: list[str] = []
    endpoints: list[frozenset] = []
    for idx in order:
        if len(chosen) == cfg.captions_per_scene:
            break
        s, r, o = scene.facts[idx]
        tokens = caption_tokens(adj[s], s, r, adj[o], o)
        text = " ".join(t.surface for t in tokens)
        key = frozenset([(adj[s], s), (adj[o], o)])
        if text in seen_text or text in texts:
            continue
        if endpoint_owner.get(key, scene.image_id) != scene.image_id:
            continue
        chosen.append(tokens)
        texts.append(text)
        endpoints.append(key)
    if len(chosen) < cfg.captions_per_scene:
        return None
    seen_text.update(texts)
    for key in endpoints:
        endpoint_owner[key] = scene.image_id
    return chosen


@dataclass
class ClassSignatures:
    """Per-class feature vectors plus per-row/column modulation masks.

    Shared across partitions of one seed so train and held-out scenes
    render the same classes identically. The masks scale each object's
    signature by where it sits in the grid; without them a mean-pooled
    image would carry no trace of spatial arrangement and relation words
    would be unlearnable from global features.
    """

    noun_sig: dict[str, np.ndarray]
    adj_off: dict[str, np.ndarray]
    row_mask: np.ndarray
    col_mask: np.ndarray


def class_signatures(cfg: CorpusConfig) -> ClassSignatures:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 17]))
    noun_sig = {n: rng.normal(size=cfg.feature_depth) for n in cfg.nouns}
    adj_off = {a: rng.normal(size=cfg.feature_depth) for a in cfg.adjectives}
    row_mask = rng.choice([-1.0, 1.0], size=(cfg.rows, cfg.feature_depth))
    col_mask = rng.choice([-1.0, 1.0], size=(cfg.cols, cfg.feature_depth))
    return ClassSignatures(noun_sig=noun_sig, adj_off=adj_off,
                           row_mask=row_mask, col_mask=col_mask)


def render_features(scene: SyntheticScene, sigs: ClassSignatures, noise: float,
                    position_gain: float, rng: np.random.Generator,
                    depth: int) -> RawFeatureMap:
    grid = rng.normal(size=(scene.rows, scene.cols, depth)) * noise
    for (r, c), (noun, adjective) in scene.cells.items():
        place = 1.0 + position_gain * (sigs.row_mask[r] + sigs.col_mask[c])
        grid[r, c] += sigs.noun_sig[noun] * place + 0.5 * sigs.adj_off[adjective]
    return RawFeatureMap(image_id=scene.image_id, data=grid.astype(np.float32))


@dataclass
class SynthResult:
    corpus: Corpus
    features: FeatureSet
    scenes: list[SyntheticScene]


def generate_corpus(cfg: CorpusConfig, out_dir: str | Path | None = None) -> SynthResult:
    """Generate scenes, captions, gold parses and features for one partition.

    With ``out_dir`` set, writes the caption JSONL, CoNLL-U annotations,
    the UVSE feature file, the scene ground truth and a vocabulary table.
    """
    sigs = class_signatures(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 29, cfg.partition]))

    scenes: list[SyntheticScene] = []
    records: list[CaptionRecord] = []
    maps: list[RawFeatureMap] = []
    seen_text: set[str] = set()
    endpoint_owner: dict[frozenset, str] = {}

    for i in range(cfg.n_scenes):
        image_id = f"{cfg.id_prefix}_{i:04d}"
        scene = None
        captions = None
        for _ in range(SCENE_RETRIES):
            scene = _place_scene(rng, cfg, image_id)
            if scene is None:
                continue
            captions = _realize_captions(scene, rng, cfg, seen_text, endpoint_owner)
            if captions is not None:
                break
        if scene is None or captions is None:
            raise RuntimeError(
                f"could not realize a unique scene after {SCENE_RETRIES} tries "
                f"(lexicon too small for {cfg.n_scenes} scenes)")
        scenes.append(scene)
        for j, tokens in enumerate(captions):
            records.append(CaptionRecord(
                caption_id=f"{image_id}_c{j}",
                image_id=image_id,
                tokens=tokens,
                graph=parse_caption(tokens),
            ))
        maps.append(render_features(scene, sigs, cfg.noise, cfg.position_gain,
                                    rng, cfg.feature_depth))

    corpus = Corpus(records)
    features = FeatureSet(maps)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_captions_jsonl(out / CAPTIONS_FILE, records)
        write_conllu(out / CONLLU_FILE, [(r.caption_id, r.tokens) for r in records])
        write_feature_file(out / FEATURES_FILE, maps)
        save_scenes(out / SCENES_FILE, scenes)
        entries = [(w, "noun") for w in cfg.nouns]
        entries += [(w, "adjective") for w in cfg.adjectives]
        entries += [(w, "relation") for w in cfg.relations]
        entries += [("a", "other"), ("and", "other")]
        save_vocab_file(out / VOCAB_FILE, entries)
    return SynthResult(corpus=corpus, features=features, scenes=scenes)


def save_scenes(path: str | Path, scenes: list[SyntheticScene]) -> None:
    rows = [s.to_json() for s in scenes]
    Path(path).write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_scenes(path: str | Path) -> list[SyntheticScene]:
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    return [SyntheticScene.from_json(r) for r in rows]


def generate_ambiguity_cases(corpus: Corpus, n: int, seed: int = 0):
    """Strip attachments from caption graphs, keeping word bags plus gold.

    Each case lists the entity nouns, the attribute adjectives and the
    relation words of one caption; the resolver must reattach them. Cases
    are sampled without replacement, so n may not exceed the caption count.
    """
    from .evalkit import DisambiguationCase

    eligible = [r for r in corpus.records
                if len(r.graph.objects) >= 2 and r.graph.attr_pairs]
    if n > len(eligible):
        raise ValueError(f"requested {n} cases but only {len(eligible)} captions qualify")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 43]))
    picks = rng.choice(len(eligible), size=n, replace=False)
    cases = []
    for i in sorted(int(p) for p in picks):
        rec = eligible[i]
        cases.append(DisambiguationCase(
            image_id=rec.image_id,
            entities=tuple(sorted(rec.graph.objects)),
            attributes=tuple(sorted({a for a, _ in rec.graph.attr_pairs})),
            relation_words=tuple(sorted({r for _, r, _ in rec.graph.rel_triples})),
            gold=rec.graph,
        ))
    return cases
