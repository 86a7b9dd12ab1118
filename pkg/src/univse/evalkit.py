"""Retrieval metrics, adversarial evaluation and visual disambiguation.

Everything here runs over a read-only model snapshot. Rankings are
deterministic: descending cosine similarity with ties broken by ascending
candidate index. Component queries are always embedded by their own
encoder (word fusion for nouns and attribute pairs, the combiner for
triples), never flattened into sentences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .adversary import AttackSuite
from .corpus import Corpus
from .model import ALL_FAMILIES, JointModel
from .objective import cosine_rows, relevance_map
from .semparse import SemanticGraph
from .vision import FeatureSet

DEFAULT_KS = (1, 5, 10)
VISUAL_TAU = 0.1


@dataclass
class RetrievalReport:
    direction: str
    r_at: dict[int, float]
    map_score: float
    n_queries: int
    n_candidates: int

    @property
    def rsum(self) -> float:
        return 100.0 * sum(self.r_at.values())

    def to_json(self) -> dict:
        return {
            "direction": self.direction,
            "r_at": {str(k): v for k, v in sorted(self.r_at.items())},
            "rsum": self.rsum,
            "map": self.map_score,
            "n_queries": self.n_queries,
            "n_candidates": self.n_candidates,
        }


def rank_candidates(query: torch.Tensor, candidates: torch.Tensor) -> np.ndarray:
    """Candidate indices by descending similarity, ties by ascending index."""
    if candidates.shape[0] < 1:
        raise ValueError("need at least one candidate to rank")
    sims = cosine_rows(query.unsqueeze(0), candidates)[0].detach().numpy()
    return np.lexsort((np.arange(len(sims)), -sims))


def recall_at_k(rankings: list[np.ndarray], gold_sets: list[set[int]], k: int) -> float:
    """Fraction of queries with at least one gold candidate in the top k."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not rankings:
        return 0.0
    hits = 0
    for ranking, gold in zip(rankings, gold_sets):
        if k > len(ranking):
            raise ValueError(f"k={k} exceeds the candidate count {len(ranking)}")
        if any(int(i) in gold for i in ranking[:k]):
            hits += 1
    return hits / len(rankings)


def average_precision(ranking: np.ndarray, gold: set[int]) -> float:
    if not gold:
        raise ValueError("average precision needs at least one positive")
    seen = 0
    total = 0.0
    for pos, idx in enumerate(ranking, start=1):
        if int(idx) in gold:
            seen += 1
            total += seen / pos
    return total / len(gold)


def _report(rankings: list[np.ndarray], gold_sets: list[set[int]], direction: str,
            ks: tuple[int, ...], n_candidates: int) -> RetrievalReport:
    r_at = {k: recall_at_k(rankings, gold_sets, k) for k in ks}
    ap = [average_precision(r, g) for r, g in zip(rankings, gold_sets)]
    return RetrievalReport(direction=direction, r_at=r_at,
                           map_score=float(np.mean(ap)) if ap else 0.0,
                           n_queries=len(rankings), n_candidates=n_candidates)


def retrieval_report(model: JointModel, corpus: Corpus, features: FeatureSet,
                     alpha: float, direction: str = "t2i", ks: tuple[int, ...] = DEFAULT_KS,
                     families: tuple[str, ...] = ALL_FAMILIES) -> RetrievalReport:
    """Caption/image retrieval within one corpus partition."""
    if direction not in ("t2i", "i2t"):
        raise ValueError(f"unknown direction {direction!r}")
    image_ids = corpus.image_ids
    with torch.no_grad():
        encodings = model.encode_records(corpus.records, alpha=alpha, families=families)
        captions = torch.stack([e.u_cap for e in encodings])
        _, pooled = model.encode_images(features, image_ids)

    image_index = {img: i for i, img in enumerate(image_ids)}
    if direction == "t2i":
        rankings = [rank_candidates(captions[i], pooled) for i in range(len(corpus.records))]
        gold = [{image_index[rec.image_id]} for rec in corpus.records]
        n_candidates = len(image_ids)
    else:
        by_image: dict[str, set[int]] = {img: set() for img in image_ids}
        for i, rec in enumerate(corpus.records):
            by_image[rec.image_id].add(i)
        rankings = [rank_candidates(pooled[i], captions) for i in range(len(image_ids))]
        gold = [by_image[img] for img in image_ids]
        n_candidates = len(corpus.records)
    return _report(rankings, gold, direction, ks, n_candidates)


def adversarial_eval(model: JointModel, corpus: Corpus, features: FeatureSet,
                     suite: AttackSuite, alpha: float, ks: tuple[int, ...] = DEFAULT_KS,
                     families: tuple[str, ...] = ALL_FAMILIES) -> RetrievalReport:
    """Image-to-caption retrieval over originals plus adversarial fakes.

    Gold candidates for an image are its original captions only; every
    caption of the image counts as a hit.
    """
    records = list(corpus.records)
    n_orig = len(records)
    records += [adv.to_record(f"{adv.source_caption_id}_adv{i}")
                for i, adv in enumerate(suite.adversarials)]
    image_ids = corpus.image_ids
    with torch.no_grad():
        encodings = model.encode_records(records, alpha=alpha, families=families)
        captions = torch.stack([e.u_cap for e in encodings])
        _, pooled = model.encode_images(features, image_ids)
    by_image: dict[str, set[int]] = {img: set() for img in image_ids}
    for i, rec in enumerate(records[:n_orig]):
        by_image[rec.image_id].add(i)
    rankings = [rank_candidates(pooled[i], captions) for i in range(len(image_ids))]
    gold = [by_image[img] for img in image_ids]
    return _report(rankings, gold, "i2t", ks, len(records))


@dataclass
class UnifiedReport:
    map_per_type: dict[str, float]
    n_queries: dict[str, int]
    n_excluded: dict[str, int]

    def to_json(self) -> dict:
        return {"map_per_type": self.map_per_type, "n_queries": self.n_queries,
                "n_excluded": self.n_excluded}


def unified_retrieval_map(model: JointModel, corpus: Corpus, features: FeatureSet,
                          alpha: float) -> UnifiedReport:
    """Text-to-image mAP with queries ranging from words to sentences.

    A component query's positives are the images whose caption set
    contains that component; zero-positive queries are excluded from the
    mean but reported.
    """
    image_ids = corpus.image_ids
    image_index = {img: i for i, img in enumerate(image_ids)}
    with torch.no_grad():
        _, pooled = model.encode_images(features, image_ids)

        queries: dict[str, tuple[torch.Tensor, list[set[int]]]] = {}

        nouns = corpus.nouns
        noun_pos = [{image_index[img] for img in image_ids if n in corpus.image_nouns[img]}
                    for n in nouns]
        queries["obj"] = (model.encode_object_words(list(nouns)), noun_pos)

        pairs = sorted({p for img in image_ids for p in corpus.image_attr_pairs[img]})
        pair_pos = [{image_index[img] for img in image_ids if p in corpus.image_attr_pairs[img]}
                    for p in pairs]
        queries["attr"] = (model.encode_attr_pairs(pairs), pair_pos)

        triples = sorted({t for img in image_ids for t in corpus.image_triples[img]})
        triple_pos = [{image_index[img] for img in image_ids if t in corpus.image_triples[img]}
                      for t in triples]
        queries["rel"] = (model.encode_triples(triples), triple_pos)

        encodings = model.encode_records(corpus.records, alpha=alpha)
        sent_pos = [{image_index[rec.image_id]} for rec in corpus.records]
        queries["sentence"] = (torch.stack([e.u_cap for e in encodings]), sent_pos)

        map_per_type: dict[str, float] = {}
        n_queries: dict[str, int] = {}
        n_excluded: dict[str, int] = {}
        for kind, (embs, positives) in queries.items():
            aps = []
            excluded = 0
            for row, gold in zip(embs, positives):
                if not gold:
                    excluded += 1
                    continue
                aps.append(average_precision(rank_candidates(row, pooled), gold))
            map_per_type[kind] = float(np.mean(aps)) if aps else 0.0
            n_queries[kind] = len(aps)
            n_excluded[kind] = excluded
    return UnifiedReport(map_per_type=map_per_type, n_queries=n_queries, n_excluded=n_excluded)


# visual-cue disambiguation ---------------------------------------------------


@dataclass
class DisambiguationCase:
    """Word bags of one caption with the attachments stripped."""

    image_id: str
    entities: tuple[str, ...]
    attributes: tuple[str, ...]
    relation_words: tuple[str, ...]
    gold: SemanticGraph

    def __post_init__(self):
        listed = set(self.entities)
        for a, n in self.gold.attr_pairs:
            if n not in listed or a not in self.attributes:
                raise ValueError("gold attribute pair uses unlisted words")
        for s, r, o in self.gold.rel_triples:
            if s not in listed or o not in listed or r not in self.relation_words:
                raise ValueError("gold triple uses unlisted words")


class CaseSkipped(ValueError):
    """The case lacks the entities its relations would need."""


@dataclass
class ResolvedCase:
    predicted: SemanticGraph
    n_correct: int
    n_total: int


def resolve_with_visual_cues(case: DisambiguationCase, model: JointModel,
                             features: FeatureSet) -> ResolvedCase:
    """Reattach attributes and relations by their match with the image.

    Attribute candidates are scored by their best region cosine, relation
    candidates by cosine with the pooled image embedding; each argmax wins.
    """
    if case.relation_words and len(case.entities) < 2:
        raise CaseSkipped(f"case on {case.image_id} has a relation but fewer than 2 entities")
    with torch.no_grad():
        regions, pooled = model.encode_images(features, [case.image_id])
        region_rows = regions[0]
        pooled_row = pooled[0]

        predicted_attrs: set[tuple[str, str]] = set()
        n_correct = 0
        n_total = 0
        for adjective in case.attributes:
            cands = [(adjective, e) for e in case.entities]
            embs = model.encode_attr_pairs(cands)
            scores = cosine_rows(embs, region_rows).max(dim=1).values.numpy()
            best = cands[int(np.lexsort((np.arange(len(cands)), -scores))[0])]
            predicted_attrs.add(best)
            n_total += 1
            if best in case.gold.attr_pairs:
                n_correct += 1

        predicted_triples: list[tuple[str, str, str]] = []
        for rel in case.relation_words:
            cands_t = [(s, rel, o) for s in case.entities for o in case.entities if s != o]
            embs = model.encode_triples(cands_t)
            scores = cosine_rows(embs, pooled_row.unsqueeze(0))[:, 0].numpy()
            best_t = cands_t[int(np.lexsort((np.arange(len(cands_t)), -scores))[0])]
            predicted_triples.append(best_t)
            n_total += 1
            if best_t in case.gold.rel_triples:
                n_correct += 1

    predicted = SemanticGraph(objects=set(case.entities), attr_pairs=predicted_attrs,
                              rel_triples=predicted_triples)
    return ResolvedCase(predicted=predicted, n_correct=n_correct, n_total=n_total)


@dataclass
class DisambiguationReport:
    accuracy: float
    random_baseline: float
    n_cases: int
    n_resolutions: int
    n_skipped: int

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "random_baseline": self.random_baseline,
                "n_cases": self.n_cases, "n_resolutions": self.n_resolutions,
                "n_skipped": self.n_skipped}


def simulate_random_baseline(cases: list[DisambiguationCase], trials: int = 200,
                             seed: int = 0) -> float:
    """Monte-Carlo accuracy of uniform attachment over the same cases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    correct = 0
    total = 0
    for _ in range(trials):
        for case in cases:
            ents = case.entities
            for adjective in case.attributes:
                pick = ents[int(rng.integers(len(ents)))]
                total += 1
                if (adjective, pick) in case.gold.attr_pairs:
                    correct += 1
            pairs = [(s, o) for s in ents for o in ents if s != o]
            for rel in case.relation_words:
                s, o = pairs[int(rng.integers(len(pairs)))]
                total += 1
                if (s, rel, o) in case.gold.rel_triples:
                    correct += 1
    return correct / total if total else 0.0


def disambiguation_accuracy(cases: list[DisambiguationCase], model: JointModel,
                            features: FeatureSet, baseline_trials: int = 200,
                            baseline_seed: int = 0) -> DisambiguationReport:
    n_correct = 0
    n_total = 0
    n_cases = 0
    n_skipped = 0
    usable = []
    for case in cases:
        try:
            resolved = resolve_with_visual_cues(case, model, features)
        except CaseSkipped:
            n_skipped += 1
            continue
        usable.append(case)
        n_correct += resolved.n_correct
        n_total += resolved.n_total
        n_cases += 1
    baseline = simulate_random_baseline(usable, trials=baseline_trials, seed=baseline_seed)
    accuracy = n_correct / n_total if n_total else 0.0
    return DisambiguationReport(accuracy=accuracy, random_baseline=baseline,
                                n_cases=n_cases, n_resolutions=n_total, n_skipped=n_skipped)


# relevance export ------------------------------------------------------------


def parse_component_query(query: str, model: JointModel) -> torch.Tensor:
    """Embed a one-component textual query: "<noun>" or "<adjective> <noun>"."""
    words = query.strip().lower().split()
    classes = {w: model.vocab.pos_class[model.vocab.lookup(w)] for w in words}
    if len(words) == 1 and classes[words[0]] == "noun":
        return model.encode_object_words(words)[0]
    if len(words) == 2 and classes[words[0]] == "adjective" and classes[words[1]] == "noun":
        return model.encode_attr_pairs([(words[0], words[1])])[0]
    raise ValueError(f"query {query!r} does not name an object or attribute-object component")


def _heat_color(value: float) -> tuple[int, int, int]:
    v = min(1.0, max(0.0, value))
    return (int(255 * v), int(64 * (1 - abs(2 * v - 1))), int(255 * (1 - v)))


def write_heatmap_ppm(path: str | Path, grid: np.ndarray, cell_px: int = 32) -> None:
    """Render the map as a binary portable pixmap, one block per cell."""
    rows, cols = grid.shape
    top = float(grid.max())
    scaled = grid / top if top > 0 else grid
    body = bytearray()
    for r in range(rows):
        line = bytearray()
        for c in range(cols):
            line.extend(bytes(_heat_color(float(scaled[r, c]))) * cell_px)
        body.extend(bytes(line) * cell_px)
    header = f"P6\n{cols * cell_px} {rows * cell_px}\n255\n".encode("ascii")
    Path(path).write_bytes(header + bytes(body))


def export_relevance(model: JointModel, features: FeatureSet, image_id: str, query: str,
                     out_json: str | Path, tau: float = VISUAL_TAU,
                     out_ppm: str | Path | None = None) -> np.ndarray:
    """Write the relevance map of a component query over one image's grid."""
    if image_id not in features.by_id:
        raise KeyError(f"no features for image {image_id!r}")
    raw = features.by_id[image_id]
    rows, cols = raw.data.shape[0], raw.data.shape[1]
    with torch.no_grad():
        emb = parse_component_query(query, model)
        regions, _ = model.encode_images(features, [image_id])
        grid = relevance_map(emb, regions[0].reshape(rows, cols, -1), tau=tau).numpy()
    payload = {
        "image_id": image_id,
        "query": query,
        "tau": tau,
        "rows": rows,
        "cols": cols,
        "map": [[float(x) for x in row] for row in grid],
    }
    Path(out_json).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    if out_ppm is not None:
        write_heatmap_ppm(out_ppm, grid)
    return grid
