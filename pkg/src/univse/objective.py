"""Alignment losses and factorized negative sampling.

Four loss families align text and image embeddings:

* sentence and bag-of-components embeddings against pooled image
  embeddings, via a bidirectional margin ranking loss over in-batch
  negatives;
* relation triple embeddings against pooled image embeddings, using
  sampled textual negatives only;
* object noun and (adjective, noun) embeddings against image regions,
  weighted by a softmax relevance map so the loss concentrates on the
  matched region.

Negatives for components come from the corpus: nouns absent from every
caption of the target image, slot-substituted attribute pairs and
triples, and whole triples describing other images.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .corpus import CaptionRecord, Corpus
from .model import ALL_FAMILIES, JointModel
from .vision import FeatureSet

logger = logging.getLogger(__name__)

ZERO_NORM = 1e-12

SUBSTITUTION_ATTEMPTS = 20


@dataclass
class LossConfig:
    """Margin, relevance temperature, family weights and mining strategy."""

    margin: float = 0.2
    tau: float = 1.0
    w_sent: float = 1.0
    w_comp: float = 1.0
    w_rel: float = 1.0
    w_obj: float = 1.0
    hard_mining: bool = True

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        for name in ("w_sent", "w_comp", "w_rel", "w_obj"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def cosine(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of two vectors; rejects (near-)zero inputs."""
    nu = torch.linalg.vector_norm(u)
    nv = torch.linalg.vector_norm(v)
    if float(nu) < ZERO_NORM or float(nv) < ZERO_NORM:
        raise ValueError("cosine similarity undefined for zero vectors")
    return (u @ v) / (nu * nv)


def cosine_rows(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarities between row sets, shape (len(a), len(b))."""
    na = torch.linalg.vector_norm(a, dim=-1, keepdim=True).clamp_min(ZERO_NORM)
    nb = torch.linalg.vector_norm(b, dim=-1, keepdim=True).clamp_min(ZERO_NORM)
    return (a / na) @ (b / nb).T


def _mine(values: torch.Tensor, valid: torch.Tensor, hard: bool, dim: int) -> torch.Tensor:
    """Aggregate hinge terms over negatives: max when mining, else mean.

    Entries where ``valid`` is False are ignored; rows with no valid
    negative contribute zero.
    """
    zeros = torch.zeros((), dtype=values.dtype)
    counts = valid.sum(dim=dim)
    if hard:
        masked = torch.where(valid, values, torch.full_like(values, -torch.inf))
        best = masked.max(dim=dim).values
        return torch.where(counts > 0, best, zeros)
    masked = torch.where(valid, values, torch.zeros_like(values))
    return torch.where(counts > 0, masked.sum(dim=dim) / counts.clamp_min(1), zeros)


def ranking_loss_bidirectional(cap_embs: torch.Tensor, img_embs: torch.Tensor, cfg: LossConfig,
                               neg_pairs: torch.Tensor | None = None,
                               row_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Bidirectional margin ranking loss over in-batch negatives.

    ``cap_embs`` and ``img_embs`` hold the matched pairs row-aligned.
    ``neg_pairs[i, j]`` marks pair j as a usable negative for pair i
    (default: everything off the diagonal); ``row_mask`` excludes pairs
    entirely (their rows and columns contribute nothing). Returns the sum
    of the caption-to-image and image-to-caption directions.
    """
    n = cap_embs.shape[0]
    if n != img_embs.shape[0]:
        raise ValueError("caption and image batches differ in size")
    if neg_pairs is None:
        neg_pairs = ~torch.eye(n, dtype=torch.bool)
    if row_mask is not None:
        neg_pairs = neg_pairs & row_mask.unsqueeze(0) & row_mask.unsqueeze(1)
    else:
        row_mask = torch.ones(n, dtype=torch.bool)
    if int(row_mask.sum()) >= 1 and not bool(neg_pairs.any()):
        if cfg.hard_mining and n < 2:
            raise ValueError("no negatives available in a batch of one")

    sims = cosine_rows(cap_embs, img_embs)
    pos = sims.diagonal()

    # caption direction: caption i against negative images j
    cap_hinge = torch.relu(cfg.margin + sims - pos.unsqueeze(1))
    cap_terms = _mine(cap_hinge, neg_pairs, cfg.hard_mining, dim=1)
    # image direction: image j against negative captions i
    img_hinge = torch.relu(cfg.margin + sims - pos.unsqueeze(0))
    img_terms = _mine(img_hinge, neg_pairs, cfg.hard_mining, dim=0)

    keep = row_mask.to(cap_terms.dtype)
    return (cap_terms * keep).sum() + (img_terms * keep).sum()


def relevance_map(u_obj: torch.Tensor, regions: torch.Tensor, tau: float = 1.0) -> torch.Tensor:
    """Softmax over region similarities; entries are positive and sum to 1.

    ``regions`` may be a flat (n, d) list or an (R, C, d) grid; the output
    keeps the spatial shape. ``tau`` sharpens the map for visualization
    and stays 1 during training.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    spatial = regions.shape[:-1]
    flat = regions.reshape(-1, regions.shape[-1])
    if flat.shape[0] == 0:
        raise ValueError("empty region grid")
    sims = cosine_rows(u_obj.unsqueeze(0), flat).squeeze(0)
    return torch.softmax(sims / tau, dim=0).reshape(spatial)


def obj_loss(u_pos: torch.Tensor, u_neg: torch.Tensor, regions: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Relevance-weighted region hinge between one positive and one negative."""
    flat = regions.reshape(-1, regions.shape[-1])
    weights = relevance_map(u_pos, flat, tau=1.0)
    sims_pos = cosine_rows(u_pos.unsqueeze(0), flat).squeeze(0)
    sims_neg = cosine_rows(u_neg.unsqueeze(0), flat).squeeze(0)
    hinge = torch.relu(cfg.margin + sims_neg - sims_pos)
    return (weights * hinge).sum()


# negative sampling ---------------------------------------------------------


@dataclass
class PairNegatives:
    """Sampled component negatives for one image-caption pair."""

    nouns: list[str] = field(default_factory=list)
    attr_pairs: dict[tuple[str, str], list[tuple[str, str]]] = field(default_factory=dict)
    triples: dict[tuple[str, str, str], list[tuple[str, str, str]]] = field(default_factory=dict)


@dataclass
class TrainBatch:
    """Matched pairs plus sampled negatives of every component family.

    ``neg_captions[i]`` / ``neg_images[i]`` list the in-batch indices whose
    image differs from pair i's image; they feed the caption/image
    directions of the global ranking losses.
    """

    records: list[CaptionRecord]
    negatives: list[PairNegatives]
    neg_captions: list[list[int]]
    neg_images: list[list[int]]

    @property
    def image_ids(self) -> list[str]:
        return [r.image_id for r in self.records]


def _draw(rng: np.random.Generator, pool: list, count: int) -> list:
    """Sample ``count`` items, without replacement while the pool allows."""
    if not pool:
        return []
    if len(pool) >= count:
        idx = rng.choice(len(pool), size=count, replace=False)
    else:
        idx = rng.choice(len(pool), size=count, replace=True)
    return [pool[int(i)] for i in idx]


def sample_negatives(record: CaptionRecord, corpus: Corpus, rng: np.random.Generator,
                     n_per_family: int = 3) -> PairNegatives:
    """Sample component negatives for one pair.

    Noun negatives never appear in any caption of the pair's image;
    attribute negatives substitute the adjective or the noun (50/50);
    triple negatives substitute one slot or reuse a whole triple from
    another image (50/50). A family whose candidate pool is exhausted is
    skipped with a warning.
    """
    image_id = record.image_id
    out = PairNegatives()

    noun_pool = [n for n in corpus.nouns if n not in corpus.image_nouns[image_id]]
    if record.graph.objects and not noun_pool:
        logger.warning("pair %s: no irrelevant noun available, skipping noun negatives", record.caption_id)
    out.nouns = _draw(rng, noun_pool, n_per_family)

    image_pairs = corpus.image_attr_pairs[image_id]
    for pair in sorted(record.graph.attr_pairs):
        adj, noun = pair
        found: list[tuple[str, str]] = []
        for _ in range(n_per_family):
            candidate = None
            for _ in range(SUBSTITUTION_ATTEMPTS):
                if rng.random() < 0.5 and len(corpus.adjectives) > 1:
                    alt = corpus.adjectives[int(rng.integers(len(corpus.adjectives)))]
                    trial = (alt, noun)
                else:
                    alt = corpus.nouns[int(rng.integers(len(corpus.nouns)))]
                    trial = (adj, alt)
                if trial != pair and trial not in image_pairs:
                    candidate = trial
                    break
            if candidate is not None:
                found.append(candidate)
        if found:
            out.attr_pairs[pair] = found
        else:
            logger.warning("pair %s: no attribute negative for %s, family skipped", record.caption_id, pair)

    image_triples = corpus.image_triples[image_id]
    foreign = sorted({t for img, ts in corpus.image_triples.items() if img != image_id for t in ts} - image_triples)
    for triple in sorted(set(record.graph.rel_triples)):
        found_t: list[tuple[str, str, str]] = []
        for _ in range(n_per_family):
            candidate = None
            for _ in range(SUBSTITUTION_ATTEMPTS):
                if foreign and rng.random() < 0.5:
                    trial = foreign[int(rng.integers(len(foreign)))]
                else:
                    slot = int(rng.integers(3))
                    words = list(triple)
                    if slot == 1:
                        pool = corpus.relation_words
                    else:
                        pool = corpus.nouns
                    if len(pool) < 2:
                        continue
                    words[slot] = pool[int(rng.integers(len(pool)))]
                    trial = tuple(words)
                if trial != triple and trial not in image_triples:
                    candidate = trial
                    break
            if candidate is not None:
                found_t.append(candidate)
        if found_t:
            out.triples[triple] = found_t
        else:
            logger.warning("pair %s: no triple negative for %s, family skipped", record.caption_id, triple)
    return out


def assemble_batch(records: list[CaptionRecord], corpus: Corpus, rng: np.random.Generator,
                   n_per_family: int = 3) -> TrainBatch:
    """Sample negatives for every pair and wire up cross-pair references."""
    negatives = [sample_negatives(rec, corpus, rng, n_per_family) for rec in records]
    neg_captions = []
    neg_images = []
    for i, rec in enumerate(records):
        others = [j for j, other in enumerate(records) if other.image_id != rec.image_id]
        neg_captions.append(others)
        neg_images.append(others)
    return TrainBatch(records=records, negatives=negatives, neg_captions=neg_captions, neg_images=neg_images)


# batch-level losses --------------------------------------------------------


def _cross_pair_mask(batch: TrainBatch) -> torch.Tensor:
    n = len(batch.records)
    mask = torch.zeros((n, n), dtype=torch.bool)
    for i, js in enumerate(batch.neg_images):
        for j in js:
            mask[i, j] = True
    return mask


def _component_loss(pos_rows: torch.Tensor, neg_rows: torch.Tensor, valid: torch.Tensor,
                    target_rows: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Shared hinge for components scored against a per-component target.

    ``pos_rows`` is (n, d), ``neg_rows`` (n, k, d), ``target_rows`` (n, d);
    hinges compare each negative with its positive on the same target, and
    negatives are aggregated per component by the mining strategy.
    """
    if pos_rows.shape[0] == 0:
        return torch.zeros((), dtype=torch.float64)
    pos_sims = torch.sum(_unit(pos_rows) * _unit(target_rows), dim=1)
    neg_sims = torch.einsum("nkd,nd->nk", _unit(neg_rows), _unit(target_rows))
    hinge = torch.relu(cfg.margin + neg_sims - pos_sims.unsqueeze(1))
    return _mine(hinge, valid, cfg.hard_mining, dim=1).sum()


def _unit(x: torch.Tensor) -> torch.Tensor:
    return x / torch.linalg.vector_norm(x, dim=-1, keepdim=True).clamp_min(ZERO_NORM)


@dataclass
class EncodedBatch:
    """All tensors needed to evaluate the training losses on one batch."""

    u_sent: torch.Tensor
    u_comp: torch.Tensor
    comp_mask: torch.Tensor
    pooled: torch.Tensor
    regions: torch.Tensor
    cross_mask: torch.Tensor
    # relation positives: rows, owning-pair index, padded negatives
    rel_pos: torch.Tensor
    rel_pair: torch.Tensor
    rel_negs: torch.Tensor
    rel_valid: torch.Tensor
    # region-level positives (nouns then attribute pairs)
    reg_pos: torch.Tensor
    reg_pair: torch.Tensor
    reg_negs: torch.Tensor
    reg_valid: torch.Tensor


def encode_batch(model: JointModel, batch: TrainBatch, features: FeatureSet,
                 families: tuple[str, ...] = ALL_FAMILIES) -> EncodedBatch:
    """Run every encoder over a batch, shaping components for the losses."""
    encodings = model.encode_records(batch.records, alpha=1.0, families=families)
    u_sent = torch.stack([e.u_sent for e in encodings])
    d = model.dims.embed_dim
    comp_mask = torch.tensor([e.u_comp is not None for e in encodings], dtype=torch.bool)
    comp_rows = [e.u_comp if e.u_comp is not None else u_sent.new_zeros(d) for e in encodings]
    u_comp = torch.stack(comp_rows)

    regions, pooled = model.encode_images(features, batch.image_ids)

    # relation positives and their sampled textual negatives
    rel_pos_triples: list[tuple[str, str, str]] = []
    rel_pair_idx: list[int] = []
    rel_neg_triples: list[list[tuple[str, str, str]]] = []
    if "rel" in families:
        for k, (rec, negs) in enumerate(zip(batch.records, batch.negatives)):
            for triple, neg_list in sorted(negs.triples.items()):
                rel_pos_triples.append(triple)
                rel_pair_idx.append(k)
                rel_neg_triples.append(neg_list)
    max_rel = max((len(x) for x in rel_neg_triples), default=0)
    rel_valid = torch.zeros((len(rel_pos_triples), max_rel), dtype=torch.bool)
    padded_rel: list[tuple[str, str, str]] = []
    for i, neg_list in enumerate(rel_neg_triples):
        rel_valid[i, : len(neg_list)] = True
        padded_rel.extend(neg_list + [neg_list[0]] * (max_rel - len(neg_list)))
    rel_pos = model.encode_triples(rel_pos_triples)
    rel_negs = model.encode_triples(padded_rel).reshape(len(rel_pos_triples), max_rel, -1) \
        if rel_pos_triples else u_sent.new_zeros((0, 0, d))

    # region-level positives: nouns first, then attribute pairs
    noun_words: list[str] = []
    noun_pair_idx: list[int] = []
    noun_negs: list[list[str]] = []
    if "obj" in families:
        for k, (rec, negs) in enumerate(zip(batch.records, batch.negatives)):
            if not negs.nouns:
                continue
            for noun in sorted(rec.graph.objects):
                noun_words.append(noun)
                noun_pair_idx.append(k)
                noun_negs.append(negs.nouns)
    attr_pairs: list[tuple[str, str]] = []
    attr_pair_idx: list[int] = []
    attr_negs: list[list[tuple[str, str]]] = []
    if "attr" in families:
        for k, (rec, negs) in enumerate(zip(batch.records, batch.negatives)):
            for pair, neg_list in sorted(negs.attr_pairs.items()):
                attr_pairs.append(pair)
                attr_pair_idx.append(k)
                attr_negs.append(neg_list)

    reg_counts = [len(x) for x in noun_negs] + [len(x) for x in attr_negs]
    max_reg = max(reg_counts, default=0)
    total_reg = len(noun_words) + len(attr_pairs)
    reg_valid = torch.zeros((total_reg, max_reg), dtype=torch.bool)
    for i, count in enumerate(reg_counts):
        reg_valid[i, :count] = True

    noun_pos = model.encode_object_words(noun_words)
    attr_pos = model.encode_attr_pairs(attr_pairs)
    reg_pos = torch.cat([noun_pos, attr_pos]) if total_reg else u_sent.new_zeros((0, d))

    padded_nouns: list[str] = []
    for neg_list in noun_negs:
        padded_nouns.extend(neg_list + [neg_list[0]] * (max_reg - len(neg_list)))
    padded_pairs: list[tuple[str, str]] = []
    for neg_list in attr_negs:
        padded_pairs.extend(neg_list + [neg_list[0]] * (max_reg - len(neg_list)))
    neg_noun_rows = model.encode_object_words(padded_nouns)
    neg_pair_rows = model.encode_attr_pairs(padded_pairs)
    reg_negs = torch.cat([
        neg_noun_rows.reshape(len(noun_words), max_reg, -1) if noun_words else u_sent.new_zeros((0, max_reg, d)),
        neg_pair_rows.reshape(len(attr_pairs), max_reg, -1) if attr_pairs else u_sent.new_zeros((0, max_reg, d)),
    ]) if total_reg else u_sent.new_zeros((0, 0, d))

    return EncodedBatch(
        u_sent=u_sent,
        u_comp=u_comp,
        comp_mask=comp_mask,
        pooled=pooled,
        regions=regions,
        cross_mask=_cross_pair_mask(batch),
        rel_pos=rel_pos,
        rel_pair=torch.tensor(rel_pair_idx, dtype=torch.long),
        rel_negs=rel_negs,
        rel_valid=rel_valid,
        reg_pos=reg_pos,
        reg_pair=torch.tensor(noun_pair_idx + attr_pair_idx, dtype=torch.long),
        reg_negs=reg_negs,
        reg_valid=reg_valid,
    )


def global_alignment_losses(enc: EncodedBatch, cfg: LossConfig) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Relation, component and sentence losses against pooled image rows."""
    l_sent = ranking_loss_bidirectional(enc.u_sent, enc.pooled, cfg, neg_pairs=enc.cross_mask)
    l_comp = ranking_loss_bidirectional(enc.u_comp, enc.pooled, cfg, neg_pairs=enc.cross_mask,
                                        row_mask=enc.comp_mask)
    if enc.rel_pos.shape[0]:
        targets = enc.pooled.index_select(0, enc.rel_pair)
        l_rel = _component_loss(enc.rel_pos, enc.rel_negs, enc.rel_valid, targets, cfg)
    else:
        l_rel = torch.zeros((), dtype=torch.float64)
    return l_rel, l_comp, l_sent


def region_alignment_loss(enc: EncodedBatch, cfg: LossConfig) -> torch.Tensor:
    """Relevance-weighted hinge over regions for noun and attribute positives."""
    n = enc.reg_pos.shape[0]
    if n == 0:
        return torch.zeros((), dtype=torch.float64)
    region_rows = _unit(enc.regions.index_select(0, enc.reg_pair))
    pos_unit = _unit(enc.reg_pos)
    sims_pos = torch.einsum("nd,nrd->nr", pos_unit, region_rows)
    weights = torch.softmax(sims_pos / cfg.tau, dim=1)
    neg_unit = _unit(enc.reg_negs)
    sims_neg = torch.einsum("nkd,nrd->nkr", neg_unit, region_rows)
    hinge = torch.relu(cfg.margin + sims_neg - sims_pos.unsqueeze(1))
    weighted = (weights.unsqueeze(1) * hinge).sum(dim=2)
    return _mine(weighted, enc.reg_valid, cfg.hard_mining, dim=1).sum()


def total_loss(model: JointModel, batch: TrainBatch, features: FeatureSet,
               cfg: LossConfig,
               families: tuple[str, ...] = ALL_FAMILIES) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted multi-task loss plus per-family values for logging.

    ``families`` restricts which component kinds train: both their place
    in the bag-of-components embedding and their alignment losses.
    """
    enc = encode_batch(model, batch, features, families=families)
    l_rel, l_comp, l_sent = global_alignment_losses(enc, cfg)
    l_obj = region_alignment_loss(enc, cfg)
    total = cfg.w_sent * l_sent + cfg.w_comp * l_comp + cfg.w_rel * l_rel + cfg.w_obj * l_obj
    parts = {
        "loss_sent": float(l_sent.detach()),
        "loss_comp": float(l_comp.detach()),
        "loss_rel": float(l_rel.detach()),
        "loss_obj": float(l_obj.detach()),
    }
    return total, parts
