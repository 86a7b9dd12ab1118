"""Independent reference implementations used to audit the fast paths.

Everything in here is deliberately written as plain Python loops over
numpy scalars. No code is shared with the library's vectorized losses or
metrics, so agreement between the two is meaningful evidence rather than
a tautology.
"""

from __future__ import annotations

import math

import numpy as np


def _cos(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def _aggregate(terms: list[float], hard: bool) -> float:
    if not terms:
        return 0.0
    return max(terms) if hard else sum(terms) / len(terms)


def ranking_loss(cap: np.ndarray, img: np.ndarray, margin: float, hard: bool,
                 neg_mask: np.ndarray, row_mask: np.ndarray) -> float:
    """Bidirectional margin ranking loss, one hinge at a time.

    ``neg_mask[i, j]`` marks pair j as a negative for pair i; rows where
    ``row_mask`` is False contribute nothing in either direction.
    """
    n = cap.shape[0]
    total = 0.0
    for i in range(n):
        if not row_mask[i]:
            continue
        pos = _cos(cap[i], img[i])
        terms = []
        for j in range(n):
            if neg_mask[i, j] and row_mask[j]:
                terms.append(max(0.0, margin + _cos(cap[i], img[j]) - pos))
        total += _aggregate(terms, hard)
    for j in range(n):
        if not row_mask[j]:
            continue
        pos = _cos(cap[j], img[j])
        terms = []
        for i in range(n):
            if neg_mask[i, j] and row_mask[i]:
                terms.append(max(0.0, margin + _cos(cap[i], img[j]) - pos))
        total += _aggregate(terms, hard)
    return total


def component_loss(pos_rows: np.ndarray, neg_rows: np.ndarray, valid: np.ndarray,
                   targets: np.ndarray, margin: float, hard: bool) -> float:
    """Per-component hinge against a shared target, negatives mined per row."""
    total = 0.0
    for i in range(pos_rows.shape[0]):
        pos = _cos(pos_rows[i], targets[i])
        terms = []
        for k in range(neg_rows.shape[1]):
            if valid[i, k]:
                terms.append(max(0.0, margin + _cos(neg_rows[i, k], targets[i]) - pos))
        total += _aggregate(terms, hard)
    return total


def region_loss(pos_rows: np.ndarray, neg_rows: np.ndarray, valid: np.ndarray,
                region_rows: np.ndarray, margin: float, tau: float, hard: bool) -> float:
    """Relevance-weighted region hinge.

    ``region_rows[i]`` holds the flattened grid of the image component i
    belongs to. The weights are the softmax of the positive's region
    similarities at temperature ``tau``; each negative accumulates its
    weighted hinge over all regions before mining.
    """
    total = 0.0
    for i in range(pos_rows.shape[0]):
        regions = region_rows[i]
        sims_pos = [_cos(pos_rows[i], regions[r]) for r in range(regions.shape[0])]
        exps = [math.exp(s / tau) for s in sims_pos]
        z = sum(exps)
        weights = [e / z for e in exps]
        terms = []
        for k in range(neg_rows.shape[1]):
            if not valid[i, k]:
                continue
            acc = 0.0
            for r in range(regions.shape[0]):
                sim_neg = _cos(neg_rows[i, k], regions[r])
                acc += weights[r] * max(0.0, margin + sim_neg - sims_pos[r])
            terms.append(acc)
        total += _aggregate(terms, hard)
    return total


def average_precision(ranking: np.ndarray, gold: set[int]) -> float:
    """Mean of precision values at each gold item's rank."""
    if not gold:
        return 0.0
    hits = 0
    precisions = []
    for rank, cand in enumerate(ranking, start=1):
        if int(cand) in gold:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(gold)


def recall_at_k(rankings: list[np.ndarray], gold_sets: list[set[int]], k: int) -> float:
    hits = 0
    for ranking, gold in zip(rankings, gold_sets):
        if any(int(c) in gold for c in ranking[:k]):
            hits += 1
    return hits / len(rankings) if rankings else 0.0
