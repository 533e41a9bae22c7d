"""Open-set verification (accuracy, TAR@FAR) and rank-1 identification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Domain, DomainEvalSet, EvalSets
from .errors import MetricError, ShapeError
from .model import BackboneParams, _forward_batch

FAR_BUDGETS = (0.1, 0.01, 0.001)


@dataclass
class MetricsReport:
    domain: Domain
    ver_accuracy: float
    tar_at_far: dict  # {0.1, 0.01, 0.001} -> TAR
    rank1: float

    def __post_init__(self):
        values = [self.ver_accuracy, self.rank1, *self.tar_at_far.values()]
        if any(not (0.0 <= v <= 1.0) for v in values):
            raise MetricError("metrics must lie in [0, 1]")


def verification_metrics(embeddings: np.ndarray, pairs):
    """Best-threshold accuracy and TAR at each FAR budget.

    The decision rule is cosine similarity >= threshold; thresholds are swept
    over the observed similarity values plus a reject-all sentinel.
    """
    genuine, impostor = [], []
    for p in pairs:
        sim = float(np.dot(embeddings[p.index_a], embeddings[p.index_b]) /
                    (np.linalg.norm(embeddings[p.index_a]) *
                     np.linalg.norm(embeddings[p.index_b])))
        (genuine if p.is_same else impostor).append(sim)
    if not genuine or not impostor:
        raise MetricError("need both genuine and impostor pairs")
    genuine = np.asarray(genuine)
    impostor = np.asarray(impostor)
    thresholds = np.concatenate([genuine, impostor, [np.inf]])

    n_total = len(genuine) + len(impostor)
    best_acc = 0.0
    tar_at_far = {f: 0.0 for f in FAR_BUDGETS}
    for t in thresholds:
        tp = float(np.count_nonzero(genuine >= t))
        fp = float(np.count_nonzero(impostor >= t))
        tar = tp / len(genuine)
        far = fp / len(impostor)
        acc = (tp + (len(impostor) - fp)) / n_total
        best_acc = max(best_acc, acc)
        for budget in FAR_BUDGETS:
            if far <= budget:
                tar_at_far[budget] = max(tar_at_far[budget], tar)
    return best_acc, tar_at_far


def identification_rank1(query_embs: np.ndarray, query_ids: np.ndarray,
                         gallery_embs: np.ndarray,
                         gallery_ids: np.ndarray) -> float:
    """Fraction of queries whose nearest gallery entry shares their identity."""
    if len(gallery_embs) == 0:
        raise ShapeError("gallery is empty")
    if len(query_embs) == 0:
        raise ShapeError("query set is empty")
    q = query_embs / np.linalg.norm(query_embs, axis=1, keepdims=True)
    g = gallery_embs / np.linalg.norm(gallery_embs, axis=1, keepdims=True)
    nearest = (q @ g.T).argmax(axis=1)  # argmax ties -> smallest index
    return float(np.mean(np.asarray(gallery_ids)[nearest] == np.asarray(query_ids)))


def evaluate_domain(backbone: BackboneParams, eval_set: DomainEvalSet,
                    domain: Domain) -> MetricsReport:
    emb_all, _ = _forward_batch(backbone, eval_set.eval_data.features)
    acc, tar = verification_metrics(emb_all, eval_set.verification_pairs)
    q_emb, _ = _forward_batch(backbone, eval_set.query.features)
    g_emb, _ = _forward_batch(backbone, eval_set.gallery.features)
    rank1 = identification_rank1(q_emb, eval_set.query.identities,
                                 g_emb, eval_set.gallery.identities)
    return MetricsReport(domain, acc, tar, rank1)


def evaluate_backbone(backbone: BackboneParams, eval_sets: EvalSets) -> dict:
    """MetricsReport per domain."""
    return {
        Domain.SOURCE: evaluate_domain(backbone, eval_sets.source, Domain.SOURCE),
        Domain.TARGET: evaluate_domain(backbone, eval_sets.target, Domain.TARGET),
    }
