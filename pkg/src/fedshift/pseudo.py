"""Embedding extraction and cluster-to-label conversion for target clients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterConfig, c_finch
from .data import Dataset
from .errors import ClusteringError, ShapeError
from .model import BackboneParams, _forward_batch


@dataclass
class EmbeddingSet:
    """Unit-norm embeddings with back-references into the client dataset."""

    vectors: np.ndarray        # (n, d_e)
    sample_indices: np.ndarray  # (n,) indices into the source Dataset


@dataclass
class PseudoLabeledSet:
    """Client dataset with identities overwritten by dense pseudo labels.

    Samples whose cluster fell below min_cluster_size are dropped and their
    original indices recorded in ``dropped_indices``.
    """

    dataset: Dataset
    n_pseudo_ids: int
    provenance: ClusterConfig
    dropped_indices: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))


def extract_features(backbone: BackboneParams, client_data: Dataset) -> EmbeddingSet:
    """Embed every sample in order with the given backbone."""
    if len(client_data) == 0:
        return EmbeddingSet(np.empty((0, backbone.dim_embed)),
                            np.empty(0, dtype=np.int64))
    if client_data.dim != backbone.dim_in:
        raise ShapeError(
            f"dataset dim {client_data.dim} != backbone dim_in {backbone.dim_in}")
    emb, _ = _forward_batch(backbone, client_data.features)
    return EmbeddingSet(emb, np.arange(len(client_data), dtype=np.int64))


def generate_pseudo_labels(emb: EmbeddingSet, cfg: ClusterConfig,
                           client_data: Dataset) -> PseudoLabeledSet:
    """Cluster embeddings and assign one dense pseudo label per cluster."""
    if len(emb.vectors) == 0:
        raise ClusteringError("cannot pseudo-label an empty embedding set")
    hierarchy = c_finch(emb.vectors, cfg)
    final = hierarchy.final()
    sizes = np.bincount(final.labels, minlength=final.n_clusters)
    keep_cluster = sizes >= cfg.min_cluster_size
    keep_mask = keep_cluster[final.labels]
    if not np.any(keep_mask):
        raise ClusteringError(
            "every cluster fell below min_cluster_size; lower it or raise d")
    kept = np.flatnonzero(keep_mask)
    # relabel surviving clusters in order of first appearance
    mapping = {}
    pseudo = np.empty(len(kept), dtype=np.int64)
    for out_i, i in enumerate(kept):
        lab = int(final.labels[i])
        if lab not in mapping:
            mapping[lab] = len(mapping)
        pseudo[out_i] = mapping[lab]
    sample_idx = emb.sample_indices[kept]
    labeled = Dataset(client_data.features[sample_idx].copy(), pseudo,
                      client_data.domain, len(mapping))
    dropped = emb.sample_indices[np.flatnonzero(~keep_mask)]
    return PseudoLabeledSet(labeled, len(mapping), cfg, dropped)
