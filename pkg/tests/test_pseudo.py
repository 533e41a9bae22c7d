"""Embedding extraction and cluster-to-pseudo-label conversion."""

import numpy as np
import pytest

from fedshift.clustering import ClusterConfig, Partition, pairwise_f_score
from fedshift.config import RunConfig
from fedshift.data import (
    Dataset,
    Domain,
    SynthConfig,
    generate_synthetic,
    partition_target,
)
from fedshift.errors import ClusteringError, ShapeError
from fedshift.model import BackboneParams
from fedshift.pipeline import _STREAM_PRETRAIN, _materialize, train_supervised
from fedshift.pseudo import EmbeddingSet, extract_features, generate_pseudo_labels


@pytest.fixture(scope="module")
def pretrained_backbone():
    cfg = RunConfig()
    source_train, _, _ = _materialize(cfg)
    state = train_supervised(source_train, cfg.model, cfg.pretrain,
                             cfg.synth.seed, _STREAM_PRETRAIN)
    return state.backbone


def random_backbone(seed=0, d_in=32, d_h=16, d_e=6):
    return BackboneParams.init(np.random.default_rng(seed), d_in, d_h, d_e)


def orthogonal_embedding_client(samples_per_id=4, ids=3):
    """Hand-built embeddings: one basis direction per identity, repeated."""
    dim = 8
    vectors = np.repeat(np.eye(dim)[:ids], samples_per_id, axis=0)
    identities = np.repeat(np.arange(ids), samples_per_id)
    data = Dataset(vectors.copy(), identities, Domain.TARGET, ids)
    emb = EmbeddingSet(vectors, np.arange(len(vectors), dtype=np.int64))
    return emb, data


class TestExtractFeatures:
    def test_empty_dataset_gives_empty_set(self):
        bb = random_backbone()
        ds = Dataset(np.empty((0, 32)), np.empty(0, dtype=np.int64),
                     Domain.TARGET, 1)
        emb = extract_features(bb, ds)
        assert len(emb.vectors) == 0 and len(emb.sample_indices) == 0

    def test_one_embedding_per_sample_in_order(self):
        bb = random_backbone()
        _, target, _ = generate_synthetic(SynthConfig(seed=1))
        emb = extract_features(bb, target)
        assert emb.vectors.shape == (len(target), bb.dim_embed)
        assert np.array_equal(emb.sample_indices, np.arange(len(target)))
        assert np.allclose(np.linalg.norm(emb.vectors, axis=1), 1.0, atol=1e-9)

    def test_duplicate_samples_embed_identically(self):
        bb = random_backbone()
        row = np.random.default_rng(2).standard_normal(32)
        ds = Dataset(np.stack([row, row]), np.array([0, 0]), Domain.TARGET, 1)
        emb = extract_features(bb, ds)
        assert np.array_equal(emb.vectors[0], emb.vectors[1])

    def test_dim_mismatch_rejected(self):
        bb = random_backbone(d_in=16)
        _, target, _ = generate_synthetic(SynthConfig(seed=1))
        with pytest.raises(ShapeError):
            extract_features(bb, target)


class TestGeneratePseudoLabels:
    def test_separated_identities_recovered_exactly(self):
        emb, data = orthogonal_embedding_client()
        ps = generate_pseudo_labels(emb, ClusterConfig(threshold_d=0.9), data)
        f = pairwise_f_score(Partition(ps.dataset.identities, ps.n_pseudo_ids),
                             data.identities)
        assert f == 1.0
        assert ps.n_pseudo_ids == 3
        assert len(ps.dropped_indices) == 0

    def test_tiny_d_gives_all_singletons(self):
        emb, data = orthogonal_embedding_client()
        # perturb so no two embeddings coincide
        rng = np.random.default_rng(0)
        vecs = emb.vectors + 0.01 * rng.standard_normal(emb.vectors.shape)
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        emb = EmbeddingSet(vecs, emb.sample_indices)
        ps = generate_pseudo_labels(emb, ClusterConfig(threshold_d=1e-9), data)
        assert ps.n_pseudo_ids == len(data)

    def test_min_cluster_size_drops_isolated_point(self):
        emb, data = orthogonal_embedding_client()
        lonely = np.zeros((1, 8))
        lonely[0, 7] = 1.0
        vecs = np.concatenate([emb.vectors, lonely])
        feats = np.concatenate([data.features, lonely])
        idents = np.concatenate([data.identities, [3]])
        data = Dataset(feats, idents, Domain.TARGET, 4)
        emb = EmbeddingSet(vecs, np.arange(len(vecs), dtype=np.int64))
        ps = generate_pseudo_labels(
            emb, ClusterConfig(threshold_d=0.9, min_cluster_size=2), data)
        assert ps.dropped_indices.tolist() == [len(vecs) - 1]
        assert len(ps.dataset) == len(vecs) - 1
        assert ps.n_pseudo_ids == 3

    def test_labels_dense_in_first_appearance_order(self):
        emb, data = orthogonal_embedding_client()
        ps = generate_pseudo_labels(emb, ClusterConfig(threshold_d=0.9), data)
        labels = ps.dataset.identities
        seen = []
        for lab in labels:
            if lab not in seen:
                seen.append(int(lab))
        assert seen == list(range(ps.n_pseudo_ids))

    def test_empty_embedding_set_rejected(self):
        ds = Dataset(np.empty((0, 8)), np.empty(0, dtype=np.int64),
                     Domain.TARGET, 1)
        emb = EmbeddingSet(np.empty((0, 8)), np.empty(0, dtype=np.int64))
        with pytest.raises(ClusteringError):
            generate_pseudo_labels(emb, ClusterConfig(), ds)

    def test_true_identities_do_not_leak(self):
        emb, data = orthogonal_embedding_client()
        relabeled = Dataset(data.features.copy(),
                            data.id_count - 1 - data.identities,
                            data.domain, data.id_count)
        a = generate_pseudo_labels(emb, ClusterConfig(), data)
        b = generate_pseudo_labels(emb, ClusterConfig(), relabeled)
        assert np.array_equal(a.dataset.identities, b.dataset.identities)
        assert a.n_pseudo_ids == b.n_pseudo_ids

    def test_f_score_non_increasing_in_noise(self, pretrained_backbone):
        scores = []
        for sigma in (0.0, 0.05, 0.2):
            _, target, _ = generate_synthetic(SynthConfig(noise_sigma=sigma,
                                                          seed=0))
            client = partition_target(target, 4)[0]
            emb = extract_features(pretrained_backbone, client)
            ps = generate_pseudo_labels(emb, ClusterConfig(), client)
            kept = np.setdiff1d(np.arange(len(client)), ps.dropped_indices)
            scores.append(pairwise_f_score(
                Partition(ps.dataset.identities, ps.n_pseudo_ids),
                client.identities[kept]))
        assert scores[0] >= scores[1] >= scores[2]
