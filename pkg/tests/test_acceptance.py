"""Acceptance suite: one test per release criterion.

Each test prints a single machine-greppable verdict line of the form
``ACCEPT <n> <PASS|FAIL>: <summary>`` before asserting, so the run log
shows every criterion's outcome even when a later assertion fails. The
lines bypass pytest's output capture and appear in any run mode.
"""

import filecmp
import math
from dataclasses import replace

import numpy as np
import pytest

import oracles
from fedshift.clustering import ClusterConfig, c_finch, dbscan, finch, pairwise_f_score
from fedshift.config import RunConfig
from fedshift.data import Domain, VerificationPair, partition_target
from fedshift.evaluation import FAR_BUDGETS, verification_metrics
from fedshift.federation import aggregate, run_federation
from fedshift.model import BackboneParams, HeadParams, face_loss, finite_diff_check
from fedshift.pipeline import (
    _STREAM_PRETRAIN,
    _materialize,
    cmd_pipeline,
    n_target_clients,
    pseudo_label_clients,
    run_ablation,
    train_supervised,
)
from fedshift.pseudo import extract_features

DBSCAN_EPS_GRID = (0.3, 0.5, 0.7, 0.9)
DBSCAN_MIN_PTS_GRID = (2, 5)


@pytest.fixture
def verdict(capfd):
    def _verdict(criterion, ok, summary):
        with capfd.disabled():
            print(f"\nACCEPT {criterion} {'PASS' if ok else 'FAIL'}: {summary}",
                  flush=True)
        assert ok, f"criterion {criterion}: {summary}"
    return _verdict


class TestAcceptance:
    def test_1_gradients_match_finite_differences(self, verdict):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(20):
            d_in = int(rng.integers(3, 8))
            d_h = int(rng.integers(4, 9))
            d_e = int(rng.integers(3, 7))
            c = int(rng.integers(2, 6))
            n = int(rng.integers(2, 9))
            bb = BackboneParams.init(rng, d_in, d_h, d_e)
            # unit-scale head rows: the 0.01-scaled training init makes the
            # row normalization so sharply curved that central differences
            # at h=1e-5 lose accuracy to truncation error
            head = HeadParams(rng.standard_normal((c, d_e)))
            x = rng.standard_normal((n, d_in))
            labels = rng.integers(0, c, size=n)
            dims = (d_in, d_h, d_e)

            def loss_bb(flat):
                b = BackboneParams.from_flat(flat, *dims)
                rep = face_loss(b, x, labels, head, 16.0, 0.5)
                return rep.loss_face, rep.grad_backbone

            def loss_head(flat):
                h = HeadParams(flat.reshape(head.class_weights.shape))
                rep = face_loss(bb, x, labels, h, 16.0, 0.5)
                return rep.loss_face, rep.grad_head.ravel()

            for fn, params in ((loss_bb, bb.flatten()),
                               (loss_head, head.class_weights.ravel())):
                rep = finite_diff_check(fn, params, h=1e-5, tol=1e-4)
                worst = max(worst, rep.max_rel_error)
                if not rep.ok:
                    break
        verdict(1, worst < 1e-4,
                f"max relative gradient error {worst:.2e} (tol 1e-4)")

    def test_2_constrained_merge_matches_component_oracle(self, verdict):
        rng = np.random.default_rng(22)
        mismatches = 0
        for _ in range(200):
            n = int(rng.integers(2, 13))
            pts = rng.standard_normal((n, 3))
            d = float(rng.uniform(0.05, 1.5))
            ours = c_finch(pts, ClusterConfig(threshold_d=d)).first_level()
            oracle = oracles.merge_graph_components(pts, d)
            if oracles.brute_f_score(ours.labels, oracle) != 1.0:
                mismatches += 1
        finch_mismatches = 0
        for _ in range(100):
            pts = rng.standard_normal((int(rng.integers(2, 30)), 5))
            a = c_finch(pts, ClusterConfig(threshold_d=math.inf))
            b = finch(pts)
            same = (len(a.levels) == len(b.levels) and
                    all(np.array_equal(x.labels, y.labels)
                        for x, y in zip(a.levels, b.levels)))
            if not same:
                finch_mismatches += 1
        verdict(2, mismatches == 0 and finch_mismatches == 0,
                f"{mismatches}/200 oracle mismatches, "
                f"{finch_mismatches}/100 unconstrained-equivalence mismatches")

    def test_3_aggregation_matches_running_mean(self, verdict):
        rng = np.random.default_rng(33)
        worst = 0.0
        for _ in range(50):
            k = int(rng.integers(2, 9))
            length = int(rng.integers(5, 60))
            flats = [rng.standard_normal(length) for _ in range(k)]
            ours = aggregate(flats)
            oracle = oracles.running_mean(flats)
            worst = max(worst, float(np.abs(ours - oracle).max()))
        verdict(3, worst < 1e-12,
                f"max elementwise deviation from running-mean oracle {worst:.2e}")

    def test_4_proximal_term_never_increases_source_drift(self, verdict):
        cfg = RunConfig()
        source_train, target_train, _ = _materialize(cfg)
        pre = train_supervised(source_train, cfg.model, cfg.pretrain,
                               cfg.synth.seed, _STREAM_PRETRAIN)
        pseudo_sets = pseudo_label_clients(target_train, pre, cfg.cluster,
                                           n_target_clients(cfg))
        drifts = {}
        for lam in (cfg.fed.lam, 0.0):
            fed_cfg = replace(cfg.fed, lam=lam)
            _, reports = run_federation(source_train, pseudo_sets, pre, fed_cfg)
            drifts[lam] = [r.source_stats().backbone_drift for r in reports]
        violations = sum(1 for with_dcl, without in
                         zip(drifts[cfg.fed.lam], drifts[0.0])
                         if with_dcl > without)
        verdict(4, violations == 0,
                f"{violations}/{cfg.fed.rounds} rounds where the proximal "
                f"term increased source-client drift")

    def test_5_ablation_chain_orders_target_rank1(self, verdict):
        sums = {"P": 0.0, "P+C": 0.0, "P+C+FL": 0.0, "P+C+FL+DCL": 0.0}
        n_seeds = 5
        for seed in range(n_seeds):
            results = run_ablation(RunConfig().with_seed(seed))
            for name in sums:
                sums[name] += results[name][Domain.TARGET].rank1
        means = {name: total / n_seeds for name, total in sums.items()}
        ok = (means["P"] < means["P+C"] < means["P+C+FL"]
              and means["P+C+FL+DCL"] >= means["P+C+FL"] - 0.01)
        verdict(5, ok,
                "five-seed mean target rank-1: "
                + " ".join(f"{k}={v:.3f}" for k, v in means.items()))

    def test_6_distance_constraint_helps_on_noisy_embeddings(self, verdict):
        scores = {"c_finch": [], "finch": []}
        dbscan_scores = {(eps, mp): []
                         for eps in DBSCAN_EPS_GRID
                         for mp in DBSCAN_MIN_PTS_GRID}
        for seed in range(5):
            cfg = RunConfig().with_seed(seed)
            cfg.synth = replace(cfg.synth, noise_sigma=0.2)
            source_train, target_train, _ = _materialize(cfg)
            pre = train_supervised(source_train, cfg.model, cfg.pretrain,
                                   cfg.synth.seed, _STREAM_PRETRAIN)
            for client in partition_target(target_train, n_target_clients(cfg)):
                emb = extract_features(pre.backbone, client).vectors
                truth = client.identities
                scores["c_finch"].append(pairwise_f_score(
                    c_finch(emb, cfg.cluster).final(), truth))
                scores["finch"].append(pairwise_f_score(
                    finch(emb).final(), truth))
                for (eps, mp), acc in dbscan_scores.items():
                    acc.append(pairwise_f_score(dbscan(emb, eps, mp), truth))
        mean_cf = float(np.mean(scores["c_finch"]))
        mean_f = float(np.mean(scores["finch"]))
        best_db = max(float(np.mean(v)) for v in dbscan_scores.values())
        verdict(6, mean_cf >= mean_f and mean_cf >= best_db,
                f"mean pairwise F: constrained={mean_cf:.3f} "
                f"unconstrained={mean_f:.3f} best-density={best_db:.3f}")

    def test_7_pipeline_is_bit_identical_across_reruns(self, verdict, tmp_path):
        outputs = []
        for name in ("a", "b"):
            cfg = RunConfig()
            cfg.fed = replace(cfg.fed, rounds=5)
            cfg.output_dir = tmp_path / name
            cmd_pipeline(cfg)
            outputs.append(cfg.output_dir)
        names_a = sorted(p.name for p in outputs[0].iterdir())
        names_b = sorted(p.name for p in outputs[1].iterdir())
        match, mismatch, errors = filecmp.cmpfiles(outputs[0], outputs[1],
                                                   names_a, shallow=False)
        ok = names_a == names_b and not mismatch and not errors
        verdict(7, ok,
                f"{len(match)} artifacts byte-identical, "
                f"mismatched={mismatch or 'none'}")

    def test_8_verification_metrics_match_sweep_oracle(self, verdict):
        rng = np.random.default_rng(88)
        checked = 0
        worst = 0.0
        monotone_ok = True
        while checked < 500:
            n = int(rng.integers(2, 51))
            emb = rng.standard_normal((n + 1, 4))
            kinds = rng.integers(0, 2, size=n).astype(bool)
            if kinds.all() or not kinds.any():
                continue
            pairs = [VerificationPair(0, i + 1, bool(kinds[i]))
                     for i in range(n)]
            acc, tar = verification_metrics(emb, pairs)
            unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
            sims = [float(unit[0] @ unit[i + 1]) for i in range(n)]
            genuine = [s for s, k in zip(sims, kinds) if k]
            impostor = [s for s, k in zip(sims, kinds) if not k]
            o_acc, o_tar = oracles.sweep_verification(genuine, impostor)
            worst = max(worst, abs(acc - o_acc),
                        *(abs(tar[b] - o_tar[b]) for b in FAR_BUDGETS))
            if not tar[0.001] <= tar[0.01] <= tar[0.1]:
                monotone_ok = False
            checked += 1
        verdict(8, worst < 1e-12 and monotone_ok,
                f"max deviation from sweep oracle over 500 pair sets "
                f"{worst:.2e}; TAR monotone in budget: {monotone_ok}")
