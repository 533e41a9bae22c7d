"""Stage orchestration: pre-training, pseudo-labeling, federated training,
baselines, and the ablation variants built purely from config flags."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import report as report_mod
from .clustering import (
    ClusterConfig,
    c_finch,
    dbscan,
    export_partition_csv,
    finch,
    kmeans,
    pairwise_f_score,
)
from .config import Baseline, RunConfig
from .data import (
    Dataset,
    Domain,
    EvalSets,
    generate_synthetic,
    load_dataset,
    partition_target,
    save_dataset,
)
from .errors import ConfigError, FedShiftError
from .evaluation import MetricsReport, evaluate_backbone
from .federation import FederationConfig, run_federation
from .model import (
    BackboneParams,
    HeadParams,
    ModelState,
    face_loss,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .pseudo import PseudoLabeledSet, extract_features, generate_pseudo_labels

# RNG stream tags (disjoint from the federation module's tags)
_STREAM_PRETRAIN = 1
_STREAM_TARGET_ONLY = 2
_STREAM_MERGE = 3
_STREAM_FINETUNE = 4

PRETRAIN_CHECKPOINT = "pretrain_checkpoint.bin"
FINAL_CHECKPOINT = "final_checkpoint.bin"


def train_supervised(ds: Dataset, model_cfg, train_cfg, seed: int,
                     stream: int, init_backbone: BackboneParams = None) -> ModelState:
    """Epoch-based supervised training with a fresh head over ds's identities."""
    rng = np.random.default_rng([seed] + [int(s) for s in np.atleast_1d(stream)])
    if init_backbone is None:
        backbone = BackboneParams.init(rng, ds.dim, model_cfg.hidden_dim,
                                       model_cfg.embed_dim)
    else:
        backbone = init_backbone.copy()
        # keep the draw sequence identical whether or not a backbone is given
        BackboneParams.init(rng, ds.dim, model_cfg.hidden_dim, model_cfg.embed_dim)
    head = HeadParams.init(rng, ds.id_count, model_cfg.embed_dim)
    state = ModelState(backbone, head, model_cfg.scale, model_cfg.margin)
    dims = (ds.dim, model_cfg.hidden_dim, model_cfg.embed_dim)
    flat = state.backbone.flatten()
    for _ in range(train_cfg.epochs):
        order = rng.permutation(len(ds))
        for start in range(0, len(order), train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            backbone = BackboneParams.from_flat(flat, *dims)
            rep = face_loss(backbone, ds.features[idx], ds.identities[idx],
                            head, state.scale_s, state.margin_m)
            flat = sgd_step(flat, rep.grad_backbone, train_cfg.lr)
            head = HeadParams(sgd_step(head.class_weights, rep.grad_head,
                                       train_cfg.lr))
    return ModelState(BackboneParams.from_flat(flat, *dims), head,
                      state.scale_s, state.margin_m)


@dataclass
class PipelineResult:
    pretrained: ModelState
    pseudo_sets: list = None
    final_backbone: BackboneParams = None
    round_reports: list = field(default_factory=list)
    round_metrics: list = field(default_factory=list)  # (round, {domain: report})
    final_metrics: dict = None


def _materialize(cfg: RunConfig):
    return generate_synthetic(cfg.synth)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_pretrain(cfg: RunConfig) -> ModelState:
    """Stage 1: supervised training on the source domain."""
    out = _out_dir(cfg)
    source_train, target_train, eval_sets = _materialize(cfg)
    save_dataset(source_train, out / "source_train.txt")
    save_dataset(target_train, out / "target_train.txt")
    state = train_supervised(source_train, cfg.model, cfg.pretrain,
                             cfg.synth.seed, _STREAM_PRETRAIN)
    save_checkpoint(state, out / PRETRAIN_CHECKPOINT)
    metrics = evaluate_backbone(state.backbone, eval_sets)
    report_mod.write_metrics_csv(metrics.values(), out / "pretrain_metrics.csv")
    return state


def n_target_clients(cfg: RunConfig) -> int:
    return cfg.fed.n_clients - 1


def cmd_cluster(cfg: RunConfig) -> list:
    """Stage 2: per-client pseudo labels plus a clustering comparison report."""
    out = _out_dir(cfg)
    state = load_checkpoint(out / PRETRAIN_CHECKPOINT, cfg.model.scale,
                            cfg.model.margin)
    _, target_train, _ = _materialize(cfg)
    clients = partition_target(target_train, n_target_clients(cfg))
    pseudo_sets = []
    comparison_rows = []
    for k, client_ds in enumerate(clients):
        emb = extract_features(state.backbone, client_ds)
        pseudo = generate_pseudo_labels(emb, cfg.cluster, client_ds)
        pseudo_sets.append(pseudo)
        save_dataset(pseudo.dataset, out / f"pseudo_client_{k}.txt")
        truth = client_ds.identities
        hierarchy = c_finch(emb.vectors, cfg.cluster)
        export_partition_csv(hierarchy.final(), out / f"partition_client_{k}.csv")
        true_k = len(np.unique(truth))
        candidates = {
            "c_finch": hierarchy.final(),
            "finch": finch(emb.vectors).final(),
            "kmeans": kmeans(emb.vectors, true_k, cfg.synth.seed),
            "dbscan": dbscan(emb.vectors, eps=min(cfg.cluster.threshold_d, 0.5)
                             if math.isfinite(cfg.cluster.threshold_d) else 0.5,
                             min_pts=2),
        }
        for name, part in candidates.items():
            comparison_rows.append(
                (k, name, pairwise_f_score(part, truth), part.n_clusters))
    report_mod.write_cluster_report(comparison_rows, out / "cluster_report.csv")
    report_mod.plot_cluster_fscores(comparison_rows, out / "cluster_fscores.png")
    return pseudo_sets


def load_pseudo_sets(cfg: RunConfig) -> list:
    out = Path(cfg.output_dir)
    sets = []
    for k in range(n_target_clients(cfg)):
        path = out / f"pseudo_client_{k}.txt"
        if not path.exists():
            raise ConfigError(f"missing stage-2 artifact {path}")
        ds = load_dataset(path)
        sets.append(PseudoLabeledSet(ds, ds.id_count, cfg.cluster))
    return sets


def cmd_federate(cfg: RunConfig) -> PipelineResult:
    """Stage 3: domain-constrained federated training with per-round eval."""
    out = _out_dir(cfg)
    state = load_checkpoint(out / PRETRAIN_CHECKPOINT, cfg.model.scale,
                            cfg.model.margin)
    source_train, _, eval_sets = _materialize(cfg)
    pseudo_sets = load_pseudo_sets(cfg)
    round_metrics = []

    def eval_hook(global_state, round_report):
        round_metrics.append(
            (global_state.round,
             evaluate_backbone(global_state.global_backbone, eval_sets)))

    final_backbone, reports = run_federation(source_train, pseudo_sets, state,
                                             cfg.fed, eval_hook=eval_hook)
    final_state = ModelState(final_backbone, state.head, state.scale_s,
                             state.margin_m)
    save_checkpoint(final_state, out / FINAL_CHECKPOINT)
    report_mod.write_rounds_csv(reports, out / "rounds.csv")
    report_mod.write_round_metrics_csv(round_metrics, out / "round_metrics.csv")
    final_metrics = round_metrics[-1][1]
    report_mod.write_metrics_csv(final_metrics.values(), out / "metrics.csv")
    report_mod.plot_rounds(reports, out / "rounds.png")
    report_mod.plot_round_metrics(round_metrics, out / "round_metrics.png")
    return PipelineResult(state, pseudo_sets, final_backbone, reports,
                          round_metrics, final_metrics)


def pseudo_label_clients(target_train: Dataset, state: ModelState,
                         cluster_cfg: ClusterConfig, k: int) -> list:
    """Stage-2 labeling: cluster each target client's embeddings separately."""
    pseudo_sets = []
    for client_ds in partition_target(target_train, k):
        emb = extract_features(state.backbone, client_ds)
        pseudo_sets.append(generate_pseudo_labels(emb, cluster_cfg, client_ds))
    return pseudo_sets


def fine_tune_local(state: ModelState, pseudo_sets, cfg: RunConfig) -> list:
    """Fine-tune one model per client on its own pseudo labels, no averaging."""
    return [train_supervised(ps.dataset, cfg.model, cfg.finetune,
                             cfg.synth.seed, (_STREAM_FINETUNE, k),
                             init_backbone=state.backbone)
            for k, ps in enumerate(pseudo_sets)]


def mean_metrics(per_client: list) -> dict:
    """Average per-client MetricsReports field by field, per domain."""
    out = {}
    for domain in per_client[0]:
        reports = [m[domain] for m in per_client]
        out[domain] = MetricsReport(
            domain=domain,
            ver_accuracy=float(np.mean([r.ver_accuracy for r in reports])),
            tar_at_far={f: float(np.mean([r.tar_at_far[f] for r in reports]))
                        for f in reports[0].tar_at_far},
            rank1=float(np.mean([r.rank1 for r in reports])),
        )
    return out


def _merge_datasets(source: Dataset, target: Dataset) -> Dataset:
    feats = np.concatenate([source.features, target.features])
    idents = np.concatenate([source.identities,
                             target.identities + source.id_count])
    return Dataset(feats, idents, Domain.SOURCE,
                   source.id_count + target.id_count)


def cmd_baseline(cfg: RunConfig) -> dict:
    """Train the configured reference model and evaluate both domains."""
    if cfg.baseline == Baseline.NONE:
        raise ConfigError("run.baseline must not be NONE for the baseline command")
    out = _out_dir(cfg)
    source_train, target_train, eval_sets = _materialize(cfg)
    if cfg.baseline == Baseline.SOURCE_ONLY:
        state = train_supervised(source_train, cfg.model, cfg.pretrain,
                                 cfg.synth.seed, _STREAM_PRETRAIN)
    elif cfg.baseline == Baseline.TARGET_ONLY:
        state = train_supervised(target_train, cfg.model, cfg.pretrain,
                                 cfg.synth.seed, _STREAM_TARGET_ONLY)
    elif cfg.baseline == Baseline.MERGE:
        merged = _merge_datasets(source_train, target_train)
        state = train_supervised(merged, cfg.model, cfg.pretrain,
                                 cfg.synth.seed, _STREAM_MERGE)
    else:  # FINE_TUNE
        pre = train_supervised(source_train, cfg.model, cfg.pretrain,
                               cfg.synth.seed, _STREAM_PRETRAIN)
        pseudo_sets = pseudo_label_clients(target_train, pre, cfg.cluster,
                                           n_target_clients(cfg))
        tuned = fine_tune_local(pre, pseudo_sets, cfg)
        metrics = mean_metrics([evaluate_backbone(m.backbone, eval_sets)
                                for m in tuned])
        report_mod.write_metrics_csv(metrics.values(),
                                     out / "baseline_metrics.csv")
        return metrics
    metrics = evaluate_backbone(state.backbone, eval_sets)
    report_mod.write_metrics_csv(metrics.values(), out / "baseline_metrics.csv")
    return metrics


def cmd_eval(cfg: RunConfig, checkpoint_path=None) -> dict:
    """Evaluate a checkpoint on the config's synthetic eval sets."""
    out = _out_dir(cfg)
    if checkpoint_path is None:
        final = out / FINAL_CHECKPOINT
        checkpoint_path = final if final.exists() else out / PRETRAIN_CHECKPOINT
    state = load_checkpoint(checkpoint_path, cfg.model.scale, cfg.model.margin)
    _, _, eval_sets = _materialize(cfg)
    metrics = evaluate_backbone(state.backbone, eval_sets)
    report_mod.write_metrics_csv(metrics.values(), out / "eval_metrics.csv")
    return metrics


def cmd_pipeline(cfg: RunConfig) -> PipelineResult:
    """Stages 1 -> 2 -> 3; byte-identical to chaining the subcommands."""
    cmd_pretrain(cfg)
    cmd_cluster(cfg)
    return cmd_federate(cfg)


# ---------------------------------------------------------------------------
# In-memory ablation harness (no file IO): P, P+C, P+C+FL, P+C+FL+DCL
# ---------------------------------------------------------------------------

def run_ablation(cfg: RunConfig, variants=("P", "P+C", "P+C+FL", "P+C+FL+DCL")):
    """Target-domain rank-1 for each ablation variant on one seed."""
    source_train, target_train, eval_sets = _materialize(cfg)
    pre = train_supervised(source_train, cfg.model, cfg.pretrain,
                           cfg.synth.seed, _STREAM_PRETRAIN)
    pseudo_sets = pseudo_label_clients(target_train, pre, cfg.cluster,
                                       n_target_clients(cfg))
    results = {}
    if "P" in variants:
        results["P"] = evaluate_backbone(pre.backbone, eval_sets)
    if "P+C" in variants:
        tuned = fine_tune_local(pre, pseudo_sets, cfg)
        results["P+C"] = mean_metrics([evaluate_backbone(m.backbone, eval_sets)
                                       for m in tuned])
    fl_variants = [v for v in variants if v in ("P+C+FL", "P+C+FL+DCL")]
    if fl_variants:
        for name in fl_variants:
            lam = cfg.fed.lam if name == "P+C+FL+DCL" else 0.0
            fed_cfg = replace(cfg.fed, lam=lam)
            backbone, _ = run_federation(source_train, pseudo_sets, pre, fed_cfg)
            results[name] = evaluate_backbone(backbone, eval_sets)
    return results
