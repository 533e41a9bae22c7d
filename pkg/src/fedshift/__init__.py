"""Desk-scale simulator for federated domain adaptation on cosine embeddings.

Pipeline: source pre-training, distance-constrained first-neighbor clustering
for pseudo labels, then round-based federated training with backbone-only
averaging and a proximal constraint on the source client.
"""

from .clustering import (
    ClusterConfig,
    Hierarchy,
    Partition,
    c_finch,
    cosine_distance,
    dbscan,
    finch,
    first_neighbors,
    kmeans,
    merge_condition,
    pairwise_f_score,
)
from .config import Baseline, ModelConfig, RunConfig, TrainConfig, load_config, parse_config
from .data import (
    Dataset,
    Domain,
    EvalSets,
    Sample,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    partition_target,
    save_dataset,
)
from .evaluation import (
    MetricsReport,
    evaluate_backbone,
    identification_rank1,
    verification_metrics,
)
from .federation import (
    ClientState,
    FederationConfig,
    GlobalState,
    RoundReport,
    aggregate,
    init_federation,
    local_train,
    run_federation,
    run_round,
)
from .model import (
    BackboneParams,
    HeadParams,
    LossReport,
    ModelState,
    dcl_penalty,
    face_loss,
    finite_diff_check,
    forward_embed,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .pseudo import (
    EmbeddingSet,
    PseudoLabeledSet,
    extract_features,
    generate_pseudo_labels,
)

__version__ = "0.1.0"
