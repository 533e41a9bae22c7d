"""Round-based federated training with backbone-only averaging.

One source client (true labels, proximal penalty toward the round-start
global backbone) plus K target clients (pseudo labels).  Only backbones are
uploaded and averaged; classifier heads never leave their client.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import Dataset
from .errors import ConfigError, ShapeError, TrainingError
from .model import (
    BackboneParams,
    HeadParams,
    ModelState,
    dcl_penalty,
    face_loss,
    sgd_step,
)
from .pseudo import PseudoLabeledSet

# stream tags keep per-purpose RNG streams disjoint under one master seed
_STREAM_BATCHES = 101
_STREAM_HEAD_INIT = 102


class Role(str, Enum):
    SOURCE = "SOURCE"
    TARGET = "TARGET"


@dataclass(frozen=True)
class FederationConfig:
    n_clients: int = 5          # N = K + 1, including the source client
    local_iters: int = 10       # E
    batch_size: int = 32
    lr: float = 0.05
    lam: float = 0.01           # proximal weight on the source client
    rounds: int = 30
    master_seed: int = 0
    weight_by_size: bool = False

    def validate(self) -> None:
        if self.n_clients < 2:
            raise ConfigError("n_clients must be >= 2 (source + >=1 target)")
        if self.local_iters < 1:
            raise ConfigError("local_iters must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")


@dataclass
class ClientState:
    client_id: int
    role: Role
    data: Dataset
    backbone: BackboneParams
    head: HeadParams
    rng: np.random.Generator
    scale_s: float = 16.0
    margin_m: float = 0.3
    mean_loss_face: float = 0.0  # filled by local_train
    mean_loss_dcl: float = 0.0


@dataclass
class GlobalState:
    round: int
    global_backbone: BackboneParams


@dataclass
class ClientRoundStats:
    client_id: int
    role: Role
    loss_face: float
    loss_dcl: float
    backbone_drift: float  # |theta_client - theta_round_start|


@dataclass
class RoundReport:
    round: int
    clients: list = field(default_factory=list)

    def source_stats(self) -> ClientRoundStats:
        return next(c for c in self.clients if c.role == Role.SOURCE)


def init_federation(source: Dataset, target_clients, pretrained: ModelState,
                    cfg: FederationConfig):
    """Replicate the pretrained backbone everywhere; fresh target heads."""
    cfg.validate()
    if not target_clients:
        raise ConfigError("need at least one target client")
    if cfg.n_clients != len(target_clients) + 1:
        raise ConfigError(
            f"n_clients={cfg.n_clients} but got {len(target_clients)} target clients")
    clients = [ClientState(
        client_id=0,
        role=Role.SOURCE,
        data=source,
        backbone=pretrained.backbone.copy(),
        head=pretrained.head.copy(),
        rng=np.random.default_rng([cfg.master_seed, _STREAM_BATCHES, 0]),
        scale_s=pretrained.scale_s,
        margin_m=pretrained.margin_m,
    )]
    for k, pseudo in enumerate(target_clients, start=1):
        head_rng = np.random.default_rng([cfg.master_seed, _STREAM_HEAD_INIT, k])
        clients.append(ClientState(
            client_id=k,
            role=Role.TARGET,
            data=pseudo.dataset,
            backbone=pretrained.backbone.copy(),
            head=HeadParams.init(head_rng, pseudo.n_pseudo_ids,
                                 pretrained.backbone.dim_embed),
            rng=np.random.default_rng([cfg.master_seed, _STREAM_BATCHES, k]),
            scale_s=pretrained.scale_s,
            margin_m=pretrained.margin_m,
        ))
    return GlobalState(0, pretrained.backbone.copy()), clients


def local_train(client: ClientState, theta_global: BackboneParams,
                cfg: FederationConfig) -> ClientState:
    """E mini-batch iterations from the distributed global backbone.

    The source client additionally pulls its backbone toward theta_global
    with the proximal penalty; target clients ignore lambda entirely.
    """
    if theta_global.dim_in != client.backbone.dim_in:
        raise ShapeError("global backbone dims do not match client")
    ref = theta_global.flatten()
    flat = ref.copy()
    dims = (theta_global.dim_in, theta_global.dim_hidden, theta_global.dim_embed)
    head = client.head.copy()
    n = len(client.data)
    sum_face, sum_dcl = 0.0, 0.0
    for it in range(cfg.local_iters):
        idx = client.rng.integers(0, n, size=cfg.batch_size)
        backbone = BackboneParams.from_flat(flat, *dims)
        try:
            report = face_loss(backbone, client.data.features[idx],
                               client.data.identities[idx], head,
                               client.scale_s, client.margin_m)
        except Exception as exc:
            raise TrainingError(
                f"client {client.client_id} iter {it}: {exc}") from exc
        if not np.isfinite(report.loss_face):
            raise TrainingError(
                f"client {client.client_id} iter {it}: non-finite loss")
        grad = report.grad_backbone
        loss_dcl = 0.0
        if client.role == Role.SOURCE and cfg.lam > 0:
            loss_dcl, grad_dcl = dcl_penalty(flat, ref, cfg.lam)
            grad = grad + grad_dcl
        flat = sgd_step(flat, grad, cfg.lr)
        head = HeadParams(sgd_step(head.class_weights, report.grad_head, cfg.lr))
        sum_face += report.loss_face
        sum_dcl += loss_dcl
    updated = ClientState(
        client_id=client.client_id,
        role=client.role,
        data=client.data,
        backbone=BackboneParams.from_flat(flat, *dims),
        head=head,
        rng=client.rng,
        scale_s=client.scale_s,
        margin_m=client.margin_m,
    )
    updated.mean_loss_face = sum_face / cfg.local_iters
    updated.mean_loss_dcl = sum_dcl / cfg.local_iters
    return updated


def aggregate(backbones, weights=None) -> np.ndarray:
    """Elementwise mean of flat parameter vectors, summed in list order."""
    if not backbones:
        raise ShapeError("aggregate needs at least one vector")
    length = backbones[0].shape
    total = np.zeros(length)
    wsum = 0.0
    for i, vec in enumerate(backbones):
        if vec.shape != length:
            raise ShapeError("backbone vectors have differing lengths")
        w = 1.0 if weights is None else float(weights[i])
        total += w * vec
        wsum += w
    return total / wsum


def run_round(global_state: GlobalState, clients, cfg: FederationConfig):
    """Local training, backbone upload, aggregation, model update."""
    theta = global_state.global_backbone
    trained = [local_train(c, theta, cfg) for c in clients]
    ref = theta.flatten()
    stats = [ClientRoundStats(
        client_id=c.client_id,
        role=c.role,
        loss_face=c.mean_loss_face,
        loss_dcl=c.mean_loss_dcl,
        backbone_drift=float(np.linalg.norm(c.backbone.flatten() - ref)),
    ) for c in trained]
    weights = [len(c.data) for c in trained] if cfg.weight_by_size else None
    new_flat = aggregate([c.backbone.flatten() for c in trained], weights)
    dims = (theta.dim_in, theta.dim_hidden, theta.dim_embed)
    new_global = GlobalState(global_state.round + 1,
                             BackboneParams.from_flat(new_flat, *dims))
    report = RoundReport(global_state.round + 1, stats)
    return new_global, trained, report


def run_federation(source: Dataset, target_clients, pretrained: ModelState,
                   cfg: FederationConfig, eval_hook=None):
    """Execute all rounds; fully deterministic given master_seed."""
    global_state, clients = init_federation(source, target_clients,
                                            pretrained, cfg)
    reports = []
    for _ in range(cfg.rounds):
        global_state, clients, report = run_round(global_state, clients, cfg)
        reports.append(report)
        if eval_hook is not None:
            eval_hook(global_state, report)
    return global_state.global_backbone, reports
