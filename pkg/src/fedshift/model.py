"""Embedding backbone, margin softmax loss, proximal penalty, and SGD.

The backbone is a two-layer MLP (D_in -> D_h -> D_e) whose output is
L2-normalized, trained with an additive angular margin softmax against a
per-client classifier head.  All gradients are analytic and validated
against central finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DatasetFormatError,
    LabelError,
    NumericError,
    ShapeError,
)

CHECKPOINT_MAGIC = b"FDFR"
CHECKPOINT_VERSION = 1

_ZERO_NORM_EPS = 1e-12


@dataclass
class BackboneParams:
    """Two-layer MLP parameters with a canonical flat layout.

    Flat order: row-major w1, b1, row-major w2, b2.
    """

    w1: np.ndarray  # (d_h, d_in)
    b1: np.ndarray  # (d_h,)
    w2: np.ndarray  # (d_e, d_h)
    b2: np.ndarray  # (d_e,)

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise NumericError("backbone parameters must be finite")
        if self.w1.shape[0] != self.b1.shape[0]:
            raise ShapeError("w1/b1 hidden dims differ")
        if self.w2.shape != (self.b2.shape[0], self.w1.shape[0]):
            raise ShapeError("w2 shape inconsistent with b1/b2")

    @property
    def dim_in(self) -> int:
        return self.w1.shape[1]

    @property
    def dim_hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def dim_embed(self) -> int:
        return self.w2.shape[0]

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def from_flat(cls, flat: np.ndarray, dim_in: int, dim_hidden: int,
                  dim_embed: int) -> "BackboneParams":
        flat = np.asarray(flat, dtype=np.float64)
        sizes = [dim_hidden * dim_in, dim_hidden, dim_embed * dim_hidden,
                 dim_embed]
        if flat.shape != (sum(sizes),):
            raise ShapeError(
                f"flat vector length {flat.shape} != {sum(sizes)}")
        o = 0
        parts = []
        for size in sizes:
            parts.append(flat[o:o + size])
            o += size
        return cls(parts[0].reshape(dim_hidden, dim_in).copy(),
                   parts[1].copy(),
                   parts[2].reshape(dim_embed, dim_hidden).copy(),
                   parts[3].copy())

    @classmethod
    def init(cls, rng: np.random.Generator, dim_in: int, dim_hidden: int,
             dim_embed: int) -> "BackboneParams":
        w1 = rng.standard_normal((dim_hidden, dim_in)) * np.sqrt(2.0 / dim_in)
        b1 = np.zeros(dim_hidden)
        w2 = rng.standard_normal((dim_embed, dim_hidden)) * np.sqrt(2.0 / dim_hidden)
        b2 = rng.standard_normal(dim_embed) * 0.01
        return cls(w1, b1, w2, b2)

    def copy(self) -> "BackboneParams":
        return BackboneParams(self.w1.copy(), self.b1.copy(),
                              self.w2.copy(), self.b2.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BackboneParams):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in
                   [(self.w1, other.w1), (self.b1, other.b1),
                    (self.w2, other.w2), (self.b2, other.b2)])


@dataclass
class HeadParams:
    """Per-client classifier weights, one row per (pseudo) identity.

    Rows are stored unnormalized and L2-normalized at logit time.
    """

    class_weights: np.ndarray  # (C, d_e)

    def __post_init__(self):
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        if self.class_weights.ndim != 2 or self.class_weights.shape[0] < 1:
            raise ConfigError("head needs at least one class row")

    @property
    def n_classes(self) -> int:
        return self.class_weights.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, n_classes: int,
             dim_embed: int) -> "HeadParams":
        if n_classes < 1:
            raise ConfigError("n_classes must be >= 1")
        return cls(rng.standard_normal((n_classes, dim_embed)) * 0.01)

    def copy(self) -> "HeadParams":
        return HeadParams(self.class_weights.copy())


@dataclass
class ModelState:
    backbone: BackboneParams
    head: HeadParams
    scale_s: float = 16.0
    margin_m: float = 0.3

    def __post_init__(self):
        if self.scale_s <= 0:
            raise ConfigError("scale_s must be > 0")
        if not (0.0 <= self.margin_m < np.pi / 2):
            raise ConfigError("margin_m must lie in [0, pi/2)")

    def copy(self) -> "ModelState":
        return ModelState(self.backbone.copy(), self.head.copy(),
                          self.scale_s, self.margin_m)


@dataclass
class LossReport:
    loss_face: float
    loss_dcl: float
    grad_backbone: np.ndarray  # flat, canonical order
    grad_head: np.ndarray      # (C, d_e)


def _forward_batch(backbone: BackboneParams, x: np.ndarray):
    """Batch forward pass returning embeddings and the backprop cache."""
    pre = x @ backbone.w1.T + backbone.b1
    hidden = np.maximum(pre, 0.0)
    raw = hidden @ backbone.w2.T + backbone.b2
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    if np.any(norms < _ZERO_NORM_EPS):
        raise NumericError("pre-normalization embedding has near-zero norm")
    emb = raw / norms
    return emb, (x, pre, hidden, norms, emb)


def forward_embed(backbone: BackboneParams, x: np.ndarray) -> np.ndarray:
    """Embed one feature vector; output is unit-norm."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (backbone.dim_in,):
        raise ShapeError(
            f"input length {x.shape} does not match dim_in={backbone.dim_in}")
    emb, _ = _forward_batch(backbone, x[None, :])
    return emb[0]


def _backprop_embeddings(backbone: BackboneParams, cache, grad_emb):
    """Push embedding gradients back to a flat backbone gradient."""
    x, pre, hidden, norms, emb = cache
    # through the L2 normalization: (I - e e^T)/|z|
    grad_raw = (grad_emb - np.sum(grad_emb * emb, axis=1, keepdims=True) * emb) / norms
    grad_w2 = grad_raw.T @ hidden
    grad_b2 = grad_raw.sum(axis=0)
    grad_hidden = grad_raw @ backbone.w2
    grad_pre = grad_hidden * (pre > 0.0)
    grad_w1 = grad_pre.T @ x
    grad_b1 = grad_pre.sum(axis=0)
    return BackboneParams(grad_w1, grad_b1, grad_w2, grad_b2).flatten()


def margin_logits_and_grads(embeddings: np.ndarray, labels: np.ndarray,
                            head: HeadParams, scale_s: float, margin_m: float):
    """Mean margin-softmax loss with gradients w.r.t. embeddings and head.

    The target logit uses cos(theta + m) = cos*cos m - sin*sin m; past
    theta + m = pi it falls back to cos - m*sin m to stay monotone.
    """
    n, _ = embeddings.shape
    c = head.n_classes
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ConfigError("batch must be nonempty")
    if labels.min() < 0 or labels.max() >= c:
        raise LabelError(f"label outside [0, {c})")

    w = head.class_weights
    w_norms = np.linalg.norm(w, axis=1, keepdims=True)
    if np.any(w_norms < _ZERO_NORM_EPS):
        raise NumericError("head row with near-zero norm")
    w_hat = w / w_norms
    cos = np.clip(embeddings @ w_hat.T, -1.0, 1.0)

    rows = np.arange(n)
    cos_y = cos[rows, labels]
    cos_m, sin_m = np.cos(margin_m), np.sin(margin_m)
    sin_y = np.sqrt(np.clip(1.0 - cos_y ** 2, 0.0, None))
    easy = cos_y > -cos_m  # theta + m <= pi
    phi = np.where(easy, cos_y * cos_m - sin_y * sin_m, cos_y - margin_m * sin_m)
    if sin_m == 0.0:
        dphi = np.ones_like(cos_y)
    else:
        safe_sin = np.maximum(sin_y, _ZERO_NORM_EPS)
        dphi = np.where(easy, cos_m + sin_m * cos_y / safe_sin, 1.0)

    logits = scale_s * cos
    logits[rows, labels] = scale_s * phi
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    prob = exp / exp.sum(axis=1, keepdims=True)
    log_prob_y = shifted[rows, labels] - np.log(exp.sum(axis=1))
    loss = float(-np.mean(log_prob_y))

    dlogits = prob.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    dcos = scale_s * dlogits
    dcos[rows, labels] *= dphi

    grad_emb = dcos @ w_hat
    grad_w_hat = dcos.T @ embeddings
    grad_head = (grad_w_hat
                 - np.sum(grad_w_hat * w_hat, axis=1, keepdims=True) * w_hat) / w_norms
    return loss, grad_emb, grad_head


def face_loss(backbone: BackboneParams, inputs: np.ndarray, labels: np.ndarray,
              head: HeadParams, scale_s: float, margin_m: float) -> LossReport:
    """Margin softmax over a batch; gradients flow through the embedding."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != backbone.dim_in:
        raise ShapeError("batch inputs do not match backbone dim_in")
    emb, cache = _forward_batch(backbone, inputs)
    loss, grad_emb, grad_head = margin_logits_and_grads(
        emb, labels, head, scale_s, margin_m)
    grad_backbone = _backprop_embeddings(backbone, cache, grad_emb)
    return LossReport(loss, 0.0, grad_backbone, grad_head)


def dcl_penalty(theta: np.ndarray, theta_ref: np.ndarray, lam: float):
    """Proximal pull toward the reference: (lam/2)*|theta - ref|^2."""
    theta = np.asarray(theta, dtype=np.float64)
    theta_ref = np.asarray(theta_ref, dtype=np.float64)
    if theta.shape != theta_ref.shape:
        raise ShapeError("theta and theta_ref lengths differ")
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    diff = theta - theta_ref
    return 0.5 * lam * float(diff @ diff), lam * diff


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ShapeError("params and grad shapes differ")
    if lr <= 0:
        raise ConfigError("lr must be > 0")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient, step refused")
    return params - lr * grad


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    worst_index: int
    ok: bool


def finite_diff_check(loss_fn, params: np.ndarray, h: float = 1e-5,
                      tol: float = 1e-4) -> FiniteDiffReport:
    """Compare loss_fn's analytic gradient against central differences.

    loss_fn(params) must return (loss, grad) and be pure.
    """
    if h <= 0:
        raise ConfigError("h must be > 0")
    params = np.asarray(params, dtype=np.float64)
    _, grad = loss_fn(params)
    grad = np.asarray(grad, dtype=np.float64)
    numeric = np.empty_like(params)
    for i in range(params.size):
        bump = np.zeros_like(params)
        bump[i] = h
        lo, _ = loss_fn(params - bump)
        hi, _ = loss_fn(params + bump)
        numeric[i] = (hi - lo) / (2.0 * h)
    # floor the denominator at a fraction of the gradient's overall scale so
    # that roundoff noise on near-zero components of an O(1) gradient does
    # not register as a large relative error
    floor = max(1e-8, 1e-6 * float(np.abs(grad).max(initial=0.0)))
    denom = np.maximum(np.abs(grad), np.maximum(np.abs(numeric), floor))
    rel = np.abs(grad - numeric) / denom
    worst = int(np.argmax(rel))
    return FiniteDiffReport(float(rel[worst]), worst, bool(rel[worst] < tol))


def save_checkpoint(state: ModelState, path) -> None:
    """Binary little-endian checkpoint: magic, version, dims, backbone, head."""
    bb = state.backbone
    head = state.head.class_weights
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<5I", CHECKPOINT_VERSION, bb.dim_in, bb.dim_hidden,
                        bb.dim_embed, head.shape[0])
    blob += bb.flatten().astype("<f8").tobytes()
    blob += head.astype("<f8").ravel().tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path, scale_s: float = 16.0,
                    margin_m: float = 0.3) -> ModelState:
    raw = Path(path).read_bytes()
    if len(raw) < 24 or raw[:4] != CHECKPOINT_MAGIC:
        raise DatasetFormatError("not a checkpoint file (bad magic)")
    version, d_in, d_h, d_e, n_classes = struct.unpack("<5I", raw[4:24])
    if version != CHECKPOINT_VERSION:
        raise DatasetFormatError(f"unsupported checkpoint version {version}")
    flat_len = d_h * d_in + d_h + d_e * d_h + d_e
    expected = 24 + 8 * (flat_len + n_classes * d_e)
    if len(raw) != expected:
        raise DatasetFormatError(
            f"checkpoint length {len(raw)} != expected {expected}")
    flat = np.frombuffer(raw, dtype="<f8", count=flat_len, offset=24)
    head = np.frombuffer(raw, dtype="<f8", count=n_classes * d_e,
                         offset=24 + 8 * flat_len).reshape(n_classes, d_e)
    backbone = BackboneParams.from_flat(flat.astype(np.float64), d_in, d_h, d_e)
    return ModelState(backbone, HeadParams(head.astype(np.float64)),
                      scale_s, margin_m)
