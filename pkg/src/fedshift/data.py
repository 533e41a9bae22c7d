"""Synthetic two-domain datasets, persistence, and client partitioning.

Identities live on the unit hypersphere: each identity has a unit prototype
vector and samples are renormalized Gaussian perturbations of it.  The target
domain is shifted by a fixed linear map blended between the identity matrix
and a random orthogonal matrix, so the source/target gap is systematic rather
than per-sample noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetFormatError, PartitionError

UNKNOWN = -1  # identity placeholder for unlabeled samples


class Domain(str, Enum):
    SOURCE = "SOURCE"
    TARGET = "TARGET"


@dataclass(frozen=True)
class Sample:
    """One feature vector with an (optional) identity label and a domain tag."""

    features: np.ndarray
    identity: int
    domain: Domain


@dataclass
class Dataset:
    """Ordered sample collection stored as dense arrays.

    features: (n, dim) float64, identities: (n,) int64 with UNKNOWN = -1.
    Known identity values lie in [0, id_count).
    """

    features: np.ndarray
    identities: np.ndarray
    domain: Domain
    id_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.identities = np.asarray(self.identities, dtype=np.int64)
        if self.features.ndim != 2:
            raise ConfigError("features must be a 2-D array")
        if len(self.features) != len(self.identities):
            raise ConfigError("features and identities length mismatch")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("features contain non-finite values")
        known = self.identities[self.identities != UNKNOWN]
        if known.size and (known.min() < 0 or known.max() >= self.id_count):
            raise ConfigError("identity out of range [0, id_count)")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.features)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.domain == other.domain
            and self.id_count == other.id_count
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.identities, other.identities)
        )

    def samples(self):
        for x, ident in zip(self.features, self.identities):
            yield Sample(x, int(ident), self.domain)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx].copy(), self.identities[idx].copy(),
                       self.domain, self.id_count)


@dataclass(frozen=True)
class SynthConfig:
    dim_in: int = 32
    ids_source: int = 100
    ids_target: int = 20
    samples_per_id: int = 20
    noise_sigma: float = 0.15
    shift_strength: float = 1.0
    eval_id_fraction: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.dim_in < 2:
            raise ConfigError("dim_in must be >= 2")
        if self.ids_source < 2:
            raise ConfigError("ids_source must be >= 2")
        if self.ids_target < 2:
            raise ConfigError("ids_target must be >= 2")
        if self.samples_per_id < 2:
            raise ConfigError("samples_per_id must be >= 2")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.shift_strength < 0:
            raise ConfigError("shift_strength must be >= 0")
        if not (0.0 < self.eval_id_fraction < 1.0):
            raise ConfigError("eval_id_fraction must lie in (0, 1)")
        if not (0 <= self.seed < 2 ** 64):
            raise ConfigError("seed must be an unsigned 64-bit integer")


@dataclass
class VerificationPair:
    index_a: int
    index_b: int
    is_same: bool


@dataclass
class DomainEvalSet:
    """Held-out evaluation material for one domain.

    Eval identities are disjoint from training identities (open-set split);
    verification pairs index into ``eval_data``; every query identity is
    present in the gallery.
    """

    eval_data: Dataset
    verification_pairs: list = field(default_factory=list)
    query: Dataset = None
    gallery: Dataset = None


@dataclass
class EvalSets:
    source: DomainEvalSet
    target: DomainEvalSet

    def for_domain(self, domain: Domain) -> DomainEvalSet:
        return self.source if domain == Domain.SOURCE else self.target


# prototype coordinates decay geometrically so identities concentrate in a
# dominant subspace; rotating that subspace is what creates a domain gap
_PROTO_CONCENTRATION = 3.0


def _prototype_scales(dim: int) -> np.ndarray:
    return np.exp(-_PROTO_CONCENTRATION * np.arange(dim) / (dim - 1))


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim)) * _prototype_scales(dim)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_shift_map(rng: np.random.Generator, dim: int, strength: float) -> np.ndarray:
    """Blend of the identity with a random orthogonal matrix.

    strength=0 returns the exact identity matrix (source and target
    distributions coincide).
    """
    a = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    # fix the sign convention so the map is deterministic across BLAS builds
    q = q * np.sign(np.diag(r))
    if strength == 0.0:
        return np.eye(dim)
    return (1.0 - strength) * np.eye(dim) + strength * q


def _eval_id_count(n_train: int, fraction: float) -> int:
    return max(2, int(round(n_train * fraction)))


def _perturbed_samples(rng, prototypes, ids, samples_per_id, sigma):
    feats = []
    labels = []
    for ident in ids:
        noise = rng.standard_normal((samples_per_id, prototypes.shape[1]))
        raw = prototypes[ident] + sigma * noise
        feats.append(raw / np.linalg.norm(raw, axis=1, keepdims=True))
        labels.extend([ident] * samples_per_id)
    return np.concatenate(feats, axis=0), np.asarray(labels, dtype=np.int64)


def _build_eval_set(rng, ds: Dataset, eval_ids: np.ndarray,
                    samples_per_id: int) -> DomainEvalSet:
    # genuine: all intra-identity pairs; impostor: equal count of seeded
    # random cross-identity pairs
    pairs = []
    by_id = {int(i): np.flatnonzero(ds.identities == i) for i in eval_ids}
    for ident in eval_ids:
        idx = by_id[int(ident)]
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                pairs.append(VerificationPair(int(idx[a]), int(idx[b]), True))
    n_genuine = len(pairs)
    n = len(ds)
    made = 0
    while made < n_genuine:
        a, b = rng.integers(0, n, size=2)
        if ds.identities[a] != ds.identities[b]:
            pairs.append(VerificationPair(int(a), int(b), False))
            made += 1
    # query: first sample of each eval identity; gallery: the rest
    q_idx, g_idx = [], []
    for ident in eval_ids:
        idx = by_id[int(ident)]
        q_idx.append(idx[0])
        g_idx.extend(idx[1:])
    return DomainEvalSet(
        eval_data=ds,
        verification_pairs=pairs,
        query=ds.subset(q_idx),
        gallery=ds.subset(g_idx),
    )


def generate_synthetic(cfg: SynthConfig):
    """Generate (source_train, target_train, eval_sets), byte-identical per cfg.

    Training identities are [0, ids_X); eval identities occupy
    [ids_X, ids_X + n_eval) so the open-set split is visible in the labels.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)

    n_eval_s = _eval_id_count(cfg.ids_source, cfg.eval_id_fraction)
    n_eval_t = _eval_id_count(cfg.ids_target, cfg.eval_id_fraction)
    total_s = cfg.ids_source + n_eval_s
    total_t = cfg.ids_target + n_eval_t

    # fixed draw order keeps sigma variations on identical noise draws
    proto_s = _unit_rows(rng, total_s, cfg.dim_in)
    proto_t_base = _unit_rows(rng, total_t, cfg.dim_in)
    shift = make_shift_map(rng, cfg.dim_in, cfg.shift_strength)
    proto_t = proto_t_base @ shift.T
    proto_t = proto_t / np.linalg.norm(proto_t, axis=1, keepdims=True)

    train_ids_s = np.arange(cfg.ids_source)
    eval_ids_s = np.arange(cfg.ids_source, total_s)
    train_ids_t = np.arange(cfg.ids_target)
    eval_ids_t = np.arange(cfg.ids_target, total_t)

    xs, ys = _perturbed_samples(rng, proto_s, train_ids_s,
                                cfg.samples_per_id, cfg.noise_sigma)
    xs_e, ys_e = _perturbed_samples(rng, proto_s, eval_ids_s,
                                    cfg.samples_per_id, cfg.noise_sigma)
    xt, yt = _perturbed_samples(rng, proto_t, train_ids_t,
                                cfg.samples_per_id, cfg.noise_sigma)
    xt_e, yt_e = _perturbed_samples(rng, proto_t, eval_ids_t,
                                    cfg.samples_per_id, cfg.noise_sigma)

    source_train = Dataset(xs, ys, Domain.SOURCE, cfg.ids_source)
    target_train = Dataset(xt, yt, Domain.TARGET, cfg.ids_target)
    eval_s = Dataset(xs_e, ys_e, Domain.SOURCE, total_s)
    eval_t = Dataset(xt_e, yt_e, Domain.TARGET, total_t)

    eval_sets = EvalSets(
        source=_build_eval_set(rng, eval_s, eval_ids_s, cfg.samples_per_id),
        target=_build_eval_set(rng, eval_t, eval_ids_t, cfg.samples_per_id),
    )
    return source_train, target_train, eval_sets


def partition_target(target: Dataset, k: int) -> list:
    """Identity-disjoint round-robin split into k client datasets."""
    if k < 1:
        raise PartitionError("k must be >= 1")
    distinct = []
    seen = set()
    for ident in target.identities:
        if ident != UNKNOWN and int(ident) not in seen:
            seen.add(int(ident))
            distinct.append(int(ident))
    if k > len(distinct):
        raise PartitionError(
            f"cannot split {len(distinct)} identities across {k} clients")
    assignment = {ident: rank % k for rank, ident in enumerate(distinct)}
    clients = []
    for c in range(k):
        idx = [i for i, ident in enumerate(target.identities)
               if assignment[int(ident)] == c]
        clients.append(target.subset(idx))
    return clients


def save_dataset(ds: Dataset, path) -> None:
    """Line-oriented UTF-8 text format; floats as shortest round-trip repr."""
    lines = [f"dim={ds.dim},domain={ds.domain.value},ids={ds.id_count}"]
    for x, ident in zip(ds.features, ds.identities):
        label = "?" if ident == UNKNOWN else str(int(ident))
        lines.append(label + "," + ",".join(repr(float(v)) for v in x))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty file")
    header = lines[0]
    try:
        parts = dict(item.split("=", 1) for item in header.split(","))
        dim = int(parts["dim"])
        domain = Domain(parts["domain"])
        ids = int(parts["ids"])
    except (ValueError, KeyError) as exc:
        raise DatasetFormatError(f"line 1: malformed header {header!r}") from exc
    feats = []
    idents = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            raise DatasetFormatError(f"line {lineno}: empty row")
        cells = line.split(",")
        label = cells[0]
        idents.append(UNKNOWN if label == "?" else _parse_identity(label, lineno))
        if len(cells) - 1 != dim:
            raise DatasetFormatError(
                f"line {lineno}: expected {dim} values, got {len(cells) - 1}")
        try:
            feats.append([float(v) for v in cells[1:]])
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: bad float") from exc
    features = np.asarray(feats, dtype=np.float64).reshape(len(feats), dim)
    return Dataset(features, np.asarray(idents, dtype=np.int64), domain, ids)


def _parse_identity(label: str, lineno: int) -> int:
    try:
        ident = int(label)
    except ValueError as exc:
        raise DatasetFormatError(f"line {lineno}: bad identity {label!r}") from exc
    if ident < 0:
        raise DatasetFormatError(f"line {lineno}: negative identity")
    return ident
