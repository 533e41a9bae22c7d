"""Delimited report emission plus matplotlib renderings of the same data.

CSV files are the normative outputs and are written byte-deterministically
(floats via repr).  Figures are rendered alongside for quick inspection.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .data import Domain  # noqa: E402
from .evaluation import FAR_BUDGETS  # noqa: E402


def _fmt(value) -> str:
    return repr(float(value))


def write_metrics_csv(reports, path) -> None:
    """`domain,acc,tar_far_0.1,tar_far_0.01,tar_far_0.001,rank1` rows."""
    lines = ["domain,acc,tar_far_0.1,tar_far_0.01,tar_far_0.001,rank1"]
    for rep in reports:
        cells = [rep.domain.value, _fmt(rep.ver_accuracy)]
        cells += [_fmt(rep.tar_at_far[f]) for f in FAR_BUDGETS]
        cells.append(_fmt(rep.rank1))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_rounds_csv(round_reports, path) -> None:
    lines = ["round,client_id,role,loss_face,loss_dcl,backbone_drift"]
    for rep in round_reports:
        for c in rep.clients:
            lines.append(",".join([
                str(rep.round), str(c.client_id), c.role.value,
                _fmt(c.loss_face), _fmt(c.loss_dcl), _fmt(c.backbone_drift)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_round_metrics_csv(round_metrics, path) -> None:
    lines = ["round,domain,acc,tar_far_0.1,tar_far_0.01,tar_far_0.001,rank1"]
    for rnd, per_domain in round_metrics:
        for rep in per_domain.values():
            cells = [str(rnd), rep.domain.value, _fmt(rep.ver_accuracy)]
            cells += [_fmt(rep.tar_at_far[f]) for f in FAR_BUDGETS]
            cells.append(_fmt(rep.rank1))
            lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_cluster_report(rows, path) -> None:
    lines = ["client,algorithm,f_score,n_clusters"]
    for client, algo, fscore, n_clusters in rows:
        lines.append(f"{client},{algo},{_fmt(fscore)},{n_clusters}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def plot_rounds(round_reports, path) -> None:
    """Per-client loss curves and the source drift trajectory."""
    fig, (ax_loss, ax_drift) = plt.subplots(1, 2, figsize=(10, 4))
    clients = {}
    for rep in round_reports:
        for c in rep.clients:
            clients.setdefault((c.client_id, c.role.value), []).append(
                (rep.round, c.loss_face, c.backbone_drift))
    for (cid, role), rows in sorted(clients.items()):
        rounds = [r for r, _, _ in rows]
        ax_loss.plot(rounds, [l for _, l, _ in rows],
                     label=f"client {cid} ({role.lower()})")
        ax_drift.plot(rounds, [d for _, _, d in rows],
                      label=f"client {cid} ({role.lower()})")
    ax_loss.set_xlabel("round")
    ax_loss.set_ylabel("mean face loss")
    ax_loss.legend(fontsize=8)
    ax_drift.set_xlabel("round")
    ax_drift.set_ylabel("backbone drift from round start")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_round_metrics(round_metrics, path) -> None:
    """Rank-1 and verification accuracy per round, one line per domain."""
    fig, (ax_r1, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for domain in (Domain.SOURCE, Domain.TARGET):
        rounds = [rnd for rnd, _ in round_metrics]
        reps = [per[domain] for _, per in round_metrics]
        ax_r1.plot(rounds, [r.rank1 for r in reps], label=domain.value.lower())
        ax_acc.plot(rounds, [r.ver_accuracy for r in reps],
                    label=domain.value.lower())
    ax_r1.set_xlabel("round")
    ax_r1.set_ylabel("rank-1")
    ax_r1.legend()
    ax_acc.set_xlabel("round")
    ax_acc.set_ylabel("verification accuracy")
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_cluster_fscores(rows, path) -> None:
    """Grouped bars: pairwise F-score per algorithm, one group per client."""
    algos = sorted({algo for _, algo, _, _ in rows})
    clients = sorted({client for client, _, _, _ in rows})
    fig, ax = plt.subplots(figsize=(1.5 * max(len(clients), 3) + 2, 4))
    width = 0.8 / len(algos)
    for a_i, algo in enumerate(algos):
        xs = [c + a_i * width for c in range(len(clients))]
        ys = [next(f for cl, al, f, _ in rows if cl == client and al == algo)
              for client in clients]
        ax.bar(xs, ys, width=width, label=algo)
    ax.set_xticks([c + 0.4 - width / 2 for c in range(len(clients))])
    ax.set_xticklabels([f"client {c}" for c in clients])
    ax.set_ylabel("pairwise F-score")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
