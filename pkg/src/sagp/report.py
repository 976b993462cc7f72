"""Report rendering: text tables, delimited output, figures, mask heatmaps.

The evaluation path writes a JSON report, a TSV of per-instance rows, and a
set of matplotlib figures; mask rendering emits a dependency-free SVG plus
an aligned text grid of the gate values. Nothing here embeds timestamps, so
identical inputs produce identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .metrics import EvalReport, MaskReport
from .tensor import _sigmoid

_PNG_META = {"metadata": {"Software": None}}


def format_report_table(report: EvalReport, mask_report: MaskReport | None = None) -> str:
    rows = [
        ("claim macro F1", report.claim_f1),
        ("claim accuracy", report.claim_acc),
        ("rationale macro F1", report.rationale_f1),
        ("rationale precision", report.rationale_precision),
        ("rationale recall", report.rationale_recall),
        ("exact-set accuracy", report.ext_acc),
        ("joint accuracy (part)", report.acc_part),
        ("joint accuracy (full)", report.acc_full),
    ]
    if mask_report is not None:
        rows += [
            ("mask fidelity drop (pp)", mask_report.fidelity_drop),
            ("mask size (removed edges)", mask_report.size),
            ("mask sparsity (% retained)", mask_report.sparsity),
        ]
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {value:8.4f}" for name, value in rows]
    return "\n".join(lines)


def write_report(
    report: EvalReport,
    mask_report: MaskReport | None,
    out_dir: str | Path,
    loss_traces: Sequence[dict[str, list[float]]] | None = None,
    edge_sigmas: Sequence[np.ndarray] | None = None,
) -> dict[str, Path]:
    """Write report.json, report.tsv, and figures/ under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    payload = report.as_dict()
    if mask_report is not None:
        payload["mask"] = mask_report.as_dict()
    json_path = out / "report.json"
    json_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    paths["json"] = json_path

    tsv_path = out / "report.tsv"
    with open(tsv_path, "w", encoding="utf-8") as fh:
        fh.write("instance_id\tclaim_correct\trationale_f1\trationale_precision"
                 "\trationale_recall\texact\tacc_part\tacc_full\n")
        for pi in report.per_instance:
            if pi.rationale is not None:
                fh.write(f"{pi.instance_id}\t{int(pi.claim_correct)}\t{pi.rationale.f1:.6f}"
                         f"\t{pi.rationale.precision:.6f}\t{pi.rationale.recall:.6f}"
                         f"\t{int(pi.rationale.exact)}\t{int(bool(pi.part))}\t{int(bool(pi.full))}\n")
            else:
                fh.write(f"{pi.instance_id}\t{int(pi.claim_correct)}\t\t\t\t\t\t\n")
    paths["tsv"] = tsv_path

    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    paths.update(_write_figures(report, fig_dir, loss_traces, edge_sigmas))
    return paths


def _write_figures(report, fig_dir: Path, loss_traces, edge_sigmas) -> dict[str, Path]:
    paths: dict[str, Path] = {}

    scores = [pi.rationale.f1 for pi in report.per_instance if pi.rationale is not None]
    if scores:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.hist(scores, bins=np.linspace(0, 1, 21), color="#4878a8", edgecolor="white")
        ax.set_xlabel("per-instance rationale F1")
        ax.set_ylabel("instances")
        fig.tight_layout()
        path = fig_dir / "rationale_f1_hist.png"
        fig.savefig(path, **_PNG_META)
        plt.close(fig)
        paths["f1_hist"] = path

    if loss_traces:
        terms = [t for t in ("fidelity", "compact", "supervised", "topology", "sum", "entropy", "total")
                 if any(t in tr and tr[t] for tr in loss_traces)]
        if terms:
            fig, ax = plt.subplots(figsize=(5.5, 3.5))
            for term in terms:
                rows = [tr[term] for tr in loss_traces if term in tr and tr[term]]
                if not rows:
                    continue
                length = min(len(r) for r in rows)
                mean = np.mean([r[:length] for r in rows], axis=0)
                ax.plot(np.arange(length), mean, label=term, linewidth=1.2)
            ax.set_xlabel("epoch")
            ax.set_ylabel("mean loss")
            ax.legend(fontsize=8, ncol=2)
            fig.tight_layout()
            path = fig_dir / "loss_traces.png"
            fig.savefig(path, **_PNG_META)
            plt.close(fig)
            paths["loss_traces"] = path

    if edge_sigmas:
        values = np.concatenate([s[~np.eye(s.shape[0], dtype=bool)] for s in edge_sigmas])
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.hist(values, bins=np.linspace(0, 1, 41), color="#a86048", edgecolor="white")
        ax.set_xlabel("edge gate value")
        ax.set_ylabel("directed edges")
        fig.tight_layout()
        path = fig_dir / "edge_gate_hist.png"
        fig.savefig(path, **_PNG_META)
        plt.close(fig)
        paths["edge_gates"] = path

    return paths


# ---------------------------------------------------------------------------
# Mask heatmap (SVG + aligned text grid).

_CELL = 34
_MARGIN = 64


def _heat_color(v: float) -> str:
    # White (0) through blue (1); v already in [0, 1].
    v = min(max(v, 0.0), 1.0)
    r = int(round(255 - 183 * v))
    g = int(round(255 - 135 * v))
    b = int(round(255 - 87 * v))
    return f"#{r:02x}{g:02x}{b:02x}"


def render_mask_svg(sigma: np.ndarray, node_ids: Sequence[str] | None = None) -> str:
    """n x n heatmap of gate values as a standalone SVG document."""
    n = sigma.shape[0]
    ids = list(node_ids) if node_ids is not None else [str(i) for i in range(n)]
    width = _MARGIN + n * _CELL + 8
    height = _MARGIN + n * _CELL + 8
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<style>text{font-family:monospace;font-size:9px;}</style>',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for j in range(n):
        x = _MARGIN + j * _CELL + _CELL // 2
        parts.append(f'<text x="{x}" y="{_MARGIN - 8}" text-anchor="middle">{j}</text>')
    for i in range(n):
        y = _MARGIN + i * _CELL + _CELL // 2 + 3
        parts.append(f'<text x="{_MARGIN - 8}" y="{y}" text-anchor="end">{i}</text>')
        for j in range(n):
            v = float(sigma[i, j])
            x = _MARGIN + j * _CELL
            yy = _MARGIN + i * _CELL
            parts.append(
                f'<rect x="{x}" y="{yy}" width="{_CELL}" height="{_CELL}" '
                f'fill="{_heat_color(v)}" stroke="#999" stroke-width="0.5">'
                f'<title>({ids[i]} -&gt; {ids[j]}) {v:.4f}</title></rect>'
            )
            parts.append(
                f'<text x="{x + _CELL // 2}" y="{yy + _CELL // 2 + 3}" '
                f'text-anchor="middle">{v:.2f}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_mask_text(sigma: np.ndarray, node_ids: Sequence[str] | None = None) -> str:
    """Aligned text grid of gate values, one row per source node."""
    n = sigma.shape[0]
    ids = list(node_ids) if node_ids is not None else [str(i) for i in range(n)]
    id_width = max(len(s) for s in ids)
    header = " " * (id_width + 2) + " ".join(f"{j:>6d}" for j in range(n))
    lines = [header]
    for i in range(n):
        cells = " ".join(f"{sigma[i, j]:6.3f}" for j in range(n))
        lines.append(f"{ids[i]:<{id_width}}  {cells}")
    return "\n".join(lines) + "\n"


def render_mask_files(explanation, out_path: str | Path, node_ids: Sequence[str] | None = None) -> tuple[Path, Path]:
    """Write <out>.svg (or the given .svg path) plus the sidecar .txt grid."""
    if explanation.mask.edge_logits is None:
        raise ValueError("mask rendering needs an edge-mode explanation")
    sigma = _sigmoid(explanation.mask.edge_logits)
    out = Path(out_path)
    if out.suffix.lower() != ".svg":
        out = out.with_suffix(".svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_mask_svg(sigma, node_ids), encoding="utf-8")
    txt = out.with_suffix(".txt")
    txt.write_text(render_mask_text(sigma, node_ids), encoding="utf-8")
    return out, txt
