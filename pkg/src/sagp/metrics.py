"""Evaluation: claim metrics, rationale agreement, joint metrics, and
edge-mask diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError
from .graph import EvidenceGraph
from .model import LABEL_INDEX, ModelCheckpoint, forward_full, _pool, _softmax_row
from .tensor import _sigmoid


@dataclass
class RationaleScores:
    precision: float
    recall: float
    f1: float
    exact: bool


def rationale_metrics(pred: Sequence[bool], gold: Sequence[bool]) -> RationaleScores:
    """Per-instance precision/recall/F1 on the positive class.

    0/0 ratios are 0; when both sets are empty the instance counts as a
    perfect match (P = R = F1 = 1).
    """
    if len(pred) != len(gold):
        raise ShapeError(f"prediction length {len(pred)} != gold length {len(gold)}")
    tp = sum(1 for p, g in zip(pred, gold) if p and g)
    fp = sum(1 for p, g in zip(pred, gold) if p and not g)
    fn = sum(1 for p, g in zip(pred, gold) if not p and g)
    if tp == fp == fn == 0:
        return RationaleScores(1.0, 1.0, 1.0, True)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return RationaleScores(precision, recall, f1, fp == fn == 0)


def joint_metrics(claim_correct: bool, pred_set: Iterable[str], gold_set: Iterable[str]) -> tuple[bool, bool]:
    """(part, full): claim correct with >= 1 / with every gold rationale."""
    pred = set(pred_set)
    gold = set(gold_set)
    part = claim_correct and len(pred & gold) >= 1
    full = claim_correct and gold <= pred
    return part, full


@dataclass
class InstanceEval:
    instance_id: str
    claim_correct: bool
    rationale: RationaleScores | None
    part: bool | None
    full: bool | None


@dataclass
class EvalReport:
    claim_f1: float
    claim_acc: float
    rationale_f1: float
    rationale_precision: float
    rationale_recall: float
    ext_acc: float
    acc_part: float
    acc_full: float
    counts: dict[str, int] = field(default_factory=dict)
    per_instance: list[InstanceEval] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "claim_f1": self.claim_f1,
            "claim_acc": self.claim_acc,
            "rationale_f1": self.rationale_f1,
            "rationale_precision": self.rationale_precision,
            "rationale_recall": self.rationale_recall,
            "ext_acc": self.ext_acc,
            "acc_part": self.acc_part,
            "acc_full": self.acc_full,
            "counts": dict(self.counts),
        }


def _macro_f1(y_true: list[int], y_pred: list[int], n_classes: int = 2) -> float:
    f1s = []
    for c in range(n_classes):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(f1s))


def evaluate_explanations(instances, explanations) -> EvalReport:
    """Aggregate claim, rationale, and joint metrics over explained instances.

    ``instances`` and ``explanations`` are matched by instance id; rationale
    metrics are macro-averaged per instance. The claim prediction is the
    subgraph verdict.
    """
    by_id = {e.instance_id: e for e in explanations}
    y_true: list[int] = []
    y_pred: list[int] = []
    per_instance: list[InstanceEval] = []
    counts = {"instances": 0, "with_gold": 0, "claim_correct": 0}

    for inst in instances:
        expl = by_id.get(inst.id)
        if expl is None:
            continue
        counts["instances"] += 1
        true_idx = LABEL_INDEX[inst.verdict]
        pred_idx = LABEL_INDEX[expl.verdict_pred]
        y_true.append(true_idx)
        y_pred.append(pred_idx)
        claim_correct = true_idx == pred_idx
        counts["claim_correct"] += int(claim_correct)

        rationale = None
        part = full = None
        gold_ids = inst.gold_rationale_ids
        if gold_ids is not None:
            counts["with_gold"] += 1
            piece_ids = [p.id for p in inst.pieces]
            gold_mask = [pid in gold_ids for pid in piece_ids]
            pred_ids = set(expl.rationale_ids)
            pred_mask = [pid in pred_ids for pid in piece_ids]
            rationale = rationale_metrics(pred_mask, gold_mask)
            part, full = joint_metrics(claim_correct, pred_ids, gold_ids)
        per_instance.append(InstanceEval(inst.id, claim_correct, rationale, part, full))

    scored = [pi for pi in per_instance if pi.rationale is not None]
    n = max(counts["instances"], 1)
    n_scored = max(len(scored), 1)
    return EvalReport(
        claim_f1=_macro_f1(y_true, y_pred) if y_true else 0.0,
        claim_acc=counts["claim_correct"] / n,
        rationale_f1=sum(pi.rationale.f1 for pi in scored) / n_scored,
        rationale_precision=sum(pi.rationale.precision for pi in scored) / n_scored,
        rationale_recall=sum(pi.rationale.recall for pi in scored) / n_scored,
        ext_acc=sum(pi.rationale.exact for pi in scored) / n_scored,
        acc_part=sum(bool(pi.part) for pi in scored) / n_scored,
        acc_full=sum(bool(pi.full) for pi in scored) / n_scored,
        counts=counts,
        per_instance=per_instance,
    )


@dataclass
class MaskReport:
    fidelity_drop: float    # percentage points of claim accuracy lost
    size: float             # mean removed off-diagonal edges
    sparsity: float         # mean % of off-diagonal edges retained
    threshold: float
    per_instance_removed: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "fidelity_drop": self.fidelity_drop,
            "size": self.size,
            "sparsity": self.sparsity,
            "threshold": self.threshold,
        }


def _binarized_verdict(ckpt: ModelCheckpoint, g: EvidenceGraph, hard_mask: np.ndarray) -> int:
    # Exact 0/1 gates rather than saturated logits.
    mix = g.normalized * hard_mask
    x = g.features
    for w in ckpt.gcn_weights:
        x = np.maximum(mix @ x @ w, 0.0)
    logits = _pool(x, ckpt.pool) @ ckpt.classifier_w + ckpt.classifier_b[0]
    return int(np.argmax(_softmax_row(logits)))


def mask_diagnostics(
    ckpt: ModelCheckpoint,
    instances,
    graphs: Sequence[EvidenceGraph],
    explanations,
    threshold: float = 0.5,
) -> MaskReport:
    """Hard-mask the learned edge gates and measure the damage.

    sigma(P) is binarized at ``threshold``; removed/retained counts are over
    directed off-diagonal entries; fidelity drop is the claim-accuracy
    difference (full minus hard-masked) in percentage points against gold
    labels.
    """
    by_id = {e.instance_id: e for e in explanations}
    full_correct = 0
    masked_correct = 0
    removed_counts: list[int] = []
    retained_fracs: list[float] = []
    n_eval = 0

    for inst, g in zip(instances, graphs):
        expl = by_id.get(inst.id)
        if expl is None:
            continue
        if expl.mask.mode not in ("edge", "all") or expl.mask.edge_logits is None:
            raise ValueError(f"mask diagnostics need edge-mode explanations (instance {inst.id!r})")
        n_eval += 1
        sigma = _sigmoid(expl.mask.edge_logits)
        hard = (sigma >= threshold).astype(np.float64)
        off_diag = ~np.eye(g.n, dtype=bool)
        total = g.n * (g.n - 1)
        removed = int((hard[off_diag] == 0).sum())
        removed_counts.append(removed)
        retained_fracs.append((total - removed) / total if total else 1.0)

        true_idx = LABEL_INDEX[inst.verdict]
        full_correct += int(int(np.argmax(forward_full(ckpt, g)[1])) == true_idx)
        masked_correct += int(_binarized_verdict(ckpt, g, hard) == true_idx)

    if n_eval == 0:
        raise ValueError("mask diagnostics got no matching explanations")
    return MaskReport(
        fidelity_drop=100.0 * (full_correct - masked_correct) / n_eval,
        size=float(np.mean(removed_counts)),
        sparsity=100.0 * float(np.mean(retained_fracs)),
        threshold=threshold,
        per_instance_removed=removed_counts,
    )
